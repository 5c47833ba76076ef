//! Component decomposition of a revealed edge set and assembly of the price
//! feasibility system.
//!
//! When every edge of `F` is forced to be MBB, the prices inside one
//! connected component of the bipartite graph `(agents ∪ goods, F)` are all
//! fixed multiples of each other. One price variable per component then
//! suffices. The feasibility system on those variables has two parts: MBB
//! dominance rows for edges outside `F`, and per-component budget rows
//! `M p̄ ≤ γ` whose matrix has nonpositive off-diagonal entries and
//! nonnegative column sums.

use std::collections::VecDeque;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::market::{Agent, EdgeSet, Good, MarketInstance, MoneyFlow};
use crate::oracle::{LPProblem, LPRow, Sense};
use crate::rational::Rat;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Smallest good index; its price is the component's variable.
    pub rep: Good,
    pub goods: Vec<Good>,
    pub agents: Vec<Agent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub components: Vec<Component>,
    /// Component index of each good. For an agent `k`, the component of its
    /// good `g_k` is `rho[k]` as well, since agent `k` owns good `k`.
    pub rho: Vec<usize>,
    /// Price multiplier per good: `p_j = theta[j] * p̄_{rho[j]}`.
    pub theta: Vec<Rat>,
    /// Per component, the sum of its goods' multipliers.
    pub theta_sum: Vec<Rat>,
    /// Per component, the number of goods, as a rational.
    pub gamma: Vec<Rat>,
    /// Agents with no edge in `F`; they belong to no component.
    pub isolated_agents: Vec<Agent>,
    pub f_edges: EdgeSet,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecomposeError {
    #[error("component of good {rep}: good {good} gets conflicting multipliers")]
    InconsistentComponent { rep: Good, good: Good },
}

impl Decomposition {
    pub fn t(&self) -> usize {
        self.components.len()
    }
}

/// Connected components of `(agents ∪ goods, F)` with price multipliers.
/// Components are ordered by their smallest good index; goods without any
/// `F`-edge form singleton components; agents without any `F`-edge are
/// reported separately and belong to no component.
pub fn decompose(instance: &MarketInstance, f_edges: &EdgeSet) -> Result<Decomposition, DecomposeError> {
    let n = instance.n();
    for (i, j) in f_edges.iter() {
        assert!(instance.has_edge(i, j), "F-edge ({i}, {j}) missing from the instance");
    }
    let mut agent_goods: Vec<Vec<Good>> = vec![Vec::new(); n];
    let mut good_agents: Vec<Vec<Agent>> = vec![Vec::new(); n];
    for (i, j) in f_edges.iter() {
        agent_goods[i].push(j);
        good_agents[j].push(i);
    }

    // Grow each component by BFS from its representative good, computing the
    // multiplier of every good on first visit and checking it on repeats.
    let mut rho = vec![usize::MAX; n];
    let mut agent_comp = vec![usize::MAX; n];
    let mut theta = vec![Rat::zero(); n];
    let mut components = Vec::new();
    for rep in 0..n {
        if rho[rep] != usize::MAX {
            continue;
        }
        let idx = components.len();
        rho[rep] = idx;
        theta[rep] = Rat::one();
        let mut goods = vec![rep];
        let mut agents = Vec::new();
        let mut queue = VecDeque::from([rep]);
        while let Some(j) = queue.pop_front() {
            for &k in &good_agents[j] {
                if agent_comp[k] == usize::MAX {
                    agent_comp[k] = idx;
                    agents.push(k);
                }
                let u_kj = instance.utility(k, j).unwrap();
                for &j2 in &agent_goods[k] {
                    let u_kj2 = instance.utility(k, j2).unwrap();
                    // MBB equality on both F-edges forces p_{j2}/p_j = u_{kj2}/u_{kj}.
                    let cand = &theta[j] * u_kj2 / u_kj;
                    if rho[j2] == usize::MAX {
                        rho[j2] = idx;
                        theta[j2] = cand;
                        goods.push(j2);
                        queue.push_back(j2);
                    } else if theta[j2] != cand {
                        return Err(DecomposeError::InconsistentComponent { rep, good: j2 });
                    }
                }
            }
        }
        goods.sort_unstable();
        agents.sort_unstable();
        components.push(Component { rep, goods, agents });
    }

    let theta_sum = components
        .iter()
        .map(|c| c.goods.iter().map(|&j| theta[j].clone()).fold(Rat::zero(), |a, b| a + b))
        .collect();
    let gamma = components
        .iter()
        .map(|c| Rat::from_integer((c.goods.len() as i64).into()))
        .collect();
    let isolated_agents = (0..n).filter(|&k| agent_comp[k] == usize::MAX).collect();
    Ok(Decomposition {
        components,
        rho,
        theta,
        theta_sum,
        gamma,
        isolated_agents,
        f_edges: f_edges.clone(),
    })
}

/// One MBB dominance row `sum of terms <= 0`. Rows comparing goods in two
/// different components have one positive and one negative term; rows whose
/// two goods share a component collapse to a single term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MbbRow {
    pub lead: (usize, Rat),
    pub other: Option<(usize, Rat)>,
    /// `(k, j, j2)`: agent `k` with `(k, g_j)` outside `F`, `(k, g_j2)` in `F`.
    pub witness: (Agent, Good, Good),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PFSystem {
    pub t: usize,
    pub mbb_rows: Vec<MbbRow>,
    /// Budget rows: `m_rows * p̄ <= gamma`.
    pub m_rows: Vec<Vec<Rat>>,
    pub gamma: Vec<Rat>,
    /// `lambda_i = sum of gamma over the other components`.
    pub lambda: Vec<Rat>,
    /// `sum(gamma) / min(gamma)`.
    pub b_ratio: Rat,
}

/// Assembles the feasibility system on the component price variables.
pub fn build_pf(instance: &MarketInstance, dec: &Decomposition) -> PFSystem {
    let t = dec.t();
    let mut mbb_rows = Vec::new();
    for (k, j, u_kj) in instance.edges() {
        if dec.f_edges.contains(k, j) {
            continue;
        }
        for j2 in instance.goods_of(k) {
            let j2 = *j2;
            if !dec.f_edges.contains(k, j2) {
                continue;
            }
            let u_kj2 = instance.utility(k, j2).unwrap();
            let cj = dec.rho[j];
            let cj2 = dec.rho[j2];
            // Edge (k, g_j) must not beat the F-edge (k, g_j2):
            // u_kj * theta_{j2} * p̄_{cj2} - u_kj2 * theta_j * p̄_{cj} <= 0.
            let a = u_kj * &dec.theta[j2];
            let b = -(u_kj2 * &dec.theta[j]);
            if cj != cj2 {
                mbb_rows.push(MbbRow {
                    lead: (cj2, a),
                    other: Some((cj, b)),
                    witness: (k, j, j2),
                });
            } else {
                let c = a + b;
                if !c.is_zero() {
                    mbb_rows.push(MbbRow { lead: (cj, c), other: None, witness: (k, j, j2) });
                }
            }
        }
    }

    let mut m_rows = vec![vec![Rat::zero(); t]; t];
    for (i, row) in m_rows.iter_mut().enumerate() {
        row[i] = dec.theta_sum[i].clone();
        for &k in &dec.components[i].agents {
            // Agent k's budget is the price of its good g_k, which lives in
            // component rho[k] with multiplier theta[k].
            row[dec.rho[k]] -= &dec.theta[k];
        }
    }
    for (i, row) in m_rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!(i == j || *v <= Rat::zero(), "positive off-diagonal in budget matrix");
        }
    }
    for j in 0..t {
        let col: Rat = m_rows.iter().map(|r| &r[j]).fold(Rat::zero(), |a, b| a + b);
        assert!(col >= Rat::zero(), "negative column sum in budget matrix");
    }

    let total: Rat = dec.gamma.iter().fold(Rat::zero(), |a, b| a + b);
    let lambda = dec.gamma.iter().map(|g| &total - g).collect();
    let min_gamma = dec.gamma.iter().min().unwrap().clone();
    PFSystem {
        t,
        mbb_rows,
        m_rows,
        gamma: dec.gamma.clone(),
        lambda,
        b_ratio: total / min_gamma,
    }
}

impl PFSystem {
    /// The MBB dominance rows as dense `<= 0` rows.
    pub fn mbb_lp_rows(&self) -> Vec<LPRow> {
        self.mbb_rows
            .iter()
            .map(|r| {
                let mut coeffs = vec![Rat::zero(); self.t];
                coeffs[r.lead.0] += &r.lead.1;
                if let Some((v, c)) = &r.other {
                    coeffs[*v] += c;
                }
                LPRow { coeffs, sense: Sense::Le, rhs: Rat::zero() }
            })
            .collect()
    }

    /// The system as an LP: maximize `sum p̄` subject to the MBB rows, the
    /// budget rows (right-hand side `gamma`, or zero for the homogenized
    /// version), and `p̄ >= 0`.
    pub fn lp_problem(&self, homogeneous: bool) -> LPProblem {
        let mut rows = self.mbb_lp_rows();
        for (i, mrow) in self.m_rows.iter().enumerate() {
            let rhs = if homogeneous { Rat::zero() } else { self.gamma[i].clone() };
            rows.push(LPRow { coeffs: mrow.clone(), sense: Sense::Le, rhs });
        }
        LPProblem::nonneg(vec![Rat::one(); self.t], rows)
    }
}

/// Full price vector from component prices: `p_j = theta[j] * p̄_{rho[j]}`.
pub fn extend_prices(dec: &Decomposition, p_bar: &[Rat]) -> Vec<Rat> {
    assert_eq!(p_bar.len(), dec.t());
    dec.rho
        .iter()
        .zip(&dec.theta)
        .map(|(&c, th)| th * &p_bar[c])
        .collect()
}

/// A money flow supported on `F` realizing the canonical surplus split at
/// the given (extended) prices: in a component whose goods cost more than
/// its agents own, each good keeps an equal share of the excess; otherwise
/// the goods sell out and the agents keep surplus in proportion to their
/// budgets. Flow on `F` may be negative. Isolated goods stay unsold and
/// isolated agents keep their whole budget.
pub fn component_flow(dec: &Decomposition, prices: &[Rat]) -> MoneyFlow {
    let n = prices.len();
    let mut flow = MoneyFlow::new();
    let mut agent_goods: Vec<Vec<Good>> = vec![Vec::new(); n];
    let mut good_agents: Vec<Vec<Agent>> = vec![Vec::new(); n];
    for (i, j) in dec.f_edges.iter() {
        agent_goods[i].push(j);
        good_agents[j].push(i);
    }
    for comp in &dec.components {
        let goods_total: Rat = comp.goods.iter().map(|&j| &prices[j]).fold(Rat::zero(), |a, b| a + b);
        let budget_total: Rat = comp.agents.iter().map(|&k| &prices[k]).fold(Rat::zero(), |a, b| a + b);
        let excess = &goods_total - &budget_total;
        // Prescribed income per good and spending per agent.
        let mut target_good = vec![Rat::zero(); n];
        let mut target_agent = vec![Rat::zero(); n];
        if excess >= Rat::zero() {
            let share = &excess / &dec.gamma[dec.rho[comp.rep]];
            for &j in &comp.goods {
                target_good[j] = &prices[j] - &share;
            }
            for &k in &comp.agents {
                target_agent[k] = prices[k].clone();
            }
        } else {
            // budget_total > goods_total >= 0, so the ratio is well defined.
            let ratio = &goods_total / &budget_total;
            for &j in &comp.goods {
                target_good[j] = prices[j].clone();
            }
            for &k in &comp.agents {
                target_agent[k] = &prices[k] * &ratio;
            }
        }
        // Spanning tree by BFS from the representative good over nodes of
        // this component; goods are node ids, agents are offset by n.
        let mut parent: Vec<Option<usize>> = vec![None; 2 * n];
        let mut order = vec![comp.rep];
        let mut seen = vec![false; 2 * n];
        seen[comp.rep] = true;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            if v < n {
                for &k in &good_agents[v] {
                    if !seen[n + k] {
                        seen[n + k] = true;
                        parent[n + k] = Some(v);
                        order.push(n + k);
                    }
                }
            } else {
                for &j in &agent_goods[v - n] {
                    if !seen[j] {
                        seen[j] = true;
                        parent[j] = Some(v);
                        order.push(j);
                    }
                }
            }
        }
        // Leaf elimination: children settle their remaining prescription
        // over the tree edge to the parent.
        let mut remaining = vec![Rat::zero(); 2 * n];
        for &v in &order {
            remaining[v] = if v < n { target_good[v].clone() } else { target_agent[v - n].clone() };
        }
        for &v in order.iter().rev() {
            let p = match parent[v] {
                Some(p) => p,
                None => continue,
            };
            let r = remaining[v].clone();
            if v < n {
                // v is a good, parent is an agent: money flows parent -> v.
                flow.add(p - n, v, &r);
            } else {
                // v is an agent, parent is a good: money flows v -> parent.
                flow.add(v - n, p, &r);
            }
            remaining[p] -= &r;
            remaining[v] = Rat::zero();
        }
        assert!(remaining[comp.rep].is_zero(), "tree flow did not balance");
    }
    flow
}
