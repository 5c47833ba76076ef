//! Market model: instances, allocations, surpluses and the potential.
//!
//! Agents and goods are indexed `0..n`; agent `i` owns one unit of good `i`,
//! so the price vector doubles as the budget vector. A money flow maps edges
//! `(agent, good)` to the money sent. Relative to an edge set `F` the flow
//! may be negative on `F`; everywhere else it must be non-negative and
//! supported on best-bang-per-buck (MBB) edges.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Zero};
use thiserror::Error;

use crate::rational::{self, Rat};

pub type Agent = usize;
pub type Good = usize;

/// A linear exchange market: `n` agents, `n` goods, positive utilities on a
/// sparse edge set. Every agent must value some good and every good must be
/// valued by some agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarketInstance {
    n: usize,
    utilities: BTreeMap<(Agent, Good), Rat>,
    agent_adj: Vec<Vec<Good>>,
    good_adj: Vec<Vec<Agent>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstanceError {
    #[error("n must be at least 1")]
    EmptyMarket,
    #[error("edge ({0}, {1}) out of range")]
    EdgeOutOfRange(Agent, Good),
    #[error("utility on edge ({0}, {1}) must be positive")]
    NonpositiveUtility(Agent, Good),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(Agent, Good),
    #[error("agent {0} values no good")]
    AgentWithoutEdge(Agent),
    #[error("good {0} is valued by no agent")]
    GoodWithoutEdge(Good),
}

impl MarketInstance {
    /// Builds an instance from `(agent, good, utility)` triples, 0-based.
    pub fn new(n: usize, edges: Vec<(Agent, Good, Rat)>) -> Result<Self, InstanceError> {
        if n == 0 {
            return Err(InstanceError::EmptyMarket);
        }
        let mut utilities = BTreeMap::new();
        for (i, j, u) in edges {
            if i >= n || j >= n {
                return Err(InstanceError::EdgeOutOfRange(i, j));
            }
            if u <= Rat::zero() {
                return Err(InstanceError::NonpositiveUtility(i, j));
            }
            if utilities.insert((i, j), u).is_some() {
                return Err(InstanceError::DuplicateEdge(i, j));
            }
        }
        let mut agent_adj = vec![Vec::new(); n];
        let mut good_adj = vec![Vec::new(); n];
        for &(i, j) in utilities.keys() {
            agent_adj[i].push(j);
            good_adj[j].push(i);
        }
        for i in 0..n {
            if agent_adj[i].is_empty() {
                return Err(InstanceError::AgentWithoutEdge(i));
            }
        }
        for j in 0..n {
            if good_adj[j].is_empty() {
                return Err(InstanceError::GoodWithoutEdge(j));
            }
        }
        Ok(MarketInstance { n, utilities, agent_adj, good_adj })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of edges.
    pub fn m(&self) -> usize {
        self.utilities.len()
    }

    pub fn utility(&self, i: Agent, j: Good) -> Option<&Rat> {
        self.utilities.get(&(i, j))
    }

    pub fn has_edge(&self, i: Agent, j: Good) -> bool {
        self.utilities.contains_key(&(i, j))
    }

    pub fn edges(&self) -> impl Iterator<Item = (Agent, Good, &Rat)> {
        self.utilities.iter().map(|(&(i, j), u)| (i, j, u))
    }

    pub fn goods_of(&self, i: Agent) -> &[Good] {
        &self.agent_adj[i]
    }

    pub fn agents_of(&self, j: Good) -> &[Agent] {
        &self.good_adj[j]
    }
}

/// A set of `(agent, good)` edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeSet(BTreeSet<(Agent, Good)>);

impl EdgeSet {
    pub fn new() -> Self {
        EdgeSet(BTreeSet::new())
    }

    pub fn contains(&self, i: Agent, j: Good) -> bool {
        self.0.contains(&(i, j))
    }

    pub fn insert(&mut self, i: Agent, j: Good) -> bool {
        self.0.insert((i, j))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Agent, Good)> + '_ {
        self.0.iter().copied()
    }

    /// Connected components of the undirected bipartite graph on
    /// `agents ∪ goods` induced by the edges. Returns `(component of agent
    /// node i, component of good node j, component count)` with component ids
    /// numbered in first-touch order over agents then goods.
    pub fn components(&self, n: usize) -> (Vec<usize>, Vec<usize>, usize) {
        // Union-find over 2n nodes: agents 0..n, goods n..2n.
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            let mut c = x;
            while parent[c] != r {
                let next = parent[c];
                parent[c] = r;
                c = next;
            }
            r
        }
        for (i, j) in self.iter() {
            let a = find(&mut parent, i);
            let b = find(&mut parent, n + j);
            if a != b {
                parent[a] = b;
            }
        }
        let mut ids = BTreeMap::new();
        let mut agent_comp = vec![0; n];
        let mut good_comp = vec![0; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            let next = ids.len();
            agent_comp[i] = *ids.entry(r).or_insert(next);
        }
        for j in 0..n {
            let r = find(&mut parent, n + j);
            let next = ids.len();
            good_comp[j] = *ids.entry(r).or_insert(next);
        }
        (agent_comp, good_comp, ids.len())
    }
}

impl FromIterator<(Agent, Good)> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = (Agent, Good)>>(it: I) -> Self {
        EdgeSet(it.into_iter().collect())
    }
}

/// Sparse money flow; zero entries are not stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MoneyFlow(BTreeMap<(Agent, Good), Rat>);

impl MoneyFlow {
    pub fn new() -> Self {
        MoneyFlow(BTreeMap::new())
    }

    pub fn get(&self, i: Agent, j: Good) -> Rat {
        self.0.get(&(i, j)).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn set(&mut self, i: Agent, j: Good, v: Rat) {
        if v.is_zero() {
            self.0.remove(&(i, j));
        } else {
            self.0.insert((i, j), v);
        }
    }

    pub fn add(&mut self, i: Agent, j: Good, dv: &Rat) {
        let v = self.get(i, j) + dv;
        self.set(i, j, v);
    }

    pub fn scale(&mut self, i: Agent, j: Good, x: &Rat) {
        if let Some(v) = self.0.get_mut(&(i, j)) {
            *v *= x;
        }
    }

    /// Iterates over stored (hence nonzero) entries.
    pub fn iter(&self) -> impl Iterator<Item = (Agent, Good, &Rat)> {
        self.0.iter().map(|(&(i, j), v)| (i, j, v))
    }

    pub fn support(&self) -> impl Iterator<Item = (Agent, Good)> + '_ {
        self.0.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Money spent by agent `i` (sum over goods; may be reduced by negative
    /// entries).
    pub fn spent_by(&self, n: usize, i: Agent) -> Rat {
        let _ = n;
        self.0
            .range((i, 0)..=(i, usize::MAX))
            .fold(Rat::zero(), |a, (_, v)| a + v)
    }

    /// Money received by good `j`.
    pub fn received_by(&self, j: Good) -> Rat {
        self.0
            .iter()
            .filter(|(&(_, jj), _)| jj == j)
            .fold(Rat::zero(), |a, (_, v)| a + v)
    }
}

/// Prices together with a money flow and the edge set on which the flow may
/// go negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FAllocation {
    pub prices: Vec<Rat>,
    pub flow: MoneyFlow,
    pub negative_ok: EdgeSet,
}

/// Agent surpluses `c_i = p_i - Σ_j f_ij` and good surpluses
/// `s_j = p_j - Σ_i f_ij`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Surplus {
    pub agent: Vec<Rat>,
    pub good: Vec<Rat>,
}

impl Surplus {
    pub fn good_l1(&self) -> Rat {
        self.good.iter().map(rational::abs).fold(Rat::zero(), |a, b| a + b)
    }

    pub fn good_linf(&self) -> Rat {
        self.good
            .iter()
            .map(rational::abs)
            .fold(Rat::zero(), |a, b| if b > a { b } else { a })
    }

    pub fn agent_l1(&self) -> Rat {
        self.agent.iter().map(rational::abs).fold(Rat::zero(), |a, b| a + b)
    }

    /// Squared Euclidean norm of the agent surplus vector.
    pub fn agent_l2_sq(&self) -> Rat {
        self.agent.iter().map(|c| c * c).fold(Rat::zero(), |a, b| a + b)
    }
}

pub fn surplus(instance: &MarketInstance, prices: &[Rat], flow: &MoneyFlow) -> Surplus {
    let n = instance.n();
    assert_eq!(prices.len(), n);
    let mut agent: Vec<Rat> = prices.to_vec();
    let mut good: Vec<Rat> = prices.to_vec();
    for (i, j, v) in flow.iter() {
        agent[i] -= v;
        good[j] -= v;
    }
    Surplus { agent, good }
}

/// Per-agent best bang per buck ratios and the set of edges attaining them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mbb {
    pub alpha: Vec<Rat>,
    pub edges: EdgeSet,
}

/// Computes MBB ratios `α_i = max_j u_ij / p_j` and the attaining edges.
/// Requires strictly positive prices.
pub fn mbb(instance: &MarketInstance, prices: &[Rat]) -> Mbb {
    let n = instance.n();
    assert_eq!(prices.len(), n);
    for p in prices {
        assert!(*p > Rat::zero(), "mbb requires positive prices");
    }
    let mut alpha = vec![Rat::zero(); n];
    for (i, j, u) in instance.edges() {
        let r = u / &prices[j];
        if r > alpha[i] {
            alpha[i] = r;
        }
    }
    let mut edges = EdgeSet::new();
    for (i, j, u) in instance.edges() {
        if u / &prices[j] == alpha[i] {
            edges.insert(i, j);
        }
    }
    Mbb { alpha, edges }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AllocationViolation {
    #[error("price of good {0} is not positive")]
    NonpositivePrice(Good),
    #[error("flow on ({0}, {1}) is not an instance edge")]
    FlowOffEdge(Agent, Good),
    #[error("negative flow on ({0}, {1}) which is outside the allowed set")]
    NegativeFlow(Agent, Good),
    #[error("flow on non-MBB edge ({0}, {1})")]
    FlowNotMbb(Agent, Good),
    #[error("allowed-negative edge ({0}, {1}) is not MBB")]
    AllowedEdgeNotMbb(Agent, Good),
    #[error("allowed-negative edge ({0}, {1}) is not an instance edge")]
    AllowedEdgeOffEdge(Agent, Good),
    #[error("agent {0} overspends")]
    AgentOverspent(Agent),
    #[error("good {0} oversold")]
    GoodOversold(Good),
}

/// Checks the allocation conditions: positive prices, flow supported on MBB
/// edges of the instance, negative flow only on `negative_ok` (which must
/// itself consist of MBB instance edges), no agent spending more than its
/// budget and no good receiving more than its price. Returns all violations.
pub fn is_f_allocation(instance: &MarketInstance, alloc: &FAllocation) -> Vec<AllocationViolation> {
    let mut out = Vec::new();
    let n = instance.n();
    assert_eq!(alloc.prices.len(), n);
    let mut prices_ok = true;
    for (j, p) in alloc.prices.iter().enumerate() {
        if *p <= Rat::zero() {
            out.push(AllocationViolation::NonpositivePrice(j));
            prices_ok = false;
        }
    }
    if !prices_ok {
        return out;
    }
    let mbb = mbb(instance, &alloc.prices);
    for (i, j) in alloc.negative_ok.iter() {
        if !instance.has_edge(i, j) {
            out.push(AllocationViolation::AllowedEdgeOffEdge(i, j));
        } else if !mbb.edges.contains(i, j) {
            out.push(AllocationViolation::AllowedEdgeNotMbb(i, j));
        }
    }
    for (i, j, v) in alloc.flow.iter() {
        if !instance.has_edge(i, j) {
            out.push(AllocationViolation::FlowOffEdge(i, j));
            continue;
        }
        if *v < Rat::zero() && !alloc.negative_ok.contains(i, j) {
            out.push(AllocationViolation::NegativeFlow(i, j));
        }
        if !mbb.edges.contains(i, j) {
            out.push(AllocationViolation::FlowNotMbb(i, j));
        }
    }
    let s = surplus(instance, &alloc.prices, &alloc.flow);
    for i in 0..n {
        if s.agent[i] < Rat::zero() {
            out.push(AllocationViolation::AgentOverspent(i));
        }
    }
    for j in 0..n {
        if s.good[j] < Rat::zero() {
            out.push(AllocationViolation::GoodOversold(j));
        }
    }
    out
}

/// The `n`-th power of the potential `‖s‖_∞ / (Π_j p_j)^{1/n}`, i.e.
/// `‖s‖_∞^n / Π_j p_j`, which stays rational.
pub fn phi_pow_n(instance: &MarketInstance, prices: &[Rat], flow: &MoneyFlow) -> Rat {
    let s = surplus(instance, prices, flow);
    let linf = s.good_linf();
    rational::pow(&linf, instance.n()) / rational::product(prices.iter())
}

/// Existence verdict for an instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExistenceVerdict {
    Exists,
    /// A singleton strongly connected component (one agent) without a
    /// self-loop; no equilibrium exists. Carries the offending agent set.
    NoEquilibrium { witness: Vec<Agent> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExistenceReport {
    pub verdict: ExistenceVerdict,
    /// Whether the desire digraph (arc `i -> j` per edge `(i, g_j)`) is
    /// strongly connected.
    pub strongly_connected: bool,
    /// Strongly connected components in reverse topological order of the
    /// condensation (every arc leaves a later component for an earlier one).
    pub sccs: Vec<Vec<Agent>>,
}

/// Checks the existence criterion: an equilibrium exists iff every singleton
/// strongly connected component of the desire digraph has a self-loop.
pub fn existence_check(instance: &MarketInstance) -> ExistenceReport {
    use petgraph::graph::DiGraph;
    let n = instance.n();
    let mut g = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (i, j, _) in instance.edges() {
        if i != j {
            g.add_edge(nodes[i], nodes[j], ());
        }
    }
    let sccs_idx = petgraph::algo::tarjan_scc(&g);
    let sccs: Vec<Vec<Agent>> = sccs_idx
        .iter()
        .map(|c| {
            let mut v: Vec<Agent> = c.iter().map(|ni| ni.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let strongly_connected = sccs.len() == 1;
    for comp in &sccs {
        if comp.len() == 1 {
            let i = comp[0];
            if !instance.has_edge(i, i) {
                return ExistenceReport {
                    verdict: ExistenceVerdict::NoEquilibrium { witness: vec![i] },
                    strongly_connected,
                    sccs,
                };
            }
        }
    }
    ExistenceReport { verdict: ExistenceVerdict::Exists, strongly_connected, sccs }
}

/// Scales prices and flow by a positive factor; MBB sets and the potential
/// are invariant under this.
pub fn scale_allocation(alloc: &FAllocation, factor: &Rat) -> FAllocation {
    assert!(*factor > Rat::zero());
    let prices = alloc.prices.iter().map(|p| p * factor).collect();
    let mut flow = MoneyFlow::new();
    for (i, j, v) in alloc.flow.iter() {
        flow.set(i, j, v * factor);
    }
    FAllocation { prices, flow, negative_ok: alloc.negative_ok.clone() }
}

/// Fixture used throughout the tests: two agents who only value each
/// other's good with unit utility.
pub fn fixture_sym2() -> MarketInstance {
    MarketInstance::new(2, vec![(0, 1, Rat::one()), (1, 0, Rat::one())]).unwrap()
}

/// Fixture: agent 0 values both goods (own at 1, other at 2), agent 1 only
/// values good 0.
pub fn fixture_asym2() -> MarketInstance {
    MarketInstance::new(
        2,
        vec![(0, 0, Rat::one()), (0, 1, rational::rat(2)), (1, 0, Rat::one())],
    )
    .unwrap()
}

/// Shared ten-agent fixture: a sixteen-edge market together with a fifteen
/// edge revealed set `F` whose bipartite graph splits into five components
/// (good sets {g0,g5}, {g1,g6,g7}, {g2,g8,g9}, {g3}, {g4}). All utilities
/// are 1 except `u(0,g6) = 2` and the out-of-`F` edge `(5,g7)` with
/// utility 3. Exercised heavily by the decomposition and approximation
/// tests, which pin down its derived constants.
pub fn fixture_revealed10() -> (MarketInstance, EdgeSet) {
    let two = rational::rat(2);
    let three = rational::rat(3);
    let f_edges = vec![
        (1, 0),
        (2, 0),
        (2, 5),
        (0, 1),
        (0, 6),
        (8, 6),
        (8, 7),
        (5, 2),
        (5, 8),
        (6, 8),
        (6, 9),
        (7, 3),
        (9, 3),
        (4, 3),
        (3, 4),
    ];
    let mut edges: Vec<(Agent, Good, Rat)> = f_edges
        .iter()
        .map(|&(i, j)| {
            let u = if (i, j) == (0, 6) { two.clone() } else { Rat::one() };
            (i, j, u)
        })
        .collect();
    edges.push((5, 7, three));
    let inst = MarketInstance::new(10, edges).unwrap();
    (inst, EdgeSet::from_iter(f_edges))
}

/// Fixture without an equilibrium: agent 1 only values good 2, agents 1 and 2
/// both sell nothing anyone else wants... concretely edges
/// `(0,g0), (0,g1), (1,g2), (2,g2)`; agent 1 forms a singleton component
/// with no self-loop once unreachable desires are accounted for.
pub fn fixture_no_equilibrium() -> MarketInstance {
    MarketInstance::new(
        3,
        vec![
            (0, 0, Rat::one()),
            (0, 1, Rat::one()),
            (1, 2, Rat::one()),
            (2, 2, Rat::one()),
        ],
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, ratq};

    #[test]
    fn rejects_malformed_instances() {
        assert_eq!(MarketInstance::new(0, vec![]), Err(InstanceError::EmptyMarket));
        assert_eq!(
            MarketInstance::new(1, vec![(0, 0, rat(0))]),
            Err(InstanceError::NonpositiveUtility(0, 0))
        );
        assert_eq!(
            MarketInstance::new(1, vec![(0, 1, rat(1))]),
            Err(InstanceError::EdgeOutOfRange(0, 1))
        );
        assert_eq!(
            MarketInstance::new(2, vec![(0, 1, rat(1)), (1, 0, rat(1)), (0, 1, rat(2))]),
            Err(InstanceError::DuplicateEdge(0, 1))
        );
        // Agent 1 has no edge.
        assert_eq!(
            MarketInstance::new(2, vec![(0, 0, rat(1)), (0, 1, rat(1))]),
            Err(InstanceError::AgentWithoutEdge(1))
        );
        // Good 1 has no incoming edge.
        assert_eq!(
            MarketInstance::new(2, vec![(0, 0, rat(1)), (1, 0, rat(1))]),
            Err(InstanceError::GoodWithoutEdge(1))
        );
    }

    #[test]
    fn mbb_sym2() {
        let inst = fixture_sym2();
        let m = mbb(&inst, &[rat(1), rat(1)]);
        assert_eq!(m.alpha, vec![rat(1), rat(1)]);
        assert!(m.edges.contains(0, 1) && m.edges.contains(1, 0));
        assert_eq!(m.edges.len(), 2);
    }

    #[test]
    fn mbb_asym2_price_dependence() {
        let inst = fixture_asym2();
        // At p = (1,1): agent 0 prefers good 1 (ratio 2 beats 1).
        let m = mbb(&inst, &[rat(1), rat(1)]);
        assert_eq!(m.alpha[0], rat(2));
        assert!(m.edges.contains(0, 1) && !m.edges.contains(0, 0));
        // At p = (1,2) both edges of agent 0 tie.
        let m = mbb(&inst, &[rat(1), rat(2)]);
        assert_eq!(m.alpha[0], rat(1));
        assert!(m.edges.contains(0, 0) && m.edges.contains(0, 1));
    }

    #[test]
    fn mbb_scale_invariant() {
        let inst = fixture_asym2();
        let a = mbb(&inst, &[ratq(1, 3), ratq(5, 7)]);
        let b = mbb(&inst, &[ratq(2, 3), ratq(10, 7)]);
        assert_eq!(a.edges, b.edges);
    }

    #[test]
    fn surplus_identities() {
        let inst = fixture_sym2();
        let mut f = MoneyFlow::new();
        f.set(0, 1, ratq(1, 2));
        let s = surplus(&inst, &[rat(1), rat(1)], &f);
        assert_eq!(s.agent, vec![ratq(1, 2), rat(1)]);
        assert_eq!(s.good, vec![rat(1), ratq(1, 2)]);
        // With budgets equal to prices the two total surpluses agree.
        assert_eq!(s.good_l1(), s.agent_l1());
        // Norm sandwich ‖s‖_∞ ≤ ‖s‖_1 ≤ n‖s‖_∞.
        let n = rat(inst.n() as i64);
        assert!(s.good_linf() <= s.good_l1() && s.good_l1() <= n * s.good_linf());
    }

    #[test]
    fn f_allocation_checks() {
        let inst = fixture_sym2();
        let mut flow = MoneyFlow::new();
        flow.set(0, 1, rat(1));
        flow.set(1, 0, rat(1));
        let alloc = FAllocation {
            prices: vec![rat(1), rat(1)],
            flow,
            negative_ok: EdgeSet::new(),
        };
        assert!(is_f_allocation(&inst, &alloc).is_empty());

        // Negative flow without membership in the allowed set.
        let mut flow = MoneyFlow::new();
        flow.set(0, 1, rat(-1));
        let alloc = FAllocation {
            prices: vec![rat(1), rat(1)],
            flow: flow.clone(),
            negative_ok: EdgeSet::new(),
        };
        assert!(is_f_allocation(&inst, &alloc)
            .contains(&AllocationViolation::NegativeFlow(0, 1)));

        // Same flow but the edge is allowed to be negative. Good 0 is now
        // oversold is not the case: receiving -1 means surplus 2 > 0; agent 0
        // has surplus 2 as well. Everything passes.
        let alloc = FAllocation {
            prices: vec![rat(1), rat(1)],
            flow,
            negative_ok: EdgeSet::from_iter([(0, 1)]),
        };
        assert!(is_f_allocation(&inst, &alloc).is_empty());

        // Flow on a non-MBB edge.
        let inst = fixture_asym2();
        let mut flow = MoneyFlow::new();
        flow.set(0, 0, rat(1));
        let alloc = FAllocation {
            prices: vec![rat(1), rat(1)],
            flow,
            negative_ok: EdgeSet::new(),
        };
        assert!(is_f_allocation(&inst, &alloc)
            .contains(&AllocationViolation::FlowNotMbb(0, 0)));
    }

    #[test]
    fn phi_pow_n_values() {
        let inst = fixture_sym2();
        // Zero flow at unit prices: ‖s‖_∞ = 1, Πp = 1, φ^n = 1.
        assert_eq!(phi_pow_n(&inst, &[rat(1), rat(1)], &MoneyFlow::new()), rat(1));
        // Equilibrium flow: φ^n = 0.
        let mut flow = MoneyFlow::new();
        flow.set(0, 1, rat(1));
        flow.set(1, 0, rat(1));
        assert_eq!(phi_pow_n(&inst, &[rat(1), rat(1)], &flow), rat(0));
    }

    #[test]
    fn phi_scale_invariance() {
        let inst = fixture_asym2();
        let mut flow = MoneyFlow::new();
        flow.set(0, 1, ratq(1, 3));
        let alloc = FAllocation {
            prices: vec![rat(1), rat(2)],
            flow,
            negative_ok: EdgeSet::new(),
        };
        let a = phi_pow_n(&inst, &alloc.prices, &alloc.flow);
        let scaled = scale_allocation(&alloc, &ratq(7, 3));
        let b = phi_pow_n(&inst, &scaled.prices, &scaled.flow);
        assert_eq!(a, b);
    }

    #[test]
    fn existence_sym2_and_no_eq() {
        let r = existence_check(&fixture_sym2());
        assert_eq!(r.verdict, ExistenceVerdict::Exists);
        assert!(r.strongly_connected);

        let r = existence_check(&fixture_no_equilibrium());
        assert_eq!(r.verdict, ExistenceVerdict::NoEquilibrium { witness: vec![1] });
        assert!(!r.strongly_connected);
    }

    #[test]
    fn existence_self_loop_singleton_ok() {
        // Two agents, no mutual desire, but both have self-loops: the
        // condensation has two singleton components, each with a self-loop.
        let inst = MarketInstance::new(
            2,
            vec![(0, 0, rat(1)), (1, 1, rat(1))],
        )
        .unwrap();
        let r = existence_check(&inst);
        assert_eq!(r.verdict, ExistenceVerdict::Exists);
        assert!(!r.strongly_connected);
        assert_eq!(r.sccs.len(), 2);
    }

    #[test]
    fn edge_set_components() {
        let f = EdgeSet::from_iter([(0, 1), (1, 1), (1, 0)]);
        let (ac, gc, count) = f.components(3);
        // Agents 0,1 and goods 0,1 all joined; agent 2 and good 2 isolated.
        assert_eq!(count, 3);
        assert_eq!(ac[0], ac[1]);
        assert_eq!(ac[0], gc[0]);
        assert_eq!(gc[0], gc[1]);
        assert_ne!(ac[2], ac[0]);
        assert_ne!(gc[2], ac[0]);
        assert_ne!(gc[2], ac[2]);
    }
}
