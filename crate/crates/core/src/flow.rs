//! Exact max flow and balanced flows on spending networks.
//!
//! The spending network for prices `p` and edge set `F` has a source `s`, one
//! node per agent, one node per good, and a sink `t`. Arcs: `s -> i` with
//! capacity `p_i`, `i -> g_j` uncapped for each MBB edge, `g_j -> i` uncapped
//! for each `F`-edge (this is how flow gets to be negative on `F`), and
//! `g_j -> t` with capacity `p_j`. A max flow spends as much money as
//! possible; a balanced flow additionally minimizes the Euclidean norm of the
//! agent surplus vector among max flows.
//!
//! Everything here is exact; "uncapped" arcs get capacity one more than the
//! sum of all finite capacities, which no simple cut can use in full.

use std::collections::BTreeMap;

use num_traits::Zero;

use crate::market::{Agent, EdgeSet, Good, MarketInstance, MoneyFlow};
use crate::rational::Rat;

/// Arc-list flow network. Arcs come in pairs: arc `2e` is the original
/// direction with its capacity, arc `2e+1` the residual companion with
/// capacity zero, and `flow[a ^ 1] == -flow[a]` always.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    nodes: usize,
    from: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<Rat>,
    flow: Vec<Rat>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork {
            nodes,
            from: Vec::new(),
            to: Vec::new(),
            cap: Vec::new(),
            flow: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Adds `u -> v` with the given capacity; returns the arc id (even).
    pub fn add_arc(&mut self, u: usize, v: usize, cap: Rat) -> usize {
        assert!(u < self.nodes && v < self.nodes && cap >= Rat::zero());
        let id = self.cap.len();
        self.from.push(u);
        self.to.push(v);
        self.cap.push(cap);
        self.flow.push(Rat::zero());
        self.from.push(v);
        self.to.push(u);
        self.cap.push(Rat::zero());
        self.flow.push(Rat::zero());
        self.adj[u].push(id);
        self.adj[v].push(id + 1);
        id
    }

    pub fn arc_flow(&self, a: usize) -> &Rat {
        &self.flow[a]
    }

    pub fn residual(&self, a: usize) -> Rat {
        &self.cap[a] - &self.flow[a]
    }

    fn push(&mut self, a: usize, amount: &Rat) {
        self.flow[a] += amount;
        self.flow[a ^ 1] -= amount;
    }

    /// Overwrites the flow on an original arc (and its companion). The caller
    /// is responsible for restoring conservation before relying on it.
    pub fn set_arc_flow(&mut self, a: usize, v: Rat) {
        assert_eq!(a % 2, 0);
        self.flow[a ^ 1] = -v.clone();
        self.flow[a] = v;
    }

    /// Net flow out of a node.
    pub fn out_value(&self, v: usize) -> Rat {
        self.adj[v]
            .iter()
            .map(|&a| &self.flow[a])
            .fold(Rat::zero(), |acc, f| acc + f)
    }

    /// Edmonds-Karp: augment along shortest residual paths until none remain.
    /// Deterministic given the arc insertion order. Returns the value added.
    pub fn max_flow(&mut self, s: usize, t: usize) -> Rat {
        let mut added = Rat::zero();
        loop {
            // BFS for a shortest residual s-t path.
            let mut pred: Vec<Option<usize>> = vec![None; self.nodes];
            let mut seen = vec![false; self.nodes];
            seen[s] = true;
            let mut queue = std::collections::VecDeque::new();
            queue.push_back(s);
            'bfs: while let Some(u) = queue.pop_front() {
                for &a in &self.adj[u] {
                    let v = self.to[a];
                    if !seen[v] && self.residual(a) > Rat::zero() {
                        seen[v] = true;
                        pred[v] = Some(a);
                        if v == t {
                            break 'bfs;
                        }
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return added;
            }
            let mut bottleneck: Option<Rat> = None;
            let mut v = t;
            while v != s {
                let a = pred[v].unwrap();
                let r = self.residual(a);
                bottleneck = Some(match bottleneck {
                    Some(b) if b <= r => b,
                    _ => r,
                });
                v = self.from[a];
            }
            let b = bottleneck.unwrap();
            let mut v = t;
            while v != s {
                let a = pred[v].unwrap();
                self.push(a, &b);
                v = self.from[a];
            }
            added += b;
        }
    }

    /// Nodes reachable from `start` along positive-residual arcs, optionally
    /// never entering or leaving `banned`.
    pub fn reaches(&self, start: usize, banned: Option<usize>) -> Vec<bool> {
        let mut seen = vec![false; self.nodes];
        if Some(start) == banned {
            return seen;
        }
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.adj[u] {
                let v = self.to[a];
                if !seen[v] && Some(v) != banned && self.residual(a) > Rat::zero() {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Nodes from which `target` is reachable along positive-residual arcs.
    pub fn reaching(&self, target: usize, banned: Option<usize>) -> Vec<bool> {
        let mut seen = vec![false; self.nodes];
        if Some(target) == banned {
            return seen;
        }
        seen[target] = true;
        let mut queue = std::collections::VecDeque::from([target]);
        while let Some(v) = queue.pop_front() {
            // Arcs into v are the companions of arcs out of v.
            for &b in &self.adj[v] {
                let u = self.to[b];
                if !seen[u] && Some(u) != banned && self.residual(b ^ 1) > Rat::zero() {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }
}

/// A spending network together with the market-to-node bookkeeping.
pub struct SpendNet {
    pub net: FlowNetwork,
    pub n: usize,
    pub s: usize,
    pub t: usize,
    /// Arc ids for `s -> i`; None when the agent is masked out.
    pub s_arc: Vec<Option<usize>>,
    /// Arc ids for `g_j -> t`.
    pub t_arc: Vec<Option<usize>>,
    /// Agent-to-good arcs, one per included MBB edge.
    pub fwd: BTreeMap<(Agent, Good), usize>,
    /// Good-to-agent arcs, one per included `F`-edge.
    pub back: BTreeMap<(Agent, Good), usize>,
}

impl SpendNet {
    pub fn agent_node(&self, i: Agent) -> usize {
        1 + i
    }

    pub fn good_node(&self, j: Good) -> usize {
        1 + self.n + j
    }

    /// Net money flow on market edges implied by the current arc flows.
    pub fn money_flow(&self) -> MoneyFlow {
        let mut money = MoneyFlow::new();
        for (&(i, j), &a) in &self.fwd {
            money.add(i, j, self.net.arc_flow(a));
        }
        for (&(i, j), &a) in &self.back {
            money.add(i, j, &-self.net.arc_flow(a).clone());
        }
        money
    }

    /// Installs a given money flow as arc flows. Fails if it does not fit:
    /// negative money off the back-arc set, or a capacity overrun.
    pub fn apply_money(&mut self, money: &MoneyFlow) -> Result<(), String> {
        for (i, j, v) in money.iter() {
            if *v >= Rat::zero() {
                let a = *self
                    .fwd
                    .get(&(i, j))
                    .ok_or_else(|| format!("money on ({i}, {j}) outside the network"))?;
                self.net.set_arc_flow(a, v.clone());
            } else {
                let a = *self
                    .back
                    .get(&(i, j))
                    .ok_or_else(|| format!("negative money on ({i}, {j}) without a return arc"))?;
                self.net.set_arc_flow(a, -v.clone());
            }
        }
        for i in 0..self.n {
            if let Some(a) = self.s_arc[i] {
                let spent = money.spent_by(self.n, i);
                if spent > self.net.cap[a] || spent < Rat::zero() {
                    return Err(format!("agent {i} spends outside [0, cap]"));
                }
                self.net.set_arc_flow(a, spent);
            }
        }
        for j in 0..self.n {
            if let Some(a) = self.t_arc[j] {
                let recv = money.received_by(j);
                if recv > self.net.cap[a] || recv < Rat::zero() {
                    return Err(format!("good {j} receives outside [0, cap]"));
                }
                self.net.set_arc_flow(a, recv);
            }
        }
        Ok(())
    }
}

/// Builds the spending network restricted to masked-in agents and goods.
/// `agent_caps` are the `s -> i` capacities (budgets, or trial supplies);
/// `good_caps` the `g_j -> t` capacities (prices).
pub fn spend_net(
    instance: &MarketInstance,
    mbb: &EdgeSet,
    f_edges: &EdgeSet,
    agent_caps: &[Rat],
    good_caps: &[Rat],
    agent_mask: &[bool],
    good_mask: &[bool],
) -> SpendNet {
    let n = instance.n();
    let mut net = FlowNetwork::new(2 * n + 2);
    let s = 0;
    let t = 2 * n + 1;
    let mut total = Rat::zero();
    for i in 0..n {
        if agent_mask[i] {
            total += &agent_caps[i];
        }
    }
    for j in 0..n {
        if good_mask[j] {
            total += &good_caps[j];
        }
    }
    let inf = total + Rat::from_integer(1.into());

    let mut s_arc = vec![None; n];
    let mut t_arc = vec![None; n];
    for i in 0..n {
        if agent_mask[i] {
            s_arc[i] = Some(net.add_arc(s, 1 + i, agent_caps[i].clone()));
        }
    }
    let mut fwd = BTreeMap::new();
    let mut back = BTreeMap::new();
    for (i, j) in mbb.iter() {
        if agent_mask[i] && good_mask[j] {
            fwd.insert((i, j), net.add_arc(1 + i, 1 + n + j, inf.clone()));
        }
    }
    for (i, j) in f_edges.iter() {
        debug_assert!(mbb.contains(i, j), "F-edge ({i}, {j}) is not MBB");
        if agent_mask[i] && good_mask[j] {
            back.insert((i, j), net.add_arc(1 + n + j, 1 + i, inf.clone()));
        }
    }
    for j in 0..n {
        if good_mask[j] {
            t_arc[j] = Some(net.add_arc(1 + n + j, t, good_caps[j].clone()));
        }
    }
    SpendNet { net, n, s, t, s_arc, t_arc, fwd, back }
}

/// Max money flow at the given prices; returns the flow and its value.
pub fn max_money_flow(
    instance: &MarketInstance,
    prices: &[Rat],
    mbb: &EdgeSet,
    f_edges: &EdgeSet,
) -> (MoneyFlow, Rat) {
    let n = instance.n();
    let mask = vec![true; n];
    let mut sn = spend_net(instance, mbb, f_edges, prices, prices, &mask, &mask);
    let v = sn.net.max_flow(sn.s, sn.t);
    (sn.money_flow(), v)
}

/// A flow that spends every budget and sells every good, if one exists at
/// these prices.
pub fn clearing_flow(
    instance: &MarketInstance,
    prices: &[Rat],
    mbb: &EdgeSet,
    f_edges: &EdgeSet,
) -> Option<MoneyFlow> {
    let (money, v) = max_money_flow(instance, prices, mbb, f_edges);
    let total: Rat = prices.iter().fold(Rat::zero(), |a, p| a + p);
    if v == total {
        Some(money)
    } else {
        None
    }
}

/// Exact water filling: supplies `x_i = max(cap_i - level, 0)` with the level
/// chosen so the supplies sum to `v`. Requires `0 <= v <= sum(caps)` over the
/// masked-in entries.
fn waterfill(caps: &[Rat], mask: &[bool], v: &Rat) -> Vec<Rat> {
    let mut order: Vec<usize> = (0..caps.len()).filter(|&i| mask[i]).collect();
    order.sort_by(|&a, &b| caps[b].cmp(&caps[a]));
    assert!(!order.is_empty() && *v >= Rat::zero());
    let mut prefix = Rat::zero();
    let mut level = None;
    for (k, &i) in order.iter().enumerate() {
        prefix += &caps[i];
        let lam = (&prefix - v) / Rat::from_integer(((k + 1) as i64).into());
        let next_cap = order.get(k + 1).map(|&jj| caps[jj].clone());
        let lower_ok = match next_cap {
            Some(c) => lam >= c,
            None => lam >= Rat::zero(),
        };
        if lower_ok {
            assert!(lam <= caps[i], "water level above the smallest active cap");
            level = Some(lam);
            break;
        }
    }
    let lam = level.expect("no consistent water level; is v <= sum of caps?");
    caps.iter()
        .enumerate()
        .map(|(i, c)| {
            if mask[i] && *c > lam {
                c - &lam
            } else {
                Rat::zero()
            }
        })
        .collect()
}

/// Balanced flow: among max flows of the spending network, the one whose
/// agent surplus vector has minimum Euclidean norm. The surplus vector of
/// the result is unique even though the flow itself need not be.
///
/// Divide and conquer: relax to "all supplies at the water-filling point";
/// if a max flow realizes that point we are done, otherwise the maximal
/// min-cut of the trial network splits the agents into a starved high-surplus
/// group (together with the goods it can reach) and the rest, and the two
/// sides are solved independently. The split is safe because the optimal
/// supplies saturate the high side's reachable sink capacity exactly.
pub fn balanced_flow(
    instance: &MarketInstance,
    prices: &[Rat],
    mbb: &EdgeSet,
    f_edges: &EdgeSet,
) -> MoneyFlow {
    let n = instance.n();
    let mut money = MoneyFlow::new();
    let agents = vec![true; n];
    let goods = vec![true; n];
    balance_rec(instance, prices, mbb, f_edges, agents, goods, &mut money);
    #[cfg(debug_assertions)]
    {
        if let Err(e) = check_balanced_flow(instance, prices, mbb, f_edges, &money) {
            panic!("balanced_flow produced an unbalanced flow: {e:?}");
        }
    }
    money
}

fn balance_rec(
    instance: &MarketInstance,
    prices: &[Rat],
    mbb: &EdgeSet,
    f_edges: &EdgeSet,
    agents: Vec<bool>,
    goods: Vec<bool>,
    money: &mut MoneyFlow,
) {
    let n = instance.n();
    if !agents.iter().any(|&a| a) {
        return;
    }
    let mut sn = spend_net(instance, mbb, f_edges, prices, prices, &agents, &goods);
    let v = sn.net.max_flow(sn.s, sn.t);
    let supplies = waterfill(prices, &agents, &v);
    let mut trial = spend_net(instance, mbb, f_edges, &supplies, prices, &agents, &goods);
    let got = trial.net.max_flow(trial.s, trial.t);
    if got == v {
        for (i, j, val) in trial.money_flow().iter() {
            money.set(i, j, val.clone());
        }
        return;
    }
    // The water-filling point is not achievable. Split along the maximal
    // min-cut: the side that cannot reach t holds the agents whose supply is
    // capped by the network, together with every good they can flood.
    let reach_t = trial.net.reaching(trial.t, None);
    let mut high_agents = vec![false; n];
    let mut high_goods = vec![false; n];
    let mut low_agents = vec![false; n];
    let mut low_goods = vec![false; n];
    for i in 0..n {
        if agents[i] {
            if !reach_t[trial.agent_node(i)] {
                high_agents[i] = true;
            } else {
                low_agents[i] = true;
            }
        }
    }
    for j in 0..n {
        if goods[j] {
            if !reach_t[trial.good_node(j)] {
                high_goods[j] = true;
            } else {
                low_goods[j] = true;
            }
        }
    }
    let h_count = high_agents.iter().filter(|&&b| b).count();
    let a_count = agents.iter().filter(|&&b| b).count();
    assert!(
        h_count > 0 && h_count < a_count,
        "min-cut split failed to separate the agents"
    );
    balance_rec(instance, prices, mbb, f_edges, high_agents, high_goods, money);
    balance_rec(instance, prices, mbb, f_edges, low_agents, low_goods, money);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BalanceViolation {
    /// Not even a feasible flow at these prices.
    NotAFlow(String),
    /// Feasible but an augmenting path remains.
    NotMaximum,
    /// Max flow, but surplus can be shifted from `low` to `high`: the agent
    /// `high` with larger surplus reaches the spending agent `low` in the
    /// residual network without using the source.
    Unbalanced { high: Agent, low: Agent },
}

/// Certificate check for balancedness: a max flow is balanced iff no agent
/// with strictly larger surplus can reach, in the residual network with the
/// source deleted, an agent with smaller surplus that actually spends money.
/// Such a pair admits a norm-reducing reroute; absence of one is optimality
/// (exchange-local optima of the norm over the max-flow polytope are global).
pub fn check_balanced_flow(
    instance: &MarketInstance,
    prices: &[Rat],
    mbb: &EdgeSet,
    f_edges: &EdgeSet,
    money: &MoneyFlow,
) -> Result<(), BalanceViolation> {
    let n = instance.n();
    let mask = vec![true; n];
    let mut sn = spend_net(instance, mbb, f_edges, prices, prices, &mask, &mask);
    sn.apply_money(money).map_err(BalanceViolation::NotAFlow)?;
    let from_s = sn.net.reaches(sn.s, None);
    if from_s[sn.t] {
        return Err(BalanceViolation::NotMaximum);
    }
    let surplus: Vec<Rat> = (0..n).map(|i| &prices[i] - money.spent_by(n, i)).collect();
    for i in 0..n {
        if surplus[i] <= Rat::zero() {
            continue;
        }
        let reach = sn.net.reaches(sn.agent_node(i), Some(sn.s));
        for k in 0..n {
            if k != i
                && reach[sn.agent_node(k)]
                && surplus[k] < surplus[i]
                && money.spent_by(n, k) > Rat::zero()
            {
                return Err(BalanceViolation::Unbalanced { high: i, low: k });
            }
        }
    }
    Ok(())
}

/// The given prices cannot absorb every budget on best-ratio arcs alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotSaturated;

/// Converts clearing prices into a nonnegative clearing flow. The network has
/// forward best-ratio arcs only, no return arcs, so any max flow that spends
/// every budget is itself an equilibrium flow. Fails when some budget cannot
/// be routed, i.e. the prices were not clearing prices after all.
pub fn final_flow(instance: &MarketInstance, prices: &[Rat]) -> Result<MoneyFlow, NotSaturated> {
    let best = crate::market::mbb(instance, prices);
    clearing_flow(instance, prices, &best.edges, &EdgeSet::new()).ok_or(NotSaturated)
}
