//! Surplus scaling subroutine. Starting from a balanced flow, repeatedly pick
//! the group of agents whose surpluses stand clear of the rest, raise the
//! prices of the goods that group buys (rescaling the group's spending along),
//! and rebalance. Stops as soon as the market clears or some edge outside the
//! allowed set carries more money than the total remaining surplus; the caller
//! then pins that edge and restarts from better prices.

use crate::flow;
use crate::market::{
    self, Agent, EdgeSet, FAllocation, Good, MarketInstance, MoneyFlow,
};
use crate::rational::{self, rat, ratq, Rat};
use num_traits::{One, Zero};

/// Safety margin in the per-phase step bound `1 + 1/(STEP_DENOM·n³)`. Any
/// value this large keeps each phase's multiplicative price step small enough
/// for the norm-progress guarantees asserted on traces.
pub const STEP_DENOM: i64 = 414;

/// Largest factor by which a single phase may multiply a price.
pub fn step_threshold(n: usize) -> Rat {
    let n3 = (n * n * n) as i64;
    Rat::one() + ratq(1, STEP_DENOM * n3)
}

/// Upper bound on the number of phases; generously above the worst-case
/// progress bound, so hitting it means a bug rather than a slow instance.
pub fn phase_cap(n: usize) -> u128 {
    let bits = (usize::BITS - n.leading_zeros()) as u128;
    let c2 = (STEP_DENOM * STEP_DENOM) as u128;
    324 * c2 * (n as u128).pow(6) * bits * bits + n as u128
}

/// What a phase's inner loop runs into next as the scale factor x grows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// An edge from an active agent to an unscaled good reaches the agent's
    /// best ratio.
    NewEdge { agent: Agent, good: Good },
    /// The smallest active surplus meets the largest outside one (or zero).
    SurplusMeet,
    /// The cumulative scale of the phase reaches the step threshold.
    ScaleCap,
}

fn rank(ev: &EventKind) -> u8 {
    // At equal x, ending the phase is always safe; absorbing a good at a tie
    // could skip a required break. ScaleCap also outranks SurplusMeet.
    match ev {
        EventKind::NewEdge { .. } => 0,
        EventKind::SurplusMeet => 1,
        EventKind::ScaleCap => 2,
    }
}

/// One record per inner-loop iteration; the last entry ended the phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PhaseEvent {
    /// A new best-ratio edge appeared and the agent took the whole good.
    Absorb { agent: Agent, good: Good, x: Rat },
    /// A new best-ratio edge appeared and stopped the phase.
    EdgeBreak { agent: Agent, good: Good, x: Rat },
    /// Active and outside surpluses met.
    SurplusMeet { x: Rat },
    /// The cumulative scale hit the step threshold.
    ScaleCap { x: Rat },
}

impl PhaseEvent {
    pub fn x(&self) -> &Rat {
        match self {
            PhaseEvent::Absorb { x, .. }
            | PhaseEvent::EdgeBreak { x, .. }
            | PhaseEvent::SurplusMeet { x }
            | PhaseEvent::ScaleCap { x } => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    /// Ended by the step threshold; prices rose by the full step.
    PriceRise,
    /// Ended by meeting surpluses or an edge break; the rebalance afterwards
    /// cuts the surplus norm.
    Balancing,
}

/// Per-phase record. Products and norms are taken at the balanced flows on
/// either side of the phase; `max_price_bits` tracks how large the price
/// numerators and denominators have grown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseTrace {
    pub phase: usize,
    pub kind: PhaseKind,
    pub high_agents: Vec<Agent>,
    pub scaled_goods: Vec<Good>,
    pub events: Vec<PhaseEvent>,
    pub last_x: Rat,
    pub price_product_before: Rat,
    pub price_product_after: Rat,
    pub surplus_l1_before: Rat,
    pub surplus_l1_after: Rat,
    pub surplus_norm_sq_before: Rat,
    pub surplus_norm_sq_after: Rat,
    pub max_price_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DMResult {
    /// The flow clears the market at the final prices.
    FEquilibrium,
    /// Edge outside the allowed set whose flow exceeds the total surplus,
    /// bridging two components of the allowed set.
    Revealed(Agent, Good),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DMOutcome {
    pub allocation: FAllocation,
    pub result: DMResult,
    pub traces: Vec<PhaseTrace>,
}

/// The phase count passed the safety cap; this signals a bug, not a slow run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseCapExceeded;

/// Size of the leading surplus group: the smallest `l` such that the l-th
/// largest surplus exceeds the next one by more than a factor `1 + 1/n`
/// (treating ratios with a zero denominator as infinite), or `n` if the
/// surpluses nowhere fall off that fast.
pub fn select_set_s(c: &[Rat]) -> usize {
    let n = c.len();
    debug_assert!(c.windows(2).all(|w| w[0] >= w[1]), "surpluses not sorted");
    debug_assert!(c.iter().all(|v| *v >= Rat::zero()));
    for l in 1..n {
        // c[l-1]/c[l] > 1 + 1/n, cross-multiplied so zeros need no care.
        if rat(n as i64) * &c[l - 1] > rat(n as i64 + 1) * &c[l] {
            return l;
        }
    }
    n
}

/// Smallest scale factor x ≥ 1 at which the current iteration must stop, and
/// why. `active` marks the leading surplus group, `scaled` the goods whose
/// prices (and inflows from the group) grow with x, and `total_x` the scale
/// already accumulated by earlier iterations of the phase.
///
/// While x grows, each surplus is linear in x: active agents owning a scaled
/// good keep surplus x·c_i; active agents owning an unscaled good have
/// p_i − x·(spending); outside agents owning a scaled good have
/// x·p_i − (spending); everyone else is constant. Every candidate event is
/// therefore the root of a linear equation, and the minimum is exact.
pub fn min_event_x(
    instance: &MarketInstance,
    p: &[Rat],
    f: &MoneyFlow,
    active: &[bool],
    scaled: &[bool],
    total_x: &Rat,
) -> (Rat, EventKind) {
    let n = instance.n();
    let mut best_x = step_threshold(n) / total_x;
    let mut best_ev = EventKind::ScaleCap;
    debug_assert!(best_x >= Rat::one(), "accumulated scale past the threshold");

    let mut consider = |x: Rat, ev: EventKind| {
        if x < best_x || (x == best_x && rank(&ev) > rank(&best_ev)) {
            best_x = x;
            best_ev = ev;
        }
    };

    let spent: Vec<Rat> = (0..n).map(|i| f.spent_by(n, i)).collect();
    let line = |i: usize| -> (Rat, Rat) {
        // (slope, intercept) of agent i's surplus as a function of x.
        if active[i] {
            if scaled[i] {
                (&p[i] - &spent[i], Rat::zero())
            } else {
                (-spent[i].clone(), p[i].clone())
            }
        } else if scaled[i] {
            (p[i].clone(), -spent[i].clone())
        } else {
            (Rat::zero(), &p[i] - &spent[i])
        }
    };

    // Surplus meet: every (active, bound) pair crosses at most once, and the
    // first crossing of the two envelopes is the smallest pairwise root ≥ 1.
    let mut bounds: Vec<(Rat, Rat)> =
        (0..n).filter(|&k| !active[k]).map(line).collect();
    bounds.push((Rat::zero(), Rat::zero()));
    for i in 0..n {
        if !active[i] {
            continue;
        }
        let (ai, bi) = line(i);
        for (ak, bk) in &bounds {
            if ai == *ak {
                continue;
            }
            let x0 = (bk - &bi) / (&ai - ak);
            // Strictly past 1: a pair already equal at the current prices is
            // the starting state, not a meet.
            if x0 > Rat::one() {
                consider(x0, EventKind::SurplusMeet);
            }
        }
    }

    // New edge: an active agent's ratios on scaled goods fall as 1/x, so its
    // best outside edge is reached at x = (best scaled ratio)/(best outside
    // ratio), or immediately if the outside edge already ties the best.
    for a in 0..n {
        if !active[a] {
            continue;
        }
        let mut best_in: Option<Rat> = None;
        let mut best_out: Option<(Rat, Good)> = None;
        for &j in instance.goods_of(a) {
            let r = instance.utility(a, j).unwrap() / &p[j];
            if scaled[j] {
                if best_in.as_ref().is_none_or(|cur| r > *cur) {
                    best_in = Some(r);
                }
            } else if best_out.as_ref().is_none_or(|(cur, _)| r > *cur) {
                best_out = Some((r, j));
            }
        }
        if let Some((r_out, b)) = best_out {
            let x1 = match &best_in {
                Some(r_in) if *r_in > r_out => r_in / r_out,
                _ => Rat::one(),
            };
            consider(x1, EventKind::NewEdge { agent: a, good: b });
        }
    }

    (best_x, best_ev)
}

/// Runs one phase in place: selects the leading group, scales until the phase
/// ends, and rebalances. Returns the trace.
fn run_phase(
    instance: &MarketInstance,
    f_edges: &EdgeSet,
    p: &mut [Rat],
    f: &mut MoneyFlow,
    phase: usize,
) -> PhaseTrace {
    let n = instance.n();
    let s0 = market::surplus(instance, p, f);
    let l1_before = s0.good_l1();
    let price_product_before = rational::product(p.iter());
    let surplus_norm_sq_before = s0.agent_l2_sq();

    let mut order: Vec<Agent> = (0..n).collect();
    order.sort_by(|&a, &b| s0.agent[b].cmp(&s0.agent[a]).then(a.cmp(&b)));
    let sorted: Vec<Rat> = order.iter().map(|&i| s0.agent[i].clone()).collect();
    let ell = select_set_s(&sorted);
    let high_agents: Vec<Agent> = order[..ell].to_vec();

    let mut active = vec![false; n];
    for &i in &high_agents {
        active[i] = true;
    }
    let mut scaled = vec![false; n];
    for (i, j, _) in f.iter() {
        if active[i] {
            scaled[j] = true;
        }
    }
    // Balancedness leaves the scaled goods fully sold and keeps agents
    // outside the group off them; both are needed for the surplus lines.
    #[cfg(debug_assertions)]
    {
        for (i, j, _) in f.iter() {
            debug_assert!(active[i] || !scaled[j], "outsider money on a scaled good");
        }
        for j in 0..n {
            debug_assert!(!scaled[j] || s0.good[j].is_zero(), "scaled good not sold out");
        }
    }

    let mut total_x = Rat::one();
    let mut events: Vec<PhaseEvent> = Vec::new();
    let kind;
    loop {
        assert!(events.len() < n, "inner loop ran past the good count");
        let (x, ev) = min_event_x(instance, p, f, &active, &scaled, &total_x);
        debug_assert!(x >= Rat::one());
        if !x.is_one() {
            for j in 0..n {
                if scaled[j] {
                    p[j] *= &x;
                }
            }
            let pairs: Vec<(Agent, Good)> = f
                .support()
                .filter(|&(i, j)| active[i] && scaled[j])
                .collect();
            for (i, j) in pairs {
                f.scale(i, j, &x);
            }
        }
        #[cfg(debug_assertions)]
        {
            let best = market::mbb(instance, p);
            for (i, j) in f_edges.iter() {
                debug_assert!(
                    best.edges.contains(i, j),
                    "allowed edge ({i}, {j}) lost best-ratio status mid-phase"
                );
            }
        }
        match ev {
            EventKind::ScaleCap => {
                events.push(PhaseEvent::ScaleCap { x });
                kind = PhaseKind::PriceRise;
                break;
            }
            EventKind::SurplusMeet => {
                events.push(PhaseEvent::SurplusMeet { x });
                kind = PhaseKind::Balancing;
                break;
            }
            EventKind::NewEdge { agent: a, good: b } => {
                // Surpluses as they would look if a absorbed all of good b.
                let cur = market::surplus(instance, p, f);
                let mut tilde = cur.agent.clone();
                tilde[a] -= &p[b];
                for i in 0..n {
                    if !active[i] {
                        let back = f.get(i, b);
                        tilde[i] += back;
                    }
                }
                let blocked =
                    (0..n).any(|i| !active[i] && f_edges.contains(i, b));
                let min_in = (0..n)
                    .filter(|&i| active[i])
                    .map(|i| tilde[i].clone())
                    .min()
                    .expect("active set is never empty");
                let mut bound = Rat::zero();
                for i in 0..n {
                    if !active[i] && tilde[i] > bound {
                        bound = tilde[i].clone();
                    }
                }
                if blocked || min_in <= bound {
                    events.push(PhaseEvent::EdgeBreak { agent: a, good: b, x });
                    kind = PhaseKind::Balancing;
                    break;
                }
                for i in 0..n {
                    f.set(i, b, Rat::zero());
                }
                f.set(a, b, p[b].clone());
                scaled[b] = true;
                total_x *= &x;
                events.push(PhaseEvent::Absorb { agent: a, good: b, x });
            }
        }
    }

    let best = market::mbb(instance, p);
    for (i, j) in f_edges.iter() {
        assert!(
            best.edges.contains(i, j),
            "allowed edge ({i}, {j}) lost best-ratio status in a phase"
        );
    }
    *f = flow::balanced_flow(instance, p, &best.edges, f_edges);
    let s1 = market::surplus(instance, p, f);
    let l1_after = s1.good_l1();
    assert!(l1_after <= l1_before, "rebalancing increased the surplus");

    let last_x = events.last().expect("at least one event per phase").x().clone();
    let max_price_bits = p
        .iter()
        .map(|r| r.numer().bits().max(r.denom().bits()))
        .max()
        .unwrap_or(0);
    PhaseTrace {
        phase,
        kind,
        high_agents,
        scaled_goods: (0..n).filter(|&j| scaled[j]).collect(),
        events,
        last_x,
        price_product_before,
        price_product_after: rational::product(p.iter()),
        surplus_l1_before: l1_before,
        surplus_l1_after: l1_after,
        surplus_norm_sq_before,
        surplus_norm_sq_after: s1.agent_l2_sq(),
        max_price_bits,
    }
}

/// Runs the subroutine from start prices `p_hat` (every allowed edge must be
/// best-ratio there). Phases repeat until the market clears or an edge
/// outside the allowed set, joining two of its components, carries more money
/// than the whole remaining surplus.
pub fn dm_run(
    instance: &MarketInstance,
    f_edges: &EdgeSet,
    p_hat: &[Rat],
) -> Result<DMOutcome, PhaseCapExceeded> {
    let n = instance.n();
    assert_eq!(p_hat.len(), n);
    let best = market::mbb(instance, p_hat);
    for (i, j) in f_edges.iter() {
        assert!(
            best.edges.contains(i, j),
            "allowed edge ({i}, {j}) is not best-ratio at the start prices"
        );
    }

    let mut p = p_hat.to_vec();
    let mut f = flow::balanced_flow(instance, &p, &best.edges, f_edges);
    let (agent_comp, good_comp, _) = f_edges.components(n);
    let cap = phase_cap(n);
    let mut traces = Vec::new();
    loop {
        let s = market::surplus(instance, &p, &f);
        let l1 = s.good_l1();
        let done = if l1.is_zero() {
            Some(DMResult::FEquilibrium)
        } else {
            f.iter()
                .find(|&(i, j, v)| {
                    !f_edges.contains(i, j) && *v > l1 && agent_comp[i] != good_comp[j]
                })
                .map(|(i, j, _)| DMResult::Revealed(i, j))
        };
        if let Some(result) = done {
            let allocation = FAllocation {
                prices: p,
                flow: f,
                negative_ok: f_edges.clone(),
            };
            debug_assert!(market::is_f_allocation(instance, &allocation).is_empty());
            return Ok(DMOutcome { allocation, result, traces });
        }
        if traces.len() as u128 >= cap {
            return Err(PhaseCapExceeded);
        }
        let tr = run_phase(instance, f_edges, &mut p, &mut f, traces.len());
        traces.push(tr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketInstance;
    use crate::oracle;

    #[test]
    fn leading_group_sizes() {
        assert_eq!(select_set_s(&[rat(3), rat(1), rat(1)]), 1);
        assert_eq!(select_set_s(&[rat(1), rat(1), rat(1)]), 3);
        assert_eq!(select_set_s(&[rat(2), ratq(3, 2), ratq(9, 8), rat(0)]), 1);
        assert_eq!(select_set_s(&[rat(0), rat(0)]), 2);
        // Zero tail: the ratio into it counts as infinite.
        assert_eq!(select_set_s(&[rat(5), rat(4), rat(0)]), 2);
    }

    /// Scale threshold first: the new-edge candidate sits at x = 2, far
    /// beyond the threshold 1 + 1/(414·8).
    #[test]
    fn threshold_beats_distant_edge() {
        let inst = market::fixture_asym2();
        let p = [rat(1), rat(1)];
        let mut f = MoneyFlow::new();
        f.set(0, 1, rat(1));
        let (x, ev) = min_event_x(
            &inst,
            &p,
            &f,
            &[true, false],
            &[false, true],
            &Rat::one(),
        );
        assert_eq!(x, ratq(3313, 3312));
        assert_eq!(ev, EventKind::ScaleCap);

        // With the whole step already accumulated, the cap fires at x = 1.
        let (x, ev) = min_event_x(
            &inst,
            &p,
            &f,
            &[true, false],
            &[false, true],
            &ratq(3313, 3312),
        );
        assert!(x.is_one());
        assert_eq!(ev, EventKind::ScaleCap);
    }

    /// An outside edge close enough in ratio is reached before the threshold.
    #[test]
    fn near_edge_beats_threshold() {
        let inst = MarketInstance::new(
            2,
            vec![(0, 0, ratq(19999, 10000)), (0, 1, rat(2)), (1, 0, rat(1))],
        )
        .unwrap();
        let p = [rat(1), rat(1)];
        let mut f = MoneyFlow::new();
        f.set(0, 1, rat(1));
        let (x, ev) = min_event_x(
            &inst,
            &p,
            &f,
            &[true, false],
            &[false, true],
            &Rat::one(),
        );
        assert_eq!(x, ratq(20000, 19999));
        assert_eq!(ev, EventKind::NewEdge { agent: 0, good: 0 });
    }

    /// A falling active surplus meets a rising outside one below the
    /// threshold: 10002 − 10000x = 10000x − 9999 at x = 20001/20000, where
    /// both sides equal 3/2.
    #[test]
    fn surplus_meet_from_linear_crossing() {
        let inst = MarketInstance::new(
            3,
            vec![(0, 1, rat(1)), (1, 2, rat(1)), (2, 0, rat(1))],
        )
        .unwrap();
        let p = [rat(10002), rat(10000), rat(9999)];
        let mut f = MoneyFlow::new();
        f.set(0, 1, rat(10000));
        f.set(1, 2, rat(9999));
        f.set(2, 0, rat(9998));
        let (x, ev) = min_event_x(
            &inst,
            &p,
            &f,
            &[true, false, false],
            &[false, true, false],
            &Rat::one(),
        );
        assert_eq!(x, ratq(20001, 20000));
        assert_eq!(ev, EventKind::SurplusMeet);
    }

    #[test]
    fn cleared_market_needs_no_phase() {
        let inst = market::fixture_sym2();
        let out = dm_run(&inst, &EdgeSet::new(), &[rat(1), rat(1)]).unwrap();
        assert_eq!(out.result, DMResult::FEquilibrium);
        assert!(out.traces.is_empty());
        assert_eq!(out.allocation.prices, vec![rat(1), rat(1)]);
        assert_eq!(out.allocation.flow.get(0, 1), rat(1));
        assert_eq!(out.allocation.flow.get(1, 0), rat(1));
    }

    /// One price-rise phase suffices on the asymmetric pair: after the step,
    /// the rebalanced flow pushes agent 1's whole (scaled) budget across
    /// (1,g2) while the surplus drops just below it.
    #[test]
    fn single_phase_reveals_an_edge() {
        let inst = market::fixture_asym2();
        let out = dm_run(&inst, &EdgeSet::new(), &[rat(1), rat(2)]).unwrap();
        assert_eq!(out.result, DMResult::Revealed(0, 1));
        assert_eq!(out.traces.len(), 1);
        let tr = &out.traces[0];
        assert_eq!(tr.kind, PhaseKind::PriceRise);
        assert_eq!(tr.high_agents, vec![1]);
        assert_eq!(tr.scaled_goods, vec![0]);
        assert_eq!(tr.events, vec![PhaseEvent::ScaleCap { x: ratq(3313, 3312) }]);
        assert_eq!(out.allocation.prices, vec![ratq(3313, 3312), rat(2)]);
        // The revealed edge carries more money than the remaining surplus.
        let s = market::surplus(&inst, &out.allocation.prices, &out.allocation.flow);
        assert!(out.allocation.flow.get(0, 1) > s.good_l1());
        // Exactly the guaranteed price growth, since the phase hit the cap.
        assert_eq!(
            tr.price_product_after,
            &tr.price_product_before * step_threshold(2)
        );
    }

    /// A new best-ratio edge whose absorption would overdraw the buyer stops
    /// the phase instead; the rebalance at the risen prices then clears the
    /// market outright. The heavy edge (0, 0) must already be allowed, else
    /// it is reported as revealed before any phase runs.
    #[test]
    fn edge_break_then_equilibrium() {
        let inst = MarketInstance::new(
            2,
            vec![(0, 0, rat(5001)), (0, 1, rat(2)), (1, 0, rat(1))],
        )
        .unwrap();
        let f_edges = EdgeSet::from_iter([(0, 0)]);
        let out = dm_run(&inst, &f_edges, &[rat(5000), rat(2)]).unwrap();
        assert_eq!(out.result, DMResult::FEquilibrium);
        assert_eq!(out.traces.len(), 1);
        let tr = &out.traces[0];
        assert_eq!(tr.kind, PhaseKind::Balancing);
        assert_eq!(
            tr.events,
            vec![PhaseEvent::EdgeBreak { agent: 0, good: 1, x: ratq(5001, 5000) }]
        );
        assert_eq!(out.allocation.prices, vec![rat(5001), rat(2)]);
        assert!(oracle::check_equilibrium(
            &inst,
            &out.allocation.prices,
            &out.allocation.flow
        )
        .is_empty());
    }

    /// The revealed edge must bridge two components of the allowed set, so
    /// with the clearing edges already allowed the run ends cleared, with
    /// every phase respecting the trace invariants.
    #[test]
    fn trace_invariants_on_a_star_market() {
        let inst = MarketInstance::new(
            3,
            vec![(0, 1, rat(1)), (0, 2, rat(1)), (1, 0, rat(1)), (2, 0, rat(1))],
        )
        .unwrap();
        let f_edges = EdgeSet::from_iter([(0, 1), (0, 2), (1, 0), (2, 0)]);
        let out = dm_run(&inst, &f_edges, &[rat(2), rat(1), rat(1)]).unwrap();
        assert_eq!(out.result, DMResult::FEquilibrium);
        let thresh = step_threshold(3);
        for tr in &out.traces {
            assert!(tr.events.len() <= 3);
            assert!(tr.price_product_after >= tr.price_product_before);
            match tr.kind {
                PhaseKind::PriceRise => {
                    assert!(
                        tr.price_product_after
                            >= &tr.price_product_before * &thresh
                    );
                }
                PhaseKind::Balancing => {
                    let grown = &tr.surplus_norm_sq_after * &thresh * &thresh;
                    assert!(grown <= tr.surplus_norm_sq_before);
                }
            }
        }
    }
}
