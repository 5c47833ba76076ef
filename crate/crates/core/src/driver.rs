//! Outer loop. Alternates the price boost with the scaling subroutine,
//! pinning every edge that carries more money than the total remaining
//! surplus into the allowed set, until a run ends with zero surplus. Markets
//! whose desire digraph is not strongly connected split into components that
//! are solved separately and then priced so that no agent prefers a good
//! from another component.

use crate::boost::{self, BoostResult};
use crate::dm::{self, DMResult, PhaseTrace};
use crate::flow;
use crate::market::{
    self, Agent, EdgeSet, ExistenceVerdict, Good, MarketInstance, MoneyFlow,
};
use crate::oracle;
use crate::rational::Rat;
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoostTag {
    Approx,
    FEquilibrium,
}

/// One pass of boost plus (unless the boost already cleared) one scaling
/// run. Global indices except in `dm_traces`, whose agent and good ids are
/// local to `block_agents`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleRecord {
    pub block_agents: Vec<Agent>,
    pub boost: BoostTag,
    pub dm_traces: Vec<PhaseTrace>,
    /// Edges pinned at the end of this cycle; empty exactly for the cycle
    /// that found the block's equilibrium.
    pub added: Vec<(Agent, Good)>,
    /// Size of the allowed set after the additions.
    pub f_size: usize,
    /// Undirected components of the allowed set over all 2n nodes after the
    /// additions; strictly decreasing over the pinning cycles.
    pub f_components: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolveReport {
    /// Equilibrium prices, scaled so the smallest is 1.
    pub prices: Vec<Rat>,
    /// Nonnegative clearing flow at those prices.
    pub flow: MoneyFlow,
    /// All edges ever pinned; each is best-ratio at the final prices.
    pub f_edges: EdgeSet,
    pub cycles: Vec<CycleRecord>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolveError {
    #[error("no equilibrium: desire component {witness:?} is a singleton without a self-loop")]
    NoEquilibrium { witness: Vec<Agent> },
}

/// The instance restricted to one desire component: those agents and their
/// goods, keeping only internal utility edges.
fn block_instance(instance: &MarketInstance, agents: &[Agent]) -> MarketInstance {
    let mut local_of = vec![None; instance.n()];
    for (loc, &g) in agents.iter().enumerate() {
        local_of[g] = Some(loc);
    }
    let mut edges = Vec::new();
    for (loc, &g) in agents.iter().enumerate() {
        for &j in instance.goods_of(g) {
            if let Some(lj) = local_of[j] {
                edges.push((loc, lj, instance.utility(g, j).unwrap().clone()));
            }
        }
    }
    MarketInstance::new(agents.len(), edges)
        .expect("a strongly connected component forms a valid market")
}

struct BlockCycle {
    boost: BoostTag,
    dm_traces: Vec<PhaseTrace>,
    added: Vec<(Agent, Good)>,
}

/// Solves one strongly connected block. Returns its equilibrium prices,
/// scaled to minimum 1, along with the pinned set and per-cycle records,
/// all in local indices.
fn solve_block(inst: &MarketInstance) -> (Vec<Rat>, EdgeSet, Vec<BlockCycle>) {
    let nb = inst.n();
    let mut f_edges = EdgeSet::new();
    let mut cycles: Vec<BlockCycle> = Vec::new();
    let prices = loop {
        assert!(cycles.len() < 2 * nb, "outer loop ran past the cycle bound");
        let boosted = boost::boost(inst, &f_edges)
            .expect("boost must succeed on a pinned set built from revealed edges");
        let alloc = match boosted {
            BoostResult::FEquilibrium(alloc) => {
                cycles.push(BlockCycle {
                    boost: BoostTag::FEquilibrium,
                    dm_traces: Vec::new(),
                    added: Vec::new(),
                });
                break alloc.prices;
            }
            BoostResult::Approx(alloc) => alloc,
        };
        let out = dm::dm_run(inst, &f_edges, &alloc.prices)
            .expect("phase count stayed under the safety cap");
        match out.result {
            DMResult::FEquilibrium => {
                cycles.push(BlockCycle {
                    boost: BoostTag::Approx,
                    dm_traces: out.traces,
                    added: Vec::new(),
                });
                break out.allocation.prices;
            }
            DMResult::Revealed(_, _) => {
                let s = market::surplus(inst, &out.allocation.prices, &out.allocation.flow);
                let l1 = s.good_l1();
                let added: Vec<(Agent, Good)> = out
                    .allocation
                    .flow
                    .iter()
                    .filter(|&(i, j, v)| *v > l1 && !f_edges.contains(i, j))
                    .map(|(i, j, _)| (i, j))
                    .collect();
                let (ac, gc, _) = f_edges.components(nb);
                assert!(
                    added.iter().any(|&(i, j)| ac[i] != gc[j]),
                    "a revealed run must pin an edge joining two components"
                );
                for &(i, j) in &added {
                    f_edges.insert(i, j);
                }
                cycles.push(BlockCycle {
                    boost: BoostTag::Approx,
                    dm_traces: out.traces,
                    added,
                });
            }
        }
    };
    let minp = prices.iter().min().expect("nonempty market").clone();
    let prices = prices.iter().map(|p| p / &minp).collect();
    (prices, f_edges, cycles)
}

/// Finds an exact equilibrium or reports that none exists. The desire
/// digraph (arc per utility edge) is split into strongly connected
/// components; each is an independent market because at any equilibrium no
/// money crosses between them. Components are then scaled so that every
/// cross-component desire is priced out of best-ratio range.
pub fn solve(instance: &MarketInstance) -> Result<SolveReport, SolveError> {
    let n = instance.n();
    let report = market::existence_check(instance);
    if let ExistenceVerdict::NoEquilibrium { witness } = report.verdict {
        return Err(SolveError::NoEquilibrium { witness });
    }
    // Blocks come in reverse topological order: every cross arc goes from a
    // later block to an earlier one.
    let blocks = report.sccs;
    let r = blocks.len();
    let mut block_of = vec![usize::MAX; n];
    for (b, agents) in blocks.iter().enumerate() {
        for &g in agents {
            block_of[g] = b;
        }
    }

    let mut f_edges = EdgeSet::new();
    let mut cycles: Vec<CycleRecord> = Vec::new();
    let mut local_prices: Vec<Vec<Rat>> = Vec::with_capacity(r);
    let mut alpha = vec![Rat::zero(); n];
    for agents in &blocks {
        let inst_b = block_instance(instance, agents);
        let (prices_b, f_b, cycles_b) = solve_block(&inst_b);
        let best_b = market::mbb(&inst_b, &prices_b);
        for (loc, &g) in agents.iter().enumerate() {
            alpha[g] = best_b.alpha[loc].clone();
        }
        for cy in cycles_b {
            let added: Vec<(Agent, Good)> =
                cy.added.iter().map(|&(i, j)| (agents[i], agents[j])).collect();
            for &(i, j) in &added {
                f_edges.insert(i, j);
            }
            let (_, _, comps) = f_edges.components(n);
            cycles.push(CycleRecord {
                block_agents: agents.clone(),
                boost: cy.boost,
                dm_traces: cy.dm_traces,
                added,
                f_size: f_edges.len(),
                f_components: comps,
            });
        }
        local_prices.push(prices_b);
        let _ = f_b;
    }

    // Scale factor per block, assigned from the last block backwards so that
    // every cross desire (later agent into earlier good) is already priced:
    // agent i in block c keeps ratio alpha_i / lambda_c on its own block, so
    // good k in block b must cost at least lambda_c * u_ik / alpha_i. The
    // factor 2 keeps cross edges strictly below best ratio.
    let mut lambda = vec![Rat::one(); r];
    let mut local_of = vec![usize::MAX; n];
    for agents in &blocks {
        for (loc, &g) in agents.iter().enumerate() {
            local_of[g] = loc;
        }
    }
    for b in (0..r).rev() {
        let mut bound = Rat::zero();
        for &k in &blocks[b] {
            for &i in instance.agents_of(k) {
                let c = block_of[i];
                assert!(c >= b, "a cross desire pointed at a later block");
                if c == b {
                    continue;
                }
                let need = &lambda[c] * instance.utility(i, k).unwrap()
                    / (&local_prices[b][local_of[k]] * &alpha[i]);
                if need > bound {
                    bound = need;
                }
            }
        }
        let doubled = &bound + &bound;
        if doubled > Rat::one() {
            lambda[b] = doubled;
        }
    }

    let mut prices = vec![Rat::zero(); n];
    for (b, agents) in blocks.iter().enumerate() {
        for (loc, &g) in agents.iter().enumerate() {
            prices[g] = &lambda[b] * &local_prices[b][loc];
        }
    }
    let minp = prices.iter().min().expect("nonempty market").clone();
    if !minp.is_one() {
        for p in &mut prices {
            *p /= &minp;
        }
    }

    let flow = flow::final_flow(instance, &prices)
        .expect("clearing prices admit a nonnegative clearing flow");
    let violations = oracle::check_equilibrium(instance, &prices, &flow);
    assert!(violations.is_empty(), "returned equilibrium fails verification: {violations:?}");
    let best = market::mbb(instance, &prices);
    for (i, j) in f_edges.iter() {
        assert!(
            best.edges.contains(i, j),
            "pinned edge ({i}, {j}) is not best-ratio at the final prices"
        );
    }
    Ok(SolveReport { prices, flow, f_edges, cycles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, ratq};

    #[test]
    fn symmetric_pair() {
        let report = solve(&market::fixture_sym2()).unwrap();
        assert_eq!(report.prices, vec![rat(1), rat(1)]);
        assert_eq!(report.flow.get(0, 1), rat(1));
        assert_eq!(report.flow.get(1, 0), rat(1));
        assert_eq!(report.cycles.len(), 1);
        assert!(report.f_edges.is_empty());
    }

    #[test]
    fn asymmetric_pair() {
        let report = solve(&market::fixture_asym2()).unwrap();
        assert_eq!(report.prices, vec![rat(1), rat(1)]);
        assert_eq!(report.flow.get(0, 1), rat(1));
        assert_eq!(report.flow.get(1, 0), rat(1));
    }

    #[test]
    fn nonexistence_is_reported() {
        let err = solve(&market::fixture_no_equilibrium()).unwrap_err();
        assert_eq!(err, SolveError::NoEquilibrium { witness: vec![1] });
    }

    /// Two one-agent components; the later block's agent also wants the
    /// earlier block's good at triple value, so that good's price must rise
    /// to 2 * 3 = 6 to price the cross desire strictly out.
    #[test]
    fn singleton_components_are_priced_apart() {
        let inst = MarketInstance::new(
            2,
            vec![(0, 0, rat(1)), (1, 0, rat(3)), (1, 1, rat(1))],
        )
        .unwrap();
        let report = solve(&inst).unwrap();
        assert_eq!(report.prices, vec![rat(6), rat(1)]);
        assert_eq!(report.flow.get(0, 0), rat(6));
        assert_eq!(report.flow.get(1, 1), rat(1));
        assert_eq!(report.flow.get(1, 0), rat(0));
    }

    /// Two symmetric pairs with one cross desire of weight 5.
    #[test]
    fn paired_components_are_priced_apart() {
        let inst = MarketInstance::new(
            4,
            vec![
                (0, 1, rat(1)),
                (1, 0, rat(1)),
                (2, 3, rat(1)),
                (3, 2, rat(1)),
                (2, 1, rat(5)),
            ],
        )
        .unwrap();
        let report = solve(&inst).unwrap();
        assert_eq!(report.prices, vec![rat(10), rat(10), rat(1), rat(1)]);
        assert!(oracle::check_equilibrium(&inst, &report.prices, &report.flow).is_empty());
        // Two blocks, each cleared in one cycle.
        assert_eq!(report.cycles.len(), 2);
        assert_eq!(report.cycles[0].block_agents, vec![0, 1]);
        assert_eq!(report.cycles[1].block_agents, vec![2, 3]);
    }

    /// Uniform prices overload good 2 (agent 1 prefers it to its own good by
    /// a hair) and leave good 1 unsold. A dozen capped price-rise phases
    /// close the 1001/1000 gap, the resulting rebalance drops the surplus to
    /// 1/1000, and every unit-size flow edge is suddenly revealed. The next
    /// cycle boosts straight to the equilibrium.
    #[test]
    fn revealing_cycle_reaches_equilibrium() {
        let inst = MarketInstance::new(
            3,
            vec![
                (0, 2, rat(1)),
                (1, 1, rat(1)),
                (1, 2, ratq(1001, 1000)),
                (2, 0, rat(1)),
                (2, 1, ratq(1, 2)),
            ],
        )
        .unwrap();
        let report = solve(&inst).unwrap();
        assert!(oracle::check_equilibrium(&inst, &report.prices, &report.flow).is_empty());
        assert_eq!(report.prices[1], rat(1));
        assert_eq!(report.prices[0], report.prices[2]);
        assert!(report.cycles.len() >= 2);
        let first = &report.cycles[0];
        assert_eq!(first.added, vec![(0, 2), (1, 1), (2, 0)]);
        assert_eq!(first.f_size, 3);
        // Three disjoint agent-good pairs out of six nodes.
        assert_eq!(first.f_components, 3);
        assert!(!first.dm_traces.is_empty());
        // Component counts never increase, and drop on every pinning cycle.
        for w in report.cycles.windows(2) {
            assert!(w[1].f_components <= w[0].f_components);
            if !w[1].added.is_empty() {
                assert!(w[1].f_components < w[0].f_components);
            }
        }
    }
}
