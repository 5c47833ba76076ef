//! Price boost: raise all prices as far as the revealed edges allow.
//!
//! Given a revealed edge set `F`, the feasibility system on component
//! prices is relaxed to a two-variable system Q_F (MBB dominance rows plus
//! the elimination-derived approximation of the budget rows) and solved for
//! its pointwise max. An unbounded system certifies that some closed group
//! of components can absorb any price level; its maximal growth direction
//! prices an exact `F`-equilibrium. A finite pointwise max, scaled down by
//! `n²` to re-enter the unrelaxed system, prices an `F`-allocation whose
//! good surpluses are at most 1.

use num_traits::Zero;
use thiserror::Error;

use crate::lpbuild::{build_pf, decompose, DecomposeError, PFSystem};
pub use crate::lpbuild::{component_flow, extend_prices};
use crate::m2vpi::{solve_max, M2VPIOutcome, TwoVarSystem};
use crate::market::{
    is_f_allocation, surplus, EdgeSet, FAllocation, MarketInstance,
};
use crate::rational::{rat, Rat};
use crate::zplus::{approx, ApproxSystem, ZMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoostResult {
    /// `F`-allocation with flow supported on `F`, surpluses nonnegative and
    /// good surpluses at most 1.
    Approx(FAllocation),
    /// `F`-allocation with zero total surplus.
    FEquilibrium(FAllocation),
}

impl BoostResult {
    pub fn allocation(&self) -> &FAllocation {
        match self {
            BoostResult::Approx(a) | BoostResult::FEquilibrium(a) => a,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoostError {
    #[error(transparent)]
    Inconsistent(#[from] DecomposeError),
    #[error("component {0} needs a positive price but got none")]
    NonpositivePrice(usize),
}

/// Full price vector from component prices, all of which must be positive.
pub fn extend(
    dec: &crate::lpbuild::Decomposition,
    p_bar: &[Rat],
) -> Result<Vec<Rat>, BoostError> {
    for (i, v) in p_bar.iter().enumerate() {
        if *v <= Rat::zero() {
            return Err(BoostError::NonpositivePrice(i));
        }
    }
    Ok(extend_prices(dec, p_bar))
}

/// Q_F: the MBB dominance rows and the approximation rows, as one
/// two-variable system over the component prices.
pub fn qf_system(sys: &PFSystem, ap: &ApproxSystem) -> TwoVarSystem {
    let mut rows = sys.mbb_lp_rows();
    rows.extend(ap.lp_rows());
    TwoVarSystem::from_lp_rows(sys.t, &rows).expect("Q_F rows have at most one coefficient per sign")
}

pub fn boost(instance: &MarketInstance, f_edges: &EdgeSet) -> Result<BoostResult, BoostError> {
    let dec = decompose(instance, f_edges)?;
    let sys = build_pf(instance, &dec);
    let zm = ZMatrix::new(sys.m_rows.clone()).expect("budget matrix sign pattern");
    let ap = approx(&zm, &sys.gamma, &sys.lambda);
    let qf = qf_system(&sys, &ap);
    match solve_max(&qf) {
        M2VPIOutcome::Infeasible { witness } => {
            unreachable!("zero prices satisfy Q_F, yet rows {witness:?} were reported")
        }
        M2VPIOutcome::Unbounded { ray } => {
            let prices = extend(&dec, &ray)?;
            // The growth direction lies in the recession cone of the budget
            // system; with every component present it must balance exactly.
            for row in &sys.m_rows {
                let e: Rat = row.iter().zip(&ray).map(|(a, b)| a * b).sum();
                assert!(e.is_zero(), "growth direction leaves excess in some component");
            }
            let flow = component_flow(&dec, &prices);
            let s = surplus(instance, &prices, &flow);
            assert!(s.agent_l1().is_zero() && s.good_l1().is_zero());
            let alloc = FAllocation { prices, flow, negative_ok: f_edges.clone() };
            assert!(is_f_allocation(instance, &alloc).is_empty());
            Ok(BoostResult::FEquilibrium(alloc))
        }
        M2VPIOutcome::PointwiseMax(p_star) => {
            let n = instance.n();
            let n2 = rat((n * n) as i64);
            let scaled: Vec<Rat> = p_star.iter().map(|v| v / &n2).collect();
            let prices = extend(&dec, &scaled)?;
            let flow = component_flow(&dec, &prices);
            let s = surplus(instance, &prices, &flow);
            for v in s.agent.iter().chain(&s.good) {
                assert!(*v >= Rat::zero());
            }
            assert!(s.good_linf() <= rat(1));
            let alloc = FAllocation { prices, flow, negative_ok: f_edges.clone() };
            assert!(is_f_allocation(instance, &alloc).is_empty());
            Ok(BoostResult::Approx(alloc))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market;
    use crate::oracle::{check_equilibrium, psi_exact, PsiOutcome};
    use crate::rational::{pow, ratq};

    /// Ψⁿ ≤ φⁿ ≤ n²ⁿ Ψⁿ, with Ψ = 0 forcing an exact equilibrium.
    fn assert_oracle_bound(instance: &MarketInstance, f: &EdgeSet, result: &BoostResult) {
        let alloc = result.allocation();
        let phi = market::phi_pow_n(instance, &alloc.prices, &alloc.flow);
        match psi_exact(instance, f).unwrap() {
            PsiOutcome::Zero => {
                assert!(matches!(result, BoostResult::FEquilibrium(_)));
                assert!(phi.is_zero());
            }
            PsiOutcome::Finite(psi) => {
                let blowup = pow(&rat(instance.n() as i64), 2 * instance.n());
                assert!(psi <= phi);
                assert!(phi <= blowup * psi);
            }
        }
    }

    #[test]
    fn empty_revealed_set_keeps_all_surplus() {
        let inst = market::fixture_sym2();
        let f = EdgeSet::new();
        let res = boost(&inst, &f).unwrap();
        match &res {
            BoostResult::Approx(alloc) => {
                // Pointwise max 1 per singleton component, scaled by 1/n².
                assert_eq!(alloc.prices, vec![ratq(1, 4), ratq(1, 4)]);
                assert!(alloc.flow.is_empty());
                let s = surplus(&inst, &alloc.prices, &alloc.flow);
                assert_eq!(s.good_linf(), ratq(1, 4));
            }
            other => panic!("expected Approx, got {other:?}"),
        }
        assert_oracle_bound(&inst, &f, &res);
    }

    #[test]
    fn full_support_returns_equilibrium() {
        let inst = market::fixture_sym2();
        let f = EdgeSet::from_iter([(0, 1), (1, 0)]);
        let res = boost(&inst, &f).unwrap();
        match &res {
            BoostResult::FEquilibrium(alloc) => {
                assert_eq!(alloc.prices, vec![rat(1), rat(1)]);
                assert_eq!(alloc.flow.get(0, 1), rat(1));
                assert_eq!(alloc.flow.get(1, 0), rat(1));
                assert!(check_equilibrium(&inst, &alloc.prices, &alloc.flow).is_empty());
            }
            other => panic!("expected FEquilibrium, got {other:?}"),
        }
        assert_oracle_bound(&inst, &f, &res);
    }

    #[test]
    fn bounded_system_hits_the_lower_oracle_bound() {
        let inst = market::fixture_asym2();
        let f = EdgeSet::from_iter([(1, 0)]);
        let res = boost(&inst, &f).unwrap();
        match &res {
            BoostResult::Approx(alloc) => {
                assert_eq!(alloc.prices, vec![ratq(1, 2), ratq(1, 4)]);
                assert_eq!(alloc.flow.get(1, 0), ratq(1, 4));
                let phi = market::phi_pow_n(&inst, &alloc.prices, &alloc.flow);
                // Equality with Ψⁿ: the potential already sits at its floor.
                assert_eq!(phi, ratq(1, 2));
            }
            other => panic!("expected Approx, got {other:?}"),
        }
        assert_oracle_bound(&inst, &f, &res);
    }

    #[test]
    fn zero_ray_component_is_an_error() {
        // The ten-agent fixture is not strongly connected: its growth
        // direction stalls at zero on the first three components, which is
        // no usable price vector.
        let (inst, f) = market::fixture_revealed10();
        assert_eq!(boost(&inst, &f), Err(BoostError::NonpositivePrice(0)));
    }
}
