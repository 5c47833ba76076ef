//! Independent verification tools: a small exact LP solver and checkers for
//! equilibria and balanced flows.
//!
//! The LP solver is a dense two-phase simplex over rationals with Bland's
//! anti-cycling rule. It is deliberately simple and capped at small sizes;
//! its job is to double-check the combinatorial machinery, so it must share
//! no code with it.

use num_traits::Zero;
use thiserror::Error;

use crate::flow;
use crate::market::{Agent, EdgeSet, Good, MarketInstance, MoneyFlow};
use crate::rational::Rat;

pub const MAX_VARS: usize = 40;
pub const MAX_ROWS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct LPRow {
    pub coeffs: Vec<Rat>,
    pub sense: Sense,
    pub rhs: Rat,
}

/// maximize `objective . x` subject to the rows and per-variable lower
/// bounds (`None` = free variable).
#[derive(Debug, Clone)]
pub struct LPProblem {
    pub objective: Vec<Rat>,
    pub rows: Vec<LPRow>,
    pub lower: Vec<Option<Rat>>,
}

impl LPProblem {
    /// Problem with all variables bounded below by zero.
    pub fn nonneg(objective: Vec<Rat>, rows: Vec<LPRow>) -> Self {
        let lower = vec![Some(Rat::zero()); objective.len()];
        LPProblem { objective, rows, lower }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LPOutcome {
    Optimal { x: Vec<Rat>, value: Rat },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("problem size {vars} vars x {rows} rows exceeds the oracle caps")]
    CapExceeded { vars: usize, rows: usize },
}

struct Tableau {
    rows: Vec<Vec<Rat>>,
    rhs: Vec<Rat>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn pivot(&mut self, obj: &mut (Vec<Rat>, Rat), r: usize, e: usize) {
        let piv = self.rows[r][e].clone();
        debug_assert!(!piv.is_zero());
        for v in self.rows[r].iter_mut() {
            *v /= &piv;
        }
        self.rhs[r] /= &piv;
        for r2 in 0..self.rows.len() {
            if r2 != r && !self.rows[r2][e].is_zero() {
                let factor = self.rows[r2][e].clone();
                for j in 0..self.ncols {
                    let d = &self.rows[r][j] * &factor;
                    self.rows[r2][j] -= d;
                }
                let d = &self.rhs[r] * &factor;
                self.rhs[r2] -= d;
            }
        }
        if !obj.0[e].is_zero() {
            let factor = obj.0[e].clone();
            for j in 0..self.ncols {
                let d = &self.rows[r][j] * &factor;
                obj.0[j] -= d;
            }
            let d = &self.rhs[r] * &factor;
            obj.1 += d;
        }
        self.basis[r] = e;
    }

    /// Reduced costs and objective value for the current basis.
    fn price_out(&self, costs: &[Rat]) -> (Vec<Rat>, Rat) {
        let mut row = costs.to_vec();
        let mut val = Rat::zero();
        for (r, &b) in self.basis.iter().enumerate() {
            if costs[b].is_zero() {
                continue;
            }
            let c = costs[b].clone();
            for j in 0..self.ncols {
                let d = &self.rows[r][j] * &c;
                row[j] -= d;
            }
            val += &self.rhs[r] * &c;
        }
        (row, val)
    }

    /// Simplex iterations with Bland's rule, entering restricted to columns
    /// `< allowed`. Returns false on unboundedness.
    fn run(&mut self, obj: &mut (Vec<Rat>, Rat), allowed: usize) -> bool {
        loop {
            let entering = (0..allowed).find(|&j| obj.0[j] > Rat::zero());
            let e = match entering {
                None => return true,
                Some(e) => e,
            };
            let mut best: Option<(Rat, usize)> = None;
            for r in 0..self.rows.len() {
                if self.rows[r][e] > Rat::zero() {
                    let ratio = &self.rhs[r] / &self.rows[r][e];
                    best = match best {
                        None => Some((ratio, r)),
                        Some((bratio, brow)) => {
                            if ratio < bratio
                                || (ratio == bratio && self.basis[r] < self.basis[brow])
                            {
                                Some((ratio, r))
                            } else {
                                Some((bratio, brow))
                            }
                        }
                    };
                }
            }
            match best {
                None => return false,
                Some((_, r)) => self.pivot(obj, r, e),
            }
        }
    }
}

/// Exact two-phase simplex. Maximizes over the rows and lower bounds.
pub fn lp_solve(problem: &LPProblem) -> Result<LPOutcome, OracleError> {
    let nv = problem.objective.len();
    if nv > MAX_VARS || problem.rows.len() > MAX_ROWS {
        return Err(OracleError::CapExceeded { vars: nv, rows: problem.rows.len() });
    }
    for row in &problem.rows {
        assert_eq!(row.coeffs.len(), nv, "row width mismatch");
    }
    assert_eq!(problem.lower.len(), nv);

    // Shift bounded variables to y >= 0; split free variables into y+ - y-.
    // column_of[j] = (positive column, optional negated column).
    let mut column_of = Vec::with_capacity(nv);
    let mut ny = 0usize;
    for low in &problem.lower {
        match low {
            Some(_) => {
                column_of.push((ny, None));
                ny += 1;
            }
            None => {
                column_of.push((ny, Some(ny + 1)));
                ny += 2;
            }
        }
    }
    let spread = |coeffs: &[Rat], out: &mut Vec<Rat>| {
        for (j, c) in coeffs.iter().enumerate() {
            let (pc, nc) = &column_of[j];
            out[*pc] += c;
            if let Some(nc) = nc {
                out[*nc] -= c;
            }
        }
    };
    // Constant shift of the rhs / objective from the lower bounds.
    let shift_of = |coeffs: &[Rat]| -> Rat {
        let mut s = Rat::zero();
        for (j, c) in coeffs.iter().enumerate() {
            if let Some(l) = &problem.lower[j] {
                s += c * l;
            }
        }
        s
    };

    let m = problem.rows.len();
    let mut senses = Vec::with_capacity(m);
    let mut body = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for row in &problem.rows {
        let mut out = vec![Rat::zero(); ny];
        spread(&row.coeffs, &mut out);
        let mut b = &row.rhs - shift_of(&row.coeffs);
        let mut sense = row.sense;
        if b < Rat::zero() {
            for v in out.iter_mut() {
                *v = -v.clone();
            }
            b = -b;
            sense = match sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
        senses.push(sense);
        body.push(out);
        rhs.push(b);
    }

    // Columns: y variables, then slacks/surpluses, then artificials.
    let n_slack = senses.iter().filter(|s| !matches!(s, Sense::Eq)).count();
    let n_art = senses.iter().filter(|s| !matches!(s, Sense::Le)).count();
    let ncols = ny + n_slack + n_art;
    let art_start = ny + n_slack;
    let mut tab = Tableau {
        rows: Vec::with_capacity(m),
        rhs,
        basis: Vec::with_capacity(m),
        ncols,
    };
    let mut next_slack = ny;
    let mut next_art = art_start;
    for (r, out) in body.into_iter().enumerate() {
        let mut full = vec![Rat::zero(); ncols];
        full[..ny].clone_from_slice(&out);
        match senses[r] {
            Sense::Le => {
                full[next_slack] = Rat::from_integer(1.into());
                tab.basis.push(next_slack);
                next_slack += 1;
            }
            Sense::Ge => {
                full[next_slack] = Rat::from_integer((-1i64).into());
                next_slack += 1;
                full[next_art] = Rat::from_integer(1.into());
                tab.basis.push(next_art);
                next_art += 1;
            }
            Sense::Eq => {
                full[next_art] = Rat::from_integer(1.into());
                tab.basis.push(next_art);
                next_art += 1;
            }
        }
        tab.rows.push(full);
    }

    // Phase 1: drive the artificial variables to zero.
    if n_art > 0 {
        let mut costs = vec![Rat::zero(); ncols];
        for c in costs.iter_mut().skip(art_start) {
            *c = Rat::from_integer((-1i64).into());
        }
        let mut obj = tab.price_out(&costs);
        let ok = tab.run(&mut obj, art_start);
        assert!(ok, "phase 1 cannot be unbounded");
        if !obj.1.is_zero() {
            return Ok(LPOutcome::Infeasible);
        }
        // Pivot leftover artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < tab.rows.len() {
            if tab.basis[r] >= art_start {
                debug_assert!(tab.rhs[r].is_zero());
                match (0..art_start).find(|&j| !tab.rows[r][j].is_zero()) {
                    Some(j) => {
                        let mut dummy = (vec![Rat::zero(); ncols], Rat::zero());
                        tab.pivot(&mut dummy, r, j);
                        r += 1;
                    }
                    None => {
                        tab.rows.remove(r);
                        tab.rhs.remove(r);
                        tab.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    // Phase 2: the real objective.
    let mut costs = vec![Rat::zero(); ncols];
    spread(&problem.objective, &mut costs);
    let mut obj = tab.price_out(&costs);
    if !tab.run(&mut obj, art_start) {
        return Ok(LPOutcome::Unbounded);
    }

    let mut y = vec![Rat::zero(); ncols];
    for (r, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs[r].clone();
    }
    let mut x = Vec::with_capacity(nv);
    for (j, (pc, nc)) in column_of.iter().enumerate() {
        let mut v = y[*pc].clone();
        if let Some(nc) = nc {
            v -= &y[*nc];
        }
        if let Some(l) = &problem.lower[j] {
            v += l;
        }
        x.push(v);
    }
    let value = obj.1 + shift_of(&problem.objective);
    Ok(LPOutcome::Optimal { x, value })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PsiOutcome {
    /// The potential to the n-th power at the pointwise max of the price
    /// feasibility system for `F`. Zero is possible.
    Finite(Rat),
    /// The price system is unbounded above: prices inside some closed group
    /// of components can grow forever, driving the potential to zero.
    Zero,
}

/// Reference value of the revealed-set potential, via the simplex solver.
/// Maximizes the coordinate sum of the price system, certifies that this
/// optimum is in fact the pointwise max by re-maximizing every coordinate,
/// then prices the whole market and measures the potential of the canonical
/// component flow.
pub fn psi_exact(instance: &MarketInstance, f_edges: &EdgeSet) -> Result<PsiOutcome, OracleError> {
    let dec = crate::lpbuild::decompose(instance, f_edges)
        .expect("the revealed set must admit consistent price multipliers");
    let sys = crate::lpbuild::build_pf(instance, &dec);
    let lp = sys.lp_problem(false);
    let x = match lp_solve(&lp)? {
        LPOutcome::Unbounded => return Ok(PsiOutcome::Zero),
        LPOutcome::Infeasible => unreachable!("the zero price vector is feasible"),
        LPOutcome::Optimal { x, .. } => x,
    };
    for i in 0..sys.t {
        let mut obj = vec![Rat::zero(); sys.t];
        obj[i] = Rat::from_integer(1.into());
        let per = LPProblem { objective: obj, rows: lp.rows.clone(), lower: lp.lower.clone() };
        match lp_solve(&per)? {
            LPOutcome::Optimal { value, .. } => {
                assert_eq!(value, x[i], "coordinate {i} admits a larger value than the sum optimum");
            }
            other => panic!("coordinate re-maximization failed: {other:?}"),
        }
    }
    for v in &x {
        assert!(*v > Rat::zero(), "pointwise max pins a component price at zero");
    }
    let prices = crate::lpbuild::extend_prices(&dec, &x);
    let f = crate::lpbuild::component_flow(&dec, &prices);
    Ok(PsiOutcome::Finite(crate::market::phi_pow_n(instance, &prices, &f)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EquilibriumViolation {
    NonpositivePrice(Good),
    FlowOffEdge(Agent, Good),
    NegativeFlow(Agent, Good),
    FlowNotMbb(Agent, Good),
    GoodNotCleared(Good),
    BudgetViolated(Agent),
}

/// Exact equilibrium check: positive prices, nonnegative flow on MBB edges
/// only, every good exactly sold, every budget exactly spent.
pub fn check_equilibrium(
    instance: &MarketInstance,
    prices: &[Rat],
    flow: &MoneyFlow,
) -> Vec<EquilibriumViolation> {
    let n = instance.n();
    assert_eq!(prices.len(), n);
    let mut out = Vec::new();
    for (j, p) in prices.iter().enumerate() {
        if *p <= Rat::zero() {
            out.push(EquilibriumViolation::NonpositivePrice(j));
        }
    }
    if !out.is_empty() {
        return out;
    }
    let mbb = crate::market::mbb(instance, prices);
    for (i, j, v) in flow.iter() {
        if !instance.has_edge(i, j) {
            out.push(EquilibriumViolation::FlowOffEdge(i, j));
            continue;
        }
        if *v < Rat::zero() {
            out.push(EquilibriumViolation::NegativeFlow(i, j));
        }
        if !mbb.edges.contains(i, j) {
            out.push(EquilibriumViolation::FlowNotMbb(i, j));
        }
    }
    let s = crate::market::surplus(instance, prices, flow);
    for i in 0..n {
        if !s.agent[i].is_zero() {
            out.push(EquilibriumViolation::BudgetViolated(i));
        }
    }
    for j in 0..n {
        if !s.good[j].is_zero() {
            out.push(EquilibriumViolation::GoodNotCleared(j));
        }
    }
    out
}

/// True iff `f` is a balanced max flow of the spending network at `(p, F)`:
/// no agent with larger surplus has a source-free residual path to a
/// spending agent with smaller surplus.
pub fn check_balanced(
    instance: &MarketInstance,
    f_edges: &EdgeSet,
    prices: &[Rat],
    f: &MoneyFlow,
) -> bool {
    let mbb = crate::market::mbb(instance, prices);
    flow::check_balanced_flow(instance, prices, &mbb.edges, f_edges, f).is_ok()
}
