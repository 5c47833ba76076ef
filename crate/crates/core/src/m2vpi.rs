//! Exact solver for monotone two-variable inequality systems over
//! nonnegative variables: every row has at most one positive and at most one
//! negative coefficient. Such systems are closed under componentwise max, so
//! a feasible system bounded above has a pointwise maximal solution. The
//! solver finds it by policy iteration on the per-variable upper bounds,
//! with cycles resolved in closed form; unboundedness yields a certifying
//! ray and infeasibility a witnessing row set.

use num_traits::{One, Zero};
use thiserror::Error;

use crate::oracle::{LPRow, Sense};
use crate::rational::Rat;

/// One inequality `a·x_i + b·x_j ≤ rhs` with `a > 0` and `b < 0`; either
/// side may be absent, but not both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoVarRow {
    pub pos: Option<(usize, Rat)>,
    pub neg: Option<(usize, Rat)>,
    pub rhs: Rat,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum M2VPIError {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoVarSystem {
    t: usize,
    rows: Vec<TwoVarRow>,
}

impl TwoVarSystem {
    pub fn new(t: usize, rows: Vec<TwoVarRow>) -> Result<Self, M2VPIError> {
        for (idx, row) in rows.iter().enumerate() {
            let fail = |reason: &str| M2VPIError::MalformedRow { row: idx, reason: reason.into() };
            match (&row.pos, &row.neg) {
                (None, None) => return Err(fail("no coefficients")),
                (Some((i, a)), _) if *i >= t || *a <= Rat::zero() => {
                    return Err(fail("positive side must have index < t and coefficient > 0"));
                }
                (_, Some((j, b))) if *j >= t || *b >= Rat::zero() => {
                    return Err(fail("negative side must have index < t and coefficient < 0"));
                }
                (Some((i, _)), Some((j, _))) if i == j => {
                    return Err(fail("both sides on one variable"));
                }
                _ => {}
            }
        }
        Ok(TwoVarSystem { t, rows })
    }

    /// Converts general rows; each must collapse to at most one positive and
    /// one negative coefficient. `Ge` rows are negated, `Eq` rows split.
    /// Vacuous all-zero rows are dropped, so row indices may shift.
    pub fn from_lp_rows(t: usize, lp_rows: &[LPRow]) -> Result<Self, M2VPIError> {
        let mut rows = Vec::new();
        for (idx, lp) in lp_rows.iter().enumerate() {
            let mut halves: Vec<(Vec<Rat>, Rat)> = Vec::new();
            match lp.sense {
                Sense::Le => halves.push((lp.coeffs.clone(), lp.rhs.clone())),
                Sense::Ge => halves.push((lp.coeffs.iter().map(|c| -c.clone()).collect(), -lp.rhs.clone())),
                Sense::Eq => {
                    halves.push((lp.coeffs.clone(), lp.rhs.clone()));
                    halves.push((lp.coeffs.iter().map(|c| -c.clone()).collect(), -lp.rhs.clone()));
                }
            }
            for (coeffs, rhs) in halves {
                let mut pos = None;
                let mut neg = None;
                for (v, c) in coeffs.iter().enumerate() {
                    if c.is_zero() {
                        continue;
                    }
                    let slot = if *c > Rat::zero() { &mut pos } else { &mut neg };
                    if slot.is_some() {
                        return Err(M2VPIError::MalformedRow {
                            row: idx,
                            reason: "more than one coefficient of the same sign".into(),
                        });
                    }
                    *slot = Some((v, c.clone()));
                }
                if pos.is_none() && neg.is_none() {
                    if rhs < Rat::zero() {
                        return Err(M2VPIError::MalformedRow {
                            row: idx,
                            reason: "zero row with negative right-hand side".into(),
                        });
                    }
                    continue;
                }
                rows.push(TwoVarRow { pos, neg, rhs });
            }
        }
        TwoVarSystem::new(t, rows)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn rows(&self) -> &[TwoVarRow] {
        &self.rows
    }

    pub fn is_homogeneous(&self) -> bool {
        self.rows.iter().all(|r| r.rhs.is_zero())
    }

    fn homogenized(&self) -> TwoVarSystem {
        let rows = self
            .rows
            .iter()
            .map(|r| TwoVarRow { pos: r.pos.clone(), neg: r.neg.clone(), rhs: Rat::zero() })
            .collect();
        TwoVarSystem { t: self.t, rows }
    }

    pub fn satisfied_by(&self, x: &[Rat]) -> bool {
        self.rows.iter().all(|r| {
            let mut lhs = Rat::zero();
            if let Some((i, a)) = &r.pos {
                lhs += a * &x[*i];
            }
            if let Some((j, b)) = &r.neg {
                lhs += b * &x[*j];
            }
            lhs <= r.rhs
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum M2VPIOutcome {
    /// Feasible and dominates every feasible point componentwise.
    PointwiseMax(Vec<Rat>),
    /// Rows that cannot hold together with `x ≥ 0`.
    Infeasible { witness: Vec<usize> },
    /// Nonzero, nonnegative, satisfies the homogenized system.
    Unbounded { ray: Vec<Rat> },
}

/// Extended value inside the solver; never leaves the module.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Ext {
    Fin(Rat),
    Inf,
}

impl Ext {
    fn below(&self, other: &Ext) -> bool {
        match (self, other) {
            (Ext::Fin(a), Ext::Fin(b)) => a < b,
            (Ext::Fin(_), Ext::Inf) => true,
            (Ext::Inf, _) => false,
        }
    }
}

/// Upper-bound view of a row with `pos = (i, a)`: `x_i ≤ (rhs - b·x_j)/a`.
fn apply(row: &TwoVarRow, v: &Ext) -> Ext {
    let (_, a) = row.pos.as_ref().unwrap();
    match (&row.neg, v) {
        (None, _) => Ext::Fin(&row.rhs / a),
        (Some(_), Ext::Inf) => Ext::Inf,
        (Some((_, b)), Ext::Fin(x)) => Ext::Fin((&row.rhs - b * x) / a),
    }
}

struct Engine<'a> {
    sys: &'a TwoVarSystem,
    /// Rows bounding variable `i` from above.
    upper_of: Vec<Vec<usize>>,
    /// Rows with only a negative side; pure lower bounds.
    filters: Vec<usize>,
}

/// Converged values with the adopted row per variable, or the rows of an
/// unsatisfiable cycle.
type PolicyFix = Result<(Vec<Ext>, Vec<Option<usize>>), Vec<usize>>;

impl<'a> Engine<'a> {
    fn new(sys: &'a TwoVarSystem) -> Self {
        let mut upper_of = vec![Vec::new(); sys.t];
        let mut filters = Vec::new();
        for (idx, row) in sys.rows.iter().enumerate() {
            match &row.pos {
                Some((i, _)) => upper_of[*i].push(idx),
                None => filters.push(idx),
            }
        }
        Engine { sys, upper_of, filters }
    }

    fn next_var(&self, row: usize) -> Option<usize> {
        self.sys.rows[row].neg.as_ref().map(|(j, _)| *j)
    }

    /// Greatest fixed point of the chosen one-row-per-variable bounds.
    /// Chains end at constant rows or unbounded variables; cycles compose to
    /// `x ≤ g·x + beta` and resolve in closed form. `Err` carries the rows
    /// of a cycle that no real vector satisfies.
    fn evaluate(&self, policy: &[Option<usize>]) -> Result<Vec<Ext>, Vec<usize>> {
        let t = self.sys.t;
        let mut val: Vec<Option<Ext>> = vec![None; t];
        for start in 0..t {
            if val[start].is_some() {
                continue;
            }
            let mut path: Vec<usize> = Vec::new();
            let mut cur = start;
            let base: Ext = loop {
                if let Some(v) = &val[cur] {
                    break v.clone();
                }
                if let Some(p) = path.iter().position(|&x| x == cur) {
                    let cycle: Vec<usize> = path[p..].to_vec();
                    self.resolve_cycle(policy, &cycle, &mut val)?;
                    path.truncate(p);
                    break val[cur].clone().unwrap();
                }
                match policy[cur] {
                    None => {
                        val[cur] = Some(Ext::Inf);
                        break Ext::Inf;
                    }
                    Some(r) => match self.next_var(r) {
                        None => {
                            let v = apply(&self.sys.rows[r], &Ext::Inf);
                            val[cur] = Some(v.clone());
                            break v;
                        }
                        Some(j) => {
                            path.push(cur);
                            cur = j;
                        }
                    },
                }
            };
            let mut v = base;
            for &node in path.iter().rev() {
                let r = policy[node].expect("interior chain nodes carry a row");
                v = apply(&self.sys.rows[r], &v);
                val[node] = Some(v.clone());
            }
        }
        Ok(val.into_iter().map(|v| v.unwrap()).collect())
    }

    fn resolve_cycle(
        &self,
        policy: &[Option<usize>],
        cycle: &[usize],
        val: &mut [Option<Ext>],
    ) -> Result<(), Vec<usize>> {
        let len = cycle.len();
        for offset in 0..len {
            // Compose the bounds once around, starting at this node:
            // x ≤ beta + g·x.
            let mut g = Rat::one();
            let mut beta = Rat::zero();
            for step in 0..len {
                let node = cycle[(offset + step) % len];
                let r = policy[node].unwrap();
                let row = &self.sys.rows[r];
                let (_, a) = row.pos.as_ref().unwrap();
                let (_, b) = row.neg.as_ref().unwrap();
                beta += &g * &row.rhs / a;
                g *= -b / a;
            }
            let one = Rat::one();
            let v = if g < one {
                Ext::Fin(&beta / (&one - &g))
            } else if g == one && beta < Rat::zero() {
                return Err(cycle.iter().map(|&n| policy[n].unwrap()).collect());
            } else {
                // Satisfiable at every sufficiently large value: no bound.
                Ext::Inf
            };
            val[cycle[offset]] = Some(v);
        }
        Ok(())
    }

    /// Rows walked when pinning `start` from above; with `x ≥ 0` they
    /// witness an empty region whenever the pinned value is negative.
    fn chain_rows(&self, policy: &[Option<usize>], start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.sys.t];
        let mut out = Vec::new();
        let mut cur = start;
        while !seen[cur] {
            seen[cur] = true;
            match policy[cur] {
                None => break,
                Some(r) => {
                    out.push(r);
                    match self.next_var(r) {
                        None => break,
                        Some(j) => cur = j,
                    }
                }
            }
        }
        out
    }

    fn fixed_point(&self) -> PolicyFix {
        let t = self.sys.t;
        // Start from a full policy: a lone row is never an improvement over
        // +inf when its chain is still +inf, so cycles must be adopted
        // up front and resolved in closed form.
        let mut policy: Vec<Option<usize>> =
            (0..t).map(|i| self.upper_of[i].first().copied()).collect();
        let mut value = self.evaluate(&policy)?;
        loop {
            let mut changed = false;
            for i in 0..t {
                let mut best: Option<(Ext, usize)> = None;
                for &r in &self.upper_of[i] {
                    let cand = apply(&self.sys.rows[r], &self.chain_value(&value, r));
                    if best.as_ref().is_none_or(|(bv, _)| cand.below(bv)) {
                        best = Some((cand, r));
                    }
                }
                if let Some((bv, br)) = best {
                    if bv.below(&value[i]) {
                        policy[i] = Some(br);
                        changed = true;
                    }
                }
            }
            if !changed {
                return Ok((value, policy));
            }
            let next = self.evaluate(&policy)?;
            #[cfg(debug_assertions)]
            for (n, v) in next.iter().zip(&value) {
                assert!(!v.below(n), "policy value rose");
            }
            value = next;
        }
    }

    fn chain_value(&self, value: &[Ext], row: usize) -> Ext {
        match self.next_var(row) {
            None => Ext::Inf,
            Some(j) => value[j].clone(),
        }
    }
}

/// Greatest feasible point under `x ≥ 0`, or a witness of infeasibility, or
/// a ray certifying unboundedness.
pub fn solve_max(sys: &TwoVarSystem) -> M2VPIOutcome {
    let engine = Engine::new(sys);
    let (value, policy) = match engine.fixed_point() {
        Ok(v) => v,
        Err(witness) => return M2VPIOutcome::Infeasible { witness },
    };
    for (i, v) in value.iter().enumerate() {
        if let Ext::Fin(x) = v {
            if *x < Rat::zero() {
                return M2VPIOutcome::Infeasible { witness: engine.chain_rows(&policy, i) };
            }
        }
    }
    for &f in &engine.filters {
        let row = &sys.rows[f];
        let (j, b) = row.neg.as_ref().unwrap();
        if let Ext::Fin(x) = &value[*j] {
            if b * x > row.rhs {
                let mut witness = vec![f];
                witness.extend(engine.chain_rows(&policy, *j));
                return M2VPIOutcome::Infeasible { witness };
            }
        }
    }
    if value.contains(&Ext::Inf) {
        let ray = solve_ray(&sys.homogenized()).expect("an unbounded direction must exist");
        return M2VPIOutcome::Unbounded { ray };
    }
    let x = value
        .into_iter()
        .map(|v| match v {
            Ext::Fin(x) => x,
            Ext::Inf => unreachable!(),
        })
        .collect();
    M2VPIOutcome::PointwiseMax(x)
}

/// For a homogeneous system: the pointwise max under the extra box `x ≤ 1`.
/// Scale invariance makes this the normalized maximal ray; `None` when only
/// the zero vector remains.
pub fn solve_ray(sys: &TwoVarSystem) -> Option<Vec<Rat>> {
    assert!(sys.is_homogeneous(), "ray extraction needs zero right-hand sides");
    let mut rows = sys.rows.clone();
    for i in 0..sys.t {
        rows.push(TwoVarRow { pos: Some((i, Rat::one())), neg: None, rhs: Rat::one() });
    }
    let boxed = TwoVarSystem { t: sys.t, rows };
    let engine = Engine::new(&boxed);
    let (value, _) = engine.fixed_point().expect("zero satisfies every homogeneous row");
    let x: Vec<Rat> = value
        .into_iter()
        .map(|v| match v {
            Ext::Fin(x) => x,
            Ext::Inf => unreachable!("the box bounds every variable"),
        })
        .collect();
    debug_assert!(x.iter().all(|v| *v >= Rat::zero()));
    debug_assert!(sys.satisfied_by(&x));
    if x.iter().all(|v| v.is_zero()) {
        None
    } else {
        Some(x)
    }
}
