//! Two-variable relaxation of a budget system `M p̄ ≤ γ`.
//!
//! The budget matrices produced by `lpbuild` have nonpositive off-diagonal
//! entries and nonnegative column sums. Gaussian elimination on such a matrix
//! only ever adds nonnegative multiples of rows to other rows, so eliminated
//! rows remain valid one-sided bounds for the original polyhedron. Running
//! the elimination on suitably permuted row blocks yields, for every negative
//! entry `M_ij`, a valid lower-bound row coupling just `p̄_i` and `p̄_j`, and
//! for full-rank blocks a plain upper bound on `p̄_i`. The resulting system
//! has at most one positive and one negative coefficient per row, contains
//! the original polyhedron, and is contained in its `B²`-fold blowup where
//! `B = sum(γ)/min(γ)`.

use std::collections::BTreeSet;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::oracle::{LPRow, Sense};
use crate::rational::Rat;

/// Matrix with nonpositive off-diagonal entries and nonnegative column sums.
/// Need not be square; diagonal means positions `(i, i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZMatrix {
    entries: Vec<Vec<Rat>>,
    cols: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ZMatrixError {
    #[error("row {0} does not match the width of row 0")]
    RaggedRow(usize),
    #[error("positive off-diagonal entry at ({0}, {1})")]
    PositiveOffDiagonal(usize, usize),
    #[error("column {0} has negative sum")]
    NegativeColumnSum(usize),
}

impl ZMatrix {
    pub fn new(entries: Vec<Vec<Rat>>) -> Result<Self, ZMatrixError> {
        let cols = entries.first().map_or(0, |r| r.len());
        for (i, row) in entries.iter().enumerate() {
            if row.len() != cols {
                return Err(ZMatrixError::RaggedRow(i));
            }
            for (j, v) in row.iter().enumerate() {
                if i != j && *v > Rat::zero() {
                    return Err(ZMatrixError::PositiveOffDiagonal(i, j));
                }
            }
        }
        for j in 0..cols {
            let sum: Rat = entries.iter().map(|r| &r[j]).fold(Rat::zero(), |a, b| a + b);
            if sum < Rat::zero() {
                return Err(ZMatrixError::NegativeColumnSum(j));
            }
        }
        Ok(ZMatrix { entries, cols })
    }

    pub fn nrows(&self) -> usize {
        self.entries.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[Vec<Rat>] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> &Rat {
        &self.entries[i][j]
    }
}

/// `tprime = y * t` with `tprime` upper triangular.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EliminationResult {
    /// Diagonal entries are 0 or 1; off-diagonal entries are nonpositive.
    pub tprime: Vec<Vec<Rat>>,
    /// Entrywise nonnegative row-operation matrix.
    pub y: Vec<Vec<Rat>>,
}

/// Gaussian elimination without pivot search: position `(k, k)` is either
/// scaled to 1 and cleared below, or it is zero, in which case the whole
/// column below is already zero (forced by the nonnegative column sums).
/// Only nonnegative multiples of rows are ever added, so `y` stays
/// nonnegative and `y * rhs` bounds transform soundly.
pub fn gauss(t: &ZMatrix) -> EliminationResult {
    let l = t.nrows();
    let tc = t.ncols();
    let mut a = t.entries().to_vec();
    let mut y: Vec<Vec<Rat>> = (0..l)
        .map(|i| (0..l).map(|j| if i == j { Rat::one() } else { Rat::zero() }).collect())
        .collect();
    let steps = l.min(tc);
    for k in 0..steps {
        if a[k][k].is_zero() {
            for row in a.iter().skip(k + 1) {
                debug_assert!(row[k].is_zero(), "zero pivot with live column");
            }
        } else {
            let piv = a[k][k].clone();
            for v in &mut a[k] {
                *v /= &piv;
            }
            for v in &mut y[k] {
                *v /= &piv;
            }
            for i in k + 1..l {
                if a[i][k].is_zero() {
                    continue;
                }
                // Off-diagonal, hence negative: the row update adds -f >= 0
                // times row k.
                let f = a[i][k].clone();
                debug_assert!(f < Rat::zero());
                for j in 0..tc {
                    let d = &f * &a[k][j];
                    a[i][j] -= d;
                }
                for j in 0..l {
                    let d = &f * &y[k][j];
                    y[i][j] -= d;
                }
            }
        }
        #[cfg(debug_assertions)]
        step_invariants(&a, &y, k + 1);
    }

    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i == j {
                assert!(v.is_zero() || v.is_one(), "diagonal entries must end 0 or 1");
            } else {
                assert!(*v <= Rat::zero(), "off-diagonal entries must end nonpositive");
                assert!(i < j || v.is_zero(), "result must be upper triangular");
            }
        }
    }
    for k in 0..steps {
        if (k + 1..l).any(|i| *t.entry(i, k) < Rat::zero()) {
            assert!(a[k][k].is_one(), "pivot fed from below must end at 1");
        }
    }
    #[cfg(debug_assertions)]
    for i in 0..l {
        for j in 0..tc {
            let prod: Rat = (0..l).map(|h| &y[i][h] * t.entry(h, j)).fold(Rat::zero(), |s, v| s + v);
            assert_eq!(prod, a[i][j], "y does not reproduce the elimination");
        }
    }
    EliminationResult { tprime: a, y }
}

#[cfg(debug_assertions)]
fn step_invariants(a: &[Vec<Rat>], y: &[Vec<Rat>], k: usize) {
    let tc = a.first().map_or(0, |r| r.len());
    for row in y {
        for v in row {
            assert!(*v >= Rat::zero(), "row-operation matrix went negative");
        }
    }
    for j in k..tc {
        let sum: Rat = a.iter().skip(k).map(|r| &r[j]).fold(Rat::zero(), |s, v| s + v);
        assert!(sum >= Rat::zero(), "partial column sum went negative");
    }
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                assert!(*v <= Rat::zero(), "off-diagonal went positive");
            }
        }
        if i < k && i < tc {
            assert!(row[i] >= Rat::zero(), "processed diagonal went negative");
        }
    }
}

/// Arc structure and row partition of a square budget matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    /// Arc `(i, j)` for every negative entry `M_ij`.
    pub h: BTreeSet<(usize, usize)>,
    /// Vertices reachable from `i` along `h`, ascending, including `i`.
    pub d_sets: Vec<Vec<usize>>,
    /// Rows with at most one outgoing arc; already two-variable.
    pub t1: Vec<usize>,
    /// Branching rows whose reachable row block has full rank.
    pub t2: Vec<usize>,
    /// Branching rows whose reachable row block is rank deficient.
    pub t3: Vec<usize>,
}

/// Requires a square matrix with strictly positive diagonal.
pub fn classify(m: &ZMatrix) -> Classification {
    let t = m.ncols();
    assert_eq!(m.nrows(), t, "square matrix required");
    for i in 0..t {
        assert!(*m.entry(i, i) > Rat::zero(), "positive diagonal required");
    }
    let mut h = BTreeSet::new();
    for i in 0..t {
        for j in 0..t {
            if *m.entry(i, j) < Rat::zero() {
                h.insert((i, j));
            }
        }
    }
    let mut d_sets = Vec::with_capacity(t);
    for i in 0..t {
        let mut seen = vec![false; t];
        seen[i] = true;
        let mut stack = vec![i];
        while let Some(v) = stack.pop() {
            for w in 0..t {
                if !seen[w] && h.contains(&(v, w)) {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        d_sets.push((0..t).filter(|&w| seen[w]).collect::<Vec<_>>());
    }
    let mut t1 = Vec::new();
    let mut t2 = Vec::new();
    let mut t3 = Vec::new();
    for i in 0..t {
        let degree = h.range((i, 0)..(i + 1, 0)).count();
        if degree <= 1 {
            t1.push(i);
        } else {
            let block: Vec<Vec<Rat>> = d_sets[i].iter().map(|&r| m.entries()[r].clone()).collect();
            if rank(block) == d_sets[i].len() {
                t2.push(i);
            } else {
                t3.push(i);
            }
        }
    }
    Classification { h, d_sets, t1, t2, t3 }
}

fn rank(mut rows: Vec<Vec<Rat>>) -> usize {
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..ncols {
        if r == rows.len() {
            break;
        }
        let Some(p) = (r..rows.len()).find(|&i| !rows[i][c].is_zero()) else {
            continue;
        };
        rows.swap(r, p);
        let piv = rows[r][c].clone();
        for i in r + 1..rows.len() {
            if rows[i][c].is_zero() {
                continue;
            }
            let f = &rows[i][c] / &piv;
            for cc in c..ncols {
                let d = &f * &rows[r][cc];
                rows[i][cc] -= d;
            }
        }
        r += 1;
    }
    r
}

/// Position-to-vertex ordering for the row block of `i` used before
/// elimination: `i` sits at position `d-1`, `j` at `d-2`, and every other
/// reachable vertex below one of its in-neighbors; vertices outside the
/// reachable set follow in ascending order. Built by search from `i` along
/// out-arcs, visiting neighbors in ascending order, assigning positions
/// downward in discovery order.
pub fn build_sigma(i: usize, j: usize, d_set: &[usize], h: &BTreeSet<(usize, usize)>, t: usize) -> Vec<usize> {
    assert!(h.contains(&(i, j)), "ordering needs the arc ({i}, {j})");
    let d = d_set.len();
    let mut seen = vec![false; t];
    seen[i] = true;
    let mut order = vec![i];
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for &w in d_set {
            if !seen[w] && h.contains(&(v, w)) {
                seen[w] = true;
                order.push(w);
            }
        }
    }
    assert_eq!(order.len(), d, "reachable set not closed under its arcs");

    let mut sigma = vec![usize::MAX; t];
    sigma[d - 1] = i;
    sigma[d - 2] = j;
    let mut pos = d - 2;
    for &v in &order {
        if v != i && v != j {
            pos -= 1;
            sigma[pos] = v;
        }
    }
    assert_eq!(pos, 0, "every reachable vertex gets a position");
    let mut tail = d;
    for v in 0..t {
        if !seen[v] {
            sigma[tail] = v;
            tail += 1;
        }
    }

    let mut position = vec![usize::MAX; t];
    for (p, &v) in sigma.iter().enumerate() {
        position[v] = p;
    }
    for &v in d_set {
        if v == i {
            continue;
        }
        let ok = d_set
            .iter()
            .any(|&w| h.contains(&(w, v)) && position[v] < position[w] && position[w] < d);
        assert!(ok, "vertex {v} has no in-neighbor placed above it");
    }
    sigma
}

/// Verbatim budget row `coeffs · p̄ ≤ rhs` for a vertex with at most one arc.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct T1Row {
    pub i: usize,
    pub coeffs: Vec<Rat>,
    pub rhs: Rat,
}

/// Upper bound `p̄_i ≤ bound` for a full-rank branching vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KappaRow {
    pub i: usize,
    pub bound: Rat,
}

/// Lower-bound row `coeffs · p̄ ≥ rhs` with `coeffs_j = 1`, `coeffs_i ≤ 0`,
/// zeros elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VRow {
    pub i: usize,
    pub j: usize,
    pub coeffs: Vec<Rat>,
    pub rhs: Rat,
}

/// The relaxed system: all rows below plus `p̄ ≥ 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApproxSystem {
    /// Number of variables (columns of the input matrix).
    pub t: usize,
    pub t1_rows: Vec<T1Row>,
    pub kappa_rows: Vec<KappaRow>,
    pub v_rows: Vec<VRow>,
}

impl ApproxSystem {
    pub fn row_count(&self) -> usize {
        self.t1_rows.len() + self.kappa_rows.len() + self.v_rows.len()
    }

    /// All rows in oracle-LP form, in stable order.
    pub fn lp_rows(&self) -> Vec<LPRow> {
        let mut rows = Vec::with_capacity(self.row_count());
        for r in &self.t1_rows {
            rows.push(LPRow { coeffs: r.coeffs.clone(), sense: Sense::Le, rhs: r.rhs.clone() });
        }
        for r in &self.kappa_rows {
            let mut coeffs = vec![Rat::zero(); self.t];
            coeffs[r.i] = Rat::one();
            rows.push(LPRow { coeffs, sense: Sense::Le, rhs: r.bound.clone() });
        }
        for r in &self.v_rows {
            rows.push(LPRow { coeffs: r.coeffs.clone(), sense: Sense::Ge, rhs: r.rhs.clone() });
        }
        rows
    }
}

/// Builds the two-variable relaxation of `{m p̄ ≤ gamma, p̄ ≥ 0}`. `lambda`
/// must be the complementary sums `lambda_i = sum(gamma) - gamma_i`; rows
/// then satisfy `m_i p̄ ≥ -lambda_i` over the polyhedron, which is what makes
/// eliminated rows valid lower bounds.
///
/// Degenerate shapes are reduced first: rows beyond the column count bind
/// nothing over nonnegative vectors, columns beyond the row count are zero,
/// and a zero diagonal entry means its row binds nothing and its column is
/// zero. The reduction leaves a square matrix with positive diagonal; rows
/// are emitted in the original index space.
pub fn approx(m: &ZMatrix, gamma: &[Rat], lambda: &[Rat]) -> ApproxSystem {
    let k = m.nrows();
    let t = m.ncols();
    assert_eq!(gamma.len(), k);
    assert_eq!(lambda.len(), k);
    for g in gamma {
        assert!(*g > Rat::zero(), "positive right-hand sides required");
    }
    #[cfg(debug_assertions)]
    {
        let total: Rat = gamma.iter().fold(Rat::zero(), |a, b| a + b);
        for i in 0..k {
            assert_eq!(lambda[i], &total - &gamma[i], "lambda must complement gamma");
        }
    }

    let s = k.min(t);
    for j in k..t {
        for row in m.entries() {
            assert!(row[j].is_zero(), "column {j} outside the square part must be zero");
        }
    }
    let keep: Vec<usize> = (0..s).filter(|&i| !m.entry(i, i).is_zero()).collect();
    for &i in &keep {
        assert!(*m.entry(i, i) > Rat::zero());
    }
    for i in 0..s {
        if m.entry(i, i).is_zero() {
            for &r in &keep {
                assert!(m.entry(r, i).is_zero(), "zero diagonal with live column {i}");
            }
        }
    }
    let red_entries: Vec<Vec<Rat>> = keep
        .iter()
        .map(|&r| keep.iter().map(|&c| m.entry(r, c).clone()).collect())
        .collect();
    let red = ZMatrix::new(red_entries).expect("reduction preserves the sign pattern");
    let sr = keep.len();
    let red_gamma: Vec<Rat> = keep.iter().map(|&r| gamma[r].clone()).collect();
    let red_total: Rat = red_gamma.iter().fold(Rat::zero(), |a, b| a + b);
    let red_lambda: Vec<Rat> = red_gamma.iter().map(|g| &red_total - g).collect();

    let cls = classify(&red);
    let mut t1_rows = Vec::new();
    let mut kappa_rows = Vec::new();
    let mut v_rows = Vec::new();
    let expand = |v: &[Rat]| -> Vec<Rat> {
        let mut full = vec![Rat::zero(); t];
        for (idx, &orig) in keep.iter().enumerate() {
            full[orig] = v[idx].clone();
        }
        full
    };

    for &i in &cls.t1 {
        t1_rows.push(T1Row {
            i: keep[i],
            coeffs: expand(&red.entries()[i]),
            rhs: red_gamma[i].clone(),
        });
    }
    for i in 0..sr {
        if cls.t1.contains(&i) {
            continue;
        }
        let full_rank = cls.t2.contains(&i);
        let d = cls.d_sets[i].len();
        let mut kappas: Vec<Rat> = Vec::new();
        for &(ai, j) in cls.h.range((i, 0)..(i + 1, 0)) {
            debug_assert_eq!(ai, i);
            let sigma = build_sigma(i, j, &cls.d_sets[i], &cls.h, sr);
            let block: Vec<Vec<Rat>> = (0..d)
                .map(|a| (0..sr).map(|b| red.entry(sigma[a], sigma[b]).clone()).collect())
                .collect();
            for row in &block {
                for v in &row[d..] {
                    assert!(v.is_zero(), "unreachable column leaked into the block");
                }
            }
            let zb = ZMatrix::new(block).expect("permuted block keeps the sign pattern");
            let elim = gauss(&zb);
            let n = &elim.tprime;
            let y = &elim.y;
            for (kk, row) in n.iter().enumerate().take(d - 1) {
                assert!(row[kk].is_one(), "interior pivot must be 1");
            }
            assert_eq!(n[d - 1][d - 1].is_one(), full_rank, "corner pivot decides the rank");

            let mut v_red = vec![Rat::zero(); sr];
            for b in 0..sr {
                v_red[sigma[b]] = n[d - 2][b].clone();
            }
            assert!(v_red[j].is_one());
            assert!(v_red[i] <= Rat::zero());
            for (w, c) in v_red.iter().enumerate() {
                assert!(w == i || w == j || c.is_zero(), "stray coefficient in a coupling row");
            }
            let delta: Rat = -(0..d)
                .map(|a| &y[d - 2][a] * &red_lambda[sigma[a]])
                .fold(Rat::zero(), |s, v| s + v);
            assert!(delta <= Rat::zero());
            v_rows.push(VRow { i: keep[i], j: keep[j], coeffs: expand(&v_red), rhs: delta });

            if full_rank {
                let kappa: Rat = (0..d)
                    .map(|a| &y[d - 1][a] * &red_gamma[sigma[a]])
                    .fold(Rat::zero(), |s, v| s + v);
                kappas.push(kappa);
            }
        }
        if full_rank {
            for kap in &kappas[1..] {
                assert_eq!(*kap, kappas[0], "upper bound must not depend on the arc");
            }
            kappa_rows.push(KappaRow { i: keep[i], bound: kappas.remove(0) });
        }
    }

    let sys = ApproxSystem { t, t1_rows, kappa_rows, v_rows };
    let nnz = red.entries().iter().flatten().filter(|v| !v.is_zero()).count();
    assert!(sys.row_count() <= nnz, "more rows than nonzero entries");
    sys
}
