//! Equality-constrained quadratic problems
//!
//! ```text
//! [ A  Cᵀ ] [ x ]   [ rhs ]
//! [ C  0  ] [ λ ] = [ g   ]
//! ```
//!
//! solved by eliminating `x` through the Cholesky factor of `A` and a dense
//! Schur complement `S = C A⁻¹ Cᵀ` over the (few) constraints. When `A` is
//! only semidefinite, a diagonal shift is factored instead and the exact
//! system is recovered by iterative refinement.

use crate::error::{Error, Result};
use crate::sparse::{dot, norm2, CsrMatrix, DenseCholesky, EnvelopeCholesky};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * x[i]).sum()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.val)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintMatrix {
    pub n_cols: usize,
    pub rows: Vec<SparseRow>,
}

impl ConstraintMatrix {
    pub fn new(n_cols: usize) -> Self {
        ConstraintMatrix {
            n_cols,
            rows: Vec::new(),
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let rows = rows
            .iter()
            .map(|r| {
                let mut row = SparseRow::default();
                for (i, &v) in r.iter().enumerate() {
                    if v != 0.0 {
                        row.idx.push(i);
                        row.val.push(v);
                    }
                }
                row
            })
            .collect();
        ConstraintMatrix { n_cols, rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(x)).collect()
    }

    pub fn apply_transpose(&self, lambda: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_cols];
        for (r, &l) in self.rows.iter().zip(lambda) {
            for (&i, &v) in r.idx.iter().zip(&r.val) {
                y[i] += v * l;
            }
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct SaddleSolution {
    pub x: Vec<f64>,
    pub multipliers: Vec<f64>,
    /// `‖A x + Cᵀλ − rhs‖₂`
    pub stationarity_residual: f64,
    /// `‖C x − g‖₂`
    pub constraint_residual: f64,
    pub refinements: usize,
}

/// Factorization of one constrained system, reusable for many right-hand sides.
pub struct SaddleSystem<'a> {
    a: &'a CsrMatrix,
    c: &'a ConstraintMatrix,
    chol: EnvelopeCholesky,
    shifted: bool,
    /// Columns of `L⁻¹ Cᵀ`, each stored from its first structurally nonzero entry.
    w: Vec<(usize, Vec<f64>)>,
    schur: Option<DenseCholesky>,
}

const SHIFT: f64 = 1e-8;
const MAX_REFINEMENTS: usize = 40;

impl<'a> SaddleSystem<'a> {
    pub fn factor(a: &'a CsrMatrix, c: &'a ConstraintMatrix) -> Result<Self> {
        assert_eq!(a.n(), c.n_cols, "constraint width does not match the matrix");
        let (chol, shifted) = match EnvelopeCholesky::factor(a) {
            Ok(f) => (f, false),
            Err(Error::NotPositiveDefinite { .. }) => {
                let diag = a.diagonal();
                let max = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                let floor = if max > 0.0 { 1e-3 * max } else { 1.0 };
                let shift: Vec<f64> = diag.iter().map(|d| SHIFT * d.abs().max(floor)).collect();
                let f = EnvelopeCholesky::factor_shifted(a, &shift).map_err(|e| Error::SolverFailure {
                    residual: f64::NAN,
                    context: format!(" (factorization breakdown: {e})"),
                })?;
                (f, true)
            }
            Err(e) => return Err(e),
        };

        let n = a.n();
        let m = c.n_rows();
        let mut w = Vec::with_capacity(m);
        let mut scratch = vec![0.0; n];
        for row in &c.rows {
            let Some(&s) = row.idx.first() else {
                w.push((n, Vec::new()));
                continue;
            };
            scratch[s..].fill(0.0);
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                scratch[i] = v;
            }
            chol.forward_from(&mut scratch, s);
            w.push((s, scratch[s..].to_vec()));
        }

        let schur = if m == 0 {
            None
        } else {
            let mut s_mat = vec![0.0; m * m];
            for a_i in 0..m {
                for b_i in 0..=a_i {
                    let (sa, wa) = &w[a_i];
                    let (sb, wb) = &w[b_i];
                    let s = (*sa).max(*sb);
                    let v = if s >= n {
                        0.0
                    } else {
                        dot(&wa[s - sa..], &wb[s - sb..])
                    };
                    s_mat[a_i * m + b_i] = v;
                    s_mat[b_i * m + a_i] = v;
                }
            }
            Some(DenseCholesky::factor(&s_mat, m)?)
        };

        Ok(SaddleSystem {
            a,
            c,
            chol,
            shifted,
            w,
            schur,
        })
    }

    pub fn n_constraints(&self) -> usize {
        self.c.n_rows()
    }

    pub fn is_shifted(&self) -> bool {
        self.shifted
    }

    fn solve_once(&self, rhs: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut y = rhs.to_vec();
        self.chol.forward_in_place(&mut y);
        let lambda = match &self.schur {
            None => Vec::new(),
            Some(s) => {
                let t: Vec<f64> = self
                    .w
                    .iter()
                    .zip(g)
                    .map(|((st, wc), gi)| if wc.is_empty() { -gi } else { dot(wc, &y[*st..]) - gi })
                    .collect();
                s.solve(&t)
            }
        };
        for ((st, wc), &l) in self.w.iter().zip(&lambda) {
            if l != 0.0 {
                for (yk, &wk) in y[*st..].iter_mut().zip(wc) {
                    *yk -= l * wk;
                }
            }
        }
        self.chol.backward_in_place(&mut y);
        (y, lambda)
    }

    fn residuals(&self, x: &[f64], lambda: &[f64], rhs: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut r1 = self.a.matvec(x);
        let ct = self.c.apply_transpose(lambda);
        for ((r, &b), &t) in r1.iter_mut().zip(rhs).zip(&ct) {
            *r = b - *r - t;
        }
        let cx = self.c.apply(x);
        let r2 = g.iter().zip(&cx).map(|(gi, ci)| gi - ci).collect();
        (r1, r2)
    }

    /// Solve to `‖A x + Cᵀλ − rhs‖ ≤ tol·max(‖rhs‖, 1)` and
    /// `‖C x − g‖ ≤ tol·max(‖g‖, 1)`.
    pub fn solve(&self, rhs: &[f64], g: &[f64], tol: f64) -> Result<SaddleSolution> {
        assert_eq!(rhs.len(), self.a.n());
        assert_eq!(g.len(), self.c.n_rows());
        let bound1 = tol * norm2(rhs).max(1.0);
        let bound2 = tol * norm2(g).max(1.0);
        let (mut x, mut lambda) = self.solve_once(rhs, g);
        let mut refinements = 0;
        loop {
            let (r1, r2) = self.residuals(&x, &lambda, rhs, g);
            let (n1, n2) = (norm2(&r1), norm2(&r2));
            if !(n1.is_finite() && n2.is_finite()) {
                return Err(Error::SolverFailure {
                    residual: f64::NAN,
                    context: String::new(),
                });
            }
            if n1 <= bound1 && n2 <= bound2 {
                return Ok(SaddleSolution {
                    x,
                    multipliers: lambda,
                    stationarity_residual: n1,
                    constraint_residual: n2,
                    refinements,
                });
            }
            if refinements == MAX_REFINEMENTS {
                return Err(Error::SolverFailure {
                    residual: (n1 / bound1).max(n2 / bound2) * tol,
                    context: String::new(),
                });
            }
            let (dx, dl) = self.solve_once(&r1, &r2);
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            lambda.iter_mut().zip(&dl).for_each(|(a, b)| *a += b);
            refinements += 1;
        }
    }
}

/// One-shot constrained solve returning `(x, λ)`.
pub fn solve_saddle(
    a: &CsrMatrix,
    c: &ConstraintMatrix,
    rhs: &[f64],
    g: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sol = SaddleSystem::factor(a, c)?.solve(rhs, g, tol)?;
    Ok((sol.x, sol.multipliers))
}

/// SPD solve to relative residual `tol`, with refinement as a safety net.
pub fn solve_spd(a: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let chol = EnvelopeCholesky::factor(a)?;
    solve_spd_with(&chol, a, rhs, tol)
}

pub(crate) fn solve_spd_with(chol: &EnvelopeCholesky, a: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok(vec![0.0; rhs.len()]);
    }
    let mut x = chol.solve(rhs);
    for _ in 0..MAX_REFINEMENTS {
        let ax = a.matvec(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, y)| b - y).collect();
        let rn = norm2(&r);
        if rn <= tol * bnorm {
            return Ok(x);
        }
        if !rn.is_finite() {
            break;
        }
        let dx = chol.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
    }
    let ax = a.matvec(&x);
    let rn = norm2(&rhs.iter().zip(&ax).map(|(b, y)| b - y).collect::<Vec<_>>());
    Err(Error::SolverFailure {
        residual: rn / bnorm,
        context: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_kkt() {
        let a = CsrMatrix::identity(2);
        let c = ConstraintMatrix::from_dense(&[vec![1.0, 1.0]]);
        let (x, l) = solve_saddle(&a, &c, &[0.0, 0.0], &[2.0], 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        assert!((l[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn pure_constraint_with_zero_block() {
        let a = CsrMatrix::zeros(2);
        let c = ConstraintMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let sys = SaddleSystem::factor(&a, &c).unwrap();
        assert!(sys.is_shifted());
        let s = sys.solve(&[0.0, 0.0], &[3.0, 4.0], 1e-10).unwrap();
        assert!((s.x[0] - 3.0).abs() < 1e-9 && (s.x[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn dependent_constraints_are_reported() {
        let a = CsrMatrix::identity(3);
        let c = ConstraintMatrix::from_dense(&[vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![2.0, 2.0, 0.0]]);
        match SaddleSystem::factor(&a, &c) {
            Err(Error::RankDeficient { rows }) => assert_eq!(rows, vec![2]),
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("expected rank deficiency"),
        }
    }

    #[test]
    fn spd_solve_hand_check() {
        let a = CsrMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let x = solve_spd(&a, &[3.0, 3.0], 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_laplacian_with_mean_constraint() {
        // 1D Neumann Laplacian: constants in the kernel, pinned by the mean
        let n = 6;
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n - 1 {
            d[i][i] += 1.0;
            d[i + 1][i + 1] += 1.0;
            d[i][i + 1] -= 1.0;
            d[i + 1][i] -= 1.0;
        }
        let a = CsrMatrix::from_dense(&d);
        let c = ConstraintMatrix::from_dense(&[vec![1.0; n]]);
        let s = SaddleSystem::factor(&a, &c).unwrap().solve(&vec![0.0; n], &[n as f64], 1e-12).unwrap();
        for v in &s.x {
            assert!((v - 1.0).abs() < 1e-10);
        }
        assert!(s.multipliers[0].abs() < 1e-10);
    }
}
