//! Effective coefficients and the coupled macroscopic model.
//!
//! Per block the coefficients are integrals over the central RVE:
//!
//! ```text
//! D_ji = ∫ φ_i φ_j          B_ji = ∫ κ ∇φ_i·∇φ_j
//! Bᵐⁿ_ji = ∫ κ ∇φ_iᵐ·∇φ_jⁿ   b_j = ∫ f φ_j
//! Dᵐⁿ_ji = ∫ φ_iᵐ φ_jⁿ       b0_j = ∫ u0 φ_j        (first level only)
//! ```
//!
//! The macro model lives on coarse Q1 elements that coincide with the blocks,
//! with every coefficient divided by the block area and `U_i = 0` on `∂Ω`:
//!
//! ```text
//! D ∂U/∂t + B U − ∂_n(Bᵐⁿ ∂_m U) = b,     D U − ∂_n(Dᵐⁿ ∂_m U) = b0 at t = 0.
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{basis_norms, BasisId, BasisNorms, BasisTimeline, CellSolver, ResidualRecord};
use crate::error::{Error, Result};
use crate::fem::{cell_load, quad_form, CoefficientField, FineGrid, GRAD_REF, MASS_REF, STIFF_REF};
use crate::geometry::Label;
use crate::layout::RveLayout;
use crate::problem::TimeGrid;
use crate::sparse::{CsrMatrix, EnvelopeCholesky};
use crate::N_CONTINUA;

const C: usize = N_CONTINUA;

pub type Pair = [[f64; C]; C];
/// `[j][i][m][n]`
pub type Tensor = [[[[f64; 2]; 2]; C]; C];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCoefficients {
    pub block: usize,
    pub level: usize,
    /// `|K_p| / |R_p|`
    pub weight: f64,
    pub d: Pair,
    pub b: Pair,
    pub btensor: Tensor,
    pub load: [f64; C],
    pub dtensor: Option<Tensor>,
    /// `∫ R(φ_iᵏ⁻¹) φ_jᵏ`, the mass carried over from the previous level.
    pub d_transport: Option<Pair>,
    pub load0: Option<[f64; C]>,
    /// Continua absent from the central RVE; their rows and columns are zero.
    pub flagged: Vec<usize>,
}

impl BlockCoefficients {
    pub fn zeros(block: usize, level: usize) -> Self {
        BlockCoefficients {
            block,
            level,
            weight: 1.0,
            d: [[0.0; C]; C],
            b: [[0.0; C]; C],
            btensor: [[[[0.0; 2]; 2]; C]; C],
            load: [0.0; C],
            dtensor: None,
            d_transport: None,
            load0: None,
            flagged: Vec::new(),
        }
    }

    /// Long-format CSV: `name,j,i,m,n,value` with `-1` for unused indices.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,j,i,m,n,value\n");
        let mut row = |name: &str, j: i64, i: i64, m: i64, n: i64, v: f64| {
            writeln!(s, "{name},{j},{i},{m},{n},{v:e}").expect("write to string");
        };
        for j in 0..C {
            for i in 0..C {
                row("D", j as i64, i as i64, -1, -1, self.d[j][i]);
            }
        }
        for j in 0..C {
            for i in 0..C {
                row("B", j as i64, i as i64, -1, -1, self.b[j][i]);
            }
        }
        for j in 0..C {
            for i in 0..C {
                for m in 0..2 {
                    for n in 0..2 {
                        row("Btensor", j as i64, i as i64, m as i64, n as i64, self.btensor[j][i][m][n]);
                    }
                }
            }
        }
        for j in 0..C {
            row("b", j as i64, -1, -1, -1, self.load[j]);
        }
        if let Some(t) = &self.dtensor {
            for j in 0..C {
                for i in 0..C {
                    for m in 0..2 {
                        for n in 0..2 {
                            row("Dtensor", j as i64, i as i64, m as i64, n as i64, t[j][i][m][n]);
                        }
                    }
                }
            }
        }
        if let Some(b0) = &self.load0 {
            for j in 0..C {
                row("b0", j as i64, -1, -1, -1, b0[j]);
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &self.to_csv())
    }
}

/// Coefficients of every block at every time level, `levels[k][p]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCoefficients {
    pub n_coarse: usize,
    pub coarse_h: f64,
    pub levels: Vec<Vec<BlockCoefficients>>,
}

/// Index of `(continuum, kind)` in `BasisId::all()` order.
fn linear_slot(i: usize, m: usize) -> usize {
    C + 2 * i + m
}

/// Integrate the coefficients of one block at time level `level` over the
/// non-excluded cells of its central RVE.
///
/// `f` is the source at this level's time; `u0` is given only for the first level.
#[allow(clippy::too_many_arguments)]
pub fn effective_coefficients(
    grid: &FineGrid,
    bases: &BasisTimeline,
    labels: &[Label],
    kappa: &CoefficientField,
    f: &dyn Fn(f64, f64) -> f64,
    u0: Option<&dyn Fn(f64, f64) -> f64>,
    layout: &RveLayout,
    level: usize,
) -> Result<BlockCoefficients> {
    let p = bases.block;
    let all = BasisId::all();
    let mut fields = Vec::with_capacity(all.len());
    for id in &all {
        let field = bases.field(*id, level).ok_or(Error::MissingBasis { block: p, level })?;
        fields.push(&field.values);
    }
    let active = &bases.active[level];
    let n = grid.n_cells;
    let h2 = grid.h() * grid.h();
    let rve = layout.blocks[p].rve;

    let mut out = BlockCoefficients::zeros(p, level);
    out.weight = layout.localization_weight(p);
    let mut dt: Tensor = [[[[0.0; 2]; 2]; C]; C];
    let mut b0 = [0.0; C];
    let mut present = [false; C];
    let nb = all.len();
    let mut corner = vec![[0.0; 4]; nb];
    let previous: Vec<Vec<f64>> = if level > 0 {
        let from = &bases.active[level - 1];
        (0..C)
            .map(|i| {
                let field = bases.field(BasisId::constant(i), level - 1).ok_or(Error::MissingBasis { block: p, level: level - 1 })?;
                Ok(from.restrict_to(&field.values, active))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut transport = [[0.0; C]; C];

    for (cx, cy) in rve.cells() {
        let label = labels[cy * n + cx];
        let Some(cont) = label.continuum() else { continue };
        present[cont] = true;
        for (b, v) in fields.iter().enumerate() {
            corner[b] = active.corner_values(v, cx, cy);
        }
        let k = kappa.at(cx, cy);
        for (i, prev) in previous.iter().enumerate() {
            let pv = active.corner_values(prev, cx, cy);
            for j in 0..C {
                transport[j][i] += h2 * quad_form(&pv, &MASS_REF, &corner[j]);
            }
        }
        for j in 0..C {
            for i in j..C {
                out.d[j][i] += h2 * quad_form(&corner[i], &MASS_REF, &corner[j]);
                out.b[j][i] += k * quad_form(&corner[i], &STIFF_REF, &corner[j]);
            }
            out.load[j] += cell_load(grid, cx, cy, &corner[j], f);
            if let Some(u0) = u0 {
                b0[j] += cell_load(grid, cx, cy, &corner[j], u0);
            }
        }
        // pairs P = (i, m) ordered; Q ≥ P
        for pi in 0..2 * C {
            let (i, m) = (pi / 2, pi % 2);
            let vi = &corner[linear_slot(i, m)];
            for qj in pi..2 * C {
                let (j, nn) = (qj / 2, qj % 2);
                let vj = &corner[linear_slot(j, nn)];
                out.btensor[j][i][m][nn] += k * quad_form(vi, &STIFF_REF, vj);
                if u0.is_some() {
                    dt[j][i][m][nn] += h2 * quad_form(vi, &MASS_REF, vj);
                }
            }
        }
    }

    for j in 0..C {
        for i in j + 1..C {
            out.d[i][j] = out.d[j][i];
            out.b[i][j] = out.b[j][i];
        }
    }
    for pi in 0..2 * C {
        let (i, m) = (pi / 2, pi % 2);
        for qj in pi + 1..2 * C {
            let (j, nn) = (qj / 2, qj % 2);
            out.btensor[i][j][nn][m] = out.btensor[j][i][m][nn];
            dt[i][j][nn][m] = dt[j][i][m][nn];
        }
    }
    if level > 0 {
        out.d_transport = Some(transport);
    }
    if u0.is_some() {
        out.dtensor = Some(dt);
        out.load0 = Some(b0);
    }
    for (j, &here) in present.iter().enumerate() {
        if !here {
            zero_continuum(&mut out, j);
        }
    }
    Ok(out)
}

fn zero_continuum(c: &mut BlockCoefficients, j: usize) {
    c.flagged.push(j);
    for i in 0..C {
        c.d[j][i] = 0.0;
        c.d[i][j] = 0.0;
        c.b[j][i] = 0.0;
        c.b[i][j] = 0.0;
        c.btensor[j][i] = [[0.0; 2]; 2];
        c.btensor[i][j] = [[0.0; 2]; 2];
        if let Some(t) = c.d_transport.as_mut() {
            t[j][i] = 0.0;
            t[i][j] = 0.0;
        }
        if let Some(t) = c.dtensor.as_mut() {
            t[j][i] = [[0.0; 2]; 2];
            t[i][j] = [[0.0; 2]; 2];
        }
    }
    c.load[j] = 0.0;
    if let Some(b0) = c.load0.as_mut() {
        b0[j] = 0.0;
    }
}

/// Coarse Q1 space on `n × n` blocks; unknowns are the interior nodes,
/// interleaved by continuum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseGrid {
    pub n: usize,
}

impl CoarseGrid {
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of unknowns, `N_CONTINUA · (n − 1)²`.
    pub fn n_dofs(&self) -> usize {
        C * self.n.saturating_sub(1).pow(2)
    }

    /// Unknown of continuum `i` at node `(ix, iy)`, `None` on `∂Ω`.
    #[inline]
    pub fn dof(&self, ix: usize, iy: usize, i: usize) -> Option<usize> {
        if ix == 0 || iy == 0 || ix >= self.n || iy >= self.n {
            return None;
        }
        Some(((iy - 1) * (self.n - 1) + (ix - 1)) * C + i)
    }

    fn corners(&self, bx: usize, by: usize) -> [(usize, usize); 4] {
        [(bx, by), (bx + 1, by), (bx + 1, by + 1), (bx, by + 1)]
    }

    /// Full `(n+1)²` nodal grid of continuum `i`, zero on the boundary.
    pub fn nodal(&self, u: &[f64], i: usize) -> Vec<f64> {
        let w = self.n + 1;
        let mut out = vec![0.0; w * w];
        for iy in 0..w {
            for ix in 0..w {
                if let Some(d) = self.dof(ix, iy, i) {
                    out[iy * w + ix] = u[d];
                }
            }
        }
        out
    }

    /// Sparsity shared by every macro operator: all couplings of nodes that
    /// share a block, both continua.
    fn pattern(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_dofs()];
        for iy in 1..self.n {
            for ix in 1..self.n {
                for i in 0..C {
                    let r = self.dof(ix, iy, i).expect("interior");
                    for jy in iy - 1..=iy + 1 {
                        for jx in ix - 1..=ix + 1 {
                            for j in 0..C {
                                if let Some(c) = self.dof(jx, jy, j) {
                                    rows[r].push(c);
                                }
                            }
                        }
                    }
                    rows[r].sort_unstable();
                }
            }
        }
        rows
    }

    /// Assemble `Σ_p` of an element matrix given per block as
    /// `elem(p)[(a, j)][(b, i)]`: row = test node `a`, continuum `j`.
    pub fn assemble(&self, elem: impl Fn(usize) -> [[[[f64; C]; 4]; C]; 4]) -> CsrMatrix {
        let pattern = self.pattern();
        let mut rows: Vec<Vec<(usize, f64)>> = pattern.iter().map(|r| r.iter().map(|&c| (c, 0.0)).collect()).collect();
        for by in 0..self.n {
            for bx in 0..self.n {
                let p = by * self.n + bx;
                let e = elem(p);
                let corners = self.corners(bx, by);
                for (a, &(ax, ay)) in corners.iter().enumerate() {
                    for j in 0..C {
                        let Some(r) = self.dof(ax, ay, j) else { continue };
                        for (b, &(cx, cy)) in corners.iter().enumerate() {
                            for i in 0..C {
                                let Some(c) = self.dof(cx, cy, i) else { continue };
                                let slot = pattern[r].binary_search(&c).expect("in pattern");
                                rows[r][slot].1 += e[a][j][b][i];
                            }
                        }
                    }
                }
            }
        }
        CsrMatrix::from_rows(rows)
    }

    /// Load vector `∫ (w_j / |K_p|) N_a` for a blockwise constant density.
    pub fn assemble_load(&self, per_block: impl Fn(usize) -> [f64; C]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        for by in 0..self.n {
            for bx in 0..self.n {
                let w = per_block(by * self.n + bx);
                for (ax, ay) in self.corners(bx, by) {
                    for j in 0..C {
                        if let Some(r) = self.dof(ax, ay, j) {
                            out[r] += w[j] / 4.0;
                        }
                    }
                }
            }
        }
        out
    }
}

type Elem = [[[[f64; C]; 4]; C]; 4];

/// `Σ_ij c_ji/|R| ∫_K N_b N_a` with `weight = |K|/|R|`.
fn mass_element(c: &Pair, weight: f64) -> Elem {
    let mut e = [[[[0.0; C]; 4]; C]; 4];
    for a in 0..4 {
        for j in 0..C {
            for b in 0..4 {
                for i in 0..C {
                    e[a][j][b][i] = c[j][i] * weight * MASS_REF[a][b];
                }
            }
        }
    }
    e
}

/// `Σ_ij Σ_mn t_ji^{mn}/|K| ∫ ∂_m N_b ∂_n N_a`
fn tensor_element(t: &Tensor, area: f64) -> Elem {
    let mut e = [[[[0.0; C]; 4]; C]; 4];
    for a in 0..4 {
        for j in 0..C {
            for b in 0..4 {
                for i in 0..C {
                    let mut s = 0.0;
                    for m in 0..2 {
                        for n in 0..2 {
                            s += t[j][i][m][n] / area * GRAD_REF[m][n][b][a];
                        }
                    }
                    e[a][j][b][i] = s;
                }
            }
        }
    }
    e
}

/// Operators of one time level on a shared sparsity pattern.
#[derive(Clone, Debug)]
pub struct MacroOperator {
    pub grid: CoarseGrid,
    /// Weighted by `D`.
    pub mass: CsrMatrix,
    /// Weighted by `B`.
    pub zeroth: CsrMatrix,
    /// Weighted by `Bᵐⁿ`.
    pub stiffness: CsrMatrix,
    /// Weighted by the carried-over mass; equals `mass` when none was recorded.
    pub transport: CsrMatrix,
    pub load: Vec<f64>,
}

/// How the previous state enters a macro time step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDerivative {
    /// `D⁺ (U⁺ − U) / τ`
    Frozen,
    /// `(D⁺ U⁺ − D⁺⁻ U) / τ` with `D⁺⁻ = ∫ R(φᵏ) φᵏ⁺¹`, the discrete
    /// counterpart of `∂(φ U)/∂t`.
    #[default]
    Transported,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroOptions {
    /// Keep the gradient term of the initial-condition equation.
    pub dtensor: bool,
    pub time_derivative: TimeDerivative,
}

impl Default for MacroOptions {
    fn default() -> Self {
        MacroOptions {
            dtensor: true,
            time_derivative: TimeDerivative::Transported,
        }
    }
}

fn block_area(grid: &CoarseGrid, c: &BlockCoefficients) -> f64 {
    grid.h() * grid.h() / c.weight
}

pub fn assemble_macro_operator(coeffs: &[BlockCoefficients], grid: CoarseGrid) -> Result<MacroOperator> {
    check_blocks(coeffs, grid)?;
    let mass = grid.assemble(|p| mass_element(&coeffs[p].d, coeffs[p].weight));
    let zeroth = grid.assemble(|p| mass_element(&coeffs[p].b, coeffs[p].weight));
    let stiffness = grid.assemble(|p| tensor_element(&coeffs[p].btensor, block_area(&grid, &coeffs[p])));
    let load = grid.assemble_load(|p| coeffs[p].load.map(|v| v * coeffs[p].weight));
    let transport = if coeffs.iter().all(|c| c.d_transport.is_some()) {
        grid.assemble(|p| mass_element(coeffs[p].d_transport.as_ref().expect("checked"), coeffs[p].weight))
    } else {
        mass.clone()
    };
    Ok(MacroOperator {
        grid,
        mass,
        zeroth,
        stiffness,
        transport,
        load,
    })
}

fn check_blocks(coeffs: &[BlockCoefficients], grid: CoarseGrid) -> Result<()> {
    if coeffs.len() != grid.n * grid.n {
        return Err(Error::Data(format!(
            "expected coefficients for {} blocks, found {}",
            grid.n * grid.n,
            coeffs.len()
        )));
    }
    Ok(())
}

/// Factor an assembled macro matrix. Unknowns with an identically zero row
/// (continua absent around a node) are pinned to zero.
fn solve_macro_system(a: &CsrMatrix, rhs: &[f64], context: &str) -> Result<Vec<f64>> {
    let n = a.n();
    let dead: Vec<bool> = (0..n).map(|r| a.row(r).1.iter().all(|&v| v == 0.0)).collect();
    let system = if dead.iter().any(|&d| d) {
        let rows = (0..n)
            .map(|r| {
                let (cols, vals) = a.row(r);
                cols.iter()
                    .zip(vals)
                    .map(|(&c, &v)| (c, if r == c && dead[r] { 1.0 } else { v }))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(rows)
    } else {
        a.clone()
    };
    let chol = EnvelopeCholesky::factor(&system).map_err(|e| e.with_context(format!("(macro {context})")))?;
    let mut b = rhs.to_vec();
    for (r, &d) in dead.iter().enumerate() {
        if d {
            b[r] = 0.0;
        }
    }
    let x = chol.solve(&b);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure {
            residual: f64::NAN,
            context: format!("macro {context}: non-finite solution"),
        });
    }
    Ok(x)
}

/// `D U − ∂_n(Dᵐⁿ ∂_m U) = b0`; the tensor term is skipped when `with_dtensor` is false.
pub fn solve_macro_initial(coeffs: &[BlockCoefficients], grid: CoarseGrid, with_dtensor: bool) -> Result<Vec<f64>> {
    check_blocks(coeffs, grid)?;
    let mass = grid.assemble(|p| mass_element(&coeffs[p].d, coeffs[p].weight));
    if let Some(c) = coeffs.iter().find(|c| c.load0.is_none() || (with_dtensor && c.dtensor.is_none())) {
        return Err(Error::Data(format!("block {} has no initial-condition coefficients", c.block)));
    }
    let system = if with_dtensor {
        let stiff = grid.assemble(|p| tensor_element(coeffs[p].dtensor.as_ref().expect("checked"), block_area(&grid, &coeffs[p])));
        mass.linear_combination(1.0, &stiff, 1.0)
    } else {
        mass
    };
    let load = grid.assemble_load(|p| coeffs[p].load0.expect("checked").map(|v| v * coeffs[p].weight));
    solve_macro_system(&system, &load, "initial solve")
}

/// `(M[D]/τ + S[Bᵐⁿ] + Z[B]) U⁺ = M[D] U/τ + b`, coefficients at the new level
/// (`M[D⁺⁻]` on the right for the transported derivative).
pub fn step_macro(u: &[f64], op: &MacroOperator, tau: f64, derivative: TimeDerivative) -> Result<Vec<f64>> {
    let system = op.mass.linear_combination(1.0 / tau, &op.stiffness, 1.0).linear_combination(1.0, &op.zeroth, 1.0);
    let mut rhs = match derivative {
        TimeDerivative::Frozen => op.mass.matvec(u),
        TimeDerivative::Transported => op.transport.matvec(u),
    };
    for (r, b) in rhs.iter_mut().zip(&op.load) {
        *r = *r / tau + b;
    }
    solve_macro_system(&system, &rhs, "step")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroTrajectory {
    pub grid: CoarseGrid,
    pub time: TimeGrid,
    /// Interleaved unknowns per time level.
    pub levels: Vec<Vec<f64>>,
    pub wall_time_s: f64,
}

impl MacroTrajectory {
    pub fn coarse_dofs(&self) -> usize {
        self.grid.n_dofs()
    }

    pub fn nodal(&self, k: usize, i: usize) -> Vec<f64> {
        self.grid.nodal(&self.levels[k], i)
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().flatten().all(|v| v.is_finite())
    }

    /// Long-format CSV `ix,iy,x,y,U1,U2` over all coarse nodes.
    pub fn snapshot_csv(&self, k: usize) -> String {
        let w = self.grid.n + 1;
        let fields: Vec<Vec<f64>> = (0..C).map(|i| self.nodal(k, i)).collect();
        let mut s = String::from("ix,iy,x,y");
        for i in 0..C {
            write!(s, ",U{}", i + 1).expect("write to string");
        }
        s.push('\n');
        let h = self.grid.h();
        for iy in 0..w {
            for ix in 0..w {
                write!(s, "{ix},{iy},{:e},{:e}", ix as f64 * h, iy as f64 * h).expect("write to string");
                for f in &fields {
                    write!(s, ",{:e}", f[iy * w + ix]).expect("write to string");
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn write_snapshot_csv(&self, k: usize, path: &Path) -> Result<()> {
        crate::io::write_text(path, &self.snapshot_csv(k))
    }
}

/// Initial solve followed by one backward Euler step per time level.
pub fn run_macro(coeffs: &EffectiveCoefficients, time: &TimeGrid, options: MacroOptions) -> Result<MacroTrajectory> {
    time.validate()?;
    let start = Instant::now();
    let grid = CoarseGrid { n: coeffs.n_coarse };
    if coeffs.levels.len() < time.n_levels() {
        return Err(Error::Data(format!(
            "coefficients cover {} levels, {} needed",
            coeffs.levels.len(),
            time.n_levels()
        )));
    }
    let mut levels = vec![solve_macro_initial(&coeffs.levels[0], grid, options.dtensor)?];
    for k in 1..time.n_levels() {
        let op = assemble_macro_operator(&coeffs.levels[k], grid)?;
        let next = step_macro(levels.last().expect("previous"), &op, time.step(), options.time_derivative).map_err(|e| e.with_context(format!("(macro level {k})")))?;
        levels.push(next);
    }
    Ok(MacroTrajectory {
        grid,
        time: *time,
        levels,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Everything the block sweep produces besides the coefficients.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SweepDiagnostics {
    pub residuals: Vec<ResidualRecord>,
    /// Basis norms at the first level, one entry per block.
    pub norms: Vec<BasisNorms>,
    pub wall_time_s: f64,
}

/// Solve all cell problems block by block and integrate their coefficients.
/// Bases are dropped as soon as a block is done.
pub fn compute_coefficients(
    solver: &CellSolver<'_>,
    f: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    u0: &(dyn Fn(f64, f64) -> f64 + Sync),
) -> Result<(EffectiveCoefficients, SweepDiagnostics)> {
    compute_coefficients_with(solver, f, u0, |_| Ok(()))
}

/// As [`compute_coefficients`], handing each block's bases to `inspect` first.
pub fn compute_coefficients_with(
    solver: &CellSolver<'_>,
    f: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    u0: &(dyn Fn(f64, f64) -> f64 + Sync),
    inspect: impl Fn(&BasisTimeline) -> Result<()> + Sync,
) -> Result<(EffectiveCoefficients, SweepDiagnostics)> {
    let start = Instant::now();
    let layout = solver.layout;
    let ids = BasisId::all();
    let per_block: Vec<Result<(Vec<BlockCoefficients>, Vec<ResidualRecord>, BasisNorms)>> = (0..layout.n_blocks())
        .into_par_iter()
        .map(|p| {
            let bases = solver.solve_block(p, &ids)?;
            inspect(&bases)?;
            let mut coeffs = Vec::with_capacity(bases.n_levels());
            for k in 0..bases.n_levels() {
                let labels = solver.timeline.labels(bases.geometry_levels[k]);
                let t = solver.time.time(k);
                let fk = |x: f64, y: f64| f(x, y, t);
                let u0k: Option<&dyn Fn(f64, f64) -> f64> = if k == 0 { Some(u0) } else { None };
                coeffs.push(effective_coefficients(&solver.grid, &bases, labels, solver.kappa, &fk, u0k, layout, k)?);
            }
            let norms = basis_norms(&solver.grid, layout, solver.timeline.labels(0), &bases, 0);
            Ok((coeffs, bases.residuals, norms))
        })
        .collect();
    let n_levels = solver.time.n_levels();
    let mut levels = vec![Vec::with_capacity(layout.n_blocks()); n_levels];
    let mut diag = SweepDiagnostics::default();
    for r in per_block {
        let (coeffs, residuals, norms) = r?;
        for (k, c) in coeffs.into_iter().enumerate() {
            levels[k].push(c);
        }
        diag.residuals.extend(residuals);
        diag.norms.push(norms);
    }
    diag.wall_time_s = start.elapsed().as_secs_f64();
    Ok((
        EffectiveCoefficients {
            n_coarse: layout.n_coarse,
            coarse_h: layout.coarse_h(),
            levels,
        },
        diag,
    ))
}
