//! Constrained space-time cell problems on oversampled RVEs.
//!
//! For block `p` the bases live on the active nodes of `R_p^+`. At the first
//! level they solve the steady constrained problem
//!
//! ```text
//! A φ + Cᵀζ = 0,        C φ = g,
//! ```
//!
//! and afterwards one backward Euler step per level
//!
//! ```text
//! (M/τ + A) φᵏ⁺¹ + Cᵀβ = M R(φᵏ)/τ,        Cᵏ⁺¹ φᵏ⁺¹ = gᵏ⁺¹,
//! ```
//!
//! where row `(q, j)` of `C` integrates against the indicator of continuum
//! `j` over the sub-RVE `R_q`. Walls and the outer boundary are homogeneous
//! Dirichlet, the artificial edge of `R_p^+` is natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{active_nodes, assemble_mass, assemble_stiffness, quad_form, ActiveSet, CoefficientField, FineGrid, MASS_REF, STIFF_REF};
use crate::geometry::{DomainTimeline, Label};
use crate::layout::{CellRect, RveLayout};
use crate::problem::TimeGrid;
use crate::saddle::{ConstraintMatrix, SaddleSystem, SparseRow};
use crate::sparse::{norm2, CsrMatrix};
use crate::N_CONTINUA;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisKind {
    /// Unit average in its own continuum, zero in the others.
    Constant,
    /// Follows `x_m − c_m` in its own continuum, `m ∈ {0, 1}`.
    Linear(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisId {
    pub continuum: usize,
    pub kind: BasisKind,
}

impl BasisId {
    pub fn constant(continuum: usize) -> Self {
        BasisId {
            continuum,
            kind: BasisKind::Constant,
        }
    }

    pub fn linear(continuum: usize, m: usize) -> Self {
        BasisId {
            continuum,
            kind: BasisKind::Linear(m),
        }
    }

    /// All constant and linear bases.
    pub fn all() -> Vec<BasisId> {
        let mut ids: Vec<_> = (0..N_CONTINUA).map(BasisId::constant).collect();
        for i in 0..N_CONTINUA {
            for m in 0..2 {
                ids.push(BasisId::linear(i, m));
            }
        }
        ids
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    /// The continuum has no cells in the sub-RVE.
    Vanished,
    /// Cells exist, but none of their corners is a degree of freedom.
    NoActiveSupport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub sub_rve: usize,
    pub continuum: usize,
    /// `∫_{R_q} ψ_j`
    pub area: f64,
    /// `∫_{R_q} x_m ψ_j` for `m = 0, 1`.
    pub first_moment: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRow {
    pub sub_rve: usize,
    pub continuum: usize,
    pub reason: DropReason,
}

#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    pub matrix: ConstraintMatrix,
    pub rows: Vec<ConstraintRow>,
    pub dropped: Vec<DroppedRow>,
    /// `c[m][j]`: centroid of continuum `j` over the central RVE, the origin
    /// of the linear targets.
    pub centers: [[f64; N_CONTINUA]; 2],
    /// Continua absent from the central RVE (centroid fell back to the block center).
    pub uncentered: Vec<usize>,
}

impl ConstraintSystem {
    /// Right-hand side `g` of `C φ = g` for one basis.
    pub fn targets(&self, id: BasisId) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                if r.continuum != id.continuum {
                    return 0.0;
                }
                match id.kind {
                    BasisKind::Constant => r.area,
                    BasisKind::Linear(m) => r.first_moment[m] - self.centers[m][r.continuum] * r.area,
                }
            })
            .collect()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Integral constraints of block `p` for the labels of one level.
///
/// Row `(q, j)` maps a nodal field to `∫_{R_q} φ ψ_j`, computed cellwise as
/// `h²/4` times the sum of corner values over cells of continuum `j`.
pub fn build_constraints(
    grid: &FineGrid,
    layout: &RveLayout,
    p: usize,
    labels: &[Label],
    active: &ActiveSet,
) -> Result<ConstraintSystem> {
    let n = grid.n_cells;
    let h = grid.h();
    let quarter = h * h / 4.0;
    let block = &layout.blocks[p];
    let mut matrix = ConstraintMatrix::new(active.len());
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    let mut entries: Vec<(usize, f64)> = Vec::new();

    for &q in &block.sub_rves {
        let rect = layout.blocks[q].rve;
        for j in 0..N_CONTINUA {
            let target = Label::from_continuum(j);
            let mut area = 0.0;
            let mut moment = [0.0; 2];
            entries.clear();
            for (cx, cy) in rect.cells() {
                if labels[cy * n + cx] != target {
                    continue;
                }
                let (xc, yc) = grid.cell_center(cx, cy);
                area += h * h;
                moment[0] += xc * h * h;
                moment[1] += yc * h * h;
                for d in active.corners(cx, cy).into_iter().flatten() {
                    entries.push((d, quarter));
                }
            }
            if area == 0.0 {
                dropped.push(DroppedRow {
                    sub_rve: q,
                    continuum: j,
                    reason: DropReason::Vanished,
                });
                continue;
            }
            if entries.is_empty() {
                dropped.push(DroppedRow {
                    sub_rve: q,
                    continuum: j,
                    reason: DropReason::NoActiveSupport,
                });
                continue;
            }
            entries.sort_by_key(|e| e.0);
            let mut row = SparseRow::default();
            for &(d, v) in entries.iter() {
                if row.idx.last() == Some(&d) {
                    *row.val.last_mut().expect("nonempty") += v;
                } else {
                    row.idx.push(d);
                    row.val.push(v);
                }
            }
            matrix.rows.push(row);
            rows.push(ConstraintRow {
                sub_rve: q,
                continuum: j,
                area,
                first_moment: moment,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::NoConstraints { block: p, level: 0 });
    }

    let (centers, uncentered) = continuum_centroids(grid, &block.rve, labels);
    Ok(ConstraintSystem {
        matrix,
        rows,
        dropped,
        centers,
        uncentered,
    })
}

/// Centroids `c[m][j]` of each continuum over `rect`; absent continua fall back
/// to the rectangle center and are listed.
pub fn continuum_centroids(grid: &FineGrid, rect: &CellRect, labels: &[Label]) -> ([[f64; N_CONTINUA]; 2], Vec<usize>) {
    let n = grid.n_cells;
    let mut area = [0.0; N_CONTINUA];
    let mut moment = [[0.0; N_CONTINUA]; 2];
    for (cx, cy) in rect.cells() {
        if let Some(j) = labels[cy * n + cx].continuum() {
            let (x, y) = grid.cell_center(cx, cy);
            area[j] += 1.0;
            moment[0][j] += x;
            moment[1][j] += y;
        }
    }
    let h = grid.h();
    let mid = [
        0.5 * (rect.x0 + rect.x1) as f64 * h,
        0.5 * (rect.y0 + rect.y1) as f64 * h,
    ];
    let mut centers = [[0.0; N_CONTINUA]; 2];
    let mut missing = Vec::new();
    for j in 0..N_CONTINUA {
        if area[j] == 0.0 {
            missing.push(j);
        }
        for m in 0..2 {
            centers[m][j] = if area[j] > 0.0 { moment[m][j] / area[j] } else { mid[m] };
        }
    }
    (centers, missing)
}

#[derive(Clone, Debug)]
pub struct BasisField {
    pub values: Vec<f64>,
    /// `ζ` at the first level, `β` afterwards; diagnostics only.
    pub multipliers: Vec<f64>,
}

/// Bases of one block over all time levels.
#[derive(Clone, Debug)]
pub struct BasisTimeline {
    pub block: usize,
    pub ids: Vec<BasisId>,
    /// Active set of `R_p^+` per time level.
    pub active: Vec<ActiveSet>,
    /// Geometry level in force per time level.
    pub geometry_levels: Vec<usize>,
    pub constraints: Vec<ConstraintSystem>,
    /// `fields[basis][level]`, aligned with `ids`.
    pub fields: Vec<Vec<BasisField>>,
    pub residuals: Vec<ResidualRecord>,
}

impl BasisTimeline {
    pub fn n_levels(&self) -> usize {
        self.active.len()
    }

    pub fn field(&self, id: BasisId, level: usize) -> Option<&BasisField> {
        let b = self.ids.iter().position(|x| *x == id)?;
        self.fields[b].get(level)
    }
}

/// One line of the constraint-residual log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub block: usize,
    pub continuum: usize,
    pub kind: BasisKind,
    pub level: usize,
    pub n_constraints: usize,
    /// `‖C φ − g‖∞`
    pub constraint_inf: f64,
    /// `max(‖g‖∞, 1)`
    pub target_scale: f64,
    /// `‖A φ + Cᵀλ − rhs‖₂ / max(‖rhs‖₂, 1)`
    pub stationarity: f64,
    pub refinements: usize,
}

impl ResidualRecord {
    pub fn constraint_ratio(&self) -> f64 {
        self.constraint_inf / self.target_scale
    }
}

/// Shared, read-only inputs of all cell problems of one layout.
pub struct CellSolver<'a> {
    pub grid: FineGrid,
    pub timeline: &'a DomainTimeline,
    pub kappa: &'a CoefficientField,
    pub layout: &'a RveLayout,
    pub time: TimeGrid,
    pub tol: f64,
}

struct LevelSystem {
    geometry_level: usize,
    active: ActiveSet,
    mass: CsrMatrix,
    operator: CsrMatrix,
    constraints: ConstraintSystem,
}

impl<'a> CellSolver<'a> {
    fn level_system(&self, p: usize, k: usize, previous: Option<&LevelSystem>) -> Result<LevelSystem> {
        let g = self.time.geometry_level(k);
        let labels = self.timeline.labels(g);
        let region = self.layout.blocks[p].oversampled;
        let ctx = || format!("(block {p}, level {k})");
        if let Some(prev) = previous {
            if prev.geometry_level == g && k > 1 {
                return Ok(LevelSystem {
                    geometry_level: g,
                    active: prev.active.clone(),
                    mass: prev.mass.clone(),
                    operator: prev.operator.clone(),
                    constraints: prev.constraints.clone(),
                });
            }
        }
        let active = active_nodes(&self.grid, labels, Some(region)).map_err(|e| e.with_context(ctx()))?;
        let mass = assemble_mass(&self.grid, &active, labels);
        let stiff = assemble_stiffness(&self.grid, &active, labels, self.kappa)?;
        let operator = if k == 0 {
            stiff
        } else {
            mass.linear_combination(1.0 / self.time.step(), &stiff, 1.0)
        };
        let constraints = build_constraints(&self.grid, self.layout, p, labels, &active).map_err(|e| match e {
            Error::NoConstraints { block, .. } => Error::NoConstraints { block, level: k },
            other => other,
        })?;
        Ok(LevelSystem {
            geometry_level: g,
            active,
            mass,
            operator,
            constraints,
        })
    }

    /// Solve the requested bases of block `p` over every time level.
    pub fn solve_block(&self, p: usize, ids: &[BasisId]) -> Result<BasisTimeline> {
        self.time.validate()?;
        let tau = self.time.step();
        let n_levels = self.time.n_levels();
        let mut out = BasisTimeline {
            block: p,
            ids: ids.to_vec(),
            active: Vec::with_capacity(n_levels),
            geometry_levels: Vec::with_capacity(n_levels),
            constraints: Vec::with_capacity(n_levels),
            fields: vec![Vec::with_capacity(n_levels); ids.len()],
            residuals: Vec::new(),
        };
        let mut prev_sys: Option<LevelSystem> = None;
        for k in 0..n_levels {
            let sys = self.level_system(p, k, prev_sys.as_ref())?;
            let ctx = format!("(block {p}, level {k})");
            let saddle = SaddleSystem::factor(&sys.operator, &sys.constraints.matrix).map_err(|e| e.with_context(ctx.clone()))?;
            for (b, id) in ids.iter().enumerate() {
                let g = sys.constraints.targets(*id);
                let rhs = if k == 0 {
                    vec![0.0; sys.active.len()]
                } else {
                    let prev = prev_sys.as_ref().expect("previous level");
                    let prev_field = &out.fields[b][k - 1].values;
                    let r = prev.active.restrict_to(prev_field, &sys.active);
                    let mut rhs = sys.mass.matvec(&r);
                    rhs.iter_mut().for_each(|v| *v /= tau);
                    rhs
                };
                let sol = saddle.solve(&rhs, &g, self.tol).map_err(|e| e.with_context(format!("{ctx} basis {id:?}")))?;
                let cx = sys.constraints.matrix.apply(&sol.x);
                let constraint_inf = cx.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let target_scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
                out.residuals.push(ResidualRecord {
                    block: p,
                    continuum: id.continuum,
                    kind: id.kind,
                    level: k,
                    n_constraints: g.len(),
                    constraint_inf,
                    target_scale,
                    stationarity: sol.stationarity_residual / norm2(&rhs).max(1.0),
                    refinements: sol.refinements,
                });
                out.fields[b].push(BasisField {
                    values: sol.x,
                    multipliers: sol.multipliers,
                });
            }
            out.active.push(sys.active.clone());
            out.geometry_levels.push(sys.geometry_level);
            out.constraints.push(sys.constraints.clone());
            prev_sys = Some(sys);
        }
        Ok(out)
    }
}

/// Constant-constraint basis of continuum `i` on block `p`.
pub fn solve_phi_constant(solver: &CellSolver<'_>, p: usize, continuum: usize) -> Result<BasisTimeline> {
    solver.solve_block(p, &[BasisId::constant(continuum)])
}

/// Linear-constraint basis of continuum `i` in direction `m` on block `p`.
pub fn solve_phi_linear(solver: &CellSolver<'_>, p: usize, continuum: usize, m: usize) -> Result<BasisTimeline> {
    solver.solve_block(p, &[BasisId::linear(continuum, m)])
}

/// Discrete norms of one block's bases at a single level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisNorms {
    pub block: usize,
    pub coarse_h: f64,
    /// Plain L2 norms over the oversampled region, per basis (order of `BasisId::all`).
    pub l2_oversampled: Vec<f64>,
    pub grad_l2_oversampled: Vec<f64>,
    /// Root-mean-square over the central RVE, `(∫_{R_p} v² / |R_p|)^{1/2}`.
    pub rms_rve: Vec<f64>,
    pub grad_rms_rve: Vec<f64>,
    pub ids: Vec<BasisId>,
}

pub fn basis_norms(grid: &FineGrid, layout: &RveLayout, labels: &[Label], basis: &BasisTimeline, level: usize) -> BasisNorms {
    let n = grid.n_cells;
    let h2 = grid.h() * grid.h();
    let block = &layout.blocks[basis.block];
    let active = &basis.active[level];
    let rve_area = block.rve.n_cells() as f64 * h2;
    let mut out = BasisNorms {
        block: basis.block,
        coarse_h: layout.coarse_h(),
        l2_oversampled: Vec::new(),
        grad_l2_oversampled: Vec::new(),
        rms_rve: Vec::new(),
        grad_rms_rve: Vec::new(),
        ids: basis.ids.clone(),
    };
    for fields in &basis.fields {
        let v = &fields[level].values;
        let (mut m_all, mut k_all, mut m_rve, mut k_rve) = (0.0, 0.0, 0.0, 0.0);
        for (cx, cy) in block.oversampled.cells() {
            if !labels[cy * n + cx].is_active() {
                continue;
            }
            let c = active.corner_values(v, cx, cy);
            let m = h2 * quad_form(&c, &MASS_REF, &c);
            let k = quad_form(&c, &STIFF_REF, &c);
            m_all += m;
            k_all += k;
            if block.rve.contains_cell(cx, cy) {
                m_rve += m;
                k_rve += k;
            }
        }
        out.l2_oversampled.push(m_all.sqrt());
        out.grad_l2_oversampled.push(k_all.sqrt());
        out.rms_rve.push((m_rve / rve_area).sqrt());
        out.grad_rms_rve.push((k_rve / rve_area).sqrt());
    }
    out
}

/// Size dependence of the basis norms between two RVE sizes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub coarse_h: [f64; 2],
    /// Median over child blocks of `rms(φ^m)_{coarse parent} / rms(φ^m)_{child}`,
    /// pooled over linear bases.
    pub linear_norm_ratio: f64,
    /// Median of `rms(∇φ_i) · H` per layout, pooled over constant bases.
    pub scaled_grad_median: [f64; 2],
    /// `max / min` of `scaled_grad_median`.
    pub scaled_grad_variation: f64,
    /// Per-basis medians: `(id, median rms per layout, median grad rms per layout)`.
    pub per_basis: Vec<(BasisId, [f64; 2], [f64; 2])>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Compare norms of a coarse layout `a` with a nested finer layout `b`
/// (every block of `b` lies inside one block of `a`).
pub fn scaling_report(layout_a: &RveLayout, norms_a: &[BasisNorms], layout_b: &RveLayout, norms_b: &[BasisNorms]) -> ScalingReport {
    let ids = BasisId::all();
    let idx = |norms: &BasisNorms, id: BasisId| norms.ids.iter().position(|x| *x == id);
    let by_block_a: std::collections::HashMap<usize, &BasisNorms> = norms_a.iter().map(|n| (n.block, n)).collect();
    let ratio = layout_b.n_coarse / layout_a.n_coarse.max(1);
    let mut linear_ratios = Vec::new();
    for nb in norms_b {
        let blk = &layout_b.blocks[nb.block];
        let parent = layout_a.block_index(blk.bx / ratio.max(1), blk.by / ratio.max(1));
        let Some(na) = by_block_a.get(&parent) else { continue };
        for id in ids.iter().filter(|id| matches!(id.kind, BasisKind::Linear(_))) {
            if let (Some(ia), Some(ib)) = (idx(na, *id), idx(nb, *id)) {
                if nb.rms_rve[ib] > 0.0 {
                    linear_ratios.push(na.rms_rve[ia] / nb.rms_rve[ib]);
                }
            }
        }
    }
    let scaled_grad = |norms: &[BasisNorms], hh: f64| {
        let vals: Vec<f64> = norms
            .iter()
            .flat_map(|n| {
                (0..N_CONTINUA).filter_map(move |i| idx(n, BasisId::constant(i)).map(|b| n.grad_rms_rve[b] * hh))
            })
            .collect();
        median(vals)
    };
    let ga = scaled_grad(norms_a, layout_a.coarse_h());
    let gb = scaled_grad(norms_b, layout_b.coarse_h());
    let per_basis = ids
        .iter()
        .map(|id| {
            let med = |norms: &[BasisNorms], grad: bool| {
                median(
                    norms
                        .iter()
                        .filter_map(|n| idx(n, *id).map(|b| if grad { n.grad_rms_rve[b] } else { n.rms_rve[b] }))
                        .collect(),
                )
            };
            (*id, [med(norms_a, false), med(norms_b, false)], [med(norms_a, true), med(norms_b, true)])
        })
        .collect();
    ScalingReport {
        coarse_h: [layout_a.coarse_h(), layout_b.coarse_h()],
        linear_norm_ratio: median(linear_ratios),
        scaled_grad_median: [ga, gb],
        scaled_grad_variation: ga.max(gb) / ga.min(gb),
        per_basis,
    }
}
