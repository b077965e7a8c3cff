//! Bilinear (Q1) elements on the uniform fine grid restricted to the active domain.
//!
//! Nodes are `(i, j)` with `0 ≤ i, j ≤ n_cells`; cell `(cx, cy)` has local
//! corners `0: (cx, cy)`, `1: (cx+1, cy)`, `2: (cx+1, cy+1)`, `3: (cx, cy+1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Label;
use crate::layout::CellRect;
use crate::sparse::CsrMatrix;

/// Q1 mass matrix of the unit square.
pub const MASS_REF: [[f64; 4]; 4] = [
    [4.0 / 36.0, 2.0 / 36.0, 1.0 / 36.0, 2.0 / 36.0],
    [2.0 / 36.0, 4.0 / 36.0, 2.0 / 36.0, 1.0 / 36.0],
    [1.0 / 36.0, 2.0 / 36.0, 4.0 / 36.0, 2.0 / 36.0],
    [2.0 / 36.0, 1.0 / 36.0, 2.0 / 36.0, 4.0 / 36.0],
];

/// Q1 Laplacian stiffness on any square (scale-free in 2D).
pub const STIFF_REF: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

/// `GRAD_REF[m][n][a][b] = ∫ ∂_m N_a ∂_n N_b` on any square.
pub const GRAD_REF: [[[[f64; 4]; 4]; 2]; 2] = {
    let s = [-1.0, 1.0, 1.0, -1.0]; // sign of ∂x N
    let t = [-1.0, -1.0, 1.0, 1.0]; // sign of ∂y N
    let xx = [
        [2.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 1.0 / 6.0],
        [-2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0, -1.0 / 6.0],
        [-1.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0, -2.0 / 6.0],
        [1.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, 2.0 / 6.0],
    ];
    let yy = [
        [2.0 / 6.0, 1.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
        [1.0 / 6.0, 2.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
        [-1.0 / 6.0, -2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0],
        [-2.0 / 6.0, -1.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0],
    ];
    let mut xy = [[0.0; 4]; 4];
    let mut yx = [[0.0; 4]; 4];
    let mut a = 0;
    while a < 4 {
        let mut b = 0;
        while b < 4 {
            xy[a][b] = s[a] * t[b] / 4.0;
            yx[a][b] = t[a] * s[b] / 4.0;
            b += 1;
        }
        a += 1;
    }
    [[xx, xy], [yx, yy]]
};

/// 2×2 Gauss points on the unit interval.
pub const GAUSS2: [f64; 2] = [0.5 - 0.288_675_134_594_812_9, 0.5 + 0.288_675_134_594_812_9];

#[inline]
pub fn q1_shape(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineGrid {
    pub n_cells: usize,
}

impl FineGrid {
    pub fn new(n_cells: usize) -> Self {
        FineGrid { n_cells }
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    pub fn n_nodes(&self) -> usize {
        (self.n_cells + 1) * (self.n_cells + 1)
    }

    #[inline]
    pub fn cell_index(&self, cx: usize, cy: usize) -> usize {
        cy * self.n_cells + cx
    }

    #[inline]
    pub fn cell_center(&self, cx: usize, cy: usize) -> (f64, f64) {
        let h = self.h();
        ((cx as f64 + 0.5) * h, (cy as f64 + 0.5) * h)
    }

    #[inline]
    pub fn node_coords(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.h();
        (i as f64 * h, j as f64 * h)
    }
}

/// Degrees of freedom interior to the current domain inside a cell rectangle.
///
/// Dense indices follow row-major node order, which keeps the stiffness
/// envelope at roughly one grid row of active nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    pub region: CellRect,
    local: Vec<u32>,
    nodes: Vec<(u32, u32)>,
}

const INACTIVE: u32 = u32::MAX;

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn dense(&self, i: usize, j: usize) -> Option<usize> {
        let r = &self.region;
        if i < r.x0 || i > r.x1 || j < r.y0 || j > r.y1 {
            return None;
        }
        let w = r.width() + 1;
        let d = self.local[(j - r.y0) * w + (i - r.x0)];
        (d != INACTIVE).then_some(d as usize)
    }

    #[inline]
    pub fn node(&self, d: usize) -> (usize, usize) {
        let (i, j) = self.nodes[d];
        (i as usize, j as usize)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.iter().map(|&(i, j)| (i as usize, j as usize))
    }

    /// Dense indices of the four corners of a cell (`None` where inactive).
    #[inline]
    pub fn corners(&self, cx: usize, cy: usize) -> [Option<usize>; 4] {
        [
            self.dense(cx, cy),
            self.dense(cx + 1, cy),
            self.dense(cx + 1, cy + 1),
            self.dense(cx, cy + 1),
        ]
    }

    #[inline]
    pub fn corner_values(&self, values: &[f64], cx: usize, cy: usize) -> [f64; 4] {
        self.corners(cx, cy).map(|d| d.map_or(0.0, |d| values[d]))
    }

    /// Carry values onto another active set; nodes missing from `self` get zero.
    pub fn restrict_to(&self, values: &[f64], target: &ActiveSet) -> Vec<f64> {
        target
            .nodes()
            .map(|(i, j)| self.dense(i, j).map_or(0.0, |d| values[d]))
            .collect()
    }

    /// Nodal values on the full `(n+1)²` node grid of the region, zero where inactive.
    pub fn to_node_grid(&self, values: &[f64]) -> Vec<f64> {
        let w = self.region.width() + 1;
        let mut out = vec![0.0; w * (self.region.height() + 1)];
        for (d, &(i, j)) in self.nodes.iter().enumerate() {
            out[(j as usize - self.region.y0) * w + (i as usize - self.region.x0)] = values[d];
        }
        out
    }
}

/// Active nodes of `labels` restricted to `subregion` (whole grid when `None`).
///
/// A node is active when it is off the outer boundary of the unit square, has
/// at least one non-excluded incident cell inside the region, and touches no
/// excluded cell inside the region. Nodes on the artificial edge of a
/// subregion therefore stay active unless a wall or the outer boundary pins them.
pub fn active_nodes(grid: &FineGrid, labels: &[Label], subregion: Option<CellRect>) -> Result<ActiveSet> {
    let n = grid.n_cells;
    assert_eq!(labels.len(), n * n);
    let region = subregion.unwrap_or(CellRect::square(n));
    assert!(region.x1 <= n && region.y1 <= n, "subregion outside the grid");
    let w = region.width() + 1;
    let hgt = region.height() + 1;
    let mut local = vec![INACTIVE; w * hgt];
    let mut nodes = Vec::new();
    for j in region.y0..=region.y1 {
        for i in region.x0..=region.x1 {
            if i == 0 || j == 0 || i == n || j == n {
                continue;
            }
            let mut any_active = false;
            let mut touches_wall = false;
            for (cx, cy) in [(i - 1, j - 1), (i, j - 1), (i - 1, j), (i, j)] {
                if !region.contains_cell(cx, cy) {
                    continue;
                }
                if labels[cy * n + cx].is_active() {
                    any_active = true;
                } else {
                    touches_wall = true;
                }
            }
            if any_active && !touches_wall {
                local[(j - region.y0) * w + (i - region.x0)] = nodes.len() as u32;
                nodes.push((i as u32, j as u32));
            }
        }
    }
    if nodes.is_empty() {
        return Err(Error::EmptyActiveSet {
            context: format!(" in region {region:?}"),
        });
    }
    Ok(ActiveSet { region, local, nodes })
}

/// Per-cell conductivity `κ = κ1(label) · κ2(cell center)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    pub n_cells: usize,
    /// Zero on excluded cells of the initial geometry.
    pub values: Vec<f64>,
}

impl CoefficientField {
    pub fn new(
        grid: &FineGrid,
        labels0: &[Label],
        contrast: [f64; 2],
        kappa2: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let n = grid.n_cells;
        let mut values = vec![0.0; n * n];
        for cy in 0..n {
            for cx in 0..n {
                let c = cy * n + cx;
                if let Some(i) = labels0[c].continuum() {
                    let (x, y) = grid.cell_center(cx, cy);
                    let k = contrast[i] * kappa2(x, y);
                    if !(k > 0.0) {
                        return Err(Error::Config(format!(
                            "conductivity {k} at cell ({cx}, {cy}) is not positive"
                        )));
                    }
                    values[c] = k;
                }
            }
        }
        Ok(CoefficientField { n_cells: n, values })
    }

    pub fn uniform(grid: &FineGrid, labels0: &[Label], value: f64) -> Result<Self> {
        Self::new(grid, labels0, [value, value], |_, _| 1.0)
    }

    #[inline]
    pub fn at(&self, cx: usize, cy: usize) -> f64 {
        self.values[cy * self.n_cells + cx]
    }
}

/// Row-major 9-point pattern over the active nodes.
fn stencil_pattern(active: &ActiveSet) -> (Vec<usize>, Vec<usize>) {
    let mut row_ptr = Vec::with_capacity(active.len() + 1);
    let mut cols = Vec::with_capacity(9 * active.len());
    row_ptr.push(0);
    for (i, j) in active.nodes() {
        for dj in [-1i64, 0, 1] {
            for di in [-1i64, 0, 1] {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 {
                    continue;
                }
                if let Some(d) = active.dense(ni as usize, nj as usize) {
                    cols.push(d);
                }
            }
        }
        row_ptr.push(cols.len());
    }
    (row_ptr, cols)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum RowOrder {
    Forward,
    #[cfg_attr(not(test), allow(dead_code))]
    Reverse,
}

/// Gather-style assembly: every entry sums its shared cells in increasing cell
/// index, so the result is independent of the order rows are visited and
/// exactly symmetric.
pub(crate) fn assemble_operator(
    grid: &FineGrid,
    active: &ActiveSet,
    labels: &[Label],
    weight: impl Fn(usize, usize) -> f64,
    elem: &[[f64; 4]; 4],
    order: RowOrder,
) -> CsrMatrix {
    let n = grid.n_cells;
    let (row_ptr, cols) = stencil_pattern(active);
    let mut vals = vec![0.0; cols.len()];
    let region = active.region;
    let visit = |d: usize, vals: &mut [f64]| {
        let (i, j) = active.node(d);
        let row_cols = &cols[row_ptr[d]..row_ptr[d + 1]];
        let row_vals = &mut vals[row_ptr[d]..row_ptr[d + 1]];
        // incident cells in increasing cell index; `la` is this node's corner
        let incident = [(i as i64 - 1, j as i64 - 1, 2usize), (i as i64, j as i64 - 1, 3), (i as i64 - 1, j as i64, 1), (i as i64, j as i64, 0)];
        for (cx, cy, la) in incident {
            if cx < 0 || cy < 0 {
                continue;
            }
            let (cx, cy) = (cx as usize, cy as usize);
            if cx >= n || cy >= n || !region.contains_cell(cx, cy) || !labels[cy * n + cx].is_active() {
                continue;
            }
            let wgt = weight(cx, cy);
            for (lb, nb) in active.corners(cx, cy).into_iter().enumerate() {
                if let Some(nb) = nb {
                    let slot = row_cols.iter().position(|&c| c == nb).expect("stencil slot");
                    row_vals[slot] += wgt * elem[la][lb];
                }
            }
        }
    };
    match order {
        RowOrder::Forward => (0..active.len()).for_each(|d| visit(d, &mut vals)),
        RowOrder::Reverse => (0..active.len()).rev().for_each(|d| visit(d, &mut vals)),
    }
    CsrMatrix::from_parts(active.len(), row_ptr, cols, vals)
}

/// Consistent Q1 mass matrix over non-excluded cells.
pub fn assemble_mass(grid: &FineGrid, active: &ActiveSet, labels: &[Label]) -> CsrMatrix {
    let h2 = grid.h() * grid.h();
    assemble_operator(grid, active, labels, |_, _| h2, &MASS_REF, RowOrder::Forward)
}

/// Q1 stiffness with cellwise-constant conductivity.
pub fn assemble_stiffness(
    grid: &FineGrid,
    active: &ActiveSet,
    labels: &[Label],
    kappa: &CoefficientField,
) -> Result<CsrMatrix> {
    check_kappa(grid, active, labels, kappa)?;
    Ok(assemble_operator(
        grid,
        active,
        labels,
        |cx, cy| kappa.at(cx, cy),
        &STIFF_REF,
        RowOrder::Forward,
    ))
}

fn check_kappa(grid: &FineGrid, active: &ActiveSet, labels: &[Label], kappa: &CoefficientField) -> Result<()> {
    let n = grid.n_cells;
    for (cx, cy) in active.region.cells() {
        if labels[cy * n + cx].is_active() && !(kappa.at(cx, cy) > 0.0) {
            return Err(Error::Config(format!(
                "non-positive conductivity {} on active cell ({cx}, {cy})",
                kappa.at(cx, cy)
            )));
        }
    }
    Ok(())
}

/// `b[a] = Σ ∫_cell g N_a` with 2×2 Gauss points per non-excluded cell.
pub fn assemble_load(grid: &FineGrid, active: &ActiveSet, labels: &[Label], g: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = grid.n_cells;
    let h = grid.h();
    let wq = h * h / 4.0;
    let mut b = vec![0.0; active.len()];
    for (cx, cy) in active.region.cells() {
        if !labels[cy * n + cx].is_active() {
            continue;
        }
        let corners = active.corners(cx, cy);
        if corners.iter().all(Option::is_none) {
            continue;
        }
        let mut local = [0.0; 4];
        for &eta in &GAUSS2 {
            for &xi in &GAUSS2 {
                let gv = g((cx as f64 + xi) * h, (cy as f64 + eta) * h) * wq;
                let shp = q1_shape(xi, eta);
                for a in 0..4 {
                    local[a] += gv * shp[a];
                }
            }
        }
        for (a, d) in corners.into_iter().enumerate() {
            if let Some(d) = d {
                b[d] += local[a];
            }
        }
    }
    b
}

/// `vᵀ E w` for 4-vectors.
#[inline]
pub fn quad_form(v: &[f64; 4], e: &[[f64; 4]; 4], w: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for a in 0..4 {
        let mut r = 0.0;
        for b in 0..4 {
            r += e[a][b] * w[b];
        }
        s += v[a] * r;
    }
    s
}

/// `∫_cell g v` for a bilinear `v` given by corner values, 2×2 Gauss.
#[inline]
pub fn cell_load(grid: &FineGrid, cx: usize, cy: usize, v: &[f64; 4], g: &dyn Fn(f64, f64) -> f64) -> f64 {
    let h = grid.h();
    let mut s = 0.0;
    for &eta in &GAUSS2 {
        for &xi in &GAUSS2 {
            let shp = q1_shape(xi, eta);
            let vv: f64 = (0..4).map(|a| shp[a] * v[a]).sum();
            s += g((cx as f64 + xi) * h, (cy as f64 + eta) * h) * vv;
        }
    }
    s * h * h / 4.0
}
