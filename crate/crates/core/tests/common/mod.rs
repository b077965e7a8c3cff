//! Dense reference integrals shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use multicontinuum::fem::{ActiveSet, CoefficientField};
use multicontinuum::geometry::Label;
use multicontinuum::layout::CellRect;

pub const CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

/// `(N_a, ∂ξ N_a, ∂η N_a)` on the reference square.
pub fn shape(a: usize, xi: f64, eta: f64) -> (f64, f64, f64) {
    let (ox, oy) = CORNERS[a];
    let sx = if ox == 1 { xi } else { 1.0 - xi };
    let sy = if oy == 1 { eta } else { 1.0 - eta };
    let dx = if ox == 1 { 1.0 } else { -1.0 };
    let dy = if oy == 1 { 1.0 } else { -1.0 };
    (sx * sy, dx * sy, sx * dy)
}

/// 3×3 Gauss points and weights on `[0, 1]`.
pub fn gauss3() -> [(f64, f64); 3] {
    let d = 0.5 * (0.6f64).sqrt();
    [(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
}

/// Quadrature points of one cell: `(x, y, weight, [(N_a, ∂x N_a, ∂y N_a)])`.
pub fn cell_points(cx: usize, cy: usize, h: f64) -> Vec<(f64, f64, f64, [(f64, f64, f64); 4])> {
    let mut out = Vec::new();
    for (xi, wx) in gauss3() {
        for (eta, wy) in gauss3() {
            let s = std::array::from_fn(|a| {
                let (v, dx, dy) = shape(a, xi, eta);
                (v, dx / h, dy / h)
            });
            out.push(((cx as f64 + xi) * h, (cy as f64 + eta) * h, wx * wy * h * h, s));
        }
    }
    out
}

/// Active nodes by the rule: interior of the unit square, some incident cell
/// in `region` is active, none is excluded.
pub fn reference_nodes(n: usize, labels: &[Label], region: CellRect) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in region.y0.max(1)..=region.y1.min(n - 1) {
        for i in region.x0.max(1)..=region.x1.min(n - 1) {
            let cells = [(i - 1, j - 1), (i, j - 1), (i - 1, j), (i, j)];
            let inside: Vec<Label> = cells
                .iter()
                .filter(|&&(x, y)| region.contains_cell(x, y))
                .map(|&(x, y)| labels[y * n + x])
                .collect();
            if inside.iter().any(|l| l.is_active()) && inside.iter().all(|l| l.is_active()) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Dense mass and stiffness over the active cells of `region`, indexed like `active`.
pub fn reference_matrices(
    n: usize,
    labels: &[Label],
    kappa: &CoefficientField,
    active: &ActiveSet,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let h = 1.0 / n as f64;
    let m = active.len();
    let mut mass = vec![vec![0.0; m]; m];
    let mut stiff = vec![vec![0.0; m]; m];
    for (cx, cy) in active.region.cells() {
        if !labels[cy * n + cx].is_active() {
            continue;
        }
        let dofs: Vec<Option<usize>> = CORNERS.iter().map(|&(ox, oy)| active.dense(cx + ox, cy + oy)).collect();
        let k = kappa.at(cx, cy);
        for (_, _, w, s) in cell_points(cx, cy, h) {
            for a in 0..4 {
                for b in 0..4 {
                    if let (Some(da), Some(db)) = (dofs[a], dofs[b]) {
                        mass[da][db] += w * s[a].0 * s[b].0;
                        stiff[da][db] += w * k * (s[a].1 * s[b].1 + s[a].2 * s[b].2);
                    }
                }
            }
        }
    }
    (mass, stiff)
}

/// `∫ g v_h` over `cells`, with `v_h` the bilinear interpolant of `values` on `active`.
pub fn integrate(
    n: usize,
    active: &ActiveSet,
    values: &[f64],
    cells: impl Iterator<Item = (usize, usize)>,
    g: impl Fn(f64, f64) -> f64,
) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = 0.0;
    for (cx, cy) in cells {
        let c = active.corner_values(values, cx, cy);
        for (x, y, w, sh) in cell_points(cx, cy, h) {
            let v: f64 = (0..4).map(|a| sh[a].0 * c[a]).sum();
            s += w * g(x, y) * v;
        }
    }
    s
}

/// `∫ κ ∇u·∇v` over `cells`.
pub fn energy(
    n: usize,
    kappa: &CoefficientField,
    active: &ActiveSet,
    u: &[f64],
    v: &[f64],
    cells: impl Iterator<Item = (usize, usize)>,
) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = 0.0;
    for (cx, cy) in cells {
        let cu = active.corner_values(u, cx, cy);
        let cv = active.corner_values(v, cx, cy);
        let k = kappa.at(cx, cy);
        for (_, _, w, sh) in cell_points(cx, cy, h) {
            let gu = (0..4).fold((0.0, 0.0), |g, a| (g.0 + sh[a].1 * cu[a], g.1 + sh[a].2 * cu[a]));
            let gv = (0..4).fold((0.0, 0.0), |g, a| (g.0 + sh[a].1 * cv[a], g.1 + sh[a].2 * cv[a]));
            s += w * k * (gu.0 * gv.0 + gu.1 * gv.1);
        }
    }
    s
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn index_of(nodes: &[(usize, usize)]) -> HashMap<(usize, usize), usize> {
    nodes.iter().enumerate().map(|(d, &v)| (v, d)).collect()
}
