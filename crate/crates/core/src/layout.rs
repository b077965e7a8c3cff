//! Coarse blocks, representative volumes and their oversampled neighbourhoods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open rectangle of fine cells `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellRect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        debug_assert!(x0 <= x1 && y0 <= y1);
        CellRect { x0, y0, x1, y1 }
    }

    pub fn square(n: usize) -> Self {
        CellRect::new(0, 0, n, n)
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn n_cells(&self) -> usize {
        self.width() * self.height()
    }

    #[inline]
    pub fn contains_cell(&self, ix: usize, iy: usize) -> bool {
        ix >= self.x0 && ix < self.x1 && iy >= self.y0 && iy < self.y1
    }

    pub fn contains_rect(&self, other: &CellRect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |iy| (self.x0..self.x1).map(move |ix| (ix, iy)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RveBlock {
    /// Block coordinates on the coarse grid.
    pub bx: usize,
    pub by: usize,
    /// The coarse block, which doubles as its RVE.
    pub rve: CellRect,
    /// RVE padded by the oversampling layers, clipped to the domain.
    pub oversampled: CellRect,
    /// Indices (into `RveLayout::blocks`) of the sub-RVEs covering `oversampled`,
    /// row-major.
    pub sub_rves: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RveLayout {
    pub n_fine: usize,
    /// Coarse blocks per side, `H = 1 / n_coarse`.
    pub n_coarse: usize,
    /// Fine cells per coarse block side.
    pub cells_per_block: usize,
    pub layers: usize,
    pub blocks: Vec<RveBlock>,
}

impl RveLayout {
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.n_coarse as f64
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_index(&self, bx: usize, by: usize) -> usize {
        by * self.n_coarse + bx
    }

    /// Ratio `|K_p| / |R_p|` used to localize integrals; one when the block is its RVE.
    pub fn localization_weight(&self, _p: usize) -> f64 {
        1.0
    }
}

/// Partition an `n_fine`² grid into blocks of size `H` and attach oversampled
/// regions of `layers` coarse blocks.
pub fn build_rve_layout(coarse_h: f64, layers: usize, n_fine: usize) -> Result<RveLayout> {
    if !(coarse_h > 0.0 && coarse_h <= 1.0) {
        return Err(Error::Config(format!("coarse size H = {coarse_h} must lie in (0, 1]")));
    }
    let n_coarse_f = 1.0 / coarse_h;
    let n_coarse = n_coarse_f.round() as usize;
    if (n_coarse_f - n_coarse as f64).abs() > 1e-9 * n_coarse_f || n_coarse == 0 {
        return Err(Error::Config(format!("1/H = {n_coarse_f} is not an integer")));
    }
    if n_fine % n_coarse != 0 {
        return Err(Error::Config(format!(
            "H = 1/{n_coarse} is not a multiple of h = 1/{n_fine}"
        )));
    }
    let cpb = n_fine / n_coarse;
    let mut blocks = Vec::with_capacity(n_coarse * n_coarse);
    for by in 0..n_coarse {
        for bx in 0..n_coarse {
            let rve = CellRect::new(bx * cpb, by * cpb, (bx + 1) * cpb, (by + 1) * cpb);
            let lx = bx.saturating_sub(layers);
            let ly = by.saturating_sub(layers);
            let hx = (bx + layers + 1).min(n_coarse);
            let hy = (by + layers + 1).min(n_coarse);
            let oversampled = CellRect::new(lx * cpb, ly * cpb, hx * cpb, hy * cpb);
            let sub_rves = (ly..hy)
                .flat_map(|qy| (lx..hx).map(move |qx| qy * n_coarse + qx))
                .collect();
            blocks.push(RveBlock {
                bx,
                by,
                rve,
                oversampled,
                sub_rves,
            });
        }
    }
    Ok(RveLayout {
        n_fine,
        n_coarse,
        cells_per_block: cpb,
        layers,
        blocks,
    })
}
