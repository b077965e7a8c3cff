//! Continuum-wise block-average errors between the fine and macro solutions.
//!
//! ```text
//! e2⁽ⁱ⁾ = Σ_p |⟨U_i⟩_{K_p} − ⟨u⟩_{K_p ∩ Ω_i}|² / Σ_p |⟨u⟩_{K_p ∩ Ω_i}|²
//! ```
//!
//! Blocks without continuum `i` are left out of both sums.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ActiveSet, FineGrid};
use crate::fine::FineTrajectory;
use crate::geometry::{DomainTimeline, Label};
use crate::layout::{CellRect, RveLayout};
use crate::upscale::{CoarseGrid, MacroTrajectory};
use crate::N_CONTINUA;

/// Mean of `u` over the cells of continuum `i` inside `block`; `None` when there are none.
pub fn block_average_fine(
    grid: &FineGrid,
    active: &ActiveSet,
    u: &[f64],
    labels: &[Label],
    block: &CellRect,
    continuum: usize,
) -> Option<f64> {
    let n = grid.n_cells;
    let target = Label::from_continuum(continuum);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (cx, cy) in block.cells() {
        if labels[cy * n + cx] != target {
            continue;
        }
        let c = active.corner_values(u, cx, cy);
        sum += 0.25 * (c[0] + c[1] + c[2] + c[3]);
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Mean of the bilinear `U_i` over block `(bx, by)`.
pub fn block_average_macro(grid: &CoarseGrid, u: &[f64], bx: usize, by: usize, continuum: usize) -> f64 {
    let corners = [(bx, by), (bx + 1, by), (bx + 1, by + 1), (bx, by + 1)];
    corners
        .iter()
        .map(|&(ix, iy)| grid.dof(ix, iy, continuum).map_or(0.0, |d| u[d]))
        .sum::<f64>()
        / 4.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockContribution {
    pub block: usize,
    pub fine: f64,
    pub macro_: f64,
}

/// `Σ (macro − fine)² / Σ fine²`, `None` when the denominator vanishes.
pub fn ratio_of_sums(contributions: &[BlockContribution]) -> Option<f64> {
    let num: f64 = contributions.iter().map(|c| (c.macro_ - c.fine).powi(2)).sum();
    let den: f64 = contributions.iter().map(|c| c.fine * c.fine).sum();
    (den > 0.0).then(|| num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelErrors {
    pub time: f64,
    /// Ratio of summed squares as written, per continuum.
    pub e2: [Option<f64>; N_CONTINUA],
    pub contributions: [Vec<BlockContribution>; N_CONTINUA],
    /// Blocks without the continuum at this level.
    pub skipped: [Vec<usize>; N_CONTINUA],
}

impl LevelErrors {
    /// Square root of the ratio.
    pub fn e2_sqrt(&self, i: usize) -> Option<f64> {
        self.e2[i].map(f64::sqrt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub coarse_h: f64,
    pub levels: Vec<LevelErrors>,
    pub fine_dofs: Vec<usize>,
    pub coarse_dofs: usize,
    pub fine_wall_time_s: f64,
    pub macro_wall_time_s: f64,
}

impl ErrorReport {
    /// `t,e2_1,e2_2,sqrt_e2_1,sqrt_e2_2`; undefined entries print as `nan`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for i in 1..=N_CONTINUA {
            write!(s, ",e2_{i}").expect("write to string");
        }
        for i in 1..=N_CONTINUA {
            write!(s, ",sqrt_e2_{i}").expect("write to string");
        }
        s.push('\n');
        let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:e}"));
        for l in &self.levels {
            write!(s, "{}", l.time).expect("write to string");
            for i in 0..N_CONTINUA {
                write!(s, ",{}", fmt(l.e2[i])).expect("write to string");
            }
            for i in 0..N_CONTINUA {
                write!(s, ",{}", fmt(l.e2_sqrt(i))).expect("write to string");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &self.to_csv())
    }

    /// Ratio for continuum `i` at the last level.
    pub fn final_e2(&self, i: usize) -> Option<f64> {
        self.levels.last().and_then(|l| l.e2[i])
    }
}

pub fn relative_errors(fine: &FineTrajectory, macro_: &MacroTrajectory, layout: &RveLayout, timeline: &DomainTimeline) -> Result<ErrorReport> {
    if fine.levels.len() != macro_.levels.len() {
        return Err(Error::Data(format!(
            "fine trajectory has {} levels, macro has {}",
            fine.levels.len(),
            macro_.levels.len()
        )));
    }
    if macro_.grid.n != layout.n_coarse {
        return Err(Error::Data("macro grid does not match the layout".into()));
    }
    let mut levels = Vec::with_capacity(fine.levels.len());
    for (k, fl) in fine.levels.iter().enumerate() {
        if (fl.time - macro_.time.time(k)).abs() > 1e-12 * fl.time.abs().max(1.0) {
            return Err(Error::Data(format!("time mismatch at level {k}")));
        }
        let labels = timeline.labels(fl.geometry_level);
        let mut contributions: [Vec<BlockContribution>; N_CONTINUA] = Default::default();
        let mut skipped: [Vec<usize>; N_CONTINUA] = Default::default();
        for (p, block) in layout.blocks.iter().enumerate() {
            for i in 0..N_CONTINUA {
                match block_average_fine(&fine.grid, &fl.active, &fl.values, labels, &block.rve, i) {
                    Some(avg) => contributions[i].push(BlockContribution {
                        block: p,
                        fine: avg,
                        macro_: block_average_macro(&macro_.grid, &macro_.levels[k], block.bx, block.by, i),
                    }),
                    None => skipped[i].push(p),
                }
            }
        }
        let e2 = std::array::from_fn(|i| ratio_of_sums(&contributions[i]));
        levels.push(LevelErrors {
            time: fl.time,
            e2,
            contributions,
            skipped,
        });
    }
    Ok(ErrorReport {
        coarse_h: layout.coarse_h(),
        levels,
        fine_dofs: fine.dof_counts(),
        coarse_dofs: macro_.coarse_dofs(),
        fine_wall_time_s: fine.levels.iter().map(|l| l.wall_time_s).sum(),
        macro_wall_time_s: macro_.wall_time_s,
    })
}
