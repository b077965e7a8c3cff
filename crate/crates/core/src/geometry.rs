//! Perforated channel domains on a uniform cell grid and their shrinkage in time.
//!
//! Cells are indexed row-major, `iy * n_cells + ix`, with `ix` along x and `iy`
//! along y. A horizontal channel occupies a band of rows, a vertical channel a
//! band of columns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{CellRect, RveLayout};
use crate::N_CONTINUA;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Excluded = 0,
    Continuum1 = 1,
    Continuum2 = 2,
}

impl Label {
    /// Zero-based continuum index, `None` for the solid matrix.
    #[inline]
    pub fn continuum(self) -> Option<usize> {
        match self {
            Label::Excluded => None,
            Label::Continuum1 => Some(0),
            Label::Continuum2 => Some(1),
        }
    }

    #[inline]
    pub fn is_active(self) -> bool {
        self != Label::Excluded
    }

    pub fn from_continuum(i: usize) -> Self {
        match i {
            0 => Label::Continuum1,
            1 => Label::Continuum2,
            _ => panic!("continuum index {i} out of range"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub orientation: Orientation,
    /// Row (horizontal) or column (vertical) the band is centered on.
    pub center: usize,
    pub width: usize,
}

impl Channel {
    pub fn horizontal(center: usize, width: usize) -> Self {
        Channel {
            orientation: Orientation::Horizontal,
            center,
            width,
        }
    }

    pub fn vertical(center: usize, width: usize) -> Self {
        Channel {
            orientation: Orientation::Vertical,
            center,
            width,
        }
    }

    fn low(&self) -> i64 {
        self.center as i64 - (self.width / 2) as i64
    }

    /// Half-open band `[lo, hi)` after `removed` cells of total width loss.
    /// The low side takes the extra cell on odd totals.
    pub fn band_after(&self, removed: usize) -> (i64, i64) {
        let lo = self.low() + removed.div_ceil(2) as i64;
        let hi = self.low() + self.width as i64 - (removed / 2) as i64;
        (lo, hi)
    }

    #[inline]
    fn covers(&self, band: (i64, i64), ix: usize, iy: usize) -> bool {
        let c = match self.orientation {
            Orientation::Horizontal => iy,
            Orientation::Vertical => ix,
        } as i64;
        c >= band.0 && c < band.1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub n_cells: usize,
    /// Channels of the first continuum.
    pub thick_channels: Vec<Channel>,
    /// Channels of the second continuum.
    pub thin_channels: Vec<Channel>,
    /// Cells of width lost per time step, per continuum.
    pub shrink_rate: [usize; N_CONTINUA],
    pub n_steps: usize,
}

impl GeometryConfig {
    /// Thick vertical and thin horizontal channels, one of each per `period`
    /// cells, centered in every period.
    pub fn periodic_lattice(n_cells: usize, period: usize, widths: [usize; N_CONTINUA], shrink_rate: [usize; N_CONTINUA], n_steps: usize) -> Self {
        let period = period.max(1);
        let centers: Vec<usize> = (0..n_cells / period).map(|k| period / 2 + k * period).collect();
        GeometryConfig {
            n_cells,
            thick_channels: centers.iter().map(|&c| Channel::vertical(c, widths[0])).collect(),
            thin_channels: centers.iter().map(|&c| Channel::horizontal(c, widths[1])).collect(),
            shrink_rate,
            n_steps,
        }
    }

    pub const DEFAULT_SHRINK_RATE: [usize; N_CONTINUA] = [2, 1];

    /// Default desk lattice: on 240 cells a period of 12 (one channel of each
    /// kind inside every H = 1/20 block), thick width 9, thin width 5. Other
    /// grid sizes scale period and widths proportionally.
    pub fn default_lattice(n_cells: usize, n_steps: usize) -> Self {
        let scale = |w: usize| ((w * n_cells) as f64 / 240.0).round().max(1.0) as usize;
        GeometryConfig::periodic_lattice(n_cells, scale(12), [scale(9), scale(5)], Self::DEFAULT_SHRINK_RATE, n_steps)
    }

    pub fn channels(&self, continuum: usize) -> &[Channel] {
        match continuum {
            0 => &self.thick_channels,
            _ => &self.thin_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 {
            return Err(Error::Config("n_cells must be positive".into()));
        }
        for i in 0..N_CONTINUA {
            for (idx, ch) in self.channels(i).iter().enumerate() {
                if ch.width == 0 {
                    return Err(Error::Config(format!(
                        "{} channel {idx} has zero width",
                        continuum_name(i)
                    )));
                }
                let lo = ch.low();
                if lo < 0 || lo + ch.width as i64 > self.n_cells as i64 {
                    return Err(Error::Config(format!(
                        "{} channel {idx} (center {}, width {}) leaves the grid [0, {})",
                        continuum_name(i),
                        ch.center,
                        ch.width,
                        self.n_cells
                    )));
                }
                let remaining = ch.width as i64 - (self.n_steps * self.shrink_rate[i]) as i64;
                if remaining < 1 {
                    // first step at which the width drops below one cell
                    let step = (1..=self.n_steps)
                        .find(|&k| (ch.width as i64 - (k * self.shrink_rate[i]) as i64) < 1)
                        .unwrap_or(self.n_steps);
                    return Err(Error::ChannelCollapsed {
                        channel: idx,
                        continuum: continuum_name(i),
                        step,
                        width: ch.width as i64 - (step * self.shrink_rate[i]) as i64,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn continuum_name(i: usize) -> &'static str {
    match i {
        0 => "continuum 1",
        _ => "continuum 2",
    }
}

/// Labels of every fine cell at every geometry level `k = 0..=n_steps`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainTimeline {
    pub n_cells: usize,
    pub levels: Vec<Vec<Label>>,
}

impl DomainTimeline {
    /// Static timeline repeating one label field.
    pub fn constant(n_cells: usize, labels: Vec<Label>, n_steps: usize) -> Self {
        assert_eq!(labels.len(), n_cells * n_cells);
        DomainTimeline {
            n_cells,
            levels: vec![labels; n_steps + 1],
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn n_steps(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    #[inline]
    pub fn labels(&self, k: usize) -> &[Label] {
        &self.levels[k]
    }

    #[inline]
    pub fn label(&self, k: usize, ix: usize, iy: usize) -> Label {
        self.levels[k][iy * self.n_cells + ix]
    }

    pub fn active_cell_count(&self, k: usize) -> usize {
        self.levels[k].iter().filter(|l| l.is_active()).count()
    }

    pub fn continuum_cell_count(&self, k: usize, continuum: usize) -> usize {
        self.levels[k]
            .iter()
            .filter(|l| l.continuum() == Some(continuum))
            .count()
    }

    /// Cell counts of each continuum inside a rectangle at level `k`.
    pub fn counts_in(&self, k: usize, rect: &CellRect) -> [usize; N_CONTINUA] {
        let mut counts = [0; N_CONTINUA];
        let labels = &self.levels[k];
        for iy in rect.y0..rect.y1 {
            for ix in rect.x0..rect.x1 {
                if let Some(i) = labels[iy * self.n_cells + ix].continuum() {
                    counts[i] += 1;
                }
            }
        }
        counts
    }

    pub fn write_labels_csv(&self, k: usize, path: &Path) -> Result<()> {
        let n = self.n_cells;
        let mut out = String::with_capacity(2 * n * n);
        for iy in 0..n {
            for ix in 0..n {
                if ix > 0 {
                    out.push(',');
                }
                out.push(char::from(b'0' + self.label(k, ix, iy) as u8));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Initial labels of a channel lattice. Thick channels win where bands cross.
pub fn build_channel_lattice(config: &GeometryConfig) -> Result<DomainTimeline> {
    config.validate()?;
    let labels = lattice_labels(config, 0);
    for i in 0..N_CONTINUA {
        let target = Label::from_continuum(i);
        if !config.channels(i).is_empty() && !labels.contains(&target) {
            return Err(Error::Config(format!(
                "{} channels are completely covered by {} channels",
                continuum_name(i),
                continuum_name(1 - i)
            )));
        }
    }
    Ok(DomainTimeline {
        n_cells: config.n_cells,
        levels: vec![labels],
    })
}

fn lattice_labels(config: &GeometryConfig, step: usize) -> Vec<Label> {
    let n = config.n_cells;
    let mut labels = vec![Label::Excluded; n * n];
    // second continuum first, first continuum overwrites at crossings
    for i in (0..N_CONTINUA).rev() {
        let removed = step * config.shrink_rate[i];
        for ch in config.channels(i) {
            let band = ch.band_after(removed);
            for iy in 0..n {
                for ix in 0..n {
                    if ch.covers(band, ix, iy) {
                        labels[iy * n + ix] = Label::from_continuum(i);
                    }
                }
            }
        }
    }
    labels
}

/// Extend a single-level timeline through `config.n_steps` shrinkage steps.
///
/// A cell keeps its initial label while an eroded channel of the same
/// continuum still covers it; otherwise it becomes excluded.
pub fn evolve_domain(timeline_at_0: &DomainTimeline, config: &GeometryConfig) -> Result<DomainTimeline> {
    config.validate()?;
    if timeline_at_0.n_cells != config.n_cells || timeline_at_0.levels.is_empty() {
        return Err(Error::Config(
            "initial timeline does not match the geometry config".into(),
        ));
    }
    let n = config.n_cells;
    let initial = &timeline_at_0.levels[0];
    let mut levels = Vec::with_capacity(config.n_steps + 1);
    levels.push(initial.clone());
    for k in 1..=config.n_steps {
        let mut covered = [vec![false; n * n], vec![false; n * n]];
        for (i, mask) in covered.iter_mut().enumerate() {
            let removed = k * config.shrink_rate[i];
            for ch in config.channels(i) {
                let band = ch.band_after(removed);
                let (lo, hi) = (band.0.max(0) as usize, band.1.max(0) as usize);
                match ch.orientation {
                    Orientation::Horizontal => {
                        for iy in lo..hi.min(n) {
                            mask[iy * n..(iy + 1) * n].fill(true);
                        }
                    }
                    Orientation::Vertical => {
                        for iy in 0..n {
                            mask[iy * n + lo.min(n)..iy * n + hi.min(n)].fill(true);
                        }
                    }
                }
            }
        }
        let level = initial
            .iter()
            .enumerate()
            .map(|(c, &l)| match l.continuum() {
                Some(i) if covered[i][c] => l,
                _ => Label::Excluded,
            })
            .collect();
        levels.push(level);
    }
    Ok(DomainTimeline { n_cells: n, levels })
}

/// Build and evolve in one go.
pub fn build_timeline(config: &GeometryConfig) -> Result<DomainTimeline> {
    let t0 = build_channel_lattice(config)?;
    evolve_domain(&t0, config)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryFlag {
    pub block: usize,
    pub level: usize,
    pub continuum: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    /// `counts[block][level][continuum]`
    pub counts: Vec<Vec<[usize; N_CONTINUA]>>,
    pub flags: Vec<GeometryFlag>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Per coarse block and level, count each continuum's cells; flag empty ones.
pub fn validate_geometry(timeline: &DomainTimeline, layout: &RveLayout) -> ValidationReport {
    let mut counts = Vec::with_capacity(layout.n_blocks());
    let mut flags = Vec::new();
    for (p, block) in layout.blocks.iter().enumerate() {
        let mut per_level = Vec::with_capacity(timeline.n_levels());
        for k in 0..timeline.n_levels() {
            let c = timeline.counts_in(k, &block.rve);
            for (i, &count) in c.iter().enumerate() {
                if count == 0 {
                    flags.push(GeometryFlag {
                        block: p,
                        level: k,
                        continuum: i,
                    });
                }
            }
            per_level.push(c);
        }
        counts.push(per_level);
    }
    ValidationReport { counts, flags }
}
