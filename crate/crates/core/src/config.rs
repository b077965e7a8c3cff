//! Run configuration (TOML).
//!
//! Every section and key is optional; unknown keys are rejected.
//!
//! ```toml
//! [geometry]
//! n_cells = 240
//! shrink_rate = [2, 1]
//! # thick_channels = [{ orientation = "vertical", center = 6, width = 9 }, ...]
//!
//! [coefficients]
//! example = 1            # or kappa2 = "constant" | "example2" | "example3"
//! contrast = [1.0, 0.01]
//!
//! [time]
//! n_steps = 3
//! tau = 1.0
//!
//! [multiscale]
//! H = [0.1, 0.05]
//! dtensor = true
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Channel, GeometryConfig};
use crate::problem::{Kappa2, ProblemData, TimeGrid, INITIAL_AMPLITUDE, SOURCE_AMPLITUDE};
use crate::upscale::{MacroOptions, TimeDerivative};
use crate::N_CONTINUA;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Geometry,
    Fine,
    Cells,
    Upscale,
    Macro,
    Errors,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Geometry, Stage::Fine, Stage::Cells, Stage::Upscale, Stage::Macro, Stage::Errors];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Geometry => "geometry",
            Stage::Fine => "fine",
            Stage::Cells => "cells",
            Stage::Upscale => "upscale",
            Stage::Macro => "macro",
            Stage::Errors => "errors",
        }
    }

    /// Stages this one reads from.
    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Geometry => &[],
            Stage::Fine => &[Stage::Geometry],
            Stage::Cells => &[Stage::Geometry],
            Stage::Upscale => &[Stage::Cells],
            Stage::Macro => &[Stage::Upscale],
            Stage::Errors => &[Stage::Fine, Stage::Macro],
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// `stages` plus everything they depend on, in pipeline order.
pub fn with_dependencies(stages: &[Stage]) -> Vec<Stage> {
    let mut need = [false; 6];
    fn mark(s: Stage, need: &mut [bool; 6]) {
        need[s as usize] = true;
        for &d in s.dependencies() {
            mark(d, need);
        }
    }
    for &s in stages {
        mark(s, &mut need);
    }
    Stage::ALL.into_iter().filter(|s| need[*s as usize]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub n_cells: usize,
    pub shrink_rate: [usize; N_CONTINUA],
    /// Omitted: the default lattice for `n_cells`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thick_channels: Option<Vec<Channel>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thin_channels: Option<Vec<Channel>>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            n_cells: 240,
            shrink_rate: GeometryConfig::DEFAULT_SHRINK_RATE,
            thick_channels: None,
            thin_channels: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientSection {
    pub example: u8,
    /// Overrides the factor implied by `example`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa2: Option<Kappa2>,
    pub contrast: [f64; N_CONTINUA],
    pub source_amplitude: f64,
    pub initial_amplitude: f64,
}

impl Default for CoefficientSection {
    fn default() -> Self {
        CoefficientSection {
            example: 1,
            kappa2: None,
            contrast: [1.0, 1e-2],
            source_amplitude: SOURCE_AMPLITUDE,
            initial_amplitude: INITIAL_AMPLITUDE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub n_steps: usize,
    pub tau: f64,
    /// Must equal `n_steps · tau` when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_time: Option<f64>,
    pub substeps: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            n_steps: 3,
            tau: 1.0,
            final_time: None,
            substeps: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiscaleSection {
    #[serde(rename = "H")]
    pub coarse_h: Vec<f64>,
    /// Oversampling layers per entry of `H`; default `round(0.2 / H)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    pub dtensor: bool,
    pub time_derivative: TimeDerivative,
}

impl Default for MultiscaleSection {
    fn default() -> Self {
        MultiscaleSection {
            coarse_h: vec![0.1, 0.05],
            layers: None,
            dtensor: true,
            time_derivative: TimeDerivative::Transported,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Relative residual bound for every linear and saddle-point solve.
    pub tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub stages: Vec<Stage>,
    /// Per-level CSV grids of labels and solutions.
    pub snapshots: bool,
    pub heatmaps: bool,
    /// One CSV per block and level.
    pub coefficient_dumps: bool,
    /// Blocks whose first-level bases are written as CSV grids.
    pub basis_blocks: Vec<usize>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            stages: Stage::ALL.to_vec(),
            snapshots: true,
            heatmaps: true,
            coefficient_dumps: true,
            basis_blocks: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub coefficients: CoefficientSection,
    pub time: TimeSection,
    pub multiscale: MultiscaleSection,
    pub solver: SolverSection,
    pub output: OutputSection,
}

/// Command-line overrides applied on top of a file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub stages: Option<Vec<Stage>>,
    /// Fine mesh size `h`.
    pub fine_h: Option<f64>,
    pub coarse_h: Option<Vec<f64>>,
}

fn inverse_integer(h: f64, what: &str) -> Result<usize> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Config(format!("{what} = {h} must lie in (0, 1]")));
    }
    let n = (1.0 / h).round();
    if (1.0 / h - n).abs() > 1e-9 * n {
        return Err(Error::Config(format!("1/{what} = {} is not an integer", 1.0 / h)));
    }
    Ok(n as usize)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolved()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(st) = &o.stages {
            self.output.stages = st.clone();
        }
        if let Some(h) = o.fine_h {
            let n = inverse_integer(h, "h")?;
            if n != self.geometry.n_cells && (self.geometry.thick_channels.is_some() || self.geometry.thin_channels.is_some()) {
                return Err(Error::Config("--h cannot rescale explicitly listed channels".into()));
            }
            self.geometry.n_cells = n;
        }
        if let Some(hs) = &o.coarse_h {
            self.multiscale.coarse_h = hs.clone();
            self.multiscale.layers = None;
        }
        *self = self.clone().resolved()?;
        Ok(())
    }

    /// Fill implied values and check consistency.
    pub fn resolved(mut self) -> Result<Self> {
        let c = &mut self.coefficients;
        let implied = Kappa2::for_example(c.example)?;
        if c.kappa2.is_none() {
            c.kappa2 = Some(implied);
        }
        if c.contrast.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
            return Err(Error::Config(format!("contrast {:?} must be positive", c.contrast)));
        }
        self.time_grid().validate()?;
        let t = &mut self.time;
        let total = t.n_steps as f64 * t.tau;
        match t.final_time {
            Some(ft) if (ft - total).abs() > 1e-12 * total.max(1.0) => {
                return Err(Error::Config(format!("final_time {ft} differs from n_steps · tau = {total}")));
            }
            _ => t.final_time = Some(total),
        }
        if self.multiscale.coarse_h.is_empty() {
            return Err(Error::Config("multiscale.H must list at least one coarse size".into()));
        }
        let n = self.geometry.n_cells;
        for &h in &self.multiscale.coarse_h {
            let m = inverse_integer(h, "H")?;
            if n % m != 0 {
                return Err(Error::Config(format!("H = 1/{m} does not divide the {n}-cell grid")));
            }
        }
        match &self.multiscale.layers {
            Some(l) if l.len() != self.multiscale.coarse_h.len() => {
                return Err(Error::Config(format!(
                    "{} layer counts given for {} coarse sizes",
                    l.len(),
                    self.multiscale.coarse_h.len()
                )));
            }
            Some(_) => {}
            None => self.multiscale.layers = Some(self.multiscale.coarse_h.iter().map(|&h| default_layers(h)).collect()),
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("solver.tol must be positive".into()));
        }
        self.geometry_config().validate()?;
        Ok(self)
    }

    pub fn geometry_config(&self) -> GeometryConfig {
        let g = &self.geometry;
        let mut cfg = GeometryConfig::default_lattice(g.n_cells, self.time.n_steps);
        cfg.shrink_rate = g.shrink_rate;
        if let Some(c) = &g.thick_channels {
            cfg.thick_channels = c.clone();
        }
        if let Some(c) = &g.thin_channels {
            cfg.thin_channels = c.clone();
        }
        cfg
    }

    pub fn problem(&self) -> ProblemData {
        let c = &self.coefficients;
        ProblemData {
            contrast: c.contrast,
            kappa2: c.kappa2.unwrap_or(Kappa2::Constant),
            source_amplitude: c.source_amplitude,
            initial_amplitude: c.initial_amplitude,
        }
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid {
            n_steps: self.time.n_steps,
            tau: self.time.tau,
            substeps: self.time.substeps,
        }
    }

    pub fn macro_options(&self) -> MacroOptions {
        MacroOptions {
            dtensor: self.multiscale.dtensor,
            time_derivative: self.multiscale.time_derivative,
        }
    }

    /// `(1/H, layers)` per coarse size.
    pub fn coarse_levels(&self) -> Vec<(usize, usize)> {
        let layers = self.multiscale.layers.clone().unwrap_or_default();
        self.multiscale
            .coarse_h
            .iter()
            .enumerate()
            .map(|(i, &h)| ((1.0 / h).round() as usize, layers.get(i).copied().unwrap_or_else(|| default_layers(h))))
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON of whatever `parts` selects.
    pub fn hash_of<T: Serialize>(parts: &T) -> String {
        let json = serde_json::to_vec(parts).expect("serializable");
        hex::encode(Sha256::digest(&json))
    }

    pub fn hash(&self) -> String {
        Self::hash_of(self)
    }
}

/// Two layers at `H = 1/10`, four at `H = 1/20`.
pub fn default_layers(coarse_h: f64) -> usize {
    (0.2 / coarse_h).round() as usize
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(message) => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}
