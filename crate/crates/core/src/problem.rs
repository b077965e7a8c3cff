//! Coefficient catalog, source and initial data, and the time grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{CoefficientField, FineGrid};
use crate::geometry::Label;

/// The smooth factor `κ2` of the conductivity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kappa2 {
    /// `κ2 = 1`
    Constant,
    /// `κ2 = 2 + sin(2πx) sin(20πy)`
    Example2,
    /// `κ2 = 2 + sin(√20 πx) sin(πy)`
    Example3,
}

impl Kappa2 {
    pub fn for_example(example: u8) -> Result<Self> {
        match example {
            1 => Ok(Kappa2::Constant),
            2 => Ok(Kappa2::Example2),
            3 => Ok(Kappa2::Example3),
            other => Err(Error::Config(format!("unknown example {other} (expected 1, 2 or 3)"))),
        }
    }

    #[inline]
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            Kappa2::Constant => 1.0,
            Kappa2::Example2 => 2.0 + (2.0 * PI * x).sin() * (20.0 * PI * y).sin(),
            Kappa2::Example3 => 2.0 + (20f64.sqrt() * PI * x).sin() * (PI * y).sin(),
        }
    }
}

/// `amplitude · exp(−100 ((x − ½)² + (y − ½)²))`
#[inline]
pub fn centered_gaussian(amplitude: f64, x: f64, y: f64) -> f64 {
    amplitude * (-100.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp()
}

pub const SOURCE_AMPLITUDE: f64 = 1e-3;
pub const INITIAL_AMPLITUDE: f64 = 1e-1;

/// Physical data shared by the fine and upscaled models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemData {
    /// `κ1` per continuum.
    pub contrast: [f64; 2],
    pub kappa2: Kappa2,
    pub source_amplitude: f64,
    pub initial_amplitude: f64,
}

impl ProblemData {
    pub fn example(example: u8) -> Result<Self> {
        Ok(ProblemData {
            contrast: [1.0, 1e-2],
            kappa2: Kappa2::for_example(example)?,
            source_amplitude: SOURCE_AMPLITUDE,
            initial_amplitude: INITIAL_AMPLITUDE,
        })
    }

    pub fn source(&self, x: f64, y: f64) -> f64 {
        centered_gaussian(self.source_amplitude, x, y)
    }

    pub fn initial(&self, x: f64, y: f64) -> f64 {
        centered_gaussian(self.initial_amplitude, x, y)
    }

    pub fn conductivity(&self, grid: &FineGrid, labels0: &[Label]) -> Result<CoefficientField> {
        let k2 = self.kappa2;
        CoefficientField::new(grid, labels0, self.contrast, move |x, y| k2.eval(x, y))
    }
}

/// Uniform steps of `tau / substeps`; the geometry advances once per `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub n_steps: usize,
    pub tau: f64,
    pub substeps: usize,
}

impl TimeGrid {
    pub fn new(n_steps: usize, tau: f64) -> Self {
        TimeGrid {
            n_steps,
            tau,
            substeps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("time step {} must be positive", self.tau)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Total number of time steps including sub-steps.
    pub fn n_levels(&self) -> usize {
        self.n_steps * self.substeps + 1
    }

    pub fn step(&self) -> f64 {
        self.tau / self.substeps as f64
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.step()
    }

    pub fn final_time(&self) -> f64 {
        self.n_steps as f64 * self.tau
    }

    /// Geometry level in force at time level `level` (changes happen at the
    /// start of each unit interval).
    pub fn geometry_level(&self, level: usize) -> usize {
        level.div_ceil(self.substeps)
    }
}
