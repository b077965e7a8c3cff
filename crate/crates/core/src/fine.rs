//! Fine-scale reference solver: L2 projection of the initial data, then
//! backward Euler on the shrinking active set.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{active_nodes, assemble_load, assemble_mass, assemble_stiffness, ActiveSet, CoefficientField, FineGrid};
use crate::geometry::{DomainTimeline, Label};
use crate::problem::TimeGrid;
use crate::saddle::solve_spd_with;
use crate::sparse::{dot, CsrMatrix, EnvelopeCholesky};

#[derive(Clone, Debug)]
pub struct FineLevel {
    pub time: f64,
    pub geometry_level: usize,
    pub active: ActiveSet,
    pub values: Vec<f64>,
    pub wall_time_s: f64,
}

impl FineLevel {
    pub fn n_dofs(&self) -> usize {
        self.active.len()
    }
}

#[derive(Clone, Debug)]
pub struct FineTrajectory {
    pub grid: FineGrid,
    pub time: TimeGrid,
    pub levels: Vec<FineLevel>,
}

/// Serializable form of a trajectory; active sets are rebuilt from the timeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineRecord {
    pub n_cells: usize,
    pub time: TimeGrid,
    pub geometry_levels: Vec<usize>,
    pub wall_times_s: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl FineTrajectory {
    pub fn dof_counts(&self) -> Vec<usize> {
        self.levels.iter().map(FineLevel::n_dofs).collect()
    }

    pub fn to_record(&self) -> FineRecord {
        FineRecord {
            n_cells: self.grid.n_cells,
            time: self.time,
            geometry_levels: self.levels.iter().map(|l| l.geometry_level).collect(),
            wall_times_s: self.levels.iter().map(|l| l.wall_time_s).collect(),
            values: self.levels.iter().map(|l| l.values.clone()).collect(),
        }
    }

    pub fn from_record(record: FineRecord, timeline: &DomainTimeline) -> Result<Self> {
        let grid = FineGrid::new(record.n_cells);
        let mut levels = Vec::with_capacity(record.values.len());
        for (k, values) in record.values.into_iter().enumerate() {
            let g = record.geometry_levels[k];
            let active = active_nodes(&grid, timeline.labels(g), None)?;
            if active.len() != values.len() {
                return Err(Error::Data(format!("cached fine level {k} does not match the geometry")));
            }
            levels.push(FineLevel {
                time: record.time.time(k),
                geometry_level: g,
                active,
                values,
                wall_time_s: record.wall_times_s[k],
            });
        }
        Ok(FineTrajectory {
            grid,
            time: record.time,
            levels,
        })
    }

    /// Write level `k` as an `(n+1) × (n+1)` node grid, zero on inactive nodes.
    pub fn write_snapshot_csv(&self, k: usize, path: &Path) -> Result<()> {
        let level = &self.levels[k];
        let grid = level.active.to_node_grid(&level.values);
        crate::io::write_grid_csv(path, &grid, self.grid.n_cells + 1)
    }
}

/// `u₀ʰ ∈ V_h⁰` with `(u₀ʰ, v) = (u₀, v)` for all active test functions.
pub fn project_initial(
    grid: &FineGrid,
    labels0: &[Label],
    u0: &dyn Fn(f64, f64) -> f64,
    tol: f64,
) -> Result<(ActiveSet, Vec<f64>)> {
    let active = active_nodes(grid, labels0, None)?;
    let m = assemble_mass(grid, &active, labels0);
    let b = assemble_load(grid, &active, labels0, u0);
    let chol = EnvelopeCholesky::factor(&m)?;
    let u = solve_spd_with(&chol, &m, &b, tol).map_err(|e| e.with_context("(initial projection)"))?;
    Ok((active, u))
}

/// Matrices of one geometry level, reused across sub-steps.
struct LevelOperator {
    active: ActiveSet,
    mass: CsrMatrix,
    system: CsrMatrix,
    chol: EnvelopeCholesky,
}

impl LevelOperator {
    fn new(grid: &FineGrid, labels: &[Label], kappa: &CoefficientField, tau: f64) -> Result<Self> {
        let active = active_nodes(grid, labels, None)?;
        let mass = assemble_mass(grid, &active, labels);
        let stiff = assemble_stiffness(grid, &active, labels, kappa)?;
        let system = mass.linear_combination(1.0 / tau, &stiff, 1.0);
        let chol = EnvelopeCholesky::factor(&system)?;
        Ok(LevelOperator {
            active,
            mass,
            system,
            chol,
        })
    }

    fn step(&self, grid: &FineGrid, labels: &[Label], prev: (&ActiveSet, &[f64]), tau: f64, f: &dyn Fn(f64, f64) -> f64, tol: f64) -> Result<Vec<f64>> {
        let restricted = prev.0.restrict_to(prev.1, &self.active);
        let mut rhs = self.mass.matvec(&restricted);
        let load = assemble_load(grid, &self.active, labels, f);
        for (r, b) in rhs.iter_mut().zip(&load) {
            *r = *r / tau + b;
        }
        solve_spd_with(&self.chol, &self.system, &rhs, tol)
    }
}

/// One backward Euler step onto the geometry `labels_next`:
/// `(M/τ + A) u⁺ = M R(u)/τ + b(f)`, all on the new active set.
#[allow(clippy::too_many_arguments)]
pub fn step_backward_euler(
    grid: &FineGrid,
    prev_active: &ActiveSet,
    prev_values: &[f64],
    labels_next: &[Label],
    tau: f64,
    kappa: &CoefficientField,
    f_next: &dyn Fn(f64, f64) -> f64,
    tol: f64,
) -> Result<(ActiveSet, Vec<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("time step {tau} must be positive")));
    }
    let op = LevelOperator::new(grid, labels_next, kappa, tau)?;
    let u = op.step(grid, labels_next, (prev_active, prev_values), tau, f_next, tol)?;
    Ok((op.active, u))
}

/// Full reference trajectory over `time`.
pub fn run_fine(
    grid: &FineGrid,
    timeline: &DomainTimeline,
    kappa: &CoefficientField,
    f: &dyn Fn(f64, f64, f64) -> f64,
    u0: &dyn Fn(f64, f64) -> f64,
    time: &TimeGrid,
    tol: f64,
) -> Result<FineTrajectory> {
    time.validate()?;
    if timeline.n_steps() < time.n_steps {
        return Err(Error::Config(format!(
            "timeline has {} steps but {} were requested",
            timeline.n_steps(),
            time.n_steps
        )));
    }
    let start = Instant::now();
    let (active, values) = project_initial(grid, timeline.labels(0), u0, tol)?;
    let mut levels = vec![FineLevel {
        time: 0.0,
        geometry_level: 0,
        active,
        values,
        wall_time_s: start.elapsed().as_secs_f64(),
    }];
    let tau = time.step();
    let mut op: Option<(usize, LevelOperator)> = None;
    for k in 1..time.n_levels() {
        let start = Instant::now();
        let g = time.geometry_level(k);
        let labels = timeline.labels(g);
        if op.as_ref().map(|(lvl, _)| *lvl) != Some(g) {
            op = Some((g, LevelOperator::new(grid, labels, kappa, tau).map_err(|e| e.with_context(format!("(fine level {k})")))?));
        }
        let (_, level_op) = op.as_ref().expect("operator");
        let t = time.time(k);
        let prev = levels.last().expect("previous level");
        let values = level_op
            .step(grid, labels, (&prev.active, &prev.values), tau, &|x, y| f(x, y, t), tol)
            .map_err(|e| e.with_context(format!("(fine level {k})")))?;
        levels.push(FineLevel {
            time: t,
            geometry_level: g,
            active: level_op.active.clone(),
            values,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(FineTrajectory {
        grid: *grid,
        time: *time,
        levels,
    })
}

/// `uᵀ M u` on the level's own geometry.
pub fn mass_energy(grid: &FineGrid, labels: &[Label], active: &ActiveSet, u: &[f64]) -> f64 {
    let m = assemble_mass(grid, active, labels);
    dot(u, &m.matvec(u))
}
