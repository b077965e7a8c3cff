//! Stage orchestration, on-disk caching and the run manifest.
//!
//! Output layout under `output.dir`:
//!
//! ```text
//! manifest.json            labels_k{k}.csv/.svg     fine_k{k}.csv/.svg
//! geometry_report.json     errors_H{den}.csv        scaling.json
//! H{den}/coeffs_p{p}_k{k}.csv   H{den}/macro_k{k}.csv   H{den}/macro_U{i}_k{k}.svg
//! H{den}/residuals.jsonl   H{den}/errors.json       H{den}/basis_p{p}.csv
//! cache/                   stage results keyed by configuration hash
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cells::{scaling_report, BasisNorms, BasisTimeline, CellSolver};
use crate::config::{with_dependencies, RunConfig, Stage};
use crate::error::{Error, Result};
use crate::fem::FineGrid;
use crate::fine::{run_fine, FineRecord, FineTrajectory};
use crate::geometry::{build_timeline, DomainTimeline, Label, ValidationReport};
use crate::io::{write_text, FieldGrid};
use crate::layout::{build_rve_layout, RveLayout};
use crate::metrics::{relative_errors, ErrorReport};
use crate::svg::{emit_heatmap, Palette};
use crate::upscale::{compute_coefficients_with, run_macro, EffectiveCoefficients, MacroTrajectory, SweepDiagnostics};
use crate::N_CONTINUA;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Computed,
    Cached,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// `1/H` for the per-layout stages.
    pub coarse: Option<usize>,
    pub status: StageStatus,
    pub key: String,
    pub wall_time_s: f64,
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub success: bool,
    pub failure: Option<String>,
    pub stages: Vec<StageRecord>,
    pub fine_dofs: Vec<usize>,
    /// Coarse unknowns per `1/H`.
    pub coarse_dofs: BTreeMap<usize, usize>,
    /// `e2` per `1/H`, `[level][continuum]`.
    pub errors: BTreeMap<usize, Vec<[Option<f64>; N_CONTINUA]>>,
    pub total_wall_time_s: f64,
}

impl Manifest {
    pub fn record(&self, stage: Stage, coarse: Option<usize>) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage && r.coarse == coarse)
    }

    pub fn all_cached(&self) -> bool {
        self.stages.iter().all(|r| r.status == StageStatus::Cached)
    }
}

/// Everything a full run produces in memory, for library callers.
#[derive(Default)]
pub struct RunResults {
    pub timeline: Option<DomainTimeline>,
    pub fine: Option<FineTrajectory>,
    /// Per `1/H`.
    pub layouts: BTreeMap<usize, RveLayout>,
    pub coefficients: BTreeMap<usize, (EffectiveCoefficients, SweepDiagnostics)>,
    pub macros: BTreeMap<usize, MacroTrajectory>,
    pub errors: BTreeMap<usize, ErrorReport>,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    cache: PathBuf,
    manifest: Manifest,
    results: RunResults,
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Option<T> {
    let text = std::fs::read(path).ok()?;
    serde_json::from_slice(&text).ok()
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_vec(value).map_err(|e| Error::Data(e.to_string()))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    write_text(path, &text)
}

/// Cell-centered grid of a nodal field, NaN on excluded cells.
fn cell_field(grid: &FineGrid, labels: &[Label], nodal: &[f64]) -> FieldGrid {
    let n = grid.n_cells;
    let w = n + 1;
    let mut v = Vec::with_capacity(n * n);
    for cy in 0..n {
        for cx in 0..n {
            v.push(if labels[cy * n + cx].is_active() {
                0.25 * (nodal[cy * w + cx] + nodal[cy * w + cx + 1] + nodal[(cy + 1) * w + cx] + nodal[(cy + 1) * w + cx + 1])
            } else {
                f64::NAN
            });
        }
    }
    FieldGrid::new(n, n, v)
}

impl<'a> Runner<'a> {
    fn key<T: Serialize>(&self, stage: Stage, parts: &T) -> String {
        RunConfig::hash_of(&(stage.name(), env!("CARGO_PKG_VERSION"), parts))[..16].to_string()
    }

    fn marker(&self, stage: Stage, coarse: Option<usize>, key: &str) -> PathBuf {
        let suffix = coarse.map_or(String::new(), |c| format!("_H{c}"));
        self.cache.join(format!("{}{suffix}_{key}.done", stage.name()))
    }

    fn push(&mut self, stage: Stage, coarse: Option<usize>, key: String, status: StageStatus, start: Instant) {
        self.manifest.stages.push(StageRecord {
            stage,
            coarse,
            status,
            key,
            wall_time_s: start.elapsed().as_secs_f64(),
            message: None,
        });
    }

    fn fail(&mut self, stage: Stage, coarse: Option<usize>, key: String, err: &Error, start: Instant) {
        self.manifest.stages.push(StageRecord {
            stage,
            coarse,
            status: StageStatus::Failed,
            key,
            wall_time_s: start.elapsed().as_secs_f64(),
            message: Some(err.to_string()),
        });
        let at = coarse.map_or(stage.name().to_string(), |c| format!("{} (H = 1/{c})", stage.name()));
        self.manifest.failure = Some(format!("{at}: {err}"));
    }

    fn geometry_key(&self) -> String {
        self.key(Stage::Geometry, &(&self.cfg.geometry, self.cfg.time.n_steps, &self.cfg.multiscale.coarse_h))
    }

    fn fine_key(&self) -> String {
        let c = self.cfg;
        self.key(Stage::Fine, &(&c.geometry, &c.coefficients, &c.time, &c.solver))
    }

    fn cells_key(&self, den: usize, layers: usize) -> String {
        let c = self.cfg;
        self.key(Stage::Cells, &(&c.geometry, &c.coefficients, &c.time, &c.solver, den, layers))
    }

    fn geometry(&mut self) -> Result<()> {
        let start = Instant::now();
        let key = self.geometry_key();
        let cfg = self.cfg.geometry_config();
        let timeline = build_timeline(&cfg)?;
        let marker = self.marker(Stage::Geometry, None, &key);
        if marker.exists() {
            self.push(Stage::Geometry, None, key, StageStatus::Cached, start);
        } else {
            let mut reports: BTreeMap<usize, ValidationReport> = BTreeMap::new();
            for (den, layers) in self.cfg.coarse_levels() {
                let layout = build_rve_layout(1.0 / den as f64, layers, cfg.n_cells)?;
                reports.insert(den, crate::geometry::validate_geometry(&timeline, &layout));
            }
            let summary: BTreeMap<usize, &Vec<crate::geometry::GeometryFlag>> = reports.iter().map(|(d, r)| (*d, &r.flags)).collect();
            save_json_pretty(&self.out.join("geometry_report.json"), &summary)?;
            for k in 0..timeline.n_levels() {
                if self.cfg.output.snapshots {
                    timeline.write_labels_csv(k, &self.out.join(format!("labels_k{k}.csv")))?;
                }
                if self.cfg.output.heatmaps {
                    let n = timeline.n_cells;
                    let values = timeline.labels(k).iter().map(|l| l.continuum().map_or(f64::NAN, |c| (c + 1) as f64)).collect();
                    emit_heatmap(
                        &FieldGrid::new(n, n, values),
                        Palette::Viridis,
                        &format!("labels, step {k} (gray: excluded)"),
                        &self.out.join(format!("labels_k{k}.svg")),
                    )?;
                }
            }
            save_json(&marker, &key)?;
            self.push(Stage::Geometry, None, key, StageStatus::Computed, start);
        }
        self.results.timeline = Some(timeline);
        Ok(())
    }

    fn fine(&mut self) -> Result<()> {
        let start = Instant::now();
        let key = self.fine_key();
        let cache = self.cache.join(format!("fine_{key}.json"));
        let timeline = self.results.timeline.as_ref().expect("geometry first");
        if let Some(rec) = load_json::<FineRecord>(&cache) {
            let traj = FineTrajectory::from_record(rec, timeline)?;
            self.manifest.fine_dofs = traj.dof_counts();
            self.results.fine = Some(traj);
            self.push(Stage::Fine, None, key, StageStatus::Cached, start);
            return Ok(());
        }
        let grid = FineGrid::new(timeline.n_cells);
        let prob = self.cfg.problem();
        let kappa = prob.conductivity(&grid, timeline.labels(0))?;
        let traj = run_fine(
            &grid,
            timeline,
            &kappa,
            &|x, y, _| prob.source(x, y),
            &|x, y| prob.initial(x, y),
            &self.cfg.time_grid(),
            self.cfg.solver.tol,
        )?;
        for (k, level) in traj.levels.iter().enumerate() {
            if self.cfg.output.snapshots {
                traj.write_snapshot_csv(k, &self.out.join(format!("fine_k{k}.csv")))?;
            }
            if self.cfg.output.heatmaps {
                let nodal = level.active.to_node_grid(&level.values);
                let field = cell_field(&grid, timeline.labels(level.geometry_level), &nodal);
                emit_heatmap(&field, Palette::Viridis, &format!("fine solution, t = {}", level.time), &self.out.join(format!("fine_k{k}.svg")))?;
            }
        }
        save_json(&cache, &traj.to_record())?;
        self.manifest.fine_dofs = traj.dof_counts();
        self.results.fine = Some(traj);
        self.push(Stage::Fine, None, key, StageStatus::Computed, start);
        Ok(())
    }

    fn cells(&mut self, den: usize, layers: usize) -> Result<()> {
        let start = Instant::now();
        let key = self.cells_key(den, layers);
        let cache = self.cache.join(format!("cells_H{den}_{key}.json"));
        let timeline = self.results.timeline.as_ref().expect("geometry first");
        let layout = build_rve_layout(1.0 / den as f64, layers, timeline.n_cells)?;
        self.results.layouts.insert(den, layout.clone());
        if let Some(c) = load_json::<(EffectiveCoefficients, SweepDiagnostics)>(&cache) {
            self.results.coefficients.insert(den, c);
            self.push(Stage::Cells, Some(den), key, StageStatus::Cached, start);
            return Ok(());
        }
        let grid = FineGrid::new(timeline.n_cells);
        let prob = self.cfg.problem();
        let kappa = prob.conductivity(&grid, timeline.labels(0))?;
        let solver = CellSolver {
            grid,
            timeline,
            kappa: &kappa,
            layout: &layout,
            time: self.cfg.time_grid(),
            tol: self.cfg.solver.tol,
        };
        let dir = self.out.join(format!("H{den}"));
        let basis_blocks = &self.cfg.output.basis_blocks;
        let dump = |b: &BasisTimeline| -> Result<()> {
            if !basis_blocks.contains(&b.block) {
                return Ok(());
            }
            let active = &b.active[0];
            let mut s = String::from("i,j");
            for id in &b.ids {
                write!(s, ",{}", basis_label(id)).expect("write to string");
            }
            s.push('\n');
            for (d, (i, j)) in active.nodes().enumerate() {
                write!(s, "{i},{j}").expect("write to string");
                for f in &b.fields {
                    write!(s, ",{:e}", f[0].values[d]).expect("write to string");
                }
                s.push('\n');
            }
            write_text(&dir.join(format!("basis_p{}.csv", b.block)), &s)
        };
        let result = compute_coefficients_with(&solver, &|x, y, _| prob.source(x, y), &|x, y| prob.initial(x, y), dump)?;
        let mut log = String::new();
        for r in &result.1.residuals {
            log.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
            log.push('\n');
        }
        write_text(&dir.join("residuals.jsonl"), &log)?;
        save_json(&cache, &result)?;
        self.results.coefficients.insert(den, result);
        self.push(Stage::Cells, Some(den), key, StageStatus::Computed, start);
        Ok(())
    }

    fn scaling(&mut self) -> Result<()> {
        let dens: Vec<usize> = self.results.coefficients.keys().copied().collect();
        if dens.len() < 2 {
            return Ok(());
        }
        let (a, b) = (dens[0], dens[1]);
        if b % a != 0 {
            return Ok(());
        }
        let norms = |d: usize| -> &Vec<BasisNorms> { &self.results.coefficients[&d].1.norms };
        let report = scaling_report(&self.results.layouts[&a], norms(a), &self.results.layouts[&b], norms(b));
        save_json_pretty(&self.out.join("scaling.json"), &report)
    }

    fn upscale(&mut self, den: usize, layers: usize) -> Result<()> {
        let start = Instant::now();
        let key = self.key(Stage::Upscale, &(self.cells_key(den, layers), self.cfg.output.coefficient_dumps));
        let marker = self.marker(Stage::Upscale, Some(den), &key);
        if marker.exists() {
            self.push(Stage::Upscale, Some(den), key, StageStatus::Cached, start);
            return Ok(());
        }
        let (coeffs, _) = &self.results.coefficients[&den];
        if self.cfg.output.coefficient_dumps {
            let dir = self.out.join(format!("H{den}"));
            for level in &coeffs.levels {
                for c in level {
                    c.write_csv(&dir.join(format!("coeffs_p{}_k{}.csv", c.block, c.level)))?;
                }
            }
        }
        save_json(&marker, &key)?;
        self.push(Stage::Upscale, Some(den), key, StageStatus::Computed, start);
        Ok(())
    }

    fn macro_key(&self, den: usize, layers: usize) -> String {
        self.key(Stage::Macro, &(self.cells_key(den, layers), self.cfg.macro_options()))
    }

    fn macro_(&mut self, den: usize, layers: usize) -> Result<()> {
        let start = Instant::now();
        let key = self.macro_key(den, layers);
        let cache = self.cache.join(format!("macro_H{den}_{key}.json"));
        if let Some(m) = load_json::<MacroTrajectory>(&cache) {
            self.manifest.coarse_dofs.insert(den, m.coarse_dofs());
            self.results.macros.insert(den, m);
            self.push(Stage::Macro, Some(den), key, StageStatus::Cached, start);
            return Ok(());
        }
        let (coeffs, _) = &self.results.coefficients[&den];
        let m = run_macro(coeffs, &self.cfg.time_grid(), self.cfg.macro_options())?;
        let dir = self.out.join(format!("H{den}"));
        for k in 0..m.levels.len() {
            if self.cfg.output.snapshots {
                m.write_snapshot_csv(k, &dir.join(format!("macro_k{k}.csv")))?;
            }
            if self.cfg.output.heatmaps {
                let w = m.grid.n + 1;
                for i in 0..N_CONTINUA {
                    let nodal = m.nodal(k, i);
                    emit_heatmap(
                        &FieldGrid::new(w, w, nodal),
                        Palette::Viridis,
                        &format!("U{} at t = {}, H = 1/{den}", i + 1, m.time.time(k)),
                        &dir.join(format!("macro_U{}_k{k}.svg", i + 1)),
                    )?;
                }
            }
        }
        save_json(&cache, &m)?;
        self.manifest.coarse_dofs.insert(den, m.coarse_dofs());
        self.results.macros.insert(den, m);
        self.push(Stage::Macro, Some(den), key, StageStatus::Computed, start);
        Ok(())
    }

    fn errors(&mut self, den: usize, layers: usize) -> Result<()> {
        let start = Instant::now();
        let key = self.key(Stage::Errors, &(self.fine_key(), self.macro_key(den, layers)));
        let cache = self.cache.join(format!("errors_H{den}_{key}.json"));
        let report = match load_json::<ErrorReport>(&cache) {
            Some(r) => {
                self.push(Stage::Errors, Some(den), key, StageStatus::Cached, start);
                r
            }
            None => {
                let r = relative_errors(
                    self.results.fine.as_ref().expect("fine first"),
                    &self.results.macros[&den],
                    &self.results.layouts[&den],
                    self.results.timeline.as_ref().expect("geometry first"),
                )?;
                r.write_csv(&self.out.join(format!("errors_H{den}.csv")))?;
                save_json_pretty(&self.out.join(format!("H{den}")).join("errors.json"), &r)?;
                save_json(&cache, &r)?;
                self.push(Stage::Errors, Some(den), key, StageStatus::Computed, start);
                r
            }
        };
        self.manifest.errors.insert(den, report.levels.iter().map(|l| l.e2).collect());
        self.results.errors.insert(den, report);
        Ok(())
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        let per_layout = |r: &mut Self, f: fn(&mut Self, usize, usize) -> Result<()>| -> Result<()> {
            for (den, layers) in r.cfg.coarse_levels() {
                f(r, den, layers).map_err(|e| (den, e)).or_else(|(den, e)| {
                    if r.manifest.failure.is_none() {
                        let key = String::new();
                        r.fail(stage, Some(den), key, &e, Instant::now());
                    }
                    Err(e)
                })?;
            }
            Ok(())
        };
        match stage {
            Stage::Geometry => self.geometry(),
            Stage::Fine => self.fine(),
            Stage::Cells => {
                per_layout(self, Self::cells)?;
                self.scaling()
            }
            Stage::Upscale => per_layout(self, Self::upscale),
            Stage::Macro => per_layout(self, Self::macro_),
            Stage::Errors => per_layout(self, Self::errors),
        }
    }
}

fn basis_label(id: &crate::cells::BasisId) -> String {
    match id.kind {
        crate::cells::BasisKind::Constant => format!("phi{}", id.continuum + 1),
        crate::cells::BasisKind::Linear(m) => format!("phi{}_x{}", id.continuum + 1, m + 1),
    }
}

/// Run the configured stages (plus their dependencies). The manifest is
/// written whether or not a stage fails.
pub fn run_pipeline(config: &RunConfig) -> Result<(Manifest, RunResults)> {
    let start = Instant::now();
    let out = config.output.dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut runner = Runner {
        cfg: config,
        cache: out.join("cache"),
        out: out.clone(),
        manifest: Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            config: config.clone(),
            success: false,
            failure: None,
            stages: Vec::new(),
            fine_dofs: Vec::new(),
            coarse_dofs: BTreeMap::new(),
            errors: BTreeMap::new(),
            total_wall_time_s: 0.0,
        },
        results: RunResults::default(),
    };
    let mut outcome = Ok(());
    for stage in with_dependencies(&config.output.stages) {
        if let Err(e) = runner.run_stage(stage) {
            if runner.manifest.failure.is_none() {
                runner.fail(stage, None, String::new(), &e, Instant::now());
            }
            outcome = Err(e);
            break;
        }
    }
    runner.manifest.success = outcome.is_ok();
    runner.manifest.total_wall_time_s = start.elapsed().as_secs_f64();
    save_json_pretty(&out.join("manifest.json"), &runner.manifest)?;
    outcome.map(|_| (runner.manifest, runner.results))
}

/// Read a manifest written by [`run_pipeline`].
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path, message: e.to_string() })
}
