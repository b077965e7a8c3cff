//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always show; the process
//! exits nonzero if any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use multicontinuum::cells::{BasisId, BasisKind, BasisTimeline, CellSolver};
use multicontinuum::config::RunConfig;
use multicontinuum::fem::{CoefficientField, FineGrid};
use multicontinuum::fine::run_fine;
use multicontinuum::geometry::{build_timeline, Channel, DomainTimeline, GeometryConfig, Label};
use multicontinuum::layout::{build_rve_layout, CellRect, RveLayout};
use multicontinuum::metrics::{block_average_macro, ratio_of_sums, BlockContribution};
use multicontinuum::pipeline::{run_pipeline, Manifest, RunResults};
use multicontinuum::problem::{centered_gaussian, Kappa2, TimeGrid};
use multicontinuum::upscale::{compute_coefficients, effective_coefficients, run_macro, CoarseGrid, MacroOptions};
use multicontinuum::N_CONTINUA;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn example_run(example: u8, name: &str) -> (Manifest, RunResults, PathBuf) {
    let dir = scratch(name);
    let mut cfg = RunConfig::default();
    cfg.coefficients.example = example;
    cfg.output.dir = dir.clone();
    let cfg = cfg.resolved().expect("default config resolves");
    let (m, r) = run_pipeline(&cfg).expect("pipeline runs");
    (m, r, dir)
}

// ---------------------------------------------------------------- criterion 1

fn gauss2() -> [(f64, f64); 2] {
    let d = 0.5 / 3f64.sqrt();
    [(0.5 - d, 0.5), (0.5 + d, 0.5)]
}

fn manufactured_error(n: usize) -> f64 {
    use std::f64::consts::PI;
    let grid = FineGrid::new(n);
    let labels = vec![Label::Continuum1; n * n];
    let time = TimeGrid::new(100, 1e-3);
    let timeline = DomainTimeline::constant(n, labels.clone(), time.n_steps);
    let kappa = CoefficientField::uniform(&grid, &labels, 1.0).unwrap();
    let exact = |x: f64, y: f64, t: f64| (-t).exp() * (PI * x).sin() * (PI * y).sin();
    let f = |x: f64, y: f64, t: f64| (2.0 * PI * PI - 1.0) * exact(x, y, t);
    let traj = run_fine(&grid, &timeline, &kappa, &f, &|x, y| exact(x, y, 0.0), &time, 1e-13).unwrap();
    let last = traj.levels.last().unwrap();
    let t = last.time;
    let h = grid.h();
    let mut err2 = 0.0;
    for cy in 0..n {
        for cx in 0..n {
            let c = last.active.corner_values(&last.values, cx, cy);
            for (xi, wx) in gauss2() {
                for (eta, wy) in gauss2() {
                    let uh = c[0] * (1.0 - xi) * (1.0 - eta) + c[1] * xi * (1.0 - eta) + c[2] * xi * eta + c[3] * (1.0 - xi) * eta;
                    let e = uh - exact((cx as f64 + xi) * h, (cy as f64 + eta) * h, t);
                    err2 += wx * wy * h * h * e * e;
                }
            }
        }
    }
    err2.sqrt()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let e20 = manufactured_error(20);
    let e40 = manufactured_error(40);
    let ratio = e20 / e40;
    let secs = start.elapsed().as_secs_f64();
    check(
        (3.2..=4.8).contains(&ratio) && secs < 60.0,
        format!("fine-solver convergence: L2 error {e20:.3e} -> {e40:.3e}, ratio {ratio:.3} in [3.2, 4.8], {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2(ex1: &RunResults) -> Outcome {
    let diag = &ex1.coefficients[&10].1;
    let worst = diag.residuals.iter().map(|r| r.constraint_ratio()).fold(0.0, f64::max);
    let n = diag.residuals.len();
    let levels = diag.residuals.iter().map(|r| r.level).max().map_or(0, |l| l + 1);
    check(
        n == 100 * 6 * 4 && levels == 4 && worst <= 1e-9,
        format!(
            "constraint satisfaction: {n} basis solves over {levels} levels at H = 1/10, worst |C phi - g|inf / max(|g|inf, 1) = {worst:.2e}, cells {:.1}s",
            diag.wall_time_s
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let n = 40;
    let grid = FineGrid::new(n);
    let labels = vec![Label::Continuum1; n * n];
    let time = TimeGrid::new(3, 0.1);
    let timeline = DomainTimeline::constant(n, labels.clone(), 3);
    let kappa = CoefficientField::uniform(&grid, &labels, 1.0).unwrap();
    let layout = build_rve_layout(0.2, 1, n).unwrap();
    let solver = CellSolver {
        grid,
        timeline: &timeline,
        kappa: &kappa,
        layout: &layout,
        time,
        tol: 1e-13,
    };
    let p = layout.block_index(2, 2);
    let bases = solver.solve_block(p, &BasisId::all()).map_err(|e| e.to_string())?;
    let mut phi_dev = 0.0f64;
    let mut d_dev = 0.0f64;
    let mut b_dev = 0.0f64;
    let area = layout.blocks[p].rve.n_cells() as f64 * grid.h() * grid.h();
    for k in 0..time.n_levels() {
        let phi = bases.field(BasisId::constant(0), k).unwrap();
        phi_dev = phi.values.iter().fold(phi_dev, |m, v| m.max((v - 1.0).abs()));
        let c = effective_coefficients(&grid, &bases, &labels, &kappa, &|_, _| 0.0, None, &layout, k).map_err(|e| e.to_string())?;
        d_dev = d_dev.max((c.d[0][0] - area).abs());
        b_dev = b_dev.max(c.b[0][0].abs());
    }
    check(
        phi_dev <= 1e-10 && d_dev <= 1e-12 && b_dev <= 1e-12,
        format!("trivial basis: max|phi - 1| = {phi_dev:.1e}, max|D - |R_p|| = {d_dev:.1e}, max|B| = {b_dev:.1e} over 4 levels"),
    )
}

// ---------------------------------------------------------------- criterion 4

/// Independent dense reference: elements by Gauss quadrature, full KKT by LU.
struct DenseOracle<'a> {
    n: usize,
    region: CellRect,
    layout: &'a RveLayout,
    p: usize,
    kappa: &'a CoefficientField,
}

const CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

fn shape(a: usize, xi: f64, eta: f64) -> (f64, f64, f64) {
    let (ox, oy) = CORNERS[a];
    let sx = if ox == 1 { xi } else { 1.0 - xi };
    let sy = if oy == 1 { eta } else { 1.0 - eta };
    let dx = if ox == 1 { 1.0 } else { -1.0 };
    let dy = if oy == 1 { 1.0 } else { -1.0 };
    (sx * sy, dx * sy, sx * dy)
}

impl DenseOracle<'_> {
    fn nodes(&self, labels: &[Label]) -> Vec<(usize, usize)> {
        let n = self.n;
        let r = self.region;
        let mut out = Vec::new();
        for j in r.y0.max(1)..=r.y1.min(n - 1) {
            for i in r.x0.max(1)..=r.x1.min(n - 1) {
                let cells = [(i - 1, j - 1), (i, j - 1), (i - 1, j), (i, j)];
                let inside: Vec<Label> = cells.iter().filter(|&&(x, y)| r.contains_cell(x, y)).map(|&(x, y)| labels[y * n + x]).collect();
                if inside.iter().any(|l| l.is_active()) && inside.iter().all(|l| l.is_active()) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Mass, stiffness, constraint rows and targets (per basis) of one level.
    #[allow(clippy::type_complexity)]
    fn system(&self, labels: &[Label], nodes: &[(usize, usize)]) -> (DMatrix<f64>, DMatrix<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.n;
        let h = 1.0 / n as f64;
        let index: HashMap<(usize, usize), usize> = nodes.iter().enumerate().map(|(d, &v)| (v, d)).collect();
        let nn = nodes.len();
        let mut mass = DMatrix::zeros(nn, nn);
        let mut stiff = DMatrix::zeros(nn, nn);
        let d = 0.5 / 3f64.sqrt();
        let pts = [0.5 - d, 0.5 + d];
        for (cx, cy) in self.region.cells() {
            if !labels[cy * n + cx].is_active() {
                continue;
            }
            let k = self.kappa.at(cx, cy);
            let dofs: Vec<Option<usize>> = CORNERS.iter().map(|&(ox, oy)| index.get(&(cx + ox, cy + oy)).copied()).collect();
            for &xi in &pts {
                for &eta in &pts {
                    let w = h * h / 4.0;
                    for a in 0..4 {
                        for b in 0..4 {
                            if let (Some(da), Some(db)) = (dofs[a], dofs[b]) {
                                let (na, ax, ay) = shape(a, xi, eta);
                                let (nb, bx, by) = shape(b, xi, eta);
                                mass[(da, db)] += w * na * nb;
                                stiff[(da, db)] += w * k * (ax * bx + ay * by) / (h * h);
                            }
                        }
                    }
                }
            }
        }
        let block = &self.layout.blocks[self.p];
        let mut centers = [[0.0; N_CONTINUA]; 2];
        for j in 0..N_CONTINUA {
            let cells: Vec<(usize, usize)> = block.rve.cells().filter(|&(x, y)| labels[y * n + x] == Label::from_continuum(j)).collect();
            for m in 0..2 {
                centers[m][j] = if cells.is_empty() {
                    0.5 * if m == 0 { (block.rve.x0 + block.rve.x1) as f64 } else { (block.rve.y0 + block.rve.y1) as f64 } * h
                } else {
                    cells.iter().map(|&(x, y)| (if m == 0 { x } else { y } as f64 + 0.5) * h).sum::<f64>() / cells.len() as f64
                };
            }
        }
        let ids = BasisId::all();
        let mut rows = Vec::new();
        let mut targets = vec![Vec::new(); ids.len()];
        for &q in &block.sub_rves {
            for j in 0..N_CONTINUA {
                let mut row = vec![0.0; nn];
                let mut area = 0.0;
                let mut moment = [0.0; 2];
                for (cx, cy) in self.layout.blocks[q].rve.cells() {
                    if labels[cy * n + cx] != Label::from_continuum(j) {
                        continue;
                    }
                    for &xi in &pts {
                        for &eta in &pts {
                            let w = h * h / 4.0;
                            area += w;
                            moment[0] += w * (cx as f64 + xi) * h;
                            moment[1] += w * (cy as f64 + eta) * h;
                            for (a, &(ox, oy)) in CORNERS.iter().enumerate() {
                                if let Some(&da) = index.get(&(cx + ox, cy + oy)) {
                                    row[da] += w * shape(a, xi, eta).0;
                                }
                            }
                        }
                    }
                }
                if area == 0.0 || row.iter().all(|&v| v == 0.0) {
                    continue;
                }
                rows.push(row);
                for (b, id) in ids.iter().enumerate() {
                    targets[b].push(if id.continuum != j {
                        0.0
                    } else {
                        match id.kind {
                            BasisKind::Constant => area,
                            BasisKind::Linear(m) => moment[m] - centers[m][j] * area,
                        }
                    });
                }
            }
        }
        (mass, stiff, rows, targets)
    }

    fn kkt(op: &DMatrix<f64>, rows: &[Vec<f64>], rhs: &[f64], g: &[f64]) -> Vec<f64> {
        let nn = op.nrows();
        let r = rows.len();
        let mut k = DMatrix::zeros(nn + r, nn + r);
        k.view_mut((0, 0), (nn, nn)).copy_from(op);
        for (q, row) in rows.iter().enumerate() {
            for (d, &v) in row.iter().enumerate() {
                k[(nn + q, d)] = v;
                k[(d, nn + q)] = v;
            }
        }
        let b = DVector::from_iterator(nn + r, rhs.iter().chain(g).copied());
        let x = k.full_piv_lu().solve(&b).expect("nonsingular KKT");
        x.rows(0, nn).iter().copied().collect()
    }

    /// Fields per basis per level, keyed by node.
    fn run(&self, timeline: &DomainTimeline, time: &TimeGrid) -> Vec<Vec<HashMap<(usize, usize), f64>>> {
        let ids = BasisId::all();
        let mut out = vec![Vec::new(); ids.len()];
        for k in 0..time.n_levels() {
            let labels = timeline.labels(time.geometry_level(k));
            let nodes = self.nodes(labels);
            let (mass, stiff, rows, targets) = self.system(labels, &nodes);
            let tau = time.step();
            let op = if k == 0 { stiff.clone() } else { &mass / tau + &stiff };
            for b in 0..ids.len() {
                let rhs: Vec<f64> = if k == 0 {
                    vec![0.0; nodes.len()]
                } else {
                    let prev: &HashMap<(usize, usize), f64> = &out[b][k - 1];
                    let r = DVector::from_iterator(nodes.len(), nodes.iter().map(|v| prev.get(v).copied().unwrap_or(0.0)));
                    (&mass * r / tau).iter().copied().collect()
                };
                let x = Self::kkt(&op, &rows, &rhs, &targets[b]);
                out[b].push(nodes.iter().copied().zip(x).collect());
            }
        }
        out
    }
}

fn criterion_4() -> Outcome {
    let n = 16;
    let cfg = GeometryConfig {
        n_cells: n,
        thick_channels: vec![Channel::vertical(4, 6)],
        thin_channels: vec![Channel::horizontal(4, 6)],
        shrink_rate: [1, 1],
        n_steps: 3,
    };
    let timeline = build_timeline(&cfg).map_err(|e| e.to_string())?;
    let grid = FineGrid::new(n);
    let kappa = CoefficientField::new(&grid, timeline.labels(0), [1.0, 0.01], |x, y| Kappa2::for_example(2).unwrap().eval(x, y))
        .map_err(|e| e.to_string())?;
    let layout = build_rve_layout(0.25, 1, n).unwrap();
    let time = TimeGrid::new(3, 0.1);
    let p = 0;
    let region = layout.blocks[p].oversampled;
    if (region.width(), region.height(), layout.blocks[p].sub_rves.len()) != (8, 8, 4) {
        return Err(format!("test setup: region {region:?}"));
    }
    let solver = CellSolver {
        grid,
        timeline: &timeline,
        kappa: &kappa,
        layout: &layout,
        time,
        tol: 1e-13,
    };
    let sparse: BasisTimeline = solver.solve_block(p, &BasisId::all()).map_err(|e| e.to_string())?;
    let dense = DenseOracle {
        n,
        region,
        layout: &layout,
        p,
        kappa: &kappa,
    }
    .run(&timeline, &time);
    let mut worst = 0.0f64;
    let mut dropped = 0;
    for (b, id) in BasisId::all().iter().enumerate() {
        for k in 0..time.n_levels() {
            let reference = &dense[b][k];
            let active = &sparse.active[k];
            if active.len() != reference.len() {
                return Err(format!("level {k}: {} sparse nodes vs {} dense", active.len(), reference.len()));
            }
            let values = &sparse.field(*id, k).unwrap().values;
            let scale = reference.values().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            for (&(i, j), &v) in reference {
                let d = active.dense(i, j).ok_or(format!("node ({i}, {j}) missing"))?;
                worst = worst.max((values[d] - v).abs() / scale);
            }
        }
    }
    for c in &sparse.constraints {
        dropped += c.dropped.len();
    }
    check(
        worst <= 1e-8,
        format!("dense KKT oracle: 8x8 RVE, 2x2 sub-RVEs, 3 steps, 6 bases, {dropped} dropped rows, max relative deviation {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5(dir: &Path) -> Outcome {
    let text = std::fs::read_to_string(dir.join("scaling.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let ratio = v["linear_norm_ratio"].as_f64().ok_or("missing ratio")?;
    let var = v["scaled_grad_variation"].as_f64().ok_or("missing variation")?;
    check(
        (1.3..=3.0).contains(&ratio) && var < 3.0,
        format!("scaling: median |phi^m| ratio H=1/10 over H=1/20 = {ratio:.3} in [1.3, 3], |grad phi| * H varies by {var:.3} < 3"),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6(runs: &[(u8, &RunResults)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for &(ex, r) in runs {
        let coarse = &r.errors[&10];
        let fine = &r.errors[&20];
        let max10 = coarse.levels.iter().flat_map(|l| l.e2.iter().map(|v| v.unwrap_or(f64::INFINITY))).fold(0.0, f64::max);
        let improved = (0..N_CONTINUA).all(|i| match (fine.final_e2(i), coarse.final_e2(i)) {
            (Some(a), Some(b)) => a < b,
            _ => false,
        });
        ok &= max10 < 0.15 && improved;
        parts.push(format!(
            "ex{ex}: max e2(H=1/10) {max10:.3}, t=3 ({:.2e}, {:.2e}) -> ({:.2e}, {:.2e})",
            coarse.final_e2(0).unwrap_or(f64::NAN),
            coarse.final_e2(1).unwrap_or(f64::NAN),
            fine.final_e2(0).unwrap_or(f64::NAN),
            fine.final_e2(1).unwrap_or(f64::NAN)
        ));
    }
    check(ok, format!("error trends: {}", parts.join("; ")))
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7(runs: &[(u8, &RunResults)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for &(ex, r) in runs {
        let m = &r.macros[&10];
        let coarse = m.coarse_dofs();
        let counts = r.fine.as_ref().unwrap().dof_counts();
        let fine = counts.first().copied().unwrap_or(0);
        let min = counts.iter().copied().min().unwrap_or(0);
        let bound = 2 * 11 * 11;
        let finite = r.macros.values().all(|m| m.is_finite() && m.levels.len() == 4);
        ok &= coarse <= bound && fine >= 100 * coarse && finite;
        parts.push(format!("ex{ex}: {coarse} coarse (<= {bound}), {fine} fine at t=0 (min {min}), finite {finite}"));
    }
    check(ok, format!("macro sanity: {}", parts.join("; ")))
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let c = |pairs: &[(f64, f64)]| -> Vec<BlockContribution> {
        pairs.iter().enumerate().map(|(p, &(fine, macro_))| BlockContribution { block: p, fine, macro_ }).collect()
    };
    let hand = ratio_of_sums(&c(&[(10.0, 11.0), (20.0, 22.0)]));
    let same = ratio_of_sums(&c(&[(10.0, 10.0), (-3.5, -3.5)]));
    let g = CoarseGrid { n: 2 };
    let corner = block_average_macro(&g, &[4.0, 1.0], 1, 1, 0);
    check(
        hand == Some(0.01) && same == Some(0.0) && corner == 1.0,
        format!("metric hand checks: two-block ratio {hand:?}, identical averages {same:?}, block mean of bilinear {corner}"),
    )
}

// ---------------------------------------------------------------- criterion 9

fn swap_labels(t: &DomainTimeline) -> DomainTimeline {
    let swap = |l: &Label| match l {
        Label::Continuum1 => Label::Continuum2,
        Label::Continuum2 => Label::Continuum1,
        Label::Excluded => Label::Excluded,
    };
    DomainTimeline {
        n_cells: t.n_cells,
        levels: t.levels.iter().map(|lv| lv.iter().map(swap).collect()).collect(),
    }
}

fn small_macro(timeline: &DomainTimeline, contrast: [f64; 2]) -> multicontinuum::Result<multicontinuum::upscale::MacroTrajectory> {
    let n = timeline.n_cells;
    let grid = FineGrid::new(n);
    let kappa = CoefficientField::new(&grid, timeline.labels(0), contrast, |x, y| Kappa2::for_example(2).unwrap().eval(x, y))?;
    let layout = build_rve_layout(0.25, 1, n)?;
    let time = TimeGrid::new(3, 1.0);
    let solver = CellSolver {
        grid,
        timeline,
        kappa: &kappa,
        layout: &layout,
        time,
        tol: 1e-12,
    };
    let (coeffs, _) = compute_coefficients(&solver, &|x, y, _| centered_gaussian(1e-3, x, y), &|x, y| centered_gaussian(0.1, x, y))?;
    run_macro(&coeffs, &time, MacroOptions::default())
}

fn mirror_antisymmetry() -> Result<(f64, f64), String> {
    let n = 30;
    let cfg = GeometryConfig {
        n_cells: n,
        thick_channels: vec![Channel::vertical(6, 10), Channel::vertical(24, 10)],
        thin_channels: vec![Channel::horizontal(7, 6), Channel::horizontal(22, 6)],
        shrink_rate: [2, 1],
        n_steps: 3,
    };
    let timeline = build_timeline(&cfg).map_err(|e| e.to_string())?;
    for k in 0..timeline.n_levels() {
        for cy in 0..n {
            for cx in 0..n {
                if timeline.label(k, cx, cy) != timeline.label(k, n - 1 - cx, cy) {
                    return Err(format!("test geometry is not mirror symmetric at level {k}"));
                }
            }
        }
    }
    let grid = FineGrid::new(n);
    let kappa = CoefficientField::new(&grid, timeline.labels(0), [1.0, 0.01], |_, _| 1.0).map_err(|e| e.to_string())?;
    let layout = build_rve_layout(1.0 / 3.0, 1, n).map_err(|e| e.to_string())?;
    let time = TimeGrid::new(3, 1.0);
    let solver = CellSolver {
        grid,
        timeline: &timeline,
        kappa: &kappa,
        layout: &layout,
        time,
        tol: 1e-12,
    };
    let bases = solver.solve_block(layout.block_index(1, 1), &BasisId::all()).map_err(|e| e.to_string())?;
    let mut worst_anti = 0.0f64;
    let mut worst_sym = 0.0f64;
    for k in 0..time.n_levels() {
        let active = &bases.active[k];
        for i in 0..N_CONTINUA {
            for (id, sign) in [(BasisId::linear(i, 0), -1.0), (BasisId::constant(i), 1.0)] {
                let v = &bases.field(id, k).unwrap().values;
                let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                if scale < 1e-6 {
                    return Err(format!("test setup: basis {id:?} vanishes at level {k}"));
                }
                for (d, (a, b)) in active.nodes().enumerate() {
                    let e = active.dense(n - a, b).ok_or("mirror node inactive")?;
                    let dev = (v[d] - sign * v[e]).abs() / scale;
                    if sign < 0.0 {
                        worst_anti = worst_anti.max(dev);
                    } else {
                        worst_sym = worst_sym.max(dev);
                    }
                }
            }
        }
    }
    Ok((worst_anti, worst_sym))
}

fn criterion_9(runs: &[(u8, &RunResults)]) -> Outcome {
    let mut asym = 0.0f64;
    for &(_, r) in runs {
        for (coeffs, _) in r.coefficients.values() {
            for c in coeffs.levels.iter().flatten() {
                let scale_d = c.d.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                let scale_b = c.b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                for j in 0..N_CONTINUA {
                    for i in 0..N_CONTINUA {
                        asym = asym.max((c.d[j][i] - c.d[i][j]).abs() / scale_d);
                        asym = asym.max((c.b[j][i] - c.b[i][j]).abs() / scale_b);
                    }
                }
            }
        }
    }

    let geo = GeometryConfig::periodic_lattice(24, 12, [7, 6], [1, 1], 3);
    let t = build_timeline(&geo).map_err(|e| e.to_string())?;
    let a = small_macro(&t, [1.0, 0.01]).map_err(|e| e.to_string())?;
    let b = small_macro(&swap_labels(&t), [0.01, 1.0]).map_err(|e| e.to_string())?;
    let mut relabel = 0.0f64;
    for k in 0..a.levels.len() {
        for i in 0..N_CONTINUA {
            let ua = a.nodal(k, i);
            let ub = b.nodal(k, 1 - i);
            let scale = ua.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            relabel = ua.iter().zip(&ub).fold(relabel, |m, (x, y)| m.max((x - y).abs() / scale));
        }
    }

    let (anti, sym) = mirror_antisymmetry()?;
    check(
        asym <= 1e-12 && relabel <= 1e-10 && anti <= 1e-9,
        format!("symmetry: D, B asymmetry {asym:.1e}; relabel equivariance {relabel:.1e}; mirror antisymmetry of phi^x {anti:.1e} (phi_i symmetric to {sym:.1e})"),
    )
}

// ---------------------------------------------------------------- criterion 10

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                if path.file_name().is_some_and(|n| n != "cache") {
                    stack.push(path);
                }
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_10(first: &Path) -> Outcome {
    let (_, _, second) = example_run(1, "ex1_repeat");
    let a = csv_files(first);
    let b = csv_files(&second);
    let differing: Vec<&PathBuf> = a.iter().filter(|(k, v)| b.get(*k) != Some(*v)).map(|(k, _)| k).collect();
    check(
        !a.is_empty() && a.len() == b.len() && differing.is_empty(),
        format!("determinism: {} CSV artifacts in each of two fresh Example-1 runs, {} differ", a.len(), differing.len()),
    )
}

fn main() {
    let start = Instant::now();
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| selected.is_empty() || selected.contains(&id);
    let mut failures = 0;
    let mut ran = 0;
    let mut report = |id: usize, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(id) {
            return;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {id:>2} PASS  {msg}  [{secs:.1}s]"),
            Err(msg) => {
                failures += 1;
                println!("criterion {id:>2} FAIL  {msg}  [{secs:.1}s]");
            }
        }
    };

    report(1, &mut criterion_1);
    report(3, &mut criterion_3);
    report(4, &mut criterion_4);
    report(8, &mut criterion_8);

    if [2, 5, 6, 7, 9, 10].iter().any(|&id| wanted(id)) {
        let (_, ex1, ex1_dir) = example_run(1, "ex1");
        let (_, ex2, _) = example_run(2, "ex2");
        let (_, ex3, _) = example_run(3, "ex3");
        println!("example runs finished in {:.1}s", start.elapsed().as_secs_f64());
        let runs = [(1, &ex1), (2, &ex2), (3, &ex3)];

        report(2, &mut || criterion_2(&ex1));
        report(5, &mut || criterion_5(&ex1_dir));
        report(6, &mut || criterion_6(&runs));
        report(7, &mut || criterion_7(&runs));
        report(9, &mut || criterion_9(&runs));
        report(10, &mut || criterion_10(&ex1_dir));
    }

    println!("acceptance: {} of {ran} criteria passed in {:.1}s", ran - failures, start.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
