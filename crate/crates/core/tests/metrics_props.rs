mod common;

use multicontinuum::cells::CellSolver;
use multicontinuum::fem::{CoefficientField, FineGrid};
use multicontinuum::fine::run_fine;
use multicontinuum::geometry::{build_timeline, GeometryConfig, Label};
use multicontinuum::layout::build_rve_layout;
use multicontinuum::metrics::{ratio_of_sums, relative_errors, BlockContribution};
use multicontinuum::problem::{centered_gaussian, Kappa2, TimeGrid};
use multicontinuum::upscale::{compute_coefficients, run_macro, MacroOptions};
use proptest::prelude::*;

use common::*;

fn contributions(v: &[(f64, f64)]) -> Vec<BlockContribution> {
    v.iter().enumerate().map(|(p, &(fine, macro_))| BlockContribution { block: p, fine, macro_ }).collect()
}

proptest! {
    #[test]
    fn ratio_is_scale_and_order_invariant(v in prop::collection::vec((0.1f64..10.0, -10.0f64..10.0), 1..20), s in 0.01f64..100.0, rot in 0usize..20) {
        let r = ratio_of_sums(&contributions(&v)).unwrap();
        let scaled: Vec<(f64, f64)> = v.iter().map(|&(a, b)| (a * s, b * s)).collect();
        let mut rotated = v.clone();
        rotated.rotate_left(rot % v.len());
        prop_assert!((ratio_of_sums(&contributions(&scaled)).unwrap() - r).abs() <= 1e-12 * r.max(1e-300));
        prop_assert!((ratio_of_sums(&contributions(&rotated)).unwrap() - r).abs() <= 1e-12 * r.max(1e-300));
        prop_assert!(r >= 0.0);
    }

    #[test]
    fn ratio_vanishes_only_for_matching_averages(v in prop::collection::vec(0.1f64..10.0, 1..20), bump in 0usize..20) {
        let same: Vec<(f64, f64)> = v.iter().map(|&a| (a, a)).collect();
        prop_assert_eq!(ratio_of_sums(&contributions(&same)), Some(0.0));
        let mut off = same.clone();
        let i = bump % off.len();
        off[i].1 += 1.0;
        prop_assert!(ratio_of_sums(&contributions(&off)).unwrap() > 0.0);
    }
}

#[test]
fn relative_errors_match_brute_force_averages() {
    let n = 24;
    let t = build_timeline(&GeometryConfig::periodic_lattice(n, 12, [7, 6], [1, 1], 2)).unwrap();
    let grid = FineGrid::new(n);
    let kappa = CoefficientField::new(&grid, t.labels(0), [1.0, 0.01], |x, y| Kappa2::Constant.eval(x, y)).unwrap();
    let time = TimeGrid::new(2, 1.0);
    let f = |x: f64, y: f64, _t: f64| centered_gaussian(1e-3, x, y);
    let u0 = |x: f64, y: f64| centered_gaussian(0.1, x, y);
    let fine = run_fine(&grid, &t, &kappa, &f, &u0, &time, 1e-12).unwrap();
    let layout = build_rve_layout(0.25, 1, n).unwrap();
    let solver = CellSolver { grid, timeline: &t, kappa: &kappa, layout: &layout, time, tol: 1e-12 };
    let (coeffs, _) = compute_coefficients(&solver, &f, &u0).unwrap();
    let m = run_macro(&coeffs, &time, MacroOptions::default()).unwrap();
    let report = relative_errors(&fine, &m, &layout, &t).unwrap();

    let nc = layout.n_coarse;
    for (k, level) in fine.levels.iter().enumerate() {
        let labels = t.labels(level.geometry_level);
        for i in 0..2 {
            let (mut num, mut den) = (0.0, 0.0);
            let nodal = m.nodal(k, i);
            for block in &layout.blocks {
                let cells: Vec<(usize, usize)> = block.rve.cells().filter(|&(x, y)| labels[y * n + x] == Label::from_continuum(i)).collect();
                if cells.is_empty() {
                    continue;
                }
                let area = cells.len() as f64 / (n * n) as f64;
                let fine_avg = integrate(n, &level.active, &level.values, cells.iter().copied(), |_, _| 1.0) / area;
                // ∫_K U_h / |K| over the bilinear coarse element, 3×3 Gauss
                let mut macro_avg = 0.0;
                for (xi, wx) in gauss3() {
                    for (eta, wy) in gauss3() {
                        let v: f64 = (0..4)
                            .map(|a| {
                                let (ox, oy) = CORNERS[a];
                                shape(a, xi, eta).0 * nodal[(block.by + oy) * (nc + 1) + block.bx + ox]
                            })
                            .sum();
                        macro_avg += wx * wy * v;
                    }
                }
                num += (macro_avg - fine_avg).powi(2);
                den += fine_avg * fine_avg;
            }
            let expected = num / den;
            let got = report.levels[k].e2[i].unwrap();
            assert!((got - expected).abs() <= 1e-10 * expected, "level {k} continuum {i}: {got} vs {expected}");
        }
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 1 + time.n_levels());
    assert!(csv.starts_with("t,e2_1,e2_2"));
}
