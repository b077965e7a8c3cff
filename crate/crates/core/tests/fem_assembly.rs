mod common;

use multicontinuum::fem::{active_nodes, assemble_load, assemble_mass, assemble_stiffness, CoefficientField, FineGrid};
use multicontinuum::geometry::Label;
use multicontinuum::layout::CellRect;
use proptest::prelude::*;

use common::*;

fn labels_strategy() -> impl Strategy<Value = (usize, Vec<Label>, Vec<f64>)> {
    (3usize..9).prop_flat_map(|n| {
        let label = prop_oneof![1 => Just(Label::Excluded), 3 => Just(Label::Continuum1), 2 => Just(Label::Continuum2)];
        (Just(n), prop::collection::vec(label, n * n), prop::collection::vec(0.01f64..10.0, n * n))
    })
}

fn region_strategy(n: usize) -> impl Strategy<Value = CellRect> {
    (0..n, 0..n).prop_flat_map(move |(x0, y0)| (Just(x0), Just(y0), x0 + 1..=n, y0 + 1..=n)).prop_map(|(x0, y0, x1, y1)| CellRect::new(x0, y0, x1, y1))
}

fn field(n: usize, labels: &[Label], k: &[f64]) -> CoefficientField {
    let grid = FineGrid::new(n);
    let mut c = CoefficientField::uniform(&grid, labels, 1.0).unwrap();
    for (i, v) in c.values.iter_mut().enumerate() {
        if *v > 0.0 {
            *v = k[i];
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn active_set_matches_rule((n, labels, _k) in labels_strategy(), seed in any::<u64>()) {
        let region = {
            let a = (seed as usize) % n;
            let b = (seed as usize / 7) % n;
            CellRect::new(a.min(b), 0, a.max(b) + 1, n)
        };
        let grid = FineGrid::new(n);
        let expected = reference_nodes(n, &labels, region);
        match active_nodes(&grid, &labels, Some(region)) {
            Ok(a) => {
                let got: Vec<(usize, usize)> = a.nodes().collect();
                prop_assert_eq!(got, expected);
            }
            Err(_) => prop_assert!(expected.is_empty()),
        }
    }

    #[test]
    fn mass_and_stiffness_match_quadrature((n, labels, k) in labels_strategy()) {
        let grid = FineGrid::new(n);
        let Ok(active) = active_nodes(&grid, &labels, None) else { return Ok(()) };
        let kappa = field(n, &labels, &k);
        let m = assemble_mass(&grid, &active, &labels).to_dense();
        let s = assemble_stiffness(&grid, &active, &labels, &kappa).unwrap().to_dense();
        let (rm, rs) = reference_matrices(n, &labels, &kappa, &active);
        let sm = max_abs(rm.iter().flatten().copied()).max(1e-300);
        let ss = max_abs(rs.iter().flatten().copied()).max(1e-300);
        for i in 0..active.len() {
            for j in 0..active.len() {
                prop_assert!((m[i][j] - rm[i][j]).abs() <= 1e-13 * sm);
                prop_assert!((s[i][j] - rs[i][j]).abs() <= 1e-13 * ss);
                prop_assert_eq!(m[i][j], m[j][i]);
                prop_assert_eq!(s[i][j], s[j][i]);
            }
        }
    }

    #[test]
    fn subregion_assembly_matches_quadrature((n, labels, k) in labels_strategy(), region in (3usize..9).prop_flat_map(region_strategy)) {
        prop_assume!(region.x1 <= n && region.y1 <= n);
        let grid = FineGrid::new(n);
        let Ok(active) = active_nodes(&grid, &labels, Some(region)) else { return Ok(()) };
        let kappa = field(n, &labels, &k);
        let s = assemble_stiffness(&grid, &active, &labels, &kappa).unwrap().to_dense();
        let (_, rs) = reference_matrices(n, &labels, &kappa, &active);
        let ss = max_abs(rs.iter().flatten().copied()).max(1e-300);
        for i in 0..active.len() {
            for j in 0..active.len() {
                prop_assert!((s[i][j] - rs[i][j]).abs() <= 1e-13 * ss);
            }
        }
    }

    #[test]
    fn load_of_bilinear_source_is_exact((n, labels, _k) in labels_strategy(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let grid = FineGrid::new(n);
        let Ok(active) = active_nodes(&grid, &labels, None) else { return Ok(()) };
        let g = |x: f64, y: f64| 1.0 + a * x + b * y + x * y;
        let load = assemble_load(&grid, &active, &labels, &g);
        let cells: Vec<(usize, usize)> = (0..n).flat_map(|cy| (0..n).map(move |cx| (cx, cy))).filter(|&(cx, cy)| labels[cy * n + cx].is_active()).collect();
        for d in 0..active.len() {
            let mut e = vec![0.0; active.len()];
            e[d] = 1.0;
            let r = integrate(n, &active, &e, cells.iter().copied(), g);
            prop_assert!((load[d] - r).abs() <= 1e-14 * (1.0 + r.abs()), "{} vs {}", load[d], r);
        }
    }

    #[test]
    fn stiffness_is_positive_semidefinite((n, labels, k) in labels_strategy(), v in prop::collection::vec(-1.0f64..1.0, 64)) {
        let grid = FineGrid::new(n);
        let Ok(active) = active_nodes(&grid, &labels, None) else { return Ok(()) };
        let kappa = field(n, &labels, &k);
        let s = assemble_stiffness(&grid, &active, &labels, &kappa).unwrap();
        let x: Vec<f64> = (0..active.len()).map(|i| v[i % v.len()]).collect();
        let e: f64 = s.matvec(&x).iter().zip(&x).map(|(a, b)| a * b).sum();
        let cells = (0..n).flat_map(|cy| (0..n).map(move |cx| (cx, cy))).filter(|&(cx, cy)| labels[cy * n + cx].is_active());
        let r = energy(n, &kappa, &active, &x, &x, cells);
        prop_assert!(e >= -1e-12);
        prop_assert!((e - r).abs() <= 1e-12 * (1.0 + r));
    }
}
