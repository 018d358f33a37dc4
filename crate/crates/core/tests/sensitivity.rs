use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use railevac::refdata::load_reference;
use railevac::sensitivity::*;
use railevac::Error;

const WIDTHS: [f64; 5] = [0.65, 0.75, 0.9, 1.1, 1.34];

/// Coefficients of the polynomial fitted to the measured data, H^2 blank.
const PUBLISHED_EXPERIMENT: [Option<f64>; 10] = [
    Some(80.82),
    Some(-49.76),
    Some(0.17),
    Some(-4.96),
    Some(15.29),
    None,
    Some(4.32),
    Some(-0.27),
    Some(0.26),
    Some(-0.53),
];

fn experiment() -> Vec<DesignPoint> {
    load_reference().unwrap().design_points()
}

fn grid(hs: &[f64]) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for &w in &WIDTHS {
        for &h in hs {
            for e in 0..3 {
                out.push([w, h, e as f64]);
            }
        }
    }
    out
}

fn points_from(alpha: &[Option<f64>; 10], xs: &[[f64; 3]]) -> Vec<DesignPoint> {
    xs.iter()
        .map(|x| DesignPoint::new(x[0], x[1], x[2] as u8, eval_poly(alpha, x)))
        .collect()
}

/// Normal-equations solve on the nine non-H^2 terms.
fn normal_equations(points: &[DesignPoint]) -> Vec<f64> {
    let cols: Vec<usize> = (0..10).filter(|&k| k != 5).collect();
    let x = DMatrix::from_fn(points.len(), cols.len(), |i, j| TERMS[cols[j]].eval(&points[i].inputs()));
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.tet));
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    xtx.cholesky().unwrap().solve(&xty).iter().copied().collect()
}

/// Leave-one-out by explicit refits.
fn brute_loo_cop(points: &[DesignPoint], cols: &[usize]) -> f64 {
    let n = points.len();
    let y: Vec<f64> = points.iter().map(|p| p.tet).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let mut press = 0.0;
    for skip in 0..n {
        let rows: Vec<usize> = (0..n).filter(|&i| i != skip).collect();
        let x = DMatrix::from_fn(rows.len(), cols.len(), |i, j| TERMS[cols[j]].eval(&points[rows[i]].inputs()));
        let yy = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
        let b = x.svd(true, true).solve(&yy, 1e-12).unwrap();
        let pred: f64 = cols
            .iter()
            .zip(b.iter())
            .map(|(&k, c)| c * TERMS[k].eval(&points[skip].inputs()))
            .sum();
        press += (y[skip] - pred).powi(2);
    }
    (1.0 - press / sst).clamp(0.0, 1.0)
}

#[test]
fn experiment_fit_reproduces_published_quality() {
    let pts = experiment();
    let m = fit_poly2(&pts).unwrap();
    assert!((m.r2 - 0.914).abs() <= 0.02, "R2 {}", m.r2);
    assert_eq!(m.collinear, vec!["H^2".to_string()]);
    assert!(m.alpha[5].is_none());
    assert!(m.alpha[1].unwrap() < 0.0);
    assert!(m.alpha[4].unwrap() > 0.0);
    assert!(m.alpha[8].unwrap() > 0.0);
    let oracle = normal_equations(&pts);
    let fitted: Vec<f64> = m.alpha.iter().flatten().copied().collect();
    for (a, b) in fitted.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
    }
    assert!(m.cop <= m.r2 + 0.05);
}

#[test]
fn published_coefficients_explain_the_measurements() {
    let pts = experiment();
    let obs: Vec<f64> = pts.iter().map(|p| p.tet).collect();
    let pred: Vec<f64> = pts.iter().map(|p| eval_poly(&PUBLISHED_EXPERIMENT, &p.inputs())).collect();
    let r2 = r_squared(&obs, &pred).unwrap();
    assert!((0.89..=0.94).contains(&r2), "R2 {r2}");
}

#[test]
fn exact_polynomial_is_recovered() {
    let alpha = [
        Some(90.0),
        Some(-60.0),
        Some(0.1),
        Some(-3.0),
        Some(20.0),
        Some(0.002),
        Some(4.0),
        Some(-0.2),
        Some(0.3),
        Some(-1.0),
    ];
    let pts = points_from(&alpha, &grid(&[0.0, 15.0, 28.0, 56.0]));
    let m = fit_poly2(&pts).unwrap();
    assert!(m.collinear.is_empty());
    for (a, b) in m.alpha.iter().zip(&alpha) {
        assert!((a.unwrap() - b.unwrap()).abs() < 1e-8, "{a:?} vs {b:?}");
    }
    assert!((m.cop - 1.0).abs() < 1e-6);
    assert!((m.r2 - 1.0).abs() < 1e-9);
}

#[test]
fn two_heterogeneity_levels_drop_h_squared() {
    let mut alpha = [None; 10];
    alpha[0] = Some(50.0);
    alpha[1] = Some(-10.0);
    alpha[2] = Some(0.3);
    let mut pts = points_from(&alpha, &grid(&[0.0, 28.0]));
    pts[3].tet += 0.5;
    let m = fit_poly2(&pts).unwrap();
    assert_eq!(m.collinear, vec!["H^2".to_string()]);
    assert!(m.alpha[5].is_none());
}

#[test]
fn constant_heterogeneity_drops_every_h_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<DesignPoint> = WIDTHS
        .iter()
        .flat_map(|&w| (0..3).map(move |_| w))
        .map(|w| DesignPoint::new(w, 28.0, 2, 100.0 - 30.0 * w + rng.random_range(-1.0..1.0)))
        .collect();
    let m = fit_filtered(&pts, &[Var::W, Var::H]).unwrap();
    assert!(m.excluded.contains(&Var::H));
    assert!(m.alpha[2].is_none() && m.alpha[5].is_none() && m.alpha[7].is_none());
    assert!(m.cop_of(Var::H).is_none());
    assert!((m.cop_of(Var::W).unwrap() - m.cop).abs() < 1e-12);
}

#[test]
fn loo_cop_matches_explicit_refits() {
    let pts = experiment();
    let cols: Vec<usize> = (0..10).filter(|&k| k != 5).collect();
    let fit = fit_terms(&pts, &(0..10).collect::<Vec<_>>()).unwrap();
    assert_eq!(fit.kept, cols);
    assert!((fit.cop - brute_loo_cop(&pts, &cols)).abs() < 1e-8);
}

#[test]
fn noise_has_no_prognosis() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let pts: Vec<DesignPoint> = (0..100)
            .map(|_| {
                DesignPoint::new(
                    WIDTHS[rng.random_range(0..5)],
                    [0.0, 28.0][rng.random_range(0..2)],
                    rng.random_range(0..3),
                    50.0 + rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        worst = worst.max(cop_crossval(&pts, &Var::ALL).unwrap());
    }
    assert!(worst < 0.15, "CoP {worst}");
}

#[test]
fn constant_response_is_degenerate() {
    let pts: Vec<DesignPoint> = grid(&[0.0, 28.0])
        .iter()
        .map(|x| DesignPoint::new(x[0], x[1], x[2] as u8, 42.0))
        .collect();
    assert!(matches!(fit_poly2(&pts), Err(Error::DegenerateModel(_))));
    assert!(matches!(analyze(&pts, "basic"), Err(Error::DegenerateModel(_))));
}

#[test]
fn single_factor_model_indices() {
    let mut alpha = [None; 10];
    alpha[1] = Some(2.0);
    let lv = [WIDTHS.to_vec(), vec![0.0, 28.0], vec![0.0, 1.0, 2.0]];
    let st = total_indices(&alpha, &lv).unwrap();
    assert!((st[0] - 1.0).abs() < 1e-12);
    assert!(st[1].abs() < 1e-12 && st[2].abs() < 1e-12);
    assert!(total_indices(&[Some(3.0), None, None, None, None, None, None, None, None, None], &lv).is_err());
}

#[test]
fn pure_interaction_shares_all_variance() {
    // Centred levels so the product has no main effects.
    let mut alpha = [None; 10];
    alpha[9] = Some(1.5);
    let lv = [vec![-1.0, 1.0], vec![0.0, 28.0], vec![-1.0, 0.0, 1.0]];
    let st = total_indices(&alpha, &lv).unwrap();
    assert!((st[0] - 1.0).abs() < 1e-12, "{st:?}");
    assert!((st[2] - 1.0).abs() < 1e-12, "{st:?}");
    assert!(st[1].abs() < 1e-12);
    let qmc = sampled_total_indices(&alpha, &lv, DEFAULT_SOBOL_POINTS).unwrap();
    for k in 0..3 {
        assert!((qmc[k] - st[k]).abs() < 0.02, "{qmc:?}");
    }
}

#[test]
fn analytic_and_sampled_indices_agree_on_experiment() {
    let pts = experiment();
    let m = fit_poly2(&pts).unwrap();
    let lv = design_levels(&pts);
    let a = total_indices(&m.alpha, &lv).unwrap();
    let s = sampled_total_indices(&m.alpha, &lv, DEFAULT_SOBOL_POINTS).unwrap();
    for k in 0..3 {
        assert!((a[k] - s[k]).abs() < 0.02, "{a:?} vs {s:?}");
    }
}

#[test]
fn cop_contribution_is_cop_times_index() {
    let r = analyze(&experiment(), "experiment").unwrap();
    for m in std::iter::once(&r.all).chain(r.per_exit.values()) {
        assert!((0.0..=1.0).contains(&m.cop) && (0.0..=1.0).contains(&m.r2));
        for (v, s) in &m.s_t {
            assert!(*s >= 0.0);
            assert!((m.cop_of(*v).unwrap() - m.cop * s).abs() < 1e-12);
        }
        assert!(m.cop <= m.r2 + 0.05);
    }
    assert_eq!(r.per_exit.len(), 3);
}

#[test]
fn experiment_stairs_slice_excludes_heterogeneity() {
    let r = analyze(&experiment(), "experiment").unwrap();
    let stairs = &r.per_exit[&1];
    assert!(stairs.excluded.contains(&Var::H), "{stairs:?}");
    let jump = &r.per_exit[&2];
    assert!(!jump.excluded.contains(&Var::H));
    assert!(jump.cop_of(Var::H).unwrap() > 0.2);
}

#[test]
fn report_tables() {
    let r = analyze(&experiment(), "experiment").unwrap();
    let mut buf = Vec::new();
    r.write_cop_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "slice,CoP,CoP_W,CoP_H,CoP_E");
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("stairs_E1,") && lines[3].contains("excluded"));
    assert!(lines[4].starts_with("jump_E2,") && lines[4].ends_with(",--"));
    let mut buf = Vec::new();
    r.write_coefficients_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.lines().next().unwrap().starts_with("model,alpha_0"));
    let first = text.lines().nth(1).unwrap();
    assert_eq!(first.split(',').nth(6), Some(""));
    let json = serde_json::to_string(&r).unwrap();
    let back: SensitivityReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.all.alpha.len(), 10);
    assert_eq!(back.per_exit.len(), 3);
}

#[test]
fn design_csv_round_trip_and_schema() {
    let pts = experiment();
    let mut buf = Vec::new();
    write_design_csv(&pts, &mut buf).unwrap();
    assert!(String::from_utf8(buf.clone()).unwrap().starts_with("W_m,H_pct,E_code,TET_s\n"));
    assert_eq!(read_design_csv(buf.as_slice()).unwrap(), pts);
    let bad = "W,H,E,TET\n0.65,0,0,55\n";
    assert!(matches!(read_design_csv(bad.as_bytes()), Err(Error::Schema(_))));
    let bad = "W_m,H_pct,E_code,TET_s\n0.65,0,7,55\n";
    assert!(matches!(read_design_csv(bad.as_bytes()), Err(Error::Schema(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residuals_are_orthogonal_to_regressors(seed in 0u64..10_000, hs in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = &[0.0, 15.0, 28.0, 56.0][..hs];
        let pts: Vec<DesignPoint> = grid(h)
            .iter()
            .map(|x| DesignPoint::new(x[0], x[1], x[2] as u8, rng.random_range(30.0..80.0)))
            .collect();
        let fit = fit_terms(&pts, &(0..10).collect::<Vec<_>>()).unwrap();
        let r = DVector::from_column_slice(&fit.residuals);
        for &k in &fit.kept {
            let c = DVector::from_iterator(pts.len(), pts.iter().map(|p| TERMS[k].eval(&p.inputs())));
            let d = r.dot(&c) / (c.norm() * r.norm().max(1e-300));
            prop_assert!(d.abs() < 1e-6, "term {} dot {}", TERMS[k].name, d);
        }
        prop_assert!(fit.cop <= fit.r2 + 1e-12);
    }

    #[test]
    fn sampled_indices_track_analytic(coefs in prop::collection::vec(-5.0f64..5.0, 10)) {
        let alpha: [Option<f64>; 10] = std::array::from_fn(|k| Some(coefs[k]));
        let lv = [WIDTHS.to_vec(), vec![0.0, 0.28], vec![0.0, 1.0, 2.0]];
        if let Ok(a) = total_indices(&alpha, &lv) {
            let s = sampled_total_indices(&alpha, &lv, 20_000).unwrap();
            for k in 0..3 {
                prop_assert!((a[k] - s[k]).abs() < 0.02, "{:?} vs {:?}", a, s);
            }
        }
    }
}
