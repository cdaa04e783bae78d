use levi_kernel::frozen::KernelCache;
use levi_kernel::parametrix::q0;
use levi_kernel::*;

fn sine() -> JumpModel {
    JumpModel::sine_stable(1.5, 1.0, 0.25, 0.5).unwrap()
}

fn small(t_eval: Vec<f64>, y: Vec<f64>) -> ParametrixConfig {
    let mut c = ParametrixConfig { t_eval, y_eval: y, ..Default::default() };
    c.space.half_width = 4.0;
    c
}

#[test]
fn constant_coefficient_degenerates_to_the_frozen_kernel() {
    // one-sided weights, kappa constant in x
    let jd = JumpDensity { profile: RadialProfile::stable(1, 1.5), sides: Sided::new(1.4, 0.6) };
    let m = JumpModel::with_derived_constants(jd, Coefficient::constant(1.3), 0.5).unwrap();
    let mut cfg = small(vec![0.25, 0.5], vec![-0.5, 0.0, 1.0]);
    // same period as the pointwise grid
    cfg.space.n = 2048;
    let par = Parametrix::solve(&m, OperatorForm::Compensated, &cfg).unwrap();
    assert_eq!(par.q0_field().max_abs(), 0.0);
    assert_eq!(par.q_field().field.max_abs(), 0.0);
    let sym = build_symbol(&m, &[0.0], OperatorForm::Compensated).unwrap();
    let settings = FftSettings::default();
    let xs: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
    for &t in &cfg.t_eval {
        let rows = par.heat_kernel_on(t, 0, &xs).unwrap();
        let peak = rows.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in cfg.y_eval.iter().enumerate() {
                let reference = frozen_kernel(&sym, t, x, y, 0, &settings).unwrap();
                assert!((rows[i][j] - reference).abs() <= 1e-5 * peak, "t {t} x {x} y {y}: {} vs {reference}", rows[i][j]);
            }
        }
        assert_eq!(par.phi(t, 0, 0.0).unwrap().max_abs(), 0.0);
    }
}

#[test]
fn spectral_q0_matches_pointwise_quadrature() {
    let m = sine();
    let mut cfg = small(vec![0.25], vec![0.0, 0.75]);
    cfg.space.n = 2048;
    let par = Parametrix::solve(&m, OperatorForm::Compensated, &cfg).unwrap();
    let field = par.q0_field();
    let spec = GeneratorSpec::default();
    let settings = FftSettings::default();
    let cache = KernelCache::new();
    let peak = field.max_abs();
    assert!(peak > 1e-3, "{peak}");
    for (ix, &x) in field.x_grid.iter().enumerate() {
        if (x * 20.0).round() as i64 % 10 != 0 || x.abs() > 2.0 {
            continue;
        }
        for (iy, &y) in field.y_grid.iter().enumerate() {
            let pointwise = q0(&m, &spec, &settings, &cache, 0.25, x, y).unwrap();
            let spectral = field.get(0, ix, iy);
            // semi-discrete generator vs continuum quadrature: O(dx^2)
            assert!((pointwise - spectral).abs() <= 5e-4 * peak, "x {x} y {y}: {pointwise} vs {spectral}");
            if x == y {
                assert!(pointwise.abs() < 1e-12 && spectral.abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_iterations_return_q0_and_iterations_contract() {
    let m = sine();
    let mut cfg = small(vec![0.5], vec![0.0]);
    cfg.n_picard = 0;
    let par = Parametrix::solve(&m, OperatorForm::Compensated, &cfg).unwrap();
    assert_eq!(par.q_field().field.values, par.q0_field().values);
    cfg.n_picard = 6;
    let par = Parametrix::solve(&m, OperatorForm::Compensated, &cfg).unwrap();
    let d = &par.deltas;
    assert_eq!(d.len(), 6);
    for n in 2..d.len() {
        assert!(d[n] < 0.5 * d[n - 1], "deltas {d:?}");
    }
}

#[test]
fn derivatives_match_finite_differences_and_kernel_is_nonnegative() {
    let m = JumpModel::sine_stable(1.8, 1.0, 0.25, 0.6).unwrap();
    let cfg = small(vec![0.25], vec![0.0, 0.5]);
    let par = Parametrix::solve(&m, OperatorForm::Compensated, &cfg).unwrap();
    let xs: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
    let h = 0.01;
    let d1 = par.heat_kernel_on(0.25, 1, &xs).unwrap();
    let p0 = par.heat_kernel_on(0.25, 0, &xs).unwrap();
    let pp = par.heat_kernel_shifted(0.25, 0, &xs, h).unwrap();
    let pm = par.heat_kernel_shifted(0.25, 0, &xs, -h).unwrap();
    let s1 = d1.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let s0 = p0.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..xs.len() {
        for j in 0..2 {
            let fd = (pp[i][j] - pm[i][j]) / (2.0 * h);
            assert!((fd - d1[i][j]).abs() <= 1e-3 * s1, "x {}: {fd} vs {}", xs[i], d1[i][j]);
            assert!(p0[i][j] >= -1e-6 * s0);
        }
    }
    // the pointwise accessor agrees with the row accessor
    let v = par.heat_kernel_at(0.25, 0.3, 0.5, 1).unwrap();
    assert!((v - d1[23][1]).abs() <= 1e-12 * s1);
}

#[test]
fn invalid_requests_are_reported() {
    let m = sine();
    let cfg = small(vec![0.25], vec![0.0]);
    let par = Parametrix::solve(&m, OperatorForm::Compensated, &cfg).unwrap();
    assert!(par.heat_kernel_at(0.3, 0.0, 0.0, 0).is_err());
    assert!(par.heat_kernel_at(0.25, 0.0, 0.5, 0).is_err());
    assert!(par.mass(0.25, 0.0).is_err());
    assert!(par.heat_kernel(0.25, 3, 0.0).is_err());
    let mut bad = cfg.clone();
    bad.time.grading = 1.0;
    assert!(Parametrix::solve(&m, OperatorForm::Compensated, &bad).is_err());
    let two_d = JumpModel::with_derived_constants(
        JumpDensity { profile: RadialProfile::stable(2, 1.5), sides: Sided::EVEN },
        Coefficient::constant(1.0),
        0.5,
    )
    .unwrap();
    assert!(matches!(Parametrix::solve(&two_d, OperatorForm::Compensated, &cfg), Err(Error::Unsupported(_))));
}

#[test]
fn mass_and_semigroup_on_a_small_window() {
    let m = sine();
    let mut cfg = ParametrixConfig { t_eval: vec![0.125, 0.25], all_y: true, ..Default::default() };
    cfg.space.n = 512;
    cfg.space.dx = 0.05;
    cfg.space.half_width = 5.0;
    let par = Parametrix::solve(&m, OperatorForm::Compensated, &cfg).unwrap();
    let mass = par.mass(0.25, 0.0).unwrap();
    assert!((mass - 1.0).abs() < 1e-2, "{mass}");
    let (lhs, rhs) = par.chapman_kolmogorov(0.125, 0.125, 0.0, 0.2).unwrap();
    assert!((lhs - rhs).abs() < 1e-2 * rhs);
}
