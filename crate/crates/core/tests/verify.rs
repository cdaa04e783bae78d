use std::f64::consts::PI;

use levi_kernel::verify::*;
use levi_kernel::*;

fn samples_from(t: &[f64], x: &[f64], y: &[f64], f: impl Fn(f64, f64, f64) -> f64) -> Samples {
    let mut v = Vec::new();
    for &tt in t {
        for &xx in x {
            for &yy in y {
                v.push(f(tt, xx, yy));
            }
        }
    }
    Samples {
        factor: 1,
        t: t.to_vec(),
        x: x.to_vec(),
        y: y.to_vec(),
        p: [Some(v.clone()), None, None],
        q: Some(v.clone()),
        q0: Some(v),
        picard_deltas: vec![],
    }
}

fn stable_bounds(alpha: f64) -> BoundFunction {
    BoundFunction::new(ScaleProfile::fit(&RadialProfile::stable(1, alpha)).unwrap())
}

#[test]
fn holder_ratio_matches_brute_force() {
    let bf = stable_bounds(1.5);
    let (t, x, y) = (vec![0.25], (-10..=10).map(|i| i as f64 * 0.2).collect::<Vec<_>>(), vec![0.3]);
    let f = |_: f64, x: f64, _: f64| (2.0 * x).sin();
    let s = samples_from(&t, &x, &y, f);
    let r = 0.5;
    let reports = check_theorem_holder(&[s.clone(), s], &bf, 1.5, 0.5, 0, &[r]).unwrap();
    let rep = &reports[0];
    let mut expected = 0.0f64;
    for &a in &x {
        for &b in &x {
            if a == b {
                continue;
            }
            let den = (a - b).abs().powf(r).min(1.0)
                * bf.scale(0.25).powf(-r)
                * (bf.rho(0.25, &[0.3 - b]) + bf.rho(0.25, &[0.3 - a]));
            expected = expected.max(((f(0.25, a, 0.3) - f(0.25, b, 0.3)).abs()) / den);
        }
    }
    assert!((rep.max_ratio - expected).abs() <= 1e-12 * expected);
    assert_eq!(rep.verdict, Verdict::Stable);
    assert!(rep.admissible);
    assert_ne!(rep.witness.iter().find(|(k, _)| k == "x").unwrap().1, rep.witness.iter().find(|(k, _)| k == "x_prime").unwrap().1);
    assert_eq!(rep.param("r"), Some(0.5));
    assert!(rep.csv_row().starts_with("theorem_holder_level0,level=0;r=0.5;"));
}

#[test]
fn constant_fields_have_zero_ratios() {
    let bf = stable_bounds(1.5);
    let x: Vec<f64> = (-5..=5).map(|i| i as f64 * 0.2).collect();
    let s = samples_from(&[0.25, 0.5], &x, &[0.0, 0.5], |t, _, y| t + y);
    let reps = check_theorem_holder(&[s.clone()], &bf, 1.5, 0.5, 0, &[0.0, 0.25]).unwrap();
    assert!(reps.iter().all(|r| r.max_ratio == 0.0));
    let zero = samples_from(&[0.25], &x, &[0.0], |_, _, _| 0.0);
    let q = check_q_regularity(&[zero.clone(), zero.clone()], &bf, 1.5, 0.5, 0.5, &[0.25, 0.5]).unwrap();
    assert!(q.reports.iter().all(|r| r.max_ratio == 0.0 && r.verdict == Verdict::Stable));
    assert_eq!(q.uniformity, 1.0);
    assert_eq!(check_q0_bound(&[zero], &bf, 0.5).unwrap().max_ratio, 0.0);
}

#[test]
fn harness_preconditions() {
    let bf = stable_bounds(0.6);
    let s = samples_from(&[0.25], &[0.0, 0.1], &[0.0], |_, x, _| x);
    assert!(matches!(check_theorem_holder(&[s.clone()], &bf, 0.6, 0.3, 1, &[0.0]), Err(Error::Hypothesis(_))));
    assert!(matches!(check_q_regularity(&[s.clone()], &bf, 0.6, 0.3, 0.5, &[0.1]), Err(Error::Hypothesis(_))));
    assert!(matches!(check_q_regularity(&[s.clone()], &bf, 0.6, 0.3, 0.3, &[0.4]), Err(Error::Hypothesis(_))));
    assert!(check_theorem_holder(&[], &bf, 0.6, 0.3, 0, &[0.0]).is_err());
    // level 1 needs the order-1 field
    let bf = stable_bounds(1.8);
    assert!(check_theorem_holder(&[s], &bf, 1.8, 0.6, 1, &[0.0]).is_err());
    assert!(!exponent_admissible(1.5, 0.5, 0, 1.9));
}

#[test]
fn constant_coefficient_q_vanishes_in_the_harness() {
    let m = JumpModel::cauchy();
    let grid = HarnessGrid { t: vec![0.25, 0.5], y: vec![0.0], x_half_width: 1.0, x_step: 0.1, refinements: vec![1] };
    let base = ParametrixConfig::default();
    let s = sample_parametrix(&m, OperatorForm::Symmetrized, &base, &grid, 1, &[0], true).unwrap();
    assert!(s.q.as_ref().unwrap().iter().all(|&v| v == 0.0));
    assert!(s.q0.as_ref().unwrap().iter().all(|&v| v == 0.0));
    let ix = s.x.iter().position(|&x| x == 0.0).unwrap();
    let p = s.p(0, 1, ix, 0).unwrap();
    assert!((p - 1.0 / (0.5 * PI)).abs() < 1e-3 * p, "{p}");
}

fn cauchy_density(t: f64, u: f64) -> f64 {
    t / (PI * (t * t + u * u))
}

#[test]
fn monte_carlo_reproduces_the_cauchy_density() {
    let m = JumpModel::cauchy();
    let sp = ScaleProfile::fit(&m.jump.profile).unwrap();
    let y: Vec<f64> = (-15..=15).map(|i| i as f64 * 0.2).collect();
    let st = McSettings::default();
    let mc = mc_oracle(&m, OperatorForm::Symmetrized, &sp, 0.5, 0.0, 20_000, 0.1, &y, &st).unwrap();
    let reference = smoothed_reference(&|u| cauchy_density(0.5, u), &y, 0.1);
    assert!(agreement(&mc, &reference, 3.0) >= 0.9);
    // same seed, same estimate; quadrupling the paths halves the interval
    let again = mc_oracle(&m, OperatorForm::Symmetrized, &sp, 0.5, 0.0, 20_000, 0.1, &y, &st).unwrap();
    assert_eq!(mc, again);
    let big = mc_oracle(&m, OperatorForm::Symmetrized, &sp, 0.5, 0.0, 80_000, 0.1, &y, &st).unwrap();
    let j = y.iter().position(|&v| v == 0.0).unwrap();
    let ratio = big.half_width[j] / mc.half_width[j];
    assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
    let other = McSettings { seed: 99, ..st };
    assert_ne!(mc_oracle(&m, OperatorForm::Symmetrized, &sp, 0.5, 0.0, 20_000, 0.1, &y, &other).unwrap().density, mc.density);
}

#[test]
fn unstable_schemes_are_rejected() {
    let m = JumpModel::sine_stable(1.5, 1.0, 0.25, 0.5).unwrap();
    let sp = ScaleProfile::fit(&m.jump.profile).unwrap();
    let y = [0.0];
    let form = OperatorForm::Compensated;
    let too_fine = McSettings { small_jump_threshold: Some(1e-4), ..Default::default() };
    assert!(matches!(mc_oracle(&m, form, &sp, 0.25, 0.0, 100, 0.1, &y, &too_fine), Err(Error::SchemeRejected(_))));
    let no_steps = McSettings { steps: 0, ..Default::default() };
    assert!(matches!(mc_oracle(&m, form, &sp, 0.25, 0.0, 100, 0.1, &y, &no_steps), Err(Error::SchemeRejected(_))));
    assert!(mc_oracle(&m, form, &sp, 0.0, 0.0, 100, 0.1, &y, &McSettings::default()).is_err());
}

#[test]
fn smoothing_helpers_agree() {
    let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.025).collect();
    let f = |u: f64| cauchy_density(1.0, u);
    let values: Vec<f64> = grid.iter().map(|&u| f(u)).collect();
    let y = [-1.0, 0.0, 0.5, 2.0];
    let a = smoothed_reference(&f, &y, 0.1);
    let b = smoothed_samples(&grid, &values, &y, 0.1);
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-6, "{u} {v}");
    }
}
