use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_relative_eq;
use levi_kernel::frozen::{build_symbol, frozen_kernel, one_sided_symbols, FftSettings, FrozenKernel, SpectralGrid};
use levi_kernel::models::{Coefficient, JumpDensity, JumpModel, OperatorForm, RadialProfile, Sided};
use levi_kernel::Error;
use statrs::function::gamma::gamma;

// int_0^inf (1 - cos xi z) z^{-1-a} dz and int_0^inf (sin xi z - xi z 1{z<1}) z^{-1-a} dz
fn stable_oracle(alpha: f64, xi: f64) -> (f64, f64) {
    let g = -gamma(-alpha);
    let i = g * (PI * alpha / 2.0).cos() * xi.powf(alpha);
    let s = g * (PI * alpha / 2.0).sin() * xi.powf(alpha) - xi / (1.0 - alpha);
    (i, s)
}

#[test]
fn one_sided_symbols_match_stable_closed_forms() {
    for &alpha in &[0.4, 0.8, 1.3, 1.5, 1.9] {
        let nu = RadialProfile::stable(1, alpha);
        for &xi in &[0.05, 0.3, 1.0, 7.0, 50.0, 400.0] {
            let (p, m) = one_sided_symbols(&nu, xi, OperatorForm::Compensated).unwrap();
            let (i, s) = stable_oracle(alpha, xi);
            assert_relative_eq!(p.re, i, max_relative = 1e-8);
            assert_relative_eq!(-p.im, s, max_relative = 1e-8, epsilon = 1e-10);
            assert_relative_eq!(m.im, s, max_relative = 1e-8, epsilon = 1e-10);
            // negative frequencies: conjugates
            let (pn, _) = one_sided_symbols(&nu, -xi, OperatorForm::Compensated).unwrap();
            assert_relative_eq!(pn.im, -p.im, max_relative = 1e-12);
        }
    }
}

#[test]
fn pure_jump_symbol_and_its_refusal() {
    let nu = RadialProfile::stable(1, 0.6);
    let (p, _) = one_sided_symbols(&nu, 2.0, OperatorForm::PureJump).unwrap();
    let g = -gamma(-0.6);
    assert_relative_eq!(-p.im, g * (0.3 * PI).sin() * 2f64.powf(0.6), max_relative = 1e-8);
    let m = JumpModel::sine_stable(1.5, 1.0, 0.25, 0.5).unwrap();
    assert_eq!(build_symbol(&m, &[0.0], OperatorForm::PureJump).unwrap_err(), Error::FirstMomentDivergence);
}

#[test]
fn cauchy_symbol_is_absolute_value() {
    let m = JumpModel::cauchy();
    let sym = build_symbol(&m, &[0.0], OperatorForm::Symmetrized).unwrap();
    for &xi in &[0.1, 0.5, 1.0, 3.3, 17.0, 50.0] {
        assert_relative_eq!(sym.psi(xi).unwrap().re, xi, max_relative = 1e-4);
        assert_relative_eq!(sym.psi(-xi).unwrap().re, xi, max_relative = 1e-4);
    }
    assert_eq!(sym.psi(0.0).unwrap().norm(), 0.0);
    let doubled = sym.scaled(2.0);
    assert_relative_eq!(doubled.psi(1.7).unwrap().re, 2.0 * sym.psi(1.7).unwrap().re, max_relative = 1e-14);
}

#[test]
fn symbol_invariants() {
    let jd = JumpDensity { profile: RadialProfile::tempered(1, 1.3, 0.5), sides: Sided::new(1.5, 0.7) };
    let m = JumpModel::with_derived_constants(jd, Coefficient::sine(1.0, 0.3), 0.5).unwrap();
    let sym = build_symbol(&m, &[0.4], OperatorForm::Compensated).unwrap();
    for &xi in &[0.2, 1.0, 9.0] {
        let a = sym.psi(xi).unwrap();
        let b = sym.psi(-xi).unwrap();
        assert!(a.re > 0.0);
        assert_relative_eq!(a.re, b.re, max_relative = 1e-14);
        assert_relative_eq!(a.im, -b.im, max_relative = 1e-14);
        assert!(a.im.abs() > 1e-3);
    }
    let sym = build_symbol(&m, &[0.4], OperatorForm::Symmetrized).unwrap();
    assert_eq!(sym.psi(2.5).unwrap().im, 0.0);
}

fn cauchy_density(t: f64, u: f64) -> f64 {
    t / (PI * (t * t + u * u))
}

#[test]
fn cauchy_kernel_closed_form() {
    let m = JumpModel::cauchy();
    let sym = build_symbol(&m, &[0.0], OperatorForm::Symmetrized).unwrap();
    let s = FftSettings::default();
    assert_relative_eq!(frozen_kernel(&sym, 1.0, 0.0, 0.0, 0, &s).unwrap(), 1.0 / PI, max_relative = 1e-6);
    assert_relative_eq!(frozen_kernel(&sym, 1.0, 0.0, 1.0, 0, &s).unwrap(), 0.5 / PI, max_relative = 1e-6);
    assert!(frozen_kernel(&sym, 1.0, 0.3, 0.3, 1, &s).unwrap().abs() < 1e-12);
    for &t in &[0.25, 1.0] {
        for &u in &[-5.0, -2.5, -0.7, 0.0, 0.3, 1.0, 4.0, 5.0] {
            let v = frozen_kernel(&sym, t, 1.0, 1.0 + u, 0, &s).unwrap();
            assert_relative_eq!(v, cauchy_density(t, u), max_relative = 1e-3);
        }
    }
}

#[test]
fn resolution_limit_is_reported() {
    let m = JumpModel::cauchy();
    let sym = build_symbol(&m, &[0.0], OperatorForm::Symmetrized).unwrap();
    let s = FftSettings { n_max: 1024, ..FftSettings::default() };
    match frozen_kernel(&sym, 0.01, 0.0, 0.0, 0, &s) {
        Err(Error::ResolutionExceeded { t, min_t }) => {
            assert_eq!(t, 0.01);
            assert!(min_t > 0.01 && min_t < 1.0);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn one_sided_drift_moves_mode_in_the_jump_direction() {
    // jumps only to the right: the density of y - x is concentrated at u > 0
    let jd = JumpDensity { profile: RadialProfile::tempered(1, 0.8, 1.0), sides: Sided::new(1.0, 0.0) };
    let m = JumpModel::new(
        jd,
        Coefficient::constant(1.0),
        levi_kernel::ModelConstants { c_j: 1.0, kappa0: 1.0, kappa1: 1.0, kappa2: 0.0, beta: 0.5 },
    )
    .unwrap();
    let sym = build_symbol(&m, &[0.0], OperatorForm::PureJump).unwrap();
    let grid = Arc::new(SpectralGrid::new(&m.jump.profile, OperatorForm::PureJump, 2048, 0.02).unwrap());
    let k = FrozenKernel::new(&sym, grid.clone(), 1.0).unwrap();
    let g = k.on_grid(0);
    let n = g.len();
    let right: f64 = (1..n / 2).map(|j| g[j]).sum();
    let left: f64 = (n / 2 + 1..n).map(|j| g[j]).sum();
    assert!(right > 20.0 * left.abs(), "right {right} left {left}");
    // near the mean jump displacement (about 4.6) vs. its mirror image
    let (fwd, back) = (k.at(4.5, 0, false), k.at(-4.5, 0, false));
    assert!(fwd > 1e-2 && fwd > 1e3 * back.abs(), "{fwd} {back}");
}

#[test]
fn derivative_orders_agree_with_finite_differences() {
    let m = JumpModel::sine_stable(1.5, 1.0, 0.25, 0.5).unwrap();
    let sym = build_symbol(&m, &[0.3], OperatorForm::Compensated).unwrap();
    let grid = Arc::new(SpectralGrid::new(&m.jump.profile, OperatorForm::Compensated, 1024, 0.05).unwrap());
    let k = FrozenKernel::new(&sym, grid, 0.3).unwrap();
    let h = 1e-3;
    for &u in &[-1.0, -0.2, 0.0, 0.35, 1.5] {
        // d/dx p(t, x, x + u) at fixed y: u -> u - h
        let fd1 = (k.at(u - h, 0, false) - k.at(u + h, 0, false)) / (2.0 * h);
        let fd2 = (k.at(u - h, 0, false) - 2.0 * k.at(u, 0, false) + k.at(u + h, 0, false)) / (h * h);
        let d1 = k.at(u, 1, false);
        let d2 = k.at(u, 2, false);
        let scale1 = 1.0f64;
        assert!((fd1 - d1).abs() < 1e-4 * scale1.max(d1.abs()), "{u}: {fd1} vs {d1}");
        assert!((fd2 - d2).abs() < 1e-4 * 10f64.max(d2.abs()), "{u}: {fd2} vs {d2}");
    }
}

#[test]
fn mass_and_semigroup_on_the_grid() {
    let m = JumpModel::sine_stable(1.5, 1.0, 0.25, 0.5).unwrap();
    let sym = build_symbol(&m, &[1.1], OperatorForm::Compensated).unwrap();
    let grid = Arc::new(SpectralGrid::new(&m.jump.profile, OperatorForm::Compensated, 1024, 0.05).unwrap());
    let a = FrozenKernel::new(&sym, grid.clone(), 0.2).unwrap().on_grid(0);
    let b = FrozenKernel::new(&sym, grid.clone(), 0.3).unwrap().on_grid(0);
    let c = FrozenKernel::new(&sym, grid.clone(), 0.5).unwrap().on_grid(0);
    let dx = grid.dx;
    let mass: f64 = a.iter().sum::<f64>() * dx;
    assert!((mass - 1.0).abs() < 1e-6);
    let n = a.len();
    let peak = c.iter().cloned().fold(0.0, f64::max);
    for &j in &[0usize, 3, 20, n - 7] {
        let conv: f64 = (0..n).map(|i| a[i] * b[(j + n - i) % n]).sum::<f64>() * dx;
        assert!((conv - c[j]).abs() < 1e-4 * peak);
    }
}
