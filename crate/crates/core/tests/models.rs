use approx::assert_relative_eq;
use levi_kernel::models::{CoefficientTerm, Invariant};
use levi_kernel::*;
use proptest::prelude::*;

fn stable(alpha: f64) -> JumpDensity {
    JumpDensity { profile: RadialProfile::stable(1, alpha), sides: Sided::EVEN }
}

fn half_sine(alpha: f64) -> JumpModel {
    JumpModel::with_derived_constants(stable(alpha), Coefficient::sine(1.0, 0.5), 0.5).unwrap()
}

fn classify(m: &JumpModel, grid: &SampleGrid) -> CaseTag {
    let sp = ScaleProfile::fit(&m.jump.profile).unwrap();
    classify_case(m, &sp, grid).unwrap()
}

fn one_sided_kappa(space: SpatialFactor, plus: f64, minus: f64) -> Coefficient {
    Coefficient { terms: vec![CoefficientTerm { space, jump: Sided::new(plus, minus) }] }
}

#[test]
fn sine_coefficient_passes_all_assumptions() {
    let m = half_sine(1.0);
    let (k0, k1) = (m.constants.kappa0, m.constants.kappa1);
    assert_relative_eq!(k0, 0.5, max_relative = 1e-12);
    assert_relative_eq!(k1, 1.5, max_relative = 1e-12);
    let report = validate_model(&m, &SampleGrid::default()).unwrap();
    assert!(report.all_passed(), "{:?}", report);
    // brute-force Hölder ratio of 1/2 sin on the sample grid stays below the declared constant
    let xs = levi_kernel::models::linspace(-4.0, 4.0, 33);
    let mut worst = 0.0f64;
    for &a in &xs {
        for &b in &xs {
            if a != b {
                worst = worst.max(0.5 * (a.sin() - b.sin()).abs() / (a - b).abs().powf(0.5));
            }
        }
    }
    assert!(worst <= m.constants.kappa2 * (1.0 + 1e-12));
}

#[test]
fn step_coefficient_fails_holder_with_witness_at_the_jump() {
    let kappa = Coefficient::constant(1.0).plus(
        SpatialFactor::PiecewiseHolder { amplitude: 0.5, exponent: 0.0, center: 0.0 },
        Sided::EVEN,
    );
    let m = JumpModel::new(
        stable(1.0),
        kappa,
        ModelConstants { c_j: 1.0, kappa0: 0.5, kappa1: 1.5, kappa2: 0.5, beta: 0.5 },
    )
    .unwrap();
    let report = validate_model(&m, &SampleGrid { x: (-4.0, 4.0, 32), ..SampleGrid::default() }).unwrap();
    let h = report.get(Invariant::CoefficientHolder);
    assert!(!h.passed);
    assert!(h.witness.iter().take(2).all(|v| v.abs() < 0.5), "{:?}", h.witness);
    assert!(h.lhs > h.rhs);
    assert!(report.get(Invariant::CoefficientBounds).passed);
    let rows = report.csv_rows();
    assert_eq!(rows.len(), Invariant::ALL.len());
    assert!(rows.iter().any(|r| r[0] == "coefficient_holder" && r[1] == "fail"));
}

#[test]
fn non_finite_coefficient_is_a_model_error() {
    let kappa = Coefficient::constant(f64::NAN);
    let m = JumpModel {
        dim: 1,
        jump: stable(1.0),
        kappa,
        constants: ModelConstants { c_j: 1.0, kappa0: 1.0, kappa1: 1.0, kappa2: 0.0, beta: 0.5 },
    };
    assert!(matches!(validate_model(&m, &SampleGrid::default()), Err(Error::ModelEvaluation { .. })));
}

#[test]
fn classification_examples() {
    let grid = SampleGrid::default();
    let p1 = classify(&half_sine(1.5), &grid);
    assert_eq!(p1.case, Case::P1);
    assert!((p1.param("alpha_h").unwrap() - 1.5).abs() <= 0.05);
    assert_eq!(p1.form(), OperatorForm::Compensated);
    let p2 = classify(&half_sine(0.5), &grid);
    assert_eq!(p2.case, Case::P2);
    assert_eq!(p2.form(), OperatorForm::PureJump);
    let p3 = classify(&half_sine(1.0), &grid);
    assert_eq!(p3.case, Case::P3);
    assert_eq!(p3.form(), OperatorForm::Symmetrized);
    assert!(p3.kappa_crit.is_none());
    // stable under refinement of every sample grid
    let fine = grid.refined();
    for (m, c) in [(half_sine(1.5), Case::P1), (half_sine(0.5), Case::P2), (half_sine(1.0), Case::P3)] {
        assert_eq!(classify(&m, &fine).case, c);
    }
}

#[test]
fn asymmetric_critical_model_is_q1_with_finite_constants() {
    let kappa = one_sided_kappa(SpatialFactor::Constant { value: 1.0 }, 1.0, 2.0)
        .plus(SpatialFactor::Sine { amplitude: 0.2, frequency: 1.0, phase: 0.0 }, Sided::new(1.0, 1.0));
    let m = JumpModel::with_derived_constants(stable(1.0), kappa, 0.5).unwrap();
    let tag = classify(&m, &SampleGrid::default());
    assert_eq!(tag.case, Case::Q1);
    let k0 = tag.kappa_crit.unwrap();
    assert!(k0.is_finite() && k0 > 0.0);
    assert!(tag.kappa_crit_holder.unwrap().is_finite());
}

#[test]
fn understated_comparability_constant_is_flagged() {
    let m = JumpModel::new(
        JumpDensity { profile: RadialProfile::stable(1, 1.0), sides: Sided::new(1.0, 3.0) },
        Coefficient::constant(1.0),
        ModelConstants { c_j: 1.0, kappa0: 1.0, kappa1: 1.0, kappa2: 0.0, beta: 0.5 },
    )
    .unwrap();
    let report = validate_model(&m, &SampleGrid::default()).unwrap();
    assert!(!report.get(Invariant::JumpComparable).passed);
}

#[test]
fn criticality_closed_form_and_symmetry() {
    let kappa = one_sided_kappa(SpatialFactor::Constant { value: 1.0 }, 1.0, 2.0);
    let m = JumpModel::with_derived_constants(stable(1.0), kappa, 0.5).unwrap();
    // int_{1/2}^1 z z^{-2} dz = ln 2 on each side, weights 1 and 2
    assert_relative_eq!(m.criticality_integral(&[0.0], 0.5).unwrap()[0], -(2f64.ln()), max_relative = 1e-9);
    assert_eq!(m.criticality_integral(&[0.0], 1.0).unwrap(), vec![0.0]);
    assert_eq!(half_sine(1.3).criticality_integral(&[0.7], 0.5).unwrap(), vec![0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn criticality_is_odd_under_reflection(a in 0.2f64..3.0, b in 0.2f64..3.0, r in 1e-3f64..0.9, x in -3.0f64..3.0, alpha in 0.3f64..1.9) {
        let m1 = JumpModel::with_derived_constants(stable(alpha), one_sided_kappa(SpatialFactor::Constant { value: 1.0 }, a, b), 0.5).unwrap();
        let m2 = JumpModel::with_derived_constants(stable(alpha), one_sided_kappa(SpatialFactor::Constant { value: 1.0 }, b, a), 0.5).unwrap();
        let v1 = m1.criticality_integral(&[x], r).unwrap()[0];
        let v2 = m2.criticality_integral(&[x], r).unwrap()[0];
        prop_assert!((v1 + v2).abs() <= 1e-12 * v1.abs().max(1e-300));
        // independent of x when kappa does not depend on x
        prop_assert_eq!(v1, m1.criticality_integral(&[x + 1.3], r).unwrap()[0]);
    }

    #[test]
    fn derived_constants_bound_the_coefficient(base in 1.0f64..3.0, amp in 0.0f64..0.9, x in -5.0f64..5.0, z in -5.0f64..5.0) {
        let m = JumpModel::sine_stable(1.5, base, amp, 0.5).unwrap();
        let k = m.kappa(&[x], &[z]);
        prop_assert!(k >= m.constants.kappa0 - 1e-12 && k <= m.constants.kappa1 + 1e-12);
    }
}
