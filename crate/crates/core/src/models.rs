//! Operator data: the radial jump profile, the jump density, the state
//! dependent coefficient, the standing assumptions checked on sample grids and
//! the case classification that selects the operator form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ClauseFailures, Error, Result};
use crate::quad::{self, Tolerance};
use crate::scales::ScaleProfile;

/// Radial profile `nu(r) = scale * r^{-d-alpha} * exp(-tempering * r)`.
///
/// `tempering == 0` is the stable family, `tempering > 0` the tempered one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub dim: usize,
    pub alpha: f64,
    pub scale: f64,
    pub tempering: f64,
}

impl RadialProfile {
    pub fn stable(dim: usize, alpha: f64) -> Self {
        Self { dim, alpha, scale: 1.0, tempering: 0.0 }
    }

    pub fn tempered(dim: usize, alpha: f64, rate: f64) -> Self {
        Self { dim, alpha, scale: 1.0, tempering: rate }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    fn power(&self) -> f64 {
        self.dim as f64 + self.alpha
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.scale * r.powf(-self.power()) * (-self.tempering * r).exp()
    }

    /// k-th derivative in `r`.
    pub fn derivative(&self, r: f64, k: usize) -> f64 {
        // d^k/dr^k [r^{-p} e^{-lr}] = e^{-lr} sum_m C(k,m) (-l)^{k-m} (-p)_m r^{-p-m}
        let p = self.power();
        let l = self.tempering;
        let mut total = 0.0;
        let mut binom = 1.0;
        for m in 0..=k {
            if m > 0 {
                binom = binom * (k - m + 1) as f64 / m as f64;
            }
            let mut falling = 1.0;
            for i in 0..m {
                falling *= -p - i as f64;
            }
            let lam = if k - m == 0 { 1.0 } else { (-l).powi((k - m) as i32) };
            total += binom * lam * falling * r.powf(-p - m as f64);
        }
        self.scale * (-l * r).exp() * total
    }

    /// Surface measure of the unit sphere in `R^d`.
    pub fn sphere_area(&self) -> f64 {
        sphere_area(self.dim)
    }

    pub fn family_name(&self) -> &'static str {
        if self.tempering > 0.0 {
            "tempered"
        } else {
            "stable"
        }
    }
}

pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        d => {
            let half = d as f64 / 2.0;
            2.0 * std::f64::consts::PI.powf(half) / gamma(half)
        }
    }
}

fn gamma(x: f64) -> f64 {
    // Lanczos, g = 7
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// Weights applied to the two half-lines (by the sign of the first coordinate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sided {
    pub plus: f64,
    pub minus: f64,
}

impl Sided {
    pub const EVEN: Sided = Sided { plus: 1.0, minus: 1.0 };

    pub fn new(plus: f64, minus: f64) -> Self {
        Self { plus, minus }
    }

    pub fn at(&self, z0: f64) -> f64 {
        if z0 > 0.0 {
            self.plus
        } else if z0 < 0.0 {
            self.minus
        } else {
            0.5 * (self.plus + self.minus)
        }
    }

    pub fn is_even(&self) -> bool {
        self.plus == self.minus
    }
}

impl Default for Sided {
    fn default() -> Self {
        Sided::EVEN
    }
}

/// Jump density `J(z) = nu(|z|) * w(sign z_1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpDensity {
    pub profile: RadialProfile,
    pub sides: Sided,
}

impl JumpDensity {
    pub fn eval(&self, z: &[f64]) -> f64 {
        let r = norm(z);
        self.profile.eval(r) * self.sides.at(z[0])
    }

    pub fn is_symmetric(&self) -> bool {
        self.sides.is_even()
    }
}

/// Spatial factor of a coefficient term, a function of the first coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialFactor {
    Constant {
        value: f64,
    },
    /// `amplitude * sin(frequency * x + phase)`
    Sine {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Smooth compactly supported bump of height `amplitude` on `|x - center| < width`.
    Bump {
        amplitude: f64,
        #[serde(default)]
        center: f64,
        #[serde(default = "one")]
        width: f64,
    },
    /// `amplitude * sign(x - center) * min(|x - center|, 1)^exponent`;
    /// exponent 0 gives a jump discontinuity.
    PiecewiseHolder {
        amplitude: f64,
        exponent: f64,
        #[serde(default)]
        center: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl SpatialFactor {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SpatialFactor::Constant { value } => value,
            SpatialFactor::Sine { amplitude, frequency, phase } => {
                amplitude * (frequency * x + phase).sin()
            }
            SpatialFactor::Bump { amplitude, center, width } => {
                let u = (x - center) / width;
                if u.abs() < 1.0 {
                    amplitude * (1.0 - 1.0 / (1.0 - u * u)).exp()
                } else {
                    0.0
                }
            }
            SpatialFactor::PiecewiseHolder { amplitude, exponent, center } => {
                let d = x - center;
                if d == 0.0 {
                    0.0
                } else if exponent == 0.0 {
                    amplitude * d.signum()
                } else {
                    amplitude * d.signum() * d.abs().min(1.0).powf(exponent)
                }
            }
        }
    }

    /// Range `[lo, hi]` of the factor over the real line.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            SpatialFactor::Constant { value } => (value, value),
            SpatialFactor::Sine { amplitude, .. } | SpatialFactor::PiecewiseHolder { amplitude, .. } => {
                (-amplitude.abs(), amplitude.abs())
            }
            SpatialFactor::Bump { amplitude, .. } => (amplitude.min(0.0), amplitude.max(0.0)),
        }
    }

    /// Smallest `c` with `|f(x) - f(y)| <= c |x - y|^beta`, or `None` when the
    /// factor is not `beta`-Hölder.
    pub fn holder_constant(&self, beta: f64) -> Option<f64> {
        match *self {
            SpatialFactor::Constant { .. } => Some(0.0),
            SpatialFactor::Sine { amplitude, frequency, .. } => {
                // min(w d, 2) <= 2^{1-b} (w d)^b
                Some(amplitude.abs() * 2f64.powf(1.0 - beta) * frequency.abs().powf(beta))
            }
            SpatialFactor::Bump { amplitude, width, .. } => {
                // the bump profile has Lipschitz constant below 2.0 / width
                let lip = 2.0 * amplitude.abs() / width;
                let osc = amplitude.abs();
                Some(osc.powf(1.0 - beta) * lip.powf(beta))
            }
            SpatialFactor::PiecewiseHolder { amplitude, exponent, .. } => {
                if exponent >= beta && exponent > 0.0 {
                    Some(amplitude.abs() * 2f64.powf(1.0 - beta))
                } else {
                    None
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SpatialFactor::Constant { .. })
    }
}

/// One separable term `a(x) * b(z)` of the coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTerm {
    pub space: SpatialFactor,
    #[serde(default)]
    pub jump: Sided,
}

/// `kappa(x, z) = sum_k a_k(x) b_k(z)` with `b_k` constant on each half-line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub terms: Vec<CoefficientTerm>,
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Self {
            terms: vec![CoefficientTerm {
                space: SpatialFactor::Constant { value },
                jump: Sided::EVEN,
            }],
        }
    }

    /// `base + amplitude * sin(x)`.
    pub fn sine(base: f64, amplitude: f64) -> Self {
        Self::constant(base).plus(SpatialFactor::Sine { amplitude, frequency: 1.0, phase: 0.0 }, Sided::EVEN)
    }

    pub fn plus(mut self, space: SpatialFactor, jump: Sided) -> Self {
        self.terms.push(CoefficientTerm { space, jump });
        self
    }

    /// Multiplies every term's jump factor by `sides`.
    pub fn with_jump_factor(mut self, sides: Sided) -> Self {
        for t in &mut self.terms {
            t.jump = Sided::new(t.jump.plus * sides.plus, t.jump.minus * sides.minus);
        }
        self
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.space.eval(x[0]) * t.jump.at(z[0]))
            .sum()
    }

    /// Weights `(c_+(w), c_-(w))` of the one-sided coefficient at freeze point `w`.
    pub fn sided_at(&self, w: f64) -> Sided {
        let mut s = Sided::new(0.0, 0.0);
        for t in &self.terms {
            let a = t.space.eval(w);
            s.plus += a * t.jump.plus;
            s.minus += a * t.jump.minus;
        }
        s
    }

    pub fn is_even_in_z(&self) -> bool {
        self.terms.iter().all(|t| t.jump.is_even())
    }

    pub fn is_constant_in_x(&self) -> bool {
        self.terms.iter().all(|t| t.space.is_constant())
    }

    /// Conservative `(kappa0, kappa1)` from the term ranges.
    pub fn bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for side in [true, false] {
            let (mut l, mut h) = (0.0, 0.0);
            for t in &self.terms {
                let b = if side { t.jump.plus } else { t.jump.minus };
                let (a0, a1) = t.space.range();
                let (u, v) = (a0 * b, a1 * b);
                l += u.min(v);
                h += u.max(v);
            }
            lo = lo.min(l);
            hi = hi.max(h);
        }
        (lo, hi)
    }

    pub fn holder_constant(&self, beta: f64) -> Option<f64> {
        let mut total = 0.0;
        for t in &self.terms {
            let b = t.jump.plus.abs().max(t.jump.minus.abs());
            total += t.space.holder_constant(beta)? * b;
        }
        Some(total)
    }
}

/// Which of the three operator forms is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorForm {
    /// Compensated by the gradient on `|z| < 1`.
    Compensated,
    /// No compensation; needs an integrable first moment near the origin.
    PureJump,
    /// Second symmetric difference.
    Symmetrized,
}

impl fmt::Display for OperatorForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OperatorForm::Compensated => "compensated",
            OperatorForm::PureJump => "pure-jump",
            OperatorForm::Symmetrized => "symmetrized",
        };
        f.write_str(s)
    }
}

/// Declared constants of the standing assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub c_j: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub beta: f64,
}

/// The operator data `(nu, J, kappa)` together with its declared constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpModel {
    pub dim: usize,
    pub jump: JumpDensity,
    pub kappa: Coefficient,
    pub constants: ModelConstants,
}

impl JumpModel {
    /// Builds a model with explicitly declared constants.
    pub fn new(jump: JumpDensity, kappa: Coefficient, constants: ModelConstants) -> Result<Self> {
        let dim = jump.profile.dim;
        if !(1..=2).contains(&dim) {
            return Err(Error::Unsupported(format!("dimension {dim}; only d = 1, 2 are supported")));
        }
        if !(constants.beta > 0.0 && constants.beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta = {} must lie in (0, 1)", constants.beta)));
        }
        if constants.c_j < 1.0 {
            return Err(Error::InvalidArgument("C_J must be at least 1".into()));
        }
        if !(constants.kappa0 > 0.0 && constants.kappa0 <= constants.kappa1) {
            return Err(Error::InvalidArgument("need 0 < kappa0 <= kappa1".into()));
        }
        if kappa.terms.is_empty() {
            return Err(Error::InvalidArgument("coefficient has no terms".into()));
        }
        Ok(Self { dim, jump, kappa, constants })
    }

    /// Builds a model deriving `C_J`, `kappa0`, `kappa1` and `kappa2` from the
    /// structure of `J` and `kappa`.
    pub fn with_derived_constants(jump: JumpDensity, kappa: Coefficient, beta: f64) -> Result<Self> {
        let s = jump.sides;
        let c_j = [s.plus, 1.0 / s.plus, s.minus, 1.0 / s.minus]
            .into_iter()
            .fold(1.0f64, f64::max);
        let (kappa0, kappa1) = kappa.bounds();
        let kappa2 = kappa.holder_constant(beta).ok_or_else(|| {
            Error::InvalidArgument(format!("coefficient is not {beta}-Hölder; declare kappa2 explicitly"))
        })?;
        Self::new(jump, kappa, ModelConstants { c_j, kappa0, kappa1, kappa2, beta })
    }

    /// One-dimensional stable model `nu(r) = r^{-1-alpha}` with `kappa = base + amp sin(x)`.
    pub fn sine_stable(alpha: f64, base: f64, amplitude: f64, beta: f64) -> Result<Self> {
        Self::with_derived_constants(
            JumpDensity { profile: RadialProfile::stable(1, alpha), sides: Sided::EVEN },
            Coefficient::sine(base, amplitude),
            beta,
        )
    }

    /// Cauchy model: `J(z) = z^{-2} / pi`, constant coefficient.
    pub fn cauchy() -> Self {
        Self::with_derived_constants(
            JumpDensity {
                profile: RadialProfile::stable(1, 1.0).with_scale(1.0 / std::f64::consts::PI),
                sides: Sided::EVEN,
            },
            Coefficient::constant(1.0),
            0.5,
        )
        .expect("Cauchy model is valid")
    }

    pub fn nu(&self, r: f64) -> f64 {
        self.jump.profile.eval(r)
    }

    pub fn j(&self, z: &[f64]) -> f64 {
        self.jump.eval(z)
    }

    pub fn kappa(&self, x: &[f64], z: &[f64]) -> f64 {
        self.kappa.eval(x, z)
    }

    pub fn symmetric_j(&self) -> bool {
        self.jump.is_symmetric()
    }

    pub fn symmetric_kappa_in_z(&self) -> bool {
        self.kappa.is_even_in_z()
    }

    pub fn alpha(&self) -> f64 {
        self.jump.profile.alpha
    }

    /// One-sided weights of `kappa(w, z) J(z) / nu(|z|)` in one dimension.
    pub fn sided_intensity(&self, w: f64) -> Sided {
        let c = self.kappa.sided_at(w);
        Sided::new(c.plus * self.jump.sides.plus, c.minus * self.jump.sides.minus)
    }

    /// `integral_{r <= |z| < 1} z kappa(x, z) J(z) dz`.
    pub fn criticality_integral(&self, x: &[f64], r: f64) -> Result<Vec<f64>> {
        criticality_integral(self, x, r)
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Sample grids on which the standing assumptions are checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleGrid {
    /// Uniform grid per coordinate for `x` and `y`: `(min, max, points)`.
    pub x: (f64, f64, usize),
    /// Log-spaced jump radii `(min, max, points)`.
    pub z_radius: (f64, f64, usize),
    /// Directions on the unit sphere (ignored in one dimension).
    pub z_directions: usize,
    /// Log-spaced radii for the criticality integrals.
    pub r: (f64, f64, usize),
}

impl Default for SampleGrid {
    fn default() -> Self {
        Self {
            x: (-4.0, 4.0, 33),
            z_radius: (1e-4, 1e2, 61),
            z_directions: 16,
            r: (1e-3, 1.0, 25),
        }
    }
}

impl SampleGrid {
    /// Same ranges with doubled point densities.
    pub fn refined(&self) -> Self {
        Self {
            x: (self.x.0, self.x.1, 2 * self.x.2 - 1),
            z_radius: (self.z_radius.0, self.z_radius.1, 2 * self.z_radius.2 - 1),
            z_directions: 2 * self.z_directions,
            r: (self.r.0, self.r.1, 2 * self.r.2 - 1),
        }
    }

    pub fn x_points(&self, dim: usize) -> Vec<Vec<f64>> {
        let axis = linspace(self.x.0, self.x.1, self.x.2);
        match dim {
            1 => axis.into_iter().map(|v| vec![v]).collect(),
            _ => {
                let mut out = Vec::with_capacity(axis.len() * axis.len());
                for &a in &axis {
                    for &b in &axis {
                        out.push(vec![a, b]);
                    }
                }
                out
            }
        }
    }

    pub fn z_points(&self, dim: usize) -> Vec<Vec<f64>> {
        let radii = logspace(self.z_radius.0, self.z_radius.1, self.z_radius.2);
        let mut out = Vec::new();
        match dim {
            1 => {
                for &r in &radii {
                    out.push(vec![r]);
                    out.push(vec![-r]);
                }
            }
            _ => {
                for &r in &radii {
                    for k in 0..self.z_directions {
                        let th = 2.0 * std::f64::consts::PI * k as f64 / self.z_directions as f64;
                        out.push(vec![r * th.cos(), r * th.sin()]);
                    }
                }
            }
        }
        out
    }

    pub fn r_points(&self) -> Vec<f64> {
        logspace(self.r.0, self.r.1, self.r.2)
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

/// Standing assumption being checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Invariant {
    NuMonotone,
    LevyIntegrable,
    JumpComparable,
    CoefficientBounds,
    CoefficientHolder,
}

impl Invariant {
    pub const ALL: [Invariant; 5] = [
        Invariant::NuMonotone,
        Invariant::LevyIntegrable,
        Invariant::JumpComparable,
        Invariant::CoefficientBounds,
        Invariant::CoefficientHolder,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Invariant::NuMonotone => "nu_monotone",
            Invariant::LevyIntegrable => "levy_integrable",
            Invariant::JumpComparable => "jump_comparable",
            Invariant::CoefficientBounds => "coefficient_bounds",
            Invariant::CoefficientHolder => "coefficient_holder",
        }
    }
}

/// Outcome of one invariant check. `witness` is the sample point with the
/// largest `lhs - rhs` (the violating point when `passed` is false).
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantCheck {
    pub invariant: Invariant,
    pub passed: bool,
    pub witness: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<InvariantCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, inv: Invariant) -> &InvariantCheck {
        self.checks
            .iter()
            .find(|c| c.invariant == inv)
            .expect("every invariant is checked")
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.checks
            .iter()
            .map(|c| {
                vec![
                    c.invariant.id().to_string(),
                    if c.passed { "pass" } else { "fail" }.to_string(),
                    c.witness.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(" "),
                    format!("{:.10e}", c.lhs),
                    format!("{:.10e}", c.rhs),
                ]
            })
            .collect()
    }
}

const SLACK: f64 = 1e-12;

struct Worst {
    witness: Vec<f64>,
    lhs: f64,
    rhs: f64,
    gap: f64,
}

impl Worst {
    fn new() -> Self {
        Self { witness: vec![], lhs: 0.0, rhs: 0.0, gap: f64::NEG_INFINITY }
    }

    fn offer(&mut self, witness: impl FnOnce() -> Vec<f64>, lhs: f64, rhs: f64) {
        let gap = lhs - rhs * (1.0 + SLACK) - SLACK * rhs.abs().max(1e-300);
        if gap > self.gap {
            self.gap = gap;
            self.lhs = lhs;
            self.rhs = rhs;
            self.witness = witness();
        }
    }

    fn finish(self, invariant: Invariant) -> InvariantCheck {
        InvariantCheck {
            invariant,
            passed: self.gap <= 0.0,
            witness: self.witness,
            lhs: self.lhs,
            rhs: self.rhs,
        }
    }
}

fn finite(what: &'static str, v: f64, location: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::ModelEvaluation { what, location: location.to_vec() })
    }
}

/// Checks the standing assumptions on the sample grids.
pub fn validate_model(m: &JumpModel, grid: &SampleGrid) -> Result<ValidationReport> {
    let d = m.dim;
    let c = m.constants;
    let xs = grid.x_points(d);
    let zs = grid.z_points(d);
    let radii = logspace(grid.z_radius.0, grid.z_radius.1, grid.z_radius.2);

    // nu non-increasing
    let mut mono = Worst::new();
    let mut prev: Option<(f64, f64)> = None;
    for &r in &radii {
        let v = finite("nu", m.nu(r), &[r])?;
        if let Some((r0, v0)) = prev {
            // lhs = nu(r2), rhs = nu(r1) for r1 < r2
            mono.offer(|| vec![r0, r], v, v0);
        }
        prev = Some((r, v));
    }

    // Levy integrability: integral (1 ^ |z|^2) nu(|z|) dz, truncated at the
    // largest sampled radius with a monotone majorant for the tail.
    let levy = levy_integrability(m, grid.z_radius.1);

    // comparability of J with nu
    let mut comp = Worst::new();
    for z in &zs {
        let r = norm(z);
        let nu = finite("nu", m.nu(r), z)?;
        let j = finite("J", m.j(z), z)?;
        comp.offer(|| z.clone(), j, c.c_j * nu);
        comp.offer(|| z.clone(), nu / c.c_j, j);
    }

    // coefficient bounds and Hölder continuity
    let mut bounds = Worst::new();
    let mut holder = Worst::new();
    let mut kvals = vec![vec![0.0; zs.len()]; xs.len()];
    for (i, x) in xs.iter().enumerate() {
        for (k, z) in zs.iter().enumerate() {
            let v = m.kappa(x, z);
            if !v.is_finite() {
                let mut loc = x.clone();
                loc.extend_from_slice(z);
                return Err(Error::ModelEvaluation { what: "kappa", location: loc });
            }
            kvals[i][k] = v;
            let wit = || {
                let mut w = x.clone();
                w.extend_from_slice(z);
                w
            };
            bounds.offer(wit, v, c.kappa1);
            bounds.offer(wit, c.kappa0, v);
        }
    }
    for i in 0..xs.len() {
        for j in (i + 1)..xs.len() {
            let dist = norm(&xs[i].iter().zip(&xs[j]).map(|(a, b)| a - b).collect::<Vec<_>>());
            let rhs = c.kappa2 * dist.powf(c.beta);
            for k in 0..zs.len() {
                let lhs = (kvals[i][k] - kvals[j][k]).abs();
                holder.offer(
                    || {
                        let mut w = xs[i].clone();
                        w.extend_from_slice(&xs[j]);
                        w.extend_from_slice(&zs[k]);
                        w
                    },
                    lhs,
                    rhs,
                );
            }
        }
    }

    Ok(ValidationReport {
        checks: vec![
            mono.finish(Invariant::NuMonotone),
            levy,
            comp.finish(Invariant::JumpComparable),
            bounds.finish(Invariant::CoefficientBounds),
            holder.finish(Invariant::CoefficientHolder),
        ],
    })
}

fn levy_integrability(m: &JumpModel, truncation: f64) -> InvariantCheck {
    let p = m.jump.profile;
    let area = p.sphere_area();
    let d = m.dim as i32;
    let tol = Tolerance::new(1e-300, 1e-10);
    let inner = quad::integrate_to_zero(|s| s * s * p.eval(s) * s.powi(d - 1), 1.0, tol);
    // body on [1, R] by quadrature, tail on [R, inf) by the monotone upper sum
    // nu(2^k R) * |B(2^{k+1} R) \ B(2^k R)|
    let body = quad::adaptive(
        |s| p.eval(s) * s.powi(d - 1),
        1.0,
        truncation.max(1.0),
        Tolerance::new(1e-300, 1e-10),
        2000,
    )
    .map(|e| e.value);
    let mut tail = 0.0;
    let mut tail_ok = false;
    let mut prev_term = f64::INFINITY;
    let mut r = truncation.max(1.0);
    for _ in 0..200 {
        let shell = (2f64.powi(d) - 1.0) * r.powi(d) / d as f64 * area;
        let term = p.eval(r) * shell;
        tail += term;
        if term < 1e-14 * tail.max(1e-300) || term == 0.0 {
            tail_ok = true;
            break;
        }
        if term >= prev_term {
            break;
        }
        prev_term = term;
        r *= 2.0;
    }
    match (inner, body) {
        (Ok(i), Ok(b)) if tail_ok && i.is_finite() && b.is_finite() => InvariantCheck {
            invariant: Invariant::LevyIntegrable,
            passed: true,
            witness: vec![truncation],
            lhs: area * (i + b) + tail,
            rhs: f64::INFINITY,
        },
        _ => InvariantCheck {
            invariant: Invariant::LevyIntegrable,
            passed: false,
            witness: vec![truncation],
            lhs: f64::INFINITY,
            rhs: f64::INFINITY,
        },
    }
}

/// `integral_{r <= |z| < 1} z kappa(x, z) J(z) dz`, evaluated so that a
/// reflection-symmetric integrand gives exactly zero.
pub fn criticality_integral(m: &JumpModel, x: &[f64], r: f64) -> Result<Vec<f64>> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!("r = {r} must lie in (0, 1]")));
    }
    if r == 1.0 {
        return Ok(vec![0.0; m.dim]);
    }
    let tol = Tolerance::new(1e-15, 1e-12);
    match m.dim {
        1 => {
            let g = |s: f64| {
                let plus = m.kappa(x, &[s]) * m.j(&[s]);
                let minus = m.kappa(x, &[-s]) * m.j(&[-s]);
                s * (plus - minus)
            };
            let v = integrate_shells(g, r, 1.0, tol)?;
            Ok(vec![v])
        }
        2 => {
            // polar coordinates; pairing theta with theta + pi gives a
            // pi-periodic integrand handled by the trapezoid rule
            let n_theta = 64usize;
            let mut out = vec![0.0; 2];
            for (comp, slot) in out.iter_mut().enumerate() {
                let g = |s: f64| {
                    let mut acc = 0.0;
                    for k in 0..n_theta {
                        let th = std::f64::consts::PI * k as f64 / n_theta as f64;
                        let e = [th.cos(), th.sin()];
                        let z = [s * e[0], s * e[1]];
                        let mz = [-z[0], -z[1]];
                        let diff = m.kappa(x, &z) * m.j(&z) - m.kappa(x, &mz) * m.j(&mz);
                        acc += e[comp] * diff;
                    }
                    s * s * acc * std::f64::consts::PI / n_theta as f64
                };
                *slot = integrate_shells(g, r, 1.0, tol)?;
            }
            Ok(out)
        }
        d => Err(Error::Unsupported(format!("criticality integral in dimension {d}"))),
    }
}

fn integrate_shells<F: Fn(f64) -> f64>(g: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    let breaks = quad::geometric_breaks(a, b, f64::INFINITY);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += quad::adaptive(&g, w[0], w[1], tol, 400)?.value;
    }
    Ok(total)
}

/// Which set of assumptions holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    P1,
    P2,
    P3,
    Q1,
    Q2,
}

impl Case {
    pub fn form(&self) -> OperatorForm {
        match self {
            Case::P2 => OperatorForm::PureJump,
            Case::P3 => OperatorForm::Symmetrized,
            _ => OperatorForm::Compensated,
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Classification result with the parameter set it depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseTag {
    pub case: Case,
    pub params: Vec<(String, f64)>,
    /// Fitted constant for the mid-size drift bound (Q cases only).
    pub kappa_crit: Option<f64>,
    /// Fitted Hölder constant of the mid-size drift (Q cases only).
    pub kappa_crit_holder: Option<f64>,
    /// Ratio of the drift constant fitted on the full radius grid to the one
    /// fitted on its upper half (in log scale); values well above 1 mean the
    /// constant keeps growing as radii shrink.
    pub kappa_crit_growth: Option<f64>,
}

impl CaseTag {
    pub fn form(&self) -> OperatorForm {
        self.case.form()
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Tolerance on `|alpha_h - 1|` for the critical case.
pub const CRITICAL_ALPHA_TOL: f64 = 0.02;

/// Returns the first case in the order P1, P2, P3, Q1, Q2 whose clauses hold.
pub fn classify_case(m: &JumpModel, sp: &ScaleProfile, grid: &SampleGrid) -> Result<CaseTag> {
    let a = sp.alpha_h;
    let b = sp.beta_h;
    let c = m.constants;
    let beta_min = c.beta.min(a);
    let mut fails = ClauseFailures::default();

    let base = |extra: &[(&str, f64)]| {
        let mut p = vec![
            ("C_J".to_string(), c.c_j),
            ("kappa0".to_string(), c.kappa0),
            ("kappa1".to_string(), c.kappa1),
            ("alpha_h".to_string(), a),
            ("C_h".to_string(), sp.c_h_lower),
        ];
        for (k, v) in extra {
            p.push((k.to_string(), *v));
        }
        p.push(("kappa2".to_string(), c.kappa2));
        p
    };

    let tag = |case, params| CaseTag {
        case,
        params,
        kappa_crit: None,
        kappa_crit_holder: None,
        kappa_crit_growth: None,
    };

    if a > 1.0 && a <= 2.0 {
        return Ok(tag(Case::P1, base(&[])));
    }
    fails.0.push(("P1".into(), format!("alpha_h = {a:.2} is not in (1, 2]")));

    let upper_ok = |fails: &mut ClauseFailures, case: &str| -> Option<(f64, f64)> {
        match (b, sp.c_h_upper) {
            (Some(bh), Some(ch)) if a > 0.0 && a <= bh && bh < 1.0 => Some((bh, ch)),
            (Some(bh), _) => {
                fails.0.push((case.into(), format!("need 0 < alpha_h <= beta_h < 1, got alpha_h = {a:.2}, beta_h = {bh:.2}")));
                None
            }
            _ => {
                fails.0.push((case.into(), "upper scaling not fitted".into()));
                None
            }
        }
    };

    if let Some((bh, ch)) = upper_ok(&mut fails, "P2") {
        return Ok(tag(Case::P2, base(&[("beta_h", bh), ("c_h", ch)])));
    }

    if m.symmetric_j() && m.symmetric_kappa_in_z() {
        return Ok(tag(Case::P3, base(&[])));
    }
    fails.0.push(("P3".into(), "J is not symmetric or kappa(x, .) is not even".into()));

    let crit = if (a - 1.0).abs() <= CRITICAL_ALPHA_TOL || (a < 1.0 && b.is_some_and(|bh| bh < 1.0)) {
        Some(fit_criticality_constants(m, sp, grid)?)
    } else {
        None
    };

    if (a - 1.0).abs() <= CRITICAL_ALPHA_TOL {
        let (k0, k1, growth) = crit.expect("fitted above");
        if k0.is_finite() && k1.is_finite() {
            let mut params = base(&[("kappa_crit", k0)]);
            params.push(("kappa_crit_holder".into(), k1));
            return Ok(CaseTag {
                case: Case::Q1,
                params,
                kappa_crit: Some(k0),
                kappa_crit_holder: Some(k1),
                kappa_crit_growth: Some(growth),
            });
        }
        fails.0.push(("Q1".into(), "criticality constants are not finite".into()));
    } else {
        fails.0.push(("Q1".into(), format!("|alpha_h - 1| = {:.3} exceeds {CRITICAL_ALPHA_TOL}", (a - 1.0).abs())));
    }

    if let Some((bh, ch)) = upper_ok(&mut fails, "Q2") {
        if 1.0 - a < beta_min {
            let (k0, k1, growth) = crit.expect("fitted above");
            if k0.is_finite() && k1.is_finite() {
                let mut params = base(&[("beta_h", bh), ("c_h", ch), ("kappa_crit", k0)]);
                params.push(("kappa_crit_holder".into(), k1));
                return Ok(CaseTag {
                    case: Case::Q2,
                    params,
                    kappa_crit: Some(k0),
                    kappa_crit_holder: Some(k1),
                    kappa_crit_growth: Some(growth),
                });
            }
            fails.0.push(("Q2".into(), "criticality constants are not finite".into()));
        } else {
            fails.0.push(("Q2".into(), format!("1 - alpha_h = {:.2} is not below beta ^ alpha_h = {beta_min:.2}", 1.0 - a)));
        }
    }
    Err(Error::Unclassifiable(fails))
}

/// Smallest constants with `|I(x, r)| <= k0 r h(r)` and
/// `|I(x, r) - I(y, r)| <= k1 |x - y|^beta r h(r)` on the grids, where `I` is
/// the criticality integral. Also returns the growth diagnostic.
pub fn fit_criticality_constants(m: &JumpModel, sp: &ScaleProfile, grid: &SampleGrid) -> Result<(f64, f64, f64)> {
    let xs = grid.x_points(m.dim);
    let rs = grid.r_points();
    let mut vals = vec![vec![Vec::new(); rs.len()]; xs.len()];
    for (i, x) in xs.iter().enumerate() {
        for (k, &r) in rs.iter().enumerate() {
            vals[i][k] = criticality_integral(m, x, r)?;
        }
    }
    let scale: Vec<f64> = rs.iter().map(|&r| r * sp.h(r)).collect();
    let split = rs.len() / 2;
    let mut k0 = 0.0f64;
    let mut k0_upper = 0.0f64;
    for row in &vals {
        for (k, v) in row.iter().enumerate() {
            let q = norm(v) / scale[k];
            k0 = k0.max(q);
            if k >= split {
                k0_upper = k0_upper.max(q);
            }
        }
    }
    let beta = m.constants.beta;
    let mut k1 = 0.0f64;
    for i in 0..xs.len() {
        for j in (i + 1)..xs.len() {
            let dist = norm(&xs[i].iter().zip(&xs[j]).map(|(a, b)| a - b).collect::<Vec<_>>());
            let w = dist.powf(beta);
            for k in 0..rs.len() {
                let diff: Vec<f64> = vals[i][k].iter().zip(&vals[j][k]).map(|(a, b)| a - b).collect();
                k1 = k1.max(norm(&diff) / (w * scale[k]));
            }
        }
    }
    let growth = if k0_upper > 0.0 { k0 / k0_upper } else { 1.0 };
    Ok((k0, k1, growth))
}
