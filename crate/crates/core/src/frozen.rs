//! Constant-coefficient ("frozen") kernels by Fourier inversion.
//!
//! Convention: `p(t, x, y) = g(y - x)` with
//! `g(u) = (1/2pi) int e^{-i xi u} e^{-t psi(xi)} d xi`, so that `E e^{i xi (X_t - x)} = e^{-t psi(xi)}`
//! and each derivative in `x` contributes a factor `+i xi`.
//!
//! Everything here is one-dimensional. On the frequency side the symbol of
//! the frozen operator splits into two one-sided parts,
//! `psi_w = c_+(w) Psi_+ + c_-(w) Psi_-`, which depend on the radial profile
//! only; they are computed once per grid and reused for every freeze point.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::models::{JumpModel, OperatorForm, RadialProfile, Sided};
use crate::quad::{self, GaussLegendre, Tolerance};

/// `-ln(1e-12)`: the frequency box must satisfy `t Re psi(xi_max) >= DECAY`.
pub const DECAY: f64 = 27.631_021_115_928_547;

fn require_1d(dim: usize) -> Result<()> {
    if dim == 1 {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "kernel evaluation in dimension {dim}; only d = 1 is implemented"
        )))
    }
}

/// `int_0^delta z^p nu(z) dz` for the one-dimensional built-in profile,
/// from the series of the tempering factor. `None` when the moment diverges.
pub fn small_moment(nu: &RadialProfile, p: f64, delta: f64) -> Option<f64> {
    let e0 = p - nu.alpha;
    if e0 <= 0.0 {
        return None;
    }
    let lam = nu.tempering;
    let mut sum = 0.0;
    let mut coeff = 1.0;
    for j in 0..80 {
        let e = e0 + j as f64;
        let term = coeff * delta.powf(e) / e;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
        coeff *= -lam / (j + 1) as f64;
    }
    Some(nu.scale * sum)
}

/// `int_z^inf nu(r) dr`.
pub fn tail_mass(nu: &RadialProfile, z: f64) -> Result<f64> {
    if nu.tempering == 0.0 {
        Ok(nu.scale * z.powf(-nu.alpha) / nu.alpha)
    } else {
        quad::integrate_to_infinity(|s| nu.eval(s), z, Tolerance::new(1e-300, 1e-10))
    }
}

thread_local! {
    static GL20: GaussLegendre = GaussLegendre::new(20);
}

/// One-sided profile integrals at `xi`:
/// `I = int_0^inf (1 - cos xi z) nu dz` and, depending on the form,
/// `S = int_0^inf (sin xi z - xi z 1{z<1}) nu dz` (compensated),
/// `S = int_0^inf sin(xi z) nu dz` (pure jump) or `S = 0` (symmetrized).
pub fn profile_integrals(nu: &RadialProfile, xi: f64, form: OperatorForm) -> Result<(f64, f64)> {
    require_1d(nu.dim)?;
    if xi == 0.0 {
        return Ok((0.0, 0.0));
    }
    let a = xi.abs();
    let sign = xi.signum();
    let delta = (0.1f64).min(0.1 / a);

    // inner region by Taylor series against the small moments
    let mut i_val = 0.0;
    let mut s_val = 0.0;
    let mut fact = 1.0; // k!
    let mut apow = 1.0; // a^k
    for k in 1..=24usize {
        fact *= k as f64;
        apow *= a;
        let coeff = apow / fact;
        if coeff * delta.powi(k as i32) < 1e-19 {
            break;
        }
        if k % 2 == 0 {
            let m = small_moment(nu, k as f64, delta).ok_or_else(|| Error::NotLevy("second moment diverges".into()))?;
            let sgn = if (k / 2) % 2 == 1 { 1.0 } else { -1.0 };
            i_val += sgn * coeff * m;
        } else {
            let include = match form {
                OperatorForm::Compensated => k >= 3,
                OperatorForm::PureJump => true,
                OperatorForm::Symmetrized => false,
            };
            if include {
                let m = small_moment(nu, k as f64, delta).ok_or(Error::FirstMomentDivergence)?;
                let sgn = if ((k - 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
                s_val += sgn * coeff * m;
            }
        }
    }

    // outer region: pieces growing geometrically, capped at half a period
    let z_far = (1.0f64).max(200.0 / a);
    let mut breaks = quad::geometric_breaks(delta, z_far, PI / a);
    if !breaks.iter().any(|&b| (b - 1.0).abs() < 1e-15) && delta < 1.0 && z_far > 1.0 {
        let pos = breaks.iter().position(|&b| b > 1.0).unwrap();
        breaks.insert(pos, 1.0);
    }
    let compensate = form == OperatorForm::Compensated;
    let with_s = form != OperatorForm::Symmetrized;
    GL20.with(|gl| {
        for w in breaks.windows(2) {
            let below_one = w[1] <= 1.0;
            for (z, wt) in gl.mapped(w[0], w[1]) {
                let v = nu.eval(z);
                let half = (0.5 * a * z).sin();
                i_val += wt * 2.0 * half * half * v;
                if with_s {
                    let mut s = (a * z).sin();
                    if compensate && below_one {
                        s -= a * z;
                    }
                    s_val += wt * s * v;
                }
            }
        }
    });

    // tail beyond z_far: non-oscillatory mass plus integration by parts
    let mass = tail_mass(nu, z_far)?;
    let mut sum = C64::new(0.0, 0.0);
    let ia = C64::new(0.0, a);
    let mut denom = ia;
    let mut last = f64::INFINITY;
    for k in 0..12usize {
        let term = nu.derivative(z_far, k) / denom * if k % 2 == 0 { 1.0 } else { -1.0 };
        let mag = term.norm();
        if mag > last {
            break;
        }
        sum += term;
        last = mag;
        if mag <= 1e-17 * sum.norm() {
            break;
        }
        denom *= ia;
    }
    let osc = -C64::from_polar(1.0, a * z_far) * sum;
    i_val += mass - osc.re;
    if with_s {
        s_val += osc.im;
    }
    Ok((i_val, sign * s_val))
}

/// `(Psi_+(xi), Psi_-(xi))`: symbols of the jumps to the right and to the left
/// with unit weight.
pub fn one_sided_symbols(nu: &RadialProfile, xi: f64, form: OperatorForm) -> Result<(C64, C64)> {
    let (i, s) = profile_integrals(nu, xi, form)?;
    Ok((C64::new(i, -s), C64::new(i, s)))
}

fn check_form(nu: &RadialProfile, form: OperatorForm) -> Result<()> {
    if form == OperatorForm::PureJump && small_moment(nu, 1.0, 1.0).is_none() {
        return Err(Error::FirstMomentDivergence);
    }
    Ok(())
}

/// Symbol of the operator with coefficient frozen at `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSymbol {
    pub w: f64,
    pub form: OperatorForm,
    /// Weights of the right/left one-sided symbols.
    pub weights: Sided,
    pub nu: RadialProfile,
}

impl FrozenSymbol {
    pub fn psi(&self, xi: f64) -> Result<C64> {
        let (p, m) = one_sided_symbols(&self.nu, xi, self.form)?;
        Ok(p * self.weights.plus + m * self.weights.minus)
    }

    /// Symbol values on a spectral grid.
    pub fn on_grid(&self, grid: &SpectralGrid) -> Vec<C64> {
        grid.combine(self.weights)
    }

    /// Same symbol with the coefficient scaled by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.weights = Sided::new(c * s.weights.plus, c * s.weights.minus);
        s
    }
}

/// Builds the frozen symbol at `w`.
pub fn build_symbol(m: &JumpModel, w: &[f64], form: OperatorForm) -> Result<FrozenSymbol> {
    require_1d(m.dim)?;
    check_form(&m.jump.profile, form)?;
    Ok(FrozenSymbol { w: w[0], form, weights: m.sided_intensity(w[0]), nu: m.jump.profile })
}

/// Periodic grid of `n` points with spacing `dx`, with the one-sided symbols
/// tabulated at the FFT frequencies.
#[derive(Clone)]
pub struct SpectralGrid {
    pub n: usize,
    pub dx: f64,
    pub form: OperatorForm,
    pub nu: RadialProfile,
    /// Frequencies in FFT order.
    pub xi: Vec<f64>,
    pub psi_plus: Vec<C64>,
    pub psi_minus: Vec<C64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("n", &self.n)
            .field("dx", &self.dx)
            .field("form", &self.form)
            .finish()
    }
}

impl SpectralGrid {
    pub fn new(nu: &RadialProfile, form: OperatorForm, n: usize, dx: f64) -> Result<Self> {
        require_1d(nu.dim)?;
        check_form(nu, form)?;
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidArgument(format!("FFT size {n} must be even and >= 4")));
        }
        let dxi = 2.0 * PI / (n as f64 * dx);
        let xi: Vec<f64> = (0..n)
            .map(|k| if k <= n / 2 { k as f64 * dxi } else { (k as f64 - n as f64) * dxi })
            .collect();
        let mut psi_plus = vec![C64::new(0.0, 0.0); n];
        let mut psi_minus = vec![C64::new(0.0, 0.0); n];
        for k in 1..=n / 2 {
            let (i, s) = profile_integrals(nu, xi[k], form)?;
            let (p, m) = if k == n / 2 {
                // Nyquist bin keeps the real part only
                (C64::new(i, 0.0), C64::new(i, 0.0))
            } else {
                (C64::new(i, -s), C64::new(i, s))
            };
            psi_plus[k] = p;
            psi_minus[k] = m;
            if k < n / 2 {
                psi_plus[n - k] = p.conj();
                psi_minus[n - k] = m.conj();
            }
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Ok(Self { n, dx, form, nu: *nu, xi, psi_plus, psi_minus, fwd, inv })
    }

    pub fn length(&self) -> f64 {
        self.n as f64 * self.dx
    }

    pub fn xi_max(&self) -> f64 {
        PI / self.dx
    }

    pub fn combine(&self, w: Sided) -> Vec<C64> {
        self.psi_plus
            .iter()
            .zip(&self.psi_minus)
            .map(|(p, m)| p * w.plus + m * w.minus)
            .collect()
    }

    /// Smallest `t` for which the box resolves the kernel with symbol weights `w`.
    pub fn min_time(&self, w: Sided) -> f64 {
        let re = self.psi_plus[self.n / 2].re * w.plus + self.psi_minus[self.n / 2].re * w.minus;
        DECAY / re
    }

    /// Multiplier `(i xi)^order e^{i xi shift}` at bin `k`; at the Nyquist bin
    /// the real part, which keeps outputs real and consistent under shifts.
    pub fn multiplier(&self, k: usize, order: usize, shift: f64) -> C64 {
        let xi = self.xi[k];
        let mut m = C64::from_polar(1.0, xi * shift);
        for _ in 0..order {
            m *= C64::new(0.0, xi);
        }
        if k == self.n / 2 {
            C64::new(m.re, 0.0)
        } else {
            m
        }
    }

    /// In-place forward transform (`sum_j f_j e^{-2 pi i jk/n}`).
    pub fn forward(&self, buf: &mut [C64]) {
        self.fwd.process(buf);
    }

    /// In-place unnormalized inverse transform.
    pub fn inverse(&self, buf: &mut [C64]) {
        self.inv.process(buf);
    }

    /// Real-space values `F^{-1}[S](u_j)`, `u_j = j dx` (index mod n), for two
    /// Hermitian spectra at once: returns `(F^{-1}[a], F^{-1}[b])`.
    pub fn invert_pair(&self, a: &[C64], b: &[C64], buf: &mut Vec<C64>) -> (Vec<f64>, Vec<f64>) {
        buf.clear();
        let i = C64::new(0.0, 1.0);
        buf.extend(a.iter().zip(b).map(|(x, y)| x + i * y));
        self.fwd.process(buf);
        let scale = 1.0 / (self.n as f64 * self.dx);
        let ra = buf.iter().map(|v| v.re * scale).collect();
        let rb = buf.iter().map(|v| v.im * scale).collect();
        (ra, rb)
    }

    /// `F^{-1}[S](u)` at an arbitrary `u` by direct summation.
    pub fn invert_at(&self, spec: &[C64], u: f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.n {
            let ph = C64::from_polar(1.0, -self.xi[k] * u);
            let v = if k == self.n / 2 {
                spec[k].re * (self.xi[k] * u).cos()
            } else {
                (ph * spec[k]).re
            };
            acc += v;
        }
        acc / (self.n as f64 * self.dx)
    }
}

/// The frozen kernel at one `(w, t)` slice on a spectral grid.
#[derive(Debug, Clone)]
pub struct FrozenKernel {
    pub t: f64,
    pub weights: Sided,
    pub grid: Arc<SpectralGrid>,
    spectrum: Vec<C64>,
}

impl FrozenKernel {
    pub fn new(sym: &FrozenSymbol, grid: Arc<SpectralGrid>, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("t = {t} must be positive")));
        }
        let min_t = grid.min_time(sym.weights);
        if t < min_t {
            return Err(Error::ResolutionExceeded { t, min_t });
        }
        let psi = sym.on_grid(&grid);
        let spectrum = psi.iter().map(|p| (-t * p).exp()).collect();
        Ok(Self { t, weights: sym.weights, grid, spectrum })
    }

    /// Spectrum of `partial_x^order p(t, x + shift, x + u)` as a function of `u`.
    pub fn spectrum(&self, order: usize, shift: f64) -> Vec<C64> {
        (0..self.grid.n)
            .map(|k| self.grid.multiplier(k, order, shift) * self.spectrum[k])
            .collect()
    }

    /// `partial_x^order p(t, x, x + u_j)` on the periodic grid `u_j = j dx` (index mod n).
    pub fn on_grid(&self, order: usize) -> Vec<f64> {
        let s = self.spectrum(order, 0.0);
        let zero = vec![C64::new(0.0, 0.0); s.len()];
        let mut buf = Vec::with_capacity(s.len());
        self.grid.invert_pair(&s, &zero, &mut buf).0
    }

    /// `partial_x^order p(t, x, x + u)` at arbitrary `u`. With `correct`, the
    /// periodic images are removed to leading order in `t`.
    pub fn at(&self, u: f64, order: usize, correct: bool) -> f64 {
        if correct && u.abs() >= 0.5 * self.grid.length() {
            // outside the period only the far-field asymptote is meaningful
            let nu = &self.grid.nu;
            return self.t
                * if u > 0.0 {
                    let sign = if order % 2 == 1 { -1.0 } else { 1.0 };
                    sign * self.weights.plus * nu.derivative(u, order)
                } else {
                    self.weights.minus * nu.derivative(-u, order)
                };
        }
        let s = self.spectrum(order, 0.0);
        let mut v = self.grid.invert_at(&s, u);
        if correct {
            v -= self.image_sum(u, order);
        }
        v
    }

    /// `sum_{k != 0} t partial_x^order [c(.) nu(|.|)](u + kL)` over the images.
    fn image_sum(&self, u: f64, order: usize) -> f64 {
        let (sp, sm) = image_sums(&self.grid.nu, self.grid.length(), u, order);
        self.t * (self.weights.plus * sp + self.weights.minus * sm)
    }
}

/// Images summed explicitly before the integral tail takes over.
const IMAGES: i64 = 64;

/// Periodic images of the large-`|u|` asymptote `p(t, x, x + u) ~ t c(sign u) nu(|u|)`
/// on a ring of length `l`, split by side: returns `(S_+, S_-)` with
/// `sum_{k != 0} partial_x^order [c(.) nu(|.|)](u + kl) = c_+ S_+ + c_- S_-`.
/// Images beyond the first [`IMAGES`] are summed by the midpoint integral.
pub fn image_sums(nu: &RadialProfile, l: f64, u: f64, order: usize) -> (f64, f64) {
    // d/dx = -d/du on the right side
    let sign = if order % 2 == 1 { -1.0 } else { 1.0 };
    let (mut sp, mut sm) = (0.0, 0.0);
    for k in 1..=IMAGES {
        for v in [u + k as f64 * l, u - k as f64 * l] {
            if v > 0.0 {
                sp += sign * nu.derivative(v, order);
            } else {
                sm += nu.derivative(-v, order);
            }
        }
    }
    let tail = |z: f64| {
        if order == 0 {
            tail_mass(nu, z).unwrap_or(0.0) / l
        } else {
            -nu.derivative(z, order - 1) / l
        }
    };
    let far = (IMAGES as f64 + 0.5) * l;
    sp += sign * tail(far + u);
    sm += tail(far - u);
    (sp, sm)
}

/// Settings for pointwise kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FftSettings {
    /// Period of the spatial grid.
    pub length: f64,
    /// Largest FFT size.
    pub n_max: usize,
    /// Remove periodic images to leading order.
    pub image_correction: bool,
}

impl Default for FftSettings {
    fn default() -> Self {
        Self { length: 102.4, n_max: 1 << 14, image_correction: true }
    }
}

/// Smallest `xi` with `t Re psi(xi) >= DECAY`.
fn required_xi(sym: &FrozenSymbol, t: f64) -> Result<f64> {
    let target = DECAY / t;
    let mut hi = 1.0;
    while sym.psi(hi)?.re < target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::ResolutionExceeded { t, min_t: f64::INFINITY });
        }
    }
    let mut lo = 0.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if sym.psi(mid)?.re < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Chooses a power-of-two grid resolving the kernel at `t`.
pub fn grid_for(sym: &FrozenSymbol, t: f64, settings: &FftSettings) -> Result<(usize, f64)> {
    let xi = required_xi(sym, t)?;
    let dx_max = PI / xi;
    let n = ((settings.length / dx_max).ceil() as usize).next_power_of_two().max(64);
    if n > settings.n_max {
        let dx = settings.length / settings.n_max as f64;
        let re = sym.psi(PI / dx)?.re;
        return Err(Error::ResolutionExceeded { t, min_t: DECAY / re });
    }
    Ok((n, settings.length / n as f64))
}

type CacheKey = (u64, u64, u64, u64, u8);

/// Cache of frozen kernels per `(w, t)` slice, shared by concurrent readers.
#[derive(Default)]
pub struct KernelCache {
    grids: Mutex<HashMap<(usize, u64, u8), Arc<SpectralGrid>>>,
    kernels: Mutex<HashMap<CacheKey, Arc<FrozenKernel>>>,
}

fn form_tag(f: OperatorForm) -> u8 {
    match f {
        OperatorForm::Compensated => 0,
        OperatorForm::PureJump => 1,
        OperatorForm::Symmetrized => 2,
    }
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn kernel(&self, sym: &FrozenSymbol, t: f64, settings: &FftSettings) -> Result<Arc<FrozenKernel>> {
        let key = (
            sym.weights.plus.to_bits(),
            sym.weights.minus.to_bits(),
            t.to_bits(),
            settings.length.to_bits(),
            form_tag(sym.form),
        );
        if let Some(k) = self.kernels.lock().unwrap().get(&key) {
            return Ok(k.clone());
        }
        let (n, dx) = grid_for(sym, t, settings)?;
        let gkey = (n, dx.to_bits(), form_tag(sym.form));
        let grid = {
            let cached = self.grids.lock().unwrap().get(&gkey).cloned();
            match cached {
                Some(g) if g.nu == sym.nu => g,
                _ => {
                    let g = Arc::new(SpectralGrid::new(&sym.nu, sym.form, n, dx)?);
                    self.grids.lock().unwrap().insert(gkey, g.clone());
                    g
                }
            }
        };
        let k = Arc::new(FrozenKernel::new(sym, grid, t)?);
        self.kernels.lock().unwrap().insert(key, k.clone());
        Ok(k)
    }
}

/// `partial_x^order p^{K_w}(t, x, y)` at arbitrary points.
pub fn frozen_kernel(sym: &FrozenSymbol, t: f64, x: f64, y: f64, order: usize, settings: &FftSettings) -> Result<f64> {
    if order > 2 {
        return Err(Error::InvalidArgument(format!("derivative order {order} > 2")));
    }
    let (n, dx) = grid_for(sym, t, settings)?;
    let grid = Arc::new(SpectralGrid::new(&sym.nu, sym.form, n, dx)?);
    let k = FrozenKernel::new(sym, grid, t)?;
    Ok(k.at(y - x, order, settings.image_correction))
}

/// `phi_1(x) = (1 - e^{-x}) / x` and `phi_2(x) = (1 - (1 + x) e^{-x}) / x^2`.
pub fn phi12(x: C64) -> (C64, C64) {
    if x.norm() < 0.1 {
        // phi1 = sum (-x)^k / (k+1)!, phi2 = sum (-x)^k (k+1) / (k+2)!
        let mut p1 = C64::new(0.0, 0.0);
        let mut p2 = C64::new(0.0, 0.0);
        let mut pow = C64::new(1.0, 0.0);
        let mut f1 = 1.0; // (k+1)!
        let mut f2 = 2.0; // (k+2)!
        for k in 0..12 {
            p1 += pow / f1;
            p2 += pow * (k + 1) as f64 / f2;
            pow *= -x;
            f1 *= (k + 2) as f64;
            f2 *= (k + 3) as f64;
        }
        (p1, p2)
    } else {
        let e = (-x).exp();
        let p1 = (C64::new(1.0, 0.0) - e) / x;
        let p2 = (C64::new(1.0, 0.0) - (x + 1.0) * e) / (x * x);
        (p1, p2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn small_moments_match_quadrature() {
        let nu = RadialProfile::tempered(1, 1.4, 2.0).with_scale(0.7);
        for &p in &[2.0, 3.0, 4.0] {
            let q = quad::integrate_to_zero(|s| s.powf(p) * nu.eval(s), 0.1, Tolerance::new(1e-300, 1e-13)).unwrap();
            let v = small_moment(&nu, p, 0.1).unwrap();
            assert_relative_eq!(v, q, max_relative = 1e-9);
        }
        assert!(small_moment(&nu, 1.0, 0.1).is_none());
    }

    #[test]
    fn phi_functions_are_continuous_at_the_switch() {
        for x in [C64::new(0.0999, 0.002), C64::new(0.03, -0.09)] {
            let (p1, p2) = phi12(x);
            let e = (-x).exp();
            let q1 = (1.0 - e) / x;
            let q2 = (1.0 - (1.0 + x) * e) / (x * x);
            assert!((p1 - q1).norm() < 1e-13);
            assert!((p2 - q2).norm() < 1e-11);
        }
        assert_eq!(phi12(C64::new(0.0, 0.0)).0, C64::new(1.0, 0.0));
    }

    #[test]
    fn nyquist_multiplier_is_real() {
        let g = SpectralGrid::new(&RadialProfile::stable(1, 1.0), OperatorForm::Symmetrized, 16, 0.5).unwrap();
        assert_eq!(g.multiplier(8, 1, 0.0).re, 0.0);
        assert_eq!(g.multiplier(8, 1, 0.0).im, 0.0);
        assert_eq!(g.multiplier(3, 0, 0.0), C64::new(1.0, 0.0));
    }
}
