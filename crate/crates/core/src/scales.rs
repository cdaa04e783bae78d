//! Scale functions `h` and `K`, the generalized inverse of `h`, weak scaling
//! fits and the bound function `rho_t`.

use crate::error::{Error, Result};
use crate::models::{logspace, RadialProfile};
use crate::quad::{self, Tolerance};

const TABLE_MIN: f64 = 1e-8;
const TABLE_MAX: f64 = 1e4;
const TABLE_PER_DECADE: usize = 40;

/// Largest scaling constant accepted when fitting the exponents.
pub const SCALING_CONSTANT_CAP: f64 = 1.05;

fn tol() -> Tolerance {
    Tolerance::new(1e-300, 1e-12)
}

/// `h(r) = integral (1 ^ |x|^2 / r^2) nu(|x|) dx`.
pub fn compute_h(nu: &RadialProfile, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("h needs r > 0, got {r}")));
    }
    let d = nu.dim as i32;
    let inner = quad::integrate_to_zero(|s| s.powi(d + 1) * nu.eval(s), r, tol())?;
    let outer = quad::integrate_to_infinity(|s| s.powi(d - 1) * nu.eval(s), r, tol())?;
    Ok(nu.sphere_area() * (inner / (r * r) + outer))
}

/// `K(r) = r^{-2} integral_{|x| < r} |x|^2 nu(|x|) dx`.
pub fn compute_k(nu: &RadialProfile, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("K needs r > 0, got {r}")));
    }
    let d = nu.dim as i32;
    let inner = quad::integrate_to_zero(|s| s.powi(d + 1) * nu.eval(s), r, tol())?;
    Ok(nu.sphere_area() * inner / (r * r))
}

/// Monotone piecewise cubic (Fritsch-Carlson) interpolant.
#[derive(Debug, Clone, PartialEq)]
struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl MonotoneCubic {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut m = vec![0.0; n];
        m[0] = delta[0];
        m[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            m[i] = if delta[i - 1] * delta[i] <= 0.0 {
                0.0
            } else {
                let w1 = 2.0 * (x[i + 1] - x[i]) + (x[i] - x[i - 1]);
                let w2 = (x[i + 1] - x[i]) + 2.0 * (x[i] - x[i - 1]);
                (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i])
            };
        }
        Self { x, y, m }
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.x[0] && t <= self.x[self.x.len() - 1]
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.y[i],
            Err(0) => 0,
            Err(i) if i >= n => n - 2,
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.m[i] + h01 * self.y[i + 1] + h11 * h * self.m[i + 1]
    }
}

/// Scale functions of a radial profile with fitted weak scaling exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleProfile {
    pub nu: RadialProfile,
    pub alpha_h: f64,
    pub c_h_lower: f64,
    pub beta_h: Option<f64>,
    pub c_h_upper: Option<f64>,
    pub fit_range: (f64, f64),
    // log-log tables
    log_h: MonotoneCubic,
    log_k: MonotoneCubic,
    // ln h -> ln r, with increasing abscissae (ln h reversed)
    log_h_inv: MonotoneCubic,
}

impl ScaleProfile {
    /// Tabulates `h`, `K` and fits both scaling exponents on `[1e-3, 1]`.
    pub fn fit(nu: &RadialProfile) -> Result<Self> {
        Self::fit_on(nu, (1e-3, 1.0), 31)
    }

    pub fn fit_on(nu: &RadialProfile, fit_range: (f64, f64), points: usize) -> Result<Self> {
        let decades = (TABLE_MAX / TABLE_MIN).log10();
        let n = (decades * TABLE_PER_DECADE as f64).round() as usize + 1;
        let rs = logspace(TABLE_MIN, TABLE_MAX, n);
        let mut lh = Vec::with_capacity(n);
        let mut lk = Vec::with_capacity(n);
        for &r in &rs {
            let h = compute_h(nu, r)?;
            let k = compute_k(nu, r)?;
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::NotLevy(format!("h({r}) = {h}")));
            }
            lh.push(h.ln());
            lk.push(k.max(f64::MIN_POSITIVE).ln());
        }
        let lr: Vec<f64> = rs.iter().map(|r| r.ln()).collect();
        let log_h = MonotoneCubic::new(lr.clone(), lh.clone());
        let log_k = MonotoneCubic::new(lr.clone(), lk);
        let mut inv_x = lh.clone();
        let mut inv_y = lr.clone();
        inv_x.reverse();
        inv_y.reverse();
        let log_h_inv = MonotoneCubic::new(inv_x, inv_y);
        let mut sp = Self {
            nu: *nu,
            alpha_h: 0.0,
            c_h_lower: 1.0,
            beta_h: None,
            c_h_upper: None,
            fit_range,
            log_h,
            log_k,
            log_h_inv,
        };
        let (a, ca) = sp.fit_scaling(true, points);
        sp.alpha_h = a;
        sp.c_h_lower = ca;
        let (b, cb) = sp.fit_scaling(false, points);
        if b.is_finite() {
            sp.beta_h = Some(b);
            sp.c_h_upper = Some(cb);
        }
        Ok(sp)
    }

    pub fn dim(&self) -> usize {
        self.nu.dim
    }

    /// `h(r)`; table interpolation inside `[1e-8, 1e4]`, quadrature outside.
    pub fn h(&self, r: f64) -> f64 {
        let l = r.ln();
        if self.log_h.contains(l) {
            self.log_h.eval(l).exp()
        } else {
            compute_h(&self.nu, r).unwrap_or(f64::NAN)
        }
    }

    /// `h(r)` by quadrature.
    pub fn h_exact(&self, r: f64) -> Result<f64> {
        compute_h(&self.nu, r)
    }

    pub fn k(&self, r: f64) -> f64 {
        let l = r.ln();
        if self.log_k.contains(l) {
            self.log_k.eval(l).exp()
        } else {
            compute_k(&self.nu, r).unwrap_or(f64::NAN)
        }
    }

    /// Range of `h` over the tabulated radii.
    pub fn h_range(&self) -> (f64, f64) {
        let y = &self.log_h.y;
        (y[y.len() - 1].exp(), y[0].exp())
    }

    /// `h^{-1}(u)` by bisection on the exact `h`, to a relative bracket width of 1e-12.
    pub fn invert_h(&self, u: f64) -> Result<f64> {
        let (lo, hi) = self.h_range();
        if !(u >= lo && u <= hi) {
            return Err(Error::OutOfRange { value: u, low: lo, high: hi });
        }
        let guess = self.h_inv(u);
        let mut a = guess * 0.99;
        let mut b = guess * 1.01;
        // widen until bracketed: h is decreasing, so h(a) >= u >= h(b)
        while compute_h(&self.nu, a)? < u {
            a *= 0.5;
        }
        while compute_h(&self.nu, b)? > u {
            b *= 2.0;
        }
        while (b - a) > 1e-12 * a {
            let m = 0.5 * (a + b);
            if compute_h(&self.nu, m)? >= u {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Table-based `h^{-1}` for bulk evaluation.
    pub fn h_inv(&self, u: f64) -> f64 {
        let l = u.ln();
        if self.log_h_inv.contains(l) {
            self.log_h_inv.eval(l).exp()
        } else if l > *self.log_h_inv.x.last().unwrap() {
            TABLE_MIN * (self.h(TABLE_MIN) / u).powf(1.0 / self.alpha_h.max(1e-3))
        } else {
            TABLE_MAX
        }
    }

    /// Weak scaling fit on a log grid of `(lambda, r)` in the fit range.
    ///
    /// For `lower` returns the largest exponent `a` on the 0.01 grid with
    /// `h(r) <= C lambda^a h(lambda r)` for `C = max ratio <= 1.05`, and that `C`.
    /// Otherwise the smallest `b` with `h(r) >= c lambda^b h(lambda r)`,
    /// `c >= 1 / 1.05`; `(inf, 0)` when no exponent up to 2 qualifies.
    pub fn fit_scaling(&self, lower: bool, points: usize) -> (f64, f64) {
        let grid = logspace(self.fit_range.0, self.fit_range.1, points);
        let mut pairs = Vec::with_capacity(points * points);
        for &lam in &grid {
            for &r in &grid {
                let q = self.h(r) / self.h(lam * r);
                pairs.push((lam.ln(), q.ln()));
            }
        }
        // C(a) = max exp(log q - a log lambda); c(b) = min exp(log q - b log lambda)
        let constant = |e: f64, upper: bool| {
            let it = pairs.iter().map(|&(ll, lq)| lq - e * ll);
            if upper {
                it.fold(f64::NEG_INFINITY, f64::max).exp()
            } else {
                it.fold(f64::INFINITY, f64::min).exp()
            }
        };
        if lower {
            for i in (1..=200).rev() {
                let a = i as f64 / 100.0;
                let c = constant(a, true);
                if c <= SCALING_CONSTANT_CAP {
                    return (a, c.max(1.0));
                }
            }
            (0.01, constant(0.01, true).max(1.0))
        } else {
            for i in 1..=200 {
                let b = i as f64 / 100.0;
                let c = constant(b, false);
                if c >= 1.0 / SCALING_CONSTANT_CAP {
                    return (b, c.min(1.0));
                }
            }
            (f64::INFINITY, 0.0)
        }
    }

    /// Largest ratio `h(r) / (lambda^a h(lambda r))` on a grid of the given density.
    pub fn lower_scaling_constant(&self, a: f64, points: usize) -> f64 {
        let grid = logspace(self.fit_range.0, self.fit_range.1, points);
        let mut c = 0.0f64;
        for &lam in &grid {
            for &r in &grid {
                c = c.max(self.h(r) / (lam.powf(a) * self.h(lam * r)));
            }
        }
        c
    }
}

/// `rho_t(x) = min(h^{-1}(1/t)^{-d}, t K(|x|) / |x|^d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundFunction {
    pub profile: ScaleProfile,
    pub dim: usize,
}

impl BoundFunction {
    pub fn new(profile: ScaleProfile) -> Self {
        let dim = profile.dim();
        Self { profile, dim }
    }

    /// Natural spatial scale `h^{-1}(1/t)`.
    pub fn scale(&self, t: f64) -> f64 {
        self.profile.h_inv(1.0 / t)
    }

    pub fn rho(&self, t: f64, x: &[f64]) -> f64 {
        let r = norm(x);
        self.rho_radial(t, r)
    }

    pub fn rho_radial(&self, t: f64, r: f64) -> f64 {
        let diag = self.scale(t).powi(-(self.dim as i32));
        if r == 0.0 {
            return diag;
        }
        diag.min(t * self.profile.k(r) / r.powi(self.dim as i32))
    }

    /// `h^{-1}(1/t)^gamma (|x|^beta ^ 1) rho_t(x)`.
    pub fn rho_family(&self, gamma: f64, beta: f64, t: f64, x: &[f64]) -> f64 {
        let r = norm(x);
        let w = if beta == 0.0 { 1.0 } else { r.powf(beta).min(1.0) };
        self.scale(t).powf(gamma) * w * self.rho_radial(t, r)
    }

    /// `rho_t(y - x - z) 1{|z| >= s} + (|z| / s ^ 1) rho_t(y - x)`, `s = h^{-1}(1/t)`.
    pub fn frak_f2(&self, t: f64, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
        let s = self.scale(t);
        let rz = norm(z);
        let yx: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        let yxz: Vec<f64> = yx.iter().zip(z).map(|(a, b)| a - b).collect();
        let first = if rz >= s { self.rho(t, &yxz) } else { 0.0 };
        first + (rz / s).min(1.0) * self.rho(t, &yx)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
