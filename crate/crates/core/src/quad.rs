//! Quadrature primitives: fixed Gauss-Legendre rules, adaptive Gauss-Kronrod
//! and log-substituted integrals over `(0, r]` and `[r, inf)` for profiles with
//! power-type behaviour at the origin or at infinity.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Absolute/relative tolerance pair. A result is accepted when the error
/// estimate is below `max(abs, rel * |value|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    fn accepts(&self, value: f64, err: f64) -> bool {
        err <= self.abs.max(self.rel * value.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(1e-14, 1e-11)
    }
}

/// An integral value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss-Kronrod 7/15 panel.
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Estimate {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(mid - dx) + f(mid + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Estimate {
        value: kron * half,
        error: ((kron - gauss) * half).abs(),
    }
}

struct Panel {
    a: f64,
    b: f64,
    est: Estimate,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.est.error == other.est.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.est
            .error
            .partial_cmp(&other.est.error)
            .unwrap_or(Ordering::Equal)
    }
}

/// Globally adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: Tolerance,
    max_panels: usize,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let first = gk15(&mut f, a, b);
    if !first.value.is_finite() {
        return Err(Error::Quadrature {
            context: format!("non-finite integrand on [{a}, {b}]"),
            estimate: f64::INFINITY,
            tolerance: tol.abs,
        });
    }
    let mut heap = BinaryHeap::new();
    let mut value = first.value;
    let mut error = first.error;
    heap.push(Panel { a, b, est: first });
    while !tol.accepts(value, error) {
        if heap.len() >= max_panels {
            return Err(Error::Quadrature {
                context: format!("panel limit reached on [{a}, {b}]"),
                estimate: error,
                tolerance: tol.abs.max(tol.rel * value.abs()),
            });
        }
        let worst = heap.pop().expect("heap is non-empty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            // interval cannot be split further in floating point
            heap.push(worst);
            break;
        }
        let left = gk15(&mut f, worst.a, m);
        let right = gk15(&mut f, m, worst.b);
        if !(left.value.is_finite() && right.value.is_finite()) {
            return Err(Error::Quadrature {
                context: format!("non-finite integrand near {m}"),
                estimate: f64::INFINITY,
                tolerance: tol.abs,
            });
        }
        value += left.value + right.value - worst.est.value;
        error += left.error + right.error - worst.est.error;
        heap.push(Panel { a: worst.a, b: m, est: left });
        heap.push(Panel { a: m, b: worst.b, est: right });
    }
    // resum to limit drift from incremental updates
    let value: f64 = heap.iter().map(|p| p.est.value).sum();
    let error: f64 = heap.iter().map(|p| p.est.error).sum();
    if !tol.accepts(value, error) && error > 1e3 * tol.abs.max(tol.rel * value.abs()) {
        return Err(Error::Quadrature {
            context: format!("no convergence on [{a}, {b}]"),
            estimate: error,
            tolerance: tol.abs.max(tol.rel * value.abs()),
        });
    }
    Ok(Estimate { value, error })
}

const CHUNK: f64 = 1.0;
const MAX_CHUNKS: usize = 600;

/// Sums `integral of g over [k, k+1]` for k = 0, 1, ... where `g` is expected
/// to decay at least geometrically, extrapolating the remainder once the
/// chunk ratio settles. Reports divergence when chunks stop decaying.
fn sum_log_chunks<G: FnMut(f64) -> f64>(mut g: G, tol: Tolerance, what: &str) -> Result<f64> {
    let chunk_tol = Tolerance::new(tol.abs * 1e-2, tol.rel * 1e-2);
    let mut sum = 0.0;
    let mut prev: Option<f64> = None;
    let mut ratios: Vec<f64> = Vec::new();
    let mut non_decay = 0usize;
    let mut tiny = 0usize;
    for k in 0..MAX_CHUNKS {
        let a = k as f64 * CHUNK;
        let c = adaptive(&mut g, a, a + CHUNK, chunk_tol, 400)?.value;
        sum += c;
        if c.abs() <= f64::MIN_POSITIVE * 1e10 || c.abs() <= 1e-3 * tol.abs.max(tol.rel * sum.abs()) * 1e-3 {
            tiny += 1;
            if tiny >= 3 {
                return Ok(sum);
            }
        } else {
            tiny = 0;
        }
        if let Some(p) = prev {
            if p != 0.0 {
                let q = c / p;
                ratios.push(q);
                if q >= 0.999_999 {
                    non_decay += 1;
                } else {
                    non_decay = 0;
                }
                if non_decay >= 6 && k >= 12 {
                    return Err(Error::NotLevy(format!(
                        "divergent integral ({what}): contributions stop decaying"
                    )));
                }
                if (0.0..0.999).contains(&q) {
                    let rem = c * q / (1.0 - q);
                    let n = ratios.len();
                    let settled = n >= 3
                        && (ratios[n - 1] - ratios[n - 2]).abs() <= 1e-6 * q.max(1e-3)
                        && (ratios[n - 2] - ratios[n - 3]).abs() <= 1e-6 * q.max(1e-3);
                    if rem.abs() <= tol.abs.max(tol.rel * sum.abs()) * 1e-2 || (settled && k >= 5) {
                        return Ok(sum + rem);
                    }
                }
            }
        }
        prev = Some(c);
    }
    Err(Error::NotLevy(format!(
        "divergent integral ({what}): no convergence after {MAX_CHUNKS} chunks"
    )))
}

/// `integral_0^r f(s) ds` for `f` with an integrable singularity at the origin,
/// computed in the variable `s = r e^{-u}`.
pub fn integrate_to_zero<F: Fn(f64) -> f64>(f: F, r: f64, tol: Tolerance) -> Result<f64> {
    if r <= 0.0 {
        return Ok(0.0);
    }
    sum_log_chunks(
        |u| {
            let s = r * (-u).exp();
            if s <= 0.0 {
                0.0
            } else {
                s * f(s)
            }
        },
        tol,
        "near the origin",
    )
}

/// `integral_r^inf f(s) ds` computed in the variable `s = r e^{u}`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, r: f64, tol: Tolerance) -> Result<f64> {
    assert!(r > 0.0);
    sum_log_chunks(
        |u| {
            let s = r * u.exp();
            if !s.is_finite() {
                0.0
            } else {
                s * f(s)
            }
        },
        tol,
        "at infinity",
    )
}

/// Breakpoints covering `[a, b]` that grow geometrically (factor 2) from `a`
/// and never exceed `max_len` in length. Requires `a > 0`.
pub fn geometric_breaks(a: f64, b: f64, max_len: f64) -> Vec<f64> {
    let mut pts = vec![a];
    let mut x = a;
    while x < b {
        let step = x.min(max_len);
        let next = (x + step).min(b);
        if b - next < 1e-12 * b {
            pts.push(b);
            break;
        }
        pts.push(next);
        x = next;
    }
    if *pts.last().unwrap() < b {
        pts.push(b);
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let gl = GaussLegendre::new(8);
        // degree 15 monomial over [0, 2]
        let v = gl.integrate(0.0, 2.0, |x| x.powi(15));
        assert_relative_eq!(v, 2f64.powi(16) / 16.0, max_relative = 1e-13);
        let w: f64 = gl.mapped(-1.0, 1.0).map(|(_, w)| w).sum();
        assert_relative_eq!(w, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let e = adaptive(|x: f64| x.abs().sqrt(), -1.0, 1.0, Tolerance::new(1e-13, 1e-12), 500).unwrap();
        assert_relative_eq!(e.value, 4.0 / 3.0, max_relative = 1e-10);
    }

    #[test]
    fn log_chunks_power_laws() {
        // integral_0^1 s^{-0.9} ds = 10
        let v = integrate_to_zero(|s| s.powf(-0.9), 1.0, Tolerance::default()).unwrap();
        assert_relative_eq!(v, 10.0, max_relative = 1e-9);
        // integral_2^inf s^{-1.5} ds = 2 / sqrt(2)
        let v = integrate_to_infinity(|s| s.powf(-1.5), 2.0, Tolerance::default()).unwrap();
        assert_relative_eq!(v, 2.0 / 2f64.sqrt(), max_relative = 1e-9);
        // tempered tail: integral_1^inf e^{-s} ds = e^{-1}
        let v = integrate_to_infinity(|s| (-s).exp(), 1.0, Tolerance::default()).unwrap();
        assert_relative_eq!(v, (-1f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn log_chunks_detect_divergence() {
        assert!(integrate_to_zero(|s| 1.0 / s, 1.0, Tolerance::default()).is_err());
        assert!(integrate_to_infinity(|s| 1.0 / s, 1.0, Tolerance::default()).is_err());
    }

    #[test]
    fn geometric_breaks_cover_interval() {
        let b = geometric_breaks(0.01, 10.0, 0.5);
        assert_eq!(b[0], 0.01);
        assert_eq!(*b.last().unwrap(), 10.0);
        for w in b.windows(2) {
            assert!(w[1] > w[0]);
            assert!(w[1] - w[0] <= 0.5 + 1e-12);
        }
    }
}
