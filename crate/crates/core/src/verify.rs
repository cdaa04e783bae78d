//! The estimate harness: empirical constants of Hölder-type bounds, measured
//! at two grid densities, and a Monte Carlo density oracle.
//!
//! A bound `|lhs| <= c rhs` is "verified" when the maximal observed ratio
//! `lhs / rhs` is finite and changes by at most 15% when every grid is
//! refined 2x; a ratio that keeps growing under refinement is reported as
//! diverging.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frozen::{self, FftSettings, FrozenSymbol, KernelCache};
use crate::models::{JumpModel, OperatorForm};
use crate::parametrix::{Parametrix, ParametrixConfig};
use crate::quad::{self, GaussLegendre, Tolerance};
use crate::scales::{compute_h, BoundFunction, ScaleProfile};

/// Relative change under refinement still counted as stable.
pub const STABLE_TOL: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Diverging,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Diverging => "diverging",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Verdict from the last two entries of a refinement series.
pub fn verdict(series: &[f64]) -> Verdict {
    let [.., a, b] = series else {
        return Verdict::Inconclusive;
    };
    let (a, b) = (*a, *b);
    if !(a.is_finite() && b.is_finite()) {
        return Verdict::Diverging;
    }
    if (b - a).abs() <= STABLE_TOL * a || (a == 0.0 && b == 0.0) {
        Verdict::Stable
    } else if b > a {
        Verdict::Diverging
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate_id: String,
    /// Parameters of the slice (exponents, time range, grid sizes).
    pub slice: Vec<(String, f64)>,
    /// Empirical constant at the finest grid.
    pub max_ratio: f64,
    /// Where the finest-grid maximum was attained.
    pub witness: Vec<(String, f64)>,
    /// Maximal ratio per grid density (1x, 2x, ...).
    pub refinement_series: Vec<f64>,
    pub verdict: Verdict,
    /// Whether the slice lies inside the window where the bound is claimed.
    pub admissible: bool,
}

impl EstimateReport {
    fn from_series(id: String, slice: Vec<(String, f64)>, sups: Vec<Sup>, admissible: bool) -> Self {
        let series: Vec<f64> = sups.iter().map(|s| s.value).collect();
        let last = sups.last().cloned().unwrap_or_default();
        Self {
            estimate_id: id,
            slice,
            max_ratio: last.value,
            witness: last.witness,
            verdict: verdict(&series),
            refinement_series: series,
            admissible,
        }
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.slice.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub const CSV_HEADER: &'static str = "estimate_id,slice,max_ratio,witness,refinement_series,verdict,admissible";

    pub fn csv_row(&self) -> String {
        let kv = |v: &[(String, f64)]| v.iter().map(|(k, x)| format!("{k}={x}")).collect::<Vec<_>>().join(";");
        let series = self.refinement_series.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(";");
        format!(
            "{},{},{:.6e},{},{},{},{}",
            self.estimate_id,
            kv(&self.slice),
            self.max_ratio,
            kv(&self.witness),
            series,
            self.verdict,
            self.admissible
        )
    }
}

/// Running supremum with its witness.
#[derive(Debug, Clone, Default)]
struct Sup {
    value: f64,
    witness: Vec<(String, f64)>,
}

impl Sup {
    fn offer(&mut self, v: f64, witness: impl FnOnce() -> Vec<(String, f64)>) {
        if v > self.value || (v.is_nan() && !self.value.is_nan()) {
            self.value = if v.is_nan() { f64::INFINITY } else { v };
            self.witness = witness();
        }
    }
}

fn w(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// `alpha_h + beta ^ alpha_h`, the index governing which derivative levels exist.
pub fn regularity_index(alpha_h: f64, beta: f64) -> f64 {
    alpha_h + beta.min(alpha_h)
}

/// Checks that derivative level `level` is covered by the indices. Level 0
/// is always admitted.
pub fn check_level(alpha_h: f64, beta: f64, level: usize) -> Result<()> {
    let s = regularity_index(alpha_h, beta);
    if level > 2 {
        return Err(Error::InvalidArgument(format!("level {level} > 2")));
    }
    if level > 0 && s <= level as f64 {
        return Err(Error::Hypothesis(format!(
            "level {level} needs alpha_h + beta ^ alpha_h > {level}, but alpha_h + beta ^ alpha_h = {s:.4}"
        )));
    }
    Ok(())
}

/// Whether the Hölder exponent `r` lies in `[0, 1] ∩ [0, alpha_h + beta ^ alpha_h - level)`.
pub fn exponent_admissible(alpha_h: f64, beta: f64, level: usize, r: f64) -> bool {
    (0.0..=1.0).contains(&r) && r < regularity_index(alpha_h, beta) - level as f64
}

/// Evaluation grids of the harness at 1x density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessGrid {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    /// `x` runs over `[-x_half_width, x_half_width]`.
    pub x_half_width: f64,
    /// Spacing of `x` at 1x; divided by the refinement factor.
    pub x_step: f64,
    pub refinements: Vec<usize>,
}

impl Default for HarnessGrid {
    fn default() -> Self {
        Self {
            t: vec![0.125, 0.25, 0.5],
            y: vec![-0.5, 0.0, 0.75],
            x_half_width: 2.0,
            x_step: 0.1,
            refinements: vec![1, 2],
        }
    }
}

impl HarnessGrid {
    pub fn x_points(&self, factor: usize) -> Vec<f64> {
        let step = self.x_step / factor as f64;
        let k = (self.x_half_width / step).round() as i64;
        (-k..=k).map(|i| i as f64 * step).collect()
    }
}

/// Kernel fields sampled on harness grids at one refinement factor, indexed `[t][x][y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub factor: usize,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `partial_x^k p^kappa` for `k = 0, 1, 2` (when requested).
    pub p: [Option<Vec<f64>>; 3],
    pub q: Option<Vec<f64>>,
    pub q0: Option<Vec<f64>>,
    pub picard_deltas: Vec<f64>,
}

impl Samples {
    fn idx(&self, it: usize, ix: usize, iy: usize) -> usize {
        (it * self.x.len() + ix) * self.y.len() + iy
    }

    pub fn p(&self, order: usize, it: usize, ix: usize, iy: usize) -> Option<f64> {
        self.p[order].as_ref().map(|v| v[self.idx(it, ix, iy)])
    }
}

/// Solves the parametrix at `base.refined(factor)` and samples `p^kappa`
/// (orders `orders`) and optionally `q`, `q_0` on the harness grids.
pub fn sample_parametrix(
    m: &JumpModel,
    form: OperatorForm,
    base: &ParametrixConfig,
    grid: &HarnessGrid,
    factor: usize,
    orders: &[usize],
    with_q: bool,
) -> Result<Samples> {
    let mut cfg = base.refined(factor);
    cfg.t_eval = grid.t.clone();
    cfg.y_eval = grid.y.clone();
    cfg.all_y = false;
    let par = Parametrix::solve(m, form, &cfg)?;
    let xs = grid.x_points(factor);
    let (nt, nx, ny) = (grid.t.len(), xs.len(), grid.y.len());
    let mut p: [Option<Vec<f64>>; 3] = [None, None, None];
    for &order in orders {
        let mut v = vec![0.0; nt * nx * ny];
        for (it, &t) in grid.t.iter().enumerate() {
            let rows = par.heat_kernel_on(t, order, &xs)?;
            for (ix, row) in rows.iter().enumerate() {
                for (iy, val) in row.iter().enumerate() {
                    v[(it * nx + ix) * ny + iy] = *val;
                }
            }
        }
        p[order] = Some(v);
    }
    let (mut q, mut q0) = (None, None);
    if with_q {
        let rows = par.grid_rows(&xs)?;
        let window_pos: Vec<usize> = rows
            .iter()
            .map(|r| {
                par.window.iter().position(|w| w == r).ok_or_else(|| {
                    Error::InvalidArgument("harness x grid leaves the parametrix window".into())
                })
            })
            .collect::<Result<_>>()?;
        let pick = |f: &crate::parametrix::KernelField| {
            let mut v = vec![0.0; nt * nx * ny];
            for it in 0..nt {
                for (ix, &wp) in window_pos.iter().enumerate() {
                    for iy in 0..ny {
                        v[(it * nx + ix) * ny + iy] = f.get(it, wp, iy);
                    }
                }
            }
            v
        };
        q = Some(pick(&par.q_field().field));
        q0 = Some(pick(&par.q0_field()));
    }
    Ok(Samples {
        factor,
        t: grid.t.clone(),
        x: xs,
        y: par.targets.iter().map(|&i| par.x[i]).collect(),
        p,
        q,
        q0,
        picard_deltas: par.deltas.clone(),
    })
}

/// Sup over `(t, x, x', y)` of `|f(x) - f(x')| / den(t, x, x', y)`.
fn pair_sup(s: &Samples, values: &[f64], den: &dyn Fn(f64, f64, f64, f64) -> f64) -> Sup {
    let mut sup = Sup::default();
    for (it, &t) in s.t.iter().enumerate() {
        for (iy, &y) in s.y.iter().enumerate() {
            for i in 0..s.x.len() {
                for j in i + 1..s.x.len() {
                    let num = (values[s.idx(it, i, iy)] - values[s.idx(it, j, iy)]).abs();
                    let d = den(t, s.x[i], s.x[j], y);
                    sup.offer(num / d, || w(&[("t", t), ("x", s.x[i]), ("x_prime", s.x[j]), ("y", y)]));
                }
            }
        }
    }
    sup
}

fn require(samples: &[Samples]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    Ok(())
}

fn order_values(s: &Samples, order: usize) -> Result<&[f64]> {
    s.p[order]
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("samples lack derivative order {order}")))
}

fn slice_of(samples: &[Samples], extra: &[(&str, f64)]) -> Vec<(String, f64)> {
    let s = &samples[0];
    let mut v = w(extra);
    v.push(("t_min".into(), s.t.iter().cloned().fold(f64::INFINITY, f64::min)));
    v.push(("t_max".into(), s.t.iter().cloned().fold(0.0, f64::max)));
    v.push(("x_points_1x".into(), s.x.len() as f64));
    v
}

/// Hölder moduli of `D^level p^kappa` against
/// `(|x - x'|^r ^ 1) h^{-1}(1/t)^{-level-r} (rho_t(y - x') + rho_t(y - x))`, one
/// report per `r`. At level 2 also reports the bound on `|D^2 p^kappa|` itself.
pub fn check_theorem_holder(
    samples: &[Samples],
    bf: &BoundFunction,
    alpha_h: f64,
    beta: f64,
    level: usize,
    r_grid: &[f64],
) -> Result<Vec<EstimateReport>> {
    require(samples)?;
    check_level(alpha_h, beta, level)?;
    let id = format!("theorem_holder_level{level}");
    let mut out = Vec::new();
    for &r in r_grid {
        let sups = samples
            .iter()
            .map(|s| {
                let den = |t: f64, x: f64, xp: f64, y: f64| {
                    ((x - xp).abs().powf(r)).min(1.0)
                        * bf.scale(t).powf(-(level as f64) - r)
                        * (bf.rho(t, &[y - xp]) + bf.rho(t, &[y - x]))
                };
                Ok(pair_sup(s, order_values(s, level)?, &den))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(EstimateReport::from_series(
            id.clone(),
            slice_of(samples, &[("level", level as f64), ("r", r)]),
            sups,
            exponent_admissible(alpha_h, beta, level, r),
        ));
    }
    if level == 2 {
        out.push(check_kernel_bound(samples, bf, 2)?);
    }
    Ok(out)
}

/// `sup |D^order p^kappa(t, x, y)| / (h^{-1}(1/t)^{-order} rho_t(y - x))`.
pub fn check_kernel_bound(samples: &[Samples], bf: &BoundFunction, order: usize) -> Result<EstimateReport> {
    require(samples)?;
    let sups = samples
        .iter()
        .map(|s| {
            let v = order_values(s, order)?;
            let mut sup = Sup::default();
            for (it, &t) in s.t.iter().enumerate() {
                for (ix, &x) in s.x.iter().enumerate() {
                    for (iy, &y) in s.y.iter().enumerate() {
                        let den = bf.scale(t).powi(-(order as i32)) * bf.rho(t, &[y - x]);
                        sup.offer(v[s.idx(it, ix, iy)].abs() / den, || w(&[("t", t), ("x", x), ("y", y)]));
                    }
                }
            }
            Ok(sup)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateReport::from_series(
        format!("kernel_bound_order{order}"),
        slice_of(samples, &[("order", order as f64)]),
        sups,
        true,
    ))
}

/// Lower comparability: `sup rho_t(y - x) / p^kappa(t, x, y)` over points with
/// `|y - x| <= reach h^{-1}(1/t)`, where `p^kappa` is bounded away from zero.
pub fn check_lower_bound(samples: &[Samples], bf: &BoundFunction, reach: f64) -> Result<EstimateReport> {
    require(samples)?;
    let sups = samples
        .iter()
        .map(|s| {
            let v = order_values(s, 0)?;
            let mut sup = Sup::default();
            for (it, &t) in s.t.iter().enumerate() {
                let sc = bf.scale(t);
                for (ix, &x) in s.x.iter().enumerate() {
                    for (iy, &y) in s.y.iter().enumerate() {
                        if (y - x).abs() <= reach * sc {
                            let p = v[s.idx(it, ix, iy)];
                            sup.offer(bf.rho(t, &[y - x]) / p, || w(&[("t", t), ("x", x), ("y", y)]));
                        }
                    }
                }
            }
            Ok(sup)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateReport::from_series(
        "kernel_lower_bound".into(),
        slice_of(samples, &[("reach", reach)]),
        sups,
        true,
    ))
}

/// Outcome of [`check_q_regularity`].
#[derive(Debug, Clone, PartialEq)]
pub struct QRegularity {
    pub reports: Vec<EstimateReport>,
    /// `max / min` of the empirical constants over the `gamma` sweep.
    pub uniformity: f64,
}

/// Hölder regularity of `q` in `x`: ratios of `|q(t, x, y) - q(t, x', y)|` to
/// `(|x - x'|^{beta1 - gamma} ^ 1) {F(t, x - y) + F(t, x' - y)}` with
/// `F = err^gamma_0 + err^{gamma - beta1}_{beta1}`, for each `gamma`.
pub fn check_q_regularity(
    samples: &[Samples],
    bf: &BoundFunction,
    alpha_h: f64,
    beta: f64,
    beta1: f64,
    gammas: &[f64],
) -> Result<QRegularity> {
    require(samples)?;
    if !(beta1 > 0.0 && beta1 <= beta && beta1 < alpha_h) {
        return Err(Error::Hypothesis(format!(
            "beta1 = {beta1} must lie in (0, beta] ∩ (0, alpha_h) with beta = {beta}, alpha_h = {alpha_h:.4}"
        )));
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g > 0.0 && g <= beta1)) {
        return Err(Error::Hypothesis(format!("gamma = {g} must lie in (0, beta1]")));
    }
    let mut reports = Vec::new();
    for &g in gammas {
        let sups = samples
            .iter()
            .map(|s| {
                let q = s.q.as_deref().ok_or_else(|| Error::InvalidArgument("samples lack q".into()))?;
                let fam = |t: f64, v: f64| bf.rho_family(g, 0.0, t, &[v]) + bf.rho_family(g - beta1, beta1, t, &[v]);
                let den = |t: f64, x: f64, xp: f64, y: f64| {
                    (x - xp).abs().powf(beta1 - g).min(1.0) * (fam(t, x - y) + fam(t, xp - y))
                };
                Ok(pair_sup(s, q, &den))
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(EstimateReport::from_series(
            "q_regularity".into(),
            slice_of(samples, &[("beta1", beta1), ("gamma", g)]),
            sups,
            true,
        ));
    }
    let (lo, hi) = reports
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.max_ratio), hi.max(r.max_ratio)));
    let uniformity = if hi == 0.0 { 1.0 } else { hi / lo };
    Ok(QRegularity { reports, uniformity })
}

/// `sup |q_0(t, x, y)| / (err^0_{beta1} + err^{beta1}_0)(t, x - y)`.
pub fn check_q0_bound(samples: &[Samples], bf: &BoundFunction, beta1: f64) -> Result<EstimateReport> {
    require(samples)?;
    let sups = samples
        .iter()
        .map(|s| {
            let q0 = s.q0.as_deref().ok_or_else(|| Error::InvalidArgument("samples lack q0".into()))?;
            let mut sup = Sup::default();
            for (it, &t) in s.t.iter().enumerate() {
                for (ix, &x) in s.x.iter().enumerate() {
                    for (iy, &y) in s.y.iter().enumerate() {
                        let d = x - y;
                        let den = bf.rho_family(0.0, beta1, t, &[d]) + bf.rho_family(beta1, 0.0, t, &[d]);
                        sup.offer(q0[s.idx(it, ix, iy)].abs() / den, || w(&[("t", t), ("x", x), ("y", y)]));
                    }
                }
            }
            Ok(sup)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateReport::from_series("q0_bound".into(), slice_of(samples, &[("beta1", beta1)]), sups, true))
}

/// Largest deviation of `partial_x^2 p^kappa` from the central second
/// difference `(p(x + h) - 2 p(x) + p(x - h)) / h^2` of the order-0 field, over
/// `xs` and all targets, relative to `max |partial_x^2 p^kappa|` at each time.
pub fn second_difference_error(par: &Parametrix, t: &[f64], xs: &[f64], h: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for &tt in t {
        let d2 = par.heat_kernel_on(tt, 2, xs)?;
        let p0 = par.heat_kernel_on(tt, 0, xs)?;
        let pp = par.heat_kernel_shifted(tt, 0, xs, h)?;
        let pm = par.heat_kernel_shifted(tt, 0, xs, -h)?;
        let scale = d2.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..xs.len() {
            for j in 0..d2[i].len() {
                let fd = (pp[i][j] - 2.0 * p0[i][j] + pm[i][j]) / (h * h);
                worst = worst.max((fd - d2[i][j]).abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// Grids for the frozen-kernel increment bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IncrementGrid {
    pub t: Vec<f64>,
    pub x_half_width: f64,
    pub x_step: f64,
    pub gammas: Vec<f64>,
    pub refinements: Vec<usize>,
}

impl Default for IncrementGrid {
    fn default() -> Self {
        Self { t: vec![0.5, 1.0], x_half_width: 2.0, x_step: 0.1, gammas: vec![0.0, 0.5, 1.0], refinements: vec![1, 2] }
    }
}

/// Frozen kernel `D^order p^K(t, x, 0)` on the grid `x`, per `t`.
fn frozen_samples(
    sym: &FrozenSymbol,
    t: &[f64],
    x: &[f64],
    order: usize,
    settings: &FftSettings,
    cache: &KernelCache,
) -> Result<Vec<Vec<f64>>> {
    t.iter()
        .map(|&tt| {
            let k = cache.kernel(sym, tt, settings)?;
            Ok(x.iter().map(|&xx| k.at(-xx, order, settings.image_correction)).collect())
        })
        .collect()
}

/// Increments of the frozen kernel and its first two derivatives, against
/// `h^{-1}(1/t)^{-l} F_2(t, x, y; z)` (`increment_f2_l{l}`) and against
/// `(|z|^gamma ^ 1) h^{-1}(1/t)^{-gamma-l} (rho_t(y-x-z) + rho_t(y-x))`
/// (`increment_gamma_l{l}`, one report per `gamma`). Uses `y = 0`; the kernel
/// depends on `y - x` only.
pub fn check_increment_bounds(
    sym: &FrozenSymbol,
    bf: &BoundFunction,
    grid: &IncrementGrid,
    settings: &FftSettings,
) -> Result<Vec<EstimateReport>> {
    let cache = KernelCache::new();
    let hg = HarnessGrid {
        t: grid.t.clone(),
        y: vec![0.0],
        x_half_width: grid.x_half_width,
        x_step: grid.x_step,
        refinements: grid.refinements.clone(),
    };
    let mut samples = Vec::new();
    for &f in &grid.refinements {
        let xs = hg.x_points(f);
        let mut s = Samples {
            factor: f,
            t: grid.t.clone(),
            x: xs.clone(),
            y: vec![0.0],
            p: [None, None, None],
            q: None,
            q0: None,
            picard_deltas: Vec::new(),
        };
        let mut fine = *settings;
        fine.n_max = settings.n_max.max(1 << 14);
        for order in 0..=2 {
            let v = frozen_samples(sym, &grid.t, &xs, order, &fine, &cache)?;
            s.p[order] = Some(v.into_iter().flatten().collect());
        }
        samples.push(s);
    }
    let mut out = Vec::new();
    for l in 0..=2usize {
        let sups = samples
            .iter()
            .map(|s| {
                let den = |t: f64, x: f64, xp: f64, y: f64| {
                    bf.scale(t).powi(-(l as i32)) * bf.frak_f2(t, &[x], &[y], &[xp - x])
                };
                // F_2 is not symmetric in (x, x'): take both orientations
                let fwd = pair_sup(s, order_values(s, l).unwrap(), &den);
                let den_b = |t: f64, x: f64, xp: f64, y: f64| den(t, xp, x, y);
                let bwd = pair_sup(s, order_values(s, l).unwrap(), &den_b);
                if bwd.value > fwd.value {
                    bwd
                } else {
                    fwd
                }
            })
            .collect();
        out.push(EstimateReport::from_series(
            format!("increment_f2_l{l}"),
            slice_of(&samples, &[("level", l as f64)]),
            sups,
            true,
        ));
        for &g in &grid.gammas {
            let sups = samples
                .iter()
                .map(|s| {
                    let den = |t: f64, x: f64, xp: f64, y: f64| {
                        (x - xp).abs().powf(g).min(1.0)
                            * bf.scale(t).powf(-g - l as f64)
                            * (bf.rho(t, &[y - xp]) + bf.rho(t, &[y - x]))
                    };
                    pair_sup(s, order_values(s, l).unwrap(), &den)
                })
                .collect();
            out.push(EstimateReport::from_series(
                format!("increment_gamma_l{l}"),
                slice_of(&samples, &[("level", l as f64), ("gamma", g)]),
                sups,
                true,
            ));
        }
    }
    out.push(check_kernel_bound(&samples, bf, 0)?);
    Ok(out)
}

/// Settings of the Monte Carlo scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McSettings {
    pub steps: usize,
    pub seed: u64,
    /// Small-jump threshold; defaults to `h^{-1}(1 / step)`.
    pub small_jump_threshold: Option<f64>,
    /// Largest admitted `step * h(threshold)`: the expected number of
    /// threshold-sized moves per step.
    pub max_activity: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self { steps: 64, seed: 0x1e71, small_jump_threshold: None, max_activity: 1.5 }
    }
}

/// Kernel density estimate with pointwise 95% confidence half-widths.
#[derive(Debug, Clone, PartialEq)]
pub struct McDensity {
    pub t: f64,
    pub x: f64,
    pub y: Vec<f64>,
    pub density: Vec<f64>,
    pub half_width: Vec<f64>,
    pub n_paths: usize,
    pub bandwidth: f64,
    pub threshold: f64,
}

fn moment_between(nu: &crate::models::RadialProfile, a: f64, b: f64) -> Result<f64> {
    if a >= b {
        return Ok(0.0);
    }
    let tol = Tolerance::new(1e-300, 1e-12);
    let mut acc = 0.0;
    for win in quad::geometric_breaks(a, b, 2.0).windows(2) {
        acc += quad::adaptive(|z| z * nu.eval(z), win[0], win[1], tol, 200)?.value;
    }
    Ok(acc)
}

/// Density of `X_t` started at `x`, by an Euler scheme with state-frozen
/// jump intensity: jumps of size at least the threshold are drawn as a
/// compound Poisson step, smaller ones are replaced by their Gaussian moment
/// match and drift (per operator form). Returns a Gaussian kernel density
/// estimate on `y`.
pub fn mc_oracle(
    m: &JumpModel,
    form: OperatorForm,
    sp: &ScaleProfile,
    t: f64,
    x: f64,
    n_paths: usize,
    bandwidth: f64,
    y: &[f64],
    settings: &McSettings,
) -> Result<McDensity> {
    if m.dim != 1 {
        return Err(Error::Unsupported(format!("Monte Carlo in dimension {}", m.dim)));
    }
    if !(t > 0.0) || settings.steps == 0 || n_paths < 2 || !(bandwidth > 0.0) {
        return Err(Error::SchemeRejected(format!(
            "t = {t}, steps = {}, paths = {n_paths}, bandwidth = {bandwidth}",
            settings.steps
        )));
    }
    let nu = m.jump.profile;
    let ds = t / settings.steps as f64;
    let eps = match settings.small_jump_threshold {
        Some(e) => e,
        None => sp.invert_h(1.0 / ds)?,
    };
    let activity = ds * compute_h(&nu, eps)?;
    if !(eps > 0.0) || activity > settings.max_activity {
        return Err(Error::SchemeRejected(format!(
            "threshold {eps:e} with step {ds:e}: step * h(threshold) = {activity:.3} exceeds {}",
            settings.max_activity
        )));
    }
    let rate_unit = frozen::tail_mass(&nu, eps)?;
    let m2 = frozen::small_moment(&nu, 2.0, eps).ok_or_else(|| Error::NotLevy("second moment".into()))?;
    // drift per unit one-sided weight, signed by the side
    let drift_unit = match form {
        OperatorForm::Compensated => {
            if eps < 1.0 {
                -moment_between(&nu, eps, 1.0)?
            } else {
                moment_between(&nu, 1.0, eps)?
            }
        }
        OperatorForm::PureJump => frozen::small_moment(&nu, 1.0, eps).ok_or(Error::FirstMomentDivergence)?,
        OperatorForm::Symmetrized => 0.0,
    };
    let gaussian = form != OperatorForm::PureJump;
    let alpha = nu.alpha;
    let temp = nu.tempering;
    let draw_size = |rng: &mut ChaCha8Rng| loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let r = eps * u.powf(-1.0 / alpha);
        if temp == 0.0 || rng.random::<f64>() < (-temp * (r - eps)).exp() {
            return r;
        }
    };

    let mut sum = vec![0.0; y.len()];
    let mut sum2 = vec![0.0; y.len()];
    let norm = 1.0 / (bandwidth * (2.0 * PI).sqrt());
    for path in 0..n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(path as u64);
        let mut xs = x;
        for _ in 0..settings.steps {
            let c = m.sided_intensity(xs);
            let (cp, cm) = match form {
                OperatorForm::Symmetrized => {
                    let a = 0.5 * (c.plus + c.minus);
                    (a, a)
                }
                _ => (c.plus, c.minus),
            };
            let mut dx = (cp - cm) * drift_unit * ds;
            if gaussian {
                let z: f64 = StandardNormal.sample(&mut rng);
                dx += ((cp + cm) * m2 * ds).sqrt() * z;
            }
            let lam = (cp + cm) * rate_unit * ds;
            if lam > 0.0 {
                let k = Poisson::new(lam).map_err(|e| Error::SchemeRejected(e.to_string()))?.sample(&mut rng) as u64;
                for _ in 0..k {
                    let r = draw_size(&mut rng);
                    dx += if rng.random::<f64>() * (cp + cm) < cp { r } else { -r };
                }
            }
            xs += dx;
        }
        for (j, &yy) in y.iter().enumerate() {
            let u = (yy - xs) / bandwidth;
            let v = norm * (-0.5 * u * u).exp();
            sum[j] += v;
            sum2[j] += v * v;
        }
    }
    let n = n_paths as f64;
    let density: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let half_width = sum2
        .iter()
        .zip(&density)
        .map(|(s2, mean)| {
            let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
            1.96 * (var / n).sqrt()
        })
        .collect();
    Ok(McDensity { t, x, y: y.to_vec(), density, half_width, n_paths, bandwidth, threshold: eps })
}

/// `(f * phi_b)(y)` for a callable density `f`, with `phi_b` the Gaussian
/// kernel of the estimate.
pub fn smoothed_reference(f: &dyn Fn(f64) -> f64, y: &[f64], bandwidth: f64) -> Vec<f64> {
    let gl = GaussLegendre::new(32);
    let norm = 1.0 / (2.0 * PI).sqrt();
    y.iter()
        .map(|&yy| {
            let mut acc = 0.0;
            for k in -8..8 {
                let (a, b) = (k as f64, k as f64 + 1.0);
                acc += gl.integrate(a, b, |s| f(yy - bandwidth * s) * norm * (-0.5 * s * s).exp());
            }
            acc
        })
        .collect()
}

/// `(f * phi_b)(y)` for `f` sampled on a uniform grid (Riemann sum; accurate
/// when the bandwidth is at least twice the spacing).
pub fn smoothed_samples(grid: &[f64], values: &[f64], y: &[f64], bandwidth: f64) -> Vec<f64> {
    let dx = grid[1] - grid[0];
    let norm = dx / (bandwidth * (2.0 * PI).sqrt());
    y.iter()
        .map(|&yy| {
            grid.iter()
                .zip(values)
                .map(|(g, v)| {
                    let u = (yy - g) / bandwidth;
                    v * norm * (-0.5 * u * u).exp()
                })
                .sum()
        })
        .collect()
}

/// Fraction of points where `|mc - reference| <= k * half_width`.
pub fn agreement(mc: &McDensity, reference: &[f64], k: f64) -> f64 {
    let hits = mc
        .density
        .iter()
        .zip(&mc.half_width)
        .zip(reference)
        .filter(|((d, hw), r)| (*d - *r).abs() <= k * *hw)
        .count();
    hits as f64 / reference.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_rules() {
        assert_eq!(verdict(&[1.0, 1.1]), Verdict::Stable);
        assert_eq!(verdict(&[1.0, 0.86]), Verdict::Stable);
        assert_eq!(verdict(&[1.0, 1.3]), Verdict::Diverging);
        assert_eq!(verdict(&[1.0, 0.5]), Verdict::Inconclusive);
        assert_eq!(verdict(&[0.0, 0.0]), Verdict::Stable);
        assert_eq!(verdict(&[2.0]), Verdict::Inconclusive);
    }

    #[test]
    fn level_preconditions() {
        assert!(check_level(0.6, 0.3, 0).is_ok());
        assert!(matches!(check_level(0.6, 0.3, 1), Err(Error::Hypothesis(_))));
        assert!(check_level(1.8, 0.6, 2).is_ok());
        assert!(matches!(check_level(1.2, 0.6, 2), Err(Error::Hypothesis(_))));
        assert!(exponent_admissible(1.5, 0.5, 0, 0.5));
        assert!(!exponent_admissible(1.8, 0.6, 2, 0.4));
        assert!(exponent_admissible(1.8, 0.6, 2, 0.3));
    }
}
