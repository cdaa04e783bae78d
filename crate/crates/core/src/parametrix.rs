//! The Levi parametrix: `q_0`, the Volterra equation `q = q_0 + q_0 * q`
//! solved by Picard iteration, and the assembled kernel
//! `p(t, x, y) = p^{K_y}(t, x, y) + phi_y(t, x)`.
//!
//! The construction is semi-discrete. Space is a periodic grid of `n` points
//! and spacing `dx`, on which every frozen operator acts as a Fourier
//! multiplier; `q` lives on the window `|x| <= half_width`. Time integrals
//! are done by product integration: `q` is interpolated linearly between
//! graded nodes and the exponential `e^{-(s - r) psi_z}` is integrated
//! exactly, frequency by frequency. This removes the endpoint singularities
//! from the time quadrature entirely.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frozen::{self, phi12, FftSettings, KernelCache, SpectralGrid};
use crate::generator::{self, GeneratorSpec, TestFunction};
use crate::models::{JumpModel, OperatorForm, Sided};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeGrid {
    /// Number of graded intervals on `[0, max t_eval]`.
    pub nodes: usize,
    /// Nodes are `T u^p / (u^p + (1 - u)^p)` on a uniform `u` grid.
    pub grading: f64,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { nodes: 24, grading: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpaceGrid {
    pub dx: f64,
    /// FFT length (ring of `n` points).
    pub n: usize,
    /// `q` and the `z` integral live on `|x| <= half_width`.
    pub half_width: f64,
}

impl Default for SpaceGrid {
    fn default() -> Self {
        Self { dx: 0.05, n: 1024, half_width: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParametrixConfig {
    pub n_picard: usize,
    pub time: TimeGrid,
    pub space: SpaceGrid,
    /// Times at which fields are assembled; each becomes a time node.
    pub t_eval: Vec<f64>,
    /// Target points `y` (snapped to the grid); ignored when `all_y`.
    pub y_eval: Vec<f64>,
    /// Solve for every `y` in the window (needed for mass and semigroup checks).
    pub all_y: bool,
    /// `t +- eps` are added as nodes with `eps = fd_fraction * local spacing`;
    /// zero disables them.
    pub fd_fraction: f64,
    /// Subtract the periodic images of the frozen kernel (to leading order in t).
    pub image_correction: bool,
}

impl Default for ParametrixConfig {
    fn default() -> Self {
        Self {
            n_picard: 6,
            time: TimeGrid::default(),
            space: SpaceGrid::default(),
            t_eval: vec![0.25],
            y_eval: vec![0.0],
            all_y: false,
            fd_fraction: 0.25,
            image_correction: true,
        }
    }
}

impl ParametrixConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidArgument(s));
        if !(self.time.grading > 1.0) {
            return bad(format!("grading exponent {} must exceed 1", self.time.grading));
        }
        if self.time.nodes < 2 {
            return bad("at least two time intervals are needed".into());
        }
        if self.t_eval.is_empty() || self.t_eval.iter().any(|&t| !(t > 0.0)) {
            return bad("t_eval must be non-empty and positive".into());
        }
        let s = &self.space;
        if !(s.dx > 0.0) || s.n < 16 || s.n % 2 != 0 {
            return bad(format!("space grid dx = {}, n = {} rejected", s.dx, s.n));
        }
        if !(s.half_width > 0.0 && 2.0 * s.half_width < 0.75 * s.n as f64 * s.dx) {
            return bad(format!("window half width {} does not fit the ring", s.half_width));
        }
        if !self.all_y && self.y_eval.is_empty() {
            return bad("no target points".into());
        }
        if !(0.0..0.5).contains(&self.fd_fraction) {
            return bad(format!("fd_fraction {} must lie in [0, 0.5)", self.fd_fraction));
        }
        Ok(())
    }

    /// Every grid refined by `factor` (a power of two): `dx / factor`,
    /// `n * factor`, `nodes * factor`.
    pub fn refined(&self, factor: usize) -> Self {
        let mut c = self.clone();
        c.space.dx /= factor as f64;
        c.space.n *= factor;
        c.time.nodes *= factor;
        c
    }
}

/// What a [`KernelField`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Frozen,
    Q0,
    Q,
    Phi,
    PKappa,
}

/// Values over `(t, x, y)` grids, stored `[t][x][y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelField {
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub deriv_order: usize,
    pub meta: FieldKind,
}

impl KernelField {
    pub fn get(&self, it: usize, ix: usize, iy: usize) -> f64 {
        self.values[(it * self.x_grid.len() + ix) * self.y_grid.len() + iy]
    }

    /// `x -> value` at fixed `(t, y)`.
    pub fn slice_x(&self, it: usize, iy: usize) -> Vec<f64> {
        (0..self.x_grid.len()).map(|ix| self.get(it, ix, iy)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// The solved `q` together with the Picard increments
/// `max |q^{(n)} - q^{(n-1)}|`, `n = 1..=n_picard`.
#[derive(Debug, Clone, PartialEq)]
pub struct QField {
    pub field: KernelField,
    pub deltas: Vec<f64>,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// `self += a b`.
    fn add_product(&mut self, a: &Mat, b: &Mat) {
        debug_assert!(a.cols == b.rows && a.rows == self.rows && b.cols == self.cols);
        if a.rows == 0 || b.cols == 0 || a.cols == 0 {
            return;
        }
        unsafe {
            matrixmultiply::dgemm(
                a.rows,
                a.cols,
                b.cols,
                1.0,
                a.data.as_ptr(),
                a.cols as isize,
                1,
                b.data.as_ptr(),
                b.cols as isize,
                1,
                1.0,
                self.data.as_mut_ptr(),
                self.cols as isize,
                1,
            );
        }
    }

    fn max_diff(&self, other: &Mat) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Time nodes with the evaluation times (and their `t +- eps`) merged in.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeNodes {
    pub nodes: Vec<f64>,
    /// Node index of each evaluation time.
    pub eval: Vec<usize>,
    /// `(index of t - eps, index of t + eps, eps)` per evaluation time.
    pub fd: Vec<Option<(usize, usize, f64)>>,
}

pub fn graded_nodes(t_max: f64, intervals: usize, p: f64) -> Vec<f64> {
    (0..=intervals)
        .map(|i| {
            let u = i as f64 / intervals as f64;
            let (a, b) = (u.powf(p), (1.0 - u).powf(p));
            t_max * a / (a + b)
        })
        .collect()
}

impl TimeNodes {
    pub fn new(cfg: &ParametrixConfig) -> Self {
        let t_max = cfg.t_eval.iter().cloned().fold(0.0, f64::max);
        let base = graded_nodes(t_max, cfg.time.nodes, cfg.time.grading);
        let mut all = base.clone();
        let mut eps = Vec::new();
        for &t in &cfg.t_eval {
            all.push(t);
            if cfg.fd_fraction > 0.0 {
                let i = base.partition_point(|&b| b < t).clamp(1, base.len() - 1);
                let e = cfg.fd_fraction * (base[i] - base[i - 1]);
                all.push(t - e);
                all.push(t + e);
                eps.push(Some(e));
            } else {
                eps.push(None);
            }
        }
        all.sort_by(f64::total_cmp);
        let tol = 1e-13 * t_max;
        all.dedup_by(|a, b| (*a - *b).abs() <= tol);
        let find = |v: f64| all.iter().position(|&n| (n - v).abs() <= tol).expect("merged node");
        let eval = cfg.t_eval.iter().map(|&t| find(t)).collect();
        let fd = cfg
            .t_eval
            .iter()
            .zip(&eps)
            .map(|(&t, e)| e.map(|e| (find(t - e), find(t + e), e)))
            .collect();
        Self { nodes: all, eval, fd }
    }
}

#[cfg(test)]
/// Weight of node `m` when integrating `int_0^{r_k} e^{-(r_k - r) psi} q(r) dr`
/// with `q` linear between nodes.
fn node_weight(nodes: &[f64], k: usize, m: usize, psi: C64) -> C64 {
    let s = nodes[k];
    let mut w = C64::new(0.0, 0.0);
    if m >= 1 {
        // right end of [r_{m-1}, r_m]
        let h = nodes[m] - nodes[m - 1];
        let (p1, p2) = phi12(psi * h);
        w += (-(s - nodes[m]) * psi).exp() * h * (p1 - p2);
    }
    if m < k {
        // left end of [r_m, r_{m+1}]
        let h = nodes[m + 1] - nodes[m];
        let (_, p2) = phi12(psi * h);
        w += (-(s - nodes[m + 1]) * psi).exp() * h * p2;
    }
    w
}

/// `(phi_1(x), phi_2(x), e^{-x})`.
fn phi12_exp(x: C64) -> (C64, C64, C64) {
    let e = (-x).exp();
    if x.norm() < 0.1 {
        let (p1, p2) = phi12(x);
        (p1, p2, e)
    } else {
        let one = C64::new(1.0, 0.0);
        let p1 = (one - e) / x;
        (p1, (one - e - x * e) / (x * x), e)
    }
}

/// A solved parametrix for one model, form and configuration.
pub struct Parametrix {
    pub model: JumpModel,
    pub form: OperatorForm,
    pub config: ParametrixConfig,
    pub grid: Arc<SpectralGrid>,
    pub times: TimeNodes,
    /// Ring coordinates `x_i = (i - n/2) dx`.
    pub x: Vec<f64>,
    /// Ring indices of the window.
    pub window: Vec<usize>,
    /// Ring indices of the target points.
    pub targets: Vec<usize>,
    /// `max |q^{(n)} - q^{(n-1)}|` per iteration.
    pub deltas: Vec<f64>,
    weights: Vec<Sided>,
    even: bool,
    /// Coefficient constant in x: the correction vanishes.
    constant: bool,
    /// Half spectra of `psi_z` for `z` in the window.
    psi: Vec<Vec<C64>>,
    /// Window slot of each ring index.
    slot: Vec<Option<usize>>,
    q0: Vec<Mat>,
    q: Vec<Mat>,
    admissible_order: usize,
}

impl std::fmt::Debug for Parametrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Parametrix")
            .field("form", &self.form)
            .field("grid", &self.grid)
            .field("nodes", &self.times.nodes.len())
            .field("window", &self.window.len())
            .field("targets", &self.targets.len())
            .field("deltas", &self.deltas)
            .finish()
    }
}

impl Parametrix {
    /// Builds `q_0` and runs the Picard iteration.
    pub fn solve(model: &JumpModel, form: OperatorForm, config: &ParametrixConfig) -> Result<Self> {
        if model.dim != 1 {
            return Err(Error::Unsupported(format!("parametrix in dimension {}", model.dim)));
        }
        config.validate()?;
        let sp = config.space;
        let grid = Arc::new(SpectralGrid::new(&model.jump.profile, form, sp.n, sp.dx)?);
        let n = sp.n;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 - (n / 2) as f64) * sp.dx).collect();
        let window: Vec<usize> = (0..n).filter(|&i| x[i].abs() <= sp.half_width + 1e-9 * sp.dx).collect();
        let mut slot = vec![None; n];
        for (s, &i) in window.iter().enumerate() {
            slot[i] = Some(s);
        }
        let targets = if config.all_y {
            window.clone()
        } else {
            config
                .y_eval
                .iter()
                .map(|&y| {
                    let i = (y / sp.dx).round() as i64 + (n / 2) as i64;
                    if i < 0 || i >= n as i64 || slot[i as usize].is_none() {
                        Err(Error::InvalidArgument(format!("target y = {y} outside the window")))
                    } else {
                        Ok(i as usize)
                    }
                })
                .collect::<Result<Vec<_>>>()?
        };
        let weights: Vec<Sided> = x.iter().map(|&xi| model.sided_intensity(xi)).collect();
        let even = weights.iter().all(|w| w.plus == w.minus);
        let constant = weights.iter().all(|w| *w == weights[0]);
        let half = n / 2;
        let psi = window
            .iter()
            .map(|&i| {
                let w = weights[i];
                (0..=half).map(|k| grid.psi_plus[k] * w.plus + grid.psi_minus[k] * w.minus).collect()
            })
            .collect();
        let times = TimeNodes::new(config);
        let mut p = Self {
            model: model.clone(),
            form,
            config: config.clone(),
            grid,
            times,
            x,
            window,
            targets,
            deltas: Vec::new(),
            weights,
            even,
            constant,
            psi,
            slot,
            q0: Vec::new(),
            q: Vec::new(),
            admissible_order: 2,
        };
        p.build_q0();
        p.picard()?;
        Ok(p)
    }

    /// Highest derivative order the caller's classification admits; larger
    /// orders are still computed, with a warning.
    pub fn set_admissible_order(&mut self, order: usize) {
        self.admissible_order = order;
    }

    fn half(&self) -> usize {
        self.grid.n / 2
    }

    /// Real-space values of Hermitian half spectra, two per FFT.
    fn invert_halves(&self, specs: &[Vec<C64>]) -> Vec<Vec<f64>> {
        let n = self.grid.n;
        let half = self.half();
        let scale = 1.0 / (n as f64 * self.grid.dx);
        let i = C64::new(0.0, 1.0);
        let mut out = Vec::with_capacity(specs.len());
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for pair in specs.chunks(2) {
            let a = &pair[0];
            let zero = C64::new(0.0, 0.0);
            let b = |k: usize| if pair.len() > 1 { pair[1][k] } else { zero };
            for k in 0..=half {
                let (av, bv) = if k == 0 || k == half { (C64::new(a[k].re, 0.0), C64::new(b(k).re, 0.0)) } else { (a[k], b(k)) };
                buf[k] = av + i * bv;
                if k > 0 && k < half {
                    buf[n - k] = av.conj() + i * bv.conj();
                }
            }
            self.grid.forward(&mut buf);
            out.push(buf.iter().map(|v| v.re * scale).collect());
            if pair.len() > 1 {
                out.push(buf.iter().map(|v| v.im * scale).collect());
            }
        }
        out
    }

    /// Matrix `[x, z] -> scale sum_pm (c_pm(z) - c_pm(x)) F^{-1}[Psi_pm omega(psi_z)](z - x)`:
    /// the generator difference `L^{K_x} - L^{K_z}` applied to the kernel with spectrum `omega(psi_z)`.
    fn difference_matrix(&self, rows: &[usize], cols: &[usize], scale: f64, omega: &[Vec<C64>]) -> Mat {
        let half = self.half();
        let g = &self.grid;
        let mut specs = Vec::with_capacity(cols.len() * 2);
        let mut active = Vec::with_capacity(cols.len());
        for (c, &iz) in cols.iter().enumerate() {
            // a column whose coefficient matches every row is identically zero
            let cz = self.weights[iz];
            let live = rows.iter().any(|&ix| self.weights[ix] != cz);
            active.push(live);
            if !live {
                continue;
            }
            let om = &omega[c];
            if self.even {
                specs.push((0..=half).map(|k| (g.psi_plus[k] + g.psi_minus[k]) * om[k]).collect());
            } else {
                specs.push((0..=half).map(|k| g.psi_plus[k] * om[k]).collect());
                specs.push((0..=half).map(|k| g.psi_minus[k] * om[k]).collect());
            }
        }
        let vals = self.invert_halves(&specs);
        let n = g.n;
        let mut out = Mat::zeros(rows.len(), cols.len());
        let mut v = 0;
        for (c, &iz) in cols.iter().enumerate() {
            if !active[c] {
                continue;
            }
            let cz = self.weights[iz];
            let (a, b) = if self.even { (&vals[v], &vals[v]) } else { (&vals[v], &vals[v + 1]) };
            v += if self.even { 1 } else { 2 };
            for (r, &ix) in rows.iter().enumerate() {
                let cx = self.weights[ix];
                let j = (iz + n - ix) % n;
                let val = if self.even {
                    (cz.plus - cx.plus) * a[j]
                } else {
                    (cz.plus - cx.plus) * a[j] + (cz.minus - cx.minus) * b[j]
                };
                out.data[r * cols.len() + c] = scale * val;
            }
        }
        out
    }

    /// Matrix `[x, z] -> scale F^{-1}[(i xi)^order e^{i xi shift} omega(psi_z)](z - x)`.
    fn kernel_matrix(
        &self,
        rows: &[usize],
        cols: &[usize],
        scale: f64,
        order: usize,
        shift: f64,
        omega: &[Vec<C64>],
    ) -> Mat {
        let half = self.half();
        let mult: Vec<C64> = (0..=half).map(|k| self.grid.multiplier(k, order, shift)).collect();
        let specs: Vec<Vec<C64>> = omega.iter().map(|om| (0..=half).map(|k| mult[k] * om[k]).collect()).collect();
        let vals = self.invert_halves(&specs);
        let n = self.grid.n;
        let mut out = Mat::zeros(rows.len(), cols.len());
        for (c, &iz) in cols.iter().enumerate() {
            for (r, &ix) in rows.iter().enumerate() {
                out.data[r * cols.len() + c] = scale * vals[c][(iz + n - ix) % n];
            }
        }
        out
    }

    fn build_q0(&mut self) {
        let rows = self.window.clone();
        let cols = self.targets.clone();
        if self.constant {
            self.q0 = vec![Mat::zeros(rows.len(), cols.len()); self.times.nodes.len()];
            return;
        }
        self.q0 = self
            .times
            .nodes
            .iter()
            .map(|&s| self.difference_matrix(&rows, &cols, 1.0, &self.semigroup_spectra(&cols, s)))
            .collect();
    }

    fn picard(&mut self) -> Result<()> {
        let np = self.config.n_picard;
        let k_count = self.times.nodes.len();
        if np == 0 || self.constant {
            // with a coefficient constant in x, q_0 = 0 and so is every iterate
            self.q = self.q0.clone();
            self.deltas = vec![0.0; np];
            return Ok(());
        }
        let dx = self.grid.dx;
        let window = self.window.clone();
        // iter[n][k] = q^{(n)}(r_k)
        let mut iter: Vec<Vec<Mat>> = vec![self.q0.clone()];
        for _ in 1..=np {
            iter.push(Vec::with_capacity(k_count));
        }
        for n in 1..=np {
            iter[n].push(self.q0[0].clone());
        }
        for k in 1..k_count {
            let mut acc: Vec<Mat> = (0..=np).map(|_| self.q0[k].clone()).collect();
            let mut diag = None;
            self.sweep(k, |m, om| {
                let w = self.difference_matrix(&window, &window, dx, om);
                if m == k {
                    diag = Some(w);
                } else {
                    for n in 1..=np {
                        acc[n].add_product(&w, &iter[n - 1][m]);
                    }
                }
            });
            let w = diag.expect("diagonal block");
            for n in 1..=np {
                let mut qk = acc[n].clone();
                qk.add_product(&w, &iter[n - 1][k]);
                iter[n].push(qk);
            }
        }
        self.deltas = (1..=np)
            .map(|n| (0..k_count).fold(0.0f64, |d, k| d.max(iter[n][k].max_diff(&iter[n - 1][k]))))
            .collect();
        log::debug!("picard deltas {:?}", self.deltas);
        let mut rising = 0;
        for w in self.deltas.windows(2) {
            rising = if w[1] > w[0] { rising + 1 } else { 0 };
            if rising >= 3 {
                return Err(Error::PicardDivergence { deltas: self.deltas.clone() });
            }
        }
        self.q = iter.pop().expect("final iterate");
        Ok(())
    }

    fn node_of(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * self.times.nodes.last().copied().unwrap_or(1.0);
        self.times
            .nodes
            .iter()
            .position(|&n| (n - t).abs() <= tol)
            .ok_or_else(|| Error::InvalidArgument(format!("t = {t} is not a node of the solved parametrix")))
    }

    fn target_coords(&self) -> Vec<f64> {
        self.targets.iter().map(|&i| self.x[i]).collect()
    }

    fn window_field(&self, mats: &[Mat], meta: FieldKind) -> KernelField {
        let eval = &self.times.eval;
        let mut values = Vec::new();
        for &k in eval {
            values.extend_from_slice(&mats[k].data);
        }
        KernelField {
            t_grid: eval.iter().map(|&k| self.times.nodes[k]).collect(),
            x_grid: self.window.iter().map(|&i| self.x[i]).collect(),
            y_grid: self.target_coords(),
            values,
            deriv_order: 0,
            meta,
        }
    }

    /// `q` at the evaluation times on the window, with the Picard increments.
    pub fn q_field(&self) -> QField {
        QField { field: self.window_field(&self.q, FieldKind::Q), deltas: self.deltas.clone() }
    }

    /// `q_0` at the evaluation times on the window.
    pub fn q0_field(&self) -> KernelField {
        self.window_field(&self.q0, FieldKind::Q0)
    }

    fn check_order(&self, order: usize) -> Result<()> {
        if order > 2 {
            return Err(Error::InvalidArgument(format!("derivative order {order} > 2")));
        }
        if order > self.admissible_order {
            log::warn!(
                "derivative order {order} exceeds the order {} admitted by the model's indices",
                self.admissible_order
            );
        }
        Ok(())
    }

    /// `partial_x^order phi_y(t, x_i + shift)` for ring rows `rows`, all targets.
    fn phi_rows(&self, t: f64, order: usize, shift: f64, rows: &[usize]) -> Result<Mat> {
        let k = self.node_of(t)?;
        let mut out = Mat::zeros(rows.len(), self.targets.len());
        if k > 0 && !self.constant {
            self.sweep(k, |m, om| {
                let v = self.kernel_matrix(rows, &self.window, self.grid.dx, order, shift, om);
                out.add_product(&v, &self.q[m]);
            });
        }
        Ok(out)
    }

    /// `partial_x^order p^{K_y}(t, x_i + shift, y)` for ring rows `rows`, all targets.
    fn frozen_rows(&self, t: f64, order: usize, shift: f64, rows: &[usize]) -> Mat {
        let mut m = self.kernel_matrix(rows, &self.targets, 1.0, order, shift, &self.semigroup_spectra(&self.targets, t));
        if self.config.image_correction {
            self.remove_images(&mut m, t, order, shift, rows);
        }
        m
    }

    /// Subtracts `t sum_{k != 0} partial_x^order [c_y nu](u + kL)` with
    /// `u = y - x - shift` from a frozen-kernel matrix.
    fn remove_images(&self, m: &mut Mat, t: f64, order: usize, shift: f64, rows: &[usize]) {
        let n = self.grid.n;
        let (dx, l) = (self.grid.dx, self.grid.length());
        let nu = &self.model.jump.profile;
        // ring offset j = (iy - ix) mod n  <->  u = j dx - shift with j centred
        let sums: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                let jc = if j > n / 2 { j as f64 - n as f64 } else { j as f64 };
                frozen::image_sums(nu, l, jc * dx - shift, order)
            })
            .collect();
        let cols = self.targets.len();
        for (r, &ix) in rows.iter().enumerate() {
            for (c, &iy) in self.targets.iter().enumerate() {
                let (sp, sm) = sums[(iy + n - ix) % n];
                let w = self.weights[iy];
                m.data[r * cols + c] -= t * (w.plus * sp + w.minus * sm);
            }
        }
    }

    /// Half spectra `e^{-t psi_z}` for the columns `cols`.
    fn semigroup_spectra(&self, cols: &[usize], t: f64) -> Vec<Vec<C64>> {
        cols.iter()
            .map(|&iz| self.psi[self.slot[iz].expect("column in window")].iter().map(|&p| (-t * p).exp()).collect())
            .collect()
    }

    /// Visits `m = k, k - 1, ..., 0` with the product-integration weights of
    /// node `m` for `int_0^{r_k} e^{-(r_k - r) psi_z} q(r) dr`, for every
    /// window column `z`. Uses `A_m = e^{-(r_k - r_m) psi} = A_{m+1} e^{-h_m psi}`
    /// and drops frequencies once `A` has underflowed.
    fn sweep(&self, k: usize, mut visit: impl FnMut(usize, &[Vec<C64>])) {
        const TINY: f64 = 1e-40;
        let nodes = &self.times.nodes;
        let width = self.half() + 1;
        let zero = C64::new(0.0, 0.0);
        let nc = self.window.len();
        let mut a = vec![vec![C64::new(1.0, 0.0); width]; nc];
        let mut left = vec![vec![zero; width]; nc];
        let mut om = vec![vec![zero; width]; nc];
        let mut cut = vec![width; nc];
        for m in (0..=k).rev() {
            for c in 0..nc {
                let psi = &self.psi[c];
                for f in 0..cut[c] {
                    let mut w = left[c][f];
                    if m >= 1 {
                        let h = nodes[m] - nodes[m - 1];
                        let (p1, p2, e) = phi12_exp(psi[f] * h);
                        w += a[c][f] * h * (p1 - p2);
                        left[c][f] = a[c][f] * h * p2;
                        a[c][f] *= e;
                    }
                    om[c][f] = w;
                }
                while cut[c] > 1 && a[c][cut[c] - 1].norm() < TINY && left[c][cut[c] - 1].norm() < TINY {
                    cut[c] -= 1;
                    // this bin's weight for the current m was already written
                    if m >= 1 {
                        left[c][cut[c]] = zero;
                    }
                }
            }
            visit(m, &om);
            for c in 0..nc {
                for v in &mut om[c][cut[c]..] {
                    *v = zero;
                }
            }
        }
    }

    fn ring_field(&self, t: f64, order: usize, shift: f64, m: Mat, meta: FieldKind) -> KernelField {
        KernelField {
            t_grid: vec![t],
            x_grid: self.x.iter().map(|x| x + shift).collect(),
            y_grid: self.target_coords(),
            values: m.data,
            deriv_order: order,
            meta,
        }
    }

    fn all_rows(&self) -> Vec<usize> {
        (0..self.grid.n).collect()
    }

    /// `partial_x^order phi_y(t, x)` on the shifted ring `x = x_i + shift`.
    pub fn phi(&self, t: f64, order: usize, shift: f64) -> Result<KernelField> {
        self.check_order(order)?;
        let m = self.phi_rows(t, order, shift, &self.all_rows())?;
        Ok(self.ring_field(t, order, shift, m, FieldKind::Phi))
    }

    /// The frozen part `partial_x^order p^{K_y}(t, x, y)` on the shifted ring.
    pub fn frozen_part(&self, t: f64, order: usize, shift: f64) -> Result<KernelField> {
        self.check_order(order)?;
        let m = self.frozen_rows(t, order, shift, &self.all_rows());
        Ok(self.ring_field(t, order, shift, m, FieldKind::Frozen))
    }

    /// `partial_x^order p^kappa(t, x, y)` on the shifted ring `x = x_i + shift`.
    pub fn heat_kernel(&self, t: f64, order: usize, shift: f64) -> Result<KernelField> {
        self.check_order(order)?;
        let rows = self.all_rows();
        let mut m = self.phi_rows(t, order, shift, &rows)?;
        let f = self.frozen_rows(t, order, shift, &rows);
        for (a, b) in m.data.iter_mut().zip(&f.data) {
            *a += b;
        }
        Ok(self.ring_field(t, order, shift, m, FieldKind::PKappa))
    }

    /// `partial_x^order p^kappa(t, x, y)` at one point; `y` must be a target.
    pub fn heat_kernel_at(&self, t: f64, x: f64, y: f64, order: usize) -> Result<f64> {
        self.check_order(order)?;
        let iy = self.target_index(y)?;
        let n = self.grid.n;
        let ix = (x / self.grid.dx).round() as i64 + (n / 2) as i64;
        if ix < 0 || ix >= n as i64 {
            return Err(Error::InvalidArgument(format!("x = {x} outside the ring")));
        }
        let shift = x - self.x[ix as usize];
        let rows = [ix as usize];
        let phi = self.phi_rows(t, order, shift, &rows)?;
        let fr = self.frozen_rows(t, order, shift, &rows);
        Ok(phi.data[iy] + fr.data[iy])
    }

    /// `partial_x^order p^kappa(t, x, y)` for grid points `xs` and every
    /// target, as `[x][y]`.
    pub fn heat_kernel_on(&self, t: f64, order: usize, xs: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.heat_kernel_shifted(t, order, xs, 0.0)
    }

    /// As [`Parametrix::heat_kernel_on`] at the shifted points `xs + shift`.
    pub fn heat_kernel_shifted(&self, t: f64, order: usize, xs: &[f64], shift: f64) -> Result<Vec<Vec<f64>>> {
        self.check_order(order)?;
        let rows = self.grid_rows(xs)?;
        let mut m = self.phi_rows(t, order, shift, &rows)?;
        let f = self.frozen_rows(t, order, shift, &rows);
        for (a, b) in m.data.iter_mut().zip(&f.data) {
            *a += b;
        }
        Ok(m.data.chunks(self.targets.len()).map(|r| r.to_vec()).collect())
    }

    /// Ring indices of grid points `xs`; points off the grid are rejected.
    pub fn grid_rows(&self, xs: &[f64]) -> Result<Vec<usize>> {
        xs.iter()
            .map(|&x| {
                let i = self.ring_index(x);
                if (self.x[i] - x).abs() > 1e-6 * self.grid.dx || x.abs() >= 0.5 * self.grid.length() {
                    Err(Error::InvalidArgument(format!("x = {x} is not a point of the grid")))
                } else {
                    Ok(i)
                }
            })
            .collect()
    }

    /// Column of the target nearest `y` (within half a grid step).
    pub fn target_index(&self, y: f64) -> Result<usize> {
        self.targets
            .iter()
            .position(|&i| (self.x[i] - y).abs() <= 0.5 * self.grid.dx)
            .ok_or_else(|| Error::InvalidArgument(format!("y = {y} is not a solved target")))
    }

    /// Ring index of the grid point nearest `x`.
    pub fn ring_index(&self, x: f64) -> usize {
        let n = self.grid.n as i64;
        ((x / self.grid.dx).round() as i64 + n / 2).rem_euclid(n) as usize
    }

    /// `int p^kappa(t, x, y) dy`: the sum over the window plus the first-order
    /// jump mass `t int_{y outside} kappa(x, y - x) J(y - x) dy` outside it.
    pub fn mass(&self, t: f64, x: f64) -> Result<f64> {
        if !self.config.all_y {
            return Err(Error::InvalidArgument("mass needs a solve with all_y".into()));
        }
        let ix = self.ring_index(x);
        let k = self.node_of(t)?;
        let rows = [ix];
        let mut m = self.phi_rows(self.times.nodes[k], 0, 0.0, &rows)?;
        let f = self.frozen_rows(self.times.nodes[k], 0, 0.0, &rows);
        for (a, b) in m.data.iter_mut().zip(&f.data) {
            *a += b;
        }
        let inside: f64 = m.data.iter().sum::<f64>() * self.grid.dx;
        let a = self.config.space.half_width + 0.5 * self.grid.dx;
        let w = self.weights[ix];
        let nu = &self.model.jump.profile;
        let xv = self.x[ix];
        let tail = t * (w.plus * frozen::tail_mass(nu, a - xv)? + w.minus * frozen::tail_mass(nu, a + xv)?);
        Ok(inside + tail)
    }

    /// `(int p(s, x, z) p(t, z, y) dz, p(s + t, x, y))` with `z` over the window.
    pub fn chapman_kolmogorov(&self, s: f64, t: f64, x: f64, y: f64) -> Result<(f64, f64)> {
        if !self.config.all_y {
            return Err(Error::InvalidArgument("Chapman-Kolmogorov needs a solve with all_y".into()));
        }
        let ix = self.ring_index(x);
        let iy = self.target_index(y)?;
        let row = |tt: f64, rows: &[usize]| -> Result<Mat> {
            let mut m = self.phi_rows(tt, 0, 0.0, rows)?;
            let f = self.frozen_rows(tt, 0, 0.0, rows);
            for (a, b) in m.data.iter_mut().zip(&f.data) {
                *a += b;
            }
            Ok(m)
        };
        let first = row(s, &[ix])?;
        let second = row(t, &self.window)?;
        let ny = self.targets.len();
        let lhs: f64 = (0..self.window.len()).map(|j| first.data[j] * second.data[j * ny + iy]).sum::<f64>()
            * self.grid.dx;
        let whole = row(self.times.nodes[self.node_of(s + t)?], &[ix])?;
        Ok((lhs, whole.data[iy]))
    }

    /// `L^kappa f` for `f` sampled on the ring: the generator applied to the
    /// trigonometric interpolant of `f`.
    pub fn apply_generator_on_ring(&self, f: &[f64]) -> Vec<f64> {
        let n = self.grid.n;
        let mut buf: Vec<C64> = f.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.grid.forward(&mut buf);
        let mut plus: Vec<C64> = buf.iter().zip(&self.grid.psi_plus).map(|(b, p)| -b * p).collect();
        let mut minus: Vec<C64> = buf.iter().zip(&self.grid.psi_minus).map(|(b, p)| -b * p).collect();
        self.grid.inverse(&mut plus);
        self.grid.inverse(&mut minus);
        (0..n)
            .map(|i| (self.weights[i].plus * plus[i].re + self.weights[i].minus * minus[i].re) / n as f64)
            .collect()
    }

    /// `max_{|x| <= radius} |d_t p - L^kappa p|` at evaluation time `t` for
    /// target `y`, with `d_t` a central difference over `t +- eps`. Returns
    /// `(residual, max |d_t p|)`. Measured on the periodic ring kernel, the
    /// object the ring generator acts on.
    pub fn residual(&self, t: f64, y: f64, radius: f64) -> Result<(f64, f64)> {
        let e = self
            .config
            .t_eval
            .iter()
            .position(|&te| (te - t).abs() <= 1e-12 * te)
            .ok_or_else(|| Error::InvalidArgument(format!("t = {t} is not an evaluation time")))?;
        let (km, kp, eps) = self.times.fd[e].ok_or_else(|| Error::InvalidArgument("fd nodes disabled".into()))?;
        let iy = self.target_index(y)?;
        // the ring generator acts on the periodic kernel: no image removal here
        let rows = self.all_rows();
        let nt = self.targets.len();
        let col = |tt: f64| -> Result<Vec<f64>> {
            let phi = self.phi_rows(tt, 0, 0.0, &rows)?;
            let fr = self.kernel_matrix(&rows, &self.targets, 1.0, 0, 0.0, &self.semigroup_spectra(&self.targets, tt));
            Ok((0..rows.len()).map(|r| phi.data[r * nt + iy] + fr.data[r * nt + iy]).collect())
        };
        let (pm, p0, pp) = (col(self.times.nodes[km])?, col(t)?, col(self.times.nodes[kp])?);
        let lp = self.apply_generator_on_ring(&p0);
        let mut res: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..self.grid.n {
            if self.x[i].abs() > radius {
                continue;
            }
            let dt = (pp[i] - pm[i]) / (2.0 * eps);
            res = res.max((dt - lp[i]).abs());
            scale = scale.max(dt.abs());
        }
        Ok((res, scale))
    }
}

/// The frozen kernel `u -> p^{K_y}(t, u, y)` as a test function.
struct FrozenAsFunction {
    kernel: Arc<frozen::FrozenKernel>,
    y: f64,
    correct: bool,
}

impl TestFunction for FrozenAsFunction {
    fn value(&self, u: f64) -> f64 {
        self.kernel.at(self.y - u, 0, self.correct)
    }
    fn d1(&self, u: f64) -> f64 {
        self.kernel.at(self.y - u, 1, self.correct)
    }
    fn d2(&self, u: f64) -> f64 {
        self.kernel.at(self.y - u, 2, self.correct)
    }
}

/// `q_0(t, x, y) = (L^{K_x} - L^{K_y})_x p^{K_y}(t, x, y)` pointwise, by the
/// singular quadrature of [`generator::generator_difference`].
pub fn q0(
    m: &JumpModel,
    spec: &GeneratorSpec,
    settings: &FftSettings,
    cache: &KernelCache,
    t: f64,
    x: f64,
    y: f64,
) -> Result<f64> {
    if m.sided_intensity(x) == m.sided_intensity(y) {
        return Ok(0.0);
    }
    let sym = frozen::build_symbol(m, &[y], spec.form)?;
    let kernel = cache.kernel(&sym, t, settings)?;
    let f = FrozenAsFunction { kernel, y, correct: settings.image_correction };
    generator::generator_difference(m, spec, &f, x, x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_contain_evaluation_times() {
        let cfg = ParametrixConfig { t_eval: vec![0.125, 0.25], ..Default::default() };
        let tn = TimeNodes::new(&cfg);
        for (&k, &t) in tn.eval.iter().zip(&cfg.t_eval) {
            assert_eq!(tn.nodes[k], t);
        }
        assert_eq!(tn.nodes[0], 0.0);
        assert!(tn.nodes.windows(2).all(|w| w[1] > w[0]));
        let (km, kp, e) = tn.fd[1].unwrap();
        assert!((tn.nodes[kp] - tn.nodes[km] - 2.0 * e).abs() < 1e-15);
    }

    #[test]
    fn node_weights_integrate_exponentials() {
        // sum_m w_m e^{-a r_m}-free check: with psi fixed, the weights integrate
        // a linear q exactly: q(r) = 1 + r
        let nodes = graded_nodes(0.5, 10, 2.0);
        let psi = C64::new(3.0, 1.5);
        let k = nodes.len() - 1;
        let s = nodes[k];
        let approx: C64 = (0..=k).map(|m| node_weight(&nodes, k, m, psi) * (1.0 + nodes[m])).sum();
        // int_0^s e^{-(s-r) psi} (1 + r) dr
        let e = (-s * psi).exp();
        let exact = (C64::new(1.0, 0.0) - e) / psi * (1.0 + s) - (C64::new(1.0, 0.0) - e * (1.0 + s * psi)) / (psi * psi);
        assert!((approx - exact).norm() < 1e-13, "{approx} {exact}");
    }

    #[test]
    fn sweep_matches_direct_weights() {
        let m = JumpModel::sine_stable(1.5, 1.0, 0.25, 0.5).unwrap();
        let cfg = ParametrixConfig {
            space: SpaceGrid { dx: 0.1, n: 128, half_width: 2.0 },
            time: TimeGrid { nodes: 8, grading: 2.0 },
            n_picard: 0,
            ..Default::default()
        };
        let p = Parametrix::solve(&m, OperatorForm::Compensated, &cfg).unwrap();
        let k = p.times.nodes.len() - 1;
        let nodes = p.times.nodes.clone();
        let mut seen = 0;
        p.sweep(k, |mm, om| {
            seen += 1;
            for c in [0, 7, p.window.len() - 1] {
                for f in [0, 3, 40, 64] {
                    let direct = node_weight(&nodes, k, mm, p.psi[c][f]);
                    assert!((om[c][f] - direct).norm() <= 1e-12 * (1.0 + direct.norm()), "{mm} {c} {f}");
                }
            }
        });
        assert_eq!(seen, k + 1);
    }
}
