//! Python bindings: models, scale functions, frozen kernels, the parametrix
//! solver, the Monte Carlo oracle and the experiment runner.

use std::path::PathBuf;

use levi_kernel as lk;
use levi_kernel::cli::ExperimentConfig;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: lk::Error) -> PyErr {
    match e {
        lk::Error::Config(_)
        | lk::Error::InvalidArgument(_)
        | lk::Error::Hypothesis(_)
        | lk::Error::Unsupported(_)
        | lk::Error::NotLevy(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn form_of(name: Option<&str>, default: lk::OperatorForm) -> PyResult<lk::OperatorForm> {
    Ok(match name {
        None => default,
        Some("compensated") => lk::OperatorForm::Compensated,
        Some("pure_jump") => lk::OperatorForm::PureJump,
        Some("symmetrized") => lk::OperatorForm::Symmetrized,
        Some(other) => return Err(PyValueError::new_err(format!("unknown operator form `{other}`"))),
    })
}

/// A jump model: radial profile, one-sided weights and coefficient.
#[pyclass(name = "JumpModel", module = "levi_kernel", frozen)]
#[derive(Clone)]
struct PyJumpModel {
    inner: lk::JumpModel,
}

#[pymethods]
impl PyJumpModel {
    /// Symmetric stable jumps with `kappa(x) = base + amplitude * sin(x)`.
    #[staticmethod]
    fn sine_stable(alpha: f64, base: f64, amplitude: f64, beta: f64) -> PyResult<Self> {
        Ok(Self { inner: lk::JumpModel::sine_stable(alpha, base, amplitude, beta).map_err(err)? })
    }

    /// The Cauchy operator with constant coefficient.
    #[staticmethod]
    fn cauchy() -> Self {
        Self { inner: lk::JumpModel::cauchy() }
    }

    /// Stable (or tempered stable) jumps with constant one-sided weights.
    #[staticmethod]
    #[pyo3(signature = (alpha, plus = 1.0, minus = 1.0, kappa = 1.0, tempering = 0.0))]
    fn one_sided(alpha: f64, plus: f64, minus: f64, kappa: f64, tempering: f64) -> PyResult<Self> {
        let profile = if tempering > 0.0 {
            lk::RadialProfile::tempered(1, alpha, tempering)
        } else {
            lk::RadialProfile::stable(1, alpha)
        };
        let jump = lk::JumpDensity { profile, sides: lk::Sided::new(plus, minus) };
        let inner = lk::JumpModel::with_derived_constants(jump, lk::Coefficient::constant(kappa), 0.5).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.jump.profile.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.constants.beta
    }

    /// `(c_j, kappa0, kappa1, kappa2, beta)`.
    #[getter]
    fn constants(&self) -> (f64, f64, f64, f64, f64) {
        let c = self.inner.constants;
        (c.c_j, c.kappa0, c.kappa1, c.kappa2, c.beta)
    }

    /// `(c_+, c_-)` at `x`.
    fn intensity(&self, x: f64) -> (f64, f64) {
        let s = self.inner.sided_intensity(x);
        (s.plus, s.minus)
    }

    /// Invariant checks on the default sample grid: `{id: passed}`.
    fn validate(&self) -> PyResult<Vec<(String, bool)>> {
        let report = lk::validate_model(&self.inner, &lk::SampleGrid::default()).map_err(err)?;
        Ok(report.checks.iter().map(|c| (c.invariant.id().to_string(), c.passed)).collect())
    }

    /// Case tag (`P1`, `P2`, `P3`, `Q1`, ...) and its default operator form.
    fn classify(&self) -> PyResult<(String, String)> {
        let sp = lk::ScaleProfile::fit(&self.inner.jump.profile).map_err(err)?;
        let tag = lk::classify_case(&self.inner, &sp, &lk::SampleGrid::default()).map_err(err)?;
        Ok((tag.case.to_string(), tag.form().to_string()))
    }

    fn criticality_integral(&self, x: f64, r: f64) -> PyResult<f64> {
        Ok(self.inner.criticality_integral(&[x], r).map_err(err)?[0])
    }

    fn __repr__(&self) -> String {
        let c = self.inner.constants;
        format!("JumpModel(alpha={}, beta={}, kappa0={}, kappa1={})", self.alpha(), c.beta, c.kappa0, c.kappa1)
    }
}

/// Scale functions `h`, `K` and the fitted scaling indices.
#[pyclass(name = "ScaleProfile", module = "levi_kernel", frozen)]
struct PyScaleProfile {
    inner: lk::ScaleProfile,
}

#[pymethods]
impl PyScaleProfile {
    #[new]
    fn new(model: &PyJumpModel) -> PyResult<Self> {
        Ok(Self { inner: lk::ScaleProfile::fit(&model.inner.jump.profile).map_err(err)? })
    }

    fn h(&self, r: f64) -> f64 {
        self.inner.h(r)
    }

    fn k(&self, r: f64) -> f64 {
        self.inner.k(r)
    }

    fn h_inv(&self, u: f64) -> f64 {
        self.inner.h_inv(u)
    }

    #[getter]
    fn alpha_h(&self) -> f64 {
        self.inner.alpha_h
    }

    #[getter]
    fn beta_h(&self) -> Option<f64> {
        self.inner.beta_h
    }

    /// `rho_t(x)`.
    fn rho(&self, t: f64, x: f64) -> f64 {
        lk::BoundFunction::new(self.inner.clone()).rho(t, &[x])
    }
}

/// `partial_x^order p^{K_w}(t, x, y)` with the coefficient frozen at `w`.
#[pyfunction]
#[pyo3(signature = (model, t, x, y, w = None, order = 0, form = None))]
fn frozen_kernel(
    model: &PyJumpModel,
    t: f64,
    x: f64,
    y: f64,
    w: Option<f64>,
    order: usize,
    form: Option<&str>,
) -> PyResult<f64> {
    let form = form_of(form, lk::OperatorForm::Compensated)?;
    let sym = lk::build_symbol(&model.inner, &[w.unwrap_or(y)], form).map_err(err)?;
    lk::frozen_kernel(&sym, t, x, y, order, &lk::FftSettings::default()).map_err(err)
}

/// A solved parametrix.
#[pyclass(name = "Parametrix", module = "levi_kernel", frozen)]
struct PyParametrix {
    inner: lk::Parametrix,
}

#[pymethods]
impl PyParametrix {
    /// Solves on the default ring. `y` lists the targets; `all_y` solves for
    /// every ring point (needed by `mass` and `chapman_kolmogorov`).
    #[new]
    #[pyo3(signature = (model, t, y = vec![0.0], all_y = false, n_picard = 6, dx = None, n = None, half_width = None, form = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        py: Python<'_>,
        model: &PyJumpModel,
        t: Vec<f64>,
        y: Vec<f64>,
        all_y: bool,
        n_picard: usize,
        dx: Option<f64>,
        n: Option<usize>,
        half_width: Option<f64>,
        form: Option<&str>,
    ) -> PyResult<Self> {
        let form = form_of(form, lk::OperatorForm::Compensated)?;
        let mut cfg = lk::ParametrixConfig { t_eval: t, y_eval: y, all_y, n_picard, ..Default::default() };
        cfg.space.dx = dx.unwrap_or(cfg.space.dx);
        cfg.space.n = n.unwrap_or(cfg.space.n);
        cfg.space.half_width = half_width.unwrap_or(cfg.space.half_width);
        let m = model.inner.clone();
        let inner = py.detach(move || lk::Parametrix::solve(&m, form, &cfg)).map_err(err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (t, x, y, order = 0))]
    fn kernel(&self, t: f64, x: f64, y: f64, order: usize) -> PyResult<f64> {
        self.inner.heat_kernel_at(t, x, y, order).map_err(err)
    }

    /// Rows `[x][target]` of `partial_x^order p^kappa(t, x, y)`.
    #[pyo3(signature = (t, xs, order = 0))]
    fn kernel_rows(&self, t: f64, xs: Vec<f64>, order: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner.heat_kernel_on(t, order, &xs).map_err(err)
    }

    #[getter]
    fn targets(&self) -> Vec<f64> {
        self.inner.targets.iter().map(|&i| self.inner.x[i]).collect()
    }

    #[getter]
    fn picard_deltas(&self) -> Vec<f64> {
        self.inner.deltas.clone()
    }

    /// `max |q_0|` over the stored window.
    fn q0_max(&self) -> f64 {
        self.inner.q0_field().max_abs()
    }

    fn mass(&self, t: f64, x: f64) -> PyResult<f64> {
        self.inner.mass(t, x).map_err(err)
    }

    /// `(int p(s, x, z) p(t, z, y) dz, p(s + t, x, y))`.
    fn chapman_kolmogorov(&self, s: f64, t: f64, x: f64, y: f64) -> PyResult<(f64, f64)> {
        self.inner.chapman_kolmogorov(s, t, x, y).map_err(err)
    }

    /// `(max |d_t p - L p|, max |d_t p|)` on `|x - y| <= radius`.
    #[pyo3(signature = (t, y, radius = 2.0))]
    fn residual(&self, t: f64, y: f64, radius: f64) -> PyResult<(f64, f64)> {
        self.inner.residual(t, y, radius).map_err(err)
    }
}

/// Monte Carlo kernel density estimate of `p^kappa(t, x, .)` on `y`:
/// returns `(density, ci_half_width)`.
#[pyfunction]
#[pyo3(signature = (model, t, x, y, paths = 100_000, bandwidth = 0.05, seed = 0x1e71, steps = 64, form = None))]
#[allow(clippy::too_many_arguments)]
fn mc_density(
    py: Python<'_>,
    model: &PyJumpModel,
    t: f64,
    x: f64,
    y: Vec<f64>,
    paths: usize,
    bandwidth: f64,
    seed: u64,
    steps: usize,
    form: Option<&str>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let form = form_of(form, lk::OperatorForm::Compensated)?;
    let m = model.inner.clone();
    let sp = lk::ScaleProfile::fit(&m.jump.profile).map_err(err)?;
    let settings = lk::McSettings { seed, steps, ..Default::default() };
    let mc = py
        .detach(move || lk::verify::mc_oracle(&m, form, &sp, t, x, paths, bandwidth, &y, &settings))
        .map_err(err)?;
    Ok((mc.density, mc.half_width))
}

/// `[(id, description)]` of the available checks.
#[pyfunction]
fn list_checks() -> Vec<(String, String)> {
    lk::cli::list_checks().into_iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// Runs an experiment config. Returns `(failed, output_dir, summary)` with
/// summary rows `(stage, status, metric, value)`.
#[pyfunction]
#[pyo3(signature = (config, output_root = None, use_cache = true))]
fn run_config(
    py: Python<'_>,
    config: PathBuf,
    output_root: Option<PathBuf>,
    use_cache: bool,
) -> PyResult<(bool, String, Vec<(String, String, String, f64)>)> {
    let cfg = ExperimentConfig::load(&config).map_err(err)?;
    let root = lk::cli::output_root(&cfg, output_root.as_deref());
    let out = py.detach(move || lk::cli::run(&cfg, &root, use_cache)).map_err(err)?;
    let rows = out
        .summary
        .iter()
        .map(|r| (r.stage.clone(), r.status.to_string(), r.metric.clone(), r.value))
        .collect();
    Ok((out.failed, out.dir.display().to_string(), rows))
}

#[pymodule]
#[pyo3(name = "levi_kernel")]
fn levi_kernel_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", lk::cli::VERSION)?;
    m.add_class::<PyJumpModel>()?;
    m.add_class::<PyScaleProfile>()?;
    m.add_class::<PyParametrix>()?;
    m.add_function(wrap_pyfunction!(frozen_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(mc_density, m)?)?;
    m.add_function(wrap_pyfunction!(list_checks, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
