//! Config-driven experiment runner.
//!
//! An experiment is one TOML file (see `configs/` and the README for the
//! grammar). `run` validates and classifies the model, builds the kernels the
//! enabled checks need, runs the checks and writes one CSV per check plus
//! `summary.csv` and `run.log` into `<output root>/<name>/`.
//!
//! Every CSV starts with `# levi-kernel <version> config_hash=<sha256>`.
//! Check results are cached under `<output root>/.cache`, keyed by the hash of
//! the config sections the check depends on.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frozen::{build_symbol, FftSettings, KernelCache};
use crate::models::{
    classify_case, criticality_integral, logspace, validate_model, Coefficient, JumpDensity, JumpModel,
    ModelConstants, OperatorForm, SampleGrid,
};
use crate::parametrix::{Parametrix, ParametrixConfig};
use crate::scales::{BoundFunction, ScaleProfile};
use crate::verify::{self, EstimateReport, HarnessGrid, IncrementGrid, McSettings, Samples, Verdict};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable overriding the output root.
pub const OUTPUT_ROOT_ENV: &str = "LEVI_KERNEL_OUTPUT_ROOT";

/// Identifiers of the available checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    ModelValidation,
    Criticality,
    ClosedForm,
    IncrementBoundsFrozen,
    Mass,
    ChapmanKolmogorov,
    Residual,
    TheoremHolderLevel0,
    TheoremHolderLevel1,
    TheoremHolderLevel2,
    QRegularity,
    McOracle,
}

impl CheckId {
    pub const ALL: [CheckId; 12] = [
        CheckId::ModelValidation,
        CheckId::Criticality,
        CheckId::ClosedForm,
        CheckId::IncrementBoundsFrozen,
        CheckId::Mass,
        CheckId::ChapmanKolmogorov,
        CheckId::Residual,
        CheckId::TheoremHolderLevel0,
        CheckId::TheoremHolderLevel1,
        CheckId::TheoremHolderLevel2,
        CheckId::QRegularity,
        CheckId::McOracle,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            CheckId::ModelValidation => "model_validation",
            CheckId::Criticality => "criticality",
            CheckId::ClosedForm => "closed_form",
            CheckId::IncrementBoundsFrozen => "increment_bounds_frozen",
            CheckId::Mass => "mass",
            CheckId::ChapmanKolmogorov => "chapman_kolmogorov",
            CheckId::Residual => "residual",
            CheckId::TheoremHolderLevel0 => "theorem_holder_level0",
            CheckId::TheoremHolderLevel1 => "theorem_holder_level1",
            CheckId::TheoremHolderLevel2 => "theorem_holder_level2",
            CheckId::QRegularity => "q_regularity",
            CheckId::McOracle => "mc_oracle",
        }
    }

    /// The estimate or property the check measures.
    pub fn tag(&self) -> &'static str {
        match self {
            CheckId::ModelValidation => "standing assumptions on J, nu and kappa; case classification",
            CheckId::Criticality => "mid-size drift integrals int_{r<=|z|<1} z kappa(x,z) J(z) dz",
            CheckId::ClosedForm => "frozen kernel against the Cauchy density t/(pi(t^2+u^2))",
            CheckId::IncrementBoundsFrozen => "increment estimates for the frozen kernel and its derivatives",
            CheckId::Mass => "conservativeness: int p^kappa(t,x,y) dy = 1",
            CheckId::ChapmanKolmogorov => "semigroup property of p^kappa",
            CheckId::Residual => "fundamental solution residual d_t p - L p under refinement",
            CheckId::TheoremHolderLevel0 => "Hölder continuity of p^kappa in x",
            CheckId::TheoremHolderLevel1 => "gradient estimate: Hölder continuity of grad_x p^kappa",
            CheckId::TheoremHolderLevel2 => "Hessian estimate: bound and Hölder continuity of grad_x^2 p^kappa",
            CheckId::QRegularity => "Hölder regularity of q in x, uniform in gamma; bound on q_0",
            CheckId::McOracle => "Monte Carlo density against p^kappa",
        }
    }

    fn level(&self) -> Option<usize> {
        match self {
            CheckId::TheoremHolderLevel0 => Some(0),
            CheckId::TheoremHolderLevel1 => Some(1),
            CheckId::TheoremHolderLevel2 => Some(2),
            _ => None,
        }
    }
}

/// The catalog printed by `list-checks`.
pub fn list_checks() -> Vec<(&'static str, &'static str)> {
    CheckId::ALL.iter().map(|c| (c.id(), c.tag())).collect()
}

/// Model families available in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `nu(r) = r^{-1-alpha}`, even `J`, `kappa = base + amplitude sin(x)`.
    SineStable { alpha: f64, base: f64, amplitude: f64, beta: f64 },
    /// `J(z) = z^{-2}/pi`, `kappa = 1`.
    Cauchy,
    /// Arbitrary jump density and coefficient; constants derived unless given.
    Custom {
        jump: JumpDensity,
        kappa: Coefficient,
        beta: f64,
        #[serde(default)]
        constants: Option<ModelConstants>,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<JumpModel> {
        match self {
            ModelSpec::SineStable { alpha, base, amplitude, beta } => {
                JumpModel::sine_stable(*alpha, *base, *amplitude, *beta)
            }
            ModelSpec::Cauchy => Ok(JumpModel::cauchy()),
            ModelSpec::Custom { jump, kappa, beta, constants } => match constants {
                Some(c) => JumpModel::new(*jump, kappa.clone(), ModelConstants { beta: *beta, ..*c }),
                None => JumpModel::with_derived_constants(*jump, kappa.clone(), *beta),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleFit {
    pub range: (f64, f64),
    pub points: usize,
}

impl Default for ScaleFit {
    fn default() -> Self {
        Self { range: (1e-3, 1.0), points: 31 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderSettings {
    pub r: Vec<f64>,
}

impl Default for HolderSettings {
    fn default() -> Self {
        Self { r: vec![0.0, 0.25, 0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QRegularitySettings {
    /// Defaults to `0.9 (beta ^ alpha_h)`.
    pub beta1: Option<f64>,
    /// Fractions of `beta1` swept as `gamma`.
    pub gamma_fractions: Vec<f64>,
}

impl Default for QRegularitySettings {
    fn default() -> Self {
        Self { beta1: None, gamma_fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncrementSettings {
    /// Freeze point of the frozen symbol.
    pub freeze: f64,
    #[serde(flatten)]
    pub grid: IncrementGrid,
}

impl Default for IncrementSettings {
    fn default() -> Self {
        Self { freeze: 0.0, grid: IncrementGrid::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MassSettings {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub tolerance: f64,
}

impl Default for MassSettings {
    fn default() -> Self {
        Self { t: vec![0.25], x: vec![0.0, 1.0], tolerance: 5e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CkSettings {
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub y: Vec<f64>,
    pub tolerance: f64,
}

impl Default for CkSettings {
    fn default() -> Self {
        Self { s: 0.125, t: 0.125, x: 0.0, y: vec![-0.3, 0.0, 0.5], tolerance: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualSettings {
    pub t: f64,
    pub y: f64,
    /// Residual is measured on `|x - y| <= radius`.
    pub radius: f64,
    pub n_picard: usize,
    pub refinements: Vec<usize>,
    /// Required decrease factor per refinement step.
    pub min_decrease: f64,
}

impl Default for ResidualSettings {
    fn default() -> Self {
        Self { t: 0.25, y: 0.0, radius: 2.0, n_picard: 20, refinements: vec![1, 2], min_decrease: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McCheckSettings {
    pub t: f64,
    pub x: f64,
    pub paths: usize,
    pub bandwidth: f64,
    /// `(min, max, points)` of the y grid.
    pub y: (f64, f64, usize),
    pub steps: usize,
    pub small_jump_threshold: Option<f64>,
    pub max_activity: f64,
    /// Agreement means `|mc - p| <= ci_multiple * half_width`.
    pub ci_multiple: f64,
    pub min_agreement: f64,
}

impl Default for McCheckSettings {
    fn default() -> Self {
        let mc = McSettings::default();
        Self {
            t: 0.25,
            x: 0.0,
            paths: 100_000,
            bandwidth: 0.05,
            y: (-2.0, 2.0, 41),
            steps: mc.steps,
            small_jump_threshold: None,
            max_activity: mc.max_activity,
            ci_multiple: 3.0,
            min_agreement: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalitySettings {
    pub x: Vec<f64>,
    /// `(min, max, points)` of log-spaced radii.
    pub r: (f64, f64, usize),
}

impl Default for CriticalitySettings {
    fn default() -> Self {
        Self { x: vec![-1.0, 0.0, 1.0], r: (1e-3, 0.5, 10) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedFormSettings {
    pub t: Vec<f64>,
    pub x: f64,
    pub u_max: f64,
    pub points: usize,
    pub tolerance: f64,
}

impl Default for ClosedFormSettings {
    fn default() -> Self {
        Self { t: vec![0.25, 1.0], x: 0.0, u_max: 5.0, points: 41, tolerance: 1e-3 }
    }
}

/// Per-check settings; every table is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSettings {
    pub harness: HarnessGrid,
    pub holder: HolderSettings,
    pub q_regularity: QRegularitySettings,
    pub increment: IncrementSettings,
    pub mass: MassSettings,
    pub chapman_kolmogorov: CkSettings,
    pub residual: ResidualSettings,
    pub mc: McCheckSettings,
    pub criticality: CriticalitySettings,
    pub closed_form: ClosedFormSettings,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// One experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// RNG seed; required when `mc_oracle` is enabled.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Worker count. Stages run sequentially; the value is recorded only.
    #[serde(default = "one")]
    pub workers: usize,
    /// Output root (overridden by `LEVI_KERNEL_OUTPUT_ROOT`); default `runs`.
    #[serde(default)]
    pub output_root: Option<PathBuf>,
    #[serde(default = "yes")]
    pub cache: bool,
    pub checks: Vec<CheckId>,
    pub model: ModelSpec,
    /// Operator form; defaults to the form of the classified case.
    #[serde(default)]
    pub form: Option<OperatorForm>,
    #[serde(default)]
    pub scales: ScaleFit,
    #[serde(default)]
    pub sample_grid: SampleGrid,
    #[serde(default)]
    pub fft: FftSettings,
    #[serde(default)]
    pub parametrix: ParametrixConfig,
    #[serde(default)]
    pub settings: CheckSettings,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad(format!("name `{}` must be a plain directory name", self.name));
        }
        if self.checks.is_empty() {
            return bad("no checks enabled".into());
        }
        if self.checks.contains(&CheckId::McOracle) && self.seed.is_none() {
            return bad("mc_oracle is enabled but no seed is given".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.checks.contains(&CheckId::ClosedForm) && self.model != ModelSpec::Cauchy {
            return bad("closed_form is only available for the cauchy family".into());
        }
        self.parametrix.validate().map_err(|e| Error::Config(format!("parametrix: {e}")))?;
        self.model.build().map_err(|e| Error::Config(format!("model: {e}")))?;
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        section_hash(self)
    }
}

fn section_hash<T: Serialize + ?Sized>(v: &T) -> String {
    let text = toml::to_string(&Wrap { v }).expect("config sections serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Serialize)]
struct Wrap<'a, T: ?Sized> {
    v: &'a T,
}

/// Status of one stage in the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Stable,
    Diverging,
    Inconclusive,
    Error,
}

impl Status {
    fn as_str(&self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Stable => "stable",
            Status::Diverging => "diverging",
            Status::Inconclusive => "inconclusive",
            Status::Error => "error",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pass" => Status::Pass,
            "fail" => Status::Fail,
            "stable" => Status::Stable,
            "diverging" => Status::Diverging,
            "inconclusive" => Status::Inconclusive,
            "error" => Status::Error,
            _ => return None,
        })
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub stage: String,
    pub status: Status,
    pub metric: String,
    pub value: f64,
    /// Whether a diverging status counts against the exit code.
    pub binding: bool,
}

impl SummaryRow {
    fn new(stage: &str, status: Status, metric: &str, value: f64) -> Self {
        Self { stage: stage.into(), status, metric: metric.into(), value, binding: true }
    }

    fn csv(&self) -> String {
        format!("{},{},{},{:.6e},{}", self.stage, self.status.as_str(), self.metric, self.value, self.binding)
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return None;
        }
        Some(Self {
            stage: f[0].into(),
            status: Status::parse(f[1])?,
            metric: f[2].into(),
            value: f[3].parse().ok()?,
            binding: f[4].parse().ok()?,
        })
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Vec<SummaryRow>,
    pub failed: bool,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failed)
    }

    pub fn metric(&self, stage: &str, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.stage == stage && r.metric == metric)
    }
}

/// Output of one check: CSV body (with its own column header) and summary rows.
struct CheckOutput {
    csv: String,
    summary: Vec<SummaryRow>,
}

fn status_of(v: Verdict) -> Status {
    match v {
        Verdict::Stable => Status::Stable,
        Verdict::Diverging => Status::Diverging,
        Verdict::Inconclusive => Status::Inconclusive,
    }
}

fn pass_fail(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn reports_output(stage: &str, reports: &[EstimateReport]) -> CheckOutput {
    let mut csv = String::from(EstimateReport::CSV_HEADER);
    csv.push('\n');
    let mut summary = Vec::new();
    for r in reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
        let slice: Vec<String> = r
            .slice
            .iter()
            .filter(|(k, _)| matches!(k.as_str(), "r" | "gamma" | "order" | "level"))
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        let metric = format!("{}[{}]", r.estimate_id, slice.join(";"));
        summary.push(SummaryRow { binding: r.admissible, ..SummaryRow::new(stage, status_of(r.verdict), &metric, r.max_ratio) });
    }
    CheckOutput { csv, summary }
}

/// Shared state of a run: the model and lazily built stages.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    model: JumpModel,
    sp: ScaleProfile,
    form: OperatorForm,
    validation_passed: bool,
    full: Option<Parametrix>,
    samples: Option<Vec<Samples>>,
    log: String,
}

impl<'a> Context<'a> {
    fn log(&mut self, line: impl AsRef<str>) {
        log::info!("{}", line.as_ref());
        self.log.push_str(line.as_ref());
        self.log.push('\n');
    }

    fn bound(&self) -> BoundFunction {
        BoundFunction::new(self.sp.clone())
    }

    /// Solve with every window point as a target, for mass, CK and MC.
    fn full_solve(&mut self) -> Result<&Parametrix> {
        if self.full.is_none() {
            let s = &self.cfg.settings;
            let mut t = Vec::new();
            if self.cfg.checks.contains(&CheckId::Mass) {
                t.extend(&s.mass.t);
            }
            if self.cfg.checks.contains(&CheckId::ChapmanKolmogorov) {
                let c = &s.chapman_kolmogorov;
                t.extend([c.s, c.t, c.s + c.t]);
            }
            if self.cfg.checks.contains(&CheckId::McOracle) {
                t.push(s.mc.t);
            }
            t.sort_by(f64::total_cmp);
            t.dedup();
            let pc = ParametrixConfig { t_eval: t, all_y: true, ..self.cfg.parametrix.clone() };
            let start = Instant::now();
            let par = Parametrix::solve(&self.model, self.form, &pc)?;
            self.log(format!("parametrix (all targets): {:.1}s, picard deltas {:?}", start.elapsed().as_secs_f64(), par.deltas));
            self.full = Some(par);
        }
        Ok(self.full.as_ref().unwrap())
    }

    fn harness_samples(&mut self) -> Result<&[Samples]> {
        if self.samples.is_none() {
            let mut orders = vec![0usize];
            for c in &self.cfg.checks {
                if let Some(l) = c.level() {
                    orders.push(l);
                }
            }
            orders.sort();
            orders.dedup();
            let with_q = self.cfg.checks.contains(&CheckId::QRegularity);
            let grid = &self.cfg.settings.harness;
            let mut out = Vec::new();
            for &f in &grid.refinements {
                let start = Instant::now();
                let s = verify::sample_parametrix(&self.model, self.form, &self.cfg.parametrix, grid, f, &orders, with_q)?;
                self.log(format!("harness samples at {f}x: {:.1}s", start.elapsed().as_secs_f64()));
                out.push(s);
            }
            self.samples = Some(out);
        }
        Ok(self.samples.as_deref().unwrap())
    }
}

fn check_model_validation(ctx: &mut Context) -> Result<CheckOutput> {
    let report = validate_model(&ctx.model, &ctx.cfg.sample_grid)?;
    let mut csv = String::from("invariant,status,witness,lhs,rhs\n");
    for row in report.csv_rows() {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let mut summary = vec![SummaryRow::new(
        "model_validation",
        pass_fail(report.all_passed()),
        "assumptions",
        report.checks.iter().filter(|c| c.passed).count() as f64,
    )];
    match classify_case(&ctx.model, &ctx.sp, &ctx.cfg.sample_grid) {
        Ok(tag) => {
            let _ = writeln!(csv, "case,{},{},,", tag.case, tag.form());
            for (k, v) in &tag.params {
                let _ = writeln!(csv, "param,{k},{v:.10e},,");
            }
            summary.push(SummaryRow::new("model_validation", Status::Pass, &format!("case_{}", tag.case), 1.0));
        }
        Err(e) => {
            let _ = writeln!(csv, "case,unclassifiable,\"{}\",,", e.to_string().replace('"', "'"));
            summary.push(SummaryRow::new("model_validation", Status::Fail, "case", f64::NAN));
        }
    }
    summary.push(SummaryRow::new("model_validation", Status::Pass, "alpha_h", ctx.sp.alpha_h));
    Ok(CheckOutput { csv, summary })
}

fn check_criticality(ctx: &mut Context) -> Result<CheckOutput> {
    let s = &ctx.cfg.settings.criticality;
    let mut csv = String::from("x,r,integral\n");
    let mut worst = 0.0f64;
    for &x in &s.x {
        for r in logspace(s.r.0, s.r.1, s.r.2) {
            let v = criticality_integral(&ctx.model, &[x], r)?;
            worst = worst.max(v[0].abs());
            let _ = writeln!(csv, "{x},{r:.6e},{:.12e}", v[0]);
        }
    }
    let finite = worst.is_finite();
    Ok(CheckOutput { csv, summary: vec![SummaryRow::new("criticality", pass_fail(finite), "max_abs", worst)] })
}

fn check_closed_form(ctx: &mut Context) -> Result<CheckOutput> {
    let s = &ctx.cfg.settings.closed_form;
    let sym = build_symbol(&ctx.model, &[s.x], ctx.form)?;
    let cache = KernelCache::new();
    let mut csv = String::from("t,u,kernel,closed_form,rel_err\n");
    let mut worst = 0.0f64;
    for &t in &s.t {
        let k = cache.kernel(&sym, t, &ctx.cfg.fft)?;
        for u in crate::models::linspace(-s.u_max, s.u_max, s.points) {
            let v = k.at(u, 0, ctx.cfg.fft.image_correction);
            let exact = t / (std::f64::consts::PI * (t * t + u * u));
            let err = (v - exact).abs() / exact;
            worst = worst.max(err);
            let _ = writeln!(csv, "{t},{u:.6},{v:.12e},{exact:.12e},{err:.3e}");
        }
    }
    Ok(CheckOutput {
        csv,
        summary: vec![SummaryRow::new("closed_form", pass_fail(worst <= s.tolerance), "max_rel_err", worst)],
    })
}

fn check_increments(ctx: &mut Context) -> Result<CheckOutput> {
    let s = &ctx.cfg.settings.increment;
    let sym = build_symbol(&ctx.model, &[s.freeze], ctx.form)?;
    let reports = verify::check_increment_bounds(&sym, &ctx.bound(), &s.grid, &ctx.cfg.fft)?;
    Ok(reports_output("increment_bounds_frozen", &reports))
}

fn check_mass(ctx: &mut Context) -> Result<CheckOutput> {
    let s = ctx.cfg.settings.mass.clone();
    let par = ctx.full_solve()?;
    let mut csv = String::from("t,x,mass,deviation\n");
    let mut worst = 0.0f64;
    for &t in &s.t {
        for &x in &s.x {
            let m = par.mass(t, x)?;
            worst = worst.max((m - 1.0).abs());
            let _ = writeln!(csv, "{t},{x},{m:.12e},{:.3e}", m - 1.0);
        }
    }
    Ok(CheckOutput {
        csv,
        summary: vec![SummaryRow::new("mass", pass_fail(worst <= s.tolerance), "max_deviation", worst)],
    })
}

fn check_ck(ctx: &mut Context) -> Result<CheckOutput> {
    let s = ctx.cfg.settings.chapman_kolmogorov.clone();
    let par = ctx.full_solve()?;
    let mut csv = String::from("s,t,x,y,convolution,kernel,rel_err\n");
    let mut worst = 0.0f64;
    for &y in &s.y {
        let (lhs, rhs) = par.chapman_kolmogorov(s.s, s.t, s.x, y)?;
        let err = (lhs - rhs).abs() / rhs.abs();
        worst = worst.max(err);
        let _ = writeln!(csv, "{},{},{},{y},{lhs:.12e},{rhs:.12e},{err:.3e}", s.s, s.t, s.x);
    }
    Ok(CheckOutput {
        csv,
        summary: vec![SummaryRow::new("chapman_kolmogorov", pass_fail(worst <= s.tolerance), "max_rel_err", worst)],
    })
}

fn check_residual(ctx: &mut Context) -> Result<CheckOutput> {
    let s = ctx.cfg.settings.residual.clone();
    let mut csv = String::from("factor,residual,max_dt_p,relative\n");
    let mut series = Vec::new();
    for &f in &s.refinements {
        let base = ParametrixConfig { n_picard: s.n_picard, t_eval: vec![s.t], y_eval: vec![s.y], all_y: false, ..ctx.cfg.parametrix.clone() };
        let start = Instant::now();
        let par = Parametrix::solve(&ctx.model, ctx.form, &base.refined(f))?;
        let (res, dt) = par.residual(s.t, s.y, s.radius)?;
        ctx.log(format!("residual solve at {f}x: {:.1}s", start.elapsed().as_secs_f64()));
        let _ = writeln!(csv, "{f},{res:.6e},{dt:.6e},{:.6e}", res / dt);
        series.push(res);
    }
    let decrease = series.windows(2).map(|w| w[0] / w[1]).fold(f64::INFINITY, f64::min);
    let ok = series.len() >= 2 && decrease >= s.min_decrease;
    Ok(CheckOutput { csv, summary: vec![SummaryRow::new("residual", pass_fail(ok), "min_decrease", decrease)] })
}

fn check_holder(ctx: &mut Context, level: usize) -> Result<CheckOutput> {
    let r = ctx.cfg.settings.holder.r.clone();
    let beta = ctx.model.constants.beta;
    let (alpha_h, bf) = (ctx.sp.alpha_h, ctx.bound());
    verify::check_level(alpha_h, beta, level)?;
    let samples = ctx.harness_samples()?;
    let mut reports = verify::check_theorem_holder(samples, &bf, alpha_h, beta, level, &r)?;
    if level == 1 {
        reports.push(verify::check_kernel_bound(samples, &bf, 1)?);
    }
    Ok(reports_output(CheckId::ALL.iter().find(|c| c.level() == Some(level)).unwrap().id(), &reports))
}

fn check_q(ctx: &mut Context) -> Result<CheckOutput> {
    let s = ctx.cfg.settings.q_regularity.clone();
    let beta = ctx.model.constants.beta;
    let (alpha_h, bf) = (ctx.sp.alpha_h, ctx.bound());
    let beta1 = s.beta1.unwrap_or(0.9 * beta.min(alpha_h));
    let gammas: Vec<f64> = s.gamma_fractions.iter().map(|f| f * beta1).collect();
    let samples = ctx.harness_samples()?;
    let q = verify::check_q_regularity(samples, &bf, alpha_h, beta, beta1, &gammas)?;
    let mut reports = q.reports;
    reports.push(verify::check_q0_bound(samples, &bf, beta1)?);
    let mut out = reports_output("q_regularity", &reports);
    out.summary.push(SummaryRow::new("q_regularity", pass_fail(q.uniformity < 2.0), "gamma_uniformity", q.uniformity));
    Ok(out)
}

fn check_mc(ctx: &mut Context) -> Result<CheckOutput> {
    let s = ctx.cfg.settings.mc.clone();
    let seed = ctx.cfg.seed.ok_or_else(|| Error::Config("mc_oracle needs a seed".into()))?;
    let settings = McSettings {
        steps: s.steps,
        seed,
        small_jump_threshold: s.small_jump_threshold,
        max_activity: s.max_activity,
    };
    let y = crate::models::linspace(s.y.0, s.y.1, s.y.2);
    let (model, form, sp) = (ctx.model.clone(), ctx.form, ctx.sp.clone());
    let start = Instant::now();
    let mc = verify::mc_oracle(&model, form, &sp, s.t, s.x, s.paths, s.bandwidth, &y, &settings)?;
    ctx.log(format!("monte carlo ({} paths): {:.1}s", s.paths, start.elapsed().as_secs_f64()));
    let par = ctx.full_solve()?;
    let row = par.heat_kernel_on(s.t, 0, &[par.x[par.ring_index(s.x)]])?.remove(0);
    let ys: Vec<f64> = par.targets.iter().map(|&i| par.x[i]).collect();
    let reference = verify::smoothed_samples(&ys, &row, &y, s.bandwidth);
    let frac = verify::agreement(&mc, &reference, s.ci_multiple);
    let mut csv = String::from("y,kde,half_width,parametrix_smoothed\n");
    for j in 0..y.len() {
        let _ = writeln!(csv, "{:.6},{:.8e},{:.8e},{:.8e}", y[j], mc.density[j], mc.half_width[j], reference[j]);
    }
    Ok(CheckOutput {
        csv,
        summary: vec![SummaryRow::new("mc_oracle", pass_fail(frac >= s.min_agreement), "agreement", frac)],
    })
}

/// Sections of the config a check's output depends on.
fn check_key(cfg: &ExperimentConfig, form: OperatorForm, id: CheckId) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        version: &'a str,
        check: &'a str,
        model: &'a ModelSpec,
        form: OperatorForm,
        scales: &'a ScaleFit,
        sample_grid: &'a SampleGrid,
        fft: &'a FftSettings,
        parametrix: &'a ParametrixConfig,
        settings: &'a CheckSettings,
        seed: Option<u64>,
        checks: &'a [CheckId],
    }
    // the all-target solve depends on which of mass/CK/MC are enabled
    let checks: Vec<CheckId> = cfg.checks.iter().copied().filter(|c| matches!(c, CheckId::Mass | CheckId::ChapmanKolmogorov | CheckId::McOracle | CheckId::QRegularity) || c.level().is_some()).collect();
    section_hash(&Key {
        version: VERSION,
        check: id.id(),
        model: &cfg.model,
        form,
        scales: &cfg.scales,
        sample_grid: &cfg.sample_grid,
        fft: &cfg.fft,
        parametrix: &cfg.parametrix,
        settings: &cfg.settings,
        seed: cfg.seed,
        checks: &checks,
    })
}

fn run_check(ctx: &mut Context, id: CheckId) -> Result<CheckOutput> {
    match id {
        CheckId::ModelValidation => check_model_validation(ctx),
        CheckId::Criticality => check_criticality(ctx),
        CheckId::ClosedForm => check_closed_form(ctx),
        CheckId::IncrementBoundsFrozen => check_increments(ctx),
        CheckId::Mass => check_mass(ctx),
        CheckId::ChapmanKolmogorov => check_ck(ctx),
        CheckId::Residual => check_residual(ctx),
        CheckId::TheoremHolderLevel0 => check_holder(ctx, 0),
        CheckId::TheoremHolderLevel1 => check_holder(ctx, 1),
        CheckId::TheoremHolderLevel2 => check_holder(ctx, 2),
        CheckId::QRegularity => check_q(ctx),
        CheckId::McOracle => check_mc(ctx),
    }
}

/// Output root: the explicit argument, then the environment, then the config,
/// then `runs`.
pub fn output_root(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|p| !p.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.output_root.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

/// Runs every enabled check and writes the artifacts.
pub fn run(cfg: &ExperimentConfig, root: &Path, use_cache: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = root.join(&cfg.name);
    let cache_dir = root.join(".cache");
    fs::create_dir_all(&dir)?;
    if use_cache && cfg.cache {
        fs::create_dir_all(&cache_dir)?;
    }
    let header = format!("# levi-kernel {VERSION} config_hash={}\n", cfg.hash());

    let model = cfg.model.build()?;
    let sp = ScaleProfile::fit_on(&model.jump.profile, cfg.scales.range, cfg.scales.points)
        .map_err(|e| Error::Stage { stage: "scales".into(), source: Box::new(e) })?;
    let (form, validation_passed) = match classify_case(&model, &sp, &cfg.sample_grid) {
        Ok(tag) => (cfg.form.unwrap_or(tag.form()), true),
        Err(e) => match cfg.form {
            Some(f) => (f, false),
            None => return Err(Error::Stage { stage: "classification".into(), source: Box::new(e) }),
        },
    };
    let mut ctx = Context {
        cfg,
        model,
        sp,
        form,
        validation_passed,
        full: None,
        samples: None,
        log: String::new(),
    };
    ctx.log(format!("levi-kernel {VERSION}: experiment `{}`, form {form}, alpha_h {:.4}", cfg.name, ctx.sp.alpha_h));
    if cfg.workers > 1 {
        ctx.log(format!("workers = {}: stages run sequentially", cfg.workers));
    }

    let mut summary = Vec::new();
    let mut failed = false;
    let mut order = cfg.checks.clone();
    order.sort();
    order.dedup();
    for id in order {
        let key = check_key(cfg, form, id);
        let cached_csv = cache_dir.join(format!("{}-{key}.csv", id.id()));
        let cached_sum = cache_dir.join(format!("{}-{key}.summary", id.id()));
        let start = Instant::now();
        let hit = if use_cache && cfg.cache && cached_csv.exists() && cached_sum.exists() {
            let body = fs::read_to_string(&cached_csv)?;
            let rows: Option<Vec<SummaryRow>> = fs::read_to_string(&cached_sum)?.lines().map(SummaryRow::parse).collect();
            rows.map(|summary| CheckOutput { csv: body, summary })
        } else {
            None
        };
        let from_cache = hit.is_some();
        let result = match hit {
            Some(out) => Ok(out),
            None => run_check(&mut ctx, id),
        };
        match result {
            Ok(out) => {
                fs::write(dir.join(format!("{}.csv", id.id())), format!("{header}{}", out.csv))?;
                if use_cache && cfg.cache && !from_cache {
                    fs::write(&cached_csv, &out.csv)?;
                    let s: String = out.summary.iter().map(|r| r.csv() + "\n").collect();
                    fs::write(&cached_sum, s)?;
                }
                for row in out.summary {
                    // cached and fresh rows report the same rounded values
                    let mut row = SummaryRow::parse(&row.csv()).unwrap_or(row);
                    row.binding &= ctx.validation_passed;
                    if row.status == Status::Diverging && row.binding {
                        failed = true;
                    }
                    summary.push(row);
                }
                ctx.log(format!(
                    "{}: done in {:.1}s{}",
                    id.id(),
                    start.elapsed().as_secs_f64(),
                    if from_cache { " (cached)" } else { "" }
                ));
            }
            Err(e) => {
                let e = Error::Stage { stage: id.id().into(), source: Box::new(e) };
                ctx.log(format!("{e}"));
                summary.push(SummaryRow::new(id.id(), Status::Error, "error", f64::NAN));
                failed = true;
            }
        }
    }

    let mut text = format!("{header}stage,status,metric,value,binding\n");
    for r in &summary {
        text.push_str(&r.csv());
        text.push('\n');
    }
    fs::write(dir.join("summary.csv"), text)?;
    let mut table = String::new();
    for r in &summary {
        let _ = writeln!(table, "{:<26} {:<13} {:<44} {:>12.4e}", r.stage, r.status.as_str(), r.metric, r.value);
    }
    ctx.log(format!("summary:\n{table}"));
    ctx.log(if failed { "result: FAILED" } else { "result: ok" });
    fs::write(dir.join("run.log"), &ctx.log)?;
    Ok(RunOutcome { dir, summary, failed })
}

#[derive(Debug, Parser)]
#[command(name = "levi-kernel", version, about = "Heat kernels of Lévy-type operators by the parametrix method")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment config.
    Run {
        config: PathBuf,
        /// Output root (takes precedence over the environment and the config).
        #[arg(long)]
        output_root: Option<PathBuf>,
        /// Ignore and do not write the stage cache.
        #[arg(long)]
        no_cache: bool,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Print the catalog of checks.
    ListChecks,
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::ListChecks => {
            for (id, tag) in list_checks() {
                println!("{id:<26} {tag}");
            }
            0
        }
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(cfg) => {
                println!("{}: ok ({} checks, config_hash={})", config.display(), cfg.checks.len(), cfg.hash());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        },
        Command::Run { config, output_root: root, no_cache } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 2;
                }
            };
            let root = output_root(&cfg, root.as_deref());
            match run(&cfg, &root, !no_cache) {
                Ok(out) => {
                    for r in &out.summary {
                        println!("{:<26} {:<13} {:<44} {:>12.4e}", r.stage, r.status.as_str(), r.metric, r.value);
                    }
                    println!("artifacts: {}", out.dir.display());
                    out.exit_code()
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_complete_and_stable() {
        let a = list_checks();
        assert_eq!(a, list_checks());
        assert_eq!(a.len(), CheckId::ALL.len());
        for c in CheckId::ALL {
            let s = toml::to_string(&Wrap { v: &c }).unwrap();
            assert!(s.contains(c.id()), "{s}");
        }
    }

    #[test]
    fn summary_rows_roundtrip() {
        let r = SummaryRow::new("mass", Status::Pass, "max_deviation", 1.5e-3);
        assert_eq!(SummaryRow::parse(&r.csv()), Some(r));
    }
}
