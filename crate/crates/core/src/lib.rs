//! Heat kernels of non-symmetric Lévy-type operators built by the Levi
//! parametrix method, together with a harness that measures Hölder moduli of
//! the constructed kernel and its derivatives against scale-function bounds.
//!
//! The pipeline is: [`models`] (operator data and assumption checks) →
//! [`scales`] (scale functions, bound function) → [`frozen`] (constant
//! coefficient kernels by Fourier inversion) → [`parametrix`] (the Volterra
//! correction and the assembled kernel) → [`verify`] (estimate reports and a
//! Monte Carlo oracle). [`cli`] wires these into config-driven experiments.

pub mod cli;
pub mod error;
pub mod frozen;
pub mod generator;
pub mod models;
pub mod parametrix;
pub mod quad;
pub mod scales;
pub mod verify;

pub use error::{Error, Result};
pub use frozen::{build_symbol, frozen_kernel, FftSettings, FrozenKernel, FrozenSymbol, SpectralGrid};
pub use generator::{apply_generator, generator_difference, GeneratorSpec, HessianSource};
pub use models::{
    classify_case, criticality_integral, validate_model, Case, CaseTag, Coefficient, JumpDensity, JumpModel,
    ModelConstants, OperatorForm, RadialProfile, SampleGrid, Sided, SpatialFactor, ValidationReport,
};

pub use parametrix::{FieldKind, KernelField, Parametrix, ParametrixConfig, QField};
pub use scales::{BoundFunction, ScaleProfile};

pub use verify::{EstimateReport, HarnessGrid, McDensity, McSettings, Verdict};
