//! Spartan spatial random field (SSRF) inference from scattered samples.
//!
//! Kernel-weighted sample constraints (variance, generalized gradient,
//! generalized curvature) are matched against their spectral ensemble
//! counterparts to estimate `(eta0, eta1, xi, kc)`. Gaussian-field simulation
//! and ordinary-kriging cross-validation support the validation experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod error;
pub mod experiment;
pub mod fmt;
pub mod inference;
pub mod kernels;
pub mod kriging;
pub mod par;
pub mod quadrature;
pub mod sample;
pub mod simulate;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
pub use kernels::{KernelFamily, KernelSpec, MomentTable};
pub use sample::SampleData;
pub use spectral::{QuadratureConfig, SsrfParams};
