//! Second-order structured pruning for dense weight matrices and LoRA
//! adapter pairs.
//!
//! The crate covers mask selection and closed-form constrained updates
//! ([`obs_full`], [`obs_lora`]), damped Hessian estimates ([`hessian`]),
//! reference pruners ([`baselines`]), small differentiable models
//! ([`toymodels`]), a dynamic rank-pruning training loop ([`schedule`]) and
//! brute-force verifiers ([`oracle`]).

pub mod baselines;
pub mod error;
pub mod exec;
pub mod hessian;
pub mod matcore;
pub mod obs_full;
pub mod obs_lora;
pub mod oracle;
pub mod report;
pub mod schedule;
pub mod synth;
pub mod toymodels;

pub use error::{PruneError, Result};
pub use exec::ExecMode;
pub use matcore::{Axis, Matrix, PruneMask};
