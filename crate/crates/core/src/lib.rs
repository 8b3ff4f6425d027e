//! Stochastic ranking process with space-time dependent jump rates.
//!
//! * [`intensity`], [`config`]: rate fields, population specs, TOML files.
//! * [`latp`]: point processes whose hazard depends on the last arrival.
//! * [`flow`]: flows on the initial/boundary set and the limit solver.
//! * [`srp`]: exact finite-N simulation, flow-driven variant, coupling.
//! * [`measure`]: empirical curves and distribution functions from logs.
//! * [`harness`]: replicated N-sweeps and validation reports.
//!
//! The numerical core (`intensity`, `latp`, `flow`) is generic over
//! [`scalar::Real`] (`f32`/`f64`); simulation and measurement work in `f64`.
//! The aliases below name the `f64` instances.

// `!(x > 0.0)` is how NaN gets rejected; index loops mirror the quadrature formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod flow;
pub mod harness;
pub mod intensity;
pub mod latp;
pub mod measure;
pub mod quad;
pub mod scalar;
pub mod srp;
pub mod stream;

pub use error::{Error, Result};

pub type IntensityField64 = intensity::IntensityField<f64>;
pub type PopulationSpec64 = intensity::PopulationSpec<f64>;
pub type FlowGrid64 = flow::FlowGrid<f64>;
pub type PhiTable64 = flow::PhiTable<f64>;
pub type LimitSolution64 = flow::LimitSolution<f64>;
pub type LatpIntensity64 = latp::LatpIntensity<f64>;
pub type SurvivalTable64 = latp::SurvivalTable<f64>;
