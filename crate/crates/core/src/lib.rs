//! Compressive-sensing load disaggregation under differential-privacy noise.
//!
//! A fleet of `N` binary appliances with mean powers `P` drives an aggregate
//! meter. Switch events between consecutive readings are recovered by a
//! boxed L1 relaxation ([`solver`]), chained over time ([`inference`]) or
//! across power-concentrated groups ([`hierarchy`]). Readings may first be
//! perturbed by the Laplace or staircase mechanism ([`mechanisms`]), and
//! [`bounds`] evaluates closed-form accuracy bounds under that noise.

pub mod bounds;
pub mod data;
pub mod error;
pub mod experiment;
pub mod hierarchy;
pub mod inference;
pub mod mechanisms;
pub mod model;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    apply_switch, hadamard, AppliancePowerVector, DpConfig, Mechanism, MeterSeries, SensitivityParams,
    StateMatrix, StateVector, SwitchVector,
};
