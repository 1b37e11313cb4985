//! Deep dynamic factor models for return prediction.
//!
//! The crate bundles feedforward factor networks with a skip connection from
//! the raw predictors to the output, minibatch SGD with dropout and
//! elementwise penalties, linear shrinkage baselines (OLS, ridge, lasso,
//! elastic net, PLS), synthetic latent-factor data generating processes, a
//! windowed out-of-sample backtest scored by MSPE and out-of-sample R², and a
//! stacked LSTM.
//!
//! Numerical code is generic over [`Scalar`] (implemented for `f32` and
//! `f64`). The `*64` aliases below are the concrete types used by the CLI,
//! the data layer and the backtest.

pub mod backtest;
pub mod commands;
pub mod config;
pub mod dataflow;
pub mod error;
pub mod linalg;
pub mod linear;
pub mod lstm;
pub mod methods;
pub mod network;
pub mod rng;
pub mod scalar;
pub mod simulation;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Parameters64 = network::Parameters<f64>;
pub type Parameters32 = network::Parameters<f32>;
pub type ForwardCache64 = network::ForwardCache<f64>;
pub type LinearModel64 = linear::LinearModel<f64>;
pub type LinearModel32 = linear::LinearModel<f32>;
pub type DeepFactorModel64 = training::DeepFactorModel<f64>;





pub type DeepFactorModel32 = training::DeepFactorModel<f32>;
pub type LstmParams64 = lstm::LstmParams<f64>;
pub type LstmState64 = lstm::LstmState<f64>;
pub type LstmModel64 = lstm::LstmModel<f64>;
pub type SimulatedPanel64 = simulation::SimulatedPanel<f64>;
pub type FittedModel64 = methods::FittedModel<f64>;
