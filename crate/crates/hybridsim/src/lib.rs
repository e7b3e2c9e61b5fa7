//! Hybrid stochastic simulation: analytical rigid-body motion models
//! (bouncing ball, quasi-static planar pushing) augmented with a learned
//! recurrent residual model, plus the training, evaluation, and dataset
//! machinery to compare the Zero / Physics / Neural / Hybrid predictors.

pub mod autodiff;
pub mod data;
pub mod dcvrnn;
pub mod eval;
pub mod models;
pub mod nn;
pub mod physics;
pub mod types;
