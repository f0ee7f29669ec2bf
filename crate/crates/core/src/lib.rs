//! Loss-prediction active learning with a listwise ranking objective.
//!
//! The crate bundles a small reverse-mode autodiff engine, target models
//! with a feature tap, a loss-prediction head trained through a pretrained
//! differentiable sorter, classic acquisition baselines, and a seeded
//! pool-based active-learning simulator with CSV/SVG reporting.

pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod ranking;
pub mod rng;
pub mod strategies;
pub mod tape;
pub mod tensor;

pub mod models;

pub use error::{Error, Result};
