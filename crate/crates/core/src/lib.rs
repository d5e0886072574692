//! Explainable stacked-boosting toolkit for tabular engagement prediction.
//!
//! The crate covers the full modelling flow: survey-table ingestion and
//! harmonization ([`dataset`]), leakage-free preprocessing ([`preprocess`],
//! [`textnorm`]), seeded resampling ([`sampling`]), from-scratch learners
//! including a Newton boosting engine with three growth strategies
//! ([`learners`]), the three-booster stacked ensemble ([`stack`]),
//! randomized grid search ([`tune`]), bootstrap evaluation ([`eval`]),
//! SHAP attribution ([`explain`]) and a synthetic cohort generator
//! ([`synth`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod explain;
pub mod learners;
pub mod matrix;
pub mod preprocess;
pub mod rng;
pub mod sampling;
pub mod stack;
pub mod synth;
pub mod textnorm;
pub mod tune;

pub use error::{Error, Result};
pub use matrix::Matrix;
