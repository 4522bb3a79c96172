//! Two-year relapse risk modelling for relapsing-remitting multiple sclerosis:
//! cohort handling, multiple imputation, a Bayesian mixed-effects logistic model
//! with shrinkage, pooling, validation, decision curves and an HTTP risk service.

pub mod cli;
pub mod cohort;
pub mod dca;
pub mod diagnostics;
pub mod glm;
pub mod imputation;
pub mod inference;
pub mod pooling;
pub mod risk;
pub mod service;
pub mod stats;
pub mod validation;
