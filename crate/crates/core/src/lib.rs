//! Multiple cut-point detection in Cox models via the binarsity penalty.
//!
//! Continuous features are one-hot encoded on quantile grids; a Cox model is
//! fitted on the encoding with a within-block weighted total-variation
//! penalty plus a per-block linear constraint, and the jumps of the fitted
//! step functions are read off as cut-points. The crate also ships the
//! simulation design, the univariate multiple-testing baselines and the
//! evaluation metrics used to compare methods.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod binarizer;
pub mod cli;
pub mod cox_loss;
pub mod cutpoints;
pub mod data;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod prox;
pub mod selection;
pub mod simulation;
pub mod solver;

pub use binarizer::{binarize_at_cutpoints, fit_bins, transform, BinarizedDesign, BinningScheme};
pub use cutpoints::{extract_cutpoints, CutPointModel, FeatureCutPoints};
pub use data::{BlockLayout, BlockVector, SurvivalDataset};
pub use error::{Error, Result};
pub use solver::{fit, refit_constrained, FitResult, SolverConfig};
