//! Matrix factorization whose user and item vectors are assembled from
//! softmax-weighted cluster centers, one small center bank per view.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

// `!(x > y)` is used on purpose wherever NaN must land on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod scalar;
pub mod training;

pub use baselines::{fit_baseline, BaselineConfig, BaselineKind, BaselineOutcome, FlatMfModel};
pub use checkpoint::{Checkpoint, SavedModel};
pub use data::{
    generate_synthetic, load_ratings, parse_ratings, split_dataset, InteractionDataset, RatingFormat, Record, SplitParts,
    SplitSpec, SyntheticSpec,
};
pub use error::{Error, Result};
pub use eval::{evaluate_rmse, export_assignments, interpretability_report, RatingPredictor};
pub use losses::{gradients, total_loss, GradientSet, LossBreakdown};
pub use model::{Model, ModelConfig, PsiRule, Side};
pub use scalar::Scalar;
pub use training::{fit, fit_with, FitOutcome, Schedule, TrainReport, TrainState};

pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type GradientSet64 = GradientSet<f64>;
pub type GradientSet32 = GradientSet<f32>;
pub type FlatMf64 = FlatMfModel<f64>;
pub type FlatMf32 = FlatMfModel<f32>;
pub type TrainState64 = TrainState<f64>;
pub type TrainState32 = TrainState<f32>;
