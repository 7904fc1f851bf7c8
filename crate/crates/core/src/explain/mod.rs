//! Exact Shapley attributions and accumulated local effects.

pub mod ale;
pub mod shapley;

pub use ale::{ale_curve, AleCurve, DEFAULT_ALE_BINS};
pub use shapley::{
    background_sample, shapley_batch, shapley_exact, Importance, ShapBatch, ShapExplanation,
    DEFAULT_BACKGROUND_CAP, DEFAULT_MAX_FEATURES,
};
