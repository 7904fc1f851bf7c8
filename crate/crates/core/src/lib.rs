//! Interpretable risk modelling for creatinine elevation in cirrhotic ICU
//! stays.
//!
//! The crate runs a tabular pipeline end to end: a cohort funnel and outcome
//! label ([`cohort`]), imputation and scaling ([`preprocess`]), missingness
//! and LASSO feature selection ([`select`]), SMOTE oversampling
//! ([`balance`]), four classifier families with cross-validated tuning
//! ([`models`]), bootstrap-backed evaluation and ablation ([`eval`]), and
//! exact Shapley and ALE explanations ([`explain`]). [`synth`] generates
//! stay tables with a planted risk model so every stage can be checked
//! against known truth. [`pipeline`] chains the stages through files on disk.
//!
//! ```
//! use akirisk::synth::{generate, SynthSpec};
//!
//! let spec = SynthSpec { n_rows: 200, seed: 7, ..Default::default() };
//! let (table, truth) = generate(&spec).unwrap();
//! assert_eq!(table.records.len(), 200);
//! assert_eq!(truth.true_logits.len(), 200);
//! ```

pub mod balance;
pub mod cohort;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod select;
pub mod stats;
pub mod synth;

pub use data::{Dataset, FeatureKind, FeatureMeta, SplitTag};
pub use error::{Error, ErrorClass, Result};
pub use models::{Family, Predictor, TrainedModel};

// The guide's code listings run as doctests, one module per chapter.
#[cfg(doctest)]
mod guide {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        };
    }
    chapter!(introduction, "introduction.md");
    chapter!(quickstart, "quickstart.md");
    chapter!(configuration, "configuration.md");
    chapter!(cohort, "cohort.md");
    chapter!(preprocessing, "preprocessing.md");
    chapter!(selection, "selection.md");
    chapter!(models, "models.md");
    chapter!(evaluation, "evaluation.md");
    chapter!(explanations, "explanations.md");
    chapter!(synthetic, "synthetic.md");
    chapter!(artifacts, "artifacts.md");
}
