//! Declarative pipeline configuration.
//!
//! Every section is optional; omitted fields take the defaults below and
//! unknown keys are rejected. A single master `seed` feeds every stage
//! through [`crate::rng::derive_seed`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortSchema, FunnelConfig, LabelConfig};
use crate::error::{Error, Result};
use crate::models::{hp, Family, Grid, Hyperparams};
use crate::preprocess::PreprocessConfig;
use crate::select::LassoConfig;
use crate::synth::SynthSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads for stage-internal parallelism; `None` uses all cores.
    pub threads: Option<usize>,
    /// Stay-level CSV. Relative paths resolve against the config file.
    pub input: Option<PathBuf>,
    /// Optional long-format creatinine file (`stay_id,hours,value`).
    pub creatinine: Option<PathBuf>,
    /// Generate the input instead of reading one.
    pub synth: Option<SynthSpec>,
    pub schema: CohortSchema,
    pub funnel: FunnelConfig,
    pub label: LabelConfig,
    pub flag_features: Vec<String>,
    /// Fraction of stays held out for testing.
    pub test_fraction: f64,
    pub preprocess: PreprocessConfig,
    pub select: SelectSection,
    pub smote: SmoteSection,
    pub models: ModelsSection,
    pub eval: EvalSection,
    pub explain: ExplainSection,
    pub ablation: AblationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            input: None,
            creatinine: None,
            synth: None,
            schema: CohortSchema::default(),
            funnel: FunnelConfig::default(),
            label: LabelConfig::default(),
            flag_features: vec!["gauge20_outside".into()],
            test_fraction: 0.3,
            preprocess: PreprocessConfig::default(),
            select: SelectSection::default(),
            smote: SmoteSection::default(),
            models: ModelsSection::default(),
            eval: EvalSection::default(),
            explain: ExplainSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectSection {
    pub lasso: LassoConfig,
    /// Restricts the final set to these names when given.
    pub allowlist: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoteSection {
    pub enabled: bool,
    pub k_neighbors: usize,
    pub target_ratio: f64,
}

impl Default for SmoteSection {
    fn default() -> Self {
        Self {
            enabled: true,
            k_neighbors: 5,
            target_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyGrid {
    pub base: Hyperparams,
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsSection {
    pub families: Vec<Family>,
    pub cv_folds: usize,
    /// Per-family grids; a family left out uses its default grid.
    pub grids: BTreeMap<Family, FamilyGrid>,
}

impl Default for ModelsSection {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            cv_folds: 5,
            grids: BTreeMap::new(),
        }
    }
}

impl ModelsSection {
    pub fn grid_for(&self, family: Family) -> FamilyGrid {
        self.grids
            .get(&family)
            .cloned()
            .unwrap_or_else(|| default_grid(family))
    }
}

/// Built-in search space per family.
pub fn default_grid(family: Family) -> FamilyGrid {
    match family {
        Family::Gbdt => FamilyGrid {
            base: hp([("min_samples_leaf", 20.0)]),
            grid: Grid::new(vec![
                ("n_trees", vec![100.0, 300.0]),
                ("learning_rate", vec![0.03, 0.1]),
                ("max_leaves", vec![4.0, 8.0]),
            ]),
        },
        Family::Logistic => FamilyGrid {
            base: Hyperparams::new(),
            grid: Grid(vec![
                ("penalty".into(), vec!["l1".into(), "l2".into()]),
                (
                    "strength".into(),
                    vec![0.001.into(), 0.01.into(), 0.1.into()],
                ),
            ]),
        },
        Family::GaussianNb => FamilyGrid::default(),
        Family::ShallowNn => FamilyGrid {
            base: hp([("epochs", 500.0)]),
            grid: Grid::new(vec![
                ("hidden_units", vec![4.0, 8.0]),
                ("lr", vec![0.1, 0.3]),
            ]),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub replicates: usize,
    pub level: f64,
    pub target_sensitivity: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            replicates: 2000,
            level: 0.95,
            target_sensitivity: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSection {
    pub family: Family,
    /// Test rows explained, in file order.
    pub rows: usize,
    pub background_cap: usize,
    pub max_features: usize,
    pub ale_bins: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            family: Family::Gbdt,
            rows: 10,
            background_cap: crate::explain::DEFAULT_BACKGROUND_CAP,
            max_features: crate::explain::DEFAULT_MAX_FEATURES,
            ale_bins: crate::explain::DEFAULT_ALE_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub family: Family,
    pub replicates: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            family: Family::Gbdt,
            replicates: 20,
        }
    }
}

impl PipelineConfig {
    /// Parses a config file. Parse failures, unknown keys included, are
    /// configuration errors.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.input, &mut cfg.creatinine].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_none() && self.synth.is_none() {
            return Err(Error::Config(
                "either `input` or a `synth` section is required".into(),
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction {} must lie in (0, 1)",
                self.test_fraction
            )));
        }
        if self.models.families.is_empty() {
            return Err(Error::Config("models.families is empty".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_omitted_sections() {
        let cfg = PipelineConfig::from_json(r#"{"synth": {"n_rows": 50}}"#).unwrap();
        assert_eq!(cfg.models.families.len(), 4);
        assert_eq!(cfg.eval.replicates, 2000);
        assert_eq!(cfg.synth.unwrap().prevalence, 0.27);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = PipelineConfig::from_json(r#"{"synth": {}, "smoot": {}}"#).unwrap_err();
        assert!(err.to_string().contains("smoot"));
        assert_eq!(err.class().exit_code(), 2);
        let nested = PipelineConfig::from_json(r#"{"synth": {}, "smote": {"k": 3}}"#).unwrap_err();
        assert!(nested.to_string().contains("`k`"));
    }

    #[test]
    fn grids_keep_axis_order() {
        let cfg = PipelineConfig::from_json(
            r#"{"synth": {}, "models": {"grids": {"gbdt": {"grid": {"max_leaves": [4, 8], "n_trees": [10]}}}}}"#,
        )
        .unwrap();
        let g = cfg.models.grid_for(Family::Gbdt);
        assert_eq!(g.grid.0[0].0, "max_leaves");
        assert_eq!(
            cfg.models.grid_for(Family::Logistic),
            default_grid(Family::Logistic)
        );
    }

    #[test]
    fn input_or_synth_required() {
        assert!(PipelineConfig::from_json("{}").is_err());
    }
}
