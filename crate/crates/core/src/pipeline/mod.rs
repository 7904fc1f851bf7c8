//! Stage orchestration through a fixed artifact directory.
//!
//! Each stage reads the files earlier stages wrote and records a content
//! hash of its inputs and outputs in `stages.json`. A stage whose inputs,
//! settings and outputs are unchanged is skipped. [`Pipeline::run`] is the
//! same sequence of calls as running the stages one by one.
//!
//! Layout (version [`LAYOUT_VERSION`]):
//!
//! | path | written by |
//! |---|---|
//! | `synth/cohort.csv`, `synth/truth.json` | `synth` |
//! | `cohort/dataset.json`, `cohort/funnel.json` | `cohort` |
//! | `preprocess/split.json`, `preprocess/manifest.json`, `preprocess/dataset.json` | `preprocess` |
//! | `select/selection.json`, `select/outcome_audit.json`, `select/dataset.json` | `select` |
//! | `models/<family>.json`, `models/<family>.tuning.json` | `train` |
//! | `eval/metrics.json`, `eval/metrics.csv`, `eval/roc_<family>.csv` | `evaluate` |
//! | `explain/shap.csv`, `explain/ranking.csv`, `explain/ale_<feature>.csv` | `explain` |
//! | `ablation/ablation.csv`, `ablation/ablation.json` | `ablate` |
//! | `report/*.svg` | `report` |

pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub use config::{default_grid, FamilyGrid, PipelineConfig};

use crate::balance::{smote, SmoteConfig};
use crate::cohort::{
    apply_funnel, attach_creatinine, derive_labels, load_cohort, load_creatinine_sidecar,
    to_dataset,
};
use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::eval::{ablation_study, evaluate_scores, AblationConfig, EvalConfig, MetricsReport};
use crate::explain::{ale_curve, shapley_batch, AleCurve};
use crate::models::{fit, stratified_split, tune, Family, SplitSpec, TrainedModel, TuneResult};
use crate::preprocess::{fit_transform, PreprocessManifest};
use crate::rng::derive_seed;
use crate::select::{
    compare_groups, fit_lasso_path, lasso::default_grid as lambda_path, select_features,
    SelectionReport,
};
use crate::synth::{generate, write_cohort_csv};

pub const LAYOUT_VERSION: u32 = 1;

pub const SYNTH_CSV: &str = "synth/cohort.csv";
pub const SYNTH_TRUTH: &str = "synth/truth.json";
pub const COHORT_DATASET: &str = "cohort/dataset.json";
pub const COHORT_FUNNEL: &str = "cohort/funnel.json";
pub const SPLIT: &str = "preprocess/split.json";
pub const MANIFEST: &str = "preprocess/manifest.json";
pub const PREPROCESSED: &str = "preprocess/dataset.json";
pub const SELECTION: &str = "select/selection.json";
pub const OUTCOME_AUDIT: &str = "select/outcome_audit.json";
pub const SELECTED: &str = "select/dataset.json";
pub const METRICS_JSON: &str = "eval/metrics.json";
pub const METRICS_CSV: &str = "eval/metrics.csv";
pub const SHAP_CSV: &str = "explain/shap.csv";
pub const SHAP_RANKING: &str = "explain/ranking.csv";
pub const ABLATION_CSV: &str = "ablation/ablation.csv";
pub const ABLATION_JSON: &str = "ablation/ablation.json";
pub const STAGES: &str = "stages.json";

pub fn model_path(family: Family) -> String {
    format!("models/{family}.json")
}

pub fn tuning_path(family: Family) -> String {
    format!("models/{family}.tuning.json")
}

pub fn roc_path(family: Family) -> String {
    format!("eval/roc_{family}.csv")
}

/// File-name-safe form of a feature name.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_hash: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub layout_version: u32,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for StageLog {
    fn default() -> Self {
        Self {
            layout_version: LAYOUT_VERSION,
            stages: BTreeMap::new(),
        }
    }
}

/// Whether a stage did work or was satisfied by existing outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
}

fn tag(stage: &str, e: Error) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: stage.to_string(),
            source: Box::new(other),
        },
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &serde_json::to_string_pretty(value)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            config,
            out_dir: out_dir.into(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    /// Path of an output file, with its directory created.
    fn out(&self, rel: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        ensure_parent(&path)?;
        Ok(path)
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.config.seed, label, 0)
    }

    fn load_log(&self) -> StageLog {
        let path = self.path(STAGES);
        match read_json::<StageLog>(&path) {
            Ok(log) if log.layout_version == LAYOUT_VERSION => log,
            _ => StageLog::default(),
        }
    }

    /// Runs `body` unless the recorded input hash matches and every recorded
    /// output is still present with the recorded hash. Missing inputs are
    /// reported by path before any work starts.
    fn stage(
        &self,
        name: &str,
        settings: serde_json::Value,
        inputs: &[PathBuf],
        body: impl FnOnce() -> Result<Vec<String>>,
    ) -> Result<StageOutcome> {
        let run = || -> Result<StageOutcome> {
            let mut h = Sha256::new();
            h.update(name.as_bytes());
            h.update(serde_json::to_string(&settings)?.as_bytes());
            h.update(self.config.seed.to_le_bytes());
            for p in inputs {
                if !p.exists() {
                    return Err(Error::MissingArtifact(p.clone()));
                }
                h.update(sha256_file(p)?.as_bytes());
            }
            let input_hash = hex::encode(h.finalize());
            let mut log = self.load_log();
            if let Some(rec) = log.stages.get(name) {
                let fresh = rec.input_hash == input_hash
                    && rec.outputs.iter().all(|(rel, hash)| {
                        sha256_file(&self.path(rel))
                            .map(|h| &h == hash)
                            .unwrap_or(false)
                    });
                if fresh {
                    log::info!("stage {name}: inputs unchanged, skipping");
                    return Ok(StageOutcome::Skipped);
                }
            }
            log::info!("stage {name}: running");
            let outputs = body()?;
            let mut hashes = BTreeMap::new();
            for rel in outputs {
                let hash = sha256_file(&self.path(&rel))?;
                hashes.insert(rel, hash);
            }
            log.stages.insert(
                name.to_string(),
                StageRecord {
                    input_hash,
                    outputs: hashes,
                },
            );
            write_json(&self.path(STAGES), &log)?;
            Ok(StageOutcome::Ran)
        };
        run().map_err(|e| tag(name, e))
    }

    /// Writes the synthetic cohort and its planted model.
    pub fn synth(&self) -> Result<StageOutcome> {
        let spec = self.config.synth.clone().ok_or_else(|| {
            tag(
                "synth",
                Error::Config("no `synth` section in the config".into()),
            )
        })?;
        let spec = crate::synth::SynthSpec {
            seed: derive_seed(self.config.seed, "synth", spec.seed),
            ..spec
        };
        self.stage("synth", json!(spec), &[], || {
            let (table, truth) = generate(&spec)?;
            write_cohort_csv(&table, &self.out(SYNTH_CSV)?)?;
            truth.save(&self.out(SYNTH_TRUTH)?)?;
            Ok(vec![SYNTH_CSV.into(), SYNTH_TRUTH.into()])
        })
    }

    fn input_csv(&self) -> PathBuf {
        self.config
            .input
            .clone()
            .unwrap_or_else(|| self.path(SYNTH_CSV))
    }

    /// Funnel, labels and the raw modelling table.
    pub fn cohort(&self) -> Result<StageOutcome> {
        let c = &self.config;
        let mut inputs = vec![self.input_csv()];
        inputs.extend(c.creatinine.clone());
        let settings = json!({"schema": c.schema, "funnel": c.funnel, "label": c.label, "flags": c.flag_features});
        self.stage("cohort", settings, &inputs, || {
            let mut table = load_cohort(&inputs[0], &c.schema)?;
            if let Some(side) = &c.creatinine {
                attach_creatinine(&mut table, &load_creatinine_sidecar(side)?);
            }
            let kept = apply_funnel(&table, &c.funnel);
            let labels = derive_labels(&kept, &c.label)?;
            let flags: Vec<String> = c
                .flag_features
                .iter()
                .filter(|f| kept.feature_columns.contains(f))
                .cloned()
                .collect();
            let ds = to_dataset(&kept, labels, &flags)?;
            write_json(&self.path(COHORT_FUNNEL), &kept.provenance)?;
            ds.save_json(&self.out(COHORT_DATASET)?)?;
            Ok(vec![COHORT_DATASET.into(), COHORT_FUNNEL.into()])
        })
    }

    /// Stratified split, then missingness filter, flags, imputation and
    /// scaling fitted on the training rows.
    pub fn preprocess(&self) -> Result<StageOutcome> {
        let c = &self.config;
        let settings = json!({"test_fraction": c.test_fraction, "preprocess": c.preprocess});
        self.stage("preprocess", settings, &[self.path(COHORT_DATASET)], || {
            let raw = Dataset::load_json(&self.path(COHORT_DATASET))?;
            let split = stratified_split(&raw.labels, 1.0 - c.test_fraction, self.seed("split"))?;
            let tagged = raw.with_tags(&split.train_indices, &split.test_indices);
            let (ds, manifest) = fit_transform(&tagged, &c.preprocess)?;
            write_json(&self.path(SPLIT), &split)?;
            manifest.save(&self.out(MANIFEST)?)?;
            ds.save_json(&self.out(PREPROCESSED)?)?;
            Ok(vec![SPLIT.into(), MANIFEST.into(), PREPROCESSED.into()])
        })
    }

    /// LASSO path with cross-validation on the training rows, plus Welch
    /// audits of train against test and outcome groups on raw values.
    pub fn select(&self) -> Result<StageOutcome> {
        let c = &self.config;
        let inputs = [
            self.path(PREPROCESSED),
            self.path(MANIFEST),
            self.path(COHORT_DATASET),
            self.path(SPLIT),
        ];
        self.stage("select", json!(c.select), &inputs, || {
            let ds = Dataset::load_json(&self.path(PREPROCESSED))?;
            let manifest = PreprocessManifest::load(&self.path(MANIFEST))?;
            let split: SplitSpec = read_json(&self.path(SPLIT))?;
            let grid = lambda_path(&ds, &c.select.lasso);
            let fit = fit_lasso_path(
                &ds,
                &grid,
                c.select.lasso.folds,
                self.seed("select"),
                &c.select.lasso,
            )?;
            let selected = select_features(&fit, c.select.allowlist.as_deref())?;

            let raw = Dataset::load_json(&self.path(COHORT_DATASET))?
                .select_named(&ds.feature_names())?;
            let split_audit = compare_groups(&raw, &split.train_indices, &split.test_indices)?;
            let pos: Vec<usize> = (0..raw.n_rows()).filter(|&i| raw.labels[i] == 1).collect();
            let neg: Vec<usize> = (0..raw.n_rows()).filter(|&i| raw.labels[i] == 0).collect();
            let outcome_audit = compare_groups(&raw, &pos, &neg)?;

            let report =
                SelectionReport::build(&fit, selected.clone(), &manifest.dropped, split_audit);
            report.save(&self.out(SELECTION)?)?;
            write_json(&self.path(OUTCOME_AUDIT), &outcome_audit)?;
            ds.select_named(&selected)?
                .save_json(&self.out(SELECTED)?)?;
            Ok(vec![
                SELECTION.into(),
                OUTCOME_AUDIT.into(),
                SELECTED.into(),
            ])
        })
    }

    fn smote_config(&self, label: &str) -> Option<SmoteConfig> {
        let s = &self.config.smote;
        s.enabled.then(|| SmoteConfig {
            k_neighbors: s.k_neighbors,
            target_ratio: s.target_ratio,
            seed: self.seed(label),
        })
    }

    /// Grid search on the training rows (SMOTE inside each fold), then a
    /// final fit on the balanced training rows.
    pub fn train(&self, family: Family) -> Result<StageOutcome> {
        let c = &self.config;
        let grid = c.models.grid_for(family);
        let settings = json!({"grid": grid, "cv_folds": c.models.cv_folds, "smote": c.smote});
        let name = format!("train:{family}");
        self.stage(
            &name,
            settings,
            &[self.path(SELECTED), self.path(MANIFEST)],
            || {
                let ds = Dataset::load_json(&self.path(SELECTED))?;
                let train = ds.select_rows(&ds.train_indices());
                let balance = self.smote_config("smote");
                let tuned = tune(
                    &train,
                    family,
                    &grid.base,
                    &grid.grid,
                    c.models.cv_folds,
                    balance.as_ref(),
                    derive_seed(c.seed, "tune", family as u64),
                )?;
                let fit_rows = match &balance {
                    Some(cfg) => smote(&train, cfg)?,
                    None => train,
                };
                let model = fit(family, &fit_rows, &tuned.best)?
                    .with_manifest_hash(sha256_file(&self.path(MANIFEST))?);
                model.save(&self.out(&model_path(family))?)?;
                write_json(&self.path(&tuning_path(family)), &tuned)?;
                Ok(vec![model_path(family), tuning_path(family)])
            },
        )
    }

    /// Test-set metrics for every configured family. All models share one
    /// bootstrap seed, so their intervals use the same resamples.
    pub fn evaluate(&self) -> Result<StageOutcome> {
        let c = &self.config;
        let mut inputs = vec![self.path(SELECTED)];
        inputs.extend(c.models.families.iter().map(|&f| self.path(&model_path(f))));
        let settings = json!({"eval": c.eval, "families": c.models.families});
        self.stage("evaluate", settings, &inputs, || {
            let ds = Dataset::load_json(&self.path(SELECTED))?;
            let test = ds.select_rows(&ds.test_indices());
            let cfg = EvalConfig {
                replicates: c.eval.replicates,
                level: c.eval.level,
                target_sensitivity: c.eval.target_sensitivity,
                seed: self.seed("bootstrap"),
            };
            let mut rows = Vec::new();
            let mut outputs = vec![METRICS_JSON.to_string(), METRICS_CSV.to_string()];
            for &family in &c.models.families {
                let model = TrainedModel::load(&self.path(&model_path(family)))?;
                let scores = model.score(&test)?;
                let (metrics, curve) =
                    evaluate_scores(family.as_str(), &scores, &test.labels, &cfg)?;
                write(&self.path(&roc_path(family)), &curve.to_csv())?;
                outputs.push(roc_path(family));
                rows.push(metrics);
            }
            let report = MetricsReport::new(rows, &cfg);
            write(&self.path(METRICS_JSON), &report.to_json()?)?;
            write(&self.path(METRICS_CSV), &report.to_table_csv())?;
            Ok(outputs)
        })
    }

    /// Exact Shapley values for the first test rows against a training
    /// background, and ALE curves for every continuous feature.
    pub fn explain(&self) -> Result<StageOutcome> {
        let c = &self.config;
        let e = &c.explain;
        let inputs = [self.path(SELECTED), self.path(&model_path(e.family))];
        self.stage("explain", json!(e), &inputs, || {
            let ds = Dataset::load_json(&self.path(SELECTED))?;
            let model = TrainedModel::load(&self.path(&model_path(e.family)))?;
            if model.feature_names != ds.feature_names() {
                return Err(Error::Scoring(
                    "model features differ from the selected dataset".into(),
                ));
            }
            let test_rows: Vec<usize> = ds.test_indices().into_iter().take(e.rows).collect();
            let rows = ds.select_rows(&test_rows);
            let background = ds.select_rows(&ds.train_indices());
            let batch = shapley_batch(
                &model,
                &rows,
                &background,
                e.max_features,
                e.background_cap,
                self.seed("explain"),
            )?;
            write(&self.path(SHAP_CSV), &batch.to_csv())?;
            let mut ranking = String::from("rank,feature,mean_abs_phi\n");
            for (k, r) in batch.ranking.iter().enumerate() {
                ranking.push_str(&format!("{},{},{}\n", k + 1, r.feature, r.mean_abs_phi));
            }
            write(&self.path(SHAP_RANKING), &ranking)?;
            let mut outputs = vec![SHAP_CSV.to_string(), SHAP_RANKING.to_string()];
            for (j, meta) in background.meta.iter().enumerate() {
                if meta.kind != FeatureKind::Continuous {
                    continue;
                }
                let curve: AleCurve = match ale_curve(&model, &background, j, e.ale_bins) {
                    Ok(curve) => curve,
                    Err(Error::DegenerateFeature(name)) => {
                        log::warn!("ALE skipped for constant feature {name}");
                        continue;
                    }
                    Err(other) => return Err(other),
                };
                let rel = format!("explain/ale_{}.csv", slug(&meta.name));
                write(&self.path(&rel), &curve.to_csv())?;
                outputs.push(rel);
            }
            Ok(outputs)
        })
    }

    /// Leave-one-feature-out refits with the tuned hyperparameters.
    pub fn ablate(&self) -> Result<StageOutcome> {
        let c = &self.config;
        let family = c.ablation.family;
        let inputs = [self.path(SELECTED), self.path(&model_path(family))];
        self.stage("ablate", json!(c.ablation), &inputs, || {
            let ds = Dataset::load_json(&self.path(SELECTED))?;
            let model = TrainedModel::load(&self.path(&model_path(family)))?;
            let cfg = AblationConfig {
                replicates: c.ablation.replicates,
                seed: self.seed("ablation"),
            };
            let result = ablation_study(&ds, family, &model.hyperparams, &cfg)?;
            write(&self.path(ABLATION_CSV), &result.to_csv())?;
            write_json(&self.path(ABLATION_JSON), &result)?;
            Ok(vec![ABLATION_CSV.into(), ABLATION_JSON.into()])
        })
    }

    pub fn report(&self) -> Result<StageOutcome> {
        let inputs = report_inputs(&self.out_dir).map_err(|e| tag("report", e))?;
        self.stage("report", json!(null), &inputs, || {
            let written = render_report(&self.out_dir)?;
            Ok(written
                .iter()
                .map(|p| {
                    p.strip_prefix(&self.out_dir)
                        .unwrap_or(p)
                        .to_string_lossy()
                        .into_owned()
                })
                .collect())
        })
    }

    /// Every stage in order, stopping at the first failure. Artifacts of
    /// the stages that finished stay on disk.
    pub fn run(&self) -> Result<()> {
        if self.config.input.is_none() {
            self.synth()?;
        }
        self.cohort()?;
        self.preprocess()?;
        self.select()?;
        for &family in &self.config.models.families {
            self.train(family)?;
        }
        self.evaluate()?;
        self.explain()?;
        self.ablate()?;
        self.report()?;
        Ok(())
    }

    pub fn tuning(&self, family: Family) -> Result<TuneResult> {
        read_json(&self.path(&tuning_path(family)))
    }
}

fn read_table(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    let headers = reader.headers()?.clone();
    reader
        .records()
        .map(|r| {
            Ok(headers
                .iter()
                .map(String::from)
                .zip(r?.iter().map(String::from))
                .collect())
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<f64> {
    let raw = row.get(key).ok_or_else(|| Error::Schema {
        column: key.to_string(),
    })?;
    if raw == "NA" {
        return Ok(f64::NAN);
    }
    raw.parse().map_err(|_| {
        Error::Config(format!(
            "{}: `{key}` value {raw:?} is not a number",
            path.display()
        ))
    })
}

fn files_with(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    name.starts_with(prefix) && name.ends_with(".csv")
                })
                .collect()
        })
        .unwrap_or_default();
    found.sort();
    found
}

/// Inputs the report reads: every ROC curve, the ablation table, ALE curves
/// and SHAP data when present.
pub fn report_inputs(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rocs = files_with(&out_dir.join("eval"), "roc_");
    if rocs.is_empty() {
        return Err(Error::MissingArtifact(
            out_dir.join("eval/roc_<family>.csv"),
        ));
    }
    let ablation = out_dir.join(ABLATION_CSV);
    if !ablation.exists() {
        return Err(Error::MissingArtifact(ablation));
    }
    let mut inputs = rocs;
    inputs.push(ablation);
    inputs.extend(files_with(&out_dir.join("explain"), "ale_"));
    let shap = out_dir.join(SHAP_CSV);
    if shap.exists() {
        inputs.push(shap);
    }
    Ok(inputs)
}

/// Renders ROC, ablation, ALE and SHAP summary figures from the CSVs under
/// `out_dir` into `out_dir/report`. Returns the files written.
pub fn render_report(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let inputs = report_inputs(out_dir)?;
    let report = out_dir.join("report");
    std::fs::create_dir_all(&report).map_err(|e| Error::io(&report, e))?;
    let mut written = Vec::new();
    let stem = |p: &Path, prefix: &str| -> String {
        p.file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("")
            .trim_start_matches(prefix)
            .to_string()
    };

    let mut roc_series = Vec::new();
    for p in inputs
        .iter()
        .filter(|p| p.starts_with(out_dir.join("eval")))
    {
        let pts = read_table(p)?
            .iter()
            .map(|r| Ok((num(r, "fpr", p)?, num(r, "tpr", p)?)))
            .collect::<Result<Vec<_>>>()?;
        roc_series.push((stem(p, "roc_"), pts));
    }
    roc_series.push(("chance".into(), vec![(0.0, 0.0), (1.0, 1.0)]));
    let roc = report.join("roc.svg");
    write(
        &roc,
        &svg::line_chart(
            "ROC curves (test set)",
            "false positive rate",
            "true positive rate",
            &roc_series,
        ),
    )?;
    written.push(roc);

    let ablation_path = out_dir.join(ABLATION_CSV);
    let mut bars: Vec<(String, f64)> = read_table(&ablation_path)?
        .iter()
        .map(|r| {
            Ok((
                r.get("feature").cloned().unwrap_or_default(),
                num(r, "delta_auc", &ablation_path)?,
            ))
        })
        .collect::<Result<_>>()?;
    bars.sort_by(|a, b| b.1.total_cmp(&a.1));
    let ablation = report.join("ablation.svg");
    write(
        &ablation,
        &svg::bar_chart("AUROC drop when a feature is removed", "delta AUROC", &bars),
    )?;
    written.push(ablation);

    for p in inputs
        .iter()
        .filter(|p| p.starts_with(out_dir.join("explain")) && p.to_string_lossy().contains("ale_"))
    {
        let feature = stem(p, "ale_");
        let pts = read_table(p)?
            .iter()
            .map(|r| Ok((num(r, "edge", p)?, num(r, "effect", p)?)))
            .collect::<Result<Vec<_>>>()?;
        let svg_path = report.join(format!("ale_{feature}.svg"));
        write(
            &svg_path,
            &svg::line_chart(
                &format!("ALE: {feature}"),
                &feature,
                "centered effect",
                &[(feature.clone(), pts)],
            ),
        )?;
        written.push(svg_path);
    }

    let shap = out_dir.join(SHAP_CSV);
    if shap.exists() {
        let mut by_feature: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for r in read_table(&shap)? {
            let feature = r.get("feature").cloned().unwrap_or_default();
            let point = (num(&r, "phi", &shap)?, num(&r, "value", &shap)?);
            match by_feature.iter_mut().find(|(f, _)| *f == feature) {
                Some((_, pts)) => pts.push(point),
                None => by_feature.push((feature, vec![point])),
            }
        }
        let mean_abs =
            |pts: &[(f64, f64)]| pts.iter().map(|p| p.0.abs()).sum::<f64>() / pts.len() as f64;
        by_feature.sort_by(|a, b| mean_abs(&b.1).total_cmp(&mean_abs(&a.1)));
        let path = report.join("shap_summary.svg");
        write(&path, &svg::beeswarm("Shapley attributions", &by_feature))?;
        written.push(path);
    }
    Ok(written)
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
