//! Patient-stay ingestion, the inclusion/exclusion funnel and the creatinine
//! elevation label.
//!
//! The input is one CSV row per ICU stay. Required columns are `stay_id`,
//! `subject_id`, `age`, `icu_los_hours`, `admission_seq` and `icd_codes`
//! (semicolon-joined, undotted). An optional `label` column carries a
//! precomputed outcome; optional `cr_t_<i>`/`cr_v_<i>` column pairs carry a
//! creatinine series (hours from admission, mg/dL). Every other column is a
//! raw numeric feature; `age` is both a required column and a feature.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind, FeatureMeta, SplitTag};
use crate::error::{Error, Result};

/// The 16 model features, in the canonical column order.
pub const MODEL_FEATURES: [&str; 16] = [
    "alt",
    "hematocrit",
    "hemoglobin",
    "wbc",
    "anion_gap",
    "admission_weight",
    "albumin",
    "ptt",
    "po2",
    "ph",
    "bilirubin_total",
    "calcium_total",
    "iodine",
    "age",
    "cci",
    "gauge20_outside",
];

pub const REQUIRED_COLUMNS: [&str; 6] = [
    "stay_id",
    "subject_id",
    "age",
    "icu_los_hours",
    "admission_seq",
    "icd_codes",
];

const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayRecord {
    pub stay_id: String,
    pub subject_id: String,
    pub age_years: f64,
    pub icu_los_hours: f64,
    pub admission_seq: u32,
    pub icd_codes: Vec<String>,
    /// `(hours_from_admission, value_mg_dl)`, ascending in time.
    pub creatinine_series: Vec<(f64, f64)>,
    pub raw_features: BTreeMap<String, Option<f64>>,
    /// Precomputed outcome from the input file, if it had one.
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelCount {
    pub stage: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub records: Vec<StayRecord>,
    /// Raw feature columns in file order.
    pub feature_columns: Vec<String>,
    pub provenance: Vec<FunnelCount>,
}

/// Maps canonical column names to the headers used in a particular file.
/// Columns not mentioned are expected under their canonical name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSchema {
    #[serde(default)]
    pub rename: BTreeMap<String, String>,
}

impl CohortSchema {
    fn canonical(&self, header: &str) -> String {
        self.rename
            .iter()
            .find(|(_, h)| h.as_str() == header)
            .map(|(c, _)| c.clone())
            .unwrap_or_else(|| header.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunnelConfig {
    pub min_los_hours: f64,
    pub min_age: f64,
    pub max_age: f64,
    pub include_prefixes: Vec<String>,
    pub exclude_prefixes: Vec<String>,
}

impl Default for FunnelConfig {
    fn default() -> Self {
        Self {
            min_los_hours: 48.0,
            min_age: 18.0,
            max_age: 80.0,
            include_prefixes: vec!["K74".into(), "K70".into()],
            exclude_prefixes: vec!["C".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub window_hours: f64,
    pub delta_mg_dl: f64,
    /// When true, a non-empty `label` cell wins over the creatinine rule.
    pub prefer_label_column: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            window_hours: 48.0,
            delta_mg_dl: 0.3,
            prefer_label_column: true,
        }
    }
}

fn is_creatinine_column(name: &str) -> Option<(bool, usize)> {
    let (is_time, rest) = if let Some(r) = name.strip_prefix("cr_t_") {
        (true, r)
    } else if let Some(r) = name.strip_prefix("cr_v_") {
        (false, r)
    } else {
        return None;
    };
    rest.parse().ok().map(|i| (is_time, i))
}

fn is_reserved(name: &str) -> bool {
    matches!(
        name,
        "stay_id" | "subject_id" | "icu_los_hours" | "admission_seq" | "icd_codes" | LABEL_COLUMN
    ) || is_creatinine_column(name).is_some()
}

fn parse_opt(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::Cell {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

fn parse_req(raw: &str, row: usize, column: &str) -> Result<f64> {
    parse_opt(raw, row, column)?.ok_or_else(|| Error::Cell {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Reads a stay-level CSV. Row numbers in errors count data rows from 1.
pub fn load_cohort(path: &Path, schema: &CohortSchema) -> Result<CohortTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::Headers)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{other:?}")),
        })?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| schema.canonical(h))
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    for req in REQUIRED_COLUMNS {
        if col(req).is_none() {
            return Err(Error::Schema {
                column: req.to_string(),
            });
        }
    }
    let idx = |name: &str| col(name).expect("checked above");
    let label_col = col(LABEL_COLUMN);

    let mut creatinine_cols: BTreeMap<usize, (Option<usize>, Option<usize>)> = BTreeMap::new();
    for (c, h) in headers.iter().enumerate() {
        if let Some((is_time, i)) = is_creatinine_column(h) {
            let slot = creatinine_cols.entry(i).or_default();
            if is_time {
                slot.0 = Some(c);
            } else {
                slot.1 = Some(c);
            }
        }
    }
    for (i, (t, v)) in &creatinine_cols {
        if t.is_none() {
            return Err(Error::Schema {
                column: format!("cr_t_{i}"),
            });
        }
        if v.is_none() {
            return Err(Error::Schema {
                column: format!("cr_v_{i}"),
            });
        }
    }

    let feature_columns: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !is_reserved(h))
        .map(|(c, h)| (c, h.clone()))
        .collect();

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (r, result) in reader.records().enumerate() {
        let row = r + 1;
        let rec = result?;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let stay_id = get(idx("stay_id")).trim().to_string();
        if !seen.insert(stay_id.clone()) {
            return Err(Error::DuplicateStay(stay_id));
        }
        let age_years = parse_req(get(idx("age")), row, "age")?;
        let icu_los_hours = parse_req(get(idx("icu_los_hours")), row, "icu_los_hours")?;
        let seq_raw = get(idx("admission_seq"));
        let admission_seq: u32 =
            seq_raw
                .trim()
                .parse()
                .ok()
                .filter(|&s| s >= 1)
                .ok_or_else(|| Error::Cell {
                    row,
                    column: "admission_seq".into(),
                    value: seq_raw.to_string(),
                })?;
        if age_years < 0.0 || icu_los_hours < 0.0 {
            return Err(Error::Cell {
                row,
                column: if age_years < 0.0 {
                    "age"
                } else {
                    "icu_los_hours"
                }
                .into(),
                value: "negative".into(),
            });
        }
        let icd_codes = get(idx("icd_codes"))
            .split(';')
            .map(|c| c.trim().to_string())
            .filter(|c| !c.is_empty())
            .collect();

        let mut creatinine_series = Vec::new();
        for (i, (t, v)) in &creatinine_cols {
            let tc = t.expect("paired");
            let vc = v.expect("paired");
            let tname = format!("cr_t_{i}");
            let vname = format!("cr_v_{i}");
            match (
                parse_opt(get(tc), row, &tname)?,
                parse_opt(get(vc), row, &vname)?,
            ) {
                (Some(t), Some(v)) => {
                    if t < 0.0 {
                        return Err(Error::Cell {
                            row,
                            column: tname,
                            value: get(tc).to_string(),
                        });
                    }
                    creatinine_series.push((t, v));
                }
                (None, None) => {}
                (Some(_), None) => {
                    return Err(Error::Cell {
                        row,
                        column: vname,
                        value: String::new(),
                    })
                }
                (None, Some(_)) => {
                    return Err(Error::Cell {
                        row,
                        column: tname,
                        value: String::new(),
                    })
                }
            }
        }
        creatinine_series.sort_by(|a, b| a.0.total_cmp(&b.0));

        let label = match label_col {
            Some(c) => {
                let raw = get(c).trim();
                match raw {
                    "" => None,
                    "0" => Some(0),
                    "1" => Some(1),
                    _ => {
                        return Err(Error::Cell {
                            row,
                            column: LABEL_COLUMN.into(),
                            value: raw.to_string(),
                        })
                    }
                }
            }
            None => None,
        };

        let mut raw_features = BTreeMap::new();
        for (c, name) in &feature_columns {
            raw_features.insert(name.clone(), parse_opt(get(*c), row, name)?);
        }

        records.push(StayRecord {
            stay_id,
            subject_id: get(idx("subject_id")).trim().to_string(),
            age_years,
            icu_los_hours,
            admission_seq,
            icd_codes,
            creatinine_series,
            raw_features,
            label,
        });
    }

    let count = records.len();
    Ok(CohortTable {
        records,
        feature_columns: feature_columns.into_iter().map(|(_, n)| n).collect(),
        provenance: vec![FunnelCount {
            stage: "input".into(),
            count,
        }],
    })
}

/// Reads a long-format creatinine file with columns `stay_id,hours,value`.
pub fn load_creatinine_sidecar(path: &Path) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_string(),
            })
    };
    let (sc, hc, vc) = (find("stay_id")?, find("hours")?, find("value")?);
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let t = parse_req(rec.get(hc).unwrap_or(""), r + 1, "hours")?;
        let v = parse_req(rec.get(vc).unwrap_or(""), r + 1, "value")?;
        out.entry(rec.get(sc).unwrap_or("").trim().to_string())
            .or_default()
            .push((t, v));
    }
    for series in out.values_mut() {
        series.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}

/// Replaces each record's creatinine series with the sidecar's, when present.
pub fn attach_creatinine(table: &mut CohortTable, series: &BTreeMap<String, Vec<(f64, f64)>>) {
    for rec in &mut table.records {
        if let Some(s) = series.get(&rec.stay_id) {
            rec.creatinine_series = s.clone();
        }
    }
}

fn has_prefix(codes: &[String], prefixes: &[String]) -> bool {
    codes.iter().any(|code| {
        let code = code.replace('.', "").to_ascii_uppercase();
        prefixes
            .iter()
            .any(|p| code.starts_with(&p.replace('.', "").to_ascii_uppercase()))
    })
}

/// Applies the five screening stages in order: length of stay, first stay,
/// age window (inclusive), cirrhosis codes, malignancy exclusion. The
/// provenance is rebuilt from the input size.
pub fn apply_funnel(table: &CohortTable, rules: &FunnelConfig) -> CohortTable {
    type Stage<'a> = (&'static str, Box<dyn Fn(&StayRecord) -> bool + 'a>);
    let stages: Vec<Stage> = vec![
        (
            "icu_los",
            Box::new(|r| r.icu_los_hours >= rules.min_los_hours),
        ),
        ("first_stay", Box::new(|r| r.admission_seq == 1)),
        (
            "age",
            Box::new(|r| r.age_years >= rules.min_age && r.age_years <= rules.max_age),
        ),
        (
            "cirrhosis",
            Box::new(|r| has_prefix(&r.icd_codes, &rules.include_prefixes)),
        ),
        (
            "cancer_exclusion",
            Box::new(|r| !has_prefix(&r.icd_codes, &rules.exclude_prefixes)),
        ),
    ];

    let mut provenance = vec![FunnelCount {
        stage: "input".into(),
        count: table.records.len(),
    }];
    let mut kept: Vec<&StayRecord> = table.records.iter().collect();
    for (name, keep) in &stages {
        kept.retain(|r| keep(r));
        provenance.push(FunnelCount {
            stage: (*name).into(),
            count: kept.len(),
        });
    }
    CohortTable {
        records: kept.into_iter().cloned().collect(),
        feature_columns: table.feature_columns.clone(),
        provenance,
    }
}

/// Absolute slack on the creatinine rise, so that e.g. 1.2 - 0.9 counts as 0.3.
pub const LABEL_TOLERANCE: f64 = 1e-9;

/// 1 iff some pair of measurements at most `window_hours` apart (later minus
/// earlier) rises by at least `delta_mg_dl`.
pub fn kdigo_label(record: &StayRecord, window_hours: f64, delta_mg_dl: f64) -> Result<u8> {
    let series = &record.creatinine_series;
    if series.is_empty() {
        return Err(Error::Label {
            stay_id: record.stay_id.clone(),
            reason: "creatinine series is empty".into(),
        });
    }
    if window_hours <= 0.0 || delta_mg_dl <= 0.0 {
        return Err(Error::Config(
            "label window and delta must be positive".into(),
        ));
    }
    // Sliding-window minimum over all measurements with t in [t_j - w, t_j].
    let n = series.len();
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut hi = 0;
    for j in 0..n {
        let tj = series[j].0;
        while hi < n && series[hi].0 <= tj {
            while let Some(&back) = window.back() {
                if series[back].1 >= series[hi].1 {
                    window.pop_back();
                } else {
                    break;
                }
            }
            window.push_back(hi);
            hi += 1;
        }
        while let Some(&front) = window.front() {
            if series[front].0 < tj - window_hours {
                window.pop_front();
            } else {
                break;
            }
        }
        if let Some(&front) = window.front() {
            if series[j].1 - series[front].1 >= delta_mg_dl - LABEL_TOLERANCE {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Resolves one label per record: the file's label column when present and
/// preferred, otherwise the creatinine rule.
pub fn derive_labels(table: &CohortTable, cfg: &LabelConfig) -> Result<Vec<u8>> {
    table
        .records
        .iter()
        .map(|r| match (cfg.prefer_label_column, r.label) {
            (true, Some(y)) => Ok(y),
            _ => kdigo_label(r, cfg.window_hours, cfg.delta_mg_dl),
        })
        .collect()
}

/// Builds the modelling table. Columns follow file order; names in
/// `flag_features` become binary flags.
pub fn to_dataset(
    table: &CohortTable,
    labels: Vec<u8>,
    flag_features: &[String],
) -> Result<Dataset> {
    let flags: BTreeSet<&str> = flag_features.iter().map(String::as_str).collect();
    let n = table.records.len();
    let p = table.feature_columns.len();
    let mut matrix = Array2::from_elem((n, p), f64::NAN);
    for (i, rec) in table.records.iter().enumerate() {
        for (j, name) in table.feature_columns.iter().enumerate() {
            if let Some(Some(v)) = rec.raw_features.get(name) {
                matrix[[i, j]] = *v;
            }
        }
    }
    let meta = table
        .feature_columns
        .iter()
        .map(|name| {
            let kind = if flags.contains(name.as_str()) {
                FeatureKind::BinaryFlag
            } else {
                FeatureKind::Continuous
            };
            FeatureMeta::new(name.clone(), kind)
        })
        .collect();
    Dataset::with_parts(
        table.records.iter().map(|r| r.stay_id.clone()).collect(),
        matrix,
        labels,
        meta,
        vec![SplitTag::None; n],
        vec![false; n],
    )
}
