//! CSV and JSON metric reports. Column order is fixed (see the `*_COLUMNS`
//! constants); every float is written with 9 significant digits.
//!
//! Files written by [`write_reports`]:
//!
//! - `metrics_causal.csv`: one row per image with evidence, [`CAUSAL_COLUMNS`].
//! - `metrics_records.csv`: one row per evidence record, [`RECORD_COLUMNS`].
//! - `metrics_localization.csv`: one row per aligned ground-truth pair,
//!   [`LOCALIZATION_COLUMNS`]; only when ground-truth masks were supplied.
//! - `metrics.json`: summaries plus the same rows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{
    aggregate_image, align_concepts, epg, hit_rate, mask_to_activation, normalized_importance, nra, MetricsError,
};
use crate::adapters::TextEmbedder;
use crate::domain::{BinaryMask, EvidenceRecord};
use crate::engine::RunResult;

pub const CAUSAL_COLUMNS: [&str; 6] = ["image_id", "predicted_class", "n_records", "adp", "mdp", "mad"];
pub const RECORD_COLUMNS: [&str; 12] = [
    "evidence_id",
    "image_id",
    "concept",
    "predicted_class",
    "s",
    "s_i",
    "contribution",
    "mask_area",
    "cdp",
    "logit_delta",
    "pct_logit_drop",
    "normalized_importance",
];
pub const LOCALIZATION_COLUMNS: [&str; 7] =
    ["image_id", "gt_label", "concept", "evidence_id", "similarity", "epg", "nra"];

pub const CAUSAL_CSV: &str = "metrics_causal.csv";
pub const RECORDS_CSV: &str = "metrics_records.csv";
pub const LOCALIZATION_CSV: &str = "metrics_localization.csv";
pub const METRICS_JSON: &str = "metrics.json";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("run {0:?} has no evidence records; nothing to report")]
    EmptyRun(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot load the mask of evidence {evidence_id}: {message}")]
    Mask { evidence_id: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed,
/// scientific notation outside `1e-4 <= |x| < 1e9`.
pub fn sig9(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}


/// `x` rounded to 9 significant digits, as a JSON number (null when not
/// finite).
pub fn json9(x: f64) -> Value {
    sig9(x)
        .parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map_or(Value::Null, Value::Number)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalRow {
    pub image_id: String,
    pub predicted_class: String,
    pub n_records: usize,
    pub adp: f64,
    pub mdp: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationRow {
    pub image_id: String,
    pub gt_label: String,
    pub concept: String,
    pub evidence_id: String,
    pub similarity: f64,
    pub epg: f64,
    pub nra: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub rows: Vec<LocalizationRow>,
    /// Ground-truth labels on images with evidence.
    pub n_gt_labels: usize,
    /// Pairs dropped by the minimum-similarity filter.
    pub n_below_similarity: usize,
    /// Pairs whose NRA is undefined (empty or full ground truth).
    pub n_undefined: usize,
    pub mean_epg: Option<f64>,
    pub mean_nra: Option<f64>,
    pub hit_rate: Option<f64>,
    pub min_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub run_id: String,
    pub n_images: usize,
    pub n_failed_images: usize,
    pub causal: Vec<CausalRow>,
    pub records: Vec<EvidenceRecord>,
    pub area_floor_pct: f64,
    pub mean_adp: f64,
    pub mean_mdp: f64,
    pub mean_mad: f64,
    pub localization: Option<LocalizationReport>,
}

/// What localization needs beyond the run itself.
pub struct LocalizationInput<'a> {
    /// Ground-truth masks by image id, then label.
    pub gt_masks: &'a BTreeMap<String, BTreeMap<String, BinaryMask>>,
    /// Loads the grounding mask of a record.
    pub load_mask: &'a dyn Fn(&EvidenceRecord) -> Result<BinaryMask, String>,
    pub embedder: &'a dyn TextEmbedder,
    pub min_similarity: Option<f64>,
}

fn mean(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

/// Causal metrics for every image with evidence, plus localization when
/// `localization` is given. Images without evidence are left out of every
/// aggregate.
pub fn compute_report(run: &RunResult, localization: Option<LocalizationInput<'_>>) -> Result<MetricsReport, ReportError> {
    let mut causal = Vec::new();
    for img in run.images.iter().filter(|i| !i.records.is_empty()) {
        let agg = aggregate_image(&img.records)?;
        causal.push(CausalRow {
            image_id: img.image_id.clone(),
            predicted_class: img.predicted_class.as_ref().map(|p| p.name.clone()).unwrap_or_default(),
            n_records: agg.n_records,
            adp: agg.adp,
            mdp: agg.mdp,
            mad: agg.mad,
        });
    }
    if causal.is_empty() {
        return Err(ReportError::EmptyRun(run.run_id.clone()));
    }
    let col = |f: fn(&CausalRow) -> f64| mean(causal.iter().map(f).collect()).expect("non-empty");
    let (mean_adp, mean_mdp, mean_mad) = (col(|r| r.adp), col(|r| r.mdp), col(|r| r.mad));
    let localization = localization.map(|input| localize(run, input)).transpose()?;
    Ok(MetricsReport {
        run_id: run.run_id.clone(),
        n_images: run.n_images,
        n_failed_images: run.n_failed_images,
        records: run.records().cloned().collect(),
        area_floor_pct: run.config.area_floor_pct,
        causal,
        mean_adp,
        mean_mdp,
        mean_mad,
        localization,
    })
}

fn localize(run: &RunResult, input: LocalizationInput<'_>) -> Result<LocalizationReport, ReportError> {
    let mut rows = Vec::new();
    let (mut n_gt_labels, mut n_below, mut n_undefined) = (0, 0, 0);
    for img in run.images.iter().filter(|i| !i.records.is_empty()) {
        let Some(gts) = input.gt_masks.get(&img.image_id) else { continue };
        let concepts: Vec<_> = img.records.iter().map(|r| r.concept.clone()).collect();
        for (label, gt) in gts {
            n_gt_labels += 1;
            let pair = align_concepts(&concepts, label, input.embedder)?;
            if !pair.passes(input.min_similarity) {
                n_below += 1;
                continue;
            }
            let record = img
                .records
                .iter()
                .find(|r| r.concept == pair.predicted_concept)
                .expect("aligned concept comes from the records");
            let mask = (input.load_mask)(record).map_err(|message| ReportError::Mask {
                evidence_id: record.evidence_id.clone(),
                message,
            })?;
            let gt = if gt.same_shape(&mask) {
                gt.clone()
            } else {
                gt.resize_nearest(mask.height(), mask.width()).map_err(|e| ReportError::Mask {
                    evidence_id: record.evidence_id.clone(),
                    message: e.to_string(),
                })?
            };
            let map = mask_to_activation(&mask);
            let nra_value = match nra(&map, &gt) {
                Ok(v) => v,
                Err(MetricsError::EmptyGroundTruth | MetricsError::DegenerateBaseline) => {
                    n_undefined += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            rows.push(LocalizationRow {
                image_id: img.image_id.clone(),
                gt_label: label.clone(),
                concept: record.concept.as_str().to_string(),
                evidence_id: record.evidence_id.clone(),
                similarity: pair.similarity,
                epg: epg(&map, &gt)?,
                nra: nra_value,
            });
        }
    }
    let nras: Vec<f64> = rows.iter().map(|r| r.nra).collect();
    Ok(LocalizationReport {
        mean_epg: mean(rows.iter().map(|r| r.epg).collect()),
        mean_nra: mean(nras.clone()),
        hit_rate: hit_rate(&nras).ok(),
        rows,
        n_gt_labels,
        n_below_similarity: n_below,
        n_undefined,
        min_similarity: input.min_similarity,
    })
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

impl MetricsReport {
    pub fn causal_csv(&self) -> Vec<u8> {
        csv_bytes(
            &CAUSAL_COLUMNS,
            self.causal.iter().map(|r| {
                vec![
                    r.image_id.clone(),
                    r.predicted_class.clone(),
                    r.n_records.to_string(),
                    sig9(r.adp),
                    sig9(r.mdp),
                    sig9(r.mad),
                ]
            }),
        )
    }

    pub fn records_csv(&self) -> Vec<u8> {
        csv_bytes(
            &RECORD_COLUMNS,
            self.records.iter().map(|r| {
                vec![
                    r.evidence_id.clone(),
                    r.image_id.clone(),
                    r.concept.as_str().to_string(),
                    r.predicted_class.name.clone(),
                    sig9(r.s),
                    sig9(r.s_i),
                    sig9(r.contribution),
                    sig9(r.mask_area),
                    sig9(r.cdp),
                    sig9(r.logit_delta),
                    sig9(r.pct_logit_drop),
                    sig9(normalized_importance(r, self.area_floor_pct)),
                ]
            }),
        )
    }

    pub fn localization_csv(&self) -> Option<Vec<u8>> {
        let loc = self.localization.as_ref()?;
        Some(csv_bytes(
            &LOCALIZATION_COLUMNS,
            loc.rows.iter().map(|r| {
                vec![
                    r.image_id.clone(),
                    r.gt_label.clone(),
                    r.concept.clone(),
                    r.evidence_id.clone(),
                    sig9(r.similarity),
                    sig9(r.epg),
                    sig9(r.nra),
                ]
            }),
        ))
    }

    pub fn to_json(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(Value::Null, json9);
        let causal_rows: Vec<Value> = self
            .causal
            .iter()
            .map(|r| {
                json!({
                    "image_id": r.image_id,
                    "predicted_class": r.predicted_class,
                    "n_records": r.n_records,
                    "adp": json9(r.adp),
                    "mdp": json9(r.mdp),
                    "mad": json9(r.mad),
                })
            })
            .collect();
        let mut doc = json!({
            "run_id": self.run_id,
            "n_images": self.n_images,
            "n_failed_images": self.n_failed_images,
            "n_scored_images": self.causal.len(),
            "n_records": self.records.len(),
            "causal": {
                "columns": CAUSAL_COLUMNS,
                "mean_adp": json9(self.mean_adp),
                "mean_mdp": json9(self.mean_mdp),
                "mean_mad": json9(self.mean_mad),
                "images": causal_rows,
            },
        });
        if let Some(loc) = &self.localization {
            let rows: Vec<Value> = loc
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "image_id": r.image_id,
                        "gt_label": r.gt_label,
                        "concept": r.concept,
                        "evidence_id": r.evidence_id,
                        "similarity": json9(r.similarity),
                        "epg": json9(r.epg),
                        "nra": json9(r.nra),
                    })
                })
                .collect();
            doc["localization"] = json!({
                "columns": LOCALIZATION_COLUMNS,
                "n_gt_labels": loc.n_gt_labels,
                "n_pairs": loc.rows.len(),
                "n_below_similarity": loc.n_below_similarity,
                "n_undefined": loc.n_undefined,
                "min_similarity": opt(loc.min_similarity),
                "mean_epg": opt(loc.mean_epg),
                "mean_nra": opt(loc.mean_nra),
                "hit_rate": opt(loc.hit_rate),
                "pairs": rows,
            });
        }
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Writes every report file into `dir`, returning the paths written.
pub fn write_reports(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let io = |path: &Path, e: std::io::Error| ReportError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut files = vec![
        (CAUSAL_CSV, report.causal_csv()),
        (RECORDS_CSV, report.records_csv()),
        (METRICS_JSON, report.to_json().into_bytes()),
    ];
    if let Some(loc) = report.localization_csv() {
        files.push((LOCALIZATION_CSV, loc));
    }
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::adapters::TokenEmbedder;
    use crate::domain::{normalize_concept, Intervention, PredictedClass, RunConfig};
    use crate::engine::{Counters, ImageOutcome};

    fn run() -> RunResult {
        let config = RunConfig::default();
        let rec = |img: &str, concept: &str, s_i: f64| {
            let c = normalize_concept(concept).unwrap();
            EvidenceRecord::new(
                &config,
                Intervention {
                    image_id: img,
                    concept: &c,
                    predicted_class: PredictedClass {
                        index: 0,
                        name: "A".into(),
                    },
                    s: 0.8,
                    s_i,
                    mask_area: 25.0,
                    mask_ref: format!("{img}/{concept}"),
                    edited_image_ref: String::new(),
                },
            )
        };
        let outcome = |id: &str, records: Vec<EvidenceRecord>| ImageOutcome {
            image_id: id.into(),
            failure: None,
            gt_class: None,
            predicted_class: Some(PredictedClass {
                index: 0,
                name: "A".into(),
            }),
            s: Some(0.8),
            original_ref: None,
            records,
            discarded: vec![],
            counters: Counters::default(),
        };
        RunResult::from_outcomes(
            &config,
            vec![
                outcome("a", vec![rec("a", "left, part", 0.4), rec("a", "right", 0.6)]),
                outcome("b", vec![]),
            ],
        )
    }

    #[test]
    fn causal_report_rows_and_columns() {
        let report = compute_report(&run(), None).unwrap();
        assert_eq!(report.causal.len(), 1);
        assert!(report.localization.is_none());
        let csv = String::from_utf8(report.causal_csv()).unwrap();
        // cdp 50 and 25, shifted by the epsilon in the denominator.
        assert_eq!(csv, "image_id,predicted_class,n_records,adp,mdp,mad\na,A,2,37.4999995,49.9999994,1.79175947\n");
        let records = String::from_utf8(report.records_csv()).unwrap();
        assert!(records.contains("\"left, part\""));
        assert_eq!(records.lines().next().unwrap(), RECORD_COLUMNS.join(","));
        let doc: Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(doc["causal"]["mean_adp"], json!(37.4999995));
        assert!(doc.get("localization").is_none());
    }

    #[test]
    fn empty_run_is_an_error() {
        let run = RunResult::from_outcomes(&RunConfig::default(), vec![]);
        assert!(matches!(compute_report(&run, None), Err(ReportError::EmptyRun(_))));
    }

    #[test]
    fn localization_aligns_and_scores_pairs() {
        let run = run();
        let left = BinaryMask::from_fn(4, 4, |_, c| c < 2).unwrap();
        let right = BinaryMask::from_fn(4, 4, |_, c| c >= 2).unwrap();
        let mut gts = BTreeMap::new();
        gts.insert(
            "a".to_string(),
            BTreeMap::from([("right".to_string(), right.clone()), ("left part".to_string(), left.clone())]),
        );
        let load = |r: &EvidenceRecord| -> Result<BinaryMask, String> {
            Ok(if r.concept.as_str() == "right" { right.clone() } else { left.clone() })
        };
        let embedder = TokenEmbedder::default();
        let input = LocalizationInput {
            gt_masks: &gts,
            load_mask: &load,
            embedder: &embedder,
            min_similarity: None,
        };
        let report = compute_report(&run, Some(input)).unwrap();
        let loc = report.localization.as_ref().unwrap();
        assert_eq!(loc.rows.len(), 2);
        for r in &loc.rows {
            assert_eq!(r.epg, 1.0);
            assert!((r.nra - 1.0).abs() < 1e-9);
        }
        assert_eq!(loc.hit_rate, Some(1.0));
        assert!(report.localization_csv().is_some());
    }

    #[test]
    fn json9_rounds_to_nine_digits() {
        assert_eq!(json9(1.0 / 3.0).to_string(), "0.333333333");
        assert_eq!(json9(f64::NAN), Value::Null);
    }

    #[test]
    fn sig9_matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (50.0, "50"),
            (1.0 / 3.0, "0.333333333"),
            (-2.772588722239781, "-2.77258872"),
            (123456789.4, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.00001234, "1.234e-05"),
            (0.0001234, "0.0001234"),
            (99.99999999999, "100"),
            (-0.0, "0"),
        ];
        for (x, want) in cases {
            assert_eq!(sig9(x), want, "{x}");
        }
    }
}
