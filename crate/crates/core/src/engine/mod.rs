//! Per-image intervention pipeline and the dataset runner.
//!
//! Each concept is removed independently from the original image; `s_i`
//! is always read at the original argmax. Artifacts are written under
//! `<output>/runs/<run_id>/` and referenced relative to that directory.

mod artifacts;

pub use artifacts::{ArtifactStore, RUN_MANIFEST};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterError, Backends, Grounding};
use crate::domain::{
    ConceptLabel, DatasetManifest, DomainError, EvidenceRecord, ImageRecord, Intervention, PredictedClass,
    RunConfig, ScoreVector,
};
use crate::metrics::{mask_area_pct, NORMALIZED_IMPORTANCE_FORMULA, PCT_LOGIT_DROP_FORMULA};

pub const SCHEMA_VERSION: u32 = 1;
/// More than this fraction of failed images marks a run degraded.
pub const DEGRADED_FAILURE_FRACTION: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed run manifest {path}: {message}")]
    BadRunManifest { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "kebab-case")]
pub enum DiscardReason {
    GroundingFailure,
    GroundingError(String),
    AreaExcluded,
    EditError(String),
    ClassifyError(String),
    ArtifactError(String),
}

impl DiscardReason {
    pub fn label(&self) -> &'static str {
        match self {
            DiscardReason::GroundingFailure => "grounding-failure",
            DiscardReason::GroundingError(_) => "grounding-error",
            DiscardReason::AreaExcluded => "area-excluded",
            DiscardReason::EditError(_) => "edit-error",
            DiscardReason::ClassifyError(_) => "classify-error",
            DiscardReason::ArtifactError(_) => "artifact-error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedConcept {
    pub concept: ConceptLabel,
    #[serde(flatten)]
    pub reason: DiscardReason,
    /// Set once the concept was grounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_area: Option<f64>,
}

/// `grounded + grounding_failures == proposed`; `area_excluded ≤ grounded`;
/// `scored ≤ edited`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub proposed: usize,
    pub grounded: usize,
    pub grounding_failures: usize,
    pub area_excluded: usize,
    pub edited: usize,
    pub scored: usize,
}

impl Counters {
    fn add(&mut self, o: &Counters) {
        self.proposed += o.proposed;
        self.grounded += o.grounded;
        self.grounding_failures += o.grounding_failures;
        self.area_excluded += o.area_excluded;
        self.edited += o.edited;
        self.scored += o.scored;
    }

    pub fn consistent(&self) -> bool {
        self.grounded + self.grounding_failures == self.proposed
            && self.area_excluded <= self.grounded
            && self.edited <= self.grounded - self.area_excluded
            && self.scored <= self.edited
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageOutcome {
    pub image_id: String,
    /// Reason the image was abandoned; such images carry no evidence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_class: Option<PredictedClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_ref: Option<String>,
    pub records: Vec<EvidenceRecord>,
    pub discarded: Vec<DiscardedConcept>,
    pub counters: Counters,
}

impl ImageOutcome {
    fn failed(image_id: &str, gt_class: Option<String>, reason: String) -> Self {
        ImageOutcome {
            image_id: image_id.to_string(),
            failure: Some(reason),
            gt_class,
            predicted_class: None,
            s: None,
            original_ref: None,
            records: Vec::new(),
            discarded: Vec::new(),
            counters: Counters::default(),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    /// Some images failed.
    Partial,
    /// More than half of the images failed.
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub run_id: String,
    pub config: RunConfig,
    pub formulas: BTreeMap<String, String>,
    pub status: RunStatus,
    pub n_images: usize,
    pub n_failed_images: usize,
    pub counters: Counters,
    pub images: Vec<ImageOutcome>,
}

pub fn formula_tags() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("pct_logit_drop".to_string(), PCT_LOGIT_DROP_FORMULA.to_string()),
        ("normalized_importance".to_string(), NORMALIZED_IMPORTANCE_FORMULA.to_string()),
    ])
}

impl RunResult {
    pub fn from_outcomes(config: &RunConfig, mut images: Vec<ImageOutcome>) -> Self {
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let mut counters = Counters::default();
        for o in &images {
            counters.add(&o.counters);
        }
        let n_failed = images.iter().filter(|o| o.is_failed()).count();
        let status = if n_failed == 0 {
            RunStatus::Complete
        } else if n_failed as f64 > DEGRADED_FAILURE_FRACTION * images.len() as f64 {
            RunStatus::Degraded
        } else {
            RunStatus::Partial
        };
        RunResult {
            schema_version: SCHEMA_VERSION,
            run_id: config.run_id.clone(),
            config: config.clone(),
            formulas: formula_tags(),
            status,
            n_images: images.len(),
            n_failed_images: n_failed,
            counters,
            images,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &EvidenceRecord> {
        self.images.iter().flat_map(|o| o.records.iter())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run result serializes")
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, EngineError> {
        let run: RunResult = serde_json::from_str(text).map_err(|e| EngineError::BadRunManifest {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        if run.schema_version != SCHEMA_VERSION {
            return Err(EngineError::BadRunManifest {
                path: path.to_string(),
                message: format!("schema_version {} is not {SCHEMA_VERSION}", run.schema_version),
            });
        }
        Ok(run)
    }

    /// Loads `run.json` from a run directory (or the file itself).
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let file = if path.is_dir() { path.join(RUN_MANIFEST) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| EngineError::Io {
            path: file.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &file.display().to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    /// 0 means one worker per logical core.
    pub workers: usize,
    /// Artifacts are written only when a store is given.
    pub artifacts: Option<ArtifactStore>,
}

impl EngineOptions {
    pub fn workers(&self) -> usize {
        if self.workers == 0 {
            crate::exec::default_workers()
        } else {
            self.workers
        }
    }
}

fn predicted(scores: &ScoreVector) -> PredictedClass {
    let index = scores.argmax();
    PredictedClass {
        index,
        name: scores.class_names()[index].clone(),
    }
}

/// Runs every concept of one image. Classifier or proposer failure on the
/// original abandons the image; any other failure discards one concept.
pub fn run_image(
    image: &ImageRecord,
    config: &RunConfig,
    backends: &Backends,
    artifacts: Option<&ArtifactStore>,
) -> ImageOutcome {
    let id = image.image_id();
    let gt = image.gt_class().map(str::to_string);
    let original = match backends.classify(image) {
        Ok(s) => s,
        Err(e) => return ImageOutcome::failed(id, gt, format!("classifier failed on the original image: {e}")),
    };
    let y = predicted(&original);
    let s = original.score(y.index);
    let concepts = match backends.propose_concepts(image) {
        Ok(c) => c,
        Err(e) => return ImageOutcome::failed(id, gt, format!("concept proposal failed: {e}")),
    };
    let original_ref = match artifacts.map(|a| a.write_original(id, image.pixels())).transpose() {
        Ok(r) => r,
        Err(e) => return ImageOutcome::failed(id, gt, format!("could not persist the original image: {e}")),
    };

    let mut counters = Counters {
        proposed: concepts.len(),
        ..Counters::default()
    };
    let mut records = Vec::new();
    let mut discarded = Vec::new();
    let mut discard = |concept: &ConceptLabel, reason: DiscardReason, mask_area: Option<f64>| {
        log::debug!("{id}: discarding {:?} ({})", concept.as_str(), reason.label());
        discarded.push(DiscardedConcept {
            concept: concept.clone(),
            reason,
            mask_area,
        });
    };

    for concept in &concepts {
        let mask = match backends.ground_concept(image, concept, config.mask_dim_mismatch_policy) {
            Ok(Grounding::Mask(m)) => m,
            Ok(Grounding::Failure) => {
                counters.grounding_failures += 1;
                discard(concept, DiscardReason::GroundingFailure, None);
                continue;
            }
            Err(e) => {
                counters.grounding_failures += 1;
                discard(concept, DiscardReason::GroundingError(e.to_string()), None);
                continue;
            }
        };
        counters.grounded += 1;
        let area = mask_area_pct(&mask);
        if area >= config.area_exclusion_pct {
            counters.area_excluded += 1;
            discard(concept, DiscardReason::AreaExcluded, Some(area));
            continue;
        }
        let edited = match backends.remove_region(image, &mask) {
            Ok(e) => e,
            Err(e) => {
                discard(concept, DiscardReason::EditError(e.to_string()), Some(area));
                continue;
            }
        };
        counters.edited += 1;
        let after = match backends.classify(&edited).and_then(|sv| {
            if sv.class_names() == original.class_names() {
                Ok(sv)
            } else {
                Err(AdapterError::Protocol("class list changed between calls".into()))
            }
        }) {
            Ok(sv) => sv,
            Err(e) => {
                discard(concept, DiscardReason::ClassifyError(e.to_string()), Some(area));
                continue;
            }
        };
        let eid = crate::domain::evidence_id(&config.run_id, id, concept);
        let refs = match artifacts {
            Some(a) => a.write_intervention(id, &eid, &mask, edited.pixels()),
            None => Ok(ArtifactStore::intervention_refs(id, &eid)),
        };
        let (mask_ref, edited_image_ref) = match refs {
            Ok(r) => r,
            Err(e) => {
                discard(concept, DiscardReason::ArtifactError(e.to_string()), Some(area));
                continue;
            }
        };
        counters.scored += 1;
        records.push(EvidenceRecord::new(
            config,
            Intervention {
                image_id: id,
                concept,
                predicted_class: y.clone(),
                s,
                s_i: after.score(y.index),
                mask_area: area,
                mask_ref,
                edited_image_ref,
            },
        ));
    }
    records.sort_by(|a, b| a.concept.normalized_text.cmp(&b.concept.normalized_text));
    discarded.sort_by(|a, b| a.concept.normalized_text.cmp(&b.concept.normalized_text));
    ImageOutcome {
        image_id: id.to_string(),
        failure: None,
        gt_class: gt,
        predicted_class: Some(y),
        s: Some(s),
        original_ref,
        records,
        discarded,
        counters,
    }
}

/// Runs in-memory images. Output is independent of the worker count.
pub fn run_images(
    images: &[ImageRecord],
    config: &RunConfig,
    backends: &Backends,
    opts: &EngineOptions,
) -> Result<RunResult, EngineError> {
    config.validate()?;
    let outcomes = crate::exec::map_ordered(images, opts.workers(), |img| {
        run_image(img, config, backends, opts.artifacts.as_ref())
    });
    finish(config, outcomes, opts)
}

/// Runs every manifest entry; unreadable images are recorded as failed.
pub fn run_dataset(
    manifest: &DatasetManifest,
    config: &RunConfig,
    backends: &Backends,
    opts: &EngineOptions,
) -> Result<RunResult, EngineError> {
    config.validate()?;
    manifest.validate()?;
    let outcomes = crate::exec::map_ordered(&manifest.images, opts.workers(), |entry| {
        match manifest.load_image(entry) {
            Ok(img) => run_image(&img, config, backends, opts.artifacts.as_ref()),
            Err(e) => ImageOutcome::failed(&entry.image_id, entry.gt_class.clone(), format!("unreadable image: {e}")),
        }
    });
    finish(config, outcomes, opts)
}

fn finish(config: &RunConfig, outcomes: Vec<ImageOutcome>, opts: &EngineOptions) -> Result<RunResult, EngineError> {
    let run = RunResult::from_outcomes(config, outcomes);
    for o in run.images.iter().filter(|o| o.is_failed()) {
        log::warn!("image {} failed: {}", o.image_id, o.failure.as_deref().unwrap_or(""));
    }
    if let Some(a) = &opts.artifacts {
        a.write_run(&run)?;
    }
    Ok(run)
}
