//! Progressive removal of the top-ranked concepts. Step k removes the k
//! least influential of the top three with one edit over the union of
//! their masks, then scores accuracy against `gt_class`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ReportingError;
use crate::adapters::{Backends, Grounding};
use crate::domain::{normalize_concept, BinaryMask, ImageRecord, MaskDimPolicy};
use crate::metrics::report::sig9;
use crate::ontology::query::ALL_CLASSES;
use crate::ontology::{class_concept_stats, global_concept_stats, rank, EvidenceGraph, Ranking};

pub const MAX_ABLATION_K: usize = 3;
pub const ABLATION_COLUMNS: [&str; 5] = ["classifier", "class", "k", "n_images", "accuracy"];

/// Where the top-3 ranking comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingScope {
    /// Evidence on images predicted as the ablated class.
    PerClass,
    /// Evidence on every image, regardless of class.
    Global,
}

impl fmt::Display for RankingScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankingScope::PerClass => "per-class",
            RankingScope::Global => "global",
        })
    }
}

impl FromStr for RankingScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-class" | "per_class" => Ok(RankingScope::PerClass),
            "global" => Ok(RankingScope::Global),
            _ => Err(format!("unknown ranking scope {s:?}; expected per-class or global")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub classifier: String,
    pub class: String,
    pub k: usize,
    pub removed: Vec<String>,
    /// Images scored (excludes images whose backend calls failed).
    pub n_images: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    /// Selected concepts that could not be grounded, summed over images.
    pub n_grounding_failures: usize,
    pub n_failed_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub classifier: String,
    pub class: String,
    pub scope: RankingScope,
    /// Top three by mean normalized importance, most influential first.
    pub ranking: Vec<String>,
    pub points: Vec<AblationPoint>,
}

/// Top three concepts by mean normalized importance, most influential
/// first (ties by concept text). The `*` class always ranks globally.
pub fn ablation_ranking(g: &EvidenceGraph, class: &str, scope: RankingScope) -> Result<Vec<String>, ReportingError> {
    let stats = match scope {
        RankingScope::PerClass if class != ALL_CLASSES => class_concept_stats(g, class)?,
        _ => global_concept_stats(g),
    };
    let ranked = rank(&stats, MAX_ABLATION_K, Ranking::MeanNormalizedImportance)?;
    if ranked.is_empty() {
        return Err(ReportingError::EmptyRanking(class.to_string()));
    }
    Ok(ranked.into_iter().map(|r| r.concept).collect())
}

/// The `k` least influential entries of `ranking`.
fn selected(ranking: &[String], k: usize) -> &[String] {
    &ranking[ranking.len() - k.min(ranking.len())..]
}

struct ImageResult {
    correct: bool,
    grounding_failures: usize,
}

fn ablate_image(
    image: &ImageRecord,
    backends: &Backends,
    concepts: &[String],
    policy: MaskDimPolicy,
) -> Result<ImageResult, ReportingError> {
    let mut union: Option<BinaryMask> = None;
    let mut grounding_failures = 0;
    for text in concepts {
        let concept = normalize_concept(text).map_err(crate::adapters::AdapterError::from)?;
        match backends.ground_concept(image, &concept, policy) {
            Ok(Grounding::Mask(m)) => {
                union = Some(match union {
                    None => m,
                    Some(u) => u.union(&m).map_err(crate::adapters::AdapterError::from)?,
                })
            }
            Ok(Grounding::Failure) | Err(_) => grounding_failures += 1,
        }
    }
    let scored = match &union {
        Some(mask) => backends.classify(&backends.remove_region(image, mask)?)?,
        None => backends.classify(image)?,
    };
    let predicted = &scored.class_names()[scored.argmax()];
    Ok(ImageResult {
        correct: Some(predicted.as_str()) == image.gt_class(),
        grounding_failures,
    })
}

/// One point of the curve. Every image must carry a `gt_class`.
#[allow(clippy::too_many_arguments)]
pub fn progressive_ablation(
    images: &[ImageRecord],
    backends: &Backends,
    classifier: &str,
    class: &str,
    ranking: &[String],
    k: usize,
    policy: MaskDimPolicy,
    workers: usize,
) -> Result<AblationPoint, ReportingError> {
    if k > MAX_ABLATION_K {
        return Err(ReportingError::InvalidK(k));
    }
    if let Some(img) = images.iter().find(|i| i.gt_class().is_none()) {
        return Err(ReportingError::MissingGtClass(img.image_id().to_string()));
    }
    let removed = selected(ranking, k);
    let results = crate::exec::map_ordered(images, workers, |img| ablate_image(img, backends, removed, policy));
    let (mut n_images, mut n_correct, mut n_grounding_failures, mut n_failed_images) = (0, 0, 0, 0);
    for (img, r) in images.iter().zip(results) {
        match r {
            Ok(r) => {
                n_images += 1;
                n_correct += r.correct as usize;
                n_grounding_failures += r.grounding_failures;
            }
            Err(e) => {
                log::warn!("ablation k={k}: image {} failed: {e}", img.image_id());
                n_failed_images += 1;
            }
        }
    }
    if n_images == 0 {
        return Err(ReportingError::NoImages(class.to_string()));
    }
    Ok(AblationPoint {
        classifier: classifier.to_string(),
        class: class.to_string(),
        k,
        removed: removed.to_vec(),
        n_images,
        n_correct,
        accuracy: n_correct as f64 / n_images as f64,
        n_grounding_failures,
        n_failed_images,
    })
}

/// Ranks concepts, then evaluates `ks` on the images whose `gt_class` is
/// `class` (every image for [`ALL_CLASSES`]).
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    images: &[ImageRecord],
    backends: &Backends,
    classifier: &str,
    graph: &EvidenceGraph,
    class: &str,
    scope: RankingScope,
    ks: &[usize],
    policy: MaskDimPolicy,
    workers: usize,
) -> Result<AblationCurve, ReportingError> {
    if let Some(img) = images.iter().find(|i| i.gt_class().is_none()) {
        return Err(ReportingError::MissingGtClass(img.image_id().to_string()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k > MAX_ABLATION_K) {
        return Err(ReportingError::InvalidK(k));
    }
    let ranking = ablation_ranking(graph, class, scope)?;
    let subset: Vec<ImageRecord> = images
        .iter()
        .filter(|i| class == ALL_CLASSES || i.gt_class() == Some(class))
        .cloned()
        .collect();
    let points = ks
        .iter()
        .map(|&k| progressive_ablation(&subset, backends, classifier, class, &ranking, k, policy, workers))
        .collect::<Result<_, _>>()?;
    Ok(AblationCurve {
        classifier: classifier.to_string(),
        class: class.to_string(),
        scope,
        ranking,
        points,
    })
}

/// CSV with [`ABLATION_COLUMNS`], one row per point.
pub fn ablation_csv(points: &[AblationPoint]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(ABLATION_COLUMNS).expect("in-memory write");
    for p in points {
        w.write_record([
            p.classifier.clone(),
            p.class.clone(),
            p.k.to_string(),
            p.n_images.to_string(),
            sig9(p.accuracy),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
