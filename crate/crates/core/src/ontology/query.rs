//! Aggregation queries. Each reads only evidence that is well formed (one
//! image, one concept, image with one class) and groups classes and
//! concepts by label, so graphs merged from several runs aggregate
//! together. Means sum sorted values, making results independent of
//! evidence order.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Attr, EdgeKind, EvidenceGraph, NodeId, NodeKind, OntologyError};

/// Label used for the classifier-wide scope.
pub const ALL_CLASSES: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConceptStat {
    pub class: String,
    pub concept: String,
    pub n_evidence: usize,
    pub mean_contribution: f64,
    pub mean_cdp: f64,
    pub mean_mask_area: f64,
    pub mean_normalized_importance: f64,
    pub support_fraction: f64,
    pub evidence_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cooccurrence {
    pub concept_a: String,
    pub concept_b: String,
    pub joint_images: usize,
    pub p_a_given_b: f64,
    pub p_b_given_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ranking {
    MeanCdp,
    MeanNormalizedImportance,
}

impl FromStr for Ranking {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "mean-cdp" => Ok(Ranking::MeanCdp),
            "mean-normalized-importance" => Ok(Ranking::MeanNormalizedImportance),
            _ => Err(format!(
                "unknown ranking {s:?}; expected mean-cdp or mean-normalized-importance"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub concept: String,
    pub score: f64,
    pub n_evidence: usize,
}

struct Fact<'a> {
    evidence_id: String,
    class: String,
    image: &'a NodeId,
    concept: String,
    contribution: f64,
    cdp: f64,
    mask_area: f64,
    importance: f64,
}

fn single<'a>(g: &'a EvidenceGraph, id: &'a NodeId, kind: EdgeKind) -> Option<&'a NodeId> {
    let mut it = g
        .edges_from(id, kind)
        .filter(|e| g.node(&e.object).is_some_and(|n| n.id.kind.is_a(kind.range())));
    match (it.next(), it.next()) {
        (Some(e), None) => Some(&e.object),
        _ => None,
    }
}

fn class_label(g: &EvidenceGraph, id: &NodeId) -> String {
    g.node(id)
        .and_then(|n| n.str_attr(Attr::Label))
        .unwrap_or(&id.key)
        .to_string()
}

fn concept_label(g: &EvidenceGraph, id: &NodeId) -> String {
    g.node(id)
        .and_then(|n| n.str_attr(Attr::ConceptText))
        .unwrap_or(&id.key)
        .to_string()
}

fn facts(g: &EvidenceGraph) -> Vec<Fact<'_>> {
    let mut out = Vec::new();
    for ev in g.nodes_of(NodeKind::Evidence) {
        let (Some(image), Some(concept)) = (
            single(g, &ev.id, EdgeKind::EvidenceOfImage),
            single(g, &ev.id, EdgeKind::EvidenceOfConcept),
        ) else {
            continue;
        };
        let Some(class) = single(g, image, EdgeKind::ImagePredictedAsClass) else { continue };
        let num = |a| ev.f64_attr(a);
        let (Some(contribution), Some(cdp), Some(mask_area), Some(importance)) = (
            num(Attr::Contribution),
            num(Attr::Cdp),
            num(Attr::MaskArea),
            num(Attr::NormalizedImportance),
        ) else {
            continue;
        };
        out.push(Fact {
            evidence_id: ev.str_attr(Attr::EvidenceId).unwrap_or(&ev.id.key).to_string(),
            class: class_label(g, class),
            image,
            concept: concept_label(g, concept),
            contribution,
            cdp,
            mask_area,
            importance,
        });
    }
    out
}

/// Images per class label (every image with exactly one class edge).
fn images_by_class(g: &EvidenceGraph) -> BTreeMap<String, BTreeSet<&NodeId>> {
    let mut out: BTreeMap<String, BTreeSet<&NodeId>> = BTreeMap::new();
    for img in g.nodes_of(NodeKind::Image) {
        if let Some(class) = single(g, &img.id, EdgeKind::ImagePredictedAsClass) {
            out.entry(class_label(g, class)).or_default().insert(&img.id);
        }
    }
    out
}

/// Class labels present in the graph, sorted.
pub fn classes(g: &EvidenceGraph) -> Vec<String> {
    g.nodes_of(NodeKind::Class)
        .map(|n| class_label(g, &n.id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn require_class(g: &EvidenceGraph, class: &str) -> Result<(), OntologyError> {
    if classes(g).iter().any(|c| c == class) {
        Ok(())
    } else {
        Err(OntologyError::UnknownClass(class.to_string()))
    }
}

pub(crate) fn mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn stats_over(label: &str, facts: &[&Fact<'_>], n_images: usize) -> Vec<ClassConceptStat> {
    let mut groups: BTreeMap<&str, Vec<&Fact<'_>>> = BTreeMap::new();
    for f in facts {
        groups.entry(&f.concept).or_default().push(f);
    }
    let mut out: Vec<ClassConceptStat> = groups
        .into_iter()
        .map(|(concept, fs)| {
            let col = |get: fn(&Fact<'_>) -> f64| mean(fs.iter().map(|f| get(f)).collect());
            let mut evidence_ids: Vec<String> = fs.iter().map(|f| f.evidence_id.clone()).collect();
            evidence_ids.sort();
            ClassConceptStat {
                class: label.to_string(),
                concept: concept.to_string(),
                n_evidence: fs.len(),
                mean_contribution: col(|f| f.contribution),
                mean_cdp: col(|f| f.cdp),
                mean_mask_area: col(|f| f.mask_area),
                mean_normalized_importance: col(|f| f.importance),
                support_fraction: fs.len() as f64 / n_images as f64,
                evidence_ids,
            }
        })
        .collect();
    out.sort_by(|a, b| b.mean_cdp.total_cmp(&a.mean_cdp).then_with(|| a.concept.cmp(&b.concept)));
    out
}

/// One row per concept with evidence on images predicted as `class`,
/// ordered by descending mean CDP, then concept text.
pub fn class_concept_stats(g: &EvidenceGraph, class: &str) -> Result<Vec<ClassConceptStat>, OntologyError> {
    require_class(g, class)?;
    let all = facts(g);
    let selected: Vec<&Fact<'_>> = all.iter().filter(|f| f.class == class).collect();
    let n_images = images_by_class(g).get(class).map_or(0, BTreeSet::len);
    Ok(stats_over(class, &selected, n_images))
}

/// Images predicted as `class` (the support denominator).
pub fn class_image_count(g: &EvidenceGraph, class: &str) -> Result<usize, OntologyError> {
    require_class(g, class)?;
    Ok(images_by_class(g).get(class).map_or(0, BTreeSet::len))
}

/// Statistics over every class at once (classifier-wide scope).
pub fn global_concept_stats(g: &EvidenceGraph) -> Vec<ClassConceptStat> {
    let all = facts(g);
    let selected: Vec<&Fact<'_>> = all.iter().collect();
    let n_images = images_by_class(g).values().map(BTreeSet::len).sum();
    stats_over(ALL_CLASSES, &selected, n_images)
}

/// Concept pairs with evidence on the same image of `class`, sorted by
/// pair text.
pub fn concept_cooccurrence(g: &EvidenceGraph, class: &str) -> Result<Vec<Cooccurrence>, OntologyError> {
    require_class(g, class)?;
    let all = facts(g);
    let mut per_image: BTreeMap<&NodeId, BTreeSet<&str>> = BTreeMap::new();
    for f in all.iter().filter(|f| f.class == class) {
        per_image.entry(f.image).or_default().insert(&f.concept);
    }
    let mut single_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for concepts in per_image.values() {
        let list: Vec<&str> = concepts.iter().copied().collect();
        for (i, a) in list.iter().enumerate() {
            *single_counts.entry(a).or_default() += 1;
            for b in &list[i + 1..] {
                *joint.entry((a, b)).or_default() += 1;
            }
        }
    }
    Ok(joint
        .into_iter()
        .map(|((a, b), n)| Cooccurrence {
            concept_a: a.to_string(),
            concept_b: b.to_string(),
            joint_images: n,
            p_a_given_b: n as f64 / single_counts[b] as f64,
            p_b_given_a: n as f64 / single_counts[a] as f64,
        })
        .collect())
}

/// Top `k` of `stats` by the chosen statistic; ties by concept text.
pub fn rank(stats: &[ClassConceptStat], k: usize, ranking: Ranking) -> Result<Vec<RankedConcept>, OntologyError> {
    if k == 0 {
        return Err(OntologyError::InvalidK);
    }
    let mut out: Vec<RankedConcept> = stats
        .iter()
        .map(|s| RankedConcept {
            concept: s.concept.clone(),
            score: match ranking {
                Ranking::MeanCdp => s.mean_cdp,
                Ranking::MeanNormalizedImportance => s.mean_normalized_importance,
            },
            n_evidence: s.n_evidence,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.concept.cmp(&b.concept)));
    out.truncate(k);
    Ok(out)
}

pub fn top_k_concepts(
    g: &EvidenceGraph,
    class: &str,
    k: usize,
    ranking: Ranking,
) -> Result<Vec<RankedConcept>, OntologyError> {
    if k == 0 {
        return Err(OntologyError::InvalidK);
    }
    rank(&class_concept_stats(g, class)?, k, ranking)
}
