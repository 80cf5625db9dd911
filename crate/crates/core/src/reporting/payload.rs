use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::ReportingError;
use crate::metrics::report::{json9, sig9};
use crate::ontology::{
    class_concept_stats, class_image_count, concept_cooccurrence, rank, vocab, ClassConceptStat, EvidenceGraph,
    Ranking,
};

/// Concepts listed by the top-k query inside the ontology payload.
const PAYLOAD_TOP_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    Unstructured,
    FlatJson,
    Ontology,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Unstructured, Setting::FlatJson, Setting::Ontology];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Unstructured => "unstructured",
            Setting::FlatJson => "flat-json",
            Setting::Ontology => "ontology",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Setting::Unstructured => "txt",
            _ => "json",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Setting::ALL
            .into_iter()
            .find(|x| x.name() == s || x.name().replace('-', "_") == s)
            .ok_or_else(|| format!("unknown setting {s:?}; expected unstructured, flat-json or ontology"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayloadBody {
    Text(String),
    Json(Value),
}

/// One class summary in one knowledge setting. `provenance` lists every
/// evidence id that contributed to a number in `body`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgePayload {
    pub setting: Setting,
    pub class: String,
    pub body: PayloadBody,
    pub provenance: Vec<String>,
}

impl KnowledgePayload {
    pub fn file_name(&self) -> String {
        format!("{}.{}", self.setting.name(), self.setting.extension())
    }

    /// File contents: prose followed by a provenance list, or a JSON
    /// document carrying the provenance next to the body.
    pub fn render(&self) -> String {
        match &self.body {
            PayloadBody::Text(text) => {
                let mut out = text.clone();
                out.push_str("\nProvenance (evidence ids):\n");
                for id in &self.provenance {
                    out.push_str(id);
                    out.push('\n');
                }
                out
            }
            PayloadBody::Json(_) => {
                let mut s = serde_json::to_string_pretty(self).expect("payload serializes");
                s.push('\n');
                s
            }
        }
    }
}

fn stat_json(s: &ClassConceptStat) -> Value {
    json!({
        "concept": s.concept,
        "n_evidence": s.n_evidence,
        "support_fraction": json9(s.support_fraction),
        "mean_cdp": json9(s.mean_cdp),
        "mean_contribution": json9(s.mean_contribution),
        "mean_mask_area": json9(s.mean_mask_area),
        "mean_normalized_importance": json9(s.mean_normalized_importance),
    })
}

fn prose(class: &str, n_images: usize, stats: &[ClassConceptStat]) -> String {
    let mut out = format!(
        "Class \"{class}\": {n_images} images were predicted as this class; {} concepts changed its confidence when removed.\n",
        stats.len()
    );
    for s in stats {
        out.push_str(&format!(
            "- \"{}\" was found in {} images (support {}). Removing it lowered the class confidence by {} percent on average \
             (mean absolute drop {}). It covered {} percent of the image on average, giving a size-normalized importance of {}.\n",
            s.concept,
            s.n_evidence,
            sig9(s.support_fraction),
            sig9(s.mean_cdp),
            sig9(s.mean_contribution),
            sig9(s.mean_mask_area),
            sig9(s.mean_normalized_importance),
        ));
    }
    out
}

/// Builds one setting for `class`. All settings read the same evidence
/// through the same queries, so they state identical numbers.
pub fn build_payload(g: &EvidenceGraph, class: &str, setting: Setting) -> Result<KnowledgePayload, ReportingError> {
    let stats = class_concept_stats(g, class)?;
    if stats.is_empty() {
        return Err(ReportingError::NoEvidence(class.to_string()));
    }
    let n_images = class_image_count(g, class)?;
    let mut provenance: Vec<String> = stats.iter().flat_map(|s| s.evidence_ids.iter().cloned()).collect();
    provenance.sort();
    let body = match setting {
        Setting::Unstructured => PayloadBody::Text(prose(class, n_images, &stats)),
        Setting::FlatJson => PayloadBody::Json(json!({
            "class": class,
            "n_images": n_images,
            "concepts": stats.iter().map(stat_json).collect::<Vec<_>>(),
        })),
        Setting::Ontology => {
            let co: Vec<Value> = concept_cooccurrence(g, class)?
                .iter()
                .map(|c| {
                    json!({
                        "concept_a": c.concept_a,
                        "concept_b": c.concept_b,
                        "joint_images": c.joint_images,
                        "p_a_given_b": json9(c.p_a_given_b),
                        "p_b_given_a": json9(c.p_b_given_a),
                    })
                })
                .collect();
            let top: Vec<Value> = rank(&stats, PAYLOAD_TOP_K, Ranking::MeanCdp)?
                .iter()
                .map(|r| json!({"concept": r.concept, "score": json9(r.score), "n_evidence": r.n_evidence}))
                .collect();
            PayloadBody::Json(json!({
                "queries": [
                    {"query": "class_image_count", "arguments": {"class": class}, "result": n_images},
                    {
                        "query": "class_concept_stats",
                        "arguments": {"class": class},
                        "result": stats.iter().map(stat_json).collect::<Vec<_>>(),
                    },
                    {"query": "concept_cooccurrence", "arguments": {"class": class}, "result": co},
                    {
                        "query": "top_k_concepts",
                        "arguments": {"class": class, "k": PAYLOAD_TOP_K, "ranking": "mean-cdp"},
                        "result": top,
                    },
                ],
            }))
        }
    };
    Ok(KnowledgePayload {
        setting,
        class: class.to_string(),
        body,
        provenance,
    })
}

pub fn build_payloads(
    g: &EvidenceGraph,
    class: &str,
    settings: &[Setting],
) -> Result<Vec<KnowledgePayload>, ReportingError> {
    settings.iter().map(|&s| build_payload(g, class, s)).collect()
}

/// Writes `<dir>/<class>/<setting>.{txt|json}`; the class directory name
/// is percent-encoded.
pub fn write_payloads(dir: &Path, payloads: &[KnowledgePayload]) -> Result<Vec<PathBuf>, ReportingError> {
    let io = |path: &Path, e: std::io::Error| ReportingError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut out = Vec::new();
    for p in payloads {
        let class_dir = dir.join(vocab::encode(&p.class));
        std::fs::create_dir_all(&class_dir).map_err(|e| io(&class_dir, e))?;
        let path = class_dir.join(p.file_name());
        std::fs::write(&path, p.render()).map_err(|e| io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}

/// Posts the payload as JSON to a user-supplied endpoint.
pub fn post_payload(url: &str, payload: &KnowledgePayload) -> Result<(), ReportingError> {
    ureq::post(url)
        .send_json(json!({
            "setting": payload.setting,
            "class": payload.class,
            "content": payload.render(),
            "provenance": payload.provenance,
        }))
        .map(|_| ())
        .map_err(|e| ReportingError::Post(e.to_string()))
}
