//! Evidence graph over classes, images, concepts and interventions.
//!
//! Node identity is `(run_id, kind, key)` and maps to the IRI
//! `occam:<run_id>/<kind>/<percent-encoded key>`. Aggregated concept-class
//! dependencies are computed by the queries in [`query`], never stored as
//! edges.

mod check;
pub mod query;
mod turtle;
pub mod vocab;

pub use check::{check_consistency, Violation, ViolationKind};
pub use query::{
    class_concept_stats, class_image_count, classes, concept_cooccurrence, global_concept_stats, rank, top_k_concepts, ClassConceptStat,
    Cooccurrence, Ranking, RankedConcept,
};
pub use turtle::{export_turtle, import_turtle};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::EvidenceRecord;
use crate::engine::RunResult;
use crate::metrics::normalized_importance;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OntologyError {
    #[error("evidence id {0} occurs more than once")]
    DuplicateEvidence(String),
    #[error("node {0} is defined twice with different attributes")]
    ConflictingNode(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("malformed Turtle: {0}")]
    Malformed(String),
    #[error("unknown predicates in {} triple(s):\n{}", .0.len(), .0.join("\n"))]
    UnknownPredicates(Vec<String>),
    #[error("unsupported triple: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Class,
    Image,
    EditedImage,
    Concept,
    Evidence,
    Mask,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] = [
        NodeKind::Class,
        NodeKind::Image,
        NodeKind::EditedImage,
        NodeKind::Concept,
        NodeKind::Evidence,
        NodeKind::Mask,
    ];

    /// IRI path segment.
    pub fn segment(self) -> &'static str {
        match self {
            NodeKind::Class => "class",
            NodeKind::Image => "image",
            NodeKind::EditedImage => "edited-image",
            NodeKind::Concept => "concept",
            NodeKind::Evidence => "evidence",
            NodeKind::Mask => "mask",
        }
    }

    /// Vocabulary class local name.
    pub fn class_name(self) -> &'static str {
        match self {
            NodeKind::Class => "Class",
            NodeKind::Image => "Image",
            NodeKind::EditedImage => "EditedImage",
            NodeKind::Concept => "Concept",
            NodeKind::Evidence => "Evidence",
            NodeKind::Mask => "Mask",
        }
    }

    pub fn from_segment(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.segment() == s)
    }

    pub fn from_class_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.class_name() == s)
    }

    /// Subclass test over the fixed schema: `EditedImage ⊑ Image`.
    pub fn is_a(self, other: NodeKind) -> bool {
        self == other || (self == NodeKind::EditedImage && other == NodeKind::Image)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub run_id: String,
    pub kind: NodeKind,
    pub key: String,
}

impl NodeId {
    pub fn new(run_id: &str, kind: NodeKind, key: &str) -> Self {
        NodeId {
            run_id: run_id.to_string(),
            kind,
            key: key.to_string(),
        }
    }

    pub fn iri(&self) -> String {
        vocab::node_iri(&self.run_id, self.kind.segment(), &self.key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attr {
    Label,
    ImageId,
    GtClass,
    ConceptText,
    RawText,
    EvidenceId,
    S,
    SI,
    Contribution,
    MaskArea,
    Cdp,
    LogitDelta,
    PctLogitDrop,
    NormalizedImportance,
    ArtifactPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Literal {
    Str(String),
    Double(f64),
}

impl Literal {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Literal::Double(x) => Some(*x),
            Literal::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Literal::Str(s) => Some(s),
            Literal::Double(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub attrs: BTreeMap<Attr, Literal>,
}

impl Node {
    pub fn new(id: NodeId) -> Self {
        Node {
            id,
            attrs: BTreeMap::new(),
        }
    }

    fn with(mut self, attr: Attr, value: Literal) -> Self {
        self.attrs.insert(attr, value);
        self
    }

    pub fn str_attr(&self, attr: Attr) -> Option<&str> {
        self.attrs.get(&attr).and_then(Literal::as_str)
    }

    pub fn f64_attr(&self, attr: Attr) -> Option<f64> {
        self.attrs.get(&attr).and_then(Literal::as_f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EdgeKind {
    ConceptAssociatedToImage,
    ImagePredictedAsClass,
    EvidenceOfImage,
    EvidenceOfConcept,
    HasMask,
    HasEditedImage,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 6] = [
        EdgeKind::ConceptAssociatedToImage,
        EdgeKind::ImagePredictedAsClass,
        EdgeKind::EvidenceOfImage,
        EdgeKind::EvidenceOfConcept,
        EdgeKind::HasMask,
        EdgeKind::HasEditedImage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::ConceptAssociatedToImage => "conceptAssociatedToImage",
            EdgeKind::ImagePredictedAsClass => "imagePredictedAsClass",
            EdgeKind::EvidenceOfImage => "evidenceOfImage",
            EdgeKind::EvidenceOfConcept => "evidenceOfConcept",
            EdgeKind::HasMask => "hasMask",
            EdgeKind::HasEditedImage => "hasEditedImage",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    pub fn domain(self) -> NodeKind {
        match self {
            EdgeKind::ConceptAssociatedToImage => NodeKind::Concept,
            EdgeKind::ImagePredictedAsClass => NodeKind::Image,
            _ => NodeKind::Evidence,
        }
    }

    pub fn range(self) -> NodeKind {
        match self {
            EdgeKind::ConceptAssociatedToImage | EdgeKind::EvidenceOfImage => NodeKind::Image,
            EdgeKind::ImagePredictedAsClass => NodeKind::Class,
            EdgeKind::EvidenceOfConcept => NodeKind::Concept,
            EdgeKind::HasMask => NodeKind::Mask,
            EdgeKind::HasEditedImage => NodeKind::EditedImage,
        }
    }

    pub fn is_artifact(self) -> bool {
        matches!(self, EdgeKind::HasMask | EdgeKind::HasEditedImage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub subject: NodeId,
    pub kind: EdgeKind,
    pub object: NodeId,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvidenceGraph {
    pub runs: BTreeSet<String>,
    pub nodes: BTreeMap<NodeId, Node>,
    pub edges: BTreeSet<Edge>,
}

impl EvidenceGraph {
    pub fn schema_version(&self) -> u32 {
        GRAPH_SCHEMA_VERSION
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(move |n| n.id.kind == kind)
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes_of(kind).count()
    }

    pub fn edges_from<'a>(&'a self, id: &'a NodeId, kind: EdgeKind) -> impl Iterator<Item = &'a Edge> {
        self.edges.iter().filter(move |e| &e.subject == id && e.kind == kind)
    }

    pub fn edges_to<'a>(&'a self, id: &'a NodeId, kind: EdgeKind) -> impl Iterator<Item = &'a Edge> {
        self.edges.iter().filter(move |e| &e.object == id && e.kind == kind)
    }

    /// Adds a node, accepting an identical redefinition.
    pub fn insert_node(&mut self, node: Node) -> Result<(), OntologyError> {
        match self.nodes.get(&node.id) {
            Some(existing) if existing != &node => Err(OntologyError::ConflictingNode(node.id.iri())),
            Some(_) => Ok(()),
            None => {
                self.nodes.insert(node.id.clone(), node);
                Ok(())
            }
        }
    }

    pub fn insert_edge(&mut self, subject: NodeId, kind: EdgeKind, object: NodeId) {
        self.edges.insert(Edge { subject, kind, object });
    }

    /// Union of two graphs; shared node ids must agree on attributes.
    pub fn merge(&self, other: &EvidenceGraph) -> Result<EvidenceGraph, OntologyError> {
        let mut out = self.clone();
        out.runs.extend(other.runs.iter().cloned());
        for node in other.nodes.values() {
            out.insert_node(node.clone())?;
        }
        out.edges.extend(other.edges.iter().cloned());
        Ok(out)
    }
}

fn evidence_node(run_id: &str, r: &EvidenceRecord, area_floor_pct: f64) -> Node {
    Node::new(NodeId::new(run_id, NodeKind::Evidence, &r.evidence_id))
        .with(Attr::EvidenceId, Literal::Str(r.evidence_id.clone()))
        .with(Attr::RawText, Literal::Str(r.concept.raw_text.clone()))
        .with(Attr::S, Literal::Double(r.s))
        .with(Attr::SI, Literal::Double(r.s_i))
        .with(Attr::Contribution, Literal::Double(r.contribution))
        .with(Attr::MaskArea, Literal::Double(r.mask_area))
        .with(Attr::Cdp, Literal::Double(r.cdp))
        .with(Attr::LogitDelta, Literal::Double(r.logit_delta))
        .with(Attr::PctLogitDrop, Literal::Double(r.pct_logit_drop))
        .with(
            Attr::NormalizedImportance,
            Literal::Double(normalized_importance(r, area_floor_pct)),
        )
}

/// One node per class, image, concept and record, plus artifact nodes for
/// each record's mask and edited image. Failed images are left out.
pub fn build_graph(run: &RunResult) -> Result<EvidenceGraph, OntologyError> {
    let rid = run.run_id.as_str();
    let mut g = EvidenceGraph::default();
    g.runs.insert(rid.to_string());
    let mut seen = BTreeSet::new();
    for o in run.images.iter().filter(|o| !o.is_failed()) {
        let Some(y) = &o.predicted_class else { continue };
        let image = NodeId::new(rid, NodeKind::Image, &o.image_id);
        let mut node = Node::new(image.clone()).with(Attr::ImageId, Literal::Str(o.image_id.clone()));
        if let Some(gt) = &o.gt_class {
            node = node.with(Attr::GtClass, Literal::Str(gt.clone()));
        }
        g.insert_node(node)?;
        let class = NodeId::new(rid, NodeKind::Class, &y.name);
        g.insert_node(Node::new(class.clone()).with(Attr::Label, Literal::Str(y.name.clone())))?;
        g.insert_edge(image.clone(), EdgeKind::ImagePredictedAsClass, class);

        for r in &o.records {
            if !seen.insert(r.evidence_id.clone()) {
                return Err(OntologyError::DuplicateEvidence(r.evidence_id.clone()));
            }
            let text = &r.concept.normalized_text;
            let concept = NodeId::new(rid, NodeKind::Concept, text);
            g.insert_node(Node::new(concept.clone()).with(Attr::ConceptText, Literal::Str(text.clone())))?;
            g.insert_edge(concept.clone(), EdgeKind::ConceptAssociatedToImage, image.clone());

            let ev = NodeId::new(rid, NodeKind::Evidence, &r.evidence_id);
            g.insert_node(evidence_node(rid, r, run.config.area_floor_pct))?;
            g.insert_edge(ev.clone(), EdgeKind::EvidenceOfImage, image.clone());
            g.insert_edge(ev.clone(), EdgeKind::EvidenceOfConcept, concept);

            let mask = NodeId::new(rid, NodeKind::Mask, &r.evidence_id);
            g.insert_node(Node::new(mask.clone()).with(Attr::ArtifactPath, Literal::Str(r.mask_ref.clone())))?;
            g.insert_edge(ev.clone(), EdgeKind::HasMask, mask);
            let edited = NodeId::new(rid, NodeKind::EditedImage, &r.evidence_id);
            g.insert_node(
                Node::new(edited.clone()).with(Attr::ArtifactPath, Literal::Str(r.edited_image_ref.clone())),
            )?;
            g.insert_edge(ev, EdgeKind::HasEditedImage, edited);
        }
    }
    Ok(g)
}

#[cfg(test)]
pub(crate) mod tests;
