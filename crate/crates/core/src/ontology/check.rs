use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Attr, EdgeKind, EvidenceGraph, NodeId, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    /// Edge endpoint of the wrong kind.
    DomainRange,
    /// Edge endpoint that is not a typed node.
    DanglingEndpoint,
    /// Evidence without exactly one image and one concept.
    EvidenceCardinality,
    /// Image with evidence but no class, or with several classes.
    ImageClassCardinality,
    /// Artifact reference to something that is not a typed artifact, or an
    /// artifact node without a path.
    ArtifactTyping,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub subject: String,
    pub detail: String,
}

/// Every typing and cardinality violation, sorted. Empty means consistent.
pub fn check_consistency(g: &EvidenceGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, subject: &NodeId, detail: String| {
        out.push(Violation {
            kind,
            subject: subject.iri(),
            detail,
        })
    };
    // Per-subject counts of well-typed edges.
    let mut typed: BTreeMap<(&NodeId, EdgeKind), usize> = BTreeMap::new();
    let mut class_edges: BTreeMap<&NodeId, usize> = BTreeMap::new();

    for e in &g.edges {
        let (s, o) = (g.node(&e.subject), g.node(&e.object));
        for (end, present) in [(&e.subject, s.is_some()), (&e.object, o.is_some())] {
            if !present {
                push(
                    ViolationKind::DanglingEndpoint,
                    &e.subject,
                    format!("{} endpoint {} is not a typed node", e.kind.name(), end.iri()),
                );
            }
        }
        let (Some(_), Some(_)) = (s, o) else { continue };
        let ok = e.subject.kind.is_a(e.kind.domain()) && e.object.kind.is_a(e.kind.range());
        if !ok {
            let kind = if e.kind.is_artifact() {
                ViolationKind::ArtifactTyping
            } else {
                ViolationKind::DomainRange
            };
            push(
                kind,
                &e.subject,
                format!(
                    "{} links {} to {}; expected {} to {}",
                    e.kind.name(),
                    e.subject.kind.class_name(),
                    e.object.kind.class_name(),
                    e.kind.domain().class_name(),
                    e.kind.range().class_name()
                ),
            );
            continue;
        }
        *typed.entry((&e.subject, e.kind)).or_default() += 1;
        if e.kind == EdgeKind::ImagePredictedAsClass {
            *class_edges.entry(&e.subject).or_default() += 1;
        }
    }

    for ev in g.nodes_of(NodeKind::Evidence) {
        for (edge, label) in [
            (EdgeKind::EvidenceOfImage, ViolationKind::EvidenceCardinality),
            (EdgeKind::EvidenceOfConcept, ViolationKind::EvidenceCardinality),
            (EdgeKind::HasMask, ViolationKind::ArtifactTyping),
            (EdgeKind::HasEditedImage, ViolationKind::ArtifactTyping),
        ] {
            let n = typed.get(&(&ev.id, edge)).copied().unwrap_or(0);
            if n != 1 {
                push(label, &ev.id, format!("has {n} {} edges; expected exactly 1", edge.name()));
            }
        }
    }

    let with_evidence: BTreeSet<&NodeId> = g
        .edges
        .iter()
        .filter(|e| e.kind == EdgeKind::EvidenceOfImage && e.subject.kind == NodeKind::Evidence)
        .filter(|e| g.node(&e.subject).is_some())
        .map(|e| &e.object)
        .collect();
    for img in g.nodes_of(NodeKind::Image) {
        let n = class_edges.get(&img.id).copied().unwrap_or(0);
        let has_evidence = with_evidence.contains(&img.id);
        if n > 1 || (n == 0 && has_evidence) {
            push(
                ViolationKind::ImageClassCardinality,
                &img.id,
                format!("has {n} imagePredictedAsClass edges"),
            );
        }
    }

    for art in g.nodes.values().filter(|n| matches!(n.id.kind, NodeKind::Mask | NodeKind::EditedImage)) {
        if art.str_attr(Attr::ArtifactPath).is_none_or(str::is_empty) {
            push(ViolationKind::ArtifactTyping, &art.id, "artifact node has no artifactPath".into());
        }
    }

    out.sort();
    out.dedup();
    out
}
