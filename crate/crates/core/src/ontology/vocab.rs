//! Vocabulary `occam:vocab/1#`.
//!
//! Classes: `Class`, `Image`, `EditedImage` (subclass of `Image`),
//! `Concept`, `Evidence`, `Mask`, plus `Run` for graph metadata.
//!
//! Object properties (domain → range):
//!
//! | predicate                  | domain   | range       |
//! |----------------------------|----------|-------------|
//! | `conceptAssociatedToImage` | Concept  | Image       |
//! | `imagePredictedAsClass`    | Image    | Class       |
//! | `evidenceOfImage`          | Evidence | Image       |
//! | `evidenceOfConcept`        | Evidence | Concept     |
//! | `hasMask`                  | Evidence | Mask        |
//! | `hasEditedImage`           | Evidence | EditedImage |
//!
//! Datatype properties: `label` (Class), `imageId`, `gtClass` (Image),
//! `conceptText` (Concept), `evidenceId`, `rawText` and the `xsd:double`
//! attributes `s`, `sI`, `contribution`, `maskArea`, `cdp`, `logitDelta`,
//! `pctLogitDrop`, `normalizedImportance` (Evidence), `artifactPath`
//! (Mask, EditedImage), `runId` and `schemaVersion` (Run).

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

use super::{Attr, NodeKind};

pub const SCHEME: &str = "occam:";
pub const VOCAB: &str = "occam:vocab/1#";
pub const ONTOLOGY_IRI: &str = "occam:vocab/1";
pub const RDF: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
pub const RDFS: &str = "http://www.w3.org/2000/01/rdf-schema#";
pub const OWL: &str = "http://www.w3.org/2002/07/owl#";
pub const XSD: &str = "http://www.w3.org/2001/XMLSchema#";

pub const RUN_SEGMENT: &str = "run";

const KEY_SET: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

pub fn encode(s: &str) -> String {
    utf8_percent_encode(s, KEY_SET).to_string()
}

pub fn node_iri(run_id: &str, segment: &str, key: &str) -> String {
    format!("{SCHEME}{}/{segment}/{}", encode(run_id), encode(key))
}

/// Splits `occam:<run>/<segment>/<key>` into decoded parts.
pub fn parse_node_iri(iri: &str) -> Option<(String, String, String)> {
    let rest = iri.strip_prefix(SCHEME)?;
    let mut parts = rest.splitn(3, '/');
    let (run, seg, key) = (parts.next()?, parts.next()?, parts.next()?);
    if run.is_empty() || key.contains('/') || run == "vocab" {
        return None;
    }
    let dec = |s: &str| percent_decode_str(s).decode_utf8().ok().map(|c| c.into_owned());
    Some((dec(run)?, seg.to_string(), dec(key)?))
}

pub const ATTRS: [Attr; 15] = [
    Attr::Label,
    Attr::ImageId,
    Attr::GtClass,
    Attr::ConceptText,
    Attr::RawText,
    Attr::EvidenceId,
    Attr::S,
    Attr::SI,
    Attr::Contribution,
    Attr::MaskArea,
    Attr::Cdp,
    Attr::LogitDelta,
    Attr::PctLogitDrop,
    Attr::NormalizedImportance,
    Attr::ArtifactPath,
];

impl Attr {
    pub fn name(self) -> &'static str {
        match self {
            Attr::Label => "label",
            Attr::ImageId => "imageId",
            Attr::GtClass => "gtClass",
            Attr::ConceptText => "conceptText",
            Attr::RawText => "rawText",
            Attr::EvidenceId => "evidenceId",
            Attr::S => "s",
            Attr::SI => "sI",
            Attr::Contribution => "contribution",
            Attr::MaskArea => "maskArea",
            Attr::Cdp => "cdp",
            Attr::LogitDelta => "logitDelta",
            Attr::PctLogitDrop => "pctLogitDrop",
            Attr::NormalizedImportance => "normalizedImportance",
            Attr::ArtifactPath => "artifactPath",
        }
    }

    pub fn from_name(s: &str) -> Option<Attr> {
        ATTRS.into_iter().find(|a| a.name() == s)
    }

    pub fn is_double(self) -> bool {
        matches!(
            self,
            Attr::S
                | Attr::SI
                | Attr::Contribution
                | Attr::MaskArea
                | Attr::Cdp
                | Attr::LogitDelta
                | Attr::PctLogitDrop
                | Attr::NormalizedImportance
        )
    }

    pub fn domains(self) -> &'static [NodeKind] {
        match self {
            Attr::Label => &[NodeKind::Class],
            Attr::ImageId | Attr::GtClass => &[NodeKind::Image],
            Attr::ConceptText => &[NodeKind::Concept],
            Attr::ArtifactPath => &[NodeKind::Mask, NodeKind::EditedImage],
            _ => &[NodeKind::Evidence],
        }
    }
}

/// Turtle short-string escaping.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 || c as u32 == 0x7f => out.push_str(&format!("\\u{:04X}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

/// Shortest round-trip xsd:double lexical form.
pub fn format_double(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "INF" } else { "-INF" }.into()
    } else {
        format!("{x:e}")
    }
}

pub fn parse_double(s: &str) -> Option<f64> {
    match s {
        "NaN" => Some(f64::NAN),
        "INF" | "+INF" => Some(f64::INFINITY),
        "-INF" => Some(f64::NEG_INFINITY),
        _ => s.trim().parse().ok(),
    }
}
