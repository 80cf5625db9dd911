use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rio_api::model::{Literal as RioLiteral, Subject, Term, Triple};
use rio_api::parser::TriplesParser;
use rio_turtle::{TurtleError, TurtleParser};

use super::vocab::{self, escape, format_double, parse_double, parse_node_iri, OWL, RDF, RDFS, VOCAB, XSD};
use super::{Attr, EdgeKind, EvidenceGraph, Literal, Node, NodeId, NodeKind, OntologyError, GRAPH_SCHEMA_VERSION};

fn schema(out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "<{}> a owl:Ontology ;\n    owl:versionInfo \"{GRAPH_SCHEMA_VERSION}\" .", vocab::ONTOLOGY_IRI)?;
    writeln!(out, "ov:Run a owl:Class .")?;
    for k in NodeKind::ALL {
        writeln!(out, "ov:{} a owl:Class .", k.class_name())?;
    }
    writeln!(out, "ov:EditedImage rdfs:subClassOf ov:Image .")?;
    for e in EdgeKind::ALL {
        writeln!(
            out,
            "ov:{} a owl:ObjectProperty ;\n    rdfs:domain ov:{} ;\n    rdfs:range ov:{} .",
            e.name(),
            e.domain().class_name(),
            e.range().class_name()
        )?;
    }
    for a in vocab::ATTRS {
        let range = if a.is_double() { "xsd:double" } else { "xsd:string" };
        write!(out, "ov:{} a owl:DatatypeProperty", a.name())?;
        for d in a.domains() {
            write!(out, " ;\n    rdfs:domain ov:{}", d.class_name())?;
        }
        writeln!(out, " ;\n    rdfs:range {range} .")?;
    }
    writeln!(out, "ov:runId a owl:DatatypeProperty ;\n    rdfs:domain ov:Run ;\n    rdfs:range xsd:string .")?;
    writeln!(
        out,
        "ov:schemaVersion a owl:DatatypeProperty ;\n    rdfs:domain ov:Run ;\n    rdfs:range xsd:integer ."
    )
}

fn literal(l: &Literal) -> String {
    match l {
        Literal::Str(s) => format!("\"{}\"", escape(s)),
        Literal::Double(x) => format!("\"{}\"^^xsd:double", format_double(*x)),
    }
}

/// Deterministic Turtle: prefixes, schema, run metadata, then nodes and
/// edges in identifier order.
pub fn export_turtle(graph: &EvidenceGraph, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "@prefix ov: <{VOCAB}> .")?;
    writeln!(out, "@prefix rdf: <{RDF}> .")?;
    writeln!(out, "@prefix rdfs: <{RDFS}> .")?;
    writeln!(out, "@prefix owl: <{OWL}> .")?;
    writeln!(out, "@prefix xsd: <{XSD}> .")?;
    writeln!(out)?;
    schema(out)?;
    for run in &graph.runs {
        writeln!(out)?;
        writeln!(
            out,
            "<{}> a ov:Run ;\n    ov:runId \"{}\" ;\n    ov:schemaVersion {GRAPH_SCHEMA_VERSION} .",
            vocab::node_iri(run, vocab::RUN_SEGMENT, run),
            escape(run)
        )?;
    }
    for node in graph.nodes.values() {
        writeln!(out)?;
        write!(out, "<{}> a ov:{}", node.id.iri(), node.id.kind.class_name())?;
        for (attr, value) in &node.attrs {
            write!(out, " ;\n    ov:{} {}", attr.name(), literal(value))?;
        }
        writeln!(out, " .")?;
    }
    if !graph.edges.is_empty() {
        writeln!(out)?;
    }
    for e in &graph.edges {
        writeln!(out, "<{}> ov:{} <{}> .", e.subject.iri(), e.kind.name(), e.object.iri())?;
    }
    Ok(())
}

impl EvidenceGraph {
    pub fn to_turtle(&self) -> String {
        let mut buf = Vec::new();
        export_turtle(self, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("turtle is UTF-8")
    }
}

#[derive(Debug)]
enum ImportError {
    Turtle(TurtleError),
    Ontology(OntologyError),
}

impl From<TurtleError> for ImportError {
    fn from(e: TurtleError) -> Self {
        ImportError::Turtle(e)
    }
}

impl From<OntologyError> for ImportError {
    fn from(e: OntologyError) -> Self {
        ImportError::Ontology(e)
    }
}

const SCHEMA_PREDICATES: [&str; 6] = [
    "http://www.w3.org/1999/02/22-rdf-syntax-ns#type",
    "http://www.w3.org/2000/01/rdf-schema#subClassOf",
    "http://www.w3.org/2000/01/rdf-schema#domain",
    "http://www.w3.org/2000/01/rdf-schema#range",
    "http://www.w3.org/2000/01/rdf-schema#comment",
    "http://www.w3.org/2002/07/owl#versionInfo",
];

fn rdf_type() -> String {
    format!("{RDF}type")
}

fn node_id(iri: &str, triple: &Triple<'_>) -> Result<NodeId, OntologyError> {
    let (run, seg, key) =
        parse_node_iri(iri).ok_or_else(|| OntologyError::Unsupported(format!("{triple} (not an occam node IRI)")))?;
    let kind = NodeKind::from_segment(&seg)
        .ok_or_else(|| OntologyError::Unsupported(format!("{triple} (unknown node kind {seg:?})")))?;
    Ok(NodeId { run_id: run, kind, key })
}

fn literal_value(attr: Attr, term: &Term<'_>, triple: &Triple<'_>) -> Result<Literal, OntologyError> {
    let bad = || OntologyError::Unsupported(format!("{triple} (bad literal for {})", attr.name()));
    let Term::Literal(lit) = term else { return Err(bad()) };
    match (attr.is_double(), lit) {
        (true, RioLiteral::Typed { value, datatype }) if datatype.iri == format!("{XSD}double") => {
            parse_double(value).map(Literal::Double).ok_or_else(bad)
        }
        (false, RioLiteral::Simple { value }) => Ok(Literal::Str(value.to_string())),
        (false, RioLiteral::Typed { value, datatype }) if datatype.iri == format!("{XSD}string") => {
            Ok(Literal::Str(value.to_string()))
        }
        _ => Err(bad()),
    }
}

#[derive(Default)]
struct Pending {
    typed: bool,
    attrs: BTreeMap<Attr, Literal>,
}

/// Parses a document produced by [`export_turtle`] (or any Turtle using
/// the same vocabulary). Structural problems are left for
/// [`super::check_consistency`]; unknown predicates are rejected.
pub fn import_turtle(source: impl BufRead) -> Result<EvidenceGraph, OntologyError> {
    let mut graph = EvidenceGraph::default();
    let mut pending: BTreeMap<NodeId, Pending> = BTreeMap::new();
    let mut unknown = Vec::new();
    let type_iri = rdf_type();

    let mut on_triple = |t: Triple<'_>| -> Result<(), ImportError> {
        let Subject::NamedNode(s) = t.subject else {
            return Err(OntologyError::Unsupported(format!("{t} (blank-node subject)")).into());
        };
        let p = t.predicate.iri;
        if s.iri.starts_with(VOCAB) || s.iri == vocab::ONTOLOGY_IRI {
            if !SCHEMA_PREDICATES.contains(&p) {
                unknown.push(t.to_string());
            }
            return Ok(());
        }
        if let Some((run, seg, _)) = parse_node_iri(s.iri).filter(|(_, seg, _)| seg == vocab::RUN_SEGMENT) {
            let _ = seg;
            let known = p == type_iri || p == format!("{VOCAB}runId") || p == format!("{VOCAB}schemaVersion");
            if !known {
                unknown.push(t.to_string());
            } else if p == format!("{VOCAB}schemaVersion") {
                let ok = matches!(t.object, Term::Literal(RioLiteral::Typed { value, .. }) if value == GRAPH_SCHEMA_VERSION.to_string());
                if !ok {
                    return Err(OntologyError::Unsupported(format!("{t} (unsupported schema version)")).into());
                }
            }
            graph.runs.insert(run);
            return Ok(());
        }
        let id = node_id(s.iri, &t)?;
        if p == type_iri {
            let class = match t.object {
                Term::NamedNode(o) => o.iri.strip_prefix(VOCAB).and_then(NodeKind::from_class_name),
                _ => None,
            };
            if class != Some(id.kind) {
                return Err(OntologyError::Unsupported(format!("{t} (type does not match the IRI kind)")).into());
            }
            pending.entry(id).or_default().typed = true;
            return Ok(());
        }
        let Some(local) = p.strip_prefix(VOCAB) else {
            unknown.push(t.to_string());
            return Ok(());
        };
        if let Some(edge) = EdgeKind::from_name(local) {
            let Term::NamedNode(o) = t.object else {
                return Err(OntologyError::Unsupported(format!("{t} (edge object must be an IRI)")).into());
            };
            let object = node_id(o.iri, &t)?;
            graph.insert_edge(id, edge, object);
        } else if let Some(attr) = Attr::from_name(local) {
            let value = literal_value(attr, &t.object, &t)?;
            let entry = pending.entry(id).or_default();
            if entry.attrs.insert(attr, value).is_some() {
                return Err(OntologyError::Unsupported(format!("{t} (attribute given twice)")).into());
            }
        } else {
            unknown.push(t.to_string());
        }
        Ok(())
    };

    let mut parser = TurtleParser::new(source, None);
    parser.parse_all(&mut on_triple).map_err(|e| match e {
        ImportError::Turtle(e) => OntologyError::Malformed(e.to_string()),
        ImportError::Ontology(e) => e,
    })?;
    if !unknown.is_empty() {
        return Err(OntologyError::UnknownPredicates(unknown));
    }
    for (id, p) in pending {
        if !p.typed {
            return Err(OntologyError::Unsupported(format!("{} has attributes but no rdf:type", id.iri())));
        }
        graph.nodes.insert(id.clone(), Node { id, attrs: p.attrs });
    }
    Ok(graph)
}
