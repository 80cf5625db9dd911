use super::*;
use crate::domain::{normalize_concept, Intervention, PredictedClass, RunConfig};
use crate::engine::{Counters, ImageOutcome};

pub(crate) fn record(config: &RunConfig, image: &str, class: &str, concept: &str, s: f64, s_i: f64, area: f64) -> EvidenceRecord {
    let c = normalize_concept(concept).unwrap();
    let eid = crate::domain::evidence_id(&config.run_id, image, &c);
    EvidenceRecord::new(
        config,
        Intervention {
            image_id: image,
            concept: &c,
            predicted_class: PredictedClass {
                index: 0,
                name: class.into(),
            },
            s,
            s_i,
            mask_area: area,
            mask_ref: format!("{image}/{eid}.mask.png"),
            edited_image_ref: format!("{image}/{eid}.edited.png"),
        },
    )
}

pub(crate) fn outcome(image: &str, class: &str, records: Vec<EvidenceRecord>) -> ImageOutcome {
    ImageOutcome {
        image_id: image.into(),
        failure: None,
        gt_class: None,
        predicted_class: Some(PredictedClass {
            index: 0,
            name: class.into(),
        }),
        s: records.first().map(|r| r.s),
        original_ref: None,
        records,
        discarded: vec![],
        counters: Counters::default(),
    }
}

pub(crate) fn sample_run(run_id: &str) -> RunResult {
    let config = RunConfig {
        run_id: run_id.into(),
        ..RunConfig::default()
    };
    let r = |img, class, concept, s, s_i, area| record(&config, img, class, concept, s, s_i, area);
    RunResult::from_outcomes(
        &config,
        vec![
            outcome("i1", "A", vec![r("i1", "A", "net", 0.8, 0.6, 10.0), r("i1", "A", "Sand", 0.8, 0.7, 40.0)]),
            outcome("i2", "A", vec![r("i2", "A", "net", 0.9, 0.45, 20.0), r("i2", "A", "water", 0.9, 0.95, 30.0)]),
            outcome("i3", "B", vec![r("i3", "B", "sky", 0.6, 0.3, 50.0)]),
            outcome("i4", "A", vec![]),
        ],
    )
}

#[test]
fn build_counts_nodes_and_dedups_concepts() {
    let g = build_graph(&sample_run("r")).unwrap();
    assert_eq!(g.count(NodeKind::Evidence), 5);
    assert_eq!(g.count(NodeKind::Concept), 4);
    assert_eq!(g.count(NodeKind::Image), 4);
    assert_eq!(g.count(NodeKind::Class), 2);
    let net = NodeId::new("r", NodeKind::Concept, "net");
    assert_eq!(g.edges_to(&net, EdgeKind::EvidenceOfConcept).count(), 2);
    assert!(check_consistency(&g).is_empty());
    assert_eq!(build_graph(&sample_run("r")).unwrap(), g);
}

#[test]
fn disjoint_two_by_two_run() {
    let config = RunConfig::default();
    let r = |img, concept| record(&config, img, "A", concept, 0.5, 0.25, 5.0);
    let run = RunResult::from_outcomes(
        &config,
        vec![
            outcome("x", "A", vec![r("x", "a"), r("x", "b")]),
            outcome("y", "A", vec![r("y", "c"), r("y", "d")]),
        ],
    );
    let g = build_graph(&run).unwrap();
    assert_eq!(
        (g.count(NodeKind::Evidence), g.count(NodeKind::Concept), g.count(NodeKind::Image)),
        (4, 4, 2)
    );
    assert!(g.count(NodeKind::Class) <= 2);
}

#[test]
fn empty_run_builds_an_empty_valid_graph() {
    let run = RunResult::from_outcomes(&RunConfig::default(), vec![]);
    let g = build_graph(&run).unwrap();
    assert_eq!(g.count(NodeKind::Evidence), 0);
    assert!(check_consistency(&g).is_empty());
    let ttl = g.to_turtle();
    let back = import_turtle(ttl.as_bytes()).unwrap();
    assert_eq!(back, g);
    // Only prefixes, schema and the run node.
    assert!(!ttl.contains("> a ov:Evidence") && !ttl.contains("/evidence/"));
}

#[test]
fn duplicate_evidence_ids_are_rejected() {
    let mut run = sample_run("r");
    let dup = run.images[0].records[0].clone();
    run.images[1].records.push(dup);
    assert!(matches!(build_graph(&run), Err(OntologyError::DuplicateEvidence(_))));
}

#[test]
fn turtle_round_trip_is_lossless() {
    let g = build_graph(&sample_run("r")).unwrap();
    let back = import_turtle(g.to_turtle().as_bytes()).unwrap();
    assert_eq!(back, g);
    assert_eq!(back.to_turtle(), g.to_turtle());
}

#[test]
fn stats_cooccurrence_and_ranking() {
    let g = build_graph(&sample_run("r")).unwrap();
    let stats = class_concept_stats(&g, "A").unwrap();
    let names: Vec<&str> = stats.iter().map(|s| s.concept.as_str()).collect();
    // net: cdp 25 and 50 → 37.5; sand 12.5; water 0.
    assert_eq!(names, vec!["net", "sand", "water"]);
    let net = &stats[0];
    assert_eq!(net.n_evidence, 2);
    assert!((net.mean_cdp - 37.5).abs() < 1e-6);
    assert!((net.support_fraction - 2.0 / 3.0).abs() < 1e-15);
    assert!(stats.iter().all(|s| s.concept != "sky"));

    let co = concept_cooccurrence(&g, "A").unwrap();
    assert_eq!(co.len(), 2);
    assert_eq!((co[0].concept_a.as_str(), co[0].concept_b.as_str()), ("net", "sand"));
    assert_eq!(co[0].joint_images, 1);
    assert_eq!(co[0].p_a_given_b, 1.0);
    assert_eq!(co[0].p_b_given_a, 0.5);

    let top = top_k_concepts(&g, "B", 3, Ranking::MeanCdp).unwrap();
    assert_eq!(top.len(), 1);
    assert!(matches!(top_k_concepts(&g, "Z", 3, Ranking::MeanCdp), Err(OntologyError::UnknownClass(_))));
    assert!(matches!(top_k_concepts(&g, "A", 0, Ranking::MeanCdp), Err(OntologyError::InvalidK)));
}

#[test]
fn equal_statistics_rank_alphabetically() {
    let config = RunConfig::default();
    let r = |concept| record(&config, "x", "A", concept, 0.5, 0.25, 5.0);
    let run = RunResult::from_outcomes(&config, vec![outcome("x", "A", vec![r("zeta"), r("alpha"), r("mid")])]);
    let g = build_graph(&run).unwrap();
    let top: Vec<String> = top_k_concepts(&g, "A", 2, Ranking::MeanNormalizedImportance)
        .unwrap()
        .into_iter()
        .map(|r| r.concept)
        .collect();
    assert_eq!(top, vec!["alpha", "mid"]);
}

fn ev(g: &EvidenceGraph) -> NodeId {
    g.nodes_of(NodeKind::Evidence).next().unwrap().id.clone()
}

#[test]
fn each_injected_violation_is_flagged_once() {
    let base = build_graph(&sample_run("r")).unwrap();
    let class = NodeId::new("r", NodeKind::Class, "A");
    let e = ev(&base);

    let mut g = base.clone();
    g.insert_edge(e.clone(), EdgeKind::EvidenceOfImage, class.clone());
    let v = check_consistency(&g);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].kind, ViolationKind::DomainRange);

    let mut g = base.clone();
    g.insert_edge(e.clone(), EdgeKind::EvidenceOfConcept, NodeId::new("r", NodeKind::Concept, "sky"));
    let v = check_consistency(&g);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].kind, ViolationKind::EvidenceCardinality);

    let mut g = base.clone();
    g.insert_edge(e.clone(), EdgeKind::EvidenceOfConcept, NodeId::new("r", NodeKind::Concept, "ghost"));
    let kinds: Vec<_> = check_consistency(&g).into_iter().map(|v| v.kind).collect();
    assert_eq!(kinds, vec![ViolationKind::DanglingEndpoint]);

    let mut g = base.clone();
    let img = NodeId::new("r", NodeKind::Image, "i1");
    g.insert_edge(img, EdgeKind::ImagePredictedAsClass, NodeId::new("r", NodeKind::Class, "B"));
    let kinds: Vec<_> = check_consistency(&g).into_iter().map(|v| v.kind).collect();
    assert_eq!(kinds, vec![ViolationKind::ImageClassCardinality]);

    let mut g = base.clone();
    g.insert_edge(e.clone(), EdgeKind::HasEditedImage, NodeId::new("r", NodeKind::Concept, "net"));
    let kinds: Vec<_> = check_consistency(&g).into_iter().map(|v| v.kind).collect();
    assert_eq!(kinds, vec![ViolationKind::ArtifactTyping]);
}

#[test]
fn missing_image_edge_imports_then_fails_validation() {
    let g = build_graph(&sample_run("r")).unwrap();
    let e = ev(&g);
    let line = g
        .to_turtle()
        .lines()
        .find(|l| l.starts_with(&format!("<{}> ov:evidenceOfImage", e.iri())))
        .unwrap()
        .to_string();
    let ttl = g.to_turtle().replace(&format!("{line}\n"), "");
    let back = import_turtle(ttl.as_bytes()).unwrap();
    let v = check_consistency(&back);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].kind, ViolationKind::EvidenceCardinality);
}

#[test]
fn unknown_predicates_are_listed() {
    let g = build_graph(&sample_run("r")).unwrap();
    let ttl = format!(
        "{}\n<occam:r/image/i1> ov:colour \"red\" .\n<occam:r/image/i2> <http://example.org/p> \"x\" .\n",
        g.to_turtle()
    );
    match import_turtle(ttl.as_bytes()) {
        Err(OntologyError::UnknownPredicates(list)) => {
            assert_eq!(list.len(), 2);
            assert!(list.iter().any(|t| t.contains("colour")));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(import_turtle("<a> <b> .".as_bytes()), Err(OntologyError::Malformed(_))));
}

#[test]
fn merging_disjoint_runs_sums_counts_and_stays_consistent() {
    let a = build_graph(&sample_run("r1")).unwrap();
    let b = build_graph(&sample_run("r2")).unwrap();
    let m = a.merge(&b).unwrap();
    assert!(check_consistency(&m).is_empty());
    assert_eq!(m.count(NodeKind::Evidence), 10);
    let stats = class_concept_stats(&m, "A").unwrap();
    assert_eq!(stats[0].n_evidence, 4);
    assert_eq!(m.runs.len(), 2);
}
