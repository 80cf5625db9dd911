use std::collections::BTreeSet;
use std::sync::Arc;

use super::*;
use crate::adapters::Backends;
use crate::domain::{MaskDimPolicy, RunConfig};
use crate::engine::RunResult;
use crate::ontology::tests::{outcome, record, sample_run};
use crate::ontology::{build_graph, query::ALL_CLASSES};
use crate::synthetic::{SceneParams, SyntheticWorld};

/// Every decimal number in a rendered payload, excluding evidence ids.
fn numbers(p: &KnowledgePayload) -> BTreeSet<String> {
    let text = match &p.body {
        PayloadBody::Text(t) => t.clone(),
        PayloadBody::Json(v) => v.to_string(),
    };
    let re = regex::Regex::new(r"-?\d+(\.\d+)?(e[+-]?\d+)?").unwrap();
    re.find_iter(&text)
        .map(|m| m.as_str().parse::<f64>().unwrap().to_string())
        .collect()
}

#[test]
fn single_concept_value_appears_in_every_setting() {
    let config = RunConfig {
        epsilon: 0.0,
        ..RunConfig::default()
    };
    let r = record(&config, "x", "A", "net", 0.5, 0.4, 10.0);
    assert_eq!(crate::metrics::report::sig9(r.cdp), "20");
    let g = build_graph(&RunResult::from_outcomes(&config, vec![outcome("x", "A", vec![r])])).unwrap();
    for p in build_payloads(&g, "A", &Setting::ALL).unwrap() {
        assert!(numbers(&p).contains("20"), "{}", p.render());
        assert_eq!(p.provenance.len(), 1);
    }
}

#[test]
fn settings_state_the_same_numbers() {
    let g = build_graph(&sample_run("r")).unwrap();
    let ps = build_payloads(&g, "A", &Setting::ALL).unwrap();
    let (prose, flat, onto) = (numbers(&ps[0]), numbers(&ps[1]), numbers(&ps[2]));
    assert_eq!(prose, flat);
    assert!(flat.is_subset(&onto));
    assert!(ps.iter().all(|p| p.provenance == ps[0].provenance));
    assert_eq!(ps[0].provenance.len(), 4);
}

#[test]
fn only_the_ontology_setting_has_cooccurrence() {
    let g = build_graph(&sample_run("r")).unwrap();
    let flat = build_payload(&g, "A", Setting::FlatJson).unwrap().render();
    let onto = build_payload(&g, "A", Setting::Ontology).unwrap().render();
    assert!(onto.contains("concept_cooccurrence") && onto.contains("p_a_given_b"));
    assert!(!flat.contains("cooccurrence"));
}

#[test]
fn payloads_are_deterministic() {
    let a = build_payloads(&build_graph(&sample_run("r")).unwrap(), "A", &Setting::ALL).unwrap();
    let b = build_payloads(&build_graph(&sample_run("r")).unwrap(), "A", &Setting::ALL).unwrap();
    let render = |ps: &[KnowledgePayload]| ps.iter().map(KnowledgePayload::render).collect::<Vec<_>>();
    assert_eq!(render(&a), render(&b));
}

#[test]
fn class_without_evidence_is_rejected() {
    let config = RunConfig::default();
    let run = RunResult::from_outcomes(
        &config,
        vec![
            outcome("x", "A", vec![record(&config, "x", "A", "net", 0.5, 0.4, 10.0)]),
            outcome("y", "B", vec![]),
        ],
    );
    let g = build_graph(&run).unwrap();
    assert!(matches!(build_payload(&g, "B", Setting::FlatJson), Err(ReportingError::NoEvidence(_))));
    assert!(matches!(build_payload(&g, "C", Setting::FlatJson), Err(ReportingError::Ontology(_))));
}

#[test]
fn three_settings_write_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let g = build_graph(&sample_run("r")).unwrap();
    let paths = write_payloads(dir.path(), &build_payloads(&g, "A", &Setting::ALL).unwrap()).unwrap();
    let names: Vec<_> = paths
        .iter()
        .map(|p| p.strip_prefix(dir.path()).unwrap().display().to_string())
        .collect();
    assert_eq!(names, vec!["A/unstructured.txt", "A/flat-json.json", "A/ontology.json"]);
    let text = std::fs::read_to_string(&paths[0]).unwrap();
    assert!(text.contains("Provenance"));
}

fn synthetic_setup(n: u64) -> (Backends, Vec<crate::domain::ImageRecord>) {
    let world = Arc::new(SyntheticWorld::new(3, SceneParams::default()).unwrap());
    let images = (0..n).map(|i| world.generate_record(100 + i, &format!("s{i}")).unwrap().1).collect();
    (Backends::synthetic(world), images)
}

#[test]
fn k_zero_is_plain_accuracy_and_k_is_bounded() {
    let (backends, images) = synthetic_setup(12);
    let ranking = vec!["red circle".to_string(), "blue square".to_string()];
    let p = progressive_ablation(&images, &backends, "synthetic", ALL_CLASSES, &ranking, 0, MaskDimPolicy::Error, 2)
        .unwrap();
    let plain = images
        .iter()
        .filter(|img| {
            let s = backends.classify(img).unwrap();
            Some(s.class_names()[s.argmax()].as_str()) == img.gt_class()
        })
        .count();
    assert_eq!(p.n_correct, plain);
    assert!(p.removed.is_empty());
    let p3 = progressive_ablation(&images, &backends, "synthetic", ALL_CLASSES, &ranking, 3, MaskDimPolicy::Error, 2)
        .unwrap();
    // Only two concepts are ranked; k=3 removes both.
    assert_eq!(p3.removed, ranking);
    assert!(matches!(
        progressive_ablation(&images, &backends, "s", ALL_CLASSES, &ranking, 4, MaskDimPolicy::Error, 1),
        Err(ReportingError::InvalidK(4))
    ));
}

#[test]
fn k_removes_the_least_influential_first() {
    let (backends, images) = synthetic_setup(4);
    let ranking: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let p = progressive_ablation(&images, &backends, "s", ALL_CLASSES, &ranking, 1, MaskDimPolicy::Error, 1).unwrap();
    assert_eq!(p.removed, vec!["c"]);
    // Unknown descriptors never ground.
    assert_eq!(p.n_grounding_failures, 4);
    let p = progressive_ablation(&images, &backends, "s", ALL_CLASSES, &ranking, 2, MaskDimPolicy::Error, 1).unwrap();
    assert_eq!(p.removed, vec!["b", "c"]);
}

#[test]
fn missing_gt_class_is_an_error() {
    let (backends, mut images) = synthetic_setup(2);
    let stripped = crate::domain::ImageRecord::new("bare", images[0].pixels().clone()).unwrap();
    images.push(stripped);
    let err = progressive_ablation(&images, &backends, "s", ALL_CLASSES, &[], 0, MaskDimPolicy::Error, 1);
    assert!(matches!(err, Err(ReportingError::MissingGtClass(id)) if id == "bare"));
}

#[test]
fn ablation_csv_has_fixed_columns() {
    let p = AblationPoint {
        classifier: "synthetic".into(),
        class: "circle".into(),
        k: 2,
        removed: vec![],
        n_images: 3,
        n_correct: 1,
        accuracy: 1.0 / 3.0,
        n_grounding_failures: 0,
        n_failed_images: 0,
    };
    assert_eq!(
        String::from_utf8(ablation_csv(&[p])).unwrap(),
        "classifier,class,k,n_images,accuracy\nsynthetic,circle,2,3,0.333333333\n"
    );
}
