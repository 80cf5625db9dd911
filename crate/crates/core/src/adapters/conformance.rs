//! Protocol conformance checks runnable against any backend set: reply
//! shapes, probability outputs, failure replies for absent concepts, and
//! bit-exact record/replay through the fixture layout.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::{Backends, FixtureStore, Grounding, Recorder};
use crate::domain::{normalize_concept, ImageRecord, MaskDimPolicy, SUM_TOLERANCE};

/// Concept no sensible grounder should find.
pub const ABSENT_CONCEPT: &str = "zq absent placeholder";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub name: String,
    pub image_id: String,
    pub pass: bool,
    pub detail: String,
}

fn check(out: &mut Vec<ConformanceCheck>, name: &str, image: &ImageRecord, pass: bool, detail: String) {
    out.push(ConformanceCheck {
        name: name.into(),
        image_id: image.image_id().into(),
        pass,
        detail,
    });
}

/// Reply-shape and contract checks for one image.
fn shape_checks(b: &Backends, image: &ImageRecord, out: &mut Vec<ConformanceCheck>) {
    let concepts = b.proposer.propose(image);
    let first = match &concepts {
        Ok(list) => {
            let clean = list.iter().all(|c| !c.trim().is_empty());
            check(out, "propose", image, clean, format!("{} concepts", list.len()));
            list.first().cloned()
        }
        Err(e) => {
            check(out, "propose", image, false, e.to_string());
            None
        }
    };

    let absent = normalize_concept(ABSENT_CONCEPT).expect("valid concept");
    match b.ground_concept(image, &absent, MaskDimPolicy::Error) {
        Ok(Grounding::Failure) => check(out, "ground-absent", image, true, "failure reply".into()),
        Ok(Grounding::Mask(m)) => check(
            out,
            "ground-absent",
            image,
            false,
            format!("returned a mask with {} pixels", m.count_ones()),
        ),
        Err(e) => check(out, "ground-absent", image, false, e.to_string()),
    }

    let mask = first.and_then(|c| normalize_concept(&c).ok()).and_then(|c| {
        match b.ground_concept(image, &c, MaskDimPolicy::Error) {
            Ok(Grounding::Mask(m)) => {
                check(out, "ground", image, true, format!("{:?}: {} pixels", c.as_str(), m.count_ones()));
                Some(m)
            }
            Ok(Grounding::Failure) => {
                check(out, "ground", image, true, format!("{:?}: failure reply", c.as_str()));
                None
            }
            Err(e) => {
                check(out, "ground", image, false, e.to_string());
                None
            }
        }
    });

    if let Some(mask) = mask {
        match b.editor.remove(image, &mask) {
            Ok(edited) => {
                let same = edited.height() == image.height() && edited.width() == image.width();
                check(out, "edit", image, same, format!("{}x{}", edited.height(), edited.width()));
            }
            Err(e) => check(out, "edit", image, false, e.to_string()),
        }
    }

    match b.classify(image) {
        Ok(s) => {
            let sum: f64 = s.scores().iter().sum();
            check(
                out,
                "classify",
                image,
                (sum - 1.0).abs() <= SUM_TOLERANCE,
                format!("{} classes, sum {sum:.9}", s.len()),
            );
        }
        Err(e) => check(out, "classify", image, false, e.to_string()),
    }

    if b.embedder.is_some() {
        let dims: Result<Vec<usize>, _> = ["net", "sand"].iter().map(|t| b.embed_text(t).map(|v| v.dimension())).collect();
        match dims {
            Ok(d) => check(out, "embed", image, d[0] == d[1], format!("dimensions {d:?}")),
            Err(e) => check(out, "embed", image, false, e.to_string()),
        }
    }
}

/// Records one pipeline's worth of calls into `fixture_dir`, replays them
/// from the fixtures and compares every reply bit for bit.
fn replay_check(b: &Backends, image: &ImageRecord, fixture_dir: &Path, out: &mut Vec<ConformanceCheck>) {
    let result = (|| -> Result<bool, String> {
        let store = FixtureStore::create(fixture_dir).map_err(|e| e.to_string())?;
        let recorded = Recorder::wrap(b.clone(), store);
        let fixtures = Arc::new(FixtureStore::open(fixture_dir).map_err(|e| e.to_string())?);
        let replay = Backends {
            proposer: fixtures.clone(),
            grounder: fixtures.clone(),
            editor: fixtures.clone(),
            classifier: fixtures.clone(),
            embedder: Some(fixtures),
        };
        let live = recorded.propose_concepts(image).map_err(|e| e.to_string())?;
        let mut same = replay.propose_concepts(image).map_err(|e| e.to_string())? == live;
        for c in &live {
            let g = recorded.ground_concept(image, c, MaskDimPolicy::Error).map_err(|e| e.to_string())?;
            let r = replay.ground_concept(image, c, MaskDimPolicy::Error).map_err(|e| e.to_string())?;
            same &= g == r;
            if let Grounding::Mask(m) = g {
                let e1 = recorded.remove_region(image, &m).map_err(|e| e.to_string())?;
                let e2 = replay.remove_region(image, &m).map_err(|e| e.to_string())?;
                same &= e1.pixels() == e2.pixels();
                same &= recorded.classify(&e1).map_err(|e| e.to_string())? == replay.classify(&e2).map_err(|e| e.to_string())?;
            }
        }
        same &= recorded.classify(image).map_err(|e| e.to_string())? == replay.classify(image).map_err(|e| e.to_string())?;
        if b.embedder.is_some() {
            same &= recorded.embed_text("net").map_err(|e| e.to_string())? == replay.embed_text("net").map_err(|e| e.to_string())?;
        }
        Ok(same)
    })();
    match result {
        Ok(same) => check(out, "record-replay", image, same, if same { "bit-exact" } else { "replay differs" }.into()),
        Err(e) => check(out, "record-replay", image, false, e),
    }
}

/// Runs every check on every image. `fixture_dir` receives the recorded
/// fixtures of the record/replay check.
pub fn run_conformance(b: &Backends, images: &[ImageRecord], fixture_dir: &Path) -> Vec<ConformanceCheck> {
    let mut out = Vec::new();
    for image in images {
        shape_checks(b, image, &mut out);
        replay_check(b, image, fixture_dir, &mut out);
    }
    out
}
