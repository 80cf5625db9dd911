//! Operator contracts (propose, ground, edit, classify, embed) and their
//! backends.
//!
//! Backends implement the narrow traits below; the free functions in this
//! module enforce the contracts every backend must satisfy (deduplication,
//! non-empty masks, untouched pixels outside the mask, probability outputs).

pub mod conformance;
mod embed;
mod fixture;
mod http;
mod limit;
pub mod protocol;
mod record;
mod subprocess;
mod synthetic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{cosine_similarity, TokenEmbedder, TOKEN_EMBEDDING_DIM};
pub use fixture::FixtureStore;
pub use http::HttpBackend;
pub use limit::Limiter;
pub use record::Recorder;
pub use subprocess::SubprocessBackend;
pub use synthetic::SyntheticBackend;

use crate::domain::{
    dedup_concepts, BinaryMask, ConceptLabel, DomainError, EndpointKind, ImageRecord, MaskDimPolicy,
    Operator, OperatorEndpoint, RgbImage, RunConfig, ScoreVector,
};
use crate::synthetic::SyntheticWorld;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdapterError {
    /// Connection-level failure or timeout; retried.
    #[error("transport error: {0}")]
    Transport(String),
    /// Reply that violates the wire contract; never retried.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("mask is {actual:?} but image is {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("no recorded fixture at {0}")]
    FixtureMissing(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl AdapterError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, AdapterError::Transport(_))
    }
}

/// Text embedding of fixed, backend-defined dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, AdapterError> {
        if values.len() < 2 {
            return Err(AdapterError::Protocol(format!(
                "embedding dimension {} is below 2",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AdapterError::Protocol("embedding has non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grounding {
    Mask(BinaryMask),
    Failure,
}

pub trait ConceptProposer: Send + Sync {
    /// Raw proposals in backend order; normalization happens in
    /// [`propose_concepts`].
    fn propose(&self, image: &ImageRecord) -> Result<Vec<String>, AdapterError>;
}

pub trait Grounder: Send + Sync {
    fn ground(&self, image: &ImageRecord, concept: &ConceptLabel) -> Result<Grounding, AdapterError>;
}

pub trait Editor: Send + Sync {
    fn remove(&self, image: &ImageRecord, mask: &BinaryMask) -> Result<RgbImage, AdapterError>;
}

pub trait Classifier: Send + Sync {
    fn classify(&self, image: &ImageRecord) -> Result<ScoreVector, AdapterError>;
}

pub trait TextEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, AdapterError>;
}

/// Normalized, duplicate-free proposals in backend order.
pub fn propose_concepts(
    proposer: &dyn ConceptProposer,
    image: &ImageRecord,
) -> Result<Vec<ConceptLabel>, AdapterError> {
    Ok(dedup_concepts(&proposer.propose(image)?))
}

/// Grounds a concept. All-zero masks become [`Grounding::Failure`]; masks of
/// the wrong size are rejected or resized per `policy`.
pub fn ground_concept(
    grounder: &dyn Grounder,
    image: &ImageRecord,
    concept: &ConceptLabel,
    policy: MaskDimPolicy,
) -> Result<Grounding, AdapterError> {
    let mask = match grounder.ground(image, concept)? {
        Grounding::Failure => return Ok(Grounding::Failure),
        Grounding::Mask(m) => m,
    };
    let mask = if mask.height() != image.height() || mask.width() != image.width() {
        match policy {
            MaskDimPolicy::Error => {
                return Err(AdapterError::DimensionMismatch {
                    expected: (image.height(), image.width()),
                    actual: (mask.height(), mask.width()),
                })
            }
            MaskDimPolicy::NearestResize => mask.resize_nearest(image.height(), image.width())?,
        }
    } else {
        mask
    };
    if mask.count_ones() == 0 {
        return Ok(Grounding::Failure);
    }
    Ok(Grounding::Mask(mask))
}

/// Removes the masked region. Pixels outside the mask are copied from the
/// input whatever the backend returns.
pub fn remove_region(
    editor: &dyn Editor,
    image: &ImageRecord,
    mask: &BinaryMask,
) -> Result<ImageRecord, AdapterError> {
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(AdapterError::DimensionMismatch {
            expected: (image.height(), image.width()),
            actual: (mask.height(), mask.width()),
        });
    }
    if mask.count_ones() == 0 {
        return Err(AdapterError::Precondition("cannot remove an empty mask".into()));
    }
    let edited = editor.remove(image, mask)?;
    if edited.height() != image.height() || edited.width() != image.width() {
        return Err(AdapterError::Protocol(format!(
            "editor returned {}x{} for a {}x{} image",
            edited.height(),
            edited.width(),
            image.height(),
            image.width()
        )));
    }
    let mut out = image.pixels().clone();
    for (i, &inside) in mask.bits().iter().enumerate() {
        if inside {
            out.set_pixel_at(i, edited.pixel_at(i));
        }
    }
    Ok(image.with_pixels(out)?)
}

pub fn classify(classifier: &dyn Classifier, image: &ImageRecord) -> Result<ScoreVector, AdapterError> {
    classifier.classify(image)
}

pub fn embed_text(embedder: &dyn TextEmbedder, text: &str) -> Result<EmbeddingVector, AdapterError> {
    if text.trim().is_empty() {
        return Err(AdapterError::Precondition("cannot embed empty text".into()));
    }
    embedder.embed(text)
}

/// One backend per operator.
#[derive(Clone)]
pub struct Backends {
    pub proposer: Arc<dyn ConceptProposer>,
    pub grounder: Arc<dyn Grounder>,
    pub editor: Arc<dyn Editor>,
    pub classifier: Arc<dyn Classifier>,
    pub embedder: Option<Arc<dyn TextEmbedder>>,
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends")
            .field("embedder", &self.embedder.is_some())
            .finish_non_exhaustive()
    }
}

impl Backends {
    pub fn synthetic(world: Arc<SyntheticWorld>) -> Self {
        let b = Arc::new(SyntheticBackend::new(world));
        Backends {
            proposer: b.clone(),
            grounder: b.clone(),
            editor: b.clone(),
            classifier: b.clone(),
            embedder: Some(b),
        }
    }

    /// Instantiates every configured endpoint. Propose, ground, edit and
    /// classify are required; embed is optional.
    pub fn from_config(config: &RunConfig) -> Result<Self, AdapterError> {
        let mut cache = BackendCache::new(config);
        let eps = &config.endpoints;
        Ok(Backends {
            proposer: cache.get(eps.require(Operator::Propose)?)?.proposer(),
            grounder: cache.get(eps.require(Operator::Ground)?)?.grounder(),
            editor: cache.get(eps.require(Operator::Edit)?)?.editor(),
            classifier: cache.get(eps.require(Operator::Classify)?)?.classifier(),
            embedder: match eps.get(Operator::Embed) {
                Some(ep) => Some(cache.get(ep)?.embedder()),
                None => None,
            },
        })
    }

    /// Embedder-only construction for commands that just need `embed`.
    pub fn embedder_from(config: &RunConfig, ep: &OperatorEndpoint) -> Result<Arc<dyn TextEmbedder>, AdapterError> {
        Ok(BackendCache::new(config).get(ep)?.embedder())
    }

    pub fn propose_concepts(&self, image: &ImageRecord) -> Result<Vec<ConceptLabel>, AdapterError> {
        propose_concepts(self.proposer.as_ref(), image)
    }

    pub fn ground_concept(
        &self,
        image: &ImageRecord,
        concept: &ConceptLabel,
        policy: MaskDimPolicy,
    ) -> Result<Grounding, AdapterError> {
        ground_concept(self.grounder.as_ref(), image, concept, policy)
    }

    pub fn remove_region(&self, image: &ImageRecord, mask: &BinaryMask) -> Result<ImageRecord, AdapterError> {
        remove_region(self.editor.as_ref(), image, mask)
    }

    pub fn classify(&self, image: &ImageRecord) -> Result<ScoreVector, AdapterError> {
        classify(self.classifier.as_ref(), image)
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, AdapterError> {
        let e = self
            .embedder
            .as_ref()
            .ok_or_else(|| AdapterError::Precondition("no embedding backend configured".into()))?;
        embed_text(e.as_ref(), text)
    }
}

/// A backend object that serves all five operators.
trait AnyBackend: ConceptProposer + Grounder + Editor + Classifier + TextEmbedder {}
impl<T: ConceptProposer + Grounder + Editor + Classifier + TextEmbedder> AnyBackend for T {}

#[derive(Clone)]
struct Shared(Arc<dyn AnyBackendDyn>);

/// Object-safe upcasts from the combined backend to each operator trait.
trait AnyBackendDyn: Send + Sync {
    fn proposer(self: Arc<Self>) -> Arc<dyn ConceptProposer>;
    fn grounder(self: Arc<Self>) -> Arc<dyn Grounder>;
    fn editor(self: Arc<Self>) -> Arc<dyn Editor>;
    fn classifier(self: Arc<Self>) -> Arc<dyn Classifier>;
    fn embedder(self: Arc<Self>) -> Arc<dyn TextEmbedder>;
}

impl<T: AnyBackend + 'static> AnyBackendDyn for T {
    fn proposer(self: Arc<Self>) -> Arc<dyn ConceptProposer> {
        self
    }
    fn grounder(self: Arc<Self>) -> Arc<dyn Grounder> {
        self
    }
    fn editor(self: Arc<Self>) -> Arc<dyn Editor> {
        self
    }
    fn classifier(self: Arc<Self>) -> Arc<dyn Classifier> {
        self
    }
    fn embedder(self: Arc<Self>) -> Arc<dyn TextEmbedder> {
        self
    }
}

impl Shared {
    fn proposer(&self) -> Arc<dyn ConceptProposer> {
        self.0.clone().proposer()
    }
    fn grounder(&self) -> Arc<dyn Grounder> {
        self.0.clone().grounder()
    }
    fn editor(&self) -> Arc<dyn Editor> {
        self.0.clone().editor()
    }
    fn classifier(&self) -> Arc<dyn Classifier> {
        self.0.clone().classifier()
    }
    fn embedder(&self) -> Arc<dyn TextEmbedder> {
        self.0.clone().embedder()
    }
}

/// Endpoints that compare equal share one client (one subprocess, one
/// HTTP agent).
struct BackendCache<'a> {
    config: &'a RunConfig,
    built: Vec<(OperatorEndpoint, Shared)>,
}

impl<'a> BackendCache<'a> {
    fn new(config: &'a RunConfig) -> Self {
        BackendCache {
            config,
            built: Vec::new(),
        }
    }

    fn get(&mut self, ep: &OperatorEndpoint) -> Result<Shared, AdapterError> {
        if let Some((_, b)) = self.built.iter().find(|(e, _)| e == ep) {
            return Ok(b.clone());
        }
        ep.validate()?;
        let shared = match ep.kind {
            EndpointKind::Synthetic => {
                let world = SyntheticWorld::new(self.config.rng_seed, self.config.synthetic.clone())
                    .map_err(|e| AdapterError::Backend(e.to_string()))?;
                Shared(Arc::new(SyntheticBackend::new(Arc::new(world))))
            }
            EndpointKind::Fixture => Shared(Arc::new(FixtureStore::open(&ep.locator)?)),
            EndpointKind::Http => Shared(Arc::new(HttpBackend::new(ep)?)),
            EndpointKind::Subprocess => Shared(Arc::new(SubprocessBackend::new(ep)?)),
        };
        self.built.push((ep.clone(), shared.clone()));
        Ok(shared)
    }
}

/// Runs `f`, retrying transport errors up to `max_retries` times with
/// exponential backoff starting at `base_delay`.
pub fn with_retries<T>(
    max_retries: u32,
    base_delay: std::time::Duration,
    mut f: impl FnMut() -> Result<T, AdapterError>,
) -> Result<T, AdapterError> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(e) if e.is_retriable() && attempt < max_retries => {
                std::thread::sleep(base_delay * 2u32.pow(attempt));
                attempt += 1;
                log::debug!("retrying after transport error (attempt {attempt}): {e}");
            }
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::time::Duration;

    struct Fixed(Vec<String>);
    impl ConceptProposer for Fixed {
        fn propose(&self, _: &ImageRecord) -> Result<Vec<String>, AdapterError> {
            Ok(self.0.clone())
        }
    }

    struct MaskOut(BinaryMask);
    impl Grounder for MaskOut {
        fn ground(&self, _: &ImageRecord, _: &ConceptLabel) -> Result<Grounding, AdapterError> {
            Ok(Grounding::Mask(self.0.clone()))
        }
    }

    /// Scribbles over the whole canvas.
    struct Scribble;
    impl Editor for Scribble {
        fn remove(&self, image: &ImageRecord, _: &BinaryMask) -> Result<RgbImage, AdapterError> {
            Ok(RgbImage::filled(image.height(), image.width(), [1, 2, 3]).unwrap())
        }
    }

    fn image(h: usize, w: usize) -> ImageRecord {
        let data = (0..h * w * 3).map(|i| (i % 251) as u8).collect();
        ImageRecord::new("img", RgbImage::new(h, w, data).unwrap()).unwrap()
    }

    fn concept(s: &str) -> ConceptLabel {
        crate::domain::normalize_concept(s).unwrap()
    }

    #[test]
    fn proposals_are_deduplicated() {
        let p = Fixed(vec!["Net".into(), "net ".into()]);
        let out = propose_concepts(&p, &image(2, 2)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].as_str(), "net");
        assert!(propose_concepts(&Fixed(vec![]), &image(2, 2)).unwrap().is_empty());
    }

    #[test]
    fn all_zero_mask_is_a_grounding_failure() {
        let g = MaskOut(BinaryMask::zeros(3, 3).unwrap());
        let r = ground_concept(&g, &image(3, 3), &concept("x"), MaskDimPolicy::Error).unwrap();
        assert_eq!(r, Grounding::Failure);
    }

    #[test]
    fn mismatched_masks_follow_policy() {
        let g = MaskOut(BinaryMask::ones(2, 2).unwrap());
        let img = image(4, 4);
        assert!(matches!(
            ground_concept(&g, &img, &concept("x"), MaskDimPolicy::Error),
            Err(AdapterError::DimensionMismatch { .. })
        ));
        match ground_concept(&g, &img, &concept("x"), MaskDimPolicy::NearestResize).unwrap() {
            Grounding::Mask(m) => assert_eq!(m.count_ones(), 16),
            Grounding::Failure => panic!("expected mask"),
        }
    }

    #[test]
    fn empty_mask_edit_is_rejected() {
        let err = remove_region(&Scribble, &image(3, 3), &BinaryMask::zeros(3, 3).unwrap()).unwrap_err();
        assert!(matches!(err, AdapterError::Precondition(_)));
    }

    proptest! {
        #[test]
        fn edits_never_touch_pixels_outside_the_mask(bits in prop::collection::vec(any::<bool>(), 36)) {
            prop_assume!(bits.iter().any(|&b| b));
            let img = image(6, 6);
            let mask = BinaryMask::new(6, 6, bits).unwrap();
            let out = remove_region(&Scribble, &img, &mask).unwrap();
            for i in 0..36 {
                if mask.bits()[i] {
                    prop_assert_eq!(out.pixels().pixel_at(i), [1, 2, 3]);
                } else {
                    prop_assert_eq!(out.pixels().pixel_at(i), img.pixels().pixel_at(i));
                }
            }
        }
    }

    #[test]
    fn retries_only_transport_errors() {
        let calls = AtomicU32::new(0);
        let r: Result<(), _> = with_retries(3, Duration::from_millis(1), || {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(AdapterError::Transport("down".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 4);

        let calls = AtomicU32::new(0);
        let r: Result<(), _> = with_retries(3, Duration::from_millis(1), || {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(AdapterError::Protocol("bad".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        let calls = AtomicU32::new(0);
        let r = with_retries(3, Duration::from_millis(1), || {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(AdapterError::Transport("flaky".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r.unwrap(), 7);
    }

    #[test]
    fn from_config_reports_missing_endpoints() {
        let err = Backends::from_config(&RunConfig::default()).unwrap_err();
        assert!(err.to_string().contains("propose"), "{err}");
    }
}
