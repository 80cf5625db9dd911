use std::sync::Arc;

use super::protocol::{ClassifyReply, EmbedReply, GroundReply, ProposeReply};
use super::{
    AdapterError, Backends, Classifier, ConceptProposer, Editor, EmbeddingVector, FixtureStore, Grounder, Grounding,
    TextEmbedder,
};
use crate::domain::{BinaryMask, ConceptLabel, ImageRecord, RgbImage, ScoreVector};

/// Delegates to live backends and writes every reply into a fixture store
/// so the run can be replayed offline.
pub struct Recorder {
    inner: Backends,
    store: FixtureStore,
}

impl Recorder {
    pub fn new(inner: Backends, store: FixtureStore) -> Self {
        Recorder { inner, store }
    }

    /// Backends whose every call is recorded.
    pub fn wrap(inner: Backends, store: FixtureStore) -> Backends {
        let has_embedder = inner.embedder.is_some();
        let r = Arc::new(Recorder::new(inner, store));
        Backends {
            proposer: r.clone(),
            grounder: r.clone(),
            editor: r.clone(),
            classifier: r.clone(),
            embedder: if has_embedder { Some(r) } else { None },
        }
    }
}

impl ConceptProposer for Recorder {
    fn propose(&self, image: &ImageRecord) -> Result<Vec<String>, AdapterError> {
        let concepts = self.inner.proposer.propose(image)?;
        self.store.write_json(
            &self.store.propose_path(image.image_id()),
            &ProposeReply {
                concepts: concepts.clone(),
            },
        )?;
        Ok(concepts)
    }
}

impl Grounder for Recorder {
    fn ground(&self, image: &ImageRecord, concept: &ConceptLabel) -> Result<Grounding, AdapterError> {
        let g = self.inner.grounder.ground(image, concept)?;
        match &g {
            Grounding::Mask(m) => self
                .store
                .write(&self.store.ground_path(image.image_id(), concept, "png"), &m.encode_png()?)?,
            Grounding::Failure => self.store.write_json(
                &self.store.ground_path(image.image_id(), concept, "json"),
                &GroundReply {
                    failure: true,
                    ..Default::default()
                },
            )?,
        }
        Ok(g)
    }
}

impl Editor for Recorder {
    fn remove(&self, image: &ImageRecord, mask: &BinaryMask) -> Result<RgbImage, AdapterError> {
        let edited = self.inner.editor.remove(image, mask)?;
        self.store.write(
            &self.store.edit_path(image.image_id(), image.pixels(), mask),
            &edited.encode_png()?,
        )?;
        Ok(edited)
    }
}

impl Classifier for Recorder {
    fn classify(&self, image: &ImageRecord) -> Result<ScoreVector, AdapterError> {
        let s = self.inner.classifier.classify(image)?;
        self.store.write_json(
            &self.store.classify_path(image.image_id(), image.pixels()),
            &ClassifyReply {
                class_names: s.class_names().to_vec(),
                scores: s.scores().to_vec(),
            },
        )?;
        Ok(s)
    }
}

impl TextEmbedder for Recorder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, AdapterError> {
        let embedder = self
            .inner
            .embedder
            .as_ref()
            .ok_or_else(|| AdapterError::Precondition("no embedding backend to record".into()))?;
        let v = embedder.embed(text)?;
        self.store.write_json(
            &self.store.embed_path(text),
            &EmbedReply {
                values: v.values().to_vec(),
            },
        )?;
        Ok(v)
    }
}
