use std::sync::Arc;

use super::{
    AdapterError, Classifier, ConceptProposer, Editor, EmbeddingVector, Grounder, Grounding, TextEmbedder,
    TokenEmbedder,
};
use crate::domain::{BinaryMask, ConceptLabel, ImageRecord, RgbImage, ScoreVector};
use crate::synthetic::{is_background, segment, ObjectType, SyntheticWorld};

/// All five operators over the synthetic world. Works from pixels alone:
/// proposals and masks come from exact color segmentation, edits fill with
/// the image's gray background.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    world: Arc<SyntheticWorld>,
    embedder: TokenEmbedder,
}

impl SyntheticBackend {
    pub fn new(world: Arc<SyntheticWorld>) -> Self {
        SyntheticBackend {
            world,
            embedder: TokenEmbedder::default(),
        }
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }
}

fn backend(e: crate::synthetic::SyntheticError) -> AdapterError {
    AdapterError::Backend(e.to_string())
}

impl ConceptProposer for SyntheticBackend {
    /// Descriptors of present object types in order of first appearance
    /// (row-major).
    fn propose(&self, image: &ImageRecord) -> Result<Vec<String>, AdapterError> {
        segment(image.pixels()).map_err(backend)?;
        let px = image.pixels();
        let mut seen = [false; crate::synthetic::N_TYPES];
        let mut out = Vec::new();
        for i in 0..px.pixel_count() {
            if let Some(t) = ObjectType::from_rgb(px.pixel_at(i)) {
                if !std::mem::replace(&mut seen[t.index()], true) {
                    out.push(t.descriptor());
                }
            }
        }
        Ok(out)
    }
}

impl Grounder for SyntheticBackend {
    fn ground(&self, image: &ImageRecord, concept: &ConceptLabel) -> Result<Grounding, AdapterError> {
        let Some(t) = ObjectType::parse(concept.as_str()) else {
            return Ok(Grounding::Failure);
        };
        let px = image.pixels();
        let rgb = t.rgb();
        let mask = BinaryMask::new(
            px.height(),
            px.width(),
            (0..px.pixel_count()).map(|i| px.pixel_at(i) == rgb).collect(),
        )?;
        Ok(Grounding::Mask(mask))
    }
}

impl Editor for SyntheticBackend {
    fn remove(&self, image: &ImageRecord, mask: &BinaryMask) -> Result<RgbImage, AdapterError> {
        let px = image.pixels();
        let bits = mask.bits();
        let background = (0..px.pixel_count())
            .filter(|&i| !bits[i])
            .map(|i| px.pixel_at(i))
            .find(|&rgb| is_background(rgb))
            .ok_or_else(|| AdapterError::Backend("no background pixel outside the mask to fill from".into()))?;
        let mut out = px.clone();
        for (i, &inside) in bits.iter().enumerate() {
            if inside {
                out.set_pixel_at(i, background);
            }
        }
        Ok(out)
    }
}

impl Classifier for SyntheticBackend {
    fn classify(&self, image: &ImageRecord) -> Result<ScoreVector, AdapterError> {
        self.world.classify_pixels(image.pixels()).map_err(backend)
    }
}

impl TextEmbedder for SyntheticBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, AdapterError> {
        self.embedder.embed(text)
    }
}
