//! Recorded-reply backend.
//!
//! Layout under the fixture root:
//!
//! ```text
//! <image_id>/propose.json                 {"concepts": [...]}
//! <image_id>/ground/<concept-key>.png     mask, or
//! <image_id>/ground/<concept-key>.json    {"failure": true}
//! <image_id>/edit/<input-key>.png         edited image
//! <image_id>/classify/<pixels-key>.json   {"class_names": [...], "scores": [...]}
//! _embed/<text-key>.json                  {"values": [...]}
//! ```
//!
//! Keys are content hashes, so replay is a pure function of the request.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::protocol::{ClassifyReply, EmbedReply, ProposeReply};
use super::{AdapterError, Classifier, ConceptProposer, Editor, EmbeddingVector, Grounder, Grounding, TextEmbedder};
use crate::domain::{BinaryMask, ConceptLabel, ImageRecord, RgbImage, ScoreVector};

#[derive(Debug, Clone)]
pub struct FixtureStore {
    root: PathBuf,
}

pub(crate) fn concept_key(concept: &ConceptLabel) -> String {
    let slug: String = concept
        .normalized_text
        .chars()
        .take(48)
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let digest = Sha256::digest(concept.normalized_text.as_bytes());
    format!("{slug}-{}", hex::encode(&digest[..4]))
}

pub(crate) fn edit_key(image: &RgbImage, mask: &BinaryMask) -> String {
    let digest = Sha256::digest(format!("{}:{}", image.content_hash(), mask.content_hash()).as_bytes());
    hex::encode(&digest[..16])
}

pub(crate) fn text_key(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..16])
}

impl FixtureStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, AdapterError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(AdapterError::FixtureMissing(root.display().to_string()));
        }
        Ok(FixtureStore { root })
    }

    /// Store rooted at `root`, created if needed (used when recording).
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, AdapterError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| AdapterError::Backend(format!("{}: {e}", root.display())))?;
        Ok(FixtureStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn propose_path(&self, image_id: &str) -> PathBuf {
        self.root.join(image_id).join("propose.json")
    }

    pub fn ground_path(&self, image_id: &str, concept: &ConceptLabel, ext: &str) -> PathBuf {
        self.root
            .join(image_id)
            .join("ground")
            .join(format!("{}.{ext}", concept_key(concept)))
    }

    pub fn edit_path(&self, image_id: &str, image: &RgbImage, mask: &BinaryMask) -> PathBuf {
        self.root
            .join(image_id)
            .join("edit")
            .join(format!("{}.png", edit_key(image, mask)))
    }

    pub fn classify_path(&self, image_id: &str, image: &RgbImage) -> PathBuf {
        self.root
            .join(image_id)
            .join("classify")
            .join(format!("{}.json", image.content_hash()))
    }

    pub fn embed_path(&self, text: &str) -> PathBuf {
        self.root.join("_embed").join(format!("{}.json", text_key(text)))
    }

    fn read(&self, path: &Path) -> Result<Vec<u8>, AdapterError> {
        std::fs::read(path).map_err(|_| AdapterError::FixtureMissing(path.display().to_string()))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, path: &Path) -> Result<T, AdapterError> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| AdapterError::Protocol(format!("{}: {e}", path.display())))
    }

    pub(crate) fn write(&self, path: &Path, bytes: &[u8]) -> Result<(), AdapterError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| AdapterError::Backend(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(path, bytes).map_err(|e| AdapterError::Backend(format!("{}: {e}", path.display())))
    }

    pub(crate) fn write_json<T: serde::Serialize>(&self, path: &Path, value: &T) -> Result<(), AdapterError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| AdapterError::Backend(e.to_string()))?;
        self.write(path, text.as_bytes())
    }
}

impl ConceptProposer for FixtureStore {
    fn propose(&self, image: &ImageRecord) -> Result<Vec<String>, AdapterError> {
        Ok(self.read_json::<ProposeReply>(&self.propose_path(image.image_id()))?.concepts)
    }
}

impl Grounder for FixtureStore {
    fn ground(&self, image: &ImageRecord, concept: &ConceptLabel) -> Result<Grounding, AdapterError> {
        let png = self.ground_path(image.image_id(), concept, "png");
        if png.exists() {
            let mask = BinaryMask::decode_png(&self.read(&png)?)
                .map_err(|e| AdapterError::Protocol(format!("{}: {e}", png.display())))?;
            return Ok(Grounding::Mask(mask));
        }
        let json = self.ground_path(image.image_id(), concept, "json");
        let reply: super::protocol::GroundReply = self.read_json(&json)?;
        reply.into_grounding()
    }
}

impl Editor for FixtureStore {
    fn remove(&self, image: &ImageRecord, mask: &BinaryMask) -> Result<RgbImage, AdapterError> {
        let path = self.edit_path(image.image_id(), image.pixels(), mask);
        RgbImage::decode_png(&self.read(&path)?).map_err(|e| AdapterError::Protocol(format!("{}: {e}", path.display())))
    }
}

impl Classifier for FixtureStore {
    fn classify(&self, image: &ImageRecord) -> Result<ScoreVector, AdapterError> {
        self.read_json::<ClassifyReply>(&self.classify_path(image.image_id(), image.pixels()))?
            .into_scores()
    }
}

impl TextEmbedder for FixtureStore {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, AdapterError> {
        EmbeddingVector::new(self.read_json::<EmbedReply>(&self.embed_path(text))?.values)
    }
}
