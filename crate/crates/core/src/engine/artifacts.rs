use std::path::{Path, PathBuf};

use super::{EngineError, RunResult};
use crate::domain::{BinaryMask, RgbImage};

pub const RUN_MANIFEST: &str = "run.json";

/// Layout: `<run_dir>/<image_id>/{original.png, <eid>.mask.png,
/// <eid>.edited.png}` plus `<run_dir>/run.json`. References stored in
/// records are relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactStore {
    run_dir: PathBuf,
}

impl ArtifactStore {
    /// Store for `<output_root>/runs/<run_id>`.
    pub fn new(output_root: &Path, run_id: &str) -> Self {
        ArtifactStore {
            run_dir: output_root.join("runs").join(run_id),
        }
    }

    pub fn at(run_dir: impl Into<PathBuf>) -> Self {
        ArtifactStore { run_dir: run_dir.into() }
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn resolve(&self, reference: &str) -> PathBuf {
        self.run_dir.join(reference)
    }

    pub fn intervention_refs(image_id: &str, evidence_id: &str) -> (String, String) {
        (
            format!("{image_id}/{evidence_id}.mask.png"),
            format!("{image_id}/{evidence_id}.edited.png"),
        )
    }

    fn write(&self, reference: &str, bytes: &[u8]) -> Result<(), EngineError> {
        let path = self.resolve(reference);
        let io = |p: &Path, e: std::io::Error| EngineError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| io(&path, e))
    }

    pub fn write_original(&self, image_id: &str, pixels: &RgbImage) -> Result<String, EngineError> {
        let r = format!("{image_id}/original.png");
        self.write(&r, &pixels.encode_png()?)?;
        Ok(r)
    }

    pub fn write_intervention(
        &self,
        image_id: &str,
        evidence_id: &str,
        mask: &BinaryMask,
        edited: &RgbImage,
    ) -> Result<(String, String), EngineError> {
        let (m, e) = Self::intervention_refs(image_id, evidence_id);
        self.write(&m, &mask.encode_png()?)?;
        self.write(&e, &edited.encode_png()?)?;
        Ok((m, e))
    }

    pub fn write_run(&self, run: &RunResult) -> Result<PathBuf, EngineError> {
        self.write(RUN_MANIFEST, run.to_json().as_bytes())?;
        Ok(self.resolve(RUN_MANIFEST))
    }

    pub fn read_mask(&self, reference: &str) -> Result<BinaryMask, EngineError> {
        let path = self.resolve(reference);
        let bytes = std::fs::read(&path).map_err(|e| EngineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(BinaryMask::decode_png(&bytes)?)
    }
}
