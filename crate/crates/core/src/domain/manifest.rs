use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_image_id, BinaryMask, DomainError, ImageRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtMaskEntry {
    pub label: String,
    pub mask_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_class: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gt_masks: Vec<GtMaskEntry>,
}

/// Dataset listing. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub images: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(images: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self, DomainError> {
        let m = DatasetManifest {
            images,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path).map_err(|e| DomainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| DomainError::InvalidManifest(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let mut seen = HashSet::new();
        for e in &self.images {
            validate_image_id(&e.image_id)?;
            if !seen.insert(e.image_id.as_str()) {
                return Err(DomainError::InvalidManifest(format!("duplicate image_id {:?}", e.image_id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Decodes the image and its ground-truth masks.
    pub fn load_image(&self, entry: &ManifestEntry) -> Result<ImageRecord, DomainError> {
        let mut img = ImageRecord::load_png(&entry.image_id, &self.resolve(&entry.image_path))?;
        if let Some(c) = &entry.gt_class {
            img = img.with_gt_class(c);
        }
        for gm in &entry.gt_masks {
            let path = self.resolve(&gm.mask_path);
            let bytes = std::fs::read(&path).map_err(|e| DomainError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            img = img.with_gt_mask(&gm.label, BinaryMask::decode_png(&bytes)?)?;
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RgbImage;

    fn entry(id: &str) -> ManifestEntry {
        ManifestEntry {
            image_id: id.into(),
            image_path: format!("{id}.png"),
            gt_class: None,
            gt_masks: vec![],
        }
    }

    #[test]
    fn rejects_duplicate_ids() {
        assert!(DatasetManifest::new(vec![entry("a"), entry("a")], ".").is_err());
        assert!(DatasetManifest::new(vec![entry("a"), entry("b")], ".").is_ok());
    }

    #[test]
    fn loads_images_and_masks_relative_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::filled(4, 4, [9, 9, 9]).unwrap();
        std::fs::write(dir.path().join("a.png"), img.encode_png().unwrap()).unwrap();
        let mask = BinaryMask::from_fn(4, 4, |r, _| r < 2).unwrap();
        std::fs::write(dir.path().join("a.net.png"), mask.encode_png().unwrap()).unwrap();
        let mut e = entry("a");
        e.gt_class = Some("volleyball".into());
        e.gt_masks.push(GtMaskEntry {
            label: "net".into(),
            mask_path: "a.net.png".into(),
        });
        let m = DatasetManifest::new(vec![e], ".").unwrap();
        std::fs::write(dir.path().join("m.json"), m.to_json()).unwrap();

        let loaded = DatasetManifest::load(&dir.path().join("m.json")).unwrap();
        let rec = loaded.load_image(&loaded.images[0]).unwrap();
        assert_eq!(rec.gt_class(), Some("volleyball"));
        assert_eq!(rec.gt_masks()["net"], mask);
        assert_eq!(rec.pixels(), &img);
    }

    #[test]
    fn missing_png_is_an_io_error() {
        let m = DatasetManifest::new(vec![entry("nope")], "/nonexistent").unwrap();
        assert!(matches!(m.load_image(&m.images[0]), Err(DomainError::Io { .. })));
    }
}
