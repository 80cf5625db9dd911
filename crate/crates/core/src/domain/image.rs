use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::DomainError;

/// 8-bit RGB raster stored row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, DomainError> {
        if height == 0 || width == 0 {
            return Err(DomainError::EmptyImage);
        }
        if data.len() != height * width * 3 {
            return Err(DomainError::PixelBufferSize {
                expected: height * width * 3,
                actual: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self, DomainError> {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Pixel by flat row-major index.
    pub fn pixel_at(&self, index: usize) -> [u8; 3] {
        let i = index * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel_at(&mut self, index: usize, rgb: [u8; 3]) {
        let i = index * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, DomainError> {
        encode_png(self.width, self.height, png::ColorType::Rgb, &self.data)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, DomainError> {
        let (width, height, channels, raw) = decode_png(bytes)?;
        let data = match channels {
            3 => raw,
            4 => raw.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            1 => raw.iter().flat_map(|&g| [g, g, g]).collect(),
            2 => raw.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            n => return Err(DomainError::Png(format!("unsupported channel count {n}"))),
        };
        Self::new(height, width, data)
    }

    /// Content hash over dimensions and pixel bytes (hex, 32 chars).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.update(&self.data);
        hex::encode(&h.finalize()[..16])
    }
}

/// H×W binary support of a concept; row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, DomainError> {
        if height == 0 || width == 0 {
            return Err(DomainError::EmptyImage);
        }
        if bits.len() != height * width {
            return Err(DomainError::PixelBufferSize {
                expected: height * width,
                actual: bits.len(),
            });
        }
        Ok(Self { height, width, bits })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self, DomainError> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn ones(height: usize, width: usize) -> Result<Self, DomainError> {
        Self::new(height, width, vec![true; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> bool,
    ) -> Result<Self, DomainError> {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, DomainError> {
        if !self.same_shape(other) {
            return Err(DomainError::DimensionMismatch {
                expected: (self.height, self.width),
                actual: (other.height, other.width),
            });
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        BinaryMask::new(self.height, self.width, bits)
    }

    /// Nearest-neighbour resample onto a `height`×`width` grid.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<BinaryMask, DomainError> {
        BinaryMask::from_fn(height, width, |r, c| {
            let sr = (r * self.height) / height;
            let sc = (c * self.width) / width;
            self.get(sr, sc)
        })
    }

    /// Grayscale PNG, 255 for foreground and 0 for background.
    pub fn encode_png(&self) -> Result<Vec<u8>, DomainError> {
        let data: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &data)
    }

    /// Any nonzero channel marks foreground.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, DomainError> {
        let (width, height, channels, raw) = decode_png(bytes)?;
        let bits = raw.chunks_exact(channels).map(|p| p.iter().any(|&v| v != 0)).collect();
        Self::new(height, width, bits)
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        let packed: Vec<u8> = self.bits.iter().map(|&b| b as u8).collect();
        h.update(&packed);
        hex::encode(&h.finalize()[..16])
    }
}

/// An image plus identity and optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    image_id: String,
    pixels: RgbImage,
    gt_masks: BTreeMap<String, BinaryMask>,
    gt_class: Option<String>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, pixels: RgbImage) -> Result<Self, DomainError> {
        let image_id = image_id.into();
        validate_image_id(&image_id)?;
        Ok(Self {
            image_id,
            pixels,
            gt_masks: BTreeMap::new(),
            gt_class: None,
        })
    }

    pub fn with_gt_class(mut self, class: impl Into<String>) -> Self {
        self.gt_class = Some(class.into());
        self
    }

    pub fn with_gt_mask(mut self, label: impl Into<String>, mask: BinaryMask) -> Result<Self, DomainError> {
        if mask.height() != self.height() || mask.width() != self.width() {
            return Err(DomainError::DimensionMismatch {
                expected: (self.height(), self.width()),
                actual: (mask.height(), mask.width()),
            });
        }
        self.gt_masks.insert(label.into(), mask);
        Ok(self)
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn gt_masks(&self) -> &BTreeMap<String, BinaryMask> {
        &self.gt_masks
    }

    pub fn gt_class(&self) -> Option<&str> {
        self.gt_class.as_deref()
    }

    /// Same identity and ground truth, new pixels of identical dimensions.
    pub fn with_pixels(&self, pixels: RgbImage) -> Result<Self, DomainError> {
        if pixels.height() != self.height() || pixels.width() != self.width() {
            return Err(DomainError::DimensionMismatch {
                expected: (self.height(), self.width()),
                actual: (pixels.height(), pixels.width()),
            });
        }
        Ok(Self {
            pixels,
            ..self.clone()
        })
    }

    pub fn load_png(image_id: impl Into<String>, path: &Path) -> Result<Self, DomainError> {
        let bytes = std::fs::read(path).map_err(|e| DomainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::new(image_id, RgbImage::decode_png(&bytes)?)
    }
}

/// Image ids double as directory names in the artifact layout.
pub fn validate_image_id(image_id: &str) -> Result<(), DomainError> {
    let bad = image_id.is_empty()
        || image_id == "."
        || image_id == ".."
        || image_id.starts_with('_')
        || image_id.chars().any(|c| c == '/' || c == '\\' || c.is_control());
    if bad {
        return Err(DomainError::InvalidImageId(image_id.to_string()));
    }
    Ok(())
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>, DomainError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| DomainError::Png(e.to_string()))?;
        writer.write_image_data(data).map_err(|e| DomainError::Png(e.to_string()))?;
        writer.finish().map_err(|e| DomainError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Returns (width, height, channels, 8-bit samples).
fn decode_png(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), DomainError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| DomainError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| DomainError::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| DomainError::Png(e.to_string()))?;
    let channels = info.color_type.samples();
    let width = info.width as usize;
    let height = info.height as usize;
    let mut data = Vec::with_capacity(width * height * channels);
    for row in buf.chunks(info.line_size).take(height) {
        data.extend_from_slice(&row[..width * channels]);
    }
    Ok((width, height, channels, data))
}
