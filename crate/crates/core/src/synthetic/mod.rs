//! Procedural scenes of flat-colored shapes, a rule-based softmax classifier
//! over them, and the exact causal oracle obtained by re-rendering a scene
//! without one object.
//!
//! Every object type has its own palette color and backgrounds are grays, so
//! exact color segmentation recovers each footprint. Objects never overlap,
//! which makes background fill an exact inverse of rendering.

mod dataset;

pub use dataset::{write_dataset, SyntheticDataset};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryMask, DomainError, ImageRecord, RgbImage, ScoreVector};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
    #[error("could not place {wanted} objects on scene {seed} after {retries} attempts")]
    Placement { seed: u64, wanted: usize, retries: usize },
    #[error("unrecognized color {rgb:?} at row {row}, column {col}")]
    UnrecognizedColor { row: usize, col: usize, rgb: [u8; 3] },
    #[error("no object {0:?} in scene")]
    UnknownDescriptor(String),
    #[error("weight table is inconsistent: {0}")]
    BadWeights(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorName {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    /// Whether offset `(dr, dc)` from the center lies inside a shape of
    /// half-extent `size`. Footprints stay within the `(2·size+1)²` box.
    pub fn contains(self, dr: i64, dc: i64, size: i64) -> bool {
        match self {
            Shape::Circle => dr * dr + dc * dc <= size * size,
            Shape::Square => dr.abs() <= size && dc.abs() <= size,
            Shape::Triangle => {
                let t = dr + size;
                (0..=2 * size).contains(&t) && 2 * dc.abs() <= t
            }
        }
    }
}

impl ColorName {
    pub const ALL: [ColorName; 4] = [ColorName::Red, ColorName::Green, ColorName::Blue, ColorName::Yellow];

    pub fn name(self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
            ColorName::Yellow => "yellow",
        }
    }

    fn base(self) -> [u8; 3] {
        match self {
            ColorName::Red => [200, 30, 30],
            ColorName::Green => [30, 170, 50],
            ColorName::Blue => [30, 60, 200],
            ColorName::Yellow => [220, 200, 40],
        }
    }
}

/// One of the 12 color × shape combinations. A scene holds each at most once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectType {
    pub color: ColorName,
    pub shape: Shape,
}

pub const N_TYPES: usize = 12;

impl ObjectType {
    /// Canonical order: colors outer, shapes inner.
    pub fn all() -> [ObjectType; N_TYPES] {
        let mut out = [ObjectType {
            color: ColorName::Red,
            shape: Shape::Circle,
        }; N_TYPES];
        for (i, t) in out.iter_mut().enumerate() {
            t.color = ColorName::ALL[i / 3];
            t.shape = Shape::ALL[i % 3];
        }
        out
    }

    pub fn index(self) -> usize {
        ColorName::ALL.iter().position(|c| *c == self.color).unwrap() * 3
            + Shape::ALL.iter().position(|s| *s == self.shape).unwrap()
    }

    pub fn descriptor(self) -> String {
        format!("{} {}", self.color.name(), self.shape.name())
    }

    /// Parses a normalized descriptor such as `"red circle"`.
    pub fn parse(text: &str) -> Option<ObjectType> {
        ObjectType::all().into_iter().find(|t| t.descriptor() == text)
    }

    pub fn rgb(self) -> [u8; 3] {
        let shift = 6 * Shape::ALL.iter().position(|s| *s == self.shape).unwrap() as u8;
        self.color.base().map(|c| c + shift)
    }

    pub fn from_rgb(rgb: [u8; 3]) -> Option<ObjectType> {
        ObjectType::all().into_iter().find(|t| t.rgb() == rgb)
    }
}

pub const BACKGROUNDS: [[u8; 3]; 6] = [
    [16, 16, 16],
    [64, 64, 64],
    [112, 112, 112],
    [160, 160, 160],
    [208, 208, 208],
    [240, 240, 240],
];

/// Palette colors are never gray, so gray is exactly "background".
pub fn is_background(rgb: [u8; 3]) -> bool {
    rgb[0] == rgb[1] && rgb[1] == rgb[2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Half-extent range of a shape in pixels.
    pub min_size: usize,
    pub max_size: usize,
    pub max_retries: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            height: 64,
            width: 64,
            min_objects: 1,
            max_objects: 4,
            min_size: 4,
            max_size: 10,
            max_retries: 500,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |m: &str| Err(DomainError::InvalidConfig(format!("synthetic.{m}")));
        if self.height == 0 || self.width == 0 {
            return bad("height and width must be at least 1");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if self.max_objects > N_TYPES {
            return bad("max_objects exceeds the 12 distinct object types");
        }
        if self.max_objects > 0 {
            if self.min_size == 0 || self.min_size > self.max_size {
                return bad("size range must satisfy 1 <= min_size <= max_size");
            }
            if 2 * self.max_size + 1 > self.height.min(self.width) {
                return bad("max_size does not fit on the canvas");
            }
        }
        if self.max_retries == 0 {
            return bad("max_retries must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: ColorName,
    pub rgb: [u8; 3],
    pub row: usize,
    pub col: usize,
    pub size: usize,
    pub descriptor_text: String,
}

impl SceneObject {
    pub fn new(kind: ObjectType, row: usize, col: usize, size: usize) -> Self {
        SceneObject {
            shape: kind.shape,
            color: kind.color,
            rgb: kind.rgb(),
            row,
            col,
            size,
            descriptor_text: kind.descriptor(),
        }
    }

    pub fn kind(&self) -> ObjectType {
        ObjectType {
            color: self.color,
            shape: self.shape,
        }
    }

    fn covers(&self, r: usize, c: usize) -> bool {
        self.shape.contains(
            r as i64 - self.row as i64,
            c as i64 - self.col as i64,
            self.size as i64,
        )
    }

    /// Rows/cols `[lo, hi]` of the bounding box.
    fn bbox(&self) -> ((usize, usize), (usize, usize)) {
        (
            (self.row - self.size, self.row + self.size),
            (self.col - self.size, self.col + self.size),
        )
    }

    fn separated_from(&self, other: &SceneObject) -> bool {
        let ((r0, r1), (c0, c1)) = self.bbox();
        let ((s0, s1), (d0, d1)) = other.bbox();
        r1 + 1 < s0 || s1 + 1 < r0 || c1 + 1 < d0 || d1 + 1 < c0
    }
}

/// `weights[c][t]` is class `c`'s evidence weight for object type `t`
/// (canonical type order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub class_names: Vec<String>,
    pub type_names: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

pub const CLASS_NAMES: [&str; 4] = ["circle", "square", "triangle", "red"];
const MATCH_WEIGHT: f64 = 30.0;

impl WeightTable {
    /// Matching shape (or red, for the color class) gets roughly 30,
    /// everything else a small jitter around 0.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4549_4748_5453);
        let types = ObjectType::all();
        let weights = CLASS_NAMES
            .iter()
            .map(|class| {
                types
                    .iter()
                    .map(|t| {
                        let matches = *class == t.shape.name() || *class == t.color.name();
                        if matches {
                            MATCH_WEIGHT + rng.random_range(-3.0..3.0)
                        } else {
                            rng.random_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        WeightTable {
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            type_names: types.iter().map(|t| t.descriptor()).collect(),
            weights,
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let expected: Vec<String> = ObjectType::all().iter().map(|t| t.descriptor()).collect();
        if self.type_names != expected {
            return Err(SyntheticError::BadWeights("type names are not the canonical 12 types".into()));
        }
        if self.class_names.len() < 2 || self.weights.len() != self.class_names.len() {
            return Err(SyntheticError::BadWeights("one weight row per class, at least 2 classes".into()));
        }
        if self.weights.iter().any(|row| row.len() != N_TYPES || row.iter().any(|w| !w.is_finite())) {
            return Err(SyntheticError::BadWeights("rows must hold 12 finite weights".into()));
        }
        Ok(())
    }

    /// Softmax of `z_c = Σ_t w[c][t] · area_t / canvas`, summed in canonical
    /// type order so pixel and descriptor paths agree bit for bit.
    pub fn score(&self, areas: &[usize; N_TYPES], canvas: usize) -> Result<ScoreVector, SyntheticError> {
        let z: Vec<f64> = self
            .weights
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                for (w, &a) in row.iter().zip(areas) {
                    acc += w * (a as f64 / canvas as f64);
                }
                acc
            })
            .collect();
        Ok(ScoreVector::from_logits(self.class_names.clone(), &z)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub background: [u8; 3],
    pub objects: Vec<SceneObject>,
    pub class_weights: WeightTable,
}

impl SceneDescriptor {
    pub fn render(&self) -> RgbImage {
        let mut img = RgbImage::filled(self.height, self.width, self.background).expect("canvas is non-empty");
        for obj in &self.objects {
            let ((r0, r1), (c0, c1)) = obj.bbox();
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if obj.covers(r, c) {
                        img.set_pixel_at(r * self.width + c, obj.rgb);
                    }
                }
            }
        }
        img
    }

    pub fn footprint(&self, obj: &SceneObject) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |r, c| {
            let ((r0, r1), (c0, c1)) = obj.bbox();
            (r0..=r1).contains(&r) && (c0..=c1).contains(&c) && obj.covers(r, c)
        })
        .expect("canvas is non-empty")
    }

    pub fn object(&self, descriptor: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.descriptor_text == descriptor)
    }

    pub fn without(&self, descriptor: &str) -> Result<SceneDescriptor, SyntheticError> {
        if self.object(descriptor).is_none() {
            return Err(SyntheticError::UnknownDescriptor(descriptor.to_string()));
        }
        let mut out = self.clone();
        out.objects.retain(|o| o.descriptor_text != descriptor);
        Ok(out)
    }

    pub fn type_areas(&self) -> [usize; N_TYPES] {
        let mut areas = [0; N_TYPES];
        for obj in &self.objects {
            areas[obj.kind().index()] += self.footprint(obj).count_ones();
        }
        areas
    }

    /// Descriptor-path classification; needs no pixels.
    pub fn classify(&self) -> Result<ScoreVector, SyntheticError> {
        self.class_weights.validate()?;
        self.class_weights.score(&self.type_areas(), self.height * self.width)
    }

    /// Shape class with the largest total footprint area; ties go to the
    /// earlier shape. `None` for an empty scene.
    pub fn gt_class(&self) -> Option<String> {
        let areas = self.type_areas();
        let mut best: Option<(Shape, usize)> = None;
        for shape in Shape::ALL {
            let total: usize = ObjectType::all()
                .iter()
                .filter(|t| t.shape == shape)
                .map(|t| areas[t.index()])
                .sum();
            if total > 0 && best.is_none_or(|(_, b)| total > b) {
                best = Some((shape, total));
            }
        }
        best.map(|(s, _)| s.name().to_string())
    }
}

/// Per-type pixel counts of a rendered image; every non-gray pixel must be
/// a palette color.
pub fn segment(image: &RgbImage) -> Result<[usize; N_TYPES], SyntheticError> {
    let mut areas = [0; N_TYPES];
    for r in 0..image.height() {
        for c in 0..image.width() {
            let rgb = image.pixel(r, c);
            if is_background(rgb) {
                continue;
            }
            match ObjectType::from_rgb(rgb) {
                Some(t) => areas[t.index()] += 1,
                None => return Err(SyntheticError::UnrecognizedColor { row: r, col: c, rgb }),
            }
        }
    }
    Ok(areas)
}

/// Fixed weight table and generation bounds; scenes are pure functions of
/// their own seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub params: SceneParams,
    pub weights: WeightTable,
}

impl SyntheticWorld {
    pub fn new(seed: u64, params: SceneParams) -> Result<Self, SyntheticError> {
        params.validate()?;
        Ok(SyntheticWorld {
            seed,
            weights: WeightTable::from_seed(seed),
            params,
        })
    }

    pub fn with_weights(mut self, weights: WeightTable) -> Result<Self, SyntheticError> {
        weights.validate()?;
        self.weights = weights;
        Ok(self)
    }

    pub fn class_names(&self) -> &[String] {
        &self.weights.class_names
    }

    pub fn generate_scene(&self, seed: u64) -> Result<SceneDescriptor, SyntheticError> {
        let p = &self.params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let background = BACKGROUNDS[rng.random_range(0..BACKGROUNDS.len())];
        let n = rng.random_range(p.min_objects..=p.max_objects);
        let types = ObjectType::all();
        let chosen = sample(&mut rng, N_TYPES, n);
        let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
        let mut attempts = 0;
        for idx in chosen.iter() {
            loop {
                attempts += 1;
                if attempts > p.max_retries {
                    return Err(SyntheticError::Placement {
                        seed,
                        wanted: n,
                        retries: p.max_retries,
                    });
                }
                let size = rng.random_range(p.min_size..=p.max_size);
                let row = rng.random_range(size..p.height - size);
                let col = rng.random_range(size..p.width - size);
                let cand = SceneObject::new(types[idx], row, col, size);
                if objects.iter().all(|o| o.separated_from(&cand)) {
                    objects.push(cand);
                    break;
                }
            }
        }
        Ok(SceneDescriptor {
            seed,
            height: p.height,
            width: p.width,
            background,
            objects,
            class_weights: self.weights.clone(),
        })
    }

    /// Scene plus its rendered image, with ground-truth masks keyed by
    /// descriptor text and the area-rule class.
    pub fn generate_record(&self, seed: u64, image_id: &str) -> Result<(SceneDescriptor, ImageRecord), SyntheticError> {
        let scene = self.generate_scene(seed)?;
        let mut rec = ImageRecord::new(image_id, scene.render())?;
        for obj in &scene.objects {
            rec = rec.with_gt_mask(obj.descriptor_text.clone(), scene.footprint(obj))?;
        }
        if let Some(c) = scene.gt_class() {
            rec = rec.with_gt_class(c);
        }
        Ok((scene, rec))
    }

    /// Pixel-path classification by exact color segmentation.
    pub fn classify_pixels(&self, image: &RgbImage) -> Result<ScoreVector, SyntheticError> {
        self.weights.score(&segment(image)?, image.pixel_count())
    }

    /// `f_ŷ(x) − f_ŷ(x without the object)` with ŷ the argmax on the full
    /// scene, both evaluated on the descriptor path.
    pub fn oracle_contribution(&self, scene: &SceneDescriptor, descriptor: &str) -> Result<f64, SyntheticError> {
        let before = scene.classify()?;
        let after = scene.without(descriptor)?.classify()?;
        let y = before.argmax();
        Ok(before.scores()[y] - after.scores()[y])
    }
}
