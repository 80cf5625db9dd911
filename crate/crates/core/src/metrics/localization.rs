//! Activation-map versus ground-truth localization scores.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::domain::BinaryMask;

/// Number of integer-percent thresholds in the NRA curve.
pub const NRA_STEPS: usize = 100;

/// Baselines closer than this are treated as degenerate.
const BASELINE_GAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ActivationMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, MetricsError> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(MetricsError::InvalidMap(format!(
                "{} values for a {height}x{width} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::InvalidMap("non-finite activation".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check_against(&self, gt: &BinaryMask) -> Result<(), MetricsError> {
        if self.height != gt.height() || self.width != gt.width() {
            return Err(MetricsError::DimensionMismatch {
                map: (self.height, self.width),
                mask: (gt.height(), gt.width()),
            });
        }
        Ok(())
    }
}

/// 1.0 inside the mask, 0.0 outside.
pub fn mask_to_activation(mask: &BinaryMask) -> ActivationMap {
    let values = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    ActivationMap {
        height: mask.height(),
        width: mask.width(),
        values,
    }
}

/// Energy-based pointing game: fraction of min-max normalized activation
/// mass inside the mask. Zero for constant maps or a vanishing denominator.
pub fn epg(map: &ActivationMap, gt: &BinaryMask) -> Result<f64, MetricsError> {
    map.check_against(gt)?;
    let (min, max) = map
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if max == min {
        return Ok(0.0);
    }
    let range = max - min;
    let mut inside = 0.0;
    let mut total = 0.0;
    for (&v, &m) in map.values.iter().zip(gt.bits()) {
        let a = (v - min) / range;
        total += a;
        if m {
            inside += a;
        }
    }
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(inside / total)
}

/// `round(n · hw / 100)` with halves rounded up, in exact integer arithmetic.
pub fn threshold_count(percent: usize, pixels: usize) -> usize {
    (2 * percent * pixels + 100) / 200
}

/// Pixel indices ordered by activation, highest first; ties row-major.
pub fn activation_ranking(map: &ActivationMap) -> Vec<usize> {
    let mut order: Vec<usize> = (0..map.values.len()).collect();
    order.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b)));
    order
}

fn iou(intersection: f64, selected: f64, mask: f64) -> f64 {
    let union = selected + mask - intersection;
    if union == 0.0 {
        0.0
    } else {
        intersection / union
    }
}

fn trapezoid(curve: &[f64]) -> f64 {
    let dx = 1.0 / NRA_STEPS as f64;
    curve.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dx).sum()
}

/// Ideal and analytic-random AUC baselines for a mask of `mask_pixels`
/// on a canvas of `pixels`.
pub fn nra_baselines(mask_pixels: usize, pixels: usize) -> (f64, f64) {
    let m = mask_pixels as f64;
    let hw = pixels as f64;
    let mut ideal = Vec::with_capacity(NRA_STEPS);
    let mut random = Vec::with_capacity(NRA_STEPS);
    for n in 1..=NRA_STEPS {
        let k = threshold_count(n, pixels);
        let hit = k.min(mask_pixels) as f64;
        ideal.push(iou(hit, k as f64, m));
        let expected = k as f64 * m / hw;
        random.push(iou(expected, k as f64, m));
    }
    (trapezoid(&ideal), trapezoid(&random))
}

/// IoU of the top-n% selection for n = 1..=100.
pub fn nra_curve(map: &ActivationMap, gt: &BinaryMask) -> Result<Vec<f64>, MetricsError> {
    map.check_against(gt)?;
    let m = gt.count_ones();
    if m == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let order = activation_ranking(map);
    let mut hits = Vec::with_capacity(order.len() + 1);
    hits.push(0usize);
    for &idx in &order {
        let last = *hits.last().unwrap();
        hits.push(last + gt.bits()[idx] as usize);
    }
    Ok((1..=NRA_STEPS)
        .map(|n| {
            let k = threshold_count(n, order.len());
            iou(hits[k] as f64, k as f64, m as f64)
        })
        .collect())
}

/// Normalized region accuracy: AUC of the thresholded-IoU curve scaled so
/// the analytic random ranking scores 0 and the ideal ranking scores 1.
pub fn nra(map: &ActivationMap, gt: &BinaryMask) -> Result<f64, MetricsError> {
    let curve = nra_curve(map, gt)?;
    let auc = trapezoid(&curve);
    let (high, low) = nra_baselines(gt.count_ones(), gt.len());
    if (high - low).abs() < BASELINE_GAP {
        return Err(MetricsError::DegenerateBaseline);
    }
    Ok((auc - low) / (high - low))
}

/// Fraction of scores strictly above 0.5.
pub fn hit_rate(nras: &[f64]) -> Result<f64, MetricsError> {
    if nras.is_empty() {
        return Err(MetricsError::EmptyList("hit_rate"));
    }
    Ok(nras.iter().filter(|&&v| v > 0.5).count() as f64 / nras.len() as f64)
}
