use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::domain::{BinaryMask, EvidenceRecord, LogitClamp};

/// Tag recorded in run manifests next to values computed with
/// [`pct_logit_drop`].
pub const PCT_LOGIT_DROP_FORMULA: &str = "pct_logit_drop/v1: 100*max(0, l(s)-l(s_i))/(|l(s)|+eps)";
/// Tag for [`normalized_importance`].
pub const NORMALIZED_IMPORTANCE_FORMULA: &str = "normalized_importance/v1: cdp/max(mask_area_pct, area_floor_pct)";

/// Percentage of the canvas covered by the mask.
pub fn mask_area_pct(mask: &BinaryMask) -> f64 {
    100.0 * mask.count_ones() as f64 / mask.len() as f64
}

/// `100 · max(0, s − s_i) / (s + ε)`.
pub fn confidence_drop_pct(s: f64, s_i: f64, epsilon: f64) -> f64 {
    100.0 * (s - s_i).max(0.0) / (s + epsilon)
}

/// Log-odds of a probability clamped into `clamp`.
pub fn log_odds(p: f64, clamp: LogitClamp) -> f64 {
    let p = clamp.apply(p);
    (p / (1.0 - p)).ln()
}

/// `ℓ(s_i) − ℓ(s)`; negative when removal lowers confidence.
pub fn logit_delta(s: f64, s_i: f64, clamp: LogitClamp) -> f64 {
    log_odds(s_i, clamp) - log_odds(s, clamp)
}

/// Relative log-odds drop, `100 · max(0, ℓ(s) − ℓ(s_i)) / (|ℓ(s)| + ε)`.
pub fn pct_logit_drop(s: f64, s_i: f64, epsilon: f64, clamp: LogitClamp) -> f64 {
    let ls = log_odds(s, clamp);
    let lsi = log_odds(s_i, clamp);
    100.0 * (ls - lsi).max(0.0) / (ls.abs() + epsilon)
}

/// Confidence drop per unit of occluded area.
pub fn normalized_importance(record: &EvidenceRecord, area_floor_pct: f64) -> f64 {
    importance_from_parts(record.cdp, record.mask_area, area_floor_pct)
}

pub fn importance_from_parts(cdp: f64, mask_area: f64, area_floor_pct: f64) -> f64 {
    cdp / mask_area.max(area_floor_pct)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageAggregate {
    pub adp: f64,
    pub mdp: f64,
    pub mad: f64,
    pub n_records: usize,
}

/// Mean and max confidence drop, max absolute logit delta.
pub fn aggregate_image(records: &[EvidenceRecord]) -> Result<ImageAggregate, MetricsError> {
    let cdps: Vec<f64> = records.iter().map(|r| r.cdp).collect();
    let lds: Vec<f64> = records.iter().map(|r| r.logit_delta).collect();
    aggregate_values(&cdps, &lds)
}

pub fn aggregate_values(cdps: &[f64], logit_deltas: &[f64]) -> Result<ImageAggregate, MetricsError> {
    if cdps.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    // Sorted summation keeps the mean independent of input order.
    let mut sorted = cdps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let adp = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let mdp = sorted[sorted.len() - 1];
    let mad = logit_deltas.iter().map(|l| l.abs()).fold(0.0, f64::max);
    Ok(ImageAggregate {
        // Rounding in the mean can overshoot the max by an ulp.
        adp: adp.min(mdp),
        mdp,
        mad,
        n_records: cdps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-8;

    #[test]
    fn mask_area_examples() {
        assert_eq!(mask_area_pct(&BinaryMask::ones(8, 8).unwrap()), 100.0);
        assert_eq!(mask_area_pct(&BinaryMask::zeros(8, 8).unwrap()), 0.0);
        let m = BinaryMask::from_fn(8, 8, |r, c| r < 2 && c < 8).unwrap();
        assert_eq!(mask_area_pct(&m), 25.0);
    }

    #[test]
    fn cdp_examples() {
        assert!((confidence_drop_pct(0.8, 0.4, EPS) - 50.0).abs() < 1e-6);
        assert_eq!(confidence_drop_pct(0.4, 0.8, EPS), 0.0);
        assert_eq!(confidence_drop_pct(0.4, 0.4, EPS), 0.0);
        assert_eq!(confidence_drop_pct(0.0, 0.0, EPS), 0.0);
    }

    #[test]
    fn logit_delta_examples() {
        let c = LogitClamp::default();
        assert_eq!(logit_delta(0.5, 0.5, c), 0.0);
        // ln(1/4) − ln(4) = −2 ln 4 = −2.7725887222397811...
        assert!((logit_delta(0.8, 0.2, c) - (-2.772589)).abs() < 1e-5);
        assert_eq!(log_odds(1.0, c), log_odds(1.0 - 1e-6, c));
        assert!((log_odds(1.0, c) - 13.815509557963773).abs() < 1e-9);
        assert!(logit_delta(1.0, 0.0, c).is_finite());
    }

    #[test]
    fn pct_logit_drop_examples() {
        let c = LogitClamp::default();
        assert_eq!(pct_logit_drop(0.7, 0.7, EPS, c), 0.0);
        assert!((pct_logit_drop(0.8, 0.5, EPS, c) - 100.0).abs() < 1e-4);
        assert_eq!(pct_logit_drop(0.3, 0.6, EPS, c), 0.0);
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate_values(&[10.0, 30.0, 50.0], &[0.0; 3]).unwrap();
        assert_eq!((a.adp, a.mdp), (30.0, 50.0));
        let a = aggregate_values(&[12.5], &[-0.3]).unwrap();
        assert_eq!((a.adp, a.mdp, a.mad), (12.5, 12.5, 0.3));
        let a = aggregate_values(&[1.0, 2.0], &[-2.0, 1.5]).unwrap();
        assert_eq!(a.mad, 2.0);
        assert!(matches!(aggregate_values(&[], &[]), Err(MetricsError::EmptyAggregate)));
    }

    #[test]
    fn importance_examples() {
        assert_eq!(importance_from_parts(50.0, 25.0, 0.5), 2.0);
        assert_eq!(importance_from_parts(50.0, 0.1, 0.5), 100.0);
    }

    proptest! {
        #[test]
        fn adp_never_exceeds_mdp(cdps in prop::collection::vec(0.0f64..=100.0, 1..40)) {
            let a = aggregate_values(&cdps, &vec![0.0; cdps.len()]).unwrap();
            prop_assert!(a.adp <= a.mdp);
            prop_assert!(a.mdp <= 100.0);
        }

        #[test]
        fn aggregates_are_order_invariant(
            mut pairs in prop::collection::vec((0.0f64..=100.0, -20.0f64..20.0), 1..20),
        ) {
            let (c, l): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let a = aggregate_values(&c, &l).unwrap();
            pairs.reverse();
            let (c, l): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            prop_assert_eq!(a, aggregate_values(&c, &l).unwrap());
        }

        #[test]
        fn cdp_is_a_bounded_percentage(s in 0.0f64..=1.0, si in 0.0f64..=1.0) {
            let c = confidence_drop_pct(s, si, EPS);
            prop_assert!((0.0..=100.0).contains(&c));
        }
    }
}
