//! Agreement and repeatability statistics. Sample (n - 1) standard
//! deviations throughout.

use serde::Serialize;
use thiserror::Error;

pub const GOLD_FLOW: f64 = 1150.0;
pub const GOLD_AREA: f64 = 70.8;
pub const CI_TOLERANCE_PERCENT: f64 = 10.0;
/// Two-sided 95% normal quantile used for limits of agreement.
pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("mean is zero; coefficient of variation undefined")]
    ZeroMean,
    #[error("gold value must be positive, got {0}")]
    InvalidGold(f64),
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlandAltmanResult {
    pub pair_means: Vec<f64>,
    /// `a - b` point-wise.
    pub diffs: Vec<f64>,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltmanResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::TooFewValues(a.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let pair_means = a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect();
    let mean_diff = mean(&diffs);
    let sd_diff = sample_sd(&diffs);
    Ok(BlandAltmanResult {
        pair_means,
        diffs,
        mean_diff,
        sd_diff,
        loa_low: mean_diff - LOA_Z * sd_diff,
        loa_high: mean_diff + LOA_Z * sd_diff,
    })
}

/// True when every difference lies inside the result's own limits of
/// agreement. This screens for gross shape mismatch; roughly 1 point in 20
/// falls outside for Gaussian differences, so it is not a significance test.
pub fn agreement_verdict(r: &BlandAltmanResult) -> bool {
    r.diffs.iter().all(|d| (r.loa_low..=r.loa_high).contains(d))
}

/// Percent coefficient of variation, `100 * sd / mean`.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFewValues(values.len()));
    }
    let m = mean(values);
    if m == 0.0 {
        return Err(StatsError::ZeroMean);
    }
    Ok(100.0 * sample_sd(values) / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceCheck {
    pub within: bool,
    pub low: f64,
    pub high: f64,
}

/// Closed interval `gold * (1 -/+ tolerance/100)` and whether `value` is in it.
pub fn confidence_check(
    value: f64,
    gold: f64,
    tolerance_percent: f64,
) -> Result<ConfidenceCheck, StatsError> {
    if !(gold > 0.0) {
        return Err(StatsError::InvalidGold(gold));
    }
    let low = gold * (1.0 - tolerance_percent / 100.0);
    let high = gold * (1.0 + tolerance_percent / 100.0);
    Ok(ConfidenceCheck {
        within: value >= low && value <= high,
        low,
        high,
    })
}

/// Per-mode summary over repeated acquisitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub n_repeats: usize,
    pub mean_flow: f64,
    pub sd_flow: f64,
    /// `None` with fewer than two repeats.
    pub cv_percent: Option<f64>,
    pub area: f64,
    pub in_flow_ci: bool,
    pub in_area_ci: bool,
}

impl RunSummary {
    /// Summarizes per-repeat mean flows and segmented areas against the gold values.
    pub fn from_repeats(flows: &[f64], areas: &[f64]) -> Result<Self, StatsError> {
        if flows.is_empty() || flows.len() != areas.len() {
            return Err(StatsError::LengthMismatch(flows.len(), areas.len()));
        }
        let mean_flow = mean(flows);
        let area = mean(areas);
        let cv_percent = match coefficient_of_variation(flows) {
            Ok(cv) => Some(cv),
            Err(StatsError::TooFewValues(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            n_repeats: flows.len(),
            mean_flow,
            sd_flow: sample_sd(flows),
            cv_percent,
            area,
            in_flow_ci: confidence_check(mean_flow, GOLD_FLOW, CI_TOLERANCE_PERCENT)?.within,
            in_area_ci: confidence_check(area, GOLD_AREA, CI_TOLERANCE_PERCENT)?.within,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_limits() {
        let r = bland_altman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.diffs, vec![0.0, 1.0, 2.0]);
        assert_eq!(r.pair_means, vec![1.0, 1.5, 2.0]);
        assert!((r.mean_diff - 1.0).abs() < 1e-12);
        assert!((r.sd_diff - 1.0).abs() < 1e-12);
        assert!((r.loa_low + 0.96).abs() < 1e-12);
        assert!((r.loa_high - 2.96).abs() < 1e-12);
        assert!(agreement_verdict(&r));
    }

    #[test]
    fn identical_curves_agree() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0];
        let r = bland_altman(&a, &a).unwrap();
        assert_eq!((r.mean_diff, r.loa_low, r.loa_high), (0.0, 0.0, 0.0));
        assert!(agreement_verdict(&r));
    }

    #[test]
    fn bad_lengths() {
        assert_eq!(
            bland_altman(&[1.0, 2.0], &[1.0]),
            Err(StatsError::LengthMismatch(2, 1))
        );
        assert_eq!(bland_altman(&[1.0], &[1.0]), Err(StatsError::TooFewValues(1)));
    }

    #[test]
    fn outlier_fails_verdict() {
        // 31 alternating +/-1 diffs, sd about 1; a 10 sd spike must fall outside
        let mut a: Vec<f64> = (0..32).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let b = vec![0.0; 32];
        let base = bland_altman(&a, &b).unwrap();
        a[31] = 10.0 * base.sd_diff;
        let r = bland_altman(&a, &b).unwrap();
        // oracle: recompute the limit by hand
        let m = a.iter().sum::<f64>() / 32.0;
        let sd = (a.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 31.0).sqrt();
        assert!(a[31] > m + 1.96 * sd);
        assert!(!agreement_verdict(&r));
    }

    #[test]
    fn cv_examples() {
        assert_eq!(coefficient_of_variation(&[1116.0; 3]).unwrap(), 0.0);
        let cv = coefficient_of_variation(&[100.0, 102.0]).unwrap();
        assert!((cv - 100.0 * 2f64.sqrt() / 101.0).abs() < 1e-12);
        assert!((cv - 1.40).abs() < 0.005);
        // two values symmetric about 1116 with sample sd 24.5
        let h = 24.5 / 2f64.sqrt();
        let cv = coefficient_of_variation(&[1116.0 - h, 1116.0 + h]).unwrap();
        assert!((cv - 2.195).abs() < 0.001, "{cv}");
        assert_eq!(coefficient_of_variation(&[1.0, -1.0]), Err(StatsError::ZeroMean));
        assert_eq!(coefficient_of_variation(&[1.0]), Err(StatsError::TooFewValues(1)));
    }

    #[test]
    fn confidence_examples() {
        let c = confidence_check(1116.0, 1150.0, 10.0).unwrap();
        assert!(c.within);
        assert!((c.low - 1035.0).abs() < 1e-9 && (c.high - 1265.0).abs() < 1e-9);
        assert!(!confidence_check(1266.0, 1150.0, 10.0).unwrap().within);
        let area = confidence_check(70.1, 70.8, 10.0).unwrap();
        assert!(area.within);
        assert!((area.low - 63.72).abs() < 1e-9);
        assert!(confidence_check(1.0, 0.0, 10.0).is_err());
    }

    #[test]
    fn summary_with_one_repeat_omits_cv() {
        let s = RunSummary::from_repeats(&[1140.0], &[70.0]).unwrap();
        assert_eq!(s.cv_percent, None);
        assert!(s.in_flow_ci && s.in_area_ci);
        let s = RunSummary::from_repeats(&[1140.0, 1160.0], &[70.0, 90.0]).unwrap();
        assert!(s.cv_percent.is_some());
        assert!(!s.in_area_ci);
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-1e3f64..1e3, n),
                prop::collection::vec(-1e3f64..1e3, n),
            )
        })
    }

    proptest! {
        #[test]
        fn swapping_negates((a, b) in pair()) {
            let ab = bland_altman(&a, &b).unwrap();
            let ba = bland_altman(&b, &a).unwrap();
            prop_assert!((ab.mean_diff + ba.mean_diff).abs() < 1e-9);
            prop_assert!((ab.loa_low + ba.loa_high).abs() < 1e-9);
            prop_assert!((ab.loa_high + ba.loa_low).abs() < 1e-9);
            prop_assert!(ab.loa_low <= ab.mean_diff && ab.mean_diff <= ab.loa_high);
        }

        #[test]
        fn common_shift_is_invisible((a, b) in pair(), c in -1e4f64..1e4) {
            let r = bland_altman(&a, &b).unwrap();
            let a2: Vec<f64> = a.iter().map(|v| v + c).collect();
            let b2: Vec<f64> = b.iter().map(|v| v + c).collect();
            let s = bland_altman(&a2, &b2).unwrap();
            prop_assert!((r.mean_diff - s.mean_diff).abs() < 1e-8);
            prop_assert!((r.loa_low - s.loa_low).abs() < 1e-8);
            prop_assert!((r.loa_high - s.loa_high).abs() < 1e-8);
            for (x, y) in r.diffs.iter().zip(&s.diffs) {
                prop_assert!((x - y).abs() < 1e-8);
            }
        }

        #[test]
        fn scaling_scales((a, b) in pair(), k in 0.01f64..100.0) {
            let r = bland_altman(&a, &b).unwrap();
            let a2: Vec<f64> = a.iter().map(|v| v * k).collect();
            let b2: Vec<f64> = b.iter().map(|v| v * k).collect();
            let s = bland_altman(&a2, &b2).unwrap();
            let tol = 1e-9 * (1.0 + r.loa_high.abs() + r.loa_low.abs()) * k;
            prop_assert!((s.mean_diff - k * r.mean_diff).abs() < tol);
            prop_assert!(((s.loa_high - s.loa_low) - k * (r.loa_high - r.loa_low)).abs() < tol);
        }

        #[test]
        fn confidence_is_monotone(gold in 1.0f64..1e4, x in -2.0f64..2.0, y in -2.0f64..2.0) {
            // within the band, moving toward gold never leaves it
            let (near, far) = if x.abs() <= y.abs() { (x, y) } else { (y, x) };
            let far_in = confidence_check(gold * (1.0 + far / 10.0), gold, 10.0).unwrap().within;
            let near_in = confidence_check(gold * (1.0 + near / 10.0), gold, 10.0).unwrap().within;
            prop_assert!(!far_in || near_in);
            prop_assert!(!near_in || near.abs() <= 1.0 + 1e-12);
        }
    }
}
