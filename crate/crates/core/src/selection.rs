//! Top-k / one-standard-deviation model selection and the data and accuracy
//! advantage analytics over learning curves.
//!
//! Accuracies are in percentage points throughout; fractions are in `[0, 1]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::mean_sd;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("curve has {found} points, need at least {needed}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("fraction {0} is not on the curve")]
    MissingFraction(f64),
    #[error("fraction {0} appears more than once")]
    DuplicateFraction(f64),
    #[error("non-finite value in curve")]
    NonFinite,
}

/// Fractions closer than this are treated as the same grid point.
pub const FRACTION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub accuracy: f64,
}

impl CurvePoint {
    pub fn new(fraction: f64, accuracy: f64) -> CurvePoint {
        CurvePoint { fraction, accuracy }
    }
}

/// Points sorted by fraction, rejecting duplicates and non-finite values.
fn sorted(curve: &[CurvePoint]) -> Result<Vec<CurvePoint>, SelectionError> {
    if curve
        .iter()
        .any(|p| !p.fraction.is_finite() || !p.accuracy.is_finite())
    {
        return Err(SelectionError::NonFinite);
    }
    let mut pts = curve.to_vec();
    pts.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
    for w in pts.windows(2) {
        if (w[1].fraction - w[0].fraction).abs() < FRACTION_EPS {
            return Err(SelectionError::DuplicateFraction(w[1].fraction));
        }
    }
    Ok(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub sd: f64,
    pub low: f64,
}

/// The `k` most accurate points, ties broken by lower fraction.
pub fn top_k(curve: &[CurvePoint], k: usize) -> Result<Vec<CurvePoint>, SelectionError> {
    let mut pts = sorted(curve)?;
    if k == 0 || pts.len() < k {
        return Err(SelectionError::TooFewPoints {
            needed: k.max(1),
            found: pts.len(),
        });
    }
    // Stable sort keeps ascending fraction among equal accuracies.
    pts.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    pts.truncate(k);
    Ok(pts)
}

pub fn top_k_band(curve: &[CurvePoint], k: usize) -> Result<Band, SelectionError> {
    let accs: Vec<f64> = top_k(curve, k)?.iter().map(|p| p.accuracy).collect();
    let (mean, sd) = mean_sd(&accs).expect("k >= 1");
    Ok(Band {
        mean,
        sd,
        low: mean - sd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub chosen: CurvePoint,
    pub k: usize,
    pub band: Band,
    /// Points with accuracy at or above the band's lower edge, by fraction.
    pub candidates: Vec<CurvePoint>,
}

/// Picks the smallest fraction whose accuracy is within one sample SD below
/// the mean of the top `k` points. Curves shorter than `k` use all points.
pub fn select_model(curve: &[CurvePoint], k: usize) -> Result<SelectionOutcome, SelectionError> {
    let pts = sorted(curve)?;
    if pts.is_empty() {
        return Err(SelectionError::TooFewPoints {
            needed: 1,
            found: 0,
        });
    }
    let k = k.clamp(1, pts.len());
    let band = top_k_band(&pts, k)?;
    let candidates: Vec<CurvePoint> = pts.into_iter().filter(|p| p.accuracy >= band.low).collect();
    Ok(SelectionOutcome {
        chosen: candidates[0],
        k,
        band,
        candidates,
    })
}

/// Smallest fraction whose accuracy reaches `baseline - tolerance_pp`.
pub fn baseline_crossing(curve: &[CurvePoint], baseline: f64, tolerance_pp: f64) -> Option<f64> {
    assert!(tolerance_pp >= 0.0, "tolerance must be nonnegative");
    let target = baseline - tolerance_pp;
    curve
        .iter()
        .filter(|p| p.accuracy >= target)
        .map(|p| p.fraction)
        .min_by(f64::total_cmp)
}

pub fn accuracy_at(curve: &[CurvePoint], fraction: f64) -> Result<f64, SelectionError> {
    curve
        .iter()
        .find(|p| (p.fraction - fraction).abs() < FRACTION_EPS)
        .map(|p| p.accuracy)
        .ok_or(SelectionError::MissingFraction(fraction))
}

/// Transfer accuracy at `fraction` minus the reference accuracy, in points.
pub fn accuracy_advantage(
    curve: &[CurvePoint],
    reference: f64,
    fraction: f64,
) -> Result<f64, SelectionError> {
    Ok(accuracy_at(curve, fraction)? - reference)
}

/// Smallest fraction at which the transfer curve matches the scratch model's
/// full-data accuracy.
pub fn data_advantage(curve: &[CurvePoint], scratch_full: f64) -> Option<f64> {
    baseline_crossing(curve, scratch_full, 0.0)
}

/// One row of the chosen-models table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub model: String,
    pub mean: f64,
    pub median: f64,
    /// Sample SD over the whole curve.
    pub sd: f64,
    pub max: f64,
    pub fraction_for_max: f64,
    pub selected: SelectionOutcome,
}

pub fn summarize_curve(
    model: &str,
    curve: &[CurvePoint],
    k: usize,
) -> Result<CurveSummary, SelectionError> {
    let pts = sorted(curve)?;
    let selected = select_model(&pts, k)?;
    let accs: Vec<f64> = pts.iter().map(|p| p.accuracy).collect();
    let (mean, sd) = mean_sd(&accs).expect("curve is nonempty");
    let mut s = accs.clone();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    let median = if m % 2 == 1 {
        s[m / 2]
    } else {
        (s[m / 2 - 1] + s[m / 2]) / 2.0
    };
    let best = top_k(&pts, 1)?[0];
    Ok(CurveSummary {
        model: model.to_string(),
        mean,
        median,
        sd,
        max: best.accuracy,
        fraction_for_max: best.fraction,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hand_curve() -> Vec<CurvePoint> {
        [
            (0.10, 91.0),
            (0.15, 90.5),
            (0.075, 90.0),
            (0.125, 89.0),
            (0.05, 85.0),
            (0.025, 80.0),
        ]
        .iter()
        .map(|&(f, a)| CurvePoint::new(f, a))
        .collect()
    }

    #[test]
    fn band_hand_example() {
        let b = top_k_band(&hand_curve(), 5).unwrap();
        assert_abs_diff_eq!(b.mean, 89.1, epsilon = 1e-9);
        assert_abs_diff_eq!(b.sd, 5.8f64.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(b.low, 86.692, epsilon = 1e-3);
    }

    #[test]
    fn band_degenerate_cases() {
        let flat: Vec<_> = (0..5)
            .map(|i| CurvePoint::new(i as f64 / 10.0, 70.0))
            .collect();
        assert_eq!(
            top_k_band(&flat, 5).unwrap(),
            Band {
                mean: 70.0,
                sd: 0.0,
                low: 70.0
            }
        );
        let b = top_k_band(&hand_curve(), 1).unwrap();
        assert_eq!((b.mean, b.sd, b.low), (91.0, 0.0, 91.0));
        assert_eq!(
            top_k_band(&flat[..3], 5),
            Err(SelectionError::TooFewPoints {
                needed: 5,
                found: 3
            })
        );
    }

    #[test]
    fn select_hand_example() {
        let s = select_model(&hand_curve(), 5).unwrap();
        assert_eq!(s.chosen, CurvePoint::new(0.075, 90.0));
        assert_eq!(s.candidates.len(), 4);
        let single = select_model(&[CurvePoint::new(0.3, 55.0)], 5).unwrap();
        assert_eq!(single.chosen, CurvePoint::new(0.3, 55.0));
    }

    #[test]
    fn duplicate_fraction_rejected() {
        let c = [CurvePoint::new(0.1, 1.0), CurvePoint::new(0.1, 2.0)];
        assert_eq!(
            select_model(&c, 5),
            Err(SelectionError::DuplicateFraction(0.1))
        );
    }

    #[test]
    fn crossing_examples() {
        let c: Vec<_> = [
            (0.0, 58.4),
            (0.025, 80.0),
            (0.05, 88.0),
            (0.075, 90.3),
            (0.10, 91.0),
        ]
        .iter()
        .map(|&(f, a)| CurvePoint::new(f, a))
        .collect();
        assert_eq!(baseline_crossing(&c, 91.22, 1.0), Some(0.075));
        assert_eq!(baseline_crossing(&c, 10.0, 0.0), Some(0.0));
        assert_eq!(baseline_crossing(&c, 99.0, 1.0), None);
    }

    #[test]
    fn advantage_examples() {
        let c = [CurvePoint::new(0.0, 58.38)];
        assert_abs_diff_eq!(
            accuracy_advantage(&c, 14.77, 0.0).unwrap(),
            43.61,
            epsilon = 1e-9
        );
        let c = [CurvePoint::new(0.0, 20.83)];
        assert_abs_diff_eq!(
            accuracy_advantage(&c, 13.37, 0.0).unwrap(),
            7.46,
            epsilon = 1e-9
        );
        assert_eq!(accuracy_advantage(&c, 20.83, 0.0).unwrap(), 0.0);
        assert_eq!(
            accuracy_advantage(&c, 1.0, 0.5),
            Err(SelectionError::MissingFraction(0.5))
        );
    }

    #[test]
    fn data_advantage_examples() {
        let c = [
            CurvePoint::new(0.0, 58.38),
            CurvePoint::new(0.6, 91.0),
            CurvePoint::new(0.625, 91.32),
            CurvePoint::new(0.825, 91.42),
        ];
        assert_eq!(data_advantage(&c, 91.22), Some(0.625));
        assert_eq!(data_advantage(&c, 95.0), None);
        assert_eq!(data_advantage(&c, 50.0), Some(0.0));
    }

    #[test]
    fn summary_columns() {
        let s = summarize_curve("BMQ1Q2", &hand_curve(), 5).unwrap();
        assert_eq!(s.max, 91.0);
        assert_eq!(s.fraction_for_max, 0.10);
        assert_abs_diff_eq!(s.median, 89.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mean, 525.5 / 6.0, epsilon = 1e-12);
        assert_eq!(s.selected.chosen.fraction, 0.075);
    }
}
