//! IOU-thresholded precision and recall with their F1.

use crate::matching::iou_unchecked;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn max_iou(seg: (f64, f64), others: &[(f64, f64)]) -> f64 {
    others.iter().map(|&o| iou_unchecked(seg, o)).fold(0.0, f64::max)
}

/// Per-threshold `(precision, recall)` for one video. Hits are counted
/// many-to-one.
pub fn prf_at(preds: &[(f64, f64)], gts: &[(f64, f64)], threshold: f64) -> (f64, f64) {
    let p = if preds.is_empty() {
        0.0
    } else {
        preds.iter().filter(|&&s| max_iou(s, gts) >= threshold).count() as f64 / preds.len() as f64
    };
    let r = gts.iter().filter(|&&g| max_iou(g, preds) >= threshold).count() as f64 / gts.len() as f64;
    (p, r)
}

/// Threshold-averaged P and R for one video; F1 of the averages.
pub fn localization_prf(preds: &[(f64, f64)], gts: &[(f64, f64)], thresholds: &[f64]) -> Result<Prf> {
    if thresholds.is_empty() {
        return Err(Error::Validation("no IOU thresholds".into()));
    }
    if gts.is_empty() {
        return Err(Error::Validation("localization needs at least one ground truth event".into()));
    }
    let (mut p, mut r) = (0.0, 0.0);
    for &t in thresholds {
        let (pt, rt) = prf_at(preds, gts, t);
        p += pt;
        r += rt;
    }
    p /= thresholds.len() as f64;
    r /= thresholds.len() as f64;
    Ok(Prf { precision: p, recall: r, f1: f1(p, r) })
}

/// Averages per-video threshold-averaged P and R over videos.
pub fn corpus_localization(videos: &[(Vec<(f64, f64)>, Vec<(f64, f64)>)], thresholds: &[f64]) -> Result<Prf> {
    if videos.is_empty() {
        return Err(Error::EmptyInput("no videos to evaluate".into()));
    }
    let (mut p, mut r) = (0.0, 0.0);
    for (preds, gts) in videos {
        let v = localization_prf(preds, gts, thresholds)?;
        p += v.precision;
        r += v.recall;
    }
    p /= videos.len() as f64;
    r /= videos.len() as f64;
    Ok(Prf { precision: p, recall: r, f1: f1(p, r) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::IOU_THRESHOLDS;
    use proptest::prelude::*;

    #[test]
    fn hand_cases() {
        let gts = [(0.0, 1.0), (3.0, 7.0)];
        let m = localization_prf(&gts, &gts, &IOU_THRESHOLDS).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));

        for &t in &IOU_THRESHOLDS {
            let m = localization_prf(&[(0.0, 1.0), (5.0, 6.0)], &[(0.0, 1.0)], &[t]).unwrap();
            assert_eq!(m.recall, 1.0);
            assert_eq!(m.precision, 0.5);
            assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        }

        let m = localization_prf(&[(5.0, 6.0)], &[(0.0, 1.0)], &IOU_THRESHOLDS).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = localization_prf(&[], &[(0.0, 1.0)], &IOU_THRESHOLDS).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(localization_prf(&[(0.0, 1.0)], &[], &IOU_THRESHOLDS).is_err());
        assert!(localization_prf(&[(0.0, 1.0)], &[(0.0, 1.0)], &[]).is_err());
    }

    #[test]
    fn many_to_one() {
        // two predictions both overlapping one GT count as two hits
        let m = localization_prf(&[(0.0, 1.0), (0.0, 1.0)], &[(0.0, 1.0), (8.0, 9.0)], &[0.5]).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
    }

    proptest! {
        #[test]
        fn monotone_in_threshold(
            p in prop::collection::vec((0.0f64..10.0, 0.1f64..5.0), 0..6),
            g in prop::collection::vec((0.0f64..10.0, 0.1f64..5.0), 1..6),
        ) {
            let preds: Vec<_> = p.iter().map(|&(s, l)| (s, s + l)).collect();
            let gts: Vec<_> = g.iter().map(|&(s, l)| (s, s + l)).collect();
            let mut last = (f64::INFINITY, f64::INFINITY);
            for t in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
                let (pt, rt) = prf_at(&preds, &gts, t);
                prop_assert!(pt <= last.0 && rt <= last.1);
                last = (pt, rt);
            }
            let mut rev = preds.clone();
            rev.reverse();
            prop_assert_eq!(
                localization_prf(&preds, &gts, &IOU_THRESHOLDS).unwrap(),
                localization_prf(&rev, &gts, &IOU_THRESHOLDS).unwrap()
            );
        }
    }
}
