//! Order-preserving matching of predicted to reference events.

use super::{sort_predictions, EventPrediction};
use crate::ingest::GroundTruthEvent;
use crate::matching::iou_unchecked;

/// Maximal total score over monotone matchings of a row-major `rows × cols`
/// grid.
pub fn soda_dp(scores: &[f64], rows: usize, cols: usize) -> f64 {
    assert_eq!(scores.len(), rows * cols);
    let mut s = vec![0.0; (rows + 1) * (cols + 1)];
    let w = cols + 1;
    for i in 1..=rows {
        for j in 1..=cols {
            let diag = s[(i - 1) * w + j - 1] + scores[(i - 1) * cols + j - 1];
            s[i * w + j] = s[(i - 1) * w + j].max(s[i * w + j - 1]).max(diag);
        }
    }
    s[rows * w + cols]
}

/// SODA F-measure for one video with pairwise score `scorer(caption, ref) × IOU`.
pub fn soda_c(
    preds: &[EventPrediction],
    gts: &[GroundTruthEvent],
    scorer: &dyn Fn(&[String], &[String]) -> f64,
) -> f64 {
    if preds.is_empty() || gts.is_empty() {
        return 0.0;
    }
    let mut p = preds.to_vec();
    sort_predictions(&mut p);
    let mut g = gts.to_vec();
    g.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    let mut grid = Vec::with_capacity(p.len() * g.len());
    for pi in &p {
        for gj in &g {
            let iou = iou_unchecked(pi.segment(), gj.segment());
            grid.push(if iou > 0.0 { scorer(&pi.sentence, &gj.sentence) * iou } else { 0.0 });
        }
    }
    let total = soda_dp(&grid, p.len(), g.len());
    let precision = total / p.len() as f64;
    let recall = total / g.len() as f64;
    super::localization::f1(precision, recall)
}
