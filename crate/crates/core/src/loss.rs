//! Set-prediction training objective: matched focal classification, gIOU
//! localization, event-count cross-entropy and caption cross-entropy.

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Mat, Tape, Var};
use crate::ingest::{DenseAnnotation, FrameFeatures};
use crate::matching::{hungarian_match, MatchResult, FOCAL_ALPHA, FOCAL_GAMMA, PROB_EPS};
use crate::model::{DecodeOptions, Model};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// gIOU weight inside the matching cost.
    pub alpha: f64,
    pub lambda_loc: f64,
    pub lambda_count: f64,
    pub lambda_cap: f64,
    /// Optional L1 regression on (center, length); off by default.
    pub lambda_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 2.0, lambda_loc: 2.0, lambda_count: 1.0, lambda_cap: 1.0, lambda_l1: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub loc: f64,
    pub count: f64,
    pub cap: f64,
    pub l1: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Combines components with `total = cls + λ_loc·loc + λ_count·count +
    /// λ_cap·cap (+ λ_l1·l1)`, accumulated left to right.
    pub fn combine(cls: f64, loc: f64, count: f64, cap: f64, l1: f64, w: &LossWeights) -> Self {
        let mut total = cls + w.lambda_loc * loc + w.lambda_count * count + w.lambda_cap * cap;
        if w.lambda_l1 != 0.0 {
            total += w.lambda_l1 * l1;
        }
        LossBreakdown { cls, loc, count, cap, l1, total }
    }
}

/// Ground truth of one video in model units.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTarget {
    /// Normalized `(start, end)` per event, sorted by start.
    pub segments: Vec<(f64, f64)>,
    /// Token ids per event, each ending with the end token.
    pub captions: Vec<Vec<usize>>,
}

impl VideoTarget {
    pub fn from_annotation(ann: &DenseAnnotation, model: &Model) -> Result<Self> {
        if ann.events.is_empty() {
            return Err(Error::Validation(format!("{}: no ground truth events", ann.video_id)));
        }
        Ok(VideoTarget {
            segments: ann.events.iter().map(|e| (e.start / ann.duration, e.end / ann.duration)).collect(),
            captions: ann.events.iter().map(|e| model.vocab.encode(&e.sentence)).collect(),
        })
    }
}

/// Loss graph for one video plus its numeric breakdown and the match used.
pub struct VideoLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub matching: MatchResult,
}

fn column(t: &mut Tape, values: Vec<f64>) -> Var {
    t.constant(Mat::column(&values))
}

/// Records the full objective for one video on `t`. With `fixed` the given
/// assignment is used instead of recomputing the Hungarian match.
pub fn video_loss(
    model: &Model,
    t: &mut Tape,
    frames: &FrameFeatures,
    text: &Mat,
    target: &VideoTarget,
    w: &LossWeights,
    fixed: Option<&MatchResult>,
) -> Result<VideoLoss> {
    let n_gt = target.segments.len();
    if n_gt == 0 {
        return Err(Error::Validation("loss needs at least one ground truth event".into()));
    }
    let enc = model.encode(t, frames, text)?;
    let heads = model.decode(t, &enc, DecodeOptions::default());
    let centers = t.value(heads.center).data().to_vec();
    let lengths = t.value(heads.length).data().to_vec();
    let logits = t.value(heads.conf_logit).data().to_vec();
    let lq = centers.len();

    let matching = match fixed {
        Some(m) => m.clone(),
        None => {
            let queries: Vec<(f64, (f64, f64))> = (0..lq)
                .map(|q| (sigmoid(logits[q]), (centers[q] - lengths[q] / 2.0, centers[q] + lengths[q] / 2.0)))
                .collect();
            hungarian_match(&queries, &target.segments, w.alpha)
        }
    };
    let rows: Vec<usize> = matching.pairs.iter().map(|p| p.0).collect();
    let gts: Vec<usize> = matching.pairs.iter().map(|p| p.1).collect();
    let n_gt_f = n_gt as f64;

    // classification
    let p = t.sigmoid(heads.conf_logit);
    let p = t.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let q = t.rsub_scalar(1.0, p);
    let ln_p = t.ln(p);
    let ln_q = t.ln(q);
    debug_assert_eq!(FOCAL_GAMMA, 2.0);
    let q2 = t.mul(q, q);
    let pos = t.mul(q2, ln_p);
    let pos = t.scale(pos, -FOCAL_ALPHA);
    let p2 = t.mul(p, p);
    let neg = t.mul(p2, ln_q);
    let neg = t.scale(neg, -(1.0 - FOCAL_ALPHA));
    let mut is_pos = vec![0.0; lq];
    for &r in &rows {
        is_pos[r] = 1.0;
    }
    let is_neg = is_pos.iter().map(|v| 1.0 - v).collect();
    let tp = column(t, is_pos);
    let tn = column(t, is_neg);
    let a = t.mul(pos, tp);
    let b = t.mul(neg, tn);
    let per_query = t.add(a, b);
    let cls = t.sum(per_query);
    let cls = t.scale(cls, 1.0 / n_gt_f);

    // localization
    let idx: Vec<Option<usize>> = rows.iter().map(|&r| Some(r)).collect();
    let c = t.gather_rows(heads.center, &idx);
    let l = t.gather_rows(heads.length, &idx);
    let half = t.scale(l, 0.5);
    let s = t.sub(c, half);
    let e = t.add(c, half);
    let gs = column(t, gts.iter().map(|&g| target.segments[g].0).collect());
    let ge = column(t, gts.iter().map(|&g| target.segments[g].1).collect());
    let glen = column(t, gts.iter().map(|&g| target.segments[g].1 - target.segments[g].0).collect());
    let lo = t.max(s, gs);
    let hi = t.min(e, ge);
    let span = t.sub(hi, lo);
    let inter = t.relu(span);
    let sum_len = t.add(l, glen);
    let union = t.sub(sum_len, inter);
    let hull_hi = t.max(e, ge);
    let hull_lo = t.min(s, gs);
    let hull = t.sub(hull_hi, hull_lo);
    let iou = t.div(inter, union);
    let cover = t.div(union, hull);
    let giou = t.add(iou, cover);
    let giou = t.add_scalar(giou, -1.0);
    let one_minus = t.rsub_scalar(1.0, giou);
    let loc = t.sum(one_minus);
    let n_match = rows.len().max(1) as f64;
    let loc = t.scale(loc, 1.0 / n_match);

    // optional L1 on (center, length)
    let l1 = if w.lambda_l1 != 0.0 {
        let gc = column(t, gts.iter().map(|&g| (target.segments[g].0 + target.segments[g].1) / 2.0).collect());
        let dc = t.sub(c, gc);
        let dl = t.sub(l, glen);
        let both = t.concat_rows(&[dc, dl]);
        let pos_part = t.relu(both);
        let neg_in = t.scale(both, -1.0);
        let neg_part = t.relu(neg_in);
        let abs = t.add(pos_part, neg_part);
        let s = t.sum(abs);
        Some(t.scale(s, 1.0 / n_match))
    } else {
        None
    };

    // count
    let bin = n_gt.min(model.config.max_events) - 1;
    let picked = t.pick(heads.count_logp, &[bin]);
    let count = t.scale(picked, -1.0);

    // caption
    let segs: Vec<(f64, f64)> = gts.iter().map(|&g| target.segments[g]).collect();
    let targets: Vec<Vec<usize>> = gts.iter().map(|&g| target.captions[g].clone()).collect();
    let n_tokens: usize = targets.iter().map(Vec::len).sum();
    let (nll, _) = model.caption_nll(t, &enc, &heads, &rows, &segs, &targets);
    let cap = t.scale(nll, 1.0 / n_tokens.max(1) as f64);

    let mut total = t.scale(loc, w.lambda_loc);
    total = t.add(cls, total);
    let wc = t.scale(count, w.lambda_count);
    total = t.add(total, wc);
    let wk = t.scale(cap, w.lambda_cap);
    total = t.add(total, wk);
    if let Some(l1v) = l1 {
        let wl = t.scale(l1v, w.lambda_l1);
        total = t.add(total, wl);
    }
    let breakdown = LossBreakdown::combine(
        t.value(cls).scalar(),
        t.value(loc).scalar(),
        t.value(count).scalar(),
        t.value(cap).scalar(),
        l1.map_or(0.0, |v| t.value(v).scalar()),
        w,
    );
    Ok(VideoLoss { total, breakdown, matching })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combine_identity() {
        let w = LossWeights::default();
        let b = LossBreakdown::combine(1.0, 1.0, 1.0, 1.0, 0.0, &w);
        assert_eq!(b.total, 5.0);
        let w2 = LossWeights { lambda_cap: 2.0, ..w };
        let b2 = LossBreakdown::combine(0.3, 0.7, 1.1, 0.9, 0.0, &w2);
        let b1 = LossBreakdown::combine(0.3, 0.7, 1.1, 0.9, 0.0, &w);
        assert!((b2.total - b1.total - 0.9).abs() < 1e-15);
        let zero = LossBreakdown::combine(0.0, 0.0, 0.0, 0.0, 0.0, &w);
        assert_eq!(zero.total, 0.0);
    }
}
