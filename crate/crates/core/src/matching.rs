//! Temporal overlap measures, focal loss and minimum-cost bipartite matching.

use crate::{Error, Result};

pub type Segment = (f64, f64);

fn check(seg: Segment) -> Result<()> {
    if seg.0.is_nan() || seg.1.is_nan() || seg.0 > seg.1 {
        return Err(Error::Validation(format!(
            "segment start {} > end {}",
            seg.0, seg.1
        )));
    }
    Ok(())
}

/// Intersection over union of two 1-D segments.
///
/// Zero-length operands give 0 unless both are the same point (then 1).
pub fn temporal_iou(a: Segment, b: Segment) -> Result<f64> {
    check(a)?;
    check(b)?;
    Ok(iou_unchecked(a, b))
}

pub(crate) fn iou_unchecked(a: Segment, b: Segment) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

/// Generalized IOU: `IOU − (|hull| − |union|) / |hull|`.
pub fn giou_1d(a: Segment, b: Segment) -> Result<f64> {
    check(a)?;
    check(b)?;
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    let hull = a.1.max(b.1) - a.0.min(b.0);
    if hull <= 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    Ok(iou - (hull - union) / hull)
}

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const PROB_EPS: f64 = 1e-7;

/// Binary focal loss of probability `prob` for a positive or negative target.
pub fn focal_loss(prob: f64, is_positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if is_positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    /// `(query index, gt index)` sorted by query index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
}

impl MatchResult {
    pub fn gt_of(&self, query: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == query).map(|p| p.1)
    }
}

/// Minimum-cost assignment on a row-major `rows × cols` cost matrix.
///
/// Every row is assigned when `rows ≤ cols`, otherwise every column. Returns
/// `(row, col)` pairs sorted by row. Shortest augmenting paths with dual
/// potentials, `O(n²m)`.
pub fn linear_assignment(costs: &[f64], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    assert_eq!(costs.len(), rows * cols, "cost matrix shape mismatch");
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        let mut t = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = costs[r * cols + c];
            }
        }
        let mut pairs: Vec<(usize, usize)> = linear_assignment(&t, cols, rows)
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
        pairs.sort_unstable();
        return pairs;
    }
    let (n, m) = (rows, cols);
    let cost = |r: usize, c: usize| costs[(r - 1) * m + (c - 1)];
    // 1-based; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Matching cost `focal(p, positive) + α·(1 − gIOU)` for one query/GT pair.
pub fn match_cost(prob: f64, pred: Segment, gt: Segment, alpha: f64) -> f64 {
    let giou = giou_1d(pred, gt).unwrap_or(-1.0);
    focal_loss(prob, true, FOCAL_ALPHA, FOCAL_GAMMA) + alpha * (1.0 - giou)
}

/// Assigns ground-truth events to queries. `queries` holds `(probability,
/// normalized segment)` per query; `gts` are normalized segments.
pub fn hungarian_match(queries: &[(f64, Segment)], gts: &[Segment], alpha: f64) -> MatchResult {
    let (n, m) = (queries.len(), gts.len());
    let mut costs = Vec::with_capacity(n * m);
    for &(p, seg) in queries {
        for &g in gts {
            costs.push(match_cost(p, seg, g, alpha));
        }
    }
    let pairs = linear_assignment(&costs, n, m);
    let unmatched = (0..n).filter(|q| !pairs.iter().any(|p| p.0 == *q)).collect();
    MatchResult { pairs, unmatched }
}
