//! Segment-level video-to-text retrieval and the oracle retrieval modes.

use rayon::prelude::*;

use crate::autograd::Mat;
use crate::eval::EventPrediction;
use crate::ingest::{DenseAnnotation, EmbeddingProvider, FrameFeatures};
use crate::matching::temporal_iou;
use crate::memory::MemoryView;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorQueries {
    /// `W × D` mean frame feature per anchor.
    pub queries: Mat,
    /// Frame index ranges `[start, end)` of each anchor.
    pub anchor_spans: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub index: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievedFeatures {
    /// `W × D`; row `j` aggregates anchor `j`'s hits.
    pub features: Mat,
    pub per_anchor_hits: Vec<Vec<Hit>>,
}

/// Splits the unmasked frames into `anchors` contiguous near-equal spans and
/// averages each span.
pub fn make_anchor_queries(frames: &FrameFeatures, anchors: usize) -> Result<AnchorQueries> {
    let valid: Vec<usize> = (0..frames.rows).filter(|&i| frames.mask[i]).collect();
    if anchors == 0 {
        return Err(Error::Anchor("anchor count must be ≥ 1".into()));
    }
    if valid.is_empty() {
        return Err(Error::Anchor(format!("{}: no unmasked frames", frames.video_id)));
    }
    if anchors > valid.len() {
        return Err(Error::Anchor(format!(
            "{}: {anchors} anchors exceed {} unmasked frames",
            frames.video_id,
            valid.len()
        )));
    }
    let n = valid.len();
    let dim = frames.dim;
    let mut queries = Mat::zeros(anchors, dim);
    let mut anchor_spans = Vec::with_capacity(anchors);
    for j in 0..anchors {
        let (lo, hi) = (j * n / anchors, (j + 1) * n / anchors);
        let members = &valid[lo..hi];
        let row = queries.row_mut(j);
        for &i in members {
            for (q, &x) in row.iter_mut().zip(frames.row(i)) {
                *q += f64::from(x);
            }
        }
        let inv = 1.0 / members.len() as f64;
        for q in row.iter_mut() {
            *q *= inv;
        }
        anchor_spans.push((members[0], members[members.len() - 1] + 1));
    }
    Ok(AnchorQueries {
        queries,
        anchor_spans,
    })
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity between `query` and every entry of the view.
pub fn similarities(query: &[f64], view: &MemoryView<'_>) -> Vec<Hit> {
    let qn = norm(query.iter().copied());
    view.iter()
        .map(|(index, e)| {
            let en = norm(e.embedding.iter().map(|&x| f64::from(x)));
            let similarity = if qn == 0.0 || en == 0.0 {
                0.0
            } else {
                let dot: f64 = query.iter().zip(&e.embedding).map(|(q, &x)| q * f64::from(x)).sum();
                dot / (qn * en)
            };
            Hit { index, similarity }
        })
        .collect()
}

/// Descending similarity, ties broken by lower entry index.
pub fn hit_order(a: &Hit, b: &Hit) -> std::cmp::Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.index.cmp(&b.index))
}

/// The `k` most similar entries, sorted by [`hit_order`].
pub fn retrieve_topk(query: &[f64], view: &MemoryView<'_>, k: usize) -> Result<Vec<Hit>> {
    if query.len() != view.dim() {
        return Err(Error::Dimension {
            expected: view.dim(),
            actual: query.len(),
        });
    }
    let mut hits = similarities(query, view);
    let k = k.min(hits.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < hits.len() {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_by(hit_order);
    Ok(hits)
}

/// Mean of the hit embeddings; zero vector when there are no hits.
pub fn aggregate_topk(hits: &[Hit], view: &MemoryView<'_>) -> Vec<f64> {
    let bank = view.bank();
    let mut out = vec![0.0; bank.dim()];
    if hits.is_empty() {
        return out;
    }
    for h in hits {
        for (o, &x) in out.iter_mut().zip(&bank.entry(h.index).embedding) {
            *o += f64::from(x);
        }
    }
    let inv = 1.0 / hits.len() as f64;
    for o in &mut out {
        *o *= inv;
    }
    out
}

pub fn retrieve_for_video(
    frames: &FrameFeatures,
    view: &MemoryView<'_>,
    anchors: usize,
    k: usize,
) -> Result<RetrievedFeatures> {
    if frames.dim != view.dim() {
        return Err(Error::Dimension {
            expected: view.dim(),
            actual: frames.dim,
        });
    }
    let aq = make_anchor_queries(frames, anchors)?;
    let per_anchor_hits = (0..anchors)
        .into_par_iter()
        .map(|j| retrieve_topk(aq.queries.row(j), view, k))
        .collect::<Result<Vec<_>>>()?;
    let mut features = Mat::zeros(anchors, view.dim());
    for (j, hits) in per_anchor_hits.iter().enumerate() {
        features.row_mut(j).copy_from_slice(&aggregate_topk(hits, view));
    }
    Ok(RetrievedFeatures {
        features,
        per_anchor_hits,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    WithGtProposal,
    WithoutGtProposal,
}

/// Retrieves the top-1 memory caption for every ground-truth sentence and
/// emits it directly, either on the ground-truth segments or on
/// `predicted_segments` (`(start, end, confidence)` in seconds).
pub fn oracle_retrieve(
    annotation: &DenseAnnotation,
    view: &MemoryView<'_>,
    embedder: &dyn EmbeddingProvider,
    mode: OracleMode,
    predicted_segments: Option<&[(f64, f64, f64)]>,
) -> Result<Vec<EventPrediction>> {
    if view.is_empty() {
        return Err(Error::Oracle("oracle retrieval needs a non-empty memory".into()));
    }
    let retrieved: Vec<Vec<String>> = annotation
        .events
        .iter()
        .map(|ev| {
            let q: Vec<f64> = embedder.embed(&ev.sentence).iter().map(|&x| f64::from(x)).collect();
            let top = retrieve_topk(&q, view, 1)?;
            Ok(view.bank().entry(top[0].index).caption.clone())
        })
        .collect::<Result<_>>()?;

    match mode {
        OracleMode::WithGtProposal => Ok(annotation
            .events
            .iter()
            .zip(retrieved)
            .map(|(ev, sentence)| EventPrediction {
                start: ev.start,
                end: ev.end,
                confidence: 1.0,
                sentence,
            })
            .collect()),
        OracleMode::WithoutGtProposal => {
            let preds = predicted_segments.ok_or_else(|| {
                Error::Oracle("mode without GT proposal requires predicted segments".into())
            })?;
            if annotation.events.is_empty() {
                return Err(Error::Oracle(format!("{}: no ground truth events", annotation.video_id)));
            }
            preds
                .iter()
                .map(|&(start, end, confidence)| {
                    let mut best = 0;
                    let mut best_iou = f64::NEG_INFINITY;
                    for (g, ev) in annotation.events.iter().enumerate() {
                        let iou = temporal_iou((start, end), ev.segment())?;
                        if iou > best_iou {
                            best_iou = iou;
                            best = g;
                        }
                    }
                    Ok(EventPrediction {
                        start,
                        end,
                        confidence,
                        sentence: retrieved[best].clone(),
                    })
                })
                .collect()
        }
    }
}
