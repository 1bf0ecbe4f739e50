//! Threshold-averaged caption scores, paragraph scores and the full report.

use serde::{Deserialize, Serialize};

use super::cider::{IdfTable, IdfTableOwned};
use super::{bleu4, corpus_localization, soda_c, sort_predictions, CiderVariant, EventPrediction, Predictions, IOU_THRESHOLDS};
use crate::fixedfmt::to_string_fixed;
use crate::ingest::DenseAnnotation;
use crate::matching::iou_unchecked;
use crate::meta::ArtifactMeta;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaptionMetric {
    Bleu4,
    Cider(CiderVariant),
}

/// One evaluated video: its predictions and its annotation.
pub type VideoPair<'a> = (&'a [EventPrediction], &'a DenseAnnotation);

/// Index of the GT event with maximal IOU (earliest on ties) if it reaches `t`.
fn best_gt(pred: &EventPrediction, gt: &DenseAnnotation, t: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, ev) in gt.events.iter().enumerate() {
        let iou = iou_unchecked(pred.segment(), ev.segment());
        if best.is_none_or(|(_, b)| iou > b) {
            best = Some((j, iou));
        }
    }
    best.filter(|&(_, iou)| iou >= t).map(|(j, _)| j)
}

fn metric_scores(cands: &[Vec<String>], refs: &[Vec<Vec<String>>], metric: CaptionMetric) -> Vec<f64> {
    match metric {
        CaptionMetric::Bleu4 => cands.iter().zip(refs).map(|(c, r)| bleu4(c, &r[0])).collect(),
        CaptionMetric::Cider(v) => super::cider(cands, refs, v),
    }
}

/// Caption score over IOU-paired predictions, averaged over videos and then
/// thresholds. Unpaired predictions score 0 and count in each video's
/// denominator.
pub fn dvc_caption_score(videos: &[VideoPair<'_>], thresholds: &[f64], metric: CaptionMetric) -> Result<f64> {
    if videos.is_empty() || thresholds.is_empty() {
        return Err(Error::EmptyInput("no videos to evaluate".into()));
    }
    let mut acc = 0.0;
    for &t in thresholds {
        let mut cands = Vec::new();
        let mut refs = Vec::new();
        let mut owner = Vec::new();
        for (v, (preds, gt)) in videos.iter().enumerate() {
            for p in preds.iter() {
                if let Some(j) = best_gt(p, gt, t) {
                    cands.push(p.sentence.clone());
                    refs.push(vec![gt.events[j].sentence.clone()]);
                    owner.push(v);
                }
            }
        }
        let scores = metric_scores(&cands, &refs, metric);
        let mut per_video = vec![0.0; videos.len()];
        for (s, &v) in scores.iter().zip(&owner) {
            per_video[v] += s;
        }
        let mean: f64 = per_video
            .iter()
            .zip(videos)
            .map(|(s, (preds, _))| if preds.is_empty() { 0.0 } else { s / preds.len() as f64 })
            .sum::<f64>()
            / videos.len() as f64;
        acc += mean;
    }
    Ok(acc / thresholds.len() as f64)
}

/// Concatenates captions in temporal order per video and scores the
/// paragraphs, averaged over videos.
pub fn paragraph_score(videos: &[VideoPair<'_>], metric: CaptionMetric) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::EmptyInput("no videos to evaluate".into()));
    }
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for (preds, gt) in videos {
        let mut p = preds.to_vec();
        sort_predictions(&mut p);
        cands.push(p.iter().flat_map(|e| e.sentence.iter().cloned()).collect::<Vec<_>>());
        refs.push(vec![gt.events.iter().flat_map(|e| e.sentence.iter().cloned()).collect::<Vec<_>>()]);
    }
    let scores = metric_scores(&cands, &refs, metric);
    Ok(scores.iter().sum::<f64>() / videos.len() as f64)
}

/// Mean per-video SODA_c with caption scorer CIDEr-D / 10, document
/// frequencies from every reference sentence of the evaluated corpus.
pub fn soda_corpus(videos: &[VideoPair<'_>]) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::EmptyInput("no videos to evaluate".into()));
    }
    let sentences: Vec<Vec<String>> =
        videos.iter().flat_map(|(_, gt)| gt.events.iter().map(|e| e.sentence.clone())).collect();
    let owned = IdfTableOwned::from_sentences(&sentences);
    let table: IdfTable<'_> = owned.table();
    let scorer = |c: &[String], r: &[String]| table.score(c, &[r.to_vec()], CiderVariant::D) / 10.0;
    let total: f64 = videos.iter().map(|(p, gt)| soda_c(p, &gt.events, &scorer)).sum();
    Ok(total / videos.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParagraphScores {
    pub bleu4: f64,
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub bleu4: f64,
    pub cider: f64,
    pub soda_c: f64,
    pub paragraph: ParagraphScores,
    pub n_videos: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ArtifactMeta>,
}

impl MetricReport {
    /// Pretty JSON with 4-decimal floats.
    pub fn to_json(&self) -> Result<String> {
        to_string_fixed(self, 4, true)
    }
}

/// Full evaluation of `preds` against every annotated video. Videos without
/// predictions count with an empty prediction list.
pub fn evaluate(preds: &Predictions, gts: &[DenseAnnotation], meta: Option<ArtifactMeta>) -> Result<MetricReport> {
    if gts.is_empty() {
        return Err(Error::EmptyInput("no videos to evaluate".into()));
    }
    let empty: Vec<EventPrediction> = Vec::new();
    let mut ordered: Vec<&DenseAnnotation> = gts.iter().collect();
    ordered.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let videos: Vec<VideoPair<'_>> = ordered
        .into_iter()
        .map(|g| (preds.get(&g.video_id).map(Vec::as_slice).unwrap_or(&empty), g))
        .collect();
    let loc_input: Vec<_> =
        videos.iter().map(|(p, g)| (p.iter().map(EventPrediction::segment).collect(), g.segments())).collect();
    let loc = corpus_localization(&loc_input, &IOU_THRESHOLDS)?;
    Ok(MetricReport {
        precision: loc.precision,
        recall: loc.recall,
        f1: loc.f1,
        bleu4: dvc_caption_score(&videos, &IOU_THRESHOLDS, CaptionMetric::Bleu4)?,
        cider: dvc_caption_score(&videos, &IOU_THRESHOLDS, CaptionMetric::Cider(CiderVariant::D))?,
        soda_c: soda_corpus(&videos)?,
        paragraph: ParagraphScores {
            bleu4: paragraph_score(&videos, CaptionMetric::Bleu4)?,
            cider: paragraph_score(&videos, CaptionMetric::Cider(CiderVariant::D))?,
        },
        n_videos: videos.len(),
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{tokenize, GroundTruthEvent};

    fn ann(id: &str, events: &[(f64, f64, &str)]) -> DenseAnnotation {
        DenseAnnotation::new(
            id,
            100.0,
            events.iter().map(|&(s, e, t)| GroundTruthEvent { start: s, end: e, sentence: tokenize(t) }).collect(),
        )
        .unwrap()
    }

    fn pred(s: f64, e: f64, t: &str) -> EventPrediction {
        EventPrediction { start: s, end: e, confidence: 1.0, sentence: tokenize(t) }
    }

    fn corpus() -> Vec<DenseAnnotation> {
        vec![
            ann("a", &[(0.0, 10.0, "a man opens the door"), (20.0, 30.0, "he walks into a room")]),
            ann("b", &[(5.0, 15.0, "a dog chases a red ball")]),
            ann("c", &[(0.0, 50.0, "someone slices bread on a board"), (60.0, 90.0, "the bread is toasted")]),
        ]
    }

    fn perfect(gts: &[DenseAnnotation]) -> Predictions {
        gts.iter()
            .map(|g| {
                (g.video_id.clone(), g.events.iter().map(|e| EventPrediction {
                    start: e.start,
                    end: e.end,
                    confidence: 1.0,
                    sentence: e.sentence.clone(),
                }).collect())
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_reach_maxima() {
        let gts = corpus();
        let r = evaluate(&perfect(&gts), &gts, None).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert!((r.bleu4 - 1.0).abs() < 1e-12);
        assert!((r.cider - 10.0).abs() < 1e-9);
        assert!((r.soda_c - 1.0).abs() < 1e-9);
        assert!((r.paragraph.bleu4 - 1.0).abs() < 1e-12);
        assert!((r.paragraph.cider - 10.0).abs() < 1e-9);
        let json = r.to_json().unwrap();
        assert!(json.contains("\"f1\": 1.0000"));
        assert!(!json.contains("meta"));
    }

    #[test]
    fn no_pairs_below_threshold() {
        let gts = corpus();
        let mut p = perfect(&gts);
        for (vid, events) in p.iter_mut() {
            let g = gts.iter().find(|g| &g.video_id == vid).unwrap();
            for e in events.iter_mut() {
                // shift far away: IOU 0
                e.start = g.duration - 0.5;
                e.end = g.duration;
            }
        }
        let r = evaluate(&p, &gts, None).unwrap();
        assert_eq!(r.cider, 0.0);
        assert_eq!(r.bleu4, 0.0);
    }

    #[test]
    fn unpaired_predictions_dilute() {
        let gts = corpus();
        let a = &gts[0];
        let preds = vec![pred(0.0, 10.0, "a man opens the door"), pred(80.0, 90.0, "a man opens the door")];
        let videos: Vec<VideoPair<'_>> = vec![(&preds, a)];
        let s = dvc_caption_score(&videos, &[0.5], CaptionMetric::Bleu4).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn paragraph_order_matters() {
        let g = ann("x", &[(0.0, 10.0, "a b c d"), (10.0, 20.0, "e f g h")]);
        let ok = vec![pred(0.0, 10.0, "a b c d"), pred(10.0, 20.0, "e f g h")];
        let swapped = vec![pred(0.0, 10.0, "e f g h"), pred(10.0, 20.0, "a b c d")];
        let s_ok = paragraph_score(&[(&ok, &g)], CaptionMetric::Bleu4).unwrap();
        let s_sw = paragraph_score(&[(&swapped, &g)], CaptionMetric::Bleu4).unwrap();
        assert!((s_ok - 1.0).abs() < 1e-12);
        assert!(s_sw <= s_ok);
        let four = |t: &str, r: &str| {
            let (c, r) = (tokenize(t), tokenize(r));
            let cg = crate::eval::ngram_counts(&c, 4);
            let rg = crate::eval::ngram_counts(&r, 4);
            cg.iter().map(|(k, v)| (*v).min(rg.get(k).copied().unwrap_or(0))).sum::<usize>()
        };
        assert!(four("e f g h a b c d", "a b c d e f g h") < four("a b c d e f g h", "a b c d e f g h"));

        let single = ann("y", &[(0.0, 5.0, "one two three four five")]);
        let p = vec![pred(0.0, 5.0, "one two three four six")];
        let para = paragraph_score(&[(&p, &single)], CaptionMetric::Bleu4).unwrap();
        assert_eq!(para, bleu4(&p[0].sentence, &single.events[0].sentence));
    }

    #[test]
    fn storage_order_invariant() {
        let gts = corpus();
        let mut p = perfect(&gts);
        p.get_mut("a").unwrap()[0].sentence = tokenize("a man closes the door");
        let r1 = evaluate(&p, &gts, None).unwrap();
        for v in p.values_mut() {
            v.reverse();
        }
        let mut g2 = gts.clone();
        g2.reverse();
        let r2 = evaluate(&p, &g2, None).unwrap();
        assert_eq!(r1.to_json().unwrap(), r2.to_json().unwrap());
    }
}
