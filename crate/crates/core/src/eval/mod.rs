//! Localization and caption metrics, predictions IO, and the metric report.

pub mod bleu;
pub mod cider;
pub mod localization;
pub mod predictions;
pub mod report;
pub mod soda;

use std::collections::BTreeMap;

pub use bleu::bleu4;
pub use cider::{cider, CiderVariant};
pub use localization::{corpus_localization, localization_prf, Prf};
pub use predictions::{load_predictions, parse_predictions, predictions_to_json, save_predictions, Predictions};
pub use report::{dvc_caption_score, evaluate, paragraph_score, CaptionMetric, MetricReport, ParagraphScores};
pub use soda::{soda_c, soda_dp};

/// IOU thresholds of the standard dense-captioning protocol.
pub const IOU_THRESHOLDS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

/// One predicted event: a segment in seconds, a confidence and a sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct EventPrediction {
    pub start: f64,
    pub end: f64,
    pub confidence: f64,
    pub sentence: Vec<String>,
}

impl EventPrediction {
    pub fn segment(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

/// Sorts predictions canonically: start, end, then sentence.
pub fn sort_predictions(preds: &mut [EventPrediction]) {
    preds.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.end.total_cmp(&b.end))
            .then_with(|| a.sentence.cmp(&b.sentence))
            .then(b.confidence.total_cmp(&a.confidence))
    });
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut out = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}
