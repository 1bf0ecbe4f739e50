//! Predictions JSON: `{"<video_id>": [{"timestamp": [s, e], "sentence": "...", "confidence": c}]}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sort_predictions, EventPrediction};
use crate::fixedfmt::to_string_fixed;
use crate::ingest::text::{detokenize, tokenize};
use crate::meta::ArtifactMeta;
use crate::{Error, Result};

pub type Predictions = BTreeMap<String, Vec<EventPrediction>>;

pub const META_KEY: &str = "__meta__";

#[derive(Serialize, Deserialize)]
struct RawPrediction {
    timestamp: [f64; 2],
    sentence: String,
    #[serde(default = "one")]
    confidence: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize)]
#[serde(untagged)]
enum Entry<'a> {
    Meta(&'a ArtifactMeta),
    Events(Vec<RawPrediction>),
}

/// Serializes predictions with 6-decimal floats; events are written in
/// canonical order.
pub fn predictions_to_json(preds: &Predictions, meta: Option<&ArtifactMeta>) -> Result<String> {
    let mut out: BTreeMap<&str, Entry<'_>> = BTreeMap::new();
    if let Some(m) = meta {
        out.insert(META_KEY, Entry::Meta(m));
    }
    for (vid, events) in preds {
        let mut events = events.clone();
        sort_predictions(&mut events);
        let raw = events
            .iter()
            .map(|e| RawPrediction {
                timestamp: [e.start, e.end],
                sentence: detokenize(&e.sentence),
                confidence: e.confidence,
            })
            .collect();
        out.insert(vid.as_str(), Entry::Events(raw));
    }
    to_string_fixed(&out, 6, true)
}

/// Parses predictions JSON; the provenance entry, if present, is returned
/// separately.
pub fn parse_predictions(text: &str) -> Result<(Predictions, Option<ArtifactMeta>)> {
    let mut raw: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("predictions: {e}")))?;
    let meta = match raw.remove(META_KEY) {
        Some(v) => Some(serde_json::from_value(v).map_err(|e| Error::Parse(format!("{META_KEY}: {e}")))?),
        None => None,
    };
    let mut preds = Predictions::new();
    for (vid, value) in raw {
        let events: Vec<RawPrediction> =
            serde_json::from_value(value).map_err(|e| Error::Parse(format!("predictions for {vid}: {e}")))?;
        let mut list = Vec::with_capacity(events.len());
        for ev in events {
            let [start, end] = ev.timestamp;
            if !(start <= end) {
                return Err(Error::Validation(format!("{vid}: predicted start {start} > end {end}")));
            }
            list.push(EventPrediction { start, end, confidence: ev.confidence, sentence: tokenize(&ev.sentence) });
        }
        sort_predictions(&mut list);
        preds.insert(vid, list);
    }
    Ok((preds, meta))
}

pub fn save_predictions(preds: &Predictions, meta: Option<&ArtifactMeta>, path: &Path) -> Result<()> {
    std::fs::write(path, predictions_to_json(preds, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<(Predictions, Option<ArtifactMeta>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}
