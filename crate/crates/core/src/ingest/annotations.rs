//! ActivityNet-Captions style annotation files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::text::tokenize;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthEvent {
    pub start: f64,
    pub end: f64,
    pub sentence: Vec<String>,
}

impl GroundTruthEvent {
    pub fn segment(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseAnnotation {
    pub video_id: String,
    pub duration: f64,
    /// Sorted by start time.
    pub events: Vec<GroundTruthEvent>,
}

impl DenseAnnotation {
    /// Validates and sorts the events by start time (stable on ties).
    pub fn new(video_id: impl Into<String>, duration: f64, mut events: Vec<GroundTruthEvent>) -> Result<Self> {
        let video_id = video_id.into();
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::Validation(format!(
                "video {video_id}: duration must be positive, got {duration}"
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if !(e.start.is_finite() && e.end.is_finite()) || e.start >= e.end {
                return Err(Error::Validation(format!(
                    "video {video_id}: event {i} has start ≥ end ({} ≥ {})",
                    e.start, e.end
                )));
            }
            if e.start < 0.0 || e.end > duration {
                return Err(Error::Validation(format!(
                    "video {video_id}: event {i} [{}, {}] outside [0, {duration}]",
                    e.start, e.end
                )));
            }
            if e.sentence.is_empty() {
                return Err(Error::Validation(format!(
                    "video {video_id}: event {i} has an empty sentence"
                )));
            }
        }
        events.sort_by(|a, b| a.start.total_cmp(&b.start));
        Ok(DenseAnnotation {
            video_id,
            duration,
            events,
        })
    }

    pub fn segments(&self) -> Vec<(f64, f64)> {
        self.events.iter().map(GroundTruthEvent::segment).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    duration: f64,
    timestamps: Vec<[f64; 2]>,
    sentences: Vec<String>,
}

/// Parses annotation JSON text. Output is ordered by video id.
pub fn parse_annotations(text: &str) -> Result<Vec<DenseAnnotation>> {
    let raw: BTreeMap<String, RawEntry> =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    raw.into_iter()
        .map(|(video_id, entry)| {
            if entry.timestamps.len() != entry.sentences.len() {
                return Err(Error::Validation(format!(
                    "video {video_id}: {} timestamps but {} sentences",
                    entry.timestamps.len(),
                    entry.sentences.len()
                )));
            }
            let events = entry
                .timestamps
                .iter()
                .zip(&entry.sentences)
                .map(|(&[start, end], s)| GroundTruthEvent {
                    start,
                    end,
                    sentence: tokenize(s),
                })
                .collect();
            DenseAnnotation::new(video_id, entry.duration, events)
        })
        .collect()
}

pub fn load_annotations(path: &Path) -> Result<Vec<DenseAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

pub fn annotations_to_json(annotations: &[DenseAnnotation]) -> String {
    let map: BTreeMap<&str, RawEntry> = annotations
        .iter()
        .map(|a| {
            let entry = RawEntry {
                duration: a.duration,
                timestamps: a.events.iter().map(|e| [e.start, e.end]).collect(),
                sentences: a.events.iter().map(|e| e.sentence.join(" ")).collect(),
            };
            (a.video_id.as_str(), entry)
        })
        .collect();
    serde_json::to_string_pretty(&map).expect("annotation map serializes")
}

pub fn save_annotations(annotations: &[DenseAnnotation], path: &Path) -> Result<()> {
    std::fs::write(path, annotations_to_json(annotations)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sorted_input() {
        let a = parse_annotations(
            r#"{"v1": {"duration": 10.0, "timestamps": [[0,2],[3,5]], "sentences": ["a b","c d"]}}"#,
        )
        .unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].events.len(), 2);
        assert_eq!(a[0].events[0].sentence, vec!["a", "b"]);
        assert_eq!(a[0].events[1].start, 3.0);
    }

    #[test]
    fn resorts_events_keeping_sentence_pairing() {
        let a = parse_annotations(
            r#"{"v1": {"duration": 10.0, "timestamps": [[3,5],[0,2]], "sentences": ["c d","a b"]}}"#,
        )
        .unwrap();
        let starts: Vec<f64> = a[0].events.iter().map(|e| e.start).collect();
        assert_eq!(starts, vec![0.0, 3.0]);
        assert_eq!(a[0].events[0].sentence, vec!["a", "b"]);
        assert_eq!(a[0].events[1].sentence, vec!["c", "d"]);
    }

    #[test]
    fn rejects_degenerate_interval() {
        let err = parse_annotations(
            r#"{"v1": {"duration": 10.0, "timestamps": [[0,0]], "sentences": ["a"]}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("start ≥ end"), "{err}");
    }

    #[test]
    fn length_mismatch_names_video() {
        let err = parse_annotations(
            r#"{"vid_x": {"duration": 10.0, "timestamps": [[0,1],[2,3]], "sentences": ["a"]}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("vid_x"));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_annotations("{not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"b": {"duration": 7.5, "timestamps": [[1,2]], "sentences": ["x y"]},
                       "a": {"duration": 3.0, "timestamps": [[0,1.5]], "sentences": ["z"]}}"#;
        let a = parse_annotations(text).unwrap();
        assert_eq!(a[0].video_id, "a");
        let back = parse_annotations(&annotations_to_json(&a)).unwrap();
        assert_eq!(a, back);
    }
}
