//! Planted-event corpus generator.
//!
//! Every event type owns a fixed caption and a fixed frame prototype. The
//! prototype leans towards the hash embedding of its caption (weight
//! `text_align`), so video-to-text cosine retrieval finds the right caption.
//! Frames inside an event emit `prototype + noise`; everything else emits a
//! shared background prototype plus noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ingest::annotations::{save_annotations, DenseAnnotation, GroundTruthEvent};
use crate::ingest::embed::hash_bow_embed;
use crate::ingest::features::{save_frame_features, FrameFeatures};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub frames: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub max_events: usize,
    pub seed: u64,
    /// Per-frame Gaussian noise; its expected L2 norm equals this value.
    pub noise: f64,
    /// 0 selects `vocab_size / caption_len`.
    pub event_types: usize,
    pub caption_len: usize,
    pub text_align: f64,
    pub embed_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 70,
            frames: 32,
            dim: 64,
            vocab_size: 24,
            max_events: 3,
            seed: 0,
            noise: 0.3,
            event_types: 0,
            caption_len: 3,
            text_align: 0.7,
            embed_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_event_types(&self) -> usize {
        if self.event_types > 0 {
            self.event_types
        } else {
            self.vocab_size / self.caption_len.max(1)
        }
    }

    fn min_event_len(&self) -> usize {
        (self.frames / 8).max(2)
    }

    fn max_event_len(&self) -> usize {
        let share = self.frames / self.max_events.max(1);
        share.saturating_sub(1).max(self.min_event_len())
    }

    fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.max_events == 0 {
            errs.push("max_events must be ≥ 1".to_string());
        }
        if self.vocab_size < self.max_events * 3 {
            errs.push(format!(
                "vocab_size {} < 3 × max_events {}",
                self.vocab_size, self.max_events
            ));
        }
        if self.caption_len == 0 {
            errs.push("caption_len must be ≥ 1".into());
        }
        let types = self.n_event_types();
        if types < self.max_events {
            errs.push(format!("{types} event types cannot fill {} distinct events", self.max_events));
        }
        if types * self.caption_len > self.vocab_size {
            errs.push(format!(
                "{types} types × {} words exceed vocab_size {}",
                self.caption_len, self.vocab_size
            ));
        }
        if self.dim < 8 {
            errs.push(format!("dim {} < 8", self.dim));
        }
        if !(0.0..=1.0).contains(&self.text_align) {
            errs.push("text_align must lie in [0, 1]".into());
        }
        if !(self.noise >= 0.0) {
            errs.push("noise must be ≥ 0".into());
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let packed = self.max_events * self.min_event_len() + self.max_events.saturating_sub(1);
        if packed > self.frames {
            return Err(Error::Generation(format!(
                "{} events of ≥ {} frames cannot fit in {} frames",
                self.max_events,
                self.min_event_len(),
                self.frames
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventTypeSpec {
    pub id: usize,
    pub caption: String,
    pub prototype: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoPlan {
    pub video_id: String,
    /// Event type of every event, in start order.
    pub event_types: Vec<usize>,
}

/// The planted structure behind a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub event_types: Vec<EventTypeSpec>,
    pub background: Vec<f32>,
    pub videos: Vec<VideoPlan>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub annotations: Vec<DenseAnnotation>,
    pub features: Vec<FrameFeatures>,
    pub manifest: SynthManifest,
}

impl SyntheticCorpus {
    /// Splits off the first `n_train` videos as the training part.
    pub fn split(&self, n_train: usize) -> (CorpusSplit<'_>, CorpusSplit<'_>) {
        let n = n_train.min(self.annotations.len());
        (
            CorpusSplit {
                annotations: &self.annotations[..n],
                features: &self.features[..n],
            },
            CorpusSplit {
                annotations: &self.annotations[n..],
                features: &self.features[n..],
            },
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CorpusSplit<'a> {
    pub annotations: &'a [DenseAnnotation],
    pub features: &'a [FrameFeatures],
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn normalized(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

pub fn word(i: usize) -> String {
    format!("w{i:03}")
}

pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;

    let len = config.caption_len;
    let mut event_types = Vec::with_capacity(config.n_event_types());
    for id in 0..config.n_event_types() {
        let tokens: Vec<String> = (0..len).map(|k| word(id * len + k)).collect();
        let text = hash_bow_embed(&tokens, dim, config.embed_seed)?.vector;
        let visual = random_unit(dim, &mut rng);
        let a = config.text_align;
        let mix = text
            .iter()
            .zip(&visual)
            .map(|(&t, &v)| a * f64::from(t) + (1.0 - a) * v)
            .collect();
        event_types.push(EventTypeSpec {
            id,
            caption: tokens.join(" "),
            prototype: normalized(mix),
        });
    }
    let background = normalized(random_unit(dim, &mut rng));

    let min_len = config.min_event_len();
    let max_len = config.max_event_len();
    let noise_scale = config.noise / (dim as f64).sqrt();
    let mut annotations = Vec::with_capacity(config.n_videos);
    let mut features = Vec::with_capacity(config.n_videos);
    let mut videos = Vec::with_capacity(config.n_videos);

    for v in 0..config.n_videos {
        let video_id = format!("synth{:03}_{v:04}", config.seed % 1000);
        let n_events = rng.random_range(1..=config.max_events);
        let (spans, types) = place_events(config, n_events, min_len, max_len, &mut rng, &video_id)?;

        let mut label = vec![None; config.frames];
        for (&(s, e), &t) in spans.iter().zip(&types) {
            for l in &mut label[s..e] {
                *l = Some(t);
            }
        }
        let mut data = Vec::with_capacity(config.frames * dim);
        for l in &label {
            let proto = match l {
                Some(t) => &event_types[*t].prototype,
                None => &background,
            };
            for &p in proto {
                let n: f64 = if noise_scale > 0.0 {
                    rng.sample::<f64, _>(StandardNormal) * noise_scale
                } else {
                    0.0
                };
                data.push((f64::from(p) + n) as f32);
            }
        }
        features.push(FrameFeatures::new(video_id.clone(), config.frames, dim, data)?);

        let events = spans
            .iter()
            .zip(&types)
            .map(|(&(s, e), &t)| GroundTruthEvent {
                start: s as f64,
                end: e as f64,
                sentence: event_types[t].caption.split(' ').map(str::to_string).collect(),
            })
            .collect();
        annotations.push(DenseAnnotation::new(video_id.clone(), config.frames as f64, events)?);
        videos.push(VideoPlan {
            video_id,
            event_types: types,
        });
    }

    Ok(SyntheticCorpus {
        annotations,
        features,
        manifest: SynthManifest {
            config: config.clone(),
            event_types,
            background,
            videos,
        },
    })
}

/// Non-overlapping frame spans `[start, end)` separated by at least one frame.
fn place_events(
    config: &SynthConfig,
    n: usize,
    min_len: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
    video_id: &str,
) -> Result<(Vec<(usize, usize)>, Vec<usize>)> {
    let mut lens: Vec<usize> = (0..n).map(|_| rng.random_range(min_len..=max_len)).collect();
    // shrink the longest events until the packing fits
    loop {
        let used: usize = lens.iter().sum::<usize>() + n - 1;
        if used <= config.frames {
            break;
        }
        let (i, &l) = lens
            .iter()
            .enumerate()
            .max_by_key(|(_, &l)| l)
            .expect("n ≥ 1");
        if l <= min_len {
            return Err(Error::Generation(format!(
                "{video_id}: cannot pack {n} events into {} frames",
                config.frames
            )));
        }
        lens[i] -= 1;
    }
    let free = config.frames - (lens.iter().sum::<usize>() + n - 1);
    // distribute the free frames over n + 1 gaps
    let mut cuts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut gaps = Vec::with_capacity(n + 1);
    let mut prev = 0;
    for &c in &cuts {
        gaps.push(c - prev);
        prev = c;
    }
    let mut spans = Vec::with_capacity(n);
    let mut pos = 0;
    for (i, &len) in lens.iter().enumerate() {
        pos += gaps[i] + usize::from(i > 0);
        spans.push((pos, pos + len));
        pos += len;
    }
    let mut types: Vec<usize> = (0..config.n_event_types()).collect();
    types.shuffle(rng);
    types.truncate(n);
    Ok((spans, types))
}

/// Writes `annotations.json`, `manifest.json` and `features/<id>.cm2f` under `dir`.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    save_annotations(&corpus.annotations, &dir.join("annotations.json"))?;
    for f in &corpus.features {
        save_frame_features(f, &feat_dir.join(format!("{}.cm2f", f.video_id)))?;
    }
    let manifest = serde_json::to_string_pretty(&corpus.manifest)
        .map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::embed::cosine;

    fn cfg(n_videos: usize, noise: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n_videos,
            noise,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic_corpus(&cfg(10, 0.5, 42)).unwrap();
        let b = generate_synthetic_corpus(&cfg(10, 0.5, 42)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&cfg(10, 0.5, 43)).unwrap();
        assert_ne!(a.annotations, c.annotations);
    }

    #[test]
    fn events_counts_and_disjointness() {
        let c = generate_synthetic_corpus(&cfg(50, 0.3, 1)).unwrap();
        for a in &c.annotations {
            assert!((1..=3).contains(&a.events.len()));
            for w in a.events.windows(2) {
                assert!(w[0].end < w[1].start, "{}: overlapping events", a.video_id);
            }
            for e in &a.events {
                assert!(e.start >= 0.0 && e.end <= a.duration);
            }
        }
    }

    #[test]
    fn noiseless_frames_match_prototypes() {
        let c = generate_synthetic_corpus(&cfg(30, 0.0, 5)).unwrap();
        let m = &c.manifest;
        let mut seen: std::collections::HashMap<usize, Vec<f32>> = Default::default();
        for (plan, (ann, feat)) in m.videos.iter().zip(c.annotations.iter().zip(&c.features)) {
            for (ev, &t) in ann.events.iter().zip(&plan.event_types) {
                let frame = feat.row(ev.start as usize).to_vec();
                assert!((cosine(&frame, &m.event_types[t].prototype) - 1.0).abs() < 1e-6);
                if let Some(prev) = seen.get(&t) {
                    assert_eq!(prev, &frame);
                }
                seen.insert(t, frame);
            }
        }
        for i in 0..m.event_types.len() {
            for j in i + 1..m.event_types.len() {
                assert!(cosine(&m.event_types[i].prototype, &m.event_types[j].prototype) < 1.0 - 1e-6);
            }
        }
    }

    #[test]
    fn infeasible_packing_is_generation_error() {
        let c = SynthConfig {
            frames: 6,
            max_events: 3,
            vocab_size: 9,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic_corpus(&c), Err(Error::Generation(_))));
    }

    #[test]
    fn small_vocab_rejected() {
        let c = SynthConfig {
            vocab_size: 8,
            max_events: 3,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic_corpus(&c), Err(Error::Config(_))));
    }
}
