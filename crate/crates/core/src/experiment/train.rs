//! Datasets, retrieval precomputation and the training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, RetrievalConfig};
use super::optim::{clip_grad_norm, Adam};
use crate::autograd::{Mat, Tape};
use crate::fixedfmt::to_string_fixed;
use crate::ingest::{load_annotations, load_frame_features, resample_frames, DenseAnnotation, FrameFeatures, GroundTruthEvent, HashBowEmbedder};
use crate::ingest::synth::SyntheticCorpus;
use crate::loss::{video_loss, LossBreakdown, VideoTarget};
use crate::memory::{build_memory, load_memory, MemoryBank};
use crate::meta::ArtifactMeta;
use crate::model::{ModelConfig, Model, Vocab};
use crate::retrieval::retrieve_for_video;
use crate::{Error, Result};

/// One annotated video with frames resampled to the model's `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub annotation: DenseAnnotation,
    pub frames: FrameFeatures,
}

impl Video {
    /// The same video played backwards: rows reversed, each event `[s, e]`
    /// mapped to `[T − e, T − s]`, captions kept.
    pub fn reversed(&self) -> Result<Video> {
        let f = &self.frames;
        let data = (0..f.rows).rev().flat_map(|i| f.row(i).iter().copied()).collect();
        let mut frames = FrameFeatures::new(f.video_id.clone(), f.rows, f.dim, data)?;
        frames.mask = f.mask.iter().rev().copied().collect();
        let a = &self.annotation;
        let events = a
            .events
            .iter()
            .map(|e| GroundTruthEvent { start: a.duration - e.end, end: a.duration - e.start, sentence: e.sentence.clone() })
            .collect();
        Ok(Video { annotation: DenseAnnotation::new(a.video_id.clone(), a.duration, events)?, frames })
    }

    /// Frames `[a, b)` resampled (nearest row) to the full row count, with
    /// events rescaled onto the new time axis. Every event must lie inside
    /// the window.
    pub fn cropped(&self, a: usize, b: usize) -> Result<Video> {
        let f = &self.frames;
        if a >= b || b > f.rows {
            return Err(Error::Validation(format!("crop [{a}, {b}) invalid for {} rows", f.rows)));
        }
        let span = b - a;
        let src: Vec<usize> = (0..f.rows).map(|j| a + j * span / f.rows).collect();
        let data = src.iter().flat_map(|&i| f.row(i).iter().copied()).collect();
        let mut frames = FrameFeatures::new(f.video_id.clone(), f.rows, f.dim, data)?;
        frames.mask = src.iter().map(|&i| f.mask[i]).collect();
        let ann = &self.annotation;
        let to_rows = f.rows as f64 / ann.duration;
        let map = |t: f64| ((t * to_rows - a as f64) / span as f64 * ann.duration).clamp(0.0, ann.duration);
        let events = ann
            .events
            .iter()
            .map(|e| GroundTruthEvent { start: map(e.start), end: map(e.end), sentence: e.sentence.clone() })
            .collect();
        Ok(Video { annotation: DenseAnnotation::new(ann.video_id.clone(), ann.duration, events)?, frames })
    }

    /// The widest row window `[lo, hi)` a crop may start after and end
    /// before without cutting an event.
    fn crop_bounds(&self) -> (usize, usize) {
        let ann = &self.annotation;
        let to_rows = self.frames.rows as f64 / ann.duration;
        let first = ann.events.iter().map(|e| e.start).fold(f64::INFINITY, f64::min);
        let last = ann.events.iter().map(|e| e.end).fold(0.0, f64::max);
        let lo = (first * to_rows).floor().max(0.0) as usize;
        let hi = ((last * to_rows).ceil() as usize).clamp(lo + 1, self.frames.rows);
        (lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Video>,
    pub val: Vec<Video>,
}

fn pair(annotation: DenseAnnotation, frames: &FrameFeatures, f: usize) -> Result<Video> {
    Ok(Video { annotation, frames: resample_frames(frames, f)? })
}

/// Loads `<features_dir>/<video_id>.cm2f` for every annotated video.
pub fn load_videos(annotations: &Path, features_dir: &Path, model: &ModelConfig) -> Result<Vec<Video>> {
    load_annotations(annotations)?
        .into_iter()
        .map(|a| {
            let path = features_dir.join(format!("{}.cm2f", a.video_id));
            let frames = load_frame_features(&path, model.input_dim)?;
            pair(a, &frames, model.frames)
        })
        .collect()
}

impl Dataset {
    pub fn load(config: &ExperimentConfig) -> Result<Dataset> {
        let d = &config.data;
        let missing = |what: &str| Error::Config(vec![format!("data: {what} is required")]);
        let dir = d.features_dir.as_deref().ok_or_else(|| missing("features_dir"))?;
        let train = d.train_annotations.as_deref().ok_or_else(|| missing("train_annotations"))?;
        let val = d.val_annotations.as_deref().ok_or_else(|| missing("val_annotations"))?;
        Ok(Dataset { train: load_videos(train, dir, &config.model)?, val: load_videos(val, dir, &config.model)? })
    }

    /// First `n_train` videos train, the rest validate.
    pub fn from_synthetic(corpus: &SyntheticCorpus, n_train: usize, model: &ModelConfig) -> Result<Dataset> {
        let videos = corpus
            .annotations
            .iter()
            .zip(&corpus.features)
            .map(|(a, f)| pair(a.clone(), f, model.frames))
            .collect::<Result<Vec<_>>>()?;
        let n = n_train.min(videos.len());
        let mut train = videos;
        let val = train.split_off(n);
        Ok(Dataset { train, val })
    }

    pub fn train_annotations(&self) -> Vec<DenseAnnotation> {
        self.train.iter().map(|v| v.annotation.clone()).collect()
    }

    pub fn val_annotations(&self) -> Vec<DenseAnnotation> {
        self.val.iter().map(|v| v.annotation.clone()).collect()
    }
}

pub fn embedder(config: &ExperimentConfig) -> Result<HashBowEmbedder> {
    HashBowEmbedder::new(config.model.input_dim, config.data.embed_seed)
}

/// The full memory bank: the configured CM2M file, or the training captions.
pub fn full_bank(config: &ExperimentConfig, train: &[Video]) -> Result<MemoryBank> {
    let bank = match &config.data.memory {
        Some(path) => load_memory(path)?,
        None => {
            let anns: Vec<DenseAnnotation> = train.iter().map(|v| v.annotation.clone()).collect();
            build_memory(&anns, &embedder(config)?)?
        }
    };
    if bank.dim() != config.model.input_dim {
        return Err(Error::Dimension { expected: config.model.input_dim, actual: bank.dim() });
    }
    Ok(bank)
}

/// The bank retrieval actually sees: empty when retrieval is off.
pub fn effective_bank(config: &ExperimentConfig, train: &[Video]) -> Result<MemoryBank> {
    if config.retrieval.enabled {
        full_bank(config, train)
    } else {
        Ok(MemoryBank::empty(config.model.input_dim))
    }
}

/// Retrieved `W × D` text features for one video. Training passes its own id
/// as `exclude` so its captions never reach it.
pub fn retrieved_text(
    model: &ModelConfig,
    bank: &MemoryBank,
    retrieval: &RetrievalConfig,
    frames: &FrameFeatures,
    exclude: Option<&str>,
) -> Result<Mat> {
    let view = bank.filter(exclude, retrieval.keep_ratio, retrieval.keep_seed);
    Ok(retrieve_for_video(frames, &view, model.anchors, model.topk)?.features)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

/// Trains from a seeded initialization. Each step averages per-video
/// gradients of a shuffled batch, computed in parallel and summed in batch
/// order. Retrieval sees each video's clean frames with its own captions
/// excluded; feature jitter reaches the model input only.
pub fn train(
    config: &ExperimentConfig,
    train: &[Video],
    bank: &MemoryBank,
    mut on_step: impl FnMut(&StepLog) -> Result<()>,
) -> Result<Model> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("no training videos".into()));
    }
    let anns: Vec<DenseAnnotation> = train.iter().map(|v| v.annotation.clone()).collect();
    let reversed;
    let train: &[Video] = if config.train.augment_reverse {
        reversed = train.iter().cloned().chain(train.iter().map(Video::reversed).collect::<Result<Vec<_>>>()?).collect::<Vec<_>>();
        &reversed
    } else {
        train
    };
    let mut model = Model::new(config.model.clone(), Vocab::from_annotations(&anns), config.train.seed)?;
    let targets = train
        .iter()
        .map(|v| VideoTarget::from_annotation(&v.annotation, &model))
        .collect::<Result<Vec<_>>>()?;
    let texts = train
        .iter()
        .map(|v| retrieved_text(&config.model, bank, &config.retrieval, &v.frames, Some(&v.annotation.video_id)))
        .collect::<Result<Vec<_>>>()?;

    let tc = &config.train;
    let mut opt = Adam::new(&model.params, tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_0f_ba7c4);
    let mut order: Vec<usize> = Vec::new();
    let batch = tc.batch_size.min(train.len());
    for step in 1..=tc.steps {
        if order.len() < batch {
            let mut epoch: Vec<usize> = (0..train.len()).collect();
            epoch.shuffle(&mut rng);
            order.extend(epoch);
        }
        let picked: Vec<usize> = order.drain(..batch).collect();
        let per_video = picked
            .par_iter()
            .map(|&i| {
                let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
                rng.set_stream(((step as u64) << 24) ^ i as u64);
                let crop = if tc.augment_crop > 0.0 && rng.random::<f64>() < tc.augment_crop {
                    let (lo, hi) = train[i].crop_bounds();
                    let a = rng.random_range(0..=lo);
                    let b = rng.random_range(hi..=train[i].frames.rows);
                    let v = train[i].cropped(a, b)?;
                    let target = VideoTarget::from_annotation(&v.annotation, &model)?;
                    let text = retrieved_text(&config.model, bank, &config.retrieval, &v.frames, Some(&v.annotation.video_id))?;
                    Some((v, target, text))
                } else {
                    None
                };
                let (video, target, text) = match &crop {
                    Some((v, y, x)) => (v, y, x),
                    None => (&train[i], &targets[i], &texts[i]),
                };
                let frames = jittered(&video.frames, tc.feature_jitter, &mut rng);
                let mut t = Tape::new(&model.params);
                let l = video_loss(&model, &mut t, &frames, text, target, &config.loss, None)?;
                Ok((t.backward(l.total), l.breakdown))
            })
            .collect::<Result<Vec<_>>>()?;
        let inv = 1.0 / batch as f64;
        let mut grads: Vec<Option<Mat>> = vec![None; model.params.len()];
        let mut sum = [0.0; 6];
        for (g, b) in per_video {
            for (acc, gi) in grads.iter_mut().zip(g) {
                match (acc.as_mut(), gi) {
                    (Some(a), Some(gi)) => a.add_assign(&gi),
                    (None, Some(gi)) => *acc = Some(gi),
                    _ => {}
                }
            }
            for (s, v) in sum.iter_mut().zip([b.cls, b.loc, b.count, b.cap, b.l1, b.total]) {
                *s += v;
            }
        }
        for g in grads.iter_mut().flatten() {
            g.scale_assign(inv);
        }
        let grad_norm = clip_grad_norm(&mut grads, tc.clip_norm);
        opt.step(&mut model.params, &grads);
        let loss = LossBreakdown {
            cls: sum[0] * inv,
            loc: sum[1] * inv,
            count: sum[2] * inv,
            cap: sum[3] * inv,
            l1: sum[4] * inv,
            total: sum[5] * inv,
        };
        on_step(&StepLog { step, loss, grad_norm })?;
    }
    Ok(model)
}

/// `frames` plus Gaussian noise of expected L2 norm `jitter` per row.
fn jittered(frames: &FrameFeatures, jitter: f64, rng: &mut ChaCha8Rng) -> FrameFeatures {
    let mut out = frames.clone();
    if jitter > 0.0 {
        let sd = jitter / (frames.dim as f64).sqrt();
        for (r, row) in out.data.chunks_mut(frames.dim).enumerate() {
            if frames.mask[r] {
                for x in row {
                    *x += (rng.sample::<f64, _>(StandardNormal) * sd) as f32;
                }
            }
        }
    }
    out
}

/// JSONL loss log whose first line carries the artifact metadata.
pub struct LossLog<W: Write> {
    out: W,
}

impl<W: Write> LossLog<W> {
    pub fn new(mut out: W, meta: &ArtifactMeta) -> Result<Self> {
        let line = serde_json::to_string(&serde_json::json!({ "meta": meta })).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("loss log", e))?;
        Ok(LossLog { out })
    }

    pub fn record(&mut self, entry: &StepLog) -> Result<()> {
        let line = to_string_fixed(entry, 6, false)?;
        writeln!(self.out, "{line}").map_err(|e| Error::io("loss log", e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_corpus, SynthConfig};

    pub(crate) fn tiny_experiment() -> (ExperimentConfig, Dataset) {
        let mut c = ExperimentConfig::default();
        c.model.frames = 16;
        c.model.anchors = 4;
        c.model.d_model = 16;
        c.model.ffn_dim = 32;
        c.model.encoder_blocks = 1;
        c.model.decoder_blocks = 1;
        c.model.event_queries = 3;
        c.train.steps = 3;
        c.train.batch_size = 2;
        let corpus = generate_synthetic_corpus(&SynthConfig { n_videos: 6, frames: 16, ..SynthConfig::default() }).unwrap();
        let data = Dataset::from_synthetic(&corpus, 4, &c.model).unwrap();
        (c, data)
    }

    fn assert_same_video(a: &Video, b: &Video) {
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.annotation.events.len(), b.annotation.events.len());
        for (x, y) in a.annotation.events.iter().zip(&b.annotation.events) {
            assert_eq!(x.sentence, y.sentence);
            assert!((x.start - y.start).abs() < 1e-9 && (x.end - y.end).abs() < 1e-9, "{x:?} vs {y:?}");
        }
    }

    #[test]
    fn reversing_twice_is_identity() {
        let (_, data) = tiny_experiment();
        for v in &data.train {
            let r = v.reversed().unwrap();
            assert_eq!(r.frames.row(0), v.frames.row(v.frames.rows - 1));
            let e = &v.annotation.events[0];
            let d = v.annotation.duration;
            assert!(r.annotation.events.iter().any(|x| (x.start - (d - e.end)).abs() < 1e-9 && x.sentence == e.sentence));
            assert_same_video(&r.reversed().unwrap(), v);
        }
    }

    #[test]
    fn full_window_crop_is_identity() {
        let (_, data) = tiny_experiment();
        for v in &data.train {
            assert_same_video(&v.cropped(0, v.frames.rows).unwrap(), v);
            let (lo, hi) = v.crop_bounds();
            let c = v.cropped(lo, hi).unwrap();
            assert_eq!(c.annotation.events.len(), v.annotation.events.len());
        }
        let v = &data.train[0];
        assert!(v.cropped(3, 3).is_err());
        assert!(v.cropped(0, v.frames.rows + 1).is_err());
    }

    #[test]
    fn training_is_deterministic_and_logged() {
        let (c, data) = tiny_experiment();
        let bank = effective_bank(&c, &data.train).unwrap();
        let meta = ArtifactMeta::new(c.hash(), "test");
        let mut log = LossLog::new(Vec::new(), &meta).unwrap();
        let a = train(&c, &data.train, &bank, |s| log.record(s)).unwrap();
        let b = train(&c, &data.train, &bank, |_| Ok(())).unwrap();
        assert_eq!(a.params.values(), b.params.values());
        let text = String::from_utf8(log.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains(&c.hash()));
        let first: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(first["step"], 1);
        assert!(first["total"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn leave_one_out_excludes_own_captions() {
        let (c, data) = tiny_experiment();
        let bank = full_bank(&c, &data.train).unwrap();
        let v = &data.train[0];
        let own = bank.filter(Some(&v.annotation.video_id), 1.0, 0);
        assert!(own.iter().all(|(_, e)| e.source_video_id != v.annotation.video_id));
        assert_eq!(own.len() + v.annotation.events.len(), bank.len());
    }

    #[test]
    fn disabled_retrieval_gives_zero_text() {
        let (mut c, data) = tiny_experiment();
        c.retrieval.enabled = false;
        let bank = effective_bank(&c, &data.train).unwrap();
        assert!(bank.is_empty());
        let text = retrieved_text(&c.model, &bank, &c.retrieval, &data.val[0].frames, None).unwrap();
        assert_eq!(text.shape(), (c.model.anchors, c.model.input_dim));
        assert!(text.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn missing_paths_reported() {
        let c = ExperimentConfig::default();
        assert!(matches!(Dataset::load(&c), Err(Error::Config(_))));
    }
}
