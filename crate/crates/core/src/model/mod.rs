//! The trainable network: multi-scale features, versatile encoder and
//! decoder, and the three parallel heads.

pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod heads;
pub mod layers;
pub mod vocab;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{CrossAttentionOrder, ModelConfig};
pub use decoder::DecodeOptions;
pub use vocab::Vocab;

use crate::autograd::{sigmoid, Mat, ParamId, ParamStore, Tape, Var};
use crate::eval::EventPrediction;
use crate::ingest::FrameFeatures;
use crate::memory::MemoryView;
use crate::retrieval::{retrieve_for_video, RetrievedFeatures};
use crate::{Error, Result};
use decoder::{Decoder, Memory};
use encoder::Encoders;
use heads::{count_from_probs, CaptionContext, CaptionHead, CounterHead, LocalizationHead};
use layers::{sinusoid, Linear};

#[derive(Clone, Debug)]
struct Network {
    vis_proj: Linear,
    txt_proj: Linear,
    /// Per level, the three kernel taps.
    convs: Vec<[ParamId; 3]>,
    encoders: Encoders,
    queries: ParamId,
    decoder: Decoder,
    loc: LocalizationHead,
    counter: CounterHead,
    caption: CaptionHead,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    net: Network,
}

/// Encoder outputs with per-row bookkeeping for windowed attention.
pub struct Encoded {
    pub visual: Var,
    pub textual: Var,
    /// `None` when every visual row is valid.
    pub vis_mask: Option<Vec<bool>>,
    /// Normalized center time and row spacing of every visual row.
    pub row_times: Vec<(f64, f64)>,
}

/// Per-query head outputs on the tape.
pub struct HeadOutputs {
    pub refined: Var,
    pub center: Var,
    pub length: Var,
    pub conf_logit: Var,
    /// `1 × C_max` log-probabilities.
    pub count_logp: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutput {
    pub center: f64,
    pub length: f64,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub events: Vec<EventPrediction>,
    pub queries: Vec<QueryOutput>,
    pub count_probs: Vec<f64>,
    /// Predicted event count `N ≤ L_q`.
    pub count: usize,
}

/// `(start, end)` in seconds from a normalized center and length.
pub fn to_seconds(center: f64, length: f64, duration: f64) -> (f64, f64) {
    let s = (center - length / 2.0).clamp(0.0, 1.0) * duration;
    let e = (center + length / 2.0).clamp(0.0, 1.0) * duration;
    (s, e)
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Model> {
        config.validate()?;
        if vocab.len() <= vocab::UNK {
            return Err(Error::Model("vocabulary has no words".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let c = &config;
        let vis_proj = Linear::new(&mut ps, "proj.visual", c.input_dim, c.d_model, false, &mut rng);
        let txt_proj = Linear::new(&mut ps, "proj.textual", c.input_dim, c.d_model, false, &mut rng);
        let convs = (0..c.conv_levels)
            .map(|l| {
                [0, 1, 2].map(|k| {
                    let mut w = Mat::xavier(c.d_model, c.d_model, &mut rng);
                    w.scale_assign(0.5f64.sqrt());
                    ps.add(format!("conv.{l}.{k}"), w)
                })
            })
            .collect();
        let encoders = Encoders::new(&mut ps, c, &mut rng);
        let queries = ps.add("queries", Mat::xavier(c.event_queries, c.d_model, &mut rng));
        let decoder = Decoder::new(&mut ps, c, &mut rng);
        let loc = LocalizationHead::new(&mut ps, c, &mut rng);
        let counter = CounterHead::new(&mut ps, c, &mut rng);
        let caption = CaptionHead::new(&mut ps, c, vocab.len(), &mut rng);
        let net = Network { vis_proj, txt_proj, convs, encoders, queries, decoder, loc, counter, caption };
        Ok(Model { config, vocab, params: ps, net })
    }

    /// Scalar parameter count of the encoder(s).
    pub fn encoder_param_count(&self) -> usize {
        self.params
            .names()
            .iter()
            .zip(self.params.values())
            .filter(|(n, _)| n.starts_with("enc."))
            .map(|(_, m)| m.rows() * m.cols())
            .sum()
    }

    fn check_frames(&self, frames: &FrameFeatures) -> Result<()> {
        if frames.dim != self.config.input_dim {
            return Err(Error::Dimension { expected: self.config.input_dim, actual: frames.dim });
        }
        if frames.rows != self.config.frames {
            return Err(Error::Dimension { expected: self.config.frames, actual: frames.rows });
        }
        Ok(())
    }

    /// Multi-scale visual rows before position encoding, with validity mask.
    pub fn multiscale_raw(&self, t: &mut Tape, frames: &FrameFeatures) -> Result<(Vec<Var>, Vec<Vec<bool>>)> {
        self.check_frames(frames)?;
        let x = Mat::from_vec(frames.rows, frames.dim, frames.data.iter().map(|&v| f64::from(v)).collect());
        let x = t.constant(x);
        let mut levels = vec![self.net.vis_proj.apply(t, x)];
        let mut masks = vec![frames.mask.clone()];
        for taps in &self.net.convs {
            let prev = *levels.last().expect("level 0");
            let prev_mask = masks.last().expect("level 0").clone();
            let n = t.shape(prev).0;
            let m = n.div_ceil(2);
            let mut acc: Option<Var> = None;
            for (k, &w) in taps.iter().enumerate() {
                let idx: Vec<Option<usize>> = (0..m)
                    .map(|j| (2 * j + k).checked_sub(1).filter(|&i| i < n))
                    .collect();
                let g = t.gather_rows(prev, &idx);
                let w = t.param(w);
                let y = t.matmul(g, w);
                acc = Some(match acc {
                    Some(a) => t.add(a, y),
                    None => y,
                });
            }
            let level = t.relu(acc.expect("three taps"));
            let mask = (0..m)
                .map(|j| (0..3).any(|k| (2 * j + k).checked_sub(1).is_some_and(|i| i < n && prev_mask[i])))
                .collect();
            levels.push(level);
            masks.push(mask);
        }
        Ok((levels, masks))
    }

    /// Concatenated multi-scale rows (`F̃ × d_model`) with sinusoidal
    /// encodings of normalized time added per level.
    pub fn multiscale_features(&self, t: &mut Tape, frames: &FrameFeatures) -> Result<(Var, Vec<bool>, Vec<(f64, f64)>)> {
        let (levels, masks) = self.multiscale_raw(t, frames)?;
        let d = self.config.d_model;
        let scale = self.config.frames as f64;
        let mut parts = Vec::with_capacity(levels.len());
        let mut times = Vec::new();
        for &lv in &levels {
            let n = t.shape(lv).0;
            let mut pe = Mat::zeros(n, d);
            for r in 0..n {
                let pos = (r as f64 + 0.5) / n as f64;
                pe.row_mut(r).copy_from_slice(&sinusoid(pos, d, scale));
                times.push((pos, 1.0 / n as f64));
            }
            let pe = t.constant(pe);
            parts.push(t.add(lv, pe));
        }
        let all = if parts.len() == 1 { parts[0] } else { t.concat_rows(&parts) };
        Ok((all, masks.concat(), times))
    }

    /// Projects and encodes both streams. `text` is the `W × D` retrieved
    /// feature matrix.
    pub fn encode(&self, t: &mut Tape, frames: &FrameFeatures, text: &Mat) -> Result<Encoded> {
        if text.cols() != self.config.input_dim {
            return Err(Error::Dimension { expected: self.config.input_dim, actual: text.cols() });
        }
        if text.rows() == 0 {
            return Err(Error::Model("retrieved text features have no rows".into()));
        }
        let (vis, mask, row_times) = self.multiscale_features(t, frames)?;
        let txt = t.constant(text.clone());
        let mut txt = self.net.txt_proj.apply(t, txt);
        if self.config.text_position_encoding {
            let (w, d) = (text.rows(), self.config.d_model);
            let mut pe = Mat::zeros(w, d);
            for j in 0..w {
                pe.row_mut(j).copy_from_slice(&sinusoid((j as f64 + 0.5) / w as f64, d, self.config.frames as f64));
            }
            let pe = t.constant(pe);
            txt = t.add(txt, pe);
        }
        let vis_mask = if mask.iter().all(|&m| m) { None } else { Some(mask) };
        let (visual, textual) =
            self.net.encoders.encode(t, vis, vis_mask.as_deref(), txt, self.config.separate_encoding);
        Ok(Encoded { visual, textual, vis_mask, row_times })
    }

    /// Runs the encoder-side function of one stream; used to probe weight
    /// sharing.
    pub fn encode_stream(&self, t: &mut Tape, x: Var, textual: bool) -> Var {
        let e = if textual { self.net.encoders.textual() } else { self.net.encoders.visual() };
        e.apply(t, x, None)
    }

    pub fn decode(&self, t: &mut Tape, enc: &Encoded, opts: DecodeOptions) -> HeadOutputs {
        let q = t.param(self.net.queries);
        let mem = Memory { visual: enc.visual, vis_mask: enc.vis_mask.as_deref(), textual: enc.textual };
        let refined = self.net.decoder.apply(t, q, &mem, self.config.cross_attention_order, opts);
        let loc = self.net.loc.apply(t, refined);
        let count_logp = self.net.counter.apply(t, refined);
        HeadOutputs { refined, center: loc.center, length: loc.length, conf_logit: loc.conf_logit, count_logp }
    }

    /// Row-major `n × F̃` attention windows: rows whose center lies within
    /// the segment widened by one row spacing of their level.
    pub fn windows(&self, enc: &Encoded, segments: &[(f64, f64)]) -> Vec<bool> {
        let mut out = Vec::with_capacity(segments.len() * enc.row_times.len());
        for &(s, e) in segments {
            let valid = |r: usize| enc.vis_mask.as_ref().is_none_or(|m| m[r]);
            let row: Vec<bool> = enc
                .row_times
                .iter()
                .enumerate()
                .map(|(r, &(c, sp))| valid(r) && c >= s - sp && c <= e + sp)
                .collect();
            if row.iter().any(|&b| b) {
                out.extend(row);
            } else {
                out.extend((0..enc.row_times.len()).map(valid));
            }
        }
        out
    }

    /// Teacher-forced caption NLL (summed over tokens) for the given query
    /// rows, attending around `segments` (normalized).
    pub fn caption_nll(
        &self,
        t: &mut Tape,
        enc: &Encoded,
        heads: &HeadOutputs,
        rows: &[usize],
        segments: &[(f64, f64)],
        targets: &[Vec<usize>],
    ) -> (Var, Vec<Var>) {
        let idx: Vec<Option<usize>> = rows.iter().map(|&r| Some(r)).collect();
        let queries = t.gather_rows(heads.refined, &idx);
        let windows = self.windows(enc, segments);
        let ctx = CaptionContext { queries, visual: enc.visual, windows: &windows };
        self.net.caption.teacher_forced(t, &ctx, targets)
    }

    pub fn generate(&self, t: &mut Tape, enc: &Encoded, heads: &HeadOutputs, rows: &[usize], segments: &[(f64, f64)]) -> Vec<Vec<String>> {
        if rows.is_empty() {
            return Vec::new();
        }
        let idx: Vec<Option<usize>> = rows.iter().map(|&r| Some(r)).collect();
        let queries = t.gather_rows(heads.refined, &idx);
        let windows = self.windows(enc, segments);
        let ctx = CaptionContext { queries, visual: enc.visual, windows: &windows };
        self.net
            .caption
            .greedy(t, &ctx, self.config.max_caption_len)
            .iter()
            .map(|ids| self.vocab.decode(ids))
            .collect()
    }

    /// Full inference from frames and retrieved text features.
    pub fn predict(&self, frames: &FrameFeatures, text: &Mat, duration: f64) -> Result<Prediction> {
        self.predict_with(frames, text, duration, DecodeOptions::default())
    }

    pub fn predict_with(&self, frames: &FrameFeatures, text: &Mat, duration: f64, opts: DecodeOptions) -> Result<Prediction> {
        let mut t = Tape::new(&self.params);
        let enc = self.encode(&mut t, frames, text)?;
        let heads = self.decode(&mut t, &enc, opts);
        let centers = t.value(heads.center).data().to_vec();
        let lengths = t.value(heads.length).data().to_vec();
        let confs: Vec<f64> = t.value(heads.conf_logit).data().iter().map(|&z| sigmoid(z)).collect();
        let count_probs: Vec<f64> = t.value(heads.count_logp).data().iter().map(|v| v.exp()).collect();
        let lq = self.config.event_queries;
        let count = count_from_probs(&count_probs).min(lq);
        let mut order: Vec<usize> = (0..lq).collect();
        order.sort_by(|&a, &b| confs[b].total_cmp(&confs[a]).then(a.cmp(&b)));
        order.truncate(count);
        let segments: Vec<(f64, f64)> = order
            .iter()
            .map(|&q| {
                let (c, l) = (centers[q], lengths[q]);
                ((c - l / 2.0).clamp(0.0, 1.0), (c + l / 2.0).clamp(0.0, 1.0))
            })
            .collect();
        let captions = self.generate(&mut t, &enc, &heads, &order, &segments);
        let events = order
            .iter()
            .zip(captions)
            .map(|(&q, sentence)| {
                let (start, end) = to_seconds(centers[q], lengths[q], duration);
                EventPrediction { start, end, confidence: confs[q], sentence }
            })
            .collect();
        let queries = (0..lq)
            .map(|q| QueryOutput { center: centers[q], length: lengths[q], confidence: confs[q] })
            .collect();
        Ok(Prediction { events, queries, count_probs, count })
    }

    /// Retrieval followed by inference.
    pub fn forward(&self, frames: &FrameFeatures, view: &MemoryView<'_>, duration: f64) -> Result<(Prediction, RetrievedFeatures)> {
        let retrieved = retrieve_for_video(frames, view, self.config.anchors, self.config.topk)?;
        let pred = self.predict(frames, &retrieved.features, duration)?;
        Ok((pred, retrieved))
    }
}

#[cfg(test)]
mod tests;
