//! Localization, event-count and captioning heads.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::Linear;
use super::vocab::{BOS, EOS, PAD};
use crate::autograd::{Mat, ParamId, ParamStore, Tape, Var};

/// Three-layer perceptron for (center, length) plus a confidence logit.
#[derive(Clone, Debug)]
pub struct LocalizationHead {
    l1: Linear,
    l2: Linear,
    l3: Linear,
    conf: Linear,
}

pub struct Localization {
    /// `L_q × 1`, in (0, 1).
    pub center: Var,
    /// `L_q × 1`, in (0, 1).
    pub length: Var,
    /// `L_q × 1` logits.
    pub conf_logit: Var,
}

impl LocalizationHead {
    pub fn new<R: Rng>(ps: &mut ParamStore, c: &ModelConfig, rng: &mut R) -> Self {
        let d = c.d_model;
        LocalizationHead {
            l1: Linear::new(ps, "head.loc.l1", d, d, true, rng),
            l2: Linear::new(ps, "head.loc.l2", d, d, true, rng),
            l3: Linear::new(ps, "head.loc.l3", d, 2, true, rng),
            conf: Linear::new(ps, "head.conf", d, 1, true, rng),
        }
    }

    pub fn apply(&self, t: &mut Tape, q: Var) -> Localization {
        let h = self.l1.apply(t, q);
        let h = t.relu(h);
        let h = self.l2.apply(t, h);
        let h = t.relu(h);
        let box_logits = self.l3.apply(t, h);
        let b = t.sigmoid(box_logits);
        Localization {
            center: t.slice_cols(b, 0, 1),
            length: t.slice_cols(b, 1, 1),
            conf_logit: self.conf.apply(t, q),
        }
    }
}

/// Max-pool over queries, then a linear layer to `C_max` count bins.
#[derive(Clone, Debug)]
pub struct CounterHead {
    fc: Linear,
}

impl CounterHead {
    pub fn new<R: Rng>(ps: &mut ParamStore, c: &ModelConfig, rng: &mut R) -> Self {
        CounterHead { fc: Linear::new(ps, "head.count", c.d_model, c.max_events, true, rng) }
    }

    /// Log-probabilities `1 × C_max`.
    pub fn apply(&self, t: &mut Tape, q: Var) -> Var {
        let pooled = t.max_rows(q);
        let logits = self.fc.apply(t, pooled);
        t.log_softmax_rows(logits)
    }
}

/// `N = argmax + 1` for count probabilities.
pub fn count_from_probs(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best + 1
}

/// LSTM captioner with soft attention over a temporal window of the
/// encoded visual rows.
#[derive(Clone, Debug)]
pub struct CaptionHead {
    embed: ParamId,
    att_q: Linear,
    att_k: Linear,
    init_h: Linear,
    lstm: Linear,
    out: Linear,
    hidden: usize,
}

/// Per-row context shared by every decoding step.
pub struct CaptionContext<'a> {
    /// `n × d` refined queries of the captioned events.
    pub queries: Var,
    /// `F̃ × d` encoded visual rows.
    pub visual: Var,
    /// `n × F̃` attention windows, row-major.
    pub windows: &'a [bool],
}

struct State {
    h: Var,
    c: Var,
    keys: Var,
}

impl CaptionHead {
    pub fn new<R: Rng>(ps: &mut ParamStore, c: &ModelConfig, vocab_len: usize, rng: &mut R) -> Self {
        let (d, e, h) = (c.d_model, c.word_dim, c.caption_hidden);
        let embed = ps.add("head.cap.embed", Mat::xavier(vocab_len, e, rng));
        let lstm = Linear::new(ps, "head.cap.lstm", d + d + e + h, 4 * h, true, rng);
        // forget-gate bias starts at 1
        let b = lstm.b.expect("lstm has bias");
        for v in &mut ps.get_mut(b).data_mut()[h..2 * h] {
            *v = 1.0;
        }
        CaptionHead {
            embed,
            att_q: Linear::new(ps, "head.cap.att_q", h, d, false, rng),
            att_k: Linear::new(ps, "head.cap.att_k", d, d, false, rng),
            init_h: Linear::new(ps, "head.cap.init_h", d, h, true, rng),
            lstm,
            out: Linear::new(ps, "head.cap.out", h, vocab_len, true, rng),
            hidden: h,
        }
    }

    fn start(&self, t: &mut Tape, ctx: &CaptionContext<'_>) -> State {
        let n = t.shape(ctx.queries).0;
        let h0 = self.init_h.apply(t, ctx.queries);
        let h = t.tanh(h0);
        let c = t.constant(Mat::zeros(n, self.hidden));
        let keys = self.att_k.apply(t, ctx.visual);
        State { h, c, keys }
    }

    /// One step; returns next-token logits `n × V`.
    fn step(&self, t: &mut Tape, ctx: &CaptionContext<'_>, st: &mut State, prev: &[usize]) -> Var {
        let d = t.shape(ctx.visual).1;
        let aq = self.att_q.apply(t, st.h);
        let s = t.matmul_t(aq, st.keys);
        let s = t.scale(s, 1.0 / (d as f64).sqrt());
        let w = t.softmax_rows(s, Some(ctx.windows));
        let a = t.matmul(w, ctx.visual);
        let table = t.param(self.embed);
        let idx: Vec<Option<usize>> = prev.iter().map(|&i| Some(i)).collect();
        let emb = t.gather_rows(table, &idx);
        let x = t.concat_cols(&[a, ctx.queries, emb, st.h]);
        let z = self.lstm.apply(t, x);
        let h = self.hidden;
        let zi = t.slice_cols(z, 0, h);
        let zf = t.slice_cols(z, h, h);
        let zg = t.slice_cols(z, 2 * h, h);
        let zo = t.slice_cols(z, 3 * h, h);
        let i = t.sigmoid(zi);
        let f = t.sigmoid(zf);
        let g = t.tanh(zg);
        let o = t.sigmoid(zo);
        let keep = t.mul(f, st.c);
        let write = t.mul(i, g);
        st.c = t.add(keep, write);
        let tc = t.tanh(st.c);
        st.h = t.mul(o, tc);
        self.out.apply(t, st.h)
    }

    /// Teacher-forced negative log-likelihood summed over all target tokens
    /// (targets end with the end token). Also returns one log-probability
    /// matrix per step.
    pub fn teacher_forced(&self, t: &mut Tape, ctx: &CaptionContext<'_>, targets: &[Vec<usize>]) -> (Var, Vec<Var>) {
        let n = targets.len();
        let steps = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut st = self.start(t, ctx);
        let mut prev = vec![BOS; n];
        let mut total: Option<Var> = None;
        let mut dists = Vec::with_capacity(steps);
        for s in 0..steps {
            let logits = self.step(t, ctx, &mut st, &prev);
            let logp = t.log_softmax_rows(logits);
            dists.push(logp);
            let tgt: Vec<usize> = targets.iter().map(|y| y.get(s).copied().unwrap_or(PAD)).collect();
            let picked = t.pick(logp, &tgt);
            let weights = t.constant(Mat::column(
                &targets.iter().map(|y| if s < y.len() { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
            ));
            let masked = t.mul(picked, weights);
            let step_sum = t.sum(masked);
            total = Some(match total {
                Some(acc) => t.add(acc, step_sum),
                None => step_sum,
            });
            prev = tgt;
        }
        let total = total.unwrap_or_else(|| t.constant(Mat::zeros(1, 1)));
        (t.scale(total, -1.0), dists)
    }

    /// Greedy decoding; every output has at most `max_len` tokens and stops
    /// after the end token.
    pub fn greedy(&self, t: &mut Tape, ctx: &CaptionContext<'_>, max_len: usize) -> Vec<Vec<usize>> {
        let n = t.shape(ctx.queries).0;
        let mut st = self.start(t, ctx);
        let mut prev = vec![BOS; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut done = vec![false; n];
        for _ in 0..max_len {
            if done.iter().all(|&d| d) {
                break;
            }
            let logits = self.step(t, ctx, &mut st, &prev);
            let lv = t.value(logits);
            for r in 0..n {
                let row = lv.row(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                if !done[r] {
                    out[r].push(best);
                    if best == EOS {
                        done[r] = true;
                    }
                }
                prev[r] = best;
            }
        }
        out
    }
}
