//! Versatile encoder: one self-attention stack applied to each stream.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::{Attention, FeedForward, Norm};
use crate::autograd::{ParamStore, Tape, Var};

/// Pre-norm block: `x + SA(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    n1: Norm,
    attn: Attention,
    n2: Norm,
    ffn: FeedForward,
}

impl EncoderBlock {
    fn new<R: Rng>(ps: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut R) -> Self {
        EncoderBlock {
            n1: Norm::new(ps, &format!("{name}.n1"), c.d_model),
            attn: Attention::new(ps, &format!("{name}.attn"), c.d_model, c.heads, rng),
            n2: Norm::new(ps, &format!("{name}.n2"), c.d_model),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), c.d_model, c.ffn_dim, rng),
        }
    }

    fn apply(&self, t: &mut Tape, x: Var, mask: Option<&[bool]>) -> Var {
        let h = self.n1.apply(t, x);
        let a = self.attn.apply(t, h, h, mask);
        let x = t.add(x, a);
        let h = self.n2.apply(t, x);
        let f = self.ffn.apply(t, h);
        t.add(x, f)
    }
}

/// A stack of `M` blocks; `M = 0` is the identity.
#[derive(Clone, Debug)]
pub struct Encoder {
    blocks: Vec<EncoderBlock>,
}

impl Encoder {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut R) -> Self {
        let blocks = (0..c.encoder_blocks).map(|i| EncoderBlock::new(ps, &format!("{name}.{i}"), c, rng)).collect();
        Encoder { blocks }
    }

    pub fn apply(&self, t: &mut Tape, mut x: Var, mask: Option<&[bool]>) -> Var {
        for b in &self.blocks {
            x = b.apply(t, x, mask);
        }
        x
    }
}

#[derive(Clone, Debug)]
pub enum Encoders {
    /// One parameter set for both streams (also used for joint encoding).
    Shared(Encoder),
    Split { visual: Encoder, textual: Encoder },
}

impl Encoders {
    pub fn new<R: Rng>(ps: &mut ParamStore, c: &ModelConfig, rng: &mut R) -> Self {
        if c.weight_shared_encoder || !c.separate_encoding {
            Encoders::Shared(Encoder::new(ps, "enc.shared", c, rng))
        } else {
            Encoders::Split {
                visual: Encoder::new(ps, "enc.visual", c, rng),
                textual: Encoder::new(ps, "enc.textual", c, rng),
            }
        }
    }

    pub fn visual(&self) -> &Encoder {
        match self {
            Encoders::Shared(e) => e,
            Encoders::Split { visual, .. } => visual,
        }
    }

    pub fn textual(&self) -> &Encoder {
        match self {
            Encoders::Shared(e) => e,
            Encoders::Split { textual, .. } => textual,
        }
    }

    /// Encodes both streams. With `separate` the streams never attend to
    /// each other; otherwise they are stacked and encoded jointly.
    pub fn encode(
        &self,
        t: &mut Tape,
        visual: Var,
        vis_mask: Option<&[bool]>,
        textual: Var,
        separate: bool,
    ) -> (Var, Var) {
        if separate {
            let v = self.visual().apply(t, visual, vis_mask);
            let x = self.textual().apply(t, textual, None);
            (v, x)
        } else {
            let nv = t.shape(visual).0;
            let nt = t.shape(textual).0;
            let joint = t.concat_rows(&[visual, textual]);
            let mask: Option<Vec<bool>> =
                vis_mask.map(|m| m.iter().copied().chain(std::iter::repeat_n(true, nt)).collect());
            let out = self.visual().apply(t, joint, mask.as_deref());
            (t.slice_rows(out, 0, nv), t.slice_rows(out, nv, nt))
        }
    }
}
