//! Versatile decoder with split visual and textual cross-attention.

use rand::Rng;

use super::config::{CrossAttentionOrder, ModelConfig};
use super::layers::{Attention, FeedForward, Norm};
use crate::autograd::{ParamStore, Tape, Var};

/// Switches used to probe the decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Bypass textual cross-attention entirely.
    pub skip_textual: bool,
}

#[derive(Clone, Debug)]
enum Cross {
    Split { n_v: Norm, vca: Attention, n_t: Norm, tca: Attention },
    Joint { n: Norm, ca: Attention },
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    n_sa: Norm,
    sa: Attention,
    cross: Cross,
    n_f: Norm,
    ffn: FeedForward,
}

/// Encoder outputs seen by the decoder.
pub struct Memory<'a> {
    pub visual: Var,
    pub vis_mask: Option<&'a [bool]>,
    pub textual: Var,
}

impl DecoderBlock {
    fn new<R: Rng>(ps: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut R) -> Self {
        let d = c.d_model;
        let cross = if c.textual_cross_attention {
            Cross::Split {
                n_v: Norm::new(ps, &format!("{name}.n_vca"), d),
                vca: Attention::new(ps, &format!("{name}.vca"), d, c.heads, rng),
                n_t: Norm::new(ps, &format!("{name}.n_tca"), d),
                tca: Attention::new(ps, &format!("{name}.tca"), d, c.heads, rng),
            }
        } else {
            Cross::Joint {
                n: Norm::new(ps, &format!("{name}.n_ca"), d),
                ca: Attention::new(ps, &format!("{name}.ca"), d, c.heads, rng),
            }
        };
        DecoderBlock {
            n_sa: Norm::new(ps, &format!("{name}.n_sa"), d),
            sa: Attention::new(ps, &format!("{name}.sa"), d, c.heads, rng),
            cross,
            n_f: Norm::new(ps, &format!("{name}.n_ffn"), d),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, c.ffn_dim, rng),
        }
    }

    fn apply(&self, t: &mut Tape, q: Var, mem: &Memory<'_>, order: CrossAttentionOrder, opts: DecodeOptions) -> Var {
        let h = self.n_sa.apply(t, q);
        let a = self.sa.apply(t, h, h, None);
        let mut q = t.add(q, a);
        match &self.cross {
            Cross::Split { n_v, vca, n_t, tca } => {
                let visual = |t: &mut Tape, q: Var| {
                    let h = n_v.apply(t, q);
                    vca.apply(t, h, mem.visual, mem.vis_mask)
                };
                let textual = |t: &mut Tape, q: Var| {
                    let h = n_t.apply(t, q);
                    tca.apply(t, h, mem.textual, None)
                };
                match order {
                    CrossAttentionOrder::VcThenTc => {
                        let v = visual(t, q);
                        q = t.add(q, v);
                        if !opts.skip_textual {
                            let x = textual(t, q);
                            q = t.add(q, x);
                        }
                    }
                    CrossAttentionOrder::TcThenVc => {
                        if !opts.skip_textual {
                            let x = textual(t, q);
                            q = t.add(q, x);
                        }
                        let v = visual(t, q);
                        q = t.add(q, v);
                    }
                    CrossAttentionOrder::Parallel => {
                        let v = visual(t, q);
                        let merged = if opts.skip_textual {
                            v
                        } else {
                            let x = textual(t, q);
                            t.add(v, x)
                        };
                        q = t.add(q, merged);
                    }
                }
            }
            Cross::Joint { n, ca } => {
                let nv = t.shape(mem.visual).0;
                let nt = t.shape(mem.textual).0;
                let joint = t.concat_rows(&[mem.visual, mem.textual]);
                let mask: Option<Vec<bool>> =
                    mem.vis_mask.map(|m| m.iter().copied().chain(std::iter::repeat_n(true, nt)).collect());
                debug_assert!(mask.as_ref().is_none_or(|m| m.len() == nv + nt));
                let h = n.apply(t, q);
                let x = ca.apply(t, h, joint, mask.as_deref());
                q = t.add(q, x);
            }
        }
        let h = self.n_f.apply(t, q);
        let f = self.ffn.apply(t, h);
        t.add(q, f)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    blocks: Vec<DecoderBlock>,
    norm: Norm,
}

impl Decoder {
    pub fn new<R: Rng>(ps: &mut ParamStore, c: &ModelConfig, rng: &mut R) -> Self {
        let blocks = (0..c.decoder_blocks).map(|i| DecoderBlock::new(ps, &format!("dec.{i}"), c, rng)).collect();
        Decoder { blocks, norm: Norm::new(ps, "dec.norm", c.d_model) }
    }

    /// Refines the event queries into `q̃` (same shape).
    pub fn apply(&self, t: &mut Tape, mut q: Var, mem: &Memory<'_>, order: CrossAttentionOrder, opts: DecodeOptions) -> Var {
        for b in &self.blocks {
            q = b.apply(t, q, mem, order, opts);
        }
        self.norm.apply(t, q)
    }
}
