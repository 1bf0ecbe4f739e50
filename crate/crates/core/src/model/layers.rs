//! Parameterized building blocks recorded on a [`Tape`].

use rand::Rng;

use crate::autograd::{Mat, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        let w = ps.add(format!("{name}.w"), Mat::xavier(fan_in, fan_out, rng));
        let b = bias.then(|| ps.add(format!("{name}.b"), Mat::zeros(1, fan_out)));
        Linear { w, b }
    }

    pub fn apply(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let y = t.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = t.param(b);
                t.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        Norm {
            gamma: ps.add(format!("{name}.gamma"), Mat::filled(1, dim, 1.0)),
            beta: ps.add(format!("{name}.beta"), Mat::zeros(1, dim)),
        }
    }

    pub fn apply(&self, t: &mut Tape, x: Var) -> Var {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        t.layer_norm(x, g, b)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut R) -> Self {
        Attention {
            q: Linear::new(ps, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(ps, &format!("{name}.k"), d, d, true, rng),
            v: Linear::new(ps, &format!("{name}.v"), d, d, true, rng),
            o: Linear::new(ps, &format!("{name}.o"), d, d, true, rng),
            heads,
        }
    }

    /// `query` rows attend over `memory` rows; `key_mask[j]` false hides
    /// memory row `j`.
    pub fn apply(&self, t: &mut Tape, query: Var, memory: Var, key_mask: Option<&[bool]>) -> Var {
        let q = self.q.apply(t, query);
        let k = self.k.apply(t, memory);
        let v = self.v.apply(t, memory);
        let (nq, d) = t.shape(q);
        let nk = t.shape(k).0;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mask: Option<Vec<bool>> = key_mask.map(|m| {
            assert_eq!(m.len(), nk, "key mask length");
            (0..nq).flat_map(|_| m.iter().copied()).collect()
        });
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (t.slice_cols(q, h * dh, dh), t.slice_cols(k, h * dh, dh), t.slice_cols(v, h * dh, dh))
            };
            let s = t.matmul_t(qh, kh);
            let s = t.scale(s, scale);
            let a = t.softmax_rows(s, mask.as_deref());
            outs.push(t.matmul(a, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs) };
        self.o.apply(t, cat)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut R) -> Self {
        FeedForward {
            l1: Linear::new(ps, &format!("{name}.l1"), d, hidden, true, rng),
            l2: Linear::new(ps, &format!("{name}.l2"), hidden, d, true, rng),
        }
    }

    pub fn apply(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.l1.apply(t, x);
        let h = t.relu(h);
        self.l2.apply(t, h)
    }
}

/// Sinusoidal encoding of normalized time `pos ∈ [0, 1]`, width `d`.
pub fn sinusoid(pos: f64, d: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
        let a = pos * scale * freq;
        out[2 * i] = a.sin();
        out[2 * i + 1] = a.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_shapes_and_masking() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamStore::new();
        let att = Attention::new(&mut ps, "a", 8, 2, &mut rng);
        let mut t = Tape::new(&ps);
        let q = t.constant(Mat::xavier(3, 8, &mut rng));
        let mut mem = Mat::xavier(5, 8, &mut rng);
        let m = t.constant(mem.clone());
        let mask = [true, true, false, true, false];
        let out = att.apply(&mut t, q, m, Some(&mask));
        assert_eq!(t.shape(out), (3, 8));
        // changing masked rows leaves the output unchanged
        for c in 0..8 {
            mem.set(2, c, 100.0);
            mem.set(4, c, -7.0);
        }
        let m2 = t.constant(mem);
        let out2 = att.apply(&mut t, q, m2, Some(&mask));
        for (a, b) in t.value(out).data().iter().zip(t.value(out2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_is_bounded() {
        let v = sinusoid(0.3, 16, 100.0);
        assert!(v.iter().all(|x| x.abs() <= 1.0));
        assert_eq!(v[1], (0.3f64 * 100.0).cos());
    }
}
