//! Sentence embedders.

use crate::{Error, Result};

/// Maps a token sequence to a unit-norm vector of length [`dim`](Self::dim).
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, tokens: &[String]) -> Vec<f32>;
}

/// Number of signed buckets each token writes into.
const HASHES_PER_TOKEN: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct HashEmbedding {
    pub vector: Vec<f32>,
    /// Set when the input was empty and the sentinel vector was returned.
    pub sentinel: bool,
}

/// Signed-hash bag of words, L2-normalized.
///
/// Each token adds `±1` at [`HASHES_PER_TOKEN`] hashed coordinates. An empty
/// sentence (or one whose buckets cancel exactly) yields the sentinel `e₀`.
pub fn hash_bow_embed(sentence: &[String], dim: usize, seed: u64) -> Result<HashEmbedding> {
    if dim < 8 {
        return Err(Error::Validation(format!(
            "hash embedding dim must be ≥ 8, got {dim}"
        )));
    }
    let mut acc = vec![0.0f64; dim];
    for token in sentence {
        let base = fnv1a(token.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for k in 0..HASHES_PER_TOKEN {
            let h = splitmix64(base.wrapping_add(k.wrapping_mul(0xd6e8_feb8_6659_fd93)));
            let idx = (h % dim as u64) as usize;
            let sign = if (h >> 63) == 1 { -1.0 } else { 1.0 };
            acc[idx] += sign;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut vector = vec![0.0f32; dim];
        vector[0] = 1.0;
        return Ok(HashEmbedding {
            vector,
            sentinel: true,
        });
    }
    Ok(HashEmbedding {
        vector: acc.iter().map(|v| (v / norm) as f32).collect(),
        sentinel: false,
    })
}

#[derive(Clone, Debug)]
pub struct HashBowEmbedder {
    dim: usize,
    seed: u64,
}

impl HashBowEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        hash_bow_embed(&[], dim, seed)?;
        Ok(HashBowEmbedder { dim, seed })
    }
}

impl EmbeddingProvider for HashBowEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Vec<f32> {
        hash_bow_embed(tokens, self.dim, self.seed)
            .expect("dim validated at construction")
            .vector
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let na: f64 = a.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
