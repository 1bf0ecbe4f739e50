//! The external sentence memory.
//!
//! CM2M layout (little-endian): magic `CM2M`, `u32` entry count, `u32` dim,
//! then per entry `u32` id length, id bytes, `u32` caption length, caption
//! bytes (space-joined tokens), and `dim` `f32` embedding values.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::{DenseAnnotation, EmbeddingProvider};
use crate::{Error, Result};

pub const MEMORY_MAGIC: &[u8; 4] = b"CM2M";

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub embedding: Vec<f32>,
    pub caption: Vec<String>,
    pub source_video_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    entries: Vec<MemoryEntry>,
}

impl MemoryBank {
    pub fn from_entries(dim: usize, entries: Vec<MemoryEntry>) -> Result<Self> {
        for e in &entries {
            if e.embedding.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: e.embedding.len(),
                });
            }
            if e.caption.is_empty() {
                return Err(Error::Validation(format!(
                    "memory entry from {} has an empty caption",
                    e.source_video_id
                )));
            }
        }
        Ok(MemoryBank { dim, entries })
    }

    pub fn empty(dim: usize) -> Self {
        MemoryBank {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &MemoryEntry {
        &self.entries[i]
    }

    /// A view over every entry.
    pub fn view(&self) -> MemoryView<'_> {
        MemoryView {
            bank: self,
            indices: (0..self.entries.len()).collect(),
        }
    }

    /// Drops `exclude_video_id`'s entries, then keeps `round(keep_ratio · n)`
    /// of the survivors chosen uniformly without replacement.
    pub fn filter(&self, exclude_video_id: Option<&str>, keep_ratio: f64, seed: u64) -> MemoryView<'_> {
        let keep_ratio = keep_ratio.clamp(0.0, 1.0);
        let survivors: Vec<usize> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| exclude_video_id != Some(e.source_video_id.as_str()))
            .map(|(i, _)| i)
            .collect();
        let indices = if keep_ratio >= 1.0 {
            survivors
        } else {
            let k = (keep_ratio * survivors.len() as f64).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, survivors.len(), k)
                .into_iter()
                .map(|j| survivors[j])
                .collect();
            picked.sort_unstable();
            picked
        };
        MemoryView { bank: self, indices }
    }

    /// Concatenates banks in argument order.
    pub fn merge(banks: &[MemoryBank]) -> Result<MemoryBank> {
        let Some(first) = banks.first() else {
            return Err(Error::EmptyInput("no banks to merge".into()));
        };
        let mut entries = Vec::new();
        for b in banks {
            if b.dim != first.dim {
                return Err(Error::Dimension {
                    expected: first.dim,
                    actual: b.dim,
                });
            }
            entries.extend(b.entries.iter().cloned());
        }
        Ok(MemoryBank {
            dim: first.dim,
            entries,
        })
    }
}

/// A subset of a bank. Indices refer to the underlying bank and are ascending.
#[derive(Clone, Debug)]
pub struct MemoryView<'a> {
    bank: &'a MemoryBank,
    indices: Vec<usize>,
}

impl<'a> MemoryView<'a> {
    pub fn bank(&self) -> &'a MemoryBank {
        self.bank
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bank.dim
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &'a MemoryEntry)> + '_ {
        self.indices.iter().map(|&i| (i, &self.bank.entries[i]))
    }

    /// Materializes the view as a standalone bank.
    pub fn to_bank(&self) -> MemoryBank {
        MemoryBank {
            dim: self.bank.dim,
            entries: self.iter().map(|(_, e)| e.clone()).collect(),
        }
    }
}

/// One entry per ground-truth sentence, ordered by (video id, event index).
pub fn build_memory(annotations: &[DenseAnnotation], embedder: &dyn EmbeddingProvider) -> Result<MemoryBank> {
    if annotations.is_empty() {
        return Err(Error::EmptyInput("no annotations for memory".into()));
    }
    let mut order: Vec<&DenseAnnotation> = annotations.iter().collect();
    order.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let dim = embedder.dim();
    let mut entries = Vec::new();
    for ann in order {
        for ev in &ann.events {
            let embedding = embedder.embed(&ev.sentence);
            if embedding.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: embedding.len(),
                });
            }
            entries.push(MemoryEntry {
                embedding,
                caption: ev.sentence.clone(),
                source_video_id: ann.video_id.clone(),
            });
        }
    }
    MemoryBank::from_entries(dim, entries)
}

pub fn encode_memory(bank: &MemoryBank) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MEMORY_MAGIC);
    out.extend_from_slice(&(bank.entries.len() as u32).to_le_bytes());
    out.extend_from_slice(&(bank.dim as u32).to_le_bytes());
    for e in &bank.entries {
        let id = e.source_video_id.as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        let cap = e.caption.join(" ");
        out.extend_from_slice(&(cap.len() as u32).to_le_bytes());
        out.extend_from_slice(cap.as_bytes());
        for v in &e.embedding {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated memory file at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn decode_memory(bytes: &[u8]) -> Result<MemoryBank> {
    if bytes.len() < 12 || &bytes[..4] != MEMORY_MAGIC {
        return Err(Error::Format("missing CM2M magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let count = r.u32()?;
    let dim = r.u32()?;
    let mut entries = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let source_video_id = r.string()?;
        let caption = r.string()?;
        let embedding = r
            .take(dim * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(MemoryEntry {
            embedding,
            caption: caption.split(' ').filter(|s| !s.is_empty()).map(str::to_string).collect(),
            source_video_id,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} entries",
            bytes.len() - r.pos
        )));
    }
    MemoryBank::from_entries(dim, entries)
}

pub fn save_memory(bank: &MemoryBank, path: &Path) -> Result<()> {
    std::fs::write(path, encode_memory(bank)).map_err(|e| Error::io(path, e))
}

pub fn load_memory(path: &Path) -> Result<MemoryBank> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_memory(&bytes)
}

/// Loads several CM2M files and concatenates them.
pub fn load_merged(paths: &[&Path]) -> Result<MemoryBank> {
    let banks = paths.iter().map(|p| load_memory(p)).collect::<Result<Vec<_>>>()?;
    MemoryBank::merge(&banks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_annotations, HashBowEmbedder};

    fn corpus() -> Vec<DenseAnnotation> {
        parse_annotations(
            r#"{"v2": {"duration": 20, "timestamps": [[0,2],[3,5],[6,9]], "sentences": ["a b","c d","e f"]},
                "v1": {"duration": 10, "timestamps": [[0,2],[3,5]], "sentences": ["g h","i j"]}}"#,
        )
        .unwrap()
    }

    #[test]
    fn one_entry_per_sentence_in_video_order() {
        let emb = HashBowEmbedder::new(32, 0).unwrap();
        let bank = build_memory(&corpus(), &emb).unwrap();
        assert_eq!(bank.len(), 5);
        let ids: Vec<&str> = bank.entries().iter().map(|e| e.source_video_id.as_str()).collect();
        assert_eq!(ids, ["v1", "v1", "v2", "v2", "v2"]);
        let mut rev = corpus();
        rev.reverse();
        assert_eq!(build_memory(&rev, &emb).unwrap(), bank);
    }

    #[test]
    fn exclusion_and_identity() {
        let emb = HashBowEmbedder::new(32, 0).unwrap();
        let bank = build_memory(&corpus(), &emb).unwrap();
        let v = bank.filter(Some("v1"), 1.0, 0);
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|(_, e)| e.source_video_id != "v1"));
        assert_eq!(bank.filter(None, 1.0, 9).to_bank(), bank);
        assert!(bank.filter(None, 0.0, 9).is_empty());
    }

    #[test]
    fn keep_ratio_mean_count() {
        let entries = (0..1000)
            .map(|i| MemoryEntry {
                embedding: vec![1.0, 0.0],
                caption: vec![format!("c{i}")],
                source_video_id: format!("v{i}"),
            })
            .collect();
        let bank = MemoryBank::from_entries(2, entries).unwrap();
        let mean = (0..50).map(|s| bank.filter(None, 0.1, s).len() as f64).sum::<f64>() / 50.0;
        assert!((mean - 100.0).abs() <= 10.0, "mean kept {mean}");
        let a = bank.filter(None, 0.1, 3);
        let b = bank.filter(None, 0.1, 3);
        assert_eq!(a.indices(), b.indices());
        assert_ne!(a.indices(), bank.filter(None, 0.1, 4).indices());
    }

    #[test]
    fn io_round_trip_and_merge() {
        let dir = tempfile::tempdir().unwrap();
        let emb = HashBowEmbedder::new(16, 4).unwrap();
        let bank = build_memory(&corpus(), &emb).unwrap();
        let p1 = dir.path().join("a.cm2m");
        save_memory(&bank, &p1).unwrap();
        assert_eq!(load_memory(&p1).unwrap(), bank);

        let small = build_memory(&corpus()[..1], &emb).unwrap();
        let p2 = dir.path().join("b.cm2m");
        save_memory(&small, &p2).unwrap();
        let merged = load_merged(&[&p1, &p2]).unwrap();
        assert_eq!(merged.len(), bank.len() + small.len());
    }

    #[test]
    fn format_errors() {
        let feat = crate::ingest::FrameFeatures::new("x", 1, 2, vec![0.0, 1.0]).unwrap();
        let bytes = crate::ingest::features::encode_features(&feat);
        assert!(matches!(decode_memory(&bytes), Err(Error::Format(_))));
        let emb = HashBowEmbedder::new(16, 4).unwrap();
        let good = encode_memory(&build_memory(&corpus(), &emb).unwrap());
        assert!(matches!(decode_memory(&good[..good.len() - 3]), Err(Error::Format(_))));
    }

    #[test]
    fn dim_mismatch_on_build() {
        struct Bad;
        impl EmbeddingProvider for Bad {
            fn dim(&self) -> usize {
                8
            }
            fn embed(&self, _: &[String]) -> Vec<f32> {
                vec![1.0; 4]
            }
        }
        assert!(matches!(build_memory(&corpus(), &Bad), Err(Error::Dimension { .. })));
    }
}
