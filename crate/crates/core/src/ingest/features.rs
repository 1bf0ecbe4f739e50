//! CM2F frame-feature files and fixed-length resampling.
//!
//! Layout (little-endian): magic `CM2F`, `u32` rows, `u32` cols, then
//! `rows * cols` `f32` values in row-major order.

use std::path::Path;

use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"CM2F";

/// Per-video frame embeddings; `mask[i]` is false for padding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    pub video_id: String,
    pub rows: usize,
    pub dim: usize,
    /// Row-major `rows * dim`.
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

impl FrameFeatures {
    pub fn new(video_id: impl Into<String>, rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Dimension {
                expected: rows * dim,
                actual: data.len(),
            });
        }
        Ok(FrameFeatures {
            video_id: video_id.into(),
            rows,
            dim,
            data,
            mask: vec![true; rows],
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn valid_rows(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn encode_features(features: &FrameFeatures) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + features.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(features.rows as u32).to_le_bytes());
    out.extend_from_slice(&(features.dim as u32).to_le_bytes());
    for v in &features.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], video_id: &str, expect_dim: usize) -> Result<FrameFeatures> {
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!("{video_id}: missing CM2F magic")));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if cols != expect_dim {
        return Err(Error::Dimension {
            expected: expect_dim,
            actual: cols,
        });
    }
    let payload = &bytes[12..];
    if payload.len() != rows * cols * 4 {
        return Err(Error::Format(format!(
            "{video_id}: expected {} payload bytes, found {}",
            rows * cols * 4,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FrameFeatures::new(video_id, rows, cols, data)
}

pub fn save_frame_features(features: &FrameFeatures, path: &Path) -> Result<()> {
    std::fs::write(path, encode_features(features)).map_err(|e| Error::io(path, e))
}

/// Loads a CM2F file. The video id is taken from the file stem.
pub fn load_frame_features(path: &Path, expect_dim: usize) -> Result<FrameFeatures> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let video_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_features(&bytes, &video_id, expect_dim)
}

/// Strided subsampling (row `floor(j·F′/F)`) or zero padding to exactly `target` rows.
pub fn resample_frames(features: &FrameFeatures, target: usize) -> Result<FrameFeatures> {
    let src = features.rows;
    if src == 0 {
        return Err(Error::EmptyInput(format!(
            "{}: no frames to resample",
            features.video_id
        )));
    }
    let dim = features.dim;
    let mut data = vec![0.0f32; target * dim];
    let mut mask = vec![false; target];
    if src >= target {
        for j in 0..target {
            let i = j * src / target;
            data[j * dim..(j + 1) * dim].copy_from_slice(features.row(i));
            mask[j] = features.mask[i];
        }
    } else {
        data[..src * dim].copy_from_slice(&features.data);
        mask[..src].copy_from_slice(&features.mask);
    }
    Ok(FrameFeatures {
        video_id: features.video_id.clone(),
        rows: target,
        dim,
        data,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, dim: usize) -> FrameFeatures {
        let data = (0..rows * dim).map(|i| i as f32).collect();
        FrameFeatures::new("v", rows, dim, data).unwrap()
    }

    #[test]
    fn decodes_row_major_payload() {
        let f = ramp(4, 2);
        let back = decode_features(&encode_features(&f), "v", 2).unwrap();
        assert_eq!(back.rows, 4);
        assert_eq!(back.row(2), &[4.0, 5.0]);
        assert!(back.mask.iter().all(|&m| m));
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vid.cm2f");
        let mut f = ramp(3, 5);
        f.data[7] = f32::from_bits(0x3f9d_70a4);
        f.video_id = "vid".into();
        save_frame_features(&f, &path).unwrap();
        let g = load_frame_features(&path, 5).unwrap();
        assert_eq!(g, f);
        save_frame_features(&g, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), encode_features(&f));
    }

    #[test]
    fn wrong_dim_and_magic() {
        let f = ramp(2, 768);
        assert!(matches!(
            decode_features(&encode_features(&f), "v", 512),
            Err(Error::Dimension { expected: 512, actual: 768 })
        ));
        let mut bytes = encode_features(&f);
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes, "v", 768), Err(Error::Format(_))));
        let bytes = encode_features(&f);
        assert!(matches!(
            decode_features(&bytes[..bytes.len() - 1], "v", 768),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn subsample_uses_floor_stride() {
        let f = ramp(5, 1);
        let r = resample_frames(&f, 3).unwrap();
        assert_eq!(r.data, vec![0.0, 1.0, 3.0]);
        assert!(r.mask.iter().all(|&m| m));
    }

    #[test]
    fn pads_with_masked_zero_rows() {
        let f = ramp(2, 2);
        let r = resample_frames(&f, 4).unwrap();
        assert_eq!(r.data, vec![0.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(r.mask, vec![true, true, false, false]);
    }

    #[test]
    fn identity_and_empty() {
        let f = ramp(6, 3);
        let r = resample_frames(&f, 6).unwrap();
        assert_eq!(r, f);
        assert_eq!(resample_frames(&r, 6).unwrap(), r);
        let empty = FrameFeatures::new("e", 0, 3, vec![]).unwrap();
        assert!(matches!(resample_frames(&empty, 4), Err(Error::EmptyInput(_))));
    }
}
