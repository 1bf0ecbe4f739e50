//! Network hyperparameters and structure switches.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossAttentionOrder {
    #[default]
    #[serde(rename = "VC_then_TC")]
    VcThenTc,
    #[serde(rename = "TC_then_VC")]
    TcThenVc,
    #[serde(rename = "parallel")]
    Parallel,
}

impl std::str::FromStr for CrossAttentionOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "VC_then_TC" => Ok(Self::VcThenTc),
            "TC_then_VC" => Ok(Self::TcThenVc),
            "parallel" => Ok(Self::Parallel),
            other => Err(Error::Parse(format!(
                "unknown cross-attention order {other:?} (VC_then_TC, TC_then_VC, parallel)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Frame and memory embedding width `D`.
    pub input_dim: usize,
    /// Frames per video after resampling (`F`).
    pub frames: usize,
    /// Temporal anchors (`W`).
    pub anchors: usize,
    /// Memory hits per anchor (`K`).
    pub topk: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Encoder depth `M`.
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    /// Extra strided convolution levels `L_scale`.
    pub conv_levels: usize,
    /// Event queries `L_q`.
    pub event_queries: usize,
    /// Counter bins `C_max`; bin `i` means `i + 1` events.
    pub max_events: usize,
    /// Hard cap on generated tokens `S_max`.
    pub max_caption_len: usize,
    pub word_dim: usize,
    pub caption_hidden: usize,
    pub cross_attention_order: CrossAttentionOrder,
    pub weight_shared_encoder: bool,
    pub separate_encoding: bool,
    pub textual_cross_attention: bool,
    /// Adds the sinusoidal encoding of each anchor's normalized center time
    /// to its retrieved-text row; off keeps the text stream order-free.
    #[serde(default)]
    pub text_position_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 768,
            frames: 100,
            anchors: 10,
            topk: 80,
            d_model: 256,
            heads: 8,
            ffn_dim: 1024,
            encoder_blocks: 2,
            decoder_blocks: 2,
            conv_levels: 3,
            event_queries: 10,
            max_events: 10,
            max_caption_len: 20,
            word_dim: 256,
            caption_hidden: 512,
            cross_attention_order: CrossAttentionOrder::VcThenTc,
            weight_shared_encoder: true,
            separate_encoding: true,
            textual_cross_attention: true,
            text_position_encoding: false,
        }
    }
}

impl ModelConfig {
    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let positive = [
            ("input_dim", self.input_dim),
            ("frames", self.frames),
            ("anchors", self.anchors),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("event_queries", self.event_queries),
            ("max_events", self.max_events),
            ("max_caption_len", self.max_caption_len),
            ("word_dim", self.word_dim),
            ("caption_hidden", self.caption_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if self.heads > 0 && self.d_model % self.heads != 0 {
            errs.push(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads));
        }
        if self.event_queries < self.max_events {
            errs.push(format!(
                "event_queries {} must be at least max_events {}",
                self.event_queries, self.max_events
            ));
        }
        if self.conv_levels >= usize::BITS as usize || self.frames < (1usize << self.conv_levels.min(63)) {
            errs.push(format!(
                "frames {} < 2^conv_levels ({}): levels would collapse",
                self.frames, self.conv_levels
            ));
        }
        if self.anchors > self.frames {
            errs.push(format!("anchors {} exceed frames {}", self.anchors, self.frames));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.problems();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Row count of every multi-scale level (ceil halving).
    pub fn level_lengths(&self) -> Vec<usize> {
        let mut out = vec![self.frames];
        for _ in 0..self.conv_levels {
            let last = *out.last().expect("non-empty");
            out.push(last.div_ceil(2));
        }
        out
    }

    pub fn multiscale_rows(&self) -> usize {
        self.level_lengths().iter().sum()
    }
}
