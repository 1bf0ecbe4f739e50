//! Experiment configuration file: typed TOML sections over desk-scale defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::loss::LossWeights;
use crate::meta::short_hash;
use crate::model::{CrossAttentionOrder, ModelConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_annotations: Option<PathBuf>,
    pub val_annotations: Option<PathBuf>,
    /// Directory of `<video_id>.cm2f` feature files.
    pub features_dir: Option<PathBuf>,
    /// Prebuilt CM2M bank; built from the training annotations when absent.
    pub memory: Option<PathBuf>,
    pub embed_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Off retrieves against an empty bank, giving all-zero text features.
    pub enabled: bool,
    pub keep_ratio: f64,
    pub keep_seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { enabled: true, keep_ratio: 1.0, keep_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Expected L2 norm of fresh Gaussian noise added to every training
    /// frame at every step; 0 disables it.
    pub feature_jitter: f64,
    /// Also train on every video played backwards.
    pub augment_reverse: bool,
    /// Probability of replacing a training video, at a step, by a random
    /// event-preserving temporal crop stretched back to `F` rows.
    pub augment_crop: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 3000,
            batch_size: 4,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
            feature_jitter: 0.5,
            augment_reverse: true,
            augment_crop: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub retrieval: RetrievalConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
}

/// Network sized for the synthetic corpus on a laptop.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        input_dim: 64,
        frames: 32,
        anchors: 8,
        topk: 5,
        d_model: 32,
        heads: 2,
        ffn_dim: 64,
        encoder_blocks: 1,
        decoder_blocks: 1,
        conv_levels: 2,
        event_queries: 3,
        max_events: 3,
        max_caption_len: 6,
        word_dim: 16,
        caption_hidden: 32,
        cross_attention_order: CrossAttentionOrder::VcThenTc,
        weight_shared_encoder: true,
        separate_encoding: true,
        textual_cross_attention: true,
        text_position_encoding: false,
    }
}

/// Loss weights for the desk model: a lighter count term.
pub fn desk_loss() -> LossWeights {
    LossWeights { lambda_count: 0.3, ..LossWeights::default() }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            retrieval: RetrievalConfig::default(),
            model: desk_model(),
            train: TrainConfig::default(),
            loss: desk_loss(),
        }
    }
}

fn table_of<T: Serialize>(value: &T) -> toml::Table {
    toml::Table::try_from(value).expect("config serializes to a TOML table")
}

/// Every key of `user` that has no counterpart in `schema`, as dotted paths.
fn unknown_keys(user: &toml::Table, schema: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (schema.get(k), v) {
            (None, _) => out.push(format!("unknown key `{path}`")),
            (Some(toml::Value::Table(s)), toml::Value::Table(u)) => unknown_keys(u, s, &path, out),
            (Some(toml::Value::Table(_)), _) => out.push(format!("`{path}` must be a table")),
            _ => {}
        }
    }
}

fn overlay(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => overlay(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file; absent keys keep their desk-scale defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let mut schema_src = ExperimentConfig::default();
        schema_src.data = DataConfig {
            train_annotations: Some(PathBuf::new()),
            val_annotations: Some(PathBuf::new()),
            features_dir: Some(PathBuf::new()),
            memory: Some(PathBuf::new()),
            embed_seed: 0,
        };
        let mut unknown = Vec::new();
        unknown_keys(&user, &table_of(&schema_src), "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(unknown));
        }
        let mut merged = table_of(&ExperimentConfig::default());
        overlay(&mut merged, user);
        let config: ExperimentConfig =
            merged.try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Every violated constraint across all sections.
    pub fn problems(&self) -> Vec<String> {
        let mut errs: Vec<String> = self.model.problems().into_iter().map(|e| format!("model: {e}")).collect();
        if self.model.input_dim < 8 {
            errs.push(format!("model: input_dim {} < 8 (embedding width)", self.model.input_dim));
        }
        let r = &self.retrieval;
        if !(0.0..=1.0).contains(&r.keep_ratio) {
            errs.push(format!("retrieval: keep_ratio {} outside [0, 1]", r.keep_ratio));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            errs.push("train: batch_size must be positive".into());
        }
        if !(t.learning_rate > 0.0) {
            errs.push("train: learning_rate must be positive".into());
        }
        for (name, b) in [("beta1", t.beta1), ("beta2", t.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("train: {name} {b} outside [0, 1)"));
            }
        }
        if !(t.epsilon > 0.0) {
            errs.push("train: epsilon must be positive".into());
        }
        if !(t.feature_jitter >= 0.0) {
            errs.push("train: feature_jitter must be ≥ 0".into());
        }
        if !(0.0..=1.0).contains(&t.augment_crop) {
            errs.push(format!("train: augment_crop {} outside [0, 1]", t.augment_crop));
        }
        if !(t.clip_norm >= 0.0) {
            errs.push("train: clip_norm must be ≥ 0".into());
        }
        let w = &self.loss;
        for (name, v) in [
            ("alpha", w.alpha),
            ("lambda_loc", w.lambda_loc),
            ("lambda_count", w.lambda_count),
            ("lambda_cap", w.lambda_cap),
            ("lambda_l1", w.lambda_l1),
        ] {
            if !(v >= 0.0) {
                errs.push(format!("loss: {name} must be ≥ 0"));
            }
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

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("config serializes to JSON"))
    }
}
