//! Inference, oracle retrieval runs, end-to-end pipelines and parameter sweeps.

use std::fmt::Write as _;
use std::str::FromStr;

use super::config::ExperimentConfig;
use super::train::{effective_bank, embedder, full_bank, retrieved_text, train, Dataset, StepLog, Video};
use crate::eval::localization::corpus_localization;
use crate::eval::predictions::Predictions;
use crate::eval::report::{evaluate, MetricReport};
use crate::eval::{sort_predictions, EventPrediction};
use crate::ingest::DenseAnnotation;
use crate::memory::MemoryBank;
use crate::meta::ArtifactMeta;
use crate::model::checkpoint::{decode_checkpoint, encode_checkpoint};
use crate::model::Model;
use crate::retrieval::{oracle_retrieve, OracleMode};
use crate::{Error, Result};

/// Predicted events and event count of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoOutput {
    pub events: Vec<EventPrediction>,
    pub count: usize,
}

/// Runs retrieval against the unfiltered (but `keep_ratio`-subsampled) bank
/// and the model on every video, in video order.
pub fn infer(model: &Model, config: &ExperimentConfig, bank: &MemoryBank, videos: &[Video]) -> Result<Vec<VideoOutput>> {
    videos
        .iter()
        .map(|v| {
            let text = retrieved_text(&model.config, bank, &config.retrieval, &v.frames, None)?;
            let p = model.predict(&v.frames, &text, v.annotation.duration)?;
            Ok(VideoOutput { events: p.events, count: p.count })
        })
        .collect()
}

pub fn to_predictions(videos: &[Video], outputs: &[VideoOutput]) -> Predictions {
    videos
        .iter()
        .zip(outputs)
        .map(|(v, o)| {
            let mut events = o.events.clone();
            sort_predictions(&mut events);
            (v.annotation.video_id.clone(), events)
        })
        .collect()
}

/// Fraction of videos whose predicted event count equals the annotated one.
pub fn count_accuracy(videos: &[Video], outputs: &[VideoOutput]) -> f64 {
    if videos.is_empty() {
        return 0.0;
    }
    let hits = videos.iter().zip(outputs).filter(|(v, o)| v.annotation.events.len() == o.count).count();
    hits as f64 / videos.len() as f64
}

/// Corpus localization F1 at a single IOU threshold.
pub fn localization_f1_at(preds: &Predictions, gts: &[DenseAnnotation], threshold: f64) -> Result<f64> {
    let input: Vec<_> = gts
        .iter()
        .map(|g| {
            let p = preds.get(&g.video_id).map(|ps| ps.iter().map(EventPrediction::segment).collect()).unwrap_or_default();
            (p, g.segments())
        })
        .collect();
    Ok(corpus_localization(&input, &[threshold])?.f1)
}

/// Both oracle modes over `videos`. The mode without ground-truth proposals
/// places retrieved captions on the segments of `model_preds`.
pub fn oracle_predictions(
    config: &ExperimentConfig,
    bank: &MemoryBank,
    videos: &[Video],
    model_preds: &Predictions,
) -> Result<(Predictions, Predictions)> {
    let emb = embedder(config)?;
    let view = bank.view();
    let mut with_gt = Predictions::new();
    let mut without_gt = Predictions::new();
    for v in videos {
        let id = &v.annotation.video_id;
        let segs: Vec<(f64, f64, f64)> =
            model_preds.get(id).map(|ps| ps.iter().map(|p| (p.start, p.end, p.confidence)).collect()).unwrap_or_default();
        let mut a = oracle_retrieve(&v.annotation, &view, &emb, OracleMode::WithGtProposal, None)?;
        let mut b = oracle_retrieve(&v.annotation, &view, &emb, OracleMode::WithoutGtProposal, Some(&segs))?;
        sort_predictions(&mut a);
        sort_predictions(&mut b);
        with_gt.insert(id.clone(), a);
        without_gt.insert(id.clone(), b);
    }
    Ok((with_gt, without_gt))
}

/// Everything one train → checkpoint → infer → eval run produces.
pub struct RunOutcome {
    /// The model as reloaded from its serialized checkpoint.
    pub model: Model,
    pub checkpoint: Vec<u8>,
    pub outputs: Vec<VideoOutput>,
    pub predictions: Predictions,
    pub report: MetricReport,
    pub count_accuracy: f64,
    pub f1_at_05: f64,
}

/// Trains on `data.train`, round-trips the checkpoint and evaluates the
/// reloaded model on `data.val`.
pub fn run_pipeline(
    config: &ExperimentConfig,
    data: &Dataset,
    meta: &ArtifactMeta,
    on_step: impl FnMut(&StepLog) -> Result<()>,
) -> Result<RunOutcome> {
    let bank = effective_bank(config, &data.train)?;
    let trained = train(config, &data.train, &bank, on_step)?;
    let checkpoint = encode_checkpoint(&trained, Some(meta))?;
    let (model, _) = decode_checkpoint(&checkpoint)?;
    let outputs = infer(&model, config, &bank, &data.val)?;
    let predictions = to_predictions(&data.val, &outputs);
    let gts = data.val_annotations();
    let report = evaluate(&predictions, &gts, Some(meta.clone()))?;
    Ok(RunOutcome {
        count_accuracy: count_accuracy(&data.val, &outputs),
        f1_at_05: localization_f1_at(&predictions, &gts, 0.5)?,
        model,
        checkpoint,
        outputs,
        predictions,
        report,
    })
}

/// CIDEr of the four retrieval settings on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalComparison {
    pub oracle_with_gt: MetricReport,
    pub oracle_without_gt: MetricReport,
    pub proposed: MetricReport,
    pub no_retrieval: MetricReport,
}

pub fn compare_retrieval(config: &ExperimentConfig, data: &Dataset, meta: &ArtifactMeta) -> Result<(RetrievalComparison, RunOutcome)> {
    let mut on = config.clone();
    on.retrieval.enabled = true;
    let mut off = config.clone();
    off.retrieval.enabled = false;
    let proposed = run_pipeline(&on, data, meta, |_| Ok(()))?;
    let baseline = run_pipeline(&off, data, meta, |_| Ok(()))?;
    let bank = full_bank(config, &data.train)?;
    let (with_gt, without_gt) = oracle_predictions(config, &bank, &data.val, &proposed.predictions)?;
    let gts = data.val_annotations();
    let cmp = RetrievalComparison {
        oracle_with_gt: evaluate(&with_gt, &gts, Some(meta.clone()))?,
        oracle_without_gt: evaluate(&without_gt, &gts, Some(meta.clone()))?,
        proposed: proposed.report.clone(),
        no_retrieval: baseline.report,
    };
    Ok((cmp, proposed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Anchors,
    Topk,
    KeepRatio,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchors" => Ok(SweepParam::Anchors),
            "topk" => Ok(SweepParam::Topk),
            "keep_ratio" => Ok(SweepParam::KeepRatio),
            other => Err(Error::Parse(format!("unknown sweep parameter {other:?} (anchors, topk, keep_ratio)"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Anchors => "anchors",
            SweepParam::Topk => "topk",
            SweepParam::KeepRatio => "keep_ratio",
        }
    }

    /// `config` with the parameter set to `value`; counts must be whole.
    pub fn apply(self, config: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = config.clone();
        let whole = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Validation(format!("{} needs a whole number, got {value}", self.name())))
            }
        };
        match self {
            SweepParam::Anchors => c.model.anchors = whole()?,
            SweepParam::Topk => c.model.topk = whole()?,
            SweepParam::KeepRatio => c.retrieval.keep_ratio = value,
        }
        c.validate()?;
        Ok(c)
    }
}

/// One full pipeline per value, in the given order.
pub fn sweep(
    config: &ExperimentConfig,
    data: &Dataset,
    param: SweepParam,
    values: &[f64],
    meta: &ArtifactMeta,
) -> Result<Vec<(f64, MetricReport)>> {
    let configs = values.iter().map(|&v| param.apply(config, v)).collect::<Result<Vec<_>>>()?;
    values
        .iter()
        .zip(configs)
        .map(|(&v, c)| Ok((v, run_pipeline(&c, data, meta, |_| Ok(()))?.report)))
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 9] =
    ["precision", "recall", "f1", "bleu4", "cider", "soda_c", "paragraph_bleu4", "paragraph_cider", "n_videos"];

/// CSV with a header row, one row per swept value, metrics to 4 decimals.
pub fn sweep_csv(param: SweepParam, rows: &[(f64, MetricReport)]) -> String {
    let mut out = format!("{},{}\n", param.name(), SWEEP_COLUMNS.join(","));
    for (v, r) in rows {
        let _ = writeln!(
            out,
            "{v},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            r.precision, r.recall, r.f1, r.bleu4, r.cider, r.soda_c, r.paragraph.bleu4, r.paragraph.cider, r.n_videos
        );
    }
    out
}
