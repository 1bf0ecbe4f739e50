//! Central finite-difference check of the training objective.

use rayon::prelude::*;

use crate::autograd::{Mat, Tape};
use crate::ingest::FrameFeatures;
use crate::loss::{video_loss, LossWeights, VideoTarget};
use crate::matching::MatchResult;
use crate::model::Model;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Worst entry as `(name, flat index, analytic, numeric)`.
    pub worst: (String, usize, f64, f64),
}

fn loss_value(model: &Model, frames: &FrameFeatures, text: &Mat, target: &VideoTarget, w: &LossWeights, m: &MatchResult) -> Result<f64> {
    let mut t = Tape::new(&model.params);
    let l = video_loss(model, &mut t, frames, text, target, w, Some(m))?;
    Ok(t.value(l.total).scalar())
}

/// Compares analytic gradients of the total loss against central differences
/// for every parameter scalar (or every `stride`-th one), holding the
/// assignment fixed. Relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn check_gradients(
    model: &Model,
    frames: &FrameFeatures,
    text: &Mat,
    target: &VideoTarget,
    w: &LossWeights,
    h: f64,
    floor: f64,
    stride: usize,
) -> Result<GradCheckReport> {
    let (analytic, matching) = {
        let mut t = Tape::new(&model.params);
        let l = video_loss(model, &mut t, frames, text, target, w, None)?;
        (t.backward(l.total), l.matching)
    };
    let mut coords = Vec::new();
    let mut k = 0usize;
    for id in model.params.ids() {
        for i in 0..model.params.get(id).data().len() {
            if k % stride.max(1) == 0 {
                coords.push((id, i));
            }
            k += 1;
        }
    }
    let results: Vec<Result<(usize, usize, f64, f64)>> = coords
        .par_chunks(64)
        .flat_map_iter(|chunk| {
            let mut local = model.clone();
            let matching = &matching;
            let analytic = &analytic;
            chunk
                .iter()
                .map(move |&(id, i)| {
                    let orig = local.params.get(id).data()[i];
                    local.params.get_mut(id).data_mut()[i] = orig + h;
                    let up = loss_value(&local, frames, text, target, w, matching)?;
                    local.params.get_mut(id).data_mut()[i] = orig - h;
                    let down = loss_value(&local, frames, text, target, w, matching)?;
                    local.params.get_mut(id).data_mut()[i] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let a = analytic[id.0].as_ref().map_or(0.0, |g| g.data()[i]);
                    Ok((id.0, i, a, numeric))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: (String::new(), 0, 0.0, 0.0) };
    for r in results {
        let (pid, i, a, n) = r?;
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        report.checked += 1;
        if report.checked == 1 || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (model.params.names()[pid].clone(), i, a, n);
        }
    }
    Ok(report)
}
