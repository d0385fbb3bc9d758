use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Pixel counts and rates for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameScore {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub f1: f64,
}

/// Micro-averaged pixel F1 over an evaluation set, with a per-frame breakdown.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct F1Report {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub frames: Vec<FrameScore>,
}

fn rates(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

impl F1Report {
    fn from_frames(frames: Vec<FrameScore>) -> Self {
        let tp = frames.iter().map(|f| f.true_pos).sum();
        let fp = frames.iter().map(|f| f.false_pos).sum();
        let fn_ = frames.iter().map(|f| f.false_neg).sum();
        let (precision, recall, f1) = rates(tp, fp, fn_);
        Self {
            true_pos: tp,
            false_pos: fp,
            false_neg: fn_,
            precision,
            recall,
            f1,
            frames,
        }
    }

    /// Pool several reports into one micro-average.
    pub fn merge(reports: &[F1Report]) -> Self {
        Self::from_frames(reports.iter().flat_map(|r| r.frames.iter().copied()).collect())
    }

    pub fn mean_frame_f1(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.f1).sum::<f64>() / self.frames.len() as f64
    }
}

fn frame_score(pred: &ImageBuffer, truth: &ImageBuffer, threshold: f64) -> Result<FrameScore> {
    if pred.channels() != 1 || truth.channels() != 1 || pred.dims() != truth.dims() {
        return Err(Error::invalid(format!(
            "prediction {:?}x{} and truth {:?}x{} differ",
            pred.dims(),
            pred.channels(),
            truth.dims(),
            truth.channels()
        )));
    }
    let mut s = FrameScore::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p as f64 >= threshold, t >= 0.5) {
            (true, true) => s.true_pos += 1,
            (true, false) => s.false_pos += 1,
            (false, true) => s.false_neg += 1,
            (false, false) => {}
        }
    }
    s.f1 = rates(s.true_pos, s.false_pos, s.false_neg).2;
    Ok(s)
}

/// Binarize `pred` at `threshold` and score against the binary `truth` mask.
pub fn f1_score(pred: &ImageBuffer, truth: &ImageBuffer, threshold: f64) -> Result<F1Report> {
    f1_score_frames(std::slice::from_ref(pred), std::slice::from_ref(truth), threshold)
}

/// Micro-averaged F1 over aligned prediction and truth sequences.
pub fn f1_score_frames(preds: &[ImageBuffer], truths: &[ImageBuffer], threshold: f64) -> Result<F1Report> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("threshold must lie in (0, 1)"));
    }
    if preds.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} truth masks",
            preds.len(),
            truths.len()
        )));
    }
    let frames = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| frame_score(p, t, threshold))
        .collect::<Result<_>>()?;
    Ok(F1Report::from_frames(frames))
}
