use std::collections::BTreeSet;
use std::ops::Range;

use super::augment::{augment_sample, inject_background, AugmentCfg, Sample};
use crate::error::{Error, Result};
use crate::gesture::PseudoLabel;
use crate::image::ImageBuffer;
use crate::nn::{
    backward_params, forward, infer, InputNorm, precision_weighted_loss, sgd_step, soft_sigmoid, DropoutSite, NetParams, NetSpec,
    PolyLrSchedule, SegNet, Tensor, WeightInit, Widths, DEFAULT_ALPHA, DEFAULT_LR_POWER, DEFAULT_WIDTHS,
};
use crate::rng::RngStream;

/// Base rate for the per-pixel mean of the precision-weighted loss.
pub const DEFAULT_APPEARANCE_LR: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceTrainCfg {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_power: f64,
    pub dropout_ratio: f64,
    pub dropout_sites: BTreeSet<DropoutSite>,
    pub alpha: f64,
    /// Weight pixels by pseudo-label precision; false uses the identity.
    pub use_precision: bool,
    pub widths: Widths,
    /// Consecutive frames taken from the centre of each video.
    pub frames_per_video: usize,
}

impl Default for AppearanceTrainCfg {
    fn default() -> Self {
        Self {
            epochs: 30,
            base_lr: DEFAULT_APPEARANCE_LR,
            lr_power: DEFAULT_LR_POWER,
            dropout_ratio: 0.4,
            dropout_sites: [DropoutSite::Fc6, DropoutSite::Conv5, DropoutSite::Conv4].into(),
            alpha: DEFAULT_ALPHA,
            use_precision: true,
            widths: DEFAULT_WIDTHS,
            frames_per_video: 180,
        }
    }
}

impl AppearanceTrainCfg {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_ratio) {
            return Err(Error::invalid(format!("dropout ratio {} outside [0, 1)", self.dropout_ratio)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.epochs == 0 || !(self.base_lr > 0.0) || self.frames_per_video == 0 {
            return Err(Error::invalid("appearance training needs epochs, base_lr and frames_per_video > 0"));
        }
        Ok(())
    }

    /// RGB in, one logit out.
    pub fn net_spec(&self) -> Result<NetSpec> {
        NetSpec::toy(3, 1, self.widths, self.dropout_ratio, &self.dropout_sites)
    }
}

/// Centred window of at most `per_video` frames out of `n`.
pub fn select_frames(n: usize, per_video: usize) -> Range<usize> {
    let k = n.min(per_video);
    let start = (n - k) / 2;
    start..start + k
}

fn check_pairs(frames: &[ImageBuffer], labels: &[PseudoLabel]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::invalid("no appearance training frames"));
    }
    if frames.len() != labels.len() {
        return Err(Error::invalid(format!("{} frames but {} labels", frames.len(), labels.len())));
    }
    for (f, l) in frames.iter().zip(labels) {
        if f.channels() != 3 || f.dims() != l.dims() {
            return Err(Error::invalid("appearance frames must be RGB and match their labels"));
        }
    }
    Ok(())
}

fn loss_and_grad(
    logits: &Tensor<f32>,
    label: &PseudoLabel,
    alpha: f64,
) -> Result<(f64, Tensor<f32>)> {
    let p: Vec<f32> = label.precision.iter().map(|&v| v as f32).collect();
    let (loss, grad) = precision_weighted_loss(&logits.data, &label.t, &p, alpha)?;
    let inv_n = 1.0 / label.t.len() as f32;
    let grad = grad.into_iter().map(|g| g * inv_n).collect();
    Ok((
        loss as f64 * inv_n as f64,
        Tensor::from_vec(1, logits.height, logits.width, grad)?,
    ))
}

/// Start the output at the precision-weighted hand fraction, the best
/// constant prediction, so early steps do not saturate the sigmoid.
fn set_prior_bias(params: &mut NetParams<f32>, samples: &[Sample], alpha: f64) {
    let (mut hand, mut total) = (0.0f64, 0.0f64);
    for s in samples {
        for (&t, &p) in s.label.t.iter().zip(&s.label.precision) {
            hand += t as f64 * p;
            total += p;
        }
    }
    let prior = if total > 0.0 { (hand / total).clamp(1e-3, 1.0 - 1e-3) } else { 0.5 };
    if let Some(out) = params.convs_mut().last_mut() {
        out.bias.fill(((prior / (1.0 - prior)).ln() / alpha) as f32);
    }
}

/// Train on `frames` with aligned `labels`. Returns the net and the mean
/// per-pixel training loss of each epoch.
pub fn train_appearance_net(
    frames: &[ImageBuffer],
    labels: &[PseudoLabel],
    cfg: &AppearanceTrainCfg,
    aug: &AugmentCfg,
    rng: &mut RngStream,
) -> Result<(SegNet, Vec<f64>)> {
    cfg.validate()?;
    aug.validate()?;
    check_pairs(frames, labels)?;
    let mut spec = cfg.net_spec()?;
    spec.input_norm = Some(InputNorm::fit(frames)?);
    let mut params = NetParams::init_with(&spec, WeightInit::He, &mut rng.derive(1));
    let samples: Vec<Sample> = frames
        .iter()
        .zip(labels)
        .map(|(f, l)| Sample {
            frame: f.clone(),
            label: if cfg.use_precision { l.clone() } else { l.with_uniform_precision() },
        })
        .collect();
    let samples = inject_background(samples, aug, &mut rng.derive(2))?;
    set_prior_bias(&mut params, &samples, cfg.alpha);
    let schedule = PolyLrSchedule::new(cfg.base_lr, cfg.lr_power, cfg.epochs * samples.len())?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut iter = 0;
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for &i in &order {
            let (frame, label) = augment_sample(&samples[i].frame, &samples[i].label, aug, rng)?;
            let (logits, cache) = forward(&spec, &params, &Tensor::from_image(&frame), true, rng)?;
            let (loss, grad) = loss_and_grad(&logits, &label, cfg.alpha)?;
            let grads = backward_params(&spec, &params, &cache, &grad)?;
            sgd_step(&mut params, &grads, &schedule, iter)?;
            iter += 1;
            total += loss;
        }
        losses.push(total / samples.len() as f64);
    }
    if !params.is_finite() {
        return Err(Error::invalid("appearance training diverged to non-finite weights"));
    }
    Ok((SegNet { spec, params }, losses))
}

/// Hand probability map: dropout off, soft sigmoid of the logit.
pub fn segment(net: &SegNet, frame: &ImageBuffer, alpha: f64) -> Result<ImageBuffer> {
    let logits = infer(&net.spec, &net.params, &Tensor::from_image(frame), false, &mut RngStream::new(0))?;
    if logits.channels != 1 {
        return Err(Error::invalid("appearance net must emit one logit channel"));
    }
    let (h, w) = frame.dims();
    ImageBuffer::from_vec(h, w, 1, soft_sigmoid(&logits.data, alpha))
}

/// Mean per-pixel loss with dropout off.
pub fn appearance_loss(net: &SegNet, frames: &[ImageBuffer], labels: &[PseudoLabel], alpha: f64) -> Result<f64> {
    check_pairs(frames, labels)?;
    let mut total = 0.0;
    for (f, l) in frames.iter().zip(labels) {
        let logits = infer(&net.spec, &net.params, &Tensor::from_image(f), false, &mut RngStream::new(0))?;
        total += loss_and_grad(&logits, l, alpha)?.0;
    }
    Ok(total / frames.len() as f64)
}
