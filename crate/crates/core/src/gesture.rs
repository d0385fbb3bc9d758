//! Stage-one gesture network: trained on motion stacks with known masks,
//! queried with Monte-Carlo dropout to produce pseudo-labels with
//! per-pixel precision.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::motion::{InputCombo, MotionStack};
use crate::nn::{
    backward_params, forward, infer, run_layers, sgd_step, softmax_hand_prob, weighted_softmax_loss, DropoutSite,
    NetParams, NetSpec, PolyLrSchedule, SegNet, Tensor, Widths, BACKGROUND_WEIGHT, DEFAULT_LR_POWER, DEFAULT_WIDTHS,
    DESK_BASE_LR, HAND_WEIGHT,
};
use crate::rng::RngStream;

pub const DEFAULT_MC_SAMPLES: usize = 100;
pub const DEFAULT_EPS_VAR: f64 = 1e-4;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GestureTrainCfg {
    pub dropout_ratio: f64,
    pub dropout_sites: BTreeSet<DropoutSite>,
    pub w_hand: f64,
    pub w_bg: f64,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_power: f64,
    pub mc_samples: usize,
    pub widths: Widths,
    /// Motion channels the network sees; unused ones are zeroed.
    pub inputs: InputCombo,
}

impl Default for GestureTrainCfg {
    fn default() -> Self {
        Self {
            dropout_ratio: 0.4,
            dropout_sites: [DropoutSite::Conv3, DropoutSite::Conv4, DropoutSite::Conv5].into(),
            w_hand: HAND_WEIGHT,
            w_bg: BACKGROUND_WEIGHT,
            epochs: 20,
            base_lr: DESK_BASE_LR,
            lr_power: DEFAULT_LR_POWER,
            mc_samples: DEFAULT_MC_SAMPLES,
            widths: DEFAULT_WIDTHS,
            inputs: InputCombo::All,
        }
    }
}

impl GestureTrainCfg {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_ratio) {
            return Err(Error::invalid(format!("dropout ratio {} outside [0, 1)", self.dropout_ratio)));
        }
        if self.mc_samples < 2 {
            return Err(Error::invalid("mc_samples must be >= 2 for a variance estimate"));
        }
        if self.epochs == 0 || !(self.base_lr > 0.0) || !(self.w_hand >= 0.0 && self.w_bg >= 0.0) {
            return Err(Error::invalid("gesture training needs epochs >= 1, base_lr > 0 and non-negative weights"));
        }
        Ok(())
    }

    /// Three motion channels in, background/hand logits out.
    pub fn net_spec(&self) -> Result<NetSpec> {
        NetSpec::toy(3, 2, self.widths, self.dropout_ratio, &self.dropout_sites)
    }
}

/// Motion stack paired with its binary hand mask (1 = hand).
#[derive(Debug, Clone)]
pub struct GestureExample {
    pub stack: MotionStack,
    pub mask: ImageBuffer,
}

fn stack_tensor(stack: &MotionStack, inputs: InputCombo) -> Tensor<f32> {
    Tensor::from_image(stack.masked(inputs).image())
}

fn check_examples(examples: &[GestureExample]) -> Result<()> {
    let first = examples
        .first()
        .ok_or_else(|| Error::invalid("no gesture training examples"))?;
    let dims = first.stack.dims();
    for ex in examples {
        if ex.stack.dims() != dims || ex.mask.dims() != dims || ex.mask.channels() != 1 {
            return Err(Error::invalid("gesture examples must share dims with single-channel masks"));
        }
    }
    Ok(())
}

/// Mean weighted-softmax loss of `net` over `examples`, dropout off.
pub fn gesture_loss(net: &SegNet, examples: &[GestureExample], cfg: &GestureTrainCfg) -> Result<f64> {
    check_examples(examples)?;
    let mut rng = RngStream::new(0);
    let mut total = 0.0;
    for ex in examples {
        let logits = infer(&net.spec, &net.params, &stack_tensor(&ex.stack, cfg.inputs), false, &mut rng)?;
        total += weighted_softmax_loss(&logits, ex.mask.data(), cfg.w_hand, cfg.w_bg)?.0 as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Train from fresh initialization. Returns the net and the mean training loss of each epoch.
pub fn train_gesture_net(
    examples: &[GestureExample],
    cfg: &GestureTrainCfg,
    rng: &mut RngStream,
) -> Result<(SegNet, Vec<f64>)> {
    cfg.validate()?;
    check_examples(examples)?;
    let spec = cfg.net_spec()?;
    let mut params = NetParams::init(&spec, &mut rng.derive(1));
    let inputs: Vec<Tensor<f32>> = examples.iter().map(|e| stack_tensor(&e.stack, cfg.inputs)).collect();
    let schedule = PolyLrSchedule::new(cfg.base_lr, cfg.lr_power, cfg.epochs * examples.len())?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut iter = 0;
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for &i in &order {
            let (logits, cache) = forward(&spec, &params, &inputs[i], true, rng)?;
            let (loss, grad) = weighted_softmax_loss(&logits, examples[i].mask.data(), cfg.w_hand, cfg.w_bg)?;
            let grads = backward_params(&spec, &params, &cache, &grad)?;
            sgd_step(&mut params, &grads, &schedule, iter)?;
            iter += 1;
            total += loss as f64;
        }
        epoch_losses.push(total / examples.len() as f64);
    }
    if !params.is_finite() {
        return Err(Error::invalid("gesture training diverged to non-finite weights"));
    }
    Ok((SegNet { spec, params }, epoch_losses))
}

/// Deterministic hand probability (dropout off).
pub fn predict_gesture(net: &SegNet, stack: &MotionStack, inputs: InputCombo) -> Result<ImageBuffer> {
    let logits = infer(&net.spec, &net.params, &stack_tensor(stack, inputs), false, &mut RngStream::new(0))?;
    let (h, w) = stack.dims();
    let prob = softmax_hand_prob(&logits).into_iter().map(|p| p as f32).collect();
    ImageBuffer::from_vec(h, w, 1, prob)
}

/// Per-pixel MC-dropout statistics of the hand probability.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub height: usize,
    pub width: usize,
    pub mean: Vec<f64>,
    /// Unbiased sample variance.
    pub variance: Vec<f64>,
    pub samples: usize,
}

impl UncertaintyMap {
    pub fn mean_image(&self) -> ImageBuffer {
        let data = self.mean.iter().map(|&v| v as f32).collect();
        ImageBuffer::from_vec(self.height, self.width, 1, data).expect("dims")
    }

    pub fn variance_image(&self) -> ImageBuffer {
        let data = self.variance.iter().map(|&v| v as f32).collect();
        ImageBuffer::from_vec(self.height, self.width, 1, data).expect("dims")
    }
}

/// Run `cfg.mc_samples` dropout-on passes. Layers before the first dropout
/// are evaluated once and shared by every pass.
pub fn mc_predict(net: &SegNet, stack: &MotionStack, cfg: &GestureTrainCfg, rng: &mut RngStream) -> Result<UncertaintyMap> {
    if cfg.mc_samples < 2 {
        return Err(Error::invalid("mc_samples must be >= 2 for a variance estimate"));
    }
    let x = stack_tensor(stack, cfg.inputs);
    let hw = (x.height, x.width);
    let prefix = net.spec.deterministic_prefix();
    let shared = run_layers(&net.spec, &net.params, x, 0..prefix, hw, false, rng)?;
    let n = hw.0 * hw.1;
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    for s in 0..cfg.mc_samples {
        let logits = run_layers(
            &net.spec,
            &net.params,
            shared.clone(),
            prefix..net.spec.layers.len(),
            hw,
            true,
            rng,
        )?;
        let k = (s + 1) as f64;
        for ((p, m), q) in softmax_hand_prob(&logits).into_iter().zip(&mut mean).zip(&mut m2) {
            let d = p - *m;
            *m += d / k;
            *q += d * (p - *m);
        }
    }
    let denom = (cfg.mc_samples - 1) as f64;
    Ok(UncertaintyMap {
        height: hw.0,
        width: hw.1,
        mean: mean.into_iter().map(|m| m.clamp(0.0, 1.0)).collect(),
        variance: m2.into_iter().map(|q| (q / denom).max(0.0)).collect(),
        samples: cfg.mc_samples,
    })
}

/// Target map plus per-pixel precision (diagonal inverse covariance),
/// normalized to spatial mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub height: usize,
    pub width: usize,
    pub t: Vec<f32>,
    pub precision: Vec<f64>,
}

impl PseudoLabel {
    /// Uniform-precision label from a binary mask.
    pub fn from_mask(mask: &ImageBuffer) -> Result<Self> {
        if mask.channels() != 1 {
            return Err(Error::invalid("mask must be single-channel"));
        }
        Ok(Self {
            height: mask.height(),
            width: mask.width(),
            t: mask.data().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
            precision: vec![1.0; mask.plane_len()],
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn t_image(&self) -> ImageBuffer {
        ImageBuffer::from_vec(self.height, self.width, 1, self.t.clone()).expect("dims")
    }

    pub fn precision_image(&self) -> ImageBuffer {
        let data = self.precision.iter().map(|&v| v as f32).collect();
        ImageBuffer::from_vec(self.height, self.width, 1, data).expect("dims")
    }

    pub fn with_uniform_precision(&self) -> Self {
        Self {
            precision: vec![1.0; self.precision.len()],
            ..self.clone()
        }
    }

    pub fn hand_pixels(&self) -> usize {
        self.t.iter().filter(|&&v| v >= 0.5).count()
    }
}

/// Rescale so the mean is exactly 1 (up to f64 rounding). An all-zero map becomes uniform.
pub fn normalize_precision(p: &mut [f64]) {
    let mean = p.iter().sum::<f64>() / p.len().max(1) as f64;
    if mean > 0.0 && mean.is_finite() {
        p.iter_mut().for_each(|v| *v /= mean);
    } else {
        p.iter_mut().for_each(|v| *v = 1.0);
    }
}

/// How the gesture network's mean map becomes a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetMode {
    #[default]
    Binary,
    /// Use the MC mean probability itself as a soft target.
    Continuous,
}

pub fn make_pseudo_label(umap: &UncertaintyMap, eps_var: f64, threshold: f64) -> Result<PseudoLabel> {
    make_pseudo_label_with(umap, eps_var, threshold, TargetMode::Binary)
}

pub fn make_pseudo_label_with(
    umap: &UncertaintyMap,
    eps_var: f64,
    threshold: f64,
    mode: TargetMode,
) -> Result<PseudoLabel> {
    if !(eps_var > 0.0) {
        return Err(Error::invalid("eps_var must be > 0"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("threshold must lie in (0, 1)"));
    }
    let t = umap
        .mean
        .iter()
        .map(|&m| match mode {
            TargetMode::Binary => {
                if m >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            TargetMode::Continuous => m.clamp(0.0, 1.0) as f32,
        })
        .collect();
    let mut precision: Vec<f64> = umap.variance.iter().map(|&v| 1.0 / (v.max(0.0) + eps_var)).collect();
    normalize_precision(&mut precision);
    Ok(PseudoLabel {
        height: umap.height,
        width: umap.width,
        t,
        precision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn umap(mean: Vec<f64>, variance: Vec<f64>) -> UncertaintyMap {
        UncertaintyMap {
            height: 1,
            width: mean.len(),
            mean,
            variance,
            samples: 100,
        }
    }

    #[test]
    fn defaults() {
        let c = GestureTrainCfg::default();
        assert_eq!((c.dropout_ratio, c.w_hand, c.w_bg, c.mc_samples), (0.4, 5.0, 0.6, 100));
        let spec = c.net_spec().unwrap();
        assert_eq!(
            spec.dropout_sites(),
            [DropoutSite::Conv3, DropoutSite::Conv4, DropoutSite::Conv5].into()
        );
        assert!(GestureTrainCfg { mc_samples: 1, ..c.clone() }.validate().is_err());
        assert!(GestureTrainCfg { dropout_ratio: 1.0, ..c }.validate().is_err());
    }

    #[test]
    fn empty_training_set_rejected() {
        let err = train_gesture_net(&[], &GestureTrainCfg::default(), &mut RngStream::new(1));
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_variance_gives_unit_precision() {
        let l = make_pseudo_label(&umap(vec![0.2, 0.7, 0.5], vec![0.0; 3]), 1e-4, 0.5).unwrap();
        assert_eq!(l.t, vec![0.0, 1.0, 1.0]);
        assert!(l.precision.iter().all(|&p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn precision_ratio_follows_formula() {
        let (v1, v2, eps) = (0.01, 0.1, 1e-4);
        let l = make_pseudo_label(&umap(vec![0.0, 0.0], vec![v1, v2]), eps, 0.5).unwrap();
        let ratio = l.precision[0] / l.precision[1];
        assert!((ratio - (v2 + eps) / (v1 + eps)).abs() < 1e-12);
    }

    #[test]
    fn continuous_targets_keep_mean() {
        let l = make_pseudo_label_with(&umap(vec![0.25, 0.9], vec![0.0; 2]), 1e-4, 0.5, TargetMode::Continuous).unwrap();
        assert_eq!(l.t, vec![0.25, 0.9]);
    }

    #[test]
    fn bad_label_params() {
        let u = umap(vec![0.5], vec![0.0]);
        assert!(make_pseudo_label(&u, 0.0, 0.5).is_err());
        assert!(make_pseudo_label(&u, 1e-4, 1.0).is_err());
    }

    #[test]
    fn mc_predict_needs_two_samples() {
        let cfg = GestureTrainCfg {
            widths: [2, 2, 2, 2, 2, 2],
            ..Default::default()
        };
        let spec = cfg.net_spec().unwrap();
        let net = SegNet {
            params: NetParams::init(&spec, &mut RngStream::new(0)),
            spec,
        };
        let stack = MotionStack(ImageBuffer::filled(8, 8, 3, 0.5));
        let bad = GestureTrainCfg { mc_samples: 1, ..cfg.clone() };
        assert!(mc_predict(&net, &stack, &bad, &mut RngStream::new(1)).is_err());
        let u = mc_predict(&net, &stack, &cfg, &mut RngStream::new(1)).unwrap();
        assert_eq!((u.height, u.width, u.samples), (8, 8, 100));
        let again = mc_predict(&net, &stack, &cfg, &mut RngStream::new(1)).unwrap();
        assert_eq!(u, again);
    }

    proptest! {
        #[test]
        fn precision_mean_one_and_monotone(
            var in proptest::collection::vec(0.0f64..0.25, 2..64),
            eps in 1e-6f64..1e-2,
        ) {
            let mean = vec![0.3; var.len()];
            let l = make_pseudo_label(&umap(mean, var.clone()), eps, 0.5).unwrap();
            let m = l.precision.iter().sum::<f64>() / l.precision.len() as f64;
            prop_assert!((m - 1.0).abs() < 1e-9);
            for i in 0..var.len() {
                prop_assert!(l.precision[i] >= 0.0);
                for j in 0..var.len() {
                    if var[i] > var[j] {
                        prop_assert!(l.precision[i] < l.precision[j]);
                    }
                }
            }
        }
    }
}
