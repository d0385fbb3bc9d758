//! Central finite-difference verification of the analytic gradients.

use super::engine::{backward, forward};
use super::loss::{precision_weighted_loss, squared_loss, weighted_softmax_loss};
use super::params::NetParams;
use super::spec::NetSpec;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Largest network the checker accepts.
pub const MAX_CHECK_PARAMS: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `0.5 * sum (logit - t)^2` on a single output channel.
    Squared,
    WeightedSoftmax { w_hand: f64, w_bg: f64 },
    PrecisionWeighted { alpha: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub height: usize,
    pub width: usize,
    pub step: f64,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error.
    pub abs_floor: f64,
    pub check_inputs: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            height: 8,
            width: 8,
            step: 1e-5,
            abs_floor: 1e-6,
            check_inputs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `"param[i]"` or `"input[i]"` of the worst coordinate.
    pub worst: String,
    pub checked: usize,
    /// Coordinates skipped because a perturbation flipped a ReLU.
    pub skipped_kinks: usize,
    pub tolerance: f64,
    pub passed: bool,
}

struct Problem {
    spec: NetSpec,
    kind: LossKind,
    mask: Vec<f32>,
    target: Vec<f64>,
    precision: Vec<f64>,
    seed: u64,
}

impl Problem {
    fn loss_and_grad(&self, params: &NetParams<f64>, x: &Tensor<f64>) -> Result<(f64, Tensor<f64>, Vec<bool>)> {
        let mut rng = RngStream::new(self.seed);
        let (y, cache) = forward(&self.spec, params, x, true, &mut rng)?;
        let (loss, grad) = match self.kind {
            LossKind::Squared => {
                let (l, g) = squared_loss(&y.data, &self.target)?;
                (l, Tensor::from_vec(y.channels, y.height, y.width, g)?)
            }
            LossKind::WeightedSoftmax { w_hand, w_bg } => weighted_softmax_loss(&y, &self.mask, w_hand, w_bg)?,
            LossKind::PrecisionWeighted { alpha } => {
                let (l, g) = precision_weighted_loss(&y.data, &self.target, &self.precision, alpha)?;
                (l, Tensor::from_vec(y.channels, y.height, y.width, g)?)
            }
        };
        Ok((loss, grad, cache.relu_signature()))
    }

    fn loss(&self, params: &NetParams<f64>, x: &Tensor<f64>) -> Result<(f64, Vec<bool>)> {
        self.loss_and_grad(params, x).map(|(l, _, s)| (l, s))
    }
}

pub fn grad_check(spec: &NetSpec, kind: LossKind, tolerance: f64, rng: &mut RngStream) -> Result<GradCheckReport> {
    grad_check_with(spec, kind, tolerance, rng, GradCheckOptions::default())
}

/// Compare analytic gradients against central differences over every
/// parameter (and every input element when enabled), in double precision.
pub fn grad_check_with(
    spec: &NetSpec,
    kind: LossKind,
    tolerance: f64,
    rng: &mut RngStream,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    spec.validate()?;
    let n_params = spec.num_params();
    if n_params >= MAX_CHECK_PARAMS {
        return Err(Error::invalid(format!(
            "gradient check needs < {MAX_CHECK_PARAMS} parameters, net has {n_params}"
        )));
    }
    let want_channels = match kind {
        LossKind::WeightedSoftmax { .. } => 2,
        _ => 1,
    };
    if spec.output_channels != want_channels {
        return Err(Error::invalid(format!(
            "loss needs {want_channels} output channels, spec has {}",
            spec.output_channels
        )));
    }
    let (h, w) = (opts.height, opts.width);
    let npx = h * w;
    let params: NetParams<f64> = NetParams::init(spec, rng);
    // Nonzero biases so ReLUs are not all exactly at their kink for zero input.
    let mut params = params;
    for c in params.convs_mut() {
        for b in &mut c.bias {
            *b = rng.range(-0.1, 0.1);
        }
    }
    let x = Tensor::from_vec(
        spec.input_channels,
        h,
        w,
        (0..spec.input_channels * npx).map(|_| rng.range(-1.0, 1.0)).collect(),
    )?;
    let problem = Problem {
        spec: spec.clone(),
        kind,
        mask: (0..npx).map(|_| rng.below(2) as f32).collect(),
        target: (0..npx)
            .map(|_| match kind {
                LossKind::Squared => rng.range(-1.0, 1.0),
                _ => rng.below(2) as f64,
            })
            .collect(),
        precision: (0..npx).map(|_| rng.range(0.1, 2.0)).collect(),
        seed: rng.next_u64(),
    };

    let (_, grad_out, base_sig) = problem.loss_and_grad(&params, &x)?;
    let mut rng0 = RngStream::new(problem.seed);
    let (_, cache) = forward(spec, &params, &x, true, &mut rng0)?;
    let grads = backward(spec, &params, &cache, &grad_out)?;
    let analytic_params = grads.params.to_flat();
    let analytic_input = grads.input.expect("input gradient requested").data;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped_kinks: 0,
        tolerance,
        passed: false,
    };
    let mut record = |label: String, analytic: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
        if plus.1 != base_sig || minus.1 != base_sig {
            report.skipped_kinks += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * opts.step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.abs_floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = label;
        }
    };

    let flat = params.to_flat();
    let mut probe = params.clone();
    for i in 0..flat.len() {
        let mut v = flat.clone();
        v[i] = flat[i] + opts.step;
        probe.set_flat(&v)?;
        let plus = problem.loss(&probe, &x)?;
        v[i] = flat[i] - opts.step;
        probe.set_flat(&v)?;
        let minus = problem.loss(&probe, &x)?;
        record(format!("param[{i}]"), analytic_params[i], plus, minus);
    }
    if opts.check_inputs {
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += opts.step;
            let plus = problem.loss(&params, &xp)?;
            xp.data[i] = x.data[i] - opts.step;
            let minus = problem.loss(&params, &xp)?;
            record(format!("input[{i}]"), analytic_input[i], plus, minus);
        }
    }
    report.passed = report.checked > 0 && report.max_rel_error < tolerance;
    Ok(report)
}
