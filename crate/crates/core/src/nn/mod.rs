//! A small fully-convolutional network engine with explicit backprop.

mod engine;
mod gradcheck;
mod loss;
mod model;
mod optim;
mod params;
mod real;
mod spec;
mod tensor;

pub use engine::{backward, backward_params, forward, infer, run_layers, ForwardCache, Gradients};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport, LossKind, MAX_CHECK_PARAMS};
pub use loss::{
    precision_weighted_loss, soft_sigmoid, soft_sigmoid_scalar, softmax_hand_prob, squared_loss,
    weighted_softmax_loss, BACKGROUND_WEIGHT, HAND_WEIGHT,
};
pub use model::{manifest_path, SegNet};
pub use optim::{sgd_step, PolyLrSchedule, DEFAULT_LR_POWER, DESK_BASE_LR, FULL_RES_BASE_LR};
pub use params::{ConvParams, NetParams, WeightInit};
pub use real::Real;
pub use spec::{format_sites, parse_sites, ConvShape, DropoutSite, InputNorm, Layer, NetSpec, Widths, DEFAULT_WIDTHS};
pub use tensor::Tensor;

/// Default soft-sigmoid slope.
pub const DEFAULT_ALPHA: f64 = 0.5;
