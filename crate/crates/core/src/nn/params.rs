use std::sync::atomic::{AtomicU64, Ordering};

use super::real::Real;
use super::spec::NetSpec;
use crate::error::{Error, Result};
use crate::rng::RngStream;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Weights (`out x in x k x k`, row-major) and biases of one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    fn zeros(name: &str, out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self {
            name: name.to_string(),
            out_channels,
            in_channels,
            kernel,
            weight: vec![T::ZERO; out_channels * in_channels * kernel * kernel],
            bias: vec![T::ZERO; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Uniform weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightInit {
    /// `s = sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    /// `s = sqrt(6 / fan_in)`, variance-preserving through ReLU.
    He,
}

/// Trainable parameters of a [`NetSpec`].
///
/// Every mutation through [`NetParams::convs_mut`] assigns a new stamp, so a
/// forward cache recorded against older weights is detected as stale.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    convs: Vec<ConvParams<T>>,
    stamp: u64,
}

impl<T: Real> NetParams<T> {
    pub fn zeros(spec: &NetSpec) -> Self {
        let convs = spec
            .conv_shapes()
            .iter()
            .map(|(name, o, i, k)| ConvParams::zeros(name, *o, *i, *k))
            .collect();
        Self {
            convs,
            stamp: fresh_stamp(),
        }
    }

    /// Glorot-uniform weights `U(-s, s)`, `s = sqrt(6 / (fan_in + fan_out))`; zero biases.
    pub fn init(spec: &NetSpec, rng: &mut RngStream) -> Self {
        Self::init_with(spec, WeightInit::Glorot, rng)
    }

    pub fn init_with(spec: &NetSpec, scheme: WeightInit, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(spec);
        for conv in &mut p.convs {
            let kk = conv.kernel * conv.kernel;
            let fan = match scheme {
                WeightInit::Glorot => (conv.in_channels + conv.out_channels) * kk,
                WeightInit::He => conv.in_channels * kk,
            };
            let s = (6.0 / fan as f64).sqrt();
            for w in &mut conv.weight {
                *w = T::from_f64(rng.range(-s, s));
            }
        }
        p
    }

    pub fn from_convs(spec: &NetSpec, convs: Vec<ConvParams<T>>) -> Result<Self> {
        let shapes = spec.conv_shapes();
        if shapes.len() != convs.len() {
            return Err(Error::invalid(format!(
                "spec has {} conv layers, got {}",
                shapes.len(),
                convs.len()
            )));
        }
        for ((name, o, i, k), c) in shapes.iter().zip(&convs) {
            if (*o, *i, *k) != (c.out_channels, c.in_channels, c.kernel)
                || c.weight.len() != o * i * k * k
                || c.bias.len() != *o
            {
                return Err(Error::invalid(format!("parameter shape mismatch at layer {name}")));
            }
        }
        Ok(Self {
            convs,
            stamp: fresh_stamp(),
        })
    }

    pub fn convs(&self) -> &[ConvParams<T>] {
        &self.convs
    }

    pub fn convs_mut(&mut self) -> &mut [ConvParams<T>] {
        self.stamp = fresh_stamp();
        &mut self.convs
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn num_params(&self) -> usize {
        self.convs.iter().map(|c| c.weight.len() + c.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.convs
            .iter()
            .all(|c| c.weight.iter().chain(&c.bias).all(|v| v.is_finite()))
    }

    /// Flatten as `[w0, b0, w1, b1, ...]`.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.num_params());
        for c in &self.convs {
            v.extend_from_slice(&c.weight);
            v.extend_from_slice(&c.bias);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid("flat parameter length mismatch"));
        }
        let mut pos = 0;
        for c in self.convs_mut() {
            let nw = c.weight.len();
            c.weight.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = c.bias.len();
            c.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        NetParams {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    name: c.name.clone(),
                    out_channels: c.out_channels,
                    in_channels: c.in_channels,
                    kernel: c.kernel,
                    weight: c.weight.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                    bias: c.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
            stamp: fresh_stamp(),
        }
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams::zeros(&c.name, c.out_channels, c.in_channels, c.kernel))
                .collect(),
            stamp: fresh_stamp(),
        }
    }
}
