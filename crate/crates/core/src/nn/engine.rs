//! Forward and backward passes over a [`NetSpec`].
//!
//! Convolutions are lowered to GEMM through an explicit im2col buffer.
//! The forward cache keeps each conv's column matrix, each ReLU's output
//! and each dropout mask so the backward pass never re-draws randomness.

use std::ops::Range;

use super::params::NetParams;
use super::real::Real;
use super::spec::{Layer, NetSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::geom::AxisTaps;
use crate::rng::RngStream;

#[derive(Debug, Clone)]
enum Step<T> {
    Conv {
        input_shape: (usize, usize, usize),
        cols: Vec<T>,
    },
    Relu {
        output: Vec<T>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
    Upsample {
        input_shape: (usize, usize, usize),
    },
}

/// Activations recorded by [`forward`] for use by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    stamp: u64,
    layer_count: usize,
    input_shape: (usize, usize, usize),
    steps: Vec<Step<T>>,
}

impl<T: Real> ForwardCache<T> {
    /// Sign pattern of every ReLU output; two runs with equal signatures
    /// lie on the same linear piece of the network.
    pub fn relu_signature(&self) -> Vec<bool> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Relu { output } => Some(output.iter().map(|v| *v > T::ZERO)),
                _ => None,
            })
            .flatten()
            .collect()
    }
}

/// Parameter gradients plus the gradient with respect to the network input.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: NetParams<T>,
    pub input: Option<Tensor<T>>,
}

fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if len + 2 * pad < k {
        return Err(Error::invalid(format!(
            "input extent {len} too small for kernel {k} with pad {pad}"
        )));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

/// Valid output range `[lo, hi)` for one kernel offset along one axis.
#[inline]
fn valid_range(out_len: usize, in_len: usize, offset: usize, stride: usize, pad: usize) -> (usize, usize) {
    // input index = o * stride + offset - pad must lie in [0, in_len)
    let lo = if offset >= pad { 0 } else { (pad - offset).div_ceil(stride) };
    let hi_in = in_len + pad;
    let hi = if hi_in > offset {
        ((hi_in - offset - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let plane = oh * ow;
    let mut col = vec![T::ZERO; c * k * k * plane];
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (ylo, yhi) = valid_range(oh, h, ky, stride, pad);
            for kx in 0..k {
                let (xlo, xhi) = valid_range(ow, w, kx, stride, pad);
                let row = ((ci * k + ky) * k + kx) * plane;
                for oy in ylo..yhi {
                    let iy = oy * stride + ky - pad;
                    let srow = &src[iy * w..(iy + 1) * w];
                    let drow = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if stride == 1 {
                        let ix0 = xlo + kx - pad;
                        drow[xlo..xhi].copy_from_slice(&srow[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            drow[ox] = srow[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    col: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let plane = oh * ow;
    let mut x = vec![T::ZERO; c * h * w];
    for ci in 0..c {
        let dst = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (ylo, yhi) = valid_range(oh, h, ky, stride, pad);
            for kx in 0..k {
                let (xlo, xhi) = valid_range(ow, w, kx, stride, pad);
                let row = ((ci * k + ky) * k + kx) * plane;
                for oy in ylo..yhi {
                    let iy = oy * stride + ky - pad;
                    let crow = &col[row + oy * ow..row + (oy + 1) * ow];
                    let drow = &mut dst[iy * w..(iy + 1) * w];
                    for ox in xlo..xhi {
                        drow[ox * stride + kx - pad] += crow[ox];
                    }
                }
            }
        }
    }
    x
}

struct Runner<'a, T> {
    spec: &'a NetSpec,
    params: &'a NetParams<T>,
    net_hw: (usize, usize),
}

impl<'a, T: Real> Runner<'a, T> {
    fn conv_index(&self, layer: usize) -> usize {
        self.spec.layers[..layer]
            .iter()
            .filter(|l| matches!(l, Layer::Conv { .. }))
            .count()
    }

    fn run(
        &self,
        mut x: Tensor<T>,
        range: Range<usize>,
        dropout_on: bool,
        rng: &mut RngStream,
        mut steps: Option<&mut Vec<Step<T>>>,
    ) -> Result<Tensor<T>> {
        if range.start == 0 {
            if let Some(norm) = &self.spec.input_norm {
                let plane = x.plane_len();
                for (c, chunk) in x.data.chunks_mut(plane).enumerate() {
                    let (m, s) = (T::from_f64(norm.mean[c] as f64), T::from_f64(1.0 / norm.std[c] as f64));
                    chunk.iter_mut().for_each(|v| *v = (*v - m) * s);
                }
            }
        }
        let mut conv_idx = self.conv_index(range.start);
        for layer in &self.spec.layers[range] {
            match layer {
                Layer::Conv {
                    kernel,
                    stride,
                    pad,
                    ..
                } => {
                    let p = &self.params.convs()[conv_idx];
                    conv_idx += 1;
                    if x.channels != p.in_channels {
                        return Err(Error::invalid(format!(
                            "layer {} expects {} channels, got {}",
                            p.name, p.in_channels, x.channels
                        )));
                    }
                    let (k, s, pd) = (*kernel, *stride, *pad);
                    let oh = conv_out(x.height, k, s, pd)?;
                    let ow = conv_out(x.width, k, s, pd)?;
                    let input_shape = x.shape();
                    let cols = if k == 1 && s == 1 && pd == 0 {
                        std::mem::take(&mut x.data)
                    } else {
                        im2col(&x.data, input_shape, k, s, pd, oh, ow)
                    };
                    let plane = oh * ow;
                    let mut out = Tensor::zeros(p.out_channels, oh, ow);
                    for (o, chunk) in out.data.chunks_mut(plane).enumerate() {
                        chunk.fill(p.bias[o]);
                    }
                    T::gemm(
                        false,
                        false,
                        p.out_channels,
                        plane,
                        p.fan_in(),
                        T::ONE,
                        &p.weight,
                        &cols,
                        T::ONE,
                        &mut out.data,
                    );
                    if let Some(st) = steps.as_deref_mut() {
                        st.push(Step::Conv { input_shape, cols });
                    }
                    x = out;
                }
                Layer::Relu => {
                    for v in &mut x.data {
                        if !(*v > T::ZERO) {
                            *v = T::ZERO;
                        }
                    }
                    if let Some(st) = steps.as_deref_mut() {
                        st.push(Step::Relu {
                            output: x.data.clone(),
                        });
                    }
                }
                Layer::Dropout { ratio, .. } => {
                    let mask = if dropout_on {
                        let keep = T::from_f64(1.0 / (1.0 - ratio));
                        let r = *ratio as f32;
                        let mask: Vec<T> = (0..x.data.len())
                            .map(|_| if rng.uniform_f32() < r { T::ZERO } else { keep })
                            .collect();
                        for (v, m) in x.data.iter_mut().zip(&mask) {
                            *v *= *m;
                        }
                        Some(mask)
                    } else {
                        None
                    };
                    if let Some(st) = steps.as_deref_mut() {
                        st.push(Step::Dropout { mask });
                    }
                }
                Layer::Upsample { .. } => {
                    let input_shape = x.shape();
                    x = upsample(&x, self.net_hw);
                    if let Some(st) = steps.as_deref_mut() {
                        st.push(Step::Upsample { input_shape });
                    }
                }
            }
        }
        Ok(x)
    }
}

fn upsample<T: Real>(x: &Tensor<T>, (nh, nw): (usize, usize)) -> Tensor<T> {
    let ty = AxisTaps::new(x.height, nh);
    let tx = AxisTaps::new(x.width, nw);
    let w = x.width;
    let mut out = Tensor::zeros(x.channels, nh, nw);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = &mut out.data[c * nh * nw..(c + 1) * nh * nw];
        for oy in 0..nh {
            let fy = T::from_f64(ty.frac[oy]);
            let (r0, r1) = (ty.lo[oy] * w, ty.hi[oy] * w);
            for ox in 0..nw {
                let fx = T::from_f64(tx.frac[ox]);
                let (x0, x1) = (tx.lo[ox], tx.hi[ox]);
                let top = (T::ONE - fx) * src[r0 + x0] + fx * src[r0 + x1];
                let bot = (T::ONE - fx) * src[r1 + x0] + fx * src[r1 + x1];
                dst[oy * nw + ox] = (T::ONE - fy) * top + fy * bot;
            }
        }
    }
    out
}

fn upsample_backward<T: Real>(g: &Tensor<T>, (c, h, w): (usize, usize, usize)) -> Tensor<T> {
    let (nh, nw) = (g.height, g.width);
    let ty = AxisTaps::new(h, nh);
    let tx = AxisTaps::new(w, nw);
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let src = g.channel(ci);
        let dst = &mut out.data[ci * h * w..(ci + 1) * h * w];
        for oy in 0..nh {
            let fy = T::from_f64(ty.frac[oy]);
            let (r0, r1) = (ty.lo[oy] * w, ty.hi[oy] * w);
            for ox in 0..nw {
                let fx = T::from_f64(tx.frac[ox]);
                let (x0, x1) = (tx.lo[ox], tx.hi[ox]);
                let v = src[oy * nw + ox];
                let top = (T::ONE - fy) * v;
                let bot = fy * v;
                dst[r0 + x0] += (T::ONE - fx) * top;
                dst[r0 + x1] += fx * top;
                dst[r1 + x0] += (T::ONE - fx) * bot;
                dst[r1 + x1] += fx * bot;
            }
        }
    }
    out
}

fn check_input<T: Real>(spec: &NetSpec, params: &NetParams<T>, input: &Tensor<T>) -> Result<()> {
    if input.channels != spec.input_channels {
        return Err(Error::invalid(format!(
            "network expects {} input channels, got {}",
            spec.input_channels, input.channels
        )));
    }
    if params.convs().len() != spec.conv_shapes().len() {
        return Err(Error::invalid("parameters do not match network spec"));
    }
    if input.height == 0 || input.width == 0 || input.data.len() != input.channels * input.plane_len() {
        return Err(Error::invalid("malformed input tensor"));
    }
    Ok(())
}

/// Full forward pass returning logits at input resolution and the cache for [`backward`].
pub fn forward<T: Real>(
    spec: &NetSpec,
    params: &NetParams<T>,
    input: &Tensor<T>,
    dropout_on: bool,
    rng: &mut RngStream,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    check_input(spec, params, input)?;
    let runner = Runner {
        spec,
        params,
        net_hw: (input.height, input.width),
    };
    let mut steps = Vec::with_capacity(spec.layers.len());
    let out = runner.run(input.clone(), 0..spec.layers.len(), dropout_on, rng, Some(&mut steps))?;
    Ok((
        out,
        ForwardCache {
            stamp: params.stamp(),
            layer_count: spec.layers.len(),
            input_shape: input.shape(),
            steps,
        },
    ))
}

/// Forward pass without recording a cache.
pub fn infer<T: Real>(
    spec: &NetSpec,
    params: &NetParams<T>,
    input: &Tensor<T>,
    dropout_on: bool,
    rng: &mut RngStream,
) -> Result<Tensor<T>> {
    check_input(spec, params, input)?;
    run_layers(
        spec,
        params,
        input.clone(),
        0..spec.layers.len(),
        (input.height, input.width),
        dropout_on,
        rng,
    )
}

/// Run only `layers` of the network on an intermediate activation.
/// `net_hw` is the original input resolution (target of the final upsample).
pub fn run_layers<T: Real>(
    spec: &NetSpec,
    params: &NetParams<T>,
    x: Tensor<T>,
    layers: Range<usize>,
    net_hw: (usize, usize),
    dropout_on: bool,
    rng: &mut RngStream,
) -> Result<Tensor<T>> {
    if layers.end > spec.layers.len() || layers.start > layers.end {
        return Err(Error::invalid("layer range outside network"));
    }
    Runner {
        spec,
        params,
        net_hw,
    }
    .run(x, layers, dropout_on, rng, None)
}

/// Backpropagate `grad_logits` through the cached pass.
pub fn backward<T: Real>(
    spec: &NetSpec,
    params: &NetParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<Gradients<T>> {
    backward_impl(spec, params, cache, grad_logits, true)
}

/// As [`backward`] but skips the input gradient.
pub fn backward_params<T: Real>(
    spec: &NetSpec,
    params: &NetParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<NetParams<T>> {
    backward_impl(spec, params, cache, grad_logits, false).map(|g| g.params)
}

fn backward_impl<T: Real>(
    spec: &NetSpec,
    params: &NetParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor<T>,
    want_input: bool,
) -> Result<Gradients<T>> {
    if cache.stamp != params.stamp() || cache.layer_count != spec.layers.len() {
        return Err(Error::invalid("stale forward cache: parameters changed since forward pass"));
    }
    let (_, h, w) = cache.input_shape;
    if grad_logits.shape() != (spec.output_channels, h, w) {
        return Err(Error::invalid(format!(
            "gradient shape {:?} does not match logits {:?}",
            grad_logits.shape(),
            (spec.output_channels, h, w)
        )));
    }
    let mut grads = params.zeros_like();
    let mut g = grad_logits.clone();
    let mut conv_idx = params.convs().len();
    let first_conv = spec
        .layers
        .iter()
        .position(|l| matches!(l, Layer::Conv { .. }))
        .unwrap_or(0);
    for (li, (layer, step)) in spec.layers.iter().zip(&cache.steps).enumerate().rev() {
        match (layer, step) {
            (
                Layer::Conv {
                    kernel,
                    stride,
                    pad,
                    ..
                },
                Step::Conv { input_shape, cols },
            ) => {
                conv_idx -= 1;
                let p = &params.convs()[conv_idx];
                let gp = &mut grads.convs_mut()[conv_idx];
                let plane = g.plane_len();
                let fan_in = p.fan_in();
                T::gemm(false, true, p.out_channels, fan_in, plane, T::ONE, &g.data, cols, T::ZERO, &mut gp.weight);
                for (o, chunk) in g.data.chunks(plane).enumerate() {
                    let mut acc = T::ZERO;
                    for &v in chunk {
                        acc += v;
                    }
                    gp.bias[o] = acc;
                }
                if li == first_conv && !want_input {
                    break;
                }
                let mut dcol = vec![T::ZERO; fan_in * plane];
                T::gemm(true, false, fan_in, plane, p.out_channels, T::ONE, &p.weight, &g.data, T::ZERO, &mut dcol);
                let (k, s, pd) = (*kernel, *stride, *pad);
                let data = if k == 1 && s == 1 && pd == 0 {
                    dcol
                } else {
                    col2im(&dcol, *input_shape, k, s, pd, g.height, g.width)
                };
                g = Tensor::from_vec(input_shape.0, input_shape.1, input_shape.2, data)?;
            }
            (Layer::Relu, Step::Relu { output }) => {
                for (gv, o) in g.data.iter_mut().zip(output) {
                    if !(*o > T::ZERO) {
                        *gv = T::ZERO;
                    }
                }
            }
            (Layer::Dropout { .. }, Step::Dropout { mask }) => {
                if let Some(mask) = mask {
                    for (gv, m) in g.data.iter_mut().zip(mask) {
                        *gv *= *m;
                    }
                }
            }
            (Layer::Upsample { .. }, Step::Upsample { input_shape }) => {
                g = upsample_backward(&g, *input_shape);
            }
            _ => return Err(Error::invalid("forward cache does not match network spec")),
        }
    }
    if let (true, Some(norm)) = (want_input, &spec.input_norm) {
        let plane = g.plane_len();
        for (c, chunk) in g.data.chunks_mut(plane).enumerate() {
            let s = T::from_f64(1.0 / norm.std[c] as f64);
            chunk.iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(Gradients {
        params: grads,
        input: want_input.then_some(g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{DropoutSite, DEFAULT_WIDTHS};
    use std::collections::BTreeSet;

    fn conv_spec(cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> NetSpec {
        NetSpec {
            input_norm: None,
            input_channels: cin,
            output_channels: cout,
            layers: vec![Layer::Conv {
                name: "c".into(),
                out_channels: cout,
                kernel: k,
                stride,
                pad,
            }],
        }
    }

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut RngStream) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap()
    }

    /// Direct convolution oracle.
    fn direct_conv(x: &Tensor<f64>, p: &crate::nn::ConvParams<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let k = p.kernel;
        let oh = (x.height + 2 * pad - k) / stride + 1;
        let ow = (x.width + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(p.out_channels, oh, ow);
        for o in 0..p.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = p.bias[o];
                    for i in 0..p.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.height as isize || ix >= x.width as isize {
                                    continue;
                                }
                                acc += p.weight[((o * p.in_channels + i) * k + ky) * k + kx]
                                    * x.data[(i * x.height + iy as usize) * x.width + ix as usize];
                            }
                        }
                    }
                    out.data[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct() {
        let mut rng = RngStream::new(11);
        for (k, s, pd, h, w) in [(3, 1, 1, 5, 6), (3, 2, 1, 7, 6), (1, 1, 0, 4, 3), (3, 2, 0, 9, 8), (2, 1, 1, 3, 3)] {
            let spec = conv_spec(3, 4, k, s, pd);
            let params: NetParams<f64> = NetParams::init(&spec, &mut rng);
            let x = random_tensor(3, h, w, &mut rng);
            let y = infer(&spec, &params, &x, false, &mut rng).unwrap();
            let want = direct_conv(&x, &params.convs()[0], s, pd);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_by_one_conv_is_matrix_product() {
        // 2 inputs -> 1 output on a 2x2 image, W = [2, -1], b = 0.5.
        let spec = conv_spec(2, 1, 1, 1, 0);
        let mut params = NetParams::<f64>::zeros(&spec);
        params.convs_mut()[0].weight.copy_from_slice(&[2.0, -1.0]);
        params.convs_mut()[0].bias[0] = 0.5;
        let x = Tensor::from_vec(2, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 1.0, 2.0]).unwrap();
        let y = infer(&spec, &params, &x, false, &mut RngStream::new(0)).unwrap();
        assert_eq!(y.data, vec![2.5, 3.5, 5.5, 6.5]);
    }

    #[test]
    fn zero_weights_zero_logits_and_dims() {
        let sites = BTreeSet::from([DropoutSite::Conv3, DropoutSite::Fc6]);
        let spec = NetSpec::toy(3, 2, DEFAULT_WIDTHS, 0.4, &sites).unwrap();
        let params = NetParams::<f32>::zeros(&spec);
        let x = Tensor::from_vec(3, 13, 17, vec![0.7; 3 * 13 * 17]).unwrap();
        let y = infer(&spec, &params, &x, true, &mut RngStream::new(1)).unwrap();
        assert_eq!(y.shape(), (2, 13, 17));
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ratio_zero_dropout_is_identity() {
        let sites: BTreeSet<_> = DropoutSite::ALL.into_iter().collect();
        let spec = NetSpec::toy(3, 2, [4, 4, 4, 4, 4, 4], 0.0, &sites).unwrap();
        let mut rng = RngStream::new(2);
        let params: NetParams<f32> = NetParams::init(&spec, &mut rng);
        let x = Tensor::<f32>::from_image(&crate::image::ImageBuffer::filled(8, 8, 3, 0.3));
        let a = infer(&spec, &params, &x, true, &mut RngStream::new(3)).unwrap();
        let b = infer(&spec, &params, &x, false, &mut RngStream::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prefix_plus_suffix_equals_full() {
        let sites = BTreeSet::from([DropoutSite::Conv3, DropoutSite::Conv4]);
        let spec = NetSpec::toy(3, 2, [4, 5, 6, 7, 8, 9], 0.4, &sites).unwrap();
        let mut rng = RngStream::new(5);
        let params: NetParams<f64> = NetParams::init(&spec, &mut rng);
        let x = random_tensor(3, 12, 16, &mut rng);
        let full = infer(&spec, &params, &x, true, &mut RngStream::new(9)).unwrap();
        let cut = spec.deterministic_prefix();
        let mid = run_layers(&spec, &params, x.clone(), 0..cut, (12, 16), true, &mut RngStream::new(9)).unwrap();
        let rest = run_layers(&spec, &params, mid, cut..spec.layers.len(), (12, 16), true, &mut RngStream::new(9)).unwrap();
        assert_eq!(full, rest);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let sites = BTreeSet::from([DropoutSite::Conv4]);
        let spec = NetSpec::toy(3, 1, [3, 3, 3, 3, 3, 3], 0.4, &sites).unwrap();
        let mut rng = RngStream::new(6);
        let params: NetParams<f64> = NetParams::init(&spec, &mut rng);
        let x = random_tensor(3, 8, 8, &mut rng);
        let (y, cache) = forward(&spec, &params, &x, true, &mut rng).unwrap();
        let g = backward(&spec, &params, &cache, &Tensor::zeros(y.channels, y.height, y.width)).unwrap();
        assert!(g.params.to_flat().iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let spec = conv_spec(1, 1, 3, 1, 1);
        let mut rng = RngStream::new(7);
        let mut params: NetParams<f64> = NetParams::init(&spec, &mut rng);
        let x = random_tensor(1, 4, 4, &mut rng);
        let (y, cache) = forward(&spec, &params, &x, false, &mut rng).unwrap();
        params.convs_mut()[0].bias[0] += 1.0;
        let err = backward(&spec, &params, &cache, &y).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let spec = conv_spec(3, 1, 3, 1, 1);
        let params = NetParams::<f32>::zeros(&spec);
        let x = Tensor::<f32>::zeros(1, 4, 4);
        assert!(infer(&spec, &params, &x, false, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        // <U x, y> == <x, U^T y>
        let mut rng = RngStream::new(8);
        let x = random_tensor(2, 3, 5, &mut rng);
        let y = random_tensor(2, 12, 20, &mut rng);
        let ux = upsample(&x, (12, 20));
        let uty = upsample_backward(&y, x.shape());
        let lhs: f64 = ux.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&uty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
