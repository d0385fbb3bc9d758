//! Dual TV-L1 optical flow: coarse-to-fine pyramid, image warping with a
//! linearized data term, and primal-dual (Chambolle) iterations for the
//! total-variation part.

use crate::error::{Error, Result};
use crate::image::{resize_bilinear, ImageBuffer, TensorBlob};

/// Input intensities are rescaled from `[0, 1]` to `[0, 255]`, the range
/// `lambda` is usually tuned for.
const INTENSITY_SCALE: f32 = 255.0;
const GRAD_IS_ZERO: f32 = 1e-10;
const MIN_LEVEL_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvL1Params {
    /// Weight of the data term against total variation.
    pub lambda: f32,
    /// Stop a level's iterations once the mean absolute flow update drops below this.
    pub epsilon: f32,
    pub max_iters: usize,
    pub pyramid_levels: usize,
    pub pyramid_scale: f32,
    pub warps_per_level: usize,
    pub tau: f32,
    pub theta: f32,
}

impl Default for TvL1Params {
    fn default() -> Self {
        Self {
            lambda: 0.15,
            epsilon: 0.01,
            max_iters: 300,
            pyramid_levels: 4,
            pyramid_scale: 0.5,
            warps_per_level: 3,
            tau: 0.125,
            theta: 0.3,
        }
    }
}

impl TvL1Params {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && self.epsilon > 0.0
            && self.max_iters >= 1
            && self.pyramid_levels >= 1
            && self.pyramid_scale > 0.0
            && self.pyramid_scale < 1.0
            && self.warps_per_level >= 1
            && self.tau > 0.0
            && self.tau <= 0.125
            && self.theta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid TV-L1 parameters: {self:?}")))
        }
    }
}

/// Dense displacement field in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    /// x displacement, row-major.
    pub u: Vec<f32>,
    /// y displacement, row-major.
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(&a, &b)| ((a * a + b * b) as f64).sqrt())
            .sum::<f64>()
            / self.u.len() as f64
    }

    /// Mean endpoint error against a constant displacement.
    pub fn mean_endpoint_error(&self, du: f32, dv: f32) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(&a, &b)| (((a - du).powi(2) + (b - dv).powi(2)) as f64).sqrt())
            .sum::<f64>()
            / self.u.len() as f64
    }

    /// `[2, H, W]` blob: u plane then v plane.
    pub fn to_blob(&self) -> TensorBlob {
        let mut payload = self.u.clone();
        payload.extend_from_slice(&self.v);
        TensorBlob::new(vec![2, self.height, self.width], payload).expect("flow dims consistent")
    }

    pub fn from_blob(blob: &TensorBlob) -> Result<Self> {
        match *blob.dims() {
            [2, h, w] => {
                let (u, v) = blob.payload().split_at(h * w);
                Ok(Self {
                    height: h,
                    width: w,
                    u: u.to_vec(),
                    v: v.to_vec(),
                })
            }
            _ => Err(Error::Format(format!("flow blob must be [2, H, W], got {:?}", blob.dims()))),
        }
    }
}

/// Energy after one outer warp of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpLog {
    /// 0 is full resolution.
    pub level: usize,
    pub warp: usize,
    pub iterations: usize,
    /// False when the warp raised the energy and was rolled back, ending the level.
    pub accepted: bool,
    /// `sum |grad u| + |grad v| + lambda * |I1(x + w) - I0(x)|` on this level.
    pub energy: f64,
}

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    d: Vec<f32>,
}

impl Plane {
    fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, d: vec![0.0; h * w] }
    }

    fn from_image(img: &ImageBuffer) -> Self {
        Self {
            h: img.height(),
            w: img.width(),
            d: img.data().to_vec(),
        }
    }

    fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_vec(self.h, self.w, 1, self.d.clone()).expect("plane dims")
    }

    fn resized(&self, h: usize, w: usize) -> Plane {
        Plane::from_image(&resize_bilinear(&self.to_image(), h, w).expect("nonzero dims"))
    }

    #[inline]
    fn at(&self, y: usize, x: usize) -> f32 {
        self.d[y * self.w + x]
    }

    /// Bilinear sample with border replication.
    #[inline]
    fn sample(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (fx, fy) = (x - x0 as f32, y - y0 as f32);
        let top = (1.0 - fx) * self.at(y0, x0) + fx * self.at(y0, x1);
        let bot = (1.0 - fx) * self.at(y1, x0) + fx * self.at(y1, x1);
        (1.0 - fy) * top + fy * bot
    }

    /// Separable Gaussian blur with edge replication.
    fn blurred(&self, sigma: f32) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (2.0 * sigma).ceil() as isize;
        let mut k: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f32 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        let (h, w) = (self.h as isize, self.w as isize);
        let mut tmp = Plane::zeros(self.h, self.w);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let xx = (x + j as isize - radius).clamp(0, w - 1);
                    acc += kv * self.d[(y * w + xx) as usize];
                }
                tmp.d[(y * w + x) as usize] = acc;
            }
        }
        let mut out = Plane::zeros(self.h, self.w);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let yy = (y + j as isize - radius).clamp(0, h - 1);
                    acc += kv * tmp.d[(yy * w + x) as usize];
                }
                out.d[(y * w + x) as usize] = acc;
            }
        }
        out
    }

    /// Central-difference gradient (one-sided at the border).
    fn centered_gradient(&self) -> (Plane, Plane) {
        let (h, w) = (self.h, self.w);
        let mut gx = Plane::zeros(h, w);
        let mut gy = Plane::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let dx = (xr - xl).max(1) as f32;
                let dy = (yd - yu).max(1) as f32;
                gx.d[y * w + x] = (self.at(y, xr) - self.at(y, xl)) / dx;
                gy.d[y * w + x] = (self.at(yd, x) - self.at(yu, x)) / dy;
            }
        }
        (gx, gy)
    }
}

/// Forward differences, zero on the last column/row.
fn forward_gradient(f: &[f32], h: usize, w: usize, gx: &mut [f32], gy: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x + 1 < w { f[i + 1] - f[i] } else { 0.0 };
            gy[i] = if y + 1 < h { f[i + w] - f[i] } else { 0.0 };
        }
    }
}

/// Divergence adjoint to [`forward_gradient`].
fn divergence(px: &[f32], py: &[f32], h: usize, w: usize, out: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = if x == 0 {
                px[i]
            } else if x + 1 == w {
                -px[i - 1]
            } else {
                px[i] - px[i - 1]
            };
            let dy = if y == 0 {
                py[i]
            } else if y + 1 == h {
                -py[i - w]
            } else {
                py[i] - py[i - w]
            };
            out[i] = dx + dy;
        }
    }
}

fn tv_l1_energy(i0: &Plane, i1: &Plane, u: &[f32], v: &[f32], lambda: f32) -> f64 {
    let (h, w) = (i0.h, i0.w);
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let mut e = 0.0f64;
    for comp in [u, v] {
        forward_gradient(comp, h, w, &mut gx, &mut gy);
        e += gx
            .iter()
            .zip(&gy)
            .map(|(a, b)| ((a * a + b * b) as f64).sqrt())
            .sum::<f64>();
    }
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let r = i1.sample(x as f32 + u[i], y as f32 + v[i]) - i0.at(y, x);
            e += lambda as f64 * r.abs() as f64;
        }
    }
    e
}

struct LevelSolver<'a> {
    p: &'a TvL1Params,
    i0: &'a Plane,
    i1: &'a Plane,
    i1x: &'a Plane,
    i1y: &'a Plane,
}

impl LevelSolver<'_> {
    fn solve(&self, u: &mut [f32], v: &mut [f32], level: usize, log: &mut Vec<WarpLog>) {
        let (h, w) = (self.i0.h, self.i0.w);
        let n = h * w;
        let lt = self.p.lambda * self.p.theta;
        let taut = self.p.tau / self.p.theta;
        let mut p11 = vec![0.0f32; n];
        let mut p12 = vec![0.0f32; n];
        let mut p21 = vec![0.0f32; n];
        let mut p22 = vec![0.0f32; n];
        let mut div1 = vec![0.0f32; n];
        let mut div2 = vec![0.0f32; n];
        let mut gx = vec![0.0f32; n];
        let mut gy = vec![0.0f32; n];
        let mut wx = vec![0.0f32; n];
        let mut wy = vec![0.0f32; n];
        let mut grad = vec![0.0f32; n];
        let mut rho_c = vec![0.0f32; n];

        let mut energy = tv_l1_energy(self.i0, self.i1, u, v, self.p.lambda);
        for warp in 0..self.p.warps_per_level {
            let saved = (u.to_vec(), v.to_vec());
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let (sx, sy) = (x as f32 + u[i], y as f32 + v[i]);
                    let iw = self.i1.sample(sx, sy);
                    wx[i] = self.i1x.sample(sx, sy);
                    wy[i] = self.i1y.sample(sx, sy);
                    grad[i] = wx[i] * wx[i] + wy[i] * wy[i];
                    rho_c[i] = iw - wx[i] * u[i] - wy[i] * v[i] - self.i0.at(y, x);
                }
            }
            let mut iters = 0;
            while iters < self.p.max_iters {
                iters += 1;
                divergence(&p11, &p12, h, w, &mut div1);
                divergence(&p21, &p22, h, w, &mut div2);
                let mut change = 0.0f64;
                for i in 0..n {
                    let rho = rho_c[i] + wx[i] * u[i] + wy[i] * v[i];
                    let (du, dv) = if rho < -lt * grad[i] {
                        (lt * wx[i], lt * wy[i])
                    } else if rho > lt * grad[i] {
                        (-lt * wx[i], -lt * wy[i])
                    } else if grad[i] > GRAD_IS_ZERO {
                        let f = -rho / grad[i];
                        (f * wx[i], f * wy[i])
                    } else {
                        (0.0, 0.0)
                    };
                    let nu = u[i] + du + self.p.theta * div1[i];
                    let nv = v[i] + dv + self.p.theta * div2[i];
                    change += ((nu - u[i]).abs() + (nv - v[i]).abs()) as f64;
                    u[i] = nu;
                    v[i] = nv;
                }
                for (comp, (q1, q2)) in [(&*u, (&mut p11, &mut p12)), (&*v, (&mut p21, &mut p22))] {
                    forward_gradient(comp, h, w, &mut gx, &mut gy);
                    for i in 0..n {
                        let norm = 1.0 + taut * (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
                        q1[i] = (q1[i] + taut * gx[i]) / norm;
                        q2[i] = (q2[i] + taut * gy[i]) / norm;
                    }
                }
                if change / ((2 * n) as f64) < self.p.epsilon as f64 {
                    break;
                }
            }
            let next = tv_l1_energy(self.i0, self.i1, u, v, self.p.lambda);
            let accepted = next <= energy;
            if accepted {
                energy = next;
            } else {
                u.copy_from_slice(&saved.0);
                v.copy_from_slice(&saved.1);
            }
            log.push(WarpLog {
                level,
                warp,
                iterations: iters,
                accepted,
                energy,
            });
            if !accepted {
                break;
            }
        }
    }
}

fn check_pair(prev: &ImageBuffer, next: &ImageBuffer) -> Result<()> {
    if prev.channels() != 1 || next.channels() != 1 {
        return Err(Error::invalid("TV-L1 flow needs single-channel frames"));
    }
    if prev.dims() != next.dims() {
        return Err(Error::invalid(format!(
            "frame dims differ: {:?} vs {:?}",
            prev.dims(),
            next.dims()
        )));
    }
    Ok(())
}

/// Flow from `prev` to `next`: `prev(x) ~ next(x + (u, v))`.
pub fn tvl1_flow(prev: &ImageBuffer, next: &ImageBuffer, params: &TvL1Params) -> Result<FlowField> {
    tvl1_flow_logged(prev, next, params).map(|(f, _)| f)
}

/// As [`tvl1_flow`], also returning the energy after every outer warp.
pub fn tvl1_flow_logged(
    prev: &ImageBuffer,
    next: &ImageBuffer,
    params: &TvL1Params,
) -> Result<(FlowField, Vec<WarpLog>)> {
    check_pair(prev, next)?;
    params.validate()?;
    let scale = |img: &ImageBuffer| {
        let mut p = Plane::from_image(img);
        p.d.iter_mut().for_each(|v| *v *= INTENSITY_SCALE);
        p
    };
    let mut pyr0 = vec![scale(prev)];
    let mut pyr1 = vec![scale(next)];
    let sigma = 0.6 * (1.0 / (params.pyramid_scale * params.pyramid_scale) - 1.0).sqrt();
    for _ in 1..params.pyramid_levels {
        let last = pyr0.last().unwrap();
        let nh = (last.h as f32 * params.pyramid_scale).round() as usize;
        let nw = (last.w as f32 * params.pyramid_scale).round() as usize;
        if nh < MIN_LEVEL_SIZE || nw < MIN_LEVEL_SIZE {
            break;
        }
        let a = pyr0.last().unwrap().blurred(sigma).resized(nh, nw);
        let b = pyr1.last().unwrap().blurred(sigma).resized(nh, nw);
        pyr0.push(a);
        pyr1.push(b);
    }

    let coarsest = pyr0.len() - 1;
    let mut u = vec![0.0f32; pyr0[coarsest].d.len()];
    let mut v = u.clone();
    let mut log = Vec::new();
    for level in (0..=coarsest).rev() {
        let (i0, i1) = (&pyr0[level], &pyr1[level]);
        if u.len() != i0.d.len() {
            let prev_dims = (pyr0[level + 1].h, pyr0[level + 1].w);
            let su = i0.w as f32 / prev_dims.1 as f32;
            let sv = i0.h as f32 / prev_dims.0 as f32;
            let up = |f: &[f32], s: f32| {
                let mut p = Plane {
                    h: prev_dims.0,
                    w: prev_dims.1,
                    d: f.to_vec(),
                }
                .resized(i0.h, i0.w);
                p.d.iter_mut().for_each(|x| *x *= s);
                p.d
            };
            u = up(&u, su);
            v = up(&v, sv);
        }
        let (i1x, i1y) = i1.centered_gradient();
        LevelSolver {
            p: params,
            i0,
            i1,
            i1x: &i1x,
            i1y: &i1y,
        }
        .solve(&mut u, &mut v, level, &mut log);
    }
    let (h, w) = prev.dims();
    Ok((FlowField { height: h, width: w, u, v }, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let p = TvL1Params::default();
        assert_eq!((p.lambda, p.epsilon, p.max_iters), (0.15, 0.01, 300));
        p.validate().unwrap();
        assert!(TvL1Params { tau: 0.25, ..p }.validate().is_err());
        assert!(TvL1Params { pyramid_scale: 1.0, ..p }.validate().is_err());
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let (h, w) = (5, 7);
        let f: Vec<f32> = (0..h * w).map(|i| ((i * 37) % 11) as f32 * 0.1).collect();
        let px: Vec<f32> = (0..h * w).map(|i| ((i * 13) % 7) as f32 * 0.2 - 0.5).collect();
        let py: Vec<f32> = (0..h * w).map(|i| ((i * 29) % 5) as f32 * 0.3 - 0.4).collect();
        let (mut gx, mut gy, mut div) = (vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]);
        forward_gradient(&f, h, w, &mut gx, &mut gy);
        divergence(&px, &py, h, w, &mut div);
        let lhs: f32 = gx.iter().zip(&px).map(|(a, b)| a * b).sum::<f32>() + gy.iter().zip(&py).map(|(a, b)| a * b).sum::<f32>();
        let rhs: f32 = -f.iter().zip(&div).map(|(a, b)| a * b).sum::<f32>();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn rejects_mismatched_frames() {
        let a = ImageBuffer::zeros(8, 8, 1);
        let b = ImageBuffer::zeros(8, 9, 1);
        assert!(tvl1_flow(&a, &b, &TvL1Params::default()).is_err());
        assert!(tvl1_flow(&ImageBuffer::zeros(8, 8, 3), &ImageBuffer::zeros(8, 8, 3), &TvL1Params::default()).is_err());
    }

    #[test]
    fn flow_blob_roundtrip() {
        let mut f = FlowField::zeros(3, 4);
        f.u[5] = 1.5;
        f.v[2] = -0.25;
        assert_eq!(FlowField::from_blob(&f.to_blob()).unwrap(), f);
    }
}
