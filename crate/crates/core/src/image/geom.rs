//! Geometric resampling. All bilinear sampling uses the half-pixel-center
//! convention: pixel `j` covers `[j, j+1)` and is sampled at `j + 0.5`.

use super::ImageBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

/// Per-axis interpolation taps for a bilinear resize from `src` to `dst` samples.
#[derive(Debug, Clone)]
pub(crate) struct AxisTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisTaps {
    pub(crate) fn new(src: usize, dst: usize) -> Self {
        let ratio = src as f64 / dst as f64;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for o in 0..dst {
            let s = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            lo.push(i0);
            hi.push((i0 + 1).min(src - 1));
            frac.push(s - i0 as f64);
        }
        Self { lo, hi, frac }
    }
}

pub fn resize_bilinear(img: &ImageBuffer, new_h: usize, new_w: usize) -> Result<ImageBuffer> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::invalid(format!("resize target must be >= 1x1, got {new_h}x{new_w}")));
    }
    let (h, w) = img.dims();
    let ty = AxisTaps::new(h, new_h);
    let tx = AxisTaps::new(w, new_w);
    let mut out = ImageBuffer::zeros(new_h, new_w, img.channels());
    for c in 0..img.channels() {
        let src = img.channel(c);
        let dst = out.channel_mut(c);
        for oy in 0..new_h {
            let fy = ty.frac[oy] as f32;
            let r0 = &src[ty.lo[oy] * w..(ty.lo[oy] + 1) * w];
            let r1 = &src[ty.hi[oy] * w..(ty.hi[oy] + 1) * w];
            for ox in 0..new_w {
                let fx = tx.frac[ox] as f32;
                let (x0, x1) = (tx.lo[ox], tx.hi[ox]);
                let top = (1.0 - fx) * r0[x0] + fx * r0[x1];
                let bot = (1.0 - fx) * r1[x0] + fx * r1[x1];
                dst[oy * new_w + ox] = (1.0 - fy) * top + fy * bot;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour resize; keeps label maps binary.
pub fn resize_nearest(img: &ImageBuffer, new_h: usize, new_w: usize) -> Result<ImageBuffer> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::invalid(format!("resize target must be >= 1x1, got {new_h}x{new_w}")));
    }
    let (h, w) = img.dims();
    let pick = |o: usize, src: usize, dst: usize| {
        (((o as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1)
    };
    let ys: Vec<usize> = (0..new_h).map(|o| pick(o, h, new_h)).collect();
    let xs: Vec<usize> = (0..new_w).map(|o| pick(o, w, new_w)).collect();
    let mut out = ImageBuffer::zeros(new_h, new_w, img.channels());
    for c in 0..img.channels() {
        let src = img.channel(c);
        let dst = out.channel_mut(c);
        for (oy, &sy) in ys.iter().enumerate() {
            for (ox, &sx) in xs.iter().enumerate() {
                dst[oy * new_w + ox] = src[sy * w + sx];
            }
        }
    }
    Ok(out)
}

pub fn crop(img: &ImageBuffer, top: usize, left: usize, h: usize, w: usize) -> Result<ImageBuffer> {
    let (ih, iw) = img.dims();
    if h == 0 || w == 0 || top + h > ih || left + w > iw {
        return Err(Error::invalid(format!(
            "crop window {h}x{w} at ({top},{left}) outside {ih}x{iw} image"
        )));
    }
    let mut data = Vec::with_capacity(h * w * img.channels());
    for c in 0..img.channels() {
        let src = img.channel(c);
        for y in top..top + h {
            data.extend_from_slice(&src[y * iw + left..y * iw + left + w]);
        }
    }
    ImageBuffer::from_vec(h, w, img.channels(), data)
}

pub fn hflip(img: &ImageBuffer) -> ImageBuffer {
    let mut out = img.clone();
    let w = img.width();
    for c in 0..img.channels() {
        for row in out.channel_mut(c).chunks_mut(w) {
            row.reverse();
        }
    }
    out
}

/// Bilinear rotation about the image center; positive angles turn the
/// content counter-clockwise as displayed. Samples falling outside the
/// source pixel area take `fill`.
pub fn rotate_about_center(img: &ImageBuffer, degrees: f64, fill: f32) -> ImageBuffer {
    rotate_about_center_with(img, degrees, fill, Interp::Bilinear)
}

pub fn rotate_about_center_with(
    img: &ImageBuffer,
    degrees: f64,
    fill: f32,
    interp: Interp,
) -> ImageBuffer {
    let (h, w) = img.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut out = ImageBuffer::filled(h, w, img.channels(), fill);
    let (maxx, maxy) = ((w - 1) as f64, (h - 1) as f64);
    for oy in 0..h {
        let yo = oy as f64 + 0.5 - cy;
        for ox in 0..w {
            let xo = ox as f64 + 0.5 - cx;
            let sx = xo * cos - yo * sin + cx - 0.5;
            let sy = xo * sin + yo * cos + cy - 0.5;
            if sx < -0.5 || sy < -0.5 || sx >= w as f64 - 0.5 || sy >= h as f64 - 0.5 {
                continue;
            }
            match interp {
                Interp::Nearest => {
                    let x = (sx.round().max(0.0) as usize).min(w - 1);
                    let y = (sy.round().max(0.0) as usize).min(h - 1);
                    for c in 0..img.channels() {
                        out.set(c, oy, ox, img.get(c, y, x));
                    }
                }
                Interp::Bilinear => {
                    let sx = sx.clamp(0.0, maxx);
                    let sy = sy.clamp(0.0, maxy);
                    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                    let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
                    for c in 0..img.channels() {
                        let top = (1.0 - fx) * img.get(c, y0, x0) + fx * img.get(c, y0, x1);
                        let bot = (1.0 - fx) * img.get(c, y1, x0) + fx * img.get(c, y1, x1);
                        out.set(c, oy, ox, (1.0 - fy) * top + fy * bot);
                    }
                }
            }
        }
    }
    out
}
