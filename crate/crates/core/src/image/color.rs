use super::ImageBuffer;
use crate::error::{Error, Result};

fn require_rgb(img: &ImageBuffer, what: &str) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "{what} needs a 3-channel image, got {}",
            img.channels()
        )));
    }
    Ok(())
}

fn pixel_rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, s, v);
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = sector / 6.0;
    if h >= 1.0 {
        h -= 1.0;
    }
    (h, s, v)
}

fn pixel_hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn map_pixels(img: &ImageBuffer, f: impl Fn(f64, f64, f64) -> (f64, f64, f64)) -> ImageBuffer {
    let n = img.plane_len();
    let src = img.data();
    let mut out = img.clone();
    let dst = out.data_mut();
    for i in 0..n {
        let (a, b, c) = f(src[i] as f64, src[n + i] as f64, src[2 * n + i] as f64);
        dst[i] = a as f32;
        dst[n + i] = b as f32;
        dst[2 * n + i] = c as f32;
    }
    out
}

/// RGB to HSV with all three components in `[0, 1]` (hue is degrees / 360).
pub fn rgb_to_hsv(img: &ImageBuffer) -> Result<ImageBuffer> {
    require_rgb(img, "rgb_to_hsv")?;
    Ok(map_pixels(img, pixel_rgb_to_hsv))
}

pub fn hsv_to_rgb(img: &ImageBuffer) -> Result<ImageBuffer> {
    require_rgb(img, "hsv_to_rgb")?;
    Ok(map_pixels(img, pixel_hsv_to_rgb))
}

/// Multiply the HSV value channel by `level`, clamp to `[0, 1]`, convert back.
pub fn scale_value(img: &ImageBuffer, level: f32) -> Result<ImageBuffer> {
    require_rgb(img, "scale_value")?;
    let level = level as f64;
    Ok(map_pixels(img, |r, g, b| {
        let (h, s, v) = pixel_rgb_to_hsv(r, g, b);
        pixel_hsv_to_rgb(h, s, (v * level).clamp(0.0, 1.0))
    }))
}

/// Luminance 0.299 R + 0.587 G + 0.114 B. Single-channel input is returned as is.
pub fn to_gray(img: &ImageBuffer) -> Result<ImageBuffer> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => {
            let n = img.plane_len();
            let d = img.data();
            let gray = (0..n)
                .map(|i| 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i])
                .collect();
            ImageBuffer::from_vec(img.height(), img.width(), 1, gray)
        }
        c => Err(Error::invalid(format!("cannot convert {c}-channel image to gray"))),
    }
}
