use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gesture::{normalize_precision, PseudoLabel};
use crate::image::{crop, hflip, resize_bilinear, resize_nearest, rotate_about_center_with, scale_value, ImageBuffer, Interp};
use crate::rng::RngStream;

/// Which augmentation strategies are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AugmentSet {
    pub brightness: bool,
    pub transform: bool,
    pub background: bool,
}

impl AugmentSet {
    pub const NONE: AugmentSet = AugmentSet {
        brightness: false,
        transform: false,
        background: false,
    };
    pub const ALL: AugmentSet = AugmentSet {
        brightness: true,
        transform: true,
        background: true,
    };
}

impl fmt::Display for AugmentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.brightness, "brightness"),
            (self.transform, "transform"),
            (self.background, "background"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for AugmentSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = AugmentSet::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "none" => {}
                "brightness" => set.brightness = true,
                "transform" | "transformation" => set.transform = true,
                "background" | "environment" => set.background = true,
                other => return Err(Error::invalid(format!("unknown augmentation '{other}'"))),
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentCfg {
    pub enabled: AugmentSet,
    /// Crop side as a fraction of each axis.
    pub crop_fraction: f64,
    pub crop_prob: f64,
    /// Non-zero rotations; 0 degrees is always a candidate too.
    pub rotation_angles: Vec<f64>,
    pub hflip_prob: f64,
    pub brightness_levels: Vec<f32>,
    pub brightness_prob: f64,
    /// Hand-free frames mixed into training with an all-background label.
    pub background_images: Vec<ImageBuffer>,
}

impl Default for AugmentCfg {
    fn default() -> Self {
        Self {
            enabled: AugmentSet::ALL,
            crop_fraction: 0.8,
            crop_prob: 0.5,
            rotation_angles: vec![-30.0, -15.0, 15.0, 30.0],
            hflip_prob: 0.5,
            brightness_levels: vec![0.2, 0.3, 0.4, 0.5, 0.6],
            brightness_prob: 0.5,
            background_images: Vec::new(),
        }
    }
}

impl AugmentCfg {
    pub fn none() -> Self {
        Self {
            enabled: AugmentSet::NONE,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::invalid("crop_fraction must lie in (0, 1]"));
        }
        if self.brightness_levels.iter().any(|l| !(*l > 0.0 && *l <= 1.0)) {
            return Err(Error::invalid("brightness levels must lie in (0, 1]"));
        }
        if !(prob(self.crop_prob) && prob(self.hflip_prob) && prob(self.brightness_prob)) {
            return Err(Error::invalid("augmentation probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Crop size for `fraction` of each axis, rounded to the nearest pixel.
pub fn crop_window(height: usize, width: usize, fraction: f64) -> (usize, usize) {
    let side = |n: usize| ((n as f64 * fraction).round() as usize).clamp(1, n);
    (side(height), side(width))
}

/// One training sample: an RGB frame and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame: ImageBuffer,
    pub label: PseudoLabel,
}

struct Planes {
    frame: ImageBuffer,
    t: ImageBuffer,
    p: ImageBuffer,
}

impl Planes {
    fn apply(
        self,
        f: impl Fn(&ImageBuffer, Interp, f32) -> Result<ImageBuffer>,
    ) -> Result<Planes> {
        Ok(Planes {
            frame: f(&self.frame, Interp::Bilinear, 0.0)?,
            t: f(&self.t, Interp::Nearest, 0.0)?,
            p: f(&self.p, Interp::Bilinear, 1.0)?,
        })
    }
}

fn resize_with(img: &ImageBuffer, h: usize, w: usize, interp: Interp) -> Result<ImageBuffer> {
    match interp {
        Interp::Bilinear => resize_bilinear(img, h, w),
        Interp::Nearest => resize_nearest(img, h, w),
    }
}

/// Random crop/rotation/flip (applied alike to frame, target and
/// precision) and brightness scaling of the frame.
pub fn augment_sample(
    frame: &ImageBuffer,
    label: &PseudoLabel,
    cfg: &AugmentCfg,
    rng: &mut RngStream,
) -> Result<(ImageBuffer, PseudoLabel)> {
    if frame.dims() != label.dims() {
        return Err(Error::invalid(format!(
            "frame {:?} and label {:?} differ",
            frame.dims(),
            label.dims()
        )));
    }
    let (h, w) = frame.dims();
    let mut planes = Planes {
        frame: frame.clone(),
        t: label.t_image(),
        p: label.precision_image(),
    };
    let mut geometric = false;
    if cfg.enabled.transform {
        if rng.bernoulli(cfg.crop_prob) {
            let (ch, cw) = crop_window(h, w, cfg.crop_fraction);
            let top = rng.below(h - ch + 1);
            let left = rng.below(w - cw + 1);
            planes = planes.apply(|img, interp, _| resize_with(&crop(img, top, left, ch, cw)?, h, w, interp))?;
            geometric = true;
        }
        let k = rng.below(cfg.rotation_angles.len() + 1);
        if k > 0 {
            let deg = cfg.rotation_angles[k - 1];
            planes = planes.apply(|img, interp, fill| Ok(rotate_about_center_with(img, deg, fill, interp)))?;
            geometric = true;
        }
        if rng.bernoulli(cfg.hflip_prob) {
            planes = planes.apply(|img, _, _| Ok(hflip(img)))?;
            geometric = true;
        }
    }
    if cfg.enabled.brightness && !cfg.brightness_levels.is_empty() && rng.bernoulli(cfg.brightness_prob) {
        let level = cfg.brightness_levels[rng.below(cfg.brightness_levels.len())];
        planes.frame = scale_value(&planes.frame, level)?;
    }
    let out = if geometric {
        let mut precision: Vec<f64> = planes.p.data().iter().map(|&v| v.max(0.0) as f64).collect();
        normalize_precision(&mut precision);
        PseudoLabel {
            height: h,
            width: w,
            t: planes.t.data().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
            precision,
        }
    } else {
        label.clone()
    };
    Ok((planes.frame, out))
}

/// Insert every background image at a random position, labelled all
/// background with unit precision. Unchanged when background augmentation
/// is off or the list is empty.
pub fn inject_background(mut samples: Vec<Sample>, cfg: &AugmentCfg, rng: &mut RngStream) -> Result<Vec<Sample>> {
    if !cfg.enabled.background {
        return Ok(samples);
    }
    for bg in &cfg.background_images {
        if let Some(first) = samples.first() {
            if first.frame.dims() != bg.dims() || first.frame.channels() != bg.channels() {
                return Err(Error::invalid("background image dims differ from training frames"));
            }
        }
        let (h, w) = bg.dims();
        let label = PseudoLabel {
            height: h,
            width: w,
            t: vec![0.0; h * w],
            precision: vec![1.0; h * w],
        };
        let at = rng.below(samples.len() + 1);
        samples.insert(at, Sample { frame: bg.clone(), label });
    }
    Ok(samples)
}
