//! Per-pixel Bayesian background model over quantized colors, in the style
//! of Godbehere-Matsukawa-Goldberg. Histograms are stored sparsely: each
//! pixel keeps at most [`MAX_FEATURES`] weighted color bins.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Bins retained per pixel; the lightest bin is evicted when full.
pub const MAX_FEATURES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForegroundCfg {
    pub prior_background: f32,
    pub learning_rate: f32,
    /// Temporal blend of the previous posterior into the current one.
    pub smoothing: f32,
    pub num_bins: usize,
    /// Frames absorbed into every pixel's histogram before selective updates begin.
    pub init_frames: usize,
}

impl Default for ForegroundCfg {
    fn default() -> Self {
        Self {
            prior_background: 0.8,
            learning_rate: 0.6,
            smoothing: 0.0,
            num_bins: 16,
            init_frames: 1,
        }
    }
}

impl ForegroundCfg {
    pub fn validate(&self) -> Result<()> {
        let ok = self.prior_background > 0.0
            && self.prior_background < 1.0
            && (0.0..=1.0).contains(&self.learning_rate)
            && (0.0..=1.0).contains(&self.smoothing)
            && (2..=256).contains(&self.num_bins)
            && self.init_frames >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid foreground model config: {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForegroundModel {
    cfg: ForegroundCfg,
    height: usize,
    width: usize,
    channels: usize,
    bins: Vec<u32>,
    weights: Vec<f32>,
    used: Vec<u8>,
    last_posterior: Option<Vec<f32>>,
    frames_seen: usize,
}

impl ForegroundModel {
    pub fn cfg(&self) -> &ForegroundCfg {
        &self.cfg
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Histogram mass of `bin` at pixel `i`.
    pub fn likelihood(&self, i: usize, bin: u32) -> f32 {
        let base = i * MAX_FEATURES;
        (0..self.used[i] as usize)
            .find(|&k| self.bins[base + k] == bin)
            .map_or(0.0, |k| self.weights[base + k])
    }

    /// Total histogram mass at pixel `i`.
    pub fn mass(&self, i: usize) -> f32 {
        let base = i * MAX_FEATURES;
        self.weights[base..base + self.used[i] as usize].iter().sum()
    }

    pub fn min_weight(&self) -> f32 {
        self.weights.iter().copied().fold(f32::INFINITY, f32::min)
    }

    fn quantize(&self, frame: &ImageBuffer, i: usize) -> u32 {
        let n = self.cfg.num_bins as u32;
        let plane = frame.plane_len();
        let mut bin = 0u32;
        for c in 0..self.channels {
            let v = frame.data()[c * plane + i];
            let q = ((v * n as f32).floor().max(0.0) as u32).min(n - 1);
            bin = bin * n + q;
        }
        bin
    }

    /// Exponential forgetting toward the observed bin.
    fn absorb(&mut self, i: usize, bin: u32, rate: f32) {
        let base = i * MAX_FEATURES;
        let used = self.used[i] as usize;
        let slot = &mut self.weights[base..base + used];
        slot.iter_mut().for_each(|w| *w *= 1.0 - rate);
        if let Some(k) = (0..used).find(|&k| self.bins[base + k] == bin) {
            self.weights[base + k] += rate;
            return;
        }
        let k = if used < MAX_FEATURES {
            self.used[i] += 1;
            used
        } else {
            (0..used)
                .min_by(|&a, &b| self.weights[base + a].total_cmp(&self.weights[base + b]))
                .unwrap()
        };
        self.bins[base + k] = bin;
        self.weights[base + k] = rate;
    }

    fn check_frame(&self, frame: &ImageBuffer) -> Result<()> {
        if frame.dims() != (self.height, self.width) || frame.channels() != self.channels {
            return Err(Error::invalid(format!(
                "frame {}x{}x{} does not match model {}x{}x{}",
                frame.height(),
                frame.width(),
                frame.channels(),
                self.height,
                self.width,
                self.channels
            )));
        }
        Ok(())
    }

    /// Posterior foreground probability for every pixel of `frame`, without updating.
    pub fn classify(&self, frame: &ImageBuffer) -> Result<ImageBuffer> {
        self.check_frame(frame)?;
        let pb = self.cfg.prior_background;
        let uniform = (self.cfg.num_bins as f32).powi(self.channels as i32).recip();
        let fg_term = (1.0 - pb) * uniform;
        let mut out = ImageBuffer::zeros(self.height, self.width, 1);
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let bg_term = pb * self.likelihood(i, self.quantize(frame, i));
            *o = (fg_term / (fg_term + bg_term)).clamp(0.0, 1.0);
        }
        Ok(out)
    }

    /// Classify `frame`, then update background pixels' histograms.
    pub fn update(&mut self, frame: &ImageBuffer) -> Result<ImageBuffer> {
        let mut post = self.classify(frame)?;
        let s = self.cfg.smoothing;
        if let Some(prev) = &self.last_posterior {
            if s > 0.0 {
                for (p, q) in post.data_mut().iter_mut().zip(prev) {
                    *p = s * q + (1.0 - s) * *p;
                }
            }
        }
        let initializing = self.frames_seen < self.cfg.init_frames;
        let n = self.frames_seen as f32 + 1.0;
        for i in 0..self.height * self.width {
            let bin = self.quantize(frame, i);
            if initializing {
                self.absorb(i, bin, 1.0 / n);
            } else if post.data()[i] < 0.5 {
                self.absorb(i, bin, self.cfg.learning_rate);
            }
        }
        self.frames_seen += 1;
        self.last_posterior = Some(post.data().to_vec());
        Ok(post)
    }
}

/// Seed a model from one initialization frame.
pub fn fg_init(frame: &ImageBuffer, cfg: &ForegroundCfg) -> Result<ForegroundModel> {
    cfg.validate()?;
    let (h, w) = frame.dims();
    if h == 0 || w == 0 {
        return Err(Error::invalid("empty initialization frame"));
    }
    let c = frame.channels();
    if (cfg.num_bins as f64).powi(c as i32) > u32::MAX as f64 {
        return Err(Error::invalid("too many color bins"));
    }
    let mut model = ForegroundModel {
        cfg: *cfg,
        height: h,
        width: w,
        channels: c,
        bins: vec![0; h * w * MAX_FEATURES],
        weights: vec![0.0; h * w * MAX_FEATURES],
        used: vec![0; h * w],
        last_posterior: None,
        frames_seen: 0,
    };
    for i in 0..h * w {
        let bin = model.quantize(frame, i);
        model.absorb(i, bin, 1.0);
    }
    model.frames_seen = 1;
    Ok(model)
}

/// Functional form of [`ForegroundModel::update`].
pub fn fg_update(mut model: ForegroundModel, frame: &ImageBuffer) -> Result<(ForegroundModel, ImageBuffer)> {
    let post = model.update(frame)?;
    Ok((model, post))
}
