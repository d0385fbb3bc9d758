//! Procedural calibration-gesture and free-motion test sequences.
//!
//! A scene canvas somewhat larger than the frame is rendered once per
//! environment; every video views it through its own viewport. The hand is
//! an open palm with finger lobes (phase 1) or a fist ellipse (phase 2),
//! attached to an arm reaching the bottom edge. Its texture lives in hand
//! coordinates so it moves with the hand.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{hsv_to_rgb, ImageBuffer};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    #[default]
    Normal,
    /// Whole scene rendered at low brightness.
    Dark,
    /// Striped, non-skin hand texture.
    Glove,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Normal => "normal",
            Variant::Dark => "dark",
            Variant::Glove => "glove",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "normal" => Ok(Variant::Normal),
            "dark" => Ok(Variant::Dark),
            "glove" => Ok(Variant::Glove),
            other => Err(Error::invalid(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCfg {
    pub height: usize,
    pub width: usize,
    pub phase_frames: usize,
    pub test_frames: usize,
    /// Hand dimensions in pixels at scale 1.
    pub palm_rx: f32,
    pub palm_ry: f32,
    pub finger_len: f32,
    pub finger_width: f32,
    pub fist_rx: f32,
    pub fist_ry: f32,
    pub arm_half_width: f32,
    /// Maximum per-frame camera shake in pixels.
    pub jitter: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f32,
    /// Brightness multiplier of the dark variant.
    pub dark_level: f32,
    /// Render the hand with the background's own texture.
    pub camouflage: bool,
    pub variant: Variant,
    /// Identity of the person (hand appearance).
    pub person_seed: u64,
    /// Identity of the environment (scene canvas).
    pub scene_seed: u64,
}

impl Default for SynthCfg {
    fn default() -> Self {
        Self {
            height: 96,
            width: 128,
            phase_frames: 30,
            test_frames: 40,
            palm_rx: 10.0,
            palm_ry: 12.0,
            finger_len: 10.0,
            finger_width: 2.6,
            fist_rx: 11.0,
            fist_ry: 10.0,
            arm_half_width: 7.5,
            jitter: 0,
            noise: 0.01,
            dark_level: 0.35,
            camouflage: false,
            variant: Variant::Normal,
            person_seed: 1,
            scene_seed: 1,
        }
    }
}

impl SynthCfg {
    pub fn validate(&self) -> Result<()> {
        if self.height < 32 || self.width < 32 {
            return Err(Error::invalid("synthetic frames must be at least 32x32"));
        }
        if self.phase_frames < 5 {
            return Err(Error::invalid("each gesture phase needs at least 5 frames"));
        }
        if self.test_frames == 0 {
            return Err(Error::invalid("test_frames must be >= 1"));
        }
        let dims = [
            self.palm_rx,
            self.palm_ry,
            self.finger_len,
            self.finger_width,
            self.fist_rx,
            self.fist_ry,
            self.arm_half_width,
        ];
        if dims.iter().any(|d| !(*d > 0.0)) || !(self.noise >= 0.0) || !(self.dark_level > 0.0 && self.dark_level <= 1.0) {
            return Err(Error::invalid("hand dimensions, noise and dark level must be positive"));
        }
        Ok(())
    }

    fn margin(&self) -> usize {
        self.height.max(self.width) / 4
    }
}

/// Rendered frames with exact hand+arm masks and the hand centre per frame.
#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub frames: Vec<ImageBuffer>,
    pub masks: Vec<ImageBuffer>,
    pub centers: Vec<(f32, f32)>,
}

/// Smooth lattice noise in `[-1, 1]`.
struct ValueNoise {
    gw: usize,
    gh: usize,
    cell: f32,
    values: Vec<f32>,
}

impl ValueNoise {
    fn new(h: f32, w: f32, cell: f32, rng: &mut RngStream) -> Self {
        let gw = (w / cell).ceil() as usize + 2;
        let gh = (h / cell).ceil() as usize + 2;
        let values = (0..gw * gh).map(|_| rng.range(-1.0, 1.0) as f32).collect();
        Self { gw, gh, cell, values }
    }

    fn at(&self, x: f32, y: f32) -> f32 {
        let fx = (x / self.cell).clamp(0.0, (self.gw - 2) as f32);
        let fy = (y / self.cell).clamp(0.0, (self.gh - 2) as f32);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let s = |t: f32| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (s(fx - x0 as f32), s(fy - y0 as f32));
        let v = |yy: usize, xx: usize| self.values[yy * self.gw + xx];
        let top = v(y0, x0) * (1.0 - tx) + v(y0, x0 + 1) * tx;
        let bot = v(y0 + 1, x0) * (1.0 - tx) + v(y0 + 1, x0 + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

/// Person-specific hand colouring, in HSV.
struct HandLook {
    hue: f32,
    sat: f32,
    val: f32,
    mottle: ValueNoise,
    stripes: bool,
}

impl HandLook {
    fn sample(cfg: &SynthCfg) -> Self {
        let mut rng = RngStream::new(cfg.person_seed).derive(0x4841_4e44);
        let mottle = ValueNoise::new(64.0, 64.0, 5.0, &mut rng);
        match cfg.variant {
            Variant::Glove => Self {
                hue: rng.range(0.45, 0.75) as f32,
                sat: rng.range(0.5, 0.8) as f32,
                val: rng.range(0.45, 0.7) as f32,
                mottle,
                stripes: true,
            },
            _ => Self {
                hue: rng.range(0.03, 0.08) as f32,
                sat: rng.range(0.3, 0.55) as f32,
                val: rng.range(0.65, 0.9) as f32,
                mottle,
                stripes: false,
            },
        }
    }

    /// HSV at hand-local coordinates (pixels at scale 1, origin at palm centre).
    fn color(&self, lx: f32, ly: f32, shade: f32) -> [f32; 3] {
        let m = self.mottle.at(lx + 32.0, ly + 32.0);
        let mut v = self.val * shade + 0.06 * m;
        if self.stripes && (ly + 64.0).rem_euclid(6.0) < 3.0 {
            v -= 0.18;
        }
        [self.hue + 0.01 * m, (self.sat + 0.05 * m).clamp(0.0, 1.0), v.clamp(0.0, 1.0)]
    }
}

/// Hue band kept free of scene colours so the hand stays distinguishable.
fn scene_hue(rng: &mut RngStream, avoid: f32) -> f32 {
    loop {
        let h = rng.uniform() as f32;
        let d = (h - avoid).abs();
        if d.min(1.0 - d) > 0.14 {
            return h;
        }
    }
}

/// HSV scene canvas for one environment.
struct Scene {
    h: usize,
    w: usize,
    hsv: Vec<[f32; 3]>,
}

impl Scene {
    fn render(cfg: &SynthCfg, avoid_hue: f32) -> Self {
        let m = cfg.margin();
        let (h, w) = (cfg.height + 2 * m, cfg.width + 2 * m);
        let mut rng = RngStream::new(cfg.scene_seed).derive(0x5343_454e);
        let coarse = ValueNoise::new(h as f32, w as f32, 18.0, &mut rng);
        let fine = ValueNoise::new(h as f32, w as f32, 3.0, &mut rng);
        let (ha, hb) = (scene_hue(&mut rng, avoid_hue), scene_hue(&mut rng, avoid_hue));
        let (sa, va) = (rng.range(0.1, 0.5) as f32, rng.range(0.35, 0.75) as f32);
        let mut hsv = vec![[0.0f32; 3]; h * w];
        for y in 0..h {
            let t = y as f32 / h as f32;
            let hue = if t < 0.5 { ha } else { hb };
            for x in 0..w {
                let n = 0.12 * coarse.at(x as f32, y as f32) + 0.04 * fine.at(x as f32, y as f32);
                hsv[y * w + x] = [hue, sa, (va + n).clamp(0.0, 1.0)];
            }
        }
        let shapes = 8 + rng.below(5);
        for _ in 0..shapes {
            let hue = scene_hue(&mut rng, avoid_hue);
            let sat = rng.range(0.0, 0.8) as f32;
            let val = rng.range(0.2, 0.95) as f32;
            let cx = rng.range(0.0, w as f64) as f32;
            let cy = rng.range(0.0, h as f64) as f32;
            let rx = rng.range(5.0, w as f64 / 6.0) as f32;
            let ry = rng.range(5.0, h as f64 / 5.0) as f32;
            let disk = rng.bernoulli(0.4);
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = ((x as f32 - cx) / rx, (y as f32 - cy) / ry);
                    let inside = if disk { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                    if inside {
                        let n = 0.05 * fine.at(x as f32 + 7.0, y as f32 + 3.0);
                        hsv[y * w + x] = [hue, sat, (val + n).clamp(0.0, 1.0)];
                    }
                }
            }
        }
        Self { h, w, hsv }
    }

    fn at(&self, y: isize, x: isize) -> [f32; 3] {
        let yy = y.clamp(0, self.h as isize - 1) as usize;
        let xx = x.clamp(0, self.w as isize - 1) as usize;
        self.hsv[yy * self.w + xx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Palm,
    Fist,
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    cx: f32,
    cy: f32,
    scale: f32,
    shape: Shape,
}

fn in_ellipse(x: f32, y: f32, cx: f32, cy: f32, rx: f32, ry: f32) -> bool {
    let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

fn segment_distance(px: f32, py: f32, ax: f32, ay: f32, bx: f32, by: f32) -> f32 {
    let (vx, vy) = (bx - ax, by - ay);
    let t = (((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    let (qx, qy) = (ax + t * vx - px, ay + t * vy - py);
    (qx * qx + qy * qy).sqrt()
}

/// Hand-local coordinates and a shading factor if `(x, y)` is on hand or arm.
fn hit(cfg: &SynthCfg, pose: &Pose, x: f32, y: f32, frame_h: f32) -> Option<(f32, f32, f32)> {
    let s = pose.scale;
    let (lx, ly) = ((x - pose.cx) / s, (y - pose.cy) / s);
    match pose.shape {
        Shape::Palm => {
            if in_ellipse(lx, ly, 0.0, 0.0, cfg.palm_rx, cfg.palm_ry) {
                return Some((lx, ly, 1.0));
            }
            let top = -cfg.palm_ry * 0.7;
            for k in 0..4 {
                let fx = -cfg.palm_rx * 0.75 + k as f32 * cfg.palm_rx * 0.5;
                let len = cfg.finger_len * [0.85, 1.0, 0.95, 0.75][k];
                if in_ellipse(lx, ly, fx, top - len * 0.5, cfg.finger_width, len * 0.65) {
                    return Some((lx, ly, 0.97));
                }
            }
            let (tx, ty) = (cfg.palm_rx * 1.05, -cfg.palm_ry * 0.1);
            if segment_distance(lx, ly, tx - 3.0, ty + 3.0, tx + cfg.finger_len * 0.45, ty - cfg.finger_len * 0.35)
                <= cfg.finger_width
            {
                return Some((lx, ly, 0.95));
            }
        }
        Shape::Fist => {
            if in_ellipse(lx, ly, 0.0, 0.0, cfg.fist_rx, cfg.fist_ry) {
                let knuckle = if ly < -cfg.fist_ry * 0.4 { 0.92 } else { 0.86 };
                return Some((lx, ly, knuckle));
            }
        }
    }
    let wrist_y = pose.cy + cfg.palm_ry * 0.6 * s;
    let elbow_x = pose.cx - 0.35 * (frame_h + 20.0 - wrist_y);
    if segment_distance(x, y, pose.cx, wrist_y, elbow_x, frame_h + 20.0) <= cfg.arm_half_width * s {
        return Some((lx, ly, 0.9));
    }
    None
}

struct Renderer {
    cfg: SynthCfg,
    scene: Scene,
    look: HandLook,
}

impl Renderer {
    fn new(cfg: &SynthCfg) -> Result<Self> {
        cfg.validate()?;
        let look = HandLook::sample(cfg);
        Ok(Self {
            scene: Scene::render(cfg, look.hue),
            look,
            cfg: cfg.clone(),
        })
    }

    fn frame(&self, view: (isize, isize), pose: Option<&Pose>, rng: &mut RngStream) -> (ImageBuffer, ImageBuffer) {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let n = h * w;
        let mut hsv = ImageBuffer::zeros(h, w, 3);
        let mut mask = ImageBuffer::zeros(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                let bg = self.scene.at(y as isize + view.0, x as isize + view.1);
                let px = match pose.and_then(|p| hit(&self.cfg, p, x as f32, y as f32, h as f32)) {
                    Some((lx, ly, shade)) => {
                        mask.data_mut()[y * w + x] = 1.0;
                        if self.cfg.camouflage {
                            let off = (self.cfg.margin() / 2) as isize;
                            self.scene.at(ly as isize + off, lx as isize + off)
                        } else {
                            self.look.color(lx, ly, shade)
                        }
                    }
                    None => bg,
                };
                let v = if self.cfg.variant == Variant::Dark { px[2] * self.cfg.dark_level } else { px[2] };
                let d = hsv.data_mut();
                d[y * w + x] = px[0].rem_euclid(1.0);
                d[n + y * w + x] = px[1];
                d[2 * n + y * w + x] = v;
            }
        }
        let mut rgb = hsv_to_rgb(&hsv).expect("3-channel");
        let sigma = self.cfg.noise as f64;
        for v in rgb.data_mut() {
            let noisy = if sigma > 0.0 { *v + (sigma * rng.normal()) as f32 } else { *v };
            *v = (noisy.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        (rgb, mask)
    }

    fn viewport(&self, rng: &mut RngStream) -> (isize, isize) {
        let m = 2 * self.cfg.margin();
        (rng.below(m + 1) as isize, rng.below(m + 1) as isize)
    }

    fn shake(&self, base: (isize, isize), rng: &mut RngStream) -> (isize, isize) {
        let j = self.cfg.jitter as isize;
        if j == 0 {
            return base;
        }
        let mut d = || rng.below(2 * j as usize + 1) as isize - j;
        (base.0 + d(), base.1 + d())
    }

    fn sequence(&self, poses: &[Option<Pose>], rng: &mut RngStream) -> SynthSequence {
        let view = self.viewport(rng);
        let mut out = SynthSequence {
            frames: Vec::with_capacity(poses.len()),
            masks: Vec::with_capacity(poses.len()),
            centers: Vec::with_capacity(poses.len()),
        };
        for (i, pose) in poses.iter().enumerate() {
            let v = if i == 0 { view } else { self.shake(view, rng) };
            let (f, m) = self.frame(v, pose.as_ref(), rng);
            out.frames.push(f);
            out.masks.push(m);
            out.centers.push(pose.map_or((f32::NAN, f32::NAN), |p| (p.cx, p.cy)));
        }
        out
    }
}

fn gesture_poses(cfg: &SynthCfg) -> Vec<Option<Pose>> {
    let p = cfg.phase_frames;
    let start = -cfg.palm_rx * 1.6;
    let mid = cfg.width as f32 * 0.5;
    let cy = cfg.height as f32 * 0.52;
    let mut poses = vec![None];
    for k in 1..p {
        let t = k as f32 / (p - 1) as f32;
        poses.push(Some(Pose {
            cx: start + (mid - start) * t,
            cy,
            scale: 1.0,
            shape: Shape::Palm,
        }));
    }
    for k in 0..p {
        let t = (k + 1) as f32 / p as f32;
        poses.push(Some(Pose {
            cx: mid + (start - mid) * t,
            cy,
            scale: 1.0,
            shape: Shape::Fist,
        }));
    }
    poses
}

fn test_poses(cfg: &SynthCfg) -> Vec<Option<Pose>> {
    let (h, w) = (cfg.height as f32, cfg.width as f32);
    let n = cfg.test_frames;
    (0..n)
        .map(|k| {
            let t = k as f32 / n.max(2) as f32;
            let ang = std::f32::consts::TAU * 2.0 * t;
            let cx = w * (0.38 + 0.28 * t) + w * 0.16 * ang.sin();
            let cy = h * (0.62 - 0.2 * t) + h * 0.14 * ang.cos();
            let scale = 1.0 + 0.22 * (std::f32::consts::TAU * 2.0 * t).sin();
            let shape = if (k / 7) % 2 == 0 { Shape::Palm } else { Shape::Fist };
            Some(Pose { cx, cy, scale, shape })
        })
        .collect()
}

/// Calibration gesture: hand-free frame 0, open palm sliding from the left
/// edge to the centre, then a fist sliding back out.
pub fn synth_gesture_sequence(cfg: &SynthCfg, rng: &mut RngStream) -> Result<SynthSequence> {
    let r = Renderer::new(cfg)?;
    Ok(r.sequence(&gesture_poses(cfg), rng))
}

/// Held-out sequence: same person and scene, a fresh viewport and a free
/// path mixing circular, diagonal and scale motion.
pub fn synth_test_sequence(cfg: &SynthCfg, rng: &mut RngStream) -> Result<SynthSequence> {
    let r = Renderer::new(cfg)?;
    Ok(r.sequence(&test_poses(cfg), rng))
}

/// Hand-free views of the scene at random viewports.
pub fn synth_background_views(cfg: &SynthCfg, count: usize, rng: &mut RngStream) -> Result<Vec<ImageBuffer>> {
    let r = Renderer::new(cfg)?;
    Ok((0..count)
        .map(|_| {
            let view = r.viewport(rng);
            r.frame(view, None, rng).0
        })
        .collect())
}

/// Largest absolute Pearson correlation between two centre tracks, per
/// axis, after resampling both to a common length. Axes with no variance
/// are skipped.
pub fn trajectory_correlation(a: &[(f32, f32)], b: &[(f32, f32)]) -> f64 {
    let clean = |s: &[(f32, f32)]| -> Vec<(f64, f64)> {
        s.iter()
            .filter(|p| p.0.is_finite())
            .map(|&(x, y)| (x as f64, y as f64))
            .collect()
    };
    let (a, b) = (clean(a), clean(b));
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let resample = |s: &[(f64, f64)], axis: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let p = s[i * (s.len() - 1) / (n - 1)];
                if axis == 0 {
                    p.0
                } else {
                    p.1
                }
            })
            .collect()
    };
    let corr = |x: &[f64], y: &[f64]| -> Option<f64> {
        let mx = x.iter().sum::<f64>() / n as f64;
        let my = y.iter().sum::<f64>() / n as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (u, v) in x.iter().zip(y) {
            sxy += (u - mx) * (v - my);
            sxx += (u - mx).powi(2);
            syy += (v - my).powi(2);
        }
        (sxx > 1e-12 && syy > 1e-12).then(|| sxy / (sxx * syy).sqrt())
    };
    (0..2)
        .filter_map(|axis| corr(&resample(&a, axis), &resample(&b, axis)))
        .map(f64::abs)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthCfg {
        SynthCfg {
            height: 48,
            width: 64,
            phase_frames: 12,
            test_frames: 10,
            ..Default::default()
        }
    }

    #[test]
    fn gesture_layout() {
        let cfg = SynthCfg::default();
        let s = synth_gesture_sequence(&cfg, &mut RngStream::new(3)).unwrap();
        assert_eq!(s.frames.len(), 60);
        assert_eq!(s.masks[0].mean(), 0.0);
        for (f, m) in s.frames.iter().zip(&s.masks) {
            assert_eq!((f.dims(), f.channels()), ((96, 128), 3));
            assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(f.data().iter().all(|&v| (v * 255.0 - (v * 255.0).round()).abs() < 1e-4));
        }
        assert!(s.masks[30].mean() > 0.02);
    }

    #[test]
    fn mask_grows_while_hand_enters() {
        let s = synth_gesture_sequence(&SynthCfg::default(), &mut RngStream::new(4)).unwrap();
        let counts: Vec<f64> = s.masks[..10].iter().map(|m| m.mean()).collect();
        assert!(counts.windows(2).all(|w| w[1] >= w[0]), "{counts:?}");
        assert!(counts[9] > counts[1]);
    }

    #[test]
    fn camouflaged_still_binary() {
        let cfg = SynthCfg {
            camouflage: true,
            jitter: 0,
            ..small()
        };
        let s = synth_gesture_sequence(&cfg, &mut RngStream::new(5)).unwrap();
        assert!(s.masks.iter().all(|m| m.data().iter().all(|&v| v == 0.0 || v == 1.0)));
        assert!(s.masks[12].mean() > 0.0);
    }

    #[test]
    fn reproducible() {
        let cfg = SynthCfg { jitter: 1, ..small() };
        let a = synth_test_sequence(&cfg, &mut RngStream::new(9)).unwrap();
        let b = synth_test_sequence(&cfg, &mut RngStream::new(9)).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.masks, b.masks);
    }

    #[test]
    fn test_path_differs_from_gesture() {
        let cfg = SynthCfg::default();
        let g = synth_gesture_sequence(&cfg, &mut RngStream::new(1)).unwrap();
        let t = synth_test_sequence(&cfg, &mut RngStream::new(2)).unwrap();
        let c = trajectory_correlation(&g.centers, &t.centers);
        assert!(c < 0.5, "correlation {c}");
        assert!(t.masks.iter().all(|m| m.mean() > 0.01));
    }

    #[test]
    fn invalid_cfg() {
        assert!(synth_gesture_sequence(&SynthCfg { height: 16, ..small() }, &mut RngStream::new(0)).is_err());
        assert!(synth_gesture_sequence(&SynthCfg { phase_frames: 4, ..small() }, &mut RngStream::new(0)).is_err());
        assert!("purple".parse::<Variant>().is_err());
    }

    #[test]
    fn variants_change_appearance_only() {
        let base = small();
        let n = synth_gesture_sequence(&base, &mut RngStream::new(2)).unwrap();
        let d = synth_gesture_sequence(&SynthCfg { variant: Variant::Dark, ..base.clone() }, &mut RngStream::new(2)).unwrap();
        let g = synth_gesture_sequence(&SynthCfg { variant: Variant::Glove, ..base }, &mut RngStream::new(2)).unwrap();
        assert_eq!(n.masks, d.masks);
        assert_eq!(n.masks, g.masks);
        assert!(d.frames[5].mean() < 0.5 * n.frames[5].mean());
    }
}
