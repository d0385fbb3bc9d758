//! End-to-end orchestration: motion cues, gesture net, pseudo-labels,
//! appearance training and evaluation.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::artifacts::{
    read_image_dir, stored_label, write_blob_dir, write_labels, write_png_dir, write_uncertainty,
};
use super::config::PipelineConfig;
use super::metrics::{f1_score_frames, F1Report};
use super::synth::{
    synth_background_views, synth_gesture_sequence, synth_test_sequence, SynthCfg, Variant,
};
use crate::appearance::{segment, select_frames, train_appearance_net, AugmentCfg};
use crate::error::{Error, Result};
use crate::gesture::{
    make_pseudo_label_with, mc_predict, train_gesture_net, GestureExample, PseudoLabel, UncertaintyMap,
};
use crate::image::ImageBuffer;
use crate::motion::{extract_motion_stacks, MotionCfg, MotionStack};
use crate::nn::SegNet;
use crate::rng::RngStream;

const TAG_VIDEO: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_BACKGROUND: u64 = 3;
const TAG_MC: u64 = 4;
const TAG_CORRUPT: u64 = 5;
const TAG_APPEARANCE: u64 = 6;
const TAG_PERSON: u64 = 7;

/// A frame sequence, with ground truth when it is known.
#[derive(Debug, Clone)]
pub struct Video {
    pub frames: Vec<ImageBuffer>,
    pub masks: Option<Vec<ImageBuffer>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub videos: Vec<Video>,
    pub test: Video,
    pub backgrounds: Vec<ImageBuffer>,
}

pub fn motion_cfg(cfg: &PipelineConfig) -> MotionCfg {
    MotionCfg {
        tvl1: cfg.tvl1,
        foreground: cfg.foreground,
        flow_norm_max: cfg.flow_norm_max,
    }
}

/// Synthetic person and scene of the user, keyed by the run seed.
pub fn user_synth_cfg(cfg: &PipelineConfig) -> SynthCfg {
    let root = RngStream::new(cfg.seed).derive(TAG_PERSON);
    SynthCfg {
        person_seed: root.derive(cfg.synth.person_seed).next_u64(),
        scene_seed: root.derive(cfg.synth.scene_seed ^ 0x5ce0e).next_u64(),
        ..cfg.synth.clone()
    }
}

fn synth_video(scfg: &SynthCfg, seed: u64, k: usize) -> Result<Video> {
    let seq = synth_gesture_sequence(scfg, &mut RngStream::new(seed).derive(TAG_VIDEO).derive(k as u64))?;
    Ok(Video {
        frames: seq.frames,
        masks: Some(seq.masks),
    })
}

/// Load the configured frame directories, or render the synthetic user.
/// Synthetic video `k` does not depend on how many videos are requested.
pub fn build_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let scfg = user_synth_cfg(cfg);
    let root = RngStream::new(cfg.seed);
    let videos = if cfg.inputs.gesture.is_empty() {
        (0..cfg.videos).map(|k| synth_video(&scfg, cfg.seed, k)).collect::<Result<Vec<_>>>()?
    } else {
        cfg.inputs
            .gesture
            .iter()
            .map(|dir| {
                let frames = read_image_dir(dir).map_err(|e| Error::config("input.gesture_dirs", e.to_string()))?;
                if frames.len() < 2 {
                    return Err(Error::config("input.gesture_dirs", format!("{} holds fewer than 2 frames", dir.display())));
                }
                Ok(Video { frames, masks: None })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let test = match (&cfg.inputs.test_frames, &cfg.inputs.test_masks) {
        (Some(f), Some(m)) => {
            let frames = read_image_dir(f).map_err(|e| Error::config("input.test_frames", e.to_string()))?;
            let masks = read_image_dir(m).map_err(|e| Error::config("input.test_masks", e.to_string()))?;
            if frames.is_empty() || frames.len() != masks.len() {
                return Err(Error::config("input.test_masks", "test frames and masks must be non-empty and pair up"));
            }
            Video { frames, masks: Some(masks) }
        }
        _ => {
            let seq = synth_test_sequence(&scfg, &mut root.derive(TAG_TEST))?;
            Video {
                frames: seq.frames,
                masks: Some(seq.masks),
            }
        }
    };
    let backgrounds = match &cfg.inputs.backgrounds {
        Some(dir) => read_image_dir(dir).map_err(|e| Error::config("input.backgrounds", e.to_string()))?,
        None if cfg.inputs.gesture.is_empty() => {
            synth_background_views(&scfg, cfg.aug.backgrounds, &mut root.derive(TAG_BACKGROUND))?
        }
        None => Vec::new(),
    };
    Ok(Dataset {
        videos,
        test,
        backgrounds,
    })
}

/// Motion-labelled sequences of synthetic people the gesture net learns from.
pub fn gesture_training_examples(cfg: &PipelineConfig) -> Result<Vec<GestureExample>> {
    let root = RngStream::new(cfg.gesture_seed);
    let mcfg = motion_cfg(cfg);
    let mut out = Vec::new();
    for k in 0..cfg.gesture_sequences as u64 {
        let scfg = SynthCfg {
            variant: Variant::Normal,
            person_seed: root.derive(k).next_u64(),
            scene_seed: root.derive(1000 + k).next_u64(),
            ..cfg.synth.clone()
        };
        let seq = synth_gesture_sequence(&scfg, &mut root.derive(2000 + k))?;
        let stacks = extract_motion_stacks(&seq.frames, &mcfg)?;
        out.extend(
            stacks
                .into_iter()
                .zip(seq.masks.into_iter().skip(1))
                .map(|(stack, mask)| GestureExample { stack, mask }),
        );
    }
    Ok(out)
}

/// Examples from recorded sequences, each a directory with `frames/` and `masks/`.
pub fn gesture_examples_from_dirs(cfg: &PipelineConfig, dirs: &[impl AsRef<Path>]) -> Result<Vec<GestureExample>> {
    let mcfg = motion_cfg(cfg);
    let mut out = Vec::new();
    for dir in dirs {
        let dir = dir.as_ref();
        let frames = read_image_dir(&dir.join("frames"))?;
        let masks = read_image_dir(&dir.join("masks"))?;
        if frames.len() != masks.len() || frames.len() < 2 {
            return Err(Error::invalid(format!("{}: need at least 2 frames with one mask each", dir.display())));
        }
        let stacks = extract_motion_stacks(&frames, &mcfg)?;
        out.extend(stacks.into_iter().zip(masks.into_iter().skip(1)).map(|(stack, mask)| GestureExample { stack, mask }));
    }
    Ok(out)
}

/// Train the gesture net from the configured synthetic people.
pub fn train_configured_gesture_net(cfg: &PipelineConfig) -> Result<(SegNet, Vec<f64>)> {
    train_gesture_on(cfg, &gesture_training_examples(cfg)?)
}

pub fn train_gesture_on(cfg: &PipelineConfig, examples: &[GestureExample]) -> Result<(SegNet, Vec<f64>)> {
    train_gesture_net(examples, &cfg.gesture, &mut RngStream::new(cfg.gesture_seed).derive(3000))
}

/// Load `gesture.params` when it exists, otherwise train and save it there.
pub fn obtain_gesture_net(cfg: &PipelineConfig) -> Result<(SegNet, Vec<f64>)> {
    if let Some(path) = &cfg.gesture_params {
        if path.exists() {
            let net = SegNet::load(path).map_err(|e| Error::config("gesture.params", e.to_string()))?;
            return Ok((net, Vec::new()));
        }
    }
    let (net, losses) = train_configured_gesture_net(cfg)?;
    if let Some(path) = &cfg.gesture_params {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        net.save(path)?;
    }
    Ok((net, losses))
}

/// Motion stacks, MC-dropout maps and pseudo-labels of one video.
#[derive(Debug, Clone)]
pub struct VideoLabels {
    pub stacks: Vec<MotionStack>,
    pub maps: Vec<UncertaintyMap>,
    pub labels: Vec<PseudoLabel>,
}

/// MC-dropout maps and pseudo-labels of precomputed motion stacks.
pub fn label_stacks(
    net: &SegNet,
    stacks: &[MotionStack],
    cfg: &PipelineConfig,
    rng: &mut RngStream,
) -> Result<(Vec<UncertaintyMap>, Vec<PseudoLabel>)> {
    let mut maps = Vec::with_capacity(stacks.len());
    let mut labels = Vec::with_capacity(stacks.len());
    for stack in stacks {
        let map = mc_predict(net, stack, &cfg.gesture, rng)?;
        labels.push(make_pseudo_label_with(&map, cfg.label.eps_var, cfg.label.threshold, cfg.label.targets)?);
        maps.push(map);
    }
    Ok((maps, labels))
}

pub fn label_video(net: &SegNet, frames: &[ImageBuffer], cfg: &PipelineConfig, rng: &mut RngStream) -> Result<VideoLabels> {
    let stacks = extract_motion_stacks(frames, &motion_cfg(cfg))?;
    let (maps, labels) = label_stacks(net, &stacks, cfg, rng)?;
    Ok(VideoLabels { stacks, maps, labels })
}

/// Gesture net plus labels for every video.
#[derive(Debug, Clone)]
pub struct Stage1 {
    pub gesture_net: SegNet,
    pub gesture_losses: Vec<f64>,
    pub videos: Vec<VideoLabels>,
}

/// Stream driving MC dropout for video `k`.
pub fn mc_rng(cfg: &PipelineConfig, k: usize) -> RngStream {
    RngStream::new(cfg.seed).derive(TAG_MC).derive(k as u64)
}

pub fn run_stage1(cfg: &PipelineConfig, data: &Dataset) -> Result<Stage1> {
    let (gesture_net, gesture_losses) = obtain_gesture_net(cfg)?;
    let videos = data
        .videos
        .iter()
        .enumerate()
        .map(|(k, v)| label_video(&gesture_net, &v.frames, cfg, &mut mc_rng(cfg, k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Stage1 {
        gesture_net,
        gesture_losses,
        videos,
    })
}

/// Pixels whose `band`-neighbourhood (Chebyshev) contains the other class.
pub fn boundary_band(label: &PseudoLabel, band: usize) -> Vec<bool> {
    let (h, w) = label.dims();
    let hand = |i: usize| label.t[i] >= 0.5;
    let b = band as isize;
    let mut out = vec![false; h * w];
    if band == 0 {
        return out;
    }
    for y in 0..h as isize {
        for x in 0..w as isize {
            let me = hand((y * w as isize + x) as usize);
            'scan: for yy in (y - b).max(0)..=(y + b).min(h as isize - 1) {
                for xx in (x - b).max(0)..=(x + b).min(w as isize - 1) {
                    if hand((yy * w as isize + xx) as usize) != me {
                        out[(y * w as isize + x) as usize] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}

/// Flip targets near the label boundary with probability `prob`.
pub fn corrupt_label(label: &mut PseudoLabel, band: usize, prob: f64, rng: &mut RngStream) {
    if band == 0 || prob <= 0.0 {
        return;
    }
    for (i, near) in boundary_band(label, band).into_iter().enumerate() {
        if near && rng.bernoulli(prob) {
            label.t[i] = 1.0 - label.t[i];
        }
    }
}

/// Labels of video `k` as the appearance net will see them: corrupted if
/// configured and quantized exactly as they are stored on disk.
pub fn finalize_labels(cfg: &PipelineConfig, k: usize, labels: &[PseudoLabel]) -> Vec<PseudoLabel> {
    let mut rng = RngStream::new(cfg.seed).derive(TAG_CORRUPT).derive(k as u64);
    labels
        .iter()
        .map(|l| {
            let mut l = l.clone();
            corrupt_label(&mut l, cfg.label.corrupt_band, cfg.label.corrupt_prob, &mut rng);
            stored_label(&l)
        })
        .collect()
}

/// Finalized labels of the first `videos` videos.
pub fn training_labels(cfg: &PipelineConfig, stage1: &Stage1, videos: usize) -> Vec<Vec<PseudoLabel>> {
    stage1.videos[..videos]
        .iter()
        .enumerate()
        .map(|(k, v)| finalize_labels(cfg, k, &v.labels))
        .collect()
}

pub fn augment_cfg(cfg: &PipelineConfig, backgrounds: &[ImageBuffer]) -> AugmentCfg {
    AugmentCfg {
        enabled: cfg.aug.enabled,
        crop_fraction: cfg.aug.crop_fraction,
        crop_prob: cfg.aug.crop_prob,
        hflip_prob: cfg.aug.hflip_prob,
        brightness_prob: cfg.aug.brightness_prob,
        background_images: backgrounds.to_vec(),
        ..Default::default()
    }
}

/// Appearance net, its epoch losses, test predictions and their F1.
#[derive(Debug, Clone)]
pub struct Stage2 {
    pub net: SegNet,
    pub losses: Vec<f64>,
    pub predictions: Vec<ImageBuffer>,
    pub test: F1Report,
}

/// Train the appearance net on video frames 1.. paired with their labels.
pub fn train_on_videos(
    cfg: &PipelineConfig,
    videos: &[Video],
    labels: &[Vec<PseudoLabel>],
    backgrounds: &[ImageBuffer],
) -> Result<(SegNet, Vec<f64>)> {
    let mut frames = Vec::new();
    let mut flat = Vec::new();
    for (video, labels) in videos.iter().zip(labels) {
        if video.frames.len() != labels.len() + 1 {
            return Err(Error::invalid(format!(
                "{} frames need {} labels, got {}",
                video.frames.len(),
                video.frames.len().saturating_sub(1),
                labels.len()
            )));
        }
        let window = select_frames(labels.len(), cfg.appearance.frames_per_video);
        frames.extend(video.frames[1..][window.clone()].iter().cloned());
        flat.extend(labels[window].iter().cloned());
    }
    let aug = augment_cfg(cfg, backgrounds);
    let mut rng = RngStream::new(cfg.seed).derive(TAG_APPEARANCE);
    train_appearance_net(&frames, &flat, &cfg.appearance, &aug, &mut rng)
}

pub fn segment_frames(net: &SegNet, frames: &[ImageBuffer], alpha: f64) -> Result<Vec<ImageBuffer>> {
    frames.iter().map(|f| segment(net, f, alpha)).collect()
}

/// Train on the first `labels.len()` videos and evaluate on the test set.
pub fn run_stage2(cfg: &PipelineConfig, data: &Dataset, labels: &[Vec<PseudoLabel>]) -> Result<Stage2> {
    let (net, losses) = train_on_videos(cfg, &data.videos, labels, &data.backgrounds)?;
    let predictions = segment_frames(&net, &data.test.frames, cfg.appearance.alpha)?;
    let masks = data.test.masks.as_ref().ok_or_else(|| Error::config("input.test_masks", "missing"))?;
    let test = f1_score_frames(&predictions, masks, cfg.eval_threshold)?;
    Ok(Stage2 {
        net,
        losses,
        predictions,
        test,
    })
}

/// Pseudo-label quality against the gesture videos' ground truth, if known.
pub fn pseudo_label_report(cfg: &PipelineConfig, data: &Dataset, labels: &[Vec<PseudoLabel>]) -> Result<Option<F1Report>> {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for (video, labels) in data.videos.iter().zip(labels) {
        let Some(masks) = &video.masks else { return Ok(None) };
        preds.extend(labels.iter().map(PseudoLabel::t_image));
        truths.extend(masks[1..].iter().cloned());
    }
    f1_score_frames(&preds, &truths, cfg.eval_threshold).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub videos: usize,
    pub gesture_losses: Vec<f64>,
    pub appearance_losses: Vec<f64>,
    pub pseudo_label: Option<F1Report>,
    pub test: F1Report,
    /// Effective configuration, in the config file format.
    pub config: String,
}

fn summary_line(name: &str, r: &F1Report) -> String {
    format!(
        "{name:<14} {:>8.4} {:>9.4} {:>6.4} {:>10} {:>10} {:>10}\n",
        r.precision, r.recall, r.f1, r.true_pos, r.false_pos, r.false_neg
    )
}

impl PipelineReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed {}  videos {}", self.seed, self.videos);
        let _ = writeln!(s, "{:<14} {:>8} {:>9} {:>6} {:>10} {:>10} {:>10}", "set", "precision", "recall", "f1", "tp", "fp", "fn");
        if let Some(p) = &self.pseudo_label {
            s.push_str(&summary_line("pseudo-label", p));
        }
        s.push_str(&summary_line("test", &self.test));
        s.push_str("\nper-frame test f1\n");
        for (i, f) in self.test.frames.iter().enumerate() {
            let _ = writeln!(s, "{i:>4} {:.4}", f.f1);
        }
        let fmt = |v: &[f64]| v.iter().map(|l| format!("{l:.6}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "\ngesture losses: {}", fmt(&self.gesture_losses));
        let _ = writeln!(s, "appearance losses: {}", fmt(&self.appearance_losses));
        s.push_str("\n# config\n");
        s.push_str(&self.config);
        s
    }

    /// One record per line: summaries, then per-frame test scores.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![serde_json::json!({
            "record": "run",
            "seed": self.seed,
            "videos": self.videos,
            "gesture_losses": self.gesture_losses,
            "appearance_losses": self.appearance_losses,
            "config": self.config,
        })];
        let summary = |set: &str, r: &F1Report| {
            serde_json::json!({
                "record": "summary", "set": set,
                "precision": r.precision, "recall": r.recall, "f1": r.f1,
                "true_pos": r.true_pos, "false_pos": r.false_pos, "false_neg": r.false_neg,
            })
        };
        if let Some(p) = &self.pseudo_label {
            lines.push(summary("pseudo_label", p));
        }
        lines.push(summary("test", &self.test));
        for (i, f) in self.test.frames.iter().enumerate() {
            lines.push(serde_json::json!({"record": "frame", "set": "test", "index": i, "f1": f.f1,
                "true_pos": f.true_pos, "false_pos": f.false_pos, "false_neg": f.false_neg}));
        }
        lines.iter().map(|v| format!("{v}\n")).collect()
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Run every stage in memory and return the report without touching disk
/// (except a configured `gesture.params` cache).
pub fn run_pipeline_in_memory(cfg: &PipelineConfig) -> Result<(PipelineReport, Dataset, Stage1, Stage2)> {
    cfg.validate()?;
    let data = build_dataset(cfg)?;
    let stage1 = run_stage1(cfg, &data)?;
    let labels = training_labels(cfg, &stage1, data.videos.len());
    let stage2 = run_stage2(cfg, &data, &labels)?;
    let report = PipelineReport {
        seed: cfg.seed,
        videos: data.videos.len(),
        gesture_losses: stage1.gesture_losses.clone(),
        appearance_losses: stage2.losses.clone(),
        pseudo_label: pseudo_label_report(cfg, &data, &labels)?,
        test: stage2.test.clone(),
        config: cfg.snapshot(),
    };
    Ok((report, data, stage1, stage2))
}

/// Run the pipeline and write every intermediate artifact under `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let (report, data, stage1, stage2) = run_pipeline_in_memory(cfg)?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("config.snapshot"), &report.config)?;
    stage1.gesture_net.save(out.join("gesture.params"))?;
    let labels = training_labels(cfg, &stage1, data.videos.len());
    for (k, ((video, vl), labels)) in data.videos.iter().zip(&stage1.videos).zip(&labels).enumerate() {
        let dir = out.join(format!("video{k}"));
        write_png_dir(&dir.join("frames"), &video.frames)?;
        if let Some(masks) = &video.masks {
            write_png_dir(&dir.join("masks"), masks)?;
        }
        let stacks: Vec<ImageBuffer> = vl.stacks.iter().map(|s| s.image().clone()).collect();
        write_blob_dir(&dir.join("stacks"), &stacks)?;
        write_uncertainty(&dir.join("uncertainty"), &vl.maps)?;
        write_labels(&dir.join("labels"), labels)?;
    }
    write_png_dir(&out.join("test/frames"), &data.test.frames)?;
    if let Some(masks) = &data.test.masks {
        write_png_dir(&out.join("test/masks"), masks)?;
    }
    if !data.backgrounds.is_empty() {
        write_png_dir(&out.join("backgrounds"), &data.backgrounds)?;
    }
    stage2.net.save(out.join("appearance.params"))?;
    write_blob_dir(&out.join("predictions"), &stage2.predictions)?;
    write_text(&out.join("report.txt"), &report.to_text())?;
    write_text(&out.join("report.jsonl"), &report.to_jsonl())?;
    Ok(report)
}

/// Load a config file (with the seed override) and run it.
pub fn run_pipeline_file(path: impl AsRef<Path>) -> Result<PipelineReport> {
    run_pipeline(&PipelineConfig::load(path)?)
}
