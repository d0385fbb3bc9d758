use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use gestboot_core::harness::{
    ablation_jsonl, ablation_runner, ablation_table, build_dataset, f1_score_frames, finalize_labels,
    gesture_examples_from_dirs, image_to_blob, label_stacks, mc_rng, motion_cfg, read_image, read_image_dir, read_labels,
    run_pipeline, segment_frames, train_configured_gesture_net, train_gesture_on, train_on_videos, write_blob_dir, write_labels, write_png_dir, write_uncertainty,
    PipelineConfig, Study, Video,
};
use gestboot_core::image::{to_gray, write_blob, write_png};
use gestboot_core::motion::{extract_motion_stacks, fg_init, tvl1_flow, MotionStack};
use gestboot_core::nn::SegNet;
use gestboot_core::{Error, ImageBuffer};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_ASSERT: u8 = 3;

#[derive(Parser)]
#[command(name = "gestboot", version, about = "Gesture-bootstrapped personalized hand segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set mc.samples=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> gestboot_core::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => {
                let mut c = PipelineConfig::default();
                c.apply_env()?;
                c
            }
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic gesture videos, test sequence and backgrounds.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// TV-L1 flow between two frames, written as a [2,H,W] blob.
    Flow {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        next: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Foreground probability of frames 1.. of a sequence.
    Bgsub {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the motion-only gesture network on synthetic people.
    TrainGesture {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Recorded sequences with `frames/` and `masks/`; synthetic people when absent.
        #[arg(long)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// MC-dropout pseudo-labels for one gesture video.
    PseudoLabel {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, alias = "params")]
        gesture_net: PathBuf,
        /// Frame directory; motion stacks are extracted first.
        #[arg(long, conflicts_with = "stacks", required_unless_present = "stacks")]
        frames: Option<PathBuf>,
        /// Directory of precomputed `[3,H,W]` motion-stack blobs.
        #[arg(long)]
        stacks: Option<PathBuf>,
        /// Index of the video within the run; selects the random streams.
        #[arg(long, default_value_t = 0)]
        video: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the appearance network on frames and pseudo-labels.
    TrainAppearance {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Frame directory per video (repeat in the same order as --labels).
        #[arg(long, required = true)]
        frames: Vec<PathBuf>,
        /// Label directory per video.
        #[arg(long, required = true)]
        labels: Vec<PathBuf>,
        #[arg(long)]
        backgrounds: Option<PathBuf>,
        /// Train with identity instead of pseudo-label precision.
        #[arg(long)]
        no_precision: bool,
        /// Augmentations to enable, e.g. `brightness,transform`; `none` disables all.
        #[arg(long)]
        aug: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hand probability maps from a trained appearance network.
    Segment {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, alias = "params")]
        net: PathBuf,
        /// A frame directory or a single image.
        #[arg(long, alias = "in")]
        frames: PathBuf,
        /// Write binary PNG masks at this threshold instead of probability blobs.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel F1 of predictions against ground-truth masks.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Exit with status 3 when F1 falls below this value.
        #[arg(long = "assert", value_name = "MIN_F1")]
        assert_min: Option<f64>,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run one ablation study and print its table.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// inputs, augmentation, dropout, videos or uncertainty.
        #[arg(long)]
        study: String,
        /// Directory for table.txt and results.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline; artifacts go to `out_dir`.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overrides `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Outcome {
    Done,
    AssertFailed,
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gray(img: ImageBuffer) -> gestboot_core::Result<ImageBuffer> {
    if img.channels() == 3 {
        to_gray(&img)
    } else {
        Ok(img)
    }
}

fn binarize(prob: &ImageBuffer, threshold: f64) -> ImageBuffer {
    prob.map(|p| if f64::from(p) >= threshold { 1.0 } else { 0.0 })
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Synth { cfg, out } => {
            let cfg = cfg.load()?;
            let data = build_dataset(&cfg)?;
            for (k, v) in data.videos.iter().enumerate() {
                let dir = out.join(format!("video{k}"));
                write_png_dir(&dir.join("frames"), &v.frames)?;
                if let Some(m) = &v.masks {
                    write_png_dir(&dir.join("masks"), m)?;
                }
            }
            write_png_dir(&out.join("test/frames"), &data.test.frames)?;
            if let Some(m) = &data.test.masks {
                write_png_dir(&out.join("test/masks"), m)?;
            }
            write_png_dir(&out.join("backgrounds"), &data.backgrounds)?;
            write_text(&out.join("config.snapshot"), &cfg.snapshot())?;
            println!("wrote {} video(s), {} test frames, {} backgrounds to {}", data.videos.len(), data.test.frames.len(), data.backgrounds.len(), out.display());
        }
        Command::Flow { cfg, prev, next, out } => {
            let cfg = cfg.load()?;
            let a = gray(read_image(&prev)?)?;
            let b = gray(read_image(&next)?)?;
            let flow = tvl1_flow(&a, &b, &cfg.tvl1)?;
            ensure_parent(&out)?;
            write_blob(&flow.to_blob(), &out)?;
            println!("mean |flow| {:.6} px", flow.mean_magnitude());
        }
        Command::Bgsub { cfg, frames, out } => {
            let cfg = cfg.load()?;
            let frames = read_image_dir(&frames)?;
            let Some(first) = frames.first() else { bail!(Error::InvalidInput("no frames".into())) };
            let mut model = fg_init(first, &cfg.foreground)?;
            let posts = frames[1..].iter().map(|f| model.update(f)).collect::<gestboot_core::Result<Vec<_>>>()?;
            write_blob_dir(&out, &posts)?;
            println!("wrote {} foreground maps to {}", posts.len(), out.display());
        }
        Command::TrainGesture { cfg, data, out } => {
            let cfg = cfg.load()?;
            let (net, losses) = if data.is_empty() {
                train_configured_gesture_net(&cfg)?
            } else {
                train_gesture_on(&cfg, &gesture_examples_from_dirs(&cfg, &data)?)?
            };
            ensure_parent(&out)?;
            net.save(&out)?;
            for (e, l) in losses.iter().enumerate() {
                println!("epoch {e:>3} loss {l:.6}");
            }
        }
        Command::PseudoLabel { cfg, gesture_net, frames, stacks, video, out } => {
            let cfg = cfg.load()?;
            let net = SegNet::load(&gesture_net)?;
            let stacks: Vec<MotionStack> = match (frames, stacks) {
                (Some(dir), _) => {
                    let s = extract_motion_stacks(&read_image_dir(&dir)?, &motion_cfg(&cfg))?;
                    write_blob_dir(&out.join("stacks"), &s.iter().map(|m| m.image().clone()).collect::<Vec<_>>())?;
                    s
                }
                (None, Some(dir)) => read_image_dir(&dir)?.into_iter().map(MotionStack).collect(),
                (None, None) => bail!(Error::Usage("give --frames or --stacks".into())),
            };
            let (maps, labels) = label_stacks(&net, &stacks, &cfg, &mut mc_rng(&cfg, video))?;
            write_uncertainty(&out.join("uncertainty"), &maps)?;
            write_labels(&out.join("labels"), &finalize_labels(&cfg, video, &labels))?;
            println!("wrote {} pseudo-labels to {}", labels.len(), out.display());
        }
        Command::TrainAppearance { cfg, frames, labels, backgrounds, no_precision, aug, out } => {
            let mut cfg = cfg.load()?;
            if no_precision {
                cfg.set("appearance.precision", "false")?;
            }
            if let Some(list) = aug {
                cfg.set("aug.enabled", &list)?;
            }
            if frames.len() != labels.len() {
                bail!(Error::Usage("--frames and --labels must be given the same number of times".into()));
            }
            let videos = frames
                .iter()
                .map(|d| Ok(Video { frames: read_image_dir(d)?, masks: None }))
                .collect::<gestboot_core::Result<Vec<_>>>()?;
            let labels = labels.iter().map(|d| read_labels(d)).collect::<gestboot_core::Result<Vec<_>>>()?;
            let backgrounds = match backgrounds {
                Some(d) => read_image_dir(&d)?,
                None => Vec::new(),
            };
            let (net, losses) = train_on_videos(&cfg, &videos, &labels, &backgrounds)?;
            ensure_parent(&out)?;
            net.save(&out)?;
            for (e, l) in losses.iter().enumerate() {
                println!("epoch {e:>3} loss {l:.6}");
            }
        }
        Command::Segment { cfg, net, frames, threshold, out } => {
            let cfg = cfg.load()?;
            let net = SegNet::load(&net)?;
            let single = frames.is_file();
            let images = if single { vec![read_image(&frames)?] } else { read_image_dir(&frames)? };
            let preds = segment_frames(&net, &images, cfg.appearance.alpha)?;
            match (single, threshold) {
                (true, Some(th)) => {
                    ensure_parent(&out)?;
                    write_png(&binarize(&preds[0], th), &out)?;
                }
                (true, None) => {
                    ensure_parent(&out)?;
                    write_blob(&image_to_blob(&preds[0]), &out)?;
                }
                (false, Some(th)) => write_png_dir(&out, &preds.iter().map(|p| binarize(p, th)).collect::<Vec<_>>())?,
                (false, None) => write_blob_dir(&out, &preds)?,
            }
            println!("wrote {} map(s) to {}", preds.len(), out.display());
        }
        Command::Eval { pred, truth, threshold, assert_min, report } => {
            let preds = read_image_dir(&pred)?;
            let truths = read_image_dir(&truth)?;
            if preds.len() != truths.len() {
                bail!(Error::InvalidInput(format!("{} predictions but {} masks", preds.len(), truths.len())));
            }
            let r = f1_score_frames(&preds, &truths, threshold)?;
            println!("precision {:.4} recall {:.4} f1 {:.4} ({} frames)", r.precision, r.recall, r.f1, r.frames.len());
            if let Some(path) = report {
                write_text(&path, &(serde_json::to_string_pretty(&r)? + "\n"))?;
            }
            if let Some(min) = assert_min {
                if r.f1 < min {
                    eprintln!("FAIL: f1 {:.4} < {min}", r.f1);
                    return Ok(Outcome::AssertFailed);
                }
                println!("PASS: f1 {:.4} >= {min}", r.f1);
            }
        }
        Command::Ablate { cfg, study, out } => {
            let study: Study = study.parse()?;
            let cfg = cfg.load()?;
            let results = ablation_runner(study, &cfg)?;
            let table = ablation_table(&results);
            print!("{table}");
            if let Some(dir) = out {
                write_text(&dir.join("table.txt"), &table)?;
                write_text(&dir.join("results.jsonl"), &ablation_jsonl(&results))?;
            }
        }
        Command::Pipeline { cfg, out } => {
            let mut cfg = cfg.load()?;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let report = run_pipeline(&cfg)?;
            if let Some(p) = &report.pseudo_label {
                println!("pseudo-label f1 {:.4}", p.f1);
            }
            println!("test precision {:.4} recall {:.4} f1 {:.4}", report.test.precision, report.test.recall, report.test.f1);
            println!("artifacts in {}", cfg.out_dir.display());
        }
    }
    Ok(Outcome::Done)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. } | Error::Usage(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::AssertFailed) => ExitCode::from(EXIT_ASSERT),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
