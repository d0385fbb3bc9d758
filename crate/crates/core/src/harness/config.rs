//! Flat `key = value` pipeline configuration with `#` comments.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::appearance::{AppearanceTrainCfg, AugmentSet};
use crate::error::{Error, Result};
use crate::gesture::{GestureTrainCfg, TargetMode, DEFAULT_EPS_VAR, DEFAULT_THRESHOLD};
use crate::motion::{ForegroundCfg, InputCombo, TvL1Params, DEFAULT_FLOW_NORM_MAX};
use crate::nn::{format_sites, parse_sites, DropoutSite, Widths};

use super::synth::{SynthCfg, Variant};

/// Environment variable that overrides `seed`.
pub const SEED_ENV: &str = "GESTBOOT_SEED";

/// How gesture-network outputs become pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelCfg {
    pub eps_var: f64,
    pub threshold: f64,
    pub targets: TargetMode,
    /// Flip targets within this many pixels of the label boundary...
    pub corrupt_band: usize,
    /// ...each with this probability.
    pub corrupt_prob: f64,
}

impl Default for LabelCfg {
    fn default() -> Self {
        Self {
            eps_var: DEFAULT_EPS_VAR,
            threshold: DEFAULT_THRESHOLD,
            targets: TargetMode::Binary,
            corrupt_band: 0,
            corrupt_prob: 0.0,
        }
    }
}

/// Augmentation settings that can be written in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct AugSettings {
    pub enabled: AugmentSet,
    pub backgrounds: usize,
    pub crop_fraction: f64,
    pub crop_prob: f64,
    pub hflip_prob: f64,
    pub brightness_prob: f64,
}

impl Default for AugSettings {
    fn default() -> Self {
        Self {
            enabled: AugmentSet::ALL,
            backgrounds: 30,
            crop_fraction: 0.8,
            crop_prob: 0.5,
            hflip_prob: 0.5,
            brightness_prob: 0.5,
        }
    }
}

/// Where real frames come from when synthetic data is not used.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InputDirs {
    /// One directory of PNG frames per gesture video; empty means synthesize.
    pub gesture: Vec<PathBuf>,
    pub test_frames: Option<PathBuf>,
    pub test_masks: Option<PathBuf>,
    pub backgrounds: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Gesture videos recorded by the user.
    pub videos: usize,
    pub synth: SynthCfg,
    pub inputs: InputDirs,
    pub tvl1: TvL1Params,
    pub foreground: ForegroundCfg,
    pub flow_norm_max: f32,
    /// Load instead of training when set and present.
    pub gesture_params: Option<PathBuf>,
    /// Seed of the synthetic people and scenes the gesture net trains on.
    pub gesture_seed: u64,
    pub gesture_sequences: usize,
    pub gesture: GestureTrainCfg,
    pub label: LabelCfg,
    pub appearance: AppearanceTrainCfg,
    pub aug: AugSettings,
    pub eval_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("gestboot-out"),
            videos: 1,
            synth: SynthCfg {
                noise: 0.004,
                ..Default::default()
            },
            inputs: InputDirs::default(),
            tvl1: TvL1Params::default(),
            foreground: ForegroundCfg::default(),
            flow_norm_max: DEFAULT_FLOW_NORM_MAX,
            gesture_params: None,
            gesture_seed: 7,
            gesture_sequences: 3,
            gesture: GestureTrainCfg {
                epochs: 10,
                base_lr: 0.05,
                ..Default::default()
            },
            label: LabelCfg::default(),
            appearance: AppearanceTrainCfg::default(),
            aug: AugSettings::default(),
            eval_threshold: 0.5,
        }
    }
}

trait ConfigValue: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! via_fromstr {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_fromstr!(usize, u64, f64, f32, bool, Variant, InputCombo, AugmentSet);

impl ConfigValue for PathBuf {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            return Err("empty path".into());
        }
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Option<PathBuf> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }
    fn render(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
}

impl ConfigValue for Vec<PathBuf> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        Ok(s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(PathBuf::from).collect())
    }
    fn render(&self) -> String {
        self.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for BTreeSet<DropoutSite> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        parse_sites(s).map_err(|e| e.to_string())
    }
    fn render(&self) -> String {
        format_sites(self)
    }
}

impl ConfigValue for Widths {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
            .collect::<std::result::Result<_, _>>()?;
        v.try_into().map_err(|v: Vec<usize>| format!("expected 6 widths, got {}", v.len()))
    }
    fn render(&self) -> String {
        self.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for TargetMode {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "binary" => Ok(TargetMode::Binary),
            "continuous" => Ok(TargetMode::Continuous),
            other => Err(format!("expected binary or continuous, got '{other}'")),
        }
    }
    fn render(&self) -> String {
        match self {
            TargetMode::Binary => "binary".into(),
            TargetMode::Continuous => "continuous".into(),
        }
    }
}

struct Field {
    key: &'static str,
    get: fn(&PipelineConfig) -> String,
    set: fn(&mut PipelineConfig, &str) -> std::result::Result<(), String>,
}

macro_rules! fields {
    ($($key:literal => $($f:ident).+;)*) => {
        static FIELDS: &[Field] = &[$(
            Field {
                key: $key,
                get: |c| ConfigValue::render(&c.$($f).+),
                set: |c, v| {
                    c.$($f).+ = ConfigValue::parse(v)?;
                    Ok(())
                },
            },
        )*];
    };
}

fields! {
    "seed" => seed;
    "out_dir" => out_dir;
    "videos" => videos;
    "synth.height" => synth.height;
    "synth.width" => synth.width;
    "synth.phase_frames" => synth.phase_frames;
    "synth.test_frames" => synth.test_frames;
    "synth.noise" => synth.noise;
    "synth.jitter" => synth.jitter;
    "synth.variant" => synth.variant;
    "synth.dark_level" => synth.dark_level;
    "synth.camouflage" => synth.camouflage;
    "synth.person" => synth.person_seed;
    "synth.scene" => synth.scene_seed;
    "input.gesture_dirs" => inputs.gesture;
    "input.test_frames" => inputs.test_frames;
    "input.test_masks" => inputs.test_masks;
    "input.backgrounds" => inputs.backgrounds;
    "flow.lambda" => tvl1.lambda;
    "flow.epsilon" => tvl1.epsilon;
    "flow.max_iters" => tvl1.max_iters;
    "flow.levels" => tvl1.pyramid_levels;
    "flow.scale" => tvl1.pyramid_scale;
    "flow.warps" => tvl1.warps_per_level;
    "flow.tau" => tvl1.tau;
    "flow.theta" => tvl1.theta;
    "flow.norm_max" => flow_norm_max;
    "bg.prior" => foreground.prior_background;
    "bg.learning_rate" => foreground.learning_rate;
    "bg.smoothing" => foreground.smoothing;
    "bg.bins" => foreground.num_bins;
    "bg.init_frames" => foreground.init_frames;
    "gesture.params" => gesture_params;
    "gesture.seed" => gesture_seed;
    "gesture.sequences" => gesture_sequences;
    "gesture.epochs" => gesture.epochs;
    "gesture.lr" => gesture.base_lr;
    "gesture.lr_power" => gesture.lr_power;
    "gesture.dropout" => gesture.dropout_ratio;
    "gesture.sites" => gesture.dropout_sites;
    "gesture.w_hand" => gesture.w_hand;
    "gesture.w_bg" => gesture.w_bg;
    "gesture.inputs" => gesture.inputs;
    "gesture.widths" => gesture.widths;
    "mc.samples" => gesture.mc_samples;
    "label.eps_var" => label.eps_var;
    "label.threshold" => label.threshold;
    "label.targets" => label.targets;
    "label.corrupt_band" => label.corrupt_band;
    "label.corrupt_prob" => label.corrupt_prob;
    "appearance.epochs" => appearance.epochs;
    "appearance.lr" => appearance.base_lr;
    "appearance.lr_power" => appearance.lr_power;
    "appearance.dropout" => appearance.dropout_ratio;
    "appearance.sites" => appearance.dropout_sites;
    "appearance.alpha" => appearance.alpha;
    "appearance.precision" => appearance.use_precision;
    "appearance.frames_per_video" => appearance.frames_per_video;
    "appearance.widths" => appearance.widths;
    "aug.enabled" => aug.enabled;
    "aug.backgrounds" => aug.backgrounds;
    "aug.crop_fraction" => aug.crop_fraction;
    "aug.crop_prob" => aug.crop_prob;
    "aug.hflip_prob" => aug.hflip_prob;
    "aug.brightness_prob" => aug.brightness_prob;
    "eval.threshold" => eval_threshold;
}

impl PipelineConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        FIELDS.iter().map(|f| f.key)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        FIELDS.iter().find(|f| f.key == key).map(|f| (f.get)(self))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let field = FIELDS
            .iter()
            .find(|f| f.key == key)
            .ok_or_else(|| Error::config(key, "unknown key"))?;
        (field.set)(self, value).map_err(|m| Error::config(key, m))
    }

    /// Parse config text over the defaults. Later duplicates are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file and apply the `GESTBOOT_SEED` override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.set("seed", s.trim()).map_err(|_| Error::config(SEED_ENV, format!("not a seed: '{s}'")))?;
        }
        Ok(())
    }

    /// Every key with its effective value, one per line, in canonical order.
    pub fn snapshot(&self) -> String {
        FIELDS
            .iter()
            .map(|f| format!("{} = {}\n", f.key, (f.get)(self)))
            .collect()
    }

    /// Keys whose values differ from `other`.
    pub fn diff(&self, other: &PipelineConfig) -> BTreeMap<&'static str, String> {
        FIELDS
            .iter()
            .filter(|f| (f.get)(self) != (f.get)(other))
            .map(|f| (f.key, (f.get)(self)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |key: &str, r: Result<()>| r.map_err(|e| Error::config(key, e.to_string()));
        wrap("synth", self.synth.validate())?;
        wrap("flow", self.tvl1.validate())?;
        wrap("bg", self.foreground.validate())?;
        wrap("gesture", self.gesture.validate())?;
        wrap("appearance", self.appearance.validate())?;
        if self.videos == 0 && self.inputs.gesture.is_empty() {
            return Err(Error::config("videos", "must be >= 1"));
        }
        if self.gesture_sequences == 0 {
            return Err(Error::config("gesture.sequences", "must be >= 1"));
        }
        if !(self.flow_norm_max > 0.0) {
            return Err(Error::config("flow.norm_max", "must be > 0"));
        }
        for (key, v) in [("label.threshold", self.label.threshold), ("eval.threshold", self.eval_threshold)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(key, "must lie in (0, 1)"));
            }
        }
        if !(self.label.eps_var > 0.0) {
            return Err(Error::config("label.eps_var", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.label.corrupt_prob) {
            return Err(Error::config("label.corrupt_prob", "must lie in [0, 1]"));
        }
        if !(self.aug.crop_fraction > 0.0 && self.aug.crop_fraction <= 1.0) {
            return Err(Error::config("aug.crop_fraction", "must lie in (0, 1]"));
        }
        for (key, v) in [
            ("aug.crop_prob", self.aug.crop_prob),
            ("aug.hflip_prob", self.aug.hflip_prob),
            ("aug.brightness_prob", self.aug.brightness_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, "must lie in [0, 1]"));
            }
        }
        if self.inputs.test_frames.is_some() != self.inputs.test_masks.is_some() {
            return Err(Error::config("input.test_masks", "test frames and masks must be given together"));
        }
        Ok(())
    }
}
