//! Controlled studies: each variant changes one factor of a base config and
//! all variants of a study share one dataset.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use super::config::PipelineConfig;
use super::metrics::{f1_score_frames, F1Report};
use super::pipeline::{build_dataset, motion_cfg, run_stage1, run_stage2, train_configured_gesture_net, training_labels};
use crate::error::{Error, Result};
use crate::gesture::predict_gesture;
use crate::motion::extract_motion_stacks;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Inputs,
    Augmentation,
    Dropout,
    Videos,
    Uncertainty,
}

impl Study {
    pub const ALL: [Study; 5] = [Study::Inputs, Study::Augmentation, Study::Dropout, Study::Videos, Study::Uncertainty];

    pub fn name(self) -> &'static str {
        match self {
            Study::Inputs => "inputs",
            Study::Augmentation => "augmentation",
            Study::Dropout => "dropout",
            Study::Videos => "videos",
            Study::Uncertainty => "uncertainty",
        }
    }

    /// Config keys the study varies.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Study::Inputs => &["gesture.inputs"],
            Study::Augmentation => &["aug.enabled"],
            Study::Dropout => &["appearance.sites", "appearance.dropout"],
            Study::Videos => &["videos"],
            Study::Uncertainty => &["appearance.precision"],
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown study `{s}` (expected inputs, augmentation, dropout, videos or uncertainty)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationResult {
    pub study: String,
    pub variant: String,
    pub report: F1Report,
    /// Full effective config of the variant.
    pub config: String,
}

fn with(base: &PipelineConfig, pairs: &[(&str, &str)]) -> Result<PipelineConfig> {
    let mut cfg = base.clone();
    for (k, v) in pairs {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

/// Named configs of a study, in table-row order.
pub fn study_variants(study: Study, base: &PipelineConfig) -> Result<Vec<(String, PipelineConfig)>> {
    let named = |rows: &[(&str, Vec<(&str, &str)>)]| -> Result<Vec<(String, PipelineConfig)>> {
        rows.iter().map(|(name, pairs)| Ok((name.to_string(), with(base, pairs)?))).collect()
    };
    match study {
        Study::Inputs => named(
            &["bgsub", "flow", "bgsub+flowx", "bgsub+flowy", "bgsub+flowx+flowy"]
                .map(|c| (c, vec![("gesture.inputs", c)])),
        ),
        Study::Augmentation => [
            "none",
            "brightness",
            "background",
            "brightness+transform",
            "background+transform",
            "brightness+transform+background",
        ]
        .into_iter()
        .map(|a| Ok((a.to_string(), with(base, &[("aug.enabled", &a.replace('+', ","))])?)))
        .collect(),
        Study::Dropout => {
            let rows = ["fc6", "fc6,conv5", "fc6,conv5,conv4", "fc6,conv5,conv4,conv3", "fc6,conv5,conv4,conv3,conv2", "fc6,conv5,conv4,conv3,conv2,conv1"];
            let mut out = Vec::new();
            for sites in rows {
                for ratio in ["0.4", "0.5"] {
                    let name = format!("{}@{ratio}", sites.replace(',', "+"));
                    out.push((name, with(base, &[("appearance.sites", sites), ("appearance.dropout", ratio)])?));
                }
            }
            Ok(out)
        }
        Study::Videos => (1..=7usize)
            .map(|n| Ok((format!("{n}"), with(base, &[("videos", &n.to_string())])?)))
            .collect(),
        Study::Uncertainty => named(&[
            ("identity", vec![("appearance.precision", "false")]),
            ("precision", vec![("appearance.precision", "true")]),
        ]),
    }
}

/// Run every variant of `study` on the dataset of `base`.
///
/// `inputs` retrains the gesture net per variant and scores it on the
/// gesture videos. Every other study computes pseudo-labels once and only
/// retrains the appearance net.
pub fn ablation_runner(study: Study, base: &PipelineConfig) -> Result<Vec<AblationResult>> {
    base.validate()?;
    let variants = study_variants(study, base)?;
    for (_, cfg) in &variants {
        cfg.validate()?;
    }
    let max_videos = variants.iter().map(|(_, c)| c.videos).max().unwrap_or(base.videos);
    let shared = PipelineConfig {
        videos: max_videos,
        ..base.clone()
    };
    let data = build_dataset(&shared)?;
    let result = |variant: String, cfg: &PipelineConfig, report: F1Report| AblationResult {
        study: study.name().into(),
        variant,
        report,
        config: cfg.snapshot(),
    };
    let mut out = Vec::with_capacity(variants.len());
    if study == Study::Inputs {
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        let mut stacks = Vec::new();
        for video in &data.videos {
            let masks = video
                .masks
                .as_ref()
                .ok_or_else(|| Error::config("input.gesture_dirs", "the inputs study needs ground-truth gesture masks"))?;
            stacks.push(extract_motion_stacks(&video.frames, &motion_cfg(base))?);
            truths.extend(masks[1..].iter().cloned());
        }
        for (name, cfg) in variants {
            let (net, _) = train_configured_gesture_net(&cfg)?;
            preds.clear();
            for s in stacks.iter().flatten() {
                preds.push(predict_gesture(&net, s, cfg.gesture.inputs)?);
            }
            let report = f1_score_frames(&preds, &truths, cfg.eval_threshold)?;
            out.push(result(name, &cfg, report));
        }
        return Ok(out);
    }
    let stage1 = run_stage1(&shared, &data)?;
    for (name, cfg) in variants {
        let labels = training_labels(&cfg, &stage1, cfg.videos);
        let stage2 = run_stage2(&cfg, &data, &labels)?;
        out.push(result(name, &cfg, stage2.test));
    }
    Ok(out)
}

/// Fixed-width text table, one row per variant.
pub fn ablation_table(results: &[AblationResult]) -> String {
    let width = results.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>6}", "variant", "precision", "recall", "f1");
    for r in results {
        let _ = writeln!(
            s,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>6.4}",
            r.variant, r.report.precision, r.report.recall, r.report.f1
        );
    }
    s
}

/// One JSON record per variant, without the per-frame breakdown.
pub fn ablation_jsonl(results: &[AblationResult]) -> String {
    results
        .iter()
        .map(|r| {
            let v = serde_json::json!({
                "study": r.study, "variant": r.variant,
                "precision": r.report.precision, "recall": r.report.recall, "f1": r.report.f1,
                "true_pos": r.report.true_pos, "false_pos": r.report.false_pos, "false_neg": r.report.false_neg,
                "config": r.config,
            });
            format!("{v}\n")
        })
        .collect()
}
