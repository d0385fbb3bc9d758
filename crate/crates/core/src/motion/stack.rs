use std::fmt;
use std::str::FromStr;

use super::bgsub::{fg_init, ForegroundCfg};
use super::tvl1::{tvl1_flow, FlowField, TvL1Params};
use crate::error::{Error, Result};
use crate::image::{to_gray, ImageBuffer};

pub const DEFAULT_FLOW_NORM_MAX: f32 = 8.0;

/// Foreground probability, normalized flow x, normalized flow y.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionStack(pub ImageBuffer);

impl MotionStack {
    pub fn image(&self) -> &ImageBuffer {
        &self.0
    }

    pub fn into_image(self) -> ImageBuffer {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    /// Zero the channels a given input combination does not use.
    pub fn masked(&self, combo: InputCombo) -> MotionStack {
        let mut img = self.0.clone();
        for (c, keep) in combo.channels().into_iter().enumerate() {
            if !keep {
                img.channel_mut(c).fill(0.0);
            }
        }
        MotionStack(img)
    }
}

/// Which motion channels feed the gesture network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputCombo {
    BgSub,
    Flow,
    BgSubFlowX,
    BgSubFlowY,
    All,
}

impl InputCombo {
    pub const ALL: [InputCombo; 5] = [
        InputCombo::BgSub,
        InputCombo::Flow,
        InputCombo::BgSubFlowX,
        InputCombo::BgSubFlowY,
        InputCombo::All,
    ];

    pub fn channels(self) -> [bool; 3] {
        match self {
            InputCombo::BgSub => [true, false, false],
            InputCombo::Flow => [false, true, true],
            InputCombo::BgSubFlowX => [true, true, false],
            InputCombo::BgSubFlowY => [true, false, true],
            InputCombo::All => [true, true, true],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputCombo::BgSub => "bgsub",
            InputCombo::Flow => "flow",
            InputCombo::BgSubFlowX => "bgsub+flowx",
            InputCombo::BgSubFlowY => "bgsub+flowy",
            InputCombo::All => "bgsub+flowx+flowy",
        }
    }
}

impl fmt::Display for InputCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputCombo::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown input combination '{s}'")))
    }
}

fn encode_flow(c: f32, norm: f32) -> f32 {
    (c / norm).clamp(-1.0, 1.0) * 0.5 + 0.5
}

pub fn build_motion_stack(fg_prob: &ImageBuffer, flow: &FlowField, flow_norm_max: f32) -> Result<MotionStack> {
    if fg_prob.channels() != 1 || fg_prob.dims() != flow.dims() {
        return Err(Error::invalid(format!(
            "foreground map {:?}x{} and flow {:?} do not match",
            fg_prob.dims(),
            fg_prob.channels(),
            flow.dims()
        )));
    }
    if !(flow_norm_max > 0.0 && flow_norm_max.is_finite()) {
        return Err(Error::invalid("flow_norm_max must be positive"));
    }
    let mut data = Vec::with_capacity(3 * flow.u.len());
    data.extend(fg_prob.data().iter().map(|p| p.clamp(0.0, 1.0)));
    data.extend(flow.u.iter().map(|&c| encode_flow(c, flow_norm_max)));
    data.extend(flow.v.iter().map(|&c| encode_flow(c, flow_norm_max)));
    let (h, w) = flow.dims();
    Ok(MotionStack(ImageBuffer::from_vec(h, w, 3, data)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionCfg {
    pub tvl1: TvL1Params,
    pub foreground: ForegroundCfg,
    pub flow_norm_max: f32,
}

impl MotionCfg {
    pub fn new() -> Self {
        Self {
            flow_norm_max: DEFAULT_FLOW_NORM_MAX,
            ..Default::default()
        }
    }
}

/// Motion stacks for frames `1..N`; frame 0 initializes the background model.
pub fn extract_motion_stacks(frames: &[ImageBuffer], cfg: &MotionCfg) -> Result<Vec<MotionStack>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("no frames to extract motion from"))?;
    let mut model = fg_init(first, &cfg.foreground)?;
    let mut prev_gray = to_gray(first)?;
    let mut out = Vec::with_capacity(frames.len().saturating_sub(1));
    for frame in &frames[1..] {
        let gray = to_gray(frame)?;
        let flow = tvl1_flow(&prev_gray, &gray, &cfg.tvl1)?;
        let fg = model.update(frame)?;
        out.push(build_motion_stack(&fg, &flow, cfg.flow_norm_max)?);
        prev_gray = gray;
    }
    Ok(out)
}
