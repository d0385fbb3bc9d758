//! Motion cues for the gesture network: dense TV-L1 optical flow and a
//! per-pixel Bayesian background model, combined into a 3-channel stack.

mod bgsub;
mod stack;
mod tvl1;

pub use bgsub::{fg_init, fg_update, ForegroundCfg, ForegroundModel};
pub use stack::{
    build_motion_stack, extract_motion_stacks, InputCombo, MotionCfg, MotionStack, DEFAULT_FLOW_NORM_MAX,
};
pub use tvl1::{tvl1_flow, tvl1_flow_logged, FlowField, TvL1Params, WarpLog};
