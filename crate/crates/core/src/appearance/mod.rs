//! Stage-two appearance network: RGB frames with gesture pseudo-labels,
//! trained under the precision-weighted soft-sigmoid loss with the
//! transformation, brightness and background augmentations.

mod augment;
mod train;

pub use augment::{augment_sample, crop_window, inject_background, AugmentCfg, AugmentSet, Sample};
pub use train::{
    appearance_loss, segment, select_frames, train_appearance_net, AppearanceTrainCfg, DEFAULT_APPEARANCE_LR,
};
