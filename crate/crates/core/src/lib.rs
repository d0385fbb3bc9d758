//! Personalized hand segmentation bootstrapped from a calibration gesture.
//!
//! Stage one turns a short gesture video into motion cues (TV-L1 optical
//! flow and a Bayesian background model), segments the hand with a
//! motion-only network, and estimates per-pixel uncertainty with
//! Monte-Carlo dropout. Stage two trains a person-specific RGB network on
//! those pseudo-labels, weighting each pixel's error by its precision.
//!
//! Modules:
//! - [`image`]: planar rasters, color/geometry ops, PNG and `GBT1` blob I/O
//! - [`motion`]: TV-L1 flow, histogram background model, motion stacks
//! - [`nn`]: small fully-convolutional engine, losses, SGD, gradient checks
//! - [`gesture`]: motion network training, MC-dropout inference, pseudo-labels
//! - [`appearance`]: augmentation and precision-weighted appearance training
//! - [`harness`]: synthetic sequences, F1 metrics, pipeline and ablations

pub mod appearance;
pub mod error;
pub mod gesture;
pub mod harness;
pub mod image;
pub mod motion;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub use image::{ImageBuffer, TensorBlob};
pub use rng::RngStream;
