//! Self-supervised compression and artifact correction for imaging-sonar
//! video: synthetic scenes, proxy targets, a residual multiscale VQ codec,
//! its bitstream, a link simulator and evaluation metrics.

pub mod bitstream;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod frame;
pub mod metrics;
pub mod proxy;
pub mod report;
pub mod sonargen;
pub mod stream;

pub use error::{Error, Result};
pub use frame::{Clip, Frame};
