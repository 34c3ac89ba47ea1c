//! Speech denoising driven by silent intervals.
//!
//! A detector finds 1/30 s segments that contain only background noise, the
//! noise exposed there is inpainted into a full noise spectrogram, and a
//! removal network predicts a complex ratio mask for the noisy spectrogram.

pub mod archive;
pub mod audio;
pub mod baselines;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod resample;
pub mod segments;
pub mod spectro;
pub mod training;

pub use audio::{ClipSpec, Waveform};
pub use error::{Error, Result};
pub use segments::{SampleMask, SegmentLabels};
pub use spectro::{Spectrogram, StftConfig};
