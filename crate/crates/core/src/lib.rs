//! Attended-awareness estimation from noisy gaze, scene saliency and optic flow.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: heatmaps, densities, flow fields, sampling, warping, splatting.
//! * [`saliency`]: computed or file-backed saliency and the KL / CC / IG metrics.
//! * [`objective`]: every loss term with analytic gradients and a gradient checker.
//! * [`awareness`]: filtered-gaze baseline, recursive and variational estimators.
//! * [`refine`]: gaze noise models, meanshift denoising and recalibration.
//! * [`synth`]: synthetic scenes with exact flow, scanpaths and annotations.
//! * [`io`], [`config`]: file formats and configuration.
//! * [`bench`]: the experiment harness behind the CLI.

pub(crate) mod par;

pub mod awareness;
pub mod bench;
pub mod config;
pub mod error;
pub mod grid;
pub mod io;
pub mod objective;
pub mod refine;
pub mod saliency;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{DensityMap, FlowField, GazeFrame, Heatmap};
pub use objective::{AnnotationRecord, LossWeights, SequenceBatch, Term};
pub use par::{current_threads, derive_seed};
