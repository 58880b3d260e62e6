//! Joint acoustic echo cancellation and blind source extraction for
//! microphone arrays, operating per STFT bin.
//!
//! The crate estimates a multichannel echo path and a distortionless
//! extraction beamformer from the same maximum-likelihood objective, with
//! Newton-type batch updates. It also ships the baselines used for
//! comparison, a synthetic scene generator and an evaluation harness.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod scenegen;
pub mod stft;
pub mod wav;

pub use error::{Error, Result};
pub use model::{DemixState, MixingTruth, ScoreModel};
pub use optimizer::{Algorithm, RunConfig, RunOutput};
pub use stft::{FrameSpec, Spectrogram, Window};
