//! Parameter estimation: the joint echo-path and beamformer Newton updates,
//! their iteration driver, and the baseline algorithms.

mod driver;
pub mod updates;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ScoreModel, DEFAULT_LOADING};

pub use driver::{run, run_bnlms_ive, run_ive_only, run_joint, run_ls_aec, RunOutput};
pub use updates::{
    backproject, circularity_check, grad_h, grad_w, hessian_h, normalize_w, update_aec, update_bse, Skip,
};

/// Estimation algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Joint echo canceller and source extraction.
    #[default]
    Joint,
    /// Per-channel batch NLMS echo canceller interleaved with source extraction.
    BnlmsIve,
    /// Batch least-squares echo canceller, no beamformer.
    LsAec,
    /// Source extraction without echo canceller.
    IveOnly,
    /// Reference microphone, untouched.
    #[serde(alias = "none")]
    Unprocessed,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Unprocessed,
        Algorithm::LsAec,
        Algorithm::IveOnly,
        Algorithm::BnlmsIve,
        Algorithm::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Joint => "joint",
            Algorithm::BnlmsIve => "bnlms_ive",
            Algorithm::LsAec => "ls_aec",
            Algorithm::IveOnly => "ive_only",
            Algorithm::Unprocessed => "unprocessed",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Algorithm::Joint),
            "bnlms_ive" => Ok(Algorithm::BnlmsIve),
            "ls_aec" => Ok(Algorithm::LsAec),
            "ive_only" | "ive" => Ok(Algorithm::IveOnly),
            "unprocessed" | "none" => Ok(Algorithm::Unprocessed),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Settings of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub iterations: usize,
    /// Relative diagonal loading of covariances.
    pub loading: f64,
    /// One-based error channel the estimate is backprojected onto.
    pub reference_channel: usize,
    pub algorithm: Algorithm,
    /// Source model of the extracted signal.
    #[serde(default)]
    pub score: ScoreModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            loading: DEFAULT_LOADING,
            reference_channel: 1,
            algorithm: Algorithm::Joint,
            score: ScoreModel::Spherical,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, mics: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.reference_channel == 0 || self.reference_channel > mics {
            return Err(Error::Config(format!(
                "reference channel {} outside 1..={mics}",
                self.reference_channel
            )));
        }
        if !(self.loading >= 0.0 && self.loading.is_finite()) {
            return Err(Error::Config(format!("invalid loading {}", self.loading)));
        }
        Ok(())
    }
}

/// Diagnostics of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: Option<f64>,
    pub delta_h: f64,
    pub delta_w: f64,
    /// Mean `|nu_f|` over bins.
    pub nu_mean: f64,
    /// Mean `|rho_f|` over bins.
    pub rho_mean: f64,
    /// Off-block-diagonal transmission energy, when ground truth is known.
    pub off_block_db: Option<f64>,
    pub skipped_aec: usize,
    pub skipped_bse: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub algorithm: Option<Algorithm>,
    pub iterations: Vec<IterationRecord>,
}
