//! Candidate proposal: expected improvement and the balanced-subspace batch
//! acquisition.
//!
//! All functions take the posterior through its [`Predictor`](crate::gp::Predictor),
//! which is what [`LatentPosterior::predictor`](crate::preference::LatentPosterior::predictor)
//! hands out. Randomness is drawn only from the caller's rng and always
//! before any data-parallel work, so results do not depend on thread count.

mod bounds;
mod dbs;
mod ei;
mod subspace;

pub use bounds::BoxBounds;
pub use dbs::{dbs_propose, propose_batch, BatchProposal};
pub use ei::{ei_closed_form, ei_over, ei_with_gradient, expected_improvement, maximize_ei, EiBaseline, EiMaximum};
pub use subspace::{gradient_covariance, gradient_covariance_at, spectral_gap_dim, SubspaceBasis};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Batch proposal variants. [`AcquisitionKind::Dbs`] is the full method; the
/// others isolate its parts for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionKind {
    #[default]
    Dbs,
    /// Bridge points between incumbent and EI maximizer, no perturbation.
    BridgeOnly,
    /// Subspace perturbations around the incumbent, no EI bridge.
    SubspaceOnly,
    /// The K best distinct local EI maxima.
    EiTopK,
    /// Uniform draws from the box.
    Random,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 5] = [
        AcquisitionKind::Dbs,
        AcquisitionKind::BridgeOnly,
        AcquisitionKind::SubspaceOnly,
        AcquisitionKind::EiTopK,
        AcquisitionKind::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AcquisitionKind::Dbs => "dbs",
            AcquisitionKind::BridgeOnly => "bridge-only",
            AcquisitionKind::SubspaceOnly => "subspace-only",
            AcquisitionKind::EiTopK => "ei-top-k",
            AcquisitionKind::Random => "random",
        }
    }
}

/// Acquisition hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbsConfig {
    /// Choices per round.
    pub k: usize,
    /// Bridge coefficients, one per choice; must contain 0 and 1.
    pub gamma_bridge: Vec<f64>,
    /// Ratio a spectral gap must reach to fix the subspace dimension.
    pub spectral_threshold: f64,
    /// Gradient samples averaged into the covariance.
    pub n_gradient_samples: usize,
    /// Radius of the gradient-sampling ball as a fraction of the box diagonal.
    pub neighborhood_radius: f64,
    /// Perturbation scale in units of box width.
    pub perturb_scale: f64,
    pub ei_restarts: usize,
    pub ei_raw_samples: usize,
    /// Iteration cap for each local EI ascent.
    pub ei_ascent_iters: usize,
}

impl DbsConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            gamma_bridge: Self::evenly_spaced(k),
            spectral_threshold: 2.0,
            n_gradient_samples: 32,
            neighborhood_radius: 0.05,
            perturb_scale: 0.1,
            ei_restarts: 50,
            ei_raw_samples: 4096,
            ei_ascent_iters: 200,
        }
    }

    /// `{0, 1/(k-1), ..., 1}`.
    pub fn evenly_spaced(k: usize) -> Vec<f64> {
        if k < 2 {
            return vec![0.0; k];
        }
        (0..k)
            .map(|i| if i + 1 == k { 1.0 } else { i as f64 / (k - 1) as f64 })
            .collect()
    }

    /// Changes `k` and resets the bridge coefficients to even spacing.
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self.gamma_bridge = Self::evenly_spaced(k);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config(format!("at least 2 choices per round are required, got {}", self.k)));
        }
        if self.gamma_bridge.len() != self.k {
            return Err(Error::config(format!(
                "{} bridge coefficients for {} choices",
                self.gamma_bridge.len(),
                self.k
            )));
        }
        if self.gamma_bridge.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::config("bridge coefficients must lie in [0, 1]"));
        }
        if !self.gamma_bridge.contains(&0.0) || !self.gamma_bridge.contains(&1.0) {
            return Err(Error::config("bridge coefficients must include 0 and 1"));
        }
        if !(self.spectral_threshold.is_finite() && self.spectral_threshold > 0.0) {
            return Err(Error::config("spectral threshold must be positive"));
        }
        if self.n_gradient_samples == 0 {
            return Err(Error::config("at least one gradient sample is required"));
        }
        if !(self.neighborhood_radius.is_finite() && self.neighborhood_radius >= 0.0) {
            return Err(Error::config("neighborhood radius must be non-negative"));
        }
        if !(self.perturb_scale.is_finite() && self.perturb_scale >= 0.0) {
            return Err(Error::config("perturbation scale must be non-negative"));
        }
        if self.ei_raw_samples == 0 || self.ei_restarts == 0 {
            return Err(Error::config("EI search needs raw samples and restarts"));
        }
        Ok(())
    }
}
