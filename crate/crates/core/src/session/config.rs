use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{AcquisitionKind, BoxBounds, DbsConfig};
use crate::gp::{median_heuristic_lengthscales, KernelConfig, KernelFamily};
use crate::preference::{LikelihoodKind, LikelihoodModel, MAX_SUBSET_CHOICES};
use crate::{Error, Result};

/// Whether the quasi-random initialization rounds use up interaction budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitAccounting {
    /// `N₀` initialization rounds followed by `B` acquisition rounds.
    #[default]
    Separate,
    /// `B` rounds in total, the first `N₀` of them initialization.
    CountsAgainstBudget,
}

/// Kernel choice; lengthscales default to the median heuristic over the
/// initialization design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSettings {
    pub family: KernelFamily,
    #[serde(default)]
    pub lengthscales: Option<Vec<f64>>,
    pub signal_variance: f64,
    /// Defaults to `1e-6 · signal_variance`.
    #[serde(default)]
    pub jitter: Option<f64>,
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            lengthscales: None,
            signal_variance: 1.0,
            jitter: None,
        }
    }
}

impl KernelSettings {
    pub(crate) fn resolve(&self, design: &[Vec<f64>], bounds: &BoxBounds) -> Result<KernelConfig> {
        let lengthscales = match &self.lengthscales {
            Some(l) => l.clone(),
            None => median_heuristic_lengthscales(design, &bounds.widths())
                .into_iter()
                .map(|l| if l > 0.0 { l } else { 1.0 })
                .collect(),
        };
        let mut k = KernelConfig::new(self.family, lengthscales, self.signal_variance);
        if let Some(j) = self.jitter {
            k = k.with_jitter(j);
        }
        k.validate()?;
        k.check_dim(bounds.dim())?;
        Ok(k)
    }
}

/// Which archive point is the incumbent `x̂*` after each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IncumbentRule {
    /// Archive point with the largest posterior mean.
    #[default]
    PosteriorMean,
    /// Winner of the latest round; the lowest position when there are several.
    LastPreferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Acquisition rounds `B` (see [`InitAccounting`]).
    pub budget: usize,
    /// Choices per round `K`.
    pub k: usize,
    /// Initialization rounds `N₀`.
    pub init_batches: usize,
    pub bounds: BoxBounds,
    pub kernel: KernelSettings,
    pub likelihood: LikelihoodModel,
    pub acquisition: AcquisitionKind,
    pub dbs: DbsConfig,
    pub init_accounting: InitAccounting,
    #[serde(default)]
    pub incumbent_rule: IncumbentRule,
    /// Start each Laplace fit from the previous MAP instead of zero.
    #[serde(default)]
    pub laplace_warm_start: bool,
    pub seed: u64,
}

impl SessionConfig {
    /// `B = 50`, `K = 4`, `N₀ = 10`, Matérn-5/2, multinomial logit, full
    /// balanced-subspace acquisition.
    pub fn new(bounds: BoxBounds, seed: u64) -> Self {
        Self {
            budget: 50,
            k: 4,
            init_batches: 10,
            bounds,
            kernel: KernelSettings::default(),
            likelihood: LikelihoodModel::new(LikelihoodKind::MultinomialLogit),
            acquisition: AcquisitionKind::Dbs,
            dbs: DbsConfig::new(4),
            init_accounting: InitAccounting::Separate,
            incumbent_rule: IncumbentRule::PosteriorMean,
            laplace_warm_start: false,
            seed,
        }
    }

    /// Sets `K` and re-spaces the bridge coefficients to match.
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self.dbs = self.dbs.with_k(k);
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_likelihood(mut self, kind: LikelihoodKind) -> Self {
        self.likelihood = LikelihoodModel { kind, ..self.likelihood };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config(format!("K must be at least 2, got {}", self.k)));
        }
        if self.init_batches == 0 {
            return Err(Error::config("at least one initialization round is required"));
        }
        if self.budget == 0 && self.init_accounting == InitAccounting::CountsAgainstBudget {
            return Err(Error::config("budget must be at least 1 when initialization counts against it"));
        }
        if self.dbs.k != self.k {
            return Err(Error::config(format!(
                "acquisition configured for {} choices but the session uses {}",
                self.dbs.k, self.k
            )));
        }
        self.dbs.validate()?;
        self.likelihood.validate()?;
        match self.likelihood.kind {
            LikelihoodKind::PairwiseProbit | LikelihoodKind::PairwiseLogit if self.k != 2 => {
                return Err(Error::config("pairwise likelihoods need K = 2"));
            }
            LikelihoodKind::SubsetLogit if self.k > MAX_SUBSET_CHOICES => {
                return Err(Error::config(format!(
                    "subset likelihood supports at most {MAX_SUBSET_CHOICES} choices"
                )));
            }
            _ => {}
        }
        if let Some(l) = &self.kernel.lengthscales {
            if l.len() != 1 && l.len() != self.bounds.dim() {
                return Err(Error::config("lengthscale count does not match the bounds"));
            }
        }
        if !(self.kernel.signal_variance.is_finite() && self.kernel.signal_variance > 0.0) {
            return Err(Error::config("signal variance must be positive"));
        }
        Ok(())
    }

    /// Rounds run before acquisition starts.
    pub fn init_rounds(&self) -> usize {
        match self.init_accounting {
            InitAccounting::Separate => self.init_batches,
            InitAccounting::CountsAgainstBudget => self.init_batches.min(self.budget),
        }
    }

    /// All rounds a session will run.
    pub fn total_rounds(&self) -> usize {
        match self.init_accounting {
            InitAccounting::Separate => self.init_batches + self.budget,
            InitAccounting::CountsAgainstBudget => self.budget,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SessionConfig {
        SessionConfig::new(BoxBounds::symmetric(2, 1.0).unwrap(), 0)
    }

    #[test]
    fn defaults_validate() {
        let c = cfg();
        c.validate().unwrap();
        assert_eq!((c.budget, c.k, c.init_batches), (50, 4, 10));
        assert_eq!(c.total_rounds(), 60);
        let c = c.with_budget(0);
        c.validate().unwrap();
        assert_eq!(c.total_rounds(), 10);
    }

    #[test]
    fn counting_init_against_budget() {
        let mut c = cfg().with_budget(20);
        c.init_accounting = InitAccounting::CountsAgainstBudget;
        assert_eq!((c.init_rounds(), c.total_rounds()), (10, 20));
        c.budget = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn invalid_combinations() {
        assert!(cfg().with_k(1).validate().is_err());
        assert!(cfg().with_likelihood(LikelihoodKind::PairwiseProbit).validate().is_err());
        cfg().with_k(2).with_likelihood(LikelihoodKind::PairwiseProbit).validate().unwrap();
        assert!(cfg().with_k(13).with_likelihood(LikelihoodKind::SubsetLogit).validate().is_err());
        let mut c = cfg();
        c.dbs = c.dbs.with_k(3);
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        assert_eq!(cfg().hash(), cfg().hash());
        assert_ne!(cfg().hash(), cfg().with_budget(3).hash());
        assert_eq!(cfg().hash().len(), 64);
    }
}
