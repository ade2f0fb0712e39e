//! Preference likelihoods and the Laplace-approximated latent posterior.
//!
//! Four observation models are supported: pairwise probit and logit,
//! 1-of-K multinomial logit (softmax) and N-of-K subset logit. All of them
//! expose the log-likelihood together with its analytic gradient and
//! negative Hessian, which [`laplace_fit`] uses for Newton's method.

mod laplace;
mod likelihood;

pub use laplace::{laplace_fit, LaplaceOptions, LatentPosterior, PosteriorDocument};
pub use likelihood::{
    loglik, loglik_grad_hess, multinomial_logit_loglik, pairwise_loglik, subset_loglik,
    subset_marginals, SubsetMarginals, MAX_SUBSET_CHOICES,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One round of feedback: the archive indices shown and the positions (into
/// `choice_set`) the user picked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceObservation {
    choice_set: Vec<usize>,
    winners: Vec<usize>,
}

impl PreferenceObservation {
    /// Validates distinct indices, at least two choices and a non-empty
    /// winner set within range. Winner positions are stored sorted.
    pub fn new(choice_set: Vec<usize>, winners: Vec<usize>) -> Result<Self> {
        if choice_set.len() < 2 {
            return Err(Error::contract("a choice set needs at least two entries"));
        }
        let mut seen = choice_set.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != choice_set.len() {
            return Err(Error::contract("choice set indices must be distinct"));
        }
        let mut winners = winners;
        winners.sort_unstable();
        winners.dedup();
        if winners.is_empty() {
            return Err(Error::contract("winner set must be non-empty"));
        }
        if winners.iter().any(|&w| w >= choice_set.len()) {
            return Err(Error::contract("winner position outside the choice set"));
        }
        Ok(Self { choice_set, winners })
    }

    /// Pairwise observation `a ≻ b`.
    pub fn pairwise(a: usize, b: usize) -> Result<Self> {
        Self::new(vec![a, b], vec![0])
    }

    pub fn choice_set(&self) -> &[usize] {
        &self.choice_set
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }

    pub fn len(&self) -> usize {
        self.choice_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choice_set.is_empty()
    }

    pub fn is_pairwise(&self) -> bool {
        self.choice_set.len() == 2 && self.winners.len() == 1
    }

    /// Multi-hot indicator over the choice set.
    pub fn winner_indicator(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.choice_set.len()];
        for &w in &self.winners {
            y[w] = 1.0;
        }
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodKind {
    PairwiseProbit,
    PairwiseLogit,
    MultinomialLogit,
    SubsetLogit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodModel {
    pub kind: LikelihoodKind,
    /// Preference noise σ of the pairwise models, which use
    /// `z = (f(a) - f(b)) / (√2 σ)`. The logit models over choice sets have
    /// unit Gumbel noise and ignore it.
    pub noise_scale: f64,
}

impl LikelihoodModel {
    pub fn new(kind: LikelihoodKind) -> Self {
        Self {
            kind,
            noise_scale: std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    pub fn with_noise_scale(mut self, sigma: f64) -> Self {
        self.noise_scale = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(Error::config("noise scale must be finite and positive"));
        }
        Ok(())
    }

    /// Checks the observation's arity against this model.
    pub fn check(&self, obs: &PreferenceObservation) -> Result<()> {
        match self.kind {
            LikelihoodKind::PairwiseProbit | LikelihoodKind::PairwiseLogit => {
                if !obs.is_pairwise() {
                    return Err(Error::contract(
                        "pairwise models need two choices and exactly one winner",
                    ));
                }
            }
            LikelihoodKind::MultinomialLogit => {
                if obs.winners().len() != 1 {
                    return Err(Error::contract("the multinomial logit needs exactly one winner"));
                }
            }
            LikelihoodKind::SubsetLogit => {
                if obs.len() > MAX_SUBSET_CHOICES {
                    return Err(Error::contract(format!(
                        "subset logit enumerates at most {MAX_SUBSET_CHOICES} choices"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_validation() {
        assert!(PreferenceObservation::new(vec![0], vec![0]).is_err());
        assert!(PreferenceObservation::new(vec![1, 1], vec![0]).is_err());
        assert!(PreferenceObservation::new(vec![0, 1], vec![]).is_err());
        assert!(PreferenceObservation::new(vec![0, 1], vec![2]).is_err());
        let o = PreferenceObservation::new(vec![4, 2, 7], vec![2, 0, 2]).unwrap();
        assert_eq!(o.winners(), &[0, 2]);
        assert_eq!(o.winner_indicator(), vec![1.0, 0.0, 1.0]);
        assert!(!o.is_pairwise());
        assert!(PreferenceObservation::pairwise(3, 1).unwrap().is_pairwise());
    }

    #[test]
    fn model_arity_checks() {
        let pair = PreferenceObservation::pairwise(0, 1).unwrap();
        let multi = PreferenceObservation::new(vec![0, 1, 2], vec![1]).unwrap();
        let subset = PreferenceObservation::new(vec![0, 1, 2], vec![0, 1]).unwrap();
        let probit = LikelihoodModel::new(LikelihoodKind::PairwiseProbit);
        assert!(probit.check(&pair).is_ok());
        assert!(probit.check(&multi).is_err());
        let mnl = LikelihoodModel::new(LikelihoodKind::MultinomialLogit);
        assert!(mnl.check(&multi).is_ok() && mnl.check(&pair).is_ok());
        assert!(mnl.check(&subset).is_err());
        assert!(LikelihoodModel::new(LikelihoodKind::SubsetLogit).check(&subset).is_ok());
    }
}
