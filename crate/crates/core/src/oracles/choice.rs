use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChoiceKind {
    Argmax,
    GumbelLogit,
    SubsetThreshold,
}

/// Simulated user. `temperature` applies to the Gumbel-logit user, `epsilon`
/// to the subset-threshold user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceNoiseModel {
    pub kind: ChoiceKind,
    pub temperature: f64,
    pub epsilon: f64,
}

impl ChoiceNoiseModel {
    pub fn argmax() -> Self {
        Self { kind: ChoiceKind::Argmax, temperature: 1.0, epsilon: 0.0 }
    }

    pub fn gumbel_logit(temperature: f64) -> Self {
        Self { kind: ChoiceKind::GumbelLogit, temperature, epsilon: 0.0 }
    }

    pub fn subset_threshold(epsilon: f64) -> Self {
        Self { kind: ChoiceKind::SubsetThreshold, temperature: 1.0, epsilon }
    }

    /// Gumbel-logit user whose reliability drops with the number of choices:
    /// temperature `base · (1 + 0.15 (k - 2))`.
    pub fn k_scaled(base_temperature: f64, k: usize) -> Self {
        Self::gumbel_logit(base_temperature * (1.0 + 0.15 * (k as f64 - 2.0)))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config("choice temperature must be positive"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::config("choice margin must be non-negative"));
        }
        Ok(())
    }

    /// Whether this user can pick more than one winner.
    pub fn multi_select(&self) -> bool {
        self.kind == ChoiceKind::SubsetThreshold
    }
}

/// Positions picked from `values`; never empty.
///
/// * argmax: the largest value, first index on ties;
/// * gumbel-logit: argmax of `values / temperature + Gumbel(0, 1)`;
/// * subset-threshold: every index within `epsilon` of the maximum.
pub fn simulate_choice<R: Rng + ?Sized>(values: &[f64], model: &ChoiceNoiseModel, rng: &mut R) -> Result<Vec<usize>> {
    if values.len() < 2 {
        return Err(Error::contract("a choice needs at least two options"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("choice values must be finite"));
    }
    model.validate()?;
    Ok(match model.kind {
        ChoiceKind::Argmax => vec![argmax(values.iter().copied())],
        ChoiceKind::GumbelLogit => {
            let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
            let t = model.temperature;
            let noisy: Vec<f64> = values.iter().map(|v| v / t + g.sample(rng)).collect();
            vec![argmax(noisy.into_iter())]
        }
        ChoiceKind::SubsetThreshold => {
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v >= max - model.epsilon)
                .map(|(i, _)| i)
                .collect()
        }
    })
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
