use nalgebra::{DMatrix, DVector};

use super::{LikelihoodKind, LikelihoodModel, PreferenceObservation};
use crate::stats::{inverse_mills, log_norm_cdf, log_sigmoid, sigmoid, softplus};
use crate::{Error, Result};

/// Largest choice set for which subset probabilities are enumerated
/// (`2^12 - 1` subsets).
pub const MAX_SUBSET_CHOICES: usize = 12;

/// Log-likelihood contribution of one observation with gradient and negative
/// Hessian over the observation's own choice-set coordinates.
#[derive(Debug, Clone)]
pub(crate) struct LocalTerms {
    pub loglik: f64,
    pub grad: Vec<f64>,
    pub neg_hess: DMatrix<f64>,
}

fn gather(f: &[f64], obs: &PreferenceObservation) -> Result<Vec<f64>> {
    obs.choice_set()
        .iter()
        .map(|&i| {
            f.get(i).copied().ok_or_else(|| {
                Error::contract(format!("archive index {i} out of range for {} utilities", f.len()))
            })
        })
        .collect()
}

/// `log P(a ≻ b | f)` for a pairwise observation under the probit or logit
/// link with `z = (f(a) - f(b)) / (√2 σ)`. `f` is indexed by archive index.
pub fn pairwise_loglik(f: &[f64], obs: &PreferenceObservation, model: &LikelihoodModel) -> Result<f64> {
    if !obs.is_pairwise() {
        return Err(Error::contract("pairwise likelihood needs two choices and one winner"));
    }
    model.validate()?;
    let local = gather(f, obs)?;
    Ok(pairwise_terms(&local, obs.winners()[0], model).loglik)
}

fn pairwise_terms(local: &[f64], winner: usize, model: &LikelihoodModel) -> LocalTerms {
    let loser = 1 - winner;
    let c = 1.0 / (std::f64::consts::SQRT_2 * model.noise_scale);
    let z = c * (local[winner] - local[loser]);
    // h(z) = log link(z); we need h, h' and h''.
    let (h, dh, d2h) = match model.kind {
        LikelihoodKind::PairwiseProbit => {
            let r = inverse_mills(z);
            (log_norm_cdf(z), r, -r * (z + r))
        }
        _ => {
            let s = sigmoid(z);
            let sm = sigmoid(-z);
            (log_sigmoid(z), sm, -s * sm)
        }
    };
    let mut grad = vec![0.0; 2];
    grad[winner] = c * dh;
    grad[loser] = -c * dh;
    let w = -c * c * d2h;
    let mut neg_hess = DMatrix::from_element(2, 2, -w);
    neg_hess[(0, 0)] = w;
    neg_hess[(1, 1)] = w;
    LocalTerms { loglik: h, grad, neg_hess }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// `log softmax(f)_winner`, computed with a max shift.
pub fn multinomial_logit_loglik(f_subset: &[f64], winner_pos: usize) -> Result<f64> {
    if f_subset.len() < 2 {
        return Err(Error::contract("multinomial logit needs at least two choices"));
    }
    if winner_pos >= f_subset.len() {
        return Err(Error::contract("winner position outside the choice set"));
    }
    Ok(f_subset[winner_pos] - log_sum_exp(f_subset))
}

fn multinomial_terms(local: &[f64], winner: usize) -> LocalTerms {
    let pi = softmax(local);
    let k = local.len();
    let loglik = local[winner] - log_sum_exp(local);
    let mut grad: Vec<f64> = pi.iter().map(|p| -p).collect();
    grad[winner] += 1.0;
    let neg_hess = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            pi[i] - pi[i] * pi[i]
        } else {
            -pi[i] * pi[j]
        }
    });
    LocalTerms { loglik, grad, neg_hess }
}

/// `log Σ_{∅≠C⊆Z} exp(Σ_{j∈C} f_j) = log(Π_j (1 + e^{f_j}) - 1)`.
fn subset_log_normalizer(f_subset: &[f64]) -> f64 {
    let s: f64 = f_subset.iter().map(|&v| softplus(v)).sum();
    // log(e^s - 1) = s + log(1 - e^{-s})
    s + (-(-s).exp_m1()).ln()
}

/// `log P(A | f)` for the subset-choice logit,
/// `P(A | f) = exp(Σ_{j∈A} f_j) / (Π_j (1 + e^{f_j}) - 1)`.
pub fn subset_loglik(f_subset: &[f64], winners: &[usize]) -> Result<f64> {
    if winners.is_empty() {
        return Err(Error::contract("subset likelihood needs a non-empty winner set"));
    }
    if winners.iter().any(|&w| w >= f_subset.len()) {
        return Err(Error::contract("winner position outside the choice set"));
    }
    let mut sorted = winners.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let numerator: f64 = sorted.iter().map(|&w| f_subset[w]).sum();
    Ok(numerator - subset_log_normalizer(f_subset))
}

/// Inclusion probabilities under the subset logit.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMarginals {
    /// `π_j = P(j ∈ A | f)`.
    pub pi: Vec<f64>,
    /// `π_jk = P(j, k ∈ A | f)`, with `π_jj = π_j`.
    pub pi_pair: DMatrix<f64>,
}

/// Enumerates all non-empty subsets of the choice set.
pub fn subset_marginals(f_subset: &[f64]) -> Result<SubsetMarginals> {
    let k = f_subset.len();
    if k > MAX_SUBSET_CHOICES {
        return Err(Error::contract(format!(
            "subset marginals enumerate at most {MAX_SUBSET_CHOICES} choices, got {k}"
        )));
    }
    // The heaviest subset holds every positive utility (or the single largest).
    let shift = {
        let pos: f64 = f_subset.iter().filter(|v| **v > 0.0).sum();
        if pos > 0.0 {
            pos
        } else {
            f_subset.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        }
    };
    let mut total = 0.0;
    let mut pi = vec![0.0; k];
    let mut pi_pair = DMatrix::zeros(k, k);
    let mut members = Vec::with_capacity(k);
    for mask in 1u32..(1u32 << k) {
        members.clear();
        let mut log_w = -shift;
        for (j, v) in f_subset.iter().enumerate() {
            if mask & (1 << j) != 0 {
                members.push(j);
                log_w += v;
            }
        }
        let w = log_w.exp();
        total += w;
        for (a, &j) in members.iter().enumerate() {
            pi[j] += w;
            for &l in &members[..a] {
                pi_pair[(j, l)] += w;
            }
        }
    }
    for p in pi.iter_mut() {
        *p /= total;
    }
    for j in 0..k {
        pi_pair[(j, j)] = pi[j];
        for l in 0..j {
            let v = pi_pair[(j, l)] / total;
            pi_pair[(j, l)] = v;
            pi_pair[(l, j)] = v;
        }
    }
    Ok(SubsetMarginals { pi, pi_pair })
}

fn subset_terms(local: &[f64], winners: &[usize]) -> Result<LocalTerms> {
    let SubsetMarginals { pi, pi_pair } = subset_marginals(local)?;
    let k = local.len();
    let loglik = subset_loglik(local, winners)?;
    let mut grad: Vec<f64> = pi.iter().map(|p| -p).collect();
    for &w in winners {
        grad[w] += 1.0;
    }
    let neg_hess = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            pi[i] * (1.0 - pi[i])
        } else {
            pi_pair[(i, j)] - pi[i] * pi[j]
        }
    });
    Ok(LocalTerms { loglik, grad, neg_hess })
}

pub(crate) fn local_terms(
    f: &[f64],
    obs: &PreferenceObservation,
    model: &LikelihoodModel,
) -> Result<LocalTerms> {
    model.check(obs)?;
    let local = gather(f, obs)?;
    match model.kind {
        LikelihoodKind::PairwiseProbit | LikelihoodKind::PairwiseLogit => {
            Ok(pairwise_terms(&local, obs.winners()[0], model))
        }
        LikelihoodKind::MultinomialLogit => Ok(multinomial_terms(&local, obs.winners()[0])),
        LikelihoodKind::SubsetLogit => subset_terms(&local, obs.winners()),
    }
}

/// Total data log-likelihood `Σ_i log P(obs_i | f)`.
pub fn loglik(f: &[f64], observations: &[PreferenceObservation], model: &LikelihoodModel) -> Result<f64> {
    model.validate()?;
    let mut total = 0.0;
    for obs in observations {
        model.check(obs)?;
        let local = gather(f, obs)?;
        total += match model.kind {
            LikelihoodKind::PairwiseProbit | LikelihoodKind::PairwiseLogit => {
                pairwise_terms(&local, obs.winners()[0], model).loglik
            }
            LikelihoodKind::MultinomialLogit => multinomial_logit_loglik(&local, obs.winners()[0])?,
            LikelihoodKind::SubsetLogit => subset_loglik(&local, obs.winners())?,
        };
    }
    Ok(total)
}

/// Gradient and negative Hessian of the data log-likelihood, scattered into
/// full archive coordinates. The prior term is left to the caller.
pub fn loglik_grad_hess(
    f: &[f64],
    observations: &[PreferenceObservation],
    model: &LikelihoodModel,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    model.validate()?;
    let n = f.len();
    let mut grad = DVector::zeros(n);
    let mut neg_hess = DMatrix::zeros(n, n);
    for obs in observations {
        let t = local_terms(f, obs, model)?;
        let idx = obs.choice_set();
        for (a, &i) in idx.iter().enumerate() {
            grad[i] += t.grad[a];
            for (b, &j) in idx.iter().enumerate() {
                neg_hess[(i, j)] += t.neg_hess[(a, b)];
            }
        }
    }
    Ok((grad, neg_hess))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probit() -> LikelihoodModel {
        LikelihoodModel::new(LikelihoodKind::PairwiseProbit)
    }

    fn logit() -> LikelihoodModel {
        LikelihoodModel::new(LikelihoodKind::PairwiseLogit)
    }

    #[test]
    fn pairwise_tie_is_one_half() {
        let obs = PreferenceObservation::pairwise(0, 1).unwrap();
        for m in [probit(), logit(), probit().with_noise_scale(3.0)] {
            let v = pairwise_loglik(&[0.4, 0.4], &obs, &m).unwrap();
            assert!((v - 0.5f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn pairwise_logit_unit_z() {
        let sigma = 0.8;
        let m = logit().with_noise_scale(sigma);
        let obs = PreferenceObservation::pairwise(0, 1).unwrap();
        let diff = std::f64::consts::SQRT_2 * sigma;
        let v = pairwise_loglik(&[diff, 0.0], &obs, &m).unwrap();
        assert!((v + 0.313262).abs() < 1e-6);
        assert!((v - (1.0 / (1.0 + (-1.0f64).exp())).ln()).abs() < 1e-15);
    }

    #[test]
    fn pairwise_probit_saturates() {
        let m = probit().with_noise_scale(1.0);
        let obs = PreferenceObservation::pairwise(0, 1).unwrap();
        let v = pairwise_loglik(&[100.0, 0.0], &obs, &m).unwrap();
        assert!(v <= 0.0 && v > -1e-12);
        let lose = pairwise_loglik(&[0.0, 100.0], &obs, &m).unwrap();
        assert!(lose.is_finite() && lose < -1000.0);
    }

    #[test]
    fn pairwise_wrong_arity() {
        let obs = PreferenceObservation::new(vec![0, 1, 2], vec![0]).unwrap();
        assert!(matches!(pairwise_loglik(&[0.0; 3], &obs, &probit()), Err(Error::Contract(_))));
    }

    #[test]
    fn multinomial_spot_values() {
        for w in 0..4 {
            let v = multinomial_logit_loglik(&[0.0; 4], w).unwrap();
            assert!((v + 1.386294).abs() < 1e-6);
        }
        let v = multinomial_logit_loglik(&[1.0, 0.0], 0).unwrap();
        assert!((v + 0.313262).abs() < 1e-6);
        let v = multinomial_logit_loglik(&[2.0, 1.0, 0.0], 0).unwrap();
        let e = 1f64.exp();
        assert!((v - (e * e / (e * e + e + 1.0)).ln()).abs() < 1e-14);
        assert!((v + 0.407606).abs() < 1e-6);
        assert!(multinomial_logit_loglik(&[1.0], 0).is_err());
        assert!(multinomial_logit_loglik(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn multinomial_handles_huge_utilities() {
        let v = multinomial_logit_loglik(&[1000.0, 0.0, -1000.0], 0).unwrap();
        assert!(v.abs() < 1e-300);
    }

    #[test]
    fn subset_two_choice_enumeration() {
        for winners in [vec![0], vec![1], vec![0, 1]] {
            let v = subset_loglik(&[0.0, 0.0], &winners).unwrap();
            assert!((v + 1.098612).abs() < 1e-6);
            assert!((v - (1.0f64 / 3.0).ln()).abs() < 1e-14);
        }
        assert!(subset_loglik(&[0.0, 0.0], &[]).is_err());
    }

    #[test]
    fn subset_single_choice_is_certain() {
        for f in [-3.0, 0.0, 2.5] {
            assert!(subset_loglik(&[f], &[0]).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn subset_marginal_spot_values() {
        let m = subset_marginals(&[0.0, 0.0]).unwrap();
        for p in &m.pi {
            assert!((p - 2.0 / 3.0).abs() < 1e-15);
        }
        assert!((m.pi_pair[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        let m = subset_marginals(&[0.0; 3]).unwrap();
        for p in &m.pi {
            assert!((p - 4.0 / 7.0).abs() < 1e-15);
        }
        assert!(subset_marginals(&[0.0; 13]).is_err());
    }

    #[test]
    fn gradient_spot_values() {
        let obs = PreferenceObservation::new(vec![0, 1, 2, 3], vec![0]).unwrap();
        let m = LikelihoodModel::new(LikelihoodKind::MultinomialLogit);
        let (g, _) = loglik_grad_hess(&[0.3; 4], &[obs], &m).unwrap();
        let expected = [0.75, -0.25, -0.25, -0.25];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let all = PreferenceObservation::new(vec![0, 1], vec![0, 1]).unwrap();
        let m = LikelihoodModel::new(LikelihoodKind::SubsetLogit);
        let (g, _) = loglik_grad_hess(&[0.0, 0.0], &[all], &m).unwrap();
        for v in g.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_hess_rejects_out_of_range() {
        let obs = PreferenceObservation::new(vec![0, 5], vec![0]).unwrap();
        let m = LikelihoodModel::new(LikelihoodKind::MultinomialLogit);
        assert!(matches!(loglik_grad_hess(&[0.0; 3], &[obs], &m), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn pair_marginals_bounded_by_singles(seed in 0u64..100_000, k in 2usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m = subset_marginals(&f).unwrap();
            for j in 0..k {
                for l in 0..k {
                    prop_assert!(m.pi_pair[(j, l)] <= m.pi[j].min(m.pi[l]) + 1e-15);
                }
            }
        }

        #[test]
        fn subset_neg_hessian_is_psd(seed in 0u64..100_000, k in 2usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = subset_terms(&f, &[0]).unwrap();
            let eig = nalgebra::SymmetricEigen::new(t.neg_hess).eigenvalues;
            prop_assert!(eig.iter().all(|&l| l > -1e-12));
        }
    }
}
