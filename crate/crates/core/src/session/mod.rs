//! The propose / observe / refit loop.
//!
//! A session is a sequential state machine. It starts with a pending batch
//! from the quasi-random initialization design; each
//! [`record_choice`](SessionState::record_choice) consumes the pending batch
//! and refits the posterior, and each [`next_batch`](SessionState::next_batch)
//! issues the next one. All randomness comes from per-round streams derived
//! from the configured seed, so a session is reproduced exactly by replaying
//! its recorded choices.

mod autonomous;
mod config;
mod document;

pub use autonomous::{run_autonomous, AutonomousRun, TrajectoryRow};
pub use config::{IncumbentRule, InitAccounting, KernelSettings, SessionConfig};
pub use document::{SessionDocument, SESSION_FORMAT, SESSION_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::propose_batch;
use crate::gp::KernelConfig;
use crate::preference::{laplace_fit, LaplaceOptions, LatentPosterior, PreferenceObservation};
use crate::sobol;
use crate::{Error, Result};

/// Independent random streams per purpose; each round offsets the stream.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Init = 1,
    Propose = 2,
    Choice = 3,
}

pub(crate) fn round_rng(seed: u64, stream: Stream, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | round as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Init,
    Acquisition,
}

/// One issued batch and, once answered, the positions the user picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Zero-based issue order.
    pub round: usize,
    pub phase: Phase,
    /// Idempotency token for this batch.
    pub token: String,
    /// Archive indices of the batch, in display order.
    pub indices: Vec<usize>,
    #[serde(default)]
    pub winners: Option<Vec<usize>>,
    #[serde(default)]
    pub subspace_dim: Option<usize>,
    #[serde(default)]
    pub ei_degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub index: usize,
    /// Posterior mean at the incumbent.
    pub value: f64,
}

/// Posterior summary after each completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    /// Completed rounds, starting at 1.
    pub round: usize,
    pub phase: Phase,
    pub incumbent_index: usize,
    pub incumbent_value: f64,
    pub subspace_dim: Option<usize>,
}

/// Result of [`SessionState::best`].
#[derive(Debug, Clone, PartialEq)]
pub struct BestPoint {
    pub index: usize,
    pub theta: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    config: SessionConfig,
    kernel: KernelConfig,
    init_design: Vec<Vec<f64>>,
    archive: Vec<Vec<f64>>,
    observations: Vec<PreferenceObservation>,
    rounds: Vec<RoundRecord>,
    posterior: Option<LatentPosterior>,
    incumbent: Option<Incumbent>,
    trajectory: Vec<TrajectoryEntry>,
}

impl SessionState {
    /// Generates the `N₀ · K` point initialization design and issues its
    /// first batch.
    pub fn new(config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let n = config.init_rounds().max(1) * config.k;
        let mut rng = round_rng(config.seed, Stream::Init, 0);
        let init_design: Vec<Vec<f64>> = sobol::unit_points(config.bounds.dim(), n, &mut rng)
            .iter()
            .map(|u| config.bounds.from_unit(u))
            .collect();
        let kernel = config.kernel.resolve(&init_design, &config.bounds)?;
        let mut state = Self {
            config,
            kernel,
            init_design,
            archive: Vec::new(),
            observations: Vec::new(),
            rounds: Vec::new(),
            posterior: None,
            incumbent: None,
            trajectory: Vec::new(),
        };
        state.next_batch()?;
        Ok(state)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Kernel actually in use, with resolved lengthscales.
    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    /// The full initialization design, including batches not yet issued.
    pub fn init_design(&self) -> &[Vec<f64>] {
        &self.init_design
    }

    pub fn archive(&self) -> &[Vec<f64>] {
        &self.archive
    }

    pub fn observations(&self) -> &[PreferenceObservation] {
        &self.observations
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn posterior(&self) -> Option<&LatentPosterior> {
        self.posterior.as_ref()
    }

    pub fn incumbent(&self) -> Option<Incumbent> {
        self.incumbent
    }

    pub fn trajectory(&self) -> &[TrajectoryEntry] {
        &self.trajectory
    }

    /// Rounds with recorded feedback.
    pub fn completed_rounds(&self) -> usize {
        self.observations.len()
    }

    pub fn remaining_rounds(&self) -> usize {
        self.config.total_rounds() - self.completed_rounds()
    }

    /// Acquisition budget not yet used; initialization rounds count only
    /// when configured to.
    pub fn remaining_budget(&self) -> usize {
        match self.config.init_accounting {
            InitAccounting::CountsAgainstBudget => self.remaining_rounds(),
            InitAccounting::Separate => {
                let acq_done = self.completed_rounds().saturating_sub(self.config.init_rounds());
                self.config.budget - acq_done
            }
        }
    }

    pub fn is_finished(&self) -> bool {
        self.completed_rounds() >= self.config.total_rounds()
    }

    pub fn pending(&self) -> Option<&RoundRecord> {
        self.rounds.last().filter(|r| r.winners.is_none())
    }

    pub fn pending_points(&self) -> Option<Vec<Vec<f64>>> {
        self.pending()
            .map(|r| r.indices.iter().map(|&i| self.archive[i].clone()).collect())
    }

    /// Records the positions picked from the pending batch, refits the
    /// posterior and updates the incumbent. The state is unchanged on error.
    pub fn record_choice(&mut self, winners: &[usize]) -> Result<()> {
        let pending = self
            .pending()
            .ok_or_else(|| Error::Protocol("no batch is awaiting a choice".into()))?
            .clone();
        if winners.is_empty() {
            return Err(Error::Protocol("at least one candidate must be chosen".into()));
        }
        let obs = PreferenceObservation::new(pending.indices.clone(), winners.to_vec())
            .map_err(|e| Error::Protocol(e.to_string()))?;
        self.config.likelihood.check(&obs).map_err(|e| Error::Protocol(e.to_string()))?;

        let mut observations = self.observations.clone();
        observations.push(obs.clone());
        let posterior = self.fit(&observations)?;
        let (index, value) = match self.config.incumbent_rule {
            IncumbentRule::PosteriorMean => posterior.incumbent(),
            IncumbentRule::LastPreferred => {
                let index = obs.choice_set()[obs.winners()[0]];
                (index, posterior.predictor().mean(&self.archive[index]))
            }
        };

        self.observations = observations;
        self.posterior = Some(posterior);
        self.incumbent = Some(Incumbent { index, value });
        let last = self.rounds.last_mut().expect("pending round exists");
        last.winners = Some(obs.winners().to_vec());
        self.trajectory.push(TrajectoryEntry {
            round: self.observations.len(),
            phase: pending.phase,
            incumbent_index: index,
            incumbent_value: value,
            subspace_dim: pending.subspace_dim,
        });
        Ok(())
    }

    fn fit(&self, observations: &[PreferenceObservation]) -> Result<LatentPosterior> {
        let warm = self.posterior.as_ref().filter(|_| self.config.laplace_warm_start).map(|p| {
            let mut f: Vec<f64> = p.f_map().iter().cloned().collect();
            f.resize(self.archive.len(), 0.0);
            f
        });
        let options = LaplaceOptions { warm_start: warm, ..LaplaceOptions::default() };
        match laplace_fit(&self.archive, observations, &self.kernel, &self.config.likelihood, &options) {
            Err(Error::NotConverged { .. }) if options.warm_start.is_some() => laplace_fit(
                &self.archive,
                observations,
                &self.kernel,
                &self.config.likelihood,
                &LaplaceOptions::default(),
            ),
            other => other,
        }
    }

    /// Issues the next batch: the next slice of the initialization design,
    /// then acquisition proposals around the incumbent.
    pub fn next_batch(&mut self) -> Result<Vec<Vec<f64>>> {
        if self.pending().is_some() {
            return Err(Error::Protocol("a batch is already awaiting a choice".into()));
        }
        let round = self.rounds.len();
        if round >= self.config.total_rounds() {
            return Err(Error::BudgetExhausted(self.config.total_rounds()));
        }
        let k = self.config.k;
        let (phase, points, subspace_dim, ei_degenerate) = if round < self.config.init_rounds() {
            (Phase::Init, self.init_design[round * k..(round + 1) * k].to_vec(), None, false)
        } else {
            let posterior = self
                .posterior
                .as_ref()
                .ok_or_else(|| Error::Protocol("acquisition needs a fitted posterior".into()))?;
            let inc = self.incumbent.expect("incumbent tracks the posterior");
            let mut rng = round_rng(self.config.seed, Stream::Propose, round);
            let proposal = propose_batch(
                self.config.acquisition,
                posterior.predictor(),
                &self.archive[inc.index],
                &self.config.bounds,
                &self.config.dbs,
                &mut rng,
            )?;
            (Phase::Acquisition, proposal.points, proposal.subspace_dim, proposal.ei_degenerate)
        };
        let start = self.archive.len();
        let token = batch_token(self.config.seed, round, &points);
        self.archive.extend(points.iter().cloned());
        self.rounds.push(RoundRecord {
            round,
            phase,
            token,
            indices: (start..start + k).collect(),
            winners: None,
            subspace_dim,
            ei_degenerate,
        });
        Ok(points)
    }

    /// Incumbent and its posterior mean.
    pub fn best(&self) -> Result<BestPoint> {
        let inc = self
            .incumbent
            .ok_or_else(|| Error::Protocol("no posterior has been fitted yet".into()))?;
        Ok(BestPoint {
            index: inc.index,
            theta: self.archive[inc.index].clone(),
            value: inc.value,
        })
    }
}

fn batch_token(seed: u64, round: usize, points: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((round as u64).to_le_bytes());
    for p in points {
        for v in p {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::BoxBounds;
    use crate::preference::LikelihoodKind;

    fn small(seed: u64) -> SessionConfig {
        let mut c = SessionConfig::new(BoxBounds::symmetric(2, 1.0).unwrap(), seed).with_budget(3);
        c.init_batches = 2;
        c.dbs.ei_raw_samples = 128;
        c.dbs.ei_restarts = 3;
        c
    }

    #[test]
    fn init_design_and_first_batch() {
        let mut c = small(1);
        c.init_batches = 10;
        let s = SessionState::new(c).unwrap();
        assert_eq!(s.init_design().len(), 40);
        assert!(s.init_design().iter().all(|p| s.config().bounds.contains(p)));
        assert_eq!(s.pending_points().unwrap(), s.init_design()[..4].to_vec());
        assert_eq!(s.archive().len(), 4);
        let again = SessionState::new(s.config().clone()).unwrap();
        assert_eq!(again.init_design(), s.init_design());
    }

    #[test]
    fn protocol_errors() {
        let mut s = SessionState::new(small(2)).unwrap();
        assert!(matches!(s.next_batch(), Err(Error::Protocol(_))));
        assert!(matches!(s.best(), Err(Error::Protocol(_))));
        assert!(matches!(s.record_choice(&[]), Err(Error::Protocol(_))));
        assert!(matches!(s.record_choice(&[0, 1]), Err(Error::Protocol(_))));
        assert!(matches!(s.record_choice(&[7]), Err(Error::Protocol(_))));
        s.record_choice(&[1]).unwrap();
        assert!(matches!(s.record_choice(&[1]), Err(Error::Protocol(_))));
    }

    #[test]
    fn full_run_and_budget() {
        let mut s = SessionState::new(small(3)).unwrap();
        let total = s.config().total_rounds();
        for r in 0..total {
            s.record_choice(&[r % 4]).unwrap();
            assert_eq!(s.archive().len(), 4 * (r + 1));
            assert_eq!(s.completed_rounds(), r + 1);
            assert!(s.posterior().unwrap().gradient_norm() <= 1e-6);
            if r + 1 < total {
                s.next_batch().unwrap();
            }
        }
        assert!(s.is_finished());
        assert_eq!(s.remaining_budget(), 0);
        assert!(matches!(s.next_batch(), Err(Error::BudgetExhausted(5))));
        let best = s.best().unwrap();
        assert_eq!(best.theta, s.archive()[best.index]);
        let m = s.posterior().unwrap().predictor().mean(&best.theta);
        assert!((m - best.value).abs() <= 1e-10);
        assert_eq!(s.rounds()[2].phase, Phase::Acquisition);
        assert_eq!(s.rounds()[1].phase, Phase::Init);
    }

    #[test]
    fn subset_session_accepts_all_selected() {
        let c = small(4).with_likelihood(LikelihoodKind::SubsetLogit);
        let mut s = SessionState::new(c).unwrap();
        s.record_choice(&[0, 1, 2, 3]).unwrap();
        assert!(s.posterior().unwrap().gradient_norm() <= 1e-6);
    }

    #[test]
    fn winner_outranks_losers_after_one_round() {
        let mut s = SessionState::new(small(5)).unwrap();
        s.record_choice(&[2]).unwrap();
        let p = s.posterior().unwrap().predictor();
        let pts = s.archive();
        let w = p.mean(&pts[2]);
        for i in [0, 1, 3] {
            assert!(w >= p.mean(&pts[i]));
        }
    }

    #[test]
    fn zero_perturbation_batch_contains_incumbent() {
        let mut c = small(6);
        c.dbs.perturb_scale = 0.0;
        let mut s = SessionState::new(c).unwrap();
        s.record_choice(&[0]).unwrap();
        s.next_batch().unwrap();
        s.record_choice(&[3]).unwrap();
        let inc = s.incumbent().unwrap();
        let batch = s.next_batch().unwrap();
        assert!(batch.contains(&s.archive()[inc.index]));
    }
}
