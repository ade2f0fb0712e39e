use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{round_rng, Phase, SessionConfig, SessionState, Stream};
use crate::oracles::{simulate_choice, ChoiceNoiseModel, HiddenObjective};
use crate::preference::LikelihoodKind;
use crate::{Error, Result};

/// One completed round of an autonomous run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub round: usize,
    pub phase: Phase,
    pub incumbent_index: usize,
    /// Posterior mean at the incumbent.
    pub incumbent_value: f64,
    /// Objective value at the incumbent.
    pub true_objective: f64,
    /// `max f - f(incumbent)`.
    pub regret: f64,
    pub subspace_dim: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct AutonomousRun {
    pub rows: Vec<TrajectoryRow>,
    pub state: SessionState,
}

impl AutonomousRun {
    pub fn final_regret(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.regret)
    }

    /// `round,phase,incumbent_index,incumbent_value,true_objective,regret,subspace_dim`,
    /// one row per completed round. Floats use the shortest representation
    /// that round-trips; an absent subspace dimension is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,phase,incumbent_index,incumbent_value,true_objective,regret,subspace_dim\n");
        for r in &self.rows {
            let phase = match r.phase {
                Phase::Init => "init",
                Phase::Acquisition => "acquisition",
            };
            let d = r.subspace_dim.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{:?},{:?},{:?},{}",
                r.round, phase, r.incumbent_index, r.incumbent_value, r.true_objective, r.regret, d
            );
        }
        out
    }
}

/// Runs a whole session against a simulated user: every batch is scored by
/// `objective` and answered by `choice`.
pub fn run_autonomous(cfg: &SessionConfig, objective: &HiddenObjective, choice: &ChoiceNoiseModel) -> Result<AutonomousRun> {
    if &cfg.bounds != objective.bounds() {
        return Err(Error::config(format!("session bounds do not match objective {}", objective.name())));
    }
    choice.validate()?;
    if choice.multi_select() && cfg.likelihood.kind != LikelihoodKind::SubsetLogit {
        return Err(Error::config("a multi-select user needs the subset likelihood"));
    }
    let mut state = SessionState::new(cfg.clone())?;
    let mut truth: Vec<f64> = Vec::new();
    let mut rows = Vec::with_capacity(cfg.total_rounds());
    loop {
        let batch = state.pending_points().expect("a batch is pending");
        let values = batch.iter().map(|x| objective.evaluate(x)).collect::<Result<Vec<f64>>>()?;
        truth.extend_from_slice(&values);
        let round = state.completed_rounds();
        let mut rng = round_rng(cfg.seed, Stream::Choice, round);
        let winners = simulate_choice(&values, choice, &mut rng)?;
        state.record_choice(&winners)?;
        let entry = state.trajectory().last().expect("round recorded").clone();
        let true_objective = truth[entry.incumbent_index];
        rows.push(TrajectoryRow {
            round: entry.round,
            phase: entry.phase,
            incumbent_index: entry.incumbent_index,
            incumbent_value: entry.incumbent_value,
            true_objective,
            regret: objective.max_value() - true_objective,
            subspace_dim: entry.subspace_dim,
        });
        if state.is_finished() {
            break;
        }
        state.next_batch()?;
    }
    Ok(AutonomousRun { rows, state })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(objective: &HiddenObjective, seed: u64, budget: usize) -> SessionConfig {
        let mut c = SessionConfig::new(objective.bounds().clone(), seed).with_budget(budget);
        c.init_batches = 2;
        c.dbs.ei_raw_samples = 128;
        c.dbs.ei_restarts = 2;
        c
    }

    #[test]
    fn zero_budget_runs_only_initialization() {
        let o = HiddenObjective::sphere(2).unwrap();
        let run = run_autonomous(&cfg(&o, 1, 0), &o, &ChoiceNoiseModel::argmax()).unwrap();
        assert_eq!(run.rows.len(), 2);
        assert!(run.rows.iter().all(|r| r.phase == Phase::Init));
    }

    #[test]
    fn identical_seeds_give_identical_csv() {
        let o = HiddenObjective::sphere(2).unwrap();
        let a = run_autonomous(&cfg(&o, 7, 3), &o, &ChoiceNoiseModel::gumbel_logit(1.0)).unwrap();
        let b = run_autonomous(&cfg(&o, 7, 3), &o, &ChoiceNoiseModel::gumbel_logit(1.0)).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_csv().lines().count(), 6);
        assert!(a.rows.iter().all(|r| r.regret >= 0.0));
    }

    #[test]
    fn mismatched_bounds_and_users_rejected() {
        let o = HiddenObjective::sphere(2).unwrap();
        let other = HiddenObjective::sphere(3).unwrap();
        assert!(run_autonomous(&cfg(&other, 1, 1), &o, &ChoiceNoiseModel::argmax()).is_err());
        assert!(run_autonomous(&cfg(&o, 1, 1), &o, &ChoiceNoiseModel::subset_threshold(0.1)).is_err());
    }
}
