//! Ablation harness: pairwise vs multiwise feedback, choice-set size, and
//! the parts of the balanced-subspace acquisition.
//!
//! Every variant runs one autonomous session per seed. Reports hold median
//! and interquartile simple-regret curves over seeds, and are written as one
//! CSV per variant plus a JSON summary. Output bytes depend only on the
//! benchmark spec.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::AcquisitionKind;
use crate::oracles::{ChoiceKind, ChoiceNoiseModel, HiddenObjective};
use crate::preference::LikelihoodKind;
use crate::session::{run_autonomous, SessionConfig};
use crate::stats::quantile_sorted;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    PairwiseVsMultiwise,
    ChoiceK,
    DbsComponents,
}

impl Ablation {
    pub fn name(&self) -> &'static str {
        match self {
            Ablation::PairwiseVsMultiwise => "pairwise-vs-multiwise",
            Ablation::ChoiceK => "choice-k",
            Ablation::DbsComponents => "dbs-components",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    /// Objective name as accepted by [`HiddenObjective::from_name`].
    pub objective: String,
    pub seeds: usize,
    pub seed_offset: u64,
    pub budget: usize,
    pub init_batches: usize,
    /// Choice-set sizes. Pairwise-vs-multiwise uses the first value above 2
    /// for the multiwise arm; DBS components use the first value.
    pub k_values: Vec<usize>,
    pub choice: ChoiceNoiseModel,
    /// Scale a Gumbel-logit user's temperature by `1 + 0.15 (K - 2)`.
    pub scale_temperature_with_k: bool,
    pub ei_raw_samples: usize,
    pub ei_restarts: usize,
    pub ei_ascent_iters: usize,
}

impl BenchmarkSpec {
    /// 20 seeds, `B = 50`, `N₀ = 10`, `K = 4`, argmax user, and a reduced EI
    /// search budget (1024 raw samples, 10 restarts, 100 ascent steps).
    pub fn new(objective: impl Into<String>) -> Self {
        Self {
            objective: objective.into(),
            seeds: 20,
            seed_offset: 0,
            budget: 50,
            init_batches: 10,
            k_values: vec![4],
            choice: ChoiceNoiseModel::argmax(),
            scale_temperature_with_k: false,
            ei_raw_samples: 1024,
            ei_restarts: 10,
            ei_ascent_iters: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::config("at least one seed is required"));
        }
        if self.k_values.is_empty() || self.k_values.iter().any(|&k| k < 2) {
            return Err(Error::config("every K must be at least 2"));
        }
        if self.init_batches == 0 {
            return Err(Error::config("at least one initialization round is required"));
        }
        if self.ei_raw_samples == 0 || self.ei_restarts == 0 {
            return Err(Error::config("EI search needs raw samples and restarts"));
        }
        self.choice.validate()?;
        if self.choice.multi_select() {
            return Err(Error::config("benchmarks use single-choice users"));
        }
        HiddenObjective::from_name(&self.objective, self.seed_offset)?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha_hex(&serde_json::to_string(self).expect("spec serializes"))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed_offset + i).collect()
    }

    fn choice_for(&self, k: usize) -> ChoiceNoiseModel {
        if self.scale_temperature_with_k && self.choice.kind == ChoiceKind::GumbelLogit {
            ChoiceNoiseModel::k_scaled(self.choice.temperature, k)
        } else {
            self.choice
        }
    }
}

fn sha_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// One arm of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub k: usize,
    pub likelihood: LikelihoodKind,
    pub acquisition: AcquisitionKind,
    pub choice: ChoiceNoiseModel,
}

impl Variant {
    /// `K = 2` with the pairwise logit, which coincides with the
    /// multinomial logit over two options.
    fn pairwise(name: &str, choice: ChoiceNoiseModel) -> Self {
        Self {
            name: name.into(),
            k: 2,
            likelihood: LikelihoodKind::PairwiseLogit,
            acquisition: AcquisitionKind::Dbs,
            choice,
        }
    }

    fn multiwise(name: String, k: usize, choice: ChoiceNoiseModel) -> Self {
        Self {
            name,
            k,
            likelihood: LikelihoodKind::MultinomialLogit,
            acquisition: AcquisitionKind::Dbs,
            choice,
        }
    }

    pub fn session_config(&self, spec: &BenchmarkSpec, objective: &HiddenObjective, seed: u64) -> SessionConfig {
        let mut cfg = SessionConfig::new(objective.bounds().clone(), seed)
            .with_k(self.k)
            .with_budget(spec.budget)
            .with_likelihood(self.likelihood);
        cfg.init_batches = spec.init_batches;
        cfg.acquisition = self.acquisition;
        cfg.dbs.ei_raw_samples = spec.ei_raw_samples;
        cfg.dbs.ei_restarts = spec.ei_restarts;
        cfg.dbs.ei_ascent_iters = spec.ei_ascent_iters;
        cfg
    }
}

/// Variants an ablation runs, in report order.
pub fn variants(ablation: Ablation, spec: &BenchmarkSpec) -> Vec<Variant> {
    match ablation {
        Ablation::PairwiseVsMultiwise => {
            let k = spec.k_values.iter().copied().find(|&k| k > 2).unwrap_or(4);
            vec![
                Variant::pairwise("pairwise-k2", spec.choice_for(2)),
                Variant::multiwise(format!("multiwise-k{k}"), k, spec.choice_for(k)),
            ]
        }
        Ablation::ChoiceK => spec
            .k_values
            .iter()
            .map(|&k| {
                if k == 2 {
                    Variant::pairwise("k2", spec.choice_for(2))
                } else {
                    Variant::multiwise(format!("k{k}"), k, spec.choice_for(k))
                }
            })
            .collect(),
        Ablation::DbsComponents => {
            let k = spec.k_values[0];
            AcquisitionKind::ALL
                .iter()
                .map(|&a| Variant {
                    name: a.name().into(),
                    acquisition: a,
                    ..Variant::multiwise(String::new(), k, spec.choice_for(k))
                })
                .collect()
        }
    }
}

/// Trajectory of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub regret: Vec<f64>,
    pub subspace_dim: Vec<Option<usize>>,
}

/// Summary statistics over seeds at one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    /// Mean selected subspace dimension over seeds that built one.
    pub mean_subspace_dim: Option<f64>,
}

/// Everything a variant's numbers depend on. Two variants with equal keys
/// produce identical results whatever their names.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunKey<'a> {
    objective: &'a str,
    seeds: Vec<u64>,
    budget: usize,
    init_batches: usize,
    ei_raw_samples: usize,
    ei_restarts: usize,
    ei_ascent_iters: usize,
    k: usize,
    likelihood: LikelihoodKind,
    acquisition: AcquisitionKind,
    choice: ChoiceNoiseModel,
}

impl<'a> RunKey<'a> {
    fn new(spec: &'a BenchmarkSpec, variant: &Variant) -> Self {
        Self {
            objective: &spec.objective,
            seeds: spec.seed_list(),
            budget: spec.budget,
            init_batches: spec.init_batches,
            ei_raw_samples: spec.ei_raw_samples,
            ei_restarts: spec.ei_restarts,
            ei_ascent_iters: spec.ei_ascent_iters,
            k: variant.k,
            likelihood: variant.likelihood,
            acquisition: variant.acquisition,
            choice: variant.choice,
        }
    }

    fn hash(&self) -> String {
        sha_hex(&serde_json::to_string(self).expect("key serializes"))
    }
}

/// Results of earlier variants by configuration hash, so that arms shared
/// between ablations run once.
#[derive(Debug, Default)]
pub struct VariantCache {
    runs: BTreeMap<String, Vec<SeedRun>>,
}

impl VariantCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    /// Hash of every setting the variant's numbers depend on.
    pub config_hash: String,
    pub runs: Vec<SeedRun>,
    pub curve: Vec<CurvePoint>,
}

impl VariantResult {
    pub fn final_point(&self) -> &CurvePoint {
        self.curve.last().expect("at least one round")
    }

    pub fn final_regrets(&self) -> Vec<f64> {
        self.runs.iter().map(|r| *r.regret.last().expect("at least one round")).collect()
    }

    /// `round,median_regret,q25_regret,q75_regret,mean_regret,mean_subspace_dim,config_hash`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,median_regret,q25_regret,q75_regret,mean_regret,mean_subspace_dim,config_hash\n");
        for p in &self.curve {
            let d = p.mean_subspace_dim.map(|d| format!("{d:?}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{},{}",
                p.round, p.median, p.q25, p.q75, p.mean, d, self.config_hash
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub ablation: Ablation,
    pub spec: BenchmarkSpec,
    pub spec_hash: String,
    pub variants: Vec<VariantResult>,
    /// Ablation-specific comparisons, keyed by name.
    pub findings: BTreeMap<String, serde_json::Value>,
}

impl BenchReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.variant.name == name)
    }

    /// Compact JSON summary: spec, per-variant final statistics and
    /// per-seed final regrets, and the findings.
    pub fn summary_json(&self) -> String {
        let variants: Vec<serde_json::Value> = self
            .variants
            .iter()
            .map(|v| {
                let f = v.final_point();
                serde_json::json!({
                    "name": v.variant.name,
                    "config_hash": v.config_hash,
                    "variant": v.variant,
                    "rounds": v.curve.len(),
                    "final_median_regret": f.median,
                    "final_q25_regret": f.q25,
                    "final_q75_regret": f.q75,
                    "final_regret_by_seed": v.runs.iter().map(|r| (r.seed.to_string(), *r.regret.last().unwrap())).collect::<BTreeMap<_, _>>(),
                    "curve_file": csv_name(self.ablation, &v.variant.name),
                })
            })
            .collect();
        let doc = serde_json::json!({
            "ablation": self.ablation.name(),
            "spec": self.spec,
            "spec_hash": self.spec_hash,
            "variants": variants,
            "findings": self.findings,
        });
        serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n"
    }

    /// Writes one CSV per variant and `<ablation>__summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for v in &self.variants {
            let p = dir.join(csv_name(self.ablation, &v.variant.name));
            std::fs::write(&p, v.to_csv())?;
            written.push(p);
        }
        let p = dir.join(format!("{}__summary.json", self.ablation.name()));
        std::fs::write(&p, self.summary_json())?;
        written.push(p);
        Ok(written)
    }
}

fn csv_name(ablation: Ablation, variant: &str) -> String {
    format!("{}__{}.csv", ablation.name(), variant)
}

/// Runs every seed of one variant.
pub fn run_variant(spec: &BenchmarkSpec, variant: &Variant) -> Result<VariantResult> {
    run_variant_cached(spec, variant, &mut VariantCache::new())
}

pub fn run_variant_cached(spec: &BenchmarkSpec, variant: &Variant, cache: &mut VariantCache) -> Result<VariantResult> {
    let config_hash = RunKey::new(spec, variant).hash();
    let runs = match cache.runs.get(&config_hash) {
        Some(r) => r.clone(),
        None => {
            let r = run_seeds(spec, variant)?;
            cache.runs.insert(config_hash.clone(), r.clone());
            r
        }
    };
    let curve = summarize(&runs);
    Ok(VariantResult { variant: variant.clone(), config_hash, runs, curve })
}

fn run_seeds(spec: &BenchmarkSpec, variant: &Variant) -> Result<Vec<SeedRun>> {
    spec.seed_list()
        .par_iter()
        .map(|&seed| {
            let objective = HiddenObjective::from_name(&spec.objective, seed)?;
            let cfg = variant.session_config(spec, &objective, seed);
            let run = run_autonomous(&cfg, &objective, &variant.choice)?;
            Ok(SeedRun {
                seed,
                regret: run.rows.iter().map(|r| r.regret).collect(),
                subspace_dim: run.rows.iter().map(|r| r.subspace_dim).collect(),
            })
        })
        .collect()
}

fn summarize(runs: &[SeedRun]) -> Vec<CurvePoint> {
    let rounds = runs.iter().map(|r| r.regret.len()).min().unwrap_or(0);
    (0..rounds)
        .map(|i| {
            let mut v: Vec<f64> = runs.iter().map(|r| r.regret[i]).collect();
            v.sort_by(f64::total_cmp);
            let dims: Vec<f64> = runs.iter().filter_map(|r| r.subspace_dim[i]).map(|d| d as f64).collect();
            CurvePoint {
                round: i + 1,
                median: quantile_sorted(&v, 0.5),
                q25: quantile_sorted(&v, 0.25),
                q75: quantile_sorted(&v, 0.75),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                mean_subspace_dim: if dims.is_empty() {
                    None
                } else {
                    Some(dims.iter().sum::<f64>() / dims.len() as f64)
                },
            }
        })
        .collect()
}

/// Runs all variants of an ablation and derives its findings.
pub fn run_ablation(ablation: Ablation, spec: &BenchmarkSpec) -> Result<BenchReport> {
    run_ablation_cached(ablation, spec, &mut VariantCache::new())
}

pub fn run_ablation_cached(ablation: Ablation, spec: &BenchmarkSpec, cache: &mut VariantCache) -> Result<BenchReport> {
    spec.validate()?;
    let results = variants(ablation, spec)
        .iter()
        .map(|v| run_variant_cached(spec, v, cache))
        .collect::<Result<Vec<_>>>()?;
    let findings = match ablation {
        Ablation::PairwiseVsMultiwise => pairwise_findings(&results[0], &results[1]),
        Ablation::ChoiceK => choice_k_findings(&results),
        Ablation::DbsComponents => dbs_findings(&results),
    };
    Ok(BenchReport {
        ablation,
        spec: spec.clone(),
        spec_hash: spec.hash(),
        variants: results,
        findings,
    })
}

pub fn run_ablation_pairwise_vs_multiwise(spec: &BenchmarkSpec) -> Result<BenchReport> {
    run_ablation(Ablation::PairwiseVsMultiwise, spec)
}

pub fn run_ablation_choice_k(spec: &BenchmarkSpec) -> Result<BenchReport> {
    run_ablation(Ablation::ChoiceK, spec)
}

pub fn run_ablation_dbs_components(spec: &BenchmarkSpec) -> Result<BenchReport> {
    run_ablation(Ablation::DbsComponents, spec)
}

/// First round from which `a`'s median curve stays at or below `b`'s.
pub fn dominates_from(a: &VariantResult, b: &VariantResult) -> Option<usize> {
    let n = a.curve.len().min(b.curve.len());
    let mut from = None;
    for i in (0..n).rev() {
        if a.curve[i].median <= b.curve[i].median {
            from = Some(a.curve[i].round);
        } else {
            break;
        }
    }
    from
}

fn pairwise_findings(pair: &VariantResult, multi: &VariantResult) -> BTreeMap<String, serde_json::Value> {
    let pf = pair.final_regrets();
    let mf = multi.final_regrets();
    let wins = pf.iter().zip(&mf).filter(|(p, m)| m < p).count();
    let mut out = BTreeMap::new();
    out.insert("pairwise_final_median".into(), pair.final_point().median.into());
    out.insert("multiwise_final_median".into(), multi.final_point().median.into());
    out.insert("multiwise_win_rate".into(), (wins as f64 / pf.len() as f64).into());
    out.insert(
        "multiwise_lower_final_median".into(),
        (multi.final_point().median < pair.final_point().median).into(),
    );
    out.insert("multiwise_dominates_from_round".into(), dominates_from(multi, pair).into());
    out
}

fn choice_k_findings(results: &[VariantResult]) -> BTreeMap<String, serde_json::Value> {
    let mut out = BTreeMap::new();
    let finals: Vec<(usize, f64)> = results.iter().map(|r| (r.variant.k, r.final_point().median)).collect();
    for (k, m) in &finals {
        out.insert(format!("k{k}_final_median"), (*m).into());
    }
    let mut sorted = finals.clone();
    sorted.sort_by_key(|(k, _)| *k);
    let monotone = sorted.windows(2).all(|w| w[1].1 <= w[0].1);
    out.insert("final_median_non_increasing_in_k".into(), monotone.into());
    let get = |k: usize| finals.iter().find(|(kk, _)| *kk == k).map(|(_, m)| *m);
    if let (Some(k4), Some(k10)) = (get(4), get(10)) {
        out.insert("k10_exceeds_k4".into(), (k10 > k4).into());
    }
    out
}

fn dbs_findings(results: &[VariantResult]) -> BTreeMap<String, serde_json::Value> {
    let mut out = BTreeMap::new();
    for r in results {
        out.insert(format!("{}_final_median", r.variant.name), r.final_point().median.into());
    }
    let get = |n: &str| results.iter().find(|r| r.variant.name == n).map(|r| r.final_point().median);
    if let (Some(d), Some(r)) = (get("dbs"), get("random")) {
        out.insert("dbs_beats_random".into(), (d < r).into());
    }
    out
}
