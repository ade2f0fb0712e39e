use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use multibo_core::acquisition::AcquisitionKind;
use multibo_core::bench::{run_ablation, Ablation, BenchmarkSpec};
use multibo_core::oracles::{ChoiceNoiseModel, HiddenObjective, WarpTaskFile};
use multibo_core::preference::LikelihoodKind;
use multibo_core::session::{run_autonomous, SessionConfig, SessionDocument, SessionState};
use multibo_core::Error;

#[derive(Parser)]
#[command(name = "multibo", version, about = "Multi-choice preferential Bayesian optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization ablation and write regret tables plus a summary.
    Bench {
        #[arg(value_enum)]
        ablation: AblationArg,
        #[command(flatten)]
        opts: BenchOpts,
    },
    /// Run one session against a simulated user and write its trajectory.
    RunAuto(RunAutoOpts),
    /// Inspect stored sessions.
    Session {
        #[command(subcommand)]
        command: SessionCommand,
    },
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Re-run a session file's choices, verify it, and print its status.
    Replay { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    PairwiseVsMultiwise,
    ChoiceK,
    DbsComponents,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::PairwiseVsMultiwise => Ablation::PairwiseVsMultiwise,
            AblationArg::ChoiceK => Ablation::ChoiceK,
            AblationArg::DbsComponents => Ablation::DbsComponents,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Argmax,
    Gumbel,
    Subset,
}

#[derive(Clone, Copy, ValueEnum)]
enum LikelihoodArg {
    PairwiseProbit,
    PairwiseLogit,
    MultinomialLogit,
    SubsetLogit,
}

impl From<LikelihoodArg> for LikelihoodKind {
    fn from(l: LikelihoodArg) -> Self {
        match l {
            LikelihoodArg::PairwiseProbit => LikelihoodKind::PairwiseProbit,
            LikelihoodArg::PairwiseLogit => LikelihoodKind::PairwiseLogit,
            LikelihoodArg::MultinomialLogit => LikelihoodKind::MultinomialLogit,
            LikelihoodArg::SubsetLogit => LikelihoodKind::SubsetLogit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AcquisitionArg {
    Dbs,
    BridgeOnly,
    SubspaceOnly,
    EiTopK,
    Random,
}

impl From<AcquisitionArg> for AcquisitionKind {
    fn from(a: AcquisitionArg) -> Self {
        match a {
            AcquisitionArg::Dbs => AcquisitionKind::Dbs,
            AcquisitionArg::BridgeOnly => AcquisitionKind::BridgeOnly,
            AcquisitionArg::SubspaceOnly => AcquisitionKind::SubspaceOnly,
            AcquisitionArg::EiTopK => AcquisitionKind::EiTopK,
            AcquisitionArg::Random => AcquisitionKind::Random,
        }
    }
}

/// Simulated-user flags shared by `bench` and `run-auto`.
#[derive(Args)]
struct UserOpts {
    #[arg(long, value_enum, default_value = "argmax")]
    noise: NoiseArg,
    /// Gumbel-logit temperature.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Subset-threshold margin.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

impl UserOpts {
    fn model(&self) -> ChoiceNoiseModel {
        match self.noise {
            NoiseArg::Argmax => ChoiceNoiseModel::argmax(),
            NoiseArg::Gumbel => ChoiceNoiseModel::gumbel_logit(self.temperature),
            NoiseArg::Subset => ChoiceNoiseModel::subset_threshold(self.epsilon),
        }
    }
}

#[derive(Args)]
struct BenchOpts {
    /// Defaults to warp-affine, or sphere-6d for dbs-components.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    #[arg(long, default_value_t = 50)]
    budget: usize,
    /// Choice-set sizes, comma separated. Defaults to 2,4,6,10 for choice-k
    /// and 4 otherwise.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    init_batches: usize,
    #[command(flatten)]
    user: UserOpts,
    /// Scale the Gumbel temperature by 1 + 0.15 (K - 2).
    #[arg(long)]
    scale_temperature_with_k: bool,
    #[arg(long, default_value_t = 1024)]
    ei_raw_samples: usize,
    #[arg(long, default_value_t = 10)]
    ei_restarts: usize,
    #[arg(long, default_value_t = 100)]
    ei_ascent_iters: usize,
    /// Output directory.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunAutoOpts {
    #[arg(long, default_value = "warp-affine")]
    objective: String,
    /// Warp task file; overrides --objective.
    #[arg(long)]
    task: Option<PathBuf>,
    /// Session seed; warp objectives draw their hidden warp from it too.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    #[arg(long, default_value_t = 50)]
    budget: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    init_batches: usize,
    /// Defaults to pairwise-logit for K = 2, subset-logit for the subset
    /// user, multinomial-logit otherwise.
    #[arg(long, value_enum)]
    likelihood: Option<LikelihoodArg>,
    #[arg(long, value_enum, default_value = "dbs")]
    acquisition: AcquisitionArg,
    #[command(flatten)]
    user: UserOpts,
    #[arg(long)]
    ei_raw_samples: Option<usize>,
    #[arg(long)]
    ei_restarts: Option<usize>,
    /// Trajectory CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the replay document here.
    #[arg(long)]
    session: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Io(PathBuf, std::io::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

/// 3 for numerical failures, 1 for I/O, 2 for every other input problem.
fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Core(e) if e.is_numerical() => 3,
        CliError::Core(Error::Io(_)) | CliError::Io(..) => 1,
        CliError::Core(_) => 2,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io(parent.to_path_buf(), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn bench(ablation: Ablation, o: BenchOpts) -> Result<(), CliError> {
    let default_objective = match ablation {
        Ablation::DbsComponents => "sphere-6d",
        _ => "warp-affine",
    };
    let mut spec = BenchmarkSpec::new(o.objective.unwrap_or_else(|| default_objective.into()));
    spec.seeds = o.seeds;
    spec.seed_offset = o.seed_offset;
    spec.budget = o.budget;
    spec.init_batches = o.init_batches;
    spec.k_values = match (o.k.is_empty(), ablation) {
        (false, _) => o.k,
        (true, Ablation::ChoiceK) => vec![2, 4, 6, 10],
        (true, _) => vec![4],
    };
    spec.choice = o.user.model();
    spec.scale_temperature_with_k = o.scale_temperature_with_k;
    spec.ei_raw_samples = o.ei_raw_samples;
    spec.ei_restarts = o.ei_restarts;
    spec.ei_ascent_iters = o.ei_ascent_iters;
    let report = run_ablation(ablation, &spec)?;
    let written = report.write(&o.out).map_err(|e| match e {
        Error::Io(io) => CliError::Io(o.out.clone(), io),
        e => e.into(),
    })?;
    let mut stdout = std::io::stdout().lock();
    for v in &report.variants {
        let f = v.final_point();
        let _ = writeln!(
            stdout,
            "{:<16} final median regret {:.4} (IQR {:.4}..{:.4})",
            v.variant.name, f.median, f.q25, f.q75
        );
    }
    for (k, v) in &report.findings {
        let _ = writeln!(stdout, "{k}: {v}");
    }
    for p in written {
        let _ = writeln!(stdout, "wrote {}", p.display());
    }
    Ok(())
}

fn run_auto(o: RunAutoOpts) -> Result<(), CliError> {
    let objective = match &o.task {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.clone(), e))?;
            let file: WarpTaskFile = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            HiddenObjective::warp_match(file.build(path.parent())?)
        }
        None => HiddenObjective::from_name(&o.objective, o.seed_offset)?,
    };
    let user = o.user.model();
    let likelihood = match o.likelihood {
        Some(l) => l.into(),
        None if user.multi_select() => LikelihoodKind::SubsetLogit,
        None if o.k == 2 => LikelihoodKind::PairwiseLogit,
        None => LikelihoodKind::MultinomialLogit,
    };
    let mut cfg = SessionConfig::new(objective.bounds().clone(), o.seed_offset)
        .with_k(o.k)
        .with_budget(o.budget)
        .with_likelihood(likelihood);
    cfg.init_batches = o.init_batches;
    cfg.acquisition = o.acquisition.into();
    if let Some(n) = o.ei_raw_samples {
        cfg.dbs.ei_raw_samples = n;
    }
    if let Some(n) = o.ei_restarts {
        cfg.dbs.ei_restarts = n;
    }
    let run = run_autonomous(&cfg, &objective, &user)?;
    let csv = run.to_csv();
    match &o.out {
        Some(p) => write_file(p, csv.as_bytes())?,
        None => {
            let _ = std::io::stdout().lock().write_all(csv.as_bytes());
        }
    }
    if let Some(p) = &o.session {
        write_file(p, run.state.to_document().to_json().as_bytes())?;
    }
    if o.out.is_some() {
        println!("final regret {:?} after {} rounds", run.final_regret(), run.rows.len());
    }
    Ok(())
}

fn replay(file: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(file).map_err(|e| CliError::Io(file.to_path_buf(), e))?;
    let doc = SessionDocument::from_json(&text)?;
    let state = SessionState::replay(&doc)?;
    let best = state.best().ok().map(|b| {
        serde_json::json!({ "index": b.index, "theta": b.theta, "posterior_mean": b.value })
    });
    let status = serde_json::json!({
        "verified": true,
        "config_hash": state.config().hash(),
        "completed_rounds": state.completed_rounds(),
        "remaining_rounds": state.remaining_rounds(),
        "finished": state.is_finished(),
        "archive_size": state.archive().len(),
        "best": best,
        "trajectory": state.trajectory(),
    });
    println!("{}", serde_json::to_string_pretty(&status).expect("status serializes"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench { ablation, opts } => bench(ablation.into(), opts),
        Command::RunAuto(opts) => run_auto(opts),
        Command::Session { command: SessionCommand::Replay { file } } => replay(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
