//! Session registry: creation, transitions, persistence and restore.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use multibo_core::oracles::{draw_theta_star, WarpMatchTask, WarpParameterization};
use multibo_core::preference::LikelihoodKind;
use multibo_core::session::{SessionConfig, SessionDocument, SessionState};
use multibo_core::warp::Field2D;
use multibo_core::Error;
use serde::{Deserialize, Serialize};

use crate::api::*;
use crate::preview::{encode_png, PreviewStore};

const STORED_FORMAT: &str = "multibo.service-session";
const STORED_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum HostError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Numerical(String),
    Internal(String),
}

impl HostError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            HostError::BadRequest(_) => ErrorKind::BadRequest,
            HostError::NotFound(_) => ErrorKind::NotFound,
            HostError::Conflict(_) => ErrorKind::Conflict,
            HostError::Numerical(_) => ErrorKind::Numerical,
            HostError::Internal(_) => ErrorKind::Internal,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            HostError::BadRequest(m)
            | HostError::NotFound(m)
            | HostError::Conflict(m)
            | HostError::Numerical(m)
            | HostError::Internal(m) => m,
        }
    }
}

impl From<Error> for HostError {
    fn from(e: Error) -> Self {
        match e {
            e if e.is_numerical() => HostError::Numerical(e.to_string()),
            Error::Protocol(_) | Error::BudgetExhausted(_) => HostError::Conflict(e.to_string()),
            Error::Io(_) => HostError::Internal(e.to_string()),
            e => HostError::BadRequest(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HostError {
    fn from(e: std::io::Error) -> Self {
        HostError::Internal(e.to_string())
    }
}

type HostResult<T> = Result<T, HostError>;

/// What a session needs to be rebuilt after a restart: the task request
/// (including any uploaded image and hidden warp) and the replay document.
#[derive(Debug, Serialize, Deserialize)]
struct StoredSession {
    format: String,
    version: u32,
    id: String,
    created_at: u64,
    task: TaskRequest,
    document: SessionDocument,
}

struct Hosted {
    id: String,
    created_at: u64,
    request: TaskRequest,
    task: WarpMatchTask,
    task_name: String,
    state: SessionState,
    render_range: (f64, f64),
    /// Preview path per archive index.
    previews: HashMap<usize, String>,
}

struct Entry {
    proposing: AtomicBool,
    hosted: Mutex<Hosted>,
}

impl Entry {
    fn lock(&self) -> std::sync::MutexGuard<'_, Hosted> {
        self.hosted.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// All hosted sessions. Transitions of one session are serialized by its
/// own mutex; different sessions proceed independently.
pub struct Host {
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
    previews: PreviewStore,
    session_dir: Option<PathBuf>,
}

fn build_task(req: &TaskRequest) -> HostResult<(WarpMatchTask, String)> {
    let bad = |e: Error| HostError::BadRequest(e.to_string());
    match (&req.source, req.name.as_deref()) {
        (Some(img), _) => {
            if img.width < 2 || img.height < 2 || img.width > MAX_IMAGE_SIDE || img.height > MAX_IMAGE_SIDE {
                return Err(HostError::BadRequest(format!(
                    "source image must be between 2 and {MAX_IMAGE_SIDE} pixels on each side"
                )));
            }
            if img.pixels.len() != img.width * img.height {
                return Err(HostError::BadRequest(format!(
                    "source image has {} pixels, expected {}",
                    img.pixels.len(),
                    img.width * img.height
                )));
            }
            let values = img.pixels.iter().map(|&p| p as f64 / 255.0).collect();
            let field = Field2D::new(img.width, img.height, values).map_err(bad)?;
            let p = req.parameterization.unwrap_or(WarpParameterization::Affine);
            let theta = req.theta_star.clone().unwrap_or_else(|| draw_theta_star(req.seed, p));
            let task = WarpMatchTask::new(field, theta, p, req.blind).map_err(bad)?;
            Ok((task, format!("upload-{}", p.name())))
        }
        (None, Some(name)) => {
            let p = match name {
                "warp-affine" => WarpParameterization::Affine,
                "warp-full" => WarpParameterization::Full,
                other => return Err(HostError::BadRequest(format!("unknown task {other}"))),
            };
            if req.parameterization.is_some_and(|q| q != p) {
                return Err(HostError::BadRequest(format!("task {name} fixes the parameterization")));
            }
            let theta = req.theta_star.clone().unwrap_or_else(|| draw_theta_star(req.seed, p));
            let source = WarpMatchTask::synthetic(req.seed, 32, p).map_err(bad)?.source().clone();
            let task = WarpMatchTask::new(source, theta, p, req.blind).map_err(bad)?;
            Ok((task, name.to_string()))
        }
        (None, None) => Err(HostError::BadRequest("task needs a name or a source image".into())),
    }
}

fn build_config(task: &WarpMatchTask, o: &ConfigOverrides) -> HostResult<SessionConfig> {
    let k = o.k.unwrap_or(4);
    if !(2..=MAX_K).contains(&k) {
        return Err(HostError::BadRequest(format!("K must be between 2 and {MAX_K}, got {k}")));
    }
    let budget = o.budget.unwrap_or(50);
    if budget > MAX_BUDGET {
        return Err(HostError::BadRequest(format!("budget must be at most {MAX_BUDGET}, got {budget}")));
    }
    let likelihood = o.likelihood.unwrap_or(if k == 2 {
        LikelihoodKind::PairwiseLogit
    } else {
        LikelihoodKind::MultinomialLogit
    });
    let mut cfg = SessionConfig::new(task.bounds().clone(), o.seed.unwrap_or(0))
        .with_k(k)
        .with_budget(budget)
        .with_likelihood(likelihood);
    if let Some(n) = o.init_batches {
        if n > MAX_INIT_BATCHES {
            return Err(HostError::BadRequest(format!("at most {MAX_INIT_BATCHES} initialization rounds")));
        }
        cfg.init_batches = n;
    }
    if let Some(a) = o.acquisition {
        cfg.acquisition = a;
    }
    if let Some(n) = o.ei_raw_samples {
        if n > 16_384 {
            return Err(HostError::BadRequest("at most 16384 raw EI samples".into()));
        }
        cfg.dbs.ei_raw_samples = n;
    }
    if let Some(n) = o.ei_restarts {
        if n > 200 {
            return Err(HostError::BadRequest("at most 200 EI restarts".into()));
        }
        cfg.dbs.ei_restarts = n;
    }
    cfg.validate().map_err(|e| HostError::BadRequest(e.to_string()))?;
    Ok(cfg)
}

fn check_version(v: Option<u32>) -> HostResult<()> {
    match v {
        Some(v) if v != PROTOCOL_VERSION => Err(HostError::BadRequest(format!(
            "protocol version {v} is not supported (server speaks {PROTOCOL_VERSION})"
        ))),
        _ => Ok(()),
    }
}

fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl Hosted {
    fn new(id: String, created_at: u64, request: TaskRequest, task: WarpMatchTask, task_name: String, state: SessionState) -> Self {
        let render_range = task.source().min_max();
        Self { id, created_at, request, task, task_name, state, render_range, previews: HashMap::new() }
    }

    fn stored(&self, state: &SessionState) -> StoredSession {
        StoredSession {
            format: STORED_FORMAT.into(),
            version: STORED_VERSION,
            id: self.id.clone(),
            created_at: self.created_at,
            task: self.request.clone(),
            document: state.to_document(),
        }
    }

    fn render(&mut self, store: &PreviewStore, index: usize) -> HostResult<String> {
        if let Some(p) = self.previews.get(&index) {
            return Ok(p.clone());
        }
        let field = self.task.render(&self.state.archive()[index])?;
        let path = store.put(encode_png(&field, self.render_range))?;
        self.previews.insert(index, path.clone());
        Ok(path)
    }

    fn target_preview(&self, store: &PreviewStore) -> HostResult<Option<String>> {
        if !self.request.show_target {
            return Ok(None);
        }
        Ok(Some(store.put(encode_png(self.task.target(), self.render_range))?))
    }

    fn true_objective(&self, index: usize) -> HostResult<Option<f64>> {
        if self.task.blind() {
            return Ok(None);
        }
        Ok(Some(self.task.objective(&self.state.archive()[index])?))
    }

    fn summary(&self) -> ConfigSummary {
        let c = self.state.config();
        ConfigSummary {
            task: self.task_name.clone(),
            parameterization: self.task.parameterization(),
            dim: c.bounds.dim(),
            k: c.k,
            budget: c.budget,
            init_batches: c.init_batches,
            total_rounds: c.total_rounds(),
            likelihood: c.likelihood.kind,
            acquisition: c.acquisition,
            multi_select: c.likelihood.kind == LikelihoodKind::SubsetLogit,
            blind: self.task.blind(),
            config_hash: c.hash(),
        }
    }

    fn handle(&self, proposing: bool) -> SessionHandle {
        let state = if self.state.is_finished() {
            SessionStatus::Finished
        } else if proposing {
            SessionStatus::Proposing
        } else {
            SessionStatus::AwaitingChoice
        };
        SessionHandle { id: self.id.clone(), created_at: self.created_at, state, config: self.summary() }
    }

    fn batch(&mut self, store: &PreviewStore) -> HostResult<Batch> {
        let pending = self
            .state
            .pending()
            .cloned()
            .ok_or_else(|| HostError::Conflict("session is finished".into()))?;
        let candidates = pending
            .indices
            .iter()
            .enumerate()
            .map(|(position, &i)| Ok(Candidate { position, preview: self.render(store, i)? }))
            .collect::<HostResult<Vec<_>>>()?;
        Ok(Batch {
            round: pending.round + 1,
            phase: pending.phase,
            token: pending.token,
            remaining_budget: self.state.remaining_budget(),
            candidates,
            target_preview: self.target_preview(store)?,
        })
    }

    fn final_result(&mut self, store: &PreviewStore) -> HostResult<FinalResult> {
        if !self.state.is_finished() {
            return Err(HostError::Conflict("session is not finished".into()));
        }
        let best = self.state.best()?;
        Ok(FinalResult {
            rounds: self.state.completed_rounds(),
            preview: self.render(store, best.index)?,
            true_objective: self.true_objective(best.index)?,
            theta: best.theta,
            predicted_value: best.value,
        })
    }

    fn status(&mut self, store: &PreviewStore, proposing: bool) -> HostResult<StatusResponse> {
        let trajectory = self
            .state
            .trajectory()
            .to_vec()
            .into_iter()
            .map(|t| {
                Ok(ProgressEntry {
                    round: t.round,
                    phase: t.phase,
                    incumbent_preview: self.render(store, t.incumbent_index)?,
                    predicted_value: t.incumbent_value,
                    subspace_dim: t.subspace_dim,
                    true_objective: self.true_objective(t.incumbent_index)?,
                })
            })
            .collect::<HostResult<Vec<_>>>()?;
        let result = if self.state.is_finished() { Some(self.final_result(store)?) } else { None };
        Ok(StatusResponse {
            protocol_version: PROTOCOL_VERSION,
            session: self.handle(proposing),
            round: self.state.completed_rounds(),
            remaining_budget: self.state.remaining_budget(),
            remaining_rounds: self.state.remaining_rounds(),
            incumbent_preview: trajectory.last().map(|t| t.incumbent_preview.clone()),
            target_preview: self.target_preview(store)?,
            trajectory,
            result,
        })
    }
}

impl Host {
    /// In-memory host; sessions are lost on exit.
    pub fn in_memory() -> Self {
        Self {
            sessions: RwLock::default(),
            previews: PreviewStore::default(),
            session_dir: None,
        }
    }

    /// Host persisting under `dir`, restoring every session stored there.
    pub fn open(dir: &Path) -> HostResult<Self> {
        let session_dir = dir.join("sessions");
        std::fs::create_dir_all(&session_dir)?;
        let host = Self {
            sessions: RwLock::default(),
            previews: PreviewStore::new(Some(dir.join("previews")))?,
            session_dir: Some(session_dir.clone()),
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&session_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let restore = || -> HostResult<()> {
                let stored: StoredSession = serde_json::from_str(&std::fs::read_to_string(&path)?)
                    .map_err(|e| HostError::Internal(e.to_string()))?;
                if stored.format != STORED_FORMAT || stored.version != STORED_VERSION {
                    return Err(HostError::Internal(format!("unsupported record {} v{}", stored.format, stored.version)));
                }
                let (task, name) = build_task(&stored.task)?;
                let state = SessionState::replay(&stored.document)?;
                let hosted = Hosted::new(stored.id.clone(), stored.created_at, stored.task, task, name, state);
                host.insert(hosted);
                Ok(())
            };
            restore().map_err(|e| HostError::Internal(format!("{}: {}", path.display(), e.message())))?;
        }
        Ok(host)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn previews(&self) -> &PreviewStore {
        &self.previews
    }

    fn insert(&self, hosted: Hosted) {
        let entry = Arc::new(Entry { proposing: AtomicBool::new(false), hosted: Mutex::new(hosted) });
        let id = entry.lock().id.clone();
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id, entry);
    }

    fn entry(&self, id: &str) -> HostResult<Arc<Entry>> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| HostError::NotFound(format!("no session {id}")))
    }

    fn persist(&self, stored: &StoredSession) -> HostResult<()> {
        let Some(dir) = &self.session_dir else { return Ok(()) };
        let path = dir.join(format!("{}.json", stored.id));
        let tmp = dir.join(format!("{}.json.tmp", stored.id));
        let text = serde_json::to_string(stored).map_err(|e| HostError::Internal(e.to_string()))?;
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn create(&self, req: CreateSessionRequest) -> HostResult<CreateSessionResponse> {
        check_version(req.protocol_version)?;
        let (task, name) = build_task(&req.task)?;
        let cfg = build_config(&task, &req.config)?;
        let state = SessionState::new(cfg)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut hosted = Hosted::new(id, now(), req.task, task, name, state);
        self.persist(&hosted.stored(&hosted.state))?;
        let batch = hosted.batch(&self.previews)?;
        let session = hosted.handle(false);
        self.insert(hosted);
        Ok(CreateSessionResponse { protocol_version: PROTOCOL_VERSION, session, batch })
    }

    pub fn session(&self, id: &str) -> HostResult<SessionResponse> {
        let entry = self.entry(id)?;
        let proposing = entry.proposing.load(Ordering::SeqCst);
        let session = entry.lock().handle(proposing);
        Ok(SessionResponse { protocol_version: PROTOCOL_VERSION, session })
    }

    pub fn batch(&self, id: &str) -> HostResult<BatchResponse> {
        let entry = self.entry(id)?;
        let batch = entry.lock().batch(&self.previews)?;
        Ok(BatchResponse { protocol_version: PROTOCOL_VERSION, batch })
    }

    /// Records a choice and issues the next batch. The new state is
    /// persisted before it replaces the old one, so a failed write leaves the
    /// session where it was.
    pub fn submit(&self, id: &str, req: SubmitChoiceRequest) -> HostResult<SubmitChoiceResponse> {
        check_version(req.protocol_version)?;
        let entry = self.entry(id)?;
        let mut hosted = entry.lock();
        let pending = hosted
            .state
            .pending()
            .cloned()
            .ok_or_else(|| HostError::Conflict("session is finished".into()))?;
        if req.token != pending.token {
            return Err(HostError::Conflict(format!(
                "batch token {} is not the open batch (already answered or stale)",
                req.token
            )));
        }
        let k = pending.indices.len();
        let mut winners = req.winners;
        winners.sort_unstable();
        if winners.is_empty() {
            return Err(HostError::BadRequest("at least one candidate must be chosen".into()));
        }
        if winners.windows(2).any(|w| w[0] == w[1]) || winners.iter().any(|&w| w >= k) {
            return Err(HostError::BadRequest(format!("winners must be distinct positions below {k}")));
        }
        if winners.len() > 1 && hosted.state.config().likelihood.kind != LikelihoodKind::SubsetLogit {
            return Err(HostError::BadRequest("this session accepts exactly one winner".into()));
        }

        entry.proposing.store(true, Ordering::SeqCst);
        let step = || -> HostResult<SessionState> {
            let mut next = hosted.state.clone();
            next.record_choice(&winners)?;
            if !next.is_finished() {
                next.next_batch()?;
            }
            self.persist(&hosted.stored(&next))?;
            Ok(next)
        };
        let next = step();
        entry.proposing.store(false, Ordering::SeqCst);
        hosted.state = next?;

        let outcome = if hosted.state.is_finished() {
            Outcome::Final { result: hosted.final_result(&self.previews)? }
        } else {
            Outcome::Batch { batch: hosted.batch(&self.previews)? }
        };
        Ok(SubmitChoiceResponse { protocol_version: PROTOCOL_VERSION, outcome })
    }

    pub fn status(&self, id: &str) -> HostResult<StatusResponse> {
        let entry = self.entry(id)?;
        let proposing = entry.proposing.load(Ordering::SeqCst);
        let status = entry.lock().status(&self.previews, proposing)?;
        Ok(status)
    }

    pub fn final_result(&self, id: &str) -> HostResult<FinalResponse> {
        let entry = self.entry(id)?;
        let result = entry.lock().final_result(&self.previews)?;
        Ok(FinalResponse { protocol_version: PROTOCOL_VERSION, result })
    }
}
