//! Wire types. Every response carries `protocol_version`; requests may send
//! it and are rejected when it differs.

use multibo_core::acquisition::AcquisitionKind;
use multibo_core::oracles::WarpParameterization;
use multibo_core::preference::LikelihoodKind;
use multibo_core::session::Phase;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Largest acquisition budget a client may request.
pub const MAX_BUDGET: usize = 200;
/// Largest choice set; the subset likelihood enumerates `2^K - 1` outcomes.
pub const MAX_K: usize = 12;
pub const MAX_INIT_BATCHES: usize = 50;
pub const MAX_IMAGE_SIDE: usize = 512;

fn yes() -> bool {
    true
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Either a named synthetic task (`warp-affine`, `warp-full`) or an uploaded
/// source image. The hidden warp is `theta_star` when given, otherwise drawn
/// from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRequest {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub source: Option<GrayImage>,
    #[serde(default)]
    pub parameterization: Option<WarpParameterization>,
    #[serde(default)]
    pub theta_star: Option<Vec<f64>>,
    /// Hide true objective values from every response.
    #[serde(default = "yes")]
    pub blind: bool,
    /// Send the target preview to the client.
    #[serde(default = "yes")]
    pub show_target: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub init_batches: Option<usize>,
    #[serde(default)]
    pub likelihood: Option<LikelihoodKind>,
    #[serde(default)]
    pub acquisition: Option<AcquisitionKind>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub ei_raw_samples: Option<usize>,
    #[serde(default)]
    pub ei_restarts: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    #[serde(default)]
    pub protocol_version: Option<u32>,
    pub task: TaskRequest,
    #[serde(default)]
    pub config: ConfigOverrides,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitChoiceRequest {
    #[serde(default)]
    pub protocol_version: Option<u32>,
    /// Token of the batch being answered.
    pub token: String,
    /// Positions within the batch, in any order.
    pub winners: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    AwaitingChoice,
    Proposing,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub task: String,
    pub parameterization: WarpParameterization,
    pub dim: usize,
    pub k: usize,
    pub budget: usize,
    pub init_batches: usize,
    pub total_rounds: usize,
    pub likelihood: LikelihoodKind,
    pub acquisition: AcquisitionKind,
    /// Whether more than one winner may be submitted.
    pub multi_select: bool,
    pub blind: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub state: SessionStatus,
    pub config: ConfigSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub position: usize,
    /// Path of the PNG preview.
    pub preview: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    /// One-based round this batch belongs to.
    pub round: usize,
    pub phase: Phase,
    pub token: String,
    pub remaining_budget: usize,
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_preview: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub rounds: usize,
    pub theta: Vec<f64>,
    /// Posterior mean of the latent utility at `theta`.
    pub predicted_value: f64,
    pub preview: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEntry {
    /// Completed rounds at this point, starting at 1.
    pub round: usize,
    pub phase: Phase,
    pub incumbent_preview: String,
    pub predicted_value: f64,
    pub subspace_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub protocol_version: u32,
    pub session: SessionHandle,
    pub batch: Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResponse {
    pub protocol_version: u32,
    pub session: SessionHandle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub protocol_version: u32,
    pub batch: Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    Batch { batch: Batch },
    Final { result: FinalResult },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitChoiceResponse {
    pub protocol_version: u32,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub protocol_version: u32,
    pub session: SessionHandle,
    /// Completed rounds.
    pub round: usize,
    pub remaining_budget: usize,
    pub remaining_rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incumbent_preview: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_preview: Option<String>,
    pub trajectory: Vec<ProgressEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<FinalResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResponse {
    pub protocol_version: u32,
    pub result: FinalResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    BadRequest,
    NotFound,
    Conflict,
    Numerical,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub protocol_version: u32,
    pub error: ErrorKind,
    pub message: String,
}
