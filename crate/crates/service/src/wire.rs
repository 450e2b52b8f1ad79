//! Request and response bodies. Every response that concerns a session names
//! it and echoes the session clock.

use serde::{Deserialize, Serialize};

use trustalloc_core::sim::{RequestRecord, SessionView};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotResponse {
    pub session: String,
    pub clock: u64,
    pub snapshot: SessionView,
}

/// Why an `advance` call returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// All requested ticks ran.
    Ticks,
    /// A reallocation request awaits a decision.
    Pending,
    Finished,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvanceResponse {
    pub session: String,
    pub clock: u64,
    /// Ticks actually run by this call.
    pub ticks: u64,
    pub stopped: StopReason,
    pub snapshot: SessionView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingResponse {
    pub session: String,
    pub clock: u64,
    pub pending: Option<RequestRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvanceRequest {
    #[serde(default = "one")]
    pub n: u64,
}

fn one() -> u64 {
    1
}

impl Default for AdvanceRequest {
    fn default() -> Self {
        AdvanceRequest { n: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub allow: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnapshotQuery {
    /// Show ground-truth obstacles.
    pub reveal: bool,
    /// Include full belief vectors.
    pub bins: bool,
    /// Number of recent log records; 20 when absent.
    pub recent: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventsQuery {
    /// Index of the first record to send. Defaults to the current log length.
    pub from: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}
