//! Typed control messages.
//!
//! Kinds fall into three handler families plus the rejection channel:
//! relationship (`invite-worker`, `worker-ready`), training
//! (`start-training`, `training-done`), and model transmission
//! (`fetch-weights`, `weights-credential`).

use serde::{Deserialize, Serialize};

use fedloop_core::trainer::TaskSpec;
use fedloop_core::types::{DataId, Endpoint, RemoteModelRef, WorkerId};

use crate::transfer::TransferCredential;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    InviteWorker,
    WorkerReady,
    StartTraining,
    TrainingDone,
    FetchWeights,
    WeightsCredential,
    Reject,
}

impl MessageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MessageKind::InviteWorker => "invite-worker",
            MessageKind::WorkerReady => "worker-ready",
            MessageKind::StartTraining => "start-training",
            MessageKind::TrainingDone => "training-done",
            MessageKind::FetchWeights => "fetch-weights",
            MessageKind::WeightsCredential => "weights-credential",
            MessageKind::Reject => "reject",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "invite-worker" => MessageKind::InviteWorker,
            "worker-ready" => MessageKind::WorkerReady,
            "start-training" => MessageKind::StartTraining,
            "training-done" => MessageKind::TrainingDone,
            "fetch-weights" => MessageKind::FetchWeights,
            "weights-credential" => MessageKind::WeightsCredential,
            "reject" => MessageKind::Reject,
            _ => return None,
        })
    }
}

/// Machine-readable reasons a peer may refuse a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Busy,
    UnrecognizedServer,
    Stale,
    Denied,
}

/// Deterministic timing a test harness can inject into a live worker:
/// the worker sleeps through the nominal durations (scaled by
/// `time_scale` virtual seconds per real second) and reports them as its
/// measurements, which makes live runs decision-equivalent to simulated
/// ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedTiming {
    pub t_one: f64,
    pub transmit: f64,
    pub time_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvitePayload {
    pub worker_id: WorkerId,
    pub server_ref: RemoteModelRef,
    pub task: TaskSpec,
    /// First batch of the global example stream owned by this worker.
    pub shard_offset: u64,
    pub shard_batches: u32,
    pub lr: f64,
    pub default_epochs: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected: Option<InjectedTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadyPayload {
    pub worker_id: WorkerId,
    pub worker_ref: RemoteModelRef,
    pub data_batches: u32,
    pub cpu_freq: f64,
    pub cpu_avail: f64,
    /// Duration of the initial model download, the transfer probe.
    pub probe_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPayload {
    pub worker_id: WorkerId,
    pub model_id: DataId,
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DonePayload {
    pub worker_id: WorkerId,
    pub model_id: DataId,
    pub base_version: u64,
    pub local_epochs: u32,
    pub train_seconds_per_epoch: f64,
    pub transmit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FetchPayload {
    pub model_id: DataId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialPayload {
    pub credential: TransferCredential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectPayload {
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    InviteWorker(InvitePayload),
    WorkerReady(ReadyPayload),
    StartTraining(StartPayload),
    TrainingDone(DonePayload),
    FetchWeights(FetchPayload),
    WeightsCredential(CredentialPayload),
    Reject(RejectPayload),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::InviteWorker(_) => MessageKind::InviteWorker,
            Payload::WorkerReady(_) => MessageKind::WorkerReady,
            Payload::StartTraining(_) => MessageKind::StartTraining,
            Payload::TrainingDone(_) => MessageKind::TrainingDone,
            Payload::FetchWeights(_) => MessageKind::FetchWeights,
            Payload::WeightsCredential(_) => MessageKind::WeightsCredential,
            Payload::Reject(_) => MessageKind::Reject,
        }
    }
}

/// A control message: who sent it plus its kind-specific payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: Endpoint,
    pub payload: Payload,
}

impl Message {
    pub fn new(sender: Endpoint, payload: Payload) -> Self {
        Self { sender, payload }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn reject(sender: Endpoint, reason: RejectReason, detail: impl Into<String>) -> Self {
        Self::new(sender, Payload::Reject(RejectPayload { reason, detail: detail.into() }))
    }
}
