//! Aggregation-server state machine.
//!
//! `ServerLogic` owns every decision a run makes: worker selection, the
//! sync quota barrier, staleness classification of responses, weighted
//! aggregation, evaluation, and selector feedback. It performs no I/O.
//! The simulator drives it over a virtual clock and the live driver
//! drives it over sockets; because both call the same methods in the
//! same order, the two modes agree on every decision.
//!
//! Response lifecycle: a training completion is classified when it
//! arrives (`on_training_done`) and again when its weights finish
//! downloading (`on_weights_fetched`). In sync mode a response whose
//! base version is behind the server is discarded and its download is
//! skipped; in async mode every response is fetched, and one that lands
//! at the same instant an aggregation ran is buffered into the next
//! round.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use fedloop_core::selection::{
    estimate_t_one, rminmax_deadline, select_random, select_rminmax, select_timebased,
    update_rminmax, update_time_budget, RMinRMaxState, SelectionError, ServerCalibration,
    TimeBudgetState,
};
use fedloop_core::trainer::{LearningTask, Sample, TrainerError};
use fedloop_core::types::{RemoteModelRef, WorkerId, WorkerProfile};
use fedloop_core::weights::{
    weighted_average, AggregateError, AggregationEntry, AggregationPolicy, VersionedWeights,
    WeightVector,
};
use fedloop_net::transfer::TransferError;
use fedloop_net::wire::{RejectReason, WireError};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("worker {0} is not in the roster")]
    UnknownWorker(WorkerId),
    #[error("have {have} responses but the round quota is {quota}")]
    InsufficientResponses { have: usize, quota: usize },
    #[error("worker {0} is busy")]
    WorkerBusy(WorkerId),
    #[error("worker endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("handshake timed out: {0}")]
    HandshakeTimeout(String),
    #[error("request rejected ({0:?}): {1}")]
    Rejected(RejectReason, String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sync,
    Async,
}

/// Selection policy as configured for a run.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectorConfig {
    All,
    Random { k: usize },
    RMinMax { rmin: f64, rmax: f64, literal_eqs: bool },
    TimeBased { r: u32, threshold: f64, initial_budget: f64 },
}

/// Live selector state.
enum Selector {
    All,
    Random { k: usize, seed: u64, draw: u64 },
    Band(RMinRMaxState),
    Budget(TimeBudgetState),
}

/// One round's selection outcome: who participates and with how many
/// local epochs.
pub struct SelectionPlan {
    pub selected: Vec<WorkerId>,
    pub epochs: BTreeMap<WorkerId, u32>,
}

impl Selector {
    fn from_config(cfg: &SelectorConfig, seed: u64) -> Result<Self, SelectionError> {
        Ok(match cfg {
            SelectorConfig::All => Selector::All,
            SelectorConfig::Random { k } => Selector::Random { k: *k, seed, draw: 0 },
            SelectorConfig::RMinMax { rmin, rmax, literal_eqs } => {
                Selector::Band(RMinRMaxState::new(*rmin, *rmax, *literal_eqs)?)
            }
            SelectorConfig::TimeBased { r, threshold, initial_budget } => {
                Selector::Budget(TimeBudgetState::new(*initial_budget, *r, *threshold)?)
            }
        })
    }

    fn plan(
        &mut self,
        workers: &[WorkerProfile],
        default_epochs: u32,
    ) -> Result<SelectionPlan, SelectionError> {
        let uniform = |ids: Vec<WorkerId>, epochs: u32| {
            let map = ids.iter().map(|w| (*w, epochs)).collect();
            SelectionPlan { selected: ids, epochs: map }
        };
        match self {
            Selector::All => {
                Ok(uniform(workers.iter().map(|p| p.worker_id).collect(), default_epochs))
            }
            Selector::Random { k, seed, draw } => {
                let k = (*k).clamp(1, workers.len());
                let round_seed = seed.wrapping_add(draw.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                *draw += 1;
                Ok(uniform(select_random(workers, k, round_seed)?, default_epochs))
            }
            Selector::Band(state) => {
                let selected = select_rminmax(workers, state)?;
                let deadline = rminmax_deadline(workers, state);
                let chosen: BTreeSet<WorkerId> = selected.iter().copied().collect();
                let epochs = workers
                    .iter()
                    .filter(|p| chosen.contains(&p.worker_id))
                    .map(|p| (p.worker_id, state.epochs_for(p, deadline)))
                    .collect();
                Ok(SelectionPlan { selected, epochs })
            }
            Selector::Budget(state) => {
                let selected = select_timebased(workers, state)?;
                Ok(uniform(selected, state.epochs()))
            }
        }
    }

    /// Zero-progress budget bump: with nobody selected there can be no
    /// accuracy gain, so the stall rule fires immediately and admits the
    /// fastest worker. Other policies never select an empty set.
    fn bump_empty_selection(&mut self, workers: &[WorkerProfile]) -> bool {
        if let Selector::Budget(state) = self {
            let bumped = update_time_budget(state, workers, 0.0, 0.0);
            let changed = bumped.budget() > state.budget();
            *state = bumped;
            changed
        } else {
            false
        }
    }

    fn update(
        &mut self,
        acc_prev: f64,
        acc_cur: f64,
        unselected: &[WorkerProfile],
    ) -> Result<(), SelectionError> {
        match self {
            Selector::All | Selector::Random { .. } => Ok(()),
            Selector::Band(state) => {
                *state = update_rminmax(state, acc_prev, acc_cur)?;
                Ok(())
            }
            Selector::Budget(state) => {
                *state = update_time_budget(state, unselected, acc_prev, acc_cur);
                Ok(())
            }
        }
    }

    fn state_label(&self) -> String {
        match self {
            Selector::All => "all".to_string(),
            Selector::Random { k, .. } => format!("random(k={k})"),
            Selector::Band(state) => {
                format!("rminmax(rmin={};rmax={})", state.rmin(), state.rmax())
            }
            Selector::Budget(state) => format!(
                "timebased(T={};r={};A={})",
                state.budget(),
                state.epochs(),
                state.threshold()
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerStatus {
    Idle,
    Training,
    Reporting,
}

pub struct RosterEntry {
    pub model_ref: RemoteModelRef,
    pub profile: WorkerProfile,
    pub status: WorkerStatus,
}

/// Instruction to dispatch one worker for this round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOrder {
    pub worker: WorkerId,
    pub epochs: u32,
}

/// Decision taken when a training-done notice arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoneVerdict {
    /// Fetch the worker's weights over the transfer channel.
    Fetch,
    /// Sync-mode stale response: skip the fetch entirely.
    DiscardStale,
}

/// Decision taken when a weight download completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptOutcome {
    /// Entered the current round's inbox.
    AcceptNow,
    /// Async arrival at the instant of an aggregation: held for the
    /// next round.
    BufferNext,
    /// Sync-mode response that missed its barrier.
    DiscardStale,
}

/// Everything the trace records about one aggregation round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub time: f64,
    pub accuracy: f64,
    pub selected: Vec<WorkerId>,
    pub dispatched: Vec<WorkerId>,
    /// Sources of the aggregated entries, in aggregation order.
    pub aggregated: Vec<WorkerId>,
    pub discarded_stale: u32,
    pub selector_state: String,
}

pub struct ServerConfig {
    pub mode: Mode,
    /// Fraction of dispatched workers a sync round waits for.
    pub quota_fraction: f64,
    pub policy: AggregationPolicy,
    pub selector: SelectorConfig,
    pub default_epochs: u32,
    pub total_rounds: u32,
    pub target_accuracy: Option<f64>,
    pub calibration: ServerCalibration,
    pub seed: u64,
}

pub struct ServerLogic {
    cfg: ServerConfig,
    selector: Selector,
    task: Arc<dyn LearningTask>,
    test_set: Vec<Sample>,
    version: u64,
    weights: WeightVector,
    roster: BTreeMap<WorkerId, RosterEntry>,
    inbox: Vec<(WorkerId, VersionedWeights)>,
    quota: usize,
    selected: BTreeSet<WorkerId>,
    dispatched: Vec<WorkerId>,
    outstanding: BTreeSet<WorkerId>,
    discards_since_agg: u32,
    last_accuracy: f64,
    last_agg_time: Option<f64>,
    rounds_done: u32,
    finished: bool,
    records: Vec<RoundRecord>,
}

impl ServerLogic {
    pub fn new(
        cfg: ServerConfig,
        task: Arc<dyn LearningTask>,
        test_set: Vec<Sample>,
    ) -> Result<Self, OrchestratorError> {
        cfg.calibration.validate()?;
        let selector = Selector::from_config(&cfg.selector, cfg.seed)?;
        let weights = task.init_weights(cfg.seed);
        Ok(Self {
            cfg,
            selector,
            task,
            test_set,
            version: 0,
            weights,
            roster: BTreeMap::new(),
            inbox: Vec::new(),
            quota: 0,
            selected: BTreeSet::new(),
            dispatched: Vec::new(),
            outstanding: BTreeSet::new(),
            discards_since_agg: 0,
            last_accuracy: 0.0,
            last_agg_time: None,
            rounds_done: 0,
            finished: false,
            records: Vec::new(),
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn into_records(self) -> (Vec<RoundRecord>, WeightVector) {
        (self.records, self.weights)
    }

    pub fn roster_len(&self) -> usize {
        self.roster.len()
    }

    pub fn worker_status(&self, worker: WorkerId) -> Option<WorkerStatus> {
        self.roster.get(&worker).map(|e| e.status)
    }

    pub fn worker_ref(&self, worker: WorkerId) -> Option<&RemoteModelRef> {
        self.roster.get(&worker).map(|e| &e.model_ref)
    }

    /// Registers a worker discovered through the invite handshake. The
    /// initial `t_one` estimate comes from the calibration probe formula
    /// and `t_transmit` from the handshake's probe transfer.
    pub fn register_worker(
        &mut self,
        model_ref: RemoteModelRef,
        data_batches: u32,
        cpu_freq: f64,
        cpu_avail: f64,
        probe_transmit: f64,
    ) -> Result<WorkerId, OrchestratorError> {
        let worker_id = WorkerId(self.roster.len() as u32);
        let mut profile = WorkerProfile {
            worker_id,
            cpu_freq,
            cpu_avail,
            data_batches,
            t_one: 0.0,
            t_transmit: probe_transmit,
            last_measured: None,
        };
        profile.t_one = estimate_t_one(&profile, &self.cfg.calibration)?;
        self.roster.insert(
            worker_id,
            RosterEntry { model_ref, profile, status: WorkerStatus::Idle },
        );
        Ok(worker_id)
    }

    /// Workers eligible for selection: anyone holding training data.
    fn selectable(&self) -> Vec<WorkerProfile> {
        self.roster
            .values()
            .filter(|e| e.profile.data_batches > 0)
            .map(|e| e.profile.clone())
            .collect()
    }

    fn plan_selection(&mut self) -> Result<SelectionPlan, OrchestratorError> {
        let selectable = self.selectable();
        if selectable.is_empty() {
            return Err(SelectionError::EmptyWorkerSet.into());
        }
        let mut plan = self.selector.plan(&selectable, self.cfg.default_epochs)?;
        if plan.selected.is_empty() && self.selector.bump_empty_selection(&selectable) {
            plan = self.selector.plan(&selectable, self.cfg.default_epochs)?;
        }
        Ok(plan)
    }

    fn issue_orders(&mut self, plan: SelectionPlan) -> Vec<TrainOrder> {
        self.selected.extend(plan.selected.iter().copied());
        let mut orders = Vec::new();
        for worker in &plan.selected {
            let Some(entry) = self.roster.get_mut(worker) else { continue };
            if entry.status != WorkerStatus::Idle || self.dispatched.contains(worker) {
                continue;
            }
            entry.status = WorkerStatus::Training;
            self.dispatched.push(*worker);
            self.outstanding.insert(*worker);
            orders.push(TrainOrder { worker: *worker, epochs: plan.epochs[worker] });
        }
        if self.cfg.mode == Mode::Sync && !self.dispatched.is_empty() {
            let target = (self.cfg.quota_fraction * self.dispatched.len() as f64).ceil() as usize;
            self.quota = target.clamp(1, self.dispatched.len());
        }
        orders
    }

    /// Opens a round: selects workers and returns dispatch orders for
    /// the idle ones. Busy workers stay on their previous assignment.
    pub fn start_round(&mut self, _now: f64) -> Result<Vec<TrainOrder>, OrchestratorError> {
        if self.finished {
            return Ok(Vec::new());
        }
        let plan = self.plan_selection()?;
        Ok(self.issue_orders(plan))
    }

    /// Re-plans mid-round when the round can no longer complete on its
    /// own: every outstanding dispatch resolved without meeting the sync
    /// quota, or (async) nothing is in flight at all. Returns extra
    /// orders, possibly none.
    pub fn ensure_progress(&mut self, _now: f64) -> Result<Vec<TrainOrder>, OrchestratorError> {
        if self.finished {
            return Ok(Vec::new());
        }
        let anything_in_flight =
            self.roster.values().any(|e| e.status != WorkerStatus::Idle);
        let blocked = match self.cfg.mode {
            Mode::Sync => {
                self.outstanding.is_empty() && (self.quota == 0 || self.inbox.len() < self.quota)
            }
            Mode::Async => !anything_in_flight,
        };
        if !blocked {
            return Ok(Vec::new());
        }
        let plan = self.plan_selection()?;
        Ok(self.issue_orders(plan))
    }

    /// Handles a training-done notice. Measurements refine the worker's
    /// profile either way; sync-stale responses are discarded without a
    /// fetch.
    pub fn on_training_done(
        &mut self,
        worker: WorkerId,
        base_version: u64,
        measured_train_per_epoch: f64,
        measured_transmit: f64,
        now: f64,
    ) -> Result<DoneVerdict, OrchestratorError> {
        let entry =
            self.roster.get_mut(&worker).ok_or(OrchestratorError::UnknownWorker(worker))?;
        entry.profile = fedloop_core::selection::record_observation(
            &entry.profile,
            measured_train_per_epoch,
            measured_transmit,
            now,
        );
        if self.cfg.mode == Mode::Sync && base_version < self.version {
            entry.status = WorkerStatus::Idle;
            self.outstanding.remove(&worker);
            self.discards_since_agg += 1;
            return Ok(DoneVerdict::DiscardStale);
        }
        entry.status = WorkerStatus::Reporting;
        Ok(DoneVerdict::Fetch)
    }

    /// Frees a worker whose pending request failed (timeout, transport
    /// error, or rejection).
    pub fn release_worker(&mut self, worker: WorkerId) {
        if let Some(entry) = self.roster.get_mut(&worker) {
            entry.status = WorkerStatus::Idle;
        }
        self.outstanding.remove(&worker);
    }

    /// Handles a completed weight download.
    pub fn on_weights_fetched(
        &mut self,
        worker: WorkerId,
        vw: VersionedWeights,
        now: f64,
    ) -> Result<AcceptOutcome, OrchestratorError> {
        let entry =
            self.roster.get_mut(&worker).ok_or(OrchestratorError::UnknownWorker(worker))?;
        entry.status = WorkerStatus::Idle;
        self.outstanding.remove(&worker);
        match self.cfg.mode {
            Mode::Sync => {
                if vw.base_version < self.version {
                    // Missed the barrier while its weights were in
                    // flight.
                    self.discards_since_agg += 1;
                    Ok(AcceptOutcome::DiscardStale)
                } else {
                    self.inbox.push((worker, vw));
                    Ok(AcceptOutcome::AcceptNow)
                }
            }
            Mode::Async => {
                self.inbox.push((worker, vw));
                if self.last_agg_time == Some(now) {
                    Ok(AcceptOutcome::BufferNext)
                } else {
                    Ok(AcceptOutcome::AcceptNow)
                }
            }
        }
    }

    pub fn ready_to_aggregate(&self) -> bool {
        match self.cfg.mode {
            Mode::Sync => self.quota > 0 && self.inbox.len() >= self.quota,
            Mode::Async => !self.inbox.is_empty(),
        }
    }

    /// Merges the inbox into a new server version, evaluates it, feeds
    /// the selector, and appends the round record. No communication
    /// happens here; every entry was downloaded beforehand.
    pub fn aggregate_round(&mut self, now: f64) -> Result<RoundRecord, OrchestratorError> {
        let required = match self.cfg.mode {
            Mode::Sync => self.quota.max(1),
            Mode::Async => 1,
        };
        if self.inbox.len() < required {
            return Err(OrchestratorError::InsufficientResponses {
                have: self.inbox.len(),
                quota: required,
            });
        }
        // Arrival order must not matter: canonical (worker, version)
        // order keeps live and simulated runs bitwise aligned.
        let mut pending = std::mem::take(&mut self.inbox);
        pending.sort_by_key(|(w, vw)| (*w, vw.base_version));
        let mut entries = Vec::with_capacity(pending.len());
        for (worker, vw) in pending {
            let batches = self
                .roster
                .get(&worker)
                .map(|e| e.profile.data_batches)
                .ok_or(OrchestratorError::UnknownWorker(worker))?;
            let gap = self.version.saturating_sub(vw.base_version);
            let avg_weight = self.cfg.policy.entry_weight(batches, gap)?;
            entries.push(AggregationEntry::new(worker, vw, avg_weight)?);
        }
        self.weights = weighted_average(&entries)?;
        self.version += 1;

        let accuracy = self.task.evaluate(&self.weights, &self.test_set)?;
        let acc_prev = self.last_accuracy;
        let unselected: Vec<WorkerProfile> = self
            .selectable()
            .into_iter()
            .filter(|p| !self.selected.contains(&p.worker_id))
            .collect();
        self.selector.update(acc_prev, accuracy, &unselected)?;

        self.rounds_done += 1;
        let record = RoundRecord {
            round: self.rounds_done,
            time: now,
            accuracy,
            selected: self.selected.iter().copied().collect(),
            dispatched: std::mem::take(&mut self.dispatched),
            aggregated: entries.iter().map(|e| e.source).collect(),
            discarded_stale: std::mem::take(&mut self.discards_since_agg),
            selector_state: self.selector.state_label(),
        };
        self.selected.clear();
        self.outstanding.clear();
        self.quota = 0;
        self.last_accuracy = accuracy;
        self.last_agg_time = Some(now);
        if self.rounds_done >= self.cfg.total_rounds {
            self.finished = true;
        }
        if let Some(target) = self.cfg.target_accuracy {
            if accuracy >= target {
                self.finished = true;
            }
        }
        self.records.push(record.clone());
        Ok(record)
    }
}
