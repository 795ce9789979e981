//! Worker-selection policies and the training-time estimator.
//!
//! Two heuristics drive selection. Both work from per-worker estimates of
//! `t_one` (seconds per local epoch) and `t_transmit` (seconds per weight
//! round trip):
//!
//! - **Epoch band (rmin/rmax).** A worker is eligible when it can finish
//!   `rmin` epochs no later than the fastest worker finishes `rmax`.
//!   After each round the band endpoints move by reciprocal factors
//!   `(acc_prev + 1) / (acc_cur + 1)`, so rising accuracy shrinks `rmin`
//!   and grows `rmax`, gradually admitting slower workers.
//! - **Time budget.** Every worker trains the same `r` epochs; a worker
//!   is eligible when its estimated total time fits the budget `T`. The
//!   budget grows to admit the fastest excluded worker whenever the
//!   per-round accuracy gain falls below the threshold `A`.
//!
//! The `literal_update` switch on the epoch band reproduces the opposite
//! factor orientation (band narrows as accuracy rises) for comparison
//! runs; the default orientation is the one that matches the algorithm's
//! stated intent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::{WorkerId, WorkerProfile};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("invalid worker profile: {0}")]
    InvalidProfile(String),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("worker set is empty")]
    EmptyWorkerSet,
    #[error("accuracy {0} outside [0, 1]")]
    InvalidAccuracy(f64),
    #[error("subset size {k} outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("invalid selector state: {0}")]
    InvalidState(String),
}

/// Reference timing measured on the aggregation server: how long the
/// server takes to train one batch of data for one epoch, and at what
/// CPU frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerCalibration {
    pub t_onedata: f64,
    pub server_cpu_freq: f64,
}

impl ServerCalibration {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.t_onedata.is_finite() && self.t_onedata > 0.0) {
            return Err(SelectionError::InvalidCalibration(format!(
                "t_onedata must be positive, got {}",
                self.t_onedata
            )));
        }
        if !(self.server_cpu_freq.is_finite() && self.server_cpu_freq > 0.0) {
            return Err(SelectionError::InvalidCalibration(format!(
                "server_cpu_freq must be positive, got {}",
                self.server_cpu_freq
            )));
        }
        Ok(())
    }
}

/// Estimated seconds for one full local epoch on a worker: the server's
/// per-batch time rescaled by the effective-frequency ratio, times the
/// worker's batch count. Strictly decreasing in worker speed, linear in
/// data size.
pub fn estimate_t_one(p: &WorkerProfile, c: &ServerCalibration) -> Result<f64, SelectionError> {
    p.validate().map_err(|e| SelectionError::InvalidProfile(e.to_string()))?;
    c.validate()?;
    let ratio = c.server_cpu_freq / (p.cpu_freq * p.cpu_avail);
    Ok(c.t_onedata * ratio * f64::from(p.data_batches))
}

/// Epoch-band selector state.
#[derive(Debug, Clone, PartialEq)]
pub struct RMinRMaxState {
    rmin: f64,
    rmax: f64,
    literal_update: bool,
}

pub const RMIN_FLOOR: f64 = 1e-6;

impl RMinRMaxState {
    pub fn new(rmin: f64, rmax: f64, literal_update: bool) -> Result<Self, SelectionError> {
        if !(rmin.is_finite() && rmax.is_finite() && rmin > 0.0 && rmin <= rmax) {
            return Err(SelectionError::InvalidState(format!(
                "need 0 < rmin <= rmax, got rmin={rmin} rmax={rmax}"
            )));
        }
        Ok(Self { rmin, rmax, literal_update })
    }

    pub fn rmin(&self) -> f64 {
        self.rmin
    }

    pub fn rmax(&self) -> f64 {
        self.rmax
    }

    /// Epochs a selected worker should train: as many as fit before the
    /// fastest worker's `rmax` deadline, clamped into the band.
    pub fn epochs_for(&self, p: &WorkerProfile, t_minimum: f64) -> u32 {
        let lo = self.rmin.ceil().max(1.0);
        let hi = self.rmax.floor().max(lo);
        let fit = if p.t_one > 0.0 {
            ((t_minimum - p.t_transmit) / p.t_one).floor()
        } else {
            hi
        };
        fit.clamp(lo, hi) as u32
    }
}

/// `t_one * rmin + t_transmit`: soonest acceptable response time.
fn t_min(p: &WorkerProfile, st: &RMinRMaxState) -> f64 {
    p.t_one * st.rmin + p.t_transmit
}

/// `t_one * rmax + t_transmit`: response time at the epoch cap.
fn t_max(p: &WorkerProfile, st: &RMinRMaxState) -> f64 {
    p.t_one * st.rmax + p.t_transmit
}

/// Smallest `t_max` across workers: the deadline set by the fastest
/// worker training its maximum epochs.
pub fn rminmax_deadline(workers: &[WorkerProfile], st: &RMinRMaxState) -> f64 {
    workers.iter().map(|p| t_max(p, st)).fold(f64::INFINITY, f64::min)
}

/// Epoch-band selection: keep exactly the workers whose minimum-epoch
/// response would arrive no later than the fastest worker's maximum-epoch
/// response. The fastest worker always qualifies, so the result is never
/// empty.
pub fn select_rminmax(
    workers: &[WorkerProfile],
    st: &RMinRMaxState,
) -> Result<Vec<WorkerId>, SelectionError> {
    if workers.is_empty() {
        return Err(SelectionError::EmptyWorkerSet);
    }
    for p in workers {
        p.validate().map_err(|e| SelectionError::InvalidProfile(e.to_string()))?;
    }
    let deadline = rminmax_deadline(workers, st);
    Ok(workers
        .iter()
        .filter(|p| t_min(p, st) <= deadline)
        .map(|p| p.worker_id)
        .collect())
}

fn check_accuracy(acc: f64) -> Result<(), SelectionError> {
    if !(acc.is_finite() && (0.0..=1.0).contains(&acc)) {
        return Err(SelectionError::InvalidAccuracy(acc));
    }
    Ok(())
}

/// Moves the band endpoints by reciprocal factors of
/// `(acc_prev + 1) / (acc_cur + 1)`, so their product is conserved.
/// Afterwards the state is clamped: a crossed band collapses to its
/// geometric mean (which keeps the product intact) and `rmin` never
/// drops below [`RMIN_FLOOR`].
pub fn update_rminmax(
    st: &RMinRMaxState,
    acc_prev: f64,
    acc_cur: f64,
) -> Result<RMinRMaxState, SelectionError> {
    check_accuracy(acc_prev)?;
    check_accuracy(acc_cur)?;
    let factor = if st.literal_update {
        (acc_cur + 1.0) / (acc_prev + 1.0)
    } else {
        (acc_prev + 1.0) / (acc_cur + 1.0)
    };
    let mut rmin = st.rmin * factor;
    let mut rmax = st.rmax / factor;
    if rmin > rmax {
        let mean = (rmin * rmax).sqrt();
        rmin = mean;
        rmax = mean;
    }
    if rmin < RMIN_FLOOR {
        rmin = RMIN_FLOOR;
        rmax = rmax.max(rmin);
    }
    Ok(RMinRMaxState { rmin, rmax, literal_update: st.literal_update })
}

/// Time-budget selector state.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBudgetState {
    budget: f64,
    r: u32,
    threshold: f64,
}

impl TimeBudgetState {
    pub fn new(budget: f64, r: u32, threshold: f64) -> Result<Self, SelectionError> {
        if !(budget >= 0.0) || budget.is_nan() {
            return Err(SelectionError::InvalidState(format!("budget must be >= 0, got {budget}")));
        }
        if r < 1 {
            return Err(SelectionError::InvalidState("r must be at least 1".to_string()));
        }
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(SelectionError::InvalidState(format!(
                "threshold must be positive, got {threshold}"
            )));
        }
        Ok(Self { budget, r, threshold })
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn epochs(&self) -> u32 {
        self.r
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Estimated total response time under a fixed per-round epoch count.
pub fn t_total(p: &WorkerProfile, r: u32) -> f64 {
    p.t_one * f64::from(r) + p.t_transmit
}

/// Time-budget selection: workers whose estimated total time fits the
/// budget. May legitimately select nobody (for example with the
/// recommended zero initial budget).
pub fn select_timebased(
    workers: &[WorkerProfile],
    st: &TimeBudgetState,
) -> Result<Vec<WorkerId>, SelectionError> {
    if workers.is_empty() {
        return Err(SelectionError::EmptyWorkerSet);
    }
    for p in workers {
        p.validate().map_err(|e| SelectionError::InvalidProfile(e.to_string()))?;
    }
    Ok(workers
        .iter()
        .filter(|p| t_total(p, st.r) <= st.budget)
        .map(|p| p.worker_id)
        .collect())
}

/// Grows the budget to admit the fastest not-yet-eligible worker when
/// the accuracy gain stalls below the threshold. Never shrinks it.
pub fn update_time_budget(
    st: &TimeBudgetState,
    unselected: &[WorkerProfile],
    acc_prev: f64,
    acc_cur: f64,
) -> TimeBudgetState {
    let stalled = acc_cur - acc_prev < st.threshold;
    if !stalled || unselected.is_empty() {
        return st.clone();
    }
    let cheapest =
        unselected.iter().map(|p| t_total(p, st.r)).fold(f64::INFINITY, f64::min);
    TimeBudgetState { budget: st.budget.max(cheapest), r: st.r, threshold: st.threshold }
}

/// Uniform `k`-subset of the workers, deterministic for a given seed.
pub fn select_random(
    workers: &[WorkerProfile],
    k: usize,
    seed: u64,
) -> Result<Vec<WorkerId>, SelectionError> {
    if workers.is_empty() {
        return Err(SelectionError::EmptyWorkerSet);
    }
    if k < 1 || k > workers.len() {
        return Err(SelectionError::InvalidK { k, n: workers.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<WorkerId> = workers.iter().map(|p| p.worker_id).collect();
    ids.shuffle(&mut rng);
    ids.truncate(k);
    ids.sort_unstable();
    Ok(ids)
}

/// Exponential smoothing (alpha = 0.5) of the profile's timing estimates
/// toward a fresh measurement.
pub fn record_observation(
    p: &WorkerProfile,
    measured_train_per_epoch: f64,
    measured_transmit: f64,
    now: f64,
) -> WorkerProfile {
    const ALPHA: f64 = 0.5;
    let mut updated = p.clone();
    if measured_train_per_epoch.is_finite() && measured_train_per_epoch >= 0.0 {
        updated.t_one = ALPHA * p.t_one + (1.0 - ALPHA) * measured_train_per_epoch;
    }
    if measured_transmit.is_finite() && measured_transmit >= 0.0 {
        updated.t_transmit = ALPHA * p.t_transmit + (1.0 - ALPHA) * measured_transmit;
    }
    updated.last_measured = Some(now);
    updated
}
