//! Flat weight vectors and the aggregation kernels.
//!
//! Model weights are always a single flat vector of 64-bit reals; layered
//! models flatten and unflatten at the trainer boundary. That keeps
//! aggregation and transfer model-agnostic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::WorkerId;

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("total averaging weight is zero")]
    ZeroTotalWeight,
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("staleness factor must lie in (0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("weight vector must be non-empty and finite")]
    InvalidWeightVector,
}

/// Flat vector of model parameters. Guaranteed non-empty and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self, AggregateError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(AggregateError::InvalidWeightVector);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Which node a set of weights belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Owner {
    Server,
    Worker(WorkerId),
}

/// Weights tagged with the server version they were trained from and the
/// number of local epochs applied on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct VersionedWeights {
    pub weights: WeightVector,
    /// Aggregation-server version these weights are based on.
    pub base_version: u64,
    /// Local epochs trained on top of `base_version`; zero only for
    /// freshly distributed server weights.
    pub local_epochs: u32,
    pub owner: Owner,
}

impl VersionedWeights {
    pub fn server(weights: WeightVector, version: u64) -> Self {
        Self { weights, base_version: version, local_epochs: 0, owner: Owner::Server }
    }

    pub fn worker(worker: WorkerId, weights: WeightVector, base_version: u64, local_epochs: u32) -> Self {
        debug_assert!(local_epochs >= 1, "worker responses must train at least one epoch");
        Self { weights, base_version, local_epochs, owner: Owner::Worker(worker) }
    }
}

/// How per-entry averaging weights (`avg_weight`) are assigned during
/// aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AggregationPolicy {
    /// Every response counts the same.
    Uniform,
    /// Responses count proportionally to the worker's local data size.
    SizeWeighted,
    /// Size-weighted, additionally discounted by `lambda` per version of
    /// staleness. Biases the average toward fresher responses.
    StalenessDiscounted { lambda: f64 },
}

impl AggregationPolicy {
    /// Averaging weight for a response from a worker holding
    /// `data_batches` batches whose base version lags the server by
    /// `version_gap` aggregations.
    pub fn entry_weight(&self, data_batches: u32, version_gap: u64) -> Result<f64, AggregateError> {
        match self {
            AggregationPolicy::Uniform => Ok(1.0),
            AggregationPolicy::SizeWeighted => Ok(f64::from(data_batches)),
            AggregationPolicy::StalenessDiscounted { lambda } => {
                Ok(f64::from(data_batches) * staleness_discount(version_gap, *lambda)?)
            }
        }
    }
}

/// One worker response staged for aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationEntry {
    pub source: WorkerId,
    pub weights: VersionedWeights,
    avg_weight: f64,
}

impl AggregationEntry {
    pub fn new(
        source: WorkerId,
        weights: VersionedWeights,
        avg_weight: f64,
    ) -> Result<Self, AggregateError> {
        if !avg_weight.is_finite() || avg_weight < 0.0 {
            return Err(AggregateError::NonFiniteInput);
        }
        Ok(Self { source, weights, avg_weight })
    }

    pub fn avg_weight(&self) -> f64 {
        self.avg_weight
    }
}

/// Weighted federated average of worker responses.
///
/// `result[k] = sum_x(avg_weight_x * weights_x[k]) / sum_x(avg_weight_x)`
///
/// A single entry is returned unchanged, bit for bit, so that one-worker
/// rounds are exactly equivalent to plain local training.
pub fn weighted_average(entries: &[AggregationEntry]) -> Result<WeightVector, AggregateError> {
    let total: f64 = entries.iter().map(|e| e.avg_weight).sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(AggregateError::ZeroTotalWeight);
    }
    let dim = entries[0].weights.weights.dim();
    for entry in entries {
        let got = entry.weights.weights.dim();
        if got != dim {
            return Err(AggregateError::DimensionMismatch { expected: dim, got });
        }
    }
    if entries.len() == 1 {
        return Ok(entries[0].weights.weights.clone());
    }
    let mut merged = vec![0.0f64; dim];
    for (k, slot) in merged.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for entry in entries {
            acc += entry.avg_weight * entry.weights.weights.values()[k];
        }
        *slot = acc / total;
    }
    WeightVector::new(merged)
}

/// Multiplier `lambda^gap` applied to the averaging weight of a response
/// whose base version lags the server by `gap` aggregations.
pub fn staleness_discount(gap: u64, lambda: f64) -> Result<f64, AggregateError> {
    if !(lambda.is_finite() && lambda > 0.0 && lambda <= 1.0) {
        return Err(AggregateError::InvalidLambda(lambda));
    }
    // Explicit product rather than powi: bit-identical on every platform.
    let mut factor = 1.0f64;
    for _ in 0..gap {
        factor *= lambda;
    }
    Ok(factor)
}

/// Euclidean distance between two weight vectors. Diagnostic helper.
pub fn l2_diff(a: &WeightVector, b: &WeightVector) -> Result<f64, AggregateError> {
    if a.dim() != b.dim() {
        return Err(AggregateError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum.sqrt())
}
