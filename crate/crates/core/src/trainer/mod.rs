//! Pluggable local-training contract plus the two built-in tasks.
//!
//! A task only has to implement [`LearningTask`]: weight initialisation,
//! local training over a shard, and evaluation, all over flat
//! [`WeightVector`]s. New models plug in the same way.
//!
//! Every operation here is a pure function of its inputs and seeds.

mod partition;
mod surrogate;
mod synthetic;

use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::weights::WeightVector;

pub use partition::{partition, PartitionConfig};
pub use surrogate::SurrogateTask;
pub use synthetic::SyntheticClassify;

#[derive(Debug, Error, PartialEq)]
pub enum TrainerError {
    #[error("invalid task configuration: {0}")]
    InvalidConfig(String),
    #[error("shard holds no training data")]
    EmptyShard,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}

/// Which built-in learning task a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// Gaussian-mixture multinomial logistic regression trained for real.
    #[serde(rename = "synthetic-classify")]
    SyntheticClassify,
    /// Deterministic stand-in whose accuracy is a saturating function of
    /// accumulated training work. Fast enough for large sweeps.
    #[serde(rename = "surrogate")]
    Surrogate,
}

/// Shape of the surrogate's accuracy curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateParams {
    /// Accuracy at zero work.
    pub floor: f64,
    /// Accuracy approached as work grows without bound.
    pub asymptote: f64,
    /// Work scale of the saturation curve.
    pub tau: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self { floor: 0.0, asymptote: 0.95, tau: 8.0 }
    }
}

/// Full description of a learning task. The seed fully determines the
/// generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Total parameter count. For the classifier this must be
    /// `classes * (features + 1)`.
    pub dim: usize,
    pub classes: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Feature noise scale; larger values make classes overlap more.
    pub noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub surrogate: SurrogateParams,
}

fn default_batch_size() -> usize {
    64
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.dim == 0 {
            return Err(TrainerError::InvalidConfig("dim must be positive".to_string()));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::InvalidConfig("batch_size must be positive".to_string()));
        }
        if self.kind == TaskKind::SyntheticClassify {
            if self.classes < 2 {
                return Err(TrainerError::InvalidConfig(
                    "classifier needs at least two classes".to_string(),
                ));
            }
            if self.dim % self.classes != 0 || self.dim / self.classes < 2 {
                return Err(TrainerError::InvalidConfig(format!(
                    "dim {} must be classes * (features + 1) with features >= 1",
                    self.dim
                )));
            }
            if !(self.noise.is_finite() && self.noise >= 0.0) {
                return Err(TrainerError::InvalidConfig("noise must be non-negative".to_string()));
            }
        }
        let s = &self.surrogate;
        if !(0.0..=1.0).contains(&s.floor)
            || !(0.0..=1.0).contains(&s.asymptote)
            || s.floor > s.asymptote
            || !(s.tau.is_finite() && s.tau > 0.0)
        {
            return Err(TrainerError::InvalidConfig(
                "surrogate curve needs 0 <= floor <= asymptote <= 1 and tau > 0".to_string(),
            ));
        }
        Ok(())
    }

    /// Feature count of the classifier (bias excluded).
    pub fn features(&self) -> usize {
        self.dim / self.classes - 1
    }
}

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// The slice of the global training data owned by one worker.
///
/// Shards of distinct workers are disjoint index ranges of the same
/// deterministic example stream. Surrogate shards track batch counts
/// only and carry no materialised examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub worker_id: crate::types::WorkerId,
    pub batches: u32,
    pub examples: Vec<Sample>,
}

/// Minimum surface a model must implement to train under fedloop.
pub trait LearningTask: Send + Sync {
    fn spec(&self) -> &TaskSpec;
    /// Deterministic initial weights for a given seed.
    fn init_weights(&self, seed: u64) -> WeightVector;
    /// `epochs` full passes of mini-batch gradient descent over the shard.
    fn local_train(
        &self,
        weights: &WeightVector,
        shard: &Shard,
        epochs: u32,
        lr: f64,
    ) -> Result<WeightVector, TrainerError>;
    /// Fraction of argmax-correct predictions on the test set.
    fn evaluate(&self, weights: &WeightVector, test: &[Sample]) -> Result<f64, TrainerError>;
    /// Deterministic held-out set, disjoint from all training shards.
    fn test_set(&self, n: usize) -> Vec<Sample>;
}

/// Instantiates the task named by the spec.
pub fn build_task(spec: &TaskSpec) -> Result<Arc<dyn LearningTask>, TrainerError> {
    spec.validate()?;
    Ok(match spec.kind {
        TaskKind::SyntheticClassify => Arc::new(SyntheticClassify::new(spec.clone())?),
        TaskKind::Surrogate => Arc::new(SurrogateTask::new(spec.clone())?),
    })
}

/// Writes samples as `feature,...,feature,label` rows for external
/// inspection.
pub fn export_samples_csv(samples: &[Sample], path: impl AsRef<Path>) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        for f in &s.features {
            write!(out, "{},", f)?;
        }
        writeln!(out, "{}", s.label)?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify_spec() -> TaskSpec {
        TaskSpec {
            kind: TaskKind::SyntheticClassify,
            dim: 36,
            classes: 4,
            batch_size: 64,
            noise: 1.0,
            seed: 11,
            surrogate: SurrogateParams::default(),
        }
    }

    #[test]
    fn spec_validation() {
        assert!(classify_spec().validate().is_ok());
        let mut bad = classify_spec();
        bad.dim = 35; // not divisible by classes
        assert!(bad.validate().is_err());
        bad = classify_spec();
        bad.dim = 0;
        assert!(bad.validate().is_err());
        bad = classify_spec();
        bad.classes = 1;
        assert!(bad.validate().is_err());
        bad = classify_spec();
        bad.surrogate.tau = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_export_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.csv");
        let samples = vec![
            Sample { features: vec![1.0, 2.5], label: 0 },
            Sample { features: vec![-0.5, 3.0], label: 1 },
        ];
        export_samples_csv(&samples, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1,2.5,0\n-0.5,3,1\n");
    }
}
