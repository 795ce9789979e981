//! Deterministic surrogate workload.
//!
//! Weight slot 0 carries the accumulated effective work (epochs times
//! batches); accuracy is a saturating function of that work. Aggregation
//! averages work values, so the surrogate exercises the full
//! orchestration path at negligible cost.

use super::{LearningTask, Sample, Shard, TaskSpec, TrainerError};
use crate::weights::WeightVector;

pub struct SurrogateTask {
    spec: TaskSpec,
}

impl SurrogateTask {
    pub fn new(spec: TaskSpec) -> Result<Self, TrainerError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    /// Accuracy after `work` units of effective training.
    pub fn accuracy_for_work(&self, work: f64) -> f64 {
        let p = &self.spec.surrogate;
        p.floor + (p.asymptote - p.floor) * (1.0 - (-work.max(0.0) / p.tau).exp())
    }
}

impl LearningTask for SurrogateTask {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn init_weights(&self, _seed: u64) -> WeightVector {
        WeightVector::new(vec![0.0; self.spec.dim]).expect("zero vector is valid")
    }

    fn local_train(
        &self,
        weights: &WeightVector,
        shard: &Shard,
        epochs: u32,
        _lr: f64,
    ) -> Result<WeightVector, TrainerError> {
        if shard.batches == 0 {
            return Err(TrainerError::EmptyShard);
        }
        let mut values = weights.values().to_vec();
        values[0] += f64::from(epochs) * f64::from(shard.batches);
        WeightVector::new(values).map_err(|_| {
            TrainerError::InvalidHyperparameter("work counter overflowed".to_string())
        })
    }

    fn evaluate(&self, weights: &WeightVector, _test: &[Sample]) -> Result<f64, TrainerError> {
        Ok(self.accuracy_for_work(weights.values()[0]))
    }

    fn test_set(&self, _n: usize) -> Vec<Sample> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{SurrogateParams, TaskKind};
    use crate::types::WorkerId;

    fn task() -> SurrogateTask {
        SurrogateTask::new(TaskSpec {
            kind: TaskKind::Surrogate,
            dim: 4,
            classes: 2,
            batch_size: 64,
            noise: 0.0,
            seed: 0,
            surrogate: SurrogateParams { floor: 0.1, asymptote: 0.9, tau: 5.0 },
        })
        .unwrap()
    }

    #[test]
    fn zero_work_sits_at_floor() {
        let t = task();
        let w = t.init_weights(0);
        assert_eq!(t.evaluate(&w, &[]).unwrap(), 0.1);
    }

    #[test]
    fn saturates_at_asymptote() {
        let t = task();
        assert!((t.accuracy_for_work(1e9) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn accuracy_monotone_in_work() {
        let t = task();
        let mut last = -1.0;
        for w in [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 1000.0] {
            let acc = t.accuracy_for_work(w);
            assert!(acc >= last);
            last = acc;
        }
        // Doubling work never decreases accuracy.
        for w in [0.5, 3.0, 20.0] {
            assert!(t.accuracy_for_work(2.0 * w) >= t.accuracy_for_work(w));
        }
    }

    #[test]
    fn training_accumulates_epochs_times_batches() {
        let t = task();
        let shard = Shard { worker_id: WorkerId(0), batches: 3, examples: vec![] };
        let w = t.local_train(&t.init_weights(0), &shard, 4, 0.1).unwrap();
        assert_eq!(w.values()[0], 12.0);
        let empty = Shard { worker_id: WorkerId(0), batches: 0, examples: vec![] };
        assert_eq!(t.local_train(&w, &empty, 1, 0.1), Err(TrainerError::EmptyShard));
    }
}
