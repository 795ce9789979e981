//! Data partitioning across workers.
//!
//! Twelve built-in allocations cover the 10- and 30-worker clusters:
//! per cluster size, a sequential row (one worker owns everything), an
//! even row, and an uneven row, each at a small and a large data scale.
//! Worker `w` owns a contiguous batch range of the deterministic global
//! example stream, so shards are disjoint by construction.

use serde::{Deserialize, Serialize};

use super::{Shard, SyntheticClassify, TaskKind, TaskSpec, TrainerError};
use crate::types::WorkerId;

/// Batches allocated to each worker of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionConfig {
    /// 1..=6 for the built-in rows, 0 for custom allocations.
    pub config_id: u8,
    pub worker_count: usize,
    pub batches_per_worker: Vec<u32>,
}

impl PartitionConfig {
    /// Built-in allocation `config_id` (1..=6) for a 10- or 30-worker
    /// cluster.
    ///
    /// Rows 1 and 4 give all data to worker 0 (sequential training);
    /// rows 2 and 5 spread it evenly; rows 3 and 6 are uneven. The
    /// second triple is the same shape at ten times the data.
    pub fn preset(config_id: u8, worker_count: usize) -> Result<Self, TrainerError> {
        let batches_per_worker: Vec<u32> = match (worker_count, config_id) {
            (10, 1) => vec![10, 0, 0, 0, 0, 0, 0, 0, 0, 0],
            (10, 2) => vec![1; 10],
            (10, 3) => vec![1, 0, 0, 3, 0, 0, 0, 2, 2, 2],
            (10, 4) => vec![100, 0, 0, 0, 0, 0, 0, 0, 0, 0],
            (10, 5) => vec![10; 10],
            (10, 6) => vec![10, 0, 0, 30, 0, 0, 0, 20, 20, 20],
            (30, 1) => {
                let mut v = vec![0; 30];
                v[0] = 30;
                v
            }
            (30, 2) => vec![1; 30],
            (30, 3) => {
                let mut v = vec![0; 30];
                v[0] = 4;
                v[10] = 8;
                for b in v.iter_mut().take(30).skip(21) {
                    *b = 2;
                }
                v
            }
            (30, 4) => {
                let mut v = vec![0; 30];
                v[0] = 300;
                v
            }
            (30, 5) => vec![10; 30],
            (30, 6) => {
                let mut v = vec![0; 30];
                v[0] = 40;
                v[10] = 80;
                for b in v.iter_mut().take(30).skip(21) {
                    *b = 20;
                }
                v
            }
            _ => {
                return Err(TrainerError::InvalidConfig(format!(
                    "no built-in allocation for config {config_id} with {worker_count} workers"
                )))
            }
        };
        Ok(Self { config_id, worker_count, batches_per_worker })
    }

    /// Arbitrary allocation; at least one worker must hold data.
    pub fn custom(batches_per_worker: Vec<u32>) -> Result<Self, TrainerError> {
        if batches_per_worker.is_empty() {
            return Err(TrainerError::InvalidConfig("allocation must name at least one worker".to_string()));
        }
        if batches_per_worker.iter().all(|b| *b == 0) {
            return Err(TrainerError::InvalidConfig("allocation must place at least one batch".to_string()));
        }
        Ok(Self {
            config_id: 0,
            worker_count: batches_per_worker.len(),
            batches_per_worker,
        })
    }

    pub fn total_batches(&self) -> u64 {
        self.batches_per_worker.iter().map(|b| u64::from(*b)).sum()
    }
}

/// Materialises one shard per worker from the global example stream.
///
/// Classifier shards carry their examples; surrogate shards carry batch
/// counts only.
pub fn partition(p: &PartitionConfig, t: &TaskSpec) -> Result<Vec<Shard>, TrainerError> {
    if p.batches_per_worker.len() != p.worker_count {
        return Err(TrainerError::InvalidConfig(format!(
            "allocation names {} workers but worker_count is {}",
            p.batches_per_worker.len(),
            p.worker_count
        )));
    }
    t.validate()?;
    let generator = match t.kind {
        TaskKind::SyntheticClassify => Some(SyntheticClassify::new(t.clone())?),
        TaskKind::Surrogate => None,
    };
    let mut shards = Vec::with_capacity(p.worker_count);
    let mut offset: u64 = 0;
    for (w, &batches) in p.batches_per_worker.iter().enumerate() {
        let examples = match &generator {
            Some(gen) => {
                let count = u64::from(batches) * t.batch_size as u64;
                let examples =
                    (offset..offset + count).map(|i| gen.train_example(i)).collect();
                offset += count;
                examples
            }
            None => Vec::new(),
        };
        shards.push(Shard { worker_id: WorkerId(w as u32), batches, examples });
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::SurrogateParams;

    fn spec() -> TaskSpec {
        TaskSpec {
            kind: TaskKind::SyntheticClassify,
            dim: 36,
            classes: 4,
            batch_size: 64,
            noise: 1.0,
            seed: 3,
            surrogate: SurrogateParams::default(),
        }
    }

    #[test]
    fn even_ten_worker_row() {
        let p = PartitionConfig::preset(2, 10).unwrap();
        assert_eq!(p.batches_per_worker, vec![1; 10]);
        let shards = partition(&p, &spec()).unwrap();
        assert!(shards.iter().all(|s| s.batches == 1 && s.examples.len() == 64));
    }

    #[test]
    fn uneven_ten_worker_row() {
        let p = PartitionConfig::preset(3, 10).unwrap();
        assert_eq!(p.batches_per_worker, vec![1, 0, 0, 3, 0, 0, 0, 2, 2, 2]);
        assert_eq!(p.total_batches(), 10);
    }

    #[test]
    fn sequential_row_gives_everything_to_worker_zero() {
        let p = PartitionConfig::preset(1, 10).unwrap();
        assert_eq!(p.batches_per_worker[0], 10);
        assert!(p.batches_per_worker[1..].iter().all(|b| *b == 0));
        let shards = partition(&p, &spec()).unwrap();
        assert_eq!(shards[0].examples.len(), 640);
        assert!(shards[1..].iter().all(|s| s.examples.is_empty()));
    }

    #[test]
    fn all_twelve_rows_conserve_batch_totals() {
        let expected = [
            ((10usize, 1u8), 10u64),
            ((10, 2), 10),
            ((10, 3), 10),
            ((10, 4), 100),
            ((10, 5), 100),
            ((10, 6), 100),
            ((30, 1), 30),
            ((30, 2), 30),
            ((30, 3), 30),
            ((30, 4), 300),
            ((30, 5), 300),
            ((30, 6), 300),
        ];
        for ((workers, config), total) in expected {
            let p = PartitionConfig::preset(config, workers).unwrap();
            assert_eq!(p.total_batches(), total, "config {config} at {workers} workers");
            assert_eq!(p.batches_per_worker.len(), workers);
        }
    }

    #[test]
    fn shards_are_disjoint_and_deterministic() {
        let p = PartitionConfig::preset(3, 10).unwrap();
        let a = partition(&p, &spec()).unwrap();
        let b = partition(&p, &spec()).unwrap();
        assert_eq!(a, b);
        // Contiguous ranges of a stream of distinct examples: no two
        // shards may share an example.
        let mut seen: Vec<&[f64]> = Vec::new();
        for shard in &a {
            for ex in &shard.examples {
                assert!(!seen.iter().any(|f| *f == ex.features.as_slice()));
                seen.push(&ex.features);
            }
        }
        assert_eq!(seen.len(), 640);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(PartitionConfig::preset(7, 10).is_err());
        assert!(PartitionConfig::preset(1, 12).is_err());
        assert!(PartitionConfig::custom(vec![]).is_err());
        assert!(PartitionConfig::custom(vec![0, 0]).is_err());
        let mut p = PartitionConfig::preset(2, 10).unwrap();
        p.worker_count = 9;
        assert!(partition(&p, &spec()).is_err());
    }

    #[test]
    fn surrogate_partition_skips_example_generation() {
        let mut t = spec();
        t.kind = TaskKind::Surrogate;
        let p = PartitionConfig::preset(5, 10).unwrap();
        let shards = partition(&p, &t).unwrap();
        assert!(shards.iter().all(|s| s.examples.is_empty()));
        assert_eq!(shards[0].batches, 10);
    }
}
