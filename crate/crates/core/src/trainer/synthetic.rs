//! Gaussian-mixture classification trained with multinomial logistic
//! regression. Small enough to run thousands of simulated rounds on a
//! desktop, real enough that aggregation quality actually shows up in
//! the accuracy curves.
//!
//! Every example is generated from its own counter-derived RNG stream,
//! so example `i` can be produced in O(1) by any node that knows the
//! task seed. Workers regenerate exactly their shard; nothing is
//! shipped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LearningTask, Sample, Shard, TaskSpec, TrainerError};
use crate::weights::WeightVector;

// Disjoint stream ranges of the per-task RNG.
const STREAM_MEANS: u64 = 0;
const STREAM_TRAIN_BASE: u64 = 1 << 32;
const STREAM_TEST_BASE: u64 = 2 << 32;
const STREAM_INIT: u64 = 3 << 32;

const MEAN_SPREAD: f64 = 1.0;
const INIT_STD: f64 = 0.01;

/// Standard normal draw via Box-Muller; bit-deterministic given the rng
/// state.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub struct SyntheticClassify {
    spec: TaskSpec,
    /// Per-class feature means, fixed by the task seed.
    means: Vec<Vec<f64>>,
}

impl SyntheticClassify {
    pub fn new(spec: TaskSpec) -> Result<Self, TrainerError> {
        spec.validate()?;
        let features = spec.features();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(STREAM_MEANS);
        let means = (0..spec.classes)
            .map(|_| (0..features).map(|_| MEAN_SPREAD * standard_normal(&mut rng)).collect())
            .collect();
        Ok(Self { spec, means })
    }

    fn example(&self, stream: u64, index: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(stream + index);
        let label = (index % self.spec.classes as u64) as usize;
        let features = self.means[label]
            .iter()
            .map(|m| m + self.spec.noise * standard_normal(&mut rng))
            .collect();
        Sample { features, label }
    }

    /// Training example `index` of the global stream.
    pub fn train_example(&self, index: u64) -> Sample {
        self.example(STREAM_TRAIN_BASE, index)
    }

    fn logits(&self, weights: &[f64], features: &[f64]) -> Vec<f64> {
        let fp1 = self.spec.features() + 1;
        (0..self.spec.classes)
            .map(|k| {
                let row = &weights[k * fp1..(k + 1) * fp1];
                let mut z = row[fp1 - 1]; // bias
                for (w, x) in row[..fp1 - 1].iter().zip(features) {
                    z += w * x;
                }
                z
            })
            .collect()
    }

    fn softmax(mut z: Vec<f64>) -> Vec<f64> {
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in z.iter_mut() {
            *v /= sum;
        }
        z
    }

    /// Mean cross-entropy over `samples`. Exposed so tests can take
    /// finite differences of it.
    pub fn loss(&self, weights: &WeightVector, samples: &[Sample]) -> f64 {
        let mut total = 0.0;
        for s in samples {
            let probs = Self::softmax(self.logits(weights.values(), &s.features));
            total -= probs[s.label].max(1e-300).ln();
        }
        total / samples.len() as f64
    }

    /// Analytic gradient of [`Self::loss`].
    pub fn grad(&self, weights: &WeightVector, samples: &[Sample]) -> Vec<f64> {
        let fp1 = self.spec.features() + 1;
        let mut grad = vec![0.0f64; self.spec.dim];
        for s in samples {
            let probs = Self::softmax(self.logits(weights.values(), &s.features));
            for k in 0..self.spec.classes {
                let delta = probs[k] - if k == s.label { 1.0 } else { 0.0 };
                let row = &mut grad[k * fp1..(k + 1) * fp1];
                for (g, x) in row[..fp1 - 1].iter_mut().zip(&s.features) {
                    *g += delta * x;
                }
                row[fp1 - 1] += delta;
            }
        }
        let inv = 1.0 / samples.len() as f64;
        for g in grad.iter_mut() {
            *g *= inv;
        }
        grad
    }

    fn predict(&self, weights: &[f64], features: &[f64]) -> usize {
        let logits = self.logits(weights, features);
        let mut best = 0;
        for (k, z) in logits.iter().enumerate() {
            if *z > logits[best] {
                best = k;
            }
        }
        best
    }
}

impl LearningTask for SyntheticClassify {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn init_weights(&self, seed: u64) -> WeightVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_INIT);
        let values = (0..self.spec.dim).map(|_| INIT_STD * standard_normal(&mut rng)).collect();
        WeightVector::new(values).expect("init weights are finite")
    }

    fn local_train(
        &self,
        weights: &WeightVector,
        shard: &Shard,
        epochs: u32,
        lr: f64,
    ) -> Result<WeightVector, TrainerError> {
        if shard.examples.is_empty() {
            return Err(TrainerError::EmptyShard);
        }
        if !(lr.is_finite() && lr > 0.0) {
            return Err(TrainerError::InvalidHyperparameter(format!("lr must be positive, got {lr}")));
        }
        if epochs == 0 {
            return Err(TrainerError::InvalidHyperparameter("epochs must be at least 1".to_string()));
        }
        let mut w = weights.clone();
        for _ in 0..epochs {
            // Fixed batch order: training is a pure function of its inputs.
            for batch in shard.examples.chunks(self.spec.batch_size) {
                let grad = self.grad(&w, batch);
                let values: Vec<f64> =
                    w.values().iter().zip(&grad).map(|(wv, g)| wv - lr * g).collect();
                w = WeightVector::new(values).map_err(|_| {
                    TrainerError::InvalidHyperparameter("training diverged to non-finite weights".to_string())
                })?;
            }
        }
        Ok(w)
    }

    fn evaluate(&self, weights: &WeightVector, test: &[Sample]) -> Result<f64, TrainerError> {
        if test.is_empty() {
            return Err(TrainerError::EmptyTestSet);
        }
        let correct = test
            .iter()
            .filter(|s| self.predict(weights.values(), &s.features) == s.label)
            .count();
        Ok(correct as f64 / test.len() as f64)
    }

    fn test_set(&self, n: usize) -> Vec<Sample> {
        (0..n as u64).map(|j| self.example(STREAM_TEST_BASE, j)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{SurrogateParams, TaskKind};
    use crate::types::WorkerId;
    use crate::weights::l2_diff;

    fn spec() -> TaskSpec {
        TaskSpec {
            kind: TaskKind::SyntheticClassify,
            dim: 36,
            classes: 4,
            batch_size: 16,
            noise: 1.0,
            seed: 5,
            surrogate: SurrogateParams::default(),
        }
    }

    fn task() -> SyntheticClassify {
        SyntheticClassify::new(spec()).unwrap()
    }

    fn shard(task: &SyntheticClassify, n: u64) -> Shard {
        Shard {
            worker_id: WorkerId(0),
            batches: n.div_ceil(16) as u32,
            examples: (0..n).map(|i| task.train_example(i)).collect(),
        }
    }

    #[test]
    fn init_weights_deterministic() {
        let t = task();
        assert_eq!(t.init_weights(3), t.init_weights(3));
        let a = t.init_weights(3);
        let b = t.init_weights(4);
        assert!(l2_diff(&a, &b).unwrap() > 0.0);
        assert_eq!(a.dim(), 36);
    }

    #[test]
    fn loss_decreases_under_training() {
        let t = task();
        let s = shard(&t, 128);
        let w0 = t.init_weights(1);
        let w1 = t.local_train(&w0, &s, 3, 0.1).unwrap();
        assert!(t.loss(&w1, &s.examples) < t.loss(&w0, &s.examples));
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let t = task();
        let s = shard(&t, 48);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let h = 1e-5;
        for _ in 0..20 {
            let point = WeightVector::new(
                (0..t.spec.dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            )
            .unwrap();
            let grad = t.grad(&point, &s.examples);
            let coord = rng.gen_range(0..t.spec.dim);
            let mut plus = point.values().to_vec();
            plus[coord] += h;
            let mut minus = point.values().to_vec();
            minus[coord] -= h;
            let fd = (t.loss(&WeightVector::new(plus).unwrap(), &s.examples)
                - t.loss(&WeightVector::new(minus).unwrap(), &s.examples))
                / (2.0 * h);
            let scale = fd.abs().max(grad[coord].abs()).max(1e-3);
            assert!(
                (fd - grad[coord]).abs() / scale <= 1e-5,
                "coord {coord}: analytic {} vs fd {}",
                grad[coord],
                fd
            );
        }
    }

    #[test]
    fn tiny_learning_rate_barely_moves_weights() {
        let t = task();
        let s = shard(&t, 32);
        let w0 = t.init_weights(1);
        let w1 = t.local_train(&w0, &s, 1, 1e-12).unwrap();
        assert!(l2_diff(&w0, &w1).unwrap() < 1e-9);
        assert!(t.local_train(&w0, &s, 1, 0.0).is_err());
        assert!(t.local_train(&w0, &s, 0, 0.1).is_err());
    }

    #[test]
    fn empty_shard_rejected() {
        let t = task();
        let empty = Shard { worker_id: WorkerId(0), batches: 0, examples: vec![] };
        assert_eq!(
            t.local_train(&t.init_weights(1), &empty, 1, 0.1),
            Err(TrainerError::EmptyShard)
        );
    }

    #[test]
    fn separable_task_evaluates_to_one_after_training() {
        // Nearly noiseless classes are linearly separable; a few epochs
        // reach perfect test accuracy.
        let mut sp = spec();
        sp.noise = 0.05;
        let t = SyntheticClassify::new(sp).unwrap();
        let s = Shard {
            worker_id: WorkerId(0),
            batches: 8,
            examples: (0..128).map(|i| t.train_example(i)).collect(),
        };
        let trained = t.local_train(&t.init_weights(1), &s, 40, 0.5).unwrap();
        let acc = t.evaluate(&trained, &t.test_set(400)).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn random_labels_score_near_chance() {
        let mut sp = spec();
        sp.classes = 2;
        sp.dim = 18; // 2 * (8 + 1)
        sp.noise = 1.0;
        let t = SyntheticClassify::new(sp).unwrap();
        // Replace labels with coin flips: any fixed classifier scores
        // chance level, 0.5 within a binomial bound at n = 2000.
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut test = t.test_set(2000);
        for s in test.iter_mut() {
            s.label = rng.gen_range(0..2);
        }
        let s = shard(&t, 256);
        let trained = t.local_train(&t.init_weights(1), &s, 10, 0.2).unwrap();
        let acc = t.evaluate(&trained, &test).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "expected chance level, got {acc}");
    }

    #[test]
    fn evaluate_is_deterministic_and_rejects_empty() {
        let t = task();
        let w = t.init_weights(1);
        let test = t.test_set(100);
        assert_eq!(t.evaluate(&w, &test).unwrap(), t.evaluate(&w, &test).unwrap());
        assert_eq!(t.evaluate(&w, &[]), Err(TrainerError::EmptyTestSet));
    }

    #[test]
    fn train_and_test_streams_are_distinct() {
        let t = task();
        assert_ne!(t.train_example(0), t.example(STREAM_TEST_BASE, 0));
        assert_eq!(t.train_example(7), t.train_example(7));
    }
}
