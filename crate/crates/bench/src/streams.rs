//! Data sources for the experiments.

use ilr_core::adversary::{margin_adversary, RandomGuesser};
use ilr_core::losses::{softmax_into, argmax};
use ilr_core::regressor::derive_seed;
use ilr_core::stream::{stochastic_stream, uniform_ball, ExampleStream, LabeledExample};
use ilr_core::weights::{Constraint, WeightMatrix};
use ilr_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, StreamKind};

const COMPARATOR_TAG: u64 = 0x5745_4947;
const STREAM_TAG: u64 = 0x5354_524d;

/// Input dimension seen by the learners: margin streams carry an extra
/// bias coordinate on top of their d blocks.
pub fn input_dim(cfg: &ExperimentConfig) -> usize {
    match cfg.stream {
        StreamKind::Margin => cfg.d + 1,
        _ => cfg.d,
    }
}

/// A random weight matrix drawn uniformly from `c`.
pub fn random_comparator(c: &Constraint, seed: u64) -> WeightMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, COMPARATOR_TAG));
    c.embed(&c.sample_uniform(&mut rng))
}

/// x uniform on the radius-R ball, y = argmax W* x, replaced by a uniform
/// class with probability `noise`.
pub fn realizable_stream(w_star: &WeightMatrix, r: f64, n: usize, noise: f64, seed: u64) -> Result<ExampleStream> {
    let (k, d) = (w_star.rows(), w_star.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|_| {
            let x = uniform_ball(&mut rng, d, r);
            let y = if rng.random::<f64>() < noise {
                rng.random_range(0..k)
            } else {
                argmax(&w_star.mul_vec(&x))
            };
            LabeledExample { x, y }
        })
        .collect();
    ExampleStream::new(d, k, examples)
}

/// The stream of one run. Stochastic and realizable labels come from a
/// comparator drawn uniformly from `c`.
pub fn make_stream(cfg: &ExperimentConfig, c: &Constraint, seed: u64) -> Result<ExampleStream> {
    let stream_seed = derive_seed(seed, STREAM_TAG);
    let r = cfg.feature_bound();
    match cfg.stream {
        StreamKind::Stochastic => stochastic_stream(&random_comparator(c, seed), r, cfg.n, cfg.noise, stream_seed),
        StreamKind::Realizable => realizable_stream(&random_comparator(c, seed), r, cfg.n, cfg.noise, stream_seed),
        StreamKind::Margin => {
            let (inst, _) = margin_adversary(cfg.d, cfg.gamma, Some(cfg.n), &mut RandomGuesser, stream_seed)?;
            inst.to_stream()
        }
    }
}

/// A finitely supported distribution over x with y ∼ σ(W* x), so the risk
/// of any predictor is available in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    pub xs: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
    pub w_star: WeightMatrix,
}

impl DiscreteDistribution {
    /// `points` support points uniform on the radius-R ball with equal mass.
    pub fn random(c: &Constraint, r: f64, points: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..points).map(|_| uniform_ball(&mut rng, c.features(), r)).collect();
        DiscreteDistribution {
            xs,
            probs: vec![1.0 / points as f64; points],
            w_star: random_comparator(c, seed),
        }
    }

    /// P(y | x_i) under the comparator.
    pub fn conditional(&self, i: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.w_star.rows()];
        softmax_into(&self.w_star.mul_vec(&self.xs[i]), &mut p);
        p
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<LabeledExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cond: Vec<Vec<f64>> = (0..self.xs.len()).map(|i| self.conditional(i)).collect();
        (0..n)
            .map(|_| {
                let i = ilr_core::bandit::sample_index(&self.probs, rng.random());
                let y = ilr_core::bandit::sample_index(&cond[i], rng.random());
                LabeledExample {
                    x: self.xs[i].clone(),
                    y,
                }
            })
            .collect()
    }

    /// KL(P(·|x_i) ‖ q): the excess log loss of predicting q at x_i over
    /// the comparator, which is the best predictor in the class.
    pub fn excess_at(&self, i: usize, q: &[f64]) -> f64 {
        self.conditional(i)
            .iter()
            .zip(q)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, q)| p * (p / q).ln())
            .sum()
    }
}
