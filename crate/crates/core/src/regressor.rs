//! The improper online multiclass logistic learner.
//!
//! Round t: predict ẑ_t = σ⁺(smooth_μ(E_{W∼P_t}[σ(W x_t)])), then fold
//! (x_t, y_t) into the posterior P_{t+1}(W) ∝ exp(−(1/L) Σ_{s≤t} ℓ(W x_s, y_s)).
//! The expectation is either exact over a finite grid or a Monte Carlo
//! average of fresh Langevin draws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::losses::{
    shifted_exp, smoothed_logits, softmax, softmax_into, weighted_loss_raw, LabelWeights, Logits,
    ProbVector, SmoothingParam,
};
use crate::sampler::{
    checked_grid, draw_samples, PosteriorSpec, SamplerConfig, SamplerMethod,
};
use crate::weights::{Constraint, WeightMatrix};

/// Grids at least this large are scored in parallel.
const PAR_GRID_MIN: usize = 2048;
const PAR_BLOCK: usize = 512;
/// Points whose log-weight trails the maximum by more than this carry less
/// than e^-60 of the leader's mass each; even 10^6 of them stay far below
/// one ulp of the normalizer, so prediction skips them.
const NEGLIGIBLE_LOG_WEIGHT: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    /// Mixability scale L; 1 for one-hot streams.
    pub l: f64,
    /// Bound R on ‖x‖_⋆.
    pub r: f64,
    pub mu: SmoothingParam,
    pub sampler: SamplerConfig,
}

impl RegressorConfig {
    pub fn grid(per_dim: usize, mu: SmoothingParam) -> Self {
        RegressorConfig {
            l: 1.0,
            r: 1.0,
            mu,
            sampler: SamplerConfig::grid(per_dim),
        }
    }
}

/// State of the aggregating learner.
#[derive(Debug, Clone)]
pub struct AggregatingRegressor {
    spec: PosteriorSpec,
    mu: SmoothingParam,
    sampler: SamplerConfig,
    grid: Option<GridState>,
}

#[derive(Debug, Clone)]
struct GridState {
    points: Vec<WeightMatrix>,
    /// The same points as one contiguous row-major buffer, K·d per point.
    flat: Vec<f64>,
    /// −(1/L) × cumulative loss of each grid point.
    log_w: Vec<f64>,
}

impl AggregatingRegressor {
    pub fn new(constraint: Constraint, cfg: RegressorConfig) -> Result<Self> {
        cfg.sampler.validate()?;
        let spec = PosteriorSpec::new(constraint, cfg.l, cfg.r)?;
        let grid = match cfg.sampler.method {
            SamplerMethod::GridExact => {
                let c = spec.constraint();
                let points: Vec<WeightMatrix> = checked_grid(c, cfg.sampler.grid_per_dim)?
                    .iter()
                    .map(|t| c.embed(t))
                    .collect();
                let log_w = vec![0.0; points.len()];
                let flat = points.iter().flat_map(|w| w.as_slice().iter().copied()).collect();
                Some(GridState { points, flat, log_w })
            }
            SamplerMethod::ProjectedLangevin => {
                if cfg.mu.value() == 0.0 {
                    return invalid("Monte Carlo prediction needs smoothing mu > 0");
                }
                None
            }
        };
        Ok(AggregatingRegressor {
            spec,
            mu: cfg.mu,
            sampler: cfg.sampler,
            grid,
        })
    }

    pub fn constraint(&self) -> &Constraint {
        self.spec.constraint()
    }

    pub fn posterior(&self) -> &PosteriorSpec {
        &self.spec
    }

    pub fn mu(&self) -> SmoothingParam {
        self.mu
    }

    pub fn sampler(&self) -> &SamplerConfig {
        &self.sampler
    }

    /// Number of updates so far; the next prediction is for round t = this + 1.
    pub fn history_len(&self) -> usize {
        self.spec.history().len()
    }

    /// E_{W∼P_t}[σ(W x)] before smoothing.
    pub fn posterior_mean_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.spec.check_x(x)?;
        let k = self.constraint().classes();
        match &self.grid {
            Some(g) => Ok(grid_mean_probs(g, x, k)),
            None => {
                let mut cfg = self.sampler.clone();
                cfg.seed = derive_seed(self.sampler.seed, self.history_len() as u64);
                let samples = draw_samples(&self.spec, &cfg)?;
                let mut mean = vec![0.0; k];
                let mut z = vec![0.0; k];
                let mut p = vec![0.0; k];
                for (w, wt) in samples.matrices().iter().zip(&samples.weights) {
                    w.mul_vec_into(x, &mut z);
                    softmax_into(&z, &mut p);
                    for (m, v) in mean.iter_mut().zip(&p) {
                        *m += wt * v;
                    }
                }
                Ok(mean)
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Logits> {
        let mean = self.posterior_mean_probs(x)?;
        Ok(smoothed_logits(&mean, self.mu))
    }

    /// σ(ẑ), i.e. the smoothed mixture probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        Ok(softmax(&self.predict(x)?))
    }

    pub fn update(&mut self, x: &[f64], y: &LabelWeights) -> Result<()> {
        self.spec.push(x.to_vec(), y.clone())?;
        // an all-zero label (e.g. bandit feedback after a miss) adds no loss
        if y.l1() == 0.0 {
            return Ok(());
        }
        if let Some(g) = &mut self.grid {
            let k = self.spec.constraint().classes();
            let inv_l = 1.0 / self.spec.mixability_scale();
            let stride = k * x.len();
            let score = |(ws, lws): (&[f64], &mut [f64])| {
                let mut z = vec![0.0; k];
                for (w, lw) in ws.chunks_exact(stride).zip(lws) {
                    linear_into(w, x, &mut z);
                    *lw -= inv_l * weighted_loss_raw(&z, y.as_slice());
                }
            };
            if g.log_w.len() >= PAR_GRID_MIN {
                g.flat
                    .par_chunks(PAR_BLOCK * stride)
                    .zip(g.log_w.par_chunks_mut(PAR_BLOCK))
                    .for_each(score);
            } else {
                g.flat
                    .chunks(PAR_BLOCK * stride)
                    .zip(g.log_w.chunks_mut(PAR_BLOCK))
                    .for_each(score);
            }
        }
        Ok(())
    }

    /// Cumulative loss of every grid point so far (grid mode only).
    pub fn grid_cumulative_losses(&self) -> Option<Vec<f64>> {
        let l = self.spec.mixability_scale();
        self.grid
            .as_ref()
            .map(|g| g.log_w.iter().map(|v| -l * v).collect())
    }

    pub fn grid_points(&self) -> Option<&[WeightMatrix]> {
        self.grid.as_ref().map(|g| g.points.as_slice())
    }
}

fn linear_into(w: &[f64], x: &[f64], z: &mut [f64]) {
    for (zk, row) in z.iter_mut().zip(w.chunks_exact(x.len())) {
        *zk = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn grid_mean_probs(g: &GridState, x: &[f64], k: usize) -> Vec<f64> {
    let m = g.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let stride = k * x.len();
    // per-block partial sums, added in block order so the result does not
    // depend on the thread count
    let block = |(ws, lws): (&[f64], &[f64])| {
        let mut sum = vec![0.0; k + 1];
        let mut z = vec![0.0; k];
        for (w, lw) in ws.chunks_exact(stride).zip(lws) {
            if lw - m < -NEGLIGIBLE_LOG_WEIGHT {
                continue;
            }
            linear_into(w, x, &mut z);
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in z.iter_mut() {
                *v = shifted_exp(*v, zmax);
                s += *v;
            }
            let wt = (lw - m).exp();
            let f = wt / s;
            for (a, v) in sum.iter_mut().zip(&z) {
                *a += f * v;
            }
            sum[k] += wt;
        }
        sum
    };
    let partials: Vec<Vec<f64>> = if g.log_w.len() >= PAR_GRID_MIN {
        g.flat
            .par_chunks(PAR_BLOCK * stride)
            .zip(g.log_w.par_chunks(PAR_BLOCK))
            .map(block)
            .collect()
    } else {
        g.flat.chunks(PAR_BLOCK * stride).zip(g.log_w.chunks(PAR_BLOCK)).map(block).collect()
    };
    let mut total = vec![0.0; k + 1];
    for p in partials {
        total.iter_mut().zip(&p).for_each(|(a, v)| *a += v);
    }
    let norm = total[k];
    total.truncate(k);
    total.into_iter().map(|v| v / norm).collect()
}

/// SplitMix64 of `seed` combined with `tag`; used to give every round and
/// every run its own RNG stream.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 5 L D_𝒲 log(B R n / D_𝒲 + e) + 2 μ Σ_t ‖y_t‖₁.
pub fn theoretical_regret_bound(
    d_w: f64,
    l: f64,
    b: f64,
    r: f64,
    n: f64,
    mu: f64,
    sum_label_mass: f64,
) -> f64 {
    5.0 * l * d_w * (b * r * n / d_w + std::f64::consts::E).ln() + 2.0 * mu * sum_label_mass
}

/// Per-round loss ledger of a learner against tracked comparators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub learner_losses: Vec<f64>,
    pub comparator_names: Vec<String>,
    /// Indexed `[comparator][round]`.
    pub comparator_losses: Vec<Vec<f64>>,
    /// Value of the regret bound formula for this run.
    pub bound: f64,
}

impl RegretRecord {
    pub fn rounds(&self) -> usize {
        self.learner_losses.len()
    }

    pub fn learner_total(&self) -> f64 {
        self.learner_losses.iter().sum()
    }

    pub fn comparator_totals(&self) -> Vec<f64> {
        self.comparator_losses.iter().map(|c| c.iter().sum()).collect()
    }

    /// Index and total loss of the best tracked comparator.
    pub fn best_comparator(&self) -> Option<(usize, f64)> {
        self.comparator_totals()
            .into_iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn regret(&self) -> f64 {
        self.learner_total() - self.best_comparator().map_or(0.0, |(_, v)| v)
    }

    /// Running regret after each round against the final best comparator.
    pub fn cumulative_regret(&self) -> Vec<f64> {
        let best = match self.best_comparator() {
            Some((i, _)) => &self.comparator_losses[i],
            None => return Vec::new(),
        };
        let mut acc = 0.0;
        self.learner_losses
            .iter()
            .zip(best)
            .map(|(a, b)| {
                acc += a - b;
                acc
            })
            .collect()
    }
}

/// Exponential weights over a finite set of experts, predicting with the
/// smoothed mixed prediction.
///
/// With one-hot outcomes and μ = 1/n the regret against the best expert is at
/// most log(#experts) + 2.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteAggregator {
    log_w: Vec<f64>,
    eta: f64,
    mu: SmoothingParam,
}

impl FiniteAggregator {
    pub fn new(experts: usize, mu: SmoothingParam) -> Result<Self> {
        Self::with_rate(experts, 1.0, mu)
    }

    /// `eta` is the mixability rate 1/L.
    pub fn with_rate(experts: usize, eta: f64, mu: SmoothingParam) -> Result<Self> {
        if experts == 0 {
            return invalid("expert set is empty");
        }
        if !(eta > 0.0) {
            return invalid(format!("learning rate must be positive, got {eta}"));
        }
        Ok(FiniteAggregator {
            log_w: vec![0.0; experts],
            eta,
            mu,
        })
    }

    pub fn experts(&self) -> usize {
        self.log_w.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        crate::sampler::normalize_log_weights(&self.log_w)
    }

    pub fn predict(&self, expert_predictions: &[Logits]) -> Result<Logits> {
        self.check(expert_predictions)?;
        let k = expert_predictions[0].len();
        let weights = self.weights();
        let mut mean = vec![0.0; k];
        let mut p = vec![0.0; k];
        for (z, w) in expert_predictions.iter().zip(&weights) {
            softmax_into(z.as_slice(), &mut p);
            for (m, v) in mean.iter_mut().zip(&p) {
                *m += w * v;
            }
        }
        Ok(smoothed_logits(&mean, self.mu))
    }

    pub fn update(&mut self, expert_predictions: &[Logits], y: &LabelWeights) -> Result<()> {
        self.check(expert_predictions)?;
        for (lw, z) in self.log_w.iter_mut().zip(expert_predictions) {
            if z.len() != y.len() {
                return invalid("expert prediction and label dimensions differ");
            }
            *lw -= self.eta * weighted_loss_raw(z.as_slice(), y.as_slice());
        }
        Ok(())
    }

    fn check(&self, expert_predictions: &[Logits]) -> Result<()> {
        if expert_predictions.len() != self.log_w.len() {
            return invalid(format!(
                "expected {} expert predictions, got {}",
                self.log_w.len(),
                expert_predictions.len()
            ));
        }
        Ok(())
    }
}
