//! Bandit multiclass learning: sample a label from the inner learner's
//! prediction, observe only whether it was right, and feed back an
//! importance-weighted label vector.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::losses::{LabelWeights, SmoothingParam};
use crate::regressor::{derive_seed, AggregatingRegressor, RegressorConfig};
use crate::sampler::SamplerConfig;
use crate::weights::Constraint;

/// Stream tag separating the decision RNG from sampler seeds.
const DECISION_STREAM: u64 = 0xDEC1_5104;

/// L = K / ((1 − μ) e^{−2BR} + μ), the largest possible ‖ỹ‖₁.
pub fn bandit_label_scale(k: usize, b: f64, r: f64, mu: SmoothingParam) -> f64 {
    k as f64 / prob_floor_mass(b, r, mu)
}

/// K times the lower bound on every coordinate of the inner prediction.
fn prob_floor_mass(b: f64, r: f64, mu: SmoothingParam) -> f64 {
    let mu = mu.value();
    (1.0 - mu) * (-2.0 * b * r).exp() + mu
}

/// The importance-weighted feedback ỹ(k) = 1[k = ŷ] 1[ŷ = y] / p(ŷ).
pub fn importance_weighted_label(p: &[f64], sampled: usize, correct: bool) -> Vec<f64> {
    let mut y = vec![0.0; p.len()];
    if correct {
        y[sampled] = 1.0 / p[sampled];
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSettings {
    pub mu_exp: f64,
    pub mu_sqrt: f64,
    /// 5 L dK log(BRn/dK + e) + 2μn at μ = 0.
    pub bound_exp: f64,
    /// The same expression at μ = μ_sqrt.
    pub bound_sqrt: f64,
}

impl MuSettings {
    /// The setting with the smaller bound.
    pub fn best(&self) -> (f64, f64) {
        if self.bound_exp <= self.bound_sqrt {
            (self.mu_exp, self.bound_exp)
        } else {
            (self.mu_sqrt, self.bound_sqrt)
        }
    }
}

/// Both candidate smoothing settings and their mistake-bound overheads.
/// μ_sqrt = √(dK² log(BRn/dK + e)/n), clamped to the admissible 1/2.
pub fn obama_mu_settings(d: usize, k: usize, b: f64, r: f64, n: usize) -> Result<MuSettings> {
    if d == 0 || k < 2 || n == 0 || !(b >= 0.0) || !(r > 0.0) {
        return invalid("obama_mu_settings needs d >= 1, K >= 2, n >= 1, B >= 0, R > 0");
    }
    let (df, kf, nf) = (d as f64, k as f64, n as f64);
    let dk = df * kf;
    let log_term = (b * r * nf / dk + std::f64::consts::E).ln();
    let mu_sqrt = (df * kf * kf * log_term / nf).sqrt().min(0.5);
    let bound = |mu: f64| {
        let l = kf / ((1.0 - mu) * (-2.0 * b * r).exp() + mu);
        5.0 * l * dk * log_term + 2.0 * mu * nf
    };
    Ok(MuSettings {
        mu_exp: 0.0,
        mu_sqrt,
        bound_exp: bound(0.0),
        bound_sqrt: bound(mu_sqrt),
    })
}

/// Outcome of one bandit round.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditRound {
    pub sampled: usize,
    pub mistake: bool,
    /// The sampling distribution p_t actually used.
    pub probs: Vec<f64>,
    pub feedback: Vec<f64>,
    /// Whether p_t had to be re-smoothed up to the floor.
    pub resmoothed: bool,
}

#[derive(Debug, Clone)]
pub struct Obama {
    inner: AggregatingRegressor,
    mu: SmoothingParam,
    l: f64,
    floor: f64,
    rng: ChaCha8Rng,
}

impl Obama {
    /// Wraps an inner aggregating learner with L set from the formula; the
    /// `seed` drives only the label draws.
    pub fn new(
        constraint: Constraint,
        r: f64,
        mu: SmoothingParam,
        sampler: SamplerConfig,
        seed: u64,
    ) -> Result<Self> {
        let k = constraint.classes();
        let b = constraint.bound();
        let l = bandit_label_scale(k, b, r, mu);
        let inner = AggregatingRegressor::new(
            constraint,
            RegressorConfig {
                l,
                r,
                mu,
                sampler,
            },
        )?;
        Ok(Obama {
            inner,
            mu,
            l,
            floor: prob_floor_mass(b, r, mu) / k as f64,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, DECISION_STREAM)),
        })
    }

    pub fn label_scale(&self) -> f64 {
        self.l
    }

    pub fn mu(&self) -> SmoothingParam {
        self.mu
    }

    /// Lower bound on every coordinate of p_t.
    pub fn prob_floor(&self) -> f64 {
        self.floor
    }

    pub fn inner(&self) -> &AggregatingRegressor {
        &self.inner
    }

    /// p_t = σ(ẑ_t), lifted to the floor if Monte Carlo error pushed any
    /// coordinate below it.
    pub fn sampling_distribution(&self, x: &[f64]) -> Result<(Vec<f64>, bool)> {
        let mut p = self.inner.predict_proba(x)?.into_vec();
        let k = p.len() as f64;
        let pmin = p.iter().cloned().fold(f64::INFINITY, f64::min);
        // compare with a little headroom so that 1/p(ŷ) ≤ L survives rounding
        let target = self.floor * (1.0 + 1e-9);
        if pmin >= target {
            return Ok((p, false));
        }
        let lambda = (target - pmin) / (1.0 / k - pmin);
        for v in p.iter_mut() {
            *v = (1.0 - lambda) * *v + lambda / k;
        }
        Ok((p, true))
    }

    /// Plays one round. `label` is consulted only through 1[ŷ = label].
    pub fn round(&mut self, x: &[f64], label: usize) -> Result<BanditRound> {
        let k = self.inner.constraint().classes();
        if label >= k {
            return invalid(format!("label {label} out of range for K = {k}"));
        }
        let (probs, resmoothed) = self.sampling_distribution(x)?;
        let sampled = sample_index(&probs, self.rng.random::<f64>());
        let correct = sampled == label;
        let feedback = importance_weighted_label(&probs, sampled, correct);
        let y = LabelWeights::new(feedback.clone(), self.l)?;
        self.inner.update(x, &y)?;
        Ok(BanditRound {
            sampled,
            mistake: !correct,
            probs,
            feedback,
            resmoothed,
        })
    }
}

/// Inverse-CDF draw from `p` with a uniform variate `u` ∈ [0, 1).
pub fn sample_index(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the last partial sum
    p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1)
}
