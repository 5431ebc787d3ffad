//! Sampling from the log-concave posterior
//! P(W) ∝ exp(−(1/L) Σ_s ℓ(W x_s, y_s)) over a convex weight set.
//!
//! Two backends: projected Langevin Monte Carlo, and an exact deterministic
//! grid used as the validation oracle in low dimension.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::{gradient_into, weighted_loss_raw, LabelWeights};
use crate::weights::{Constraint, WeightMatrix};

/// Cap on the number of candidate grid points (per_dim^dims) for exact mode.
pub const GRID_MAX_POINTS: u64 = 1_200_000;

pub const DEFAULT_GRID_PER_DIM: usize = 33;

/// One observed example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: LabelWeights,
}

/// The history defining the posterior, plus the decision set and scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSpec {
    constraint: Constraint,
    l: f64,
    r: f64,
    history: Vec<Example>,
}

impl PosteriorSpec {
    /// `l` is the mixability scale L, `r` the bound on ‖x‖_⋆.
    pub fn new(constraint: Constraint, l: f64, r: f64) -> Result<Self> {
        if !(l > 0.0) || !l.is_finite() {
            return invalid(format!("L must be positive, got {l}"));
        }
        if !(r > 0.0) || !r.is_finite() {
            return invalid(format!("R must be positive, got {r}"));
        }
        Ok(PosteriorSpec {
            constraint,
            l,
            r,
            history: Vec::new(),
        })
    }

    pub fn constraint(&self) -> &Constraint {
        &self.constraint
    }

    pub fn mixability_scale(&self) -> f64 {
        self.l
    }

    pub fn feature_bound(&self) -> f64 {
        self.r
    }

    pub fn history(&self) -> &[Example] {
        &self.history
    }

    pub fn check_x(&self, x: &[f64]) -> Result<()> {
        let d = self.constraint.features();
        if x.len() != d {
            return invalid(format!("feature vector has length {}, expected {d}", x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite feature");
        }
        let n = self.constraint.norm().dual().of(x);
        if n > self.r * (1.0 + 1e-12) {
            return invalid(format!("feature norm {n} exceeds R = {}", self.r));
        }
        Ok(())
    }

    pub fn check_y(&self, y: &LabelWeights) -> Result<()> {
        if y.len() != self.constraint.classes() {
            return invalid(format!(
                "label weights have length {}, expected K = {}",
                y.len(),
                self.constraint.classes()
            ));
        }
        if y.l1() > self.l * (1.0 + 1e-12) {
            return invalid(format!("label weights have l1 norm {} > L = {}", y.l1(), self.l));
        }
        Ok(())
    }

    pub fn push(&mut self, x: Vec<f64>, y: LabelWeights) -> Result<()> {
        self.check_x(&x)?;
        self.check_y(&y)?;
        self.history.push(Example { x, y });
        Ok(())
    }

    /// (1/L) Σ_s ℓ(W x_s, y_s).
    pub fn neg_log_density(&self, w: &WeightMatrix) -> Result<f64> {
        self.constraint.check(w)?;
        Ok(self.potential_matrix(w))
    }

    /// (1/L) Σ_s [(Σ_k y_{s,k}) σ(W x_s) − y_s] x_sᵀ.
    pub fn neg_log_density_gradient(&self, w: &WeightMatrix) -> Result<WeightMatrix> {
        self.constraint.check(w)?;
        let mut g = WeightMatrix::zeros(w.rows(), w.cols());
        self.gradient_matrix_into(w, &mut g);
        Ok(g)
    }

    pub(crate) fn potential_matrix(&self, w: &WeightMatrix) -> f64 {
        let mut z = vec![0.0; w.rows()];
        let mut total = 0.0;
        for ex in &self.history {
            w.mul_vec_into(&ex.x, &mut z);
            total += weighted_loss_raw(&z, ex.y.as_slice());
        }
        total / self.l
    }

    fn gradient_matrix_into(&self, w: &WeightMatrix, out: &mut WeightMatrix) {
        let k = w.rows();
        let mut z = vec![0.0; k];
        let mut g = vec![0.0; k];
        out.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        for ex in &self.history {
            w.mul_vec_into(&ex.x, &mut z);
            gradient_into(&z, ex.y.as_slice(), &mut g);
            for (kk, gk) in g.iter().enumerate() {
                if *gk == 0.0 {
                    continue;
                }
                for (o, xj) in out.row_mut(kk).iter_mut().zip(&ex.x) {
                    *o += gk * xj / self.l;
                }
            }
        }
    }

    fn param_gradient(&self, theta: &[f64], scratch: &mut WeightMatrix) -> Vec<f64> {
        let w = self.constraint.embed(theta);
        self.gradient_matrix_into(&w, scratch);
        self.constraint.param_gradient(scratch)
    }

    /// Step size 0.5 / (n R² max‖y‖₁ / L + 1): half the inverse of a bound on
    /// the smoothness of the potential.
    pub fn default_step_size(&self) -> f64 {
        let n = self.history.len() as f64;
        let ymax = self.history.iter().map(|e| e.y.l1()).fold(0.0, f64::max);
        0.5 / (n * self.r * self.r * ymax / self.l + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerMethod {
    ProjectedLangevin,
    GridExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainMode {
    /// One chain per sample, each started from a uniform draw over 𝒲.
    Independent,
    /// A single chain; after burn-in every `thin`-th state is kept.
    Thinned { thin: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    /// Number of samples m.
    pub m: usize,
    /// Langevin steps per independent chain.
    pub steps: usize,
    /// η; `None` selects [`PosteriorSpec::default_step_size`].
    pub step_size: Option<f64>,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: ChainMode,
    pub grid_per_dim: usize,
    /// Cap on total Langevin steps per draw.
    pub step_budget: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            method: SamplerMethod::ProjectedLangevin,
            m: 64,
            steps: 200,
            step_size: None,
            burn_in: 100,
            seed: 0,
            chains: ChainMode::Independent,
            grid_per_dim: DEFAULT_GRID_PER_DIM,
            step_budget: 100_000_000,
        }
    }
}

impl SamplerConfig {
    pub fn grid(per_dim: usize) -> Self {
        SamplerConfig {
            method: SamplerMethod::GridExact,
            grid_per_dim: per_dim,
            ..Default::default()
        }
    }

    pub fn langevin(m: usize, steps: usize, seed: u64) -> Self {
        SamplerConfig {
            m,
            steps,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return invalid("sample count m must be at least 1");
        }
        if self.steps == 0 {
            return invalid("chain length must be at least 1");
        }
        if let Some(eta) = self.step_size {
            if !(eta > 0.0) || !eta.is_finite() {
                return invalid(format!("step size must be positive, got {eta}"));
            }
        }
        if let ChainMode::Thinned { thin } = self.chains {
            if thin == 0 {
                return invalid("thinning interval must be at least 1");
            }
        }
        if self.grid_per_dim == 0 {
            return invalid("grid resolution must be at least 1");
        }
        Ok(())
    }

    fn total_steps(&self) -> u64 {
        match self.chains {
            ChainMode::Independent => self.m as u64 * self.steps as u64,
            ChainMode::Thinned { thin } => self.burn_in as u64 + self.m as u64 * thin as u64,
        }
    }
}

/// Weighted sample set in free-parameter coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub constraint: Constraint,
    pub params: Vec<Vec<f64>>,
    /// Normalized weights; uniform for Monte Carlo draws.
    pub weights: Vec<f64>,
}

impl Samples {
    pub fn matrices(&self) -> Vec<WeightMatrix> {
        self.params.iter().map(|t| self.constraint.embed(t)).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Weighted mean of each free parameter.
    pub fn mean(&self) -> Vec<f64> {
        let dims = self.params.first().map_or(0, |p| p.len());
        let mut out = vec![0.0; dims];
        for (p, w) in self.params.iter().zip(&self.weights) {
            for (o, v) in out.iter_mut().zip(p) {
                *o += w * v;
            }
        }
        out
    }
}

/// Exact grid with normalized weights ∝ exp(−f).
pub fn grid_posterior(spec: &PosteriorSpec, per_dim: usize) -> Result<Samples> {
    let params = checked_grid(spec.constraint(), per_dim)?;
    let log_w: Vec<f64> = params
        .par_iter()
        .map(|t| -spec.potential_matrix(&spec.constraint().embed(t)))
        .collect();
    let weights = normalize_log_weights(&log_w);
    Ok(Samples {
        constraint: spec.constraint().clone(),
        params,
        weights,
    })
}

/// The grid of a constraint, refusing more than [`GRID_MAX_POINTS`] candidates.
pub fn checked_grid(constraint: &Constraint, per_dim: usize) -> Result<Vec<Vec<f64>>> {
    let dims = constraint.free_dims() as u32;
    let candidates = (per_dim as u64).checked_pow(dims).unwrap_or(u64::MAX);
    if candidates > GRID_MAX_POINTS {
        return Err(Error::BudgetExceeded {
            what: "grid points",
            requested: candidates,
            cap: GRID_MAX_POINTS,
        });
    }
    Ok(constraint.grid(per_dim))
}

pub(crate) fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = log_w.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Draws m samples (Langevin) or the exact weighted grid.
pub fn draw_samples(spec: &PosteriorSpec, cfg: &SamplerConfig) -> Result<Samples> {
    cfg.validate()?;
    match cfg.method {
        SamplerMethod::GridExact => grid_posterior(spec, cfg.grid_per_dim),
        SamplerMethod::ProjectedLangevin => langevin(spec, cfg),
    }
}

fn langevin(spec: &PosteriorSpec, cfg: &SamplerConfig) -> Result<Samples> {
    let requested = cfg.total_steps();
    if requested > cfg.step_budget {
        return Err(Error::BudgetExceeded {
            what: "Langevin steps",
            requested,
            cap: cfg.step_budget,
        });
    }
    let eta = cfg.step_size.unwrap_or_else(|| spec.default_step_size());
    let params = match cfg.chains {
        ChainMode::Independent => (0..cfg.m)
            .into_par_iter()
            .map(|i| {
                let mut rng = chain_rng(cfg.seed, i as u64);
                let start = spec.constraint().sample_uniform(&mut rng);
                let mut chain = Chain::new(spec, start, eta);
                for _ in 0..cfg.steps {
                    chain.step(&mut rng);
                }
                chain.theta
            })
            .collect(),
        ChainMode::Thinned { thin } => {
            let mut rng = chain_rng(cfg.seed, 0);
            let start = spec.constraint().sample_uniform(&mut rng);
            let mut chain = Chain::new(spec, start, eta);
            for _ in 0..cfg.burn_in {
                chain.step(&mut rng);
            }
            let mut out = Vec::with_capacity(cfg.m);
            for _ in 0..cfg.m {
                for _ in 0..thin {
                    chain.step(&mut rng);
                }
                out.push(chain.theta.clone());
            }
            out
        }
    };
    let m = params.len();
    Ok(Samples {
        constraint: spec.constraint().clone(),
        params,
        weights: vec![1.0 / m as f64; m],
    })
}

/// Private RNG stream for chain `index` under `seed`.
pub fn chain_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Chain<'a> {
    spec: &'a PosteriorSpec,
    theta: Vec<f64>,
    eta: f64,
    noise_scale: f64,
    scratch: WeightMatrix,
}

impl<'a> Chain<'a> {
    fn new(spec: &'a PosteriorSpec, theta: Vec<f64>, eta: f64) -> Self {
        let c = spec.constraint();
        Chain {
            spec,
            theta,
            eta,
            noise_scale: (2.0 * eta).sqrt(),
            scratch: WeightMatrix::zeros(c.classes(), c.features()),
        }
    }

    /// θ ← Π(θ − η∇f(θ) + √(2η) ξ).
    fn step(&mut self, rng: &mut ChaCha8Rng) {
        use rand::Rng;
        let grad = self.spec.param_gradient(&self.theta, &mut self.scratch);
        for (t, g) in self.theta.iter_mut().zip(&grad) {
            let xi: f64 = rng.sample(StandardNormal);
            *t += -self.eta * g + self.noise_scale * xi;
        }
        self.spec.constraint().project_params(&mut self.theta);
    }
}
