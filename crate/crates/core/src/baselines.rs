//! Proper online learners used for comparison: projected Online Gradient
//! Descent and Online Newton Step. Both predict W_t x_t with the pre-update
//! iterate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::learner::OnlineLearner;
use crate::losses::{gradient_into, LabelWeights, Logits};
use crate::weights::{Constraint, WeightMatrix};

/// Default OGD step constant c = B / (2 R √2).
pub fn default_ogd_scale(b: f64, r: f64) -> f64 {
    b / (2.0 * r * std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone)]
pub struct OgdLearner {
    constraint: Constraint,
    theta: Vec<f64>,
    scale: f64,
    t: usize,
}

impl OgdLearner {
    /// Starts at W = 0 with step sizes η_t = scale / √t.
    pub fn new(constraint: Constraint, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return invalid(format!("OGD step constant must be positive, got {scale}"));
        }
        let mut theta = vec![0.0; constraint.free_dims()];
        constraint.project_params(&mut theta);
        Ok(OgdLearner {
            constraint,
            theta,
            scale,
            t: 0,
        })
    }

    pub fn weights(&self) -> WeightMatrix {
        self.constraint.embed(&self.theta)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Predicts with the current iterate, then takes one projected step.
    pub fn step(&mut self, x: &[f64], y: &LabelWeights) -> Result<Logits> {
        let pred = self.predict(x)?;
        let grad = param_gradient(&self.constraint, &self.weights(), x, y);
        self.t += 1;
        let eta = self.scale / (self.t as f64).sqrt();
        for (t, g) in self.theta.iter_mut().zip(&grad) {
            *t -= eta * g;
        }
        self.constraint.project_params(&mut self.theta);
        Ok(pred)
    }
}

impl OnlineLearner for OgdLearner {
    fn predict(&self, x: &[f64]) -> Result<Logits> {
        check_x(&self.constraint, x)?;
        Logits::new(self.weights().mul_vec(x))
    }

    fn update(&mut self, x: &[f64], y: &LabelWeights) -> Result<()> {
        self.step(x, y).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnsParams {
    pub gamma: f64,
    /// A is initialized to eps · I.
    pub eps: f64,
    pub projection_iters: usize,
    pub projection_tol: f64,
}

impl OnsParams {
    /// γ = ½ min(1/(4 G D), α) and ε = 1/(γ² D²) with gradient bound G = 2R,
    /// diameter D = 2B and exp-concavity α = e^{−BR}.
    pub fn standard(b: f64, r: f64) -> Self {
        let g = 2.0 * r;
        let d = 2.0 * b;
        let gamma = 0.5 * (1.0 / (4.0 * g * d)).min((-b * r).exp());
        OnsParams {
            gamma,
            eps: 1.0 / (gamma * gamma * d * d),
            projection_iters: 50,
            projection_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OnsLearner {
    constraint: Constraint,
    theta: DVector<f64>,
    a: DMatrix<f64>,
    params: OnsParams,
}

impl OnsLearner {
    pub fn new(constraint: Constraint, params: OnsParams) -> Result<Self> {
        if !(params.gamma > 0.0) || !(params.eps > 0.0) {
            return invalid("ONS needs gamma > 0 and eps > 0");
        }
        let n = constraint.free_dims();
        let mut theta = vec![0.0; n];
        constraint.project_params(&mut theta);
        Ok(OnsLearner {
            constraint,
            theta: DVector::from_vec(theta),
            a: DMatrix::identity(n, n) * params.eps,
            params,
        })
    }

    pub fn weights(&self) -> WeightMatrix {
        self.constraint.embed(self.theta.as_slice())
    }

    pub fn params(&self) -> &OnsParams {
        &self.params
    }

    /// The running matrix A = εI + Σ g_s g_sᵀ.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// g = vec(∇_W ℓ), A ← A + g gᵀ, W ← Π^A(W − (1/γ) A⁻¹ g).
    pub fn step(&mut self, x: &[f64], y: &LabelWeights) -> Result<Logits> {
        let pred = self.predict(x)?;
        let g = DVector::from_vec(param_gradient(&self.constraint, &self.weights(), x, y));
        self.a += &g * g.transpose();
        let dir = self.solve(&g);
        let target = &self.theta - dir / self.params.gamma;
        self.theta = self.project_a_norm(&target);
        Ok(pred)
    }

    fn solve(&self, g: &DVector<f64>) -> DVector<f64> {
        let n = self.a.nrows();
        let mut a = self.a.clone();
        let mut jitter = self.params.eps;
        loop {
            if let Some(ch) = a.clone().cholesky() {
                return ch.solve(g);
            }
            // numerically singular: recondition
            a += DMatrix::identity(n, n) * jitter;
            jitter *= 10.0;
        }
    }

    /// argmin over 𝒲 of (θ − target)ᵀ A (θ − target), by projected gradient.
    fn project_a_norm(&self, target: &DVector<f64>) -> DVector<f64> {
        if self.constraint.contains_params(target.as_slice()) {
            return target.clone();
        }
        let mut theta = target.clone();
        self.constraint.project_params(theta.as_mut_slice());
        let step = 1.0 / spectral_bound(&self.a);
        for _ in 0..self.params.projection_iters {
            let grad = &self.a * (&theta - target);
            let mut next = &theta - grad * step;
            self.constraint.project_params(next.as_mut_slice());
            let moved = (&next - &theta).norm();
            theta = next;
            if moved < self.params.projection_tol {
                break;
            }
        }
        theta
    }
}

impl OnlineLearner for OnsLearner {
    fn predict(&self, x: &[f64]) -> Result<Logits> {
        check_x(&self.constraint, x)?;
        Logits::new(self.weights().mul_vec(x))
    }

    fn update(&mut self, x: &[f64], y: &LabelWeights) -> Result<()> {
        self.step(x, y).map(|_| ())
    }
}

/// Largest eigenvalue of a symmetric PSD matrix, via power iteration,
/// inflated slightly so that 1/bound is a safe gradient step.
fn spectral_bound(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 1.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda * 1.01
}

fn check_x(c: &Constraint, x: &[f64]) -> Result<()> {
    if x.len() != c.features() {
        return invalid(format!("feature vector has length {}, expected {}", x.len(), c.features()));
    }
    Ok(())
}

/// ∇_θ ℓ(W x, y) for the free parameters of `c`.
pub(crate) fn param_gradient(c: &Constraint, w: &WeightMatrix, x: &[f64], y: &LabelWeights) -> Vec<f64> {
    let k = w.rows();
    let z = w.mul_vec(x);
    let mut g = vec![0.0; k];
    gradient_into(&z, y.as_slice(), &mut g);
    let mut gw = WeightMatrix::zeros(k, w.cols());
    for (kk, gk) in g.iter().enumerate() {
        for (o, xj) in gw.row_mut(kk).iter_mut().zip(x) {
            *o = gk * xj;
        }
    }
    c.param_gradient(&gw)
}
