//! Softmax machinery and the (weighted) multiclass logistic loss.
//!
//! Everything here is a pure function. Logits are only meaningful up to a
//! common additive shift, so comparisons between logit vectors should go
//! through [`softmax`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Smallest probability fed to a logarithm when mixing predictions.
pub const PROB_FLOOR: f64 = 1e-300;

/// Tolerance used when validating that a vector sums to one.
const SIMPLEX_TOL: f64 = 1e-9;

/// A length-K real score vector, K ≥ 2, all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.len() < 2 {
            return invalid(format!("logits need K >= 2 entries, got {}", z.len()));
        }
        if let Some(v) = z.iter().find(|v| !v.is_finite()) {
            return invalid(format!("non-finite logit {v}"));
        }
        Ok(Logits(z))
    }

    pub fn zeros(k: usize) -> Self {
        Logits(vec![0.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inf_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the largest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// A probability vector over K classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return invalid("empty probability vector");
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("probabilities must be finite and nonnegative");
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return invalid(format!("probabilities sum to {s}, not 1"));
        }
        Ok(ProbVector(p))
    }

    pub fn uniform(k: usize) -> Self {
        ProbVector(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Nonnegative label weights y with ‖y‖₁ ≤ L.
///
/// A class label is the one-hot special case with L = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelWeights {
    y: Vec<f64>,
    cap: f64,
}

impl LabelWeights {
    pub fn new(y: Vec<f64>, cap: f64) -> Result<Self> {
        if !(cap > 0.0) || !cap.is_finite() {
            return invalid(format!("label weight cap must be positive, got {cap}"));
        }
        if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("label weights must be finite and nonnegative");
        }
        let l1: f64 = y.iter().sum();
        // Relative slack so that exactly-at-cap importance weights survive rounding.
        if l1 > cap * (1.0 + 1e-12) {
            return invalid(format!("label weights have l1 norm {l1} > cap {cap}"));
        }
        Ok(LabelWeights { y, cap })
    }

    pub fn one_hot(k: usize, class: usize) -> Result<Self> {
        if class >= k {
            return invalid(format!("class {class} out of range for K = {k}"));
        }
        let mut y = vec![0.0; k];
        y[class] = 1.0;
        Ok(LabelWeights { y, cap: 1.0 })
    }

    pub fn zeros(k: usize, cap: f64) -> Self {
        LabelWeights {
            y: vec![0.0; k],
            cap,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn l1(&self) -> f64 {
        self.y.iter().sum()
    }

    /// The class index if these weights are a one-hot label.
    pub fn as_class(&self) -> Option<usize> {
        let mut found = None;
        for (k, &v) in self.y.iter().enumerate() {
            if v == 1.0 && found.is_none() {
                found = Some(k);
            } else if v != 0.0 {
                return None;
            }
        }
        found
    }
}

/// Smoothing parameter μ ∈ [0, 1/2].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SmoothingParam(f64);

impl SmoothingParam {
    pub const ZERO: SmoothingParam = SmoothingParam(0.0);

    pub fn new(mu: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&mu) {
            return invalid(format!("smoothing parameter must lie in [0, 1/2], got {mu}"));
        }
        Ok(SmoothingParam(mu))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// exp(v − m) for m = max z; the max entry itself is exactly 1, which saves
/// one exp per call in the hot loops.
#[inline]
pub fn shifted_exp(v: f64, m: f64) -> f64 {
    if v == m && m.is_finite() {
        1.0
    } else {
        (v - m).exp()
    }
}

/// log Σ_k exp(z_k), evaluated with max subtraction.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + z.iter().map(|&v| shifted_exp(v, m)).sum::<f64>().ln()
}

/// Writes σ(z) into `out`.
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = shifted_exp(v, m);
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// −Σ_k y_k log σ(z)_k on raw slices.
pub fn weighted_loss_raw(z: &[f64], y: &[f64]) -> f64 {
    let lse = log_sum_exp(z);
    z.iter()
        .zip(y)
        .filter(|(_, &w)| w != 0.0)
        .map(|(zk, w)| w * (lse - zk))
        .sum()
}

pub fn softmax(z: &Logits) -> ProbVector {
    let mut out = vec![0.0; z.len()];
    softmax_into(z.as_slice(), &mut out);
    ProbVector(out)
}

/// Coordinatewise log; a right inverse of [`softmax`].
pub fn softmax_pinv(p: &ProbVector) -> Result<Logits> {
    if let Some(v) = p.as_slice().iter().find(|v| **v <= 0.0) {
        return Err(Error::Domain(format!(
            "pseudoinverse needs strictly positive probabilities, got {v}; smooth first"
        )));
    }
    Ok(Logits(p.as_slice().iter().map(|v| v.ln()).collect()))
}

/// (1 − μ) p + μ 1/K.
pub fn smooth(p: &ProbVector, mu: SmoothingParam) -> ProbVector {
    let k = p.len() as f64;
    let mu = mu.value();
    ProbVector(p.0.iter().map(|v| (1.0 - mu) * v + mu / k).collect())
}

pub fn weighted_logistic_loss(z: &Logits, y: &LabelWeights) -> Result<f64> {
    check_dims(z.len(), y.len())?;
    Ok(weighted_loss_raw(z.as_slice(), y.as_slice()))
}

/// log(1 + exp(−y z)) for y ∈ {−1, +1}.
pub fn binary_logistic_loss(z: f64, y: i8) -> Result<f64> {
    if y != 1 && y != -1 {
        return invalid(format!("binary label must be -1 or +1, got {y}"));
    }
    if !z.is_finite() {
        return invalid("non-finite score");
    }
    let a = -(y as f64) * z;
    Ok(a.max(0.0) + (-a.abs()).exp().ln_1p())
}

/// ∇_z ℓ(z, y) = (Σ_k y_k) σ(z) − y.
pub fn loss_gradient(z: &Logits, y: &LabelWeights) -> Result<Logits> {
    check_dims(z.len(), y.len())?;
    let mut g = vec![0.0; z.len()];
    gradient_into(z.as_slice(), y.as_slice(), &mut g);
    Ok(Logits(g))
}

pub(crate) fn gradient_into(z: &[f64], y: &[f64], out: &mut [f64]) {
    let total: f64 = y.iter().sum();
    softmax_into(z, out);
    for (o, yk) in out.iter_mut().zip(y) {
        *o = total * *o - yk;
    }
}

/// The mixed prediction σ⁺(Σ_i w_i σ(z_i)) certifying mixability.
pub fn mix_prediction(support: &[Logits], weights: &[f64]) -> Result<Logits> {
    if support.is_empty() {
        return invalid("mixture support is empty");
    }
    if support.len() != weights.len() {
        return invalid(format!(
            "{} support points but {} weights",
            support.len(),
            weights.len()
        ));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return invalid("mixture weights must be finite and nonnegative");
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return invalid(format!("mixture weights sum to {total}, not 1"));
    }
    let k = support[0].len();
    if support.iter().any(|z| z.len() != k) {
        return invalid("support points have differing lengths");
    }
    let mut mixed = vec![0.0; k];
    let mut buf = vec![0.0; k];
    for (z, &w) in support.iter().zip(weights) {
        softmax_into(z.as_slice(), &mut buf);
        for (m, p) in mixed.iter_mut().zip(&buf) {
            *m += w * p;
        }
    }
    Ok(Logits(mixed.iter().map(|p| p.max(PROB_FLOOR).ln()).collect()))
}

/// σ⁺(smooth_μ(p)) with the underflow clamp applied before the log.
pub fn smoothed_logits(p: &[f64], mu: SmoothingParam) -> Logits {
    let k = p.len() as f64;
    let mu = mu.value();
    Logits(
        p.iter()
            .map(|v| ((1.0 - mu) * v + mu / k).max(PROB_FLOOR).ln())
            .collect(),
    )
}

fn check_dims(k_z: usize, k_y: usize) -> Result<()> {
    if k_z != k_y {
        return invalid(format!("logits have K = {k_z} but labels have K = {k_y}"));
    }
    Ok(())
}
