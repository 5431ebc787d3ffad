//! The margin lower-bound adversary: a bisection ("threshold") tree per
//! coordinate, concatenated over d coordinates plus a bias coordinate, with
//! Rademacher labels.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::learner::OnlineLearner;
use crate::losses::LabelWeights;
use crate::stream::{ExampleStream, LabeledExample};

const SHATTER_TOL: f64 = 1e-12;

/// Tree depth ⌊log₂(2/δ)⌋.
pub fn tree_depth(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return invalid(format!("delta must lie in (0, 1], got {delta}"));
    }
    Ok((2.0 / delta).log2().floor() as usize)
}

/// The bisection tree of depth ⌊log₂(2/δ)⌋ over [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTree {
    pub delta: f64,
    pub depth: usize,
}

pub fn build_threshold_tree(delta: f64) -> Result<ThresholdTree> {
    Ok(ThresholdTree {
        delta,
        depth: tree_depth(delta)?,
    })
}

impl ThresholdTree {
    /// Node values z_1..z_D along the path `eps` (length D) followed by the
    /// terminal z*. Starting from [l, u] = [0, 1], z_t is the midpoint; ε_t =
    /// −1 moves l up to z_t, ε_t = +1 moves u down to it.
    pub fn path(&self, eps: &[i8]) -> (Vec<f64>, f64) {
        assert_eq!(eps.len(), self.depth, "path length must equal the tree depth");
        let (mut l, mut u) = (0.0, 1.0);
        let mut z = Vec::with_capacity(self.depth);
        for &e in eps {
            let mid = (l + u) / 2.0;
            z.push(mid);
            if e < 0 {
                l = mid;
            } else {
                u = mid;
            }
        }
        (z, (l + u) / 2.0)
    }

    /// Every sign path of length D, in lexicographic order of (−1, +1).
    pub fn all_paths(&self) -> Vec<Vec<i8>> {
        (0..1usize << self.depth)
            .map(|bits| {
                (0..self.depth)
                    .map(|t| if bits >> (self.depth - 1 - t) & 1 == 1 { 1 } else { -1 })
                    .collect()
            })
            .collect()
    }
}

/// A γ-margin binary dataset in ℝ^{d+1} with its certificate w.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginInstance {
    /// Number of tree blocks; vectors have d + 1 coordinates.
    pub d: usize,
    pub gamma: f64,
    pub delta: f64,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<i8>,
    /// Unit-norm certifying vector.
    pub w: Vec<f64>,
}

impl MarginInstance {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Smallest y⟨w, x⟩ over the dataset.
    pub fn margin(&self) -> f64 {
        self.xs
            .iter()
            .zip(&self.ys)
            .map(|(x, y)| *y as f64 * dot(&self.w, x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Two-class stream view: label +1 is class 0, −1 is class 1, so that
    /// the first logit of a binary predictor plays the role of ⟨w, x⟩.
    pub fn to_stream(&self) -> Result<ExampleStream> {
        let examples = self
            .xs
            .iter()
            .zip(&self.ys)
            .map(|(x, y)| LabeledExample {
                x: x.clone(),
                y: sign_to_class(*y),
            })
            .collect();
        ExampleStream::new(self.d + 1, 2, examples)
    }
}

pub fn sign_to_class(y: i8) -> usize {
    if y > 0 {
        0
    } else {
        1
    }
}

/// ‖w‖₂ ≤ 1, y_t⟨w, x_t⟩ ≥ γ and ‖x_t‖₂ ≤ 2 for every t, up to 1e-12.
pub fn verify_shattering(inst: &MarginInstance) -> bool {
    if inst.xs.len() != inst.ys.len() {
        return false;
    }
    if norm(&inst.w) > 1.0 + SHATTER_TOL {
        return false;
    }
    inst.xs.iter().zip(&inst.ys).all(|(x, y)| {
        x.len() == inst.w.len()
            && norm(x) <= 2.0 + SHATTER_TOL
            && *y as f64 * dot(&inst.w, x) >= inst.gamma - SHATTER_TOL
    })
}

/// δ = √(4γ√(5d)) for admissible γ ∈ (0, 1/(4√(5d))].
pub fn margin_delta(d: usize, gamma: f64) -> Result<f64> {
    if d == 0 {
        return invalid("need d >= 1");
    }
    let cap = 1.0 / (4.0 * (5.0 * d as f64).sqrt());
    if !(gamma > 0.0 && gamma <= cap * (1.0 + 1e-12)) {
        return invalid(format!("margin {gamma} outside (0, {cap}]"));
    }
    Ok((gamma * 4.0 * (5.0 * d as f64).sqrt()).sqrt().min(1.0))
}

/// The mistake lower bound (d/4)⌊log₂(1/(5γ√d))⌋.
pub fn margin_mistake_bound(d: usize, gamma: f64) -> f64 {
    let df = d as f64;
    df / 4.0 * (1.0 / (5.0 * gamma * df.sqrt())).log2().floor()
}

/// An online ±1 predictor, possibly randomized.
pub trait SignLearner {
    fn predict(&mut self, x: &[f64], rng: &mut dyn RngCore) -> Result<i8>;

    fn update(&mut self, x: &[f64], y: i8) -> Result<()>;
}

/// Guesses ±1 with equal probability.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomGuesser;

impl SignLearner for RandomGuesser {
    fn predict(&mut self, _x: &[f64], rng: &mut dyn RngCore) -> Result<i8> {
        Ok(if rng.random::<bool>() { 1 } else { -1 })
    }

    fn update(&mut self, _x: &[f64], _y: i8) -> Result<()> {
        Ok(())
    }
}

/// Thresholds a two-class logistic learner: +1 iff class 0 is at least as
/// likely as class 1.
#[derive(Debug, Clone)]
pub struct LogisticSign<L>(pub L);

impl<L: OnlineLearner> SignLearner for LogisticSign<L> {
    fn predict(&mut self, x: &[f64], _rng: &mut dyn RngCore) -> Result<i8> {
        let z = self.0.predict(x)?;
        Ok(if z.as_slice()[0] >= z.as_slice()[1] { 1 } else { -1 })
    }

    fn update(&mut self, x: &[f64], y: i8) -> Result<()> {
        self.0.update(x, &LabelWeights::one_hot(2, sign_to_class(y))?)
    }
}

/// Builds the instance along the sign path `eps` (d blocks of D signs),
/// without playing it against anyone.
pub fn margin_instance(d: usize, gamma: f64, eps: &[i8]) -> Result<MarginInstance> {
    let delta = margin_delta(d, gamma)?;
    let tree = build_threshold_tree(delta)?;
    if eps.len() != d * tree.depth {
        return invalid(format!("need {} signs, got {}", d * tree.depth, eps.len()));
    }
    let mut xs = Vec::with_capacity(eps.len());
    let mut w = vec![0.0; d + 1];
    w[d] = -delta;
    for k in 0..d {
        let block = &eps[k * tree.depth..(k + 1) * tree.depth];
        let (z, z_star) = tree.path(block);
        assert!(z_star > 0.0, "terminal threshold must be positive");
        w[k] = delta / z_star;
        for zt in z {
            let mut x = vec![0.0; d + 1];
            x[d] = 1.0;
            x[k] = zt;
            xs.push(x);
        }
    }
    let nw = norm(&w);
    w.iter_mut().for_each(|v| *v /= nw);
    Ok(MarginInstance {
        d,
        gamma,
        delta,
        xs,
        ys: eps.to_vec(),
        w,
    })
}

/// Plays the adversary against `learner` for `n` rounds (default: the tree
/// depth d⌊log₂(2/δ)⌋), drawing fresh Rademacher labels from `seed`. Past
/// the tree depth the last example is repeated. Returns the realized
/// instance and the learner's mistakes.
pub fn margin_adversary<S: SignLearner>(
    d: usize,
    gamma: f64,
    n: Option<usize>,
    learner: &mut S,
    seed: u64,
) -> Result<(MarginInstance, usize)> {
    let delta = margin_delta(d, gamma)?;
    let depth = d * tree_depth(delta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<i8> = (0..depth).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    let mut inst = margin_instance(d, gamma, &eps)?;
    let n = n.unwrap_or(depth);
    if depth == 0 {
        return invalid("margin instance has depth zero");
    }
    while inst.xs.len() < n {
        inst.xs.push(inst.xs[depth - 1].clone());
        inst.ys.push(inst.ys[depth - 1]);
    }
    inst.xs.truncate(n);
    inst.ys.truncate(n);
    let mut learner_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut mistakes = 0;
    for (x, &y) in inst.xs.iter().zip(&inst.ys) {
        if learner.predict(x, &mut learner_rng)? != y {
            mistakes += 1;
        }
        learner.update(x, y)?;
    }
    Ok((inst, mistakes))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
