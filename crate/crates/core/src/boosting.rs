//! Online multiclass boosting. Each weak learner is paired with a
//! one-parameter aggregating logistic learner that decides how much weight
//! the new vote gets on top of the running score; a Hedge layer picks which
//! partial ensemble to trust.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::sample_index;
use crate::error::{invalid, Error, Result};
use crate::losses::{softmax_into, LabelWeights, Logits, ProbVector, SmoothingParam};
use crate::regressor::{derive_seed, AggregatingRegressor, RegressorConfig};
use crate::sampler::{chain_rng, SamplerConfig};
use crate::weights::Constraint;

/// Grid resolution of the α posterior in each logistic instance.
pub const ALPHA_GRID_POINTS: usize = 65;

const COST_TOL: f64 = 1e-12;
const HEDGE_STREAM: u64 = 0x4ED6E;
const WEAK_STREAM: u64 = 0x3EA4;

/// Ĉ(y, k) = σ(s)_k − 1[k = y], as rows indexed by y.
pub fn aux_cost_matrix(s: &Logits) -> Vec<Vec<f64>> {
    let k = s.len();
    let mut p = vec![0.0; k];
    softmax_into(s.as_slice(), &mut p);
    (0..k)
        .map(|y| {
            let mut row = p.clone();
            row[y] -= 1.0;
            row
        })
        .collect()
}

/// K × K cost matrix with zero diagonal, nonnegative entries and rows of ℓ₁
/// norm at most 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    k: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 || rows.iter().any(|r| r.len() != k) {
            return invalid("cost matrix must be square with K >= 2");
        }
        let c = CostMatrix {
            k,
            data: rows.into_iter().flatten().collect(),
        };
        c.check()?;
        Ok(c)
    }

    /// The scaled translation (1/K)(Ĉ(y, k) − Ĉ(y, y)) of the auxiliary costs.
    pub fn from_scores(s: &Logits) -> Self {
        let k = s.len();
        let aux = aux_cost_matrix(s);
        let mut data = Vec::with_capacity(k * k);
        for (y, row) in aux.iter().enumerate() {
            data.extend(row.iter().map(|v| (v - row[y]) / k as f64));
        }
        CostMatrix { k, data }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, y: usize, k: usize) -> f64 {
        self.data[y * self.k + k]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.k..(y + 1) * self.k]
    }

    /// Membership in the admissible class, up to rounding.
    pub fn check(&self) -> Result<()> {
        for y in 0..self.k {
            let row = self.row(y);
            if row[y].abs() > COST_TOL {
                return Err(Error::Domain(format!("cost matrix diagonal entry {y} is {}", row[y])));
            }
            if row.iter().any(|v| *v < -COST_TOL || !v.is_finite()) {
                return Err(Error::Domain(format!("cost matrix row {y} has a negative entry")));
            }
            let l1: f64 = row.iter().map(|v| v.abs()).sum();
            if l1 > 1.0 + COST_TOL {
                return Err(Error::Domain(format!("cost matrix row {y} has l1 norm {l1}")));
            }
        }
        Ok(())
    }
}

/// u(k) = (1 − γ)/K + γ 1[k = y].
pub fn wlc_baseline(gamma: f64, y: usize, k: usize) -> Result<ProbVector> {
    if !(0.0..=1.0).contains(&gamma) {
        return invalid(format!("edge must lie in [0, 1], got {gamma}"));
    }
    if y >= k {
        return invalid(format!("label {y} out of range for K = {k}"));
    }
    let mut u = vec![(1.0 - gamma) / k as f64; k];
    u[y] += gamma;
    ProbVector::new(u)
}

/// Running sums behind the empirical edge Σ Ĉ(y, l) / Σ Ĉ(y, y).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeLedger {
    pub numerator: f64,
    pub denominator: f64,
    pub rounds: usize,
}

impl EdgeLedger {
    pub fn record(&mut self, aux_row: &[f64], y: usize, predicted: usize) {
        self.numerator += aux_row[predicted];
        self.denominator += aux_row[y];
        self.rounds += 1;
    }

    pub fn edge(&self) -> Result<f64> {
        if self.rounds == 0 {
            return invalid("empirical edge of an empty ledger");
        }
        if self.denominator == 0.0 {
            return Err(Error::Domain(
                "degenerate edge: every round had sigma(s)_y = 1".into(),
            ));
        }
        Ok(self.numerator / self.denominator)
    }
}

/// A cost-sensitive online weak learner. `predict` must not change state.
///
/// `oracle` carries the true label for test doubles that cheat; honest
/// learners ignore it and the booster passes it only to learners whose
/// [`WeakLearner::uses_oracle`] is true.
pub trait WeakLearner: Send {
    fn predict(&self, x: &[f64], cost: &CostMatrix, oracle: Option<usize>, rng: &mut dyn RngCore) -> usize;

    fn update(&mut self, x: &[f64], cost: &CostMatrix, y: usize);

    fn uses_oracle(&self) -> bool {
        false
    }
}

/// Test double that draws its vote from u_{γ, y}; needs the true label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheatingWeakLearner {
    pub gamma: f64,
    pub classes: usize,
}

impl CheatingWeakLearner {
    pub fn new(gamma: f64, classes: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) || classes < 2 {
            return invalid("cheating weak learner needs gamma in [0, 1] and K >= 2");
        }
        Ok(CheatingWeakLearner { gamma, classes })
    }
}

impl WeakLearner for CheatingWeakLearner {
    fn predict(&self, _x: &[f64], _cost: &CostMatrix, oracle: Option<usize>, rng: &mut dyn RngCore) -> usize {
        let y = oracle.expect("cheating weak learner needs the label oracle");
        let k = self.classes;
        let u: f64 = rng.random();
        if u < self.gamma {
            return y;
        }
        // uniform over all K classes with the remaining mass
        rng.random_range(0..k)
    }

    fn update(&mut self, _x: &[f64], _cost: &CostMatrix, _y: usize) {}

    fn uses_oracle(&self) -> bool {
        true
    }
}

/// One-vs-all linear cost regression: predicts argmin_k ⟨w_k, x⟩ and takes a
/// gradient step on the squared error of every class's predicted cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeakLearner {
    w: Vec<Vec<f64>>,
    eta: f64,
}

impl LinearWeakLearner {
    pub fn new(classes: usize, features: usize, eta: f64) -> Result<Self> {
        if classes < 2 || features == 0 || !(eta > 0.0) {
            return invalid("linear weak learner needs K >= 2, d >= 1, eta > 0");
        }
        Ok(LinearWeakLearner {
            w: vec![vec![0.0; features]; classes],
            eta,
        })
    }

    fn predicted_costs(&self, x: &[f64]) -> Vec<f64> {
        self.w.iter().map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }
}

impl WeakLearner for LinearWeakLearner {
    fn predict(&self, x: &[f64], _cost: &CostMatrix, _oracle: Option<usize>, _rng: &mut dyn RngCore) -> usize {
        let c = self.predicted_costs(x);
        // argmin with ties to the lowest index
        let mut best = 0;
        for (k, v) in c.iter().enumerate() {
            if *v < c[best] {
                best = k;
            }
        }
        best
    }

    fn update(&mut self, x: &[f64], cost: &CostMatrix, y: usize) {
        let pred = self.predicted_costs(x);
        let target = cost.row(y);
        for (k, w) in self.w.iter_mut().enumerate() {
            let err = pred[k] - target[k];
            for (wj, xj) in w.iter_mut().zip(x) {
                *wj -= self.eta * err * xj;
            }
        }
    }
}

/// Hedge with learning rate 1 over 0/1 mistake losses.
#[derive(Debug, Clone, PartialEq)]
pub struct Hedge {
    log_v: Vec<f64>,
}

impl Hedge {
    pub fn new(experts: usize) -> Self {
        Hedge {
            log_v: vec![0.0; experts],
        }
    }

    pub fn distribution(&self) -> Vec<f64> {
        let max = self.log_v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_v.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    /// v^i ← v^i exp(−1[expert i erred]).
    pub fn update(&mut self, mistakes: &[bool]) {
        for (v, m) in self.log_v.iter_mut().zip(mistakes) {
            if *m {
                *v -= 1.0;
            }
        }
    }
}

/// Per-round record of the booster.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostRound {
    pub chosen: usize,
    pub prediction: usize,
    pub label: usize,
    pub mistake: bool,
    pub expert_predictions: Vec<usize>,
    pub weak_predictions: Vec<usize>,
    /// ‖s^i‖_∞ for i = 1..N.
    pub score_norms: Vec<f64>,
    pub cost_matrices: Vec<CostMatrix>,
}

pub struct Booster {
    k: usize,
    weak: Vec<Box<dyn WeakLearner>>,
    logistic: Vec<AggregatingRegressor>,
    hedge: Hedge,
    edges: Vec<EdgeLedger>,
    expert_mistakes: Vec<usize>,
    hedge_rng: ChaCha8Rng,
    weak_rngs: Vec<ChaCha8Rng>,
}

impl Booster {
    /// `n` is the planned horizon; it fixes μ = 1/n in every logistic instance.
    pub fn new(k: usize, n: usize, weak: Vec<Box<dyn WeakLearner>>, seed: u64) -> Result<Self> {
        if weak.is_empty() {
            return invalid("booster needs at least one weak learner");
        }
        if n < 2 {
            return invalid("booster horizon must be at least 2");
        }
        let mu = SmoothingParam::new(1.0 / n as f64)?;
        // ‖x̃‖_∞ = max(1, ‖s‖_∞) ≤ log(K/μ)
        let r = (k as f64 / mu.value()).ln().max(1.0);
        let cfg = RegressorConfig {
            l: 1.0,
            r,
            mu,
            sampler: SamplerConfig::grid(ALPHA_GRID_POINTS),
        };
        let logistic = (0..weak.len())
            .map(|_| AggregatingRegressor::new(Constraint::boosting(k)?, cfg.clone()))
            .collect::<Result<Vec<_>>>()?;
        let m = weak.len();
        let weak_seed = derive_seed(seed, WEAK_STREAM);
        Ok(Booster {
            k,
            weak,
            logistic,
            hedge: Hedge::new(m),
            edges: vec![EdgeLedger::default(); m],
            expert_mistakes: vec![0; m],
            hedge_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, HEDGE_STREAM)),
            weak_rngs: (0..m as u64).map(|i| chain_rng(weak_seed, i)).collect(),
        })
    }

    pub fn learners(&self) -> usize {
        self.weak.len()
    }

    /// Current Hedge distribution over the N partial ensembles.
    pub fn hedge_distribution(&self) -> Vec<f64> {
        self.hedge.distribution()
    }

    pub fn expert_mistakes(&self) -> &[usize] {
        &self.expert_mistakes
    }

    pub fn edges(&self) -> &[EdgeLedger] {
        &self.edges
    }

    pub fn alpha_posterior_mean(&self, i: usize) -> Option<f64> {
        let reg = &self.logistic[i];
        let losses = reg.grid_cumulative_losses()?;
        let pts = reg.grid_points()?;
        let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = losses.iter().map(|l| (min - l).exp()).collect();
        let s: f64 = w.iter().sum();
        Some(pts.iter().zip(&w).map(|(p, wi)| p.get(0, 0) * wi).sum::<f64>() / s)
    }

    /// One full round: build the N partial ensembles on x, predict, then
    /// learn from the true label.
    pub fn round(&mut self, x: &[f64], label: usize) -> Result<BoostRound> {
        let k = self.k;
        if label >= k {
            return invalid(format!("label {label} out of range for K = {k}"));
        }
        let m = self.weak.len();
        let mut s = Logits::zeros(k);
        let mut features = Vec::with_capacity(m);
        let mut costs = Vec::with_capacity(m);
        let mut aux_rows = Vec::with_capacity(m);
        let mut weak_predictions = Vec::with_capacity(m);
        let mut expert_predictions = Vec::with_capacity(m);
        let mut score_norms = Vec::with_capacity(m);
        for i in 0..m {
            let cost = CostMatrix::from_scores(&s);
            cost.check()?;
            let oracle = self.weak[i].uses_oracle().then_some(label);
            let l = self.weak[i].predict(x, &cost, oracle, &mut self.weak_rngs[i]);
            if l >= k {
                return invalid(format!("weak learner {i} predicted class {l} with K = {k}"));
            }
            let mut xt = vec![0.0; 2 * k];
            xt[l] = 1.0;
            xt[k..].copy_from_slice(s.as_slice());
            let next = self.logistic[i].predict(&xt)?;
            aux_rows.push(aux_cost_matrix(&s).swap_remove(label));
            expert_predictions.push(next.argmax());
            score_norms.push(next.inf_norm());
            weak_predictions.push(l);
            features.push(xt);
            costs.push(cost);
            s = next;
        }
        let chosen = sample_index(&self.hedge_distribution(), self.hedge_rng.random::<f64>());
        let prediction = expert_predictions[chosen];
        let y = LabelWeights::one_hot(k, label)?;
        for i in 0..m {
            self.weak[i].update(x, &costs[i], label);
            self.logistic[i].update(&features[i], &y)?;
            self.edges[i].record(&aux_rows[i], label, weak_predictions[i]);
            if expert_predictions[i] != label {
                self.expert_mistakes[i] += 1;
            }
        }
        let erred: Vec<bool> = expert_predictions.iter().map(|p| *p != label).collect();
        self.hedge.update(&erred);
        Ok(BoostRound {
            chosen,
            prediction,
            label,
            mistake: prediction != label,
            expert_predictions,
            weak_predictions,
            score_norms,
            cost_matrices: costs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::softmax;

    #[test]
    fn aux_cost_examples() {
        let c = aux_cost_matrix(&Logits::zeros(2));
        assert_eq!(c[0], vec![-0.5, 0.5]);
        for k in [2, 3, 5, 8] {
            let c = aux_cost_matrix(&Logits::zeros(k));
            for (y, row) in c.iter().enumerate() {
                assert!((-row[y] - (k as f64 - 1.0) / k as f64).abs() < 1e-15);
            }
        }
        let s = Logits::new(vec![1.0, 0.0, 0.0]).unwrap();
        let p = softmax(&s).into_vec();
        let row = &aux_cost_matrix(&s)[1];
        assert_eq!(row, &vec![p[0], p[1] - 1.0, p[2]]);
        // frozen: e/(e+2), 1/(e+2) − 1, 1/(e+2)
        assert!((row[0] - 0.5761168847658291).abs() < 1e-15);
        assert!((row[1] + 0.7880584423829146).abs() < 1e-15);
    }

    #[test]
    fn cost_matrix_examples() {
        let c = CostMatrix::from_scores(&Logits::zeros(3));
        for y in 0..3 {
            for k in 0..3 {
                let e = if k == y { 0.0 } else { 1.0 / 3.0 };
                assert!((c.get(y, k) - e).abs() < 1e-15);
            }
            let l1: f64 = c.row(y).iter().sum();
            assert!((l1 - 2.0 / 3.0).abs() < 1e-15);
        }
        assert!(CostMatrix::new(vec![vec![0.0, 0.6], vec![1.1, 0.0]]).is_err());
        assert!(CostMatrix::new(vec![vec![0.1, 0.6], vec![0.5, 0.0]]).is_err());
        assert!(CostMatrix::new(vec![vec![0.0, 1.0], vec![0.5, 0.0]]).is_ok());
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(wlc_baseline(0.0, 1, 4).unwrap().as_slice(), &[0.25; 4]);
        assert_eq!(wlc_baseline(1.0, 2, 3).unwrap().as_slice(), &[0.0, 0.0, 1.0]);
        let u = wlc_baseline(0.4, 1, 4).unwrap();
        for (a, b) in u.as_slice().iter().zip([0.15, 0.55, 0.15, 0.15]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(wlc_baseline(1.5, 0, 2).is_err());
    }

    #[test]
    fn edge_examples() {
        let s = Logits::zeros(2);
        let aux = aux_cost_matrix(&s);
        let mut right = EdgeLedger::default();
        let mut wrong = EdgeLedger::default();
        for t in 0..10 {
            let y = t % 2;
            right.record(&aux[y], y, y);
            wrong.record(&aux[y], y, 1 - y);
        }
        assert_eq!(right.edge().unwrap(), 1.0);
        assert_eq!(wrong.edge().unwrap(), -1.0);
        assert!(EdgeLedger::default().edge().is_err());
        let degenerate = EdgeLedger {
            numerator: 0.0,
            denominator: 0.0,
            rounds: 3,
        };
        assert!(matches!(degenerate.edge(), Err(Error::Domain(_))));
    }

    #[test]
    fn cheating_learner_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = CostMatrix::from_scores(&Logits::zeros(3));
        let perfect = CheatingWeakLearner::new(1.0, 3).unwrap();
        assert!((0..100).all(|_| perfect.predict(&[], &c, Some(2), &mut rng) == 2));
        let blind = CheatingWeakLearner::new(0.0, 3).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[blind.predict(&[], &c, Some(0), &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.015);
        }
    }

    #[test]
    fn perfect_oracle_drives_error_to_zero() {
        let weak: Vec<Box<dyn WeakLearner>> = vec![Box::new(CheatingWeakLearner::new(1.0, 3).unwrap())];
        let n = 400;
        let mut b = Booster::new(3, n, weak, 5).unwrap();
        let mut late_mistakes = 0;
        for t in 0..n {
            let r = b.round(&[1.0], 1).unwrap();
            if t >= n / 2 {
                late_mistakes += r.mistake as usize;
            }
        }
        assert_eq!(late_mistakes, 0);
        assert!(b.alpha_posterior_mean(0).unwrap() > 0.0);
    }

    #[test]
    fn identical_experts_keep_hedge_uniform() {
        let mut h = Hedge::new(4);
        for t in 0..50 {
            h.update(&[t % 3 == 0; 4]);
            assert!(h.distribution().iter().all(|p| (p - 0.25).abs() < 1e-15));
        }
        h.update(&[true, false, false, false]);
        let p = h.distribution();
        assert!((p[0] / p[1] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn scores_bounded_and_costs_admissible() {
        let n = 300;
        let k = 4;
        let weak: Vec<Box<dyn WeakLearner>> = (0..5)
            .map(|_| Box::new(CheatingWeakLearner::new(0.3, k).unwrap()) as Box<dyn WeakLearner>)
            .collect();
        let mut b = Booster::new(k, n, weak, 9).unwrap();
        let cap = ((n * k) as f64).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..n {
            let r = b.round(&[1.0], rng.random_range(0..k)).unwrap();
            assert!(r.score_norms.iter().all(|v| *v <= cap + 1e-12));
            assert!(r.cost_matrices.iter().all(|c| c.check().is_ok()));
        }
        for e in b.edges() {
            let g = e.edge().unwrap();
            assert!((-1.0..=1.0).contains(&g));
        }
    }

    #[test]
    fn linear_weak_learner_learns_separable_costs() {
        let mut wl = LinearWeakLearner::new(2, 2, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = CostMatrix::from_scores(&Logits::zeros(2));
        let mut late_correct = 0;
        for t in 0..2000 {
            let y = rng.random_range(0..2);
            let x = if y == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            if t >= 1000 && wl.predict(&x, &c, None, &mut rng) == y {
                late_correct += 1;
            }
            wl.update(&x, &c, y);
        }
        assert_eq!(late_correct, 1000);
    }

    #[test]
    fn rejects_bad_label() {
        let weak: Vec<Box<dyn WeakLearner>> = vec![Box::new(CheatingWeakLearner::new(0.5, 3).unwrap())];
        let mut b = Booster::new(3, 10, weak, 0).unwrap();
        assert!(b.round(&[0.0], 3).is_err());
    }
}
