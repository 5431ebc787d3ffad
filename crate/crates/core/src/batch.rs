//! High-probability batch conversion: train M online learners on disjoint
//! chunks, freeze each at a random stopping time, smooth them, and aggregate
//! with EWOO on held-out data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::learner::OnlineLearner;
use crate::losses::{ProbVector, SmoothingParam};
use crate::regressor::derive_seed;
use crate::stream::LabeledExample;

/// Simplex grids are used up to this many experts.
pub const EWOO_QUADRATURE_MAX_M: usize = 3;
pub const EWOO_RESOLUTION: f64 = 0.01;
pub const EWOO_PARTICLES: usize = 100_000;

/// An online learner's state after τ − 1 updates, used as a fixed predictor.
#[derive(Debug, Clone)]
pub struct FrozenPredictor<L> {
    learner: L,
    tau: usize,
}

impl<L: OnlineLearner> FrozenPredictor<L> {
    /// The stopping time τ ∈ [1, chunk length].
    pub fn stopping_time(&self) -> usize {
        self.tau
    }

    pub fn learner(&self) -> &L {
        &self.learner
    }

    pub fn probs(&self, x: &[f64]) -> Result<ProbVector> {
        self.learner.predict_proba(x)
    }
}

/// Runs a fresh learner over `chunk` and freezes it after τ − 1 updates, τ
/// uniform on 1..=len.
pub fn online_to_batch<L, F>(chunk: &[LabeledExample], factory: F, seed: u64) -> Result<FrozenPredictor<L>>
where
    L: OnlineLearner,
    F: Fn() -> Result<L>,
{
    if chunk.is_empty() {
        return invalid("online-to-batch needs a nonempty chunk");
    }
    let tau = ChaCha8Rng::seed_from_u64(seed).random_range(1..=chunk.len());
    freeze_at(chunk, factory()?, tau)
}

/// The predictor obtained by stopping at a given τ.
pub fn freeze_at<L: OnlineLearner>(chunk: &[LabeledExample], mut learner: L, tau: usize) -> Result<FrozenPredictor<L>> {
    if tau == 0 || tau > chunk.len() {
        return invalid(format!("stopping time {tau} outside 1..={}", chunk.len()));
    }
    for e in &chunk[..tau - 1] {
        let k = learner.predict(&e.x)?.len();
        learner.update(&e.x, &e.one_hot(k)?)?;
    }
    Ok(FrozenPredictor { learner, tau })
}

/// δ, M = ⌈log(2/δ)⌉ and the smoothing μ = R(n/M) / (2n/M).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionConfig {
    pub delta: f64,
    pub n: usize,
    pub m: usize,
    pub mu: SmoothingParam,
}

impl ConversionConfig {
    /// `regret` is the online regret bound as a function of the horizon. μ
    /// is capped at 1/2, the largest admissible smoothing.
    pub fn new(delta: f64, n: usize, regret: impl Fn(f64) -> f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return invalid(format!("delta must lie in (0, 1), got {delta}"));
        }
        let m = ((2.0 / delta).ln().ceil() as usize).max(1);
        if n < 2 * m {
            return invalid(format!("need n >= 2M = {}, got n = {n}", 2 * m));
        }
        let per = n as f64 / m as f64;
        let mu = regret(per) / (2.0 * per);
        if !(mu > 0.0) || !mu.is_finite() {
            return invalid(format!("regret bound gave smoothing {mu}"));
        }
        Ok(ConversionConfig {
            delta,
            n,
            m,
            mu: SmoothingParam::new(mu.min(0.5))?,
        })
    }

    /// Index ranges of the M training chunks (each n/(2M) long) and of the
    /// aggregation phase, which takes everything else.
    pub fn split(&self) -> (Vec<std::ops::Range<usize>>, std::ops::Range<usize>) {
        let size = self.n / (2 * self.m);
        let chunks = (0..self.m).map(|i| i * size..(i + 1) * size).collect();
        (chunks, self.m * size..self.n)
    }
}

/// A smoothed predictor μ/K + (1 − μ) h(x).
fn smooth_probs(p: &[f64], mu: f64) -> Vec<f64> {
    let k = p.len() as f64;
    p.iter().map(|v| (1.0 - mu) * v + mu / k).collect()
}

/// Average of the EWOO iterates over Δ_M for losses −log⟨q, a_t⟩, where
/// `outcomes[t]` holds the M positive values a_t. Deterministic simplex
/// quadrature for M ≤ 3, seeded Dirichlet(1) particles otherwise.
pub fn ewoo_simplex(m: usize, outcomes: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    if m == 0 {
        return invalid("EWOO needs M >= 1");
    }
    if outcomes.iter().any(|a| a.len() != m || a.iter().any(|v| !(*v > 0.0) || !v.is_finite())) {
        return invalid("EWOO outcomes must be positive vectors of length M");
    }
    if m == 1 || outcomes.is_empty() {
        return Ok(vec![1.0 / m as f64; m]);
    }
    let points = if m <= EWOO_QUADRATURE_MAX_M {
        simplex_grid(m, (1.0 / EWOO_RESOLUTION).round() as usize)
    } else {
        // Dirichlet(1, ..., 1) as normalized Exp(1) draws
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..EWOO_PARTICLES)
            .map(|_| {
                let e: Vec<f64> = (0..m).map(|_| rng.sample(Exp1)).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            })
            .collect()
    };
    let mut log_w = vec![0.0; points.len()];
    let mut avg = vec![0.0; m];
    for a in outcomes {
        let q = weighted_mean(&points, &log_w, m);
        avg.iter_mut().zip(&q).for_each(|(s, v)| *s += v);
        log_w.par_iter_mut().zip(&points).for_each(|(lw, p)| {
            *lw += p.iter().zip(a).map(|(pi, ai)| pi * ai).sum::<f64>().ln();
        });
    }
    let t = outcomes.len() as f64;
    Ok(avg.into_iter().map(|v| v / t).collect())
}

fn weighted_mean(points: &[Vec<f64>], log_w: &[f64], m: usize) -> Vec<f64> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut mean = vec![0.0; m];
    let mut total = 0.0;
    for (p, lw) in points.iter().zip(log_w) {
        let w = (lw - max).exp();
        total += w;
        mean.iter_mut().zip(p).for_each(|(s, v)| *s += w * v);
    }
    mean.into_iter().map(|v| v / total).collect()
}

/// All points of Δ_m with coordinates in {0, 1/res, ..., 1}.
fn simplex_grid(m: usize, res: usize) -> Vec<Vec<f64>> {
    fn rec(m: usize, left: usize, res: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == m - 1 {
            cur.push(left);
            out.push(cur.iter().map(|c| *c as f64 / res as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(m, left - c, res, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, res, res, &mut Vec::with_capacity(m), &mut out);
    out
}

/// The batch predictor g = E_{i∼q̄}[smooth_μ(h_i)].
#[derive(Debug, Clone)]
pub struct ConfidentPredictor<L> {
    pub members: Vec<FrozenPredictor<L>>,
    pub mixture: Vec<f64>,
    pub mu: SmoothingParam,
}

impl<L: OnlineLearner> ConfidentPredictor<L> {
    pub fn probs(&self, x: &[f64]) -> Result<ProbVector> {
        let mut out: Option<Vec<f64>> = None;
        for (h, q) in self.members.iter().zip(&self.mixture) {
            let p = smooth_probs(h.probs(x)?.as_slice(), self.mu.value());
            let acc = out.get_or_insert_with(|| vec![0.0; p.len()]);
            acc.iter_mut().zip(&p).for_each(|(a, v)| *a += q * v);
        }
        let mut p = out.expect("at least one member");
        // renormalize away rounding drift in the mixture weights
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        ProbVector::new(p)
    }
}

/// Chunk training (in parallel) followed by EWOO aggregation on the rest.
pub fn boost_confidence<L, F>(
    samples: &[LabeledExample],
    cfg: &ConversionConfig,
    factory: F,
    seed: u64,
) -> Result<ConfidentPredictor<L>>
where
    L: OnlineLearner + Send,
    F: Fn() -> Result<L> + Sync,
{
    if samples.len() != cfg.n {
        return invalid(format!("config is for n = {} but got {} samples", cfg.n, samples.len()));
    }
    let (chunks, rest) = cfg.split();
    assert_disjoint(&chunks, &rest);
    let members = chunks
        .par_iter()
        .enumerate()
        .map(|(i, r)| online_to_batch(&samples[r.clone()], &factory, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mu = cfg.mu.value();
    let outcomes = samples[rest]
        .iter()
        .map(|e| {
            members
                .iter()
                .map(|h| Ok(smooth_probs(h.probs(&e.x)?.as_slice(), mu)[e.y]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mixture = ewoo_simplex(cfg.m, &outcomes, derive_seed(seed, u64::MAX))?;
    Ok(ConfidentPredictor {
        members,
        mixture,
        mu: cfg.mu,
    })
}

fn assert_disjoint(chunks: &[std::ops::Range<usize>], rest: &std::ops::Range<usize>) {
    let mut all: Vec<&std::ops::Range<usize>> = chunks.iter().chain(std::iter::once(rest)).collect();
    all.sort_by_key(|r| r.start);
    for w in all.windows(2) {
        assert!(w[0].end <= w[1].start, "training and aggregation data overlap");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LabelWeights, Logits};

    /// Predicts the running label frequencies (add-one smoothed).
    #[derive(Debug, Clone)]
    struct Counter {
        counts: Vec<f64>,
    }

    impl OnlineLearner for Counter {
        fn predict(&self, _x: &[f64]) -> Result<Logits> {
            let s: f64 = self.counts.iter().sum();
            Logits::new(self.counts.iter().map(|c| (c / s).ln()).collect())
        }

        fn update(&mut self, _x: &[f64], y: &LabelWeights) -> Result<()> {
            self.counts.iter_mut().zip(y.as_slice()).for_each(|(c, v)| *c += v);
            Ok(())
        }
    }

    fn counter() -> Result<Counter> {
        Ok(Counter { counts: vec![1.0, 1.0] })
    }

    fn ex(y: usize) -> LabeledExample {
        LabeledExample { x: vec![0.0], y }
    }

    #[test]
    fn length_one_chunk_returns_prior() {
        let h = online_to_batch(&[ex(1)], counter, 3).unwrap();
        assert_eq!(h.stopping_time(), 1);
        assert_eq!(h.probs(&[0.0]).unwrap().as_slice(), &[0.5, 0.5]);
        assert!(online_to_batch::<Counter, _>(&[], counter, 3).is_err());
    }

    #[test]
    fn stopping_time_is_seeded() {
        let chunk: Vec<_> = (0..50).map(|t| ex(t % 2)).collect();
        let a = online_to_batch(&chunk, counter, 17).unwrap().stopping_time();
        let b = online_to_batch(&chunk, counter, 17).unwrap().stopping_time();
        assert_eq!(a, b);
        let taus: std::collections::BTreeSet<_> = (0..40)
            .map(|s| online_to_batch(&chunk, counter, s).unwrap().stopping_time())
            .collect();
        assert!(taus.len() > 10);
    }

    #[test]
    fn config_examples() {
        let c = ConversionConfig::new(0.1, 1000, |n| 10.0 * n.ln()).unwrap();
        assert_eq!(c.m, 3);
        let per = 1000.0 / 3.0;
        assert!((c.mu.value() - 10.0 * f64::ln(per) / (2.0 * per)).abs() < 1e-15);
        let (chunks, rest) = c.split();
        assert_eq!(chunks, vec![0..166, 166..332, 332..498]);
        assert_eq!(rest, 498..1000);
        assert_eq!(ConversionConfig::new(0.9, 10, |_| 1.0).unwrap().m, 1);
        assert_eq!(ConversionConfig::new(0.1, 20, |n| n).unwrap().mu.value(), 0.5);
        assert!(ConversionConfig::new(0.1, 5, |_| 1.0).is_err());
    }

    #[test]
    fn ewoo_trivial_cases() {
        assert_eq!(ewoo_simplex(1, &[vec![0.3], vec![0.9]], 0).unwrap(), vec![1.0]);
        let sym = vec![vec![0.5, 0.5]; 50];
        let q = ewoo_simplex(2, &sym, 0).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-12);
        let sym3 = vec![vec![0.2, 0.2, 0.2]; 20];
        let q = ewoo_simplex(3, &sym3, 0).unwrap();
        assert!(q.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn ewoo_favors_better_expert() {
        let a = vec![vec![0.9, 0.5]; 200];
        let q = ewoo_simplex(2, &a, 0).unwrap();
        assert!(q[0] > 0.9, "q = {q:?}");
        let a4 = vec![vec![0.9, 0.5, 0.5, 0.5]; 200];
        let q = ewoo_simplex(4, &a4, 1).unwrap();
        assert!(q[0] > 0.8, "q = {q:?}");
    }

    #[test]
    fn simplex_grid_sizes() {
        assert_eq!(simplex_grid(2, 100).len(), 101);
        assert_eq!(simplex_grid(3, 100).len(), 5151);
        assert!(simplex_grid(3, 10).iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_member_gives_smoothed_predictor() {
        let data: Vec<_> = (0..10).map(|t| ex((t % 3 == 0) as usize)).collect();
        let cfg = ConversionConfig::new(0.9, 10, |_| 1.0).unwrap();
        let g = boost_confidence(&data, &cfg, counter, 4).unwrap();
        assert_eq!(g.mixture, vec![1.0]);
        let h = g.members[0].probs(&[0.0]).unwrap();
        let expected = smooth_probs(h.as_slice(), cfg.mu.value());
        let got = g.probs(&[0.0]).unwrap();
        for (a, b) in got.as_slice().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_members_give_common_prediction() {
        // a learner that ignores its data yields identical members at any τ
        #[derive(Debug, Clone)]
        struct Fixed;
        impl OnlineLearner for Fixed {
            fn predict(&self, _x: &[f64]) -> Result<Logits> {
                Logits::new(vec![0.7f64.ln(), 0.3f64.ln()])
            }
            fn update(&mut self, _x: &[f64], _y: &LabelWeights) -> Result<()> {
                Ok(())
            }
        }
        let data: Vec<_> = (0..100).map(|t| ex(t % 2)).collect();
        let cfg = ConversionConfig::new(0.05, 100, |_| 2.0).unwrap();
        assert_eq!(cfg.m, 4);
        let g = boost_confidence(&data, &cfg, || Ok(Fixed), 8).unwrap();
        let mu = cfg.mu.value();
        let p = g.probs(&[0.0]).unwrap();
        assert!((p.as_slice()[0] - ((1.0 - mu) * 0.7 + mu / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn mixture_floor_holds() {
        let data: Vec<_> = (0..400).map(|t| ex((t % 7 == 0) as usize)).collect();
        let cfg = ConversionConfig::new(0.1, 400, |n| 2.0 * n.ln()).unwrap();
        let g = boost_confidence(&data, &cfg, counter, 1).unwrap();
        let floor = cfg.mu.value() / 2.0;
        assert!(g.probs(&[0.0]).unwrap().as_slice().iter().all(|v| *v >= floor * (1.0 - 1e-12)));
    }
}
