//! The five experiment kinds. Each run is a function of (config, seed)
//! only and returns its per-round ledger, one summary row and the data it
//! consumed.

use std::f64::consts::E;

use ilr_core::adversary::{margin_adversary, margin_mistake_bound, verify_shattering, RandomGuesser, SignLearner};
use ilr_core::bandit::{bandit_label_scale, importance_weighted_label, obama_mu_settings, Obama};
use ilr_core::baselines::{default_ogd_scale, OgdLearner, OnsLearner, OnsParams};
use ilr_core::batch::{boost_confidence, ConversionConfig};
use ilr_core::boosting::{Booster, CheatingWeakLearner, LinearWeakLearner, WeakLearner};
use ilr_core::losses::{log_sum_exp, LabelWeights, SmoothingParam};
use ilr_core::regressor::{derive_seed, theoretical_regret_bound, AggregatingRegressor, RegressorConfig};
use ilr_core::sampler::{checked_grid, SamplerConfig};
use ilr_core::stream::{ExampleStream, LabeledExample};
use ilr_core::weights::{Constraint, WeightMatrix};
use ilr_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind, SamplerKind, StreamKind, WeakKind};
use crate::output::Table;
use crate::row;
use crate::streams::{input_dim, make_stream, DiscreteDistribution};

const SAMPLER_TAG: u64 = 0x534d_504c;
const BOOST_TAG: u64 = 0x424f_4f53;
const DIST_TAG: u64 = 0x4449_5354;
const DRAW_TAG: u64 = 0x4452_4157;
const CONFIDENCE_TAG: u64 = 0x434f_4e46;
const LEARNER_TAG: u64 = 0x4c45_524e;
const STREAM_TAG: u64 = 0x5354_524d;

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedOutput {
    pub seed: u64,
    pub ledger: Table,
    pub summary: Vec<String>,
    pub stream: ExampleStream,
}

pub fn ledger_header(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::Regret => &[
            "seed", "t", "y", "learner_loss", "comparator_loss", "ogd_loss", "ons_loss", "max_abs_logit", "mistake",
        ],
        ExperimentKind::Bandit => &[
            "seed", "t", "y", "sampled", "mistake", "prob_sampled", "min_prob", "feedback_l1", "unbiasedness_error",
            "resmoothed", "comparator_loss",
        ],
        ExperimentKind::Boosting => &["seed", "t", "y", "prediction", "mistake", "chosen", "max_score_norm"],
        ExperimentKind::Batch => &["seed", "point", "mass", "min_prob", "excess", "weighted_excess"],
        ExperimentKind::Lowerbound => &["seed", "t", "y", "prediction", "mistake"],
    }
}

pub fn summary_header(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::Regret => &[
            "seed", "rounds", "learner_loss", "comparator_loss", "regret", "ogd_loss", "ogd_regret", "ons_loss",
            "ons_regret", "mistakes", "max_abs_logit", "logit_cap", "grid_points", "finite_class_bound", "regret_bound",
            "regret_bound_with_grid_slack",
        ],
        ExperimentKind::Bandit => &[
            "seed", "rounds", "mistakes", "comparator_loss", "max_feedback_l1", "label_scale", "min_prob", "prob_floor",
            "max_unbiasedness_error", "resmoothed", "explicit_bound", "shape_target",
        ],
        ExperimentKind::Boosting => &[
            "seed", "rounds", "mistakes", "error_rate", "min_expert_mistakes", "hedge_bound", "mean_edge",
            "boosting_shape",
        ],
        ExperimentKind::Batch => &[
            "seed", "n", "M", "mu", "excess_risk", "min_prob", "prob_floor", "excess_risk_shape",
        ],
        ExperimentKind::Lowerbound => &["seed", "rounds", "mistakes", "mistake_bound", "margin", "shattered"],
    }
}

/// Hyperparameters that are derived from the config rather than given.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub r: f64,
    pub l: f64,
    pub mu: f64,
    pub ogd_scale: f64,
    pub dim: usize,
}

impl Resolved {
    pub fn to_json(&self, cfg: &ExperimentConfig) -> Value {
        let mut v = json!({
            "R": self.r,
            "L": self.l,
            "mu": self.mu,
            "input_dim": self.dim,
        });
        if cfg.experiment == ExperimentKind::Regret {
            v["ogd_scale"] = json!(self.ogd_scale);
            v["ons"] = json!(ons_params(cfg.b, self.r));
        }
        if cfg.experiment == ExperimentKind::Batch {
            if let Ok(conv) = conversion(cfg, self) {
                v["M"] = json!(conv.m);
                v["chunk_len"] = json!(cfg.n / (2 * conv.m));
            }
        }
        v
    }
}

fn ons_params(b: f64, r: f64) -> Value {
    let p = OnsParams::standard(b, r);
    json!({ "gamma": p.gamma, "eps": p.eps, "projection_iters": p.projection_iters })
}

pub fn resolve(cfg: &ExperimentConfig) -> Result<Resolved> {
    let dim = input_dim(cfg);
    let r = cfg.feature_bound();
    let (l, mu) = match cfg.experiment {
        ExperimentKind::Bandit => {
            let mu = match cfg.mu {
                Some(mu) => mu,
                None => obama_mu_settings(dim, cfg.k, cfg.b, r, cfg.n)?.best().0,
            };
            (bandit_label_scale(cfg.k, cfg.b, r, SmoothingParam::new(mu)?), mu)
        }
        ExperimentKind::Batch => {
            let base = Resolved {
                r,
                l: 1.0,
                mu: 0.0,
                ogd_scale: 0.0,
                dim,
            };
            (1.0, conversion(cfg, &base)?.mu.value())
        }
        _ => (cfg.l.unwrap_or(1.0), cfg.mu.unwrap_or(1.0 / cfg.n as f64)),
    };
    Ok(Resolved {
        r,
        l,
        mu,
        ogd_scale: cfg.eta.unwrap_or_else(|| default_ogd_scale(cfg.b, r)),
        dim,
    })
}

/// Binary problems use the single-row parameterization, others the full
/// K × d matrix with row-norm bound B.
pub fn constraint(cfg: &ExperimentConfig, dim: usize) -> Result<Constraint> {
    if cfg.k == 2 {
        Constraint::binary(dim, cfg.b)
    } else {
        Constraint::free(cfg.k, dim, cfg.b)
    }
}

fn sampler_config(cfg: &ExperimentConfig, seed: u64) -> SamplerConfig {
    match cfg.sampler {
        SamplerKind::Grid => SamplerConfig::grid(cfg.grid),
        SamplerKind::Langevin => SamplerConfig::langevin(cfg.m, cfg.steps, derive_seed(seed, SAMPLER_TAG)),
    }
}

fn one_hot_loss(z: &[f64], y: usize) -> f64 {
    log_sum_exp(z) - z[y]
}

/// Per-round losses of the grid point with the smallest total loss on the
/// stream, plus the grid size.
pub fn best_grid_losses(c: &Constraint, per_dim: usize, stream: &ExampleStream) -> Result<(Vec<f64>, usize)> {
    let grid: Vec<WeightMatrix> = checked_grid(c, per_dim)?.iter().map(|t| c.embed(t)).collect();
    let k = c.classes();
    let total_loss = |w: &WeightMatrix| {
        let (w, mut z) = (w.as_slice(), vec![0.0; k]);
        let mut total = 0.0;
        for e in &stream.examples {
            for (zk, row) in z.iter_mut().zip(w.chunks_exact(e.x.len())) {
                *zk = row.iter().zip(&e.x).map(|(a, b)| a * b).sum();
            }
            total += one_hot_loss(&z, e.y);
        }
        total
    };
    let totals: Vec<f64> = grid.par_iter().with_min_len(256).map(total_loss).collect();
    let best = totals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid is nonempty");
    let w = &grid[best];
    let losses = stream
        .examples
        .iter()
        .map(|e| one_hot_loss(&w.mul_vec(&e.x), e.y))
        .collect();
    Ok((losses, grid.len()))
}

pub fn run_seed(cfg: &ExperimentConfig, res: &Resolved, seed: u64) -> Result<SeedOutput> {
    match cfg.experiment {
        ExperimentKind::Regret => regret(cfg, res, seed),
        ExperimentKind::Bandit => bandit(cfg, res, seed),
        ExperimentKind::Boosting => boosting(cfg, res, seed),
        ExperimentKind::Batch => batch(cfg, res, seed),
        ExperimentKind::Lowerbound => lowerbound(cfg, seed),
    }
}

fn regret(cfg: &ExperimentConfig, res: &Resolved, seed: u64) -> Result<SeedOutput> {
    let c = constraint(cfg, res.dim)?;
    let stream = make_stream(cfg, &c, seed)?;
    let (best, grid_points) = best_grid_losses(&c, cfg.grid, &stream)?;
    let mu = SmoothingParam::new(res.mu)?;
    let mut alg = AggregatingRegressor::new(
        c.clone(),
        RegressorConfig {
            l: res.l,
            r: res.r,
            mu,
            sampler: sampler_config(cfg, seed),
        },
    )?;
    let mut ogd = OgdLearner::new(c.clone(), res.ogd_scale)?;
    let mut ons = OnsLearner::new(c.clone(), OnsParams::standard(cfg.b, res.r))?;

    let mut ledger = Table::new(ledger_header(cfg.experiment));
    let (mut alg_l, mut ogd_l, mut ons_l, mut zmax, mut mistakes) = (vec![], vec![], vec![], vec![], vec![]);
    for (t, e) in stream.examples.iter().enumerate() {
        let y = LabelWeights::one_hot(cfg.k, e.y)?;
        let z = alg.predict(&e.x)?;
        alg.update(&e.x, &y)?;
        let zo = ogd.step(&e.x, &y)?;
        let zn = ons.step(&e.x, &y)?;
        alg_l.push(one_hot_loss(z.as_slice(), e.y));
        ogd_l.push(one_hot_loss(zo.as_slice(), e.y));
        ons_l.push(one_hot_loss(zn.as_slice(), e.y));
        zmax.push(z.inf_norm());
        mistakes.push(z.argmax() != e.y);
        ledger.push(row![seed, t + 1, e.y, alg_l[t], best[t], ogd_l[t], ons_l[t], zmax[t], mistakes[t]]);
    }
    let n = stream.len() as f64;
    let total = |v: &[f64]| v.iter().sum::<f64>();
    let (la, lc, lo, ln) = (total(&alg_l), total(&best), total(&ogd_l), total(&ons_l));
    let cap = if res.mu > 0.0 { (cfg.k as f64 / res.mu).ln() } else { f64::INFINITY };
    let slack = (grid_points as f64).ln();
    let bound = theoretical_regret_bound(c.free_dims() as f64, res.l, cfg.b, res.r, n, res.mu, n);
    let summary = row![
        seed,
        stream.len(),
        la,
        lc,
        la - lc,
        lo,
        lo - lc,
        ln,
        ln - lc,
        mistakes.iter().filter(|m| **m).count(),
        zmax.iter().cloned().fold(0.0, f64::max),
        cap,
        grid_points,
        res.l * slack + 2.0 + 2.0 * res.mu * n,
        bound,
        bound + slack,
    ];
    Ok(SeedOutput {
        seed,
        ledger,
        summary,
        stream,
    })
}

/// Largest coordinate deviation of E_{s∼p}[ỹ(s)] from e_y.
pub fn unbiasedness_error(p: &[f64], y: usize) -> f64 {
    let mut mean = vec![0.0; p.len()];
    for s in 0..p.len() {
        let fb = importance_weighted_label(p, s, s == y);
        mean.iter_mut().zip(&fb).for_each(|(m, v)| *m += p[s] * v);
    }
    mean.iter()
        .enumerate()
        .map(|(k, v)| (v - (k == y) as u8 as f64).abs())
        .fold(0.0, f64::max)
}

fn bandit(cfg: &ExperimentConfig, res: &Resolved, seed: u64) -> Result<SeedOutput> {
    let c = constraint(cfg, res.dim)?;
    let stream = make_stream(cfg, &c, seed)?;
    let (best, _) = best_grid_losses(&c, cfg.grid, &stream)?;
    let mut ob = Obama::new(c, res.r, SmoothingParam::new(res.mu)?, sampler_config(cfg, seed), seed)?;

    let mut ledger = Table::new(ledger_header(cfg.experiment));
    let (mut mistakes, mut fb_max, mut pmin, mut ub_max, mut resm) = (0usize, 0.0f64, 1.0f64, 0.0f64, 0usize);
    for (t, e) in stream.examples.iter().enumerate() {
        let round = ob.round(&e.x, e.y)?;
        let l1: f64 = round.feedback.iter().sum();
        let min_p = round.probs.iter().cloned().fold(1.0, f64::min);
        let ub = unbiasedness_error(&round.probs, e.y);
        mistakes += round.mistake as usize;
        fb_max = fb_max.max(l1);
        pmin = pmin.min(min_p);
        ub_max = ub_max.max(ub);
        resm += round.resmoothed as usize;
        ledger.push(row![
            seed,
            t + 1,
            e.y,
            round.sampled,
            round.mistake,
            round.probs[round.sampled],
            min_p,
            l1,
            ub,
            round.resmoothed,
            best[t],
        ]);
    }
    let (n, dk, k) = (stream.len() as f64, (res.dim * cfg.k) as f64, cfg.k as f64);
    let log_term = (cfg.b * res.r * n / dk + E).ln();
    let summary = row![
        seed,
        stream.len(),
        mistakes,
        best.iter().sum::<f64>(),
        fb_max,
        ob.label_scale(),
        pmin,
        ob.prob_floor(),
        ub_max,
        resm,
        5.0 * ob.label_scale() * dk * log_term + 2.0 * res.mu * n,
        best.iter().sum::<f64>() + 10.0 * (res.dim as f64 * k * k * log_term * n).sqrt(),
    ];
    Ok(SeedOutput {
        seed,
        ledger,
        summary,
        stream,
    })
}

fn weak_learners(cfg: &ExperimentConfig, dim: usize) -> Result<Vec<Box<dyn WeakLearner>>> {
    (0..cfg.big_n)
        .map(|_| -> Result<Box<dyn WeakLearner>> {
            Ok(match cfg.weak {
                WeakKind::Cheating => Box::new(CheatingWeakLearner::new(cfg.gamma, cfg.k)?),
                WeakKind::Linear => Box::new(LinearWeakLearner::new(cfg.k, dim, cfg.eta.unwrap_or(0.1))?),
            })
        })
        .collect()
}

/// n/(Nγ²) + 1/γ² + K S/γ with S = √(n log(N/δ)).
pub fn boosting_shape(n: f64, big_n: f64, gamma: f64, k: f64, delta: f64) -> f64 {
    let s = (n * (big_n / delta).ln().max(0.0)).sqrt();
    n / (big_n * gamma * gamma) + 1.0 / (gamma * gamma) + k * s / gamma
}

fn boosting(cfg: &ExperimentConfig, res: &Resolved, seed: u64) -> Result<SeedOutput> {
    let c = constraint(cfg, res.dim)?;
    let stream = make_stream(cfg, &c, seed)?;
    let mut booster = Booster::new(cfg.k, cfg.n.max(2), weak_learners(cfg, res.dim)?, derive_seed(seed, BOOST_TAG))?;

    let mut ledger = Table::new(ledger_header(cfg.experiment));
    let mut mistakes = 0usize;
    for (t, e) in stream.examples.iter().enumerate() {
        let r = booster.round(&e.x, e.y)?;
        mistakes += r.mistake as usize;
        let smax = r.score_norms.iter().cloned().fold(0.0, f64::max);
        ledger.push(row![seed, t + 1, e.y, r.prediction, r.mistake, r.chosen, smax]);
    }
    let n = stream.len() as f64;
    let min_m = booster.expert_mistakes().iter().copied().min().unwrap_or(0);
    let edges: Vec<f64> = booster.edges().iter().filter_map(|e| e.edge().ok()).collect();
    let mean_edge = if edges.is_empty() { f64::NAN } else { edges.iter().sum::<f64>() / edges.len() as f64 };
    let big_n = cfg.big_n as f64;
    let summary = row![
        seed,
        stream.len(),
        mistakes,
        mistakes as f64 / n,
        min_m,
        4.0 * min_m as f64 + 2.0 * (big_n / cfg.delta).ln(),
        mean_edge,
        boosting_shape(n, big_n, cfg.gamma, cfg.k as f64, cfg.delta),
    ];
    Ok(SeedOutput {
        seed,
        ledger,
        summary,
        stream,
    })
}

/// The online regret bound used to set the conversion's smoothing:
/// 5 D log(B R T / D + e) for the one-hot learner.
fn conversion(cfg: &ExperimentConfig, res: &Resolved) -> Result<ConversionConfig> {
    let dims = constraint(cfg, res.dim)?.free_dims() as f64;
    let mut conv = ConversionConfig::new(cfg.delta, cfg.n, |t| {
        theoretical_regret_bound(dims, 1.0, cfg.b, res.r, t, 0.0, 0.0)
    })?;
    if let Some(mu) = cfg.mu {
        conv.mu = SmoothingParam::new(mu)?;
    }
    Ok(conv)
}

/// The distribution a batch run draws from; shared by all seeds of a config.
pub fn batch_distribution(cfg: &ExperimentConfig, res: &Resolved) -> Result<DiscreteDistribution> {
    let c = constraint(cfg, res.dim)?;
    Ok(DiscreteDistribution::random(&c, res.r, cfg.support, derive_seed(cfg.seed, DIST_TAG)))
}

/// (dK log(BRn/(log(1/δ) dK) + e) log(1/δ) + log(Kn) log(log(n)/δ)) / n.
pub fn excess_risk_shape(d: f64, k: f64, b: f64, r: f64, n: f64, delta: f64) -> f64 {
    let ld = (1.0 / delta).ln();
    (d * k * (b * r * n / (ld * d * k) + E).ln() * ld + (k * n).ln() * (n.ln() / delta).ln()) / n
}

/// Trains the confidence-boosted predictor on `samples` and scores it on
/// every support point of `dist`: (per-point min probability, KL excess).
pub fn batch_fit(
    cfg: &ExperimentConfig,
    res: &Resolved,
    dist: &DiscreteDistribution,
    samples: &[LabeledExample],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let c = constraint(cfg, res.dim)?;
    let conv = conversion(cfg, res)?;
    let chunk = cfg.n / (2 * conv.m);
    let inner = RegressorConfig {
        l: 1.0,
        r: res.r,
        mu: SmoothingParam::new((1.0 / chunk as f64).min(0.5))?,
        sampler: sampler_config(cfg, seed),
    };
    let g = boost_confidence(
        samples,
        &conv,
        || AggregatingRegressor::new(c.clone(), inner.clone()),
        derive_seed(seed, CONFIDENCE_TAG),
    )?;
    (0..dist.xs.len())
        .map(|i| {
            let q = g.probs(&dist.xs[i])?;
            Ok((q.min(), dist.excess_at(i, q.as_slice())))
        })
        .collect()
}

fn batch(cfg: &ExperimentConfig, res: &Resolved, seed: u64) -> Result<SeedOutput> {
    if cfg.stream == StreamKind::Margin {
        return Err(Error::InvalidArgument("batch runs draw from their own distribution; margin streams do not apply".into()));
    }
    let dist = batch_distribution(cfg, res)?;
    let samples = dist.sample(cfg.n, derive_seed(seed, DRAW_TAG));
    let scores = batch_fit(cfg, res, &dist, &samples, seed)?;
    let conv = conversion(cfg, res)?;

    let mut ledger = Table::new(ledger_header(cfg.experiment));
    let mut weighted = Vec::with_capacity(scores.len());
    for (i, (pmin, kl)) in scores.iter().enumerate() {
        weighted.push(dist.probs[i] * kl);
        ledger.push(row![seed, i + 1, dist.probs[i], *pmin, *kl, weighted[i]]);
    }
    let pmin = scores.iter().map(|s| s.0).fold(1.0, f64::min);
    let summary = row![
        seed,
        cfg.n,
        conv.m,
        conv.mu.value(),
        weighted.iter().sum::<f64>(),
        pmin,
        conv.mu.value() / cfg.k as f64,
        excess_risk_shape(res.dim as f64, cfg.k as f64, cfg.b, res.r, cfg.n as f64, cfg.delta),
    ];
    Ok(SeedOutput {
        seed,
        ledger,
        summary,
        stream: ExampleStream::new(res.dim, cfg.k, samples)?,
    })
}

fn lowerbound(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let (inst, _) = margin_adversary(cfg.d, cfg.gamma, None, &mut RandomGuesser, derive_seed(seed, STREAM_TAG))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, LEARNER_TAG));
    let mut guesser = RandomGuesser;
    let mut ledger = Table::new(ledger_header(cfg.experiment));
    let mut mistakes = 0usize;
    for (t, (x, &y)) in inst.xs.iter().zip(&inst.ys).enumerate() {
        let p = guesser.predict(x, &mut rng)?;
        guesser.update(x, y)?;
        mistakes += (p != y) as usize;
        ledger.push(vec![seed.to_string(), (t + 1).to_string(), y.to_string(), p.to_string(), ((p != y) as u8).to_string()]);
    }
    let summary = row![
        seed,
        inst.len(),
        mistakes,
        margin_mistake_bound(cfg.d, cfg.gamma),
        inst.margin(),
        verify_shattering(&inst),
    ];
    Ok(SeedOutput {
        seed,
        ledger,
        summary,
        stream: inst.to_stream()?,
    })
}
