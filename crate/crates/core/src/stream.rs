//! Labeled example streams: a seeded stochastic generator and CSV
//! serialization (`t, x_1..x_d, y`).

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::losses::{softmax_into, LabelWeights};
use crate::weights::WeightMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: usize,
}

impl LabeledExample {
    pub fn one_hot(&self, k: usize) -> Result<LabelWeights> {
        LabelWeights::one_hot(k, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleStream {
    pub dim: usize,
    pub classes: usize,
    pub examples: Vec<LabeledExample>,
}

impl ExampleStream {
    pub fn new(dim: usize, classes: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return invalid("stream needs d >= 1 and K >= 2");
        }
        for (t, e) in examples.iter().enumerate() {
            if e.x.len() != dim || e.y >= classes {
                return invalid(format!("example {t} does not match d = {dim}, K = {classes}"));
            }
        }
        Ok(ExampleStream {
            dim,
            classes,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x{j}")));
        header.push("y".into());
        w.write_record(&header)?;
        for (t, e) in self.examples.iter().enumerate() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(e.x.iter().map(|v| v.to_string()));
            rec.push(e.y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a stream written by [`ExampleStream::write_csv`]; K is not
    /// recorded in the file and must be supplied.
    pub fn read_csv<R: Read>(input: R, classes: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let dim = r.headers()?.len().saturating_sub(2);
        let mut examples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .or_else(|_| invalid(format!("bad number {s:?} in stream")))
            };
            let x = (1..=dim).map(|j| parse(&rec[j])).collect::<Result<Vec<_>>>()?;
            let y = rec[dim + 1]
                .parse::<usize>()
                .or_else(|_| invalid(format!("bad label {:?} in stream", &rec[dim + 1])))?;
            examples.push(LabeledExample { x, y });
        }
        ExampleStream::new(dim, classes, examples)
    }
}

/// A point drawn uniformly from the Euclidean ball of radius `r` in ℝ^d.
pub fn uniform_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, r: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            let radius = r * rng.random::<f64>().powf(1.0 / d as f64);
            return v.into_iter().map(|a| a * radius / norm).collect();
        }
    }
}

/// x uniform on the radius-R ball, y ∼ σ(W* x); with probability `noise` the
/// label is replaced by a uniformly random class.
pub fn stochastic_stream(w_star: &WeightMatrix, r: f64, n: usize, noise: f64, seed: u64) -> Result<ExampleStream> {
    if !(r > 0.0) || !(0.0..=1.0).contains(&noise) {
        return invalid("stochastic stream needs R > 0 and noise in [0, 1]");
    }
    let (k, d) = (w_star.rows(), w_star.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0; k];
    let examples = (0..n)
        .map(|_| {
            let x = uniform_ball(&mut rng, d, r);
            softmax_into(&w_star.mul_vec(&x), &mut p);
            let y = if rng.random::<f64>() < noise {
                rng.random_range(0..k)
            } else {
                crate::bandit::sample_index(&p, rng.random())
            };
            LabeledExample { x, y }
        })
        .collect();
    ExampleStream::new(d, k, examples)
}
