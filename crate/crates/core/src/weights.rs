//! Weight matrices and the convex decision sets they live in.
//!
//! A [`Constraint`] describes 𝒲 through a free parameter vector θ: the
//! unconstrained case uses every matrix entry, the binary case only the first
//! row (the second is pinned to zero), and the boosting case the single scalar
//! α of W = (αI, I).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Slack allowed when checking feasibility of a stored matrix.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Half-width of the boosting weight interval α ∈ [−2, 2].
pub const BOOSTING_ALPHA_MAX: f64 = 2.0;

/// Dense K×d matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    k: usize,
    d: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(k: usize, d: usize) -> Self {
        WeightMatrix {
            k,
            d,
            data: vec![0.0; k * d],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return invalid("weight matrix needs at least one row");
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return invalid("ragged weight matrix rows");
        }
        Ok(WeightMatrix {
            k,
            d,
            data: rows.concat(),
        })
    }

    pub fn from_vec(k: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * d {
            return invalid(format!("expected {} entries, got {}", k * d, data.len()));
        }
        Ok(WeightMatrix { k, d, data })
    }

    pub fn rows(&self) -> usize {
        self.k
    }

    pub fn cols(&self) -> usize {
        self.d
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.d..(k + 1) * self.d]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.d..(k + 1) * self.d]
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.data[k * self.d + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// z = W x.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d);
        for (k, o) in out.iter_mut().enumerate().take(self.k) {
            *o = self.row(k).iter().zip(x).map(|(w, v)| w * v).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        self.mul_vec_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowNorm {
    L2,
    L1,
    LInf,
}

impl RowNorm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            RowNorm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            RowNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            RowNorm::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    /// The dual norm, used to bound features: ‖x‖_⋆.
    pub fn dual(self) -> RowNorm {
        match self {
            RowNorm::L2 => RowNorm::L2,
            RowNorm::L1 => RowNorm::LInf,
            RowNorm::LInf => RowNorm::L1,
        }
    }

    /// Euclidean projection of `v` onto the ball of radius `radius`.
    pub fn project_ball(self, v: &mut [f64], radius: f64) {
        match self {
            RowNorm::L2 => {
                let n = self.of(v);
                if n > radius {
                    let s = radius / n;
                    v.iter_mut().for_each(|x| *x *= s);
                }
            }
            RowNorm::LInf => v.iter_mut().for_each(|x| *x = x.clamp(-radius, radius)),
            RowNorm::L1 => project_l1_ball(v, radius),
        }
    }
}

fn project_l1_ball(v: &mut [f64], radius: f64) {
    if RowNorm::L1.of(v) <= radius {
        return;
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - radius) / (i + 1) as f64;
        if *ui > t {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structure {
    /// Every entry is a free parameter.
    Free,
    /// K = 2 with the second row pinned to zero (binary logistic regression).
    Binary,
    /// K × 2K matrices (αI, I) with α ∈ [−2, 2].
    Boosting,
}

/// Convex decision set 𝒲 ⊆ {W : ‖W_k‖ ≤ B for all rows k}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    k: usize,
    d: usize,
    bound: f64,
    norm: RowNorm,
    structure: Structure,
}

impl Constraint {
    pub fn free(k: usize, d: usize, bound: f64) -> Result<Self> {
        Self::with_norm(k, d, bound, RowNorm::L2)
    }

    pub fn with_norm(k: usize, d: usize, bound: f64, norm: RowNorm) -> Result<Self> {
        if k < 2 || d == 0 {
            return invalid(format!("need K >= 2 and d >= 1, got K = {k}, d = {d}"));
        }
        check_bound(bound)?;
        Ok(Constraint {
            k,
            d,
            bound,
            norm,
            structure: Structure::Free,
        })
    }

    pub fn binary(d: usize, bound: f64) -> Result<Self> {
        if d == 0 {
            return invalid("need d >= 1");
        }
        check_bound(bound)?;
        Ok(Constraint {
            k: 2,
            d,
            bound,
            norm: RowNorm::L2,
            structure: Structure::Binary,
        })
    }

    /// {(αI, I) : α ∈ [−2, 2]}, whose rows have ℓ₁ norm at most 3.
    pub fn boosting(k: usize) -> Result<Self> {
        if k < 2 {
            return invalid("need K >= 2");
        }
        Ok(Constraint {
            k,
            d: 2 * k,
            bound: BOOSTING_ALPHA_MAX + 1.0,
            norm: RowNorm::L1,
            structure: Structure::Boosting,
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn features(&self) -> usize {
        self.d
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn norm(&self) -> RowNorm {
        self.norm
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    /// Linear-algebraic dimension of 𝒲.
    pub fn free_dims(&self) -> usize {
        match self.structure {
            Structure::Free => self.k * self.d,
            Structure::Binary => self.d,
            Structure::Boosting => 1,
        }
    }

    /// Each free parameter ranges over [−h, h] with h returned here.
    pub fn param_half_width(&self) -> f64 {
        match self.structure {
            Structure::Boosting => BOOSTING_ALPHA_MAX,
            _ => self.bound,
        }
    }

    pub fn embed(&self, theta: &[f64]) -> WeightMatrix {
        debug_assert_eq!(theta.len(), self.free_dims());
        match self.structure {
            Structure::Free => WeightMatrix {
                k: self.k,
                d: self.d,
                data: theta.to_vec(),
            },
            Structure::Binary => {
                let mut w = WeightMatrix::zeros(2, self.d);
                w.row_mut(0).copy_from_slice(theta);
                w
            }
            Structure::Boosting => {
                let mut w = WeightMatrix::zeros(self.k, self.d);
                for i in 0..self.k {
                    w.data[i * self.d + i] = theta[0];
                    w.data[i * self.d + self.k + i] = 1.0;
                }
                w
            }
        }
    }

    /// Free parameters read off a matrix; for the boosting set α is the mean
    /// of the left block's diagonal.
    pub fn params(&self, w: &WeightMatrix) -> Vec<f64> {
        match self.structure {
            Structure::Free => w.data.clone(),
            Structure::Binary => w.row(0).to_vec(),
            Structure::Boosting => {
                let s: f64 = (0..self.k).map(|i| w.get(i, i)).sum();
                vec![s / self.k as f64]
            }
        }
    }

    /// Chain rule from ∇_W to ∇_θ.
    pub fn param_gradient(&self, grad_w: &WeightMatrix) -> Vec<f64> {
        match self.structure {
            Structure::Free => grad_w.data.clone(),
            Structure::Binary => grad_w.row(0).to_vec(),
            Structure::Boosting => vec![(0..self.k).map(|i| grad_w.get(i, i)).sum()],
        }
    }

    /// Euclidean projection of a free parameter vector onto 𝒲.
    pub fn project_params(&self, theta: &mut [f64]) {
        match self.structure {
            Structure::Free => {
                for row in theta.chunks_mut(self.d) {
                    self.norm.project_ball(row, self.bound);
                }
            }
            Structure::Binary => self.norm.project_ball(theta, self.bound),
            Structure::Boosting => {
                theta[0] = theta[0].clamp(-BOOSTING_ALPHA_MAX, BOOSTING_ALPHA_MAX)
            }
        }
    }

    /// Rescales rows to the norm bound and restores structural pins. Idempotent.
    pub fn project(&self, w: &WeightMatrix) -> Result<WeightMatrix> {
        if w.k != self.k || w.d != self.d {
            return invalid(format!(
                "matrix is {}x{}, constraint expects {}x{}",
                w.k, w.d, self.k, self.d
            ));
        }
        let mut theta = self.params(w);
        self.project_params(&mut theta);
        Ok(self.embed(&theta))
    }

    pub fn contains_params(&self, theta: &[f64]) -> bool {
        match self.structure {
            Structure::Free => theta
                .chunks(self.d)
                .all(|r| self.norm.of(r) <= self.bound + FEASIBILITY_TOL),
            Structure::Binary => self.norm.of(theta) <= self.bound + FEASIBILITY_TOL,
            Structure::Boosting => theta[0].abs() <= BOOSTING_ALPHA_MAX + FEASIBILITY_TOL,
        }
    }

    pub fn contains(&self, w: &WeightMatrix) -> bool {
        if w.k != self.k || w.d != self.d {
            return false;
        }
        let theta = self.params(w);
        self.contains_params(&theta) && self.embed(&theta) == *w
    }

    pub fn check(&self, w: &WeightMatrix) -> Result<()> {
        if self.contains(w) {
            Ok(())
        } else {
            invalid("weight matrix violates the decision-set constraint")
        }
    }

    /// A uniform draw over 𝒲 in parameter coordinates.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.structure {
            Structure::Boosting => vec![rng.random_range(-BOOSTING_ALPHA_MAX..=BOOSTING_ALPHA_MAX)],
            Structure::Binary => sample_ball(rng, self.d, self.bound, self.norm),
            Structure::Free => (0..self.k)
                .flat_map(|_| sample_ball(rng, self.d, self.bound, self.norm))
                .collect(),
        }
    }

    /// Feasible points of the product grid with `per_dim` evenly spaced
    /// values on [−h, h] per free parameter, in lexicographic order.
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let dims = self.free_dims();
        let h = self.param_half_width();
        let axis: Vec<f64> = if per_dim == 1 {
            vec![0.0]
        } else {
            (0..per_dim)
                .map(|i| -h + 2.0 * h * i as f64 / (per_dim - 1) as f64)
                .collect()
        };
        let mut out = Vec::new();
        let mut idx = vec![0usize; dims];
        loop {
            let theta: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
            if self.contains_params(&theta) {
                out.push(theta);
            }
            // odometer increment, last coordinate fastest
            let mut pos = dims;
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < per_dim {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
}

fn check_bound(bound: f64) -> Result<()> {
    if !(bound > 0.0) || !bound.is_finite() {
        return invalid(format!("norm bound must be positive, got {bound}"));
    }
    Ok(())
}

fn sample_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, radius: f64, norm: RowNorm) -> Vec<f64> {
    match norm {
        RowNorm::L2 => {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = RowNorm::L2.of(&v);
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x *= r / n);
            }
            v
        }
        RowNorm::LInf => (0..d).map(|_| rng.random_range(-radius..=radius)).collect(),
        RowNorm::L1 => loop {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
            if RowNorm::L1.of(&v) <= radius {
                break v;
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn project_scales_rows() {
        let c = Constraint::free(2, 2, 2.5).unwrap();
        let w = WeightMatrix::from_rows(&[vec![3.0, 4.0], vec![0.1, 0.2]]).unwrap();
        let p = c.project(&w).unwrap();
        assert!((p.get(0, 0) - 1.5).abs() < 1e-12);
        assert!((p.get(0, 1) - 2.0).abs() < 1e-12);
        assert_eq!(p.row(1), &[0.1, 0.2]);
        assert_eq!(c.project(&p).unwrap(), p);
    }

    #[test]
    fn project_keeps_feasible_matrix() {
        let c = Constraint::free(3, 2, 1.0).unwrap();
        let w = WeightMatrix::from_rows(&[vec![0.5, 0.5], vec![0.0, -1.0], vec![0.1, 0.0]]).unwrap();
        assert_eq!(c.project(&w).unwrap(), w);
    }

    #[test]
    fn boosting_projection_clips_alpha_and_restores_identity() {
        let c = Constraint::boosting(3).unwrap();
        let mut w = WeightMatrix::zeros(3, 6);
        for i in 0..3 {
            *w.as_mut_slice().get_mut(i * 6 + i).unwrap() = 5.0;
        }
        w.as_mut_slice()[1] = 0.7;
        let p = c.project(&w).unwrap();
        for i in 0..3 {
            assert_eq!(p.get(i, i), 2.0);
            assert_eq!(p.get(i, 3 + i), 1.0);
        }
        assert_eq!(p.get(0, 1), 0.0);
        assert!(c.contains(&p));
        assert!(RowNorm::L1.of(p.row(0)) <= 3.0);
    }

    #[test]
    fn binary_projection_pins_second_row() {
        let c = Constraint::binary(2, 1.0).unwrap();
        let w = WeightMatrix::from_rows(&[vec![3.0, 4.0], vec![1.0, 1.0]]).unwrap();
        let p = c.project(&w).unwrap();
        assert_eq!(p.row(1), &[0.0, 0.0]);
        assert!((RowNorm::L2.of(p.row(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l1_projection_is_euclidean() {
        let mut v = vec![3.0, -1.0, 0.5];
        project_l1_ball(&mut v, 2.0);
        assert!((RowNorm::L1.of(&v) - 2.0).abs() < 1e-12);
        assert_eq!(v, vec![2.0, 0.0, 0.0]);
    }

    #[test]
    fn grid_counts() {
        let c = Constraint::binary(1, 2.0).unwrap();
        let g = c.grid(129);
        assert_eq!(g.len(), 129);
        assert_eq!(g[0], vec![-2.0]);
        assert_eq!(g[64], vec![0.0]);
        // 2-d disk: corners of the box are excluded
        let c = Constraint::binary(2, 1.0).unwrap();
        let g = c.grid(3);
        assert_eq!(g.len(), 5);
        assert!(g.iter().all(|t| c.contains_params(t)));
    }

    #[test]
    fn uniform_draws_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in [
            Constraint::free(3, 2, 1.5).unwrap(),
            Constraint::with_norm(2, 3, 1.0, RowNorm::L1).unwrap(),
            Constraint::with_norm(2, 3, 1.0, RowNorm::LInf).unwrap(),
            Constraint::boosting(4).unwrap(),
        ] {
            for _ in 0..200 {
                let t = c.sample_uniform(&mut rng);
                assert!(c.contains_params(&t));
            }
        }
    }

    #[test]
    fn param_gradient_matches_embedding() {
        // d/dα of <G, embed(α)> is the trace of the left block of G.
        let c = Constraint::boosting(2).unwrap();
        let g = WeightMatrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]]).unwrap();
        assert_eq!(c.param_gradient(&g), vec![7.0]);
    }
}
