//! Exact t-SNE for laying detected objects out on a 2D canvas.
//!
//! Input affinities are Gaussian conditionals over squared Euclidean
//! distances, calibrated per row to a target perplexity by bisection on the
//! precision `beta = 1 / (2 sigma^2)`, then symmetrized. The layout minimizes
//! `KL(P || Q)` with Student-t (one degree of freedom) output affinities using
//! momentum gradient descent with per-coordinate gains and an early
//! exaggeration phase. Everything runs in O(N^2) memory and time, accumulating
//! sums in a fixed index order so results are bit-reproducible.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::DetectionSet;
use crate::math;

const MAX_BISECTION_STEPS: usize = 200;
const ENTROPY_TOLERANCE: f64 = 1e-12;
const Q_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;
const INIT_STD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("t-SNE needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("perplexity {perplexity} exceeds (N - 1) / 3 = {max}")]
    PerplexityTooLarge { perplexity: f64, max: f64 },
    #[error("all pairwise distances are zero")]
    DegenerateDistances,
    #[error("embedding {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("embedding {0} contains a non-finite value")]
    NonFiniteInput(usize),
    #[error("{ids} object ids for {points} embeddings")]
    LengthMismatch { ids: usize, points: usize },
    #[error("invalid t-SNE parameters: {0}")]
    InvalidParams(String),
    #[error("layout diverged at iteration {0}")]
    NumericalDivergence(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration_factor: f64,
    pub early_exaggeration_iters: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration_factor: 12.0,
            early_exaggeration_iters: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

impl TsneParams {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |m: &str| Err(ProjectionError::InvalidParams(m.into()));
        if !(self.perplexity > 0.0 && self.perplexity.is_finite()) {
            return bad("perplexity must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.early_exaggeration_factor > 0.0 && self.early_exaggeration_factor.is_finite()) {
            return bad("early_exaggeration_factor must be positive");
        }
        let momentum = 0.0..1.0;
        if !momentum.contains(&self.initial_momentum) || !momentum.contains(&self.final_momentum) {
            return bad("momenta must lie in [0, 1)");
        }
        if self.iterations < self.early_exaggeration_iters {
            return bad("iterations must be >= early_exaggeration_iters");
        }
        Ok(())
    }
}

/// 2D coordinates per object, as served to the labeling canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionLayout {
    pub object_ids: Vec<String>,
    pub points: Vec<[f64; 2]>,
    pub final_kl: f64,
}

/// Diagnostics recorded alongside a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneTrace {
    /// Perplexity actually used after clamping to `(N - 1) / 3`.
    pub effective_perplexity: f64,
    /// KL with un-exaggerated affinities right after early exaggeration ends.
    pub post_exaggeration_kl: f64,
    pub final_kl: f64,
}

/// Dense row-major `N x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    n: usize,
    data: Vec<f64>,
}

impl PairMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn check_embeddings<E: AsRef<[f64]>>(embeddings: &[E]) -> Result<(), ProjectionError> {
    let n = embeddings.len();
    if n < 3 {
        return Err(ProjectionError::TooFewPoints(n));
    }
    let d = embeddings[0].as_ref().len();
    for (i, e) in embeddings.iter().enumerate() {
        let e = e.as_ref();
        if e.len() != d {
            return Err(ProjectionError::DimensionMismatch {
                index: i,
                expected: d,
                found: e.len(),
            });
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(ProjectionError::NonFiniteInput(i));
        }
    }
    Ok(())
}

/// Squared Euclidean distances, each accumulated over coordinates in order.
pub fn pairwise_squared_distances<E: AsRef<[f64]>>(embeddings: &[E]) -> PairMatrix {
    let n = embeddings.len();
    let mut m = PairMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = math::squared_distance(embeddings[i].as_ref(), embeddings[j].as_ref());
            m.set(i, j, d);
            m.set(j, i, d);
        }
    }
    m
}

/// Perplexity `exp(H)` of a probability row (natural-log entropy), which is
/// the same quantity as `2^H` with `H` in bits.
pub fn row_perplexity(row: &[f64]) -> f64 {
    let h = row
        .iter()
        .filter(|p| **p > 0.0)
        .fold(0.0, |acc, p| acc - p * math::ln(*p));
    math::exp(h)
}

/// Gaussian row at precision `beta` over shifted distances; returns entropy.
fn gaussian_row(shifted: &[f64], skip: usize, beta: f64, out: &mut [f64]) -> f64 {
    let mut z = 0.0;
    for (j, (d, p)) in shifted.iter().zip(out.iter_mut()).enumerate() {
        *p = if j == skip { 0.0 } else { math::exp(-beta * d) };
        z += *p;
    }
    let mut weighted = 0.0;
    for (j, (d, p)) in shifted.iter().zip(out.iter_mut()).enumerate() {
        *p /= z;
        if j != skip {
            weighted += *p * d;
        }
    }
    math::ln(z) + beta * weighted
}

/// Per-row calibrated conditionals `p(j|i)`, with `p(i|i) = 0` and each row
/// summing to one.
pub fn conditional_affinities<E: AsRef<[f64]>>(
    embeddings: &[E],
    perplexity: f64,
) -> Result<PairMatrix, ProjectionError> {
    check_embeddings(embeddings)?;
    let n = embeddings.len();
    let max = (n - 1) as f64 / 3.0;
    if perplexity.is_nan() || perplexity <= 0.0 {
        return Err(ProjectionError::InvalidParams("perplexity must be positive".into()));
    }
    if perplexity > max {
        return Err(ProjectionError::PerplexityTooLarge { perplexity, max });
    }
    let dist = pairwise_squared_distances(embeddings);
    if dist.as_slice().iter().all(|d| *d == 0.0) {
        return Err(ProjectionError::DegenerateDistances);
    }

    let target = math::ln(perplexity);
    let mut out = PairMatrix::zeros(n);
    let mut shifted = vec![0.0; n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let d = dist.row(i);
        let dmin = d
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .fold(f64::INFINITY, |m, (_, v)| m.min(*v));
        // Shifting by the nearest distance keeps the largest weight at 1.
        for (s, v) in shifted.iter_mut().zip(d) {
            *s = v - dmin;
        }
        let spread = shifted.iter().sum::<f64>() / (n - 1) as f64;

        let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut best = (beta, f64::INFINITY);
        for _ in 0..MAX_BISECTION_STEPS {
            let diff = gaussian_row(&shifted, i, beta, &mut row) - target;
            if diff.abs() < best.1 {
                best = (beta, diff.abs());
            }
            if diff.abs() < ENTROPY_TOLERANCE {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        gaussian_row(&shifted, i, best.0, &mut row);
        out.data[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    Ok(out)
}

/// `P = (C + C^T) / (2N)`.
pub fn symmetrize(conditional: &PairMatrix) -> PairMatrix {
    let n = conditional.size();
    let scale = 2.0 * n as f64;
    let mut p = PairMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            p.set(i, j, (conditional.get(i, j) + conditional.get(j, i)) / scale);
        }
    }
    p
}

/// `sum p ln(p / q)` over matching entries, with `0 ln 0 = 0` and `q`
/// floored at 1e-12.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let kl = p.iter().zip(q).fold(0.0, |acc, (&pi, &qi)| {
        if pi > 0.0 {
            acc + pi * math::ln(pi / qi.max(Q_FLOOR))
        } else {
            acc
        }
    });
    // Gibbs' inequality; tiny negatives are round-off.
    kl.max(0.0)
}

/// Student-t output affinities of a flat `N x 2` layout.
pub fn output_affinities(points: &[f64]) -> PairMatrix {
    let n = points.len() / 2;
    let mut num = PairMatrix::zeros(n);
    let total = student_numerators(points, &mut num);
    for v in num.data.iter_mut() {
        *v /= total;
    }
    num
}

/// Fills `1 / (1 + |yi - yj|^2)` off the diagonal and returns the sum.
fn student_numerators(points: &[f64], num: &mut PairMatrix) -> f64 {
    let n = num.size();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = points[2 * i] - points[2 * j];
            let dy = points[2 * i + 1] - points[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num.set(i, j, v);
            num.set(j, i, v);
            total += 2.0 * v;
        }
    }
    total
}

pub fn tsne_project<E: AsRef<[f64]>>(
    object_ids: &[String],
    embeddings: &[E],
    params: &TsneParams,
) -> Result<ProjectionLayout, ProjectionError> {
    tsne_project_traced(object_ids, embeddings, params).map(|(layout, _)| layout)
}

/// Projects a whole detection set, ids in set order.
pub fn project_detections(set: &DetectionSet, params: &TsneParams) -> Result<(ProjectionLayout, TsneTrace), ProjectionError> {
    tsne_project_traced(&set.object_ids(), &set.embeddings(), params)
}

/// Runs t-SNE and also returns the KL diagnostics. The requested perplexity
/// is clamped to `(N - 1) / 3`.
pub fn tsne_project_traced<E: AsRef<[f64]>>(
    object_ids: &[String],
    embeddings: &[E],
    params: &TsneParams,
) -> Result<(ProjectionLayout, TsneTrace), ProjectionError> {
    params.validate()?;
    if object_ids.len() != embeddings.len() {
        return Err(ProjectionError::LengthMismatch {
            ids: object_ids.len(),
            points: embeddings.len(),
        });
    }
    check_embeddings(embeddings)?;
    let n = embeddings.len();
    let perplexity = params.perplexity.min((n - 1) as f64 / 3.0);
    let p = symmetrize(&conditional_affinities(embeddings, perplexity)?);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut y: Vec<f64> = (0..2 * n)
        .map(|_| INIT_STD * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut num = PairMatrix::zeros(n);

    let mut post_exaggeration_kl = if params.early_exaggeration_iters == 0 {
        kl_divergence(p.as_slice(), output_affinities(&y).as_slice())
    } else {
        f64::NAN
    };

    for it in 0..params.iterations {
        let exaggeration = if it < params.early_exaggeration_iters {
            params.early_exaggeration_factor
        } else {
            1.0
        };
        let momentum = if it < params.momentum_switch_iter {
            params.initial_momentum
        } else {
            params.final_momentum
        };

        let total = student_numerators(&y, &mut num);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num.get(i, j);
                let f = (exaggeration * p.get(i, j) - w / total) * w;
                gx += f * (y[2 * i] - y[2 * j]);
                gy += f * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }

        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            velocity[k] = momentum * velocity[k] - params.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }

        let (mut mx, mut my) = (0.0, 0.0);
        for i in 0..n {
            mx += y[2 * i];
            my += y[2 * i + 1];
        }
        mx /= n as f64;
        my /= n as f64;
        for i in 0..n {
            y[2 * i] -= mx;
            y[2 * i + 1] -= my;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(ProjectionError::NumericalDivergence(it));
        }

        if it + 1 == params.early_exaggeration_iters {
            post_exaggeration_kl = kl_divergence(p.as_slice(), output_affinities(&y).as_slice());
        }
    }

    let final_kl = kl_divergence(p.as_slice(), output_affinities(&y).as_slice());
    let layout = ProjectionLayout {
        object_ids: object_ids.to_vec(),
        points: y.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        final_kl,
    };
    let trace = TsneTrace {
        effective_perplexity: perplexity,
        post_exaggeration_kl,
        final_kl,
    };
    Ok((layout, trace))
}
