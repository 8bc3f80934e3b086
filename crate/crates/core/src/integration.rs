//! Numerical integration over the Gaussian noise.
//!
//! The expectation over the input is always an exact finite sum over the
//! alphabet; only the noise integral `E_z[f(z)]`, `z ~ N(0, I_k)`, is
//! numerical. A [`NoiseSet`] is a fixed list of weighted nodes, so every
//! quantity evaluated against the same set uses common random numbers.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcalc::Matrix;

pub const DEFAULT_SAMPLES: usize = 20_000;
pub const DEFAULT_BATCHES: usize = 20;
pub const MIN_SAMPLES: usize = 1000;
pub const GH_NODES_RANGE: (usize, usize) = (3, 30);
pub const GH_MAX_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MonteCarlo,
    GaussHermite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub method: Method,
    /// Monte Carlo sample count.
    pub samples: usize,
    /// Gauss–Hermite nodes per dimension.
    pub nodes: usize,
    pub seed: u64,
    pub stderr_target: Option<f64>,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            method: Method::MonteCarlo,
            samples: DEFAULT_SAMPLES,
            nodes: 20,
            seed: 0,
            stderr_target: None,
        }
    }
}

impl IntegrationConfig {
    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        IntegrationConfig {
            method: Method::MonteCarlo,
            samples,
            seed,
            ..Default::default()
        }
    }

    pub fn gauss_hermite(nodes: usize) -> Self {
        IntegrationConfig {
            method: Method::GaussHermite,
            nodes,
            ..Default::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self.method {
            Method::MonteCarlo if self.samples < MIN_SAMPLES => Err(Error::InvalidIntegration(format!(
                "at least {MIN_SAMPLES} Monte Carlo samples required, got {}",
                self.samples
            ))),
            Method::GaussHermite if !(GH_NODES_RANGE.0..=GH_NODES_RANGE.1).contains(&self.nodes) => {
                Err(Error::InvalidIntegration(format!(
                    "Gauss–Hermite nodes per dimension must lie in [{}, {}], got {}",
                    GH_NODES_RANGE.0, GH_NODES_RANGE.1, self.nodes
                )))
            }
            Method::GaussHermite if dim > GH_MAX_DIM => Err(Error::InvalidIntegration(format!(
                "Gauss–Hermite quadrature limited to noise dimension {GH_MAX_DIM}, got {dim}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.method == Method::GaussHermite
    }
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the standard
/// normal density (Golub–Welsch on the probabilists' Hermite recurrence).
/// Weights sum to one.
pub fn gauss_hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = Matrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        jacobi[(i - 1, i)] = b;
        jacobi[(i, i - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    // Symmetrize against roundoff.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.iter().map(|&(x, w)| (x, w / total)).unzip()
}

/// Fixed weighted noise nodes in `dim` dimensions.
#[derive(Debug, Clone)]
pub struct NoiseSet {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    batch_of: Vec<u32>,
    batches: usize,
}

impl NoiseSet {
    pub fn new(cfg: &IntegrationConfig, dim: usize) -> Result<Self> {
        cfg.validate(dim)?;
        match cfg.method {
            Method::GaussHermite => Ok(Self::gauss_hermite(cfg.nodes, dim)),
            Method::MonteCarlo => Ok(Self::monte_carlo(cfg.samples, cfg.seed, dim)),
        }
    }

    fn gauss_hermite(n: usize, dim: usize) -> Self {
        let (x, w) = gauss_hermite_rule(n);
        let total = n.pow(dim as u32);
        let mut points = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let mut wt = 1.0;
            for &i in &idx {
                points.push(x[i]);
                wt *= w[i];
            }
            weights.push(wt);
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < n {
                    break;
                }
                idx[d] = 0;
            }
        }
        NoiseSet {
            dim,
            points,
            weights,
            batch_of: vec![0; total],
            batches: 1,
        }
    }

    fn monte_carlo(samples: usize, seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<f64> = (0..samples * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let batches = DEFAULT_BATCHES.min(samples);
        let batch_of = (0..samples).map(|t| (t * batches / samples) as u32).collect();
        NoiseSet {
            dim,
            points,
            weights: vec![1.0 / samples as f64; samples],
            batch_of,
            batches,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, t: usize) -> &[f64] {
        &self.points[t * self.dim..(t + 1) * self.dim]
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.weights[t]
    }

    pub fn batch(&self, t: usize) -> usize {
        self.batch_of[t] as usize
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    /// Whether a standard error can be estimated (Monte Carlo only).
    pub fn is_random(&self) -> bool {
        self.batches > 1
    }
}

/// Mean and standard error from per-batch sums of `w_t f(z_t)`, where the
/// weights of each batch add up to `1/batches`. Returns stderr 0 for a
/// single batch.
pub fn batch_mean_stderr(batch_sums: &[f64]) -> (f64, f64) {
    let b = batch_sums.len();
    let mean: f64 = batch_sums.iter().sum();
    if b < 2 {
        return (mean, 0.0);
    }
    // Each batch mean is b * batch_sum.
    let means: Vec<f64> = batch_sums.iter().map(|s| s * b as f64).collect();
    let mu = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    (mean, (var / b as f64).sqrt())
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}
