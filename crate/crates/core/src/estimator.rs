//! Conditional-mean estimation for `y = G s + z`, `z ~ N(0, I)`, with a
//! discrete (or Gaussian) input.
//!
//! A single pass over the noise nodes produces every statistic the optimizer
//! needs: the mutual information, the MMSE matrix `E_s` and the second
//! moments `E[Φ_ij²]` of the conditional covariance `Φ(y)`. Passes are
//! chunked over nodes and reduced in a fixed order, so results do not depend
//! on the number of worker threads.

use rayon::prelude::*;

use crate::channel::Constellation;
use crate::error::{Error, Result};
use crate::integration::{batch_mean_stderr, IntegrationConfig, NoiseSet};
use crate::matcalc::{Matrix, Vector};

const CHUNK: usize = 256;

/// The input distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Signaling {
    Discrete(Constellation),
    /// Zero-mean, identity-covariance Gaussian input of the given dimension.
    Gaussian { dim: usize },
}

impl Signaling {
    pub fn dim(&self) -> usize {
        match self {
            Signaling::Discrete(c) => c.dim(),
            Signaling::Gaussian { dim } => *dim,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Signaling::Gaussian { .. })
    }

    /// Alphabet size, `None` for Gaussian inputs.
    pub fn alphabet_size(&self) -> Option<usize> {
        match self {
            Signaling::Discrete(c) => Some(c.len()),
            Signaling::Gaussian { .. } => None,
        }
    }

    /// The input seen through an orthogonal rotation `x ↦ a x`.
    pub fn rotated(&self, a: &Matrix) -> Signaling {
        match self {
            Signaling::Discrete(c) => Signaling::Discrete(c.rotated(a)),
            g => g.clone(),
        }
    }
}

impl From<Constellation> for Signaling {
    fn from(c: Constellation) -> Self {
        Signaling::Discrete(c)
    }
}

/// MMSE matrix with per-entry standard errors (zero for deterministic
/// integration).
#[derive(Debug, Clone, PartialEq)]
pub struct MmseStats {
    pub mmse_matrix: Matrix,
    pub mmse_diag: Vec<f64>,
    pub stderr: Matrix,
}

/// Entrywise `E[Φ(y)_ij²]` with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiMoments {
    pub phi_sq: Matrix,
    pub stderr: Matrix,
}

/// Everything one integration pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PassStats {
    pub mi: f64,
    pub mi_stderr: f64,
    /// `H(s) − I` for discrete inputs, accumulated directly so that it keeps
    /// full relative precision near saturation.
    pub equivocation: Option<f64>,
    pub mmse: Matrix,
    pub mmse_stderr: Matrix,
    /// Present only when requested.
    pub phi_sq: Option<(Matrix, Matrix)>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `E[s | y]` for `y = G s + z` with unit-variance Gaussian noise, computed
/// with log-domain weights.
pub fn posterior_mean(g: &Matrix, c: &Constellation, y: &Vector) -> Result<Vector> {
    if g.ncols() != c.dim() || g.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "posterior_mean: G is {}×{}, alphabet dim {}, y has {} entries",
            g.nrows(),
            g.ncols(),
            c.dim(),
            y.len()
        )));
    }
    let logw: Vec<f64> = c
        .points()
        .iter()
        .zip(c.priors())
        .map(|(s, &p)| p.ln() - 0.5 * (y - g * s).norm_squared())
        .collect();
    let lse = log_sum_exp(&logw);
    let mut mean = Vector::zeros(c.dim());
    for (s, lw) in c.points().iter().zip(&logw) {
        mean += s * (lw - lse).exp();
    }
    Ok(mean)
}

struct Partial {
    mi: Vec<f64>,
    mmse: Vec<Matrix>,
    phi: Vec<Matrix>,
}

impl Partial {
    fn zeros(batches: usize, m: usize, with_phi: bool) -> Self {
        Partial {
            mi: vec![0.0; batches],
            mmse: vec![Matrix::zeros(m, m); batches],
            phi: if with_phi {
                vec![Matrix::zeros(m, m); batches]
            } else {
                Vec::new()
            },
        }
    }

    fn add(&mut self, other: &Partial) {
        for b in 0..self.mi.len() {
            self.mi[b] += other.mi[b];
            self.mmse[b] += &other.mmse[b];
            if !self.phi.is_empty() {
                self.phi[b] += &other.phi[b];
            }
        }
    }
}

fn entry_stats(per_batch: &[Matrix]) -> (Matrix, Matrix) {
    let (r, c) = per_batch[0].shape();
    let mut mean = Matrix::zeros(r, c);
    let mut se = Matrix::zeros(r, c);
    let mut col = vec![0.0; per_batch.len()];
    for i in 0..r {
        for j in 0..c {
            for (b, m) in per_batch.iter().enumerate() {
                col[b] = m[(i, j)];
            }
            let (mu, s) = batch_mean_stderr(&col);
            mean[(i, j)] = mu;
            se[(i, j)] = s;
        }
    }
    (mean, se)
}

/// One integration pass over `noise` for a discrete alphabet.
pub fn discrete_pass(g: &Matrix, c: &Constellation, noise: &NoiseSet, with_phi: bool) -> Result<PassStats> {
    let k = g.nrows();
    let m = c.dim();
    if g.ncols() != m {
        return Err(Error::Dimension(format!("G has {} columns, alphabet dim {m}", g.ncols())));
    }
    if noise.dim() != k {
        return Err(Error::Dimension(format!("noise dim {} for {k} outputs", noise.dim())));
    }
    let points = c.points();
    let priors = c.priors();
    let log_priors: Vec<f64> = priors.iter().map(|p| p.ln()).collect();
    let centers: Vec<Vector> = points.iter().map(|s| g * s).collect();
    let l = points.len();
    let batches = noise.batches();
    let n_chunks = noise.len().div_ceil(CHUNK);

    let partials: Vec<Partial> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Partial::zeros(batches, m, with_phi);
            let mut logw = vec![0.0; l];
            let mut y = vec![0.0; k];
            let mut post = vec![0.0; l];
            let mut mean = vec![0.0; m];
            let mut err = vec![0.0; m];
            let start = chunk * CHUNK;
            let end = (start + CHUNK).min(noise.len());
            for t in start..end {
                let z = noise.point(t);
                let wt = noise.weight(t);
                let b = noise.batch(t);
                for i in 0..l {
                    if priors[i] == 0.0 {
                        continue;
                    }
                    for r in 0..k {
                        y[r] = centers[i][r] + z[r];
                    }
                    for j in 0..l {
                        let mut d2 = 0.0;
                        for r in 0..k {
                            let d = y[r] - centers[j][r];
                            d2 += d * d;
                        }
                        logw[j] = log_priors[j] - 0.5 * d2;
                    }
                    let lse = log_sum_exp(&logw);
                    let w = priors[i] * wt;
                    // log(1/post_i), through ln_1p when the true point dominates.
                    let surprise = if logw.iter().all(|&x| x <= logw[i]) {
                        let rest: f64 = (0..l).filter(|&j| j != i).map(|j| (logw[j] - logw[i]).exp()).sum();
                        rest.ln_1p()
                    } else {
                        lse - logw[i]
                    };
                    acc.mi[b] += w * surprise;

                    err.fill(0.0);
                    for j in 0..l {
                        post[j] = (logw[j] - lse).exp();
                        if j != i {
                            for a in 0..m {
                                err[a] += post[j] * (points[i][a] - points[j][a]);
                            }
                        }
                    }
                    for a in 0..m {
                        mean[a] = points[i][a] - err[a];
                    }
                    let e = &mut acc.mmse[b];
                    for c in 0..m {
                        for a in 0..m {
                            e[(a, c)] += w * err[a] * err[c];
                        }
                    }
                    if with_phi {
                        let f = &mut acc.phi[b];
                        for c in 0..m {
                            for a in 0..m {
                                let mut phi = 0.0;
                                for j in 0..l {
                                    phi += post[j] * (points[j][a] - mean[a]) * (points[j][c] - mean[c]);
                                }
                                f[(a, c)] += w * phi * phi;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = Partial::zeros(batches, m, with_phi);
    for p in &partials {
        total.add(p);
    }
    let (equivocation, mi_stderr) = batch_mean_stderr(&total.mi);
    let entropy: f64 = priors.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
    let mi = entropy - equivocation;
    let (mut mmse, mmse_stderr) = entry_stats(&total.mmse);
    mmse = (&mmse + mmse.transpose()) * 0.5;
    let phi_sq = if with_phi {
        let (mut phi, se) = entry_stats(&total.phi);
        phi = (&phi + phi.transpose()) * 0.5;
        Some((phi, se))
    } else {
        None
    };
    Ok(PassStats {
        mi,
        mi_stderr,
        equivocation: Some(equivocation),
        mmse,
        mmse_stderr,
        phi_sq,
    })
}

/// Closed-form statistics for Gaussian input: `E = (I + GᵀG)⁻¹`,
/// `I = ½ log det(I + GᵀG)`, and `Φ ≡ E`.
pub fn gaussian_pass(g: &Matrix) -> PassStats {
    let m = g.ncols();
    let a = Matrix::identity(m, m) + g.transpose() * g;
    let chol = a.clone().cholesky().expect("I + GᵀG is positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let e = chol.inverse();
    let e = (&e + e.transpose()) * 0.5;
    PassStats {
        mi: 0.5 * logdet,
        mi_stderr: 0.0,
        equivocation: None,
        phi_sq: Some((e.component_mul(&e), Matrix::zeros(m, m))),
        mmse: e,
        mmse_stderr: Matrix::zeros(m, m),
    }
}

/// Integration pass dispatching on the input type.
pub fn pass(g: &Matrix, sig: &Signaling, noise: &NoiseSet, with_phi: bool) -> Result<PassStats> {
    match sig {
        Signaling::Discrete(c) => discrete_pass(g, c, noise, with_phi),
        Signaling::Gaussian { dim } => {
            if g.ncols() != *dim {
                return Err(Error::Dimension(format!("G has {} columns, input dim {dim}", g.ncols())));
            }
            Ok(gaussian_pass(g))
        }
    }
}

fn check_target(cfg: &IntegrationConfig, achieved: f64) -> Result<()> {
    match cfg.stderr_target {
        Some(target) if achieved > target => Err(Error::IntegrationBudget { achieved, target }),
        _ => Ok(()),
    }
}

/// MMSE matrix of `s` given `y = G s + z`.
pub fn mmse_stats(g: &Matrix, sig: &Signaling, cfg: &IntegrationConfig) -> Result<MmseStats> {
    let noise = noise_for(sig, g.nrows(), cfg)?;
    let st = pass(g, sig, &noise, false)?;
    check_target(cfg, st.mmse_stderr.max())?;
    Ok(MmseStats {
        mmse_diag: st.mmse.diagonal().iter().cloned().collect(),
        mmse_matrix: st.mmse,
        stderr: st.mmse_stderr,
    })
}

/// Noise set for `dim` outputs; Gaussian inputs need none, so a minimal
/// deterministic set is returned for them.
pub fn noise_for(sig: &Signaling, dim: usize, cfg: &IntegrationConfig) -> Result<NoiseSet> {
    if sig.is_gaussian() {
        return NoiseSet::new(&IntegrationConfig::gauss_hermite(3), 0);
    }
    NoiseSet::new(cfg, dim)
}

/// Gain of the modal model `y' = Λ_H Σ_P ŝ + z` acting on the rotated input
/// `ŝ = Vᵀ s`: a `k × m` matrix `[diag(λ_i σ_i) | 0]`.
pub fn modal_gain(lam_sq: &[f64], sigma_sq: &[f64], m: usize) -> Result<Matrix> {
    let k = lam_sq.len();
    if sigma_sq.len() != k || k > m {
        return Err(Error::Dimension(format!(
            "modal gain: {} eigenvalues, {} powers, input dim {m}",
            k,
            sigma_sq.len()
        )));
    }
    if lam_sq.iter().chain(sigma_sq).any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidArgument("modal gains must be nonnegative".into()));
    }
    let mut g = Matrix::zeros(k, m);
    for i in 0..k {
        g[(i, i)] = (lam_sq[i] * sigma_sq[i]).sqrt();
    }
    Ok(g)
}

/// Statistics of the modal model with a prebuilt noise set (common random
/// numbers across calls).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalStats {
    pub mi: f64,
    pub mi_stderr: f64,
    pub equivocation: Option<f64>,
    /// `mmse_i` for the `k` modes.
    pub mmse: Vec<f64>,
    pub mmse_stderr: Vec<f64>,
    /// `k × k` block of `E[Φ_ij²]`, when requested.
    pub phi_sq: Option<PhiMoments>,
    /// Full `m × m` MMSE matrix of the rotated input.
    pub mmse_matrix: Matrix,
}

impl ModalStats {
    /// MI up to an input-only constant; differences between scores are
    /// MI differences without the cancellation of `H(s) − equivocation`.
    pub fn score(&self) -> f64 {
        self.equivocation.map_or(self.mi, |e| -e)
    }

    /// Room left below the MI ceiling, 1 when there is none.
    pub fn headroom(&self) -> f64 {
        self.equivocation.map_or(1.0, |e| e.clamp(0.0, 1.0))
    }
}

/// Evaluates the modal model `y' = Λ Σ Vᵀ s + z` for fixed `V`.
pub fn modal_stats(
    lam_sq: &[f64],
    sigma_sq: &[f64],
    v: &Matrix,
    sig: &Signaling,
    noise: &NoiseSet,
    with_phi: bool,
) -> Result<ModalStats> {
    let m = sig.dim();
    if v.nrows() != m || v.ncols() != m {
        return Err(Error::Dimension(format!("V must be {m}×{m}")));
    }
    let k = lam_sq.len();
    let g = modal_gain(lam_sq, sigma_sq, m)?;
    let rotated = sig.rotated(&v.transpose());
    let st = pass(&g, &rotated, noise, with_phi)?;
    let phi_sq = st.phi_sq.map(|(phi, se)| PhiMoments {
        phi_sq: phi.view((0, 0), (k, k)).into_owned(),
        stderr: se.view((0, 0), (k, k)).into_owned(),
    });
    Ok(ModalStats {
        mi: st.mi,
        mi_stderr: st.mi_stderr,
        equivocation: st.equivocation,
        mmse: (0..k).map(|i| st.mmse[(i, i)]).collect(),
        mmse_stderr: (0..k).map(|i| st.mmse_stderr[(i, i)]).collect(),
        phi_sq,
        mmse_matrix: st.mmse,
    })
}

/// `mmse_i(Σ_P, V_P)`: diagonal MMSE entries of `ŝ = Vᵀs` through the
/// diagonal channel `Λ_H Σ_P`.
pub fn mmse_diag_for_model(
    lam_sq: &[f64],
    sigma_sq: &[f64],
    v: &Matrix,
    sig: &Signaling,
    cfg: &IntegrationConfig,
) -> Result<Vec<f64>> {
    let noise = noise_for(sig, lam_sq.len(), cfg)?;
    let st = modal_stats(lam_sq, sigma_sq, v, sig, &noise, false)?;
    check_target(cfg, st.mmse_stderr.iter().cloned().fold(0.0, f64::max))?;
    Ok(st.mmse)
}

/// `E[Φ(y')_ij²]` for the modal model.
pub fn phi_moments(
    lam_sq: &[f64],
    sigma_sq: &[f64],
    v: &Matrix,
    sig: &Signaling,
    cfg: &IntegrationConfig,
) -> Result<PhiMoments> {
    let noise = noise_for(sig, lam_sq.len(), cfg)?;
    let st = modal_stats(lam_sq, sigma_sq, v, sig, &noise, true)?;
    let phi = st.phi_sq.expect("requested Φ moments");
    check_target(cfg, phi.stderr.max())?;
    Ok(phi)
}

/// `J[i][j] = d mmse_i / d σ_j² = −λ_j² E[Φ_ij²]`.
pub fn jacobian_from_phi(lam_sq: &[f64], phi: &PhiMoments) -> Matrix {
    let k = lam_sq.len();
    Matrix::from_fn(k, k, |i, j| -lam_sq[j] * phi.phi_sq[(i, j)])
}

pub fn mmse_jacobian(
    lam_sq: &[f64],
    sigma_sq: &[f64],
    v: &Matrix,
    sig: &Signaling,
    cfg: &IntegrationConfig,
) -> Result<Matrix> {
    let phi = phi_moments(lam_sq, sigma_sq, v, sig, cfg)?;
    Ok(jacobian_from_phi(lam_sq, &phi))
}
