//! Precoder optimization for a fixed input alphabet.
//!
//! The optimal precoder has the form `P = U_H,k Σ V_Pᵀ`: its left singular
//! vectors are the strongest eigenvectors of `R_H = HᵀH`. What remains is the
//! power allocation `σ²` (a concave program for fixed `V_P`, solved by
//! active-set Newton on the KKT system) and the right singular vectors
//! `V_P` (a local search over the orthogonal group).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{Channel, Precoder};
use crate::error::{Error, Result};
use crate::estimator::{jacobian_from_phi, modal_stats, noise_for, ModalStats, Signaling};
use crate::infomeasures::{mi_gaussian, MiEstimate, MiMethod, IMMSE_DERIVATIVE_SCALE};
use crate::integration::{IntegrationConfig, NoiseSet};
use crate::matcalc::{pinv, qr_orthonormal, random_orthogonal, sym_eigen_desc, Matrix, Vector};

/// Tolerance on the normalized KKT residual `λ_i² mmse_i / (2η) − 1`.
pub const TOL_KKT: f64 = 1e-5;
pub const MAX_NEWTON_ITER: usize = 200;
pub const MAX_BACKTRACKS: usize = 30;
const NEWTON_TARGET: f64 = 1e-10;

/// Eigenvalues closer than this (relative) count as tied.
const TIE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Multiplier of the power constraint; stationarity reads `λ_i² mmse_i = 2η`.
    pub eta: f64,
    pub active: Vec<usize>,
    /// `λ_i² mmse_i / (2η) − 1` for every mode: near zero on active modes,
    /// negative (the slack) on inactive ones.
    pub residuals: Vec<f64>,
    /// `‖F‖₂` of the KKT system after each accepted Newton step. It only
    /// grows when an inactive mode is re-admitted.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KktReport {
    pub fn max_active_residual(&self) -> f64 {
        self.active.iter().map(|&i| self.residuals[i].abs()).fold(0.0, f64::max)
    }

    /// Smallest `−residual` over inactive modes (`+∞` when all are active).
    pub fn min_inactive_margin(&self) -> f64 {
        (0..self.residuals.len())
            .filter(|i| !self.active.contains(i))
            .map(|i| -self.residuals[i])
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSolution {
    pub precoder: Precoder,
    /// Per-mode powers, in the eigenvalue order of the channel.
    pub sigma_sq: Vec<f64>,
    /// `m × m` orthonormal right factor.
    pub v: Matrix,
    pub mi: MiEstimate,
    pub kkt: KktReport,
    /// MI after each outer iteration of the `V_P` search.
    pub vp_trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VSearchOptions {
    pub max_outer: usize,
    pub inner_steps: usize,
    pub restarts: usize,
    pub initial_step: f64,
    /// Stop once an outer iteration gains less than this (nats).
    pub tol: f64,
    pub seed: u64,
}

impl Default for VSearchOptions {
    fn default() -> Self {
        VSearchOptions {
            max_outer: 20,
            inner_steps: 8,
            restarts: 4,
            initial_step: 0.5,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// The `k` eigenvectors of `R_H` with the largest eigenvalues.
pub fn align_left_singvecs(ch: &Channel, k: usize) -> Matrix {
    ch.eig_vectors.columns(0, k.min(ch.p())).into_owned()
}

/// Given any `P`, builds `P̃ = M Qᵀ V_Pᵀ` with left factor `U_H` such that
/// `P̃ᵀ R_H P̃ = Pᵀ R_H P` and `Tr(P̃P̃ᵀ) ≤ Tr(PPᵀ)`.
pub fn align_improvement(ch: &Channel, p_any: &Precoder) -> Result<Precoder> {
    if p_any.p.nrows() != ch.p() {
        return Err(Error::Dimension(format!(
            "precoder has {} rows, channel has {} inputs",
            p_any.p.nrows(),
            ch.p()
        )));
    }
    let svd = &p_any.svd;
    let k = svd.singvals.len();
    let sigma = Matrix::from_diagonal(&svd.singvals);
    let inner = &sigma * svd.left.transpose() * &ch.gram * &svd.left * &sigma;
    let (delta, q) = sym_eigen_desc(&((&inner + inner.transpose()) * 0.5));
    let lam_sq = ch.lambda_sq();
    let scale = delta.amax().max(1.0);
    let mut sigma_m = Vector::zeros(k);
    for i in 0..k {
        let d = delta[i].max(0.0);
        if lam_sq[i] > 1e-14 * lam_sq[0].max(f64::MIN_POSITIVE) {
            sigma_m[i] = (d / lam_sq[i]).sqrt();
        } else {
            assert!(d <= 1e-10 * scale, "Gram rank exceeds channel rank");
        }
    }
    let m = align_left_singvecs(ch, k) * Matrix::from_diagonal(&sigma_m);
    Ok(Precoder::new(m * q.transpose() * svd.right.transpose()))
}

/// Gaussian-input power allocation: `σ_i² = max(0, μ − 1/λ_i²)` with
/// `Σ σ_i² = ρ`. Modes with `λ² = 0` get no power.
pub fn waterfilling(lam_sq: &[f64], rho: f64) -> Result<Vec<f64>> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("power must be positive, got {rho}")));
    }
    let mut order: Vec<usize> = (0..lam_sq.len()).filter(|&i| lam_sq[i] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::NoChannel);
    }
    order.sort_by(|&a, &b| lam_sq[b].partial_cmp(&lam_sq[a]).expect("finite gains"));
    let mut out = vec![0.0; lam_sq.len()];
    let mut inv_sum = 0.0;
    let mut level = 0.0;
    let mut used = 0;
    for (n, &i) in order.iter().enumerate() {
        inv_sum += 1.0 / lam_sq[i];
        let mu = (rho + inv_sum) / (n + 1) as f64;
        if mu > 1.0 / lam_sq[i] {
            level = mu;
            used = n + 1;
        } else {
            break;
        }
    }
    for &i in &order[..used] {
        out[i] = level - 1.0 / lam_sq[i];
    }
    Ok(out)
}

/// `Tr(Q R_H)`-maximizing precoder: all power on the strongest eigenvector
/// of `R_H`, split uniformly across a tied top eigenspace (at most `m`
/// directions).
pub fn low_snr_precoder(ch: &Channel, m: usize, rho: f64) -> Result<Precoder> {
    if !(rho > 0.0) || m == 0 {
        return Err(Error::InvalidArgument("need rho > 0 and m ≥ 1".into()));
    }
    let lam = ch.lambda_sq();
    let top = lam[0];
    let ties = lam.iter().take_while(|&&l| top - l <= TIE_RTOL * top.max(f64::MIN_POSITIVE)).count();
    let t = ties.min(m).max(1);
    Precoder::aligned(
        &align_left_singvecs(ch, t),
        &vec![rho / t as f64; t],
        &Matrix::identity(m, m),
    )
}

struct ModeEval {
    stats: ModalStats,
    /// `λ_i² mmse_i`.
    gains: Vec<f64>,
    /// `∂ gains_i / ∂ σ_j²`.
    dgains: Matrix,
}

fn eval_modes(lam_sq: &[f64], s2: &[f64], v: &Matrix, sig: &Signaling, noise: &NoiseSet) -> Result<ModeEval> {
    let stats = modal_stats(lam_sq, s2, v, sig, noise, true)?;
    let jac = jacobian_from_phi(lam_sq, stats.phi_sq.as_ref().expect("requested Φ moments"));
    let gains = lam_sq.iter().zip(&stats.mmse).map(|(l, e)| l * e).collect();
    let dgains = Matrix::from_fn(lam_sq.len(), lam_sq.len(), |i, j| lam_sq[i] * jac[(i, j)]);
    Ok(ModeEval { stats, gains, dgains })
}

fn kkt_residual(gains: &[f64], nu: f64, active: &[usize]) -> Vector {
    Vector::from_iterator(active.len(), active.iter().map(|&i| gains[i] - nu))
}

fn normalized(gains: &[f64], nu: f64) -> Vec<f64> {
    gains.iter().map(|g| if nu > 0.0 { g / nu - 1.0 } else { 0.0 }).collect()
}

/// Power allocation for fixed `V` against a given noise set.
fn solve_power(
    lam_sq: &[f64],
    v: &Matrix,
    sig: &Signaling,
    rho: f64,
    noise: &NoiseSet,
) -> Result<(Vec<f64>, KktReport, ModeEval)> {
    let k = lam_sq.len();
    let mut active: Vec<usize> = (0..k).filter(|&i| lam_sq[i] > 0.0).collect();
    if active.is_empty() {
        let s2 = vec![rho / k as f64; k];
        let ev = eval_modes(lam_sq, &s2, v, sig, noise)?;
        let report = KktReport {
            eta: 0.0,
            active: (0..k).collect(),
            residuals: vec![0.0; k],
            residual_history: vec![0.0],
            iterations: 0,
            converged: true,
        };
        return Ok((s2, report, ev));
    }
    let mut s2 = vec![0.0; k];
    for &i in &active {
        s2[i] = rho / active.len() as f64;
    }
    let mut ev = eval_modes(lam_sq, &s2, v, sig, noise)?;
    let mut nu = active.iter().map(|&i| ev.gains[i]).sum::<f64>() / active.len() as f64;
    let mut history = vec![kkt_residual(&ev.gains, nu, &active).norm()];
    let mut iterations = 0;

    loop {
        let res = normalized(&ev.gains, nu);
        let worst_active = active.iter().map(|&i| res[i].abs()).fold(0.0, f64::max);
        let mut stalled = false;
        if worst_active > NEWTON_TARGET && iterations < MAX_NEWTON_ITER {
            iterations += 1;
            let a = active.len();
            let mut jac = Matrix::zeros(a + 1, a + 1);
            let mut rhs = Vector::zeros(a + 1);
            for (r, &i) in active.iter().enumerate() {
                for (c, &j) in active.iter().enumerate() {
                    jac[(r, c)] = ev.dgains[(i, j)];
                }
                jac[(r, a)] = -1.0;
                jac[(a, r)] = 1.0;
                rhs[r] = -(ev.gains[i] - nu);
            }
            rhs[a] = rho - active.iter().map(|&i| s2[i]).sum::<f64>();
            let step = jac.clone().lu().solve(&rhs).unwrap_or_else(|| pinv(&jac, 1e-12) * &rhs);

            // Largest step keeping every active power nonnegative.
            let mut alpha_f = f64::INFINITY;
            let mut blocking = None;
            for (r, &i) in active.iter().enumerate() {
                if step[r] < 0.0 {
                    let t = s2[i] / -step[r];
                    if t < alpha_f {
                        alpha_f = t;
                        blocking = Some(i);
                    }
                }
            }
            let merit = kkt_residual(&ev.gains, nu, &active).norm();
            let mut alpha = alpha_f.min(1.0);
            let mut accepted = None;
            for _ in 0..=MAX_BACKTRACKS {
                let hits = alpha >= alpha_f;
                let mut cand = s2.clone();
                for (r, &i) in active.iter().enumerate() {
                    cand[i] = (s2[i] + alpha * step[r]).max(0.0);
                }
                let mut cand_active = active.clone();
                if hits {
                    let b = blocking.expect("finite alpha_f has a blocking mode");
                    cand[b] = 0.0;
                    cand_active.retain(|&i| i != b);
                }
                let cand_nu = nu + alpha * step[a];
                let cand_ev = eval_modes(lam_sq, &cand, v, sig, noise)?;
                let cand_merit = kkt_residual(&cand_ev.gains, cand_nu, &cand_active).norm();
                if cand_merit < merit || (hits && cand_active.len() < active.len() && cand_merit.is_finite()) {
                    accepted = Some((cand, cand_active, cand_nu, cand_ev, cand_merit));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((c, ca, cn, ce, cm)) => {
                    s2 = c;
                    active = ca;
                    nu = cn;
                    ev = ce;
                    history.push(cm);
                    if active.len() == 1 {
                        nu = ev.gains[active[0]];
                    }
                    continue;
                }
                None => stalled = true,
            }
        } else if worst_active > NEWTON_TARGET {
            stalled = true;
        }

        // Candidate solution: re-admit the most violated inactive mode.
        let readmit = (0..k)
            .filter(|i| !active.contains(i) && lam_sq[*i] > 0.0)
            .filter(|&i| res[i] > TOL_KKT)
            .max_by(|&a, &b| res[a].partial_cmp(&res[b]).expect("finite residuals"));
        match readmit {
            Some(i) if iterations < MAX_NEWTON_ITER && !stalled => {
                active.push(i);
                active.sort_unstable();
                history.push(kkt_residual(&ev.gains, nu, &active).norm());
            }
            _ => break,
        }
    }

    let residuals = normalized(&ev.gains, nu);
    let power_ok = (s2.iter().sum::<f64>() - rho).abs() <= 1e-8 * rho.max(1.0);
    let converged = power_ok
        && (0..k).all(|i| {
            if active.contains(&i) {
                residuals[i].abs() <= TOL_KKT
            } else {
                residuals[i] <= TOL_KKT
            }
        });
    let report = KktReport {
        eta: nu / 2.0,
        active,
        residuals,
        residual_history: history,
        iterations,
        converged,
    };
    Ok((s2, report, ev))
}

fn modes_for(ch: &Channel, m: usize) -> Vec<f64> {
    let k = ch.p().min(m);
    ch.lambda_sq().iter().take(k).cloned().collect()
}

/// Optimal per-mode powers for fixed `V` by damped active-set Newton on the
/// KKT system `λ_i² mmse_i = 2η` (active), `Σσ² = ρ`. All noise integrals use
/// one fixed node set, so the system is deterministic.
pub fn opt_power_alloc(
    ch: &Channel,
    sig: &Signaling,
    v: &Matrix,
    rho: f64,
    cfg: &IntegrationConfig,
) -> Result<(Vec<f64>, KktReport)> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("power must be positive, got {rho}")));
    }
    let lam_sq = modes_for(ch, sig.dim());
    let noise = noise_for(sig, lam_sq.len(), cfg)?;
    let (s2, report, _) = solve_power(&lam_sq, v, sig, rho, &noise)?;
    Ok((s2, report))
}

/// Riemannian gradient of `I` over the orthogonal group at `V`, for the
/// model `y' = D Vᵀ s + z`, `D = [diag(λσ) | 0]`.
fn v_gradient(lam_sq: &[f64], s2: &[f64], v: &Matrix, stats: &ModalStats) -> Matrix {
    let m = v.nrows();
    let mut dtd = Matrix::zeros(m, m);
    for i in 0..lam_sq.len() {
        dtd[(i, i)] = lam_sq[i] * s2[i];
    }
    // ∇_V I = 2c V E_ŝ DᵀD, where E_ŝ is the MMSE matrix of ŝ = Vᵀs.
    let a = &stats.mmse_matrix * dtd * (2.0 * IMMSE_DERIVATIVE_SCALE);
    v * ((&a - a.transpose()) * 0.5)
}

struct Restart {
    v: Matrix,
    s2: Vec<f64>,
    kkt: KktReport,
    stats: ModalStats,
    trace: Vec<f64>,
}

fn search_from(
    lam_sq: &[f64],
    v0: Matrix,
    sig: &Signaling,
    rho: f64,
    noise: &NoiseSet,
    opts: &VSearchOptions,
) -> Result<Restart> {
    let mi_at = |v: &Matrix, s2: &[f64]| -> Result<ModalStats> { modal_stats(lam_sq, s2, v, sig, noise, false) };
    let mut v = v0;
    let (mut s2, mut kkt, ev) = solve_power(lam_sq, &v, sig, rho, noise)?;
    let mut stats = ev.stats;
    let mut trace = vec![stats.mi];
    let mut step = opts.initial_step;
    for _ in 0..opts.max_outer {
        let start = stats.score();
        for _ in 0..opts.inner_steps {
            let xi = v_gradient(lam_sq, &s2, &v, &stats);
            let gn = xi.norm();
            if gn < 1e-300 {
                break;
            }
            // Steps along the unit direction, so the length does not depend
            // on how flat the landscape is.
            let dir = &xi / gn;
            let mut t = (2.0 * step).min(1.0);
            let mut moved = false;
            for _ in 0..MAX_BACKTRACKS {
                let cand = qr_orthonormal(&(&v + &dir * t));
                let st = mi_at(&cand, &s2)?;
                if st.score() >= stats.score() + 1e-4 * t * gn {
                    v = cand;
                    stats = modal_stats(lam_sq, &s2, &v, sig, noise, false)?;
                    step = t;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let (ns2, nkkt, nev) = solve_power(lam_sq, &v, sig, rho, noise)?;
        // Keep the previous allocation if re-solving did not help.
        if nev.stats.score() >= stats.score() {
            s2 = ns2;
            kkt = nkkt;
            stats = nev.stats;
        }
        trace.push(stats.mi);
        if stats.score() - start < opts.tol * stats.headroom() {
            break;
        }
    }
    Ok(Restart {
        v,
        s2,
        kkt,
        stats,
        trace,
    })
}

fn initial_v(m: usize, restart: usize, seed: u64) -> Matrix {
    if restart == 0 {
        return Matrix::identity(m, m);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart as u64));
    let mut v = random_orthogonal(&mut rng, m);
    // Alternate the two components of O(m).
    let want_negative = restart % 2 == 1;
    if (v.determinant() < 0.0) != want_negative {
        v.column_mut(0).neg_mut();
    }
    v
}

fn estimate(stats: &ModalStats, sig: &Signaling, cfg: &IntegrationConfig) -> MiEstimate {
    MiEstimate {
        nats: stats.mi.max(0.0),
        stderr: stats.mi_stderr,
        method: if sig.is_gaussian() {
            MiMethod::ClosedForm
        } else {
            cfg.method.into()
        },
    }
}

/// Alternating ascent over `(σ², V_P)`: power allocation for fixed `V_P`,
/// then Armijo-backtracked gradient steps on the orthogonal group with QR
/// retraction. Restarts run in parallel; the best is returned.
pub fn optimize_right_singvecs(
    ch: &Channel,
    sig: &Signaling,
    rho: f64,
    cfg: &IntegrationConfig,
    opts: &VSearchOptions,
) -> Result<PrecoderSolution> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("power must be positive, got {rho}")));
    }
    let m = sig.dim();
    let lam_sq = modes_for(ch, m);
    let noise = noise_for(sig, lam_sq.len(), cfg)?;
    let restarts = if m == 1 { 1 } else { opts.restarts.max(1) };
    let runs: Vec<Result<Restart>> = (0..restarts)
        .into_par_iter()
        .map(|r| search_from(&lam_sq, initial_v(m, r, opts.seed), sig, rho, &noise, opts))
        .collect();
    let mut best: Option<Restart> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.stats.score() > b.stats.score()) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let u = align_left_singvecs(ch, lam_sq.len());
    Ok(PrecoderSolution {
        precoder: Precoder::aligned(&u, &best.s2, &best.v)?,
        mi: estimate(&best.stats, sig, cfg),
        sigma_sq: best.s2,
        v: best.v,
        kkt: best.kkt,
        vp_trace: (m > 1).then_some(best.trace),
    })
}

/// The full pipeline: left factor aligned with `R_H`, optimal powers, and a
/// searched right factor.
pub fn max_performance(
    ch: &Channel,
    sig: &Signaling,
    rho: f64,
    cfg: &IntegrationConfig,
    opts: &VSearchOptions,
) -> Result<PrecoderSolution> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("power must be positive, got {rho}")));
    }
    let m = sig.dim();
    let lam_sq = modes_for(ch, m);
    let k = lam_sq.len();
    let u = align_left_singvecs(ch, k);
    let v = Matrix::identity(m, m);
    if lam_sq.iter().all(|&l| l == 0.0) {
        let s2 = vec![rho / k as f64; k];
        return Ok(PrecoderSolution {
            precoder: Precoder::aligned(&u, &s2, &v)?,
            sigma_sq: s2,
            v,
            mi: MiEstimate::exact(0.0),
            kkt: KktReport {
                eta: 0.0,
                active: (0..k).collect(),
                residuals: vec![0.0; k],
                residual_history: vec![0.0],
                iterations: 0,
                converged: true,
            },
            vp_trace: None,
        });
    }
    if sig.is_gaussian() {
        let s2 = waterfilling(&lam_sq, rho)?;
        let precoder = Precoder::aligned(&u, &s2, &v)?;
        let mi = mi_gaussian(&precoder.q(), &ch.gram)?;
        let active: Vec<usize> = (0..k).filter(|&i| s2[i] > 0.0).collect();
        let level = rho / active.len() as f64 + active.iter().map(|&i| 1.0 / lam_sq[i]).sum::<f64>() / active.len() as f64;
        let nu = 1.0 / level;
        let gains: Vec<f64> = (0..k).map(|i| lam_sq[i] / (1.0 + lam_sq[i] * s2[i])).collect();
        return Ok(PrecoderSolution {
            precoder,
            sigma_sq: s2,
            v,
            mi,
            kkt: KktReport {
                eta: nu / 2.0,
                active,
                residuals: normalized(&gains, nu),
                residual_history: vec![0.0],
                iterations: 0,
                converged: true,
            },
            vp_trace: None,
        });
    }
    optimize_right_singvecs(ch, sig, rho, cfg, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::make_constellation;
    use crate::infomeasures::{mi_for_precoder, mi_low_snr};
    use crate::matcalc::gaussian_matrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn bpsk(dims: usize) -> Signaling {
        make_constellation("bpsk", dims).unwrap().into()
    }

    fn gh() -> IntegrationConfig {
        IntegrationConfig::gauss_hermite(30)
    }

    fn rotation(theta: f64) -> Matrix {
        let (s, c) = theta.sin_cos();
        Matrix::from_row_slice(2, 2, &[c, -s, s, c])
    }

    #[test]
    fn waterfilling_examples() {
        assert_eq!(waterfilling(&[1.0, 0.25], 1.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(waterfilling(&[1.0, 1.0], 2.0).unwrap(), vec![1.0, 1.0]);
        let s = waterfilling(&[2.0, 0.5], 1e4).unwrap();
        assert_abs_diff_eq!(s[0] - s[1], 1.0 / 0.5 - 1.0 / 2.0, epsilon = 1e-9);
        assert_eq!(waterfilling(&[0.0, 0.0], 1.0), Err(Error::NoChannel));
        assert_eq!(waterfilling(&[0.5, 0.0, 2.0], 1.0).unwrap()[1], 0.0);
    }

    #[test]
    fn left_alignment() {
        let ch = Channel::diagonal(&[4.0, 1.0]).unwrap();
        assert_eq!(align_left_singvecs(&ch, 2), Matrix::identity(2, 2));
        let r = rotation(0.4);
        let h = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 1.0])) * r.transpose();
        let u = align_left_singvecs(&Channel::new(h).unwrap(), 2);
        for j in 0..2 {
            assert_abs_diff_eq!(u.column(j).dot(&r.column(j)).abs(), 1.0, epsilon = 1e-12);
        }
        // Repeated eigenvalues: only the span is determined.
        let u = align_left_singvecs(&Channel::diagonal(&[2.0, 2.0, 1.0]).unwrap(), 2);
        let proj = &u * u.transpose();
        assert_abs_diff_eq!(proj[(2, 2)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(proj.trace(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn align_improvement_examples() {
        let ch = Channel::diagonal(&[4.0, 1.0]).unwrap();
        let aligned = Precoder::new(Matrix::from_diagonal(&Vector::from_vec(vec![0.8, 0.3])));
        let out = align_improvement(&ch, &aligned).unwrap();
        assert_abs_diff_eq!(out.power, aligned.power, epsilon = 1e-12);

        // All power on the weak mode: same Gram for a quarter of the power.
        let weak = Precoder::new(Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
        let out = align_improvement(&ch, &weak).unwrap();
        let g_in = weak.p.transpose() * &ch.gram * &weak.p;
        let g_out = out.p.transpose() * &ch.gram * &out.p;
        assert!((g_in - g_out).amax() < 1e-12);
        assert_abs_diff_eq!(out.power, 0.25, epsilon = 1e-12);

        let iso = Channel::diagonal(&[1.0, 1.0]).unwrap();
        let p = Precoder::new(rotation(0.7) * 0.5);
        assert_abs_diff_eq!(align_improvement(&iso, &p).unwrap().power, p.power, epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn align_improvement_postconditions(seed in 0u64..u64::MAX, n in 1usize..4, p in 1usize..4, m in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ch = Channel::new(gaussian_matrix(&mut rng, n, p)).unwrap();
            let prec = Precoder::new(gaussian_matrix(&mut rng, p, m));
            let out = align_improvement(&ch, &prec).unwrap();
            let g_in = prec.p.transpose() * &ch.gram * &prec.p;
            let g_out = out.p.transpose() * &ch.gram * &out.p;
            prop_assert!((&g_in - &g_out).amax() <= 1e-8 * g_in.amax().max(1.0));
            prop_assert!(out.power <= prec.power + 1e-10);
        }
    }

    #[test]
    fn low_snr_beamformer() {
        let ch = Channel::diagonal(&[4.0, 1.0]).unwrap();
        let p = low_snr_precoder(&ch, 2, 1.0).unwrap();
        let q = p.q();
        assert!((&q - Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]))).amax() < 1e-12);
        assert_abs_diff_eq!(mi_low_snr(&q, &ch.gram).unwrap().nats, 2.0, epsilon = 1e-12);

        let iso = Channel::diagonal(&[1.0, 1.0]).unwrap();
        let q = low_snr_precoder(&iso, 2, 1.0).unwrap().q();
        assert!((&q - Matrix::identity(2, 2) * 0.5).amax() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ch = Channel::new(gaussian_matrix(&mut rng, 3, 3)).unwrap();
        let best = mi_low_snr(&low_snr_precoder(&ch, 3, 1.0).unwrap().q(), &ch.gram).unwrap().nats;
        for _ in 0..100 {
            let a = gaussian_matrix(&mut rng, 3, 3);
            let q = &a * a.transpose();
            let q = &q / q.trace();
            assert!(mi_low_snr(&q, &ch.gram).unwrap().nats <= best + 1e-12);
        }
    }

    #[test]
    fn newton_reproduces_waterfilling_for_gaussian_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let ch = Channel::new(gaussian_matrix(&mut rng, 3, 3)).unwrap();
            let rho = rng.random_range(0.1..10.0);
            let (s2, kkt) = opt_power_alloc(&ch, &Signaling::Gaussian { dim: 3 }, &Matrix::identity(3, 3), rho, &gh()).unwrap();
            let wf = waterfilling(ch.lambda_sq().as_slice(), rho).unwrap();
            assert!(kkt.converged, "{kkt:?}");
            for i in 0..3 {
                assert_abs_diff_eq!(s2[i], wf[i], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn single_mode_gets_all_power() {
        let ch = Channel::diagonal(&[0.7]).unwrap();
        let (s2, kkt) = opt_power_alloc(&ch, &bpsk(1), &Matrix::identity(1, 1), 3.0, &gh()).unwrap();
        assert_eq!(s2, vec![3.0]);
        assert!(kkt.converged);
    }

    #[test]
    fn symmetric_split() {
        let ch = Channel::diagonal(&[1.0, 1.0]).unwrap();
        let (s2, kkt) = opt_power_alloc(&ch, &bpsk(2), &Matrix::identity(2, 2), 2.0, &gh()).unwrap();
        assert_abs_diff_eq!(s2[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s2[1], 1.0, epsilon = 1e-9);
        assert!(kkt.converged);
    }

    #[test]
    fn kkt_with_shut_mode_and_monotone_residuals() {
        let ch = Channel::diagonal(&[4.0, 0.1]).unwrap();
        let (s2, kkt) = opt_power_alloc(&ch, &bpsk(2), &Matrix::identity(2, 2), 0.5, &gh()).unwrap();
        assert!(kkt.converged, "{kkt:?}");
        assert_eq!(kkt.active, vec![0]);
        assert_eq!(s2[1], 0.0);
        assert!(kkt.min_inactive_margin() > 0.0);

        let ch = Channel::diagonal(&[1.5, 0.8]).unwrap();
        let v = rotation(0.3);
        let (s2, kkt) = opt_power_alloc(&ch, &bpsk(2), &v, 2.0, &gh()).unwrap();
        assert!(kkt.converged);
        assert_abs_diff_eq!(s2.iter().sum::<f64>(), 2.0, epsilon = 1e-12);
        assert!(kkt.max_active_residual() <= TOL_KKT);
        for w in kkt.residual_history.windows(2) {
            assert!(w[1] <= w[0], "{:?}", kkt.residual_history);
        }
    }

    #[test]
    fn monte_carlo_kkt() {
        let ch = Channel::diagonal(&[2.0, 0.7]).unwrap();
        let (_, kkt) =
            opt_power_alloc(&ch, &bpsk(2), &rotation(0.5), 3.0, &IntegrationConfig::monte_carlo(5000, 4)).unwrap();
        assert!(kkt.converged, "{kkt:?}");
    }

    /// The Riemannian gradient against a finite difference along `V exp(tK)`.
    #[test]
    fn v_gradient_matches_finite_differences() {
        let sig = bpsk(2);
        let noise = noise_for(&sig, 2, &gh()).unwrap();
        let lam_sq = [1.0, 0.25];
        let s2 = [2.5, 1.5];
        let v = rotation(0.35);
        let st = modal_stats(&lam_sq, &s2, &v, &sig, &noise, false).unwrap();
        let xi = v_gradient(&lam_sq, &s2, &v, &st);
        let h = 1e-5;
        let mi = |t: f64| modal_stats(&lam_sq, &s2, &(&v * rotation(t)), &sig, &noise, false).unwrap().mi;
        let fd = (mi(h) - mi(-h)) / (2.0 * h);
        // Tangent direction of V·rotation(t) at t = 0.
        let dir = &v * Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_abs_diff_eq!(fd, xi.dot(&dir), epsilon = 1e-5);
    }

    #[test]
    fn gaussian_input_has_flat_v_landscape() {
        let sig = Signaling::Gaussian { dim: 2 };
        let noise = noise_for(&sig, 2, &gh()).unwrap();
        let st = modal_stats(&[1.0, 0.3], &[1.0, 2.0], &rotation(0.8), &sig, &noise, false).unwrap();
        assert!(v_gradient(&[1.0, 0.3], &[1.0, 2.0], &rotation(0.8), &st).amax() < 1e-12);
    }

    #[test]
    fn v_search_matches_rotation_grid() {
        let ch = Channel::diagonal(&[1.0, 0.25]).unwrap();
        let sig = bpsk(2);
        let rho = 4.0;
        let sol = optimize_right_singvecs(&ch, &sig, rho, &gh(), &VSearchOptions::default()).unwrap();
        let at_identity = {
            let (s2, _) = opt_power_alloc(&ch, &sig, &Matrix::identity(2, 2), rho, &gh()).unwrap();
            crate::infomeasures::mi_modal(&[1.0, 0.25], &s2, &Matrix::identity(2, 2), &sig, &gh()).unwrap().nats
        };
        assert!(sol.mi.nats >= at_identity - 1e-9);
        let grid = (0..360)
            .map(|i| {
                let v = rotation(PI * i as f64 / 360.0);
                let (s2, _) = opt_power_alloc(&ch, &sig, &v, rho, &gh()).unwrap();
                crate::infomeasures::mi_modal(&[1.0, 0.25], &s2, &v, &sig, &gh()).unwrap().nats
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(sol.mi.nats >= grid - 1e-5, "search {} grid {grid}", sol.mi.nats);
        assert!(sol.mi.nats <= grid + 1e-3, "search {} grid {grid}", sol.mi.nats);
        let trace = sol.vp_trace.unwrap();
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn max_performance_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = Channel::new(gaussian_matrix(&mut rng, 2, 2)).unwrap();
        let gauss = Signaling::Gaussian { dim: 2 };
        let sol = max_performance(&ch, &gauss, 2.0, &gh(), &VSearchOptions::default()).unwrap();
        let wf = waterfilling(ch.lambda_sq().as_slice(), 2.0).unwrap();
        assert_eq!(sol.sigma_sq, wf);
        let expect = 0.5 * ch.lambda_sq().iter().zip(&wf).map(|(l, s)| (1.0 + l * s).ln()).sum::<f64>();
        assert_abs_diff_eq!(sol.mi.nats, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.precoder.power, 2.0, epsilon = 1e-12);

        let zero = Channel::new(Matrix::zeros(2, 2)).unwrap();
        let sol = max_performance(&zero, &bpsk(2), 2.0, &gh(), &VSearchOptions::default()).unwrap();
        assert_eq!(sol.mi.nats, 0.0);
        assert_eq!(sol.sigma_sq, vec![1.0, 1.0]);

        let m1 = Channel::diagonal(&[0.5]).unwrap();
        let sol = max_performance(&m1, &bpsk(1), 2.0, &gh(), &VSearchOptions::default()).unwrap();
        assert_eq!(sol.sigma_sq, vec![2.0]);
        assert!(sol.vp_trace.is_none());
    }

    #[test]
    fn low_snr_limit_of_full_pipeline() {
        let ch = Channel::diagonal(&[1.0, 0.4]).unwrap();
        let rho = 1e-3;
        let sol = max_performance(&ch, &bpsk(2), rho, &gh(), &VSearchOptions::default()).unwrap();
        let beam = low_snr_precoder(&ch, 2, rho).unwrap();
        assert!((sol.precoder.q() - beam.q()).norm() <= 1e-2 * rho);
    }

    #[test]
    fn dominates_random_precoders() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ch = Channel::new(gaussian_matrix(&mut rng, 2, 2)).unwrap();
        let sig = bpsk(2);
        let rho = 2.0;
        let sol = max_performance(&ch, &sig, rho, &gh(), &VSearchOptions::default()).unwrap();
        for _ in 0..20 {
            let p = gaussian_matrix(&mut rng, 2, 2);
            let p = &p * (rho / p.norm_squared()).sqrt();
            let mi = mi_for_precoder(&ch, &p, &sig, &gh()).unwrap().nats;
            assert!(sol.mi.nats >= mi - 1e-6, "{} < {mi}", sol.mi.nats);
        }
    }
}
