//! Self-checks against independent oracles: closed forms, finite
//! differences, brute force and cross-solver agreement. Each check returns a
//! [`Check`]; [`suite`] runs them all.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{difference_set, make_constellation, normalize, Channel, DifferenceSet, Precoder};
use crate::error::Result;
use crate::estimator::{mmse_diag_for_model, mmse_jacobian, mmse_stats, posterior_mean, Signaling};
use crate::infomeasures::{mi_discrete, mi_for_precoder, mi_gaussian, mi_low_snr, mi_modal, IMMSE_DERIVATIVE_SCALE};
use crate::integration::IntegrationConfig;
use crate::jacobian::{dq_terms, fd_directional_mi, mmse_for_precoder, v_fixed_direction, QJacobian};
use crate::matcalc::{
    duplication_matrix, gaussian_matrix, pinv, random_orthogonal, symmetrizer_matrix, vec, vech, Matrix, Vector,
};
use crate::mindist::{
    d_min, max_min_dist, min_norm, min_power, reduce_minnorm_to_minpower, MaxMinOptions, MinNormInstance,
};
use crate::precoder_opt::{
    align_improvement, low_snr_precoder, max_performance, opt_power_alloc, waterfilling, VSearchOptions,
};

/// How many instances each check draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Budget {
    Reduced,
    Full,
}

impl Budget {
    fn pick(self, reduced: usize, full: usize) -> usize {
        match self {
            Budget::Reduced => reduced,
            Budget::Full => full,
        }
    }
}

/// Deliberate defects in the Q-Jacobian, used to show the checks bite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    None,
    /// Negates the direct term.
    JacobianSign,
    /// Negates the singular-vector coupling term.
    CouplingSign,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Check {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn bpsk(m: usize) -> Signaling {
    make_constellation("bpsk", m).expect("builtin").into()
}

fn gh() -> IntegrationConfig {
    IntegrationConfig::gauss_hermite(30)
}

fn mc(seed: u64) -> IntegrationConfig {
    IntegrationConfig::monte_carlo(20_000, seed)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random precoder of the given shape scaled to power `rho`.
fn random_precoder(rng: &mut ChaCha8Rng, p: usize, m: usize, rho: f64) -> Precoder {
    let a = gaussian_matrix(rng, p, m);
    Precoder::new(&a * (rho / a.norm_squared()).sqrt())
}

/// Decreasing per-mode gains drawn from `[lo, hi]`.
fn sorted_gains(rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut l: Vec<f64> = (0..k).map(|_| uniform(rng, lo, hi)).collect();
    l.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    l
}

/// Square instance with separated singular values for the Q-Jacobian.
fn jacobian_instance(rng: &mut ChaCha8Rng, n: usize) -> (Channel, Precoder) {
    loop {
        let ch = Channel::new(gaussian_matrix(rng, n, n)).expect("finite");
        let p = Precoder::new(gaussian_matrix(rng, n, n) * 0.6);
        let s = &p.svd.singvals;
        let gaps = (1..n).all(|i| s[i - 1] - s[i] > 0.1);
        // 30-node quadrature converges to ~1e-5 below this end-to-end gain.
        let moderate = (&ch.h * &p.p).norm() < 2.0;
        if gaps && s[n - 1] > 0.1 && s[0] < 2.0 && moderate {
            return (ch, p);
        }
    }
}

fn mutated_jacobian(ch: &Channel, prec: &Precoder, e_s: &Matrix, mutation: Mutation) -> Result<QJacobian> {
    let t = dq_terms(ch, prec, e_s)?;
    let row = match mutation {
        Mutation::None => &t.direct - &t.coupling,
        Mutation::JacobianSign => -&t.direct - &t.coupling,
        Mutation::CouplingSign => &t.direct + &t.coupling,
    };
    Ok(QJacobian {
        row,
        p: prec.p.clone(),
        e_s: e_s.clone(),
    })
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a = gaussian_matrix(rng, n, n);
    (&a + a.transpose()) * 0.5
}

/// Gaussian inputs: Newton power allocation equals waterfilling, and the
/// Q-Jacobian with `E = (I + PᵀRP)⁻¹` equals the derivative of
/// `½ log det(I + Q R)`.
pub fn gaussian_oracle_chain(budget: Budget, mutation: Mutation) -> Check {
    timed("gaussian-oracle-chain", || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let n = budget.pick(10, 20);
        let mut wf_err = 0.0f64;
        for i in 0..n {
            let m = 2 + i % 2;
            let ch = Channel::new(gaussian_matrix(&mut rng, m, m))?;
            let rho = uniform(&mut rng, 0.2, 10.0);
            let v = random_orthogonal(&mut rng, m);
            let (s2, _) = opt_power_alloc(&ch, &Signaling::Gaussian { dim: m }, &v, rho, &gh())?;
            let wf = waterfilling(&ch.lambda_sq().as_slice()[..m], rho)?;
            for (a, b) in s2.iter().zip(&wf) {
                wf_err = wf_err.max((a - b).abs());
            }
        }
        let mut jac_err = 0.0f64;
        for i in 0..n {
            let dim = 2 + i % 2;
            let (ch, prec) = jacobian_instance(&mut rng, dim);
            let id = Matrix::identity(dim, dim);
            let e_s = (&id + prec.p.transpose() * &ch.gram * &prec.p)
                .try_inverse()
                .expect("positive definite");
            let j = mutated_jacobian(&ch, &prec, &e_s, mutation)?;
            let a_inv = (&id + prec.q() * &ch.gram).try_inverse().expect("invertible");
            for _ in 0..3 {
                let s = random_symmetric(&mut rng, dim);
                let analytic = 0.5 * (&a_inv * &s * &ch.gram).trace();
                jac_err = jac_err.max((j.directional(&s) - analytic).abs() / analytic.abs().max(1.0));
            }
        }
        Ok((
            wf_err <= 1e-6 && jac_err <= 1e-6,
            format!("waterfilling max err {wf_err:.2e}, Jacobian max err {jac_err:.2e} (tol 1e-6)"),
        ))
    })
}

/// `dI/dσ_i² = ½ λ_i² mmse_i` against central differences of the MI.
pub fn immse_derivative(budget: Budget) -> Check {
    timed("immse-derivative", || {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let sig = bpsk(2);
        let mut worst = 0.0f64;
        for _ in 0..budget.pick(5, 10) {
            let lam = sorted_gains(&mut rng, 2, 0.3, 3.0);
            let s2: Vec<f64> = (0..2).map(|_| uniform(&mut rng, 0.1, 1.2)).collect();
            let v = random_orthogonal(&mut rng, 2);
            let mmse = mmse_diag_for_model(&lam, &s2, &v, &sig, &gh())?;
            for i in 0..2 {
                let h = 1e-4;
                let mut up = s2.clone();
                let mut down = s2.clone();
                up[i] += h;
                down[i] -= h;
                let fd = (mi_modal(&lam, &up, &v, &sig, &gh())?.nats - mi_modal(&lam, &down, &v, &sig, &gh())?.nats)
                    / (2.0 * h);
                worst = worst.max((fd - IMMSE_DERIVATIVE_SCALE * lam[i] * mmse[i]).abs());
            }
        }
        Ok((worst <= 5e-3, format!("max err {worst:.2e} (tol 5e-3, quadrature stderr 0)")))
    })
}

/// `d mmse_i / d σ_j² = −λ_j² E[Φ_ij²]` against central differences.
pub fn mmse_jacobian_fd(budget: Budget) -> Check {
    timed("mmse-jacobian", || {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let sig = bpsk(2);
        let mut worst = 0.0f64;
        for _ in 0..budget.pick(5, 10) {
            let lam = sorted_gains(&mut rng, 2, 0.3, 2.0);
            let s2: Vec<f64> = (0..2).map(|_| uniform(&mut rng, 0.1, 1.0)).collect();
            let v = random_orthogonal(&mut rng, 2);
            let jac = mmse_jacobian(&lam, &s2, &v, &sig, &gh())?;
            for j in 0..2 {
                let h = 1e-4;
                let mut up = s2.clone();
                let mut down = s2.clone();
                up[j] += h;
                down[j] -= h;
                let a = mmse_diag_for_model(&lam, &up, &v, &sig, &gh())?;
                let b = mmse_diag_for_model(&lam, &down, &v, &sig, &gh())?;
                for i in 0..2 {
                    worst = worst.max(((a[i] - b[i]) / (2.0 * h) - jac[(i, j)]).abs());
                }
            }
        }
        Ok((worst <= 5e-3, format!("max err {worst:.2e} (tol 5e-3)")))
    })
}

/// KKT conditions at the Newton allocation, including shut modes.
pub fn kkt_conditions(budget: Budget) -> Check {
    timed("kkt-conditions", || {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let sig = bpsk(2);
        let mut cases: Vec<(Vec<f64>, Matrix, f64)> = vec![
            (vec![4.0, 0.1], Matrix::identity(2, 2), 0.3),
            (vec![3.2, 0.2], Matrix::identity(2, 2), 0.5),
        ];
        for _ in 0..budget.pick(4, 8) {
            let lam = sorted_gains(&mut rng, 2, 0.2, 3.0);
            cases.push((lam, random_orthogonal(&mut rng, 2), uniform(&mut rng, 0.3, 6.0)));
        }
        let (mut res, mut margin, mut shut, mut all_conv) = (0.0f64, f64::INFINITY, 0, true);
        for (lam, v, rho) in &cases {
            let ch = Channel::diagonal(lam)?;
            let (_, kkt) = opt_power_alloc(&ch, &sig, v, *rho, &gh())?;
            all_conv &= kkt.converged;
            res = res.max(kkt.max_active_residual());
            margin = margin.min(kkt.min_inactive_margin());
            if kkt.active.len() < lam.len() {
                shut += 1;
            }
        }
        Ok((
            all_conv && res <= 1e-5 && margin >= -1e-5 && shut >= 2,
            format!(
                "{} cases, {shut} with a shut mode, max active residual {res:.2e}, min inactive margin {}",
                cases.len(),
                if margin.is_finite() { format!("{margin:.2e}") } else { "n/a".into() }
            ),
        ))
    })
}

/// Midpoint-type concavity of the MI in the per-mode powers for fixed `V`.
pub fn concavity(budget: Budget) -> Check {
    timed("concavity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        let sig = bpsk(2);
        let mut worst = f64::INFINITY;
        let draws = budget.pick(20, 50);
        for d in 0..draws {
            let lam = sorted_gains(&mut rng, 2, 0.3, 2.0);
            let v = random_orthogonal(&mut rng, 2);
            let a: Vec<f64> = (0..2).map(|_| uniform(&mut rng, 0.0, 3.0)).collect();
            let b: Vec<f64> = (0..2).map(|_| uniform(&mut rng, 0.0, 3.0)).collect();
            let t = [0.25, 0.5, 0.75][d % 3];
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            let cfg = mc(d as u64);
            let (ia, ib, im) = (
                mi_modal(&lam, &a, &v, &sig, &cfg)?,
                mi_modal(&lam, &b, &v, &sig, &cfg)?,
                mi_modal(&lam, &mix, &v, &sig, &cfg)?,
            );
            let se = (im.stderr.powi(2) + (t * ia.stderr).powi(2) + ((1.0 - t) * ib.stderr).powi(2)).sqrt();
            let gap = im.nats - t * ia.nats - (1.0 - t) * ib.nats;
            worst = worst.min(gap + 3.0 * se);
        }
        Ok((worst >= 0.0, format!("{draws} draws, min (gap + 3 stderr) {worst:.2e}")))
    })
}

/// Left alignment keeps the Gram matrix and never raises the power, and
/// the optimized design beats random precoders of the same power.
pub fn alignment(budget: Budget) -> Check {
    timed("alignment", || {
        let mut rng = ChaCha8Rng::seed_from_u64(106);
        let (mut gram_err, mut power_excess) = (0.0f64, f64::NEG_INFINITY);
        for i in 0..100 {
            let p = 2 + i % 2;
            let m = 1 + i % 3;
            let ch = Channel::new(gaussian_matrix(&mut rng, 1 + i % 3, p))?;
            let rho = uniform(&mut rng, 0.1, 5.0);
            let prec = random_precoder(&mut rng, p, m, rho);
            let al = align_improvement(&ch, &prec)?;
            let g0 = prec.p.transpose() * &ch.gram * &prec.p;
            let g1 = al.p.transpose() * &ch.gram * &al.p;
            gram_err = gram_err.max((g1 - &g0).amax() / g0.amax().max(1.0));
            power_excess = power_excess.max(al.power - prec.power);
        }
        let sig = bpsk(2);
        let mut worst = f64::INFINITY;
        for s in 0..budget.pick(2, 5) {
            let ch = Channel::new(gaussian_matrix(&mut rng, 2, 2))?;
            let rho = uniform(&mut rng, 0.5, 4.0);
            let sol = max_performance(&ch, &sig, rho, &IntegrationConfig::gauss_hermite(20), &VSearchOptions::default())?;
            let cfg = mc(1000 + s as u64);
            let best = mi_for_precoder(&ch, &sol.precoder.p, &sig, &cfg)?;
            for _ in 0..budget.pick(20, 50) {
                let r = mi_for_precoder(&ch, &random_precoder(&mut rng, 2, 2, rho).p, &sig, &cfg)?;
                worst = worst.min(best.nats - r.nats + 3.0 * best.combined_stderr(&r));
            }
        }
        Ok((
            gram_err <= 1e-8 && power_excess <= 1e-10 && worst >= 0.0,
            format!(
                "Gram err {gram_err:.2e}, power excess {power_excess:.2e}, min (MI margin + 3 stderr) {worst:.2e}"
            ),
        ))
    })
}

/// At very low SNR the MI is `½ Tr(Q R)` and the optimum is beamforming.
pub fn low_snr(budget: Budget) -> Check {
    timed("low-snr", || {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let sig = bpsk(2);
        let (mut mi_err, mut q_err) = (0.0f64, 0.0f64);
        let mut count = 0;
        while count < budget.pick(3, 5) {
            let ch = Channel::new(gaussian_matrix(&mut rng, 2, 2))?;
            let lam = ch.lambda_sq();
            if lam[0] < 1.5 * lam[1] {
                continue;
            }
            count += 1;
            let rho = 1e-3 / lam[0];
            let sol = max_performance(&ch, &sig, rho, &IntegrationConfig::gauss_hermite(20), &VSearchOptions::default())?;
            let q = sol.precoder.q();
            let first = mi_low_snr(&q, &ch.gram)?.nats;
            mi_err = mi_err.max((sol.mi.nats - first).abs() - 3.0 * sol.mi.stderr);
            let bf = low_snr_precoder(&ch, 2, rho)?.q();
            q_err = q_err.max((q - bf).norm() / rho);
        }
        Ok((
            mi_err <= 1e-4 && q_err <= 1e-2,
            format!("max |I − ½Tr(QR)| − 3 stderr {mi_err:.2e} (tol 1e-4), max ‖Q − Q_bf‖/ρ {q_err:.2e} (tol 1e-2)"),
        ))
    })
}

/// The MI through `y` equals the MI through `PᵀHᵀy`, and precoders with
/// equal `PᵀRP` give equal MI.
pub fn sufficient_statistic(budget: Budget) -> Check {
    timed("sufficient-statistic", || {
        let mut rng = ChaCha8Rng::seed_from_u64(108);
        let sig = bpsk(2);
        let mut worst = 0.0f64;
        for s in 0..budget.pick(3, 5) {
            let ch = Channel::new(gaussian_matrix(&mut rng, 3, 2))?;
            let rho = uniform(&mut rng, 0.5, 3.0);
            let prec = random_precoder(&mut rng, 2, 2, rho);
            let direct = mi_discrete(&(&ch.h * &prec.p), &sig, &mc(2000 + s as u64))?;
            let stat = mi_for_precoder(&ch, &prec.p, &sig, &mc(3000 + s as u64))?;
            worst = worst.max((direct.nats - stat.nats).abs() / (3.0 * direct.combined_stderr(&stat)));
            // Same Gram through a different precoder: P₂ = R^{-½} O R^{½} P.
            let (vals, vecs) = crate::matcalc::sym_eigen_desc(&ch.gram);
            let half = &vecs * Matrix::from_diagonal(&vals.map(f64::sqrt)) * vecs.transpose();
            let inv_half = &vecs * Matrix::from_diagonal(&vals.map(|x| 1.0 / x.sqrt())) * vecs.transpose();
            let p2 = inv_half * random_orthogonal(&mut rng, 2) * half * &prec.p;
            let other = mi_for_precoder(&ch, &p2, &sig, &mc(4000 + s as u64))?;
            worst = worst.max((other.nats - stat.nats).abs() / (3.0 * other.combined_stderr(&stat)));
        }
        Ok((worst <= 1.0, format!("max |ΔI| / (3 combined stderr) = {worst:.2}")))
    })
}

/// MaxMinDist and MinPower invert each other, and the optimum scales
/// linearly with the power.
pub fn duality_and_scaling(budget: Budget) -> Check {
    timed("duality-scaling", || {
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let opts = MaxMinOptions::default();
        let (mut rt, mut scale, mut floor) = (0.0f64, 0.0f64, f64::INFINITY);
        let mut heuristic = false;
        for i in 0..budget.pick(5, 10) {
            let ds = match i % 3 {
                0 => difference_set(&make_constellation("bpsk", 2)?)?,
                1 => difference_set(&make_constellation("qpsk-as-2d", 2)?)?,
                _ => DifferenceSet::unstructured(
                    (0..4).map(|_| gaussian_matrix(&mut rng, 2, 1).column(0).into_owned()).collect(),
                )?,
            };
            let ch = Channel::new(gaussian_matrix(&mut rng, 2 + i % 2, 2))?;
            let rho = uniform(&mut rng, 0.5, 5.0);
            let d = max_min_dist(rho, &ds, &ch, &opts)?;
            heuristic |= d.heuristic;
            let back = min_power(d.value, &ds, &ch, &opts)?;
            rt = rt.max((back.power.unwrap_or(f64::NAN) - rho).abs() / rho);
            let target = uniform(&mut rng, 0.5, 5.0);
            let mp = min_power(target, &ds, &ch, &opts)?;
            floor = floor.min(mp.value - (target - 1e-8));
            let mm = max_min_dist(mp.power.unwrap_or(f64::NAN), &ds, &ch, &opts)?;
            rt = rt.max((mm.value - target).abs() / target);
            let alpha = uniform(&mut rng, 0.1, 10.0);
            let scaled = max_min_dist(alpha * rho, &ds, &ch, &opts)?;
            let (pa, pb) = (&d.precoder.as_ref().expect("precoder").p, &scaled.precoder.as_ref().expect("precoder").p);
            scale = scale
                .max((scaled.value - alpha * d.value).abs() / scaled.value)
                .max((pb - pa * alpha.sqrt()).amax() / pb.amax());
        }
        Ok((
            !heuristic && rt <= 1e-6 && scale <= 1e-12 && floor >= 0.0,
            format!("round trip rel err {rt:.2e} (tol 1e-6), scaling rel err {scale:.2e}, exact path: {}", !heuristic),
        ))
    })
}

/// MinNorm through MinPower and MaxMinDist agrees with enumeration.
pub fn reduction_chain(budget: Budget) -> Check {
    timed("reduction-chain", || {
        let mut rng = ChaCha8Rng::seed_from_u64(110);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut instances = vec![MinNormInstance::new(vec![
            Vector::from_column_slice(&[1.0, 0.0]),
            Vector::from_column_slice(&[r, r]),
        ])?];
        for i in 0..budget.pick(5, 9) {
            let m = 1 + i % 4;
            instances.push(MinNormInstance::new(
                (0..m).map(|_| gaussian_matrix(&mut rng, m, 1).column(0).into_owned()).collect(),
            )?);
        }
        let (mut err, mut rows, mut heuristic) = (0.0f64, 0.0f64, false);
        let s = 2f64.sqrt() - 1.0;
        let mut worked = 0.0;
        for (i, inst) in instances.iter().enumerate() {
            let (t, _) = min_norm(inst)?;
            if i == 0 {
                worked = (t - (1.0 + s * s)).abs();
            }
            let red = reduce_minnorm_to_minpower(inst, &MaxMinOptions::default())?;
            heuristic |= red.heuristic;
            err = err.max((red.t - t).abs() / t);
            let m = inst.dim();
            if m > 1 {
                rows = rows.max(red.precoder.p.rows(1, m - 1).amax());
            }
        }
        Ok((
            !heuristic && err <= 1e-6 && rows <= 1e-8 && worked <= 1e-12,
            format!(
                "{} instances, rel err {err:.2e} (tol 1e-6), lower rows {rows:.1e}, worked instance err {worked:.1e}",
                instances.len()
            ),
        ))
    })
}

/// At high SNR the MI-optimal precoder nearly maximizes the minimum distance.
pub fn high_snr_link(budget: Budget) -> Check {
    timed("high-snr-link", || {
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let c = make_constellation("bpsk", 2)?;
        let ds = difference_set(&c)?;
        let sig = Signaling::from(c);
        let mut channels = vec![Matrix::identity(2, 2), Matrix::from_diagonal(&Vector::from_column_slice(&[1.0, 0.6]))];
        // Beyond a modest eigenvalue spread the equivocation underflows at
        // ρλ²_min = 40 and the MI no longer ranks precoders.
        while channels.len() < 2 + budget.pick(1, 3) {
            let h = gaussian_matrix(&mut rng, 2, 2);
            let l = Channel::new(h.clone())?.eig_values_sq;
            if l[0] <= 4.0 * l[1] {
                channels.push(h);
            }
        }
        let mut worst = f64::INFINITY;
        for h in channels.iter() {
            let ch = Channel::new(h.clone())?;
            let rho = 40.0 / ch.lambda_sq()[1];
            let dstar = max_min_dist(rho, &ds, &ch, &MaxMinOptions::default())?.value;
            let sol = max_performance(&ch, &sig, rho, &gh(), &VSearchOptions::default())?;
            worst = worst.min(d_min(&ch, &sol.precoder, &ds)?.value / dstar);
        }
        Ok((
            worst >= 0.9,
            format!("{} channels at ρλ²_min = 40 (spread ≤ 4), min d_min(MI-opt)/d⋆ = {worst:.4} (tol 0.9)", channels.len()),
        ))
    })
}

/// Fixed seeds give bit-identical results.
pub fn determinism(_budget: Budget) -> Check {
    timed("determinism", || {
        let mut rng = ChaCha8Rng::seed_from_u64(112);
        let ch = Channel::new(gaussian_matrix(&mut rng, 2, 2))?;
        let sig = bpsk(2);
        let run = || max_performance(&ch, &sig, 2.0, &mc(5), &VSearchOptions::default());
        let (a, b) = (run()?, run()?);
        let ds = difference_set(&make_constellation("bpsk", 3)?)?;
        let ch3 = Channel::new(gaussian_matrix(&mut rng, 3, 3))?;
        let opts = MaxMinOptions { starts: 4, ..Default::default() };
        let (x, y) = (max_min_dist(1.0, &ds, &ch3, &opts)?, max_min_dist(1.0, &ds, &ch3, &opts)?);
        let same = a.precoder == b.precoder && a.mi == b.mi && a.kkt == b.kkt && x == y;
        Ok((same, "repeated optimize and heuristic MaxMinDist runs are bit-identical".into()))
    })
}

/// Chain-rule finite differences for discrete inputs along directions that
/// keep `V_P` fixed; catches a wrong sign in either Jacobian term.
pub fn jacobian_chain_rule(budget: Budget, mutation: Mutation) -> Check {
    timed("jacobian-chain-rule", || {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let sig = bpsk(2);
        let mut worst = 0.0f64;
        for _ in 0..budget.pick(5, 10) {
            let (ch, prec) = jacobian_instance(&mut rng, 2);
            let e = mmse_for_precoder(&ch, &prec.p, &sig, &gh())?;
            let j = mutated_jacobian(&ch, &prec, &e, mutation)?;
            let delta = v_fixed_direction(&prec, &gaussian_matrix(&mut rng, 2, 2));
            let dq = &delta * prec.p.transpose() + &prec.p * delta.transpose();
            let fd = fd_directional_mi(&ch, &prec, &delta, &sig, &gh(), 1e-4)?;
            worst = worst.max((j.directional(&dq) - fd).abs());
        }
        Ok((worst <= 1e-3, format!("max err {worst:.2e} (tol 1e-3)")))
    })
}

/// The two Jacobian mutants are caught by the checks meant for them.
pub fn mutants_detected(budget: Budget) -> Check {
    timed("mutants-detected", || {
        let direct = gaussian_oracle_chain(budget, Mutation::JacobianSign);
        let coupling = jacobian_chain_rule(budget, Mutation::CouplingSign);
        Ok((
            !direct.passed && !coupling.passed,
            format!(
                "direct-sign mutant caught: {}, coupling-sign mutant caught: {}",
                !direct.passed, !coupling.passed
            ),
        ))
    })
}

/// Matrix-calculus identities, pseudoinverse, channel and alphabet
/// invariants, estimator bounds.
pub fn structural_invariants(_budget: Budget) -> Check {
    timed("structural-invariants", || {
        let mut rng = ChaCha8Rng::seed_from_u64(114);
        let mut fails: Vec<String> = Vec::new();
        for n in 1..=4 {
            let s = random_symmetric(&mut rng, n);
            if (duplication_matrix(n) * vech(&s) - vec(&s)).amax() > 1e-12 {
                fails.push(format!("duplication n={n}"));
            }
            let a = gaussian_matrix(&mut rng, n, n);
            if (symmetrizer_matrix(n) * vec(&a) - vec(&((&a + a.transpose()) * 0.5))).amax() > 1e-12 {
                fails.push(format!("symmetrizer n={n}"));
            }
        }
        for rank in 0..=3 {
            let a = gaussian_matrix(&mut rng, 4, rank) * gaussian_matrix(&mut rng, rank, 3);
            let x = pinv(&a, 1e-10);
            let ok = (&a * &x * &a - &a).amax() < 1e-9
                && (&x * &a * &x - &x).amax() < 1e-9
                && ((&a * &x).transpose() - &a * &x).amax() < 1e-9
                && ((&x * &a).transpose() - &x * &a).amax() < 1e-9;
            if !ok {
                fails.push(format!("Penrose rank {rank}"));
            }
        }
        let ch = Channel::new(gaussian_matrix(&mut rng, 3, 3))?;
        let rebuilt = &ch.eig_vectors * Matrix::from_diagonal(&ch.eig_values_sq) * ch.eig_vectors.transpose();
        if (rebuilt - &ch.gram).amax() > 1e-8 || ch.eig_values_sq.iter().zip(ch.eig_values_sq.iter().skip(1)).any(|(a, b)| a < b) {
            fails.push("channel eigendecomposition".into());
        }
        for name in ["bpsk", "pam4", "qpsk-as-2d", "qam16-as-2d"] {
            let c = make_constellation(name, 2)?;
            let ds = difference_set(&c)?;
            if ds.diffs.iter().any(|e| !ds.diffs.iter().any(|f| (e + f).amax() < 1e-12)) {
                fails.push(format!("{name} difference set not symmetric"));
            }
            let again = normalize(c.points().to_vec(), c.priors().to_vec())?;
            if again.points().iter().zip(c.points()).any(|(a, b)| (a - b).amax() > 1e-10) {
                fails.push(format!("{name} normalize not idempotent"));
            }
        }
        let c = make_constellation("qam16-as-2d", 2)?;
        let sig: Signaling = c.clone().into();
        let g = gaussian_matrix(&mut rng, 2, 2) * 2.0;
        let far = Vector::from_column_slice(&[1e3, -1e3]);
        if posterior_mean(&g, &c, &far)?.iter().any(|x| !x.is_finite()) {
            fails.push("posterior mean overflow".into());
        }
        let st = mmse_stats(&g, &sig, &mc(9))?;
        if st.mmse_matrix.trace() > 2.0 + 3.0 * st.stderr.diagonal().sum() {
            fails.push("MMSE trace above prior".into());
        }
        let q = Matrix::identity(2, 2) * 0.7;
        let mi = mi_discrete(&(g.clone() * 0.7f64.sqrt()), &sig, &gh())?;
        let gauss = mi_gaussian(&q, &(g.transpose() * &g))?;
        if mi.nats > gauss.nats.min(16f64.ln()) + 1e-9 {
            fails.push("discrete MI above Gaussian bound".into());
        }
        let passed = fails.is_empty();
        Ok((
            passed,
            if passed { "all identities hold".into() } else { fails.join("; ") },
        ))
    })
}

/// Every check at the given budget.
pub fn suite(budget: Budget, mutation: Mutation) -> Vec<Check> {
    let mut out = vec![
        structural_invariants(budget),
        gaussian_oracle_chain(budget, mutation),
        immse_derivative(budget),
        mmse_jacobian_fd(budget),
        kkt_conditions(budget),
        concavity(budget),
        alignment(budget),
        low_snr(budget),
        sufficient_statistic(budget),
        duality_and_scaling(budget),
        reduction_chain(budget),
        high_snr_link(budget),
        jacobian_chain_rule(budget, mutation),
        determinism(budget),
    ];
    if mutation == Mutation::None {
        out.push(mutants_detected(budget));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_checks_pass() {
        for c in [
            structural_invariants(Budget::Reduced),
            gaussian_oracle_chain(Budget::Reduced, Mutation::None),
            reduction_chain(Budget::Reduced),
        ] {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn direct_sign_mutant_fails_gaussian_oracle() {
        let c = gaussian_oracle_chain(Budget::Reduced, Mutation::JacobianSign);
        assert!(!c.passed, "{}", c.detail);
    }
}
