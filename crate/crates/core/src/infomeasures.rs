//! Mutual information in nats: the Gaussian closed form, the discrete-input
//! estimate and the first-order low-SNR expansion.

use serde::{Deserialize, Serialize};

use crate::channel::{statistic_gain, Channel};
use crate::error::{Error, Result};
use crate::estimator::{modal_stats, noise_for, pass, Signaling};
use crate::integration::{IntegrationConfig, Method};
use crate::matcalc::{is_symmetric, sqrtm_psd, sym_eigen_desc, Matrix};

/// Constant `c` in `dI/dσ_i² = c · λ_i² · mmse_i` for the real-valued model.
///
/// Pinned by the finite-difference test in this module. With this value the
/// KKT stationarity condition reads `λ_i² · mmse_i = 2η`.
pub const IMMSE_DERIVATIVE_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiMethod {
    ClosedForm,
    LowSnr,
    GaussHermite,
    MonteCarlo,
}

impl From<Method> for MiMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::GaussHermite => MiMethod::GaussHermite,
            Method::MonteCarlo => MiMethod::MonteCarlo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub nats: f64,
    /// Zero for closed forms and quadrature.
    pub stderr: f64,
    pub method: MiMethod,
}

impl MiEstimate {
    pub fn exact(nats: f64) -> Self {
        MiEstimate {
            nats,
            stderr: 0.0,
            method: MiMethod::ClosedForm,
        }
    }

    pub fn bits(&self) -> f64 {
        self.nats / std::f64::consts::LN_2
    }

    /// Standard error of a difference of two independent estimates.
    pub fn combined_stderr(&self, other: &MiEstimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

fn check_psd(q: &Matrix, gram: &Matrix) -> Result<()> {
    if q.shape() != gram.shape() || !q.is_square() {
        return Err(Error::Dimension(format!(
            "Q is {:?}, R_H is {:?}",
            q.shape(),
            gram.shape()
        )));
    }
    if !is_symmetric(q, 1e-10) {
        return Err(Error::NotPositiveSemidefinite);
    }
    let (vals, _) = sym_eigen_desc(q);
    let scale = vals.amax().max(1.0);
    if vals.iter().any(|&v| v < -1e-10 * scale) {
        return Err(Error::NotPositiveSemidefinite);
    }
    Ok(())
}

/// `½ log det(I + Q R_H)` for Gaussian input with covariance `Q`.
pub fn mi_gaussian(q: &Matrix, gram: &Matrix) -> Result<MiEstimate> {
    check_psd(q, gram)?;
    // det(I + QR) = det(I + Q^{1/2} R Q^{1/2}), which is symmetric.
    let s = sqrtm_psd(q)?;
    let n = q.nrows();
    let a = Matrix::identity(n, n) + &s * gram * &s;
    let a = (&a + a.transpose()) * 0.5;
    let chol = a.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok(MiEstimate::exact(0.5 * logdet))
}

/// First-order expansion `½ Tr(Q R_H)`; accurate when `ρ λ_max ≲ 0.01`.
pub fn mi_low_snr(q: &Matrix, gram: &Matrix) -> Result<MiEstimate> {
    if q.shape() != gram.shape() {
        return Err(Error::Dimension(format!("Q is {:?}, R_H is {:?}", q.shape(), gram.shape())));
    }
    Ok(MiEstimate {
        nats: 0.5 * q.component_mul(gram).sum(),
        stderr: 0.0,
        method: MiMethod::LowSnr,
    })
}

/// `I(s; y)` for `y = G s + z`, `z ~ N(0, I)`.
pub fn mi_discrete(g: &Matrix, sig: &Signaling, cfg: &IntegrationConfig) -> Result<MiEstimate> {
    if sig.is_gaussian() {
        let st = pass(g, sig, &noise_for(sig, 0, cfg)?, false)?;
        return Ok(MiEstimate::exact(st.mi));
    }
    let noise = noise_for(sig, g.nrows(), cfg)?;
    let st = pass(g, sig, &noise, false)?;
    if let Some(target) = cfg.stderr_target {
        if st.mi_stderr > target {
            return Err(Error::IntegrationBudget {
                achieved: st.mi_stderr,
                target,
            });
        }
    }
    Ok(MiEstimate {
        nats: st.mi.max(0.0),
        stderr: st.mi_stderr,
        method: cfg.method.into(),
    })
}

/// `I(s; HPs + z)`, evaluated through the sufficient statistic `PᵀHᵀy` so
/// the noise dimension is the number of streams `m` rather than `n`.
pub fn mi_for_precoder(ch: &Channel, p: &Matrix, sig: &Signaling, cfg: &IntegrationConfig) -> Result<MiEstimate> {
    if p.ncols() != sig.dim() {
        return Err(Error::Dimension(format!(
            "precoder has {} columns, input dim {}",
            p.ncols(),
            sig.dim()
        )));
    }
    let b = statistic_gain(ch, p)?;
    mi_discrete(&b, sig, cfg)
}

/// `I` of the modal model `y' = Λ_H Σ_P Vᵀ s + z`.
pub fn mi_modal(
    lam_sq: &[f64],
    sigma_sq: &[f64],
    v: &Matrix,
    sig: &Signaling,
    cfg: &IntegrationConfig,
) -> Result<MiEstimate> {
    let noise = noise_for(sig, lam_sq.len(), cfg)?;
    let st = modal_stats(lam_sq, sigma_sq, v, sig, &noise, false)?;
    Ok(MiEstimate {
        nats: st.mi.max(0.0),
        stderr: st.mi_stderr,
        method: if sig.is_gaussian() {
            MiMethod::ClosedForm
        } else {
            cfg.method.into()
        },
    })
}

/// `dI/dσ_i² = IMMSE_DERIVATIVE_SCALE · λ_i² · mmse_i(Σ, V)` for each mode.
pub fn mi_gradient_sigma_sq(
    lam_sq: &[f64],
    sigma_sq: &[f64],
    v: &Matrix,
    sig: &Signaling,
    cfg: &IntegrationConfig,
) -> Result<Vec<f64>> {
    let noise = noise_for(sig, lam_sq.len(), cfg)?;
    let st = modal_stats(lam_sq, sigma_sq, v, sig, &noise, false)?;
    Ok(lam_sq
        .iter()
        .zip(&st.mmse)
        .map(|(l, e)| IMMSE_DERIVATIVE_SCALE * l * e)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::make_constellation;
    use crate::integration::{gauss_hermite_rule, NoiseSet};
    use crate::matcalc::random_orthogonal;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn bpsk(dims: usize) -> Signaling {
        make_constellation("bpsk", dims).unwrap().into()
    }

    fn gh() -> IntegrationConfig {
        IntegrationConfig::gauss_hermite(30)
    }

    /// `log 2 − E[log(1 + exp(−2(g² + g u)))]`, `u ~ N(0, 1)`, on 120 nodes.
    fn bpsk_mi_oracle(g: f64) -> f64 {
        let (x, w) = gauss_hermite_rule(120);
        let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
        LN_2 - x
            .iter()
            .zip(&w)
            .map(|(u, w)| w * softplus(-2.0 * (g * g + g * u)))
            .sum::<f64>()
    }

    #[test]
    fn gaussian_closed_forms() {
        let z = Matrix::zeros(2, 2);
        assert_eq!(mi_gaussian(&z, &Matrix::identity(2, 2)).unwrap().nats, 0.0);
        let mi = mi_gaussian(&Matrix::from_element(1, 1, 3.0), &Matrix::identity(1, 1)).unwrap();
        assert_abs_diff_eq!(mi.nats, LN_2, epsilon = 1e-14);
        let r = Matrix::from_diagonal(&crate::matcalc::Vector::from_vec(vec![1.0, 3.0]));
        let mi = mi_gaussian(&Matrix::identity(2, 2), &r).unwrap();
        assert_abs_diff_eq!(mi.nats, 0.5 * (2f64.ln() + 4f64.ln()), epsilon = 1e-14);
        assert_abs_diff_eq!(mi.nats, 1.0397, epsilon = 1e-4);
        assert_eq!(mi.stderr, 0.0);
        let bad = Matrix::from_diagonal(&crate::matcalc::Vector::from_vec(vec![1.0, -1.0]));
        assert_eq!(mi_gaussian(&bad, &r), Err(Error::NotPositiveSemidefinite));
    }

    #[test]
    fn low_snr_trace() {
        let r = Matrix::from_diagonal(&crate::matcalc::Vector::from_vec(vec![1.0, 3.0]));
        assert_eq!(mi_low_snr(&Matrix::zeros(2, 2), &r).unwrap().nats, 0.0);
        let eps = 1e-3;
        let mi = mi_low_snr(&(Matrix::identity(2, 2) * eps), &r).unwrap();
        assert_abs_diff_eq!(mi.nats, 2.0 * eps, epsilon = 1e-15);
    }

    #[test]
    fn oracle_value_is_frozen() {
        assert_abs_diff_eq!(bpsk_mi_oracle(1.0), 0.336830820, epsilon = 1e-9);
    }

    #[test]
    fn scalar_bpsk_matches_oracle() {
        for (g, tol) in [(0.3, 1e-9), (1.0, 1e-7), (1.5, 1e-5)] {
            let mi = mi_discrete(&Matrix::from_element(1, 1, g), &bpsk(1), &gh()).unwrap();
            assert_abs_diff_eq!(mi.nats, bpsk_mi_oracle(g), epsilon = tol);
            assert_eq!(mi.method, MiMethod::GaussHermite);
        }
        let mc = mi_discrete(
            &Matrix::from_element(1, 1, 1.0),
            &bpsk(1),
            &IntegrationConfig::monte_carlo(40_000, 3),
        )
        .unwrap();
        assert!((mc.nats - 0.336830820).abs() < 4.0 * mc.stderr, "{mc:?}");
    }

    #[test]
    fn extremes() {
        let mi = mi_discrete(&Matrix::zeros(2, 2), &bpsk(2), &gh()).unwrap();
        assert_abs_diff_eq!(mi.nats, 0.0, epsilon = 1e-12);
        let qam = make_constellation("qam16-as-2d", 2).unwrap().into();
        let mi = mi_discrete(&(Matrix::identity(2, 2) * 30.0), &qam, &gh()).unwrap();
        assert_abs_diff_eq!(mi.nats, 16f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn low_snr_agreement() {
        let rho: f64 = 1e-3;
        let g = Matrix::from_element(1, 1, rho.sqrt());
        let mi = mi_discrete(&g, &bpsk(1), &gh()).unwrap();
        let lin = mi_low_snr(&Matrix::from_element(1, 1, rho), &Matrix::identity(1, 1)).unwrap();
        assert!((mi.nats - lin.nats).abs() <= 1e-4, "{} vs {}", mi.nats, lin.nats);
    }

    #[test]
    fn sufficient_statistic_preserves_mi() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = crate::matcalc::gaussian_matrix(&mut rng, 3, 2) * 0.7;
        let ch = Channel::new(h.clone()).unwrap();
        let p = crate::matcalc::gaussian_matrix(&mut rng, 2, 2) * 0.6;
        let sig = bpsk(2);
        let via_stat = mi_for_precoder(&ch, &p, &sig, &gh()).unwrap();
        let direct = mi_discrete(&(&h * &p), &sig, &IntegrationConfig::gauss_hermite(20)).unwrap();
        assert_abs_diff_eq!(via_stat.nats, direct.nats, epsilon = 1e-5);
    }

    /// Central differences in σ_i² pin the I-MMSE constant.
    #[test]
    fn immse_constant_by_finite_differences() {
        let sig = bpsk(2);
        let v = random_orthogonal(&mut ChaCha8Rng::seed_from_u64(11), 2);
        let lam_sq = [1.3, 0.6];
        let s2 = [0.8, 0.5];
        let grad = mi_gradient_sigma_sq(&lam_sq, &s2, &v, &sig, &gh()).unwrap();
        let noise = NoiseSet::new(&gh(), 2).unwrap();
        let mi_at = |s: [f64; 2]| modal_stats(&lam_sq, &s, &v, &sig, &noise, false).unwrap().mi;
        let h = 1e-4;
        for i in 0..2 {
            let (mut up, mut dn) = (s2, s2);
            up[i] += h;
            dn[i] -= h;
            let fd = (mi_at(up) - mi_at(dn)) / (2.0 * h);
            let full = grad[i] / IMMSE_DERIVATIVE_SCALE;
            assert!((fd - grad[i]).abs() < 1e-5, "mode {i}: fd {fd}, grad {}", grad[i]);
            assert!((fd - full).abs() > 0.05, "the unscaled form must not match");
        }
    }

    #[test]
    fn gradient_at_zero_power_and_gaussian_surrogate() {
        let sig = bpsk(2);
        let g = mi_gradient_sigma_sq(&[2.0, 0.5], &[0.0, 0.0], &Matrix::identity(2, 2), &sig, &gh()).unwrap();
        assert_abs_diff_eq!(g[0], IMMSE_DERIVATIVE_SCALE * 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], IMMSE_DERIVATIVE_SCALE * 0.5, epsilon = 1e-12);

        let gauss = Signaling::Gaussian { dim: 2 };
        let (l, s) = ([2.0, 0.5], [0.7, 1.1]);
        let g = mi_gradient_sigma_sq(&l, &s, &Matrix::identity(2, 2), &gauss, &gh()).unwrap();
        for i in 0..2 {
            // d/dσ² of ½ Σ log(1 + λ²σ²)
            assert_abs_diff_eq!(g[i], 0.5 * l[i] / (1.0 + l[i] * s[i]), epsilon = 1e-12);
        }
    }

    #[test]
    fn relabeling_and_rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = make_constellation("qpsk-as-2d", 2).unwrap();
        let g = crate::matcalc::gaussian_matrix(&mut rng, 2, 2);
        let base = mi_discrete(&g, &c.clone().into(), &gh()).unwrap().nats;
        let perm = mi_discrete(&g, &c.permuted(&[2, 0, 3, 1]).into(), &gh()).unwrap().nats;
        assert_abs_diff_eq!(base, perm, epsilon = 1e-12);
        let a = random_orthogonal(&mut rng, 2);
        let rot = mi_discrete(&(&g * a.transpose()), &c.rotated(&a).into(), &gh()).unwrap().nats;
        assert_abs_diff_eq!(base, rot, epsilon = 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn discrete_bounded_by_gaussian_and_log_l(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = crate::matcalc::gaussian_matrix(&mut rng, 2, 2) * rng.random_range(0.1..2.0);
            let mi = mi_discrete(&g, &bpsk(2), &gh()).unwrap().nats;
            let q = Matrix::identity(2, 2);
            let gauss = mi_gaussian(&q, &(g.transpose() * &g)).unwrap().nats;
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= 4f64.ln() + 1e-9);
            prop_assert!(mi <= gauss + 1e-6);
        }

        #[test]
        fn concave_and_monotone_in_powers(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sig = bpsk(2);
            let v = random_orthogonal(&mut rng, 2);
            let lam_sq = [1.0, 0.5];
            let a = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let b = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let mi = |s: &[f64]| mi_modal(&lam_sq, s, &v, &sig, &gh()).unwrap().nats;
            for t in [0.25, 0.5, 0.75] {
                let mid = [t * a[0] + (1.0 - t) * b[0], t * a[1] + (1.0 - t) * b[1]];
                prop_assert!(mi(&mid) >= t * mi(&a) + (1.0 - t) * mi(&b) - 1e-7);
            }
            let grad = mi_gradient_sigma_sq(&lam_sq, &a, &v, &sig, &gh()).unwrap();
            prop_assert!(grad.iter().all(|&g| g >= 0.0));
        }
    }
}
