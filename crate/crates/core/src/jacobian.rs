//! Jacobian of the mutual information with respect to the transmit
//! covariance `Q = PPᵀ`, for square invertible precoders.
//!
//! `D_Q I = ½ vecᵀ(R P E P⁻¹) D_n − vecᵀ(E Pᵀ R U_P Σ_P) Ω N_n (P⁻¹ ⊗ Pᵀ) D_n`
//!
//! The second term accounts for the dependence of the right singular
//! vectors of `P` on `Q`; it vanishes for Gaussian inputs. The result is a
//! row in `vech(Q)` coordinates.
//!
//! `I` is a function of `Q` only after fixing how `P` follows `Q`. The
//! expression above corresponds to moving `P` with `V_P` held fixed, so it
//! agrees with `d/dt I(P + tΔ)` for directions
//! `Δ = U_P (K Σ_P + D) V_Pᵀ` (`K` skew, `D` diagonal), which includes every
//! direction when the input is Gaussian.

use crate::channel::{statistic_gain, Channel, Precoder};
use crate::error::{Error, Result};
use crate::estimator::{mmse_stats, noise_for, pass, Signaling};
use crate::integration::IntegrationConfig;
use crate::matcalc::{duplication_matrix, kron, omega_matrix, pinv, symmetrizer_matrix, vec, vech, Matrix, Vector};

/// Largest accepted condition number of `P`.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct QJacobian {
    /// `D_Q I` in `vech(Q)` coordinates, length `n(n+1)/2`.
    pub row: Vector,
    pub p: Matrix,
    pub e_s: Matrix,
}

impl QJacobian {
    /// First-order change of `I` for a symmetric perturbation `dq`.
    pub fn directional(&self, dq: &Matrix) -> f64 {
        self.row.dot(&vech(dq))
    }

    /// The same gradient in full `vec(Q)` coordinates, `row · D_n⁺`.
    pub fn vec_coordinates(&self) -> Vector {
        let n = self.p.nrows();
        let dplus = pinv(&duplication_matrix(n), 1e-12);
        (self.row.transpose() * dplus).transpose()
    }
}

/// The two terms of the Jacobian, `direct − coupling`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianTerms {
    pub direct: Vector,
    pub coupling: Vector,
}

fn check_square(ch: &Channel, prec: &Precoder, e_s: &Matrix) -> Result<usize> {
    let n = prec.p.nrows();
    if prec.p.ncols() != n || ch.p() != n || e_s.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Q-Jacobian needs n = m = p: P is {}×{}, channel has {} inputs, E_s is {}×{}",
            prec.p.nrows(),
            prec.p.ncols(),
            ch.p(),
            e_s.nrows(),
            e_s.ncols()
        )));
    }
    let s = &prec.svd.singvals;
    let cond = s[0] / s[n - 1];
    if !(cond < MAX_CONDITION) {
        return Err(Error::SingularPrecoder(cond));
    }
    Ok(n)
}

pub fn dq_terms(ch: &Channel, prec: &Precoder, e_s: &Matrix) -> Result<JacobianTerms> {
    let n = check_square(ch, prec, e_s)?;
    let p = &prec.p;
    let p_inv = p.clone().try_inverse().ok_or(Error::SingularPrecoder(f64::INFINITY))?;
    let r = &ch.gram;
    let dn = duplication_matrix(n);
    let direct = (vec(&(r * p * e_s * &p_inv)).transpose() * &dn * 0.5).transpose();

    let svd = &prec.svd;
    let sigma = Matrix::from_diagonal(&svd.singvals);
    let left = vec(&(e_s * p.transpose() * r * &svd.left * sigma)).transpose();
    let omega = omega_matrix(svd, n)?;
    let coupling = (left * omega * symmetrizer_matrix(n) * kron(&p_inv, &p.transpose()) * &dn).transpose();
    Ok(JacobianTerms { direct, coupling })
}

/// `D_Q I` at `P` given the MMSE matrix `e_s` of `s` at this operating point.
pub fn dq_mutual_information(ch: &Channel, prec: &Precoder, e_s: &Matrix) -> Result<QJacobian> {
    let t = dq_terms(ch, prec, e_s)?;
    Ok(QJacobian {
        row: t.direct - t.coupling,
        p: prec.p.clone(),
        e_s: e_s.clone(),
    })
}

/// MMSE matrix of `s` from `y = HPs + z`.
pub fn mmse_for_precoder(ch: &Channel, p: &Matrix, sig: &Signaling, cfg: &IntegrationConfig) -> Result<Matrix> {
    let b = statistic_gain(ch, p)?;
    Ok(mmse_stats(&b, sig, cfg)?.mmse_matrix)
}

/// `[I(P + hΔ) − I(P − hΔ)] / 2h`, both terms on the same noise nodes.
pub fn fd_directional_mi(
    ch: &Channel,
    prec: &Precoder,
    delta: &Matrix,
    sig: &Signaling,
    cfg: &IntegrationConfig,
    h: f64,
) -> Result<f64> {
    if !(1e-5..=1e-2).contains(&h) {
        return Err(Error::InvalidArgument(format!("step {h} outside [1e-5, 1e-2]")));
    }
    if delta.shape() != prec.p.shape() {
        return Err(Error::Dimension("direction must have the shape of P".into()));
    }
    let noise = noise_for(sig, sig.dim(), cfg)?;
    let mi = |p: Matrix| -> Result<f64> { Ok(pass(&statistic_gain(ch, &p)?, sig, &noise, false)?.mi) };
    let up = mi(&prec.p + delta * h)?;
    let down = mi(&prec.p - delta * h)?;
    Ok((up - down) / (2.0 * h))
}

/// A direction `Δ = U_P (K Σ_P + D) V_Pᵀ` that leaves `V_P` fixed to first
/// order, from any square `a` (`K` is its skew part, `D` its diagonal).
pub fn v_fixed_direction(prec: &Precoder, a: &Matrix) -> Matrix {
    let svd = &prec.svd;
    let skew = (a - a.transpose()) * 0.5;
    let diag = Matrix::from_diagonal(&a.diagonal());
    &svd.left * (skew * Matrix::from_diagonal(&svd.singvals) + diag) * svd.right.transpose()
}
