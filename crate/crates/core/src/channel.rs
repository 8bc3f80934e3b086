//! The signal model `y = H P s + z`: channels, input alphabets, precoders and
//! the reductions that let everything downstream work in the
//! `m`-dimensional sufficient-statistic domain.

use crate::error::{Error, Result};
use crate::matcalc::{inv_sqrtm_pd, sqrtm_psd, sym_eigen_desc, Matrix, SvdFactors, Vector};

/// Largest alphabet accepted anywhere in the library.
pub const MAX_ALPHABET: usize = 1024;

/// Tolerance used to deduplicate difference vectors.
pub const DEDUP_TOL: f64 = 1e-12;

/// A linear channel `H` (`n × p`) with its Gram matrix `R_H = HᵀH` and the
/// eigendecomposition `R_H = U_H Λ_H² U_Hᵀ`, eigenvalues nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub h: Matrix,
    pub gram: Matrix,
    pub eig_vectors: Matrix,
    pub eig_values_sq: Vector,
}

impl Channel {
    pub fn new(h: Matrix) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::Dimension("empty channel matrix".into()));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("channel entries must be finite".into()));
        }
        let gram = h.transpose() * &h;
        let (vals, vecs) = sym_eigen_desc(&gram);
        let scale = vals.iter().cloned().fold(0.0, f64::max).max(1.0);
        // Clamp roundoff below zero; the Gram matrix is PSD by construction.
        let vals = vals.map(|v| if v < 0.0 && v > -1e-12 * scale { 0.0 } else { v.max(0.0) });
        Ok(Channel {
            h,
            gram,
            eig_vectors: vecs,
            eig_values_sq: vals,
        })
    }

    /// Square diagonal channel `H = diag(√λ²)`.
    pub fn diagonal(eigenvalues_sq: &[f64]) -> Result<Self> {
        if eigenvalues_sq.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument(
                "channel eigenvalues must be finite and nonnegative".into(),
            ));
        }
        let d = Vector::from_iterator(eigenvalues_sq.len(), eigenvalues_sq.iter().map(|l| l.sqrt()));
        Channel::new(Matrix::from_diagonal(&d))
    }

    /// Receive dimension `n`.
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    /// Transmit dimension `p`.
    pub fn p(&self) -> usize {
        self.h.ncols()
    }

    pub fn lambda_sq(&self) -> &Vector {
        &self.eig_values_sq
    }

    /// Number of eigenvalues above `1e-12 · max(1, λ²_max)`.
    pub fn rank(&self) -> usize {
        let tol = 1e-12 * self.eig_values_sq.iter().cloned().fold(1.0, f64::max);
        self.eig_values_sq.iter().filter(|&&l| l > tol).count()
    }
}

/// Builtin alphabets. Complex constellations are embedded as pairs of real
/// dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Bpsk,
    Pam4,
    Qpsk2d,
    Qam16_2d,
}

impl Builtin {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "bpsk" => Ok(Builtin::Bpsk),
            "pam4" => Ok(Builtin::Pam4),
            "qpsk-as-2d" => Ok(Builtin::Qpsk2d),
            "qam16-as-2d" => Ok(Builtin::Qam16_2d),
            other => Err(Error::UnknownConstellation(other.to_string())),
        }
    }

    /// Unnormalized base alphabet and its width in real dimensions.
    fn base(self) -> (Vec<Vec<f64>>, usize) {
        let pam = [-3.0, -1.0, 1.0, 3.0];
        match self {
            Builtin::Bpsk => (vec![vec![-1.0], vec![1.0]], 1),
            Builtin::Pam4 => (pam.iter().map(|&a| vec![a]).collect(), 1),
            Builtin::Qpsk2d => {
                let pts = [-1.0, 1.0];
                let grid = pts.iter().flat_map(|&a| pts.iter().map(move |&b| vec![a, b]));
                (grid.collect(), 2)
            }
            Builtin::Qam16_2d => {
                let grid = pam.iter().flat_map(|&a| pam.iter().map(move |&b| vec![a, b]));
                (grid.collect(), 2)
            }
        }
    }
}

/// A finite input alphabet with priors, normalized to zero mean and identity
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Vector>,
    priors: Vec<f64>,
}

impl Constellation {
    /// Wraps already-normalized data, validating every invariant.
    pub fn validated(points: Vec<Vector>, priors: Vec<f64>) -> Result<Self> {
        check_alphabet(&points, &priors)?;
        let c = Constellation { points, priors };
        let (mean, cov) = c.moments();
        if mean.amax() > 1e-10 {
            return Err(Error::InvalidConstellation(format!("mean is not zero (max {:e})", mean.amax())));
        }
        let m = c.dim();
        if (cov - Matrix::identity(m, m)).amax() > 1e-8 {
            return Err(Error::InvalidConstellation("covariance is not the identity".into()));
        }
        Ok(c)
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Mean and covariance under the priors.
    pub fn moments(&self) -> (Vector, Matrix) {
        moments(&self.points, &self.priors)
    }

    /// Applies `x ↦ A x` to every point. The result is only a valid
    /// constellation if `A` is orthogonal; used for the rotated alphabet
    /// `ŝ = Vᵀ s`.
    pub fn rotated(&self, a: &Matrix) -> Constellation {
        Constellation {
            points: self.points.iter().map(|s| a * s).collect(),
            priors: self.priors.clone(),
        }
    }

    /// Same points in a different order, priors permuted accordingly.
    pub fn permuted(&self, order: &[usize]) -> Constellation {
        Constellation {
            points: order.iter().map(|&i| self.points[i].clone()).collect(),
            priors: order.iter().map(|&i| self.priors[i]).collect(),
        }
    }
}

fn check_alphabet(points: &[Vector], priors: &[f64]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidConstellation("no points".into()));
    }
    if points.len() > MAX_ALPHABET {
        return Err(Error::InvalidConstellation(format!(
            "{} points exceeds the cap of {MAX_ALPHABET}",
            points.len()
        )));
    }
    if priors.len() != points.len() {
        return Err(Error::InvalidConstellation("priors and points differ in length".into()));
    }
    let m = points[0].len();
    if m == 0 || points.iter().any(|p| p.len() != m) {
        return Err(Error::InvalidConstellation("points have inconsistent dimension".into()));
    }
    if points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidConstellation("non-finite coordinate".into()));
    }
    if priors.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidConstellation("negative prior".into()));
    }
    let total: f64 = priors.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidConstellation(format!("priors sum to {total}")));
    }
    Ok(())
}

fn moments(points: &[Vector], priors: &[f64]) -> (Vector, Matrix) {
    let m = points[0].len();
    let mut mean = Vector::zeros(m);
    for (s, &p) in points.iter().zip(priors) {
        mean += s * p;
    }
    let mut cov = Matrix::zeros(m, m);
    for (s, &p) in points.iter().zip(priors) {
        let d = s - &mean;
        cov += &d * d.transpose() * p;
    }
    (mean, cov)
}

/// Builtin product constellation over `dims` real dimensions, normalized,
/// uniform priors.
pub fn make_constellation(name: &str, dims: usize) -> Result<Constellation> {
    let builtin = Builtin::parse(name)?;
    if dims == 0 {
        return Err(Error::InvalidArgument("dims must be at least 1".into()));
    }
    let (base, width) = builtin.base();
    if !dims.is_multiple_of(width) {
        return Err(Error::InvalidArgument(format!("`{name}` needs dims divisible by {width}")));
    }
    let blocks = dims / width;
    let total = (base.len() as f64).powi(blocks as i32);
    if total > MAX_ALPHABET as f64 {
        return Err(Error::InvalidConstellation(format!(
            "{name}^{blocks} has more than {MAX_ALPHABET} points"
        )));
    }
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..blocks {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                base.iter().map(move |b| {
                    let mut p = prefix.clone();
                    p.extend_from_slice(b);
                    p
                })
            })
            .collect();
    }
    let l = points.len();
    let points = points.into_iter().map(Vector::from_vec).collect();
    normalize(points, vec![1.0 / l as f64; l])
}

/// Mean shift followed by the inverse symmetric square root of the
/// covariance, both under the given priors.
pub fn normalize(points: Vec<Vector>, priors: Vec<f64>) -> Result<Constellation> {
    check_alphabet(&points, &priors)?;
    let (mean, cov) = moments(&points, &priors);
    let w = inv_sqrtm_pd(&cov).map_err(|_| Error::DegenerateAlphabet)?;
    let points = points.iter().map(|s| &w * (s - &mean)).collect();
    Ok(Constellation { points, priors })
}

/// Where a difference set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffSource {
    Constellation,
    Unstructured,
}

/// A set of vectors `𝓔` whose quadratic forms define the minimum distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceSet {
    pub diffs: Vec<Vector>,
    pub source: DiffSource,
}

impl DifferenceSet {
    /// An arbitrary set of nonzero vectors, deduplicated; not required to be
    /// closed under negation.
    pub fn unstructured(diffs: Vec<Vector>) -> Result<Self> {
        if diffs.is_empty() {
            return Err(Error::EmptyDifferenceSet);
        }
        let m = diffs[0].len();
        if diffs.iter().any(|d| d.len() != m) {
            return Err(Error::Dimension("difference vectors differ in length".into()));
        }
        if diffs.iter().any(|d| d.amax() == 0.0) {
            return Err(Error::InvalidArgument("difference set contains the zero vector".into()));
        }
        Ok(DifferenceSet {
            diffs: dedup(diffs),
            source: DiffSource::Unstructured,
        })
    }

    pub fn dim(&self) -> usize {
        self.diffs[0].len()
    }

    pub fn len(&self) -> usize {
        self.diffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diffs.is_empty()
    }
}

fn dedup(diffs: Vec<Vector>) -> Vec<Vector> {
    let mut out: Vec<Vector> = Vec::with_capacity(diffs.len());
    for d in diffs {
        if !out.iter().any(|o| (o - &d).amax() <= DEDUP_TOL) {
            out.push(d);
        }
    }
    out
}

/// All pairwise differences `s⁽ⁱ⁾ − s⁽ʲ⁾`, `i ≠ j`, deduplicated.
pub fn difference_set(c: &Constellation) -> Result<DifferenceSet> {
    if c.len() < 2 {
        return Err(Error::InvalidArgument("difference set needs at least two points".into()));
    }
    let pts = c.points();
    let mut diffs = Vec::with_capacity(pts.len() * (pts.len() - 1));
    for (i, a) in pts.iter().enumerate() {
        for (j, b) in pts.iter().enumerate() {
            if i != j {
                let d = a - b;
                if d.amax() > DEDUP_TOL {
                    diffs.push(d);
                }
            }
        }
    }
    Ok(DifferenceSet {
        diffs: dedup(diffs),
        source: DiffSource::Constellation,
    })
}

/// Channel seen after whitening the noise: `R_z^{-1/2} H`.
pub fn whiten(h: &Matrix, noise_cov: &Matrix) -> Result<Channel> {
    if noise_cov.nrows() != h.nrows() || !noise_cov.is_square() {
        return Err(Error::Dimension("noise covariance must be n×n".into()));
    }
    let w = inv_sqrtm_pd(noise_cov)?;
    Channel::new(w * h)
}

/// A precoder `P` (`p × m`) with cached SVD factors and power `Tr(PPᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    pub p: Matrix,
    pub svd: SvdFactors,
    pub power: f64,
}

impl Precoder {
    pub fn new(p: Matrix) -> Self {
        let svd = SvdFactors::of(&p);
        let power = svd.singvals.iter().map(|s| s * s).sum();
        Precoder { p, svd, power }
    }

    /// Builds the precoder from explicit factors, keeping them as given
    /// (after sorting singular values), so sign and basis choices survive.
    pub fn from_svd(svd: SvdFactors) -> Self {
        let k = svd.singvals.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| svd.singvals[b].partial_cmp(&svd.singvals[a]).expect("finite"));
        let svd = SvdFactors {
            left: Matrix::from_fn(svd.left.nrows(), k, |i, j| svd.left[(i, order[j])]),
            singvals: Vector::from_fn(k, |i, _| svd.singvals[order[i]]),
            right: Matrix::from_fn(svd.right.nrows(), k, |i, j| svd.right[(i, order[j])]),
        };
        let p = svd.reconstruct();
        let power = svd.singvals.iter().map(|s| s * s).sum();
        Precoder { p, svd, power }
    }

    /// `P = U_k diag(σ) V_kᵀ`, where `V_k` holds the first `k` columns of the
    /// `m × m` orthonormal `v` and `k` is the length of `sigma_sq`.
    pub fn aligned(u_k: &Matrix, sigma_sq: &[f64], v: &Matrix) -> Result<Self> {
        let k = sigma_sq.len();
        if u_k.ncols() != k || v.ncols() < k {
            return Err(Error::Dimension(format!(
                "aligned precoder: U has {} cols, V has {} cols, {k} powers",
                u_k.ncols(),
                v.ncols()
            )));
        }
        if sigma_sq.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidArgument("negative power".into()));
        }
        let sig = Vector::from_iterator(k, sigma_sq.iter().map(|s| s.sqrt()));
        let vk = v.columns(0, k).into_owned();
        Ok(Precoder::from_svd(SvdFactors::from_parts(u_k.clone(), sig, vk)?))
    }

    pub fn q(&self) -> Matrix {
        &self.p * self.p.transpose()
    }

    /// Input dimension `m`.
    pub fn m(&self) -> usize {
        self.p.ncols()
    }

    pub fn scaled(&self, factor: f64) -> Precoder {
        let mut svd = self.svd.clone();
        svd.singvals *= factor.abs();
        if factor < 0.0 {
            svd.left.neg_mut();
        }
        Precoder {
            p: &self.p * factor,
            svd,
            power: self.power * factor * factor,
        }
    }
}

/// `PᵀHᵀy`.
pub fn sufficient_statistic(ch: &Channel, prec: &Precoder, y: &Vector) -> Result<Vector> {
    if y.len() != ch.n() || prec.p.nrows() != ch.p() {
        return Err(Error::Dimension("sufficient_statistic: incompatible sizes".into()));
    }
    Ok(prec.p.transpose() * (ch.h.transpose() * y))
}

/// Square gain `B = (PᵀR_H P)^{1/2}` such that `y'' = B s + z`, `z ~ N(0, I)`,
/// carries exactly the information of `y = H P s + z` about `s`.
pub fn statistic_gain(ch: &Channel, p: &Matrix) -> Result<Matrix> {
    if p.nrows() != ch.p() {
        return Err(Error::Dimension(format!(
            "precoder has {} rows, channel has {} inputs",
            p.nrows(),
            ch.p()
        )));
    }
    sqrtm_psd(&(p.transpose() * &ch.gram * p))
}

/// The diagonalized model `y' = G Vᵀ s + z` with `G = Λ_H Σ_P`. Requires every
/// left singular vector carrying power to be an eigenvector of `R_H`.
pub fn effective_model(ch: &Channel, prec: &Precoder) -> Result<(Matrix, Matrix)> {
    if prec.p.nrows() != ch.p() {
        return Err(Error::Dimension("effective_model: incompatible sizes".into()));
    }
    let scale = ch.eig_values_sq.iter().cloned().fold(1.0, f64::max);
    let k = prec.svd.singvals.len();
    let mut gains = Vector::zeros(k);
    for i in 0..k {
        let u = prec.svd.left.column(i);
        let ru = &ch.gram * u;
        let lam_sq = u.dot(&ru);
        let sigma = prec.svd.singvals[i];
        if sigma > 0.0 && (ru - u * lam_sq).amax() > 1e-8 * scale {
            return Err(Error::MisalignedPrecoder);
        }
        gains[i] = lam_sq.max(0.0).sqrt() * sigma;
    }
    Ok((Matrix::from_diagonal(&gains), prec.svd.right.transpose()))
}
