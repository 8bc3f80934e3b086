//! High-SNR design: the squared minimum distance
//! `d_min(P) = min_{e ∈ 𝓔} eᵀ Pᵀ R_H P e`, its maximization under a power
//! budget (MaxMinDist), the dual power minimization (MinPower), the
//! minimum-norm program (MinNorm), and the two reductions
//! MinNorm → MinPower → MaxMinDist.
//!
//! MaxMinDist is NP-hard in general. Results from paths that are not exact
//! carry `heuristic = true`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{Channel, DifferenceSet, Precoder};
use crate::error::{Error, Result};
use crate::matcalc::{pinv, qr_orthonormal, random_orthogonal, Matrix, Vector};

pub const MAX_DIM: usize = 4;
pub const MAX_DIFFS: usize = 256;
/// Largest MinNorm instance solved by enumeration.
pub const MAX_MINNORM: usize = 12;
/// Largest number of distinct directions (up to sign) for which the
/// rank-one MaxMinDist path enumerates every sign pattern.
pub const MAX_RANK_ONE_EXACT: usize = 14;

const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxMinOptions {
    /// Angle grid size for two streams.
    pub grid: usize,
    /// Grid maxima refined by golden-section search.
    pub refine: usize,
    /// Starts of the annealed search.
    pub starts: usize,
    /// Temperature stages, geometric from 1 to 1e-3.
    pub stages: usize,
    pub seed: u64,
}

impl Default for MaxMinOptions {
    fn default() -> Self {
        MaxMinOptions {
            grid: 3600,
            refine: 8,
            starts: 16,
            stages: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceResult {
    /// Squared distance.
    pub value: f64,
    pub argmin_diff: Vector,
    pub precoder: Option<Precoder>,
    pub power: Option<f64>,
    pub heuristic: bool,
}

/// Weight vectors `w_i` of `min ‖z‖² s.t. |w_iᵀ z| ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNormInstance {
    weights: Vec<Vector>,
}

impl MinNormInstance {
    pub fn new(weights: Vec<Vector>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("MinNorm needs at least one weight vector".into()));
        }
        let m = weights[0].len();
        if m == 0 || weights.iter().any(|w| w.len() != m) {
            return Err(Error::Dimension("weight vectors must share a nonzero length".into()));
        }
        if weights.iter().any(|w| w.amax() == 0.0 || !w.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidArgument("weight vectors must be finite and nonzero".into()));
        }
        Ok(MinNormInstance { weights })
    }

    pub fn weights(&self) -> &[Vector] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }
}

fn lex_less(a: &Vector, b: &Vector) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// Minimum of `eᵀ X e` over the set, ties broken lexicographically on `e`.
fn min_quadratic(x: &Matrix, ds: &DifferenceSet) -> (f64, usize) {
    let vals: Vec<f64> = ds.diffs.iter().map(|e| e.dot(&(x * e))).collect();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = TIE_RTOL * min.abs().max(f64::MIN_POSITIVE);
    let mut best: Option<usize> = None;
    for (i, &v) in vals.iter().enumerate() {
        if v - min <= tol && best.is_none_or(|b| lex_less(&ds.diffs[i], &ds.diffs[b])) {
            best = Some(i);
        }
    }
    (min, best.expect("nonempty set"))
}

/// `d_min` by enumeration.
pub fn d_min(ch: &Channel, prec: &Precoder, ds: &DifferenceSet) -> Result<DistanceResult> {
    if ds.is_empty() {
        return Err(Error::EmptyDifferenceSet);
    }
    if prec.p.nrows() != ch.p() || prec.p.ncols() != ds.dim() {
        return Err(Error::Dimension(format!(
            "P is {}×{}, channel has {} inputs, differences have length {}",
            prec.p.nrows(),
            prec.p.ncols(),
            ch.p(),
            ds.dim()
        )));
    }
    let x = prec.p.transpose() * &ch.gram * &prec.p;
    let (value, idx) = min_quadratic(&x, ds);
    Ok(DistanceResult {
        value,
        argmin_diff: ds.diffs[idx].clone(),
        precoder: Some(prec.clone()),
        power: Some(prec.power),
        heuristic: false,
    })
}

/// Unit-power solution: per-mode powers `a` (summing to one) and the
/// orthonormal right factor.
struct UnitSolution {
    a: Vec<f64>,
    v: Matrix,
    heuristic: bool,
}

/// `d_min` of `U diag(√a) V_kᵀ` through per-mode gains `λ²`.
fn modal_value(lam_sq: &[f64], a: &[f64], v: &Matrix, ds: &DifferenceSet) -> f64 {
    ds.diffs
        .iter()
        .map(|e| {
            (0..a.len())
                .map(|i| {
                    let p = v.column(i).dot(e);
                    a[i] * lam_sq[i] * p * p
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// `max_{x ∈ [0,1]} min_e (x c1_e + (1−x) c2_e)`, exact for this concave
/// piecewise-linear function.
fn best_split(c1: &[f64], c2: &[f64]) -> (f64, f64) {
    let f = |x: f64| {
        c1.iter()
            .zip(c2)
            .map(|(a, b)| x * a + (1.0 - x) * b)
            .fold(f64::INFINITY, f64::min)
    };
    // Supergradient: slope of an active line (smallest slope on ties).
    let slope = |x: f64| {
        let v = f(x);
        let tol = 1e-14 * v.abs().max(1e-300);
        c1.iter()
            .zip(c2)
            .filter(|(a, b)| x * *a + (1.0 - x) * *b - v <= tol)
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if slope(0.0) <= 0.0 {
        return (0.0, f(0.0));
    }
    let top_slope = c1
        .iter()
        .zip(c2)
        .filter(|(a, b)| **a - f(1.0) <= 1e-14 * a.abs().max(1e-300) && a.is_finite() && b.is_finite())
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    if top_slope >= 0.0 {
        return (1.0, f(1.0));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (fl, fh) = (f(lo), f(hi));
    if fl >= fh {
        (lo, fl)
    } else {
        (hi, fh)
    }
}

fn rotation(theta: f64) -> Matrix {
    let (s, c) = theta.sin_cos();
    Matrix::from_row_slice(2, 2, &[c, -s, s, c])
}

fn split_at(lam_sq: &[f64], theta: f64, ds: &DifferenceSet) -> (f64, f64) {
    let v = rotation(theta);
    let proj = |i: usize| -> Vec<f64> {
        ds.diffs
            .iter()
            .map(|e| {
                let p = v.column(i).dot(e);
                lam_sq[i] * p * p
            })
            .collect()
    };
    best_split(&proj(0), &proj(1))
}

/// Two streams, two modes: angle grid with exact inner power split, then
/// golden-section refinement around the best grid points.
fn two_stream(lam_sq: &[f64], ds: &DifferenceSet, opts: &MaxMinOptions) -> UnitSolution {
    let n = opts.grid.max(8);
    let step = std::f64::consts::PI / n as f64;
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| split_at(lam_sq, i as f64 * step, ds).1)
        .collect();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| vals[i] >= vals[(i + n - 1) % n] && vals[i] >= vals[(i + 1) % n])
        .collect();
    peaks.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).expect("finite").then(a.cmp(&b)));
    peaks.truncate(opts.refine.max(1));
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    let refined: Vec<(f64, f64, f64)> = peaks
        .par_iter()
        .map(|&i| {
            let g = |t: f64| split_at(lam_sq, t, ds).1;
            let (mut a, mut b) = ((i as f64 - 1.0) * step, (i as f64 + 1.0) * step);
            let mut c = b - gr * (b - a);
            let mut d = a + gr * (b - a);
            let (mut fc, mut fd) = (g(c), g(d));
            for _ in 0..100 {
                if fc >= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - gr * (b - a);
                    fc = g(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + gr * (b - a);
                    fd = g(d);
                }
            }
            let mut best = (i as f64 * step, vals[i]);
            for t in [c, d] {
                let v = g(t);
                if v > best.1 {
                    best = (t, v);
                }
            }
            let (x, v) = split_at(lam_sq, best.0, ds);
            (best.0, x, v)
        })
        .collect();
    let mut best = refined[0];
    for r in &refined[1..] {
        if r.2 > best.2 {
            best = *r;
        }
    }
    UnitSolution {
        a: vec![best.1, 1.0 - best.1],
        v: rotation(best.0),
        heuristic: false,
    }
}

/// `min ‖z‖² s.t. a_jᵀ z ≥ 1` by Hildreth's dual coordinate ascent with an
/// active-set polish. Returns `None` when the dual bound exceeds `cutoff`
/// (which covers infeasible systems).
fn hildreth(rows: &[Vector], cutoff: f64) -> Option<Vector> {
    let m = rows[0].len();
    let norms: Vec<f64> = rows.iter().map(|r| r.norm_squared()).collect();
    let mut lam = vec![0.0; rows.len()];
    let mut z = Vector::zeros(m);
    for _ in 0..20_000 {
        for j in 0..rows.len() {
            let new = (lam[j] + 2.0 * (1.0 - rows[j].dot(&z)) / norms[j]).max(0.0);
            let d = new - lam[j];
            if d != 0.0 {
                z.axpy(0.5 * d, &rows[j], 1.0);
                lam[j] = new;
            }
        }
        let zz = z.norm_squared();
        let dual = lam.iter().sum::<f64>() - zz;
        if dual > cutoff {
            return None;
        }
        let viol = rows.iter().map(|r| 1.0 - r.dot(&z)).fold(0.0, f64::max);
        if viol <= 1e-13 && zz - dual <= 1e-13 * zz.max(1.0) {
            break;
        }
    }
    let feasible = |z: &Vector| rows.iter().map(|r| r.dot(z)).fold(f64::INFINITY, f64::min);
    // Least-norm solution of the active constraints, when consistent.
    let lmax = lam.iter().cloned().fold(0.0, f64::max);
    let active: Vec<&Vector> = rows.iter().zip(&lam).filter(|(_, &l)| l > 1e-9 * lmax).map(|(r, _)| r).collect();
    let mut best = {
        let lo = feasible(&z);
        if lo <= 0.0 {
            return None;
        }
        z / lo
    };
    if !active.is_empty() {
        let a = Matrix::from_fn(active.len(), m, |i, j| active[i][j]);
        let polished = a.transpose() * pinv(&(&a * a.transpose()), 1e-12) * Vector::from_element(active.len(), 1.0);
        if feasible(&polished) >= 1.0 - 1e-12 && polished.norm_squared() <= best.norm_squared() * (1.0 + 1e-6) {
            let lo = feasible(&polished).min(1.0);
            best = polished / lo;
        }
    }
    Some(best)
}

/// Directions of the set up to sign, first nonzero entry positive.
fn directions_up_to_sign(ds: &DifferenceSet) -> Vec<Vector> {
    let mut out: Vec<Vector> = Vec::new();
    for e in &ds.diffs {
        let lead = e.iter().find(|x| x.abs() > 1e-14).copied().unwrap_or(1.0);
        let c = if lead < 0.0 { -e } else { e.clone() };
        if !out.iter().any(|o| (o - &c).amax() <= 1e-12 * c.amax()) {
            out.push(c);
        }
    }
    out
}

/// One active mode: maximize `min_e (vᵀe)²` over unit `v`, i.e. solve the
/// minimum-norm program over all sign patterns of `𝓔`.
fn rank_one(m: usize, ds: &DifferenceSet, opts: &MaxMinOptions) -> UnitSolution {
    let dirs = directions_up_to_sign(ds);
    let n = dirs.len();
    // Feasible starting bound from random directions.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<Vector> = None;
    let consider = |z: Vector, best: &mut Option<Vector>| {
        if best.as_ref().is_none_or(|b| z.norm_squared() < b.norm_squared()) {
            *best = Some(z);
        }
    };
    for t in 0..256 {
        let v = if t < m {
            Vector::from_fn(m, |i, _| if i == t { 1.0 } else { 0.0 })
        } else {
            Vector::from_fn(m, |_, _| rng.random::<f64>() - 0.5)
        };
        let lo = dirs.iter().map(|d| d.dot(&v).abs()).fold(f64::INFINITY, f64::min);
        if lo > 1e-12 {
            consider(&v / lo, &mut best);
        }
    }
    let signed = |mask: u64, d: &[Vector]| -> Vec<Vector> {
        d.iter()
            .enumerate()
            .map(|(j, r)| if j > 0 && mask >> (j - 1) & 1 == 1 { -r } else { r.clone() })
            .collect()
    };
    let exact = n <= MAX_RANK_ONE_EXACT;
    if exact {
        for mask in 0..(1u64 << (n - 1)) {
            let cutoff = best.as_ref().map_or(f64::INFINITY, |b| b.norm_squared() * (1.0 + 1e-12));
            if let Some(z) = hildreth(&signed(mask, &dirs), cutoff) {
                consider(z, &mut best);
            }
        }
    } else {
        // Local polish of the sign cells met by random directions.
        let mut masks: Vec<u64> = Vec::new();
        for _ in 0..4096 {
            let v = Vector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
            let s0 = dirs[0].dot(&v).signum();
            let mask = (1..n).fold(0u64, |acc, j| acc | (((dirs[j].dot(&v) * s0) < 0.0) as u64) << (j - 1));
            if !masks.contains(&mask) {
                masks.push(mask);
            }
            if masks.len() >= 64 {
                break;
            }
        }
        for mask in masks {
            let cutoff = best.as_ref().map_or(f64::INFINITY, |b| b.norm_squared() * (1.0 + 1e-12));
            if let Some(z) = hildreth(&signed(mask, &dirs), cutoff) {
                consider(z, &mut best);
            }
        }
    }
    let z = best.expect("a feasible direction exists for nonzero differences");
    let v1 = &z / z.norm();
    // Complete v1 to an orthonormal basis.
    let mut basis = Matrix::identity(m, m);
    basis.set_column(0, &v1);
    let mut v = qr_orthonormal(&basis);
    if v.column(0).dot(&v1) < 0.0 {
        v.column_mut(0).neg_mut();
    }
    let mut a = vec![0.0; 1];
    a[0] = 1.0;
    UnitSolution {
        a,
        v,
        heuristic: !exact,
    }
}

/// Several modes and streams: softmin-smoothed ascent over
/// `(a, V)` with temperature annealing, followed by a pattern search on the
/// exact objective. Multi-start; the best start wins.
fn annealed(lam_sq: &[f64], m: usize, ds: &DifferenceSet, opts: &MaxMinOptions) -> UnitSolution {
    let k = lam_sq.len();
    let scale = lam_sq[0] * ds.diffs.iter().map(|e| e.norm_squared()).fold(0.0, f64::max);
    let runs: Vec<(f64, Vec<f64>, Matrix)> = (0..opts.starts.max(1))
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(s as u64));
            let mut v = if s == 0 { Matrix::identity(m, m) } else { random_orthogonal(&mut rng, m) };
            let mut beta: Vec<f64> = if s == 0 {
                vec![0.0; k]
            } else {
                (0..k).map(|_| rng.random::<f64>() - 0.5).collect()
            };
            let stages = opts.stages.max(2);
            for stage in 0..stages {
                let temp = 10f64.powf(-3.0 * stage as f64 / (stages - 1) as f64);
                let mut step: f64 = 1.0;
                for _ in 0..60 {
                    let (f, gb, gv) = smoothed(lam_sq, &beta, &v, ds, scale, temp);
                    let norm2 = gb.iter().map(|x| x * x).sum::<f64>() + gv.norm_squared();
                    if norm2 < 1e-24 {
                        break;
                    }
                    let mut t = (2.0 * step).min(10.0);
                    let mut moved = false;
                    for _ in 0..30 {
                        let nb: Vec<f64> = beta.iter().zip(&gb).map(|(b, g)| b + t * g).collect();
                        let nv = qr_orthonormal(&(&v + &gv * t));
                        if smoothed(lam_sq, &nb, &nv, ds, scale, temp).0 >= f + 1e-4 * t * norm2 {
                            beta = nb;
                            v = nv;
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
            }
            let a = softmax(&beta);
            let (a, v) = pattern_search(lam_sq, a, v, ds);
            (modal_value(lam_sq, &a, &v, ds), a, v)
        })
        .collect();
    let mut best = 0;
    for i in 1..runs.len() {
        if runs[i].0 > runs[best].0 {
            best = i;
        }
    }
    let (_, a, v) = runs[best].clone();
    UnitSolution { a, v, heuristic: true }
}

fn softmax(beta: &[f64]) -> Vec<f64> {
    let mx = beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = beta.iter().map(|b| (b - mx).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.iter().map(|e| e / s).collect()
}

/// `−T log Σ_e exp(−d_e / T)` with `d_e` scaled to `[0, 1]`, and its
/// gradients in `β` and (Riemannian) in `V`.
fn smoothed(lam_sq: &[f64], beta: &[f64], v: &Matrix, ds: &DifferenceSet, scale: f64, temp: f64) -> (f64, Vec<f64>, Matrix) {
    let k = lam_sq.len();
    let m = v.nrows();
    let a = softmax(beta);
    let proj: Vec<Vec<f64>> = ds.diffs.iter().map(|e| (0..k).map(|i| v.column(i).dot(e)).collect()).collect();
    let d: Vec<f64> = proj
        .iter()
        .map(|p| (0..k).map(|i| a[i] * lam_sq[i] * p[i] * p[i]).sum::<f64>() / scale)
        .collect();
    let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d.iter().map(|x| (-(x - dmin) / temp).exp()).collect();
    let wsum: f64 = w.iter().sum();
    let f = dmin - temp * wsum.ln();
    let mut ga = vec![0.0; k];
    let mut g = Matrix::zeros(m, m);
    for (idx, e) in ds.diffs.iter().enumerate() {
        let pi = w[idx] / wsum;
        for i in 0..k {
            let p = proj[idx][i];
            ga[i] += pi * lam_sq[i] * p * p / scale;
            let c = pi * 2.0 * a[i] * lam_sq[i] * p / scale;
            for r in 0..m {
                g[(r, i)] += c * e[r];
            }
        }
    }
    let mean: f64 = (0..k).map(|i| a[i] * ga[i]).sum();
    let gb = (0..k).map(|i| a[i] * (ga[i] - mean)).collect();
    let vg = v.transpose() * g;
    let xi = v * ((&vg - vg.transpose()) * 0.5);
    (f, gb, xi)
}

/// Coordinate pattern search on the exact objective over Givens rotations
/// of `V` and pairwise power transfers.
fn pattern_search(lam_sq: &[f64], mut a: Vec<f64>, mut v: Matrix, ds: &DifferenceSet) -> (Vec<f64>, Matrix) {
    let k = a.len();
    let m = v.nrows();
    let mut cur = modal_value(lam_sq, &a, &v, ds);
    let mut delta: f64 = 0.05;
    while delta > 1e-10 {
        let mut improved = false;
        for i in 0..m {
            for j in i + 1..m {
                for sgn in [1.0, -1.0] {
                    let (s, c) = (sgn * delta).sin_cos();
                    let mut g = Matrix::identity(m, m);
                    g[(i, i)] = c;
                    g[(j, j)] = c;
                    g[(i, j)] = -s;
                    g[(j, i)] = s;
                    let nv = &v * g;
                    let val = modal_value(lam_sq, &a, &nv, ds);
                    if val > cur {
                        v = nv;
                        cur = val;
                        improved = true;
                    }
                }
            }
        }
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let t = delta.min(a[j]);
                if t <= 0.0 {
                    continue;
                }
                let mut na = a.clone();
                na[i] += t;
                na[j] -= t;
                let val = modal_value(lam_sq, &na, &v, ds);
                if val > cur {
                    a = na;
                    cur = val;
                    improved = true;
                }
            }
        }
        if !improved {
            delta *= 0.5;
        }
    }
    (a, v)
}

/// MaxMinDist: maximize `d_min(P)` subject to `Tr(PPᵀ) = ρ`.
///
/// The optimum is searched over `P = U_H,k diag(σ) V_kᵀ`. Exact paths: one
/// stream (closed form), two streams (angle grid with exact inner power
/// split and refinement), and a rank-one channel with at most
/// [`MAX_RANK_ONE_EXACT`] directions (sign-pattern enumeration). Everything
/// else uses annealed multi-start search and is flagged `heuristic`.
///
/// The search runs at unit power and is rescaled, so
/// `max_min_dist(αρ) = (α d⋆, √α P⋆)` holds to rounding.
pub fn max_min_dist(rho: f64, ds: &DifferenceSet, ch: &Channel, opts: &MaxMinOptions) -> Result<DistanceResult> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("power must be positive, got {rho}")));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDifferenceSet);
    }
    let m = ds.dim();
    let lam = ch.lambda_sq();
    let tol = 1e-12 * lam[0].max(f64::MIN_POSITIVE);
    let k = lam.iter().take(m.min(ch.p())).filter(|&&l| l > tol).count();
    // One mode reduces to MinNorm over directions, which stays cheap.
    let m_cap = if k <= 1 { MAX_MINNORM } else { MAX_DIM };
    if m > m_cap || ds.len() > MAX_DIFFS {
        return Err(Error::DimensionCap(format!(
            "MaxMinDist supports m ≤ {m_cap} and |𝓔| ≤ {MAX_DIFFS} here, got m = {m}, |𝓔| = {}",
            ds.len()
        )));
    }
    let lam_sq: Vec<f64> = lam.iter().take(k).cloned().collect();
    let unit = match (m, k) {
        (_, 0) => UnitSolution {
            a: vec![1.0 / m.min(ch.p()) as f64; m.min(ch.p())],
            v: Matrix::identity(m, m),
            heuristic: false,
        },
        (1, _) => UnitSolution {
            a: vec![1.0],
            v: Matrix::identity(1, 1),
            heuristic: false,
        },
        (_, 1) => rank_one(m, ds, opts),
        (2, 2) => two_stream(&lam_sq, ds, opts),
        _ => annealed(&lam_sq, m, ds, opts),
    };
    let kk = unit.a.len();
    let u = ch.eig_vectors.columns(0, kk).into_owned();
    let sig = Vector::from_iterator(kk, unit.a.iter().map(|a| a.max(0.0).sqrt()));
    let p1 = &u * Matrix::from_diagonal(&sig) * unit.v.columns(0, kk).transpose();
    let prec = Precoder::new(p1 * rho.sqrt());
    let mut res = d_min(ch, &prec, ds)?;
    res.power = Some(rho);
    res.heuristic = unit.heuristic;
    Ok(res)
}

/// MinPower: the least `Tr(PPᵀ)` with `d_min(P) ≥ d`, via
/// [`reduce_minpower_to_maxmindist`].
pub fn min_power(d: f64, ds: &DifferenceSet, ch: &Channel, opts: &MaxMinOptions) -> Result<DistanceResult> {
    reduce_minpower_to_maxmindist(d, ds, ch, opts)
}

/// MinPower from one unit-power MaxMinDist call:
/// `{d₀⋆, P₀⋆} = MaxMinDist(1)`, `ρ⋆ = d/d₀⋆`, `P⋆ = √(d/d₀⋆) P₀⋆`.
pub fn reduce_minpower_to_maxmindist(
    d: f64,
    ds: &DifferenceSet,
    ch: &Channel,
    opts: &MaxMinOptions,
) -> Result<DistanceResult> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!("target distance must be positive, got {d}")));
    }
    let base = max_min_dist(1.0, ds, ch, opts)?;
    let d0 = base.value;
    if !(d0 > 0.0) {
        return Err(Error::Infeasible);
    }
    let rho = d / d0;
    let p0 = base.precoder.expect("MaxMinDist returns a precoder");
    let prec = p0.scaled(rho.sqrt());
    let mut res = d_min(ch, &prec, ds)?;
    res.power = Some(rho);
    res.heuristic = base.heuristic;
    Ok(res)
}

/// Sign convention for `z⋆`: first nonzero coordinate positive.
fn canonical_sign(z: Vector) -> Vector {
    match z.iter().find(|x| x.abs() > 1e-12) {
        Some(&x) if x < 0.0 => -z,
        _ => z,
    }
}

/// MinNorm by enumeration: the optimum is the least-norm solution of
/// `ε_i w_iᵀ z = 1` over some linearly independent subset of constraints and
/// signs, so every such candidate is solved and the best feasible kept.
pub fn min_norm(inst: &MinNormInstance) -> Result<(f64, Vector)> {
    let w = inst.weights();
    let n = w.len();
    let m = inst.dim();
    if n > MAX_MINNORM {
        return Err(Error::DimensionCap(format!(
            "MinNorm enumeration supports at most {MAX_MINNORM} constraints, got {n}"
        )));
    }
    let mut best: Option<(f64, Vector)> = None;
    for mask in 1u32..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let s = idx.len();
        if s > m {
            continue;
        }
        let ws = Matrix::from_fn(s, m, |r, c| w[idx[r]][c]);
        let gram = &ws * ws.transpose();
        let Some(ginv) = gram.clone().try_inverse() else {
            continue;
        };
        let sv = gram.singular_values();
        if sv.min() <= 1e-12 * sv.max() {
            continue;
        }
        for signs in 0u32..(1u32 << (s - 1)) {
            let eps = Vector::from_fn(s, |r, _| if r > 0 && signs >> (r - 1) & 1 == 1 { -1.0 } else { 1.0 });
            let z = ws.transpose() * (&ginv * eps);
            let feasible = w.iter().all(|wi| wi.dot(&z).abs() >= 1.0 - 1e-10);
            let t = z.norm_squared();
            if feasible && best.as_ref().is_none_or(|b| t < b.0 * (1.0 - 1e-14)) {
                best = Some((t, z));
            }
        }
    }
    let (t, z) = best.expect("the single-constraint candidates are never all infeasible");
    Ok((t, canonical_sign(z)))
}

/// Output of the MinNorm → MinPower reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNormReduction {
    pub t: f64,
    pub z: Vector,
    pub channel: Channel,
    pub precoder: Precoder,
    pub heuristic: bool,
}

/// MinNorm via one MinPower call: `H = (1 0 … 0)`, `𝓔 = {w_i}`,
/// `{ρ⋆, P⋆} = MinPower(1, 𝓔, H)`, `t⋆ = ρ⋆`, `z⋆ = FirstRow(P⋆)ᵀ`.
pub fn reduce_minnorm_to_minpower(inst: &MinNormInstance, opts: &MaxMinOptions) -> Result<MinNormReduction> {
    let m = inst.dim();
    let mut h = Matrix::zeros(1, m);
    h[(0, 0)] = 1.0;
    let ch = Channel::new(h)?;
    let ds = DifferenceSet::unstructured(inst.weights().to_vec())?;
    let res = min_power(1.0, &ds, &ch, opts)?;
    let precoder = res.precoder.expect("MinPower returns a precoder");
    let z = canonical_sign(precoder.p.row(0).transpose());
    Ok(MinNormReduction {
        t: res.power.expect("MinPower returns its power"),
        z,
        channel: ch,
        precoder,
        heuristic: res.heuristic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{difference_set, make_constellation};
    use crate::matcalc::gaussian_matrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn bpsk_diffs(m: usize) -> DifferenceSet {
        difference_set(&make_constellation("bpsk", m).unwrap()).unwrap()
    }

    #[test]
    fn d_min_examples() {
        let ch = Channel::new(Matrix::identity(2, 2)).unwrap();
        let ds = bpsk_diffs(2);
        let r = d_min(&ch, &Precoder::new(Matrix::identity(2, 2)), &ds).unwrap();
        assert_abs_diff_eq!(r.value, 4.0, epsilon = 1e-12);
        assert_eq!(r.argmin_diff, v(&[-2.0, 0.0]));
        let r = d_min(&ch, &Precoder::new(Matrix::zeros(2, 2)), &ds).unwrap();
        assert_eq!(r.value, 0.0);
        let p = Precoder::new(Matrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 0.4]));
        let base = d_min(&ch, &p, &ds).unwrap().value;
        let scaled = d_min(&ch, &p.scaled(3f64.sqrt()), &ds).unwrap().value;
        assert_abs_diff_eq!(scaled, 3.0 * base, epsilon = 1e-12);
        let empty = DifferenceSet::unstructured(vec![]);
        assert_eq!(empty, Err(Error::EmptyDifferenceSet));
    }

    #[test]
    fn best_split_is_exact() {
        // min(x, 1 − x) peaks at ½.
        let (x, val) = best_split(&[1.0, 0.0], &[0.0, 1.0]);
        assert_abs_diff_eq!(x, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(val, 0.5, epsilon = 1e-12);
        assert_eq!(best_split(&[2.0], &[1.0]), (1.0, 2.0));
        assert_eq!(best_split(&[1.0], &[2.0]), (0.0, 2.0));
    }

    #[test]
    fn single_stream_closed_form() {
        let ds = DifferenceSet::unstructured(vec![v(&[2.0]), v(&[-0.5]), v(&[1.0])]).unwrap();
        let ch = Channel::new(Matrix::from_row_slice(2, 1, &[1.0, 1.0])).unwrap();
        let r = max_min_dist(3.0, &ds, &ch, &MaxMinOptions::default()).unwrap();
        assert_abs_diff_eq!(r.value, 3.0 * 2.0 * 0.25, epsilon = 1e-12);
        assert!(!r.heuristic);
    }

    /// The two-stream exact path against the best of many random precoders.
    #[test]
    fn two_stream_beats_random_search() {
        let ch = Channel::new(Matrix::identity(2, 2)).unwrap();
        let ds = bpsk_diffs(2);
        let rho = 2.0;
        let r = max_min_dist(rho, &ds, &ch, &MaxMinOptions::default()).unwrap();
        assert!(!r.heuristic);
        assert_abs_diff_eq!(r.precoder.as_ref().unwrap().power, rho, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut best = 0.0f64;
        for _ in 0..100_000 {
            let p = gaussian_matrix(&mut rng, 2, 2);
            let p = &p * (rho / p.norm_squared()).sqrt();
            best = best.max(d_min(&ch, &Precoder::new(p), &ds).unwrap().value);
        }
        assert!(r.value >= best - 1e-9, "{} < {best}", r.value);
        assert!(r.value <= best * 1.01, "{} vs {best}", r.value);
    }

    #[test]
    fn scaling_law_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = Channel::new(gaussian_matrix(&mut rng, 2, 2)).unwrap();
        let ds = bpsk_diffs(2);
        let opts = MaxMinOptions::default();
        let a = max_min_dist(1.5, &ds, &ch, &opts).unwrap();
        let b = max_min_dist(6.0, &ds, &ch, &opts).unwrap();
        assert_abs_diff_eq!(b.value, 4.0 * a.value, epsilon = 1e-12 * b.value);
        let pa = a.precoder.unwrap().p;
        let pb = b.precoder.unwrap().p;
        assert!((pb - pa * 2.0).amax() < 1e-12);
    }

    #[test]
    fn min_power_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = Channel::new(gaussian_matrix(&mut rng, 2, 2)).unwrap();
        let ds = bpsk_diffs(2);
        let opts = MaxMinOptions::default();
        let d0 = max_min_dist(1.0, &ds, &ch, &opts).unwrap();
        let fixed = min_power(d0.value, &ds, &ch, &opts).unwrap();
        assert_abs_diff_eq!(fixed.power.unwrap(), 1.0, epsilon = 1e-12);
        let p1 = min_power(2.0, &ds, &ch, &opts).unwrap();
        let p2 = min_power(4.0, &ds, &ch, &opts).unwrap();
        assert_abs_diff_eq!(p2.power.unwrap(), 2.0 * p1.power.unwrap(), epsilon = 1e-12);
        assert!((&p2.precoder.as_ref().unwrap().p - &p1.precoder.as_ref().unwrap().p * 2f64.sqrt()).amax() < 1e-12);
        assert!(p1.value >= 2.0 - 1e-8);
        let back = max_min_dist(p1.power.unwrap(), &ds, &ch, &opts).unwrap();
        assert_abs_diff_eq!(back.value, 2.0, epsilon = 1e-8);
        let direct = reduce_minpower_to_maxmindist(2.0, &ds, &ch, &opts).unwrap();
        assert_eq!(direct, p1);

        let zero = Channel::new(Matrix::zeros(2, 2)).unwrap();
        assert_eq!(min_power(1.0, &ds, &zero, &opts), Err(Error::Infeasible));
    }

    #[test]
    fn min_norm_examples() {
        let inst = MinNormInstance::new(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        let (t, z) = min_norm(&inst).unwrap();
        assert_abs_diff_eq!(t, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[0].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1].abs(), 1.0, epsilon = 1e-12);
        assert!(z[0] > 0.0);

        let inst = MinNormInstance::new(vec![v(&[1.0, 0.0]), v(&[1.0, 0.0])]).unwrap();
        assert_abs_diff_eq!(min_norm(&inst).unwrap().0, 1.0, epsilon = 1e-12);

        let r = std::f64::consts::FRAC_1_SQRT_2;
        let inst = MinNormInstance::new(vec![v(&[1.0, 0.0]), v(&[r, r])]).unwrap();
        let (t, z) = min_norm(&inst).unwrap();
        let s = 2f64.sqrt() - 1.0;
        assert_abs_diff_eq!(t, 1.0 + s * s, epsilon = 1e-12);
        assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], s, epsilon = 1e-12);

        assert!(MinNormInstance::new(vec![v(&[0.0, 0.0])]).is_err());
    }

    /// Brute-force oracle for MinNorm on a fine sphere grid (2-D only).
    #[test]
    fn min_norm_against_angle_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let w: Vec<Vector> = (0..2).map(|_| gaussian_matrix(&mut rng, 2, 1).column(0).into_owned()).collect();
            let inst = MinNormInstance::new(w.clone()).unwrap();
            let (t, _) = min_norm(&inst).unwrap();
            let scan = (0..200_000)
                .map(|i| {
                    let th = std::f64::consts::PI * i as f64 / 200_000.0;
                    let u = v(&[th.cos(), th.sin()]);
                    let lo = w.iter().map(|wi| wi.dot(&u).abs()).fold(f64::INFINITY, f64::min);
                    1.0 / (lo * lo)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(t <= scan + 1e-12 && t >= scan * (1.0 - 2e-5), "{t} vs {scan}");
        }
    }

    #[test]
    fn reduction_chain_worked_instance() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let inst = MinNormInstance::new(vec![v(&[1.0, 0.0]), v(&[r, r])]).unwrap();
        let red = reduce_minnorm_to_minpower(&inst, &MaxMinOptions::default()).unwrap();
        let s = 2f64.sqrt() - 1.0;
        assert_abs_diff_eq!(red.t, 1.0 + s * s, epsilon = 1e-9);
        assert_abs_diff_eq!(red.z[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(red.z[1], s, epsilon = 1e-6);
        assert!(!red.heuristic);
        assert_eq!(red.channel.h, Matrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert!(red.precoder.p.rows(1, 1).amax() < 1e-8);

        let inst = MinNormInstance::new(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        let red = reduce_minnorm_to_minpower(&inst, &MaxMinOptions::default()).unwrap();
        assert_abs_diff_eq!(red.t, 2.0, epsilon = 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn reduction_agrees_with_enumeration(seed in 0u64..u64::MAX, m in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<Vector> = (0..m).map(|_| gaussian_matrix(&mut rng, m, 1).column(0).into_owned()).collect();
            let inst = MinNormInstance::new(w).unwrap();
            let (t, _) = min_norm(&inst).unwrap();
            let red = reduce_minnorm_to_minpower(&inst, &MaxMinOptions::default()).unwrap();
            prop_assert!(!red.heuristic);
            prop_assert!((red.t - t).abs() <= 1e-6 * t, "reduction {} vs {}", red.t, t);
            prop_assert!(red.precoder.p.rows(1, m - 1).amax() <= 1e-8);
        }
    }

    #[test]
    fn three_streams_heuristic_is_flagged_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ch = Channel::new(gaussian_matrix(&mut rng, 3, 3)).unwrap();
        let ds = bpsk_diffs(3);
        let opts = MaxMinOptions { starts: 4, ..Default::default() };
        let r = max_min_dist(1.0, &ds, &ch, &opts).unwrap();
        assert!(r.heuristic);
        let p = r.precoder.as_ref().unwrap();
        assert_abs_diff_eq!(p.power, 1.0, epsilon = 1e-10);
        // At least as good as the uniform aligned precoder.
        let u = ch.eig_vectors.clone();
        let uniform = Precoder::new(u / 3f64.sqrt());
        assert!(r.value >= d_min(&ch, &uniform, &ds).unwrap().value - 1e-12);
        let again = max_min_dist(1.0, &ds, &ch, &opts).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn caps() {
        let ds = DifferenceSet::unstructured(vec![Vector::from_element(5, 1.0)]).unwrap();
        let ch = Channel::new(Matrix::identity(5, 5)).unwrap();
        assert!(matches!(
            max_min_dist(1.0, &ds, &ch, &MaxMinOptions::default()),
            Err(Error::DimensionCap(_))
        ));
        let inst = MinNormInstance::new(vec![Vector::from_element(2, 1.0); 13]).unwrap();
        assert!(matches!(min_norm(&inst), Err(Error::DimensionCap(_))));
    }
}
