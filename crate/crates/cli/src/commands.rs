//! The five subcommands. Each returns the text to emit and whether every
//! iterative solver converged.

use anyhow::{bail, Context, Result};
use serde::Serialize;

use precoding::channel::{difference_set, Channel, DifferenceSet, Precoder};
use precoding::estimator::Signaling;
use precoding::formats::{matrix_to_rows, DistanceTarget};
use precoding::infomeasures::{mi_for_precoder, MiEstimate};
use precoding::matcalc::{sym_eigen_desc, Matrix, Vector};
use precoding::mindist::{
    d_min, max_min_dist, min_norm, reduce_minnorm_to_minpower, reduce_minpower_to_maxmindist, DistanceResult,
    MaxMinOptions,
};
use precoding::precoder_opt::{
    align_left_singvecs, max_performance, opt_power_alloc, waterfilling, KktReport, PrecoderSolution,
};
use precoding::verify::{suite, Budget, Mutation};

use crate::config::{rho_from_db, Format, Instance, Resolved};

pub struct Outcome {
    pub text: String,
    pub converged: bool,
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn csv_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn column(v: &Vector) -> Vec<f64> {
    v.iter().cloned().collect()
}

fn diffs_of(sig: &Signaling) -> Result<Option<DifferenceSet>> {
    match sig {
        Signaling::Discrete(c) => Ok(Some(difference_set(c)?)),
        Signaling::Gaussian { .. } => Ok(None),
    }
}

fn dmin_of(ch: &Channel, prec: &Precoder, ds: Option<&DifferenceSet>) -> Result<Option<f64>> {
    ds.map(|ds| d_min(ch, prec, ds).map(|r| r.value)).transpose().map_err(Into::into)
}

#[derive(Serialize)]
struct OptimizeOut {
    rho: f64,
    input: &'static str,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    power: f64,
    mi_nats: f64,
    mi_bits: f64,
    mi_stderr: f64,
    dmin: Option<f64>,
    vp_trace: Option<Vec<f64>>,
    kkt: KktReport,
    converged: bool,
}

pub fn optimize(r: &Resolved) -> Result<Outcome> {
    let ch = r.channel()?;
    let sig = r.signaling()?;
    let rho = r.rho()?;
    let sol = max_performance(&ch, &sig, rho, &r.cfg.integration, &r.cfg.search)?;
    let converged = sol.kkt.converged;
    // Same evaluator as the sweep rows.
    let mi = mi_for_precoder(&ch, &sol.precoder.p, &sig, &r.cfg.integration)?;
    if r.format == Some(Format::Csv) {
        let snr_db = r.snr_db()?;
        let row = row_for(snr_db, "full", &mi, dmin_of(&ch, &sol.precoder, diffs_of(&sig)?.as_ref())?, iterations(&sol));
        return Ok(Outcome { text: csv_rows(&[row])?, converged });
    }
    let k = sol.sigma_sq.len();
    let out = OptimizeOut {
        rho,
        input: if sig.is_gaussian() { "gaussian" } else { "discrete" },
        u: matrix_to_rows(&align_left_singvecs(&ch, k)),
        sigma: sol.sigma_sq.iter().map(|s| s.sqrt()).collect(),
        v: matrix_to_rows(&sol.v),
        p: matrix_to_rows(&sol.precoder.p),
        power: sol.precoder.power,
        mi_nats: mi.nats,
        mi_bits: mi.bits(),
        mi_stderr: mi.stderr,
        dmin: dmin_of(&ch, &sol.precoder, diffs_of(&sig)?.as_ref())?,
        vp_trace: sol.vp_trace.clone(),
        kkt: sol.kkt,
        converged,
    };
    Ok(Outcome { text: json(&out)?, converged })
}

#[derive(Serialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub strategy: &'static str,
    pub mi_nats: f64,
    pub mi_stderr: f64,
    pub dmin: Option<f64>,
    pub iterations: usize,
}

fn row_for(snr_db: f64, strategy: &'static str, mi: &MiEstimate, dmin: Option<f64>, iterations: usize) -> SweepRow {
    SweepRow {
        snr_db,
        strategy,
        mi_nats: mi.nats,
        mi_stderr: mi.stderr,
        dmin,
        iterations,
    }
}

fn iterations(sol: &PrecoderSolution) -> usize {
    sol.vp_trace.as_ref().map_or(sol.kkt.iterations, Vec::len)
}

/// `√(ρ/k) I_{p×m}` with `k = min(p, m)`, so the power is exactly `ρ`.
pub fn no_precoding(ch: &Channel, m: usize, rho: f64) -> Precoder {
    let p = ch.p();
    Precoder::new(Matrix::identity(p, m) * (rho / p.min(m) as f64).sqrt())
}

pub fn sweep(r: &Resolved) -> Result<Outcome> {
    let ch = r.channel()?;
    let sig = r.signaling()?;
    let grid = r.snr_grid()?;
    let ds = diffs_of(&sig)?;
    let cfg = &r.cfg.integration;
    let m = sig.dim();
    let k = ch.p().min(m);
    let u = align_left_singvecs(&ch, k);
    let lam_sq: Vec<f64> = ch.lambda_sq().iter().take(k).cloned().collect();
    let mut rows = Vec::new();
    let mut converged = true;
    for &snr_db in &grid {
        let rho = rho_from_db(snr_db);
        let mi = |p: &Precoder| mi_for_precoder(&ch, &p.p, &sig, cfg);

        let plain = no_precoding(&ch, m, rho);
        rows.push(row_for(snr_db, "no-precoding", &mi(&plain)?, dmin_of(&ch, &plain, ds.as_ref())?, 0));

        let wf = Precoder::aligned(&u, &waterfilling(&lam_sq, rho)?, &Matrix::identity(m, m))?;
        rows.push(row_for(snr_db, "waterfilling", &mi(&wf)?, dmin_of(&ch, &wf, ds.as_ref())?, 0));

        // Right factor of the aligned form of the unprecoded system.
        let (_, v) = sym_eigen_desc(&(plain.p.transpose() * &ch.gram * &plain.p));
        let (s2, kkt) = opt_power_alloc(&ch, &sig, &v, rho, cfg)?;
        let fixed = Precoder::aligned(&u, &s2, &v)?;
        let fixed_mi = mi(&fixed)?;
        converged &= kkt.converged;
        rows.push(row_for(snr_db, "kkt-alloc-fixed-V", &fixed_mi, dmin_of(&ch, &fixed, ds.as_ref())?, kkt.iterations));

        let sol = max_performance(&ch, &sig, rho, cfg, &r.cfg.search)?;
        converged &= sol.kkt.converged;
        let full_mi = mi(&sol.precoder)?;
        let row = if full_mi.nats >= fixed_mi.nats {
            row_for(snr_db, "full", &full_mi, dmin_of(&ch, &sol.precoder, ds.as_ref())?, iterations(&sol))
        } else {
            row_for(snr_db, "full", &fixed_mi, dmin_of(&ch, &fixed, ds.as_ref())?, iterations(&sol))
        };
        rows.push(row);
    }
    let text = match r.format {
        Some(Format::Json) => json(&rows)?,
        _ => csv_rows(&rows)?,
    };
    Ok(Outcome { text, converged })
}

#[derive(Serialize)]
struct DistanceOut {
    problem: &'static str,
    d: f64,
    power: f64,
    argmin_diff: Vec<f64>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    heuristic: bool,
}

#[derive(Serialize)]
struct DistanceRow {
    problem: &'static str,
    d: f64,
    power: f64,
    heuristic: bool,
}

fn distance_out(problem: &'static str, res: &DistanceResult) -> DistanceOut {
    DistanceOut {
        problem,
        d: res.value,
        power: res.power.unwrap_or(f64::NAN),
        argmin_diff: column(&res.argmin_diff),
        p: res.precoder.as_ref().map(|p| matrix_to_rows(&p.p)).unwrap_or_default(),
        heuristic: res.heuristic,
    }
}

pub fn mindist(r: &Resolved) -> Result<Outcome> {
    let opts = &r.cfg.mindist;
    let (problem, res) = match r.instance()? {
        Some(Instance::Distance(f)) => {
            let (ds, ch, target) = f.build()?;
            match target {
                DistanceTarget::Power(rho) => ("max-min-dist", max_min_dist(rho, &ds, &ch, opts)?),
                DistanceTarget::Distance(d) => ("min-power", reduce_minpower_to_maxmindist(d, &ds, &ch, opts)?),
            }
        }
        Some(Instance::Weights(_)) => bail!("mindist needs a distance instance, not MinNorm weights"),
        None => {
            let ch = r.channel()?;
            let ds = diffs_of(&r.signaling()?)?.context("mindist needs a discrete constellation")?;
            ("max-min-dist", max_min_dist(r.rho()?, &ds, &ch, opts)?)
        }
    };
    let out = distance_out(problem, &res);
    let text = match r.format {
        Some(Format::Csv) => csv_rows(&[DistanceRow {
            problem,
            d: out.d,
            power: out.power,
            heuristic: out.heuristic,
        }])?,
        _ => json(&out)?,
    };
    Ok(Outcome { text, converged: true })
}

#[derive(Serialize)]
struct ReduceOut {
    reduction: &'static str,
    /// Value from the reduction.
    reduced: f64,
    /// Value from the independent oracle.
    direct: f64,
    /// `|reduced − direct| / max(1, |direct|)`.
    delta: f64,
    heuristic: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_reduced: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_direct: Option<Vec<f64>>,
    #[serde(rename = "P", skip_serializing_if = "Option::is_none")]
    p: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct ReduceRow {
    reduction: &'static str,
    reduced: f64,
    direct: f64,
    delta: f64,
    heuristic: bool,
}

/// Least power reaching distance `d`, by bisection on `ρ ↦ MaxMinDist(ρ)`.
pub fn min_power_by_bisection(d: f64, ds: &DifferenceSet, ch: &Channel, opts: &MaxMinOptions) -> Result<f64> {
    let reach = |rho: f64| -> Result<f64> { Ok(max_min_dist(rho, ds, ch, opts)?.value) };
    let mut hi = 1.0;
    let mut tries = 0;
    while reach(hi)? < d {
        hi *= 4.0;
        tries += 1;
        if tries > 200 {
            bail!("no power up to {hi:e} reaches distance {d}");
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if reach(mid)? >= d {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn rel_delta(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn reduce(r: &Resolved) -> Result<Outcome> {
    let opts = &r.cfg.mindist;
    let out = match r.instance()?.context("reduce needs an `instance`")? {
        Instance::Weights(w) => {
            let inst = w.build()?;
            let red = reduce_minnorm_to_minpower(&inst, opts)?;
            let (t, z) = min_norm(&inst)?;
            ReduceOut {
                reduction: "minnorm-to-minpower",
                reduced: red.t,
                direct: t,
                delta: rel_delta(red.t, t),
                heuristic: red.heuristic,
                z_reduced: Some(column(&red.z)),
                z_direct: Some(column(&z)),
                p: Some(matrix_to_rows(&red.precoder.p)),
            }
        }
        Instance::Distance(f) => {
            let (ds, ch, target) = f.build()?;
            let d = match target {
                DistanceTarget::Distance(d) => d,
                DistanceTarget::Power(_) => bail!("reduce needs a distance instance with `d`"),
            };
            let red = reduce_minpower_to_maxmindist(d, &ds, &ch, opts)?;
            let power = red.power.expect("MinPower reports its power");
            let direct = min_power_by_bisection(d, &ds, &ch, opts)?;
            ReduceOut {
                reduction: "minpower-to-maxmindist",
                reduced: power,
                direct,
                delta: rel_delta(power, direct),
                heuristic: red.heuristic,
                z_reduced: None,
                z_direct: None,
                p: red.precoder.as_ref().map(|p| matrix_to_rows(&p.p)),
            }
        }
    };
    let text = match r.format {
        Some(Format::Csv) => csv_rows(&[ReduceRow {
            reduction: out.reduction,
            reduced: out.reduced,
            direct: out.direct,
            delta: out.delta,
            heuristic: out.heuristic,
        }])?,
        _ => json(&out)?,
    };
    Ok(Outcome { text, converged: true })
}

#[derive(Serialize)]
struct CheckOut<'a> {
    name: &'a str,
    passed: bool,
    detail: &'a str,
}

/// Runs the verification suite. Timings go to stderr so the report itself is
/// reproducible.
pub fn verify(budget: Budget, mutation: Mutation, format: Option<Format>) -> Result<Outcome> {
    let checks = suite(budget, mutation);
    for c in &checks {
        eprintln!("{:<24} {:8.2}s", c.name, c.seconds);
    }
    let all = checks.iter().all(|c| c.passed);
    let text = match format {
        Some(Format::Json) => json(
            &checks
                .iter()
                .map(|c| CheckOut {
                    name: c.name,
                    passed: c.passed,
                    detail: &c.detail,
                })
                .collect::<Vec<_>>(),
        )?,
        Some(Format::Csv) => csv_rows(
            &checks
                .iter()
                .map(|c| CheckOut {
                    name: c.name,
                    passed: c.passed,
                    detail: &c.detail,
                })
                .collect::<Vec<_>>(),
        )?,
        None => {
            let mut s = String::new();
            for c in &checks {
                s.push_str(&format!("{:<4} {:<24} {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
            }
            let passed = checks.iter().filter(|c| c.passed).count();
            s.push_str(&format!("{passed}/{} checks passed\n", checks.len()));
            s
        }
    };
    Ok(Outcome { text, converged: all })
}
