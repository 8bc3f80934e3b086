use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use precoding::channel::{difference_set, make_constellation, Channel, Precoder};
use precoding::estimator::{mmse_stats, Signaling};
use precoding::infomeasures::{mi_discrete, mi_for_precoder, mi_gaussian};
use precoding::integration::IntegrationConfig;
use precoding::matcalc::Matrix;
use precoding::mindist::{d_min, max_min_dist, MaxMinOptions};
use precoding::precoder_opt::{align_improvement, max_performance, waterfilling, VSearchOptions};

fn bpsk(m: usize) -> Signaling {
    make_constellation("bpsk", m).unwrap().into()
}

// Scalar BPSK at unit gain, from 1-D adaptive quadrature of the closed forms.
const BPSK_MI_UNIT_GAIN: f64 = 0.336830820;
const BPSK_MMSE_UNIT_GAIN: f64 = 0.4495995095;

#[test]
fn scalar_bpsk_reference_values() {
    let g = Matrix::from_element(1, 1, 1.0);
    let gh = IntegrationConfig::gauss_hermite(30);
    assert_abs_diff_eq!(mi_discrete(&g, &bpsk(1), &gh).unwrap().nats, BPSK_MI_UNIT_GAIN, epsilon = 1e-7);
    let mmse = mmse_stats(&g, &bpsk(1), &gh).unwrap().mmse_diag[0];
    // The tanh integrand converges more slowly under 30-node quadrature.
    assert_abs_diff_eq!(mmse, BPSK_MMSE_UNIT_GAIN, epsilon = 1e-5);

    let mc = IntegrationConfig::monte_carlo(200_000, 9);
    let est = mi_discrete(&g, &bpsk(1), &mc).unwrap();
    assert!((est.nats - BPSK_MI_UNIT_GAIN).abs() < 4.0 * est.stderr + 1e-4);
}

#[test]
fn discrete_pipeline_beats_unprecoded_and_stays_below_gaussian() {
    let ch = Channel::new(Matrix::from_row_slice(2, 2, &[1.0, 0.4, 0.2, 0.7])).unwrap();
    let gh = IntegrationConfig::gauss_hermite(20);
    let rho = 3.0;
    let sol = max_performance(&ch, &bpsk(2), rho, &gh, &VSearchOptions::default()).unwrap();
    let plain = Precoder::new(Matrix::identity(2, 2) * (rho / 2.0).sqrt());
    let base = mi_for_precoder(&ch, &plain.p, &bpsk(2), &gh).unwrap();
    assert!(sol.mi.nats >= base.nats);
    assert!((sol.precoder.power - rho).abs() < 1e-9);

    let wf = waterfilling(ch.lambda_sq().as_slice(), rho).unwrap();
    let gauss = Precoder::aligned(&ch.eig_vectors, &wf, &Matrix::identity(2, 2)).unwrap();
    let cap = mi_gaussian(&gauss.q(), &ch.gram).unwrap();
    assert!(sol.mi.nats <= cap.nats);
    assert!(sol.mi.nats <= 2.0 * std::f64::consts::LN_2);
}

#[test]
fn high_snr_optimum_separates_the_alphabet() {
    let ch = Channel::diagonal(&[1.0, 0.6]).unwrap();
    let ds = difference_set(&make_constellation("bpsk", 2).unwrap()).unwrap();
    let rho = 40.0 / 0.6;
    let gh = IntegrationConfig::gauss_hermite(30);
    let sol = max_performance(&ch, &bpsk(2), rho, &gh, &VSearchOptions::default()).unwrap();
    let star = max_min_dist(rho, &ds, &ch, &MaxMinOptions::default()).unwrap();
    let got = d_min(&ch, &sol.precoder, &ds).unwrap();
    assert!(got.value >= 0.9 * star.value, "{} vs {}", got.value, star.value);
    assert!(got.value <= star.value * (1.0 + 1e-9));
}

fn matrix(entries: &[f64], r: usize, c: usize) -> Matrix {
    Matrix::from_row_slice(r, c, entries)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn waterfilling_spends_the_budget(l in prop::collection::vec(0.01f64..5.0, 1..5), rho in 0.01f64..20.0) {
        let s = waterfilling(&l, rho).unwrap();
        prop_assert!((s.iter().sum::<f64>() - rho).abs() < 1e-9 * rho.max(1.0));
        prop_assert!(s.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn alignment_keeps_gram_and_saves_power(h in prop::collection::vec(-2.0f64..2.0, 6), p in prop::collection::vec(-1.5f64..1.5, 4)) {
        let ch = Channel::new(matrix(&h, 3, 2)).unwrap();
        let prec = Precoder::new(matrix(&p, 2, 2));
        let al = align_improvement(&ch, &prec).unwrap();
        let gram = |q: &Precoder| q.p.transpose() * &ch.gram * &q.p;
        prop_assert!((gram(&al) - gram(&prec)).amax() < 1e-8 * (1.0 + gram(&prec).amax()));
        prop_assert!(al.power <= prec.power + 1e-10);
    }

    #[test]
    fn max_min_dist_scales_linearly(l0 in 0.2f64..3.0, ratio in 0.1f64..1.0, alpha in 0.1f64..10.0) {
        let ch = Channel::diagonal(&[l0, l0 * ratio]).unwrap();
        let ds = difference_set(&make_constellation("bpsk", 2).unwrap()).unwrap();
        let opts = MaxMinOptions { grid: 360, ..Default::default() };
        let a = max_min_dist(1.0, &ds, &ch, &opts).unwrap().value;
        let b = max_min_dist(alpha, &ds, &ch, &opts).unwrap().value;
        prop_assert!((b - alpha * a).abs() <= 1e-12 * b.max(1.0));
    }
}
