use fgn_approx::ar1_fit::{build_table_with, CoeffTable, TableOptions};
use fgn_approx::dense::DenseMatrix;
use fgn_approx::fgn_exact::simulate_exact;
use fgn_approx::gmrf::{assemble_precision, default_kappa};
use fgn_approx::hurst::{h_from_hurst, hurst_from_h, HurstParams};
use fgn_approx::inference::{
    approx_covariance, decompose, kl_gaussian, kld, loglik, loglik_approx, loglik_approx_mixture,
    loglik_approx_profiled, mle, predict, prediction_error_study, profile_loglik, replication_study, Model,
    MleOptions, ModelKind, PredictionStudyOptions, ReplicationOptions,
};
use fgn_approx::observation::ObservationModel;
use fgn_approx::optim::{nelder_mead, NelderMeadOptions};

fn table(m: usize) -> CoeffTable {
    CoeffTable::builtin(m).unwrap()
}

fn series(hurst: f64, n: usize, seed: u64) -> Vec<f64> {
    simulate_exact(&HurstParams::new(hurst, 1.0).unwrap(), n, seed).unwrap()
}

fn scaled(cov: &DenseMatrix, s2: f64) -> DenseMatrix {
    DenseMatrix::from_fn(cov.dim(), |i, j| s2 * cov[(i, j)])
}

#[test]
fn approximate_likelihood_matches_dense() {
    let x = series(0.8, 200, 3);
    for m in [3, 4] {
        let t = table(m);
        for &hurst in &[0.6, 0.8, 0.9] {
            let sigma = 1.3;
            let cov = approx_covariance(&t.lookup(hurst).unwrap(), 200, default_kappa()).unwrap();
            let dense = scaled(&cov, sigma * sigma).cholesky().unwrap().gaussian_logpdf(&x);
            let banded = loglik_approx(&x, hurst, sigma, &t).unwrap();
            assert!((banded - dense).abs() < 1e-8, "m {m} H {hurst}: {banded} vs {dense}");
        }
    }
}

#[test]
fn scale_family() {
    let t = table(4);
    let x = series(0.75, 150, 8);
    let mix = t.lookup(0.75).unwrap();
    let c: f64 = 2.5;
    let base = loglik_approx_profiled(&x, &mix, 1.0, default_kappa()).unwrap();
    let xs: Vec<f64> = x.iter().map(|v| c * v).collect();
    let moved = loglik_approx_profiled(&xs, &mix, c, default_kappa()).unwrap();
    assert!((moved - (base - 150.0 * c.ln())).abs() < 1e-8);
    let direct = loglik_approx_mixture(&x, &mix, 1.7, default_kappa()).unwrap();
    let profiled = loglik_approx_profiled(&x, &mix, 1.7, default_kappa()).unwrap();
    assert!((direct - profiled).abs() < 1e-7);
    let exact = loglik(&xs, 0.75, c, Model::Exact).unwrap();
    assert!((exact - (loglik(&x, 0.75, 1.0, Model::Exact).unwrap() - 150.0 * c.ln())).abs() < 1e-9);
}

#[test]
fn near_white_noise_is_close_to_independent() {
    let t = table(4);
    let x = series(0.5, 300, 4);
    let white: f64 = x
        .iter()
        .map(|v| -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * v * v)
        .sum();
    let exact = loglik(&x, 0.51, 1.0, Model::Exact).unwrap();
    let approx = loglik(&x, 0.51, 1.0, Model::approx(&t)).unwrap();
    assert!((exact - white).abs() < 1.0);
    assert!((approx - exact).abs() < 0.1);
}

#[test]
fn profile_agrees_with_joint_maximization() {
    let opts = MleOptions {
        center: false,
        ..MleOptions::default()
    };
    for seed in 0..20u64 {
        let x = series(0.7, 200, 500 + seed);
        let fit = mle(&x, Model::Exact, &opts).unwrap();
        if fit.boundary {
            continue;
        }
        let neg = |p: &[f64]| {
            let hurst = hurst_from_h(p[0]);
            if !(0.5 + 1e-9..0.999).contains(&hurst) {
                return f64::INFINITY;
            }
            -loglik(&x, hurst, p[1].exp(), Model::Exact).unwrap()
        };
        let start = [h_from_hurst(0.65), 0.0];
        let joint = nelder_mead(neg, &start, NelderMeadOptions::default());
        let hurst = hurst_from_h(joint.x[0]);
        assert!((hurst - fit.hurst).abs() < 1e-4, "seed {seed}: {hurst} vs {}", fit.hurst);
        assert!((joint.x[1].exp() - fit.sigma).abs() < 1e-4);
        assert!((-joint.value - fit.loglik).abs() < 1e-6);
    }
}

#[test]
fn profile_sigma_is_the_mle() {
    let x = series(0.8, 120, 9);
    let (ll, sigma) = profile_loglik(&x, 0.8, Model::Exact).unwrap();
    assert!((ll - loglik(&x, 0.8, sigma, Model::Exact).unwrap()).abs() < 1e-10);
    for f in [0.99, 1.01] {
        assert!(loglik(&x, 0.8, sigma * f, Model::Exact).unwrap() < ll);
    }
}

#[test]
fn approximate_prediction_matches_dense_oracle() {
    let (n, p, hurst, sigma) = (100, 10, 0.8, 1.2);
    let t = table(4);
    let x = series(hurst, n, 12);
    let pred = predict(&x, hurst, sigma, p, Model::approx(&t)).unwrap();
    let cov = scaled(
        &approx_covariance(&t.lookup(hurst).unwrap(), n + p, default_kappa()).unwrap(),
        sigma * sigma,
    );
    let obs: Vec<usize> = (0..n).collect();
    let chol = cov.select(&obs).cholesky().unwrap();
    let alpha = chol.solve(&x);
    for h in 0..p {
        let cross: Vec<f64> = (0..n).map(|i| cov[(n + h, i)]).collect();
        let mean: f64 = cross.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let u = chol.forward(&cross);
        let var = cov[(n + h, n + h)] - u.iter().map(|v| v * v).sum::<f64>();
        assert!((pred.mean[h] - mean).abs() < 1e-7, "mean at {h}");
        assert!((pred.sd[h] - var.sqrt()).abs() < 1e-7, "sd at {h}");
    }
}

#[test]
fn exact_prediction_matches_dense_oracle() {
    let (n, p) = (60, 5);
    let x = series(0.9, n, 13);
    let pred = predict(&x, 0.9, 1.0, p, Model::Exact).unwrap();
    let cov = Model::Exact.covariance(0.9, n + p).unwrap();
    let obs: Vec<usize> = (0..n).collect();
    let chol = cov.select(&obs).cholesky().unwrap();
    let alpha = chol.solve(&x);
    for h in 0..p {
        let cross: Vec<f64> = (0..n).map(|i| cov[(n + h, i)]).collect();
        let mean: f64 = cross.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        assert!((pred.mean[h] - mean).abs() < 1e-9);
    }
    assert!(pred.sd.windows(2).all(|s| s[1] >= s[0]));
}

#[test]
fn prediction_errors_are_scale_free_and_seed_free() {
    let t = table(4);
    let base = PredictionStudyOptions {
        hurst: 0.8,
        sigma: 1.0,
        n: 200,
        horizon: 10,
        replications: 20,
        seed: 1,
    };
    let a = prediction_error_study(&base, Model::Exact, Model::approx(&t)).unwrap();
    let b = prediction_error_study(&PredictionStudyOptions { sigma: 3.0, ..base.clone() }, Model::Exact, Model::approx(&t))
        .unwrap();
    for h in 0..10 {
        assert!((a.err_mu[h] - b.err_mu[h]).abs() < 1e-9 * a.err_mu[h].max(1.0));
        assert!((a.err_sigma[h] - b.err_sigma[h]).abs() < 1e-9);
    }
    let c = prediction_error_study(&PredictionStudyOptions { seed: 77, ..base }, Model::Exact, Model::approx(&t))
        .unwrap();
    assert_eq!(a.err_sigma, c.err_sigma);
    assert!(a.err_mu.iter().all(|&e| e > 0.0 && e < 0.1));
    assert!(a.err_sigma.iter().all(|e| e.abs() < 0.05));
}

#[test]
fn kl_is_nonnegative_and_zero_on_self() {
    let t = table(4);
    let exact = Model::Exact.covariance(0.8, 100).unwrap();
    assert!(kl_gaussian(&exact, &exact).unwrap().abs() < 1e-10);
    let mix = t.lookup(0.8).unwrap();
    let forward = kld(0.8, 100, &mix, default_kappa(), false).unwrap();
    let reverse = kld(0.8, 100, &mix, default_kappa(), true).unwrap();
    assert!(forward > 0.0 && reverse > 0.0);
    assert!(forward != reverse);
    assert!(kld(0.8, 0, &mix, default_kappa(), false).is_err());
}

#[test]
fn kl_of_scaled_identity_by_hand() {
    let n = 4;
    let p = DenseMatrix::identity(n);
    let q = DenseMatrix::from_fn(n, |i, j| if i == j { 2.0 } else { 0.0 });
    let expected = 0.5 * (n as f64 / 2.0 - n as f64 + n as f64 * 2f64.ln());
    assert!((kl_gaussian(&p, &q).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn decomposition_reconstructs_the_series() {
    let t = table(4);
    let x = series(0.85, 300, 21);
    let fit = mle(&x, Model::approx(&t), &MleOptions::default()).unwrap();
    let d = decompose(&ObservationModel::exact(x.clone()), &fit, &t, default_kappa()).unwrap();
    assert_eq!(d.component_means.len(), 4);
    assert!(d.reconstruction_residual() < 1e-8);
    for s in 0..300 {
        assert!((d.x_mean[s] + d.offset - x[s]).abs() < 1e-6);
    }
    // the slowest component carries the low-frequency part
    let var = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let diffs = |v: &[f64]| v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>();
    let slow = &d.component_means[0];
    let fast = &d.component_means[3];
    assert!(diffs(slow) / var(slow) < diffs(fast) / var(fast));
}

#[test]
fn single_component_decomposition() {
    let opts = TableOptions {
        hurst_range: (0.6, 0.9),
        ..TableOptions::default()
    };
    let t1 = build_table_with(1, 200, 11, &opts, None).unwrap();
    let x = series(0.7, 100, 2);
    let fit = mle(&x, Model::approx(&t1), &MleOptions::default()).unwrap();
    let d = decompose(&ObservationModel::exact(x.clone()), &fit, &t1, default_kappa()).unwrap();
    assert_eq!(d.mixture.weights(), &[1.0]);
    for s in 0..100 {
        assert!((d.component_means[0][s] + d.noise_mean[s] - d.x_mean[s]).abs() < 1e-10);
        assert!(d.noise_mean[s].abs() < 1e-3);
    }
}

#[test]
fn fastest_component_dominates_near_white_noise() {
    let w = table(4).lookup(0.511).unwrap().weights().to_vec();
    assert!(w[3] > 0.5, "weights {w:?}");
}

#[test]
fn approximate_mle_tracks_exact_on_one_long_series() {
    let t = table(4);
    let x = series(0.8, 2000, 31);
    let opts = MleOptions::default();
    let exact = mle(&x, Model::Exact, &opts).unwrap();
    let approx = mle(&x, Model::approx(&t), &opts).unwrap();
    assert!((exact.hurst - approx.hurst).abs() <= 0.005, "{} vs {}", exact.hurst, approx.hurst);
    assert!((exact.sigma - approx.sigma).abs() < 0.02);
    assert!(approx.sd_hurst > 0.0 && approx.sd_hurst < 0.05);
    assert_eq!(approx.model, ModelKind::Approx { m: 4 });
}

#[test]
fn mle_rejects_degenerate_input() {
    assert!(mle(&[2.0; 50], Model::Exact, &MleOptions::default()).is_err());
    assert!(mle(&[1.0, 2.0, 3.0], Model::Exact, &MleOptions::default()).is_err());
    let mut x = series(0.7, 50, 1);
    x[3] = f64::NAN;
    assert!(mle(&x, Model::Exact, &MleOptions::default()).is_err());
}

#[test]
fn single_replication_is_deterministic() {
    let t = table(3);
    let opts = ReplicationOptions {
        hurst: 0.7,
        n: 200,
        replications: 1,
        seed: 5,
        mle: MleOptions {
            center: false,
            ..MleOptions::default()
        },
    };
    let a = replication_study(&opts, &[Model::approx(&t)]).unwrap();
    let b = replication_study(&opts, &[Model::approx(&t)]).unwrap();
    assert_eq!(a.estimates.len(), 1);
    assert_eq!(a.estimates[0].exact, b.estimates[0].exact);
    assert_eq!(a.estimates[0].approx, b.estimates[0].approx);
    assert_eq!(a.exact_sd, 0.0);
    let x = series(0.7, 200, 5);
    let direct = mle(&x, Model::Exact, &opts.mle).unwrap();
    assert_eq!(direct.hurst, a.estimates[0].exact);
}

#[test]
fn assembled_precision_inverts_the_dense_covariance() {
    let mix = table(3).lookup(0.7).unwrap();
    let q = assemble_precision(&mix, 1.0, 30, default_kappa()).unwrap();
    let inv = q.matrix().to_dense().cholesky().unwrap().inverse();
    let x_idx: Vec<usize> = (0..30).map(|t| q.x_index(t)).collect();
    let cov = approx_covariance(&mix, 30, default_kappa()).unwrap();
    assert!(inv.select(&x_idx).max_abs_diff(&cov) < 1e-8);
}
