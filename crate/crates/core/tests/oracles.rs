mod common;

use infosamp::bayes::{self, CovarianceMode, McmcConfig, Posterior, PriorSpec};
use infosamp::design;
use infosamp::infer::{self, EvidenceMode, HypothesisSpec};
use infosamp::rng;
use infosamp::scorefit::{self, JointInclusion, ScoreSystem, SelectionModelSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn enumerated_design_reproduces_inclusion_probabilities() {
    let mut r = rng::seeded(11);
    for big_n in 2..=6 {
        for n in 1..=2.min(big_n - 1) {
            for _ in 0..4 {
                let z: Vec<f64> = (0..big_n).map(|_| r.random_range(0.5..3.0)).collect();
                let Ok(pi) = design::pps_probabilities(&z, n) else { continue };
                let dist = common::enumerate_design(&pi, n);
                let total: f64 = dist.iter().map(|(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert!(dist.iter().all(|(s, _)| s.len() == n));
                for (i, &p) in pi.iter().enumerate() {
                    let freq: f64 = dist.iter().filter(|(s, _)| s.contains(&i)).map(|(_, p)| p).sum();
                    assert!((freq - p).abs() < 1e-10, "N={big_n} n={n} unit {i}: {freq} vs {p}");
                }
            }
        }
    }
}

#[test]
fn enumerated_design_makes_the_score_unbiased() {
    let mut r = rng::seeded(12);
    for big_n in 3..=6 {
        let z: Vec<f64> = (0..big_n).map(|_| r.random_range(0.5..3.0)).collect();
        let y: Vec<f64> = (0..big_n).map(|_| r.random_range(0.0..4.0)).collect();
        let pi = design::pps_probabilities(&z, 2).unwrap();
        // Population least squares of pi on (1, y) zeroes the census score.
        let b = DMatrix::from_fn(big_n, 2, |i, j| if j == 0 { 1.0 } else { y[i] });
        let gamma = infosamp::linalg::svd_solve(&b, &DVector::from_column_slice(&pi), 1e-12).unwrap();
        let mut expected = DVector::zeros(2);
        for (s, p) in common::enumerate_design(&pi, 2) {
            let bs = DMatrix::from_fn(2, 2, |k, j| b[(s[k], j)]);
            let ps = DVector::from_fn(2, |k, _| pi[s[k]]);
            let terms = infosamp::basis::parse_terms("1,y").unwrap();
            let sys = ScoreSystem::from_parts(terms, bs, ps.clone(), ps, big_n as f64).unwrap();
            expected += scorefit::ht_score(&sys, &gamma) * p;
        }
        assert!(expected.amax() < 1e-10, "N={big_n}: {expected}");
    }
}

#[test]
fn constrained_gaussian_fbst_matches_chi_square() {
    // Plugin-mode posteriors are Gaussian, so the tangential set of the
    // constrained maximiser has mass P(chi2_d <= m^2).
    let sample = common::study_sample(3);
    for (model, null) in [("1,v1", "1"), ("1,v1,y", "1,v1"), ("1,v1,y", "1")] {
        let post = common::posterior(&sample, model, CovarianceMode::Plugin);
        let hyp =
            HypothesisSpec::new("t", SelectionModelSpec::parse(model).unwrap(), SelectionModelSpec::parse(null).unwrap())
                .unwrap();
        let cfg = McmcConfig { burn_in: 2000, draws: 20_000, seed: 5, ..Default::default() };
        let draws = bayes::run_mcmc(&post, &cfg).unwrap();
        let ev = infer::fbst_evidence(&draws, &post, &hyp, EvidenceMode::Standard, 0.05, 0).unwrap();
        let gp = post.gaussian_approximation().unwrap();
        let diff = DVector::from_column_slice(&ev.gamma0_hat) - &gp.mean;
        let m2 = (diff.transpose() * &gp.precision * &diff)[(0, 0)];
        let want = ChiSquared::new(post.dim() as f64).unwrap().cdf(m2);
        let lp0 = post.log_density(&DVector::from_column_slice(&ev.gamma0_hat)).unwrap();
        let ind: Vec<f64> = draws.log_density.iter().map(|&lp| f64::from(u8::from(lp > lp0))).collect();
        let se = bayes::batch_means_se(&ind).max(1e-3);
        assert!((ev.ev_bar - want).abs() < 3.0 * se, "{model} vs {null}: {} vs {want} (se {se})", ev.ev_bar);
    }
}

#[test]
fn point_null_gaussian_fbst_matches_chi_square() {
    let sample = common::study_sample(0);
    for (d, model) in [(1, "1"), (2, "1,v1"), (3, "1,v1,y")] {
        let post = common::posterior(&sample, model, CovarianceMode::Plugin);
        let gp = post.gaussian_approximation().unwrap();
        let l = gp.covariance.clone().cholesky().unwrap().l();
        let cfg = McmcConfig { burn_in: 2000, draws: 20_000, seed: 600 + d as u64, ..Default::default() };
        let draws = bayes::run_mcmc(&post, &cfg).unwrap();
        let lps = draws.log_density.as_slice();
        let dir = DVector::from_fn(d, |k, _| if k == d - 1 { 1.0 } else { 0.5 });
        let dir = &dir / dir.norm();
        // At the posterior mode no draw can be denser.
        assert_eq!(infer::tangential_evidence(lps, post.log_density(&gp.mean).unwrap()), 0.0);
        for m in [1.0, 2.0] {
            let lp0 = post.log_density(&(&gp.mean + &l * &dir * m)).unwrap();
            let ev = infer::tangential_evidence(lps, lp0);
            let want = ChiSquared::new(d as f64).unwrap().cdf(m * m);
            let ind: Vec<f64> = lps.iter().map(|&lp| f64::from(u8::from(lp > lp0))).collect();
            let se = bayes::batch_means_se(&ind);
            assert!((ev - want).abs() < 3.0 * se, "d={d} m={m}: {ev} vs {want} (se {se})");
        }
    }
}

#[test]
fn plugin_chain_moments_match_the_closed_form() {
    let sample = common::study_sample(0);
    let post = common::posterior(&sample, "1,v1,y", CovarianceMode::Plugin);
    let gp = post.gaussian_approximation().unwrap();
    let cfg = McmcConfig { burn_in: 2000, draws: 20_000, seed: 700, ..Default::default() };
    let draws = bayes::run_mcmc(&post, &cfg).unwrap().draws;
    for i in 0..3 {
        let col: Vec<f64> = draws.column(i).iter().copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let z = (mean - gp.mean[i]) / bayes::batch_means_se(&col);
        assert!(z.abs() < 3.0, "mean {i}: z = {z}");
        for j in i..3 {
            let prod: Vec<f64> = draws.row_iter().map(|r| (r[i] - gp.mean[i]) * (r[j] - gp.mean[j])).collect();
            let est = prod.iter().sum::<f64>() / prod.len() as f64;
            let z = (est - gp.covariance[(i, j)]) / bayes::batch_means_se(&prod);
            assert!(z.abs() < 3.0, "cov {i}{j}: z = {z}");
        }
    }
}

#[test]
fn reruns_are_bit_identical() {
    let post = common::posterior(&common::study_sample(1), "1,v1,y", CovarianceMode::Full);
    let cfg = McmcConfig { seed: 99, burn_in: 1000, draws: 2000, ..Default::default() };
    let (a, b) = (bayes::run_mcmc(&post, &cfg).unwrap(), bayes::run_mcmc(&post, &cfg).unwrap());
    let bits = |m: &DMatrix<f64>| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.draws), bits(&b.draws));

    let small = infosamp::harness::ExperimentConfig {
        replicates: 1,
        mcmc: McmcConfig { burn_in: 500, draws: 1000, ..Default::default() },
        ..Default::default()
    };
    let run = || infosamp::harness::run_replicate(&small, 3, infosamp::harness::Run::Experiments);
    assert_eq!(run(), run());
}

#[test]
fn plugin_lr_statistic_is_the_mahalanobis_distance() {
    // Without a prior the plugin log likelihood is exactly quadratic, so the
    // LR statistic equals the constrained Wald form.
    let sample = common::study_sample(4);
    let post = common::posterior(&sample, "1,v1,y", CovarianceMode::Plugin);
    let hyp = HypothesisSpec::new(
        "t",
        SelectionModelSpec::parse("1,v1,y").unwrap(),
        SelectionModelSpec::parse("1,v1").unwrap(),
    )
    .unwrap();
    let lr = infer::lr_test(&post, &hyp).unwrap();
    let lik = post.likelihood();
    let sys = lik.system();
    let h = sys.weighted_gram();
    let prec = &h * lik.plugin_sigma().clone().try_inverse().unwrap() * &h;
    let diff = DVector::from_column_slice(&lr.full_hat) - DVector::from_column_slice(&lr.null_hat);
    let wald = (diff.transpose() * prec * &diff)[(0, 0)];
    assert!((lr.statistic - wald).abs() < 1e-6 * wald.max(1.0), "{} vs {wald}", lr.statistic);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_minus_half_objective_gradient(seed in any::<u64>(), n in 5usize..30, d in 1usize..5) {
        let mut r = rng::seeded(seed);
        let sys = common::random_system(&mut r, n, d);
        let gamma = DVector::from_fn(d, |_, _| r.random_range(-0.5..0.5));
        let fd = common::fd_gradient(|g| scorefit::ht_objective(&sys, g), &gamma);
        let score = scorefit::ht_score(&sys, &gamma);
        let err = (&score + fd * 0.5).norm() / score.norm().max(1e-12);
        prop_assert!(err < 1e-6, "relative error {}", err);
    }

    #[test]
    fn fit_is_equivariant_in_the_response(seed in any::<u64>(), n in 6usize..30, d in 1usize..4, c in 0.01f64..100.0) {
        let mut r = rng::seeded(seed);
        let sys = common::random_system(&mut r, n, d);
        let base = scorefit::ht_fit(&sys).unwrap();
        let scaled = scorefit::ht_fit(&sys.scale_response(c)).unwrap();
        let err = (&scaled - &base * c).norm() / (base.norm() * c).max(1e-300);
        prop_assert!(err < 1e-9, "relative error {}", err);
    }

    #[test]
    fn fit_zeroes_the_score(seed in any::<u64>(), n in 6usize..30, d in 1usize..4) {
        let mut r = rng::seeded(seed);
        let sys = common::random_system(&mut r, n, d);
        let g = scorefit::ht_fit(&sys).unwrap();
        prop_assert!(scorefit::ht_score(&sys, &g).amax() < 1e-8);
    }

    #[test]
    fn analytic_log_density_gradient_matches_differences(seed in 0u64..500, full in any::<bool>()) {
        let mut r = rng::seeded(seed);
        let sys = common::random_system(&mut r, 25, 3);
        let mode = if full { CovarianceMode::Full } else { CovarianceMode::Plugin };
        let post = Posterior::new(sys, Some(PriorSpec::default()), mode, &JointInclusion::ProportionalToSize).unwrap();
        let at = scorefit::ht_fit(post.system()).unwrap().map(|g| g * 1.01 + 1e-4);
        let (_, grad) = post.log_density_grad(&at).unwrap();
        let steps = DVector::from_fn(3, |k, _| 1e-6 * (1.0 + at[k].abs()));
        let fd = DVector::from_fn(3, |k, _| {
            let (mut up, mut dn) = (at.clone(), at.clone());
            up[k] += steps[k];
            dn[k] -= steps[k];
            (post.log_density(&up).unwrap() - post.log_density(&dn).unwrap()) / (2.0 * steps[k])
        });
        prop_assert!((&grad - &fd).norm() < 1e-4 * grad.norm().max(1.0), "{} vs {}", grad, fd);
    }

    #[test]
    fn partial_correlation_is_affine_invariant(
        seed in any::<u64>(),
        a in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
        b in -10.0f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let mut r = rng::seeded(seed);
        let n = 30;
        let controls = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { r.random_range(0.0..5.0) });
        let u = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let w = DVector::from_fn(n, |_, _| r.random_range(1.0..20.0));
        let (r0, t0, p0, df0, _) = infer::partial_correlation_test(&u, &w, &controls).unwrap();
        let w2 = w.map(|x| a * x + b);
        let u2 = &u + controls.column(1) * shift;
        let (r1, t1, p1, df1, _) = infer::partial_correlation_test(&u2, &w2, &controls).unwrap();
        prop_assert_eq!(df0, df1);
        prop_assert!((r1 - a.signum() * r0).abs() < 1e-9);
        prop_assert!((t1.abs() - t0.abs()).abs() < 1e-7 * t0.abs().max(1.0));
        prop_assert!((p1 - p0).abs() < 1e-9);
    }
}

/// Evidence recomputed on the stored draws of `post` after mapping them
/// through `map` into the parameterisation of `other`.
fn evidence_on(draws: &bayes::PosteriorDraws, other: &Posterior, hyp: &HypothesisSpec, map: impl Fn(&DVector<f64>) -> DVector<f64>) -> f64 {
    let g0 = infer::constrained_maximize(other, hyp).unwrap();
    let lp0 = other.log_density(&g0).unwrap();
    let lps: Vec<f64> =
        draws.draws.row_iter().map(|row| other.log_density(&map(&row.transpose())).unwrap()).collect();
    infer::tangential_evidence(&lps, lp0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn evidence_ignores_offsets_and_response_scale(rep in 0u64..40, c in -50.0f64..50.0, scale in 0.1f64..10.0) {
        let sample = common::study_sample(rep);
        let hyp = HypothesisSpec::new(
            "t",
            SelectionModelSpec::parse("1,v1,y").unwrap(),
            SelectionModelSpec::parse("1,v1").unwrap(),
        ).unwrap();
        let post = common::posterior(&sample, "1,v1,y", CovarianceMode::Plugin);
        let draws = bayes::run_mcmc(&post, &McmcConfig { burn_in: 500, draws: 2000, seed: rep, ..Default::default() }).unwrap();
        let base = infer::fbst_evidence(&draws, &post, &hyp, EvidenceMode::Standard, 0.05, 0).unwrap().ev_bar;

        let shifted = post.clone().with_offset(c);
        let ev_shift = evidence_on(&draws, &shifted, &hyp, DVector::clone);
        prop_assert!((ev_shift - base).abs() <= 2.0 / draws.len() as f64, "{} vs {}", ev_shift, base);

        let sys = post.system().scale_response(scale);
        let scaled = Posterior::new(sys, Some(PriorSpec::default()), CovarianceMode::Plugin, &JointInclusion::ProportionalToSize).unwrap();
        let ev_scale = evidence_on(&draws, &scaled, &hyp, |g| g * scale);
        prop_assert!((ev_scale - base).abs() <= 2.0 / draws.len() as f64, "{} vs {}", ev_scale, base);
    }
}
