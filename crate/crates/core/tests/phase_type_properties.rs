//! Property tests for the phase-type engine: distribution identities on
//! random models, Monte Carlo consistency, semigroup behavior, and EM
//! likelihood monotonicity.

mod common;

use common::{deep_horizon, integral_of_density, integral_of_survival, random_coxian};
use phsf_core::phase_type::{
    fit_em, matexp_action, CoxianPh, EmConfig, Observation, ObservationSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[test]
fn density_integrates_to_one_and_mean_matches() {
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    for case in 0..60 {
        let ph = random_coxian(&mut rng, 5, 0.01, 10.0);
        let t_end = deep_horizon(&ph, 1e-11);
        let f_int = integral_of_density(&ph, t_end);
        assert!(
            (f_int - 1.0).abs() < 1e-6,
            "case {case}: ∫f = {f_int} for {ph:?}"
        );
        let s_int = integral_of_survival(&ph, t_end);
        let mean = ph.moment(1).unwrap();
        assert!(
            (s_int - mean).abs() < 1e-6 * mean.max(1.0),
            "case {case}: ∫S = {s_int} vs moment {mean} for {ph:?}"
        );
    }
}

#[test]
fn density_is_negative_survival_derivative() {
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    for case in 0..40 {
        let ph = random_coxian(&mut rng, 5, 0.01, 10.0);
        let mean = ph.moment(1).unwrap();
        let max_rate = ph
            .lambdas()
            .iter()
            .copied()
            .chain([ph.lambda_ss(), ph.lambda_ls()])
            .fold(0.0f64, f64::max);
        for k in 1..=20 {
            let t = mean * (0.1 + 1.4 * (k as f64 - 1.0) / 19.0);
            let h = (1e-3 / max_rate).min(t / 2.0);
            let f = ph.density(t).unwrap();
            let diff =
                (ph.survival(t - h).unwrap() - ph.survival(t + h).unwrap()) / (2.0 * h);
            assert!(
                (diff - f).abs() <= 1e-4 * f.max(1e-9),
                "case {case} t={t}: f = {f}, -dS/dt = {diff}"
            );
        }
    }
}

#[test]
fn survival_equals_tail_density_integral_at_spot_points() {
    let mut rng = ChaCha12Rng::seed_from_u64(4242);
    for _ in 0..10 {
        let ph = random_coxian(&mut rng, 4, 0.05, 5.0);
        let t_end = deep_horizon(&ph, 1e-12);
        let mean = ph.moment(1).unwrap();
        for frac in [0.3, 1.0] {
            let t = mean * frac;
            // S(t) = ∫_t^∞ f = ∫_0^∞ f − ∫_0^t f.
            let up_to_t = {
                let full = integral_of_density(&ph, t_end);
                let head = integral_of_density(&ph, t);
                full - head
            };
            let s = ph.survival(t).unwrap();
            assert!(
                (up_to_t - s).abs() < 1e-6,
                "S({t}) = {s} vs tail integral {up_to_t}"
            );
        }
    }
}

#[test]
fn semigroup_property_on_random_models() {
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    for _ in 0..40 {
        let ph = random_coxian(&mut rng, 5, 0.01, 10.0);
        let q = ph.q_matrix();
        let v: Vec<f64> = (0..ph.order()).map(|_| rng.random::<f64>()).collect();
        let t1 = rng.random::<f64>() * 3.0;
        let t2 = rng.random::<f64>() * 3.0;
        let direct = matexp_action(&q, t1 + t2, &v, 1e-13).unwrap();
        let first = matexp_action(&q, t1, &v, 1e-13).unwrap();
        let composed = matexp_action(&q, t2, &first, 1e-13).unwrap();
        for (a, b) in direct.iter().zip(&composed) {
            assert!((a - b).abs() < 1e-10, "semigroup violated: {a} vs {b}");
        }
    }
}

/// Five fixed models: sampled sojourns must reproduce the analytic survival
/// curve within three binomial standard errors at a million draws.
#[test]
fn monte_carlo_survival_consistency() {
    let models = [
        CoxianPh::new(1, 0, &[], 0.21, 1.0).unwrap(),
        CoxianPh::new(1, 1, &[1.0], 2.0, 3.0).unwrap(),
        CoxianPh::new(2, 0, &[0.35], 0.4, 1.0).unwrap(),
        CoxianPh::new(1, 1, &[0.4], 0.1, 0.8 / 3.0).unwrap(),
        CoxianPh::new(2, 3, &[1.5, 0.8, 0.2, 0.05], 0.6, 0.07).unwrap(),
    ];
    let n = 1_000_000usize;
    for (i, ph) in models.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(3000 + i as u64);
        let mut draws: Vec<f64> = (0..n).map(|_| ph.sample_sojourn(&mut rng)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Spot the curve where it carries mass.
        let mean = ph.moment(1).unwrap();
        for frac in [0.05, 0.15, 0.3, 0.5, 0.8, 1.2, 1.8, 2.5] {
            let t = mean * frac;
            let s = ph.survival(t).unwrap();
            if !(0.02..=0.98).contains(&s) {
                continue;
            }
            let surviving = draws.len() - draws.partition_point(|&x| x <= t);
            let empirical = surviving as f64 / n as f64;
            let se = (s * (1.0 - s) / n as f64).sqrt();
            assert!(
                (empirical - s).abs() < 3.0 * se,
                "model {i} t={t}: empirical {empirical}, analytic {s}, se {se}"
            );
        }
    }
}

fn simulate_with_censoring(
    ph: &CoxianPh,
    n: usize,
    censor_at: f64,
    seed: u64,
) -> ObservationSet {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    ObservationSet::new(
        (0..n)
            .map(|_| {
                let t = ph.sample_sojourn(&mut rng);
                if t > censor_at {
                    Observation {
                        time_days: censor_at,
                        complete: false,
                    }
                } else {
                    Observation {
                        time_days: t,
                        complete: true,
                    }
                }
            })
            .collect(),
    )
    .unwrap()
}

/// Censor each dataset at its generating model's 70th percentile so roughly
/// 30% of observations are censored, then check the EM trace never drops.
#[test]
fn em_log_likelihood_monotone_on_random_censored_datasets() {
    let mut rng = ChaCha12Rng::seed_from_u64(515);
    for case in 0..20 {
        let truth = random_coxian(&mut rng, 3, 0.05, 5.0);
        // Bisect S(t) = 0.3.
        let (mut lo, mut hi) = (1e-6, deep_horizon(&truth, 0.01));
        for _ in 0..60 {
            let mid = (lo + hi) / 2.0;
            if truth.survival(mid).unwrap() > 0.3 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let censor_at = (lo + hi) / 2.0;
        let obs = simulate_with_censoring(&truth, 300, censor_at, 7000 + case);
        let m = 1 + (case as usize) % 2;
        let r = (case as usize) % 2;
        let config = EmConfig {
            max_iterations: 60,
            ..EmConfig::default()
        };
        let (_, diag) = fit_em(&obs, m, r, &config).unwrap();
        let censored = obs.entries().iter().filter(|e| !e.complete).count();
        assert!(censored > 0, "case {case} should censor something");
        for (i, pair) in diag.ll_trace.windows(2).enumerate() {
            assert!(
                pair[1] - pair[0] >= -1e-8,
                "case {case}: iteration {i} decreased {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }
}

/// Generator recovery: fitting the generating order on n = 5000 draws must
/// reproduce the true mean sojourn within five percent.
#[test]
fn em_recovers_generating_mean() {
    // Uncensored exponential.
    let exp_truth = CoxianPh::new(1, 0, &[], 2.0, 1.0).unwrap();
    let obs = simulate_with_censoring(&exp_truth, 5000, f64::INFINITY, 81);
    let (fit, _) = fit_em(&obs, 1, 0, &EmConfig::default()).unwrap();
    assert!((fit.lambda_ss() - 2.0).abs() / 2.0 < 0.05);

    // Two-phase model with ~30% censoring at day 30.
    let truth = CoxianPh::new(1, 1, &[0.09], 0.05, 0.04).unwrap();
    let obs = simulate_with_censoring(&truth, 5000, 30.0, 82);
    let (fit, diag) = fit_em(&obs, 1, 1, &EmConfig::default()).unwrap();
    let true_mean = truth.moment(1).unwrap();
    let fit_mean = fit.moment(1).unwrap();
    assert!(
        (fit_mean - true_mean).abs() / true_mean < 0.05,
        "fitted mean {fit_mean} vs true {true_mean} ({diag:?})"
    );
}

/// The mean from the moment formula agrees with a million-sample average.
#[test]
fn moment_matches_monte_carlo_on_random_models() {
    let mut rng = ChaCha12Rng::seed_from_u64(626);
    for _ in 0..3 {
        let ph = random_coxian(&mut rng, 4, 0.05, 5.0);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let t = ph.sample_sojourn(&mut rng);
            sum += t;
            sumsq += t * t;
        }
        let mc_mean = sum / n as f64;
        let var = (sumsq - sum * sum / n as f64) / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let mean = ph.moment(1).unwrap();
        assert!(
            (mc_mean - mean).abs() < 3.0 * se,
            "MC mean {mc_mean} vs analytic {mean} (se {se})"
        );
    }
}
