//! Censored-data EM fitting.
//!
//! The E-step integrates the standard phase-type sufficient-statistic ODE
//! system forward in time with fixed-step RK4, capturing per-observation
//! expectations at each distinct observation time. With
//! `a(u) = π exp(Qu)` and `c_v(u) = ∫_0^u exp(Q(u-x)) v a(x) dx`, both evolve
//! autonomously (`a' = aQ`, `c' = v·a + Qc`), so one march over the sorted
//! time grid serves every observation. Complete observations read the system
//! with `v = -Q1`, censored ones with `v = 1` plus the residual-life terms
//! `a(t)(-Q)^{-1}` that account for statistics accrued after the censor time.
//! The M-step is the closed-form rate update for the Coxian structure, which
//! keeps the zero pattern of `Q` intact.

use super::{CoxianPh, ObservationSet, RATE_CEILING, RATE_FLOOR};
use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Starting point for the EM iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "strategy", content = "model")]
pub enum InitStrategy {
    /// Sequential rates `(m+r)/mean(t)`; absorption rates bisected so the
    /// model mean matches the empirical mean.
    #[default]
    MomentMatched,
    /// Every rate set to `(m+r)/mean(t)`.
    UniformRates,
    UserSupplied(CoxianPh),
}

/// EM fitting controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Absolute log-likelihood improvement below which iteration stops.
    pub ll_tolerance: f64,
    /// RK4 resolution of the E-step integration.
    pub ode_steps_per_unit_time: u32,
    pub init: InitStrategy,
    /// Reserved for randomized initialization strategies; the built-in
    /// strategies are deterministic and ignore it.
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 200,
            ll_tolerance: 1e-6,
            ode_steps_per_unit_time: 200,
            init: InitStrategy::MomentMatched,
            seed: 0,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(CoreError::PhaseType("max_iterations must be >= 1".into()));
        }
        if !(self.ll_tolerance > 0.0) {
            return Err(CoreError::PhaseType("ll_tolerance must be positive".into()));
        }
        if self.ode_steps_per_unit_time == 0 {
            return Err(CoreError::PhaseType(
                "ode_steps_per_unit_time must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fit outcome bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub converged: bool,
    /// A rate hit its floor/ceiling or the likelihood degenerated.
    pub boundary: bool,
    /// No complete observation was available.
    pub all_censored: bool,
    /// Log-likelihood after each E-step, in iteration order.
    pub ll_trace: Vec<f64>,
}

/// Fit `PH(π, Q)` of the given order to an observation set by EM.
pub fn fit_em(
    obs: &ObservationSet,
    m: usize,
    r: usize,
    config: &EmConfig,
) -> Result<(CoxianPh, FitDiagnostics)> {
    let weights = vec![1.0; obs.len()];
    fit_em_weighted(obs, &weights, m, r, config)
}

/// Weighted EM fit: each observation's statistics and log-likelihood terms
/// are scaled by its weight (tree nodes use class weights here).
pub fn fit_em_weighted(
    obs: &ObservationSet,
    weights: &[f64],
    m: usize,
    r: usize,
    config: &EmConfig,
) -> Result<(CoxianPh, FitDiagnostics)> {
    config.validate()?;
    if obs.is_empty() {
        return Err(CoreError::PhaseType("cannot fit an empty observation set".into()));
    }
    if weights.len() != obs.len() {
        return Err(CoreError::PhaseType("weights length mismatch".into()));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(CoreError::PhaseType("weights must be positive and finite".into()));
    }

    let grid = TimeGrid::build(obs, weights);
    let all_censored = !obs.any_complete();
    let mut ph = initial_model(obs, weights, m, r, config)?;

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut boundary = false;
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        let outcome = e_step(&ph, &grid, config.ode_steps_per_unit_time);
        let (ll, stats) = match outcome {
            EStep::Ok { ll, stats } => (ll, stats),
            EStep::Degenerate => {
                boundary = true;
                break;
            }
        };
        iterations += 1;
        if let Some(&prev) = trace.last() {
            if ll - prev < config.ll_tolerance {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        let (next, hit_bound) = m_step(&ph, &stats)?;
        boundary |= hit_bound;
        ph = next;
    }

    if !converged {
        // The last M-step moved the parameters; record their likelihood.
        if let EStep::Ok { ll, .. } = e_step(&ph, &grid, config.ode_steps_per_unit_time) {
            trace.push(ll);
        } else {
            boundary = true;
        }
    }

    let final_ll = trace.last().copied().unwrap_or(f64::NEG_INFINITY);
    Ok((
        ph,
        FitDiagnostics {
            iterations,
            final_log_likelihood: final_ll,
            converged,
            boundary,
            all_censored,
            ll_trace: trace,
        },
    ))
}

/// Distinct observation times with pooled complete/censored weights.
struct TimeGrid {
    points: Vec<TimePoint>,
}

struct TimePoint {
    t: f64,
    w_complete: f64,
    w_censored: f64,
}

impl TimeGrid {
    fn build(obs: &ObservationSet, weights: &[f64]) -> Self {
        let mut rows: Vec<(f64, bool, f64)> = obs
            .entries()
            .iter()
            .zip(weights)
            .map(|(e, &w)| (e.time_days, e.complete, w))
            .collect();
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut points: Vec<TimePoint> = Vec::new();
        for (t, complete, w) in rows {
            match points.last_mut() {
                Some(last) if last.t == t => {
                    if complete {
                        last.w_complete += w;
                    } else {
                        last.w_censored += w;
                    }
                }
                _ => points.push(TimePoint {
                    t,
                    w_complete: if complete { w } else { 0.0 },
                    w_censored: if complete { 0.0 } else { w },
                }),
            }
        }
        TimeGrid { points }
    }
}

struct Stats {
    /// Expected total sojourn time per phase.
    z: Vec<f64>,
    /// Expected phase `h` → `h+1` transition counts.
    n_fwd: Vec<f64>,
    /// Expected absorption counts out of each phase.
    n_abs: Vec<f64>,
}

enum EStep {
    Ok { ll: f64, stats: Stats },
    Degenerate,
}

/// One E-step: weighted log-likelihood and expected sufficient statistics.
fn e_step(ph: &CoxianPh, grid: &TimeGrid, steps_per_unit: u32) -> EStep {
    let p = ph.order();
    let lam: Vec<f64> = (0..p).map(|h| ph.forward_rate(h)).collect();
    let exit: Vec<f64> = (0..p).map(|h| ph.exit_rate(h)).collect();
    let qdiag: Vec<f64> = (0..p).map(|h| -(lam[h] + exit[h])).collect();

    // RK4 needs steps finer than the fastest rate to stay stable.
    let max_rate = lam
        .iter()
        .chain(exit.iter())
        .fold(0.0f64, |acc, &x| acc.max(x));
    let steps_per_unit = f64::from(steps_per_unit).max(4.0 * max_rate);
    if steps_per_unit > 1e5 {
        return EStep::Degenerate; // rates too extreme to integrate sensibly
    }

    // State layout: a (p) | c_exit (p*p) | c_ones (p*p), row major c[h][j].
    let dim = p + 2 * p * p;
    let mut y = vec![0.0; dim];
    y[0] = 1.0;

    let deriv = |y: &[f64], out: &mut [f64]| {
        let (a, rest) = y.split_at(p);
        let (cs, cc) = rest.split_at(p * p);
        for j in 0..p {
            let mut d = a[j] * qdiag[j];
            if j > 0 {
                d += a[j - 1] * lam[j - 1];
            }
            out[j] = d;
        }
        for h in 0..p {
            for j in 0..p {
                let idx = h * p + j;
                let mut ds = exit[h] * a[j] + qdiag[h] * cs[idx];
                let mut dc = a[j] + qdiag[h] * cc[idx];
                if h + 1 < p {
                    ds += lam[h] * cs[idx + p];
                    dc += lam[h] * cc[idx + p];
                }
                out[p + idx] = ds;
                out[p + p * p + idx] = dc;
            }
        }
    };

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    let mut ll = 0.0;
    let mut stats = Stats {
        z: vec![0.0; p],
        n_fwd: vec![0.0; p.saturating_sub(1)],
        n_abs: vec![0.0; p],
    };

    let mut t_prev = 0.0;
    for point in &grid.points {
        let span = point.t - t_prev;
        let steps = (span * steps_per_unit).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        for _ in 0..steps {
            deriv(&y, &mut k1);
            for i in 0..dim {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            deriv(&tmp, &mut k2);
            for i in 0..dim {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            deriv(&tmp, &mut k3);
            for i in 0..dim {
                tmp[i] = y[i] + h * k3[i];
            }
            deriv(&tmp, &mut k4);
            for i in 0..dim {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        t_prev = point.t;

        let (a, rest) = y.split_at(p);
        let (cs, cc) = rest.split_at(p * p);
        if point.w_complete > 0.0 {
            let f: f64 = a.iter().zip(&exit).map(|(x, e)| x * e).sum();
            if !(f > 0.0) || !f.is_finite() {
                return EStep::Degenerate;
            }
            let w = point.w_complete;
            ll += w * f.ln();
            for h in 0..p {
                stats.z[h] += w * cs[h * p + h] / f;
                if h + 1 < p {
                    stats.n_fwd[h] += w * lam[h] * cs[(h + 1) * p + h] / f;
                }
                stats.n_abs[h] += w * exit[h] * a[h] / f;
            }
        }
        if point.w_censored > 0.0 {
            let s: f64 = a.iter().sum();
            if !(s > 0.0) || !s.is_finite() {
                return EStep::Degenerate;
            }
            let w = point.w_censored;
            ll += w * s.ln();
            // Residual-life terms: x = a(t)(-Q)^{-1}.
            let x = ph.solve_neg_q_row(a);
            for h in 0..p {
                stats.z[h] += w * (cc[h * p + h] + x[h]) / s;
                if h + 1 < p {
                    stats.n_fwd[h] += w * lam[h] * (cc[(h + 1) * p + h] + x[h]) / s;
                }
                stats.n_abs[h] += w * exit[h] * x[h] / s;
            }
        }
    }

    if !ll.is_finite() {
        return EStep::Degenerate;
    }
    EStep::Ok { ll, stats }
}

/// Closed-form rate update; returns the new model and whether a clamp fired.
fn m_step(ph: &CoxianPh, stats: &Stats) -> Result<(CoxianPh, bool)> {
    let p = ph.order();
    let m = ph.short_stay_phases();
    let r = ph.long_stay_phases();
    let mut hit_bound = false;

    let mut clamp = |numerator: f64, denominator: f64, fallback: f64| -> f64 {
        let raw = if denominator > 0.0 && numerator.is_finite() {
            numerator / denominator
        } else {
            fallback
        };
        if !raw.is_finite() || raw < RATE_FLOOR {
            hit_bound = true;
            RATE_FLOOR
        } else if raw > RATE_CEILING {
            hit_bound = true;
            RATE_CEILING
        } else {
            raw
        }
    };

    let lambdas: Vec<f64> = (0..p - 1)
        .map(|h| clamp(stats.n_fwd[h], stats.z[h], ph.forward_rate(h)))
        .collect();
    let lambda_ss = clamp(stats.n_abs[m - 1], stats.z[m - 1], ph.lambda_ss());
    let lambda_ls = if r > 0 {
        clamp(stats.n_abs[p - 1], stats.z[p - 1], ph.lambda_ls())
    } else {
        ph.lambda_ls()
    };
    let next = CoxianPh::new(m, r, &lambdas, lambda_ss, lambda_ls)?;
    Ok((next, hit_bound))
}

fn initial_model(
    obs: &ObservationSet,
    weights: &[f64],
    m: usize,
    r: usize,
    config: &EmConfig,
) -> Result<CoxianPh> {
    let order = m + r;
    let total_w: f64 = weights.iter().sum();
    let mean: f64 = obs
        .entries()
        .iter()
        .zip(weights)
        .map(|(e, &w)| w * e.time_days)
        .sum::<f64>()
        / total_w;
    let base = (order as f64 / mean).clamp(RATE_FLOOR, RATE_CEILING);
    match &config.init {
        InitStrategy::UniformRates => {
            let lambdas = vec![base; order - 1];
            CoxianPh::new(m, r, &lambdas, base, base)
        }
        InitStrategy::MomentMatched => {
            let lambdas = vec![base; order - 1];
            // Bisect the shared absorption rate so the model mean matches.
            let model = |mu: f64| CoxianPh::new(m, r, &lambdas, mu, mu);
            let (mut lo, mut hi) = (1e-6f64, 1e6f64);
            let mean_at = |mu: f64| -> Result<f64> { model(mu)?.moment(1) };
            if mean_at(lo)? < mean {
                return model(lo);
            }
            if mean_at(hi)? > mean {
                return model(hi);
            }
            for _ in 0..80 {
                let mid = (lo.ln() + hi.ln()) / 2.0;
                let mid = mid.exp();
                if mean_at(mid)? > mean {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            model((lo * hi).sqrt())
        }
        InitStrategy::UserSupplied(ph) => {
            if ph.short_stay_phases() != m || ph.long_stay_phases() != r {
                return Err(CoreError::PhaseType(
                    "user-supplied initial model has a different phase structure".into(),
                ));
            }
            Ok(ph.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_type::Observation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn simulate(ph: &CoxianPh, n: usize, horizon: Option<f64>, seed: u64) -> ObservationSet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let entries = (0..n)
            .map(|_| {
                let t = ph.sample_sojourn(&mut rng);
                match horizon {
                    Some(h) if t > h => Observation {
                        time_days: h,
                        complete: false,
                    },
                    _ => Observation {
                        time_days: t,
                        complete: true,
                    },
                }
            })
            .collect();
        ObservationSet::new(entries).unwrap()
    }

    /// For one complete observation the expected per-phase sojourn times must
    /// sum to the observed time, and the absorption counts to one.
    #[test]
    fn sufficient_statistics_identities() {
        let ph = CoxianPh::new(1, 1, &[1.0], 2.0, 3.0).unwrap();
        let obs = ObservationSet::from_parts(&[0.8], &[true]).unwrap();
        let grid = TimeGrid::build(&obs, &[1.0]);
        match e_step(&ph, &grid, 400) {
            EStep::Ok { stats, .. } => {
                let z_total: f64 = stats.z.iter().sum();
                let abs_total: f64 = stats.n_abs.iter().sum();
                assert!((z_total - 0.8).abs() < 1e-8, "z_total {z_total}");
                assert!((abs_total - 1.0).abs() < 1e-8, "abs_total {abs_total}");
            }
            EStep::Degenerate => panic!("unexpected degenerate E-step"),
        }
    }

    /// Censored case: total expected time is censor time plus mean residual
    /// life, and absorption still happens exactly once in expectation.
    #[test]
    fn censored_statistics_identities() {
        let ph = CoxianPh::new(1, 0, &[], 0.5, 1.0).unwrap();
        let obs = ObservationSet::from_parts(&[2.0], &[false]).unwrap();
        let grid = TimeGrid::build(&obs, &[1.0]);
        match e_step(&ph, &grid, 400) {
            EStep::Ok { stats, .. } => {
                // Memoryless: E[Z] = t + 1/λ = 2 + 2 = 4.
                assert!((stats.z[0] - 4.0).abs() < 1e-7, "z {}", stats.z[0]);
                assert!((stats.n_abs[0] - 1.0).abs() < 1e-9);
            }
            EStep::Degenerate => panic!("unexpected degenerate E-step"),
        }
    }

    #[test]
    fn recovers_exponential_rate() {
        let truth = CoxianPh::new(1, 0, &[], 2.0, 1.0).unwrap();
        let obs = simulate(&truth, 5000, None, 17);
        let (fit, diag) = fit_em(&obs, 1, 0, &EmConfig::default()).unwrap();
        assert!(diag.converged);
        assert!(
            (fit.lambda_ss() - 2.0).abs() / 2.0 < 0.05,
            "recovered λ = {}",
            fit.lambda_ss()
        );
    }

    #[test]
    fn recovers_mean_with_censoring() {
        // Mean 4/9 model scaled up: λ1=0.09, SS=0.05, LS=0.04 → slower chain,
        // censor at 30 leaves roughly a third censored.
        let truth = CoxianPh::new(1, 1, &[0.09], 0.05, 0.04).unwrap();
        let true_mean = truth.moment(1).unwrap();
        let obs = simulate(&truth, 5000, Some(30.0), 29);
        let censored = obs.entries().iter().filter(|e| !e.complete).count();
        assert!(censored > 1000, "fixture should censor a meaningful share");
        let (fit, diag) = fit_em(&obs, 1, 1, &EmConfig::default()).unwrap();
        let fit_mean = fit.moment(1).unwrap();
        assert!(
            (fit_mean - true_mean).abs() / true_mean < 0.05,
            "fitted mean {fit_mean} vs true {true_mean}; diag {diag:?}"
        );
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let truth = CoxianPh::new(1, 1, &[0.2], 0.1, 0.05).unwrap();
        let obs = simulate(&truth, 400, Some(30.0), 53);
        let (_, diag) = fit_em(&obs, 1, 1, &EmConfig::default()).unwrap();
        for pair in diag.ll_trace.windows(2) {
            assert!(
                pair[1] - pair[0] >= -1e-8,
                "log-likelihood decreased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn iteration_cap_respected() {
        let obs = ObservationSet::from_parts(&[3.0], &[true]).unwrap();
        let config = EmConfig {
            max_iterations: 1,
            ..EmConfig::default()
        };
        let (_, diag) = fit_em(&obs, 1, 1, &config).unwrap();
        assert_eq!(diag.iterations, 1);
        assert!(!diag.converged);
    }

    #[test]
    fn empty_set_rejected() {
        let obs = ObservationSet::new(vec![]).unwrap();
        assert!(fit_em(&obs, 1, 0, &EmConfig::default()).is_err());
    }

    #[test]
    fn all_censored_is_flagged() {
        let obs = ObservationSet::from_parts(&[30.0, 30.0, 30.0], &[false; 3]).unwrap();
        let config = EmConfig {
            max_iterations: 30,
            ..EmConfig::default()
        };
        let (_, diag) = fit_em(&obs, 1, 0, &config).unwrap();
        assert!(diag.all_censored);
    }

    #[test]
    fn degenerate_equal_times_stay_bounded() {
        let obs = ObservationSet::from_parts(&[5.0; 40], &[true; 40]).unwrap();
        let config = EmConfig {
            max_iterations: 60,
            ..EmConfig::default()
        };
        let (fit, _) = fit_em(&obs, 1, 1, &config).unwrap();
        for &l in fit.lambdas() {
            assert!(l <= RATE_CEILING);
        }
        assert!(fit.lambda_ss() <= RATE_CEILING);
    }

    #[test]
    fn weighted_fit_matches_duplicated_records() {
        let times = [1.0, 2.5, 4.0, 30.0];
        let flags = [true, true, true, false];
        let doubled = ObservationSet::from_parts(
            &[1.0, 1.0, 2.5, 2.5, 4.0, 4.0, 30.0, 30.0],
            &[true, true, true, true, true, true, false, false],
        )
        .unwrap();
        let single = ObservationSet::from_parts(&times, &flags).unwrap();
        let config = EmConfig {
            max_iterations: 40,
            ..EmConfig::default()
        };
        let (a, _) = fit_em_weighted(&single, &[2.0; 4], 1, 1, &config).unwrap();
        let (b, _) = fit_em(&doubled, 1, 1, &config).unwrap();
        for (x, y) in a.lambdas().iter().zip(b.lambdas()) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((a.lambda_ss() - b.lambda_ss()).abs() < 1e-9);
        assert!((a.lambda_ls() - b.lambda_ls()).abs() < 1e-9);
    }
}
