//! Coxian phase-type distributions over post-discharge time.
//!
//! A discharged patient walks through `m` short-stay phases followed by `r`
//! long-stay phases of an absorbing CTMC; absorption (readmission) competes
//! with onward movement at phase `m` (rate `lambda_ss`) and ends the chain at
//! phase `m+r` (rate `lambda_ls`). Time to absorption is `PH(pi, Q)` with
//! `pi = (1, 0, …, 0)` and upper-bidiagonal `Q`.

mod em;
pub mod matexp;

pub use em::{fit_em, fit_em_weighted, EmConfig, FitDiagnostics, InitStrategy};
pub use matexp::{matexp_action, SquareMatrix};

use crate::error::{CoreError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hard ceiling on fitted rates (per day); hit it and the fit is flagged.
pub const RATE_CEILING: f64 = 1e6;
/// Floor keeping fitted rates strictly positive.
pub const RATE_FLOOR: f64 = 1e-9;

/// Coxian phase-type distribution with `m` short-stay and `r` long-stay phases.
///
/// Field layout matches the JSON model format: sequential rates
/// `lambdas[h] = λ_{h+1}` for `h+1 = 1..m+r-1`, absorption rates `lambda_ss`
/// (from phase `m`) and `lambda_ls` (from phase `m+r`; unused when `r = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxianPh {
    m: usize,
    r: usize,
    lambdas: Vec<f64>,
    lambda_ss: f64,
    lambda_ls: f64,
}

impl CoxianPh {
    pub fn new(m: usize, r: usize, lambdas: &[f64], lambda_ss: f64, lambda_ls: f64) -> Result<Self> {
        if m < 1 {
            return Err(CoreError::PhaseType("need at least one short-stay phase".into()));
        }
        let order = m + r;
        if lambdas.len() != order - 1 {
            return Err(CoreError::PhaseType(format!(
                "expected {} sequential rates for m={m}, r={r}, got {}",
                order - 1,
                lambdas.len()
            )));
        }
        for (h, &rate) in lambdas.iter().enumerate() {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(CoreError::PhaseType(format!(
                    "sequential rate λ_{} must be positive and finite, got {rate}",
                    h + 1
                )));
            }
        }
        if !(lambda_ss > 0.0) || !lambda_ss.is_finite() {
            return Err(CoreError::PhaseType(format!(
                "absorption rate lambda_ss must be positive and finite, got {lambda_ss}"
            )));
        }
        if r > 0 && (!(lambda_ls > 0.0) || !lambda_ls.is_finite()) {
            return Err(CoreError::PhaseType(format!(
                "absorption rate lambda_ls must be positive and finite, got {lambda_ls}"
            )));
        }
        Ok(CoxianPh {
            m,
            r,
            lambdas: lambdas.to_vec(),
            lambda_ss,
            lambda_ls,
        })
    }

    pub fn short_stay_phases(&self) -> usize {
        self.m
    }

    pub fn long_stay_phases(&self) -> usize {
        self.r
    }

    /// Total number of transient phases `m + r`.
    pub fn order(&self) -> usize {
        self.m + self.r
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn lambda_ss(&self) -> f64 {
        self.lambda_ss
    }

    pub fn lambda_ls(&self) -> f64 {
        self.lambda_ls
    }

    /// Onward transition rate out of 0-based phase `h` (zero for the last phase).
    pub(crate) fn forward_rate(&self, h: usize) -> f64 {
        if h + 1 < self.order() {
            self.lambdas[h]
        } else {
            0.0
        }
    }

    /// Absorption rate out of 0-based phase `h`.
    pub(crate) fn exit_rate(&self, h: usize) -> f64 {
        if h == self.m - 1 && self.r > 0 {
            self.lambda_ss
        } else if h == self.order() - 1 {
            if self.r > 0 {
                self.lambda_ls
            } else {
                self.lambda_ss
            }
        } else {
            0.0
        }
    }

    /// Transient intensity submatrix `Q` (upper bidiagonal).
    pub fn q_matrix(&self) -> SquareMatrix {
        let p = self.order();
        let mut q = SquareMatrix::zeros(p);
        for h in 0..p {
            q.set(h, h, -(self.forward_rate(h) + self.exit_rate(h)));
            if h + 1 < p {
                q.set(h, h + 1, self.forward_rate(h));
            }
        }
        q
    }

    /// Exit-rate column vector `-Q·1`.
    pub fn exit_vector(&self) -> Vec<f64> {
        (0..self.order()).map(|h| self.exit_rate(h)).collect()
    }

    /// Initial probability row vector `(1, 0, …, 0)`.
    pub fn initial_vector(&self) -> Vec<f64> {
        let mut pi = vec![0.0; self.order()];
        pi[0] = 1.0;
        pi
    }

    /// Density `f(t) = π exp(Qt)(-Q1)`.
    pub fn density(&self, t: f64) -> Result<f64> {
        let w = matexp_action(&self.q_matrix(), t, &self.exit_vector(), 1e-12)?;
        Ok(w[0].max(0.0))
    }

    /// Survival `S(t) = π exp(Qt)1`.
    pub fn survival(&self, t: f64) -> Result<f64> {
        let ones = vec![1.0; self.order()];
        let w = matexp_action(&self.q_matrix(), t, &ones, 1e-12)?;
        Ok(w[0].clamp(0.0, 1.0))
    }

    /// Solve `Q x = b` by back substitution on the upper bidiagonal.
    pub(crate) fn solve_q(&self, b: &[f64]) -> Vec<f64> {
        let p = self.order();
        let mut x = vec![0.0; p];
        let q = |h: usize| -(self.forward_rate(h) + self.exit_rate(h));
        x[p - 1] = b[p - 1] / q(p - 1);
        for h in (0..p - 1).rev() {
            x[h] = (b[h] - self.forward_rate(h) * x[h + 1]) / q(h);
        }
        x
    }

    /// Solve the row system `x (-Q) = b`, i.e. `x = b (-Q)^{-1}`.
    pub(crate) fn solve_neg_q_row(&self, b: &[f64]) -> Vec<f64> {
        let p = self.order();
        let mut x = vec![0.0; p];
        let d = |h: usize| self.forward_rate(h) + self.exit_rate(h);
        x[0] = b[0] / d(0);
        for h in 1..p {
            x[h] = (b[h] + self.forward_rate(h - 1) * x[h - 1]) / d(h);
        }
        x
    }

    /// Noncentral moment `m(k) = (-1)^k k! · π Q^{-k} 1`.
    pub fn moment(&self, k: u32) -> Result<f64> {
        if k == 0 {
            return Err(CoreError::PhaseType("moment order must be at least 1".into()));
        }
        let mut y = vec![1.0; self.order()];
        for _ in 0..k {
            y = self.solve_q(&y);
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let factorial: f64 = (1..=k).map(f64::from).product();
        Ok(sign * factorial * y[0])
    }

    /// Log-likelihood of an observation set per the censored form
    /// `L = Σ α log f(t) + (1-α) log S(t)`.
    pub fn log_likelihood(&self, obs: &ObservationSet) -> Result<LogLikelihood> {
        let mut total = 0.0;
        for entry in obs.entries() {
            let value = if entry.complete {
                self.density(entry.time_days)?
            } else {
                self.survival(entry.time_days)?
            };
            if value <= 0.0 {
                return Ok(LogLikelihood::NegInfinite);
            }
            total += value.ln();
        }
        Ok(LogLikelihood::Finite(total))
    }

    /// Draw one sojourn time by simulating the chain to absorption.
    pub fn sample_sojourn<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut t = 0.0;
        let mut phase = 0usize;
        loop {
            let forward = self.forward_rate(phase);
            let exit = self.exit_rate(phase);
            let total = forward + exit;
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / total;
            if forward == 0.0 {
                return t;
            }
            let branch: f64 = rng.random();
            if branch * total < exit {
                return t;
            }
            phase += 1;
        }
    }
}

/// Typed log-likelihood: degenerate when any complete observation has zero
/// density (or a censored one zero survival).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogLikelihood {
    Finite(f64),
    NegInfinite,
}

impl LogLikelihood {
    pub fn value(self) -> f64 {
        match self {
            LogLikelihood::Finite(v) => v,
            LogLikelihood::NegInfinite => f64::NEG_INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, LogLikelihood::Finite(_))
    }
}

/// One time-to-readmission observation: `complete = true` means the
/// readmission was observed at `time_days`, `false` means censored there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time_days: f64,
    pub complete: bool,
}

/// Times to readmission with censoring flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    entries: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(entries: Vec<Observation>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if !(e.time_days > 0.0) || !e.time_days.is_finite() {
                return Err(CoreError::PhaseType(format!(
                    "observation {i} has nonpositive time {}",
                    e.time_days
                )));
            }
        }
        Ok(ObservationSet { entries })
    }

    pub fn from_parts(times: &[f64], complete: &[bool]) -> Result<Self> {
        if times.len() != complete.len() {
            return Err(CoreError::PhaseType("times/flags length mismatch".into()));
        }
        Self::new(
            times
                .iter()
                .zip(complete)
                .map(|(&time_days, &complete)| Observation {
                    time_days,
                    complete,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn any_complete(&self) -> bool {
        self.entries.iter().any(|e| e.complete)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn two_phase_example() -> CoxianPh {
        // m=1, r=1, λ1=1, λSS=2, λLS=3 → Q = [[-3, 1], [0, -3]], exit (2, 3).
        CoxianPh::new(1, 1, &[1.0], 2.0, 3.0).unwrap()
    }

    #[test]
    fn q_assembly_two_phase() {
        let ph = two_phase_example();
        let q = ph.q_matrix();
        assert_eq!(q.get(0, 0), -3.0);
        assert_eq!(q.get(0, 1), 1.0);
        assert_eq!(q.get(1, 0), 0.0);
        assert_eq!(q.get(1, 1), -3.0);
        assert_eq!(ph.exit_vector(), vec![2.0, 3.0]);
        assert_eq!(ph.initial_vector(), vec![1.0, 0.0]);
    }

    #[test]
    fn q_assembly_degenerate_exponential() {
        let ph = CoxianPh::new(1, 0, &[], 2.0, 1.0).unwrap();
        let q = ph.q_matrix();
        assert_eq!(q.n(), 1);
        assert_eq!(q.get(0, 0), -2.0);
        assert_eq!(ph.exit_vector(), vec![2.0]);
    }

    #[test]
    fn zero_rate_rejected() {
        assert!(CoxianPh::new(2, 0, &[0.0], 1.0, 1.0).is_err());
        assert!(CoxianPh::new(1, 1, &[1.0], -2.0, 1.0).is_err());
        assert!(CoxianPh::new(1, 1, &[1.0, 4.0], 2.0, 3.0).is_err()); // length mismatch
    }

    #[test]
    fn row_sums_of_full_intensity_vanish() {
        let ph = CoxianPh::new(2, 3, &[0.3, 1.1, 0.7, 2.0], 0.5, 0.9).unwrap();
        let q = ph.q_matrix();
        let exit = ph.exit_vector();
        for h in 0..ph.order() {
            let row_sum: f64 = (0..ph.order()).map(|j| q.get(h, j)).sum::<f64>() + exit[h];
            assert!(row_sum.abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_density_and_survival() {
        let ph = CoxianPh::new(1, 0, &[], 2.0, 1.0).unwrap();
        assert!((ph.density(0.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((ph.density(1.0).unwrap() - 2.0 * (-2.0f64).exp()).abs() < 1e-12);
        assert!((ph.survival(0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((ph.survival(1.0).unwrap() - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn two_phase_closed_form() {
        // Equal diagonals make exp(Qt) = e^{-3t} [[1, t], [0, 1]], so
        // f(t) = e^{-3t}(2 + 3t) and S(t) = e^{-3t}(1 + t).
        let ph = two_phase_example();
        let t = 0.5;
        let f = ph.density(t).unwrap();
        let s = ph.survival(t).unwrap();
        assert!((f - 0.7809555605195043).abs() < 1e-12);
        assert!((s - 0.33469524022264474).abs() < 1e-12);
    }

    #[test]
    fn negative_time_rejected() {
        let ph = two_phase_example();
        assert!(ph.density(-0.5).is_err());
        assert!(ph.survival(-0.5).is_err());
    }

    #[test]
    fn exponential_moments() {
        let ph = CoxianPh::new(1, 0, &[], 2.0, 1.0).unwrap();
        assert!((ph.moment(1).unwrap() - 0.5).abs() < 1e-12);
        assert!((ph.moment(2).unwrap() - 0.5).abs() < 1e-12); // 2/λ² = 0.5
        assert!(ph.moment(0).is_err());
    }

    #[test]
    fn two_phase_mean() {
        // By direct integration of S(t) = e^{-3t}(1+t): mean = 1/3 + 1/9 = 4/9.
        let ph = two_phase_example();
        assert!((ph.moment(1).unwrap() - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_all_censored_exponential() {
        let ph = CoxianPh::new(1, 0, &[], 0.7, 1.0).unwrap();
        let obs = ObservationSet::from_parts(&[1.0, 2.0, 3.5], &[false, false, false]).unwrap();
        let ll = ph.log_likelihood(&obs).unwrap().value();
        assert!((ll - (-0.7 * 6.5)).abs() < 1e-10);
    }

    #[test]
    fn log_likelihood_single_complete() {
        let ph = CoxianPh::new(1, 0, &[], 1.0, 1.0).unwrap();
        let obs = ObservationSet::from_parts(&[1.0], &[true]).unwrap();
        assert!((ph.log_likelihood(&obs).unwrap().value() + 1.0).abs() < 1e-10);
    }

    #[test]
    fn log_likelihood_mixed_matches_per_term_composition() {
        let ph = two_phase_example();
        let times = [0.2, 0.9, 1.4, 2.0, 3.3];
        let flags = [true, false, true, true, false];
        let obs = ObservationSet::from_parts(&times, &flags).unwrap();
        // Closed forms for this model serve as the per-term oracle.
        let mut want = 0.0;
        for (&t, &c) in times.iter().zip(&flags) {
            let e = (-3.0 * t).exp();
            want += if c {
                (e * (2.0 + 3.0 * t)).ln()
            } else {
                (e * (1.0 + t)).ln()
            };
        }
        assert!((ph.log_likelihood(&obs).unwrap().value() - want).abs() < 1e-10);
    }

    #[test]
    fn nonpositive_observation_rejected() {
        assert!(ObservationSet::from_parts(&[0.0], &[true]).is_err());
        assert!(ObservationSet::from_parts(&[-1.0], &[false]).is_err());
    }

    #[test]
    fn sample_mean_matches_exponential() {
        let ph = CoxianPh::new(1, 0, &[], 2.0, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| ph.sample_sojourn(&mut rng)).sum::<f64>() / n as f64;
        // Var = 1/λ² = 0.25 → SE = 0.5/1000.
        assert!((mean - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn sampling_is_reproducible() {
        let ph = two_phase_example();
        let a: Vec<f64> = {
            let mut rng = ChaCha12Rng::seed_from_u64(11);
            (0..32).map(|_| ph.sample_sojourn(&mut rng)).collect()
        };
        let b: Vec<f64> = {
            let mut rng = ChaCha12Rng::seed_from_u64(11);
            (0..32).map(|_| ph.sample_sojourn(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_survival_matches_analytic() {
        let ph = two_phase_example();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let n = 1_000_000usize;
        let mut draws: Vec<f64> = (0..n).map(|_| ph.sample_sojourn(&mut rng)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for t in [0.1, 0.3, 0.5, 0.8, 1.2] {
            let surviving = draws.len() - draws.partition_point(|&x| x <= t);
            let empirical = surviving as f64 / n as f64;
            let s = ph.survival(t).unwrap();
            let se = (s * (1.0 - s) / n as f64).sqrt();
            assert!(
                (empirical - s).abs() < 3.0 * se,
                "t={t}: empirical {empirical} vs analytic {s}"
            );
        }
    }

    #[test]
    fn monte_carlo_mean_two_phase() {
        let ph = two_phase_example();
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let n = 1_000_000usize;
        let draws: Vec<f64> = (0..n).map(|_| ph.sample_sojourn(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - ph.moment(1).unwrap()).abs() < 3.0 * se);
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let ph = CoxianPh::new(2, 2, &[0.1234567890123457, 3.3, 0.717273], 1.5e-3, 9.99).unwrap();
        let json = serde_json::to_string(&ph).unwrap();
        let back: CoxianPh = serde_json::from_str(&json).unwrap();
        assert_eq!(ph, back);
    }
}
