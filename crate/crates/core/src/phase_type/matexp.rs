//! Action of the matrix exponential for transient intensity matrices.
//!
//! `exp(Qt)·v` is evaluated with uniformization: the Poisson-weighted power
//! series in `P = I + Q/Λ`. For a transient intensity matrix `P` is
//! nonnegative with row sums at most one, so the truncated tail is bounded by
//! `‖v‖∞ · P[Poisson(Λt) > K]`, which gives a rigorous stopping rule.

use crate::error::{CoreError, Result};

/// Largest Poisson rate handled in a single time slice. Keeps the leading
/// weight `e^{-Λδ}` well inside the normal f64 range.
const MAX_SLICE_RATE: f64 = 64.0;

/// Small dense square matrix, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(CoreError::PhaseType("matrix rows must be square".into()));
        }
        Ok(SquareMatrix {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = SquareMatrix::zeros(diag.len());
        for (h, &d) in diag.iter().enumerate() {
            m.set(h, h, d);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    /// `self · v` for a column vector.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for h in 0..self.n {
            let row = &self.data[h * self.n..(h + 1) * self.n];
            out[h] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        out
    }

    fn max_abs_diagonal(&self) -> f64 {
        (0..self.n)
            .map(|h| self.get(h, h).abs())
            .fold(0.0, f64::max)
    }
}

/// Evaluate `exp(Qt)·v` to absolute tolerance `abs_tol` per component.
///
/// `q` must be the transient partition of an intensity matrix (nonnegative
/// off-diagonal entries, nonpositive row sums); `t` must be nonnegative.
pub fn matexp_action(q: &SquareMatrix, t: f64, v: &[f64], abs_tol: f64) -> Result<Vec<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(CoreError::PhaseType(format!(
            "matrix exponential needs t >= 0, got {t}"
        )));
    }
    if v.len() != q.n() {
        return Err(CoreError::PhaseType("vector length mismatch".into()));
    }
    let mut w = v.to_vec();
    if t == 0.0 {
        return Ok(w);
    }
    let rate = q.max_abs_diagonal();
    if rate == 0.0 {
        return Ok(w); // Q = 0
    }

    let slices = (rate * t / MAX_SLICE_RATE).ceil().max(1.0);
    let slice_tol = (abs_tol / slices).max(f64::MIN_POSITIVE);
    let dt = t / slices;
    let pois_rate = rate * dt;

    // P = I + Q/Λ applied in place per power term.
    let n = q.n();
    for _ in 0..slices as usize {
        let norm = w.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if norm == 0.0 {
            return Ok(w);
        }
        let mut weight = (-pois_rate).exp();
        let mut cumulative = weight;
        let mut term = w.clone();
        let mut acc: Vec<f64> = term.iter().map(|x| x * weight).collect();
        let mut k = 0u64;
        while norm * (1.0 - cumulative) > slice_tol {
            // term <- P · term
            let mut next = vec![0.0; n];
            for h in 0..n {
                let mut s = term[h]; // identity part
                for j in 0..n {
                    s += q.get(h, j) / rate * term[j];
                }
                next[h] = s;
            }
            term = next;
            k += 1;
            weight *= pois_rate / k as f64;
            cumulative += weight;
            for (a, x) in acc.iter_mut().zip(&term) {
                *a += weight * x;
            }
            if k > 10_000_000 {
                return Err(CoreError::PhaseType(
                    "uniformization failed to converge".into(),
                ));
            }
        }
        w = acc;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_t_zero() {
        let q = SquareMatrix::from_rows(&[vec![-3.0, 1.0], vec![0.0, -3.0]]).unwrap();
        let v = vec![0.25, -1.5];
        assert_eq!(matexp_action(&q, 0.0, &v, 1e-12).unwrap(), v);
    }

    #[test]
    fn diagonal_case() {
        let q = SquareMatrix::diagonal(&[-0.7, -2.5]);
        let v = vec![1.0, 1.0];
        let w = matexp_action(&q, 1.3, &v, 1e-13).unwrap();
        assert!((w[0] - (-0.7f64 * 1.3).exp()).abs() < 1e-12);
        assert!((w[1] - (-2.5f64 * 1.3).exp()).abs() < 1e-12);
    }

    #[test]
    fn negative_time_rejected() {
        let q = SquareMatrix::diagonal(&[-1.0]);
        assert!(matexp_action(&q, -0.1, &[1.0], 1e-12).is_err());
    }

    /// Independent oracle: shifted Taylor series on the nonnegative matrix
    /// `Q + ΛI`, scaled by `e^{-Λt}`; no cancellation, 200 terms.
    fn taylor_action(q: &SquareMatrix, t: f64, v: &[f64]) -> Vec<f64> {
        let n = q.n();
        let shift = (0..n).map(|h| q.get(h, h).abs()).fold(0.0f64, f64::max);
        let mut term = v.to_vec();
        let mut acc = v.to_vec();
        for k in 1..=200u64 {
            let mut next = vec![0.0; n];
            for h in 0..n {
                let mut s = shift * term[h];
                for j in 0..n {
                    s += q.get(h, j) * term[j];
                }
                next[h] = s * t / k as f64;
            }
            term = next;
            for (a, x) in acc.iter_mut().zip(&term) {
                *a += x;
            }
        }
        let scale = (-shift * t).exp();
        acc.into_iter().map(|x| x * scale).collect()
    }

    #[test]
    fn matches_series_oracle_on_bidiagonal() {
        let q = SquareMatrix::from_rows(&[vec![-3.0, 1.0], vec![0.0, -3.0]]).unwrap();
        let v = vec![2.0, 3.0];
        let got = matexp_action(&q, 1.0, &v, 1e-13).unwrap();
        let want = taylor_action(&q, 1.0, &v);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
        }
    }

    #[test]
    fn semigroup_property() {
        let q = SquareMatrix::from_rows(&[
            vec![-2.0, 1.5, 0.0],
            vec![0.0, -4.0, 3.0],
            vec![0.0, 0.0, -0.8],
        ])
        .unwrap();
        let v = vec![1.0, 1.0, 1.0];
        let direct = matexp_action(&q, 2.9, &v, 1e-13).unwrap();
        let first = matexp_action(&q, 1.2, &v, 1e-13).unwrap();
        let composed = matexp_action(&q, 1.7, &first, 1e-13).unwrap();
        for (a, b) in direct.iter().zip(&composed) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
