//! Mean-variance estimation and the long-only quadratic program
//! `min ½wᵀΣw − λμᵀw` subject to `Σw = 1, w ≥ 0`.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::data::MarketFrame;
use crate::env::WeightVector;
use crate::linalg;

/// Floor on the smallest covariance eigenvalue; a ridge is added below it.
pub const MIN_EIGENVALUE: f64 = 1e-10;
/// Smallest eigenvalue after the ridge is applied.
pub const RIDGE_TARGET: f64 = 1e-8;
/// Exhaustive active-set enumeration is limited to this many assets.
pub const MAX_ASSETS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MptError {
    #[error("day {t} has fewer than {lookback} trailing returns")]
    WindowTooShort { t: usize, lookback: usize },
    #[error("covariance matrix is singular")]
    SingularCovariance,
    #[error("normalizer of the closed-form weights is zero")]
    ZeroNormalizer,
    #[error("no KKT point found after {iterations} candidate active sets")]
    NonConvergence { iterations: usize },
    #[error("inputs have mismatched or invalid dimensions")]
    InvalidInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mu: Vec<f64>,
    /// Row-major `M × M`.
    pub cov: Vec<f64>,
    pub lookback: usize,
    /// Multiple of the identity added to the sample covariance (0 if none).
    pub ridge: f64,
}

impl MomentEstimate {
    pub fn assets(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MptSolution {
    pub weights: WeightVector,
    pub expected_return: f64,
    pub variance: f64,
    /// Indices held at the `w_i ≥ 0` bound.
    pub active_set: Vec<usize>,
    /// Lagrange multiplier of the budget constraint.
    pub budget_multiplier: f64,
}

/// Sample mean and covariance (denominator `n − 1`) of the `lookback`
/// simple close-to-close returns ending at day `t`.
pub fn estimate_moments(frame: &MarketFrame, t: usize, lookback: usize) -> Result<MomentEstimate, MptError> {
    if lookback < 2 {
        return Err(MptError::InvalidInput);
    }
    Ok(moments_from_returns(&trailing_returns(frame, t, lookback)?))
}

/// Simple close-to-close returns of every asset over the `lookback` days
/// ending at `t`, as `returns[asset][step]`.
pub fn trailing_returns(frame: &MarketFrame, t: usize, lookback: usize) -> Result<Vec<Vec<f64>>, MptError> {
    if t >= frame.len() {
        return Err(MptError::InvalidInput);
    }
    if t < lookback {
        return Err(MptError::WindowTooShort { t, lookback });
    }
    Ok((0..frame.num_assets())
        .map(|a| (t + 1 - lookback..=t).map(|d| frame.close(a, d) / frame.close(a, d - 1) - 1.0).collect())
        .collect())
}

/// Moments of per-asset return series (`returns[asset][step]`), with the
/// ridge applied when the covariance is numerically singular.
pub fn moments_from_returns(returns: &[Vec<f64>]) -> MomentEstimate {
    let m = returns.len();
    let n = returns[0].len();
    let mu: Vec<f64> = returns.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let c = (0..n).map(|k| (returns[i][k] - mu[i]) * (returns[j][k] - mu[j])).sum::<f64>() / (n - 1) as f64;
            cov[i * m + j] = c;
            cov[j * m + i] = c;
        }
    }
    let min_eig = linalg::symmetric_eigenvalues(&cov, m)[0];
    let ridge = if min_eig < MIN_EIGENVALUE { RIDGE_TARGET - min_eig } else { 0.0 };
    for i in 0..m {
        cov[i * m + i] += ridge;
    }
    MomentEstimate { mu, cov, lookback: n, ridge }
}

/// Sign-unconstrained tangency weights `Σ⁻¹(μ − r_f)/Z` normalized to sum to 1.
pub fn solve_closed_form(mu: &[f64], cov: &[f64], risk_free: f64) -> Result<Vec<f64>, MptError> {
    let m = mu.len();
    if m == 0 || cov.len() != m * m {
        return Err(MptError::InvalidInput);
    }
    let excess: Vec<f64> = mu.iter().map(|x| x - risk_free).collect();
    let raw = linalg::solve(cov, &excess, m).ok_or(MptError::SingularCovariance)?;
    let z: f64 = raw.iter().sum();
    if z.abs() < 1e-12 {
        return Err(MptError::ZeroNormalizer);
    }
    Ok(raw.iter().map(|x| x / z).collect())
}

/// `½wᵀΣw − λμᵀw`.
pub fn objective(w: &[f64], mu: &[f64], cov: &[f64], lambda: f64) -> f64 {
    let m = mu.len();
    0.5 * linalg::quad_form(cov, w, m) - lambda * w.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>()
}

struct Candidate {
    weights: Vec<f64>,
    nu: f64,
    objective: f64,
}

// Solves the equality-constrained problem on the free set and checks the
// remaining KKT conditions within `tol`.
fn kkt_candidate(mu: &[f64], cov: &[f64], lambda: f64, free: &[usize], tol: f64) -> Option<Candidate> {
    let m = mu.len();
    let k = free.len();
    let n = k + 1;
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[r * n + c] = cov[i * m + j];
        }
        a[r * n + k] = -1.0;
        a[k * n + r] = 1.0;
        b[r] = lambda * mu[i];
    }
    b[k] = 1.0;
    let sol = linalg::solve(&a, &b, n)?;
    if sol[..k].iter().any(|&w| w < -tol) {
        return None;
    }
    let nu = sol[k];
    let mut weights = vec![0.0; m];
    for (r, &i) in free.iter().enumerate() {
        weights[i] = sol[r].max(0.0);
    }
    let grad = linalg::mat_vec(cov, &weights, m);
    let scale = 1.0 + nu.abs();
    for i in (0..m).filter(|i| !free.contains(i)) {
        // multiplier of the bound w_i ≥ 0
        if grad[i] - lambda * mu[i] - nu < -tol * scale {
            return None;
        }
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    let objective = objective(&weights, mu, cov, lambda);
    Some(Candidate { weights, nu, objective })
}

/// Exact minimizer over the simplex by enumerating every free set and
/// keeping the best candidate that satisfies the KKT conditions.
pub fn solve_constrained(mu: &[f64], cov: &[f64], lambda: f64) -> Result<MptSolution, MptError> {
    let m = mu.len();
    if m == 0 || cov.len() != m * m || !(lambda >= 0.0) {
        return Err(MptError::InvalidInput);
    }
    if m > MAX_ASSETS {
        return Err(MptError::NonConvergence { iterations: 0 });
    }
    let subsets = (1usize << m) - 1;
    let mut best: Option<Candidate> = None;
    for tol in [1e-12, 1e-9, 1e-6] {
        for mask in 1..=subsets {
            let free: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            if let Some(c) = kkt_candidate(mu, cov, lambda, &free, tol) {
                if best.as_ref().is_none_or(|b| c.objective < b.objective) {
                    best = Some(c);
                }
            }
        }
        if best.is_some() {
            break;
        }
    }
    let best = best.ok_or(MptError::NonConvergence { iterations: 3 * subsets })?;
    let expected_return = best.weights.iter().zip(mu).map(|(w, r)| w * r).sum();
    let variance = linalg::quad_form(cov, &best.weights, m).max(0.0);
    let active_set = (0..m).filter(|&i| best.weights[i] == 0.0).collect();
    Ok(MptSolution {
        weights: WeightVector::new(best.weights).map_err(|_| MptError::InvalidInput)?,
        expected_return,
        variance,
        active_set,
        budget_multiplier: best.nu,
    })
}
