//! Two one-sided tests on pooled effects, Benjamini-Hochberg adjustment and
//! marker screening.

use serde::{Deserialize, Serialize};

use crate::dist::{cdf, sf};
use crate::error::{Result, SurrError};
use crate::meta::PooledResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TostP {
    pub p_lower: f64,
    pub p_upper: f64,
    pub p_tost: f64,
}

/// TOST p-values for `H0: mu <= -eps` (lower) and `H0: mu >= eps` (upper).
///
/// A zero standard error is treated as a point mass at `mu_hat`.
pub fn tost_p(mu_hat: f64, se: f64, df: f64, epsilon: f64) -> Result<TostP> {
    if !(epsilon > 0.0) {
        return Err(SurrError::InvalidArgument(format!(
            "equivalence bound must be positive, got {epsilon}"
        )));
    }
    if !(df >= 1.0) {
        return Err(SurrError::InvalidArgument(format!("degrees of freedom must be >= 1, got {df}")));
    }
    if !(se >= 0.0) {
        return Err(SurrError::InvalidArgument(format!("standard error must be >= 0, got {se}")));
    }
    let (p_lower, p_upper) = if se == 0.0 {
        let point = |excess: f64| {
            if excess > 0.0 {
                0.0
            } else if excess == 0.0 {
                0.5
            } else {
                1.0
            }
        };
        (point(mu_hat + epsilon), point(epsilon - mu_hat))
    } else {
        (sf((mu_hat + epsilon) / se, df), cdf((mu_hat - epsilon) / se, df))
    };
    Ok(TostP {
        p_lower,
        p_upper,
        p_tost: p_lower.max(p_upper),
    })
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(SurrError::InvalidArgument(format!("p-value {bad} outside [0, 1]")));
    }
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; n];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min((p[i] * n as f64 / (rank + 1) as f64).max(p[i])).min(1.0);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceResult {
    pub marker_id: String,
    pub p_lower: f64,
    pub p_upper: f64,
    pub p_tost: f64,
    pub p_adjusted: f64,
    pub epsilon: f64,
    pub significant: bool,
}

/// TOST on every pooled result, then BH across all of them.
pub fn test_equivalence(pooled: &[PooledResult], epsilon: f64, alpha: f64) -> Result<Vec<EquivalenceResult>> {
    let raw = pooled
        .iter()
        .map(|r| tost_p(r.mu_hat, r.se_pooled, r.df, epsilon))
        .collect::<Result<Vec<_>>>()?;
    let adjusted = bh_adjust(&raw.iter().map(|t| t.p_tost).collect::<Vec<_>>())?;
    Ok(pooled
        .iter()
        .zip(raw)
        .zip(adjusted)
        .map(|((r, t), adj)| EquivalenceResult {
            marker_id: r.marker_id.clone(),
            p_lower: t.p_lower,
            p_upper: t.p_upper,
            p_tost: t.p_tost,
            p_adjusted: adj,
            epsilon,
            significant: adj < alpha,
        })
        .collect())
}

/// Indices of markers with adjusted p-value strictly below `alpha`, ordered by marker id.
pub fn screen_markers(results: &[EquivalenceResult], alpha: f64) -> Vec<usize> {
    let mut gamma: Vec<usize> = (0..results.len())
        .filter(|&i| results[i].p_adjusted < alpha)
        .collect();
    gamma.sort_by(|&a, &b| results[a].marker_id.cmp(&results[b].marker_id));
    if gamma.is_empty() {
        log::warn!("no marker passed screening at alpha = {alpha}");
    }
    gamma
}

/// Smallest equivalence bound at which the TOST p-value equals `alpha`, by bisection.
pub fn least_equivalent_bound(mu_hat: f64, se: f64, df: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(SurrError::InvalidArgument(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    if se == 0.0 {
        return Ok(mu_hat.abs());
    }
    let p = |eps: f64| tost_p(mu_hat, se, df, eps).map(|t| t.p_tost);
    let mut lo = f64::MIN_POSITIVE;
    let mut hi = mu_hat.abs() + se;
    while p(hi)? > alpha {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p(mid)? > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(hi)
}
