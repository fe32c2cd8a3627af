//! Rank-based within-study treatment effects and surrogacy.
//!
//! `U` is the probability that a treated (or post-treatment) observation exceeds
//! a control (or pre-treatment) one, ties counting one half. The surrogacy
//! parameter is `delta = U_Y - U_S`.
//!
//! All comparisons are accumulated as integers (twice the comparison value), so
//! point estimates are exact dyadic fractions and variance numerators carry no
//! cancellation error.

use serde::{Deserialize, Serialize};

use crate::data::{MarkerData, StudyDataset};
use crate::dist::normal_quantile;
use crate::error::{Result, SurrError};

/// 1 if `x > y`, ½ if equal, 0 otherwise.
pub fn g_compare(x: f64, y: f64) -> f64 {
    g2(x, y) as f64 / 2.0
}

/// Twice [`g_compare`], as an integer in {0, 1, 2}.
#[inline]
fn g2(x: f64, y: f64) -> i64 {
    if x > y {
        2
    } else if x == y {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinStudyEstimate {
    pub study_id: String,
    pub marker_id: String,
    pub u_y: f64,
    pub u_s: f64,
    pub delta: f64,
    pub var_delta: f64,
    pub se_u_y: f64,
    pub n_effective: usize,
}

impl WithinStudyEstimate {
    pub fn labelled(mut self, study_id: &str, marker_id: &str) -> Self {
        self.study_id = study_id.to_string();
        self.marker_id = marker_id.to_string();
        self
    }

    pub fn se_delta(&self) -> f64 {
        self.var_delta.sqrt()
    }
}

/// `n * sum_sq - sum^2` for integer data.
fn centered_ss(values: impl Iterator<Item = i64>) -> (i128, usize) {
    let (mut s, mut ss, mut n) = (0i128, 0i128, 0usize);
    for v in values {
        s += v as i128;
        ss += (v as i128) * (v as i128);
        n += 1;
    }
    (n as i128 * ss - s * s, n)
}

/// `num / den` with a single rounding when both fit exactly in an f64.
pub(crate) fn ratio(num: i128, den: i128) -> f64 {
    num as f64 / den as f64
}

/// Variance of the mean of `values / 2`: sample variance (divisor n-1) over n.
fn paired_mean_var(values: impl Iterator<Item = i64>) -> f64 {
    let (c, n) = centered_ss(values);
    let n = n as i128;
    ratio(c, 4 * n * n * (n - 1))
}

/// Projection variance of a two-sample U-statistic from its doubled row
/// sums (one per treated subject) and column sums (one per control).
fn two_arm_var(rows: &[i64], cols: &[i64]) -> f64 {
    let (a, n1) = centered_ss(rows.iter().copied());
    let (b, n0) = centered_ss(cols.iter().copied());
    let (n1, n0) = (n1 as i128, n0 as i128);
    // a / (4 n0^2 n1^2 (n1 - 1)) + b / (4 n1^2 n0^2 (n0 - 1))
    let base = 4 * n0 * n0 * n1 * n1;
    match (a.checked_mul(n0 - 1), b.checked_mul(n1 - 1), base.checked_mul((n1 - 1) * (n0 - 1))) {
        (Some(x), Some(y), Some(den)) if x.checked_add(y).is_some() => ratio(x + y, den),
        _ => ratio(a, base * (n1 - 1)) + ratio(b, base * (n0 - 1)),
    }
}

/// Paired (pre/post) estimator.
pub fn estimate_paired(y0: &[f64], y1: &[f64], s0: &[f64], s1: &[f64]) -> Result<WithinStudyEstimate> {
    let n = y0.len();
    if y1.len() != n || s0.len() != n || s1.len() != n {
        return Err(SurrError::InvalidArgument(
            "paired vectors must have equal length".into(),
        ));
    }
    if n < 2 {
        return Err(SurrError::InsufficientData(format!(
            "paired estimate needs at least 2 complete pairs, got {n}"
        )));
    }
    let gy: Vec<i64> = (0..n).map(|i| g2(y1[i], y0[i])).collect();
    let gs: Vec<i64> = (0..n).map(|i| g2(s1[i], s0[i])).collect();
    let nf = n as f64;
    let u_y = gy.iter().sum::<i64>() as f64 / (2.0 * nf);
    let u_s = gs.iter().sum::<i64>() as f64 / (2.0 * nf);
    Ok(WithinStudyEstimate {
        study_id: String::new(),
        marker_id: String::new(),
        u_y,
        u_s,
        delta: u_y - u_s,
        var_delta: paired_mean_var(gy.iter().zip(&gs).map(|(a, b)| a - b)),
        se_u_y: paired_mean_var(gy.iter().copied()).sqrt(),
        n_effective: n,
    })
}

/// Two-arm estimator with the two-sample U-statistic projection variance.
pub fn estimate_two_arm(y_t: &[f64], s_t: &[f64], y_c: &[f64], s_c: &[f64]) -> Result<WithinStudyEstimate> {
    let (n1, n0) = (y_t.len(), y_c.len());
    if s_t.len() != n1 || s_c.len() != n0 {
        return Err(SurrError::InvalidArgument(
            "endpoint and marker vectors must have equal length within each arm".into(),
        ));
    }
    if n1 < 2 || n0 < 2 {
        return Err(SurrError::InsufficientData(format!(
            "two-arm estimate needs at least 2 subjects per arm, got treated {n1}, control {n0}"
        )));
    }
    let parts = TwoArmSums::new(y_t, s_t, y_c, s_c);
    let total = (n1 * n0) as f64;
    let u_y = parts.total_y as f64 / (2.0 * total);
    let u_s = parts.total_s as f64 / (2.0 * total);

    // treated components p_i = row_d[i] / (2 n0), control q_l = col_d[l] / (2 n1)
    let var_delta = two_arm_var(&parts.row_d, &parts.col_d);
    let var_u_y = two_arm_var(&parts.row_y, &parts.col_y);
    Ok(WithinStudyEstimate {
        study_id: String::new(),
        marker_id: String::new(),
        u_y,
        u_s,
        delta: u_y - u_s,
        var_delta,
        se_u_y: var_u_y.sqrt(),
        n_effective: n1 + n0,
    })
}

struct TwoArmSums {
    row_y: Vec<i64>,
    col_y: Vec<i64>,
    row_d: Vec<i64>,
    col_d: Vec<i64>,
    total_y: i64,
    total_s: i64,
}

impl TwoArmSums {
    fn new(y_t: &[f64], s_t: &[f64], y_c: &[f64], s_c: &[f64]) -> Self {
        let (n1, n0) = (y_t.len(), y_c.len());
        let mut out = TwoArmSums {
            row_y: vec![0; n1],
            col_y: vec![0; n0],
            row_d: vec![0; n1],
            col_d: vec![0; n0],
            total_y: 0,
            total_s: 0,
        };
        for i in 0..n1 {
            for l in 0..n0 {
                let gy = g2(y_t[i], y_c[l]);
                let gs = g2(s_t[i], s_c[l]);
                out.row_y[i] += gy;
                out.col_y[l] += gy;
                out.row_d[i] += gy - gs;
                out.col_d[l] += gy - gs;
                out.total_y += gy;
                out.total_s += gs;
            }
        }
        out
    }
}

/// Two-sample delete-one jackknife variance of the two-arm delta, as a cross-check
/// on the projection estimator. For this statistic the two coincide algebraically.
pub fn jackknife_var_two_arm(y_t: &[f64], s_t: &[f64], y_c: &[f64], s_c: &[f64]) -> Result<f64> {
    let (n1, n0) = (y_t.len(), y_c.len());
    if n1 < 2 || n0 < 2 || s_t.len() != n1 || s_c.len() != n0 {
        return Err(SurrError::InsufficientData(
            "jackknife needs at least 2 subjects per arm".into(),
        ));
    }
    let parts = TwoArmSums::new(y_t, s_t, y_c, s_c);
    let total: i64 = parts.row_d.iter().sum();
    let arm_part = |removed: &[i64], n_left: usize, n_other: usize| {
        let thetas: Vec<f64> = removed
            .iter()
            .map(|&r| (total - r) as f64 / (2.0 * (n_left * n_other) as f64))
            .collect();
        let mean = thetas.iter().sum::<f64>() / thetas.len() as f64;
        let k = thetas.len() as f64;
        (k - 1.0) / k * thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>()
    };
    Ok(arm_part(&parts.row_d, n1 - 1, n0) + arm_part(&parts.col_d, n0 - 1, n1))
}

/// Estimates marker `marker` (or the endpoint alone when `None`) in one study,
/// using the subjects complete for that marker.
pub fn estimate_study_marker(study: &StudyDataset, marker: Option<usize>) -> Result<WithinStudyEstimate> {
    let name = marker.map_or("y", |j| study.marker_names[j].as_str());
    let est = match study.marker_data(marker) {
        MarkerData::Paired { y0, y1, s0, s1 } => estimate_paired(&y0, &y1, &s0, &s1),
        MarkerData::TwoArm { y_t, s_t, y_c, s_c } => estimate_two_arm(&y_t, &s_t, &y_c, &s_c),
    };
    est.map(|e| e.labelled(&study.study_id, name)).map_err(|e| match e {
        SurrError::InsufficientData(msg) => {
            SurrError::InsufficientData(format!("study `{}`, marker `{name}`: {msg}", study.study_id))
        }
        other => other,
    })
}

/// Equivalence bound giving the target power, at one-sided level `alpha`, to
/// detect an effect on `U_Y` of that size under a normal approximation,
/// averaged over studies: `mean_m (z_{1-alpha} + z_power) * se_m`.
pub fn select_epsilon_power(estimates: &[WithinStudyEstimate], alpha: f64, power: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(SurrError::InsufficientData("no studies for power-based epsilon".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) || !(power > 0.0 && power < 1.0) {
        return Err(SurrError::InvalidArgument(format!(
            "alpha and power must lie in (0, 1), got {alpha} and {power}"
        )));
    }
    if let Some(e) = estimates.iter().find(|e| !(e.se_u_y > 0.0)) {
        return Err(SurrError::Degenerate(format!(
            "study `{}` has zero standard error for U_Y; power calculation is degenerate",
            e.study_id
        )));
    }
    let z = normal_quantile(1.0 - alpha) + normal_quantile(power);
    Ok(estimates.iter().map(|e| z * e.se_u_y).sum::<f64>() / estimates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceCheck {
    /// Largest amount by which the treated ECDF exceeds the control ECDF.
    pub max_violation: f64,
    pub pass: bool,
}

/// Empirical check that the treated marker distribution stochastically
/// dominates the control one: `P(S1 > s) >= P(S0 > s)` for all `s`.
pub fn check_dominance(s_t: &[f64], s_c: &[f64], tol: f64) -> Result<DominanceCheck> {
    if s_t.is_empty() || s_c.is_empty() {
        return Err(SurrError::InsufficientData(
            "dominance check needs both samples nonempty".into(),
        ));
    }
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (t, c) = (sorted(s_t), sorted(s_c));
    let ecdf = |v: &[f64], x: f64| v.partition_point(|&a| a <= x) as f64 / v.len() as f64;
    let max_violation = t
        .iter()
        .chain(c.iter())
        .map(|&x| ecdf(&t, x) - ecdf(&c, x))
        .fold(0.0f64, f64::max);
    Ok(DominanceCheck {
        max_violation,
        pass: max_violation <= tol,
    })
}
