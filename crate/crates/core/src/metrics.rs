//! Agreement between per-study treatment effects on the endpoint and on a
//! marker: concordance correlation, ICC(2,1), weighted R², and BCa bootstrap
//! intervals for each of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{normal_cdf, normal_quantile};
use crate::error::{Result, SurrError};

/// Paired per-study effects `(U_Y,m, U_S,m)` with study sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectPairs {
    pub u_y: Vec<f64>,
    pub u_s: Vec<f64>,
    pub n_per_study: Vec<usize>,
}

impl EffectPairs {
    pub fn new(u_y: Vec<f64>, u_s: Vec<f64>, n_per_study: Vec<usize>) -> Result<Self> {
        if u_y.len() != u_s.len() || u_y.len() != n_per_study.len() {
            return Err(SurrError::InvalidArgument(
                "effect vectors and study sizes must have equal length".into(),
            ));
        }
        Ok(EffectPairs { u_y, u_s, n_per_study })
    }

    pub fn m(&self) -> usize {
        self.u_y.len()
    }

    fn resample(&self, idx: &[usize]) -> EffectPairs {
        EffectPairs {
            u_y: idx.iter().map(|&i| self.u_y[i]).collect(),
            u_s: idx.iter().map(|&i| self.u_s[i]).collect(),
            n_per_study: idx.iter().map(|&i| self.n_per_study[i]).collect(),
        }
    }

    fn without(&self, k: usize) -> EffectPairs {
        let idx: Vec<usize> = (0..self.m()).filter(|&i| i != k).collect();
        self.resample(&idx)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population (divisor M) variances and covariance.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let n = x.len() as f64;
    let vx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    let cxy = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    (mx, my, vx, vy, cxy)
}

/// Lin's concordance correlation coefficient.
pub fn ccc(pairs: &EffectPairs) -> Result<f64> {
    if pairs.m() < 2 {
        return Err(SurrError::InsufficientData("CCC needs at least 2 studies".into()));
    }
    let (mx, my, vx, vy, cxy) = moments(&pairs.u_y, &pairs.u_s);
    let denom = vx + vy + (mx - my).powi(2);
    if vx == 0.0 && vy == 0.0 {
        if denom == 0.0 {
            log::warn!("CCC: both effect vectors are constant and equal; reporting 1");
            return Ok(1.0);
        }
        log::warn!("CCC: both effect vectors are constant and differ; reporting 0");
        return Ok(0.0);
    }
    Ok(2.0 * cxy / denom)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (_, _, vx, vy, cxy) = moments(x, y);
    cxy / (vx * vy).sqrt()
}

/// Two-way random-effects, absolute-agreement, single-measurement ICC.
pub fn icc21(pairs: &EffectPairs) -> Result<f64> {
    let m = pairs.m();
    if m < 2 {
        return Err(SurrError::InsufficientData("ICC(2,1) needs at least 2 studies".into()));
    }
    let mf = m as f64;
    let (us, uy) = (&pairs.u_s, &pairs.u_y);
    let mean_s = mean(us);
    let mean_y = mean(uy);
    let grand = (mean_s + mean_y) / 2.0;
    let row: Vec<f64> = us.iter().zip(uy).map(|(s, y)| (s + y) / 2.0).collect();

    let ms_r = 2.0 / (mf - 1.0) * row.iter().map(|r| (r - grand).powi(2)).sum::<f64>();
    let ms_c = mf * ((mean_s - grand).powi(2) + (mean_y - grand).powi(2));
    let ms_e = (0..m)
        .map(|k| (us[k] - row[k] - mean_s + grand).powi(2) + (uy[k] - row[k] - mean_y + grand).powi(2))
        .sum::<f64>()
        / (mf - 1.0);
    let denom = ms_r + ms_e + 2.0 / mf * (ms_c - ms_e);
    if denom == 0.0 {
        return Err(SurrError::Undefined(
            "ICC(2,1) denominator is zero (all values identical)".into(),
        ));
    }
    Ok((ms_r - ms_e) / denom)
}

/// R² of the regression `u_y = k0 + k1 u_s` weighted by `w`.
pub fn r2_weighted(u_y: &[f64], u_s: &[f64], w: &[f64]) -> Result<f64> {
    if u_y.len() < 3 {
        return Err(SurrError::InsufficientData("weighted R² needs at least 3 studies".into()));
    }
    let sw: f64 = w.iter().sum();
    let wmean = |v: &[f64]| v.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let (mx, my) = (wmean(u_s), wmean(u_y));
    let sxx: f64 = u_s.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let syy: f64 = u_y.iter().zip(w).map(|(y, w)| w * (y - my).powi(2)).sum();
    let sxy: f64 = u_s
        .iter()
        .zip(u_y)
        .zip(w)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    if sxx <= 0.0 {
        return Err(SurrError::Degenerate("surrogate effects are constant across studies".into()));
    }
    if syy <= 0.0 {
        return Err(SurrError::Undefined("endpoint effects are constant across studies".into()));
    }
    Ok((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0))
}

/// Trial-level R² from least squares weighted by study size.
pub fn r2_trial_wls(pairs: &EffectPairs) -> Result<f64> {
    let w: Vec<f64> = pairs.n_per_study.iter().map(|&n| n as f64).collect();
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(SurrError::InvalidArgument("study sizes must be positive".into()));
    }
    r2_weighted(&pairs.u_y, &pairs.u_s, &w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Ccc,
    Icc21,
    R2Trial,
}

impl Statistic {
    pub fn evaluate(&self, pairs: &EffectPairs) -> Result<f64> {
        match self {
            Statistic::Ccc => ccc(pairs),
            Statistic::Icc21 => icc21(pairs),
            Statistic::R2Trial => r2_trial_wls(pairs),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Statistic::Ccc => "ccc",
            Statistic::Icc21 => "icc21",
            Statistic::R2Trial => "r2_trial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcaInterval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
    pub bias_correction: f64,
    pub acceleration: f64,
    /// All bootstrap replicates were equal; the interval has zero width.
    pub degenerate: bool,
    pub failed_replicates: usize,
}

/// Linear-interpolation quantile of sorted data.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bias-corrected and accelerated bootstrap interval, resampling studies with
/// replacement. Replicate `b` draws from its own ChaCha stream, so the result
/// does not depend on the thread count.
pub fn bca_bootstrap_ci(
    statistic: Statistic,
    pairs: &EffectPairs,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<BcaInterval> {
    if b < 200 {
        return Err(SurrError::InvalidArgument(format!("need at least 200 bootstrap replicates, got {b}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(SurrError::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    let estimate = statistic.evaluate(pairs)?;
    let m = pairs.m();
    let replicates: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
            statistic.evaluate(&pairs.resample(&idx)).ok()
        })
        .collect();
    let mut values: Vec<f64> = replicates.into_iter().flatten().collect();
    let failed = b - values.len();
    if failed as f64 > 0.1 * b as f64 {
        return Err(SurrError::Undefined(format!(
            "{} undefined on {failed} of {b} bootstrap replicates ({:.1}%)",
            statistic.name(),
            100.0 * failed as f64 / b as f64
        )));
    }
    values.sort_by(f64::total_cmp);
    let (first, last) = (values[0], values[values.len() - 1]);
    if first == last {
        log::warn!("{}: bootstrap distribution is degenerate", statistic.name());
        return Ok(BcaInterval {
            estimate,
            low: first,
            high: first,
            bias_correction: 0.0,
            acceleration: 0.0,
            degenerate: true,
            failed_replicates: failed,
        });
    }

    let nv = values.len() as f64;
    let below = values.partition_point(|&v| v < estimate) as f64;
    let z0 = normal_quantile((below / nv).clamp(0.5 / nv, 1.0 - 0.5 / nv));

    let jack: Vec<f64> = (0..m)
        .filter_map(|k| statistic.evaluate(&pairs.without(k)).ok())
        .collect();
    let acceleration = if jack.len() >= 2 {
        let jm = mean(&jack);
        let s2: f64 = jack.iter().map(|t| (jm - t).powi(2)).sum();
        let s3: f64 = jack.iter().map(|t| (jm - t).powi(3)).sum();
        if s2 > 0.0 {
            s3 / (6.0 * s2.powf(1.5))
        } else {
            0.0
        }
    } else {
        0.0
    };

    let adjust = |tail: f64| {
        let z = normal_quantile(tail);
        normal_cdf(z0 + (z0 + z) / (1.0 - acceleration * (z0 + z)))
    };
    let alpha = (1.0 - level) / 2.0;
    Ok(BcaInterval {
        estimate,
        low: sorted_quantile(&values, adjust(alpha)),
        high: sorted_quantile(&values, adjust(1.0 - alpha)),
        bias_correction: z0,
        acceleration,
        degenerate: false,
        failed_replicates: failed,
    })
}
