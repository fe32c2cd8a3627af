//! Inverse-variance pooling of per-study surrogacy estimates.
//!
//! The between-study variance is estimated by REML. The REML estimating
//! equation is solved by fixed-point iteration; when that fails to settle,
//! the restricted log-likelihood is maximised directly by golden-section
//! search on `[0, tau2_max]`.

use serde::{Deserialize, Serialize};

use crate::dist::quantile;
use crate::error::{Result, SurrError};

const REML_TOL: f64 = 1e-10;
const REML_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetaMethod {
    #[serde(rename = "FE")]
    Fixed,
    #[serde(rename = "RE")]
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarianceMethod {
    #[serde(rename = "conventional")]
    Conventional,
    #[serde(rename = "HKSJ")]
    Hksj,
}

/// A pooling model: effect model plus variance estimator for the pooled mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MetaModel {
    pub method: MetaMethod,
    pub variance: VarianceMethod,
}

impl MetaModel {
    pub const RE_HKSJ: MetaModel = MetaModel {
        method: MetaMethod::Random,
        variance: VarianceMethod::Hksj,
    };
    pub const RE_CONV: MetaModel = MetaModel {
        method: MetaMethod::Random,
        variance: VarianceMethod::Conventional,
    };
    pub const FE: MetaModel = MetaModel {
        method: MetaMethod::Fixed,
        variance: VarianceMethod::Conventional,
    };

    /// Short label as used on the command line: `re-hksj`, `re-conv` or `fe`.
    pub fn label(&self) -> &'static str {
        match (self.method, self.variance) {
            (MetaMethod::Random, VarianceMethod::Hksj) => "re-hksj",
            (MetaMethod::Random, VarianceMethod::Conventional) => "re-conv",
            (MetaMethod::Fixed, VarianceMethod::Conventional) => "fe",
            (MetaMethod::Fixed, VarianceMethod::Hksj) => "fe-hksj",
        }
    }
}

impl std::str::FromStr for MetaModel {
    type Err = SurrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "re-hksj" => Ok(MetaModel::RE_HKSJ),
            "re-conv" => Ok(MetaModel::RE_CONV),
            "fe" => Ok(MetaModel::FE),
            other => Err(SurrError::InvalidArgument(format!(
                "unknown meta-analysis model `{other}` (expected re-hksj, re-conv or fe)"
            ))),
        }
    }
}

impl TryFrom<String> for MetaModel {
    type Error = SurrError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetaModel> for String {
    fn from(m: MetaModel) -> String {
        m.label().to_string()
    }
}

impl Default for MetaModel {
    fn default() -> Self {
        MetaModel::RE_HKSJ
    }
}

/// Per-study estimates of one marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaInput {
    pub marker_id: String,
    pub deltas: Vec<f64>,
    pub variances: Vec<f64>,
    pub study_ids: Vec<String>,
    pub n_per_study: Vec<usize>,
}

impl MetaInput {
    pub fn new(
        marker_id: impl Into<String>,
        deltas: Vec<f64>,
        variances: Vec<f64>,
        study_ids: Vec<String>,
        n_per_study: Vec<usize>,
    ) -> Result<Self> {
        let input = MetaInput {
            marker_id: marker_id.into(),
            deltas,
            variances,
            study_ids,
            n_per_study,
        };
        input.validate()?;
        Ok(input)
    }

    /// Input with generated study labels, for simulation and tests.
    pub fn from_estimates(deltas: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let m = deltas.len();
        MetaInput::new(
            "marker",
            deltas,
            variances,
            (1..=m).map(|i| format!("study{i}")).collect(),
            vec![0; m],
        )
    }

    pub fn m(&self) -> usize {
        self.deltas.len()
    }

    fn validate(&self) -> Result<()> {
        let m = self.deltas.len();
        if self.variances.len() != m || self.study_ids.len() != m || self.n_per_study.len() != m {
            return Err(SurrError::InvalidArgument(format!(
                "marker `{}`: per-study vectors differ in length",
                self.marker_id
            )));
        }
        if m < 2 {
            return Err(SurrError::InsufficientData(format!(
                "marker `{}`: meta-analysis needs at least 2 studies, got {m}",
                self.marker_id
            )));
        }
        if self.deltas.iter().chain(&self.variances).any(|v| !v.is_finite()) {
            return Err(SurrError::InvalidArgument(format!(
                "marker `{}`: non-finite estimate or variance",
                self.marker_id
            )));
        }
        if self.variances.iter().any(|&v| v < 0.0) {
            return Err(SurrError::InvalidArgument(format!(
                "marker `{}`: negative within-study variance",
                self.marker_id
            )));
        }
        if self.variances.iter().all(|&v| v == 0.0) {
            return Err(SurrError::Singular(format!(
                "marker `{}`: every within-study variance is zero",
                self.marker_id
            )));
        }
        Ok(())
    }
}

/// Weighted mean, sum of weights and weights at a given `tau2`.
fn weighted_fit(tau2: f64, deltas: &[f64], variances: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
    let mut w = Vec::with_capacity(deltas.len());
    for &v in variances {
        let total = v + tau2;
        if total <= 0.0 {
            return Err(SurrError::Singular(format!(
                "total variance is zero (within-study variance {v}, tau^2 {tau2})"
            )));
        }
        w.push(1.0 / total);
    }
    let sw: f64 = w.iter().sum();
    let mu = w.iter().zip(deltas).map(|(w, d)| w * d).sum::<f64>() / sw;
    Ok((mu, sw, w))
}

/// Restricted log-likelihood in `tau2`, up to an additive constant.
pub fn restricted_log_likelihood(tau2: f64, input: &MetaInput) -> Result<f64> {
    if !(tau2 >= 0.0) {
        return Err(SurrError::InvalidArgument(format!("tau^2 must be >= 0, got {tau2}")));
    }
    reml_objective(tau2, &input.deltas, &input.variances)
}

fn reml_objective(tau2: f64, deltas: &[f64], variances: &[f64]) -> Result<f64> {
    let (mu, sw, w) = weighted_fit(tau2, deltas, variances)?;
    let log_det: f64 = variances.iter().map(|v| (v + tau2).ln()).sum();
    let rss: f64 = w.iter().zip(deltas).map(|(w, d)| w * (d - mu).powi(2)).sum();
    Ok(-0.5 * (log_det + sw.ln() + rss))
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Default upper bound of the REML search: ten times the sample variance of the estimates.
pub fn default_tau2_max(input: &MetaInput) -> f64 {
    10.0 * sample_variance(&input.deltas)
}

/// REML estimate of the between-study variance, always `>= 0`.
pub fn estimate_tau2_reml(input: &MetaInput, tau2_max: Option<f64>) -> Result<f64> {
    input.validate()?;
    let (d, v) = (&input.deltas, &input.variances);
    if v.contains(&0.0) {
        // the likelihood is unbounded as tau^2 -> 0, where the fit is singular
        return Err(SurrError::Singular(format!(
            "marker `{}`: a within-study variance is zero, REML is unbounded at tau^2 = 0",
            input.marker_id
        )));
    }
    let upper = tau2_max.unwrap_or_else(|| default_tau2_max(input));
    if !(upper >= 0.0) {
        return Err(SurrError::InvalidArgument(format!("tau2_max must be >= 0, got {upper}")));
    }
    let mean_v = v.iter().sum::<f64>() / v.len() as f64;
    let mut tau2 = (sample_variance(d) - mean_v).max(0.0);
    for _ in 0..REML_MAX_ITER {
        let (mu, sw, w) = weighted_fit(tau2, d, v)?;
        let sw2: f64 = w.iter().map(|x| x * x).sum();
        let num: f64 = w
            .iter()
            .zip(d.iter().zip(v))
            .map(|(w, (d, v))| w * w * ((d - mu).powi(2) - v))
            .sum();
        let next = (num / sw2 + 1.0 / sw).max(0.0);
        if !next.is_finite() {
            break;
        }
        if (next - tau2).abs() < REML_TOL {
            return Ok(next);
        }
        tau2 = next;
    }
    log::debug!(
        "marker `{}`: REML fixed point did not settle, maximising the likelihood directly",
        input.marker_id
    );
    golden_section_max(|t| reml_objective(t, d, v), 0.0, upper.max(tau2))
}

fn golden_section_max(f: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let tol = 1e-13 * hi.max(1e-12);
    while (b - a) > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid)?);
    for x in [lo, hi] {
        let fx = f(x)?;
        if fx > best.1 {
            best = (x, fx);
        }
    }
    Ok(best.0.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolOptions {
    pub model: MetaModel,
    /// Level of the stored confidence interval.
    pub ci_level: f64,
    /// Level of the stored prediction interval (random effects only).
    pub pi_level: f64,
    /// Replace the HKSJ scale `q` by `max(q, 1)`. Off by default.
    pub hksj_floor: bool,
    pub tau2_max: Option<f64>,
}

impl Default for PoolOptions {
    fn default() -> Self {
        PoolOptions {
            model: MetaModel::RE_HKSJ,
            ci_level: 0.95,
            pi_level: 0.95,
            hksj_floor: false,
            tau2_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub marker_id: String,
    pub mu_hat: f64,
    pub tau2_hat: f64,
    pub se_pooled: f64,
    /// HKSJ scale factor; 1 for the conventional variance.
    pub q_scale: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
    pub pi_low: Option<f64>,
    pub pi_high: Option<f64>,
    pub pi_level: f64,
    pub model: MetaModel,
    /// Reference degrees of freedom; infinite means standard normal.
    pub df: f64,
    pub m: usize,
    /// Normalised inverse-variance weights, summing to 1.
    pub weights: Vec<f64>,
}

impl PooledResult {
    /// `true` when the pooled standard error is zero and intervals collapse.
    pub fn degenerate_se(&self) -> bool {
        self.se_pooled == 0.0
    }

    pub fn confidence_interval(&self, level: f64) -> (f64, f64) {
        assert!(level > 0.0 && level < 1.0, "level must lie in (0, 1)");
        if self.degenerate_se() {
            return (self.mu_hat, self.mu_hat);
        }
        let half = quantile(1.0 - (1.0 - level) / 2.0, self.df) * self.se_pooled;
        (self.mu_hat - half, self.mu_hat + half)
    }

    /// `mu ± t_{M-1} * sqrt(se^2 + tau^2)`; undefined for fixed-effect results.
    pub fn prediction_interval(&self, level: f64) -> Result<(f64, f64)> {
        if self.model.method == MetaMethod::Fixed {
            return Err(SurrError::InvalidArgument(
                "prediction interval needs a random-effects result".into(),
            ));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(SurrError::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
        }
        let scale = (self.se_pooled.powi(2) + self.tau2_hat).sqrt();
        if scale == 0.0 {
            return Ok((self.mu_hat, self.mu_hat));
        }
        let half = quantile(1.0 - (1.0 - level) / 2.0, (self.m - 1) as f64) * scale;
        Ok((self.mu_hat - half, self.mu_hat + half))
    }
}

pub fn pool_effects(input: &MetaInput, opts: &PoolOptions) -> Result<PooledResult> {
    input.validate()?;
    let model = opts.model;
    if model.method == MetaMethod::Fixed && model.variance == VarianceMethod::Hksj {
        return Err(SurrError::InvalidArgument(
            "the HKSJ variance is only defined for random-effects pooling".into(),
        ));
    }
    let tau2 = match model.method {
        MetaMethod::Fixed => 0.0,
        MetaMethod::Random => estimate_tau2_reml(input, opts.tau2_max)?,
    };
    let (mu, sw, w) = weighted_fit(tau2, &input.deltas, &input.variances)?;
    if !(sw > 0.0) || !sw.is_finite() {
        return Err(SurrError::Singular(format!(
            "marker `{}`: sum of weights is {sw}",
            input.marker_id
        )));
    }
    let m = input.m();
    let (q, df) = match model.variance {
        VarianceMethod::Conventional => (1.0, f64::INFINITY),
        VarianceMethod::Hksj => {
            let q = w
                .iter()
                .zip(&input.deltas)
                .map(|(w, d)| w * (d - mu).powi(2))
                .sum::<f64>()
                / (m - 1) as f64;
            (if opts.hksj_floor { q.max(1.0) } else { q }, (m - 1) as f64)
        }
    };
    let se = (q / sw).sqrt();
    let mut out = PooledResult {
        marker_id: input.marker_id.clone(),
        mu_hat: mu,
        tau2_hat: tau2,
        se_pooled: se,
        q_scale: q,
        ci_low: mu,
        ci_high: mu,
        ci_level: opts.ci_level,
        pi_low: None,
        pi_high: None,
        pi_level: opts.pi_level,
        model,
        df,
        m,
        weights: w.iter().map(|x| x / sw).collect(),
    };
    if out.degenerate_se() {
        log::warn!("marker `{}`: pooled standard error is zero", input.marker_id);
    }
    (out.ci_low, out.ci_high) = out.confidence_interval(opts.ci_level);
    if model.method == MetaMethod::Random {
        let (lo, hi) = out.prediction_interval(opts.pi_level)?;
        out.pi_low = Some(lo);
        out.pi_high = Some(hi);
    }
    Ok(out)
}
