//! Composite signature: a weighted sum of within-study standardised markers
//! that passed screening, and its evaluation on held-out data.
//!
//! Each member's weight multiplies a strength component `(eps - |mu|) / eps`
//! by a precision component `sum_m 1 / (sigma2_m + tau2)`, normalised so the
//! largest weight is 1.

use serde::{Deserialize, Serialize};

use crate::data::StudyDataset;
use crate::dist::normal_cdf;
use crate::equivalence::{tost_p, TostP};
use crate::error::{Result, SurrError};
use crate::meta::{pool_effects, MetaInput, PoolOptions, PooledResult};
use crate::metrics::{bca_bootstrap_ci, EffectPairs, Statistic};
use crate::rank::{estimate_study_marker, WithinStudyEstimate};

pub const SIGNATURE_MARKER: &str = "signature";

/// Pooled summary of one screened marker, as needed for its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightInput {
    pub marker_id: String,
    pub mu_hat: f64,
    pub tau2_hat: f64,
    pub variances: Vec<f64>,
}

impl WeightInput {
    pub fn from_pooled(pooled: &PooledResult, input: &MetaInput) -> Self {
        WeightInput {
            marker_id: pooled.marker_id.clone(),
            mu_hat: pooled.mu_hat,
            tau2_hat: pooled.tau2_hat,
            variances: input.variances.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureMember {
    pub marker: String,
    pub lambda: f64,
    pub a_component: f64,
    pub b_component: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub study_id: String,
    pub marker: String,
    pub mean: f64,
    pub sd: f64,
}

/// Serialisable description of a composite signature.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignatureSpec {
    pub members: Vec<SignatureMember>,
    pub epsilon_used: f64,
    /// Per-study scaling parameters estimated on the data the signature was built from.
    pub standardization: Vec<Standardization>,
}

impl SignatureSpec {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_names(&self) -> Vec<String> {
        self.members.iter().map(|m| m.marker.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Strength component: 1 at `mu = 0`, 0 on the equivalence boundary.
pub fn a_component(mu_hat: f64, epsilon: f64) -> f64 {
    (epsilon - mu_hat.abs()) / epsilon
}

/// Precision component: sum over studies of the inverse total variance.
pub fn b_component(variances: &[f64], tau2: f64) -> Result<f64> {
    variances
        .iter()
        .map(|v| {
            let total = v + tau2;
            if total > 0.0 {
                Ok(1.0 / total)
            } else {
                Err(SurrError::Singular("total variance is zero".into()))
            }
        })
        .sum()
}

pub fn signature_weights(members: &[WeightInput], epsilon: f64) -> Result<SignatureSpec> {
    if members.is_empty() {
        return Err(SurrError::InvalidArgument("no markers to compose".into()));
    }
    if !(epsilon > 0.0) {
        return Err(SurrError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut parts = Vec::with_capacity(members.len());
    for m in members {
        if !(m.mu_hat.abs() < epsilon) {
            return Err(SurrError::InvalidArgument(format!(
                "marker `{}` has |mu| = {} outside the equivalence margin {epsilon}",
                m.marker_id,
                m.mu_hat.abs()
            )));
        }
        let b = b_component(&m.variances, m.tau2_hat).map_err(|_| {
            SurrError::Singular(format!("marker `{}`: zero total variance", m.marker_id))
        })?;
        parts.push((a_component(m.mu_hat, epsilon), b));
    }
    let max = parts.iter().map(|(a, b)| a * b).fold(f64::NEG_INFINITY, f64::max);
    Ok(SignatureSpec {
        members: members
            .iter()
            .zip(parts)
            .map(|(m, (a, b))| SignatureMember {
                marker: m.marker_id.clone(),
                lambda: a * b / max,
                a_component: a,
                b_component: b,
            })
            .collect(),
        epsilon_used: epsilon,
        standardization: Vec::new(),
    })
}

/// Centres and scales each listed marker within the study, pooling both arms
/// or time points. Returns the rescaled data and the parameters used.
pub fn standardize_within_study(
    data: &StudyDataset,
    members: &[String],
) -> Result<(StudyDataset, Vec<Standardization>)> {
    let mut values: Vec<Vec<Option<f64>>> = data.records().iter().map(|r| r.s.clone()).collect();
    let mut params = Vec::with_capacity(members.len());
    for name in members {
        let j = data.marker_index(name).ok_or_else(|| {
            SurrError::Integrity(format!("study `{}` lacks marker `{name}`", data.study_id))
        })?;
        let observed: Vec<f64> = data.records().iter().filter_map(|r| r.s[j]).collect();
        let n = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / n;
        let sd = (observed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if observed.len() < 2 || !(sd > 0.0) {
            return Err(SurrError::Degenerate(format!(
                "study `{}`, marker `{name}`: zero standard deviation, cannot standardise",
                data.study_id
            )));
        }
        for row in values.iter_mut() {
            row[j] = row[j].map(|x| (x - mean) / sd);
        }
        params.push(Standardization {
            study_id: data.study_id.clone(),
            marker: name.clone(),
            mean,
            sd,
        });
    }
    Ok((data.with_markers(data.marker_names.clone(), values), params))
}

/// Appends the `signature` marker, `sum_j lambda_j * S_j`, to standardised data.
/// A record missing any member gets a missing composite.
pub fn compose_signature(data: &StudyDataset, spec: &SignatureSpec) -> Result<StudyDataset> {
    let idx = spec
        .members
        .iter()
        .map(|m| {
            data.marker_index(&m.marker).ok_or_else(|| {
                SurrError::Integrity(format!(
                    "signature member `{}` is absent from study `{}`",
                    m.marker, data.study_id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let composite = data
        .records()
        .iter()
        .map(|r| {
            idx.iter()
                .zip(&spec.members)
                .map(|(&j, m)| r.s[j].map(|v| m.lambda * v))
                .sum::<Option<f64>>()
        })
        .collect();
    Ok(data.push_marker(SIGNATURE_MARKER, composite))
}

/// Standardises the members within the study and appends the composite.
pub fn apply_signature(data: &StudyDataset, spec: &SignatureSpec) -> Result<(StudyDataset, Vec<Standardization>)> {
    let (standardized, params) = standardize_within_study(data, &spec.member_names())?;
    Ok((compose_signature(&standardized, spec)?, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOptions {
    pub pool: PoolOptions,
    pub alpha: f64,
    pub bootstrap_replicates: usize,
    pub seed: u64,
    /// Held-out studies with fewer usable subjects are skipped.
    pub min_n: usize,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            pool: PoolOptions {
                ci_level: 0.90,
                ..PoolOptions::default()
            },
            alpha: 0.05,
            bootstrap_replicates: 2000,
            seed: 1,
            min_n: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub epsilon: f64,
    pub alpha: f64,
    pub studies: Vec<WithinStudyEstimate>,
    /// Within-study TOST p-values under a normal reference.
    pub study_p: Vec<f64>,
    pub pooled: PooledResult,
    pub tost: TostP,
    pub metrics: Vec<MetricSummary>,
    /// (study id, reason) for held-out studies left out of the evaluation.
    pub skipped: Vec<(String, String)>,
    /// Standardisation parameters re-estimated on the held-out data.
    pub standardization: Vec<Standardization>,
}

impl EvaluationReport {
    pub fn ccc(&self) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == "ccc").and_then(|m| m.value)
    }
}

fn within_study_p(est: &WithinStudyEstimate, epsilon: f64) -> f64 {
    let se = est.se_delta();
    if se == 0.0 {
        return if est.delta.abs() < epsilon { 0.0 } else if est.delta.abs() == epsilon { 0.5 } else { 1.0 };
    }
    let lower = 1.0 - normal_cdf((est.delta + epsilon) / se);
    let upper = normal_cdf((est.delta - epsilon) / se);
    lower.max(upper)
}

/// Evaluates the composite on held-out studies: within-study estimates,
/// pooling, TOST at `epsilon`, prediction interval and agreement metrics.
pub fn evaluate_signature(
    holdout: &[StudyDataset],
    spec: &SignatureSpec,
    epsilon: f64,
    opts: &EvaluateOptions,
) -> Result<EvaluationReport> {
    if spec.is_empty() {
        return Err(SurrError::InvalidArgument("signature has no members".into()));
    }
    let mut studies = Vec::new();
    let mut skipped = Vec::new();
    let mut standardization = Vec::new();
    for study in holdout {
        let n = study.complete_case_n();
        if n < opts.min_n {
            log::warn!("skipping held-out study `{}`: n = {n} < {}", study.study_id, opts.min_n);
            skipped.push((study.study_id.clone(), format!("n = {n} below minimum {}", opts.min_n)));
            continue;
        }
        let (with_sig, params) = apply_signature(study, spec)?;
        let j = with_sig.n_markers() - 1;
        match estimate_study_marker(&with_sig, Some(j)) {
            Ok(est) => {
                studies.push(est);
                standardization.extend(params);
            }
            Err(SurrError::InsufficientData(msg)) => {
                log::warn!("skipping held-out study `{}`: {msg}", study.study_id);
                skipped.push((study.study_id.clone(), msg));
            }
            Err(e) => return Err(e),
        }
    }
    let input = MetaInput::new(
        SIGNATURE_MARKER,
        studies.iter().map(|e| e.delta).collect(),
        studies.iter().map(|e| e.var_delta).collect(),
        studies.iter().map(|e| e.study_id.clone()).collect(),
        studies.iter().map(|e| e.n_effective).collect(),
    )?;
    let pooled = pool_effects(&input, &opts.pool)?;
    let tost = tost_p(pooled.mu_hat, pooled.se_pooled, pooled.df, epsilon)?;
    let study_p = studies.iter().map(|e| within_study_p(e, epsilon)).collect();

    let pairs = EffectPairs::new(
        studies.iter().map(|e| e.u_y).collect(),
        studies.iter().map(|e| e.u_s).collect(),
        studies.iter().map(|e| e.n_effective).collect(),
    )?;
    let metrics = [Statistic::Ccc, Statistic::Icc21, Statistic::R2Trial]
        .iter()
        .map(|&stat| summarize_metric(stat, &pairs, opts))
        .collect();

    Ok(EvaluationReport {
        epsilon,
        alpha: opts.alpha,
        studies,
        study_p,
        pooled,
        tost,
        metrics,
        skipped,
        standardization,
    })
}

fn summarize_metric(stat: Statistic, pairs: &EffectPairs, opts: &EvaluateOptions) -> MetricSummary {
    let mut out = MetricSummary {
        metric: stat.name().to_string(),
        value: None,
        ci_low: None,
        ci_high: None,
        note: String::new(),
    };
    match stat.evaluate(pairs) {
        Ok(v) => out.value = Some(v),
        Err(e) => {
            out.note = e.to_string();
            return out;
        }
    }
    match bca_bootstrap_ci(stat, pairs, opts.bootstrap_replicates, 0.95, opts.seed) {
        Ok(ci) => {
            out.ci_low = Some(ci.low);
            out.ci_high = Some(ci.high);
            if ci.degenerate {
                out.note = "degenerate bootstrap distribution".into();
            }
        }
        Err(e) => out.note = format!("no bootstrap interval: {e}"),
    }
    out
}
