//! Screening stage: per-study estimates for every marker, pooling, TOST with
//! BH adjustment, and construction of the composite signature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::StudyDataset;
use crate::equivalence::{bh_adjust, screen_markers, tost_p, EquivalenceResult};
use crate::error::{Result, SurrError};
use crate::meta::{pool_effects, MetaInput, PoolOptions, PooledResult};
use crate::rank::{estimate_study_marker, select_epsilon_power, WithinStudyEstimate};
use crate::signature::{signature_weights, standardize_within_study, SignatureSpec, WeightInput};

/// How the equivalence bound is chosen for a stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonPolicy {
    Fixed(f64),
    /// Bound detectable with the given power at one-sided level `alpha`,
    /// computed from the primary endpoint of the stage's own data.
    Power { alpha: f64, power: f64 },
}

impl EpsilonPolicy {
    pub fn resolve(&self, data: &[StudyDataset]) -> Result<f64> {
        match *self {
            EpsilonPolicy::Fixed(eps) if eps > 0.0 && eps.is_finite() => Ok(eps),
            EpsilonPolicy::Fixed(eps) => Err(SurrError::InvalidArgument(format!(
                "equivalence bound must be positive, got {eps}"
            ))),
            EpsilonPolicy::Power { alpha, power } => {
                let est = data
                    .iter()
                    .map(|d| estimate_study_marker(d, None))
                    .collect::<Result<Vec<_>>>()?;
                select_epsilon_power(&est, alpha, power)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenOptions {
    pub epsilon: EpsilonPolicy,
    pub alpha: f64,
    pub pool: PoolOptions,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        ScreenOptions {
            epsilon: EpsilonPolicy::Power { alpha: 0.05, power: 0.8 },
            alpha: 0.05,
            pool: PoolOptions {
                ci_level: 0.90,
                ..PoolOptions::default()
            },
        }
    }
}

/// Result for one marker. `pooled` is `None` when the marker could not be
/// pooled; such markers carry p-values of 1 and a `failure` message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerScreen {
    pub estimates: Vec<WithinStudyEstimate>,
    pub pooled: Option<PooledResult>,
    pub equivalence: EquivalenceResult,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub epsilon: f64,
    pub alpha: f64,
    pub markers: Vec<MarkerScreen>,
    /// Indices into `markers` of the screened set, ordered by marker name.
    pub gamma: Vec<usize>,
    pub signature: SignatureSpec,
}

impl ScreenReport {
    pub fn gamma_names(&self) -> Vec<&str> {
        self.gamma
            .iter()
            .map(|&i| self.markers[i].equivalence.marker_id.as_str())
            .collect()
    }

    /// Marker indices ordered by raw TOST p-value, ties by name.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.markers.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ea, eb) = (&self.markers[a].equivalence, &self.markers[b].equivalence);
            ea.p_tost.total_cmp(&eb.p_tost).then_with(|| ea.marker_id.cmp(&eb.marker_id))
        });
        idx
    }
}

/// Checks that every study carries the same marker columns, in the same order.
pub fn common_markers(data: &[StudyDataset]) -> Result<Vec<String>> {
    let first = data.first().ok_or(SurrError::NoStudies)?;
    for d in &data[1..] {
        if d.marker_names != first.marker_names {
            return Err(SurrError::Integrity(format!(
                "studies `{}` and `{}` carry different marker columns",
                first.study_id, d.study_id
            )));
        }
    }
    Ok(first.marker_names.clone())
}

/// Within-study estimates of marker `j` and the pooling input built from
/// them. Studies without enough complete cases for the marker are left out.
pub fn marker_meta_input(data: &[StudyDataset], j: usize) -> Result<(Vec<WithinStudyEstimate>, MetaInput)> {
    let name = &data[0].marker_names[j];
    let mut est = Vec::with_capacity(data.len());
    for d in data {
        match estimate_study_marker(d, Some(j)) {
            Ok(e) => est.push(e),
            Err(SurrError::InsufficientData(msg)) => log::debug!("{msg}; study left out"),
            Err(e) => return Err(e),
        }
    }
    let input = MetaInput::new(
        name.clone(),
        est.iter().map(|e| e.delta).collect(),
        est.iter().map(|e| e.var_delta).collect(),
        est.iter().map(|e| e.study_id.clone()).collect(),
        est.iter().map(|e| e.n_effective).collect(),
    )?;
    Ok((est, input))
}

struct Pooled {
    estimates: Vec<WithinStudyEstimate>,
    result: std::result::Result<(PooledResult, MetaInput), String>,
}

fn pool_marker(data: &[StudyDataset], j: usize, opts: &PoolOptions) -> Pooled {
    match marker_meta_input(data, j) {
        Ok((estimates, input)) => Pooled {
            result: pool_effects(&input, opts)
                .map(|p| (p, input))
                .map_err(|e| e.to_string()),
            estimates,
        },
        Err(e) => Pooled {
            estimates: Vec::new(),
            result: Err(e.to_string()),
        },
    }
}

/// Raw TOST p-values of every marker, without multiplicity control or
/// signature construction. Unpoolable markers get p = 1.
pub fn marker_p_values(data: &[StudyDataset], epsilon: f64, pool: &PoolOptions) -> Result<Vec<f64>> {
    let names = common_markers(data)?;
    (0..names.len())
        .into_par_iter()
        .map(|j| match pool_marker(data, j, pool).result {
            Ok((p, _)) => tost_p(p.mu_hat, p.se_pooled, p.df, epsilon).map(|t| t.p_tost),
            Err(_) => Ok(1.0),
        })
        .collect()
}

/// Runs screening on the given studies.
pub fn screen(data: &[StudyDataset], opts: &ScreenOptions) -> Result<ScreenReport> {
    if data.len() < 2 {
        return Err(SurrError::InsufficientData(format!(
            "meta-analysis requires at least 2 studies, got {}",
            data.len()
        )));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 0.5) {
        return Err(SurrError::InvalidArgument(format!("alpha must lie in (0, 0.5), got {}", opts.alpha)));
    }
    let names = common_markers(data)?;
    let epsilon = opts.epsilon.resolve(data)?;
    let pooled: Vec<Pooled> = (0..names.len())
        .into_par_iter()
        .map(|j| pool_marker(data, j, &opts.pool))
        .collect();

    let mut raw = Vec::with_capacity(names.len());
    for p in &pooled {
        raw.push(match &p.result {
            Ok((r, _)) => tost_p(r.mu_hat, r.se_pooled, r.df, epsilon)?,
            Err(_) => crate::equivalence::TostP { p_lower: 1.0, p_upper: 1.0, p_tost: 1.0 },
        });
    }
    let adjusted = bh_adjust(&raw.iter().map(|t| t.p_tost).collect::<Vec<_>>())?;

    let mut markers = Vec::with_capacity(names.len());
    let mut inputs = Vec::with_capacity(names.len());
    for (((name, p), t), adj) in names.iter().zip(pooled).zip(raw).zip(adjusted) {
        let (pooled, input, failure) = match p.result {
            Ok((r, i)) => (Some(r), Some(i), None),
            Err(msg) => {
                log::warn!("marker `{name}` not pooled: {msg}");
                (None, None, Some(msg))
            }
        };
        inputs.push(input);
        markers.push(MarkerScreen {
            estimates: p.estimates,
            pooled,
            equivalence: EquivalenceResult {
                marker_id: name.clone(),
                p_lower: t.p_lower,
                p_upper: t.p_upper,
                p_tost: t.p_tost,
                p_adjusted: adj,
                epsilon,
                significant: adj < opts.alpha,
            },
            failure,
        });
    }
    let gamma = screen_markers(&markers.iter().map(|m| m.equivalence.clone()).collect::<Vec<_>>(), opts.alpha);

    let signature = if gamma.is_empty() {
        SignatureSpec {
            epsilon_used: epsilon,
            ..SignatureSpec::default()
        }
    } else {
        let weights: Vec<WeightInput> = gamma
            .iter()
            .map(|&i| {
                let pooled = markers[i].pooled.as_ref().expect("screened markers are pooled");
                WeightInput::from_pooled(pooled, inputs[i].as_ref().expect("screened markers are pooled"))
            })
            .collect();
        let mut spec = signature_weights(&weights, epsilon)?;
        let members = spec.member_names();
        for d in data {
            spec.standardization.extend(standardize_within_study(d, &members)?.1);
        }
        spec
    };

    Ok(ScreenReport {
        epsilon,
        alpha: opts.alpha,
        markers,
        gamma,
        signature,
    })
}
