//! Simulation harness: parametric calibration and power runs on the pooled
//! effect, the permutation scheme on paired individual-level data, and a
//! synthetic multi-study generator.

use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{study_rng, Design, StudyDataset, SubjectRecord};
use crate::equivalence::tost_p;
use crate::error::{Result, SurrError};
use crate::meta::{pool_effects, MetaInput, MetaModel, PoolOptions};
use crate::pipeline::{marker_p_values, EpsilonPolicy};

/// Per-study sample size: one value for every study, or one per study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSizes {
    Common(usize),
    PerStudy(Vec<usize>),
}

impl SampleSizes {
    fn get(&self, m: usize) -> usize {
        match self {
            SampleSizes::Common(n) => *n,
            SampleSizes::PerStudy(v) => v[m],
        }
    }

    pub fn label(&self) -> String {
        match self {
            SampleSizes::Common(n) => n.to_string(),
            SampleSizes::PerStudy(v) => v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuRegime {
    /// `mu = +eps` or `-eps` with equal probability.
    Lfc,
    /// `mu ~ U(-eps, eps)`.
    UniformValid,
    Fixed(f64),
}

impl MuRegime {
    pub fn label(&self) -> String {
        match self {
            MuRegime::Lfc => "lfc".into(),
            MuRegime::UniformValid => "uniform_valid".into(),
            MuRegime::Fixed(mu) => format!("fixed({mu})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of simulated markers.
    pub j: usize,
    /// Number of studies.
    pub m: usize,
    pub n: SampleSizes,
    pub epsilon: f64,
    pub alpha: f64,
    pub u_tau2_max: f64,
    pub u_nu_max: f64,
    pub mu_regime: MuRegime,
    #[serde(default)]
    pub model: MetaModel,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SurrError::InvalidArgument(msg));
        if self.j == 0 {
            return bad("j must be at least 1".into());
        }
        if self.m < 2 {
            return bad(format!("at least 2 studies are needed, got {}", self.m));
        }
        match &self.n {
            SampleSizes::Common(0) => return bad("sample size must be positive".into()),
            SampleSizes::PerStudy(v) if v.len() != self.m || v.contains(&0) => {
                return bad(format!("expected {} positive sample sizes, got {:?}", self.m, v));
            }
            _ => {}
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.u_tau2_max >= 0.0 && self.u_tau2_max.is_finite() && self.u_nu_max >= 0.0 && self.u_nu_max.is_finite()) {
            return bad("variance bounds must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerDraw {
    pub mu: f64,
    pub tau2: f64,
    pub nu: f64,
    pub deltas: Vec<f64>,
    pub variances: Vec<f64>,
}

/// RNG for marker `j`: the seed selects the key, the marker index the stream.
pub fn marker_rng(seed: u64, j: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j);
    rng
}

fn uniform(rng: &mut impl Rng, hi: f64) -> f64 {
    if hi > 0.0 {
        rng.random_range(0.0..hi)
    } else {
        0.0
    }
}

/// Draws one marker's true mean, heterogeneity and per-study estimates.
/// Reported variances are the true within-study variances.
pub fn draw_marker(cfg: &SimConfig, rng: &mut impl Rng) -> MarkerDraw {
    let eps = cfg.epsilon;
    let mu = match cfg.mu_regime {
        MuRegime::Lfc => {
            if rng.random_bool(0.5) {
                eps
            } else {
                -eps
            }
        }
        MuRegime::UniformValid => rng.random_range(-eps..eps),
        MuRegime::Fixed(mu) => mu,
    };
    let tau2 = uniform(rng, cfg.u_tau2_max);
    let nu = uniform(rng, cfg.u_nu_max);
    let mut deltas = Vec::with_capacity(cfg.m);
    let mut variances = Vec::with_capacity(cfg.m);
    for m in 0..cfg.m {
        let sigma2 = nu / cfg.n.get(m) as f64;
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let delta = mu + tau2.sqrt() * z1;
        deltas.push(delta + sigma2.sqrt() * z2);
        variances.push(sigma2);
    }
    MarkerDraw {
        mu,
        tau2,
        nu,
        deltas,
        variances,
    }
}

/// TOST p-value of every simulated marker, in marker order, plus the number
/// of markers that could not be pooled (those get p = 1).
pub fn simulate_p_values(cfg: &SimConfig) -> Result<(Vec<f64>, usize)> {
    cfg.validate()?;
    let pool = PoolOptions {
        model: cfg.model,
        ..PoolOptions::default()
    };
    let out: Vec<Option<f64>> = (0..cfg.j)
        .into_par_iter()
        .map(|j| {
            let draw = draw_marker(cfg, &mut marker_rng(cfg.seed, j as u64));
            let input = MetaInput::from_estimates(draw.deltas, draw.variances).ok()?;
            let pooled = pool_effects(&input, &pool).ok()?;
            tost_p(pooled.mu_hat, pooled.se_pooled, pooled.df, cfg.epsilon).ok().map(|t| t.p_tost)
        })
        .collect();
    let failures = out.iter().filter(|p| p.is_none()).count();
    if failures > 0 {
        log::warn!("{failures} of {} simulated markers could not be pooled", cfg.j);
    }
    Ok((out.into_iter().map(|p| p.unwrap_or(1.0)).collect(), failures))
}

/// One row of a simulation summary: rejection rate at one nominal level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub scenario: String,
    pub m: usize,
    pub n: String,
    pub epsilon: f64,
    pub u_tau2_max: f64,
    pub u_nu_max: f64,
    pub mu_regime: String,
    pub model: String,
    pub alpha: f64,
    pub rate: f64,
    pub mc_se: f64,
    pub j: usize,
    pub failures: usize,
}

pub fn mc_se(rate: f64, j: usize) -> f64 {
    (rate * (1.0 - rate) / j as f64).sqrt()
}

fn summarize(cfg: &SimConfig, scenario: &str, p: &[f64], failures: usize, alphas: &[f64]) -> Vec<SimRow> {
    alphas
        .iter()
        .map(|&alpha| {
            let rate = p.iter().filter(|&&v| v < alpha).count() as f64 / p.len() as f64;
            SimRow {
                scenario: scenario.to_string(),
                m: cfg.m,
                n: cfg.n.label(),
                epsilon: cfg.epsilon,
                u_tau2_max: cfg.u_tau2_max,
                u_nu_max: cfg.u_nu_max,
                mu_regime: cfg.mu_regime.label(),
                model: cfg.model.label().to_string(),
                alpha,
                rate,
                mc_se: mc_se(rate, p.len()),
                j: p.len(),
                failures,
            }
        })
        .collect()
}

/// Empirical false positive rate at each nominal level.
pub fn run_calibration(cfg: &SimConfig, alpha_grid: &[f64]) -> Result<Vec<SimRow>> {
    if let Some(a) = alpha_grid.iter().find(|a| !(0.0..1.0).contains(*a)) {
        return Err(SurrError::InvalidArgument(format!("alpha must lie in [0, 1), got {a}")));
    }
    let (p, failures) = simulate_p_values(cfg)?;
    Ok(summarize(cfg, "calibration", &p, failures, alpha_grid))
}

/// Empirical power at `cfg.alpha`.
pub fn run_power(cfg: &SimConfig) -> Result<SimRow> {
    let (p, failures) = simulate_p_values(cfg)?;
    Ok(summarize(cfg, "power", &p, failures, &[cfg.alpha]).remove(0))
}

pub fn write_sim_rows<W: Write>(writer: W, rows: &[SimRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn permute_with(data: &StudyDataset, rng: &mut impl Rng) -> Result<StudyDataset> {
    if data.design != Design::Paired {
        return Err(SurrError::InvalidArgument(format!(
            "study `{}`: permutation is defined for paired designs only",
            data.study_id
        )));
    }
    let n = data.n_subjects();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let recs = data.records();
    let y = perm
        .iter()
        .flat_map(|&p| [recs[2 * p].y, recs[2 * p + 1].y])
        .collect();
    Ok(data.with_y(y))
}

/// Permutes the (pre, post) endpoint pairs across subjects, leaving markers in place.
pub fn permute_within_study(data: &StudyDataset, seed: u64) -> Result<StudyDataset> {
    permute_with(data, &mut study_rng(seed, &data.study_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub n_reps: usize,
    /// Subjects drawn per study without replacement; all when `None`.
    pub n_per_study: Option<usize>,
    /// Studies drawn without replacement; all when `None`.
    pub n_studies: Option<usize>,
    pub alpha: f64,
    pub epsilon: EpsilonPolicy,
    pub pool: PoolOptions,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    /// Fraction of markers with raw TOST p below alpha, per replicate.
    pub fpr: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub max: f64,
    pub alpha: f64,
}

fn permutation_replicate(data: &[StudyDataset], cfg: &PermutationConfig, b: usize) -> Result<(f64, f64)> {
    let mut rng = marker_rng(cfg.seed, b as u64);
    let studies: Vec<&StudyDataset> = match cfg.n_studies {
        Some(k) => {
            let mut idx = index::sample(&mut rng, data.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| &data[i]).collect()
        }
        None => data.iter().collect(),
    };
    let mut sample = Vec::with_capacity(studies.len());
    for d in studies {
        let sub = match cfg.n_per_study {
            Some(n) => {
                let mut idx = index::sample(&mut rng, d.n_subjects(), n).into_vec();
                idx.sort_unstable();
                d.select_subjects(&idx)
            }
            None => d.clone(),
        };
        sample.push(permute_with(&sub, &mut rng)?);
    }
    let eps = cfg.epsilon.resolve(&sample)?;
    let p = marker_p_values(&sample, eps, &cfg.pool)?;
    Ok((p.iter().filter(|&&v| v < cfg.alpha).count() as f64 / p.len() as f64, eps))
}

/// Empirical false positive rate of screening after breaking the endpoint to
/// marker link by permutation, over `n_reps` subsampled replicates.
pub fn run_permutation_fpr(data: &[StudyDataset], cfg: &PermutationConfig) -> Result<PermutationSummary> {
    if cfg.n_reps == 0 {
        return Err(SurrError::InvalidArgument("n_reps must be at least 1".into()));
    }
    let k = cfg.n_studies.unwrap_or(data.len());
    if k < 2 || k > data.len() {
        return Err(SurrError::InvalidArgument(format!(
            "cannot draw {k} studies from {} (at least 2 are needed)",
            data.len()
        )));
    }
    if let Some(n) = cfg.n_per_study {
        if let Some(d) = data.iter().find(|d| d.n_subjects() < n || n < 2) {
            return Err(SurrError::InvalidArgument(format!(
                "cannot draw {n} subjects from study `{}` with {} subjects",
                d.study_id,
                d.n_subjects()
            )));
        }
    }
    let reps = (0..cfg.n_reps)
        .into_par_iter()
        .map(|b| permutation_replicate(data, cfg, b))
        .collect::<Result<Vec<_>>>()?;
    let (fpr, epsilon): (Vec<f64>, Vec<f64>) = reps.into_iter().unzip();
    let n = fpr.len() as f64;
    let mean = fpr.iter().sum::<f64>() / n;
    let sd = if fpr.len() > 1 {
        (fpr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let max = fpr.iter().copied().fold(0.0, f64::max);
    Ok(PermutationSummary {
        fpr,
        epsilon,
        mean,
        sd,
        max,
        alpha: cfg.alpha,
    })
}

/// Generator for multi-study data with a controllable link between endpoint
/// and marker effects.
///
/// Study `m` has endpoint effect `theta_m`, evenly spaced over `y_shift`.
/// Marker `j` has effect `eta_j + xi_jm`, with `eta_j ~ U(marker_shift)`
/// drawn once per marker and `xi_jm ~ N(0, jitter^2)`; the first `planted`
/// markers instead have effect `theta_m` in every study, so their effect on
/// the marker equals the effect on the endpoint.
///
/// Paired: `y0 ~ N(0, 1)`, `y1 = y0 + theta_m + z`, `s0 ~ N(0, 1)` and
/// `s1 = s0 + effect + c z + sqrt(1 - c^2) e`.
/// Two-arm: the first half of the subjects are controls;
/// `y = b + theta_m t` and `s = effect t + c b + sqrt(1 - c^2) e` with
/// `b, e ~ N(0, 1)` and `t` the arm. `c` is `coupling`, or
/// `planted_coupling` for planted markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub design: Design,
    pub studies: usize,
    pub subjects: usize,
    pub markers: usize,
    pub planted: usize,
    pub y_shift: (f64, f64),
    pub marker_shift: (f64, f64),
    pub jitter: f64,
    pub coupling: f64,
    pub planted_coupling: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn marker_names(&self) -> Vec<String> {
        (0..self.markers)
            .map(|j| {
                if j < self.planted {
                    format!("planted{:02}", j + 1)
                } else {
                    format!("marker{:04}", j + 1 - self.planted)
                }
            })
            .collect()
    }

    pub fn study_shift(&self, m: usize) -> f64 {
        let (lo, hi) = self.y_shift;
        if self.studies > 1 {
            lo + (hi - lo) * m as f64 / (self.studies - 1) as f64
        } else {
            lo
        }
    }
}

pub fn synthetic_studies(cfg: &SyntheticConfig) -> Result<Vec<StudyDataset>> {
    if cfg.studies == 0 || cfg.subjects < 2 || cfg.markers == 0 || cfg.planted > cfg.markers {
        return Err(SurrError::InvalidArgument("synthetic sizes must be positive".into()));
    }
    let couplings_ok = [cfg.coupling, cfg.planted_coupling].iter().all(|c| (-1.0..=1.0).contains(c));
    if !couplings_ok || !(cfg.jitter >= 0.0) || !(cfg.marker_shift.0 < cfg.marker_shift.1) {
        return Err(SurrError::InvalidArgument("invalid synthetic generator parameters".into()));
    }
    let mut shared = marker_rng(cfg.seed, u64::MAX);
    let eta: Vec<f64> = (0..cfg.markers)
        .map(|_| shared.random_range(cfg.marker_shift.0..cfg.marker_shift.1))
        .collect();
    let jitter = Normal::new(0.0, cfg.jitter).expect("non-negative sd");
    let names = cfg.marker_names();
    let coupling = |j: usize| if j < cfg.planted { cfg.planted_coupling } else { cfg.coupling };
    (0..cfg.studies)
        .map(|m| {
            let id = format!("study{:02}", m + 1);
            let mut rng = study_rng(cfg.seed, &id);
            let theta = cfg.study_shift(m);
            let shift: Vec<f64> = (0..cfg.markers)
                .map(|j| {
                    let xi = jitter.sample(&mut rng);
                    if j < cfg.planted {
                        theta
                    } else {
                        eta[j] + xi
                    }
                })
                .collect();
            let mut records = Vec::with_capacity(2 * cfg.subjects);
            for i in 0..cfg.subjects {
                let subject_id = format!("{id}_s{:03}", i + 1);
                let base: f64 = StandardNormal.sample(&mut rng);
                match cfg.design {
                    Design::Paired => {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let mut s0 = Vec::with_capacity(cfg.markers);
                        let mut s1 = Vec::with_capacity(cfg.markers);
                        for (j, &sh) in shift.iter().enumerate() {
                            let c = coupling(j);
                            let a: f64 = StandardNormal.sample(&mut rng);
                            let e: f64 = StandardNormal.sample(&mut rng);
                            s0.push(Some(a));
                            s1.push(Some(a + sh + c * z + (1.0 - c * c).sqrt() * e));
                        }
                        records.push(SubjectRecord { subject_id: subject_id.clone(), arm: 0, y: Some(base), s: s0 });
                        records.push(SubjectRecord { subject_id, arm: 1, y: Some(base + theta + z), s: s1 });
                    }
                    Design::TwoArm => {
                        let arm = u8::from(i >= cfg.subjects / 2);
                        let t = arm as f64;
                        let s = shift
                            .iter()
                            .enumerate()
                            .map(|(j, &sh)| {
                                let c = coupling(j);
                                let e: f64 = StandardNormal.sample(&mut rng);
                                Some(sh * t + c * base + (1.0 - c * c).sqrt() * e)
                            })
                            .collect();
                        records.push(SubjectRecord { subject_id, arm, y: Some(base + theta * t), s });
                    }
                }
            }
            StudyDataset::new(id, cfg.design, names.clone(), records)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig {
            j: 2000,
            m: 5,
            n: SampleSizes::Common(50),
            epsilon: 0.1,
            alpha: 0.05,
            u_tau2_max: 0.01,
            u_nu_max: 10.0,
            mu_regime: MuRegime::Lfc,
            model: MetaModel::RE_HKSJ,
            seed: 7,
        }
    }

    #[test]
    fn lfc_sign_balance() {
        let c = cfg();
        let draws = 100_000;
        let plus = (0..draws)
            .filter(|&j| draw_marker(&c, &mut marker_rng(3, j)).mu > 0.0)
            .count() as f64
            / draws as f64;
        assert!((plus - 0.5).abs() < 3.0 * mc_se(0.5, draws as usize));
    }

    #[test]
    fn degenerate_noise_recovers_mu() {
        let c = SimConfig { u_tau2_max: 0.0, u_nu_max: 1e-12, ..cfg() };
        let d = draw_marker(&c, &mut marker_rng(1, 0));
        assert!(d.deltas.iter().all(|x| (x - d.mu).abs() < 1e-5));
    }

    #[test]
    fn fixed_zero_unbiased() {
        let c = SimConfig { mu_regime: MuRegime::Fixed(0.0), u_tau2_max: 0.01, u_nu_max: 1.0, ..cfg() };
        let mean = (0..5000)
            .flat_map(|j| draw_marker(&c, &mut marker_rng(2, j)).deltas)
            .sum::<f64>()
            / 25000.0;
        assert!(mean.abs() < 0.004, "{mean}");
    }

    #[test]
    fn alpha_zero_never_rejects() {
        let rows = run_calibration(&cfg(), &[0.0, 0.05]).unwrap();
        assert_eq!(rows[0].rate, 0.0);
        assert!(rows[1].rate <= 0.05 + 2.0 * mc_se(0.05, 2000));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let c = SimConfig { j: 500, ..cfg() };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate_p_values(&c).unwrap());
        let b = four.install(|| simulate_p_values(&c).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn boundary_power_is_small() {
        let c = SimConfig { mu_regime: MuRegime::Fixed(0.1), ..cfg() };
        let r = run_power(&c).unwrap();
        assert!(r.rate <= 0.05 + 2.0 * mc_se(0.05, c.j));
    }

    #[test]
    fn zero_noise_markers_are_counted_as_failures() {
        let c = SimConfig { j: 20, u_nu_max: 0.0, ..cfg() };
        let (p, failures) = simulate_p_values(&c).unwrap();
        assert_eq!(failures, 20);
        assert!(p.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn config_validation_and_json() {
        assert!(SimConfig { m: 1, ..cfg() }.validate().is_err());
        assert!(SimConfig { epsilon: 0.0, ..cfg() }.validate().is_err());
        assert!(SimConfig { n: SampleSizes::PerStudy(vec![10, 20]), ..cfg() }.validate().is_err());
        let text = r#"{"j": 10, "m": 3, "n": [10, 20, 30], "epsilon": 0.1, "alpha": 0.05,
            "u_tau2_max": 0.01, "u_nu_max": 10, "mu_regime": {"fixed": 0.05}, "model": "fe", "seed": 1}"#;
        let c: SimConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.model, MetaModel::FE);
        assert_eq!(c.mu_regime, MuRegime::Fixed(0.05));
        c.validate().unwrap();
    }

    fn synth() -> SyntheticConfig {
        SyntheticConfig {
            design: Design::Paired,
            studies: 3,
            subjects: 8,
            markers: 4,
            planted: 1,
            y_shift: (0.0, 1.0),
            marker_shift: (-0.5, 0.5),
            jitter: 0.1,
            coupling: 0.5,
            planted_coupling: 0.9,
            seed: 11,
        }
    }

    #[test]
    fn permutation_preserves_pairs_and_markers() {
        let data = synthetic_studies(&synth()).unwrap();
        let p = permute_within_study(&data[0], 5).unwrap();
        let pairs = |d: &StudyDataset| {
            let mut v: Vec<(u64, u64)> = d.subjects().map(|r| (r[0].y.unwrap().to_bits(), r[1].y.unwrap().to_bits())).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(pairs(&data[0]), pairs(&p));
        for (a, b) in data[0].records().iter().zip(p.records()) {
            assert_eq!(a.s, b.s);
        }
        let single = data[0].select_subjects(&[3]);
        assert_eq!(permute_within_study(&single, 9).unwrap(), single);
    }

    #[test]
    fn permutation_rejects_two_arm() {
        let d = StudyDataset::new(
            "T",
            Design::TwoArm,
            vec![],
            vec![
                SubjectRecord { subject_id: "a".into(), arm: 0, y: Some(1.0), s: vec![] },
                SubjectRecord { subject_id: "b".into(), arm: 1, y: Some(2.0), s: vec![] },
            ],
        )
        .unwrap();
        assert!(permute_within_study(&d, 1).is_err());
    }

    #[test]
    fn permutation_fpr_is_deterministic_and_checks_feasibility() {
        let data = synthetic_studies(&synth()).unwrap();
        let pc = PermutationConfig {
            n_reps: 1,
            n_per_study: Some(6),
            n_studies: None,
            alpha: 0.05,
            epsilon: EpsilonPolicy::Fixed(0.2),
            pool: PoolOptions::default(),
            seed: 3,
        };
        let a = run_permutation_fpr(&data, &pc).unwrap();
        let b = run_permutation_fpr(&data, &pc).unwrap();
        assert_eq!(a, b);
        assert!(run_permutation_fpr(&data, &PermutationConfig { n_per_study: Some(9), ..pc }).is_err());
        assert!(run_permutation_fpr(&data, &PermutationConfig { n_studies: Some(1), ..pc }).is_err());
    }

    #[test]
    fn planted_marker_tracks_endpoint_shift() {
        for design in [Design::Paired, Design::TwoArm] {
            let data = synthetic_studies(&SyntheticConfig { subjects: 400, design, ..synth() }).unwrap();
            for d in &data {
                assert_eq!(d.design, design);
                let e = crate::rank::estimate_study_marker(d, Some(0)).unwrap();
                assert!(e.delta.abs() < 0.06, "{}", e.delta);
            }
        }
    }
}
