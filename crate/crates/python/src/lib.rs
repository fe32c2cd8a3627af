use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use surrmeta::data::{parse_study_csv, split_within_study, write_study_csv_file};
use surrmeta::report::{write_evaluate_outputs, write_screen_outputs};
use surrmeta::sim::{synthetic_studies, SyntheticConfig};
use surrmeta::{
    bh_adjust as core_bh_adjust, evaluate_signature, pool_effects, run_calibration, run_power, screen as core_screen,
    tost_p as core_tost_p, ColumnMapping, Design, EpsilonPolicy, ErrorClass, EvaluateOptions, EvaluationReport,
    MetaInput, MetaModel, PoolOptions, PooledResult, ScreenOptions, ScreenReport, SignatureSpec, SimConfig,
    SimRow, StudyDataset, SurrError,
};

create_exception!(pysurrmeta, DataError, PyException, "Input data could not be used.");
create_exception!(pysurrmeta, NumericalError, PyException, "A numerical step failed.");

fn to_py(e: SurrError) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Usage => PyValueError::new_err(msg),
        ErrorClass::Data => DataError::new_err(msg),
        ErrorClass::Numerical => NumericalError::new_err(msg),
    }
}

fn model(name: &str) -> PyResult<MetaModel> {
    name.parse().map_err(to_py)
}

fn policy(epsilon: Option<f64>, epsilon_power: (f64, f64)) -> EpsilonPolicy {
    match epsilon {
        Some(e) => EpsilonPolicy::Fixed(e),
        None => EpsilonPolicy::Power {
            alpha: epsilon_power.0,
            power: epsilon_power.1,
        },
    }
}

fn pool_options(meta: &str, alpha: f64) -> PyResult<PoolOptions> {
    Ok(PoolOptions {
        model: model(meta)?,
        ci_level: 1.0 - 2.0 * alpha,
        ..PoolOptions::default()
    })
}

/// One study in long format.
#[pyclass(name = "Study", module = "pysurrmeta", frozen, from_py_object)]
#[derive(Clone)]
struct PyStudy {
    inner: StudyDataset,
}

#[pymethods]
impl PyStudy {
    #[getter]
    fn study_id(&self) -> &str {
        &self.inner.study_id
    }

    #[getter]
    fn design(&self) -> &'static str {
        match self.inner.design {
            Design::Paired => "paired",
            Design::TwoArm => "two_arm",
        }
    }

    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.n_subjects()
    }

    #[getter]
    fn marker_names(&self) -> Vec<String> {
        self.inner.marker_names.clone()
    }

    /// Splits subjects into screening and evaluation parts.
    #[pyo3(signature = (fraction, seed = 1))]
    fn split(&self, fraction: f64, seed: u64) -> PyResult<(PyStudy, PyStudy)> {
        let (a, b) = split_within_study(&self.inner, fraction, seed).map_err(to_py)?;
        Ok((PyStudy { inner: a }, PyStudy { inner: b }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Study(id={:?}, design={}, subjects={}, markers={})",
            self.inner.study_id,
            self.design(),
            self.inner.n_subjects(),
            self.inner.n_markers()
        )
    }
}

fn unwrap_studies(studies: &[PyStudy]) -> Vec<StudyDataset> {
    studies.iter().map(|s| s.inner.clone()).collect()
}

fn wrap_studies(studies: Vec<StudyDataset>) -> Vec<PyStudy> {
    studies.into_iter().map(|inner| PyStudy { inner }).collect()
}

#[pyfunction]
#[pyo3(signature = (path, study = "study", subject = "subject", arm = "arm", y = "y", markers = None))]
fn read_studies(
    path: PathBuf,
    study: &str,
    subject: &str,
    arm: &str,
    y: &str,
    markers: Option<Vec<String>>,
) -> PyResult<Vec<PyStudy>> {
    let mapping = ColumnMapping {
        study: study.into(),
        subject: subject.into(),
        arm: arm.into(),
        y: y.into(),
        markers,
        design: None,
    };
    Ok(wrap_studies(parse_study_csv(path, &mapping).map_err(to_py)?))
}

#[pyfunction]
fn write_studies(path: PathBuf, studies: Vec<PyStudy>) -> PyResult<()> {
    write_study_csv_file(path, &unwrap_studies(&studies)).map_err(to_py)
}

/// Synthetic multi-study data; the first `planted` markers follow the endpoint.
#[pyfunction]
#[pyo3(signature = (
    design = "two_arm", studies = 6, subjects = 40, markers = 20, planted = 1,
    y_shift = (-1.5, 1.5), marker_shift = (-1.0, 1.0), jitter = 0.2,
    coupling = 0.5, planted_coupling = 0.9, seed = 1
))]
#[allow(clippy::too_many_arguments)]
fn synthetic(
    design: &str,
    studies: usize,
    subjects: usize,
    markers: usize,
    planted: usize,
    y_shift: (f64, f64),
    marker_shift: (f64, f64),
    jitter: f64,
    coupling: f64,
    planted_coupling: f64,
    seed: u64,
) -> PyResult<Vec<PyStudy>> {
    let design = match design {
        "paired" => Design::Paired,
        "two_arm" => Design::TwoArm,
        other => return Err(PyValueError::new_err(format!("unknown design `{other}`"))),
    };
    let cfg = SyntheticConfig {
        design,
        studies,
        subjects,
        markers,
        planted,
        y_shift,
        marker_shift,
        jitter,
        coupling,
        planted_coupling,
        seed,
    };
    Ok(wrap_studies(synthetic_studies(&cfg).map_err(to_py)?))
}

fn pooled_dict<'py>(py: Python<'py>, p: &PooledResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("marker", &p.marker_id)?;
    d.set_item("mu_hat", p.mu_hat)?;
    d.set_item("tau2_hat", p.tau2_hat)?;
    d.set_item("se", p.se_pooled)?;
    d.set_item("df", p.df)?;
    d.set_item("ci", (p.ci_low, p.ci_high))?;
    d.set_item("pi", p.pi_low.zip(p.pi_high))?;
    d.set_item("weights", p.weights.clone())?;
    d.set_item("model", p.model.label())?;
    Ok(d)
}

/// Result of screening.
#[pyclass(name = "ScreenResult", module = "pysurrmeta", frozen)]
struct PyScreenResult {
    inner: ScreenReport,
}

#[pymethods]
impl PyScreenResult {
    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    /// Names of the screened markers.
    #[getter]
    fn selected(&self) -> Vec<String> {
        self.inner.gamma_names().into_iter().map(String::from).collect()
    }

    /// Signature weights as (marker, lambda) pairs.
    #[getter]
    fn weights(&self) -> Vec<(String, f64)> {
        self.inner.signature.members.iter().map(|m| (m.marker.clone(), m.lambda)).collect()
    }

    fn signature_json(&self) -> PyResult<String> {
        self.inner.signature.to_json().map_err(to_py)
    }

    /// Per-marker rows: marker, p_tost, p_adjusted, significant, pooled dict or None.
    fn markers<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .markers
            .iter()
            .map(|m| {
                let d = PyDict::new(py);
                let e = &m.equivalence;
                d.set_item("marker", &e.marker_id)?;
                d.set_item("p_lower", e.p_lower)?;
                d.set_item("p_upper", e.p_upper)?;
                d.set_item("p_tost", e.p_tost)?;
                d.set_item("p_adjusted", e.p_adjusted)?;
                d.set_item("significant", e.significant)?;
                d.set_item("pooled", m.pooled.as_ref().map(|p| pooled_dict(py, p)).transpose()?)?;
                d.set_item("failure", m.failure.clone())?;
                Ok(d)
            })
            .collect()
    }

    #[pyo3(signature = (dir, top_k = 10, svg = false))]
    fn write(&self, dir: PathBuf, top_k: usize, svg: bool) -> PyResult<Vec<PathBuf>> {
        write_screen_outputs(&dir, &self.inner, top_k, svg).map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(signature = (studies, epsilon = None, epsilon_power = (0.05, 0.8), alpha = 0.05, meta = "re-hksj"))]
fn screen(
    py: Python<'_>,
    studies: Vec<PyStudy>,
    epsilon: Option<f64>,
    epsilon_power: (f64, f64),
    alpha: f64,
    meta: &str,
) -> PyResult<PyScreenResult> {
    let data = unwrap_studies(&studies);
    let opts = ScreenOptions {
        epsilon: policy(epsilon, epsilon_power),
        alpha,
        pool: pool_options(meta, alpha)?,
    };
    let inner = py.detach(|| core_screen(&data, &opts)).map_err(to_py)?;
    Ok(PyScreenResult { inner })
}

/// Result of evaluating a signature on held-out studies.
#[pyclass(name = "EvaluationResult", module = "pysurrmeta", frozen)]
struct PyEvaluationResult {
    inner: EvaluationReport,
}

#[pymethods]
impl PyEvaluationResult {
    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    #[getter]
    fn p_tost(&self) -> f64 {
        self.inner.tost.p_tost
    }

    #[getter]
    fn ccc(&self) -> Option<f64> {
        self.inner.ccc()
    }

    #[getter]
    fn skipped(&self) -> Vec<(String, String)> {
        self.inner.skipped.clone()
    }

    fn pooled<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        pooled_dict(py, &self.inner.pooled)
    }

    /// (metric, value, ci_low, ci_high) rows.
    fn metrics(&self) -> Vec<(String, Option<f64>, Option<f64>, Option<f64>)> {
        self.inner
            .metrics
            .iter()
            .map(|m| (m.metric.clone(), m.value, m.ci_low, m.ci_high))
            .collect()
    }

    #[pyo3(signature = (dir, svg = false))]
    fn write(&self, dir: PathBuf, svg: bool) -> PyResult<Vec<PathBuf>> {
        write_evaluate_outputs(&dir, &self.inner, svg).map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(signature = (
    holdout, signature_json, epsilon = None, epsilon_power = (0.05, 0.8),
    alpha = 0.05, meta = "re-hksj", bootstrap = 2000, seed = 1, min_n = 5
))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    holdout: Vec<PyStudy>,
    signature_json: &str,
    epsilon: Option<f64>,
    epsilon_power: (f64, f64),
    alpha: f64,
    meta: &str,
    bootstrap: usize,
    seed: u64,
    min_n: usize,
) -> PyResult<PyEvaluationResult> {
    let spec = SignatureSpec::from_json(signature_json).map_err(to_py)?;
    let data = unwrap_studies(&holdout);
    let opts = EvaluateOptions {
        pool: pool_options(meta, alpha)?,
        alpha,
        bootstrap_replicates: bootstrap,
        seed,
        min_n,
    };
    let eps = policy(epsilon, epsilon_power);
    let inner = py
        .detach(|| eps.resolve(&data).and_then(|e| evaluate_signature(&data, &spec, e, &opts)))
        .map_err(to_py)?;
    Ok(PyEvaluationResult { inner })
}

/// Pools per-study effects.
#[pyfunction]
#[pyo3(signature = (deltas, variances, meta = "re-hksj", ci_level = 0.95))]
fn pool<'py>(
    py: Python<'py>,
    deltas: Vec<f64>,
    variances: Vec<f64>,
    meta: &str,
    ci_level: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let model = model(meta)?;
    let m = deltas.len();
    let input = MetaInput::new(
        "marker",
        deltas,
        variances,
        (1..=m).map(|i| format!("study{i}")).collect(),
        vec![0; m],
    )
    .map_err(to_py)?;
    let opts = PoolOptions {
        model,
        ci_level,
        ..PoolOptions::default()
    };
    pooled_dict(py, &pool_effects(&input, &opts).map_err(to_py)?)
}

/// (p_lower, p_upper, p_tost) for the two one-sided tests.
#[pyfunction]
#[pyo3(signature = (mu_hat, se, df, epsilon))]
fn tost_p(mu_hat: f64, se: f64, df: f64, epsilon: f64) -> PyResult<(f64, f64, f64)> {
    let t = core_tost_p(mu_hat, se, df, epsilon).map_err(to_py)?;
    Ok((t.p_lower, t.p_upper, t.p_tost))
}

#[pyfunction]
fn bh_adjust(p: Vec<f64>) -> PyResult<Vec<f64>> {
    core_bh_adjust(&p).map_err(to_py)
}

fn sim_config(json: &str) -> PyResult<SimConfig> {
    let cfg: SimConfig =
        serde_json::from_str(json).map_err(|e| PyValueError::new_err(format!("simulation config: {e}")))?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn rows_to_json(rows: &[SimRow]) -> PyResult<String> {
    serde_json::to_string(rows).map_err(|e| to_py(e.into()))
}

/// Calibration run from a JSON simulation config; returns the summary rows as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, alphas = vec![0.01, 0.025, 0.05, 0.1]))]
fn simulate_calibration(py: Python<'_>, config_json: &str, alphas: Vec<f64>) -> PyResult<String> {
    let cfg = sim_config(config_json)?;
    let rows = py.detach(|| run_calibration(&cfg, &alphas)).map_err(to_py)?;
    rows_to_json(&rows)
}

/// Power run from a JSON simulation config; returns the summary row as JSON.
#[pyfunction]
fn simulate_power(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = sim_config(config_json)?;
    let row = py.detach(|| run_power(&cfg)).map_err(to_py)?;
    rows_to_json(&[row])
}

#[pymodule]
pub fn pysurrmeta(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PyStudy>()?;
    m.add_class::<PyScreenResult>()?;
    m.add_class::<PyEvaluationResult>()?;
    m.add_function(wrap_pyfunction!(read_studies, m)?)?;
    m.add_function(wrap_pyfunction!(write_studies, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(screen, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pool, m)?)?;
    m.add_function(wrap_pyfunction!(tost_p, m)?)?;
    m.add_function(wrap_pyfunction!(bh_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_calibration, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_power, m)?)?;
    Ok(())
}
