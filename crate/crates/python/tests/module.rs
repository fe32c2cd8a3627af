use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn with_module<F: FnOnce(&Bound<'_, PyModule>)>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "pysurrmeta").unwrap();
        pysurrmeta::pysurrmeta(&m).unwrap();
        f(&m);
    });
}

#[test]
fn exports_the_public_surface() {
    with_module(|m| {
        for name in [
            "Study", "ScreenResult", "EvaluationResult", "DataError", "NumericalError", "read_studies",
            "write_studies", "synthetic", "screen", "evaluate", "pool", "tost_p", "bh_adjust",
            "simulate_calibration", "simulate_power",
        ] {
            assert!(m.hasattr(name).unwrap(), "{name} missing");
        }
    });
}

#[test]
fn keyword_calls_from_python() {
    with_module(|m| {
        let py = m.py();
        let kwargs = PyDict::new(py);
        kwargs.set_item("meta", "re-conv").unwrap();
        let pooled = m
            .getattr("pool")
            .unwrap()
            .call((vec![0.1, 0.3, 0.2], vec![0.01, 0.02, 0.01]), Some(&kwargs))
            .unwrap();
        let model: String = pooled.get_item("model").unwrap().extract().unwrap();
        assert_eq!(model, "re-conv");

        let adj: Vec<f64> = m.getattr("bh_adjust").unwrap().call1((vec![0.5, 0.01],)).unwrap().extract().unwrap();
        assert_eq!(adj, vec![0.5, 0.02]);

        let err = m.getattr("bh_adjust").unwrap().call1((vec![1.5],)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}

#[test]
fn studies_round_trip_through_python_objects() {
    with_module(|m| {
        let kwargs = PyDict::new(m.py());
        kwargs.set_item("studies", 3).unwrap();
        kwargs.set_item("design", "paired").unwrap();
        let studies = m.getattr("synthetic").unwrap().call((), Some(&kwargs)).unwrap();
        assert_eq!(studies.len().unwrap(), 3);
        let first = studies.get_item(0).unwrap();
        let design: String = first.getattr("design").unwrap().extract().unwrap();
        assert_eq!(design, "paired");
        let parts = first.call_method1("split", (0.5,)).unwrap();
        let n: usize = parts.get_item(0).unwrap().getattr("n_subjects").unwrap().extract().unwrap();
        assert_eq!(n, 20);
    });
}
