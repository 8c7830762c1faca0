//! Python bindings: a thin wrapper over the core crate exposing synthetic
//! data generation, pipeline fitting, prediction and evaluation.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cuqr::core_types::{BaseModel, Dataset, RunConfig};
use cuqr::evaluation::{evaluate, generate, SyntheticSpec};
use cuqr::pipeline::{fit_pipeline, FittedPipeline, ModelArtifact};
use cuqr::Method;

fn to_py_err(e: cuqr::Error) -> PyErr {
    PyValueError::new_err(format!("{}: {}", e.code(), e))
}

/// A tabular dataset with named feature columns and a response column.
#[pyclass(name = "Dataset")]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(
        features: Vec<Vec<f64>>,
        response: Vec<f64>,
        column_names: Vec<String>,
        response_name: String,
    ) -> PyResult<Self> {
        Dataset::new(features, response, column_names, response_name)
            .map(|inner| PyDataset { inner })
            .map_err(to_py_err)
    }

    #[staticmethod]
    fn from_csv(path: &str, response: &str) -> PyResult<Self> {
        cuqr::core_types::load_csv(std::path::Path::new(path), response)
            .map(|inner| PyDataset { inner })
            .map_err(to_py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn column_names(&self) -> Vec<String> {
        self.inner.column_names().to_vec()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.n() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn response(&self) -> Vec<f64> {
        self.inner.response().to_vec()
    }
}

/// Generate the heteroscedastic synthetic benchmark dataset.
#[pyfunction]
#[pyo3(signature = (n, d=3, noise_base=0.5, noise_slope=2.0, seed=0))]
fn synth(n: usize, d: usize, noise_base: f64, noise_slope: f64, seed: u64) -> PyResult<PyDataset> {
    let spec = SyntheticSpec { n, d, noise_base, noise_slope, seed };
    generate(&spec).map(|inner| PyDataset { inner }).map_err(to_py_err)
}

/// A fitted, calibrated predictor plus its frozen preprocessing state.
#[pyclass(name = "Predictor")]
struct PyPredictor {
    fitted: FittedPipeline,
}

#[pymethods]
impl PyPredictor {
    /// Predict an interval for one feature row given in original units.
    /// Returns a dict with center/lo/hi in original response units plus
    /// subgroup metadata and the standardized interval length.
    fn predict<'py>(&self, py: Python<'py>, row: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let artifact = &self.fitted.artifact;
        let z = artifact.scaler.transform_row(&row).map_err(to_py_err)?;
        let r = artifact.predictor.predict(&z).map_err(to_py_err)?;
        let out = PyDict::new_bound(py);
        let center = (r.interval.lo + r.interval.hi) / 2.0;
        out.set_item("y_hat", artifact.scaler.inverse_response(center))?;
        out.set_item("lo", artifact.scaler.inverse_response(r.interval.lo))?;
        out.set_item("hi", artifact.scaler.inverse_response(r.interval.hi))?;
        out.set_item("subgroup", r.subgroup)?;
        out.set_item("n_g", r.guarantee_note.n_g)?;
        out.set_item("lambda", r.guarantee_note.lambda)?;
        out.set_item("length_std", r.length())?;
        Ok(out)
    }

    /// Coverage/length report on the held-out test split, as a dict.
    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let artifact = &self.fitted.artifact;
        let report = evaluate(
            &artifact.predictor,
            &self.fitted.std_ds,
            &artifact.split.test_idx,
            &artifact.config,
        )
        .map_err(to_py_err)?;
        let out = PyDict::new_bound(py);
        out.set_item("method", artifact.method.as_str())?;
        out.set_item("c_av", report.c_av)?;
        out.set_item("l_av", report.l_av)?;
        out.set_item("c_wc", report.c_wc)?;
        let groups: Vec<(usize, usize, f64, f64)> = report
            .per_subgroup
            .iter()
            .map(|m| (m.g, m.n_test_g, m.coverage_g, m.mean_length_g))
            .collect();
        out.set_item("per_subgroup", groups)?;
        Ok(out)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.fitted.artifact.save(std::path::Path::new(path)).map_err(to_py_err)
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.fitted.artifact.method.as_str()
    }
}

/// Fit, partition and calibrate a predictor on a dataset.
#[pyfunction]
#[pyo3(signature = (dataset, method="cuqr", alpha=0.1, groups=10, grid=20,
    pac_confidence=0.9, seed=0, n_min=30, base_model="gbt"))]
#[allow(clippy::too_many_arguments)]
fn fit(
    dataset: &PyDataset,
    method: &str,
    alpha: f64,
    groups: usize,
    grid: usize,
    pac_confidence: f64,
    seed: u64,
    n_min: usize,
    base_model: &str,
) -> PyResult<PyPredictor> {
    let method = Method::parse(method).map_err(to_py_err)?;
    let base_model = match base_model {
        "gbt" => BaseModel::Gbt,
        "knn" => BaseModel::Knn,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown base model `{other}` (expected gbt|knn)"
            )))
        }
    };
    let cfg = RunConfig {
        alpha,
        groups,
        grid_size: grid,
        pac_confidence,
        seed,
        n_min,
        base_model,
        density_floor: 1e-6,
    };
    cfg.validate().map_err(to_py_err)?;
    let fitted = fit_pipeline(&dataset.inner, &cfg, method).map_err(to_py_err)?;
    Ok(PyPredictor { fitted })
}

/// Load a saved model JSON; the original data CSV must still be readable
/// at the recorded path for `evaluate` to work.
#[pyfunction]
fn load(path: &str) -> PyResult<PyPredictor> {
    let artifact = ModelArtifact::load(std::path::Path::new(path)).map_err(to_py_err)?;
    let data_path = artifact
        .data_path
        .clone()
        .ok_or_else(|| PyValueError::new_err("model records no data path"))?;
    let ds = cuqr::core_types::load_csv(std::path::Path::new(&data_path), &artifact.response_name)
        .map_err(to_py_err)?;
    let features: Vec<Vec<f64>> = (0..ds.n())
        .map(|i| artifact.scaler.transform_row(ds.row(i)))
        .collect::<Result<_, _>>()
        .map_err(to_py_err)?;
    let response: Vec<f64> =
        ds.response().iter().map(|&y| artifact.scaler.transform_response(y)).collect();
    let std_ds = Dataset::new(
        features,
        response,
        artifact.column_names.clone(),
        artifact.response_name.clone(),
    )
    .map_err(to_py_err)?;
    Ok(PyPredictor { fitted: FittedPipeline { artifact, std_ds } })
}

#[pymodule]
fn cuqr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPredictor>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    Ok(())
}
