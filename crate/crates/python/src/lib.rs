//! Python bindings for the `phalanx` crate.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use phalanx::apf::{run_apf, ApfConfig, ApfResult};
use phalanx::data::{load_dataset, make_folds, BlockedDataset, Schema};
use phalanx::document::ModelDocument;
use phalanx::ensemble::{build_em, predict_em, rank_diagnostics, EnsembleModel};
use phalanx::learner::{cv_probabilities, fit_logistic, FittedModel};
use phalanx::metrics::{block_average, hit_curve, per_block, MetricId, MetricSpec};
use phalanx::synthetic::{planted_pairs, PlantedConfig};
use phalanx::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn metric_spec(name: &str, alpha: Option<f64>) -> PyResult<MetricSpec> {
    let id: MetricId = name.parse().map_err(py_err)?;
    let spec = MetricSpec::new(id);
    match alpha {
        Some(a) => spec.with_alpha(a).map_err(py_err),
        None => Ok(spec),
    }
}

/// Cases grouped into blocks, with an n x p feature matrix and optional labels.
#[pyclass(name = "Dataset", module = "pyphalanx", frozen)]
struct PyDataset {
    inner: BlockedDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (blocks, features, labels=None, cases=None))]
    fn new(
        blocks: Vec<String>,
        features: Vec<Vec<f64>>,
        labels: Option<Vec<u8>>,
        cases: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let n_vars = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != n_vars) {
            return Err(PyValueError::new_err("feature rows differ in length"));
        }
        let flat = features.into_iter().flatten().collect();
        let inner = BlockedDataset::new(blocks, cases, labels, flat, n_vars).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    /// Reads a delimited file; `schema` is a preset name or column spec.
    #[staticmethod]
    #[pyo3(signature = (path, schema="kdd-train"))]
    fn load(path: &str, schema: &str) -> PyResult<Self> {
        let schema = Schema::from_arg(schema).map_err(py_err)?;
        let inner = load_dataset(path, &schema).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (seed, blocks=40, block_size=100, noise=6))]
    fn planted(seed: u64, blocks: usize, block_size: usize, noise: usize) -> PyResult<Self> {
        let config = PlantedConfig {
            n_blocks: blocks,
            block_size,
            n_noise: noise,
            ..PlantedConfig::default()
        };
        let inner = planted_pairs(&config, seed);
        Ok(PyDataset { inner })
    }

    #[getter]
    fn n_cases(&self) -> usize {
        self.inner.n_cases()
    }

    #[getter]
    fn n_vars(&self) -> usize {
        self.inner.n_vars()
    }

    #[getter]
    fn n_blocks(&self) -> usize {
        self.inner.n_blocks()
    }

    #[getter]
    fn block_keys(&self) -> Vec<String> {
        self.inner.block_keys().to_vec()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<u8>> {
        self.inner.labels().map(<[u8]>::to_vec)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_cases={}, n_vars={}, n_blocks={})",
            self.inner.n_cases(),
            self.inner.n_vars(),
            self.inner.n_blocks()
        )
    }
}

#[pyclass(name = "FittedModel", module = "pyphalanx", frozen)]
struct PyFittedModel {
    inner: FittedModel,
}

#[pymethods]
impl PyFittedModel {
    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.clone()
    }

    #[getter]
    fn variables(&self) -> Vec<usize> {
        self.inner.variables.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn predict(&self, ds: &PyDataset) -> PyResult<Vec<f64>> {
        phalanx::predict(&self.inner, &ds.inner)
            .map(|p| p.into_values())
            .map_err(py_err)
    }
}

/// Outcome of the three phalanx-formation phases.
#[pyclass(name = "ApfResult", module = "pyphalanx", frozen)]
struct PyApfResult {
    inner: ApfResult,
}

#[pymethods]
impl PyApfResult {
    #[getter]
    fn survivors(&self) -> Vec<usize> {
        self.inner.survivors_phase1.clone()
    }

    #[getter]
    fn candidates(&self) -> Vec<Vec<usize>> {
        self.inner.candidates_phase2.iter().map(|p| p.variables.clone()).collect()
    }

    #[getter]
    fn phalanxes(&self) -> Vec<Vec<usize>> {
        self.inner.final_phase3.iter().map(|p| p.variables.clone()).collect()
    }

    #[getter]
    fn cv_scores(&self) -> Vec<f64> {
        self.inner.final_phase3.iter().map(|p| p.cv_score).collect()
    }

    #[getter]
    fn degenerate(&self) -> bool {
        self.inner.degenerate
    }

    /// Decision trace as JSON lines.
    fn trace_json(&self) -> String {
        self.inner
            .trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace serializes") + "\n")
            .collect()
    }
}

#[pyclass(name = "Ensemble", module = "pyphalanx", frozen)]
struct PyEnsemble {
    inner: EnsembleModel,
}

#[pymethods]
impl PyEnsemble {
    fn predict(&self, ds: &PyDataset) -> PyResult<Vec<f64>> {
        predict_em(&self.inner, &ds.inner)
            .map(|p| p.into_values())
            .map_err(py_err)
    }

    #[getter]
    fn phalanxes(&self) -> Vec<Vec<usize>> {
        self.inner.phalanxes.iter().map(|p| p.variables.clone()).collect()
    }

    fn to_json(&self) -> String {
        ModelDocument::em(&self.inner).to_json()
    }
}

/// Predicts from a model document (EM or EMM) given as JSON text.
#[pyfunction]
fn predict_document(json: &str, ds: &PyDataset) -> PyResult<Vec<f64>> {
    let doc = ModelDocument::from_json(json).map_err(py_err)?;
    doc.predict(&ds.inner).map(|p| p.into_values()).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (ds, variables, ridge=1e-6))]
fn fit(ds: &PyDataset, variables: Vec<usize>, ridge: f64) -> PyResult<PyFittedModel> {
    let inner = fit_logistic(&ds.inner, &variables, ridge).map_err(py_err)?;
    Ok(PyFittedModel { inner })
}

/// Out-of-fold probabilities with block-level folds.
#[pyfunction]
#[pyo3(signature = (ds, variables, folds=10, seed=0, ridge=1e-6))]
fn cv_predict(ds: &PyDataset, variables: Vec<usize>, folds: usize, seed: u64, ridge: f64) -> PyResult<Vec<f64>> {
    let folds = make_folds(&ds.inner, folds, seed).map_err(py_err)?;
    cv_probabilities(&ds.inner, &variables, &folds, ridge)
        .map(|p| p.into_values())
        .map_err(py_err)
}

#[pyfunction]
fn evaluate(ds: &PyDataset, scores: Vec<f64>, metric: &str) -> PyResult<f64> {
    block_average(&ds.inner, &scores, &metric_spec(metric, None)?).map_err(py_err)
}

#[pyfunction]
fn evaluate_blocks(ds: &PyDataset, scores: Vec<f64>, metric: &str) -> PyResult<Vec<f64>> {
    per_block(&ds.inner, &scores, &metric_spec(metric, None)?).map_err(py_err)
}

/// Cumulative positives among the top t cases, for t = 1..=n.
#[pyfunction]
fn hits(labels: Vec<u8>, scores: Vec<f64>) -> PyResult<Vec<usize>> {
    hit_curve(&labels, &scores).map(|h| h.hits).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (ds, metric="APR", folds=10, n_perm=2000, seed=0, ridge=1e-6, alpha=None))]
fn apf(
    py: Python<'_>,
    ds: &PyDataset,
    metric: &str,
    folds: usize,
    n_perm: usize,
    seed: u64,
    ridge: f64,
    alpha: Option<f64>,
) -> PyResult<PyApfResult> {
    let spec = metric_spec(metric, alpha)?;
    let config = ApfConfig {
        folds,
        n_perm,
        seed,
        ridge,
    };
    let inner = py
        .detach(|| run_apf(&ds.inner, &spec, &config))
        .map_err(py_err)?;
    Ok(PyApfResult { inner })
}

/// Fits one full-data model per final phalanx.
#[pyfunction]
#[pyo3(signature = (ds, result, ridge=1e-6))]
fn ensemble(ds: &PyDataset, result: &PyApfResult, ridge: f64) -> PyResult<PyEnsemble> {
    let inner = build_em(&ds.inner, &result.inner, ridge).map_err(py_err)?;
    Ok(PyEnsemble { inner })
}

/// Win/tie/loss counts of `a` against `b` per quartile bin, plus a total row.
#[pyfunction]
fn diagnostics(ds: &PyDataset, a: Vec<f64>, b: Vec<f64>) -> PyResult<Vec<(f64, f64, usize, usize, usize, usize)>> {
    let d = rank_diagnostics(&ds.inner, &a, &b).map_err(py_err)?;
    Ok(d.bins
        .iter()
        .chain(std::iter::once(&d.totals()))
        .map(|b| (b.lo, b.hi, b.positives, b.a_wins, b.ties, b.b_wins))
        .collect())
}

#[pymodule]
fn pyphalanx(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFittedModel>()?;
    m.add_class::<PyApfResult>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(cv_predict, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(hits, m)?)?;
    m.add_function(wrap_pyfunction!(apf, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(predict_document, m)?)?;
    m.add_function(wrap_pyfunction!(diagnostics, m)?)?;
    Ok(())
}
