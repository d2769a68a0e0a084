//! Python bindings: run configurations, the experiment commands, result
//! tables and the standalone metric and loss functions.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use vflhlp::experiment::{self as exp, CellResult, ResultTable, RunConfig, Selection};
use vflhlp::federated::TrainMode;
use vflhlp::Error;

create_exception!(vflhlp_py, VflhlpError, PyException);
create_exception!(vflhlp_py, ConfigError, VflhlpError);
create_exception!(vflhlp_py, DataError, VflhlpError);
create_exception!(vflhlp_py, TrainingError, VflhlpError);

/// Same grouping as the CLI exit codes.
fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        2 => ConfigError::new_err(msg),
        3 => DataError::new_err(msg),
        _ => TrainingError::new_err(msg),
    }
}

fn selection(seed: Option<u64>, mode: Option<&str>) -> PyResult<Selection> {
    let mode = mode.map(TrainMode::parse).transpose().map_err(to_py)?;
    Ok(Selection { seed, mode })
}

#[pyclass(name = "RunConfig", module = "vflhlp_py", frozen)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_json(text).map_err(to_py)?,
        })
    }

    /// Reads a config file; relative CSV paths resolve against its directory.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(&path).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.config_hash()
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.partition.seeds.clone()
    }

    #[getter]
    fn aligned_counts(&self) -> Vec<usize> {
        self.inner.partition.aligned_counts.clone()
    }

    /// `--out` style override, then `$VFLHLP_OUT`, then the config value.
    #[pyo3(signature = (out=None))]
    fn output_dir(&self, out: Option<PathBuf>) -> PathBuf {
        self.inner.resolve_output(out.as_deref())
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(hash={})", &self.inner.config_hash()[..12])
    }
}

#[pyclass(name = "CellResult", module = "vflhlp_py", frozen, get_all)]
struct PyCellResult {
    label: String,
    mode: String,
    beta: f64,
    aligned_count: usize,
    seed: u64,
    test_auc: Option<f64>,
    selected_epoch: Option<usize>,
    error: Option<String>,
}

impl From<CellResult> for PyCellResult {
    fn from(c: CellResult) -> Self {
        Self {
            label: c.label,
            mode: c.mode.to_string(),
            beta: c.beta,
            aligned_count: c.aligned_count,
            seed: c.seed,
            test_auc: c.test_auc,
            selected_epoch: c.selected_epoch,
            error: c.error,
        }
    }
}

#[pymethods]
impl PyCellResult {
    fn __repr__(&self) -> String {
        match (&self.test_auc, &self.error) {
            (Some(a), _) => format!("CellResult({} a={} seed={} auc={a:.4})", self.label, self.aligned_count, self.seed),
            (None, e) => format!(
                "CellResult({} a={} seed={} failed: {})",
                self.label,
                self.aligned_count,
                self.seed,
                e.as_deref().unwrap_or("?")
            ),
        }
    }
}

#[pyclass(name = "ResultTable", module = "vflhlp_py", frozen)]
struct PyResultTable {
    inner: ResultTable,
}

#[pymethods]
impl PyResultTable {
    #[getter]
    fn config_hash(&self) -> &str {
        &self.inner.config_hash
    }

    #[getter]
    fn aligned_counts(&self) -> Vec<usize> {
        self.inner.aligned_counts.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.rows.iter().chain(&self.inner.deltas).map(|r| r.label.clone()).collect()
    }

    #[getter]
    fn bayes_auc(&self) -> Option<f64> {
        self.inner.bayes_auc
    }

    /// `(mean, std, n)` for a row label at an aligned count, or `None`.
    fn stat(&self, label: &str, aligned: usize) -> Option<(f64, f64, usize)> {
        let i = self.inner.aligned_counts.iter().position(|&a| a == aligned)?;
        let row = self.inner.rows.iter().chain(&self.inner.deltas).find(|r| r.label == label)?;
        row.cells[i].map(|c| (c.mean, c.std, c.n))
    }

    fn cells(&self) -> Vec<PyCellResult> {
        self.inner.cells.iter().cloned().map(Into::into).collect()
    }

    fn failures(&self) -> Vec<PyCellResult> {
        self.inner.failures().cloned().map(Into::into).collect()
    }

    fn to_csv(&self) -> PyResult<String> {
        self.inner.to_csv().map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    fn __repr__(&self) -> String {
        format!(
            "ResultTable({} rows x {} counts, {} failed)",
            self.inner.rows.len(),
            self.inner.aligned_counts.len(),
            self.inner.failures().count()
        )
    }
}

/// Builds or reuses the dataset cache; returns its directory.
#[pyfunction]
fn prepare(py: Python<'_>, config: &PyRunConfig, out: PathBuf) -> PyResult<PathBuf> {
    py.detach(|| exp::cmd_prepare(&config.inner, &out)).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (config, out, seed=None, passive_only=false))]
fn pretrain(py: Python<'_>, config: &PyRunConfig, out: PathBuf, seed: Option<u64>, passive_only: bool) -> PyResult<Vec<PathBuf>> {
    let sel = selection(seed, None)?;
    py.detach(|| exp::cmd_pretrain(&config.inner, &out, sel, passive_only)).map_err(to_py)
}

/// Downstream training; failed cells are returned with `error` set.
#[pyfunction]
#[pyo3(signature = (config, out, seed=None, mode=None))]
fn train(py: Python<'_>, config: &PyRunConfig, out: PathBuf, seed: Option<u64>, mode: Option<&str>) -> PyResult<Vec<PyCellResult>> {
    let sel = selection(seed, mode)?;
    let cells = py.detach(|| exp::cmd_train(&config.inner, &out, sel)).map_err(to_py)?;
    Ok(cells.into_iter().map(Into::into).collect())
}

/// Re-scores saved models: `(label, aligned, seed, recorded, test_auc, reproduced)`.
#[pyfunction]
#[pyo3(signature = (config, out, seed=None, mode=None))]
#[allow(clippy::type_complexity)]
fn evaluate(
    py: Python<'_>,
    config: &PyRunConfig,
    out: PathBuf,
    seed: Option<u64>,
    mode: Option<&str>,
) -> PyResult<Vec<(String, usize, u64, Option<f64>, f64, bool)>> {
    let sel = selection(seed, mode)?;
    let records = py.detach(|| exp::cmd_eval(&config.inner, &out, sel)).map_err(to_py)?;
    Ok(records
        .into_iter()
        .map(|r| (r.label, r.aligned_count, r.seed, r.recorded_auc, r.test_auc, r.reproduced))
        .collect())
}

#[pyfunction]
fn grid(py: Python<'_>, config: &PyRunConfig, out: PathBuf) -> PyResult<PyResultTable> {
    let inner = py.detach(|| exp::cmd_grid(&config.inner, &out)).map_err(to_py)?;
    Ok(PyResultTable { inner })
}

/// ROC AUC with half credit for ties.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    vflhlp::metrics::auc(&scores, &labels).map_err(to_py)
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err(format!("{what} rows have different lengths")));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Contrastive loss of a similarity matrix and its gradient.
#[pyfunction]
#[pyo3(signature = (similarity, tau=1.0))]
fn info_nce(similarity: Vec<Vec<f64>>, tau: f64) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let s = matrix(similarity, "similarity")?;
    let (loss, grad) = vflhlp::ssl::info_nce(&s, tau).map_err(to_py)?;
    Ok((loss, rows(&grad)))
}

/// Row-wise cosine similarities between two equally shaped batches.
#[pyfunction]
fn cosine_similarity(z: Vec<Vec<f64>>, z_tilde: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let s = vflhlp::ssl::cosine_similarity_matrix(&matrix(z, "z")?, &matrix(z_tilde, "z_tilde")?).map_err(to_py)?;
    Ok(rows(&s))
}

#[pyfunction]
fn modes() -> Vec<String> {
    TrainMode::ALL.iter().map(ToString::to_string).collect()
}

#[pymodule]
fn vflhlp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("VflhlpError", m.py().get_type::<VflhlpError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("TrainingError", m.py().get_type::<TrainingError>())?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyCellResult>()?;
    m.add_class::<PyResultTable>()?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(grid, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(info_nce, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(modes, m)?)?;
    Ok(())
}
