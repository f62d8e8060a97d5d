//! Python module `puriscope`. Matrices cross the boundary as nested lists of
//! Python complex numbers; reports come back as dicts.

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

use puriscope_core::baselines;
use puriscope_core::bipartite::{Bipartite, CorrelatedState, PurifiedState};
use puriscope_core::channels::{self, QuantumChannel, StinespringIsometry};
use puriscope_core::ensembles::{self, EnsembleFamily, EnsembleSpec};
use puriscope_core::estimators::{self, EstimatorReport, QfiMode};
use puriscope_core::experiments::{self, Experiment, ExperimentConfig};
use puriscope_core::linalg::{self, CMatrix};
use puriscope_core::measurement::ShotBudget;
use puriscope_core::Error;

create_exception!(puriscope, PreconditionError, PyValueError);

fn to_py_err(e: Error) -> PyErr {
    if e.is_precondition() {
        PreconditionError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn matrix_from_rows(rows: Vec<Vec<Complex64>>) -> PyResult<CMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(CMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn json_to_py(py: Python<'_>, s: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn report_to_py(py: Python<'_>, r: &EstimatorReport) -> PyResult<Py<PyAny>> {
    json_to_py(py, &r.to_json())
}

fn family(name: &str) -> PyResult<EnsembleFamily> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown ensemble family '{name}'")))
}

#[pyclass(name = "DensityMatrix", module = "puriscope", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDensityMatrix(linalg::DensityMatrix);

#[pymethods]
impl PyDensityMatrix {
    #[new]
    fn new(rows: Vec<Vec<Complex64>>) -> PyResult<Self> {
        Ok(Self(linalg::DensityMatrix::new(matrix_from_rows(rows)?).map_err(to_py_err)?))
    }

    /// Sample `index` of the named ensemble family.
    #[staticmethod]
    #[pyo3(signature = (family_name, n, index, seed=0))]
    fn sample(family_name: &str, n: usize, index: u64, seed: u64) -> PyResult<Self> {
        let spec = EnsembleSpec::new(family(family_name)?, n, seed);
        Ok(Self(ensembles::sample_ensemble(&spec, index).map_err(to_py_err)?.rho))
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.0.n_qubits()
    }

    fn purity(&self) -> f64 {
        self.0.purity()
    }

    fn moment(&self, t: u32) -> PyResult<f64> {
        linalg::matrix_power_trace(&self.0, t).map_err(to_py_err)
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.0.spectral().eigenvalues().to_vec()
    }

    fn to_list(&self) -> Vec<Vec<Complex64>> {
        matrix_to_rows(self.0.matrix())
    }

    fn __repr__(&self) -> String {
        format!("DensityMatrix(n_qubits={}, purity={:.6})", self.0.n_qubits(), self.0.purity())
    }
}

#[pyclass(name = "Observable", module = "puriscope", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyObservable(linalg::Observable);

#[pymethods]
impl PyObservable {
    #[new]
    fn new(rows: Vec<Vec<Complex64>>) -> PyResult<Self> {
        Ok(Self(linalg::Observable::new(matrix_from_rows(rows)?).map_err(to_py_err)?))
    }

    #[staticmethod]
    fn z_on(n: usize, qubit: usize) -> PyResult<Self> {
        Ok(Self(linalg::Observable::z_on(n, qubit).map_err(to_py_err)?))
    }

    #[staticmethod]
    fn x_on(n: usize, qubit: usize) -> PyResult<Self> {
        Ok(Self(linalg::Observable::x_on(n, qubit).map_err(to_py_err)?))
    }

    /// Tensor product of single-qubit Paulis, e.g. `"XZI"`.
    #[staticmethod]
    fn pauli(labels: &str) -> PyResult<Self> {
        Ok(Self(linalg::Observable::pauli(labels).map_err(to_py_err)?))
    }

    fn expectation(&self, rho: &PyDensityMatrix) -> PyResult<f64> {
        rho.0.expectation(self.0.matrix()).map_err(to_py_err)
    }
}

enum Joint {
    Pure(PurifiedState),
    Correlated(CorrelatedState),
}

/// A joint A|B state: a purification or its classically correlated version.
#[pyclass(name = "BipartiteState", module = "puriscope", frozen)]
struct PyBipartite(Joint);

impl PyBipartite {
    fn state(&self) -> &dyn Bipartite {
        match &self.0 {
            Joint::Pure(p) => p,
            Joint::Correlated(c) => c,
        }
    }
}

#[pymethods]
impl PyBipartite {
    #[staticmethod]
    fn purify(rho: &PyDensityMatrix, n_b: usize) -> PyResult<Self> {
        let psi = ensembles::purify(&rho.0, n_b).map_err(to_py_err)?;
        Ok(Self(Joint::Pure(PurifiedState::new(psi).map_err(to_py_err)?)))
    }

    #[staticmethod]
    fn classical_correlate(rho: &PyDensityMatrix, n_b: usize) -> PyResult<Self> {
        let joint = ensembles::classical_correlate(&rho.0, n_b).map_err(to_py_err)?;
        Ok(Self(Joint::Correlated(CorrelatedState::new(joint, rho.0.n_qubits()).map_err(to_py_err)?)))
    }

    #[getter]
    fn n_a(&self) -> usize {
        self.state().n_a()
    }

    #[getter]
    fn n_b(&self) -> usize {
        self.state().n_b()
    }

    fn rho_a(&self) -> PyDensityMatrix {
        PyDensityMatrix(self.state().rho_a().clone())
    }

    fn rho_b(&self) -> PyDensityMatrix {
        PyDensityMatrix(self.state().rho_b().clone())
    }
}

#[pyfunction]
fn estimate_moment(py: Python<'_>, state: &PyBipartite, t: u32, budget: u64, seed: u64) -> PyResult<Py<PyAny>> {
    let r =
        estimators::estimate_moment(state.state(), t, &ShotBudget::tomography_only(budget), seed).map_err(to_py_err)?;
    report_to_py(py, &r)
}

#[pyfunction]
fn estimate_virtual_cooling(
    py: Python<'_>,
    state: &PyBipartite,
    o: &PyObservable,
    t: u32,
    budget: u64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let r = estimators::estimate_virtual_cooling(state.state(), &o.0, t, &ShotBudget::even(budget), seed)
        .map_err(to_py_err)?;
    report_to_py(py, &r)
}

#[pyfunction]
fn estimate_pca(py: Python<'_>, state: &PyBipartite, o: &PyObservable, budget: u64, seed: u64) -> PyResult<Py<PyAny>> {
    let r = estimators::estimate_pca(state.state(), &o.0, &ShotBudget::even(budget), seed).map_err(to_py_err)?;
    report_to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (state, o, budget, seed, rank=None))]
fn estimate_qfi(
    py: Python<'_>,
    state: &PyBipartite,
    o: &PyObservable,
    budget: u64,
    seed: u64,
    rank: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let (r, _) =
        estimators::estimate_qfi(state.state(), &o.0, rank, &ShotBudget::even(budget), seed).map_err(to_py_err)?;
    report_to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (rho, o, support_only=false))]
fn qfi(rho: &PyDensityMatrix, o: &PyObservable, support_only: bool) -> PyResult<f64> {
    let mode = if support_only { QfiMode::SupportOnly } else { QfiMode::Full };
    estimators::qfi_oracle(&rho.0, &o.0, mode).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (rho, t, o=None))]
fn swap_test_exact(rho: &PyDensityMatrix, t: u32, o: Option<&PyObservable>) -> PyResult<f64> {
    baselines::swap_test_exact(&rho.0, o.map(|x| &x.0), t).map_err(to_py_err)
}

#[pyfunction]
fn single_copy_purity(py: Python<'_>, rho: &PyDensityMatrix, budget: u64, seed: u64) -> PyResult<Py<PyAny>> {
    let r = baselines::single_copy_purity_attack(&rho.0, budget, None, seed).map_err(to_py_err)?;
    report_to_py(py, &r)
}

#[pyclass(name = "Channel", module = "puriscope", frozen)]
struct PyChannel {
    channel: QuantumChannel,
    iso: StinespringIsometry,
}

impl PyChannel {
    fn wrap(channel: QuantumChannel) -> PyResult<Self> {
        let iso = channels::canonicalize(&channel).map_err(to_py_err)?;
        Ok(Self { channel, iso })
    }
}

#[pymethods]
impl PyChannel {
    #[staticmethod]
    fn depolarizing(n: usize, p: f64) -> PyResult<Self> {
        Self::wrap(QuantumChannel::depolarizing(n, p).map_err(to_py_err)?)
    }

    #[staticmethod]
    fn amplitude_damping(gamma: f64) -> PyResult<Self> {
        Self::wrap(QuantumChannel::amplitude_damping(gamma).map_err(to_py_err)?)
    }

    #[staticmethod]
    fn unitary(rows: Vec<Vec<Complex64>>) -> PyResult<Self> {
        Self::wrap(QuantumChannel::unitary(matrix_from_rows(rows)?).map_err(to_py_err)?)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Self::wrap(QuantumChannel::from_json(s).map_err(to_py_err)?)
    }

    fn to_json(&self) -> String {
        self.channel.to_json()
    }

    fn apply(&self, rho: &PyDensityMatrix) -> PyResult<PyDensityMatrix> {
        Ok(PyDensityMatrix(self.channel.apply(&rho.0).map_err(to_py_err)?))
    }

    /// Purity of the Choi state.
    fn unitarity(&self) -> f64 {
        self.iso.unitarity()
    }

    fn weights(&self) -> Vec<f64> {
        self.iso.weights().to_vec()
    }

    fn estimate_unitarity(&self, py: Python<'_>, budget: u64, seed: u64) -> PyResult<Py<PyAny>> {
        let r =
            channels::unitarity_estimate(&self.iso, &ShotBudget::tomography_only(budget), seed).map_err(to_py_err)?;
        report_to_py(py, &r)
    }

    fn estimate_distilled(
        &self,
        py: Python<'_>,
        rho: &PyDensityMatrix,
        o: &PyObservable,
        budget: u64,
        seed: u64,
    ) -> PyResult<Py<PyAny>> {
        let r = channels::virtual_distillation_estimate(&self.iso, &rho.0, &o.0, &ShotBudget::even(budget), seed)
            .map_err(to_py_err)?;
        report_to_py(py, &r)
    }
}

/// Run a named experiment. `config_json` holds any of the CLI settings
/// (`n`, `ancilla`, `rank`, `t`, `budget`, `trials`, `rounds`, `task`).
#[pyfunction]
#[pyo3(signature = (name, config_json="{}", seed=0))]
fn run_experiment(py: Python<'_>, name: &str, config_json: &str, seed: u64) -> PyResult<Py<PyAny>> {
    let experiment: Experiment = name.parse().map_err(to_py_err)?;
    let mut value: serde_json::Value =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    let obj = value.as_object_mut().ok_or_else(|| PyValueError::new_err("config must be a JSON object"))?;
    obj.entry("seed").or_insert(seed.into());
    let config: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    let out =
        py.detach(|| experiments::run_experiment(experiment, &config, env!("CARGO_PKG_VERSION"))).map_err(to_py_err)?;
    json_to_py(py, &out.to_json())
}

#[pymodule]
fn puriscope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PreconditionError", m.py().get_type::<PreconditionError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDensityMatrix>()?;
    m.add_class::<PyObservable>()?;
    m.add_class::<PyBipartite>()?;
    m.add_class::<PyChannel>()?;
    m.add_function(wrap_pyfunction!(estimate_moment, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_virtual_cooling, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_pca, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_qfi, m)?)?;
    m.add_function(wrap_pyfunction!(qfi, m)?)?;
    m.add_function(wrap_pyfunction!(swap_test_exact, m)?)?;
    m.add_function(wrap_pyfunction!(single_copy_purity, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
