//! Python bindings for the rate-balancing library.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mimo_balance::balancer::{self, BalancerParams, BalancerReport};
use mimo_balance::simulator::{self, ExperimentResult, ExperimentSpec};
use mimo_balance::system_model::{self, ChannelSet, SystemConfig};
use mimo_balance::wmse;

fn py_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "SystemConfig", from_py_object)]
#[derive(Clone)]
struct PySystemConfig {
    inner: SystemConfig,
}

#[pymethods]
impl PySystemConfig {
    #[new]
    #[pyo3(signature = (tx_antennas, rx_antennas, streams, max_power=1.0, noise_variance=0.1, rate_priorities=None))]
    fn new(
        tx_antennas: usize,
        rx_antennas: Vec<usize>,
        streams: Vec<usize>,
        max_power: f64,
        noise_variance: f64,
        rate_priorities: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let users = rx_antennas.len();
        let inner = SystemConfig {
            num_tx_antennas: tx_antennas,
            rx_antennas,
            streams,
            max_power,
            noise_variance,
            rate_priorities: rate_priorities.unwrap_or_else(|| vec![1.0; users]),
        };
        inner.validate().map_err(py_err)?;
        Ok(PySystemConfig { inner })
    }

    /// Same system at a given SNR in dB, relative to the power budget.
    fn at_snr(&self, snr_db: f64) -> Self {
        let sigma2 = self.inner.max_power / 10f64.powf(snr_db / 10.0);
        PySystemConfig {
            inner: self.inner.with_noise_variance(sigma2),
        }
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users()
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.inner.noise_variance
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }

    fn __repr__(&self) -> String {
        format!(
            "SystemConfig(tx_antennas={}, rx_antennas={:?}, streams={:?}, noise_variance={})",
            self.inner.num_tx_antennas,
            self.inner.rx_antennas,
            self.inner.streams,
            self.inner.noise_variance
        )
    }
}

#[pyclass(name = "Channel", from_py_object)]
#[derive(Clone)]
struct PyChannel {
    inner: ChannelSet,
}

#[pymethods]
impl PyChannel {
    #[staticmethod]
    fn structured(config: &PySystemConfig, alpha: f64, seed: u64) -> PyResult<Self> {
        let inner =
            system_model::generate_structured_channel(&config.inner, alpha, seed).map_err(py_err)?;
        Ok(PyChannel { inner })
    }

    #[staticmethod]
    fn iid(config: &PySystemConfig, seed: u64) -> PyResult<Self> {
        let inner = system_model::generate_iid_channel(&config.inner, seed).map_err(py_err)?;
        Ok(PyChannel { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = ChannelSet::from_json(text).map_err(py_err)?;
        Ok(PyChannel { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users()
    }
}

#[pyclass(name = "BalancerReport", skip_from_py_object)]
struct PyReport {
    inner: BalancerReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn rates(&self) -> Vec<f64> {
        self.inner.rates.clone()
    }

    #[getter]
    fn min_rate(&self) -> f64 {
        self.inner.min_rate()
    }

    #[getter]
    fn sum_rate(&self) -> f64 {
        self.inner.sum_rate()
    }

    #[getter]
    fn balanced_level(&self) -> f64 {
        self.inner.balanced_level
    }

    #[getter]
    fn scale_trace(&self) -> Vec<f64> {
        self.inner.scale_trace.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn outer_iterations(&self) -> usize {
        self.inner.outer_iterations()
    }

    /// Per-stream downlink powers of the final transceivers.
    #[getter]
    fn dl_powers(&self) -> Vec<f64> {
        self.inner.final_state.dl_powers.clone()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("report serializes")
    }
}

fn params(n_max: usize, m_max: usize, inner_tol: f64, outer_tol: f64) -> PyResult<BalancerParams> {
    let p = BalancerParams {
        n_max,
        m_max,
        inner_tol,
        outer_tol,
        ..BalancerParams::default()
    };
    p.validate().map_err(py_err)?;
    Ok(p)
}

/// Max-min weighted user-rate balancing.
#[pyfunction]
#[pyo3(signature = (config, channel, n_max=20, m_max=100, inner_tol=1e-6, outer_tol=1e-4))]
fn balance_rates(
    py: Python<'_>,
    config: &PySystemConfig,
    channel: &PyChannel,
    n_max: usize,
    m_max: usize,
    inner_tol: f64,
    outer_tol: f64,
) -> PyResult<PyReport> {
    let p = params(n_max, m_max, inner_tol, outer_tol)?;
    let (cfg, ch) = (config.inner.clone(), channel.inner.clone());
    let inner = py
        .detach(move || balancer::balance_rates(&cfg, &ch, &p))
        .map_err(py_err)?;
    Ok(PyReport { inner })
}

/// Unweighted user-MSE balancing baseline.
#[pyfunction]
#[pyo3(signature = (config, channel, n_max=20, m_max=100, inner_tol=1e-6, outer_tol=1e-4))]
fn balance_mse_unweighted(
    py: Python<'_>,
    config: &PySystemConfig,
    channel: &PyChannel,
    n_max: usize,
    m_max: usize,
    inner_tol: f64,
    outer_tol: f64,
) -> PyResult<PyReport> {
    let p = params(n_max, m_max, inner_tol, outer_tol)?;
    let (cfg, ch) = (config.inner.clone(), channel.inner.clone());
    let inner = py
        .detach(move || balancer::balance_mse_unweighted(&cfg, &ch, &p))
        .map_err(py_err)?;
    Ok(PyReport { inner })
}

/// Dominant eigenpair of a nonnegative coupling matrix given as rows.
/// Returns `(delta, user_powers, iterations)`.
#[pyfunction]
fn perron_solve(lambda: Vec<Vec<f64>>, max_power: f64) -> PyResult<(f64, Vec<f64>, usize)> {
    let k = lambda.len();
    if lambda.iter().any(|row| row.len() != k) {
        return Err(PyValueError::new_err("coupling matrix must be square"));
    }
    let m = DMatrix::from_fn(k, k, |i, j| lambda[i][j]);
    let sol = wmse::perron_solve(&m, max_power).map_err(py_err)?;
    Ok((sol.delta, sol.user_powers, sol.iterations))
}

/// Runs a JSON experiment spec and returns the JSON result.
#[pyfunction]
fn run_experiment(py: Python<'_>, spec_json: &str) -> PyResult<String> {
    let spec: ExperimentSpec = serde_json::from_str(spec_json).map_err(py_err)?;
    let result = py
        .detach(move || simulator::run_experiment(&spec))
        .map_err(py_err)?;
    Ok(simulator::results_json(&result))
}

/// Weighted over unweighted mean min-rate in a JSON result at `snr_db`.
#[pyfunction]
fn gain_ratio(result_json: &str, snr_db: f64) -> PyResult<f64> {
    let result: ExperimentResult = serde_json::from_str(result_json).map_err(py_err)?;
    simulator::gain_ratio(&result, snr_db).map_err(py_err)
}

#[pymodule]
fn mimo_balance_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemConfig>()?;
    m.add_class::<PyChannel>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(balance_rates, m)?)?;
    m.add_function(wrap_pyfunction!(balance_mse_unweighted, m)?)?;
    m.add_function(wrap_pyfunction!(perron_solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(gain_ratio, m)?)?;
    Ok(())
}
