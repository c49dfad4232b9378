//! Python bindings: `import distacc`.
//!
//! Reports come back as plain dicts and lists mirroring the JSON produced by
//! the command-line tool.

use std::collections::BTreeMap;

use distacc_core::allocation::{self, DEFAULT_TOL};
use distacc_core::bounds;
use distacc_core::infomeasures::{self, GaussianSpec};
use distacc_core::network::{node_map_to_links, parse_tree};
use distacc_core::simulator::{self, Scheme, SimulationConfig};
use distacc_core::{cli, DirectedEdge, Error, Mode, NodeId, TreeNetwork};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

create_exception!(distacc, InfeasibleError, PyValueError, "Distortion target cannot be met.");
create_exception!(distacc, ConsistencyError, PyRuntimeError, "An internal identity check failed.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Infeasible(_) => InfeasibleError::new_err(e.to_string()),
        Error::Consistency(_) => ConsistencyError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for x in items {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, x) in map {
                dict.set_item(k, to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn report<'py, T: serde::Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(py_err)
}

fn node_map(d: BTreeMap<usize, f64>) -> BTreeMap<NodeId, f64> {
    d.into_iter().map(|(k, v)| (NodeId(k), v)).collect()
}

fn edge_map(d: BTreeMap<(usize, usize), f64>) -> BTreeMap<DirectedEdge, f64> {
    d.into_iter().map(|((a, b), v)| (DirectedEdge::new(a, b), v)).collect()
}

/// A rooted tree of weighted Gaussian sources.
#[pyclass(name = "TreeNetwork", module = "distacc", frozen)]
struct PyTree {
    inner: TreeNetwork,
}

#[pymethods]
impl PyTree {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyTree {
            inner: parse_tree(text).map_err(py_err)?,
        })
    }

    /// Sink `0` followed by nodes `1..=n` in a chain.
    #[staticmethod]
    fn line(weights: Vec<f64>) -> PyResult<Self> {
        Ok(PyTree {
            inner: TreeNetwork::line(&weights).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (leaf_weights, center_weight=None))]
    fn star(leaf_weights: Vec<f64>, center_weight: Option<f64>) -> PyResult<Self> {
        Ok(PyTree {
            inner: TreeNetwork::star(center_weight, &leaf_weights).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, seed, weight_range=(0.2, 3.0), weighted_root=false))]
    fn random(n: usize, seed: u64, weight_range: (f64, f64), weighted_root: bool) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PyTree {
            inner: TreeNetwork::random(n, weight_range, weighted_root, &mut rng).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn root(&self) -> usize {
        self.inner.root().0
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn weight(&self, v: usize) -> Option<f64> {
        self.inner.weight(NodeId(v))
    }

    fn parent(&self, v: usize) -> Option<usize> {
        self.inner.parent(NodeId(v)).map(|p| p.0)
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        self.inner.neighbors(NodeId(v)).into_iter().map(|u| u.0).collect()
    }

    fn subtree_variance(&self, v: usize) -> PyResult<f64> {
        self.inner.subtree_variance(NodeId(v)).map_err(py_err)
    }

    fn edge_multiplicity(&self, source: usize, target: usize) -> PyResult<usize> {
        self.inner
            .edge_multiplicity(DirectedEdge::new(source, target))
            .map_err(py_err)
    }

    fn directed_tree(&self, k: usize) -> PyResult<Vec<(usize, usize)>> {
        Ok(self
            .inner
            .directed_tree(NodeId(k))
            .map_err(py_err)?
            .into_iter()
            .map(|e| (e.from.0, e.to.0))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "TreeNetwork(nodes={}, root={})",
            self.inner.node_count(),
            self.inner.root()
        )
    }
}

/// Aggregation bounds for the equal split of `D` or for per-node distortions.
#[pyfunction]
#[pyo3(signature = (tree, D=None, d_per_link=None))]
#[allow(non_snake_case)]
fn bounds_report<'py>(
    py: Python<'py>,
    tree: &PyTree,
    D: Option<f64>,
    d_per_link: Option<BTreeMap<usize, f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let net = &tree.inner;
    let profile = match (D, d_per_link) {
        (Some(d), None) => bounds::equal_split_profile(net, d),
        (None, Some(m)) => bounds::derive_distortions(net, &node_map(m)),
        _ => return Err(PyValueError::new_err("give exactly one of D or d_per_link")),
    }
    .map_err(py_err)?;
    report(py, &bounds::bounds_report(net, &profile).map_err(py_err)?)
}

/// Consensus bounds for the optimal allocation of `D` or for per-edge
/// distortions keyed by `(from, to)`.
#[pyfunction]
#[pyo3(signature = (tree, D=None, d_per_link=None))]
#[allow(non_snake_case)]
fn consensus_bounds_report<'py>(
    py: Python<'py>,
    tree: &PyTree,
    D: Option<f64>,
    d_per_link: Option<BTreeMap<(usize, usize), f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let net = &tree.inner;
    let inc = match (D, d_per_link) {
        (Some(d), None) => allocation::allocate_consensus(net, d)
            .map_err(py_err)?
            .links
            .iter()
            .map(|l| (DirectedEdge::new(l.from, l.to), l.inc))
            .collect(),
        (None, Some(m)) => edge_map(m),
        _ => return Err(PyValueError::new_err("give exactly one of D or d_per_link")),
    };
    let profile = bounds::consensus_derive(net, &inc).map_err(py_err)?;
    report(py, &bounds::consensus_bounds_report(net, &profile).map_err(py_err)?)
}

#[pyfunction]
#[allow(non_snake_case)]
fn outer_bound_closed_form(tree: &PyTree, D: f64) -> PyResult<f64> {
    bounds::outer_bound_closed_form(&tree.inner, D).map_err(py_err)
}

#[pyfunction]
#[allow(non_snake_case)]
fn inner_bound_minimized(tree: &PyTree, D: f64) -> PyResult<f64> {
    bounds::inner_bound_minimized(&tree.inner, D).map_err(py_err)
}

#[pyfunction]
fn line_gap_asymptote(n: usize) -> f64 {
    bounds::line_gap_asymptote(n)
}

#[pyfunction]
#[allow(non_snake_case)]
fn allocate_equal_incremental<'py>(py: Python<'py>, tree: &PyTree, D: f64) -> PyResult<Bound<'py, PyAny>> {
    report(py, &allocation::allocate_equal_incremental(&tree.inner, D).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (tree, D, tol=DEFAULT_TOL))]
#[allow(non_snake_case)]
fn allocate_numeric_penalized<'py>(
    py: Python<'py>,
    tree: &PyTree,
    D: f64,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    report(py, &allocation::allocate_numeric_penalized(&tree.inner, D, tol).map_err(py_err)?)
}

#[pyfunction]
#[allow(non_snake_case)]
fn allocate_consensus<'py>(py: Python<'py>, tree: &PyTree, D: f64) -> PyResult<Bound<'py, PyAny>> {
    report(py, &allocation::allocate_consensus(&tree.inner, D).map_err(py_err)?)
}

/// Exact Gaussian oracle; keys are sending nodes in aggregation mode and
/// `(from, to)` pairs in consensus mode.
#[pyfunction]
#[pyo3(signature = (tree, d_per_link, mode="agg"))]
fn analytic_mmse_check<'py>(
    py: Python<'py>,
    tree: &PyTree,
    d_per_link: &Bound<'py, PyDict>,
    mode: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let net = &tree.inner;
    let mode = parse_mode(mode)?;
    let d = match mode {
        Mode::Aggregation => node_map_to_links(net, &node_map(d_per_link.extract()?))
            .map_err(py_err)?,
        Mode::Consensus => edge_map(d_per_link.extract()?),
    };
    report(py, &simulator::analytic_mmse_check(net, &d, mode).map_err(py_err)?)
}

/// Monte-Carlo run. Distortions come from `d_per_link` or, given `D`, from
/// the equal split (aggregation) or the optimal allocation (consensus).
#[pyfunction]
#[pyo3(signature = (tree, D=None, d_per_link=None, mode="agg", scheme="testchannel", N=1000, trials=100, seed=0))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    tree: &PyTree,
    D: Option<f64>,
    d_per_link: Option<&Bound<'py, PyDict>>,
    mode: &str,
    scheme: &str,
    N: usize,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let net = &tree.inner;
    let mode = parse_mode(mode)?;
    let scheme: Scheme = scheme.parse().map_err(py_err)?;
    let cfg = SimulationConfig::new(N, trials, seed);
    let inc: BTreeMap<DirectedEdge, f64> = match (D, d_per_link) {
        (Some(d), None) => match mode {
            Mode::Aggregation => allocation::allocate_equal_incremental(net, d),
            Mode::Consensus => allocation::allocate_consensus(net, d),
        }
        .map_err(py_err)?
        .links
        .iter()
        .map(|l| (DirectedEdge::new(l.from, l.to), l.inc))
        .collect(),
        (None, Some(m)) => match mode {
            Mode::Aggregation => node_map_to_links(net, &node_map(m.extract()?))
                .map_err(py_err)?,
            Mode::Consensus => edge_map(m.extract()?),
        },
        _ => return Err(PyValueError::new_err("give exactly one of D or d_per_link")),
    };
    let result = match (mode, scheme) {
        (Mode::Aggregation, Scheme::TestChannel) => {
            let by_node = inc.iter().map(|(e, &x)| (e.from, x)).collect();
            simulator::simulate_aggregation(net, &by_node, cfg)
        }
        (Mode::Consensus, Scheme::TestChannel) => simulator::simulate_consensus(net, &inc, cfg),
        (_, Scheme::DitheredQuantizer) => {
            let profile = match mode {
                Mode::Aggregation => allocation::Profile::Aggregation(
                    bounds::derive_distortions(net, &inc.iter().map(|(e, &x)| (e.from, x)).collect())
                        .map_err(py_err)?,
                ),
                Mode::Consensus => {
                    allocation::Profile::Consensus(bounds::consensus_derive(net, &inc).map_err(py_err)?)
                }
            };
            let rates = allocation::rates_for_profile(net, &profile).map_err(py_err)?;
            simulator::simulate_dithered_baseline(net, &rates, cfg)
        }
    }
    .map_err(py_err)?;
    report(py, &result)
}

#[pyfunction]
fn test_channel_rate_bits(source_variance: f64, distortion: f64) -> PyResult<f64> {
    infomeasures::test_channel_rate_bits(source_variance, distortion).map_err(py_err)
}

fn gaussian(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<GaussianSpec> {
    let n = mean.len();
    if cov.len() != n || cov.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("covariance must be n×n for a mean of length n"));
    }
    GaussianSpec::new(DVector::from_vec(mean), DMatrix::from_fn(n, n, |r, c| cov[r][c])).map_err(py_err)
}

/// `D(N(mean_p, cov_p) ‖ N(mean_q, cov_q))` in nats.
#[pyfunction]
fn gaussian_kl_nats(
    mean_p: Vec<f64>,
    cov_p: Vec<Vec<f64>>,
    mean_q: Vec<f64>,
    cov_q: Vec<Vec<f64>>,
) -> PyResult<f64> {
    infomeasures::gaussian_kl_nats(&gaussian(mean_p, cov_p)?, &gaussian(mean_q, cov_q)?).map_err(py_err)
}

/// Both sides of the smoothing inequality for the stacked law of `(x, y)`.
#[pyfunction]
fn verify_smoothing_inequality<'py>(
    py: Python<'py>,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    t: f64,
) -> PyResult<Bound<'py, PyAny>> {
    report(
        py,
        &infomeasures::verify_smoothing_inequality(&gaussian(mean, cov)?, t).map_err(py_err)?,
    )
}

/// Rows `{n, D, delta_r, asymptote}` for unit-weight lines.
#[pyfunction]
#[allow(non_snake_case)]
fn gap_sweep<'py>(py: Python<'py>, n_min: usize, n_max: usize, Ds: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let rows = cli::gap_sweep(n_min..=n_max, &Ds).map_err(py_err)?;
    let list = PyList::empty(py);
    for r in rows {
        let d = PyDict::new(py);
        d.set_item("n", r.n)?;
        d.set_item("D", r.d)?;
        d.set_item("delta_r", r.delta_r)?;
        d.set_item("asymptote", r.asymptote)?;
        list.append(d)?;
    }
    Ok(list.into_any())
}

/// Runs the command-line tool in-process and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    cli::run(std::iter::once("distacc".to_string()).chain(args))
}

#[pymodule]
fn distacc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTree>()?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add("ConsistencyError", m.py().get_type::<ConsistencyError>())?;
    m.add_function(wrap_pyfunction!(bounds_report, m)?)?;
    m.add_function(wrap_pyfunction!(consensus_bounds_report, m)?)?;
    m.add_function(wrap_pyfunction!(outer_bound_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(inner_bound_minimized, m)?)?;
    m.add_function(wrap_pyfunction!(line_gap_asymptote, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_equal_incremental, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_numeric_penalized, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_consensus, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_mmse_check, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(test_channel_rate_bits, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kl_nats, m)?)?;
    m.add_function(wrap_pyfunction!(verify_smoothing_inequality, m)?)?;
    m.add_function(wrap_pyfunction!(gap_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
