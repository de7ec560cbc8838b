//! Python bindings: graphs, kernel checks, training, evaluation and the
//! streaming state.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tapgnn_core::error::Error;
use tapgnn_core::eval::eval_link_prediction;
use tapgnn_core::graph::{
    chronological_split, graph_stats, read_edge_list, Interaction, ParseOptions, SplitFractions, TemporalGraph,
};
use tapgnn_core::kernels::{check_equivalence, EquivalenceConfig, KernelKind};
use tapgnn_core::model::{dynamic_embed, train, ModelParams, TrainConfig};
use tapgnn_core::numerics::Tensor;
use tapgnn_core::streaming::{FoldOrder, StreamBatch, StreamState};
use tapgnn_core::synthetic::SyntheticSpec;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn to_dict<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyDict>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    let obj = py.import("json")?.call_method1("loads", (text,))?;
    Ok(obj.downcast_into::<PyDict>()?)
}

/// Serializes a Python dict (or `None`) and decodes it as `T`, so unknown
/// keys are rejected the same way as in JSON config files.
fn from_dict<T: serde::de::DeserializeOwned + Default>(py: Python<'_>, d: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    match d {
        None => Ok(T::default()),
        Some(d) => {
            let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&text).map_err(json_err)
        }
    }
}

fn kernel(name: &str) -> PyResult<KernelKind> {
    name.parse().map_err(err)
}

fn flatten_features(n: usize, features: Option<Vec<Vec<f64>>>) -> PyResult<(usize, Vec<f64>)> {
    let Some(features) = features else {
        return Ok((0, Vec::new()));
    };
    if features.len() != n {
        return Err(PyValueError::new_err(format!("{} feature rows for {n} edges", features.len())));
    }
    let width = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != width) {
        return Err(PyValueError::new_err("feature rows differ in length"));
    }
    Ok((width, features.concat()))
}

/// Continuous-time interaction graph.
#[pyclass(name = "TemporalGraph", module = "tapgnn", frozen)]
struct PyGraph {
    inner: TemporalGraph,
}

#[pymethods]
impl PyGraph {
    /// `edges` holds `(src, dst, time)` tuples; `features` one list per edge.
    #[new]
    #[pyo3(signature = (num_nodes, edges, directed = true, features = None))]
    fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize, f64)>,
        directed: bool,
        features: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let (width, flat) = flatten_features(edges.len(), features)?;
        let edges = edges.into_iter().map(|(src, dst, time)| Interaction { src, dst, time }).collect();
        Ok(Self { inner: TemporalGraph::new(num_nodes, edges, width, flat, directed).map_err(err)? })
    }

    /// Reads a `src,dst,time[,features...]` file.
    #[staticmethod]
    #[pyo3(signature = (path, directed = false, header = false))]
    fn read(path: PathBuf, directed: bool, header: bool) -> PyResult<Self> {
        let opts = ParseOptions { directed, has_header: header, feature_width: None };
        Ok(Self { inner: read_edge_list(path, &opts).map_err(err)? })
    }

    /// Generated graph, e.g. `"communities"` or `"er:n=30,m=300"`.
    #[staticmethod]
    #[pyo3(signature = (spec, seed = 0))]
    fn synthetic(spec: &str, seed: u64) -> PyResult<Self> {
        let spec: SyntheticSpec = spec.parse().map_err(err)?;
        Ok(Self { inner: spec.generate(seed).map_err(err)? })
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_interactions(&self) -> usize {
        self.inner.num_interactions()
    }

    #[getter]
    fn directed(&self) -> bool {
        self.inner.is_directed()
    }

    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.inner.interactions().iter().map(|e| (e.src, e.dst, e.time)).collect()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        to_dict(py, &graph_stats(&self.inner))
    }

    fn prefix(&self, n: usize) -> Self {
        Self { inner: self.inner.prefix(n.min(self.inner.num_interactions())) }
    }

    fn __len__(&self) -> usize {
        self.inner.num_interactions()
    }

    fn __repr__(&self) -> String {
        format!(
            "TemporalGraph(num_nodes={}, num_interactions={}, directed={})",
            self.inner.num_nodes(),
            self.inner.num_interactions(),
            self.inner.is_directed()
        )
    }
}

/// Compares an AP kernel with direct aggregation on random weights.
#[pyfunction]
#[pyo3(signature = (graph, kernel_name = "gcn", precision = "f64", seed = 0, link_cap = 50_000_000))]
fn check_kernel<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    kernel_name: &str,
    precision: &str,
    seed: u64,
    link_cap: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = EquivalenceConfig { seed, link_cap, ..Default::default() };
    let k = kernel(kernel_name)?;
    let report = match precision {
        "f64" => check_equivalence::<f64>(&graph.inner, k, &cfg),
        "f32" => check_equivalence::<f32>(&graph.inner, k, &cfg),
        p => return Err(PyValueError::new_err(format!("unknown precision {p:?}"))),
    }
    .map_err(err)?;
    to_dict(py, &report)
}

/// Trained model parameters.
#[pyclass(name = "Model", module = "tapgnn", frozen)]
struct PyModel {
    inner: ModelParams,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ModelParams::load(path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn layers(&self) -> usize {
        self.inner.config.layers
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.config.dim
    }

    #[getter]
    fn kernel(&self) -> String {
        self.inner.config.kernel.to_string()
    }

    /// Embeddings of `(node, time)` queries from the interactions of `graph`
    /// strictly before each time.
    fn embed(&self, graph: &PyGraph, queries: Vec<(usize, f64)>) -> PyResult<Vec<Vec<f64>>> {
        let g = graph.inner.clone().with_time_norm(self.inner.config.time_norm);
        Ok(rows(&dynamic_embed(&self.inner, &g, &queries).map_err(err)?))
    }

    /// Link-prediction AUC and accuracy on the test split of `graph`.
    #[pyo3(signature = (graph, split = (0.7, 0.15, 0.15), seed = 0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        graph: &PyGraph,
        split: (f64, f64, f64),
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let fractions = SplitFractions { train: split.0, val: split.1, test: split.2 };
        let s = chronological_split(&graph.inner, fractions).map_err(err)?;
        to_dict(py, &eval_link_prediction(&self.inner, &s, seed).map_err(err)?)
    }
}

/// Trains on the chronological train split of `graph`. `config` takes the
/// training fields (`layers`, `dim`, `kernel`, `lr`, ...). Returns the model
/// and the per-epoch log as a list of dicts.
#[pyfunction]
#[pyo3(name = "train", signature = (graph, config = None, split = (0.7, 0.15, 0.15)))]
fn py_train<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    config: Option<&Bound<'py, PyDict>>,
    split: (f64, f64, f64),
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let cfg: TrainConfig = from_dict(py, config)?;
    let fractions = SplitFractions { train: split.0, val: split.1, test: split.2 };
    let s = chronological_split(&graph.inner, fractions).map_err(err)?;
    let (params, log) = py.allow_threads(|| train::<f64>(&s, &cfg)).map_err(err)?;
    let epochs: Vec<_> = log.rows.iter().filter(|r| r.batch.is_none()).collect();
    let log = py.import("json")?.call_method1("loads", (serde_json::to_string(&epochs).map_err(json_err)?,))?;
    Ok((PyModel { inner: params }, log))
}

/// Incrementally maintained embeddings for a growing graph.
#[pyclass(name = "StreamState", module = "tapgnn")]
struct PyStream {
    inner: StreamState,
}

fn order(literal: bool) -> FoldOrder {
    if literal {
        FoldOrder::Literal
    } else {
        FoldOrder::Exact
    }
}

#[pymethods]
impl PyStream {
    /// State with no history, or warmed up on `history` when given.
    #[new]
    #[pyo3(signature = (model, history = None, literal = false))]
    fn new(model: &PyModel, history: Option<&PyGraph>, literal: bool) -> PyResult<Self> {
        let inner = match history {
            None => StreamState::cold(&model.inner, order(literal)),
            Some(g) => {
                let g = g.inner.clone().with_time_norm(model.inner.config.time_norm);
                tapgnn_core::streaming::init_state_with(&model.inner, &g, order(literal)).map_err(err)?
            }
        };
        Ok(Self { inner })
    }

    /// Folds a batch of `(src, dst, time)` edges. An empty list with `time`
    /// only advances the watermark. Returns the update report.
    #[pyo3(signature = (edges, features = None, time = None))]
    fn update<'py>(
        &mut self,
        py: Python<'py>,
        edges: Vec<(usize, usize, f64)>,
        features: Option<Vec<Vec<f64>>>,
        time: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let batch = if edges.is_empty() {
            let t = time.ok_or_else(|| PyValueError::new_err("an empty batch needs a time"))?;
            StreamBatch::empty(t)
        } else {
            let (_, flat) = flatten_features(edges.len(), features)?;
            let edges = edges.into_iter().map(|(src, dst, time)| Interaction { src, dst, time }).collect();
            let mut b = StreamBatch::new(edges, flat).map_err(err)?;
            if let Some(t) = time {
                b.time = b.time.max(t);
            }
            b
        };
        let r = self.inner.update(&batch).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("nodes", r.nodes)?;
        d.set_item("rows", rows(&r.rows))?;
        d.set_item("groups", r.groups)?;
        d.set_item("messages", r.messages)?;
        d.set_item("touched_rows", r.touched_rows)?;
        Ok(d)
    }

    fn query(&self, queries: Vec<(usize, f64)>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.query(&queries).map_err(err)?))
    }

    #[getter]
    fn watermark(&self) -> Option<f64> {
        self.inner.watermark()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf, model: &PyModel) -> PyResult<Self> {
        Ok(Self { inner: StreamState::load(path, &model.inner).map_err(err)? })
    }

    /// Largest difference from a batch forward over `graph`.
    fn discrepancy(&self, graph: &PyGraph) -> PyResult<f64> {
        let g = graph.inner.clone().with_time_norm(self.inner.params().config.time_norm);
        tapgnn_core::streaming::batch_discrepancy(&self.inner, &g).map_err(err)
    }
}

#[pymodule]
fn tapgnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyStream>()?;
    m.add_function(wrap_pyfunction!(check_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(py_train, m)?)?;
    m.add("KERNELS", KernelKind::ALL.iter().map(|k| k.to_string()).collect::<Vec<_>>())?;
    Ok(())
}
