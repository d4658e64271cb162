//! Python bindings: graphs, instances, the exact solver, the LP relaxation,
//! region fusion, the brute-force oracle and the image pipeline.

use std::time::Duration;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use mrfseg::branch_cut::{self, SolveLimits};
use mrfseg::fusion;
use mrfseg::imagegraph::{Edge, RagGraph};
use mrfseg::model::{self, Labeling, MrfInstance, Variant};
use mrfseg::oracle;
use mrfseg::pipeline::{self, RunConfig};
use mrfseg::scribble::{ScribbleSet, UnaryField};
use mrfseg::separation;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_variant(model: &str) -> PyResult<Variant> {
    model.parse().map_err(value_err)
}

fn limits(time_limit: Option<f64>, gap_tol: f64, node_cap: Option<usize>) -> PyResult<SolveLimits> {
    let time_limit = match time_limit {
        Some(t) if !(t > 0.0) => {
            return Err(value_err(format!("time_limit must be positive, got {t}")))
        }
        Some(t) => Some(Duration::from_secs_f64(t)),
        None => None,
    };
    if !(gap_tol >= 0.0) {
        return Err(value_err(format!(
            "gap_tol must be nonnegative, got {gap_tol}"
        )));
    }
    Ok(SolveLimits {
        time_limit,
        gap_tol,
        node_cap,
        fractional_separation: false,
    })
}

/// Stats JSON from the core, decoded by Python's own `json` module.
fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Region adjacency graph: node sizes, boundary lengths and mean features.
#[pyclass(name = "Graph", module = "mrfseg", frozen)]
struct PyGraph {
    inner: RagGraph,
}

#[pymethods]
impl PyGraph {
    #[new]
    #[pyo3(signature = (n, edges, sizes=None, boundaries=None, features=None, channels=1))]
    fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        sizes: Option<Vec<u64>>,
        boundaries: Option<Vec<u64>>,
        features: Option<Vec<f64>>,
        channels: usize,
    ) -> PyResult<Self> {
        let boundaries = boundaries.unwrap_or_else(|| vec![1; edges.len()]);
        if boundaries.len() != edges.len() {
            return Err(value_err(format!(
                "{} boundaries for {} edges",
                boundaries.len(),
                edges.len()
            )));
        }
        let edges = edges
            .iter()
            .zip(&boundaries)
            .map(|(&(a, b), &boundary)| Edge { a, b, boundary });
        let inner = RagGraph::new(
            sizes.unwrap_or_else(|| vec![1; n]),
            channels,
            features.unwrap_or_else(|| vec![0.0; n * channels]),
            edges,
        )
        .map_err(value_err)?;
        Ok(Self { inner })
    }

    /// 4-connected `width x height` grid with unit weights; node `y*width + x`.
    #[staticmethod]
    #[pyo3(signature = (width, height, features=None))]
    fn grid(width: usize, height: usize, features: Option<Vec<f64>>) -> PyResult<Self> {
        let mut edges = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let p = y * width + x;
                if x + 1 < width {
                    edges.push((p, p + 1));
                }
                if y + 1 < height {
                    edges.push((p, p + width));
                }
            }
        }
        Self::new(width * height, edges, None, None, features, 1)
    }

    /// Superpixel graph of an image file (`superpixels=0` keeps the pixel grid).
    #[staticmethod]
    #[pyo3(signature = (path, superpixels=1000, compactness=0.2))]
    fn from_image(path: &str, superpixels: usize, compactness: f64) -> PyResult<Self> {
        let img = mrfseg::imagegraph::load_image(path).map_err(value_err)?;
        let (inner, _) =
            pipeline::build_graph(&img, superpixels, compactness).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn sizes(&self) -> Vec<u64> {
        self.inner.sizes().to_vec()
    }

    /// `(a, b, boundary)` triples with `a < b`.
    #[getter]
    fn edges(&self) -> Vec<(usize, usize, u64)> {
        self.inner
            .edges()
            .iter()
            .map(|e| (e.a, e.b, e.boundary))
            .collect()
    }

    fn neighbors(&self, node: usize) -> PyResult<Vec<usize>> {
        if node >= self.inner.node_count() {
            return Err(value_err(format!("node {node} out of range")));
        }
        Ok(self.inner.neighbors(node).iter().map(|&(v, _)| v).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(nodes={}, edges={})",
            self.inner.node_count(),
            self.inner.edge_count()
        )
    }
}

/// Potts energy with scribble fixings under one model variant.
#[pyclass(name = "Instance", module = "mrfseg", frozen)]
struct PyInstance {
    inner: MrfInstance,
    scribbles: ScribbleSet,
}

#[pymethods]
impl PyInstance {
    /// `unary[i][l]` is the cost of label `l` at node `i`; `scribbles[l]`
    /// lists the nodes fixed to `l`, the first one being its root.
    #[new]
    #[pyo3(signature = (graph, unary, scribbles, lam=0.2, model="ilp-pc", background=None))]
    fn new(
        graph: &PyGraph,
        unary: Vec<Vec<f64>>,
        scribbles: Vec<Vec<usize>>,
        lam: f64,
        model: &str,
        background: Option<usize>,
    ) -> PyResult<Self> {
        let g = graph.inner.clone();
        let n = g.node_count();
        let k = scribbles.len();
        if unary.len() != n || unary.iter().any(|row| row.len() != k) {
            return Err(value_err(format!("unary must be {n} rows of {k} costs")));
        }
        let set = ScribbleSet::from_nodes(&g, &scribbles, background).map_err(value_err)?;
        let field = UnaryField::new(n, k, unary.concat()).map_err(value_err)?;
        let inner =
            model::build_instance(g, field, &set, lam, parse_variant(model)?).map_err(value_err)?;
        Ok(Self {
            inner,
            scribbles: set,
        })
    }

    #[getter]
    fn model(&self) -> &'static str {
        self.inner.variant().name()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn label_count(&self) -> usize {
        self.inner.label_count()
    }

    #[getter]
    fn roots(&self) -> Vec<usize> {
        self.inner.roots().to_vec()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings().to_vec()
    }

    /// Same data under another variant.
    fn with_model(&self, model: &str) -> PyResult<Self> {
        let inner = self
            .inner
            .with_variant(&self.scribbles, parse_variant(model)?)
            .map_err(value_err)?;
        Ok(Self {
            inner,
            scribbles: self.scribbles.clone(),
        })
    }

    fn energy(&self, labels: Vec<usize>) -> PyResult<f64> {
        model::energy(&self.inner, &Labeling::total(labels)).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(model={}, nodes={}, labels={}, lam={})",
            self.inner.variant(),
            self.inner.node_count(),
            self.inner.label_count(),
            self.inner.lambda()
        )
    }
}

/// Branch-and-cut to the requested gap; returns a dict of results.
#[pyfunction]
#[pyo3(signature = (instance, warm=None, time_limit=Some(100.0), gap_tol=1e-4, node_cap=None))]
fn solve<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    warm: Option<Vec<usize>>,
    time_limit: Option<f64>,
    gap_tol: f64,
    node_cap: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let lim = limits(time_limit, gap_tol, node_cap)?;
    let warm = warm.map(Labeling::total);
    let inst = &instance.inner;
    let r = py
        .detach(|| branch_cut::solve(inst, warm.as_ref(), &lim))
        .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("labels", r.labeling.as_ref().map(|l| l.as_slice().to_vec()))?;
    d.set_item("energy", r.energy)?;
    d.set_item("lower_bound", r.lower_bound)?;
    d.set_item("gap", r.gap)?;
    d.set_item("status", r.status.as_str())?;
    d.set_item("cuts_added", r.counters.cuts_added)?;
    d.set_item("separation_rounds", r.counters.separation_rounds)?;
    d.set_item("nodes_explored", r.counters.nodes_explored)?;
    d.set_item("time_seconds", r.wall_time.as_secs_f64())?;
    let log = PyList::empty(py);
    for ev in &r.log {
        log.append((
            ev.time_seconds,
            ev.nodes,
            ev.incumbent,
            ev.lower_bound,
            ev.gap,
        ))?;
    }
    d.set_item("log", log)?;
    Ok(d)
}

/// LP relaxation with connectivity cuts; unlabeled nodes come back as `None`.
#[pyfunction]
#[pyo3(signature = (instance, time_limit=None))]
fn solve_relaxation<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    time_limit: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let lim = limits(time_limit, 0.0, None)?;
    let inst = &instance.inner;
    let r = py
        .detach(|| branch_cut::solve_relaxation(inst, lim.time_limit))
        .map_err(value_err)?;
    let (n, k) = (inst.node_count(), inst.label_count());
    let d = PyDict::new(py);
    d.set_item("labels", r.labeling.as_slice().to_vec())?;
    d.set_item("objective", r.objective)?;
    d.set_item("status", r.status.as_str())?;
    d.set_item("unlabeled_fraction", r.unlabeled_fraction())?;
    d.set_item("cuts_added", r.counters.cuts_added)?;
    d.set_item("separation_rounds", r.counters.separation_rounds)?;
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| r.values[i * k..(i + 1) * k].to_vec())
        .collect();
    d.set_item("x", x)?;
    Ok(d)
}

/// Region-fusion heuristic; returns `(labels, iterations, final_beta)`.
#[pyfunction]
#[pyo3(signature = (instance, eta=0.1))]
fn region_fusion(
    py: Python<'_>,
    instance: &PyInstance,
    eta: f64,
) -> PyResult<(Vec<usize>, u64, f64)> {
    let (g, s) = (instance.inner.graph(), &instance.scribbles);
    let out = py
        .detach(|| fusion::region_fusion(g, s, eta))
        .map_err(value_err)?;
    let labels = out.labeling.to_total().map_err(value_err)?;
    Ok((labels, out.iterations, out.final_beta))
}

#[pyfunction]
fn beta_schedule(iteration: u64, eta: f64) -> f64 {
    fusion::beta_schedule(iteration, eta)
}

/// Exhaustive optimum; `(inf, None)` when no feasible labeling exists.
#[pyfunction]
#[pyo3(signature = (instance, cap=oracle::DEFAULT_CAP))]
fn brute_force(
    py: Python<'_>,
    instance: &PyInstance,
    cap: u64,
) -> PyResult<(f64, Option<Vec<usize>>)> {
    let inst = &instance.inner;
    let r = py
        .detach(|| oracle::brute_force(inst, cap))
        .map_err(value_err)?;
    let labels = r
        .labeling
        .map(|l| l.to_total())
        .transpose()
        .map_err(value_err)?;
    Ok((r.energy, labels))
}

/// Separator cuts violated by a labeling, as `(label, target, root, separator)`.
#[pyfunction]
fn separate(
    instance: &PyInstance,
    labels: Vec<usize>,
) -> PyResult<Vec<(usize, usize, usize, Vec<usize>)>> {
    let inst = &instance.inner;
    if labels.len() != inst.node_count() {
        return Err(value_err(format!(
            "{} labels for {} nodes",
            labels.len(),
            inst.node_count()
        )));
    }
    let cuts = separation::separate_all(inst.graph(), &Labeling::total(labels), inst)
        .map_err(value_err)?;
    Ok(cuts
        .into_iter()
        .map(|c| (c.label, c.target, c.root, c.separator))
        .collect())
}

fn run_config(
    image: &str,
    scribbles: &str,
    model: Variant,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::new(image, scribbles, model);
    if let Some(opts) = options {
        for (key, value) in opts.iter() {
            let key: String = key.extract()?;
            match key.as_str() {
                "probmap_prefix" => cfg.probmap_prefix = value.extract()?,
                "lam" | "lambda" => cfg.lambda = value.extract()?,
                "eta" => cfg.eta = value.extract()?,
                "time_limit" => cfg.time_limit = value.extract()?,
                "gap_tol" => cfg.gap_tol = value.extract()?,
                "superpixels" => cfg.superpixels = value.extract()?,
                "compactness" => cfg.compactness = value.extract()?,
                "warm_start" => cfg.warm_start = value.extract()?,
                "node_cap" => cfg.node_cap = value.extract()?,
                other => return Err(value_err(format!("unknown option {other:?}"))),
            }
        }
    }
    Ok(cfg)
}

/// Full pipeline on image files; returns `(stats, pixel_labels)` where the
/// pixel labels are row-major, 1-based, 0 for unlabeled.
#[pyfunction]
#[pyo3(signature = (image, scribbles, model="ilp-pc", **options))]
fn run<'py>(
    py: Python<'py>,
    image: &str,
    scribbles: &str,
    model: &str,
    options: Option<&Bound<'py, PyDict>>,
) -> PyResult<(Bound<'py, PyAny>, Option<Vec<u32>>)> {
    let cfg = run_config(image, scribbles, parse_variant(model)?, options)?;
    let out = py
        .detach(|| pipeline::run_single(&cfg))
        .map_err(value_err)?;
    let pixels = match &out.labeling {
        Some(lab) => {
            Some(pipeline::label_map_samples(out.instance.graph(), lab).map_err(value_err)?)
        }
        None => None,
    };
    Ok((json_to_py(py, &out.stats.to_json())?, pixels))
}

/// Runs several models on the same input; returns `(stats_list, csv)`.
#[pyfunction]
#[pyo3(signature = (image, scribbles, models=None, parallel=true, **options))]
fn compare<'py>(
    py: Python<'py>,
    image: &str,
    scribbles: &str,
    models: Option<Vec<String>>,
    parallel: bool,
    options: Option<&Bound<'py, PyDict>>,
) -> PyResult<(Bound<'py, PyList>, String)> {
    let variants: Vec<Variant> = match models {
        Some(names) => names
            .iter()
            .map(|m| parse_variant(m))
            .collect::<PyResult<_>>()?,
        None => Variant::ALL.to_vec(),
    };
    let first = *variants
        .first()
        .ok_or_else(|| value_err("no models given"))?;
    let cfg = run_config(image, scribbles, first, options)?;
    let cmp = py
        .detach(|| pipeline::run_compare(&cfg, &variants, parallel))
        .map_err(value_err)?;
    if let Some((v, msg)) = &cmp.error {
        return Err(value_err(format!("{v} failed: {msg}")));
    }
    let rows = PyList::empty(py);
    for row in &cmp.rows {
        let stats = json_to_py(py, &row.stats.to_json())?;
        stats.set_item("ordering_violations", row.violations.clone())?;
        rows.append(stats)?;
    }
    Ok((rows, cmp.to_csv(true)))
}

#[pymodule]
#[pyo3(name = "mrfseg")]
fn mrfseg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_relaxation, m)?)?;
    m.add_function(wrap_pyfunction!(region_fusion, m)?)?;
    m.add_function(wrap_pyfunction!(beta_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(separate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add("MODELS", Variant::ALL.map(|v| v.name()).to_vec())?;
    Ok(())
}
