//! End-to-end runs: load inputs, build the graph and instance, dispatch to a
//! model variant, and write label maps, statistics and comparison tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::branch_cut::{
    self, relative_gap, BranchCutError, CutLogRecord, ProgressEvent, SolveLimits,
};
use crate::fusion::{region_fusion, FusionError};
use crate::imagegraph::{
    build_grid_graph, build_superpixel_rag, decode_raw, load_image, write_pgm, GraphError,
    ImageError, RagGraph, RasterImage, SuperpixelConfig,
};
use crate::model::{build_instance, energy, Labeling, ModelError, MrfInstance, Variant};
use crate::scribble::{
    parse_scribbles, seed_means, unary_from_means, unary_from_probmap, ScribbleError, ScribbleSet,
    UnaryField,
};

/// Slack for the relaxation-ordering checks in comparisons.
pub const ORDER_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("image: {0}")]
    Image(#[from] ImageError),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("scribbles: {0}")]
    Scribble(#[from] ScribbleError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("heuristic: {0}")]
    Fusion(#[from] FusionError),
    #[error("solver: {0}")]
    Solver(#[from] BranchCutError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("label map: {0}")]
    LabelMap(String),
    #[error("comparison failed: {0}")]
    Compare(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub image: PathBuf,
    pub scribbles: PathBuf,
    pub probmap_prefix: Option<String>,
    pub variant: Variant,
    pub lambda: f64,
    pub eta: f64,
    /// Seconds per solve.
    pub time_limit: f64,
    pub gap_tol: f64,
    /// Superpixel target; 0 uses the pixel grid.
    pub superpixels: usize,
    pub compactness: f64,
    pub warm_start: bool,
    pub node_cap: Option<usize>,
    pub fractional_separation: bool,
}

impl RunConfig {
    pub fn new(image: impl Into<PathBuf>, scribbles: impl Into<PathBuf>, variant: Variant) -> Self {
        Self {
            image: image.into(),
            scribbles: scribbles.into(),
            probmap_prefix: None,
            variant,
            lambda: 0.2,
            eta: 0.1,
            time_limit: 100.0,
            gap_tol: 1e-4,
            superpixels: 1000,
            compactness: SuperpixelConfig::default().compactness,
            warm_start: true,
            node_cap: None,
            fractional_separation: false,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.time_limit > 0.0) {
            return bad(format!(
                "time limit must be positive, got {}",
                self.time_limit
            ));
        }
        if !(self.gap_tol >= 0.0 && self.gap_tol.is_finite()) {
            return bad(format!(
                "gap tolerance must be nonnegative, got {}",
                self.gap_tol
            ));
        }
        if self.superpixels == 1 {
            return bad("superpixel target must be 0 (pixel grid) or at least 2".into());
        }
        Ok(())
    }

    pub fn limits(&self) -> SolveLimits {
        SolveLimits {
            time_limit: Some(Duration::from_secs_f64(self.time_limit)),
            gap_tol: self.gap_tol,
            node_cap: self.node_cap,
            fractional_separation: self.fractional_separation,
        }
    }
}

/// Graph, scribbles and unaries shared by all variants of one input.
#[derive(Debug, Clone)]
pub struct PreparedInput {
    pub graph: RagGraph,
    pub scribbles: ScribbleSet,
    pub unary: UnaryField,
    pub warnings: Vec<String>,
}

pub fn build_graph(
    img: &RasterImage,
    superpixels: usize,
    compactness: f64,
) -> Result<(RagGraph, Option<String>), PipelineError> {
    if superpixels == 0 {
        return Ok((build_grid_graph(img), None));
    }
    let pixels = img.pixel_count();
    if superpixels >= pixels {
        let note = format!(
            "superpixel target {superpixels} is not below the pixel count {pixels}; using the pixel grid"
        );
        return Ok((build_grid_graph(img), Some(note)));
    }
    let cfg = SuperpixelConfig {
        compactness,
        ..SuperpixelConfig::with_target(superpixels)
    };
    Ok((build_superpixel_rag(img, &cfg)?, None))
}

pub fn prepare(cfg: &RunConfig) -> Result<PreparedInput, PipelineError> {
    cfg.validate()?;
    let img = load_image(&cfg.image)?;
    let (graph, note) = build_graph(&img, cfg.superpixels, cfg.compactness)?;
    let scribbles = parse_scribbles(&cfg.scribbles, &graph)?;
    let unary = match &cfg.probmap_prefix {
        Some(prefix) => unary_from_probmap(prefix, &graph, scribbles.label_count())?,
        None => unary_from_means(&graph, &seed_means(&graph, &scribbles)),
    };
    Ok(PreparedInput {
        graph,
        scribbles,
        unary,
        warnings: note.into_iter().collect(),
    })
}

/// Statistics written as JSON for each run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub model: Variant,
    /// `None` when no feasible labeling was found.
    pub energy: Option<f64>,
    /// `None` for the heuristic, which has no bound.
    pub lower_bound: Option<f64>,
    pub gap: Option<f64>,
    pub status: String,
    pub cuts_added: usize,
    pub separation_rounds: usize,
    pub nodes_explored: usize,
    pub time_seconds: f64,
    pub unlabeled_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heuristic_energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize") + "\n"
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stats: RunStats,
    pub labeling: Option<Labeling>,
    pub log: Vec<ProgressEvent>,
    pub cut_log: Vec<CutLogRecord>,
    pub instance: MrfInstance,
}

/// Runs one variant on prepared data.
pub fn run_variant(
    input: &PreparedInput,
    variant: Variant,
    cfg: &RunConfig,
) -> Result<RunOutcome, PipelineError> {
    let start = Instant::now();
    let inst = build_instance(
        input.graph.clone(),
        input.unary.clone(),
        &input.scribbles,
        cfg.lambda,
        variant,
    )?;
    let mut warnings: Vec<String> = input.warnings.clone();
    warnings.extend(inst.warnings().iter().cloned());
    let n = inst.node_count().max(1) as f64;
    match variant {
        Variant::L0H => {
            let out = region_fusion(&input.graph, &input.scribbles, cfg.eta)?;
            let e = energy(&inst, &out.labeling)?;
            let stats = RunStats {
                model: variant,
                energy: Some(e),
                lower_bound: None,
                gap: None,
                status: "heuristic".into(),
                cuts_added: 0,
                separation_rounds: 0,
                nodes_explored: 0,
                time_seconds: start.elapsed().as_secs_f64(),
                unlabeled_fraction: 0.0,
                heuristic_energy: Some(e),
                stop_reason: None,
                warnings,
            };
            Ok(RunOutcome {
                stats,
                labeling: Some(out.labeling),
                log: Vec::new(),
                cut_log: Vec::new(),
                instance: inst,
            })
        }
        Variant::LpPc => {
            let r =
                branch_cut::solve_relaxation(&inst, Some(Duration::from_secs_f64(cfg.time_limit)))?;
            let stats = RunStats {
                model: variant,
                energy: finite(r.objective),
                lower_bound: finite(r.objective),
                gap: finite(r.objective).map(|_| 0.0),
                status: r.status.as_str().into(),
                cuts_added: r.counters.cuts_added,
                separation_rounds: r.counters.separation_rounds,
                nodes_explored: 0,
                time_seconds: start.elapsed().as_secs_f64(),
                unlabeled_fraction: r.labeling.unlabeled_count() as f64 / n,
                heuristic_energy: None,
                stop_reason: None,
                warnings,
            };
            Ok(RunOutcome {
                stats,
                labeling: Some(r.labeling),
                log: Vec::new(),
                cut_log: r.cut_log,
                instance: inst,
            })
        }
        Variant::IlpPc | Variant::IlpPcb | Variant::IlpP => {
            let mut warm = None;
            let mut heuristic_energy = None;
            if cfg.warm_start && variant != Variant::IlpP {
                match region_fusion(&input.graph, &input.scribbles, cfg.eta) {
                    Ok(out) => {
                        heuristic_energy = Some(energy(&inst, &out.labeling)?);
                        warm = Some(out.labeling);
                    }
                    Err(e) => warnings.push(format!("warm start unavailable: {e}")),
                }
            }
            let mut limits = cfg.limits();
            if let Some(t) = limits.time_limit {
                limits.time_limit = Some(t.saturating_sub(start.elapsed()));
            }
            let r = branch_cut::solve(&inst, warm.as_ref(), &limits)?;
            let unlabeled = if r.labeling.is_some() { 0.0 } else { 1.0 };
            let stats = RunStats {
                model: variant,
                energy: finite(r.energy),
                lower_bound: finite(r.lower_bound),
                gap: finite(r.gap),
                status: r.status.as_str().into(),
                cuts_added: r.counters.cuts_added,
                separation_rounds: r.counters.separation_rounds,
                nodes_explored: r.counters.nodes_explored,
                time_seconds: start.elapsed().as_secs_f64(),
                unlabeled_fraction: unlabeled,
                heuristic_energy,
                stop_reason: r.stop_reason.clone(),
                warnings,
            };
            Ok(RunOutcome {
                stats,
                labeling: r.labeling,
                log: r.log,
                cut_log: r.cut_log,
                instance: inst,
            })
        }
    }
}

/// Loads inputs and runs `cfg.variant`.
pub fn run_single(cfg: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let input = prepare(cfg)?;
    run_variant(&input, cfg.variant, cfg)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|source| PipelineError::Write {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_stats(path: impl AsRef<Path>, stats: &RunStats) -> Result<(), PipelineError> {
    write_file(path.as_ref(), stats.to_json().as_bytes())
}

/// Per-pixel label values: `label + 1`, or 0 for unlabeled nodes.
pub fn label_map_samples(graph: &RagGraph, lab: &Labeling) -> Result<Vec<u32>, PipelineError> {
    let map = graph
        .pixel_map()
        .ok_or_else(|| PipelineError::LabelMap("graph has no pixel map".into()))?;
    if lab.len() != graph.node_count() {
        return Err(PipelineError::LabelMap(format!(
            "labeling has {} nodes, graph has {}",
            lab.len(),
            graph.node_count()
        )));
    }
    Ok(map
        .pixel_node
        .iter()
        .map(|&node| lab.get(node).map_or(0, |l| l as u32 + 1))
        .collect())
}

pub fn write_label_map(
    path: impl AsRef<Path>,
    graph: &RagGraph,
    lab: &Labeling,
) -> Result<(), PipelineError> {
    let samples = label_map_samples(graph, lab)?;
    let map = graph.pixel_map().expect("checked above");
    let sixteen = samples.iter().any(|&v| v > 255);
    write_pgm(path, map.width, map.height, &samples, sixteen)?;
    Ok(())
}

/// Reads a label map back into a node labeling; every node's pixels must
/// agree.
pub fn read_label_map(path: impl AsRef<Path>, graph: &RagGraph) -> Result<Labeling, PipelineError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let raw = decode_raw(&bytes)?;
    let map = graph
        .pixel_map()
        .ok_or_else(|| PipelineError::LabelMap("graph has no pixel map".into()))?;
    if raw.channels != 1 || (raw.width, raw.height) != (map.width, map.height) {
        return Err(PipelineError::LabelMap(format!(
            "expected a {}x{} single-channel map",
            map.width, map.height
        )));
    }
    let mut labels: Vec<Option<Option<usize>>> = vec![None; graph.node_count()];
    for (p, &v) in raw.samples.iter().enumerate() {
        let node = map.pixel_node[p];
        let value = (v > 0).then(|| v as usize - 1);
        match labels[node] {
            None => labels[node] = Some(value),
            Some(prev) if prev == value => {}
            Some(_) => {
                return Err(PipelineError::LabelMap(format!(
                    "pixels of node {node} carry different labels"
                )))
            }
        }
    }
    Ok(Labeling::partial(
        labels.into_iter().map(|l| l.flatten()).collect(),
    ))
}

pub fn progress_csv(log: &[ProgressEvent]) -> String {
    let mut out = String::from("time_seconds,nodes,incumbent,lower_bound,gap,cuts\n");
    for e in log {
        let _ = writeln!(
            out,
            "{:.6},{},{},{},{},{}",
            e.time_seconds, e.nodes, e.incumbent, e.lower_bound, e.gap, e.cuts
        );
    }
    out
}

pub fn cut_log_csv(records: &[CutLogRecord]) -> String {
    let mut out = String::from("round,label,component_size,layers,layer_sizes\n");
    for r in records {
        let sizes: Vec<String> = r.layer_sizes.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.round,
            r.label + 1,
            r.component_size,
            r.layers,
            sizes.join(";")
        );
    }
    out
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub stats: RunStats,
    /// Ordering relations this row violates, if any.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub error: Option<(Variant, String)>,
}

impl Comparison {
    pub fn is_ok(&self) -> bool {
        self.error.is_none() && self.rows.iter().all(|r| r.violations.is_empty())
    }

    pub fn to_csv(&self, include_time: bool) -> String {
        let mut out = String::from("model,status,energy,lower_bound,gap");
        if include_time {
            out.push_str(",time_seconds");
        }
        out.push_str(",cuts_added,separation_rounds,nodes_explored,unlabeled_fraction,ordering\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for row in &self.rows {
            let s = &row.stats;
            let _ = write!(
                out,
                "{},{},{},{},{}",
                s.model,
                s.status,
                opt(s.energy),
                opt(s.lower_bound),
                opt(s.gap)
            );
            if include_time {
                let _ = write!(out, ",{:.6}", s.time_seconds);
            }
            let ordering = if row.violations.is_empty() {
                "ok".to_string()
            } else {
                format!("\"{}\"", row.violations.join("; "))
            };
            let _ = writeln!(
                out,
                ",{},{},{},{},{}",
                s.cuts_added, s.separation_rounds, s.nodes_explored, s.unlabeled_fraction, ordering
            );
        }
        if let Some((variant, msg)) = &self.error {
            let _ = write!(out, "{variant},error,,,");
            if include_time {
                out.push(',');
            }
            let _ = writeln!(out, ",,,,,\"{}\"", msg.replace('"', "'"));
        }
        out
    }
}

/// Checks the relaxation orderings against the ILP-PC row: relaxations have
/// bounds at most its incumbent, the heuristic is at least its bound.
pub fn check_ordering(rows: &mut [CompareRow]) {
    let Some(pc) = rows.iter().find(|r| r.stats.model == Variant::IlpPc) else {
        return;
    };
    let (pc_energy, pc_bound) = (pc.stats.energy, pc.stats.lower_bound);
    for row in rows.iter_mut() {
        let s = &row.stats;
        match s.model {
            Variant::IlpP | Variant::IlpPcb | Variant::LpPc => {
                if let (Some(lb), Some(i)) = (s.lower_bound, pc_energy) {
                    if lb > i + ORDER_TOL * i.abs().max(1.0) {
                        row.violations
                            .push(format!("{} bound {lb} exceeds ILP-PC energy {i}", s.model));
                    }
                }
            }
            Variant::L0H => {
                if let (Some(e), Some(lb)) = (s.energy, pc_bound) {
                    if e < lb - ORDER_TOL * lb.abs().max(1.0) {
                        row.violations
                            .push(format!("L0-H energy {e} is below ILP-PC bound {lb}"));
                    }
                }
            }
            Variant::IlpPc => {
                if let (Some(e), Some(lb), Some(g)) = (s.energy, s.lower_bound, s.gap) {
                    if (relative_gap(e, lb) - g).abs() > 1e-12 {
                        row.violations
                            .push(format!("gap {g} disagrees with (I-LP)/I"));
                    }
                }
            }
        }
    }
}

/// Runs every variant on the same prepared input. Variants run on separate
/// threads when `parallel` is set; rows keep the requested order.
pub fn run_compare(
    cfg: &RunConfig,
    variants: &[Variant],
    parallel: bool,
) -> Result<Comparison, PipelineError> {
    let input = prepare(cfg)?;
    Ok(compare_prepared(&input, cfg, variants, parallel))
}

pub fn compare_prepared(
    input: &PreparedInput,
    cfg: &RunConfig,
    variants: &[Variant],
    parallel: bool,
) -> Comparison {
    let results: Vec<Result<RunOutcome, PipelineError>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = variants
                .iter()
                .map(|&v| scope.spawn(move || run_variant(input, v, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("solver thread panicked"))
                .collect()
        })
    } else {
        variants
            .iter()
            .map(|&v| run_variant(input, v, cfg))
            .collect()
    };
    let mut rows = Vec::new();
    let mut error = None;
    for (&variant, result) in variants.iter().zip(results) {
        match result {
            Ok(outcome) => rows.push(CompareRow {
                stats: outcome.stats,
                violations: Vec::new(),
            }),
            Err(e) => {
                error = Some((variant, e.to_string()));
                break;
            }
        }
    }
    check_ordering(&mut rows);
    Comparison { rows, error }
}
