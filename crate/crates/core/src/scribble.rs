//! Scribble seeds and unary data costs.
//!
//! Labels are 1-based in files and 0-based everywhere inside the library.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::imagegraph::{decode_raw, RagGraph};

#[derive(Debug, Error)]
pub enum ScribbleError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scribble JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("label ids must be consecutive from 1; found {found} at position {position}")]
    LabelIds { position: usize, found: i64 },
    #[error("at least two labels are required, got {0}")]
    TooFewLabels(usize),
    #[error("label {0} has no scribble pixels")]
    EmptyLabel(usize),
    #[error("label {label}: pixel ({row}, {col}) is outside the image")]
    OutOfBounds {
        label: usize,
        row: usize,
        col: usize,
    },
    #[error("label {label}: node {node} does not exist")]
    NodeOutOfRange { label: usize, node: usize },
    #[error("conflicting scribbles at node {node} (labels {first} and {second})")]
    Conflict {
        node: usize,
        first: usize,
        second: usize,
    },
    #[error("more than one label is flagged as background")]
    MultipleBackground,
    #[error("graph has no pixel map; pixel scribbles cannot be mapped")]
    NoPixelMap,
    #[error("probability map {path}: {detail}")]
    ProbMap { path: String, detail: String },
    #[error("unary costs must be finite and nonnegative (node {node}, label {label}: {value})")]
    InvalidCost {
        node: usize,
        label: usize,
        value: f64,
    },
    #[error("unary field has {got} entries, expected {expected}")]
    UnaryShape { got: usize, expected: usize },
}

/// Seeds of one label, resolved to graph nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSeeds {
    pub background: bool,
    /// Covered nodes, sorted ascending.
    pub nodes: Vec<usize>,
    /// Node of the first listed scribble pixel.
    pub root: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScribbleSet {
    labels: Vec<LabelSeeds>,
}

#[derive(Deserialize)]
struct ScribbleFile {
    labels: Vec<ScribbleLabel>,
}

#[derive(Deserialize)]
struct ScribbleLabel {
    id: i64,
    #[serde(default)]
    background: bool,
    pixels: Vec<[usize; 2]>,
}

impl ScribbleSet {
    /// Builds a scribble set from per-label node lists; the first node of
    /// each list is the root.
    pub fn from_nodes(
        graph: &RagGraph,
        per_label: &[Vec<usize>],
        background: Option<usize>,
    ) -> Result<Self, ScribbleError> {
        let mut labels = Vec::with_capacity(per_label.len());
        for (l, nodes) in per_label.iter().enumerate() {
            if let Some(&node) = nodes.iter().find(|&&v| v >= graph.node_count()) {
                return Err(ScribbleError::NodeOutOfRange { label: l + 1, node });
            }
            let root = *nodes.first().ok_or(ScribbleError::EmptyLabel(l + 1))?;
            let mut sorted = nodes.clone();
            sorted.sort_unstable();
            sorted.dedup();
            labels.push(LabelSeeds {
                background: background == Some(l),
                nodes: sorted,
                root,
            });
        }
        Self::validated(labels, graph.node_count())
    }

    /// Maps `(row, col)` pixel scribbles onto the nodes of an image graph.
    pub fn from_pixels(
        graph: &RagGraph,
        per_label: &[Vec<(usize, usize)>],
        background: Option<usize>,
    ) -> Result<Self, ScribbleError> {
        let map = graph.pixel_map().ok_or(ScribbleError::NoPixelMap)?;
        let mut nodes = Vec::with_capacity(per_label.len());
        for (l, pixels) in per_label.iter().enumerate() {
            let mut list = Vec::with_capacity(pixels.len());
            for &(row, col) in pixels {
                if row >= map.height || col >= map.width {
                    return Err(ScribbleError::OutOfBounds {
                        label: l + 1,
                        row,
                        col,
                    });
                }
                list.push(map.pixel_node[row * map.width + col]);
            }
            nodes.push(list);
        }
        Self::from_nodes(graph, &nodes, background)
    }

    pub fn from_json_str(json: &str, graph: &RagGraph) -> Result<Self, ScribbleError> {
        let file: ScribbleFile = serde_json::from_str(json)?;
        let mut background = None;
        let mut per_label = Vec::with_capacity(file.labels.len());
        for (position, label) in file.labels.iter().enumerate() {
            if label.id != position as i64 + 1 {
                return Err(ScribbleError::LabelIds {
                    position,
                    found: label.id,
                });
            }
            if label.background {
                if background.is_some() {
                    return Err(ScribbleError::MultipleBackground);
                }
                background = Some(position);
            }
            per_label.push(
                label
                    .pixels
                    .iter()
                    .map(|&[r, c]| (r, c))
                    .collect::<Vec<_>>(),
            );
        }
        Self::from_pixels(graph, &per_label, background)
    }

    fn validated(labels: Vec<LabelSeeds>, n: usize) -> Result<Self, ScribbleError> {
        if labels.len() < 2 {
            return Err(ScribbleError::TooFewLabels(labels.len()));
        }
        if labels.iter().filter(|l| l.background).count() > 1 {
            return Err(ScribbleError::MultipleBackground);
        }
        let mut owner = vec![usize::MAX; n];
        for (l, seeds) in labels.iter().enumerate() {
            for &node in &seeds.nodes {
                if owner[node] != usize::MAX {
                    return Err(ScribbleError::Conflict {
                        node,
                        first: owner[node] + 1,
                        second: l + 1,
                    });
                }
                owner[node] = l;
            }
        }
        Ok(Self { labels })
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, l: usize) -> &LabelSeeds {
        &self.labels[l]
    }

    pub fn labels(&self) -> &[LabelSeeds] {
        &self.labels
    }

    pub fn root(&self, l: usize) -> usize {
        self.labels[l].root
    }

    pub fn background(&self) -> Option<usize> {
        self.labels.iter().position(|l| l.background)
    }

    /// Label covering `node`, if any.
    pub fn owner(&self, node: usize) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.nodes.binary_search(&node).is_ok())
    }
}

pub fn parse_scribbles(
    path: impl AsRef<Path>,
    graph: &RagGraph,
) -> Result<ScribbleSet, ScribbleError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScribbleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScribbleSet::from_json_str(&text, graph)
}

/// Data cost matrix, `n` nodes by `k` labels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    k: usize,
    costs: Vec<f64>,
}

impl UnaryField {
    pub fn new(n: usize, k: usize, costs: Vec<f64>) -> Result<Self, ScribbleError> {
        if costs.len() != n * k {
            return Err(ScribbleError::UnaryShape {
                got: costs.len(),
                expected: n * k,
            });
        }
        if let Some(idx) = costs.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(ScribbleError::InvalidCost {
                node: idx / k,
                label: idx % k,
                value: costs[idx],
            });
        }
        Ok(Self { k, costs })
    }

    pub fn node_count(&self) -> usize {
        self.costs.len() / self.k
    }

    pub fn label_count(&self) -> usize {
        self.k
    }

    pub fn cost(&self, node: usize, label: usize) -> f64 {
        self.costs[node * self.k + label]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }
}

/// σ-weighted mean feature of the nodes covered by each label.
pub fn seed_means(graph: &RagGraph, scribbles: &ScribbleSet) -> Vec<Vec<f64>> {
    let c = graph.channels();
    scribbles
        .labels()
        .iter()
        .map(|seeds| {
            let mut sum = vec![0.0; c];
            let mut weight = 0.0;
            for &node in &seeds.nodes {
                let size = graph.size(node) as f64;
                weight += size;
                for (s, f) in sum.iter_mut().zip(graph.feature(node)) {
                    *s += size * f;
                }
            }
            sum.into_iter().map(|s| s / weight).collect()
        })
        .collect()
}

/// Mean absolute per-channel difference of two feature vectors.
pub fn feature_distance(a: &[f64], b: &[f64]) -> f64 {
    let total: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    total / a.len() as f64
}

pub fn unary_from_means(graph: &RagGraph, means: &[Vec<f64>]) -> UnaryField {
    let n = graph.node_count();
    let mut costs = Vec::with_capacity(n * means.len());
    for i in 0..n {
        for mean in means {
            costs.push(feature_distance(graph.feature(i), mean));
        }
    }
    UnaryField::new(n, means.len(), costs).expect("distances of [0,1] features are valid costs")
}

const PROB_TOLERANCE: f64 = 1e-6;

/// Unaries `1 - p` from per-pixel probability planes (one per label,
/// row-major, image-sized). Node probabilities are σ-weighted pixel means.
pub fn unary_from_probabilities(
    graph: &RagGraph,
    planes: &[Vec<f64>],
) -> Result<UnaryField, ScribbleError> {
    let map = graph.pixel_map().ok_or(ScribbleError::NoPixelMap)?;
    let pixel_count = map.width * map.height;
    let k = planes.len();
    for (l, plane) in planes.iter().enumerate() {
        let label = format!("label {}", l + 1);
        if plane.len() != pixel_count {
            return Err(ScribbleError::ProbMap {
                path: label,
                detail: format!("{} values for {pixel_count} pixels", plane.len()),
            });
        }
        if let Some(v) = plane
            .iter()
            .find(|v| !(-PROB_TOLERANCE..=1.0 + PROB_TOLERANCE).contains(*v))
        {
            return Err(ScribbleError::ProbMap {
                path: label,
                detail: format!("probability {v} outside [0, 1]"),
            });
        }
    }
    let n = graph.node_count();
    let mut costs = Vec::with_capacity(n * k);
    for members in &map.members {
        for plane in planes {
            let mean = members.iter().map(|&p| plane[p]).sum::<f64>() / members.len() as f64;
            costs.push((1.0 - mean).clamp(0.0, 1.0));
        }
    }
    UnaryField::new(n, k, costs)
}

/// Path of the probability plane for 0-based label `l`.
pub fn probmap_path(prefix: &str, l: usize) -> String {
    format!("{prefix}_label{}.pgm", l + 1)
}

/// Loads `<prefix>_label<L>.pgm` for every label and converts it to unaries.
pub fn unary_from_probmap(
    prefix: &str,
    graph: &RagGraph,
    k: usize,
) -> Result<UnaryField, ScribbleError> {
    let map = graph.pixel_map().ok_or(ScribbleError::NoPixelMap)?;
    let mut planes = Vec::with_capacity(k);
    for l in 0..k {
        let path = probmap_path(prefix, l);
        let bytes = std::fs::read(&path).map_err(|source| ScribbleError::Io {
            path: path.clone(),
            source,
        })?;
        let raw = decode_raw(&bytes).map_err(|e| ScribbleError::ProbMap {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        if raw.channels != 1 || raw.maxval != 255 {
            return Err(ScribbleError::ProbMap {
                path,
                detail: "expected a P5 image with maxval 255".into(),
            });
        }
        if (raw.width, raw.height) != (map.width, map.height) {
            return Err(ScribbleError::ProbMap {
                path,
                detail: format!(
                    "dimensions {}x{} differ from image {}x{}",
                    raw.width, raw.height, map.width, map.height
                ),
            });
        }
        planes.push(raw.samples.iter().map(|&v| f64::from(v) / 255.0).collect());
    }
    unary_from_probabilities(graph, &planes)
}
