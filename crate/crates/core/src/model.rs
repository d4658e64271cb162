//! The optimization instance: Potts energy with σ/γ weighting, scribble
//! fixings and per-label connectivity requirements, plus its lowering to a
//! linear program over `x` (node/label indicators) and per-edge slacks.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::imagegraph::RagGraph;
use crate::lp::{LpProblem, Row, Sense};
use crate::scribble::{ScribbleSet, UnaryField};

/// Integrality / labeling extraction tolerance.
pub const LABEL_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("lambda {0} outside [0, 1]")]
    Lambda(f64),
    #[error("unary field is {got_n}x{got_k}, instance needs {n}x{k}")]
    Shape {
        got_n: usize,
        got_k: usize,
        n: usize,
        k: usize,
    },
    #[error("variant {0} needs a label flagged as background")]
    MissingBackground(Variant),
    #[error("node {0} is unlabeled")]
    Unlabeled(usize),
    #[error("labeling has {got} nodes, instance has {expected}")]
    LabelingLength { got: usize, expected: usize },
    #[error("node {node} has label {label}, but only {k} labels exist")]
    LabelRange { node: usize, label: usize, k: usize },
    #[error("node {node}: labels {first} and {second} both reach 1 - tol")]
    Ambiguous {
        node: usize,
        first: usize,
        second: usize,
    },
    #[error("vector has {got} entries, expected {expected}")]
    VectorLength { got: usize, expected: usize },
    #[error("unknown model {0:?} (expected ilp-pc, ilp-pcb, ilp-p, lp-pc or l0h)")]
    UnknownVariant(String),
}

/// The five compared models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Variant {
    /// Every label connected.
    #[serde(rename = "ilp-pc")]
    IlpPc,
    /// Every label but the background connected.
    #[serde(rename = "ilp-pcb")]
    IlpPcb,
    /// No connectivity.
    #[serde(rename = "ilp-p")]
    IlpP,
    /// LP relaxation of the connected model.
    #[serde(rename = "lp-pc")]
    LpPc,
    /// Region-fusion heuristic.
    #[serde(rename = "l0h")]
    L0H,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::IlpPc,
        Variant::IlpPcb,
        Variant::IlpP,
        Variant::LpPc,
        Variant::L0H,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::IlpPc => "ilp-pc",
            Variant::IlpPcb => "ilp-pcb",
            Variant::IlpP => "ilp-p",
            Variant::LpPc => "lp-pc",
            Variant::L0H => "l0h",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == normalized || (normalized == "l0-h" && *v == Variant::L0H))
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

/// Node labels; `None` marks a node left unlabeled by a fractional LP.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Labeling {
    labels: Vec<Option<usize>>,
}

impl Labeling {
    pub fn total(labels: Vec<usize>) -> Self {
        Self {
            labels: labels.into_iter().map(Some).collect(),
        }
    }

    pub fn partial(labels: Vec<Option<usize>>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, node: usize) -> Option<usize> {
        self.labels[node]
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn is_total(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    pub fn unlabeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Labels of a total labeling.
    pub fn to_total(&self) -> Result<Vec<usize>, ModelError> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or(ModelError::Unlabeled(i)))
            .collect()
    }

    /// Membership mask of label `l`.
    pub fn mask(&self, l: usize) -> Vec<bool> {
        self.labels.iter().map(|&x| x == Some(l)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MrfInstance {
    graph: RagGraph,
    unary: UnaryField,
    lambda: f64,
    variant: Variant,
    connectivity: Vec<bool>,
    roots: Vec<usize>,
    fixed: Vec<(usize, usize)>,
    warnings: Vec<String>,
}

pub fn build_instance(
    graph: RagGraph,
    unary: UnaryField,
    scribbles: &ScribbleSet,
    lambda: f64,
    variant: Variant,
) -> Result<MrfInstance, ModelError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ModelError::Lambda(lambda));
    }
    let (n, k) = (graph.node_count(), scribbles.label_count());
    if unary.node_count() != n || unary.label_count() != k {
        return Err(ModelError::Shape {
            got_n: unary.node_count(),
            got_k: unary.label_count(),
            n,
            k,
        });
    }
    let mut warnings = Vec::new();
    let connectivity = match variant {
        Variant::IlpP => vec![false; k],
        Variant::IlpPcb => {
            let bg = scribbles
                .background()
                .ok_or(ModelError::MissingBackground(variant))?;
            (0..k).map(|l| l != bg).collect()
        }
        Variant::IlpPc | Variant::LpPc | Variant::L0H => {
            if let Some(bg) = scribbles.background() {
                warnings.push(format!(
                    "label {} is flagged as background, but {variant} requires every label to be connected; flag ignored",
                    bg + 1
                ));
            }
            vec![true; k]
        }
    };
    let mut fixed: Vec<(usize, usize)> = scribbles
        .labels()
        .iter()
        .enumerate()
        .flat_map(|(l, seeds)| seeds.nodes.iter().map(move |&i| (i, l)))
        .collect();
    fixed.sort_unstable();
    Ok(MrfInstance {
        graph,
        unary,
        lambda,
        variant,
        connectivity,
        roots: scribbles.labels().iter().map(|s| s.root).collect(),
        fixed,
        warnings,
    })
}

#[derive(Debug, Serialize)]
struct InstanceSummary<'a> {
    variant: Variant,
    nodes: usize,
    edges: usize,
    labels: usize,
    lambda: f64,
    connectivity_required: &'a [bool],
    roots: &'a [usize],
    fixed_assignments: usize,
    lp_columns: usize,
    lp_rows: usize,
}

impl MrfInstance {
    pub fn graph(&self) -> &RagGraph {
        &self.graph
    }

    pub fn unary(&self) -> &UnaryField {
        &self.unary
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn label_count(&self) -> usize {
        self.unary.label_count()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn connectivity_required(&self, l: usize) -> bool {
        self.connectivity[l]
    }

    pub fn connectivity(&self) -> &[bool] {
        &self.connectivity
    }

    pub fn root(&self, l: usize) -> usize {
        self.roots[l]
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    /// `(node, label)` pairs sorted by node.
    pub fn fixed_assignments(&self) -> &[(usize, usize)] {
        &self.fixed
    }

    pub fn fixed_label(&self, node: usize) -> Option<usize> {
        self.fixed
            .binary_search_by_key(&node, |&(i, _)| i)
            .ok()
            .map(|idx| self.fixed[idx].1)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Same data under another model variant.
    pub fn with_variant(
        &self,
        scribbles: &ScribbleSet,
        variant: Variant,
    ) -> Result<MrfInstance, ModelError> {
        build_instance(
            self.graph.clone(),
            self.unary.clone(),
            scribbles,
            self.lambda,
            variant,
        )
    }

    pub fn respects_fixings(&self, lab: &Labeling) -> bool {
        self.fixed.iter().all(|&(i, l)| lab.get(i) == Some(l))
    }

    pub fn summary_json(&self) -> String {
        let m = self.edge_count_rows();
        serde_json::to_string_pretty(&InstanceSummary {
            variant: self.variant,
            nodes: self.node_count(),
            edges: self.graph.edge_count(),
            labels: self.label_count(),
            lambda: self.lambda,
            connectivity_required: &self.connectivity,
            roots: &self.roots,
            fixed_assignments: self.fixed.len(),
            lp_columns: self.node_count() * self.label_count()
                + 2 * self.graph.edge_count() * self.label_count(),
            lp_rows: m,
        })
        .expect("summary serializes")
    }

    fn edge_count_rows(&self) -> usize {
        self.node_count() + self.graph.edge_count() * self.label_count()
    }
}

/// Potts energy `(1-λ)·Σ σ_i c_{i,x(i)} + λ·Σ_E γ_ij·2·[x(i) ≠ x(j)]`.
///
/// The doubled pairwise count is the per-label sum `Σ_ℓ |x_iℓ - x_jℓ|`.
pub fn energy(inst: &MrfInstance, lab: &Labeling) -> Result<f64, ModelError> {
    let n = inst.node_count();
    if lab.len() != n {
        return Err(ModelError::LabelingLength {
            got: lab.len(),
            expected: n,
        });
    }
    let labels = lab.to_total()?;
    let k = inst.label_count();
    if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(ModelError::LabelRange { node, label, k });
    }
    let graph = inst.graph();
    let data: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| graph.size(i) as f64 * inst.unary().cost(i, l))
        .sum();
    let cut: f64 = graph
        .edges()
        .iter()
        .filter(|e| labels[e.a] != labels[e.b])
        .map(|e| 2.0 * e.boundary as f64)
        .sum();
    Ok((1.0 - inst.lambda()) * data + inst.lambda() * cut)
}

/// Column layout and LP of the lowered model (without connectivity rows).
#[derive(Debug, Clone)]
pub struct VariableSpace {
    n: usize,
    k: usize,
    edge_count: usize,
    pub problem: LpProblem,
}

impl VariableSpace {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn label_count(&self) -> usize {
        self.k
    }

    pub fn x(&self, node: usize, label: usize) -> usize {
        node * self.k + label
    }

    pub fn x_count(&self) -> usize {
        self.n * self.k
    }

    /// Column of ε⁺ for `(edge, label)`; ε⁻ is the next column.
    pub fn eps_plus(&self, edge: usize, label: usize) -> usize {
        self.x_count() + 2 * (edge * self.k + label)
    }

    pub fn eps_minus(&self, edge: usize, label: usize) -> usize {
        self.eps_plus(edge, label) + 1
    }

    pub fn column_count(&self) -> usize {
        self.x_count() + 2 * self.edge_count * self.k
    }

    /// `(node, label)` of an `x` column.
    pub fn x_owner(&self, column: usize) -> Option<(usize, usize)> {
        (column < self.x_count()).then(|| (column / self.k, column % self.k))
    }

    /// Values of the `x` columns of `label`.
    pub fn label_values<'a>(
        &self,
        values: &'a [f64],
        label: usize,
    ) -> impl Iterator<Item = f64> + 'a {
        let k = self.k;
        (0..self.n).map(move |i| values[i * k + label])
    }
}

pub fn lower_model(inst: &MrfInstance) -> VariableSpace {
    let (n, k) = (inst.node_count(), inst.label_count());
    let graph = inst.graph();
    let m = graph.edge_count();
    let columns = n * k + 2 * m * k;
    let mut objective = vec![0.0; columns];
    let mut lower = vec![0.0; columns];
    let mut upper = vec![1.0; columns];
    let lam = inst.lambda();
    for i in 0..n {
        for l in 0..k {
            objective[i * k + l] = (1.0 - lam) * graph.size(i) as f64 * inst.unary().cost(i, l);
        }
    }
    let space_probe = VariableSpace {
        n,
        k,
        edge_count: m,
        problem: LpProblem::default(),
    };
    for (e, edge) in graph.edges().iter().enumerate() {
        for l in 0..k {
            let w = lam * edge.boundary as f64;
            objective[space_probe.eps_plus(e, l)] = w;
            objective[space_probe.eps_minus(e, l)] = w;
        }
    }
    for &(i, l) in inst.fixed_assignments() {
        for other in 0..k {
            let col = i * k + other;
            if other == l {
                lower[col] = 1.0;
                upper[col] = 1.0;
            } else {
                lower[col] = 0.0;
                upper[col] = 0.0;
            }
        }
    }
    let mut rows = Vec::with_capacity(n + m * k);
    for i in 0..n {
        rows.push(Row {
            coeffs: (0..k).map(|l| (i * k + l, 1.0)).collect(),
            sense: Sense::Eq,
            rhs: 1.0,
        });
    }
    for (e, edge) in graph.edges().iter().enumerate() {
        for l in 0..k {
            rows.push(Row {
                coeffs: vec![
                    (edge.a * k + l, 1.0),
                    (edge.b * k + l, -1.0),
                    (space_probe.eps_plus(e, l), -1.0),
                    (space_probe.eps_minus(e, l), 1.0),
                ],
                sense: Sense::Eq,
                rhs: 0.0,
            });
        }
    }
    VariableSpace {
        problem: LpProblem {
            objective,
            lower,
            upper,
            rows,
        },
        ..space_probe
    }
}

/// Labels every node whose `x` value reaches `1 - tol`; others stay unlabeled.
pub fn extract_labeling(
    inst: &MrfInstance,
    values: &[f64],
    tol: f64,
) -> Result<Labeling, ModelError> {
    let (n, k) = (inst.node_count(), inst.label_count());
    if values.len() < n * k {
        return Err(ModelError::VectorLength {
            got: values.len(),
            expected: n * k,
        });
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut found = None;
        for l in 0..k {
            if values[i * k + l] >= 1.0 - tol {
                if let Some(first) = found {
                    return Err(ModelError::Ambiguous {
                        node: i,
                        first,
                        second: l,
                    });
                }
                found = Some(l);
            }
        }
        labels.push(found);
    }
    Ok(Labeling::partial(labels))
}

/// Integral point of the lowered model for a total labeling, with minimal
/// slacks (`ε⁺ + ε⁻ = |x_iℓ - x_jℓ|`).
pub fn labeling_to_point(
    inst: &MrfInstance,
    space: &VariableSpace,
    lab: &Labeling,
) -> Result<Vec<f64>, ModelError> {
    let labels = lab.to_total()?;
    let mut values = vec![0.0; space.column_count()];
    for (i, &l) in labels.iter().enumerate() {
        values[space.x(i, l)] = 1.0;
    }
    for (e, edge) in inst.graph().edges().iter().enumerate() {
        if labels[edge.a] != labels[edge.b] {
            values[space.eps_plus(e, labels[edge.a])] = 1.0;
            values[space.eps_minus(e, labels[edge.b])] = 1.0;
        }
    }
    Ok(values)
}
