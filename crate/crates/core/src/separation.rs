//! Connectivity checks and rooted vertex-separator cuts.
//!
//! For a label whose active node set splits into several components, every
//! component `H` not containing the root `r` is cut off with inequalities
//! `x_i ≤ Σ_{s∈S} x_s`, where `i` is the lowest node of `H` and `S` is one
//! breadth-first layer around `H` (nodes at equal distance from `H`). The
//! layers are generated outward until either `|H|` layers exist or the next
//! layer would touch another active node.

use std::collections::VecDeque;

use thiserror::Error;

use crate::imagegraph::RagGraph;
use crate::lp::{Row, Sense};
use crate::model::{Labeling, MrfInstance, VariableSpace};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SeparationError {
    #[error("label {0} has no active nodes")]
    NoActiveNodes(usize),
    #[error("root {root} of label {label} is not active")]
    InactiveRoot { label: usize, root: usize },
    #[error("component containing node {0} touches the root component; no separator exists")]
    AdjacentToRoot(usize),
    #[error("component containing node {0} includes the root")]
    ContainsRoot(usize),
    #[error("invalid separator for target {target} and root {root}: {reason}")]
    InvalidSeparator {
        target: usize,
        root: usize,
        reason: &'static str,
    },
}

/// Connected components of one label's active node set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveComponents {
    pub label: usize,
    /// Each component sorted ascending; components ordered by lowest node.
    pub components: Vec<Vec<usize>>,
    pub root_component: Option<usize>,
}

impl ActiveComponents {
    pub fn is_connected(&self) -> bool {
        self.components.len() == 1 && self.root_component == Some(0)
    }

    /// Components other than the root's.
    pub fn detached(&self) -> impl Iterator<Item = &[usize]> {
        self.components
            .iter()
            .enumerate()
            .filter(move |(idx, _)| Some(*idx) != self.root_component)
            .map(|(_, c)| c.as_slice())
    }
}

pub fn components_of_mask(
    graph: &RagGraph,
    active: &[bool],
    label: usize,
    root: usize,
) -> ActiveComponents {
    let n = graph.node_count();
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    let mut root_component = None;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !active[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for &(v, _) in graph.neighbors(u) {
                if active[v] && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        if comp.binary_search(&root).is_ok() {
            root_component = Some(components.len());
        }
        components.push(comp);
    }
    ActiveComponents {
        label,
        components,
        root_component,
    }
}

pub fn components_of_label(
    graph: &RagGraph,
    lab: &Labeling,
    label: usize,
    root: usize,
) -> Result<ActiveComponents, SeparationError> {
    let mask = lab.mask(label);
    if !mask.iter().any(|&a| a) {
        return Err(SeparationError::NoActiveNodes(label));
    }
    Ok(components_of_mask(graph, &mask, label, root))
}

/// `x_{target,label} ≤ Σ_{s ∈ separator} x_{s,label}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeparatorCut {
    pub label: usize,
    pub target: usize,
    pub root: usize,
    /// Sorted ascending.
    pub separator: Vec<usize>,
}

impl SeparatorCut {
    /// Builds a cut after checking that `separator` disconnects `target`
    /// from `root` in the graph.
    pub fn new(
        graph: &RagGraph,
        label: usize,
        target: usize,
        root: usize,
        mut separator: Vec<usize>,
    ) -> Result<Self, SeparationError> {
        separator.sort_unstable();
        separator.dedup();
        let invalid = |reason| SeparationError::InvalidSeparator {
            target,
            root,
            reason,
        };
        if target == root {
            return Err(invalid("target equals root"));
        }
        if separator.binary_search(&target).is_ok() || separator.binary_search(&root).is_ok() {
            return Err(invalid("separator contains an endpoint"));
        }
        if graph.neighbors(target).iter().any(|&(v, _)| v == root) {
            return Err(invalid("target is adjacent to root"));
        }
        let n = graph.node_count();
        let mut blocked = vec![false; n];
        for &s in &separator {
            blocked[s] = true;
        }
        let mut queue = VecDeque::from([target]);
        blocked[target] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in graph.neighbors(u) {
                if v == root {
                    return Err(invalid("root reachable without crossing the separator"));
                }
                if !blocked[v] {
                    blocked[v] = true;
                    queue.push_back(v);
                }
            }
        }
        Ok(Self {
            label,
            target,
            root,
            separator,
        })
    }

    /// Whether the inequality holds for a 0/1 membership mask of the label.
    pub fn holds_for_mask(&self, active: &[bool]) -> bool {
        let lhs = i64::from(active[self.target]);
        let rhs: i64 = self.separator.iter().map(|&s| i64::from(active[s])).sum();
        lhs <= rhs
    }

    pub fn holds_for(&self, lab: &Labeling) -> bool {
        self.holds_for_mask(&lab.mask(self.label))
    }

    /// Violation at a fractional point of the lowered model.
    pub fn violation(&self, space: &VariableSpace, values: &[f64]) -> f64 {
        let lhs = values[space.x(self.target, self.label)];
        let rhs: f64 = self
            .separator
            .iter()
            .map(|&s| values[space.x(s, self.label)])
            .sum();
        lhs - rhs
    }

    pub fn to_row(&self, space: &VariableSpace) -> Row {
        let mut coeffs = Vec::with_capacity(self.separator.len() + 1);
        coeffs.push((space.x(self.target, self.label), 1.0));
        coeffs.extend(
            self.separator
                .iter()
                .map(|&s| (space.x(s, self.label), -1.0)),
        );
        Row {
            coeffs,
            sense: Sense::Le,
            rhs: 0.0,
        }
    }
}

/// BFS layers around `component` through nodes inactive for the label,
/// stopping at `|component|` layers or just before a layer that would meet
/// another active node. Returns one cut per layer.
pub fn knearest_separators(
    graph: &RagGraph,
    active: &[bool],
    label: usize,
    component: &[usize],
    root: usize,
) -> Result<Vec<SeparatorCut>, SeparationError> {
    let target = *component
        .iter()
        .min()
        .ok_or(SeparationError::NoActiveNodes(label))?;
    let n = graph.node_count();
    let mut in_component = vec![false; n];
    for &v in component {
        in_component[v] = true;
    }
    if in_component[root] {
        return Err(SeparationError::ContainsRoot(target));
    }
    let mut visited = in_component.clone();
    let mut frontier: Vec<usize> = component.to_vec();
    frontier.sort_unstable();
    let mut layers: Vec<Vec<usize>> = Vec::new();
    while layers.len() < component.len() {
        let mut next = Vec::new();
        let mut hit_active = false;
        for &u in &frontier {
            for &(v, _) in graph.neighbors(u) {
                if visited[v] {
                    continue;
                }
                if active[v] {
                    if layers.is_empty() {
                        // a maximal component has only inactive neighbors
                        return Err(SeparationError::AdjacentToRoot(target));
                    }
                    hit_active = true;
                } else {
                    visited[v] = true;
                    next.push(v);
                }
            }
        }
        if hit_active || next.is_empty() {
            break;
        }
        next.sort_unstable();
        frontier = next.clone();
        layers.push(next);
    }
    layers
        .into_iter()
        .map(|layer| SeparatorCut::new(graph, label, target, root, layer))
        .collect()
}

/// Cuts produced for one detached component, with bookkeeping for logs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentCuts {
    pub label: usize,
    pub component_size: usize,
    pub cuts: Vec<SeparatorCut>,
}

impl ComponentCuts {
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.cuts.iter().map(|c| c.separator.len()).collect()
    }
}

/// Separates per-label membership masks. `masks[l]` must contain the root
/// of every label that requires connectivity.
pub fn separate_masks(
    graph: &RagGraph,
    masks: &[Vec<bool>],
    inst: &MrfInstance,
) -> Result<Vec<ComponentCuts>, SeparationError> {
    let mut out = Vec::new();
    for (label, mask) in masks.iter().enumerate() {
        if !inst.connectivity_required(label) {
            continue;
        }
        let root = inst.root(label);
        if !mask[root] {
            return Err(SeparationError::InactiveRoot { label, root });
        }
        let comps = components_of_mask(graph, mask, label, root);
        for component in comps.detached() {
            let cuts = knearest_separators(graph, mask, label, component, root)?;
            out.push(ComponentCuts {
                label,
                component_size: component.len(),
                cuts,
            });
        }
    }
    Ok(out)
}

/// Detailed separation of an integral labeling.
pub fn separate_labeling(
    graph: &RagGraph,
    lab: &Labeling,
    inst: &MrfInstance,
) -> Result<Vec<ComponentCuts>, SeparationError> {
    let masks: Vec<Vec<bool>> = (0..inst.label_count()).map(|l| lab.mask(l)).collect();
    separate_masks(graph, &masks, inst)
}

/// All violated cuts of an integral labeling; empty iff every required
/// label is connected.
pub fn separate_all(
    graph: &RagGraph,
    lab: &Labeling,
    inst: &MrfInstance,
) -> Result<Vec<SeparatorCut>, SeparationError> {
    Ok(separate_labeling(graph, lab, inst)?
        .into_iter()
        .flat_map(|c| c.cuts)
        .collect())
}
