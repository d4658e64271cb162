//! Greedy region fusion (the L0 heuristic).
//!
//! Starts from one group per label's scribbled nodes plus one singleton per
//! uncovered node, then repeatedly merges adjacent groups `i, j` whenever
//! `σᵢ·σⱼ·|Yᵢ−Yⱼ| ≤ β·γᵢⱼ·(σᵢ+σⱼ)`, with `β` growing as
//! `(iter/100)^2.2 · η`, until exactly `k` groups remain. Groups never
//! combine two scribble tags, and merges only happen across adjacency, so
//! the result is a connected, scribble-consistent labeling.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::imagegraph::RagGraph;
use crate::model::Labeling;
use crate::scribble::ScribbleSet;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("eta must be positive and finite, got {0}")]
    Eta(f64),
    #[error("scribbles of label {} cover a disconnected node set", .0 + 1)]
    DisconnectedScribble(usize),
    #[error("groups {0} and {1} are not adjacent")]
    NotAdjacent(usize, usize),
    #[error("{groups} groups remain but every adjacent pair carries conflicting tags (k = {k})")]
    Stuck { groups: usize, k: usize },
    #[error("group {0} has no scribble tag at termination")]
    Untagged(usize),
}

pub fn beta_schedule(iter: u64, eta: f64) -> f64 {
    (iter as f64 / 100.0).powf(2.2) * eta
}

#[derive(Debug, Clone)]
struct Group {
    sigma: f64,
    /// Σ σ·f per channel.
    weighted: Vec<f64>,
    tag: Option<usize>,
    /// Neighbouring group id → summed boundary.
    adjacent: BTreeMap<usize, u64>,
    members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FusionState {
    k: usize,
    eta: f64,
    beta: f64,
    iter: u64,
    merges: usize,
    /// Keyed by group id, which is the lowest member node.
    groups: BTreeMap<usize, Group>,
    group_of: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub labeling: Labeling,
    pub iterations: u64,
    pub final_beta: f64,
    pub merges: usize,
}

fn is_connected_subset(graph: &RagGraph, nodes: &[usize]) -> bool {
    let mut inside = vec![false; graph.node_count()];
    for &v in nodes {
        inside[v] = true;
    }
    let mut queue = VecDeque::from([nodes[0]]);
    inside[nodes[0]] = false;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &(v, _) in graph.neighbors(u) {
            if inside[v] {
                inside[v] = false;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    reached == nodes.len()
}

pub fn init_state(
    graph: &RagGraph,
    scribbles: &ScribbleSet,
    eta: f64,
) -> Result<FusionState, FusionError> {
    FusionState::new(graph, scribbles, eta)
}

impl FusionState {
    pub fn new(graph: &RagGraph, scribbles: &ScribbleSet, eta: f64) -> Result<Self, FusionError> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(FusionError::Eta(eta));
        }
        let n = graph.node_count();
        let c = graph.channels();
        let mut group_of: Vec<usize> = (0..n).collect();
        let mut tags = vec![None; n];
        for (l, seeds) in scribbles.labels().iter().enumerate() {
            if !is_connected_subset(graph, &seeds.nodes) {
                return Err(FusionError::DisconnectedScribble(l));
            }
            let id = seeds.nodes[0];
            for &v in &seeds.nodes {
                group_of[v] = id;
            }
            tags[id] = Some(l);
        }
        let mut groups: BTreeMap<usize, Group> = BTreeMap::new();
        for v in 0..n {
            let id = group_of[v];
            let sigma = graph.size(v) as f64;
            let g = groups.entry(id).or_insert_with(|| Group {
                sigma: 0.0,
                weighted: vec![0.0; c],
                tag: tags[id],
                adjacent: BTreeMap::new(),
                members: Vec::new(),
            });
            g.sigma += sigma;
            for (acc, f) in g.weighted.iter_mut().zip(graph.feature(v)) {
                *acc += sigma * f;
            }
            g.members.push(v);
        }
        for e in graph.edges() {
            let (ga, gb) = (group_of[e.a], group_of[e.b]);
            if ga != gb {
                *groups.get_mut(&ga).unwrap().adjacent.entry(gb).or_insert(0) += e.boundary;
                *groups.get_mut(&gb).unwrap().adjacent.entry(ga).or_insert(0) += e.boundary;
            }
        }
        Ok(Self {
            k: scribbles.label_count(),
            eta,
            beta: 0.0,
            iter: 0,
            merges: 0,
            groups,
            group_of,
        })
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.keys().copied()
    }

    pub fn group_of(&self, node: usize) -> usize {
        self.group_of[node]
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.groups[&group].members
    }

    pub fn sigma(&self, group: usize) -> f64 {
        self.groups[&group].sigma
    }

    pub fn mean(&self, group: usize) -> Vec<f64> {
        let g = &self.groups[&group];
        g.weighted.iter().map(|w| w / g.sigma).collect()
    }

    pub fn tag(&self, group: usize) -> Option<usize> {
        self.groups[&group].tag
    }

    pub fn boundary(&self, a: usize, b: usize) -> Option<u64> {
        self.groups.get(&a)?.adjacent.get(&b).copied()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    /// Overrides β, e.g. to evaluate the predicate at a chosen strength.
    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    fn mean_abs_diff(&self, a: &Group, b: &Group) -> f64 {
        let c = a.weighted.len();
        if c == 0 {
            return 0.0;
        }
        let total: f64 = a
            .weighted
            .iter()
            .zip(&b.weighted)
            .map(|(wa, wb)| (wa / a.sigma - wb / b.sigma).abs())
            .sum();
        total / c as f64
    }

    fn tags_conflict(a: &Group, b: &Group) -> bool {
        matches!((a.tag, b.tag), (Some(x), Some(y)) if x != y)
    }

    pub fn merge_predicate(&self, a: usize, b: usize) -> Result<bool, FusionError> {
        let (ga, gb) = match (self.groups.get(&a), self.groups.get(&b)) {
            (Some(ga), Some(gb)) if ga.adjacent.contains_key(&b) => (ga, gb),
            _ => return Err(FusionError::NotAdjacent(a, b)),
        };
        Ok(self.predicate(ga, gb, ga.adjacent[&b]))
    }

    fn predicate(&self, a: &Group, b: &Group, gamma: u64) -> bool {
        if Self::tags_conflict(a, b) {
            return false;
        }
        let lhs = a.sigma * b.sigma * self.mean_abs_diff(a, b);
        lhs <= self.beta * gamma as f64 * (a.sigma + b.sigma)
    }

    /// Smallest β at which some non-conflicting pair becomes mergeable, or
    /// `None` if every adjacent pair is tag-conflicting.
    fn threshold_beta(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (&a, ga) in &self.groups {
            for (&b, &gamma) in ga.adjacent.range(a + 1..) {
                let gb = &self.groups[&b];
                if Self::tags_conflict(ga, gb) {
                    continue;
                }
                let need = ga.sigma * gb.sigma * self.mean_abs_diff(ga, gb)
                    / (gamma as f64 * (ga.sigma + gb.sigma));
                best = Some(best.map_or(need, |v: f64| v.min(need)));
            }
        }
        best
    }

    /// Merges `b` into `a` (or the reverse, keeping the lower id) and
    /// returns the surviving id.
    fn merge(&mut self, a: usize, b: usize) -> usize {
        let (keep, gone) = (a.min(b), a.max(b));
        let absorbed = self.groups.remove(&gone).expect("group exists");
        for (&nbr, &gamma) in &absorbed.adjacent {
            if nbr == keep {
                continue;
            }
            let ng = self.groups.get_mut(&nbr).unwrap();
            ng.adjacent.remove(&gone);
            *ng.adjacent.entry(keep).or_insert(0) += gamma;
        }
        for &v in &absorbed.members {
            self.group_of[v] = keep;
        }
        let kg = self.groups.get_mut(&keep).unwrap();
        kg.adjacent.remove(&gone);
        for (&nbr, &gamma) in &absorbed.adjacent {
            if nbr != keep {
                *kg.adjacent.entry(nbr).or_insert(0) += gamma;
            }
        }
        kg.sigma += absorbed.sigma;
        for (acc, w) in kg.weighted.iter_mut().zip(&absorbed.weighted) {
            *acc += w;
        }
        kg.tag = kg.tag.or(absorbed.tag);
        kg.members.extend(absorbed.members);
        kg.members.sort_unstable();
        self.merges += 1;
        keep
    }

    /// One iteration: advance β and sweep adjacent pairs in ascending
    /// `(low id, high id)` order, re-examining the merged group's pairs.
    /// Returns the number of merges performed.
    pub fn step(&mut self) -> usize {
        self.iter += 1;
        self.beta = beta_schedule(self.iter, self.eta);
        let mut work: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (&a, g) in &self.groups {
            for &b in g.adjacent.range(a + 1..).map(|(b, _)| b) {
                work.insert((a, b));
            }
        }
        let mut merged = 0;
        while self.groups.len() > self.k {
            let Some((a, b)) = work.pop_first() else {
                break;
            };
            let (Some(ga), Some(gb)) = (self.groups.get(&a), self.groups.get(&b)) else {
                continue;
            };
            let Some(&gamma) = ga.adjacent.get(&b) else {
                continue;
            };
            if !self.predicate(ga, gb, gamma) {
                continue;
            }
            let gone = a.max(b);
            let keep = self.merge(a, b);
            merged += 1;
            work.retain(|&(x, y)| x != gone && y != gone);
            for &nbr in self.groups[&keep].adjacent.keys() {
                work.insert((keep.min(nbr), keep.max(nbr)));
            }
        }
        merged
    }

    pub fn run(mut self) -> Result<FusionOutcome, FusionError> {
        while self.groups.len() > self.k {
            // skip iterations in which nothing could merge; they leave the
            // state unchanged, so this only saves time
            let need = self.threshold_beta().ok_or(FusionError::Stuck {
                groups: self.groups.len(),
                k: self.k,
            })?;
            if need > self.beta {
                let target = 100.0 * (need / self.eta).powf(1.0 / 2.2);
                let jump = (target.floor() as u64).saturating_sub(1);
                if jump > self.iter {
                    self.iter = jump;
                }
            }
            self.step();
        }
        let n = self.group_of.len();
        let mut labels = vec![0usize; n];
        for (&id, g) in &self.groups {
            let tag = g.tag.ok_or(FusionError::Untagged(id))?;
            for &v in &g.members {
                labels[v] = tag;
            }
        }
        Ok(FusionOutcome {
            labeling: Labeling::total(labels),
            iterations: self.iter,
            final_beta: self.beta,
            merges: self.merges,
        })
    }
}

/// Convenience wrapper: initialize and run.
pub fn region_fusion(
    graph: &RagGraph,
    scribbles: &ScribbleSet,
    eta: f64,
) -> Result<FusionOutcome, FusionError> {
    FusionState::new(graph, scribbles, eta)?.run()
}
