//! Exhaustive reference solver for small instances.
//!
//! Deliberately shares nothing with the optimizer beyond the instance data:
//! energy and connectivity are recomputed here with plain loops.

use std::collections::VecDeque;

use thiserror::Error;

use crate::imagegraph::RagGraph;
use crate::model::{Labeling, MrfInstance};

pub const DEFAULT_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("{free} free nodes with {labels} labels exceed the enumeration cap of {cap}")]
    TooLarge {
        free: usize,
        labels: usize,
        cap: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Minimum energy, `f64::INFINITY` when no feasible labeling exists.
    pub energy: f64,
    /// Lexicographically smallest labeling attaining the minimum.
    pub labeling: Option<Labeling>,
    pub feasible_count: u64,
    pub enumerated: u64,
}

/// Whether the nodes with `label` form one connected set containing `root`.
pub fn connectivity_check(graph: &RagGraph, labels: &[usize], label: usize, root: usize) -> bool {
    if labels[root] != label {
        return false;
    }
    let mut seen = vec![false; labels.len()];
    seen[root] = true;
    let mut reached = 1;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in graph.neighbors(u) {
            if !seen[v] && labels[v] == label {
                seen[v] = true;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    reached == labels.iter().filter(|&&l| l == label).count()
}

fn plain_energy(inst: &MrfInstance, labels: &[usize]) -> f64 {
    let g = inst.graph();
    let mut data = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        data += g.size(i) as f64 * inst.unary().cost(i, l);
    }
    let mut cut = 0.0;
    for e in g.edges() {
        if labels[e.a] != labels[e.b] {
            cut += 2.0 * e.boundary as f64;
        }
    }
    (1.0 - inst.lambda()) * data + inst.lambda() * cut
}

pub fn brute_force(inst: &MrfInstance, cap: u64) -> Result<OracleResult, OracleError> {
    let (n, k) = (inst.node_count(), inst.label_count());
    let mut labels = vec![0usize; n];
    let mut free = Vec::new();
    for i in 0..n {
        match inst.fixed_label(i) {
            Some(l) => labels[i] = l,
            None => free.push(i),
        }
    }
    let too_large = OracleError::TooLarge {
        free: free.len(),
        labels: k,
        cap,
    };
    let mut total: u64 = 1;
    for _ in &free {
        total = total
            .checked_mul(k as u64)
            .ok_or_else(|| too_large.clone())?;
        if total > cap {
            return Err(too_large);
        }
    }
    let mut best = f64::INFINITY;
    let mut best_labels: Option<Vec<usize>> = None;
    let mut feasible_count = 0;
    let mut enumerated = 0;
    loop {
        enumerated += 1;
        let feasible = (0..k).all(|l| {
            !inst.connectivity_required(l)
                || connectivity_check(inst.graph(), &labels, l, inst.root(l))
        });
        if feasible {
            feasible_count += 1;
            let e = plain_energy(inst, &labels);
            // enumeration is lexicographic, so strict improvement keeps the
            // smallest labeling among ties
            if best_labels.is_none() || e < best - 1e-12 * best.abs().max(1.0) {
                best = e;
                best_labels = Some(labels.clone());
            }
        }
        // odometer over free nodes, last free node fastest
        let mut pos = free.len();
        loop {
            if pos == 0 {
                return Ok(OracleResult {
                    energy: best,
                    labeling: best_labels.map(Labeling::total),
                    feasible_count,
                    enumerated,
                });
            }
            pos -= 1;
            let node = free[pos];
            if labels[node] + 1 < k {
                labels[node] += 1;
                break;
            }
            labels[node] = 0;
        }
    }
}
