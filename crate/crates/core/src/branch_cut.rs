//! Branch-and-cut over the lowered model with lazy connectivity cuts.
//!
//! The tree is explored without any connectivity rows. Whenever a node's LP
//! optimum is integral, the labeling is checked for connectivity; violated
//! separator cuts are appended as global rows and the same node is re-solved.
//! Only integral, connected solutions become incumbents.

use std::collections::HashSet;
use std::rc::Rc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::lp::{Basis, LpError, LpStatus, SimplexOptions, SimplexSolver};
use crate::model::{
    energy, extract_labeling, lower_model, Labeling, ModelError, MrfInstance, VariableSpace,
    LABEL_TOL,
};
use crate::separation::{
    separate_all, separate_labeling, separate_masks, SeparationError, SeparatorCut,
};

/// Incumbent improvement and pruning margin.
pub const PRUNE_TOL: f64 = 1e-9;

/// Fractional separation rounds per node when enabled.
const FRACTIONAL_ROUNDS: usize = 10;

#[derive(Debug, Error)]
pub enum BranchCutError {
    #[error("LP solver: {0}")]
    Lp(#[from] LpError),
    #[error("separation: {0}")]
    Separation(#[from] SeparationError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("warm start rejected: {0}")]
    InvalidWarmStart(String),
    #[error("branching requested on an integral solution")]
    NotFractional,
    #[error("separation returned only cuts already in the model (node {0})")]
    StalledSeparation(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    TimeLimit,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::TimeLimit => "time-limit",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveLimits {
    pub time_limit: Option<Duration>,
    pub gap_tol: f64,
    pub node_cap: Option<usize>,
    /// Also separate the near-integral part of fractional node LPs (cuts
    /// violated at the current point only). Off by default.
    pub fractional_separation: bool,
}

impl Default for SolveLimits {
    fn default() -> Self {
        Self {
            time_limit: Some(Duration::from_secs(100)),
            gap_tol: 1e-4,
            node_cap: None,
            fractional_separation: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SolveCounters {
    pub cuts_added: usize,
    pub separation_rounds: usize,
    pub nodes_explored: usize,
    pub lp_pivots: usize,
}

/// One line of the progress log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProgressEvent {
    pub time_seconds: f64,
    pub nodes: usize,
    pub incumbent: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub cuts: usize,
}

/// One detached component handled during separation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CutLogRecord {
    pub round: usize,
    pub label: usize,
    pub component_size: usize,
    pub layers: usize,
    pub layer_sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub labeling: Option<Labeling>,
    /// Incumbent energy `I`; infinite when no feasible labeling was found.
    pub energy: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub status: SolveStatus,
    pub stop_reason: Option<String>,
    pub counters: SolveCounters,
    pub wall_time: Duration,
    pub log: Vec<ProgressEvent>,
    pub cut_log: Vec<CutLogRecord>,
    pub cuts: Vec<SeparatorCut>,
}

/// `(I − LP)/|I|`, clamped at zero. With `I = 0` the gap is zero once the
/// bound reaches `I`, and infinite otherwise.
pub fn relative_gap(incumbent: f64, lower_bound: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    let diff = (incumbent - lower_bound).max(0.0);
    if incumbent.abs() < 1e-12 {
        if diff <= PRUNE_TOL {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / incumbent.abs()
    }
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    /// `(column, lower, upper)` relative to the root bounds.
    pub changes: Vec<(usize, f64, f64)>,
    /// Parent LP objective.
    pub bound: f64,
    pub depth: usize,
    pub seq: u64,
    basis: Option<Rc<Basis>>,
}

impl SearchNode {
    pub fn new(changes: Vec<(usize, f64, f64)>, bound: f64, depth: usize, seq: u64) -> Self {
        Self {
            changes,
            bound,
            depth,
            seq,
            basis: None,
        }
    }
}

/// Best-bound choice: lowest bound, then lowest depth, then first created.
pub fn select_node(open: &[SearchNode]) -> Option<usize> {
    (0..open.len()).min_by(|&a, &b| {
        let (na, nb) = (&open[a], &open[b]);
        na.bound
            .total_cmp(&nb.bound)
            .then(na.depth.cmp(&nb.depth))
            .then(na.seq.cmp(&nb.seq))
    })
}

/// Index of the value whose fractional part is nearest 0.5 (ties to the
/// lowest index). Errors if every value is within tolerance of 0 or 1.
pub fn select_branch_var(values: &[f64]) -> Result<usize, BranchCutError> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in values.iter().enumerate() {
        let frac = v - v.floor();
        if frac <= LABEL_TOL || frac >= 1.0 - LABEL_TOL {
            continue;
        }
        let dist = (frac - 0.5).abs();
        if best.is_none_or(|(_, d)| dist < d - 1e-12) {
            best = Some((j, dist));
        }
    }
    best.map(|(j, _)| j).ok_or(BranchCutError::NotFractional)
}

/// Best feasible labeling so far.
#[derive(Debug, Clone, Default)]
pub struct Incumbent {
    pub labeling: Option<Labeling>,
    pub energy: f64,
}

impl Incumbent {
    pub fn empty() -> Self {
        Self {
            labeling: None,
            energy: f64::INFINITY,
        }
    }

    /// Accepts the candidate iff it improves by more than the margin, then
    /// drops open nodes that can no longer beat it.
    pub fn update(&mut self, candidate: Labeling, energy: f64, open: &mut Vec<SearchNode>) -> bool {
        if !(energy < self.energy - PRUNE_TOL) {
            return false;
        }
        self.energy = energy;
        self.labeling = Some(candidate);
        open.retain(|node| node.bound < energy - PRUNE_TOL);
        true
    }
}

fn check_warm_start(inst: &MrfInstance, warm: &Labeling) -> Result<f64, BranchCutError> {
    let e = energy(inst, warm).map_err(|e| BranchCutError::InvalidWarmStart(e.to_string()))?;
    if !inst.respects_fixings(warm) {
        return Err(BranchCutError::InvalidWarmStart(
            "labeling contradicts the scribbles".into(),
        ));
    }
    let cuts = separate_all(inst.graph(), warm, inst)
        .map_err(|e| BranchCutError::InvalidWarmStart(e.to_string()))?;
    if !cuts.is_empty() {
        return Err(BranchCutError::InvalidWarmStart(format!(
            "label {} is not connected",
            cuts[0].label + 1
        )));
    }
    Ok(e)
}

fn is_integral(values: &[f64]) -> bool {
    values
        .iter()
        .all(|&v| v <= LABEL_TOL || v >= 1.0 - LABEL_TOL)
}

struct Search<'a> {
    inst: &'a MrfInstance,
    space: VariableSpace,
    solver: SimplexSolver,
    applied: Vec<usize>,
    cut_set: HashSet<SeparatorCut>,
    cuts: Vec<SeparatorCut>,
    cut_log: Vec<CutLogRecord>,
    counters: SolveCounters,
}

enum NodeOutcome {
    Pruned,
    Integral {
        labeling: Labeling,
        energy: f64,
    },
    Branch {
        var: usize,
        objective: f64,
        basis: Basis,
    },
}

impl<'a> Search<'a> {
    fn new(inst: &'a MrfInstance, deadline: Option<Instant>) -> Self {
        let space = lower_model(inst);
        let mut solver = SimplexSolver::new(&space.problem);
        solver.set_options(SimplexOptions {
            deadline,
            ..SimplexOptions::default()
        });
        Self {
            inst,
            space,
            solver,
            applied: Vec::new(),
            cut_set: HashSet::new(),
            cuts: Vec::new(),
            cut_log: Vec::new(),
            counters: SolveCounters::default(),
        }
    }

    fn apply_bounds(&mut self, changes: &[(usize, f64, f64)]) {
        for &var in &self.applied {
            let p = &self.space.problem;
            self.solver.set_bounds(var, p.lower[var], p.upper[var]);
        }
        self.applied.clear();
        for &(var, lo, hi) in changes {
            self.solver.set_bounds(var, lo, hi);
            self.applied.push(var);
        }
    }

    /// Solves the node, adding connectivity cuts until its LP optimum is
    /// fractional, connected-integral, or pruned.
    fn process(
        &mut self,
        node: &SearchNode,
        cutoff: f64,
        fractional_rounds: usize,
    ) -> Result<NodeOutcome, BranchCutError> {
        self.apply_bounds(&node.changes);
        if let Some(basis) = &node.basis {
            self.solver.set_basis(basis);
        }
        let mut rounds_left = fractional_rounds;
        loop {
            let before = self.solver.pivots();
            let sol = self.solver.solve();
            self.counters.lp_pivots += self.solver.pivots() - before;
            let sol = sol?;
            if sol.status == LpStatus::Infeasible || sol.objective >= cutoff - PRUNE_TOL {
                return Ok(NodeOutcome::Pruned);
            }
            let xs = &sol.x[..self.space.x_count()];
            if !is_integral(xs) {
                if rounds_left > 0 {
                    rounds_left -= 1;
                    let rows = self.fractional_cuts(&sol.x)?;
                    if !rows.is_empty() {
                        self.counters.cuts_added += rows.len();
                        self.solver.add_rows(&rows);
                        continue;
                    }
                }
                let var = select_branch_var(xs)?;
                return Ok(NodeOutcome::Branch {
                    var,
                    objective: sol.objective,
                    basis: sol.basis,
                });
            }
            let labeling = extract_labeling(self.inst, &sol.x, LABEL_TOL)?;
            let found = separate_labeling(self.inst.graph(), &labeling, self.inst)?;
            if found.is_empty() {
                let e = energy(self.inst, &labeling)?;
                return Ok(NodeOutcome::Integral {
                    labeling,
                    energy: e,
                });
            }
            self.counters.separation_rounds += 1;
            let round = self.counters.separation_rounds;
            let mut rows = Vec::new();
            for comp in found {
                self.cut_log.push(CutLogRecord {
                    round,
                    label: comp.label,
                    component_size: comp.component_size,
                    layers: comp.cuts.len(),
                    layer_sizes: comp.layer_sizes(),
                });
                for cut in comp.cuts {
                    if self.cut_set.insert(cut.clone()) {
                        rows.push(cut.to_row(&self.space));
                        self.cuts.push(cut);
                    }
                }
            }
            if rows.is_empty() {
                return Err(BranchCutError::StalledSeparation(
                    self.counters.nodes_explored,
                ));
            }
            self.counters.cuts_added += rows.len();
            self.solver.add_rows(&rows);
        }
    }

    /// Separates the active sets `{i : x_iℓ ≥ 1 − tol}` of a fractional point
    /// and returns rows for the new cuts it violates. Counts as a round only
    /// when something is found.
    fn fractional_cuts(&mut self, x: &[f64]) -> Result<Vec<crate::lp::Row>, BranchCutError> {
        let (n, k) = (self.inst.node_count(), self.inst.label_count());
        let masks: Vec<Vec<bool>> = (0..k)
            .map(|l| {
                (0..n)
                    .map(|i| x[self.space.x(i, l)] >= 1.0 - LABEL_TOL)
                    .collect()
            })
            .collect();
        let found = separate_masks(self.inst.graph(), &masks, self.inst)?;
        let round = self.counters.separation_rounds + 1;
        let mut rows = Vec::new();
        for comp in found {
            let violated: Vec<SeparatorCut> = comp
                .cuts
                .into_iter()
                .filter(|c| c.violation(&self.space, x) > 1e-6 && !self.cut_set.contains(c))
                .collect();
            if violated.is_empty() {
                continue;
            }
            self.cut_log.push(CutLogRecord {
                round,
                label: comp.label,
                component_size: comp.component_size,
                layers: violated.len(),
                layer_sizes: violated.iter().map(|c| c.separator.len()).collect(),
            });
            for cut in violated {
                rows.push(cut.to_row(&self.space));
                self.cut_set.insert(cut.clone());
                self.cuts.push(cut);
            }
        }
        if !rows.is_empty() {
            self.counters.separation_rounds = round;
        }
        Ok(rows)
    }
}

fn lower_bound_now(open: &[SearchNode], current: Option<f64>, incumbent: f64) -> f64 {
    let mut lb = current.unwrap_or(f64::INFINITY);
    for node in open {
        lb = lb.min(node.bound);
    }
    lb.min(incumbent)
}

/// Solves the instance to global optimality (or until a limit is hit).
pub fn solve(
    inst: &MrfInstance,
    warm: Option<&Labeling>,
    limits: &SolveLimits,
) -> Result<SolveResult, BranchCutError> {
    let start = Instant::now();
    let deadline = limits.time_limit.map(|t| start + t);
    let mut incumbent = Incumbent::empty();
    if let Some(w) = warm {
        let e = check_warm_start(inst, w)?;
        incumbent.energy = e;
        incumbent.labeling = Some(w.clone());
    }
    let mut search = Search::new(inst, deadline);
    let mut open = vec![SearchNode::new(Vec::new(), f64::NEG_INFINITY, 0, 0)];
    let mut seq = 1u64;
    let mut log: Vec<ProgressEvent> = Vec::new();
    let mut reported_lb = f64::NEG_INFINITY;
    let mut stop_reason: Option<String> = None;
    let mut limit_hit = false;

    let record = |log: &mut Vec<ProgressEvent>,
                  reported_lb: &mut f64,
                  lb: f64,
                  inc: f64,
                  counters: &SolveCounters| {
        *reported_lb = reported_lb.max(lb).min(inc);
        let event = ProgressEvent {
            time_seconds: start.elapsed().as_secs_f64(),
            nodes: counters.nodes_explored,
            incumbent: inc,
            lower_bound: *reported_lb,
            gap: relative_gap(inc, *reported_lb),
            cuts: counters.cuts_added,
        };
        if log.last().is_none_or(|last| {
            last.incumbent != event.incumbent
                || last.lower_bound != event.lower_bound
                || last.nodes + 50 <= event.nodes
        }) {
            log.push(event);
        }
    };

    while !open.is_empty() {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            stop_reason = Some("time limit reached".into());
            limit_hit = true;
            break;
        }
        if limits
            .node_cap
            .is_some_and(|cap| search.counters.nodes_explored >= cap)
        {
            stop_reason = Some(format!(
                "node cap of {} reached",
                search.counters.nodes_explored
            ));
            limit_hit = true;
            break;
        }
        let idx = if incumbent.labeling.is_none() {
            open.len() - 1
        } else {
            select_node(&open).expect("open list is nonempty")
        };
        let node = open.remove(idx);
        search.counters.nodes_explored += 1;
        let outcome = match search.process(
            &node,
            incumbent.energy,
            if limits.fractional_separation {
                FRACTIONAL_ROUNDS
            } else {
                0
            },
        ) {
            Ok(o) => o,
            Err(BranchCutError::Lp(LpError::TimeLimit)) => {
                open.push(node);
                stop_reason = Some("time limit reached".into());
                limit_hit = true;
                break;
            }
            Err(e) => return Err(e),
        };
        match outcome {
            NodeOutcome::Pruned => {}
            NodeOutcome::Integral { labeling, energy } => {
                incumbent.update(labeling, energy, &mut open);
            }
            NodeOutcome::Branch {
                var,
                objective,
                basis,
            } => {
                let bound = objective.max(node.bound);
                let basis = Rc::new(basis);
                for (lo, hi) in [(0.0, 0.0), (1.0, 1.0)] {
                    let mut changes = node.changes.clone();
                    changes.push((var, lo, hi));
                    open.push(SearchNode {
                        changes,
                        bound,
                        depth: node.depth + 1,
                        seq,
                        basis: Some(Rc::clone(&basis)),
                    });
                    seq += 1;
                }
            }
        }
        let lb = lower_bound_now(&open, None, incumbent.energy);
        let lb = if open.is_empty() {
            incumbent.energy
        } else {
            lb
        };
        record(
            &mut log,
            &mut reported_lb,
            lb,
            incumbent.energy,
            &search.counters,
        );
        if incumbent.labeling.is_some()
            && relative_gap(incumbent.energy, reported_lb) <= limits.gap_tol
        {
            break;
        }
    }

    let (status, lower_bound) = if open.is_empty() && !limit_hit {
        match incumbent.labeling {
            Some(_) => (SolveStatus::Optimal, incumbent.energy),
            None => (SolveStatus::Infeasible, f64::INFINITY),
        }
    } else {
        let lb = reported_lb
            .max(lower_bound_now(&open, None, incumbent.energy))
            .min(incumbent.energy);
        let gap = relative_gap(incumbent.energy, lb);
        if incumbent.labeling.is_some() && gap <= limits.gap_tol {
            (SolveStatus::Optimal, lb)
        } else {
            (SolveStatus::TimeLimit, lb)
        }
    };
    if status == SolveStatus::Optimal {
        stop_reason = None;
    }
    let gap = relative_gap(incumbent.energy, lower_bound);
    let final_event = ProgressEvent {
        time_seconds: start.elapsed().as_secs_f64(),
        nodes: search.counters.nodes_explored,
        incumbent: incumbent.energy,
        lower_bound,
        gap,
        cuts: search.counters.cuts_added,
    };
    if log.last().is_none_or(|l| {
        l.incumbent != final_event.incumbent
            || l.lower_bound != final_event.lower_bound
            || l.nodes != final_event.nodes
    }) {
        log.push(final_event);
    }
    Ok(SolveResult {
        labeling: incumbent.labeling,
        energy: incumbent.energy,
        lower_bound,
        gap,
        status,
        stop_reason,
        counters: search.counters,
        wall_time: start.elapsed(),
        log,
        cut_log: search.cut_log,
        cuts: search.cuts,
    })
}

/// Outcome of the LP relaxation with iterated integral-part separation.
#[derive(Debug, Clone)]
pub struct RelaxationResult {
    pub objective: f64,
    pub values: Vec<f64>,
    /// Nodes whose value for some label reaches `1 − 1e−6`; others are `None`.
    pub labeling: Labeling,
    pub status: SolveStatus,
    pub counters: SolveCounters,
    pub wall_time: Duration,
    pub cut_log: Vec<CutLogRecord>,
    pub cuts: Vec<SeparatorCut>,
}

impl RelaxationResult {
    pub fn unlabeled_fraction(&self) -> f64 {
        self.labeling.unlabeled_count() as f64 / self.labeling.len().max(1) as f64
    }
}

/// Solves the LP relaxation, then repeatedly separates the near-integral
/// active sets and adds the cuts violated at the current point, until none is
/// found.
pub fn solve_relaxation(
    inst: &MrfInstance,
    time_limit: Option<Duration>,
) -> Result<RelaxationResult, BranchCutError> {
    let start = Instant::now();
    let deadline = time_limit.map(|t| start + t);
    let mut search = Search::new(inst, deadline);
    let n = inst.node_count();
    let mut status = SolveStatus::Optimal;
    let mut last = None;
    loop {
        let before = search.solver.pivots();
        let sol = search.solver.solve();
        search.counters.lp_pivots += search.solver.pivots() - before;
        let sol = match sol {
            Ok(sol) => sol,
            Err(LpError::TimeLimit) if last.is_some() => {
                status = SolveStatus::TimeLimit;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        if sol.status == LpStatus::Infeasible {
            return Ok(RelaxationResult {
                objective: f64::INFINITY,
                values: sol.x,
                labeling: Labeling::partial(vec![None; n]),
                status: SolveStatus::Infeasible,
                counters: search.counters,
                wall_time: start.elapsed(),
                cut_log: search.cut_log,
                cuts: search.cuts,
            });
        }
        let rows = search.fractional_cuts(&sol.x)?;
        last = Some(sol);
        if rows.is_empty() {
            break;
        }
        search.counters.cuts_added += rows.len();
        search.solver.add_rows(&rows);
        if deadline.is_some_and(|d| Instant::now() >= d) {
            status = SolveStatus::TimeLimit;
            break;
        }
    }
    let sol = last.expect("at least one LP solved");
    let labeling = extract_labeling(inst, &sol.x, LABEL_TOL)?;
    Ok(RelaxationResult {
        objective: sol.objective,
        values: sol.x,
        labeling,
        status,
        counters: search.counters,
        wall_time: start.elapsed(),
        cut_log: search.cut_log,
        cuts: search.cuts,
    })
}
