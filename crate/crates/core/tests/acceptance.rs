//! Acceptance suite: one pass/fail line per criterion, then a single assert.
//!
//! Reference values come from the exhaustive oracle, from independent BFS
//! computations written here, or from closed-form formula evaluation.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrfseg::branch_cut::{
    solve, solve_relaxation, RelaxationResult, SolveLimits, SolveResult, SolveStatus,
};
use mrfseg::fusion::{beta_schedule, region_fusion};
use mrfseg::imagegraph::{encode_pgm, Edge, RagGraph};
use mrfseg::model::{build_instance, energy, lower_model, Labeling, MrfInstance, Variant};
use mrfseg::oracle::{brute_force, connectivity_check, OracleResult, DEFAULT_CAP};
use mrfseg::pipeline::{run_compare, RunConfig};
use mrfseg::scribble::{ScribbleSet, UnaryField};
use mrfseg::separation::{components_of_mask, knearest_separators, separate_all, SeparatorCut};

const ORACLE_TOL: f64 = 1e-9;
const INSTANCES: usize = 300;

// ---------------------------------------------------------------------------
// random instances

struct Base {
    graph: RagGraph,
    scribbles: ScribbleSet,
    unary: UnaryField,
    lambda: f64,
}

impl Base {
    fn instance(&self, variant: Variant) -> Option<MrfInstance> {
        build_instance(
            self.graph.clone(),
            self.unary.clone(),
            &self.scribbles,
            self.lambda,
            variant,
        )
        .ok()
    }
}

fn grid_edges(w: usize, h: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                edges.push((p, p + 1));
            }
            if y + 1 < h {
                edges.push((p, p + w));
            }
        }
    }
    edges
}

fn random_connected_edges(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for a in 0..n {
        for b in a + 1..n {
            if !edges.contains(&(a, b)) && rng.gen_bool(0.2) {
                edges.push((a, b));
            }
        }
    }
    edges
}

fn weighted_graph(rng: &mut ChaCha8Rng, n: usize, edges: &[(usize, usize)]) -> RagGraph {
    let sizes = (0..n).map(|_| rng.gen_range(1..=4)).collect();
    let features = (0..n).map(|_| rng.gen::<f64>()).collect();
    let edges: Vec<Edge> = edges
        .iter()
        .map(|&(a, b)| Edge {
            a,
            b,
            boundary: rng.gen_range(1..=3),
        })
        .collect();
    RagGraph::new(sizes, 1, features, edges).unwrap()
}

fn random_scribbles(rng: &mut ChaCha8Rng, graph: &RagGraph, k: usize) -> ScribbleSet {
    let n = graph.node_count();
    let mut nodes: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        nodes.swap(i, rng.gen_range(0..=i));
    }
    let spare = n - k;
    let mut extra = rng.gen_range(0..=spare.min(k));
    let mut next = k;
    let mut per_label: Vec<Vec<usize>> = (0..k).map(|l| vec![nodes[l]]).collect();
    for seeds in per_label.iter_mut() {
        if extra > 0 && rng.gen_bool(0.5) {
            seeds.push(nodes[next]);
            next += 1;
            extra -= 1;
        }
    }
    let background = rng.gen_bool(0.5).then(|| rng.gen_range(0..k));
    ScribbleSet::from_nodes(graph, &per_label, background).unwrap()
}

fn random_base(rng: &mut ChaCha8Rng, grid_w: usize, grid_h: usize) -> Base {
    let k = rng.gen_range(2..=3);
    let (n, edges) = if grid_w > 0 {
        (grid_w * grid_h, grid_edges(grid_w, grid_h))
    } else if rng.gen_bool(0.5) {
        loop {
            let (w, h) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            if w * h > k {
                break (w * h, grid_edges(w, h));
            }
        }
    } else {
        let n = rng.gen_range(4..=9);
        (n, random_connected_edges(rng, n))
    };
    let graph = weighted_graph(rng, n, &edges);
    let scribbles = random_scribbles(rng, &graph, k);
    let unary = UnaryField::new(n, k, (0..n * k).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let lambda = [0.0, 0.2, 0.5][rng.gen_range(0..3)];
    Base {
        graph,
        scribbles,
        unary,
        lambda,
    }
}

fn exact() -> SolveLimits {
    SolveLimits {
        time_limit: None,
        gap_tol: 0.0,
        ..SolveLimits::default()
    }
}

// ---------------------------------------------------------------------------
// runs shared by several criteria

struct Case {
    base: Base,
    pc: MrfInstance,
    oracle_pc: OracleResult,
    oracle_p: OracleResult,
    oracle_pcb: Option<OracleResult>,
    run_pc: SolveResult,
    run_p: SolveResult,
    run_pcb: Option<SolveResult>,
    relax: RelaxationResult,
}

fn build_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    (0..INSTANCES)
        .map(|_| {
            let base = random_base(rng, 0, 0);
            let pc = base.instance(Variant::IlpPc).unwrap();
            let p = base.instance(Variant::IlpP).unwrap();
            let pcb = base.instance(Variant::IlpPcb);
            let lp = base.instance(Variant::LpPc).unwrap();
            Case {
                oracle_pc: brute_force(&pc, DEFAULT_CAP).unwrap(),
                oracle_p: brute_force(&p, DEFAULT_CAP).unwrap(),
                oracle_pcb: pcb.as_ref().map(|i| brute_force(i, DEFAULT_CAP).unwrap()),
                run_pc: solve(&pc, None, &exact()).unwrap(),
                run_p: solve(&p, None, &exact()).unwrap(),
                run_pcb: pcb.as_ref().map(|i| solve(i, None, &exact()).unwrap()),
                relax: solve_relaxation(&lp, None).unwrap(),
                pc,
                base,
            }
        })
        .collect()
}

type Verdict = Result<String, String>;

fn fail<T>(msg: String) -> Result<T, String> {
    Err(msg)
}

// ---------------------------------------------------------------------------
// [1] oracle optimality

fn check_against_oracle(
    what: &str,
    idx: usize,
    inst: &MrfInstance,
    run: &SolveResult,
    oracle: &OracleResult,
) -> Result<bool, String> {
    match (run.status, oracle.labeling.is_some()) {
        (SolveStatus::Optimal, true) => {
            if (run.energy - oracle.energy).abs() > ORACLE_TOL {
                return fail(format!(
                    "case {idx} {what}: solver {} vs oracle {}",
                    run.energy, oracle.energy
                ));
            }
            let lab = run.labeling.as_ref().unwrap();
            let labels = lab.to_total().unwrap();
            let e = energy(inst, lab).unwrap();
            if (e - run.energy).abs() > ORACLE_TOL {
                return fail(format!(
                    "case {idx} {what}: reported energy {} but labeling has {e}",
                    run.energy
                ));
            }
            for l in 0..inst.label_count() {
                if inst.connectivity_required(l)
                    && !connectivity_check(inst.graph(), &labels, l, inst.root(l))
                {
                    return fail(format!("case {idx} {what}: label {l} disconnected"));
                }
            }
            if !inst.respects_fixings(lab) {
                return fail(format!("case {idx} {what}: scribbles not respected"));
            }
            Ok(true)
        }
        (SolveStatus::Infeasible, false) => Ok(false),
        (status, feasible) => fail(format!(
            "case {idx} {what}: status {} but oracle feasible = {feasible}",
            status.as_str()
        )),
    }
}

fn criterion_oracle(cases: &[Case]) -> Verdict {
    let mut optimal = 0;
    let mut infeasible = 0;
    for (idx, c) in cases.iter().enumerate() {
        if check_against_oracle("ILP-PC", idx, &c.pc, &c.run_pc, &c.oracle_pc)? {
            optimal += 1;
        } else {
            infeasible += 1;
        }
        let p = c.base.instance(Variant::IlpP).unwrap();
        check_against_oracle("ILP-P", idx, &p, &c.run_p, &c.oracle_p)?;
        if let (Some(run), Some(oracle)) = (&c.run_pcb, &c.oracle_pcb) {
            let pcb = c.base.instance(Variant::IlpPcb).unwrap();
            check_against_oracle("ILP-PCB", idx, &pcb, run, oracle)?;
        }
    }
    if optimal < 200 {
        return fail(format!("only {optimal} feasible ILP-PC instances"));
    }
    Ok(format!(
        "{optimal} optimal ILP-PC solves match the oracle ({infeasible} infeasible agree); ILP-P and ILP-PCB checked too"
    ))
}

// ---------------------------------------------------------------------------
// [2] relaxation ordering

fn criterion_ordering(cases: &[Case]) -> Verdict {
    let mut with_background = 0;
    for (idx, c) in cases.iter().enumerate() {
        if c.run_pc.status != SolveStatus::Optimal {
            continue;
        }
        let pc = c.run_pc.energy;
        if c.run_p.energy > pc + ORACLE_TOL {
            return fail(format!(
                "case {idx}: ILP-P {} > ILP-PC {pc}",
                c.run_p.energy
            ));
        }
        if c.relax.objective > pc + ORACLE_TOL {
            return fail(format!(
                "case {idx}: LP-PC {} > ILP-PC {pc}",
                c.relax.objective
            ));
        }
        if let Some(run) = &c.run_pcb {
            with_background += 1;
            if run.energy > pc + ORACLE_TOL {
                return fail(format!("case {idx}: ILP-PCB {} > ILP-PC {pc}", run.energy));
            }
        }
    }
    Ok(format!(
        "ILP-P <= ILP-PC and LP-PC <= ILP-PC on all feasible cases; ILP-PCB <= ILP-PC on {with_background} with a background"
    ))
}

// ---------------------------------------------------------------------------
// [3] cut soundness

fn connected_and_rooted(graph: &RagGraph, set: u32, root: usize) -> bool {
    if set & (1 << root) == 0 {
        return false;
    }
    let mut seen = 1u32 << root;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in graph.neighbors(u) {
            if set & (1 << v) != 0 && seen & (1 << v) == 0 {
                seen |= 1 << v;
                queue.push_back(v);
            }
        }
    }
    seen == set
}

/// Every connected node set containing each root, as bitmasks.
struct RootedSets {
    by_root: BTreeMap<usize, Vec<u32>>,
}

impl RootedSets {
    fn new(graph: &RagGraph) -> Self {
        assert!(graph.node_count() <= 10);
        Self {
            by_root: BTreeMap::new(),
        }
    }

    fn get(&mut self, graph: &RagGraph, root: usize) -> &[u32] {
        self.by_root.entry(root).or_insert_with(|| {
            (0..1u32 << graph.node_count())
                .filter(|&s| connected_and_rooted(graph, s, root))
                .collect()
        })
    }
}

fn bits(nodes: &[usize]) -> u32 {
    nodes.iter().fold(0, |acc, &v| acc | (1 << v))
}

/// Counts the connected rooted sets that break `x_target <= Σ_S x_s`.
fn violating_sets(sets: &[u32], cut: &SeparatorCut) -> usize {
    let target = 1u32 << cut.target;
    let separator = bits(&cut.separator);
    sets.iter()
        .filter(|&&s| s & target != 0 && s & separator == 0)
        .count()
}

fn random_labeling(rng: &mut ChaCha8Rng, inst: &MrfInstance) -> Labeling {
    let labels = (0..inst.node_count())
        .map(|i| {
            inst.fixed_label(i)
                .unwrap_or_else(|| rng.gen_range(0..inst.label_count()))
        })
        .collect();
    Labeling::total(labels)
}

fn criterion_cuts(cases: &[Case], rng: &mut ChaCha8Rng) -> Verdict {
    let mut checked = 0usize;
    let mut triggered = 0usize;
    for (idx, c) in cases.iter().enumerate() {
        let graph = c.pc.graph();
        let mut rooted = RootedSets::new(graph);
        let mut emitted: Vec<&SeparatorCut> = c.run_pc.cuts.iter().chain(&c.relax.cuts).collect();
        if let Some(run) = &c.run_pcb {
            emitted.extend(&run.cuts);
        }
        let mut own = Vec::new();
        for _ in 0..8 {
            let lab = random_labeling(rng, &c.pc);
            let labels = lab.to_total().unwrap();
            for cut in separate_all(graph, &lab, &c.pc).map_err(|e| e.to_string())? {
                // the triggering labeling: target active, every separator node inactive
                let active = |v: usize| labels[v] == cut.label;
                if !active(cut.target) || cut.separator.iter().any(|&s| active(s)) {
                    return fail(format!(
                        "case {idx}: cut {cut:?} not violated by its labeling"
                    ));
                }
                triggered += 1;
                own.push(cut);
            }
        }
        for cut in emitted.into_iter().chain(&own) {
            let sets = rooted.get(graph, cut.root);
            let bad = violating_sets(sets, cut);
            if bad > 0 {
                return fail(format!(
                    "case {idx}: cut {cut:?} excludes {bad} connected rooted sets"
                ));
            }
            checked += 1;
        }
    }
    if triggered == 0 {
        return fail("no cuts were triggered".into());
    }
    Ok(format!(
        "{checked} cuts valid on every connected rooted set; {triggered} violated by their triggering labeling"
    ))
}

// ---------------------------------------------------------------------------
// [4] gap semantics

fn check_log(what: &str, run: &SolveResult, gap_tol: f64) -> Result<usize, String> {
    let mut prev_inc = f64::INFINITY;
    let mut prev_lb = f64::NEG_INFINITY;
    for (t, ev) in run.log.iter().enumerate() {
        let (i, lb) = (ev.incumbent, ev.lower_bound);
        if i.is_finite() && i < lb - 1e-6 * i.abs() {
            return fail(format!("{what} event {t}: incumbent {i} below bound {lb}"));
        }
        if i > prev_inc {
            return fail(format!(
                "{what} event {t}: incumbent rose {prev_inc} -> {i}"
            ));
        }
        if lb < prev_lb {
            return fail(format!("{what} event {t}: bound fell {prev_lb} -> {lb}"));
        }
        prev_inc = i;
        prev_lb = lb;
    }
    let small_gap = run.gap <= gap_tol;
    if small_gap != (run.status == SolveStatus::Optimal) {
        return fail(format!(
            "{what}: terminal gap {} with status {}",
            run.gap,
            run.status.as_str()
        ));
    }
    Ok(run.log.len())
}

fn criterion_gap(cases: &[Case], rng: &mut ChaCha8Rng) -> Verdict {
    let mut events = 0;
    for (idx, c) in cases.iter().enumerate() {
        events += check_log(&format!("case {idx} ILP-PC"), &c.run_pc, 1e-4)?;
        events += check_log(&format!("case {idx} ILP-P"), &c.run_p, 1e-4)?;
        if let Some(run) = &c.run_pcb {
            events += check_log(&format!("case {idx} ILP-PCB"), run, 1e-4)?;
        }
    }
    let mut statuses: BTreeMap<&str, usize> = BTreeMap::new();
    for t in 0..24 {
        let (w, h) = if t % 2 == 0 { (4, 4) } else { (5, 5) };
        let base = random_base(rng, w, h);
        let inst = base.instance(Variant::IlpPc).unwrap();
        let limits = SolveLimits {
            time_limit: Some(Duration::from_secs(20)),
            gap_tol: 1e-4,
            node_cap: (t % 3 != 0).then(|| rng.gen_range(1..=12)),
            fractional_separation: false,
        };
        let run = solve(&inst, None, &limits).map_err(|e| e.to_string())?;
        events += check_log(&format!("grid {t}"), &run, 1e-4)?;
        *statuses.entry(run.status.as_str()).or_default() += 1;
    }
    Ok(format!(
        "{events} logged events consistent; larger grids ended {statuses:?}"
    ))
}

// ---------------------------------------------------------------------------
// [5] heuristic feasibility

fn criterion_heuristic(cases: &[Case]) -> Verdict {
    let mut ran = 0;
    let mut refused = 0;
    for (idx, c) in cases.iter().enumerate() {
        let k = c.pc.label_count();
        let out = match region_fusion(c.pc.graph(), &c.base.scribbles, 0.1) {
            Ok(out) => out,
            Err(_) => {
                refused += 1;
                continue;
            }
        };
        ran += 1;
        let lab = &out.labeling;
        let labels = lab
            .to_total()
            .map_err(|_| format!("case {idx}: heuristic left nodes unlabeled"))?;
        let groups: HashSet<usize> = labels.iter().copied().collect();
        if groups.len() != k {
            return fail(format!(
                "case {idx}: {} groups for {k} labels",
                groups.len()
            ));
        }
        for l in 0..k {
            if !connectivity_check(c.pc.graph(), &labels, l, c.pc.root(l)) {
                return fail(format!("case {idx}: heuristic group {l} disconnected"));
            }
        }
        if !c.pc.respects_fixings(lab) {
            return fail(format!("case {idx}: heuristic ignores scribbles"));
        }
        let h = energy(&c.pc, lab).unwrap();
        if h < c.oracle_pc.energy - ORACLE_TOL {
            return fail(format!(
                "case {idx}: heuristic {h} below optimum {}",
                c.oracle_pc.energy
            ));
        }
        let warm = solve(&c.pc, Some(lab), &exact()).map_err(|e| e.to_string())?;
        if warm.energy > h || warm.log.iter().any(|ev| ev.incumbent > h) {
            return fail(format!(
                "case {idx}: warm-started incumbent above heuristic {h}"
            ));
        }
        if (warm.energy - c.oracle_pc.energy).abs() > ORACLE_TOL {
            return fail(format!(
                "case {idx}: warm-started solve {} vs oracle",
                warm.energy
            ));
        }
    }
    if ran == 0 {
        return fail("heuristic never ran".into());
    }
    Ok(format!(
        "{ran} heuristic runs feasible and above the optimum, warm starts never worse ({refused} refused at init)"
    ))
}

// ---------------------------------------------------------------------------
// [6] K-nearest structure

fn bfs_distances(graph: &RagGraph, sources: &[usize], blocked: &[bool]) -> Vec<Option<usize>> {
    let mut dist = vec![None; graph.node_count()];
    let mut queue = VecDeque::new();
    for &s in sources {
        dist[s] = Some(0);
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap();
        for &(v, _) in graph.neighbors(u) {
            if dist[v].is_none() && !blocked[v] {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Checks every detached component of `active` and returns the layer counts.
fn check_knearest(graph: &RagGraph, active: &[bool], root: usize) -> Result<Vec<usize>, String> {
    let n = graph.node_count();
    let comps = components_of_mask(graph, active, 0, root);
    let mut counts = Vec::new();
    for h in comps.detached() {
        let cuts = knearest_separators(graph, active, 0, h, root).map_err(|e| e.to_string())?;
        let dist = bfs_distances(graph, h, &vec![false; n]);
        let d_active = (0..n)
            .filter(|&v| active[v] && !h.contains(&v))
            .filter_map(|v| dist[v])
            .min()
            .unwrap();
        let expected = h.len().min(d_active - 1);
        if cuts.len() != expected {
            return fail(format!(
                "H = {h:?}: {} layers, expected min({}, {d_active} - 1) = {expected}",
                cuts.len(),
                h.len()
            ));
        }
        let mut used = vec![false; n];
        for (m, cut) in cuts.iter().enumerate() {
            if cut.target != *h.iter().min().unwrap() || cut.root != root {
                return fail(format!("H = {h:?}: layer {} has wrong endpoints", m + 1));
            }
            for &s in &cut.separator {
                if used[s] {
                    return fail(format!("H = {h:?}: node {s} in two layers"));
                }
                used[s] = true;
                if dist[s] != Some(m + 1) || active[s] {
                    return fail(format!("H = {h:?}: node {s} misplaced in layer {}", m + 1));
                }
            }
            let ring = (0..n).filter(|&v| dist[v] == Some(m + 1)).count();
            if ring != cut.separator.len() {
                return fail(format!("H = {h:?}: layer {} is not the full ring", m + 1));
            }
            let mut blocked = vec![false; n];
            for &s in &cut.separator {
                blocked[s] = true;
            }
            let reach = bfs_distances(graph, h, &blocked);
            if reach[root].is_some() {
                return fail(format!("H = {h:?}: layer {} does not separate", m + 1));
            }
        }
        counts.push(cuts.len());
    }
    Ok(counts)
}

fn mask(n: usize, nodes: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &v in nodes {
        m[v] = true;
    }
    m
}

fn criterion_knearest(rng: &mut ChaCha8Rng) -> Verdict {
    // constructed cases with hand-derived layer counts
    let path = |n: usize| {
        RagGraph::from_edges(n, &(1..n).map(|i| (i - 1, i)).collect::<Vec<_>>()).unwrap()
    };
    let grid = |w: usize, h: usize| RagGraph::from_edges(w * h, &grid_edges(w, h)).unwrap();
    let fixed: Vec<(&str, RagGraph, Vec<usize>, usize, Vec<usize>)> = vec![
        (
            "path, pair far from root",
            path(11),
            vec![0, 6, 7],
            0,
            vec![2],
        ),
        ("path, single node", path(11), vec![0, 5, 8], 0, vec![1, 1]),
        (
            "path, long run",
            path(12),
            vec![0, 5, 6, 7, 8, 9],
            0,
            vec![4],
        ),
        ("path, detour-free gap", path(6), vec![0, 2], 0, vec![1]),
        (
            "grid, corner block",
            grid(5, 5),
            vec![0, 18, 19, 23, 24],
            0,
            vec![4],
        ),
        ("grid, centre node", grid(5, 5), vec![0, 12], 0, vec![1]),
        (
            "grid, two detached",
            grid(6, 6),
            vec![0, 14, 35],
            0,
            vec![1, 1],
        ),
    ];
    let mut layers = 0;
    for (name, g, active, root, expected) in &fixed {
        let counts = check_knearest(g, &mask(g.node_count(), active), *root)?;
        if &counts != expected {
            return fail(format!(
                "{name}: layer counts {counts:?}, expected {expected:?}"
            ));
        }
        layers += counts.iter().sum::<usize>();
    }
    let mut components = 0;
    for _ in 0..300 {
        let (w, h) = (rng.gen_range(1..=7), rng.gen_range(2..=7));
        let g = grid(w, h);
        let n = w * h;
        let root = rng.gen_range(0..n);
        let density = rng.gen_range(0.1..0.5);
        let mut active: Vec<bool> = (0..n).map(|_| rng.gen_bool(density)).collect();
        active[root] = true;
        let counts = check_knearest(&g, &active, root)?;
        components += counts.len();
        layers += counts.iter().sum::<usize>();
    }
    Ok(format!(
        "{} constructed cases and {components} random components; {layers} layers disjoint, at exact BFS distance, separating",
        fixed.len()
    ))
}

// ---------------------------------------------------------------------------
// [7] beta schedule

fn criterion_beta() -> Verdict {
    let eta: f64 = 0.1;
    let expected = [
        (100, eta),
        (200, eta * 2f64.powf(2.2)),
        (300, eta * 3f64.powf(2.2)),
    ];
    for (iter, want) in expected {
        let got = beta_schedule(iter, eta);
        if ((got - want) / want).abs() > 1e-9 {
            return fail(format!("iter {iter}: {got} vs {want}"));
        }
    }
    Ok(format!(
        "beta(100, 200, 300) = {:.9}, {:.9}, {:.9}",
        beta_schedule(100, eta),
        beta_schedule(200, eta),
        beta_schedule(300, eta)
    ))
}

// ---------------------------------------------------------------------------
// [8] determinism

fn write_compare_inputs(
    dir: &Path,
    rng: &mut ChaCha8Rng,
) -> (std::path::PathBuf, std::path::PathBuf) {
    let (w, h) = (24, 18);
    let mut px = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let base: i32 = if x < 8 {
                50
            } else if y < 9 {
                130
            } else {
                210
            };
            px.push((base + rng.gen_range(-35..=35)).clamp(0, 255) as u32);
        }
    }
    let img = dir.join("img.pgm");
    fs::write(&img, encode_pgm(w, h, &px, false).unwrap()).unwrap();
    let scr = dir.join("scribbles.json");
    // strokes are 4-connected pixel runs, so each covers adjacent superpixels
    let stroke = |pixels: Vec<(usize, usize)>| {
        pixels
            .iter()
            .map(|(r, c)| format!("[{r},{c}]"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let json = format!(
        r#"{{"labels":[{{"id":1,"pixels":[{}]}},{{"id":2,"background":true,"pixels":[{}]}},{{"id":3,"pixels":[{}]}}]}}"#,
        stroke((2..16).map(|r| (r, 3)).collect()),
        stroke((12..22).map(|c| (3, c)).collect()),
        stroke((12..22).map(|c| (14, c)).collect()),
    );
    fs::write(&scr, json).unwrap();
    (img, scr)
}

fn stats_without_time(cmp: &mrfseg::pipeline::Comparison) -> Vec<serde_json::Value> {
    cmp.rows
        .iter()
        .map(|row| {
            let mut v: serde_json::Value = serde_json::from_str(&row.stats.to_json()).unwrap();
            v.as_object_mut().unwrap().remove("time_seconds");
            v
        })
        .collect()
}

fn criterion_determinism(rng: &mut ChaCha8Rng) -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (img, scr) = write_compare_inputs(dir.path(), rng);
    let mut cfg = RunConfig::new(&img, &scr, Variant::IlpPc);
    cfg.superpixels = 60;
    cfg.time_limit = 30.0;
    let first = run_compare(&cfg, &Variant::ALL, true).map_err(|e| e.to_string())?;
    let second = run_compare(&cfg, &Variant::ALL, true).map_err(|e| e.to_string())?;
    if let Some((v, msg)) = first.error.as_ref().or(second.error.as_ref()) {
        return fail(format!("{v} failed: {msg}"));
    }
    for row in &first.rows {
        if row.stats.status == "time-limit" {
            return fail(format!(
                "{} hit the time limit; comparison not meaningful",
                row.stats.model
            ));
        }
    }
    let (a, b) = (stats_without_time(&first), stats_without_time(&second));
    if a != b {
        return fail(format!("stats differ:\n{a:?}\n{b:?}"));
    }
    if first.to_csv(false) != second.to_csv(false) {
        return fail("CSV tables differ".into());
    }
    Ok(format!(
        "{} models, identical stats across two runs",
        a.len()
    ))
}

// ---------------------------------------------------------------------------
// [9] LP-PC fractionality

/// 2x3 grid, two labels, unit sizes and boundaries; its connected LP
/// optimum leaves part of the grid fractional.
fn fractional_instance() -> (MrfInstance, ScribbleSet) {
    let graph = RagGraph::from_edges(6, &grid_edges(2, 3)).unwrap();
    let scribbles = ScribbleSet::from_nodes(&graph, &[vec![4], vec![2]], None).unwrap();
    let costs = vec![
        0.75, 1.0, //
        0.0, 1.0, //
        0.25, 0.5, //
        0.75, 0.0, //
        0.25, 0.5, //
        0.75, 0.5,
    ];
    let unary = UnaryField::new(6, 2, costs).unwrap();
    let inst = build_instance(graph, unary, &scribbles, 0.1, Variant::LpPc).unwrap();
    (inst, scribbles)
}

fn criterion_fractional() -> Verdict {
    let (inst, scribbles) = fractional_instance();
    let relax = solve_relaxation(&inst, None).map_err(|e| e.to_string())?;
    let space = lower_model(&inst);
    let fraction = relax.unlabeled_fraction();
    if fraction <= 0.0 {
        return fail("relaxation came out integral".into());
    }
    for i in 0..inst.node_count() {
        if let Some(l) = relax.labeling.get(i) {
            let v = relax.values[space.x(i, l)];
            if v < 1.0 - 1e-6 {
                return fail(format!("node {i} labeled {l} with value {v}"));
            }
        }
    }
    let exact = brute_force(
        &inst
            .with_variant(&scribbles, Variant::IlpPc)
            .map_err(|e| e.to_string())?,
        DEFAULT_CAP,
    )
    .map_err(|e| e.to_string())?;
    if relax.objective > exact.energy + ORACLE_TOL {
        return fail(format!(
            "LP {} above integral optimum {}",
            relax.objective, exact.energy
        ));
    }
    Ok(format!(
        "unlabeled fraction {fraction:.4}; LP {:.6} < integral optimum {:.6}",
        relax.objective, exact.energy
    ))
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let cases = build_cases(&mut rng);
    let build_time = start.elapsed();
    let oracle =
        criterion_oracle(&cases).map(|s| format!("{s} in {:.1} s", build_time.as_secs_f64()));
    let results: Vec<(&str, Verdict)> = vec![
        ("oracle optimality", oracle),
        ("relaxation ordering", criterion_ordering(&cases)),
        ("cut soundness", criterion_cuts(&cases, &mut rng)),
        ("gap semantics", criterion_gap(&cases, &mut rng)),
        ("heuristic feasibility", criterion_heuristic(&cases)),
        ("k-nearest structure", criterion_knearest(&mut rng)),
        ("beta schedule", criterion_beta()),
        ("determinism", criterion_determinism(&mut rng)),
        ("lp-pc fractionality", criterion_fractional()),
    ];
    let mut stderr = std::io::stderr();
    let mut failed = Vec::new();
    for (i, (name, verdict)) in results.iter().enumerate() {
        let line = match verdict {
            Ok(detail) => format!("[{}] {name}: PASS - {detail}", i + 1),
            Err(why) => {
                failed.push(*name);
                format!("[{}] {name}: FAIL - {why}", i + 1)
            }
        };
        writeln!(stderr, "{line}").unwrap();
    }
    writeln!(
        stderr,
        "acceptance finished in {:.1} s",
        start.elapsed().as_secs_f64()
    )
    .unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
