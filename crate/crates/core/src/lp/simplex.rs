use std::time::Instant;

use super::lu::LuFactor;
use super::{Basis, LpError, LpProblem, LpSolution, LpStatus, Row, Sense, VarStatus};

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const MAX_CLEANUP_ROUNDS: usize = 50;

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Pivot budget per `solve` call; `None` picks a size-based default.
    pub max_pivots: Option<usize>,
    pub deadline: Option<Instant>,
    pub refactor_interval: usize,
    /// Consecutive non-improving pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_pivots: None,
            deadline: None,
            refactor_interval: 100,
            bland_after: 1000,
        }
    }
}

enum DualOutcome {
    PrimalFeasible,
    Infeasible,
}

/// Stateful bounded-variable simplex. Keeps its basis and factorization
/// between calls so that added rows and changed bounds re-solve warm.
#[derive(Debug, Clone)]
pub struct SimplexSolver {
    n: usize,
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    row_entries: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    state: Vec<VarStatus>,
    basis: Vec<usize>,
    x: Vec<f64>,
    d: Vec<f64>,
    lu: Option<LuFactor>,
    primal_dirty: bool,
    options: SimplexOptions,
    pivots: usize,
    alpha: Vec<f64>,
    marked: Vec<bool>,
    touched: Vec<usize>,
}

impl SimplexSolver {
    /// Loads the problem with the all-logical basis. The problem is assumed
    /// valid (see [`LpProblem::validate`]).
    pub fn new(p: &LpProblem) -> Self {
        let n = p.column_count();
        let mut solver = Self {
            n,
            m: 0,
            cols: vec![Vec::new(); n],
            row_entries: Vec::new(),
            rhs: Vec::new(),
            cost: p.objective.clone(),
            lower: p.lower.clone(),
            upper: p.upper.clone(),
            state: Vec::with_capacity(n),
            basis: Vec::new(),
            x: Vec::with_capacity(n),
            d: p.objective.clone(),
            lu: None,
            primal_dirty: true,
            options: SimplexOptions::default(),
            pivots: 0,
            alpha: vec![0.0; n],
            marked: vec![false; n],
            touched: Vec::new(),
        };
        for j in 0..n {
            let at_upper = p.objective[j] < 0.0;
            solver.state.push(if at_upper {
                VarStatus::AtUpper
            } else {
                VarStatus::AtLower
            });
            solver
                .x
                .push(if at_upper { p.upper[j] } else { p.lower[j] });
        }
        solver.add_rows(&p.rows);
        solver
    }

    pub fn set_options(&mut self, options: SimplexOptions) {
        self.options = options;
    }

    pub fn options(&self) -> &SimplexOptions {
        &self.options
    }

    pub fn column_count(&self) -> usize {
        self.n
    }

    pub fn row_count(&self) -> usize {
        self.m
    }

    /// Total pivots performed since construction.
    pub fn pivots(&self) -> usize {
        self.pivots
    }

    /// Appends rows; their logicals enter the basis, which keeps the
    /// current basis dual feasible.
    pub fn add_rows(&mut self, rows: &[Row]) {
        for row in rows {
            let i = self.m;
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(row.coeffs.len());
            for &(j, a) in &row.coeffs {
                if a == 0.0 {
                    continue;
                }
                match entries.iter_mut().find(|(c, _)| *c == j) {
                    Some(e) => e.1 += a,
                    None => entries.push((j, a)),
                }
            }
            for &(j, a) in &entries {
                self.cols[j].push((i, a));
            }
            self.row_entries.push(entries);
            self.rhs.push(row.rhs);
            let (lo, hi) = match row.sense {
                Sense::Eq => (0.0, 0.0),
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
            };
            self.cost.push(0.0);
            self.lower.push(lo);
            self.upper.push(hi);
            self.state.push(VarStatus::Basic);
            self.x.push(0.0);
            self.d.push(0.0);
            self.alpha.push(0.0);
            self.marked.push(false);
            self.basis.push(self.n + i);
            self.m += 1;
        }
        if !rows.is_empty() {
            self.lu = None;
            self.primal_dirty = true;
        }
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    /// Changes the bounds of a structural column.
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        assert!(var < self.n, "only structural bounds can change");
        if self.lower[var] == lower && self.upper[var] == upper {
            return;
        }
        self.lower[var] = lower;
        self.upper[var] = upper;
        match self.state[var] {
            VarStatus::AtLower => self.x[var] = lower,
            VarStatus::AtUpper => self.x[var] = upper,
            VarStatus::Basic => {}
        }
        self.primal_dirty = true;
    }

    pub fn basis(&self) -> Basis {
        Basis {
            columns: self.state[..self.n].to_vec(),
            rows: self.state[self.n..].to_vec(),
        }
    }

    /// Installs a warm-start basis. Rows the basis does not know about get
    /// basic logicals. An inconsistent basis is ignored.
    pub fn set_basis(&mut self, basis: &Basis) {
        if basis.columns.len() != self.n || basis.rows.len() > self.m {
            return;
        }
        let mut state: Vec<VarStatus> = basis.columns.clone();
        state.extend_from_slice(&basis.rows);
        state.resize(self.n + self.m, VarStatus::Basic);
        if state == self.state {
            return;
        }
        let basics: Vec<usize> = (0..state.len())
            .filter(|&j| state[j] == VarStatus::Basic)
            .collect();
        if basics.len() != self.m {
            return;
        }
        for (j, status) in state.iter_mut().enumerate() {
            match *status {
                VarStatus::AtLower if !self.lower[j].is_finite() => *status = VarStatus::AtUpper,
                VarStatus::AtUpper if !self.upper[j].is_finite() => *status = VarStatus::AtLower,
                _ => {}
            }
            self.x[j] = match *status {
                VarStatus::AtLower => self.lower[j],
                VarStatus::AtUpper => self.upper[j],
                VarStatus::Basic => self.x[j],
            };
        }
        self.state = state;
        self.basis = basics;
        self.lu = None;
        self.primal_dirty = true;
    }

    /// Resets to the all-logical basis with structurals at their cheaper bound.
    fn reset_to_slack_basis(&mut self) {
        for j in 0..self.n {
            if self.cost[j] < 0.0 {
                self.state[j] = VarStatus::AtUpper;
                self.x[j] = self.upper[j];
            } else {
                self.state[j] = VarStatus::AtLower;
                self.x[j] = self.lower[j];
            }
        }
        for i in 0..self.m {
            self.state[self.n + i] = VarStatus::Basic;
        }
        self.basis = (self.n..self.n + self.m).collect();
        self.lu = None;
        self.primal_dirty = true;
    }

    fn column(&self, j: usize) -> std::borrow::Cow<'_, [(usize, f64)]> {
        if j < self.n {
            std::borrow::Cow::Borrowed(&self.cols[j])
        } else {
            std::borrow::Cow::Owned(vec![(j - self.n, 1.0)])
        }
    }

    fn nonbasic_at_finite_bound(&mut self, j: usize) {
        if self.lower[j].is_finite() {
            self.state[j] = VarStatus::AtLower;
            self.x[j] = self.lower[j];
        } else {
            self.state[j] = VarStatus::AtUpper;
            self.x[j] = self.upper[j];
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        for _ in 0..=self.m.max(1) {
            let columns: Vec<_> = self.basis.iter().map(|&j| self.column(j)).collect();
            match LuFactor::factor(self.m, &columns) {
                Ok(lu) => {
                    self.lu = Some(lu);
                    self.primal_dirty = true;
                    return Ok(());
                }
                Err(singular) => {
                    for (&pos, &row) in singular.positions.iter().zip(&singular.rows) {
                        let old = self.basis[pos];
                        self.nonbasic_at_finite_bound(old);
                        let logical = self.n + row;
                        self.basis[pos] = logical;
                        self.state[logical] = VarStatus::Basic;
                    }
                }
            }
        }
        Err(LpError::NumericalBreakdown(
            "basis repair did not converge".into(),
        ))
    }

    fn compute_primal(&mut self) {
        let mut r = self.rhs.clone();
        for j in 0..self.n + self.m {
            if self.state[j] == VarStatus::Basic || self.x[j] == 0.0 {
                continue;
            }
            let v = self.x[j];
            if j < self.n {
                for &(i, a) in &self.cols[j] {
                    r[i] -= a * v;
                }
            } else {
                r[j - self.n] -= v;
            }
        }
        let mut z = vec![0.0; self.m];
        self.lu.as_ref().expect("factored").ftran(&mut r, &mut z);
        for (pos, &j) in self.basis.iter().enumerate() {
            self.x[j] = z[pos];
        }
        self.primal_dirty = false;
    }

    fn compute_duals(&mut self) {
        let mut h: Vec<f64> = self.basis.iter().map(|&j| self.cost[j]).collect();
        let mut y = vec![0.0; self.m];
        self.lu.as_ref().expect("factored").btran(&mut h, &mut y);
        for j in 0..self.n {
            self.d[j] = if self.state[j] == VarStatus::Basic {
                0.0
            } else {
                self.cost[j] - self.cols[j].iter().map(|&(i, a)| a * y[i]).sum::<f64>()
            };
        }
        for i in 0..self.m {
            let j = self.n + i;
            self.d[j] = if self.state[j] == VarStatus::Basic {
                0.0
            } else {
                -y[i]
            };
        }
    }

    fn ensure_factored(&mut self) -> Result<(), LpError> {
        if self.lu.is_none() {
            self.refactor()?;
            self.compute_primal();
            self.compute_duals();
        } else if self.primal_dirty {
            self.compute_primal();
        }
        Ok(())
    }

    fn fresh_factor(&mut self) -> Result<(), LpError> {
        self.refactor()?;
        self.compute_primal();
        self.compute_duals();
        Ok(())
    }

    /// Flips boxed nonbasics with wrong-sign reduced costs. Returns
    /// `(flipped, unflippable)` counts.
    fn repair_dual_signs(&mut self) -> (usize, usize) {
        let (mut flipped, mut stuck) = (0, 0);
        for j in 0..self.n + self.m {
            if self.lower[j] == self.upper[j] {
                continue;
            }
            match self.state[j] {
                VarStatus::AtLower if self.d[j] < -DUAL_TOL => {
                    if self.upper[j].is_finite() {
                        self.state[j] = VarStatus::AtUpper;
                        self.x[j] = self.upper[j];
                        flipped += 1;
                    } else {
                        stuck += 1;
                    }
                }
                VarStatus::AtUpper if self.d[j] > DUAL_TOL => {
                    if self.lower[j].is_finite() {
                        self.state[j] = VarStatus::AtLower;
                        self.x[j] = self.lower[j];
                        flipped += 1;
                    } else {
                        stuck += 1;
                    }
                }
                _ => {}
            }
        }
        if flipped > 0 {
            self.primal_dirty = true;
        }
        (flipped, stuck)
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.lower[j] - PRIMAL_TOL {
            self.lower[j] - v
        } else if v > self.upper[j] + PRIMAL_TOL {
            v - self.upper[j]
        } else {
            0.0
        }
    }

    fn pivot_budget(&self) -> usize {
        self.options
            .max_pivots
            .unwrap_or(20 * (self.n + self.m) + 10_000)
    }

    fn check_limits(&self, used: usize) -> Result<(), LpError> {
        if used >= self.pivot_budget() {
            return Err(LpError::IterationLimit(used));
        }
        if used.is_multiple_of(64) {
            if let Some(deadline) = self.options.deadline {
                if Instant::now() >= deadline {
                    return Err(LpError::TimeLimit);
                }
            }
        }
        Ok(())
    }

    /// Computes `alpha_j = (B⁻¹ a_j)_p` for all columns touching row `p`.
    fn pivot_row(&mut self, p: usize) {
        for &j in &self.touched {
            self.alpha[j] = 0.0;
            self.marked[j] = false;
        }
        self.touched.clear();
        let mut h = vec![0.0; self.m];
        h[p] = 1.0;
        let mut rho = vec![0.0; self.m];
        self.lu.as_ref().expect("factored").btran(&mut h, &mut rho);
        for (i, &r) in rho.iter().enumerate() {
            if r.abs() <= 1e-13 {
                continue;
            }
            let logical = self.n + i;
            for j in self.row_entries[i].iter().map(|e| e.0).chain([logical]) {
                if !self.marked[j] {
                    self.marked[j] = true;
                    self.touched.push(j);
                }
            }
            for &(j, a) in &self.row_entries[i] {
                self.alpha[j] += r * a;
            }
            self.alpha[logical] += r;
        }
        self.touched.sort_unstable();
    }

    fn ftran_column(&self, j: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.m];
        for &(i, a) in self.column(j).iter() {
            r[i] += a;
        }
        let mut w = vec![0.0; self.m];
        self.lu.as_ref().expect("factored").ftran(&mut r, &mut w);
        w
    }

    fn dual_phase(&mut self, used: &mut usize) -> Result<DualOutcome, LpError> {
        let mut stalled = 0usize;
        let mut bland = false;
        let mut retries = 0usize;
        loop {
            self.check_limits(*used)?;
            if self
                .lu
                .as_ref()
                .is_none_or(|lu| lu.eta_count() >= self.options.refactor_interval)
            {
                self.fresh_factor()?;
            }

            let mut leave: Option<(usize, f64)> = None;
            for (pos, &j) in self.basis.iter().enumerate() {
                let inf = self.infeasibility(j);
                if inf <= 0.0 {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((best_pos, best_inf)) => {
                        if bland {
                            j < self.basis[best_pos]
                        } else {
                            inf > best_inf
                        }
                    }
                };
                if better {
                    leave = Some((pos, inf));
                }
            }
            let Some((p, _)) = leave else {
                return Ok(DualOutcome::PrimalFeasible);
            };
            let leaving = self.basis[p];
            let xp = self.x[leaving];
            let (s, target) = if xp < self.lower[leaving] {
                (1.0, self.lower[leaving])
            } else {
                (-1.0, self.upper[leaving])
            };

            self.pivot_row(p);
            let mut entering: Option<usize> = None;
            if bland {
                let mut best_ratio = f64::INFINITY;
                for &j in &self.touched {
                    if let Some((dt, a)) = self.ratio_candidate(j, s) {
                        let ratio = dt / a;
                        if ratio < best_ratio - 1e-12 {
                            best_ratio = ratio;
                            entering = Some(j);
                        }
                    }
                }
            } else {
                let mut bound = f64::INFINITY;
                for &j in &self.touched {
                    if let Some((dt, a)) = self.ratio_candidate(j, s) {
                        bound = bound.min((dt + DUAL_TOL) / a);
                    }
                }
                let mut best_alpha = 0.0;
                for &j in &self.touched {
                    if let Some((dt, a)) = self.ratio_candidate(j, s) {
                        if dt / a <= bound && a > best_alpha {
                            best_alpha = a;
                            entering = Some(j);
                        }
                    }
                }
            }
            let Some(q) = entering else {
                if self.lu.as_ref().map_or(0, LuFactor::eta_count) > 0 && retries < 2 {
                    retries += 1;
                    self.fresh_factor()?;
                    continue;
                }
                return Ok(DualOutcome::Infeasible);
            };

            let w = self.ftran_column(q);
            let alpha_q = self.alpha[q];
            if (w[p] - alpha_q).abs() > 1e-7 * (1.0 + alpha_q.abs()) || w[p].abs() < PIVOT_TOL {
                if retries >= 3 {
                    return Err(LpError::NumericalBreakdown(format!(
                        "pivot mismatch {} vs {alpha_q} after refactorization",
                        w[p]
                    )));
                }
                retries += 1;
                self.fresh_factor()?;
                continue;
            }
            retries = 0;

            let (dt, a) = self.ratio_candidate(q, s).expect("entering is a candidate");
            let t = dt / a;
            for idx in 0..self.touched.len() {
                let j = self.touched[idx];
                if self.state[j] != VarStatus::Basic {
                    self.d[j] += t * s * self.alpha[j];
                }
            }
            self.d[q] = 0.0;
            self.d[leaving] = s * t;

            let delta = (xp - target) / w[p];
            for (pos, &j) in self.basis.iter().enumerate() {
                self.x[j] -= delta * w[pos];
            }
            self.x[q] += delta;
            self.x[leaving] = target;
            self.state[leaving] = if s > 0.0 {
                VarStatus::AtLower
            } else {
                VarStatus::AtUpper
            };
            self.state[q] = VarStatus::Basic;
            self.basis[p] = q;
            self.lu.as_mut().expect("factored").push_eta(p, &w);
            self.pivots += 1;
            *used += 1;

            if t * (xp - target).abs() <= 1e-12 {
                stalled += 1;
                if stalled >= self.options.bland_after {
                    bland = true;
                }
            } else {
                stalled = 0;
                bland = false;
            }
        }
    }

    /// `(sign-corrected reduced cost, |alpha|)` if `j` may enter for a
    /// leaving variable moving in direction `s`.
    fn ratio_candidate(&self, j: usize, s: f64) -> Option<(f64, f64)> {
        if self.state[j] == VarStatus::Basic || self.lower[j] == self.upper[j] {
            return None;
        }
        let sa = s * self.alpha[j];
        if sa.abs() <= PIVOT_TOL {
            return None;
        }
        match self.state[j] {
            VarStatus::AtLower if sa < 0.0 => Some((self.d[j].max(0.0), sa.abs())),
            VarStatus::AtUpper if sa > 0.0 => Some(((-self.d[j]).max(0.0), sa.abs())),
            _ => None,
        }
    }

    /// Primal simplex from a primal feasible basis.
    fn primal_phase(&mut self, used: &mut usize) -> Result<(), LpError> {
        let mut stalled = 0usize;
        loop {
            self.check_limits(*used)?;
            if self
                .lu
                .as_ref()
                .is_none_or(|lu| lu.eta_count() >= self.options.refactor_interval)
            {
                self.fresh_factor()?;
            }
            let bland = stalled >= self.options.bland_after;
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n + self.m {
                if self.lower[j] == self.upper[j] {
                    continue;
                }
                let gain = match self.state[j] {
                    VarStatus::AtLower if self.d[j] < -DUAL_TOL => -self.d[j],
                    VarStatus::AtUpper if self.d[j] > DUAL_TOL => self.d[j],
                    _ => continue,
                };
                if entering.is_none_or(|(_, g)| !bland && gain > g) {
                    entering = Some((j, gain));
                }
                if bland {
                    break;
                }
            }
            let Some((q, _)) = entering else {
                return Ok(());
            };
            let dir = if self.state[q] == VarStatus::AtLower {
                1.0
            } else {
                -1.0
            };
            let w = self.ftran_column(q);
            let mut step = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, f64)> = None;
            for (pos, &j) in self.basis.iter().enumerate() {
                if w[pos].abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = -dir * w[pos];
                let (limit, bound) = if rate < 0.0 && self.lower[j].is_finite() {
                    (
                        ((self.x[j] - self.lower[j]) / -rate).max(0.0),
                        self.lower[j],
                    )
                } else if rate > 0.0 && self.upper[j].is_finite() {
                    (((self.upper[j] - self.x[j]) / rate).max(0.0), self.upper[j])
                } else {
                    continue;
                };
                let better = limit < step - 1e-12
                    || (limit <= step + 1e-12
                        && leave.is_some_and(|(lp, _)| w[pos].abs() > w[lp].abs()));
                if better {
                    step = limit;
                    leave = Some((pos, bound));
                }
            }
            if !step.is_finite() {
                return Err(LpError::NumericalBreakdown(
                    "unbounded ray in a bounded problem".into(),
                ));
            }
            for (pos, &j) in self.basis.iter().enumerate() {
                self.x[j] -= dir * step * w[pos];
            }
            self.x[q] += dir * step;
            match leave {
                None => {
                    self.state[q] = if dir > 0.0 {
                        self.x[q] = self.upper[q];
                        VarStatus::AtUpper
                    } else {
                        self.x[q] = self.lower[q];
                        VarStatus::AtLower
                    };
                }
                Some((p, bound)) => {
                    let leaving = self.basis[p];
                    self.x[leaving] = bound;
                    self.state[leaving] = if bound == self.lower[leaving] {
                        VarStatus::AtLower
                    } else {
                        VarStatus::AtUpper
                    };
                    self.state[q] = VarStatus::Basic;
                    self.basis[p] = q;
                    self.lu.as_mut().expect("factored").push_eta(p, &w);
                    self.compute_duals();
                }
            }
            self.pivots += 1;
            *used += 1;
            if step <= 1e-12 {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
    }

    /// Re-optimizes from the current basis.
    pub fn solve(&mut self) -> Result<LpSolution, LpError> {
        let start = self.pivots;
        let mut used = 0usize;
        self.ensure_factored()?;
        if self.lu.as_ref().map_or(0, LuFactor::eta_count) > 0 {
            self.compute_duals();
        }
        let (_, stuck) = self.repair_dual_signs();
        if stuck > 0 {
            self.reset_to_slack_basis();
            self.ensure_factored()?;
            self.repair_dual_signs();
        }
        if self.primal_dirty {
            self.compute_primal();
        }
        for _ in 0..MAX_CLEANUP_ROUNDS {
            match self.dual_phase(&mut used)? {
                DualOutcome::Infeasible => return Ok(self.solution(LpStatus::Infeasible, start)),
                DualOutcome::PrimalFeasible => {}
            }
            if self.lu.as_ref().map_or(0, LuFactor::eta_count) > 0 {
                self.fresh_factor()?;
            }
            if self.basis.iter().any(|&j| self.infeasibility(j) > 0.0) {
                continue;
            }
            let (flipped, stuck) = self.repair_dual_signs();
            if flipped > 0 {
                self.compute_primal();
                continue;
            }
            if stuck > 0 {
                self.primal_phase(&mut used)?;
                self.fresh_factor()?;
                if self.basis.iter().any(|&j| self.infeasibility(j) > 0.0) {
                    continue;
                }
            }
            return Ok(self.solution(LpStatus::Optimal, start));
        }
        Err(LpError::NumericalBreakdown(
            "primal/dual cleanup did not settle".into(),
        ))
    }

    fn solution(&self, status: LpStatus, start: usize) -> LpSolution {
        let x: Vec<f64> = (0..self.n)
            .map(|j| {
                let v = self.x[j];
                if status == LpStatus::Optimal {
                    v.clamp(self.lower[j], self.upper[j])
                } else {
                    v
                }
            })
            .collect();
        let objective = match status {
            LpStatus::Optimal => x.iter().zip(&self.cost).map(|(v, c)| v * c).sum(),
            LpStatus::Infeasible => f64::INFINITY,
        };
        LpSolution {
            status,
            x,
            objective,
            basis: self.basis(),
            pivots: self.pivots - start,
        }
    }
}
