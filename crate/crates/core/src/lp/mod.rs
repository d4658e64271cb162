//! Linear programming over bounded variables.
//!
//! The solver is a revised simplex method working on `A x + s = b` with one
//! logical `s_i` per row (`=` rows fix it at zero, `≤` rows make it
//! nonnegative, `≥` rows nonpositive). It runs the dual simplex whenever the
//! basis is dual feasible, which is always true for the all-logical start
//! when every structural variable is boxed, and keeps dual feasibility
//! across added rows and tightened bounds. A primal pass cleans up the rare
//! case where drift leaves an unflippable dual infeasibility.

mod lu;
mod simplex;

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

pub use lu::{LuFactor, Singular};
pub use simplex::{SimplexOptions, SimplexSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the row (zero when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            Sense::Eq => (act - self.rhs).abs(),
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - act).max(0.0),
        }
    }
}

/// `min cᵀx` subject to rows and `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LpProblem {
    pub fn column_count(&self) -> usize {
        self.objective.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Dimension(format!(
                "{n} objective entries, {} lower and {} upper bounds",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if !(l.is_finite() && u.is_finite()) || l > u || !self.objective[j].is_finite() {
                return Err(LpError::Dimension(format!(
                    "column {j}: bounds [{l}, {u}], cost {}",
                    self.objective[j]
                )));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            validate_row(row, n).map_err(|e| LpError::Dimension(format!("row {i}: {e}")))?;
        }
        Ok(())
    }

    /// CPLEX LP text format, for cross-checking with external solvers.
    pub fn to_cplex_lp(&self) -> String {
        fn term(out: &mut String, first: &mut bool, coef: f64, name: &str) {
            if coef == 0.0 {
                return;
            }
            let sign = if coef < 0.0 { "-" } else { "+" };
            if *first {
                if coef < 0.0 {
                    out.push_str("- ");
                }
            } else {
                let _ = write!(out, " {sign} ");
            }
            let _ = write!(out, "{} {name}", coef.abs());
            *first = false;
        }
        let mut out = String::from("\\ exported by mrfseg\nMinimize\n obj: ");
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            term(&mut out, &mut first, c, &format!("x{j}"));
        }
        if first {
            out.push('0');
        }
        out.push_str("\nSubject To\n");
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, " c{i}: ");
            let mut first = true;
            for &(j, a) in &row.coeffs {
                term(&mut out, &mut first, a, &format!("x{j}"));
            }
            if first {
                out.push_str("0 x0");
            }
            let op = match row.sense {
                Sense::Eq => "=",
                Sense::Le => "<=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(out, " {op} {}", row.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.objective.len() {
            let _ = writeln!(out, " {} <= x{j} <= {}", self.lower[j], self.upper[j]);
        }
        out.push_str("End\n");
        out
    }
}

fn validate_row(row: &Row, n: usize) -> Result<(), String> {
    if !row.rhs.is_finite() {
        return Err(format!("rhs {}", row.rhs));
    }
    for &(j, a) in &row.coeffs {
        if j >= n {
            return Err(format!("column {j} out of range"));
        }
        if !a.is_finite() {
            return Err(format!("coefficient {a} on column {j}"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
}

/// Basis descriptor: one status per structural column and per row logical.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Basis {
    pub columns: Vec<VarStatus>,
    pub rows: Vec<VarStatus>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub basis: Basis,
    pub pivots: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("malformed problem: {0}")]
    Dimension(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("iteration limit of {0} pivots reached")]
    IterationLimit(usize),
    #[error("time limit reached")]
    TimeLimit,
}

pub fn solve_lp(p: &LpProblem, warm: Option<&Basis>) -> Result<LpSolution, LpError> {
    p.validate()?;
    let mut solver = SimplexSolver::new(p);
    if let Some(basis) = warm {
        solver.set_basis(basis);
    }
    solver.solve()
}

/// Appends `rows` to `p` and re-solves from `warm`.
pub fn add_rows_and_resolve(
    p: &mut LpProblem,
    rows: Vec<Row>,
    warm: Option<&Basis>,
) -> Result<LpSolution, LpError> {
    let n = p.column_count();
    for row in &rows {
        validate_row(row, n).map_err(LpError::Dimension)?;
    }
    p.rows.extend(rows);
    solve_lp(p, warm)
}

/// Replaces the bounds of `var` and re-solves from `warm`.
pub fn tighten_bound_and_resolve(
    p: &mut LpProblem,
    var: usize,
    lower: f64,
    upper: f64,
    warm: Option<&Basis>,
) -> Result<LpSolution, LpError> {
    if var >= p.column_count() || !(lower <= upper) {
        return Err(LpError::Dimension(format!(
            "bounds [{lower}, {upper}] for column {var}"
        )));
    }
    p.lower[var] = lower;
    p.upper[var] = upper;
    solve_lp(p, warm)
}
