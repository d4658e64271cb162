//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! Columns are factored left to right (sparsest first) with threshold
//! partial pivoting; each column is eliminated against the already-built
//! `L` by a sparse triangular solve whose nonzero pattern is found by
//! depth-first search. Basis changes between refactorizations are kept as
//! eta columns.

const PIVOT_THRESHOLD: f64 = 0.1;
const SINGULAR_TOL: f64 = 1e-11;
const DROP_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
struct Eta {
    position: usize,
    pivot: f64,
    entries: Vec<(usize, f64)>,
}

/// Basis positions that could not be pivoted, and the rows left over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Singular {
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LuFactor {
    m: usize,
    pivot_row: Vec<usize>,
    col_pos: Vec<usize>,
    l_cols: Vec<Vec<(usize, f64)>>,
    u_cols: Vec<Vec<(usize, f64)>>,
    u_diag: Vec<f64>,
    etas: Vec<Eta>,
}

impl LuFactor {
    /// Factors the `m x m` matrix whose column at basis position `j` is
    /// `columns[j]` (list of `(row, value)`).
    pub fn factor<C: AsRef<[(usize, f64)]>>(m: usize, columns: &[C]) -> Result<Self, Singular> {
        assert_eq!(columns.len(), m, "basis must be square");
        let mut row_count = vec![0usize; m];
        for col in columns {
            for &(r, _) in col.as_ref() {
                row_count[r] += 1;
            }
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&j| (columns[j].as_ref().len(), j));

        let mut lu = LuFactor {
            m,
            pivot_row: Vec::with_capacity(m),
            col_pos: Vec::with_capacity(m),
            l_cols: Vec::with_capacity(m),
            u_cols: Vec::with_capacity(m),
            u_diag: Vec::with_capacity(m),
            etas: Vec::new(),
        };
        let mut row_step = vec![usize::MAX; m];
        let mut work = vec![0.0; m];
        let mut in_pattern = vec![false; m];
        let mut pattern: Vec<usize> = Vec::new();
        let mut visited = vec![false; m];
        let mut topo: Vec<usize> = Vec::new();
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut failed = Vec::new();

        for &pos in &order {
            for &(r, v) in columns[pos].as_ref() {
                work[r] += v;
                if !in_pattern[r] {
                    in_pattern[r] = true;
                    pattern.push(r);
                }
            }
            // reach of the pattern through L, in topological order
            topo.clear();
            for idx in 0..pattern.len() {
                let start = pattern[idx];
                let step = row_step[start];
                if step == usize::MAX || visited[step] {
                    continue;
                }
                visited[step] = true;
                stack.push((step, 0));
                while let Some(top) = stack.last_mut() {
                    let (s, child) = *top;
                    let col = &lu.l_cols[s];
                    if child < col.len() {
                        top.1 += 1;
                        let next = row_step[col[child].0];
                        if next != usize::MAX && !visited[next] {
                            visited[next] = true;
                            stack.push((next, 0));
                        }
                    } else {
                        topo.push(s);
                        stack.pop();
                    }
                }
            }
            let mut u_col = Vec::new();
            for &s in topo.iter().rev() {
                visited[s] = false;
                let v = work[lu.pivot_row[s]];
                if v == 0.0 {
                    continue;
                }
                u_col.push((s, v));
                for &(r, lv) in &lu.l_cols[s] {
                    if !in_pattern[r] {
                        in_pattern[r] = true;
                        pattern.push(r);
                    }
                    work[r] -= lv * v;
                }
            }
            let mut max_abs = 0.0f64;
            for &r in &pattern {
                if row_step[r] == usize::MAX {
                    max_abs = max_abs.max(work[r].abs());
                }
            }
            if max_abs < SINGULAR_TOL {
                failed.push(pos);
            } else {
                let mut best: Option<usize> = None;
                for &r in &pattern {
                    if row_step[r] != usize::MAX || work[r].abs() < PIVOT_THRESHOLD * max_abs {
                        continue;
                    }
                    best = match best {
                        Some(b) if (row_count[b], b) <= (row_count[r], r) => Some(b),
                        _ => Some(r),
                    };
                }
                let prow = best.expect("some candidate reaches the threshold");
                let pivot = work[prow];
                let step = lu.pivot_row.len();
                let mut l_col = Vec::new();
                for &r in &pattern {
                    if r != prow && row_step[r] == usize::MAX && work[r].abs() > DROP_TOL {
                        l_col.push((r, work[r] / pivot));
                    }
                }
                row_step[prow] = step;
                lu.pivot_row.push(prow);
                lu.col_pos.push(pos);
                lu.l_cols.push(l_col);
                u_col.retain(|&(_, v)| v.abs() > DROP_TOL);
                lu.u_cols.push(u_col);
                lu.u_diag.push(pivot);
            }
            for &r in &pattern {
                work[r] = 0.0;
                in_pattern[r] = false;
            }
            pattern.clear();
        }
        if failed.is_empty() {
            Ok(lu)
        } else {
            let rows = (0..m).filter(|&r| row_step[r] == usize::MAX).collect();
            Err(Singular {
                positions: failed,
                rows,
            })
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn eta_count(&self) -> usize {
        self.etas.len()
    }

    /// Solves `B z = rhs`; `rhs` is indexed by row and overwritten. The
    /// result is indexed by basis position.
    pub fn ftran(&self, rhs: &mut [f64], out: &mut [f64]) {
        for s in 0..self.m {
            let v = rhs[self.pivot_row[s]];
            if v != 0.0 {
                for &(r, lv) in &self.l_cols[s] {
                    rhs[r] -= lv * v;
                }
            }
        }
        // rhs now holds w in pivot-row slots; solve U in place
        for k in (0..self.m).rev() {
            let v = rhs[self.pivot_row[k]] / self.u_diag[k];
            rhs[self.pivot_row[k]] = v;
            if v != 0.0 {
                for &(s, uv) in &self.u_cols[k] {
                    rhs[self.pivot_row[s]] -= uv * v;
                }
            }
        }
        for k in 0..self.m {
            out[self.col_pos[k]] = rhs[self.pivot_row[k]];
        }
        for eta in &self.etas {
            let vp = out[eta.position] / eta.pivot;
            out[eta.position] = vp;
            if vp != 0.0 {
                for &(i, w) in &eta.entries {
                    out[i] -= w * vp;
                }
            }
        }
    }

    /// Solves `Bᵀ y = rhs`; `rhs` is indexed by basis position and
    /// overwritten. The result is indexed by row.
    pub fn btran(&self, rhs: &mut [f64], out: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let dot: f64 = eta.entries.iter().map(|&(i, w)| w * rhs[i]).sum();
            rhs[eta.position] = (rhs[eta.position] - dot) / eta.pivot;
        }
        // g_k stored in out[pivot_row[k]] temporarily
        for k in 0..self.m {
            let mut v = rhs[self.col_pos[k]];
            for &(s, uv) in &self.u_cols[k] {
                v -= uv * out[self.pivot_row[s]];
            }
            out[self.pivot_row[k]] = v / self.u_diag[k];
        }
        for s in (0..self.m).rev() {
            let mut v = out[self.pivot_row[s]];
            for &(r, lv) in &self.l_cols[s] {
                v -= lv * out[r];
            }
            out[self.pivot_row[s]] = v;
        }
    }

    /// Records the replacement of the column at `position` by a column
    /// whose FTRAN result is `w`.
    pub fn push_eta(&mut self, position: usize, w: &[f64]) {
        let entries = w
            .iter()
            .enumerate()
            .filter(|&(i, v)| i != position && v.abs() > DROP_TOL)
            .map(|(i, &v)| (i, v))
            .collect();
        self.etas.push(Eta {
            position,
            pivot: w[position],
            entries,
        });
    }
}
