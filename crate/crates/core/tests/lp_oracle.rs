//! Dual simplex against vertex enumeration on small boxed LPs.

use proptest::prelude::*;

use mrfseg::lp::{
    add_rows_and_resolve, solve_lp, tighten_bound_and_resolve, LpProblem, LpStatus, Row, Sense,
};

const FEAS_TOL: f64 = 1e-7;

/// Solves a dense square system by Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-9 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn feasible(p: &LpProblem, x: &[f64]) -> bool {
    x.iter()
        .enumerate()
        .all(|(j, &v)| v >= p.lower[j] - FEAS_TOL && v <= p.upper[j] + FEAS_TOL)
        && p.rows.iter().all(|r| r.violation(x) <= FEAS_TOL)
}

/// Minimum over all basic feasible points; `None` when infeasible.
fn enumerate_vertices(p: &LpProblem) -> Option<f64> {
    let n = p.column_count();
    // candidate hyperplanes: each row at its rhs, each bound
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in &p.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &r.coeffs {
            a[j] += v;
        }
        planes.push((a, r.rhs));
    }
    for j in 0..n {
        let mut a = vec![0.0; n];
        a[j] = 1.0;
        planes.push((a.clone(), p.lower[j]));
        planes.push((a, p.upper[j]));
    }
    let mut best: Option<f64> = None;
    let m = planes.len();
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let a = pick.iter().map(|&i| planes[i].0.clone()).collect();
        let b = pick.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = solve_dense(a, b) {
            if feasible(p, &x) {
                let obj = p.objective_value(&x);
                best = Some(best.map_or(obj, |v: f64| v.min(obj)));
            }
        }
        // next n-combination of m planes
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < m - n + i {
                pick[i] += 1;
                for t in i + 1..n {
                    pick[t] = pick[t - 1] + 1;
                }
                break;
            }
        }
    }
}

fn small_int() -> impl Strategy<Value = f64> {
    (-3i32..=3).prop_map(|v| v as f64)
}

fn row_strategy(n: usize) -> impl Strategy<Value = Row> {
    (
        proptest::collection::vec(small_int(), n),
        0usize..3,
        -4i32..=6,
    )
        .prop_map(|(coeffs, sense, rhs)| Row {
            coeffs: coeffs
                .into_iter()
                .enumerate()
                .filter(|&(_, v)| v != 0.0)
                .collect(),
            sense: [Sense::Le, Sense::Ge, Sense::Eq][sense],
            rhs: rhs as f64,
        })
}

fn problem_strategy() -> impl Strategy<Value = LpProblem> {
    (2usize..=4).prop_flat_map(|n| {
        (
            proptest::collection::vec(small_int(), n),
            proptest::collection::vec((-2i32..=0, 1i32..=3), n),
            proptest::collection::vec(row_strategy(n), 1..=4),
        )
            .prop_map(|(objective, bounds, rows)| LpProblem {
                objective,
                lower: bounds.iter().map(|&(l, _)| l as f64).collect(),
                upper: bounds.iter().map(|&(_, u)| u as f64).collect(),
                rows,
            })
    })
}

fn assert_matches(p: &LpProblem, status: LpStatus, objective: f64, x: &[f64]) {
    match enumerate_vertices(p) {
        Some(best) => {
            assert_eq!(status, LpStatus::Optimal, "oracle optimum {best}");
            assert!(
                (objective - best).abs() <= 1e-7,
                "simplex {objective} vs vertices {best}"
            );
            assert!(feasible(p, x), "simplex point infeasible: {x:?}");
            assert!((p.objective_value(x) - objective).abs() <= 1e-7);
        }
        None => assert_eq!(status, LpStatus::Infeasible),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn cold_solve_matches_vertices(p in problem_strategy()) {
        let sol = solve_lp(&p, None).unwrap();
        assert_matches(&p, sol.status, sol.objective, &sol.x);
    }

    #[test]
    fn warm_row_addition_matches_cold(
        p in problem_strategy(),
        extra in proptest::collection::vec(row_strategy(4), 1..=2),
    ) {
        let mut p = p;
        let first = solve_lp(&p, None).unwrap();
        prop_assume!(first.status == LpStatus::Optimal);
        let n = p.column_count();
        let rows: Vec<Row> = extra
            .into_iter()
            .map(|mut r| {
                r.coeffs.retain(|&(j, _)| j < n);
                r
            })
            .collect();
        let sol = add_rows_and_resolve(&mut p, rows, Some(&first.basis)).unwrap();
        assert_matches(&p, sol.status, sol.objective, &sol.x);
    }

    #[test]
    fn warm_bound_change_matches_cold(
        p in problem_strategy(),
        var in 0usize..4,
        fix_high in any::<bool>(),
    ) {
        let mut p = p;
        let first = solve_lp(&p, None).unwrap();
        prop_assume!(first.status == LpStatus::Optimal);
        let var = var % p.column_count();
        let v = if fix_high { p.upper[var] } else { p.lower[var] };
        let sol = tighten_bound_and_resolve(&mut p, var, v, v, Some(&first.basis)).unwrap();
        assert_matches(&p, sol.status, sol.objective, &sol.x);
    }
}

#[test]
fn known_optimum() {
    // min -x - y  s.t.  x + 2y <= 4, 3x + y <= 6, 0 <= x, y <= 10: optimum at (8/5, 6/5)
    let p = LpProblem {
        objective: vec![-1.0, -1.0],
        lower: vec![0.0; 2],
        upper: vec![10.0; 2],
        rows: vec![
            Row {
                coeffs: vec![(0, 1.0), (1, 2.0)],
                sense: Sense::Le,
                rhs: 4.0,
            },
            Row {
                coeffs: vec![(0, 3.0), (1, 1.0)],
                sense: Sense::Le,
                rhs: 6.0,
            },
        ],
    };
    let sol = solve_lp(&p, None).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.objective + 2.8).abs() < 1e-9);
    assert!((sol.x[0] - 1.6).abs() < 1e-9 && (sol.x[1] - 1.2).abs() < 1e-9);
}
