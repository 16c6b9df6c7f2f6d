//! Dense-tableau phase-1 simplex with Bland's rule.
//!
//! Solves `min t` subject to `A y − t·s ≤ c`, `y ≥ 0`, `t ≥ 0`, where `s`
//! marks the rows that may be relaxed. With a single artificial column the
//! starting basis becomes feasible after one pivot on the most violated row.

const PIVOT_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Phase1 {
    /// Optimal relaxation `t*`; zero when `A y ≤ c` has a solution.
    pub objective: f64,
    pub point: Vec<f64>,
    pub iterations: usize,
}

/// `rows[i] = (a_i, c_i, relaxable_i)` over `n` non-negative variables.
pub(crate) fn phase1(n: usize, rows: &[(Vec<f64>, f64, bool)]) -> Phase1 {
    let m = rows.len();
    let t_col = n;
    let cols = n + 1 + m;
    let rhs = cols;
    let mut tab = vec![vec![0.0; cols + 1]; m];
    let mut basis: Vec<usize> = (0..m).map(|i| n + 1 + i).collect();
    for (i, (a, c, relax)) in rows.iter().enumerate() {
        tab[i][..n].copy_from_slice(a);
        if *relax {
            tab[i][t_col] = -1.0;
        }
        tab[i][n + 1 + i] = 1.0;
        tab[i][rhs] = *c;
    }

    let worst = (0..m).filter(|&i| rows[i].2).min_by(|&a, &b| tab[a][rhs].total_cmp(&tab[b][rhs]));
    if let Some(r) = worst {
        if tab[r][rhs] < 0.0 {
            pivot(&mut tab, &mut basis, r, t_col);
        }
    }

    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        // reduced cost of column j for the objective `t`
        let t_row = basis.iter().position(|&b| b == t_col);
        let entering = (0..cols).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let reduced = if j == t_col { 1.0 } else { 0.0 } - t_row.map_or(0.0, |r| tab[r][j]);
            reduced < -PIVOT_TOL
        });
        let Some(j) = entering else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = tab[i][j];
            if a > PIVOT_TOL {
                let ratio = tab[i][rhs].max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    // exact comparison; Bland's rule only settles true ties
                    Some((k, best)) => {
                        if ratio < best || ratio == best && basis[i] < basis[k] {
                            Some((i, ratio))
                        } else {
                            Some((k, best))
                        }
                    }
                };
            }
        }
        // `t` is bounded below, so an improving column always has a ratio
        let Some((r, _)) = leave else { break };
        pivot(&mut tab, &mut basis, r, j);
        iterations += 1;
    }

    let mut values = vec![0.0; cols];
    for (i, &b) in basis.iter().enumerate() {
        values[b] = tab[i][rhs].max(0.0);
    }
    Phase1 { objective: values[t_col], point: values[..n].to_vec(), iterations }
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], r: usize, j: usize) {
    let p = tab[r][j];
    for v in tab[r].iter_mut() {
        *v /= p;
    }
    let pivot_row = tab[r].clone();
    for (i, row) in tab.iter_mut().enumerate() {
        if i != r {
            let f = row[j];
            if f != 0.0 {
                for (v, q) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * q;
                }
                row[j] = 0.0;
            }
        }
    }
    basis[r] = j;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasible_origin() {
        let r = phase1(2, &[(vec![1.0, 1.0], 1.0, true)]);
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn needs_pivots() {
        // y0 + y1 ≥ 2 and y0 ≤ 1 → feasible, e.g. (1, 1)
        let r = phase1(2, &[(vec![-1.0, -1.0], -2.0, true), (vec![1.0, 0.0], 1.0, false)]);
        assert!(r.objective.abs() < 1e-12);
        assert!(r.point[0] + r.point[1] >= 2.0 - 1e-12 && r.point[0] <= 1.0 + 1e-12);
    }

    #[test]
    fn measures_worst_violation() {
        // y ≥ 3 and y ≤ 1: the best compromise violates both by 1
        let r = phase1(1, &[(vec![-1.0], -3.0, true), (vec![1.0], 1.0, true)]);
        assert!((r.objective - 1.0).abs() < 1e-12);
        assert!((r.point[0] - 2.0).abs() < 1e-12);
    }
}
