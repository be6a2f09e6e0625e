//! Dense two-phase tableau simplex for `max c·x  s.t.  A x = b, x ≥ 0`.
//!
//! Bland's rule picks both the entering and the leaving variable, so the
//! method cannot cycle on degenerate vertices. Problems handled here have a
//! few dozen columns at most.

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StandardLp {
    /// Row-major `rows x cols` constraint matrix.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SimplexOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// Constraint rows; the last entry of each row is the right-hand side.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Columns allowed to enter the basis.
    allowed: Vec<bool>,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        *self.rows[r].last().unwrap()
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[col] = 0.0;
            }
        }
        self.basis[r] = col;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (r, &bv) in self.basis.iter().enumerate() {
            let cb = cost[bv];
            if cb != 0.0 {
                for (dj, a) in d.iter_mut().zip(&self.rows[r]) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    /// Maximizes `cost` from the current basic feasible solution.
    /// Returns `false` if the objective is unbounded.
    fn optimize(&mut self, cost: &[f64]) -> bool {
        loop {
            let d = self.reduced_costs(cost);
            let entering = (0..cost.len()).find(|&j| self.allowed[j] && d[j] > PIVOT_TOL);
            let Some(col) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - PIVOT_TOL
                                || (ratio <= lratio + PIVOT_TOL && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, col),
                None => return false,
            }
        }
    }
}

pub(crate) fn solve(lp: &StandardLp) -> SimplexOutcome {
    let m = lp.b.len();
    let n = lp.c.len();
    debug_assert!(lp.a.iter().all(|row| row.len() == n));

    // One artificial per row; rows are sign-normalized so b >= 0.
    let width = n + m + 1;
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|r| {
            let sign = if lp.b[r] < 0.0 { -1.0 } else { 1.0 };
            let mut row = vec![0.0; width];
            for j in 0..n {
                row[j] = sign * lp.a[r][j];
            }
            row[n + r] = 1.0;
            row[width - 1] = sign * lp.b[r];
            row
        })
        .collect();
    let mut tab = Tableau {
        rows,
        basis: (n..n + m).collect(),
        allowed: vec![true; n + m],
    };

    let mut phase1 = vec![0.0; n + m];
    for c in &mut phase1[n..] {
        *c = -1.0;
    }
    tab.optimize(&phase1);
    let infeasibility: f64 = (0..m)
        .filter(|&r| tab.basis[r] >= n)
        .map(|r| tab.rhs(r))
        .sum();
    let scale = 1.0 + lp.b.iter().map(|v| v.abs()).sum::<f64>();
    if infeasibility > FEAS_TOL * scale {
        return SimplexOutcome::Infeasible;
    }

    // Drive remaining (zero-valued) artificials out; drop rows that are redundant.
    let mut r = 0;
    while r < tab.rows.len() {
        if tab.basis[r] >= n {
            match (0..n).find(|&j| tab.rows[r][j].abs() > PIVOT_TOL) {
                Some(col) => {
                    tab.pivot(r, col);
                    r += 1;
                }
                None => {
                    tab.rows.remove(r);
                    tab.basis.remove(r);
                }
            }
        } else {
            r += 1;
        }
    }
    for a in &mut tab.allowed[n..] {
        *a = false;
    }

    let mut phase2 = lp.c.clone();
    phase2.extend(std::iter::repeat_n(0.0, m));
    if !tab.optimize(&phase2) {
        return SimplexOutcome::Unbounded;
    }

    let mut x = vec![0.0; n];
    for (r, &bv) in tab.basis.iter().enumerate() {
        if bv < n {
            x[bv] = tab.rhs(r).max(0.0);
        }
    }
    let objective = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    SimplexOutcome::Optimal { x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let lp = StandardLp {
            a: vec![
                vec![1.0, 0.0, 1.0, 0.0, 0.0],
                vec![0.0, 2.0, 0.0, 1.0, 0.0],
                vec![3.0, 2.0, 0.0, 0.0, 1.0],
            ],
            b: vec![4.0, 12.0, 18.0],
            c: vec![3.0, 5.0, 0.0, 0.0, 0.0],
        };
        let SimplexOutcome::Optimal { x, objective } = solve(&lp) else {
            panic!()
        };
        assert!((objective - 36.0).abs() < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x + y = 1, x + y = 2
        let lp = StandardLp {
            a: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            b: vec![1.0, 2.0],
            c: vec![1.0, 0.0],
        };
        assert_eq!(solve(&lp), SimplexOutcome::Infeasible);
        // x - y = 0, max x
        let lp = StandardLp {
            a: vec![vec![1.0, -1.0]],
            b: vec![0.0],
            c: vec![1.0, 0.0],
        };
        assert_eq!(solve(&lp), SimplexOutcome::Unbounded);
    }

    #[test]
    fn redundant_rows_and_negative_rhs() {
        // x + y = 1 twice, -x = -0.25
        let lp = StandardLp {
            a: vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![-1.0, 0.0]],
            b: vec![1.0, 1.0, -0.25],
            c: vec![0.0, 1.0],
        };
        let SimplexOutcome::Optimal { x, objective } = solve(&lp) else {
            panic!()
        };
        assert!((x[0] - 0.25).abs() < 1e-12);
        assert!((objective - 0.75).abs() < 1e-12);
    }
}
