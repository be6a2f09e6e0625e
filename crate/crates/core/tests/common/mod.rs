//! Shared fixtures and independent reference solvers for the integration tests.
#![allow(dead_code)]

use pond::fluid_lp::FluidProblem;
use pond::harness::ExperimentConfig;
use pond::dispatch::PondParams;
use pond::instance::{ConstraintKind, ConstraintParams, Dist, Instance, InstanceSpec};
use pond::learners::Learner;
use pond::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PAPER_CONFIG: &str = include_str!("../../../../configs/paper_synthetic.json");
pub const TUTORING_CONFIG: &str = include_str!("../../../../configs/tutoring_replay.json");

pub fn paper_config() -> ExperimentConfig {
    ExperimentConfig::from_json(PAPER_CONFIG).expect("shipped config loads")
}

pub fn paper_instance() -> Instance {
    paper_config().build_instance().unwrap()
}

pub fn paper_problem(epsilon: f64) -> FluidProblem {
    FluidProblem::from_instance(&paper_instance(), epsilon)
}

/// `max c·z` subject to `a_eq z = b_eq`, `a_in z ≤ b_in`, `z ≥ 0`, by
/// enumerating every basic solution. Returns `None` when infeasible.
/// Assumes the feasible set is bounded.
pub struct VertexLp {
    pub c: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_in: Vec<Vec<f64>>,
    pub b_in: Vec<f64>,
}

const TOL: f64 = 1e-9;

impl VertexLp {
    pub fn solve(&self) -> Option<(f64, Vec<f64>)> {
        let n = self.c.len();
        // Every inequality, with the sign bounds written as -z_v <= 0.
        let mut rows: Vec<(Vec<f64>, f64)> = self
            .a_in
            .iter()
            .cloned()
            .zip(self.b_in.iter().copied())
            .collect();
        for v in 0..n {
            let mut r = vec![0.0; n];
            r[v] = -1.0;
            rows.push((r, 0.0));
        }
        let n_eq = self.a_eq.len();
        if n_eq > n {
            return None;
        }
        let pick = n - n_eq;
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut combo: Vec<usize> = (0..pick).collect();
        let mut sys = vec![vec![0.0; n + 1]; n];
        loop {
            for (r, (a, b)) in self.a_eq.iter().zip(&self.b_eq).enumerate() {
                sys[r][..n].copy_from_slice(a);
                sys[r][n] = *b;
            }
            for (r, &idx) in combo.iter().enumerate() {
                sys[n_eq + r][..n].copy_from_slice(&rows[idx].0);
                sys[n_eq + r][n] = rows[idx].1;
            }
            if let Some(z) = gauss(&mut sys) {
                if self.feasible(&z, &rows) {
                    let obj: f64 = self.c.iter().zip(&z).map(|(c, z)| c * z).sum();
                    if best.as_ref().is_none_or(|(b, _)| obj > *b) {
                        best = Some((obj, z));
                    }
                }
            }
            if !next_combo(&mut combo, rows.len()) {
                break;
            }
        }
        best
    }

    fn feasible(&self, z: &[f64], rows: &[(Vec<f64>, f64)]) -> bool {
        let dot = |a: &[f64]| a.iter().zip(z).map(|(a, z)| a * z).sum::<f64>();
        self.a_eq
            .iter()
            .zip(&self.b_eq)
            .all(|(a, b)| (dot(a) - b).abs() <= TOL * (1.0 + b.abs()))
            && rows.iter().all(|(a, b)| dot(a) <= b + TOL * (1.0 + b.abs()))
    }
}

fn next_combo(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Solves the square system in augmented form; `None` if (nearly) singular.
fn gauss(a: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

fn flat(n: usize, m: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect()
}

fn conservation_rows(p: &FluidProblem, extra: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n, m) = (p.n_types(), p.n_servers());
    let rows = (0..n)
        .map(|i| {
            let mut r = flat(n, m, |a, _| f64::from(a == i));
            r.extend(std::iter::repeat_n(0.0, extra));
            r
        })
        .collect();
    (rows, p.lambda.clone())
}

/// Reference optimum of the ε-tight fluid LP.
pub fn oracle_fluid(p: &FluidProblem) -> Option<(f64, Matrix<f64>)> {
    let (n, m) = (p.n_types(), p.n_servers());
    let (a_eq, b_eq) = conservation_rows(p, 0);
    let mut a_in = Vec::new();
    let mut b_in = Vec::new();
    for (w, rho) in p.w.iter().zip(&p.rho) {
        for j in 0..m {
            a_in.push(flat(n, m, |a, b| if b == j { w[(a, b)] } else { 0.0 }));
            b_in.push(rho[j] - p.epsilon);
        }
    }
    let lp = VertexLp {
        c: flat(n, m, |i, j| p.r[(i, j)]),
        a_eq,
        b_eq,
        a_in,
        b_in,
    };
    lp.solve()
        .map(|(obj, z)| (obj, Matrix::from_fn(n, m, |i, j| z[i * m + j])))
}

/// Reference Slater margin: the largest `δ ≥ 0` with every constraint slack by `δ`.
/// `None` when even `δ = 0` is infeasible.
pub fn oracle_slater(p: &FluidProblem) -> Option<f64> {
    let (n, m) = (p.n_types(), p.n_servers());
    if p.w.is_empty() {
        return Some(f64::INFINITY);
    }
    let (a_eq, b_eq) = conservation_rows(p, 1);
    let mut a_in = Vec::new();
    let mut b_in = Vec::new();
    for (w, rho) in p.w.iter().zip(&p.rho) {
        for j in 0..m {
            let mut r = flat(n, m, |a, b| if b == j { w[(a, b)] } else { 0.0 });
            r.push(1.0);
            a_in.push(r);
            b_in.push(rho[j]);
        }
    }
    let mut c = vec![0.0; n * m];
    c.push(1.0);
    VertexLp {
        c,
        a_eq,
        b_eq,
        a_in,
        b_in,
    }
    .solve()
    .map(|(obj, _)| obj)
}

/// A random fluid problem with `n` types, `m` servers and `k` families.
/// Requirements are set from a random conserving allocation plus slack, so most
/// draws are feasible; with probability `p_tight` one requirement is pushed
/// below any achievable load.
pub fn random_problem<R: Rng>(rng: &mut R, n: usize, m: usize, k: usize, p_tight: f64) -> FluidProblem {
    let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    let r = Matrix::from_fn(n, m, |_, _| rng.random_range(0.0..1.0));
    let x0 = Matrix::from_fn(n, m, |_, _| rng.random_range(0.0..1.0));
    let x0 = Matrix::from_fn(n, m, |i, j| {
        lambda[i] * x0[(i, j)] / x0.row(i).iter().sum::<f64>()
    });
    let mut w = Vec::new();
    let mut rho = Vec::new();
    for _ in 0..k {
        let negative = rng.random_bool(0.25);
        let wk = Matrix::from_fn(n, m, |_, _| {
            let v = rng.random_range(0.0..3.0);
            if negative { -v } else { v }
        });
        let rk: Vec<f64> = (0..m)
            .map(|j| {
                let load: f64 = (0..n).map(|i| wk[(i, j)] * x0[(i, j)]).sum();
                // Some slack-free rows to exercise degenerate vertices.
                let slack = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..0.5) };
                load + slack
            })
            .collect();
        w.push(wk);
        rho.push(rk);
    }
    if k > 0 && rng.random_bool(p_tight) {
        let kk = rng.random_range(0..k);
        let j = rng.random_range(0..m);
        let min_load: f64 = lambda
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (0..m)
                    .map(|jj| if jj == j { w[kk][(i, jj)] * l } else { 0.0 })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        rho[kk][j] = min_load.min(0.0) - 1.0;
    }
    FluidProblem {
        lambda,
        r,
        w,
        rho,
        epsilon: 0.0,
    }
}

/// A random small instance; every family kind appears with some probability.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=4);
    let arrivals: Vec<Dist> = (0..n)
        .map(|_| match rng.random_range(0..4) {
            0 => Dist::Bernoulli(rng.random_range(0.1..1.0)),
            1 => Dist::Deterministic(rng.random_range(1..=2) as f64),
            2 => Dist::Geometric(rng.random_range(0.2..1.5)),
            _ => Dist::ShiftedGeometric(rng.random_range(1.0..2.0)),
        })
        .collect();
    let rewards = Matrix::from_fn(n, m, |_, _| Dist::Bernoulli(rng.random_range(0.0..1.0)));
    let mut constraints = Vec::new();
    if rng.random_bool(0.7) {
        constraints.push(ConstraintParams {
            kind: Some(ConstraintKind::Capacity),
            service: Some((0..m).map(|_| Dist::Bernoulli(rng.random_range(0.2..1.0))).collect()),
            ..Default::default()
        });
    }
    if rng.random_bool(0.5) {
        constraints.push(ConstraintParams {
            kind: Some(ConstraintKind::Fairness),
            fractions: Some((0..m).map(|_| rng.random_range(0.0..0.8 / m as f64)).collect()),
            ..Default::default()
        });
    }
    if rng.random_bool(0.5) {
        constraints.push(ConstraintParams {
            kind: Some(ConstraintKind::Resource),
            weights: Some(Matrix::from_fn(n, m, |_, _| {
                Dist::Empirical(vec![rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)])
            })),
            requirements: Some((0..m).map(|_| Dist::Deterministic(rng.random_range(0.5..3.0))).collect()),
            ..Default::default()
        });
    }
    InstanceSpec {
        arrivals,
        rewards,
        constraints,
        c_lambda: 4.0,
        c_u: 4.0,
    }
    .build()
    .unwrap()
}

pub fn random_params(seed: u64) -> PondParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    PondParams {
        v: rng.random_range(0.5..30.0),
        epsilon: if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..0.3) },
        learner: if rng.random_bool(0.5) { Learner::Ucb } else { Learner::Moss },
    }
}
