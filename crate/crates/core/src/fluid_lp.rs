//! The offline fluid LP over per-slot mean allocations, its ε-tightened
//! variant, the Slater margin δ, and the theorem parameter prescriptions.
//!
//! ```text
//! max  Σ r[i][j] x[i][j]
//! s.t. Σ_j x[i][j] = λ[i]                       for every type i
//!      Σ_i w⁽ᵏ⁾[i][j] x[i][j] + ε ≤ ρ⁽ᵏ⁾[j]      for every server j, family k
//!      x ≥ 0
//! ```

use serde::Serialize;
use thiserror::Error;

use crate::instance::Instance;
use crate::matrix::Matrix;
use crate::simplex::{self, SimplexOutcome, StandardLp};

/// Absolute tolerance of the post-solve feasibility certificate.
pub const CERTIFICATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidProblem {
    pub lambda: Vec<f64>,
    pub r: Matrix<f64>,
    /// One `N x M` mean weight matrix per constraint family.
    pub w: Vec<Matrix<f64>>,
    /// One `M`-vector of mean requirements per constraint family.
    pub rho: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl FluidProblem {
    /// The fluid problem built from the true means of `inst`.
    pub fn from_instance(inst: &Instance, epsilon: f64) -> Self {
        let lambda = inst.arrival_means();
        let total: f64 = lambda.iter().sum();
        Self {
            r: inst.reward_means(),
            w: inst
                .constraints
                .iter()
                .map(|c| c.weights.map(|d| d.mean_given_arrivals(total)))
                .collect(),
            rho: inst
                .constraints
                .iter()
                .map(|c| {
                    c.requirements
                        .iter()
                        .map(|d| d.mean_given_arrivals(total))
                        .collect()
                })
                .collect(),
            lambda,
            epsilon,
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    pub fn n_types(&self) -> usize {
        self.lambda.len()
    }

    pub fn n_servers(&self) -> usize {
        self.r.cols()
    }

    pub fn n_constraints(&self) -> usize {
        self.w.len()
    }

    fn check(&self) -> Result<(), LpError> {
        let (n, m) = (self.n_types(), self.n_servers());
        if self.r.rows() != n {
            return Err(LpError::Shape(format!(
                "reward matrix has {} rows for {n} types",
                self.r.rows()
            )));
        }
        if self.rho.len() != self.w.len() {
            return Err(LpError::Shape(format!(
                "{} weight matrices but {} requirement vectors",
                self.w.len(),
                self.rho.len()
            )));
        }
        for (k, (w, rho)) in self.w.iter().zip(&self.rho).enumerate() {
            if w.shape() != (n, m) || rho.len() != m {
                return Err(LpError::Shape(format!(
                    "constraint {k}: weights {:?}, {} requirements; expected ({n}, {m}) and {m}",
                    w.shape(),
                    rho.len()
                )));
            }
        }
        if let Some(i) = self.lambda.iter().position(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(LpError::Shape(format!(
                "lambda[{i}] = {} must be finite and non-negative",
                self.lambda[i]
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(LpError::Shape(format!("epsilon = {} must be >= 0", self.epsilon)));
        }
        Ok(())
    }

    /// Types with positive arrival rate; the others have their rows forced to zero.
    fn active_types(&self) -> Vec<usize> {
        (0..self.n_types()).filter(|&i| self.lambda[i] > 0.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x_star: Matrix<f64>,
    pub objective: f64,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("malformed problem: {0}")]
    Shape(String),
    #[error("the base problem is infeasible")]
    Infeasible,
    #[error("internal solver error: {0}")]
    Internal(String),
}

/// Column layout shared by the fluid and Slater LPs.
struct Layout {
    active: Vec<usize>,
    m: usize,
}

impl Layout {
    fn x(&self, a: usize, j: usize) -> usize {
        a * self.m + j
    }

    fn n_x(&self) -> usize {
        self.active.len() * self.m
    }
}

/// Equality rows plus one slack row per (family, server). `extra` adds
/// columns between `x` and the slacks; `extra_coeff` gives their entry in
/// each inequality row.
fn build_rows(
    p: &FluidProblem,
    layout: &Layout,
    extra: usize,
    extra_coeff: impl Fn(usize, usize) -> Vec<f64>,
    rhs_shift: f64,
) -> StandardLp {
    let (m, k_count) = (layout.m, p.n_constraints());
    let n_slack = m * k_count;
    let cols = layout.n_x() + extra + n_slack;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (ai, &i) in layout.active.iter().enumerate() {
        let mut row = vec![0.0; cols];
        for j in 0..m {
            row[layout.x(ai, j)] = 1.0;
        }
        a.push(row);
        b.push(p.lambda[i]);
    }
    for k in 0..k_count {
        for j in 0..m {
            let mut row = vec![0.0; cols];
            for (ai, &i) in layout.active.iter().enumerate() {
                row[layout.x(ai, j)] = p.w[k][(i, j)];
            }
            for (e, v) in extra_coeff(k, j).into_iter().enumerate() {
                row[layout.n_x() + e] = v;
            }
            row[layout.n_x() + extra + k * m + j] = 1.0;
            a.push(row);
            b.push(p.rho[k][j] - rhs_shift);
        }
    }
    StandardLp {
        a,
        b,
        c: vec![0.0; cols],
    }
}

fn unpack(p: &FluidProblem, layout: &Layout, x: &[f64]) -> Matrix<f64> {
    let mut out = Matrix::zeros(p.n_types(), p.n_servers());
    for (ai, &i) in layout.active.iter().enumerate() {
        for j in 0..layout.m {
            out[(i, j)] = x[layout.x(ai, j)];
        }
    }
    out
}

/// Largest violation of the ε-tight constraints by `x`.
pub fn certificate_violation(p: &FluidProblem, x: &Matrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, &lambda) in p.lambda.iter().enumerate() {
        let row: f64 = x.row(i).iter().sum();
        worst = worst.max((row - lambda).abs());
        for &v in x.row(i) {
            worst = worst.max(-v);
        }
    }
    for (w, rho) in p.w.iter().zip(&p.rho) {
        for j in 0..p.n_servers() {
            let load: f64 = (0..p.n_types()).map(|i| w[(i, j)] * x[(i, j)]).sum();
            worst = worst.max(load + p.epsilon - rho[j]);
        }
    }
    worst
}

/// Solves the ε-tight fluid LP exactly. Infeasibility is reported through
/// [`LpSolution::status`]; an unbounded result or a failed certificate is an
/// internal error.
pub fn solve_fluid_lp(p: &FluidProblem) -> Result<LpSolution, LpError> {
    p.check()?;
    let layout = Layout {
        active: p.active_types(),
        m: p.n_servers(),
    };
    let mut lp = build_rows(p, &layout, 0, |_, _| Vec::new(), p.epsilon);
    for (ai, &i) in layout.active.iter().enumerate() {
        for j in 0..layout.m {
            lp.c[layout.x(ai, j)] = p.r[(i, j)];
        }
    }
    match simplex::solve(&lp) {
        SimplexOutcome::Infeasible => Ok(LpSolution {
            status: LpStatus::Infeasible,
            x_star: Matrix::zeros(p.n_types(), p.n_servers()),
            objective: f64::NAN,
        }),
        SimplexOutcome::Unbounded => Err(LpError::Internal(
            "fluid LP reported unbounded despite bounded feasible set".into(),
        )),
        SimplexOutcome::Optimal { x, .. } => {
            let x_star = unpack(p, &layout, &x);
            let violation = certificate_violation(p, &x_star);
            if violation > CERTIFICATE_TOL {
                return Err(LpError::Internal(format!(
                    "solution violates a constraint by {violation:e}"
                )));
            }
            let objective = x_star
                .indexed()
                .map(|(ij, v)| p.r[ij] * v)
                .sum::<f64>();
            Ok(LpSolution {
                status: LpStatus::Optimal,
                x_star,
                objective,
            })
        }
    }
}

/// Largest uniform slack `δ ≥ 0` such that some conserving `x ≥ 0` has
/// `Σ_i w⁽ᵏ⁾[i][j] x[i][j] − ρ⁽ᵏ⁾[j] ≤ −δ` for every `(j, k)`. The problem's
/// own ε is ignored. With no constraint families δ is `+∞`.
pub fn slater_margin(p: &FluidProblem) -> Result<f64, LpError> {
    p.with_epsilon(0.0).check()?;
    let layout = Layout {
        active: p.active_types(),
        m: p.n_servers(),
    };
    let mut lp = build_rows(p, &layout, 1, |_, _| vec![1.0], 0.0);
    let delta_col = layout.n_x();
    lp.c[delta_col] = 1.0;
    match simplex::solve(&lp) {
        SimplexOutcome::Infeasible => Err(LpError::Infeasible),
        SimplexOutcome::Unbounded => Ok(f64::INFINITY),
        SimplexOutcome::Optimal { x, .. } => Ok(x[delta_col]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremParams {
    pub delta: f64,
    /// First-pass `B₀ = MK·C_λ²·C_u²` and the ε it implies.
    pub b0: f64,
    pub epsilon0: f64,
    pub b: f64,
    pub epsilon: f64,
    pub v: f64,
    pub gamma: f64,
    pub nu_max: f64,
    /// `|ε(B(ε)) − ε| / ε`: how far the two-pass value is from a fixed point.
    pub fixed_point_residual: f64,
    /// Set when `δ < 4ε`, i.e. the theorem's precondition fails at this horizon.
    pub precondition_violated: bool,
}

/// Theorem parameter prescriptions for horizon `horizon`.
///
/// `B` and `ε` are defined in terms of each other; they are resolved in two
/// passes starting from `ε = 0` inside `B`.
pub fn theorem_params(
    p: &FluidProblem,
    horizon: usize,
    c_lambda: f64,
    c_u: f64,
) -> Result<TheoremParams, LpError> {
    if horizon == 0 {
        return Err(LpError::Shape("horizon must be at least 1".into()));
    }
    if !(c_lambda > 0.0 && c_u > 0.0) {
        return Err(LpError::Shape("C_lambda and C_u must be positive".into()));
    }
    let mk = (p.n_servers() * p.n_constraints()) as f64;
    if mk == 0.0 {
        return Err(LpError::Shape(
            "theorem parameters need at least one constraint family".into(),
        ));
    }
    let delta = slater_margin(p)?;
    let t = horizon as f64;
    let base = c_lambda * c_lambda * c_u * c_u;
    let b_of = |eps: f64| mk * (base + eps * eps);
    let eps_of = |b: f64| 2.0 * (b * mk.sqrt()).sqrt() / t.sqrt();

    let b0 = b_of(0.0);
    let epsilon0 = eps_of(b0);
    let b = b_of(epsilon0);
    let epsilon = eps_of(b);
    let fixed_point_residual = (eps_of(b_of(epsilon)) - epsilon).abs() / epsilon;

    let total_lambda: f64 = p.lambda.iter().sum();
    let v = delta / (2.0 * total_lambda) * (t * b / mk.sqrt()).sqrt();
    let gamma = delta / 2.0 - epsilon;
    let nu_max = gamma.max(mk * c_lambda * c_u);
    Ok(TheoremParams {
        delta,
        b0,
        epsilon0,
        b,
        epsilon,
        v,
        gamma,
        nu_max,
        fixed_point_residual,
        precondition_violated: delta < 4.0 * epsilon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapCheck {
    pub epsilon: f64,
    pub feasible: bool,
    /// `objective(0) − objective(ε)`; NaN when infeasible.
    pub gap: f64,
    /// `(ε / δ)·Σλ`.
    pub bound: f64,
    pub holds: bool,
}

/// Checks that tightening by ε costs at most `(ε/δ)·Σλ` of per-slot objective,
/// for each ε in `grid`.
pub fn tightness_gap_bound_check(
    p: &FluidProblem,
    grid: &[f64],
) -> Result<Vec<GapCheck>, LpError> {
    let delta = slater_margin(p)?;
    let base = solve_fluid_lp(&p.with_epsilon(0.0))?;
    if !base.is_optimal() {
        return Err(LpError::Infeasible);
    }
    let total_lambda: f64 = p.lambda.iter().sum();
    grid.iter()
        .map(|&eps| {
            let sol = solve_fluid_lp(&p.with_epsilon(eps))?;
            let bound = eps / delta * total_lambda;
            Ok(if sol.is_optimal() {
                let gap = base.objective - sol.objective;
                GapCheck {
                    epsilon: eps,
                    feasible: true,
                    gap,
                    bound,
                    holds: gap <= bound + CERTIFICATE_TOL,
                }
            } else {
                GapCheck {
                    epsilon: eps,
                    feasible: false,
                    gap: f64::NAN,
                    bound,
                    holds: false,
                }
            })
        })
        .collect()
}
