//! Explore-Then-Commit and a uniformly random reference policy.
//!
//! ETC dispatches by plain UCB indices (no queues) for `⌈N·M·ln T⌉` slots,
//! then solves the fluid LP on its estimates and routes every later job of
//! type `i` to server `j` with probability `x̂[i][j] / λ̂[i]`.

use rand::Rng;
use serde::Serialize;

use crate::dispatch::{
    max_weight_allocate, simulate, DispatchPolicy, SimError, SlotFeedback, TrialRecord,
};
use crate::fluid_lp::{solve_fluid_lp, FluidProblem};
use crate::instance::{validate_instance, Instance};
use crate::learners::{ArmStats, Learner};
use crate::matrix::Matrix;

/// Number of UCB exploration slots: `⌈N·M·ln T⌉`.
pub fn exploration_length(n_types: usize, n_servers: usize, horizon: usize) -> usize {
    if horizon <= 1 {
        return 0;
    }
    ((n_types * n_servers) as f64 * (horizon as f64).ln()).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtcSummary {
    pub exploration_slots: usize,
    /// Commit-phase routing probabilities, once committed.
    pub routing: Option<Matrix<f64>>,
}

#[derive(Debug, Clone)]
enum Phase {
    Exploring,
    Committed(Matrix<f64>),
}

/// Explore-Then-Commit state for one trial.
#[derive(Debug, Clone)]
pub struct Etc {
    horizon: usize,
    exploration_slots: usize,
    stats: ArmStats,
    seen: usize,
    arrival_sums: Vec<f64>,
    weight_sums: Vec<Matrix<f64>>,
    requirement_sums: Vec<Vec<f64>>,
    phase: Phase,
    flags: Vec<String>,
}

impl Etc {
    pub fn new(horizon: usize, n_types: usize, n_servers: usize, n_constraints: usize) -> Self {
        let mut etc = Self {
            horizon,
            exploration_slots: exploration_length(n_types, n_servers, horizon),
            stats: ArmStats::new(n_types, n_servers),
            seen: 0,
            arrival_sums: vec![0.0; n_types],
            weight_sums: vec![Matrix::zeros(n_types, n_servers); n_constraints],
            requirement_sums: vec![vec![0.0; n_servers]; n_constraints],
            phase: Phase::Exploring,
            flags: Vec::new(),
        };
        if etc.exploration_slots == 0 {
            etc.commit();
        }
        etc
    }

    pub fn for_instance(horizon: usize, inst: &Instance) -> Self {
        Self::new(horizon, inst.n_types, inst.n_servers, inst.n_constraints())
    }

    pub fn exploration_slots(&self) -> usize {
        self.exploration_slots
    }

    /// Routing probabilities in use, once committed.
    pub fn routing(&self) -> Option<&Matrix<f64>> {
        match &self.phase {
            Phase::Committed(p) => Some(p),
            Phase::Exploring => None,
        }
    }

    fn estimated_problem(&self) -> FluidProblem {
        let n = self.seen.max(1) as f64;
        FluidProblem {
            lambda: self.arrival_sums.iter().map(|s| s / n).collect(),
            r: self.stats.means().clone(),
            w: self.weight_sums.iter().map(|w| w.map(|v| v / n)).collect(),
            rho: self
                .requirement_sums
                .iter()
                .map(|r| r.iter().map(|v| v / n).collect())
                .collect(),
            epsilon: 0.0,
        }
    }

    fn commit(&mut self) {
        let (n_types, m) = self.stats.means().shape();
        let uniform = 1.0 / m as f64;
        let mut probs = Matrix::filled(n_types, m, uniform);

        if self.seen == 0 {
            self.flags
                .push("no exploration data; routing uniformly".to_string());
            self.phase = Phase::Committed(probs);
            return;
        }

        let problem = self.estimated_problem();
        match solve_fluid_lp(&problem) {
            Ok(sol) if sol.is_optimal() => {
                for i in 0..n_types {
                    let lambda = problem.lambda[i];
                    if lambda <= 0.0 {
                        self.flags.push(format!(
                            "type {i} never arrived during exploration; routing it uniformly"
                        ));
                        continue;
                    }
                    let row = probs.row_mut(i);
                    for (j, p) in row.iter_mut().enumerate() {
                        *p = sol.x_star[(i, j)] / lambda;
                    }
                    let total: f64 = row.iter().sum();
                    if total > 1.0 {
                        row.iter_mut().for_each(|p| *p /= total);
                    } else if total < 1.0 {
                        let preferred = (0..m)
                            .max_by(|&a, &b| sol.x_star[(i, a)].total_cmp(&sol.x_star[(i, b)]))
                            .unwrap_or(0);
                        row[preferred] += 1.0 - total;
                    }
                }
            }
            Ok(_) => self
                .flags
                .push("estimated LP infeasible; routing uniformly".to_string()),
            Err(e) => self
                .flags
                .push(format!("estimated LP failed ({e}); routing uniformly")),
        }
        self.phase = Phase::Committed(probs);
    }
}

impl DispatchPolicy for Etc {
    fn name(&self) -> String {
        "etc".to_string()
    }

    fn allocate(
        &self,
        arrivals: &[u64],
        _weights: &[Matrix<f64>],
        rng: &mut dyn rand::RngCore,
    ) -> Matrix<u64> {
        match &self.phase {
            Phase::Exploring => {
                let eta = self.stats.indices(Learner::Ucb, self.horizon);
                max_weight_allocate(&eta, arrivals, rng)
            }
            Phase::Committed(probs) => route(probs, arrivals, rng),
        }
    }

    fn observe(&mut self, fb: &SlotFeedback<'_>) -> Result<(), SimError> {
        for ((i, j), &count) in fb.allocation.indexed() {
            self.stats.update(i, j, count, fb.reward_sums[(i, j)])?;
        }
        if matches!(self.phase, Phase::Exploring) {
            for (sum, &a) in self.arrival_sums.iter_mut().zip(fb.arrivals) {
                *sum += a as f64;
            }
            for (acc, w) in self.weight_sums.iter_mut().zip(fb.weights) {
                for ((i, j), v) in w.indexed() {
                    acc[(i, j)] += v;
                }
            }
            for (acc, rho) in self.requirement_sums.iter_mut().zip(fb.requirements) {
                for (a, r) in acc.iter_mut().zip(rho) {
                    *a += r;
                }
            }
            self.seen += 1;
            if self.seen >= self.exploration_slots {
                self.commit();
            }
        }
        Ok(())
    }

    fn arm_stats(&self) -> &ArmStats {
        &self.stats
    }

    fn flags(&self) -> Vec<String> {
        self.flags.clone()
    }

    fn etc_summary(&self) -> Option<EtcSummary> {
        Some(EtcSummary {
            exploration_slots: self.exploration_slots,
            routing: self.routing().cloned(),
        })
    }
}

/// Routes every job independently according to the row of `probs` for its type.
fn route(probs: &Matrix<f64>, arrivals: &[u64], rng: &mut dyn rand::RngCore) -> Matrix<u64> {
    let m = probs.cols();
    let mut x = Matrix::zeros(probs.rows(), m);
    for (i, &count) in arrivals.iter().enumerate() {
        let row = probs.row(i);
        for _ in 0..count {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (j, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = j;
                    break;
                }
            }
            x[(i, chosen)] += 1;
        }
    }
    x
}

/// One ETC episode of `horizon` slots.
pub fn run_etc_trial(
    inst: &Instance,
    horizon: usize,
    trial_seed: u64,
) -> Result<TrialRecord, SimError> {
    validate_instance(inst)?;
    if horizon == 0 {
        return Err(SimError::Params("horizon must be at least 1".into()));
    }
    simulate(inst, Etc::for_instance(horizon, inst), horizon, trial_seed)
}

/// Sends every job to a uniformly random server, ignoring everything it observes
/// except for bookkeeping.
#[derive(Debug, Clone)]
pub struct UniformRandom {
    stats: ArmStats,
}

impl UniformRandom {
    pub fn new(n_types: usize, n_servers: usize) -> Self {
        Self {
            stats: ArmStats::new(n_types, n_servers),
        }
    }
}

impl DispatchPolicy for UniformRandom {
    fn name(&self) -> String {
        "uniform".to_string()
    }

    fn allocate(
        &self,
        arrivals: &[u64],
        _weights: &[Matrix<f64>],
        rng: &mut dyn rand::RngCore,
    ) -> Matrix<u64> {
        let (n, m) = self.stats.means().shape();
        let mut x = Matrix::zeros(n, m);
        for (i, &count) in arrivals.iter().enumerate() {
            for _ in 0..count {
                x[(i, rng.random_range(0..m))] += 1;
            }
        }
        x
    }

    fn observe(&mut self, fb: &SlotFeedback<'_>) -> Result<(), SimError> {
        for ((i, j), &count) in fb.allocation.indexed() {
            self.stats.update(i, j, count, fb.reward_sums[(i, j)])?;
        }
        Ok(())
    }

    fn arm_stats(&self) -> &ArmStats {
        &self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{build_constraint, ConstraintKind, ConstraintParams, Dist};
    use crate::stochastic::derive_stream;

    #[test]
    fn exploration_length_formula() {
        assert_eq!(exploration_length(2, 4, 10_000), 74);
        assert_eq!(exploration_length(1, 1, 1), 0);
        assert_eq!(exploration_length(1, 1, 3), 2);
    }

    fn deterministic_instance() -> Instance {
        let cap = build_constraint(
            1,
            &ConstraintParams {
                kind: Some(ConstraintKind::Capacity),
                service: Some(vec![Dist::Deterministic(0.5), Dist::Deterministic(1.0)]),
                ..Default::default()
            },
        )
        .unwrap();
        Instance::new(
            vec![Dist::Deterministic(1.0)],
            Matrix::from_rows(vec![vec![Dist::Deterministic(0.9), Dist::Deterministic(0.1)]])
                .unwrap(),
            vec![cap],
            1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn exact_estimates_reproduce_true_lp() {
        let inst = deterministic_instance();
        let rec = run_etc_trial(&inst, 200, 3).unwrap();
        let summary = rec.etc.unwrap();
        assert_eq!(summary.exploration_slots, exploration_length(1, 2, 200));
        let routing = summary.routing.unwrap();
        let truth = solve_fluid_lp(&FluidProblem::from_instance(&inst, 0.0)).unwrap();
        for j in 0..2 {
            assert_eq!(routing[(0, j)], truth.x_star[(0, j)] / 1.0);
        }
        assert!(rec.flags.is_empty());
    }

    #[test]
    fn infeasible_estimates_fall_back_to_uniform() {
        let mut inst = deterministic_instance();
        inst.constraints[0].requirements = vec![Dist::Deterministic(0.2); 2];
        let rec = run_etc_trial(&inst, 100, 0).unwrap();
        assert!(rec.flags.iter().any(|f| f.contains("infeasible")));
        let routing = rec.etc.unwrap().routing.unwrap();
        assert_eq!(routing.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn routing_conserves_and_follows_probabilities() {
        let probs = Matrix::from_rows(vec![vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap();
        let mut rng = derive_stream(1, &[("r", 0)]);
        let mut first = 0u64;
        for _ in 0..10_000 {
            let x = route(&probs, &[4, 2], &mut rng);
            assert_eq!(x.row(0).iter().sum::<u64>(), 4);
            assert_eq!(x.row(1), &[2, 0]);
            first += x[(0, 0)];
        }
        let share = first as f64 / 40_000.0;
        assert!((share - 0.25).abs() < 0.01, "{share}");
    }

    #[test]
    fn unseen_type_is_flagged() {
        let mut inst = deterministic_instance();
        inst.arrivals.push(Dist::Bernoulli(1e-12));
        inst.n_types = 2;
        inst.rewards = Matrix::filled(2, 2, Dist::Deterministic(0.5));
        inst.constraints[0].weights = Matrix::filled(2, 2, Dist::Deterministic(1.0));
        let rec = run_etc_trial(&inst, 50, 0).unwrap();
        assert!(rec.flags.iter().any(|f| f.contains("type 1")), "{:?}", rec.flags);
    }
}
