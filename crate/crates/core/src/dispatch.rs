//! The POND engine: MaxWeight dispatch on optimistic reward indices, with
//! virtual queues standing in for the unknown constraint parameters.
//!
//! Each slot runs the same sequence:
//!
//! 1. arm indices are computed from the statistics gathered up to the previous slot;
//! 2. arrivals `Λ(t)` and weight realizations `W(t)` are observed;
//! 3. every type-`i` job goes to a server maximizing
//!    `η[i][j] = V·r̂[i][j] − Σ_k W⁽ᵏ⁾[i][j]·Q⁽ᵏ⁾[j]`;
//! 4. requirements `ρ(t)` and job rewards are revealed, then queues and
//!    statistics are updated.
//!
//! True means are never visible to a [`DispatchPolicy`]; the simulation loop
//! in [`simulate`] is the only code that touches the instance's distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::EtcSummary;
use crate::instance::{validate_instance, Instance, InstanceError};
use crate::learners::{ArmStats, ExtReal, Learner, LearnerError};
use crate::matrix::Matrix;
use crate::stochastic::{
    sample_arrivals, sample_constraint_realization, sample_reward_sum, SampleError,
    TrialStreams,
};

/// Virtual queue lengths `Q[j][k]`, one per (server, constraint family).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueState {
    q: Matrix<f64>,
}

impl QueueState {
    pub fn new(n_servers: usize, n_constraints: usize) -> Self {
        Self {
            q: Matrix::zeros(n_servers, n_constraints),
        }
    }

    pub fn from_matrix(q: Matrix<f64>) -> Self {
        Self { q }
    }

    /// Queue of server `j` for constraint family `k`.
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.q[(j, k)]
    }

    pub fn as_matrix(&self) -> &Matrix<f64> {
        &self.q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PondParams {
    /// Reward/queue trade-off weight `V`.
    pub v: f64,
    /// Tightness added to every queue update.
    pub epsilon: f64,
    pub learner: Learner,
}

/// Everything observed in one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotOutcome {
    pub arrivals: Vec<u64>,
    pub allocation: Matrix<u64>,
    /// One `N x M` realization per constraint family.
    pub weights: Vec<Matrix<f64>>,
    /// One `M`-vector per constraint family.
    pub requirements: Vec<Vec<f64>>,
    pub reward_sums: Matrix<f64>,
    /// Queues after this slot's update, for policies that keep them.
    pub queues: Option<QueueState>,
}

/// Complete trace of one simulated episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub algorithm: String,
    pub horizon: usize,
    pub slots: Vec<SlotOutcome>,
    pub final_stats: ArmStats,
    pub final_queues: Option<QueueState>,
    pub flags: Vec<String>,
    pub etc: Option<EtcSummary>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("slot {slot}: allocation of type {i} sums to {allocated}, but {arrived} jobs arrived")]
    Conservation {
        slot: usize,
        i: usize,
        allocated: u64,
        arrived: u64,
    },
}

/// `η[i][j] = v·r̂[i][j] − Σ_k W⁽ᵏ⁾[i][j]·Q[j][k]`, or `+∞` wherever `r̂` is `+∞`.
pub fn compute_weights(
    r_hat: &Matrix<ExtReal>,
    queues: &QueueState,
    weights: &[Matrix<f64>],
    v: f64,
) -> Matrix<ExtReal> {
    Matrix::from_fn(r_hat.rows(), r_hat.cols(), |i, j| match r_hat[(i, j)] {
        ExtReal::PosInfinity => ExtReal::PosInfinity,
        ExtReal::Finite(r) => {
            let pressure: f64 = weights
                .iter()
                .enumerate()
                .map(|(k, w)| w[(i, j)] * queues.get(j, k))
                .sum();
            ExtReal::Finite(v * r - pressure)
        }
    })
}

/// Sends all `Λ[i]` jobs of each type to one server maximizing `η[i][·]`;
/// exact ties (including several `+∞` entries) are broken uniformly at random.
pub fn max_weight_allocate<R: Rng + ?Sized>(
    eta: &Matrix<ExtReal>,
    arrivals: &[u64],
    ties: &mut R,
) -> Matrix<u64> {
    let mut x = Matrix::zeros(eta.rows(), eta.cols());
    let mut best = Vec::with_capacity(eta.cols());
    for (i, &count) in arrivals.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let row = eta.row(i);
        best.clear();
        let mut top = row[0];
        for (j, &value) in row.iter().enumerate() {
            if value > top {
                top = value;
                best.clear();
            }
            if value == top {
                best.push(j);
            }
        }
        let j = if best.len() == 1 {
            best[0]
        } else {
            best[ties.random_range(0..best.len())]
        };
        x[(i, j)] = count;
    }
    x
}

/// `Q'[j][k] = max(Q[j][k] + Σ_i W⁽ᵏ⁾[i][j]·x[i][j] − ρ⁽ᵏ⁾[j] + ε, 0)`.
pub fn update_queues(
    queues: &QueueState,
    allocation: &Matrix<u64>,
    weights: &[Matrix<f64>],
    requirements: &[Vec<f64>],
    epsilon: f64,
) -> QueueState {
    let (m, k_count) = queues.q.shape();
    QueueState {
        q: Matrix::from_fn(m, k_count, |j, k| {
            let load: f64 = (0..allocation.rows())
                .map(|i| weights[k][(i, j)] * allocation[(i, j)] as f64)
                .sum();
            (queues.q[(j, k)] + load - requirements[k][j] + epsilon).max(0.0)
        }),
    }
}

/// What a policy learns at the end of a slot.
#[derive(Debug, Clone, Copy)]
pub struct SlotFeedback<'a> {
    pub arrivals: &'a [u64],
    pub allocation: &'a Matrix<u64>,
    pub weights: &'a [Matrix<f64>],
    pub requirements: &'a [Vec<f64>],
    pub reward_sums: &'a Matrix<f64>,
}

/// An online dispatching rule.
///
/// `allocate` sees only what is known before the decision: arrivals and the
/// slot's weight realizations. Requirements and rewards arrive in `observe`.
pub trait DispatchPolicy {
    fn name(&self) -> String;

    fn allocate(
        &self,
        arrivals: &[u64],
        weights: &[Matrix<f64>],
        rng: &mut dyn rand::RngCore,
    ) -> Matrix<u64>;

    fn observe(&mut self, feedback: &SlotFeedback<'_>) -> Result<(), SimError>;

    fn arm_stats(&self) -> &ArmStats;

    fn queues(&self) -> Option<&QueueState> {
        None
    }

    fn flags(&self) -> Vec<String> {
        Vec::new()
    }

    fn etc_summary(&self) -> Option<EtcSummary> {
        None
    }
}

impl<P: DispatchPolicy + ?Sized> DispatchPolicy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn allocate(
        &self,
        arrivals: &[u64],
        weights: &[Matrix<f64>],
        rng: &mut dyn rand::RngCore,
    ) -> Matrix<u64> {
        (**self).allocate(arrivals, weights, rng)
    }

    fn observe(&mut self, feedback: &SlotFeedback<'_>) -> Result<(), SimError> {
        (**self).observe(feedback)
    }

    fn arm_stats(&self) -> &ArmStats {
        (**self).arm_stats()
    }

    fn queues(&self) -> Option<&QueueState> {
        (**self).queues()
    }

    fn flags(&self) -> Vec<String> {
        (**self).flags()
    }

    fn etc_summary(&self) -> Option<EtcSummary> {
        (**self).etc_summary()
    }
}

/// POND's state for one trial.
#[derive(Debug, Clone)]
pub struct Pond {
    params: PondParams,
    horizon: usize,
    stats: ArmStats,
    queues: QueueState,
}

impl Pond {
    pub fn new(
        params: PondParams,
        horizon: usize,
        n_types: usize,
        n_servers: usize,
        n_constraints: usize,
    ) -> Result<Self, SimError> {
        if !(params.v.is_finite() && params.v > 0.0) {
            return Err(SimError::Params(format!("V must be positive, got {}", params.v)));
        }
        if !(params.epsilon.is_finite() && params.epsilon >= 0.0) {
            return Err(SimError::Params(format!(
                "epsilon must be non-negative, got {}",
                params.epsilon
            )));
        }
        Ok(Self {
            params,
            horizon,
            stats: ArmStats::new(n_types, n_servers),
            queues: QueueState::new(n_servers, n_constraints),
        })
    }

    pub fn for_instance(params: PondParams, horizon: usize, inst: &Instance) -> Result<Self, SimError> {
        Self::new(params, horizon, inst.n_types, inst.n_servers, inst.n_constraints())
    }
}

impl DispatchPolicy for Pond {
    fn name(&self) -> String {
        format!("pond_{}", self.params.learner)
    }

    fn allocate(
        &self,
        arrivals: &[u64],
        weights: &[Matrix<f64>],
        rng: &mut dyn rand::RngCore,
    ) -> Matrix<u64> {
        let r_hat = self.stats.indices(self.params.learner, self.horizon);
        let eta = compute_weights(&r_hat, &self.queues, weights, self.params.v);
        max_weight_allocate(&eta, arrivals, rng)
    }

    fn observe(&mut self, fb: &SlotFeedback<'_>) -> Result<(), SimError> {
        self.queues = update_queues(
            &self.queues,
            fb.allocation,
            fb.weights,
            fb.requirements,
            self.params.epsilon,
        );
        for ((i, j), &count) in fb.allocation.indexed() {
            self.stats.update(i, j, count, fb.reward_sums[(i, j)])?;
        }
        Ok(())
    }

    fn arm_stats(&self) -> &ArmStats {
        &self.stats
    }

    fn queues(&self) -> Option<&QueueState> {
        Some(&self.queues)
    }
}

/// Runs `policy` for `horizon` slots on `inst` with the streams of `trial_seed`.
pub fn simulate<P: DispatchPolicy>(
    inst: &Instance,
    mut policy: P,
    horizon: usize,
    trial_seed: u64,
) -> Result<TrialRecord, SimError> {
    let mut streams = TrialStreams::new(trial_seed, inst.n_types, inst.n_servers);
    let mut slots = Vec::with_capacity(horizon);
    let k_count = inst.n_constraints();

    for t in 0..horizon {
        let arrivals = sample_arrivals(&inst.arrivals, &mut streams.arrivals);
        let mut weights = Vec::with_capacity(k_count);
        let mut requirements = Vec::with_capacity(k_count);
        for (k, spec) in inst.constraints.iter().enumerate() {
            let (w, rho) =
                sample_constraint_realization(k, spec, &arrivals, &mut streams.constraints)?;
            weights.push(w);
            requirements.push(rho);
        }

        let allocation = policy.allocate(&arrivals, &weights, &mut streams.decisions);
        check_conservation(t, &arrivals, &allocation)?;

        let reward_sums = Matrix::from_fn(inst.n_types, inst.n_servers, |i, j| {
            sample_reward_sum(
                &inst.rewards[(i, j)],
                allocation[(i, j)],
                &mut streams.rewards[(i, j)],
            )
        });

        policy.observe(&SlotFeedback {
            arrivals: &arrivals,
            allocation: &allocation,
            weights: &weights,
            requirements: &requirements,
            reward_sums: &reward_sums,
        })?;

        slots.push(SlotOutcome {
            arrivals,
            allocation,
            weights,
            requirements,
            reward_sums,
            queues: policy.queues().cloned(),
        });
    }

    Ok(TrialRecord {
        algorithm: policy.name(),
        horizon,
        slots,
        final_stats: policy.arm_stats().clone(),
        final_queues: policy.queues().cloned(),
        flags: policy.flags(),
        etc: policy.etc_summary(),
    })
}

pub(crate) fn check_conservation(
    slot: usize,
    arrivals: &[u64],
    allocation: &Matrix<u64>,
) -> Result<(), SimError> {
    for (i, &arrived) in arrivals.iter().enumerate() {
        let allocated: u64 = allocation.row(i).iter().sum();
        if allocated != arrived {
            return Err(SimError::Conservation {
                slot,
                i,
                allocated,
                arrived,
            });
        }
    }
    Ok(())
}

/// One POND episode of `horizon` slots.
pub fn run_pond_trial(
    inst: &Instance,
    params: PondParams,
    horizon: usize,
    trial_seed: u64,
) -> Result<TrialRecord, SimError> {
    validate_instance(inst)?;
    if horizon == 0 {
        return Err(SimError::Params("horizon must be at least 1".into()));
    }
    let policy = Pond::for_instance(params, horizon, inst)?;
    simulate(inst, policy, horizon, trial_seed)
}
