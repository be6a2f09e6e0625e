//! Seed-derived random streams and the samplers built on them.
//!
//! Every consumer inside a trial owns its own stream, derived from the trial
//! seed and a label path. Adding a consumer therefore never shifts the draws
//! of another one, and two algorithms run with the same trial seed see the
//! same arrivals, constraint realizations and per-arm reward sequences.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Geometric};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::instance::{ConstraintSpec, Dist};
use crate::matrix::Matrix;

/// A single-owner uniform generator.
#[derive(Debug, Clone)]
pub struct RandomStream(ChaCha12Rng);

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Derives a stream from a master seed and a non-empty label path such as
/// `[("trial", 0), ("rewards", 3)]`.
///
/// The derivation is a pure function of its arguments.
///
/// # Panics
///
/// Panics if `labels` is empty.
pub fn derive_stream(master_seed: u64, labels: &[(&str, u64)]) -> RandomStream {
    assert!(!labels.is_empty(), "stream labels must not be empty");
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    for (tag, index) in labels {
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
        hasher.update(index.to_le_bytes());
    }
    RandomStream(ChaCha12Rng::from_seed(hasher.finalize().into()))
}

/// Draws one value from `dist`. Arrival-dependent models are resolved with
/// `total_arrivals`.
pub fn sample_dist<R: Rng + ?Sized>(dist: &Dist, total_arrivals: u64, rng: &mut R) -> f64 {
    match dist {
        Dist::Deterministic(v) => *v,
        Dist::Bernoulli(p) => {
            if rng.random_bool(*p) {
                1.0
            } else {
                0.0
            }
        }
        Dist::Geometric(mean) => {
            // Failures before the first success, so E = (1 - p) / p = mean.
            let geo = Geometric::new(1.0 / (1.0 + mean)).expect("validated geometric mean");
            geo.sample(rng) as f64
        }
        Dist::ShiftedGeometric(mean) => {
            let geo = Geometric::new(1.0 / mean).expect("validated shifted geometric mean");
            1.0 + geo.sample(rng) as f64
        }
        Dist::NegatedArrivalFraction(d) => -d * total_arrivals as f64,
        Dist::Empirical(values) => values[rng.random_range(0..values.len())],
    }
}

/// Samples `Λ(t)`, one count per job type.
pub fn sample_arrivals<R: Rng + ?Sized>(models: &[Dist], stream: &mut R) -> Vec<u64> {
    models
        .iter()
        .map(|m| sample_dist(m, 0, stream) as u64)
        .collect()
}

/// Draws `count` i.i.d. rewards.
pub fn sample_rewards<R: Rng + ?Sized>(model: &Dist, count: u64, stream: &mut R) -> Vec<f64> {
    (0..count).map(|_| sample_dist(model, 0, stream)).collect()
}

/// Sum of `count` i.i.d. rewards; consumes the stream exactly like [`sample_rewards`].
pub fn sample_reward_sum<R: Rng + ?Sized>(model: &Dist, count: u64, stream: &mut R) -> f64 {
    (0..count).fold(0.0, |acc, _| acc + sample_dist(model, 0, stream))
}

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("constraint {constraint} ({name}): weight ({i}, {j}) realized {value}, violating its declared sign")]
    SignViolation {
        constraint: usize,
        name: String,
        i: usize,
        j: usize,
        value: f64,
    },
}

/// One slot's realization of a constraint family: the `N x M` weights and
/// the per-server requirements. `arrivals` must already be sampled for the
/// slot because fairness requirements depend on them.
pub fn sample_constraint_realization<R: Rng + ?Sized>(
    constraint: usize,
    spec: &ConstraintSpec,
    arrivals: &[u64],
    stream: &mut R,
) -> Result<(Matrix<f64>, Vec<f64>), SampleError> {
    let total: u64 = arrivals.iter().sum();
    let mut weights = Matrix::zeros(spec.weights.rows(), spec.weights.cols());
    for ((i, j), model) in spec.weights.indexed() {
        let value = sample_dist(model, total, stream);
        if !spec.sign.admits(value) {
            return Err(SampleError::SignViolation {
                constraint,
                name: spec.name.clone(),
                i,
                j,
                value,
            });
        }
        weights[(i, j)] = value;
    }
    let requirements = spec
        .requirements
        .iter()
        .map(|m| sample_dist(m, total, stream))
        .collect();
    Ok((weights, requirements))
}

/// The purpose-split streams used by one simulated trial.
#[derive(Debug, Clone)]
pub struct TrialStreams {
    pub arrivals: RandomStream,
    pub constraints: RandomStream,
    /// One stream per `(type, server)` pair, so the `n`-th job sent to a pair
    /// always receives the same reward draw regardless of the policy.
    pub rewards: Matrix<RandomStream>,
    /// Tie-breaking and any other randomized decision of the policy.
    pub decisions: RandomStream,
}

impl TrialStreams {
    pub fn new(trial_seed: u64, n_types: usize, n_servers: usize) -> Self {
        Self {
            arrivals: derive_stream(trial_seed, &[("arrivals", 0)]),
            constraints: derive_stream(trial_seed, &[("constraints", 0)]),
            rewards: Matrix::from_fn(n_types, n_servers, |i, j| {
                derive_stream(trial_seed, &[("rewards", (i * n_servers + j) as u64)])
            }),
            decisions: derive_stream(trial_seed, &[("ties", 0)]),
        }
    }
}
