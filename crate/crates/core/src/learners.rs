//! Optimistic reward indices and per-arm empirical means.
//!
//! An arm is a `(job type, server)` pair. Indices use the natural logarithm
//! and are `+∞` for arms that have never been pulled.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// A real number or `+∞`. Ordering puts every finite value below `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum ExtReal {
    Finite(f64),
    PosInfinity,
}

impl ExtReal {
    pub fn is_infinite(self) -> bool {
        matches!(self, ExtReal::PosInfinity)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::PosInfinity => None,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInfinity => f.write_str("+inf"),
        }
    }
}

/// Which optimistic index drives reward learning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    #[default]
    Ucb,
    Moss,
}

impl Learner {
    pub fn index(self, mean: f64, pulls: u64, horizon: usize, n_servers: usize) -> ExtReal {
        match self {
            Learner::Ucb => ucb_index(mean, pulls, horizon),
            Learner::Moss => moss_index(mean, pulls, horizon, n_servers),
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Learner::Ucb => "ucb",
            Learner::Moss => "moss",
        })
    }
}

/// `mean + sqrt(ln T / pulls)`.
pub fn ucb_index(mean: f64, pulls: u64, horizon: usize) -> ExtReal {
    if pulls == 0 {
        return ExtReal::PosInfinity;
    }
    ExtReal::Finite(mean + ((horizon as f64).ln() / pulls as f64).sqrt())
}

/// `mean + sqrt((2 / pulls) * max(ln(T / (M * pulls)), 0))`.
///
/// The logarithm is clipped at zero: once an arm has more than `T / M` pulls
/// the bonus vanishes instead of going imaginary.
pub fn moss_index(mean: f64, pulls: u64, horizon: usize, n_servers: usize) -> ExtReal {
    if pulls == 0 {
        return ExtReal::PosInfinity;
    }
    let n = pulls as f64;
    let log_plus = (horizon as f64 / (n_servers as f64 * n)).ln().max(0.0);
    ExtReal::Finite(mean + (2.0 / n * log_plus).sqrt())
}

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("reward sum {sum} for ({i}, {j}) is outside [0, {count}]")]
    RewardSumOutOfRange { i: usize, j: usize, count: u64, sum: f64 },
}

/// Pull counts and empirical means for every arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmStats {
    pulls: Matrix<u64>,
    mean: Matrix<f64>,
}

impl ArmStats {
    pub fn new(n_types: usize, n_servers: usize) -> Self {
        Self {
            pulls: Matrix::zeros(n_types, n_servers),
            mean: Matrix::zeros(n_types, n_servers),
        }
    }

    pub fn pulls(&self) -> &Matrix<u64> {
        &self.pulls
    }

    pub fn means(&self) -> &Matrix<f64> {
        &self.mean
    }

    /// Folds one batch of `count` jobs with total reward `reward_sum` into arm `(i, j)`.
    pub fn update(
        &mut self,
        i: usize,
        j: usize,
        count: u64,
        reward_sum: f64,
    ) -> Result<(), LearnerError> {
        if !(0.0..=count as f64).contains(&reward_sum) {
            return Err(LearnerError::RewardSumOutOfRange {
                i,
                j,
                count,
                sum: reward_sum,
            });
        }
        if count == 0 {
            return Ok(());
        }
        let old = self.pulls[(i, j)];
        let new = old + count;
        self.mean[(i, j)] = (self.mean[(i, j)] * old as f64 + reward_sum) / new as f64;
        self.pulls[(i, j)] = new;
        Ok(())
    }

    /// Index of every arm under `learner`.
    pub fn indices(&self, learner: Learner, horizon: usize) -> Matrix<ExtReal> {
        let m = self.mean.cols();
        Matrix::from_fn(self.mean.rows(), m, |i, j| {
            learner.index(self.mean[(i, j)], self.pulls[(i, j)], horizon, m)
        })
    }
}

/// Functional form of [`ArmStats::update`].
pub fn update_stats(
    stats: &ArmStats,
    i: usize,
    j: usize,
    batch_count: u64,
    batch_reward_sum: f64,
) -> Result<ArmStats, LearnerError> {
    let mut next = stats.clone();
    next.update(i, j, batch_count, batch_reward_sum)?;
    Ok(next)
}
