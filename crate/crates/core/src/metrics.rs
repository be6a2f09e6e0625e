//! Regret, constraint violation and scaling fits computed from trial records.

use serde::Serialize;
use thiserror::Error;

use crate::dispatch::TrialRecord;
use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("nothing to aggregate")]
    Empty,
    #[error("scaling fit needs at least 3 distinct horizons, got {0}")]
    Degenerate(usize),
}

/// Per-slot trajectories of one trial. Index `t - 1` holds the value after `t` slots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialMetrics {
    /// Cumulative `Σ r[i][j] x[i][j]` under the true means.
    pub expected_reward: Vec<f64>,
    /// Cumulative realized reward.
    pub realized_reward: Vec<f64>,
    /// `t·opt − expected_reward(t)`.
    pub regret: Vec<f64>,
    /// Cumulative `Σ_i W⁽ᵏ⁾[i][j] x[i][j] − ρ⁽ᵏ⁾[j]`, an `M x K` matrix per slot.
    pub violation_signed: Vec<Matrix<f64>>,
    /// Positive part of the signed violation at the horizon.
    pub violation_positive_part: Matrix<f64>,
}

impl TrialMetrics {
    pub fn horizon(&self) -> usize {
        self.regret.len()
    }

    /// Regret after `t` slots; zero for `t = 0`.
    pub fn regret_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.regret[t - 1]
        }
    }

    pub fn final_regret(&self) -> f64 {
        self.regret_at(self.horizon())
    }

    pub fn final_violation(&self) -> Option<&Matrix<f64>> {
        self.violation_signed.last()
    }

    pub fn summary(&self) -> TrialSummary {
        TrialSummary {
            regret: self.final_regret(),
            realized_reward: self.realized_reward.last().copied().unwrap_or(0.0),
            violation: self
                .final_violation()
                .cloned()
                .unwrap_or_else(|| self.violation_positive_part.map(|_| 0.0)),
        }
    }
}

/// Horizon values of one trial; what aggregation consumes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub regret: f64,
    pub realized_reward: f64,
    /// Signed `M x K` violation at the horizon.
    pub violation: Matrix<f64>,
}

/// Signed cumulative violation trajectory of a record, one `M x K` matrix per slot.
pub fn violation_trajectory(trial: &TrialRecord) -> Result<Vec<Matrix<f64>>, MetricsError> {
    let Some(first) = trial.slots.first() else {
        return Ok(Vec::new());
    };
    let k_count = first.weights.len();
    let m = first.allocation.cols();
    let mut acc = Matrix::zeros(m, k_count);
    let mut out = Vec::with_capacity(trial.slots.len());
    for (t, slot) in trial.slots.iter().enumerate() {
        if slot.weights.len() != k_count || slot.requirements.len() != k_count {
            return Err(MetricsError::Shape(format!(
                "slot {t} has {} weight and {} requirement realizations, expected {k_count}",
                slot.weights.len(),
                slot.requirements.len()
            )));
        }
        for k in 0..k_count {
            let w = &slot.weights[k];
            if w.shape() != slot.allocation.shape() || slot.requirements[k].len() != m {
                return Err(MetricsError::Shape(format!("slot {t}, constraint {k}")));
            }
            for j in 0..m {
                let load: f64 = (0..w.rows())
                    .map(|i| w[(i, j)] * slot.allocation[(i, j)] as f64)
                    .sum();
                acc[(j, k)] += load - slot.requirements[k][j];
            }
        }
        out.push(acc.clone());
    }
    Ok(out)
}

/// Regret and violation trajectories of `trial` against the fluid optimum
/// `lp_opt_per_slot` of the same instance's true means `true_r`.
pub fn compute_metrics(
    trial: &TrialRecord,
    true_r: &Matrix<f64>,
    lp_opt_per_slot: f64,
) -> Result<TrialMetrics, MetricsError> {
    let mut expected = 0.0;
    let mut realized = 0.0;
    let mut expected_reward = Vec::with_capacity(trial.slots.len());
    let mut realized_reward = Vec::with_capacity(trial.slots.len());
    let mut regret = Vec::with_capacity(trial.slots.len());
    for (t, slot) in trial.slots.iter().enumerate() {
        if slot.allocation.shape() != true_r.shape() {
            return Err(MetricsError::Shape(format!(
                "slot {t} allocation is {:?}, reward means are {:?}",
                slot.allocation.shape(),
                true_r.shape()
            )));
        }
        expected += slot
            .allocation
            .indexed()
            .map(|(ij, &x)| true_r[ij] * x as f64)
            .sum::<f64>();
        realized += slot.reward_sums.iter().sum::<f64>();
        expected_reward.push(expected);
        realized_reward.push(realized);
        regret.push((t + 1) as f64 * lp_opt_per_slot - expected);
    }
    let violation_signed = violation_trajectory(trial)?;
    let violation_positive_part = violation_signed
        .last()
        .map(|v| v.map(|x| x.max(0.0)))
        .unwrap_or_else(|| {
            let k = trial.final_queues.as_ref().map_or(0, |q| q.as_matrix().cols());
            Matrix::zeros(true_r.cols(), k)
        });
    Ok(TrialMetrics {
        expected_reward,
        realized_reward,
        regret,
        violation_signed,
        violation_positive_part,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyViolation {
    /// `max_j` of the across-trial mean signed violation.
    pub max_signed: f64,
    /// `Σ_j (mean signed violation)⁺`.
    pub positive_part: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub trials: usize,
    pub regret_mean: f64,
    /// Standard error of the mean (n − 1 denominator); 0 for a single trial.
    pub regret_sem: f64,
    pub realized_reward_mean: f64,
    /// Across-trial mean signed violation, `M x K`.
    pub mean_violation: Matrix<f64>,
    /// One entry per constraint family.
    pub families: Vec<FamilyViolation>,
}

/// Mean and standard error of a sample; SEM is 0 for one value.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates the trials of one (algorithm, horizon, ε-mode) cell.
pub fn aggregate(trials: &[TrialSummary]) -> Result<Aggregate, MetricsError> {
    let first = trials.first().ok_or(MetricsError::Empty)?;
    let (m, k_count) = first.violation.shape();
    if let Some(bad) = trials.iter().position(|t| t.violation.shape() != (m, k_count)) {
        return Err(MetricsError::Shape(format!("trial {bad} violation shape differs")));
    }
    let regrets: Vec<f64> = trials.iter().map(|t| t.regret).collect();
    let (regret_mean, regret_sem) = mean_sem(&regrets);
    let n = trials.len() as f64;
    let realized_reward_mean = trials.iter().map(|t| t.realized_reward).sum::<f64>() / n;
    let mean_violation = Matrix::from_fn(m, k_count, |j, k| {
        trials.iter().map(|t| t.violation[(j, k)]).sum::<f64>() / n
    });
    let families = (0..k_count)
        .map(|k| FamilyViolation {
            max_signed: (0..m)
                .map(|j| mean_violation[(j, k)])
                .fold(f64::NEG_INFINITY, f64::max),
            positive_part: (0..m).map(|j| mean_violation[(j, k)].max(0.0)).sum(),
        })
        .collect();
    Ok(Aggregate {
        trials: trials.len(),
        regret_mean,
        regret_sem,
        realized_reward_mean,
        mean_violation,
        families,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 0 when the values are constant.
    pub r_squared: f64,
    pub constant_fit: bool,
}

/// Ordinary least squares of `value` against `√T` over `(T, value)` points.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit, MetricsError> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(MetricsError::Degenerate(distinct.len()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.sqrt()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if syy == 0.0 {
        return Ok(ScalingFit {
            slope: 0.0,
            intercept: my,
            r_squared: 0.0,
            constant_fit: true,
        });
    }
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared: 1.0 - ss_res / syy,
        constant_fit: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::SlotOutcome;
    use crate::learners::ArmStats;

    fn record(slots: Vec<SlotOutcome>) -> TrialRecord {
        let (n, m) = slots[0].allocation.shape();
        TrialRecord {
            algorithm: "test".into(),
            horizon: slots.len(),
            slots,
            final_stats: ArmStats::new(n, m),
            final_queues: None,
            flags: vec![],
            etc: None,
        }
    }

    fn slot(x: Vec<Vec<u64>>, w: Vec<Vec<f64>>, rho: Vec<f64>) -> SlotOutcome {
        let allocation = Matrix::from_rows(x).unwrap();
        let (n, m) = allocation.shape();
        SlotOutcome {
            arrivals: allocation.to_rows().iter().map(|r| r.iter().sum()).collect(),
            allocation,
            weights: vec![Matrix::from_rows(w).unwrap()],
            requirements: vec![rho],
            reward_sums: Matrix::zeros(n, m),
            queues: None,
        }
    }

    #[test]
    fn optimal_allocation_has_zero_regret() {
        let r = Matrix::from_rows(vec![vec![0.9, 0.1]]).unwrap();
        // Deterministic arrivals of 2 per slot; x* = (1, 1) has value 1.0.
        let slots = (0..5)
            .map(|_| slot(vec![vec![1, 1]], vec![vec![1.0, 1.0]], vec![1.0, 1.0]))
            .collect();
        let met = compute_metrics(&record(slots), &r, 1.0).unwrap();
        assert_eq!(met.regret_at(0), 0.0);
        assert!(met.regret.iter().all(|v| v.abs() < 1e-12));
        assert!(met.final_violation().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_slot_violation() {
        let r = Matrix::filled(1, 1, 0.5);
        let met = compute_metrics(&record(vec![slot(vec![vec![2]], vec![vec![1.0]], vec![0.85])]), &r, 0.0)
            .unwrap();
        assert!((met.final_violation().unwrap()[(0, 0)] - 1.15).abs() < 1e-12);
        assert!((met.violation_positive_part[(0, 0)] - 1.15).abs() < 1e-12);
    }

    #[test]
    fn under_served_fairness_is_positive() {
        // Server 1 should get a quarter of 4 arrivals but gets none.
        let r = Matrix::filled(1, 2, 0.5);
        let s = slot(vec![vec![4, 0]], vec![vec![-1.0, -1.0]], vec![-1.0, -1.0]);
        let met = compute_metrics(&record(vec![s]), &r, 0.0).unwrap();
        let v = met.final_violation().unwrap();
        assert_eq!(v[(1, 0)], 1.0);
        assert_eq!(v[(0, 0)], -3.0);
    }

    #[test]
    fn regret_may_be_negative() {
        let r = Matrix::filled(1, 1, 1.0);
        let met = compute_metrics(&record(vec![slot(vec![vec![3]], vec![vec![0.0]], vec![0.0])]), &r, 1.0)
            .unwrap();
        assert_eq!(met.final_regret(), -2.0);
        let agg = aggregate(&[met.summary()]).unwrap();
        assert_eq!(agg.regret_mean, -2.0);
    }

    #[test]
    fn shape_mismatch() {
        let r = Matrix::filled(2, 2, 0.5);
        let rec = record(vec![slot(vec![vec![1]], vec![vec![1.0]], vec![1.0])]);
        assert!(matches!(compute_metrics(&rec, &r, 0.0), Err(MetricsError::Shape(_))));
    }

    fn summary(regret: f64, violation: Vec<f64>) -> TrialSummary {
        TrialSummary {
            regret,
            realized_reward: 0.0,
            violation: Matrix::from_rows(violation.into_iter().map(|v| vec![v]).collect()).unwrap(),
        }
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[summary(300.0, vec![1.0])]).unwrap();
        assert_eq!((one.regret_mean, one.regret_sem), (300.0, 0.0));

        let two = aggregate(&[summary(300.0, vec![7.0, -48.0]), summary(340.0, vec![7.0, -48.0])])
            .unwrap();
        assert_eq!(two.regret_mean, 320.0);
        assert!((two.regret_sem - 20.0).abs() < 1e-12);
        assert_eq!(two.families[0].max_signed, 7.0);
        assert_eq!(two.families[0].positive_part, 7.0);

        assert_eq!(aggregate(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn scaling_fit_examples() {
        let exact: Vec<(f64, f64)> = [100.0, 400.0, 900.0].iter().map(|&t: &f64| (t, 2.0 * t.sqrt())).collect();
        let fit = fit_scaling(&exact).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let flat = fit_scaling(&[(100.0, 3.0), (400.0, 3.0), (900.0, 3.0)]).unwrap();
        assert!(flat.constant_fit);
        assert_eq!((flat.slope, flat.r_squared), (0.0, 0.0));

        assert_eq!(fit_scaling(&[(100.0, 1.0), (100.0, 2.0), (100.0, 3.0)]), Err(MetricsError::Degenerate(1)));
    }
}
