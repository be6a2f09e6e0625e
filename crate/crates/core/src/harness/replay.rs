//! Offline evaluation on uniformly logged data by reject sampling.
//!
//! Records are drawn with replacement. Each draw is one job of the record's
//! context type; the policy proposes a server and the draw counts only when
//! the proposal equals the logged arm. Rejected draws do not advance time.

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LoggingPolicy};
use super::sweep::{
    build_policy, expand_cells, fmt_opt, num, trial_seed, with_threads, Cell, SweepContext,
};
use super::HarnessError;
use crate::dispatch::{check_conservation, DispatchPolicy, SlotFeedback, SlotOutcome, TrialRecord};
use crate::instance::Instance;
use crate::matrix::Matrix;
use crate::metrics::{aggregate, mean_sem, violation_trajectory, TrialSummary};
use crate::stochastic::{derive_stream, sample_constraint_realization, sample_dist};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedRecord {
    pub context_type: usize,
    pub logged_arm: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    pub records: Vec<LoggedRecord>,
    pub n_types: usize,
    pub n_arms: usize,
    pub logging_policy: LoggingPolicy,
}

impl LoggedDataset {
    pub fn new(
        records: Vec<LoggedRecord>,
        n_types: usize,
        n_arms: usize,
        logging_policy: LoggingPolicy,
    ) -> Result<Self, HarnessError> {
        if records.is_empty() {
            return Err(HarnessError::Dataset("dataset is empty".into()));
        }
        if logging_policy != LoggingPolicy::UniformOverArms {
            return Err(HarnessError::Dataset(
                "replay needs data logged uniformly over arms".into(),
            ));
        }
        for (row, r) in records.iter().enumerate() {
            if r.context_type >= n_types {
                return Err(HarnessError::Dataset(format!(
                    "record {row}: context_type {} is not below {n_types}",
                    r.context_type
                )));
            }
            if r.logged_arm >= n_arms {
                return Err(HarnessError::Dataset(format!(
                    "record {row}: logged_arm {} is not below {n_arms}",
                    r.logged_arm
                )));
            }
            if !(0.0..=1.0).contains(&r.reward) {
                return Err(HarnessError::Dataset(format!(
                    "record {row}: reward {} is outside [0, 1]",
                    r.reward
                )));
            }
        }
        Ok(Self {
            records,
            n_types,
            n_arms,
            logging_policy,
        })
    }

    pub fn mean_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum::<f64>() / self.records.len() as f64
    }
}

/// Reads a `context_type,logged_arm,reward` CSV.
pub fn load_dataset(
    path: impl AsRef<Path>,
    n_types: usize,
    n_arms: usize,
    logging_policy: LoggingPolicy,
) -> Result<LoggedDataset, HarnessError> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().collect::<Vec<_>>() != ["context_type", "logged_arm", "reward"] {
        return Err(HarnessError::Csv {
            path: path.to_path_buf(),
            message: "header must be context_type,logged_arm,reward".into(),
        });
    }
    let records = reader
        .deserialize()
        .collect::<Result<Vec<LoggedRecord>, _>>()
        .map_err(csv_err)?;
    LoggedDataset::new(records, n_types, n_arms, logging_policy)
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &LoggedDataset) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in &dataset.records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A uniformly logged dataset drawn from `inst`: context types in
/// proportion to the arrival means, arms uniform, one reward draw each.
pub fn synthesize_dataset(inst: &Instance, records: usize, seed: u64) -> LoggedDataset {
    let mut rng = derive_stream(seed, &[("synthetic_log", 0)]);
    let lambda = inst.arrival_means();
    let total: f64 = lambda.iter().sum();
    let records = (0..records)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            let mut context_type = lambda.len() - 1;
            for (i, l) in lambda.iter().enumerate() {
                if u < *l {
                    context_type = i;
                    break;
                }
                u -= l;
            }
            let logged_arm = rng.random_range(0..inst.n_servers);
            let reward = sample_dist(&inst.rewards[(context_type, logged_arm)], 1, &mut rng);
            LoggedRecord {
                context_type,
                logged_arm,
                reward,
            }
        })
        .collect();
    LoggedDataset {
        records,
        n_types: inst.n_types,
        n_arms: inst.n_servers,
        logging_policy: LoggingPolicy::UniformOverArms,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayOutcome {
    pub record: TrialRecord,
    pub draws: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    /// Binomial standard error of the acceptance rate.
    pub acceptance_sem: f64,
    /// Mean logged reward over accepted slots.
    pub average_reward: f64,
    pub reward_sem: f64,
}

/// Replays `policy` for `horizon` accepted slots. Constraint realizations are
/// drawn from `inst`'s models with one arrival per slot; its reward models are
/// not used.
pub fn replay_logged<P: DispatchPolicy>(
    dataset: &LoggedDataset,
    inst: &Instance,
    mut policy: P,
    horizon: usize,
    seed: u64,
    max_draws_per_slot: usize,
) -> Result<ReplayOutcome, HarnessError> {
    if dataset.n_types != inst.n_types || dataset.n_arms != inst.n_servers {
        return Err(HarnessError::Dataset(format!(
            "dataset is {}x{} but the instance is {}x{}",
            dataset.n_types, dataset.n_arms, inst.n_types, inst.n_servers
        )));
    }
    let mut bootstrap = derive_stream(seed, &[("bootstrap", 0)]);
    let mut constraints = derive_stream(seed, &[("constraints", 0)]);
    let mut decisions = derive_stream(seed, &[("ties", 0)]);
    let draw_limit = horizon.saturating_mul(max_draws_per_slot).max(max_draws_per_slot);

    let mut slots = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut draws = 0usize;
    while slots.len() < horizon {
        if draws >= draw_limit {
            return Err(HarnessError::Dataset(format!(
                "only {} of {horizon} slots accepted after {draws} draws",
                slots.len()
            )));
        }
        draws += 1;
        let rec = dataset.records[bootstrap.random_range(0..dataset.records.len())];
        let mut arrivals = vec![0u64; inst.n_types];
        arrivals[rec.context_type] = 1;

        let mut weights = Vec::with_capacity(inst.n_constraints());
        let mut requirements = Vec::with_capacity(inst.n_constraints());
        for (k, spec) in inst.constraints.iter().enumerate() {
            let (w, rho) = sample_constraint_realization(k, spec, &arrivals, &mut constraints)
                .map_err(crate::dispatch::SimError::from)?;
            weights.push(w);
            requirements.push(rho);
        }

        let allocation = policy.allocate(&arrivals, &weights, &mut decisions as &mut dyn RngCore);
        check_conservation(slots.len(), &arrivals, &allocation)?;
        if allocation[(rec.context_type, rec.logged_arm)] != 1 {
            continue;
        }

        let mut reward_sums = Matrix::zeros(inst.n_types, inst.n_servers);
        reward_sums[(rec.context_type, rec.logged_arm)] = rec.reward;
        policy.observe(&SlotFeedback {
            arrivals: &arrivals,
            allocation: &allocation,
            weights: &weights,
            requirements: &requirements,
            reward_sums: &reward_sums,
        })?;
        rewards.push(rec.reward);
        slots.push(SlotOutcome {
            arrivals,
            allocation,
            weights,
            requirements,
            reward_sums,
            queues: policy.queues().cloned(),
        });
    }

    let accepted = slots.len();
    let (average_reward, reward_sem) = if rewards.is_empty() {
        (0.0, 0.0)
    } else {
        mean_sem(&rewards)
    };
    let acceptance_rate = if draws == 0 {
        0.0
    } else {
        accepted as f64 / draws as f64
    };
    let acceptance_sem = if draws == 0 {
        0.0
    } else {
        (acceptance_rate * (1.0 - acceptance_rate) / draws as f64).sqrt()
    };
    let record = TrialRecord {
        algorithm: policy.name(),
        horizon,
        slots,
        final_stats: policy.arm_stats().clone(),
        final_queues: policy.queues().cloned(),
        flags: policy.flags(),
        etc: policy.etc_summary(),
    };
    Ok(ReplayOutcome {
        record,
        draws,
        accepted,
        acceptance_rate,
        acceptance_sem,
        average_reward,
        reward_sem,
    })
}

/// Bootstrap summary of one replay cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayCellOutcome {
    pub algorithm: String,
    pub epsilon_mode: String,
    pub horizon: usize,
    pub v: Option<f64>,
    pub epsilon: Option<f64>,
    pub result: Result<ReplayStats, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayStats {
    pub trials: usize,
    pub average_reward_mean: f64,
    pub average_reward_sem: f64,
    pub acceptance_rate_mean: f64,
    /// Per family: max over servers of the mean signed violation, then Σ of its positive parts.
    pub families: Vec<(f64, f64)>,
}

fn replay_trial(
    config: &ExperimentConfig,
    ctx: &SweepContext,
    dataset: &LoggedDataset,
    cell: &Cell,
    trial: usize,
) -> Result<(f64, f64, TrialSummary), String> {
    let params = match (cell.algorithm, cell.epsilon_mode) {
        (crate::harness::AlgorithmSpec::Pond { learner }, Some(mode)) => Some(
            config
                .pond_params(learner, mode, cell.horizon, ctx.theorem.get(&cell.horizon))
                .ok_or("theorem parameters unavailable for this instance")?,
        ),
        _ => None,
    };
    let policy = build_policy(cell.algorithm, &ctx.instance, cell.horizon, params)
        .map_err(|e| e.to_string())?;
    let seed = trial_seed(config.master_seed, cell.horizon, trial);
    let out = replay_logged(
        dataset,
        &ctx.instance,
        policy,
        cell.horizon,
        seed,
        config.replay.max_draws_per_slot,
    )
    .map_err(|e| format!("trial {trial}: {e}"))?;
    let violation = violation_trajectory(&out.record)
        .map_err(|e| e.to_string())?
        .pop()
        .unwrap_or_else(|| Matrix::zeros(ctx.instance.n_servers, ctx.instance.n_constraints()));
    let summary = TrialSummary {
        regret: 0.0,
        realized_reward: out.average_reward * out.accepted as f64,
        violation,
    };
    Ok((out.average_reward, out.acceptance_rate, summary))
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub outcomes: Vec<ReplayCellOutcome>,
    pub replay_csv: PathBuf,
}

/// Replays every cell of `config` `trials` times (bootstrap replications)
/// and writes `replay.csv` into the output directory.
pub fn run_replay(
    config: &ExperimentConfig,
    dataset: &LoggedDataset,
) -> Result<ReplayOutput, HarnessError> {
    config.validate()?;
    let ctx = SweepContext::new(config)?;
    let cells = expand_cells(config);
    let trials = config.trials;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let results: Vec<Result<(f64, f64, TrialSummary), String>> =
        with_threads(config.threads, || {
            jobs.par_iter()
                .map(|&(c, t)| replay_trial(config, &ctx, dataset, &cells[c], t))
                .collect()
        })?;

    let mut results = results.into_iter();
    let outcomes: Vec<ReplayCellOutcome> = cells
        .iter()
        .map(|cell| {
            let rows: Result<Vec<_>, String> = results.by_ref().take(trials).collect();
            let params = match (cell.algorithm, cell.epsilon_mode) {
                (crate::harness::AlgorithmSpec::Pond { learner }, Some(mode)) => config
                    .pond_params(learner, mode, cell.horizon, ctx.theorem.get(&cell.horizon)),
                _ => None,
            };
            let result = rows.and_then(|rows| {
                let rewards: Vec<f64> = rows.iter().map(|r| r.0).collect();
                let (average_reward_mean, average_reward_sem) = mean_sem(&rewards);
                let acceptance_rate_mean =
                    rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
                let summaries: Vec<TrialSummary> = rows.into_iter().map(|r| r.2).collect();
                let agg = aggregate(&summaries).map_err(|e| e.to_string())?;
                Ok(ReplayStats {
                    trials: summaries.len(),
                    average_reward_mean,
                    average_reward_sem,
                    acceptance_rate_mean,
                    families: agg
                        .families
                        .iter()
                        .map(|f| (f.max_signed, f.positive_part))
                        .collect(),
                })
            });
            ReplayCellOutcome {
                algorithm: cell.algorithm.label(),
                epsilon_mode: cell.epsilon_label(),
                horizon: cell.horizon,
                v: params.map(|p| p.v),
                epsilon: params.map(|p| p.epsilon),
                result,
            }
        })
        .collect();

    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.clone(),
        source,
    })?;
    let replay_csv = dir.join("replay.csv");
    write_replay_csv(&replay_csv, &super::sweep::family_names(&ctx.instance), &outcomes)?;
    Ok(ReplayOutput {
        outcomes,
        replay_csv,
    })
}

fn write_replay_csv(
    path: &Path,
    families: &[String],
    outcomes: &[ReplayCellOutcome],
) -> Result<(), HarnessError> {
    let csv_err = |e: csv::Error| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = [
        "algorithm",
        "epsilon_mode",
        "T",
        "V",
        "epsilon",
        "average_reward_mean",
        "average_reward_sem",
        "acceptance_rate_mean",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for f in families {
        header.push(format!("{f}_violation_max_signed"));
        header.push(format!("{f}_violation_pospart"));
    }
    header.push("trials".into());
    header.push("status".into());
    w.write_record(&header).map_err(csv_err)?;
    for o in outcomes {
        let mut row = vec![
            o.algorithm.clone(),
            o.epsilon_mode.clone(),
            o.horizon.to_string(),
            fmt_opt(o.v),
            fmt_opt(o.epsilon),
        ];
        match &o.result {
            Ok(s) => {
                row.push(num(s.average_reward_mean));
                row.push(num(s.average_reward_sem));
                row.push(num(s.acceptance_rate_mean));
                for (max_signed, pospart) in &s.families {
                    row.push(num(*max_signed));
                    row.push(num(*pospart));
                }
                row.push(s.trials.to_string());
                row.push("ok".into());
            }
            Err(msg) => {
                row.extend(std::iter::repeat_n(String::new(), 3 + 2 * families.len()));
                row.push("0".into());
                row.push(format!("failed: {msg}"));
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Dist, InstanceSpec};

    fn tiny_instance() -> Instance {
        InstanceSpec {
            arrivals: vec![Dist::Deterministic(1.0), Dist::Deterministic(1.0)],
            rewards: Matrix::from_rows(vec![
                vec![Dist::Bernoulli(0.2), Dist::Bernoulli(0.5), Dist::Bernoulli(0.8)],
                vec![Dist::Bernoulli(0.7), Dist::Bernoulli(0.4), Dist::Bernoulli(0.1)],
            ])
            .unwrap(),
            constraints: vec![],
            c_lambda: 1.0,
            c_u: 1.0,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn empty_and_non_uniform_datasets_are_rejected() {
        assert!(matches!(
            LoggedDataset::new(vec![], 2, 3, LoggingPolicy::UniformOverArms),
            Err(HarnessError::Dataset(_))
        ));
        let rec = LoggedRecord {
            context_type: 0,
            logged_arm: 0,
            reward: 1.0,
        };
        assert!(LoggedDataset::new(vec![rec], 2, 3, LoggingPolicy::NonUniform).is_err());
        let bad = LoggedRecord { logged_arm: 3, ..rec };
        assert!(LoggedDataset::new(vec![bad], 2, 3, LoggingPolicy::UniformOverArms).is_err());
    }

    #[test]
    fn always_arm_zero_is_accepted_a_third_of_the_time() {
        struct ArmZero(crate::learners::ArmStats);
        impl DispatchPolicy for ArmZero {
            fn name(&self) -> String {
                "arm_zero".into()
            }
            fn allocate(&self, arrivals: &[u64], _: &[Matrix<f64>], _: &mut dyn RngCore) -> Matrix<u64> {
                Matrix::from_fn(arrivals.len(), 3, |i, j| if j == 0 { arrivals[i] } else { 0 })
            }
            fn observe(&mut self, _: &SlotFeedback<'_>) -> Result<(), crate::dispatch::SimError> {
                Ok(())
            }
            fn arm_stats(&self) -> &crate::learners::ArmStats {
                &self.0
            }
        }
        let inst = tiny_instance();
        let data = synthesize_dataset(&inst, 30_000, 5);
        let policy = ArmZero(crate::learners::ArmStats::new(2, 3));
        let out = replay_logged(&data, &inst, policy, 20_000, 1, 1000).unwrap();
        assert_eq!(out.accepted, 20_000);
        assert!((out.acceptance_rate - 1.0 / 3.0).abs() < 0.01, "{}", out.acceptance_rate);
    }

    #[test]
    fn dataset_round_trips_through_csv() {
        let inst = tiny_instance();
        let data = synthesize_dataset(&inst, 50, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_dataset(&path, &data).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("context_type,logged_arm,reward\n"));
        let back = load_dataset(&path, 2, 3, LoggingPolicy::UniformOverArms).unwrap();
        assert_eq!(back, data);
    }
}
