use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{AlgorithmSpec, EpsilonMode, ExperimentConfig};
use super::HarnessError;
use crate::baselines::{Etc, UniformRandom};
use crate::dispatch::{simulate, DispatchPolicy, Pond, PondParams, SimError, TrialRecord};
use crate::fluid_lp::{
    slater_margin, solve_fluid_lp, theorem_params, FluidProblem, LpSolution, TheoremParams,
};
use crate::instance::Instance;
use crate::matrix::Matrix;
use crate::metrics::{aggregate, compute_metrics, Aggregate, TrialMetrics, TrialSummary};
use crate::stochastic::derive_stream;

/// One (algorithm, ε-mode, horizon) combination. Non-POND algorithms have no ε-mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub algorithm: AlgorithmSpec,
    pub epsilon_mode: Option<EpsilonMode>,
    pub horizon: usize,
}

impl Cell {
    pub fn epsilon_label(&self) -> String {
        self.epsilon_mode
            .map_or_else(|| "none".to_string(), |m| m.to_string())
    }

    fn sort_key(&self) -> (String, String, usize) {
        (self.algorithm.label(), self.epsilon_label(), self.horizon)
    }
}

/// Seed of trial `trial` at horizon `horizon`. Every algorithm in a sweep
/// uses the same seed for the same (horizon, trial), so comparisons are paired.
pub fn trial_seed(master_seed: u64, horizon: usize, trial: usize) -> u64 {
    derive_stream(master_seed, &[("horizon", horizon as u64), ("trial", trial as u64)]).next_u64()
}

/// Instance-level quantities shared by every cell.
#[derive(Debug, Clone, Serialize)]
pub struct SweepContext {
    #[serde(skip)]
    pub instance: Instance,
    pub lp: LpSolution,
    /// Slater margin of the true-mean problem.
    pub delta: Option<f64>,
    pub theorem: BTreeMap<usize, TheoremParams>,
}

impl SweepContext {
    pub fn new(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        let instance = config.build_instance()?;
        let problem = FluidProblem::from_instance(&instance, 0.0);
        let lp = solve_fluid_lp(&problem)?;
        if !lp.is_optimal() {
            return Err(HarnessError::Lp(crate::fluid_lp::LpError::Infeasible));
        }
        let delta = slater_margin(&problem).ok();
        let mut theorem = BTreeMap::new();
        if instance.n_constraints() > 0 {
            for &t in &config.horizons {
                if let Ok(p) = theorem_params(&problem, t, instance.c_lambda, instance.c_u) {
                    theorem.insert(t, p);
                }
            }
        }
        Ok(Self {
            instance,
            lp,
            delta,
            theorem,
        })
    }

    pub fn opt_per_slot(&self) -> f64 {
        self.lp.objective
    }
}

/// Every cell of `config`, in output order.
pub fn expand_cells(config: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &algorithm in &config.algorithms {
        for &horizon in &config.horizons {
            if algorithm.is_pond() {
                for &mode in &config.epsilon_modes {
                    cells.push(Cell {
                        algorithm,
                        epsilon_mode: Some(mode),
                        horizon,
                    });
                }
            } else {
                cells.push(Cell {
                    algorithm,
                    epsilon_mode: None,
                    horizon,
                });
            }
        }
    }
    cells.sort_by_key(|c| c.sort_key());
    cells.dedup_by(|a, b| a.sort_key() == b.sort_key());
    cells
}

/// A boxed policy for `algorithm`. `params` is required for POND.
pub fn build_policy(
    algorithm: AlgorithmSpec,
    inst: &Instance,
    horizon: usize,
    params: Option<PondParams>,
) -> Result<Box<dyn DispatchPolicy + Send>, SimError> {
    Ok(match algorithm {
        AlgorithmSpec::Pond { learner } => {
            let mut params = params
                .ok_or_else(|| SimError::Params("POND needs V and epsilon".into()))?;
            params.learner = learner;
            Box::new(Pond::for_instance(params, horizon, inst)?)
        }
        AlgorithmSpec::Etc => Box::new(Etc::for_instance(horizon, inst)),
        AlgorithmSpec::Uniform => Box::new(UniformRandom::new(inst.n_types, inst.n_servers)),
    })
}

pub fn run_trial(
    inst: &Instance,
    algorithm: AlgorithmSpec,
    params: Option<PondParams>,
    horizon: usize,
    seed: u64,
) -> Result<TrialRecord, SimError> {
    let policy = build_policy(algorithm, inst, horizon, params)?;
    simulate(inst, policy, horizon, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub summary: TrialSummary,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    pub algorithm: String,
    pub epsilon_mode: String,
    pub horizon: usize,
    pub v: Option<f64>,
    pub epsilon: Option<f64>,
    /// Aggregate and per-trial rows, or the first trial error.
    pub result: Result<(Aggregate, Vec<TrialRow>), String>,
}

impl CellOutcome {
    pub fn aggregate(&self) -> Option<&Aggregate> {
        self.result.as_ref().ok().map(|(a, _)| a)
    }
}

fn resolve_params(
    config: &ExperimentConfig,
    ctx: &SweepContext,
    cell: &Cell,
) -> Result<Option<PondParams>, String> {
    let (AlgorithmSpec::Pond { learner }, Some(mode)) = (cell.algorithm, cell.epsilon_mode) else {
        return Ok(None);
    };
    let theorem = ctx.theorem.get(&cell.horizon);
    config
        .pond_params(learner, mode, cell.horizon, theorem)
        .map(Some)
        .ok_or_else(|| "theorem parameters unavailable for this instance".to_string())
}

/// Runs `trials` trials of every cell, in parallel, and aggregates each cell.
/// Output order follows `cells`, independent of scheduling.
pub fn run_cells(
    config: &ExperimentConfig,
    ctx: &SweepContext,
    cells: &[Cell],
    trials: usize,
) -> Vec<CellOutcome> {
    let params: Vec<Result<Option<PondParams>, String>> =
        cells.iter().map(|c| resolve_params(config, ctx, c)).collect();
    let true_r = ctx.instance.reward_means();
    let opt = ctx.opt_per_slot();

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let results: Vec<Result<TrialRow, String>> = jobs
        .par_iter()
        .map(|&(c, trial)| {
            let cell = &cells[c];
            let p = params[c].clone()?;
            let seed = trial_seed(config.master_seed, cell.horizon, trial);
            let record = run_trial(&ctx.instance, cell.algorithm, p, cell.horizon, seed)
                .map_err(|e| format!("trial {trial}: {e}"))?;
            let metrics = compute_metrics(&record, &true_r, opt)
                .map_err(|e| format!("trial {trial}: {e}"))?;
            Ok(TrialRow {
                trial,
                seed,
                summary: metrics.summary(),
                flags: record.flags,
            })
        })
        .collect();

    let mut results = results.into_iter();
    cells
        .iter()
        .zip(&params)
        .map(|(cell, p)| {
            let rows: Result<Vec<TrialRow>, String> = results.by_ref().take(trials).collect();
            let result = rows.and_then(|rows| {
                let summaries: Vec<TrialSummary> = rows.iter().map(|r| r.summary.clone()).collect();
                aggregate(&summaries)
                    .map(|agg| (agg, rows))
                    .map_err(|e| e.to_string())
            });
            let p = p.as_ref().ok().copied().flatten();
            CellOutcome {
                algorithm: cell.algorithm.label(),
                epsilon_mode: cell.epsilon_label(),
                horizon: cell.horizon,
                v: p.map(|p| p.v),
                epsilon: p.map(|p| p.epsilon),
                result,
            }
        })
        .collect()
}

/// Runs `f` on a pool of `threads` workers, or on the global pool when `None`.
pub fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, HarnessError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Config(vec![e.to_string()]))?;
            Ok(pool.install(f))
        }
    }
}

/// Shortest round-trip decimal form; `-0` is written as `0`.
pub(crate) fn num(v: f64) -> String {
    (v + 0.0).to_string()
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes the aggregate table: one row per cell, fixed column order.
pub fn write_aggregate_csv(
    path: &Path,
    families: &[String],
    outcomes: &[CellOutcome],
) -> Result<(), HarnessError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    let mut header: Vec<String> = ["algorithm", "epsilon_mode", "T", "V", "epsilon", "regret_mean", "regret_sem"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for f in families {
        header.push(format!("{f}_violation_max_signed"));
        header.push(format!("{f}_violation_pospart"));
    }
    header.push("trials".into());
    header.push("status".into());
    w.write_record(&header).map_err(&err)?;

    for o in outcomes {
        let mut row = vec![
            o.algorithm.clone(),
            o.epsilon_mode.clone(),
            o.horizon.to_string(),
            fmt_opt(o.v),
            fmt_opt(o.epsilon),
        ];
        match &o.result {
            Ok((agg, _)) => {
                row.push(num(agg.regret_mean));
                row.push(num(agg.regret_sem));
                for f in &agg.families {
                    row.push(num(f.max_signed));
                    row.push(num(f.positive_part));
                }
                row.push(agg.trials.to_string());
                row.push("ok".into());
            }
            Err(msg) => {
                row.extend(std::iter::repeat_n(String::new(), 2 + 2 * families.len()));
                row.push("0".into());
                row.push(format!("failed: {msg}"));
            }
        }
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes one row per trial with the per-server horizon violations.
pub fn write_trials_csv(
    path: &Path,
    families: &[String],
    n_servers: usize,
    outcomes: &[CellOutcome],
) -> Result<(), HarnessError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    let mut header: Vec<String> = ["algorithm", "epsilon_mode", "T", "trial", "seed", "regret", "realized_reward"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for f in families {
        for j in 0..n_servers {
            header.push(format!("{f}_violation_{j}"));
        }
    }
    header.push("flags".into());
    w.write_record(&header).map_err(&err)?;
    for o in outcomes {
        let Ok((_, rows)) = &o.result else { continue };
        for r in rows {
            let mut row = vec![
                o.algorithm.clone(),
                o.epsilon_mode.clone(),
                o.horizon.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                num(r.summary.regret),
                num(r.summary.realized_reward),
            ];
            for k in 0..families.len() {
                for j in 0..n_servers {
                    row.push(num(r.summary.violation[(j, k)]));
                }
            }
            row.push(r.flags.join("; "));
            w.write_record(&row).map_err(&err)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Per-slot trace of one trial.
pub fn write_trace_csv(
    path: &Path,
    inst: &Instance,
    record: &TrialRecord,
    metrics: &TrialMetrics,
) -> Result<(), HarnessError> {
    let err = csv_err(path);
    let (n, m) = (inst.n_types, inst.n_servers);
    let families: Vec<&str> = inst.constraints.iter().map(|c| c.name.as_str()).collect();
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("arrivals_{i}")));
    for prefix in ["x", "reward"] {
        for i in 0..n {
            header.extend((0..m).map(|j| format!("{prefix}_{i}_{j}")));
        }
    }
    let has_queues = record.slots.first().is_some_and(|s| s.queues.is_some());
    for f in &families {
        if has_queues {
            header.extend((0..m).map(|j| format!("q_{f}_{j}")));
        }
        header.extend((0..m).map(|j| format!("{f}_violation_{j}")));
    }
    header.push("expected_reward".into());
    header.push("regret".into());
    w.write_record(&header).map_err(&err)?;

    for (t, slot) in record.slots.iter().enumerate() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(slot.arrivals.iter().map(u64::to_string));
        row.extend(slot.allocation.iter().map(u64::to_string));
        row.extend(slot.reward_sums.iter().map(|v| num(*v)));
        for k in 0..families.len() {
            if let Some(q) = &slot.queues {
                row.extend((0..m).map(|j| num(q.get(j, k))));
            }
            row.extend((0..m).map(|j| num(metrics.violation_signed[t][(j, k)])));
        }
        row.push(num(metrics.expected_reward[t]));
        row.push(num(metrics.regret[t]));
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, Serialize)]
struct LpReport<'a> {
    status: crate::fluid_lp::LpStatus,
    objective: f64,
    x_star: &'a Matrix<f64>,
    delta: Option<f64>,
    theorem: &'a BTreeMap<usize, TheoremParams>,
}

pub fn write_lp_json(path: &Path, ctx: &SweepContext) -> Result<(), HarnessError> {
    let report = LpReport {
        status: ctx.lp.status,
        objective: ctx.lp.objective,
        x_star: &ctx.lp.x_star,
        delta: ctx.delta,
        theorem: &ctx.theorem,
    };
    let text = serde_json::to_string_pretty(&report).expect("LP report serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub outcomes: Vec<CellOutcome>,
    pub aggregate_csv: PathBuf,
    pub trials_csv: Option<PathBuf>,
    pub lp_json: PathBuf,
}

pub fn family_names(inst: &Instance) -> Vec<String> {
    inst.constraints.iter().map(|c| c.name.clone()).collect()
}

/// Runs every cell of `config` and writes `aggregate.csv`, `lp.json` and,
/// when requested, `trials.csv` into the output directory.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutput, HarnessError> {
    config.validate()?;
    let ctx = SweepContext::new(config)?;
    let cells = expand_cells(config);
    let outcomes = with_threads(config.threads, || run_cells(config, &ctx, &cells, config.trials))?;
    write_outputs(config, &ctx, outcomes)
}

pub(crate) fn write_outputs(
    config: &ExperimentConfig,
    ctx: &SweepContext,
    outcomes: Vec<CellOutcome>,
) -> Result<SweepOutput, HarnessError> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let families = family_names(&ctx.instance);
    let aggregate_csv = dir.join("aggregate.csv");
    write_aggregate_csv(&aggregate_csv, &families, &outcomes)?;
    let trials_csv = if config.write_trials {
        let p = dir.join("trials.csv");
        write_trials_csv(&p, &families, ctx.instance.n_servers, &outcomes)?;
        Some(p)
    } else {
        None
    };
    let lp_json = dir.join("lp.json");
    write_lp_json(&lp_json, ctx)?;
    Ok(SweepOutput {
        outcomes,
        aggregate_csv,
        trials_csv,
        lp_json,
    })
}

/// Picks one cell out of a config for the `run` subcommand.
#[derive(Debug, Clone, Default)]
pub struct CellSelection {
    /// Algorithm label, e.g. `pond_ucb` or `etc`.
    pub algorithm: Option<String>,
    /// ε-mode label, e.g. `over_sqrt_t(0.5)`.
    pub epsilon_mode: Option<String>,
    pub horizon: Option<usize>,
}

pub fn select_cell(config: &ExperimentConfig, sel: &CellSelection) -> Result<Cell, HarnessError> {
    let algorithm = match &sel.algorithm {
        None => config.algorithms[0],
        Some(label) => *config
            .algorithms
            .iter()
            .find(|a| a.label() == *label)
            .ok_or_else(|| HarnessError::Config(vec![format!("no algorithm labelled {label}")]))?,
    };
    let epsilon_mode = if algorithm.is_pond() {
        Some(match &sel.epsilon_mode {
            None => config.epsilon_modes[0],
            Some(label) => *config
                .epsilon_modes
                .iter()
                .find(|m| m.to_string() == *label)
                .ok_or_else(|| {
                    HarnessError::Config(vec![format!("no epsilon mode labelled {label}")])
                })?,
        })
    } else {
        None
    };
    Ok(Cell {
        algorithm,
        epsilon_mode,
        horizon: sel.horizon.unwrap_or(config.horizons[0]),
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub outcome: CellOutcome,
    pub aggregate_csv: PathBuf,
    pub trace_csv: PathBuf,
}

/// Runs a single cell, writing its aggregate row and the per-slot trace of trial 0.
pub fn run_single(config: &ExperimentConfig, sel: &CellSelection) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let ctx = SweepContext::new(config)?;
    let cell = select_cell(config, sel)?;
    let outcome = with_threads(config.threads, || {
        run_cells(config, &ctx, std::slice::from_ref(&cell), config.trials)
    })?
    .remove(0);

    let params = resolve_params(config, &ctx, &cell).map_err(|e| HarnessError::Config(vec![e]))?;
    let seed = trial_seed(config.master_seed, cell.horizon, 0);
    let record = run_trial(&ctx.instance, cell.algorithm, params, cell.horizon, seed)?;
    let metrics = compute_metrics(&record, &ctx.instance.reward_means(), ctx.opt_per_slot())?;

    let out = write_outputs(config, &ctx, vec![outcome])?;
    let trace_csv = config.output_dir.join("trace.csv");
    write_trace_csv(&trace_csv, &ctx.instance, &record, &metrics)?;
    Ok(RunOutput {
        outcome: out.outcomes.into_iter().next().expect("one cell"),
        aggregate_csv: out.aggregate_csv,
        trace_csv,
    })
}
