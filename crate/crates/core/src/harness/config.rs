use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dispatch::PondParams;
use crate::fluid_lp::TheoremParams;
use crate::instance::{Instance, InstanceSpec};
use crate::learners::Learner;

/// Which algorithm a cell runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Pond {
        #[serde(default)]
        learner: Learner,
    },
    Etc,
    Uniform,
}

impl AlgorithmSpec {
    /// Whether the algorithm uses ε and V (and so expands over ε-modes).
    pub fn is_pond(self) -> bool {
        matches!(self, AlgorithmSpec::Pond { .. })
    }

    pub fn label(self) -> String {
        match self {
            AlgorithmSpec::Pond { learner } => format!("pond_{learner}"),
            AlgorithmSpec::Etc => "etc".into(),
            AlgorithmSpec::Uniform => "uniform".into(),
        }
    }
}

/// How ε is chosen for horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonMode {
    Zero,
    /// `ε = c / √T`.
    OverSqrtT(f64),
    TheoremAuto,
    Fixed(f64),
}

impl EpsilonMode {
    pub fn resolve(self, horizon: usize, theorem: Option<&TheoremParams>) -> Option<f64> {
        Some(match self {
            EpsilonMode::Zero => 0.0,
            EpsilonMode::OverSqrtT(c) => c / (horizon as f64).sqrt(),
            EpsilonMode::Fixed(v) => v,
            EpsilonMode::TheoremAuto => theorem?.epsilon,
        })
    }

    pub fn needs_theorem(self) -> bool {
        matches!(self, EpsilonMode::TheoremAuto)
    }
}

impl fmt::Display for EpsilonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonMode::Zero => f.write_str("zero"),
            EpsilonMode::OverSqrtT(c) => write!(f, "over_sqrt_t({c})"),
            EpsilonMode::TheoremAuto => f.write_str("theorem_auto"),
            EpsilonMode::Fixed(v) => write!(f, "fixed({v})"),
        }
    }
}

/// How V is chosen for horizon `T`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum VMode {
    /// `V = 2√T`.
    #[default]
    TwoSqrtT,
    TheoremAuto,
    Fixed(f64),
}

impl VMode {
    pub fn resolve(self, horizon: usize, theorem: Option<&TheoremParams>) -> Option<f64> {
        Some(match self {
            VMode::TwoSqrtT => 2.0 * (horizon as f64).sqrt(),
            VMode::Fixed(v) => v,
            VMode::TheoremAuto => theorem?.v,
        })
    }
}

fn default_epsilon_modes() -> Vec<EpsilonMode> {
    vec![EpsilonMode::Zero]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// An experiment: which algorithms to run, for how long, on what instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub trials: usize,
    pub horizons: Vec<usize>,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default = "default_epsilon_modes")]
    pub epsilon_modes: Vec<EpsilonMode>,
    #[serde(default)]
    pub v_mode: VMode,
    pub instance: InstanceSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Also write one row per trial to `trials.csv`.
    #[serde(default)]
    pub write_trials: bool,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub replay: ReplaySettings,
}

/// How the logged dataset was collected, as declared by the user.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoggingPolicy {
    #[default]
    UniformOverArms,
    /// Anything else. Replay refuses such data.
    NonUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySettings {
    #[serde(default)]
    pub logging_policy: LoggingPolicy,
    /// Give up after this many draws per requested slot.
    #[serde(default = "default_draws_per_slot")]
    pub max_draws_per_slot: usize,
}

fn default_draws_per_slot() -> usize {
    1000
}

impl Default for ReplaySettings {
    fn default() -> Self {
        Self {
            logging_policy: LoggingPolicy::default(),
            max_draws_per_slot: default_draws_per_slot(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text).map_err(HarnessError::Parse)?;
        config.validate()?;
        Ok(config)
    }

    pub fn build_instance(&self) -> Result<Instance, HarnessError> {
        Ok(self.instance.build()?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems = Vec::new();
        if self.trials == 0 {
            problems.push("trials must be at least 1".to_string());
        }
        if self.horizons.is_empty() {
            problems.push("horizons must not be empty".to_string());
        }
        if self.horizons.contains(&0) {
            problems.push("horizons must be positive".to_string());
        }
        if self.algorithms.is_empty() {
            problems.push("algorithms must not be empty".to_string());
        }
        if self.algorithms.iter().any(|a| a.is_pond()) && self.epsilon_modes.is_empty() {
            problems.push("POND needs at least one epsilon mode".to_string());
        }
        for mode in &self.epsilon_modes {
            if let EpsilonMode::OverSqrtT(v) | EpsilonMode::Fixed(v) = mode {
                if !(v.is_finite() && *v >= 0.0) {
                    problems.push(format!("epsilon mode {mode} must be non-negative"));
                }
            }
        }
        if let VMode::Fixed(v) = self.v_mode {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("fixed V must be positive, got {v}"));
            }
        }
        if self.replay.max_draws_per_slot == 0 {
            problems.push("replay.max_draws_per_slot must be at least 1".to_string());
        }
        if self.threads == Some(0) {
            problems.push("threads must be at least 1".to_string());
        }
        if !problems.is_empty() {
            return Err(HarnessError::Config(problems));
        }
        self.build_instance()?;
        Ok(())
    }

    /// POND parameters for one horizon, or `None` when a theorem-derived
    /// value was requested but `theorem` is unavailable.
    pub fn pond_params(
        &self,
        learner: Learner,
        epsilon_mode: EpsilonMode,
        horizon: usize,
        theorem: Option<&TheoremParams>,
    ) -> Option<PondParams> {
        Some(PondParams {
            v: self.v_mode.resolve(horizon, theorem)?,
            epsilon: epsilon_mode.resolve(horizon, theorem)?,
            learner,
        })
    }
}

/// Reads and validates an experiment config (strict schema: unknown keys are errors).
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_json(&text)
}
