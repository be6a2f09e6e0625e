//! Problem data model: job types, servers, constraint families and the
//! distributions that generate arrivals, rewards, weights and requirements.
//!
//! An [`Instance`] is immutable once built and can be shared freely between
//! concurrently running trials.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// A scalar distribution. Which tags are legal depends on the role the model
/// plays (see [`Role`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    Deterministic(f64),
    Bernoulli(f64),
    /// Support `{0, 1, 2, ...}` with success probability `1 / (1 + mean)`.
    Geometric(f64),
    /// Support `{1, 2, 3, ...}` with success probability `1 / mean`; needs `mean >= 1`.
    ShiftedGeometric(f64),
    /// Requirement only: realizes `-d * (total arrivals in the slot)`.
    NegatedArrivalFraction(f64),
    /// Uniform draw from the listed values.
    Empirical(Vec<f64>),
}

pub type ArrivalModel = Dist;
pub type RewardModel = Dist;
pub type WeightModel = Dist;
pub type RequirementModel = Dist;

/// The part a distribution plays in an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Arrival,
    Reward,
    Weight,
    Requirement,
}

impl Dist {
    /// Mean of the distribution. `None` for [`Dist::NegatedArrivalFraction`],
    /// whose mean depends on the arrival means.
    pub fn mean(&self) -> Option<f64> {
        match self {
            Dist::Deterministic(v)
            | Dist::Bernoulli(v)
            | Dist::Geometric(v)
            | Dist::ShiftedGeometric(v) => Some(*v),
            Dist::NegatedArrivalFraction(_) => None,
            Dist::Empirical(values) => {
                Some(values.iter().sum::<f64>() / values.len().max(1) as f64)
            }
        }
    }

    /// Mean, with arrival-dependent requirements resolved against `total_arrival_mean`.
    pub fn mean_given_arrivals(&self, total_arrival_mean: f64) -> f64 {
        match self {
            Dist::NegatedArrivalFraction(d) => -d * total_arrival_mean,
            other => other.mean().unwrap_or(0.0),
        }
    }

    /// Closed support interval `[lo, hi]`; `hi` is infinite for geometric
    /// models. Arrival-dependent models return `None`.
    pub fn support(&self) -> Option<(f64, f64)> {
        match self {
            Dist::Deterministic(v) => Some((*v, *v)),
            Dist::Bernoulli(p) => Some((
                if *p < 1.0 { 0.0 } else { 1.0 },
                if *p > 0.0 { 1.0 } else { 0.0 },
            )),
            Dist::Geometric(_) => Some((0.0, f64::INFINITY)),
            Dist::ShiftedGeometric(m) => Some((1.0, if *m > 1.0 { f64::INFINITY } else { 1.0 })),
            Dist::NegatedArrivalFraction(_) => None,
            Dist::Empirical(values) => Some((
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Dist::Deterministic(_) => "deterministic",
            Dist::Bernoulli(_) => "bernoulli",
            Dist::Geometric(_) => "geometric",
            Dist::ShiftedGeometric(_) => "shifted_geometric",
            Dist::NegatedArrivalFraction(_) => "negated_arrival_fraction",
            Dist::Empirical(_) => "empirical",
        }
    }

    /// Structural checks for this model in `role`. Problems are appended to `out`
    /// prefixed with `what`.
    fn check(&self, role: Role, what: &str, out: &mut Vec<String>) {
        let allowed = match self {
            Dist::Geometric(_) | Dist::ShiftedGeometric(_) => role == Role::Arrival,
            Dist::NegatedArrivalFraction(_) => role == Role::Requirement,
            _ => true,
        };
        if !allowed {
            out.push(format!("{what}: {} models are not allowed here", self.tag()));
            return;
        }
        match self {
            Dist::Deterministic(v) => {
                if !v.is_finite() {
                    out.push(format!("{what}: deterministic value {v} is not finite"));
                } else if role == Role::Arrival && (*v < 0.0 || v.fract() != 0.0) {
                    out.push(format!(
                        "{what}: deterministic arrivals must be a non-negative integer, got {v}"
                    ));
                }
            }
            Dist::Bernoulli(p) => {
                if !(0.0..=1.0).contains(p) {
                    out.push(format!("{what}: bernoulli mean {p} outside [0, 1]"));
                }
            }
            Dist::Geometric(m) => {
                if !(m.is_finite() && *m > 0.0) {
                    out.push(format!("{what}: geometric mean must be positive, got {m}"));
                }
            }
            Dist::ShiftedGeometric(m) => {
                if !(m.is_finite() && *m >= 1.0) {
                    out.push(format!("{what}: shifted geometric mean must be at least 1, got {m}"));
                }
            }
            Dist::NegatedArrivalFraction(d) => {
                if !(0.0..=1.0).contains(d) {
                    out.push(format!("{what}: fraction {d} outside [0, 1]"));
                }
            }
            Dist::Empirical(values) => {
                if values.is_empty() {
                    out.push(format!("{what}: empirical model has no values"));
                } else if values.iter().any(|v| !v.is_finite()) {
                    out.push(format!("{what}: empirical values must be finite"));
                } else if role == Role::Arrival
                    && values.iter().any(|v| *v < 0.0 || v.fract() != 0.0)
                {
                    out.push(format!(
                        "{what}: empirical arrivals must be non-negative integers"
                    ));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Capacity,
    Fairness,
    Resource,
    Custom,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintKind::Capacity => "capacity",
            ConstraintKind::Fairness => "fairness",
            ConstraintKind::Resource => "resource",
            ConstraintKind::Custom => "custom",
        })
    }
}

/// Sign shared by every weight realization of one constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    AllNonNegative,
    AllNonPositive,
}

impl Sign {
    pub fn admits(self, value: f64) -> bool {
        match self {
            Sign::AllNonNegative => value >= 0.0,
            Sign::AllNonPositive => value <= 0.0,
        }
    }
}

/// One constraint family `k`: `sum_i w[i][j] x[i][j] <= rho[j]` on average, for every server `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintSpec {
    pub name: String,
    pub kind: ConstraintKind,
    /// `N x M` weight models.
    pub weights: Matrix<WeightModel>,
    /// One requirement model per server.
    pub requirements: Vec<RequirementModel>,
    pub sign: Sign,
}

/// Parameters accepted by [`build_constraint`]. Which fields are required
/// depends on `kind`:
///
/// * capacity: `service` (one model per server)
/// * fairness: `fractions` (one `d_j` per server)
/// * resource: `weights` and `requirements`
/// * custom: `weights`, `requirements` and `sign`
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintParams {
    #[serde(default)]
    pub name: Option<String>,
    pub kind: Option<ConstraintKind>,
    #[serde(default)]
    pub service: Option<Vec<Dist>>,
    #[serde(default)]
    pub fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub weights: Option<Matrix<Dist>>,
    #[serde(default)]
    pub requirements: Option<Vec<Dist>>,
    #[serde(default)]
    pub sign: Option<Sign>,
}

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("{kind} constraint is missing `{field}`")]
    MissingField { kind: ConstraintKind, field: &'static str },
    #[error("constraint parameters do not declare a kind")]
    MissingKind,
    #[error("{kind} constraint does not accept `{field}`")]
    UnexpectedField { kind: ConstraintKind, field: &'static str },
    #[error("fairness fraction d[{server}] = {value} is outside [0, 1]")]
    FractionOutOfRange { server: usize, value: f64 },
    #[error("invalid instance: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Turns constraint parameters into a [`ConstraintSpec`] for an instance with
/// `n_types` job types.
pub fn build_constraint(
    n_types: usize,
    params: &ConstraintParams,
) -> Result<ConstraintSpec, InstanceError> {
    let kind = params.kind.ok_or(InstanceError::MissingKind)?;
    let reject = |present: bool, field: &'static str| {
        if present {
            Err(InstanceError::UnexpectedField { kind, field })
        } else {
            Ok(())
        }
    };
    let missing = |field: &'static str| InstanceError::MissingField { kind, field };
    let name = params.name.clone().unwrap_or_else(|| kind.to_string());

    match kind {
        ConstraintKind::Capacity => {
            reject(params.fractions.is_some(), "fractions")?;
            reject(params.weights.is_some(), "weights")?;
            reject(params.requirements.is_some(), "requirements")?;
            reject(params.sign.is_some(), "sign")?;
            let service = params.service.clone().ok_or_else(|| missing("service"))?;
            Ok(ConstraintSpec {
                name,
                kind,
                weights: Matrix::filled(n_types, service.len(), Dist::Deterministic(1.0)),
                requirements: service,
                sign: Sign::AllNonNegative,
            })
        }
        ConstraintKind::Fairness => {
            reject(params.service.is_some(), "service")?;
            reject(params.weights.is_some(), "weights")?;
            reject(params.requirements.is_some(), "requirements")?;
            reject(params.sign.is_some(), "sign")?;
            let fractions = params.fractions.as_ref().ok_or_else(|| missing("fractions"))?;
            if let Some((server, &value)) = fractions
                .iter()
                .enumerate()
                .find(|(_, d)| !(0.0..=1.0).contains(*d))
            {
                return Err(InstanceError::FractionOutOfRange { server, value });
            }
            Ok(ConstraintSpec {
                name,
                kind,
                weights: Matrix::filled(n_types, fractions.len(), Dist::Deterministic(-1.0)),
                requirements: fractions
                    .iter()
                    .map(|&d| Dist::NegatedArrivalFraction(d))
                    .collect(),
                sign: Sign::AllNonPositive,
            })
        }
        ConstraintKind::Resource | ConstraintKind::Custom => {
            reject(params.service.is_some(), "service")?;
            reject(params.fractions.is_some(), "fractions")?;
            let weights = params.weights.clone().ok_or_else(|| missing("weights"))?;
            let requirements = params
                .requirements
                .clone()
                .ok_or_else(|| missing("requirements"))?;
            let sign = if kind == ConstraintKind::Resource {
                reject(params.sign.is_some(), "sign")?;
                Sign::AllNonNegative
            } else {
                params.sign.ok_or_else(|| missing("sign"))?
            };
            Ok(ConstraintSpec {
                name,
                kind,
                weights,
                requirements,
                sign,
            })
        }
    }
}

/// Full generative description of a dispatching problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    pub n_types: usize,
    pub n_servers: usize,
    pub arrivals: Vec<ArrivalModel>,
    /// `N x M` reward models; their means are the unknown `r[i][j]`.
    pub rewards: Matrix<RewardModel>,
    pub constraints: Vec<ConstraintSpec>,
    /// Nominal per-type arrival bound.
    pub c_lambda: f64,
    /// Nominal bound on weight and requirement magnitudes.
    pub c_u: f64,
}

impl Instance {
    /// Assembles an instance and runs the structural checks of [`validate_instance`].
    pub fn new(
        arrivals: Vec<ArrivalModel>,
        rewards: Matrix<RewardModel>,
        constraints: Vec<ConstraintSpec>,
        c_lambda: f64,
        c_u: f64,
    ) -> Result<Self, InstanceError> {
        let inst = Self {
            n_types: arrivals.len(),
            n_servers: rewards.cols(),
            arrivals,
            rewards,
            constraints,
            c_lambda,
            c_u,
        };
        inst.structural_problems().into_result()?;
        Ok(inst)
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn arrival_means(&self) -> Vec<f64> {
        self.arrivals
            .iter()
            .map(|a| a.mean().unwrap_or(0.0))
            .collect()
    }

    pub fn reward_means(&self) -> Matrix<f64> {
        self.rewards.map(|r| r.mean().unwrap_or(0.0))
    }

    fn structural_problems(&self) -> Problems {
        let mut out = Vec::new();
        let (n, m) = (self.n_types, self.n_servers);
        if n == 0 {
            out.push("instance needs at least one job type".to_string());
        }
        if m == 0 {
            out.push("instance needs at least one server".to_string());
        }
        if self.arrivals.len() != n {
            out.push(format!(
                "{} arrival models for {n} job types",
                self.arrivals.len()
            ));
        }
        if self.rewards.shape() != (n, m) {
            out.push(format!(
                "reward matrix is {:?}, expected ({n}, {m})",
                self.rewards.shape()
            ));
        }
        for (name, value) in [("c_lambda", self.c_lambda), ("c_u", self.c_u)] {
            if !(value.is_finite() && value > 0.0) {
                out.push(format!("{name} must be positive, got {value}"));
            }
        }

        for (i, a) in self.arrivals.iter().enumerate() {
            let what = format!("arrivals[{i}]");
            let before = out.len();
            a.check(Role::Arrival, &what, &mut out);
            if out.len() == before {
                let mean = a.mean().unwrap_or(0.0);
                if mean <= 0.0 {
                    out.push(format!("{what}: arrival mean must be positive, got {mean}"));
                } else if mean > self.c_lambda {
                    out.push(format!(
                        "{what}: arrival mean {mean} exceeds c_lambda = {}",
                        self.c_lambda
                    ));
                }
            }
        }

        for ((i, j), r) in self.rewards.indexed() {
            let what = format!("rewards[{i}][{j}]");
            let before = out.len();
            r.check(Role::Reward, &what, &mut out);
            if out.len() == before {
                let mean = r.mean().unwrap_or(0.0);
                if !(0.0..=1.0).contains(&mean) {
                    out.push(format!(
                        "{what}: reward mean r[{i}][{j}] = {mean} outside [0, 1]"
                    ));
                }
            }
        }

        for (k, c) in self.constraints.iter().enumerate() {
            let label = format!("constraints[{k}] ({})", c.name);
            if c.weights.shape() != (n, m) {
                out.push(format!(
                    "{label}: weight matrix is {:?}, expected ({n}, {m})",
                    c.weights.shape()
                ));
            }
            if c.requirements.len() != m {
                out.push(format!(
                    "{label}: {} requirement models for {m} servers",
                    c.requirements.len()
                ));
            }
            for ((i, j), w) in c.weights.indexed() {
                let what = format!("{label} weight[{i}][{j}]");
                let before = out.len();
                w.check(Role::Weight, &what, &mut out);
                if out.len() == before {
                    if let Some((lo, hi)) = w.support() {
                        if !(c.sign.admits(lo) && c.sign.admits(hi)) {
                            out.push(format!(
                                "{what}: support [{lo}, {hi}] violates declared sign {:?}",
                                c.sign
                            ));
                        }
                    }
                }
            }
            for (j, rho) in c.requirements.iter().enumerate() {
                rho.check(Role::Requirement, &format!("{label} requirement[{j}]"), &mut out);
            }
        }
        Problems(out)
    }
}

struct Problems(Vec<String>);

impl Problems {
    fn into_result(self) -> Result<(), InstanceError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(InstanceError::Invalid(self.0))
        }
    }
}

/// Serializable form of an instance, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub arrivals: Vec<ArrivalModel>,
    pub rewards: Matrix<RewardModel>,
    #[serde(default)]
    pub constraints: Vec<ConstraintParams>,
    pub c_lambda: f64,
    pub c_u: f64,
}

impl InstanceSpec {
    pub fn build(&self) -> Result<Instance, InstanceError> {
        let n_types = self.arrivals.len();
        let mut constraints = self
            .constraints
            .iter()
            .map(|p| build_constraint(n_types, p))
            .collect::<Result<Vec<_>, _>>()?;
        dedup_names(&mut constraints);
        Instance::new(
            self.arrivals.clone(),
            self.rewards.clone(),
            constraints,
            self.c_lambda,
            self.c_u,
        )
    }
}

// Family names become CSV column prefixes, so they must be unique.
fn dedup_names(constraints: &mut [ConstraintSpec]) {
    for k in 1..constraints.len() {
        let name = constraints[k].name.clone();
        if constraints[..k].iter().any(|c| c.name == name) {
            constraints[k].name = format!("{name}_{k}");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Assumption {
    /// Rewards lie in `[0, 1]`.
    RewardRange,
    /// Arrivals bounded by `c_lambda`.
    ArrivalBound,
    /// Weights and requirements bounded by `c_u`.
    ConstraintBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotCheckable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub assumption: Assumption,
    pub status: CheckStatus,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn status(&self, assumption: Assumption) -> Option<CheckStatus> {
        self.checks
            .iter()
            .find(|c| c.assumption == assumption)
            .map(|c| c.status)
    }
}

/// Checks the structure of `inst` (hard failures) and then reports which of
/// the boundedness assumptions hold, fail, or cannot be verified.
pub fn validate_instance(inst: &Instance) -> Result<ValidationReport, InstanceError> {
    inst.structural_problems().into_result()?;

    let mut checks = Vec::with_capacity(3);

    let out_of_range: Vec<String> = inst
        .rewards
        .indexed()
        .filter_map(|((i, j), r)| {
            let (lo, hi) = r.support()?;
            (lo < 0.0 || hi > 1.0).then(|| format!("rewards[{i}][{j}] support [{lo}, {hi}]"))
        })
        .collect();
    checks.push(if out_of_range.is_empty() {
        AssumptionCheck {
            assumption: Assumption::RewardRange,
            status: CheckStatus::Pass,
            note: "all reward supports within [0, 1]".into(),
        }
    } else {
        AssumptionCheck {
            assumption: Assumption::RewardRange,
            status: CheckStatus::Fail,
            note: out_of_range.join("; "),
        }
    });

    // Largest possible per-type arrival; infinite for unbounded models.
    let arrival_hi: Vec<f64> = inst
        .arrivals
        .iter()
        .map(|a| a.support().map_or(f64::INFINITY, |(_, hi)| hi))
        .collect();
    let unbounded: Vec<usize> = (0..inst.n_types)
        .filter(|&i| arrival_hi[i].is_infinite())
        .collect();
    let too_large: Vec<String> = (0..inst.n_types)
        .filter(|&i| arrival_hi[i].is_finite() && arrival_hi[i] > inst.c_lambda)
        .map(|i| format!("arrivals[{i}] reaches {}", arrival_hi[i]))
        .collect();
    checks.push(AssumptionCheck {
        assumption: Assumption::ArrivalBound,
        status: if !too_large.is_empty() {
            CheckStatus::Fail
        } else if !unbounded.is_empty() {
            CheckStatus::NotCheckable
        } else {
            CheckStatus::Pass
        },
        note: if !too_large.is_empty() {
            too_large.join("; ")
        } else if !unbounded.is_empty() {
            format!("arrival models {unbounded:?} have unbounded support")
        } else {
            format!("all arrivals bounded by c_lambda = {}", inst.c_lambda)
        },
    });

    let total_arrival_hi: f64 = arrival_hi.iter().sum();
    let mut violations = Vec::new();
    let mut excluded = Vec::new();
    for (k, c) in inst.constraints.iter().enumerate() {
        for ((i, j), w) in c.weights.indexed() {
            if let Some((lo, hi)) = w.support() {
                if lo.abs().max(hi.abs()) > inst.c_u {
                    violations.push(format!("{} weight[{i}][{j}]", c.name));
                }
            }
        }
        for (j, rho) in c.requirements.iter().enumerate() {
            let bound = match rho {
                Dist::NegatedArrivalFraction(d) => d * total_arrival_hi,
                other => other
                    .support()
                    .map_or(f64::INFINITY, |(lo, hi)| lo.abs().max(hi.abs())),
            };
            if bound.is_infinite() {
                excluded.push(format!("constraints[{k}] requirement[{j}]"));
            } else if bound > inst.c_u {
                violations.push(format!("{} requirement[{j}]", c.name));
            }
        }
    }
    checks.push(AssumptionCheck {
        assumption: Assumption::ConstraintBound,
        status: if !violations.is_empty() {
            CheckStatus::Fail
        } else if !excluded.is_empty() {
            CheckStatus::NotCheckable
        } else {
            CheckStatus::Pass
        },
        note: if !violations.is_empty() {
            format!("exceed c_u = {}: {}", inst.c_u, violations.join(", "))
        } else if !excluded.is_empty() {
            format!(
                "bounded models within c_u = {}; unbounded models excluded: {}",
                inst.c_u,
                excluded.join(", ")
            )
        } else {
            format!("all weights and requirements bounded by c_u = {}", inst.c_u)
        },
    });

    Ok(ValidationReport { checks })
}
