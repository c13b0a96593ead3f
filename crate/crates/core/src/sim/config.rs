use serde::{Deserialize, Serialize};

use super::SimError;
use crate::adversary::AdversarySpec;
use crate::model::NodeId;
use crate::params::{check_constraints, Params};

/// Either a fixed count or an inclusive range sampled per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Count {
    Fixed(u32),
    Range([u32; 2]),
}

impl Count {
    pub fn bounds(self) -> (u32, u32) {
        match self {
            Count::Fixed(n) => (n, n),
            Count::Range([a, b]) => (a.min(b), a.max(b)),
        }
    }
}

impl Default for Count {
    fn default() -> Self {
        Count::Fixed(0)
    }
}

/// Message delay law. Values are fractions of `d`; every sample lies in
/// `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DelayModel {
    Uniform {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Constant {
        #[serde(default = "one")]
        fraction: f64,
    },
    Bimodal {
        p_fast: f64,
        fast_max: f64,
        slow_min: f64,
    },
    /// First matching rule wins; unmatched pairs use `fallback`.
    Scripted {
        rules: Vec<DelayRule>,
        fallback: Box<DelayModel>,
    },
}

fn default_epsilon() -> f64 {
    1e-6
}

fn one() -> f64 {
    1.0
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Uniform { epsilon: default_epsilon() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRule {
    #[serde(default)]
    pub from: Option<NodeId>,
    #[serde(default)]
    pub to: Option<NodeId>,
    pub delay: f64,
}

impl DelayModel {
    fn validate(&self) -> Result<(), SimError> {
        let unit = |x: f64, what: &str| {
            if x > 0.0 && x <= 1.0 {
                Ok(())
            } else {
                Err(SimError::Config(format!("{what} must lie in (0, 1], got {x}")))
            }
        };
        match self {
            DelayModel::Uniform { epsilon } => unit(*epsilon, "epsilon"),
            DelayModel::Constant { fraction } => unit(*fraction, "constant delay"),
            DelayModel::Bimodal { p_fast, fast_max, slow_min } => {
                if !(0.0..=1.0).contains(p_fast) {
                    return Err(SimError::Config("p_fast must lie in [0, 1]".into()));
                }
                unit(*fast_max, "fast_max")?;
                unit(*slow_min, "slow_min")
            }
            DelayModel::Scripted { rules, fallback } => {
                for r in rules {
                    unit(r.delay, "scripted delay")?;
                }
                fallback.validate()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChurnAction {
    Enter,
    Leave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedChurn {
    /// In units of `d`.
    pub at: f64,
    pub action: ChurnAction,
    /// The leaving server; entrants always get a fresh id.
    #[serde(default)]
    pub server: Option<NodeId>,
}

/// Server churn. Every proposal still passes sliding-window admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChurnPattern {
    #[default]
    None,
    /// Proposes an event `proposals_per_d` times per `d`, keeping the
    /// server count near its initial value.
    Rate {
        #[serde(default = "default_proposals")]
        proposals_per_d: f64,
    },
    Scripted {
        events: Vec<ScriptedChurn>,
    },
}

fn default_proposals() -> f64 {
    4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAction {
    Enter,
    Read,
    Write(u64),
    Leave,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// In units of `d`.
    pub at: f64,
    pub client: String,
    pub action: ScriptAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Workload {
    Random {
        ops: u32,
        #[serde(default = "half")]
        read_fraction: f64,
        /// Idle time between a response and the next invocation, in `d`.
        #[serde(default = "half")]
        max_gap: f64,
        /// Clients entering during the run.
        #[serde(default)]
        entrants: u32,
        #[serde(default)]
        crash_probability: f64,
        #[serde(default)]
        leave_probability: f64,
    },
    /// Reads and writes wait until their client is joined and idle.
    Scripted { initial: Vec<String>, steps: Vec<ScriptStep> },
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientVariant {
    #[default]
    Abcc,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    Full,
    /// Lifecycle, invocations, responses and write-phase notes only.
    #[default]
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: Params<f64>,
    pub initial_servers: u32,
    #[serde(default)]
    pub initial_clients: Count,
    /// In units of `d`.
    pub duration: f64,
    #[serde(default)]
    pub churn: ChurnPattern,
    pub workload: Workload,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delay: DelayModel,
    #[serde(default)]
    pub client_variant: ClientVariant,
    /// Multiplies the churn rate used for admission; above 1 breaks the
    /// sliding-window bound on purpose.
    #[serde(default = "one")]
    pub admission_scale: f64,
    #[serde(default)]
    pub override_feasibility: bool,
    #[serde(default)]
    pub trace_level: TraceLevel,
    /// End the run once the workload is exhausted and nothing is pending.
    #[serde(default = "yes")]
    pub stop_when_idle: bool,
}

fn yes() -> bool {
    true
}

impl SimConfig {
    /// Whether any node can enter after time 0.
    pub fn has_entrants(&self) -> bool {
        let churn = match &self.churn {
            ChurnPattern::None => false,
            ChurnPattern::Rate { .. } => self.params.alpha > 0.0,
            ChurnPattern::Scripted { events } => events.iter().any(|e| e.action == ChurnAction::Enter),
        };
        let clients = match &self.workload {
            Workload::Random { entrants, .. } => *entrants > 0,
            Workload::Scripted { steps, .. } => steps.iter().any(|s| s.action == ScriptAction::Enter),
        };
        churn || clients || self.adversary.strategy.enters_late()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if (self.initial_servers as u64) < self.params.ns_min {
            return Err(SimError::Config(format!(
                "initial_servers {} is below ns_min {}",
                self.initial_servers, self.params.ns_min
            )));
        }
        if self.duration.is_nan() || self.duration <= 0.0 {
            return Err(SimError::Config("duration must be positive".into()));
        }
        let corrupt = self.adversary.count(self.params.f);
        if corrupt as u64 > self.params.f {
            return Err(SimError::Config(format!("{corrupt} corrupt servers exceed f = {}", self.params.f)));
        }
        if !self.adversary.strategy.enters_late() && corrupt > self.initial_servers {
            return Err(SimError::Config("more corrupt servers than initial servers".into()));
        }
        self.delay.validate()?;
        if self.params.gamma.is_none() && self.client_variant == ClientVariant::Abcc && self.has_entrants() {
            return Err(SimError::Config("gamma must be set when servers or clients enter".into()));
        }
        if self.admission_scale <= 0.0 {
            return Err(SimError::Config("admission_scale must be positive".into()));
        }
        if self.admission_scale > 1.0 && !self.override_feasibility {
            return Err(SimError::Config("admission_scale above 1 requires override_feasibility".into()));
        }
        if !self.override_feasibility && self.client_variant == ClientVariant::Abcc {
            let report = check_constraints(&self.params);
            if !report.feasible {
                let failing: Vec<String> = report.failing().map(|r| format!("({})", r.index)).collect();
                return Err(SimError::Infeasible(failing.join(", ")));
            }
        }
        if self.client_variant == ClientVariant::Uniform && !self.override_feasibility {
            // The uniform client ignores gamma and beta; only the environment matters.
            let env = Params { gamma: None, beta: None, ..self.params.clone() };
            let report = check_constraints(&env);
            if !report.feasible {
                return Err(SimError::Infeasible("environment".into()));
            }
        }
        Ok(())
    }
}
