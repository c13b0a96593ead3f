//! Scenario files and seeded batches.

use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::checker::{check_trace, AuditKind, Verdict};
use crate::sim::{run, ClientVariant, SimConfig, SimError, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Linearizability,
    Liveness,
    Audit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    #[default]
    Pass,
    Violation(ViolationKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(alias = "sim_config")]
    pub sim: SimConfig,
    #[serde(default)]
    pub expected: Expected,
    #[serde(default = "one")]
    pub repeat: u32,
}

fn one() -> u32 {
    1
}

impl Scenario {
    pub fn from_str(text: &str, toml_format: bool) -> Result<Scenario, SimError> {
        let s: Scenario = if toml_format {
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?
        } else {
            serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?
        };
        s.validate()?;
        Ok(s)
    }

    /// Reads a `.toml` or `.json` scenario.
    pub fn load(path: &Path) -> Result<Scenario, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let toml_format = path.extension().is_some_and(|e| e == "toml");
        Scenario::from_str(&text, toml_format)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.repeat == 0 {
            return Err(SimError::Config("repeat must be at least 1".into()));
        }
        if matches!(self.expected, Expected::Violation(_))
            && !self.sim.override_feasibility
            && self.sim.client_variant != ClientVariant::Uniform
        {
            return Err(SimError::Config(
                "a scenario expecting a violation must override feasibility or use the uniform client".into(),
            ));
        }
        Ok(())
    }

    /// Config of run `i`: seed `base + i`.
    pub fn config_for(&self, i: u32) -> SimConfig {
        let mut cfg = self.sim.clone();
        cfg.seed = self.sim.seed.wrapping_add(i as u64);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub exit_code: i32,
    pub linearizable: bool,
    pub live: bool,
    pub failing_audits: Vec<AuditKind>,
    pub ops: usize,
    pub completed: usize,
    pub max_join: Option<f64>,
    pub max_op: Option<f64>,
    pub churn_events: u64,
    pub digest: String,
}

impl RunSummary {
    pub fn new(seed: u64, trace: &Trace, churn_events: u64, v: &Verdict) -> Self {
        RunSummary {
            seed,
            exit_code: v.exit_code(),
            linearizable: v.linearizable,
            live: v.live(),
            failing_audits: v.audits.failing().map(|c| c.kind).collect(),
            ops: v.ops,
            completed: v.completed,
            max_join: v.liveness.max_join,
            max_op: v.liveness.max_op,
            churn_events,
            digest: trace.footer.digest.clone(),
        }
    }

    pub fn shows(&self, kind: ViolationKind) -> bool {
        match kind {
            ViolationKind::Linearizability => !self.linearizable,
            ViolationKind::Liveness => !self.live,
            ViolationKind::Audit => !self.failing_audits.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub name: String,
    pub expected: Expected,
    pub runs: Vec<RunSummary>,
    pub linearizable_runs: usize,
    pub live_runs: usize,
    pub audit_flagged_runs: usize,
    pub max_join: Option<f64>,
    pub max_op: Option<f64>,
    /// Pass: every run clean. Violation: at least one run shows it.
    pub meets_expectation: bool,
}

impl BatchReport {
    pub fn from_runs(name: &str, expected: Expected, runs: Vec<RunSummary>) -> Self {
        let meets_expectation = match expected {
            Expected::Pass => runs.iter().all(|r| r.exit_code == 0),
            Expected::Violation(kind) => runs.iter().any(|r| r.shows(kind)),
        };
        BatchReport {
            name: name.to_string(),
            expected,
            linearizable_runs: runs.iter().filter(|r| r.linearizable).count(),
            live_runs: runs.iter().filter(|r| r.live).count(),
            audit_flagged_runs: runs.iter().filter(|r| !r.failing_audits.is_empty()).count(),
            max_join: runs.iter().filter_map(|r| r.max_join).reduce(f64::max),
            max_op: runs.iter().filter_map(|r| r.max_op).reduce(f64::max),
            meets_expectation,
            runs,
        }
    }

    pub fn summary(&self) -> String {
        let n = self.runs.len();
        let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        format!(
            "{}: {}/{n} linearizable, {}/{n} live, {}/{n} audit-flagged, max join {} d, max op {} d, expected {:?}: {}",
            self.name,
            self.linearizable_runs,
            self.live_runs,
            self.audit_flagged_runs,
            fmt(self.max_join),
            fmt(self.max_op),
            self.expected,
            if self.meets_expectation { "met" } else { "NOT met" }
        )
    }
}

/// Runs and checks one config.
pub fn run_and_check(cfg: &SimConfig) -> Result<(Trace, RunSummary, Verdict), SimError> {
    let out = run(cfg)?;
    let verdict = check_trace(&out.trace);
    let summary = RunSummary::new(cfg.seed, &out.trace, out.stats.churn_events, &verdict);
    Ok((out.trace, summary, verdict))
}

/// Runs every repetition of a scenario on up to `threads` workers, calling
/// `each` after each run. Results are ordered by run index either way.
pub fn run_scenario_with<F>(s: &Scenario, threads: usize, each: F) -> Result<BatchReport, SimError>
where
    F: Fn(u32, &Trace, &RunSummary) + Sync,
{
    s.validate()?;
    let n = s.repeat;
    let threads = threads.clamp(1, n as usize);
    let next = AtomicU32::new(0);
    let slots: Mutex<Vec<Option<Result<RunSummary, SimError>>>> = Mutex::new(vec![None; n as usize]);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= n {
            break;
        }
        let result = run_and_check(&s.config_for(i)).map(|(trace, summary, _)| {
            each(i, &trace, &summary);
            summary
        });
        let failed = result.is_err();
        slots.lock().expect("no panics while held")[i as usize] = Some(result);
        if failed {
            next.store(n, Ordering::Relaxed);
        }
    };
    if threads == 1 {
        work();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(work);
            }
        });
    }
    let runs = slots.into_inner().expect("workers finished").into_iter().flatten().collect::<Result<Vec<_>, _>>()?;
    Ok(BatchReport::from_runs(&s.name, s.expected, runs))
}

/// Worker count for batches: the machine's parallelism.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn run_scenario(s: &Scenario) -> Result<BatchReport, SimError> {
    run_scenario_with(s, default_threads(), |_, _, _| {})
}
