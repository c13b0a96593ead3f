//! A deterministic schedule on which a client with fixed thresholds reads a
//! stale value.
//!
//! A writer completes `v` then `v'`. One corrupt server freezes its log
//! between the two writes. A reader that enters afterwards has fast links to
//! that server only, so a client that trusts the first echo and the first
//! reply returns `v`.

use serde::{Deserialize, Serialize};

use crate::adversary::{AdversarySpec, Strategy};
use crate::checker::{check_trace, Verdict, Violation};
use crate::model::NodeId;
use crate::params::Params;
use crate::sim::{
    run, ChurnPattern, ClientVariant, Count, DelayModel, DelayRule, ScriptAction, ScriptStep, SimConfig, SimError,
    Trace, TraceLevel, Workload,
};
use crate::Params64;

pub const FIRST_VALUE: u64 = 1;
pub const SECOND_VALUE: u64 = 2;

fn params() -> Params64 {
    Params { d: 1.0, alpha: 0.01, f: 1, ns_min: 10, gamma: Some(0.82), beta: Some(0.84) }
}

fn step(at: f64, client: &str, action: ScriptAction) -> ScriptStep {
    ScriptStep { at, client: client.to_string(), action }
}

/// The scripted run. `corrupt` puts a stale-replay server in place.
pub fn schedule(variant: ClientVariant, corrupt: bool) -> SimConfig {
    let stale = NodeId::server(0);
    let reader = NodeId::client(1);
    let fast = |from, to| DelayRule { from: Some(from), to: Some(to), delay: 0.01 };
    let strategy = if corrupt { Strategy::StaleReplay { as_of: Some(4.0) } } else { Strategy::None };
    SimConfig {
        params: params(),
        initial_servers: 10,
        initial_clients: Count::Fixed(1),
        duration: 30.0,
        churn: ChurnPattern::None,
        workload: Workload::Scripted {
            initial: vec!["w".into()],
            steps: vec![
                step(0.0, "w", ScriptAction::Write(FIRST_VALUE)),
                step(5.0, "w", ScriptAction::Write(SECOND_VALUE)),
                step(10.0, "p", ScriptAction::Enter),
                step(10.0, "p", ScriptAction::Read),
            ],
        },
        adversary: AdversarySpec { strategy, corrupt: Some(corrupt as u32), seed: 0 },
        seed: 0,
        delay: DelayModel::Scripted {
            rules: vec![fast(stale, reader), fast(reader, stale)],
            fallback: Box::new(DelayModel::Constant { fraction: 1.0 }),
        },
        client_variant: variant,
        admission_scale: 1.0,
        override_feasibility: false,
        trace_level: TraceLevel::Summary,
        stop_when_idle: true,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Case {
    pub name: String,
    pub verdict: Verdict,
    /// Value returned by the reader.
    pub read_value: Option<u64>,
    #[serde(skip)]
    pub trace: Option<Trace>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub uniform: Case,
    pub abcc_control: Case,
    pub honest_control: Case,
    /// The uniform run has a stale read and both controls are linearizable.
    pub demonstrated: bool,
}

impl CounterexampleReport {
    pub fn summary(&self) -> String {
        let line = |c: &Case| {
            format!(
                "{}: linearizable={} read returned {}",
                c.name,
                c.verdict.linearizable,
                c.read_value.map_or_else(|| "nothing".into(), |v| v.to_string())
            )
        };
        let mut out = vec![line(&self.uniform)];
        if let Some(v) = &self.uniform.verdict.linearizability.violation {
            out.push(format!("  violation: {v:?}"));
        }
        out.push(line(&self.abcc_control));
        out.push(line(&self.honest_control));
        out.push(format!("counterexample {}", if self.demonstrated { "demonstrated" } else { "NOT demonstrated" }));
        out.join("\n")
    }
}

fn run_case(name: &str, cfg: &SimConfig) -> Result<Case, SimError> {
    let trace = run(cfg)?.trace;
    let verdict = check_trace(&trace);
    let read_value = crate::checker::History::from_trace(&trace)
        .ok()
        .and_then(|h| h.ops.iter().find(|o| o.client == NodeId::client(1)).and_then(|o| o.returned_value));
    Ok(Case { name: name.into(), verdict, read_value, trace: Some(trace) })
}

pub fn run_uniform_counterexample() -> Result<CounterexampleReport, SimError> {
    let uniform = run_case("uniform client, stale server", &schedule(ClientVariant::Uniform, true))?;
    let abcc_control = run_case("abcc client, stale server", &schedule(ClientVariant::Abcc, true))?;
    let honest_control = run_case("uniform client, no corrupt server", &schedule(ClientVariant::Uniform, false))?;
    let stale = matches!(uniform.verdict.linearizability.violation, Some(Violation::StaleRead { .. }))
        && uniform.read_value == Some(FIRST_VALUE);
    let demonstrated = stale && abcc_control.verdict.linearizable && honest_control.verdict.linearizable;
    Ok(CounterexampleReport { uniform, abcc_control, honest_control, demonstrated })
}
