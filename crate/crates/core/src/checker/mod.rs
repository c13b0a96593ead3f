//! Post-hoc verification of traces: atomicity, liveness and churn-model
//! audits.

mod audit;
mod history;
mod linear;
mod liveness;

use serde::{Deserialize, Serialize};

pub use audit::{audit_model, AuditCheck, AuditKind, AuditReport, ServerTimeline};
pub use history::History;
pub use linear::{
    candidates, check_all_write_orders, check_linearizable, check_linearizable_search, check_linearizable_witness,
    check_with_timestamps, replay, LinVerdict, Method, Violation, EXHAUSTIVE_CAP, SEARCH_BUDGET, WRITE_ORDER_CAP,
};
pub use liveness::{check_liveness, lifetimes, Lifetime, LivenessReport, LivenessViolation};

use crate::sim::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub linearizable: bool,
    pub linearizability: LinVerdict,
    pub liveness: LivenessReport,
    pub audits: AuditReport,
    pub ops: usize,
    pub completed: usize,
}

impl Verdict {
    pub fn live(&self) -> bool {
        self.liveness.violations.is_empty()
    }

    /// 0 when everything holds, 1 on a safety or liveness violation, 2 when
    /// only the model audits fail.
    pub fn exit_code(&self) -> i32 {
        if !self.linearizable || !self.live() {
            1
        } else if !self.audits.passed() {
            2
        } else {
            0
        }
    }

    pub fn summary(&self) -> String {
        let mut lines = vec![format!(
            "linearizable: {} ({:?}), {} ops, {} completed",
            self.linearizable, self.linearizability.method, self.ops, self.completed
        )];
        if let Some(v) = &self.linearizability.violation {
            lines.push(format!("  violation: {v:?}"));
        }
        lines.push(format!(
            "liveness: {} violation(s), max join {} d, max op {} d",
            self.liveness.violations.len(),
            fmt_opt(self.liveness.max_join),
            fmt_opt(self.liveness.max_op)
        ));
        for v in self.liveness.violations.iter().take(5) {
            lines.push(format!("  {v:?}"));
        }
        for c in &self.audits.checks {
            let status = if c.passed { "ok" } else { "FAILED" };
            lines.push(format!("audit {:?}: {status} over {} points", c.kind, c.points));
            if let Some(first) = &c.first_violation {
                lines.push(format!("  first: {first}"));
            }
        }
        lines.join("\n")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

/// Runs every check on a trace.
pub fn check_trace(trace: &Trace) -> Verdict {
    let audits = audit_model(trace);
    let (history, linearizability) = match History::from_trace(trace) {
        Ok(h) => {
            let v = check_linearizable(&h);
            (h, v)
        }
        Err(reason) => (
            History::default(),
            LinVerdict {
                linearizable: false,
                method: Method::Witness,
                witness: None,
                violation: Some(Violation::Malformed { reason }),
                notes: Vec::new(),
            },
        ),
    };
    let liveness = check_liveness(trace, &history);
    Verdict {
        linearizable: linearizability.linearizable,
        ops: history.ops.len(),
        completed: history.ops.iter().filter(|o| o.is_complete()).count(),
        linearizability,
        liveness,
        audits,
    }
}
