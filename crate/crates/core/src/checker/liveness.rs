use serde::{Deserialize, Serialize};

use super::history::History;
use crate::model::{NodeId, NodeKind};
use crate::sim::{ResponseRecord, Trace, Trigger};

const EPS: f64 = 1e-9;

/// One node's lifetime as recorded in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lifetime {
    pub node: NodeId,
    pub initial: bool,
    pub entered: f64,
    pub joined: Option<f64>,
    pub departed: Option<f64>,
    pub crashed: bool,
    pub corrupt: bool,
}

/// Lifetimes of every node, initial ones first.
pub fn lifetimes(trace: &Trace) -> Vec<Lifetime> {
    let corrupt = |n: NodeId| trace.footer.corrupt.contains(&n) || trace.header.corrupt.contains(&n);
    let mut out: Vec<Lifetime> = trace
        .header
        .initial_servers
        .iter()
        .chain(&trace.header.initial_clients)
        .map(|&node| Lifetime {
            node,
            initial: true,
            entered: 0.0,
            joined: Some(0.0),
            departed: None,
            crashed: false,
            corrupt: corrupt(node),
        })
        .collect();
    let mut index: rustc_hash::FxHashMap<NodeId, usize> = out.iter().enumerate().map(|(i, l)| (l.node, i)).collect();
    for step in &trace.steps {
        match step.trigger {
            Trigger::Enter { .. } => {
                index.insert(step.node, out.len());
                out.push(Lifetime {
                    node: step.node,
                    initial: false,
                    entered: step.t,
                    joined: None,
                    departed: None,
                    crashed: false,
                    corrupt: corrupt(step.node),
                });
            }
            Trigger::Leave | Trigger::Crash => {
                if let Some(&i) = index.get(&step.node) {
                    out[i].departed.get_or_insert(step.t);
                    out[i].crashed |= step.trigger == Trigger::Crash;
                }
            }
            _ => {}
        }
        if step.response == Some(ResponseRecord::Joined) {
            if let Some(&i) = index.get(&step.node) {
                out[i].joined.get_or_insert(step.t);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LivenessViolation {
    /// A correct node active for `2d` after entering that did not join in time.
    Join { node: NodeId, entered: f64, joined: Option<f64> },
    /// An op by a client that stayed active that did not finish within `4d`.
    Op { op: u64, client: NodeId, invoked: f64, responded: Option<f64> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LivenessReport {
    /// `(node, latency in d)` for every entrant that joined.
    pub joins: Vec<(NodeId, f64)>,
    /// `(op, latency in d)` for every completed op.
    pub ops: Vec<(u64, f64)>,
    pub max_join: Option<f64>,
    pub max_op: Option<f64>,
    pub violations: Vec<LivenessViolation>,
}

pub fn check_liveness(trace: &Trace, history: &History) -> LivenessReport {
    let d = trace.header.params.d;
    let end = trace.footer.end_time;
    let lives = lifetimes(trace);
    let mut report = LivenessReport::default();
    for life in lives.iter().filter(|l| !l.initial) {
        if let Some(j) = life.joined {
            report.joins.push((life.node, (j - life.entered) / d));
        }
        if life.corrupt {
            continue;
        }
        let active_until = life.departed.unwrap_or(end);
        if active_until - life.entered < 2.0 * d - EPS {
            continue;
        }
        if life.joined.is_none_or(|j| j - life.entered > 2.0 * d + EPS) {
            report.violations.push(LivenessViolation::Join {
                node: life.node,
                entered: life.entered,
                joined: life.joined,
            });
        }
    }
    let departed =
        |c: NodeId| lives.iter().find(|l| l.node == c && l.node.kind() == NodeKind::Client).and_then(|l| l.departed);
    for op in &history.ops {
        match op.response_time {
            Some(r) => {
                report.ops.push((op.op_id, (r - op.invoke_time) / d));
                if r - op.invoke_time > 4.0 * d + EPS {
                    report.violations.push(LivenessViolation::Op {
                        op: op.op_id,
                        client: op.client,
                        invoked: op.invoke_time,
                        responded: Some(r),
                    });
                }
            }
            None => {
                // Excused if the client left or crashed, or the run ended first.
                if departed(op.client).is_some() || end - op.invoke_time <= 4.0 * d + EPS {
                    continue;
                }
                report.violations.push(LivenessViolation::Op {
                    op: op.op_id,
                    client: op.client,
                    invoked: op.invoke_time,
                    responded: None,
                });
            }
        }
    }
    report.max_join = report.joins.iter().map(|x| x.1).reduce(f64::max);
    report.max_op = report.ops.iter().map(|x| x.1).reduce(f64::max);
    report
}
