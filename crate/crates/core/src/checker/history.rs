use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::model::{NodeId, NodeKind, OpKind, OpRecord, Value};
use crate::sim::{NoteRecord, ResponseRecord, Trace, Trigger};

/// Register operations of one run. The initial value is ⊥.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub ops: Vec<OpRecord>,
}

impl History {
    pub fn new(ops: Vec<OpRecord>) -> Self {
        History { ops }
    }

    /// Ops in invocation order, with responses and write-phase timestamps
    /// filled in. Fails on responses or notes that match no open operation.
    pub fn from_trace(trace: &Trace) -> Result<History, String> {
        let mut ops: Vec<OpRecord> = Vec::new();
        let mut index: FxHashMap<u64, usize> = FxHashMap::default();
        let mut open: FxHashMap<NodeId, u64> = FxHashMap::default();
        for step in &trace.steps {
            if let Trigger::Invoke { op, kind, value } = step.trigger {
                if let Some(prev) = open.insert(step.node, op) {
                    return Err(format!("{} invoked op {op} while op {prev} was open", step.node));
                }
                index.insert(op, ops.len());
                ops.push(OpRecord {
                    op_id: op,
                    client: step.node,
                    kind,
                    written_value: value,
                    returned_value: None,
                    invoke_time: step.t,
                    response_time: None,
                    timestamp_witness: None,
                });
            }
            if let Some(NoteRecord::WritePhase { op, ts, value }) = step.note {
                let i = *index.get(&op).ok_or_else(|| format!("write phase of unknown op {op}"))?;
                let rec = &mut ops[i];
                if rec.kind == OpKind::Write && value != rec.written_value {
                    return Err(format!("op {op} broadcast a value it was not asked to write"));
                }
                rec.timestamp_witness = Some(ts);
            }
            let finished = match step.response {
                Some(ResponseRecord::Return { op, value }) => Some((op, OpKind::Read, value)),
                Some(ResponseRecord::Ack { op }) => Some((op, OpKind::Write, None)),
                _ => None,
            };
            if let Some((op, kind, value)) = finished {
                if open.get(&step.node) != Some(&op) {
                    return Err(format!("{} answered op {op}, which it has not open", step.node));
                }
                open.remove(&step.node);
                let rec = &mut ops[index[&op]];
                if rec.kind != kind {
                    return Err(format!("op {op} got a response of the wrong kind"));
                }
                rec.returned_value = value;
                rec.response_time = Some(step.t);
            }
            if step.kind == NodeKind::Client && matches!(step.trigger, Trigger::Leave | Trigger::Crash) {
                open.remove(&step.node);
            }
        }
        Ok(History { ops })
    }

    /// Operations of the same client never overlap.
    pub fn well_formed(&self) -> Result<(), String> {
        let mut last: FxHashMap<NodeId, (u64, f64)> = FxHashMap::default();
        for op in &self.ops {
            if let Some(&(prev, end)) = last.get(&op.client) {
                if end.is_nan() || end > op.invoke_time {
                    return Err(format!("{}: op {} overlaps op {prev}", op.client, op.op_id));
                }
            }
            last.insert(op.client, (op.op_id, op.response_time.unwrap_or(f64::NAN)));
        }
        Ok(())
    }

    pub fn get(&self, op_id: u64) -> Option<&OpRecord> {
        self.ops.iter().find(|o| o.op_id == op_id)
    }

    /// Values written by more than one write.
    pub fn duplicate_writes(&self) -> Vec<Value> {
        let mut seen: FxHashMap<Value, u32> = FxHashMap::default();
        for op in self.ops.iter().filter(|o| o.kind == OpKind::Write) {
            if let Some(v) = op.written_value {
                *seen.entry(v).or_default() += 1;
            }
        }
        let mut dup: Vec<Value> = seen.into_iter().filter(|&(_, n)| n > 1).map(|(v, _)| v).collect();
        dup.sort();
        dup
    }
}
