//! JSON-lines execution traces.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::TraceLevel;
use super::SimError;
use crate::model::{MessageKind, NodeId, NodeKind, OpKind, Scope, Timestamp, Value};
use crate::params::Params;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub seed: u64,
    pub params: Params<f64>,
    pub level: TraceLevel,
    pub strategy: String,
    pub client_variant: String,
    pub initial_servers: Vec<NodeId>,
    pub initial_clients: Vec<NodeId>,
    /// Corrupt servers present at time 0.
    pub corrupt: Vec<NodeId>,
    pub duration: f64,
    pub admission_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Trigger {
    Enter {
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        corrupt: bool,
    },
    Leave,
    Crash,
    Invoke {
        op: u64,
        kind: OpKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Value>,
    },
    Recv {
        kind: MessageKind,
        from: NodeId,
        seq: u64,
    },
    /// A scheduled adversary action with no incoming message.
    Wake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentSummary {
    pub kind: MessageKind,
    pub scope: Scope,
    pub recipients: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResponseRecord {
    Joined,
    Return { op: u64, value: Option<Value> },
    Ack { op: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoteRecord {
    WritePhase { op: u64, ts: Timestamp, value: Option<Value> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub node: NodeId,
    pub kind: NodeKind,
    pub trigger: Trigger,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sent: Vec<SentSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ResponseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<NoteRecord>,
    /// Servers present right after this step.
    pub ns: u32,
}

impl StepRecord {
    /// Whether a summary-level trace keeps this step.
    pub fn is_milestone(&self) -> bool {
        !matches!(self.trigger, Trigger::Recv { .. }) || self.response.is_some() || self.note.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub steps: u64,
    pub recorded: u64,
    /// Deliveries skipped because they provably change nothing.
    pub elided: u64,
    pub digest: String,
    pub end_time: f64,
    /// Every corrupt server of the run, including late entrants.
    pub corrupt: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Step(StepRecord),
    Footer(TraceFooter),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub footer: TraceFooter,
}

impl Trace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        let mut line = |l: &Line| -> Result<(), SimError> {
            serde_json::to_writer(&mut w, l).map_err(|e| SimError::Io(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| SimError::Io(e.to_string()))
        };
        line(&Line::Header(self.header.clone()))?;
        for s in &self.steps {
            line(&Line::Step(s.clone()))?;
        }
        line(&Line::Footer(self.footer.clone()))
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, SimError> {
        let mut header = None;
        let mut footer = None;
        let mut steps = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SimError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|e| SimError::Trace(format!("line {}: {e}", n + 1)))?;
            match parsed {
                Line::Header(h) if header.is_none() => header = Some(h),
                Line::Step(s) if header.is_some() && footer.is_none() => steps.push(s),
                Line::Footer(f) if header.is_some() && footer.is_none() => footer = Some(f),
                _ => return Err(SimError::Trace(format!("line {}: out of place", n + 1))),
            }
        }
        let header = header.ok_or_else(|| SimError::Trace("missing header".into()))?;
        if header.version != TRACE_VERSION {
            return Err(SimError::Trace(format!("unsupported version {}", header.version)));
        }
        let footer = footer.ok_or_else(|| SimError::Trace("missing footer (truncated trace?)".into()))?;
        Ok(Trace { header, steps, footer })
    }
}

/// FNV-1a, used to fingerprint every step whether or not it is kept.
#[derive(Debug, Clone)]
pub struct Digest(u64);

impl Default for Digest {
    fn default() -> Self {
        Digest(0xcbf2_9ce4_8422_2325)
    }
}

impl Digest {
    pub fn word(&mut self, x: u64) {
        for b in x.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn hex(&self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn step(&mut self, s: &StepRecord) {
        self.word(s.t.to_bits());
        self.word(s.node.index() as u64 | (s.node.is_client() as u64) << 32);
        match s.trigger {
            Trigger::Enter { corrupt } => self.word(1 | (corrupt as u64) << 8),
            Trigger::Leave => self.word(2),
            Trigger::Crash => self.word(3),
            Trigger::Invoke { op, kind, value } => {
                self.word(4 | ((kind == OpKind::Write) as u64) << 8);
                self.word(op);
                self.word(value.map_or(u64::MAX, |v| v));
            }
            Trigger::Recv { kind, from, seq } => {
                self.word(5 | (kind as u64) << 8);
                self.word(from.index() as u64);
                self.word(seq);
            }
            Trigger::Wake => self.word(6),
        }
        for sent in &s.sent {
            let scope = match sent.scope {
                Scope::Servers => 1 << 32,
                Scope::Clients => 2 << 32,
                Scope::To(q) => 3 << 32 | q.index() as u64,
            };
            self.word(sent.kind as u64 | scope << 8);
            self.word(sent.recipients as u64);
        }
        match s.response {
            None => {}
            Some(ResponseRecord::Joined) => self.word(7),
            Some(ResponseRecord::Return { op, value }) => {
                self.word(8);
                self.word(op);
                self.word(value.map_or(u64::MAX, |v| v));
            }
            Some(ResponseRecord::Ack { op }) => {
                self.word(9);
                self.word(op);
            }
        }
        if let Some(NoteRecord::WritePhase { op, ts, value }) = s.note {
            self.word(10);
            self.word(op);
            self.word(ts.num);
            self.word(ts.writer.map_or(u64::MAX, |w| w.index() as u64));
            self.word(value.map_or(u64::MAX, |v| v));
        }
        self.word(s.ns as u64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let header = TraceHeader {
            version: TRACE_VERSION,
            seed: 7,
            params: Params::new(0.01, 1, 10, Some(0.82), Some(0.84)),
            level: TraceLevel::Full,
            strategy: "silent".into(),
            client_variant: "abcc".into(),
            initial_servers: vec![NodeId::server(0)],
            initial_clients: vec![NodeId::client(1)],
            corrupt: vec![],
            duration: 10.0,
            admission_scale: 1.0,
        };
        let steps = vec![
            StepRecord {
                t: 0.25,
                node: NodeId::client(1),
                kind: NodeKind::Client,
                trigger: Trigger::Invoke { op: 0, kind: OpKind::Write, value: Some(3) },
                sent: vec![SentSummary { kind: MessageKind::Query, scope: Scope::Servers, recipients: 1 }],
                response: None,
                note: None,
                ns: 1,
            },
            StepRecord {
                t: 0.5,
                node: NodeId::client(1),
                kind: NodeKind::Client,
                trigger: Trigger::Recv { kind: MessageKind::Reply, from: NodeId::server(0), seq: 0 },
                sent: vec![],
                response: None,
                note: Some(NoteRecord::WritePhase { op: 0, ts: Timestamp::new(1, NodeId::client(1)), value: Some(3) }),
                ns: 1,
            },
        ];
        let footer =
            TraceFooter { steps: 2, recorded: 2, elided: 0, digest: "0".into(), end_time: 1.0, corrupt: vec![] };
        Trace { header, steps, footer }
    }

    #[test]
    fn jsonl_round_trip() {
        let trace = sample();
        let bytes = trace.to_jsonl();
        let back = Trace::read_jsonl(&bytes[..]).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.to_jsonl(), bytes);
    }

    #[test]
    fn truncated_trace_is_rejected() {
        let bytes = sample().to_jsonl();
        let text = String::from_utf8(bytes).unwrap();
        let cut: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(Trace::read_jsonl(cut.as_bytes()).is_err());
    }

    #[test]
    fn digest_sees_every_field() {
        let trace = sample();
        let mut a = Digest::default();
        a.step(&trace.steps[0]);
        let mut changed = trace.steps[0].clone();
        changed.ns = 2;
        let mut b = Digest::default();
        b.step(&changed);
        assert_ne!(a.hex(), b.hex());
    }
}
