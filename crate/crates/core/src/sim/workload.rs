//! Client workload drivers.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use super::config::{Count, ScriptAction, Workload};
use super::SimError;
use crate::model::NodeId;
use crate::protocol::OpRequest;

/// Something the driver wants to happen at a given time (in `d`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) enum Planned {
    ClientEnter(NodeId),
    Step(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Exit {
    Leave,
    Crash,
}

#[derive(Debug)]
enum Mode {
    Random {
        ops_left: u32,
        read_fraction: f64,
        max_gap: f64,
        crash_probability: f64,
        leave_probability: f64,
        next_value: u64,
        /// Clients that never crash or leave.
        protected: usize,
    },
    Scripted {
        steps: Vec<(f64, NodeId, ScriptAction)>,
        fired: usize,
        queues: FxHashMap<NodeId, VecDeque<OpRequest>>,
    },
}

#[derive(Debug)]
pub(super) struct Driver {
    mode: Mode,
    rng: ChaCha8Rng,
    initial: u32,
    plan: Vec<(f64, Planned)>,
}

impl Driver {
    pub fn new(workload: &Workload, clients: Count, duration: f64, mut rng: ChaCha8Rng) -> Result<Self, SimError> {
        match workload {
            Workload::Random { ops, read_fraction, max_gap, entrants, crash_probability, leave_probability } => {
                let (lo, hi) = clients.bounds();
                let initial = rng.random_range(lo..=hi);
                if initial == 0 && *entrants == 0 && *ops > 0 {
                    return Err(SimError::Config("random workload needs at least one client".into()));
                }
                let plan = (0..*entrants)
                    .map(|i| (rng.random::<f64>() * duration * 0.5, Planned::ClientEnter(NodeId::client(initial + i))))
                    .collect();
                Ok(Driver {
                    mode: Mode::Random {
                        ops_left: *ops,
                        read_fraction: *read_fraction,
                        max_gap: *max_gap,
                        crash_probability: *crash_probability,
                        leave_probability: *leave_probability,
                        next_value: 1,
                        protected: 2,
                    },
                    rng,
                    initial,
                    plan,
                })
            }
            Workload::Scripted { initial, steps } => {
                let mut names: FxHashMap<&str, NodeId> = FxHashMap::default();
                for name in initial {
                    let id = NodeId::client(names.len() as u32);
                    if names.insert(name, id).is_some() {
                        return Err(SimError::Config(format!("client {name:?} listed twice")));
                    }
                }
                let mut resolved = Vec::with_capacity(steps.len());
                for step in steps {
                    let next = NodeId::client(names.len() as u32);
                    let id = *names.entry(&step.client).or_insert(next);
                    if id == next && step.action != ScriptAction::Enter {
                        return Err(SimError::Config(format!("client {:?} acts before entering", step.client)));
                    }
                    resolved.push((step.at, id, step.action));
                }
                resolved.sort_by(|a, b| a.0.total_cmp(&b.0));
                let plan = resolved.iter().enumerate().map(|(i, s)| (s.0, Planned::Step(i))).collect();
                Ok(Driver {
                    mode: Mode::Scripted { steps: resolved, fired: 0, queues: FxHashMap::default() },
                    rng,
                    initial: initial.len() as u32,
                    plan,
                })
            }
        }
    }

    pub fn initial_clients(&self) -> u32 {
        self.initial
    }

    pub fn take_plan(&mut self) -> Vec<(f64, Planned)> {
        std::mem::take(&mut self.plan)
    }

    /// Fires a script step: returns the client and what it does now, if
    /// anything beyond queueing.
    pub fn step(&mut self, i: usize) -> (NodeId, Option<ScriptAction>) {
        let Mode::Scripted { steps, fired, queues } = &mut self.mode else {
            unreachable!("script step in random workload")
        };
        *fired += 1;
        let (_, client, action) = steps[i];
        match action {
            ScriptAction::Read => queues.entry(client).or_default().push_back(OpRequest::Read),
            ScriptAction::Write(v) => queues.entry(client).or_default().push_back(OpRequest::Write(v)),
            other => return (client, Some(other)),
        }
        (client, None)
    }

    /// The next operation for a joined, idle client with the delay (in `d`)
    /// before invoking it.
    pub fn next_op(&mut self, client: NodeId) -> Option<(f64, OpRequest)> {
        match &mut self.mode {
            Mode::Random { ops_left, read_fraction, max_gap, next_value, .. } => {
                if *ops_left == 0 {
                    return None;
                }
                *ops_left -= 1;
                let gap = self.rng.random::<f64>() * *max_gap;
                let op = if self.rng.random::<f64>() < *read_fraction {
                    OpRequest::Read
                } else {
                    *next_value += 1;
                    OpRequest::Write(*next_value - 1)
                };
                Some((gap, op))
            }
            Mode::Scripted { queues, .. } => queues.get_mut(&client).and_then(VecDeque::pop_front).map(|op| (0.0, op)),
        }
    }

    /// Gives back an operation that could not be invoked.
    pub fn refund(&mut self, client: NodeId, op: OpRequest) {
        match &mut self.mode {
            Mode::Random { ops_left, .. } => *ops_left += 1,
            Mode::Scripted { queues, .. } => queues.entry(client).or_default().push_front(op),
        }
    }

    /// Whether the client departs after a completed operation, and when.
    pub fn exit_after_response(&mut self, client: NodeId) -> Option<(f64, Exit)> {
        let Mode::Random { crash_probability, leave_probability, max_gap, protected, .. } = &self.mode else {
            return None;
        };
        if client.index() < *protected as u32 && client.index() < self.initial {
            return None;
        }
        let u = self.rng.random::<f64>();
        let exit = if u < *crash_probability {
            Exit::Crash
        } else if u < crash_probability + leave_probability {
            Exit::Leave
        } else {
            return None;
        };
        Some((self.rng.random::<f64>() * max_gap, exit))
    }

    /// Drops whatever a departed client still had queued.
    pub fn forget(&mut self, client: NodeId) {
        if let Mode::Scripted { queues, .. } = &mut self.mode {
            queues.remove(&client);
        }
    }

    /// No operation remains to be issued.
    pub fn exhausted(&self) -> bool {
        match &self.mode {
            Mode::Random { ops_left, .. } => *ops_left == 0,
            Mode::Scripted { steps, fired, queues } => *fired == steps.len() && queues.values().all(VecDeque::is_empty),
        }
    }
}
