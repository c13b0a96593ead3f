use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::rc::Rc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::churn::{ChurnEvent, ChurnLedger};
use super::config::{ChurnAction, ChurnPattern, ClientVariant, ScriptAction, SimConfig, TraceLevel};
use super::delay::sample_fraction;
use super::trace::{
    Digest, NoteRecord, ResponseRecord, SentSummary, StepRecord, Trace, TraceFooter, TraceHeader, Trigger,
    TRACE_VERSION,
};
use super::workload::{Driver, Exit, Planned};
use super::SimError;
use crate::adversary::{Adversary, Ctx, Strategy};
use crate::model::{Envelope, Message, MessageKind, NodeId, NodeKind, OpKind, Scope};
use crate::protocol::{ClientRules, ClientState, NodeEvent, Note, OpRequest, Outbox, Response, ServerState};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: u64,
    pub deliveries: u64,
    /// Messages not scheduled because they could not change their recipient.
    pub elided: u64,
    /// Messages whose recipient was gone on arrival.
    pub dropped: u64,
    pub ops_invoked: u64,
    pub ops_completed: u64,
    pub churn_events: u64,
    pub churn_rejected: u64,
    pub end_time: f64,
    pub deliveries_by_kind: BTreeMap<MessageKind, u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub stats: RunStats,
    pub churn: Vec<ChurnEvent>,
}

/// Runs one simulation to completion.
pub fn run(config: &SimConfig) -> Result<RunOutput, SimError> {
    config.validate()?;
    Sim::new(config)?.run()
}

enum Event {
    Deliver { to: NodeId, env: Rc<Envelope> },
    ChurnTick,
    ScriptedChurn(usize),
    ClientEnter(NodeId),
    ClientExit(NodeId, Exit),
    Invoke(NodeId, OpRequest),
    Step(usize),
    Wake(NodeId),
}

struct Pending {
    t: f64,
    ord: u64,
    event: Event,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed: the heap pops the earliest event, ties in scheduling order.
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.ord.cmp(&self.ord))
    }
}

struct ServerSlot {
    state: ServerState,
    present: bool,
    seq: u64,
}

struct ClientSlot {
    state: ClientState,
    present: bool,
    seq: u64,
    op: Option<u64>,
    scheduled: bool,
}

struct Sim<'c> {
    cfg: &'c SimConfig,
    d: f64,
    now: f64,
    ord: u64,
    queue: BinaryHeap<Pending>,
    delay_rng: ChaCha8Rng,
    churn_rng: ChaCha8Rng,
    servers: Vec<ServerSlot>,
    clients: Vec<Option<ClientSlot>>,
    present_servers: Vec<NodeId>,
    present_clients: Vec<NodeId>,
    /// Per (sender, receiver) slot pair: last scheduled delivery time, and
    /// the longest own write log the sender has update-echoed so far.
    fifo: Vec<Vec<(f64, usize)>>,
    ledger: ChurnLedger,
    adversary: Option<Adversary>,
    corrupt_entrants: u32,
    driver: Driver,
    rules: ClientRules,
    out: Outbox,
    steps: Vec<StepRecord>,
    digest: Digest,
    stats: RunStats,
    next_op: u64,
    pending_ops: usize,
    scheduled_invokes: usize,
    header: TraceHeader,
}

fn slot(id: NodeId) -> usize {
    2 * id.index() as usize + id.is_client() as usize
}

impl<'c> Sim<'c> {
    fn new(cfg: &'c SimConfig) -> Result<Self, SimError> {
        let params = &cfg.params;
        let d = params.d;
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k);
            rng
        };
        let mut adversary_rng = stream(3);
        let driver = Driver::new(&cfg.workload, cfg.initial_clients, cfg.duration, stream(2))?;

        let initial: Vec<NodeId> = (0..cfg.initial_servers).map(NodeId::server).collect();
        let servers = initial
            .iter()
            .map(|&s| ServerSlot { state: ServerState::initial(s, params, &initial), present: true, seq: 0 })
            .collect();
        let rules = match cfg.client_variant {
            ClientVariant::Abcc => ClientRules::abcc(params),
            ClientVariant::Uniform => ClientRules::uniform(),
        };
        let n_clients = driver.initial_clients();
        let clients = (0..n_clients)
            .map(|c| {
                Some(ClientSlot {
                    state: ClientState::initial(NodeId::client(c), params, rules, &initial),
                    present: true,
                    seq: 0,
                    op: None,
                    scheduled: false,
                })
            })
            .collect();

        let corrupt_count = cfg.adversary.count(params.f);
        let mut adversary = None;
        let mut corrupt_initial = Vec::new();
        if corrupt_count > 0 {
            let mut adv =
                Adversary::new(cfg.adversary.strategy.clone(), d, adversary_rng.next_u64() ^ cfg.adversary.seed);
            if !cfg.adversary.strategy.enters_late() {
                for i in 0..corrupt_count {
                    adv.add_corrupt(NodeId::server(i));
                    corrupt_initial.push(NodeId::server(i));
                }
            }
            adversary = Some(adv);
        }
        let corrupt_entrants = if cfg.adversary.strategy.enters_late() { corrupt_count } else { 0 };

        let header = TraceHeader {
            version: TRACE_VERSION,
            seed: cfg.seed,
            params: params.clone(),
            level: cfg.trace_level,
            strategy: if corrupt_count > 0 { cfg.adversary.strategy.name() } else { Strategy::None.name() }.into(),
            client_variant: match cfg.client_variant {
                ClientVariant::Abcc => "abcc",
                ClientVariant::Uniform => "uniform",
            }
            .into(),
            initial_servers: initial.clone(),
            initial_clients: (0..n_clients).map(NodeId::client).collect(),
            corrupt: corrupt_initial,
            duration: cfg.duration,
            admission_scale: cfg.admission_scale,
        };

        Ok(Sim {
            cfg,
            d,
            now: 0.0,
            ord: 0,
            queue: BinaryHeap::new(),
            delay_rng: stream(0),
            churn_rng: stream(1),
            servers,
            clients,
            present_servers: initial,
            present_clients: (0..n_clients).map(NodeId::client).collect(),
            fifo: Vec::new(),
            ledger: ChurnLedger::new(d, cfg.initial_servers),
            adversary,
            corrupt_entrants,
            driver,
            rules,
            out: Outbox::default(),
            steps: Vec::new(),
            digest: Digest::default(),
            stats: RunStats::default(),
            next_op: 0,
            pending_ops: 0,
            scheduled_invokes: 0,
            header,
        })
    }

    fn push(&mut self, t: f64, event: Event) {
        self.ord += 1;
        self.queue.push(Pending { t, ord: self.ord, event });
    }

    fn run(mut self) -> Result<RunOutput, SimError> {
        self.schedule_start();
        let horizon = self.cfg.duration * self.d;
        while let Some(Pending { t, event, .. }) = self.queue.pop() {
            if t > horizon {
                break;
            }
            self.now = t;
            self.fire(event)?;
            if self.cfg.stop_when_idle
                && self.driver.exhausted()
                && self.pending_ops == 0
                && self.scheduled_invokes == 0
            {
                break;
            }
        }
        self.stats.end_time = self.now;
        let mut corrupt = self.adversary.as_ref().map(|a| a.corrupt().to_vec()).unwrap_or_default();
        corrupt.sort();
        let footer = TraceFooter {
            steps: self.stats.steps,
            recorded: self.steps.len() as u64,
            elided: self.stats.elided,
            digest: self.digest.hex(),
            end_time: self.now,
            corrupt,
        };
        Ok(RunOutput {
            trace: Trace { header: self.header, steps: self.steps, footer },
            stats: self.stats,
            churn: self.ledger.events().to_vec(),
        })
    }

    fn schedule_start(&mut self) {
        for (t, planned) in self.driver.take_plan() {
            let event = match planned {
                Planned::ClientEnter(c) => Event::ClientEnter(c),
                Planned::Step(i) => Event::Step(i),
            };
            self.push(t * self.d, event);
        }
        match &self.cfg.churn {
            ChurnPattern::None => {}
            ChurnPattern::Rate { proposals_per_d } => {
                if *proposals_per_d > 0.0 {
                    let first = self.churn_gap();
                    self.push(first, Event::ChurnTick);
                }
            }
            ChurnPattern::Scripted { events } => {
                for (i, e) in events.iter().enumerate() {
                    self.push(e.at * self.d, Event::ScriptedChurn(i));
                }
            }
        }
        if let Some(wake) = self.adversary.as_ref().and_then(Adversary::wake_time) {
            for s in self.header.corrupt.clone() {
                self.push(wake, Event::Wake(s));
            }
        }
        for c in self.present_clients.clone() {
            self.try_dispatch(c);
        }
    }

    fn churn_gap(&mut self) -> f64 {
        let ChurnPattern::Rate { proposals_per_d } = self.cfg.churn else { unreachable!() };
        self.d / proposals_per_d * (0.5 + self.churn_rng.random::<f64>())
    }

    fn fire(&mut self, event: Event) -> Result<(), SimError> {
        match event {
            Event::Deliver { to, env } => {
                let present = match to.kind() {
                    NodeKind::Server => self.servers[to.index() as usize].present,
                    NodeKind::Client => self.client(to).present,
                };
                if !present {
                    self.stats.dropped += 1;
                    return Ok(());
                }
                self.stats.deliveries += 1;
                *self.stats.deliveries_by_kind.entry(env.kind()).or_default() += 1;
                let trigger = Trigger::Recv { kind: env.kind(), from: env.sender, seq: env.fifo_seq };
                self.step(to, trigger, Some(NodeEvent::Receive(&env)))?;
            }
            Event::ChurnTick => {
                let action = if self.present_servers.len() as u32 <= self.cfg.initial_servers {
                    ChurnAction::Enter
                } else {
                    ChurnAction::Leave
                };
                self.propose_churn(action, None)?;
                let gap = self.churn_gap();
                self.push(self.now + gap, Event::ChurnTick);
            }
            Event::ScriptedChurn(i) => {
                let ChurnPattern::Scripted { events } = &self.cfg.churn else { unreachable!() };
                let e = events[i].clone();
                self.propose_churn(e.action, e.server)?;
            }
            Event::ClientEnter(c) => self.client_enter(c)?,
            Event::ClientExit(c, exit) => self.client_exit(c, exit)?,
            Event::Invoke(c, op) => {
                self.scheduled_invokes -= 1;
                let slot = self.client_mut(c);
                slot.scheduled = false;
                if slot.present && slot.state.is_joined() && slot.state.is_idle() {
                    let id = self.next_op;
                    self.next_op += 1;
                    self.client_mut(c).op = Some(id);
                    self.pending_ops += 1;
                    self.stats.ops_invoked += 1;
                    let (kind, value) = match op {
                        OpRequest::Read => (OpKind::Read, None),
                        OpRequest::Write(v) => (OpKind::Write, Some(v)),
                    };
                    self.step(c, Trigger::Invoke { op: id, kind, value }, Some(NodeEvent::Invoke(op)))?;
                } else {
                    self.driver.refund(c, op);
                    for other in self.present_clients.clone() {
                        self.try_dispatch(other);
                    }
                }
            }
            Event::Step(i) => {
                let (c, action) = self.driver.step(i);
                match action {
                    None => self.try_dispatch(c),
                    Some(ScriptAction::Enter) => self.client_enter(c)?,
                    Some(ScriptAction::Leave) => self.client_exit(c, Exit::Leave)?,
                    Some(ScriptAction::Crash) => self.client_exit(c, Exit::Crash)?,
                    Some(ScriptAction::Read | ScriptAction::Write(_)) => unreachable!(),
                }
            }
            Event::Wake(s) => {
                if self.servers[s.index() as usize].present {
                    self.step(s, Trigger::Wake, None)?;
                }
            }
        }
        Ok(())
    }

    fn client(&self, c: NodeId) -> &ClientSlot {
        self.clients[c.index() as usize].as_ref().expect("known client")
    }

    fn client_mut(&mut self, c: NodeId) -> &mut ClientSlot {
        self.clients[c.index() as usize].as_mut().expect("known client")
    }

    fn propose_churn(&mut self, action: ChurnAction, server: Option<NodeId>) -> Result<(), SimError> {
        let rate = self.cfg.params.alpha * self.cfg.admission_scale;
        let leaving = match action {
            ChurnAction::Enter => None,
            ChurnAction::Leave => {
                let chosen = match server {
                    Some(s) => self.present_servers.contains(&s).then_some(s),
                    None => self.pick_leaver(),
                };
                match chosen {
                    Some(s) => Some(s),
                    None => {
                        self.stats.churn_rejected += 1;
                        return Ok(());
                    }
                }
            }
        };
        let floor = self.cfg.params.ns_min as usize;
        let would_breach_floor = leaving.is_some() && self.present_servers.len() <= floor;
        if would_breach_floor || !self.ledger.admits(self.now, action, rate) {
            self.stats.churn_rejected += 1;
            return Ok(());
        }
        self.stats.churn_events += 1;
        match leaving {
            None => {
                let s = NodeId::server(self.servers.len() as u32);
                let corrupt = self.corrupt_entrants > 0;
                if corrupt {
                    self.corrupt_entrants -= 1;
                    self.adversary.as_mut().expect("adversary").add_corrupt(s);
                }
                self.servers.push(ServerSlot {
                    state: ServerState::entrant(s, &self.cfg.params),
                    present: true,
                    seq: 0,
                });
                self.present_servers.push(s);
                self.ledger.record(ChurnEvent { t: self.now, action, server: s });
                self.step(s, Trigger::Enter { corrupt }, Some(NodeEvent::Enter))
            }
            Some(s) => {
                assert!(self.present_servers.len() > floor, "leave would break the server floor");
                self.servers[s.index() as usize].present = false;
                self.present_servers.retain(|&x| x != s);
                self.ledger.record(ChurnEvent { t: self.now, action, server: s });
                self.step(s, Trigger::Leave, Some(NodeEvent::Leave))
            }
        }
    }

    fn pick_leaver(&mut self) -> Option<NodeId> {
        if let Some(adv) = &self.adversary {
            if adv.strategy().enters_late() {
                if let Some(&s) = adv.corrupt().iter().find(|s| self.servers[s.index() as usize].present) {
                    return Some(s);
                }
            }
        }
        if self.present_servers.is_empty() {
            return None;
        }
        let i = self.churn_rng.random_range(0..self.present_servers.len());
        Some(self.present_servers[i])
    }

    fn client_enter(&mut self, c: NodeId) -> Result<(), SimError> {
        let i = c.index() as usize;
        if self.clients.len() <= i {
            self.clients.resize_with(i + 1, || None);
        }
        if self.clients[i].is_some() {
            return Ok(());
        }
        self.clients[i] = Some(ClientSlot {
            state: ClientState::entrant(c, &self.cfg.params, self.rules),
            present: true,
            seq: 0,
            op: None,
            scheduled: false,
        });
        self.present_clients.push(c);
        self.step(c, Trigger::Enter { corrupt: false }, Some(NodeEvent::Enter))
    }

    fn client_exit(&mut self, c: NodeId, exit: Exit) -> Result<(), SimError> {
        let Some(Some(slot)) = self.clients.get_mut(c.index() as usize) else { return Ok(()) };
        if !slot.present {
            return Ok(());
        }
        slot.present = false;
        if slot.op.take().is_some() {
            self.pending_ops -= 1;
        }
        self.present_clients.retain(|&x| x != c);
        self.driver.forget(c);
        let (trigger, event) = match exit {
            Exit::Leave => (Trigger::Leave, NodeEvent::Leave),
            Exit::Crash => (Trigger::Crash, NodeEvent::Crash),
        };
        self.step(c, trigger, Some(event))
    }

    fn try_dispatch(&mut self, c: NodeId) {
        let slot = self.client(c);
        if !slot.present || slot.scheduled || slot.op.is_some() || !slot.state.is_joined() || !slot.state.is_idle() {
            return;
        }
        if let Some((gap, op)) = self.driver.next_op(c) {
            self.client_mut(c).scheduled = true;
            self.scheduled_invokes += 1;
            self.push(self.now + gap * self.d, Event::Invoke(c, op));
        }
    }

    /// One atomic step of `node`.
    fn step(&mut self, node: NodeId, trigger: Trigger, event: Option<NodeEvent<'_>>) -> Result<(), SimError> {
        let mut out = std::mem::take(&mut self.out);
        out.clear();
        let mut joined_now = false;
        match node.kind() {
            NodeKind::Server => {
                let i = node.index() as usize;
                let was_joined = self.servers[i].state.is_joined();
                let corrupt = self.adversary.as_ref().is_some_and(|a| a.is_corrupt(node));
                if corrupt {
                    let adv = self.adversary.as_mut().expect("adversary");
                    if let Some(NodeEvent::Receive(env)) = event {
                        adv.observe(env);
                    }
                    adv.before_step(self.now, node, &self.servers[i].state);
                }
                if let Some(ev) = event {
                    self.servers[i].state.handle(ev, &mut out);
                }
                joined_now = !was_joined && self.servers[i].state.is_joined();
                if corrupt {
                    let adv = self.adversary.as_mut().expect("adversary");
                    let shadow = &self.servers[i].state;
                    adv.after_step(shadow);
                    let trigger_env = match event {
                        Some(NodeEvent::Receive(env)) => Some(env),
                        _ => None,
                    };
                    let ctx = Ctx {
                        now: self.now,
                        me: node,
                        shadow,
                        trigger: trigger_env,
                        servers: &self.present_servers,
                        clients: &self.present_clients,
                    };
                    adv.transform(&ctx, &mut out.sends);
                    adv.validate(node, &out.sends)?;
                }
            }
            NodeKind::Client => {
                if let Some(ev) = event {
                    self.client_mut(node).state.handle(ev, &mut out);
                }
            }
        }

        let mut record = StepRecord {
            t: self.now,
            node,
            kind: node.kind(),
            trigger,
            sent: Vec::with_capacity(out.sends.len()),
            response: None,
            note: None,
            ns: 0,
        };
        for (scope, msg) in out.sends.drain(..) {
            let (recipients, kind) = self.send(node, scope, msg);
            record.sent.push(SentSummary { kind, scope, recipients });
        }
        if joined_now {
            record.response = Some(ResponseRecord::Joined);
        }
        for response in out.responses.drain(..) {
            debug_assert!(record.response.is_none());
            record.response = Some(match response {
                Response::Joined => ResponseRecord::Joined,
                Response::Return(value) => ResponseRecord::Return { op: self.complete_op(node), value },
                Response::Ack => ResponseRecord::Ack { op: self.complete_op(node) },
            });
        }
        for note in out.notes.drain(..) {
            let Note::WritePhase { ts, value } = note;
            let op = self.client(node).op.expect("write phase inside an operation");
            record.note = Some(NoteRecord::WritePhase { op, ts, value });
        }
        self.out = out;
        record.ns = self.present_servers.len() as u32;
        self.stats.steps += 1;
        self.digest.step(&record);
        let keep = self.cfg.trace_level == TraceLevel::Full || record.is_milestone();
        let response = record.response;
        if keep {
            self.steps.push(record);
        }

        if node.is_client() {
            match response {
                Some(ResponseRecord::Joined) => self.try_dispatch(node),
                Some(ResponseRecord::Return { .. } | ResponseRecord::Ack { .. }) => {
                    if let Some((gap, exit)) = self.driver.exit_after_response(node) {
                        self.push(self.now + gap * self.d, Event::ClientExit(node, exit));
                    }
                    self.try_dispatch(node);
                }
                None => {}
            }
        }
        Ok(())
    }

    fn complete_op(&mut self, c: NodeId) -> u64 {
        let op = self.client_mut(c).op.take().expect("response without operation");
        self.pending_ops -= 1;
        self.stats.ops_completed += 1;
        op
    }

    /// Schedules deliveries of one emission; returns the number of
    /// addressees and the message kind.
    fn send(&mut self, from: NodeId, scope: Scope, msg: Message) -> (u32, MessageKind) {
        let kind = msg.kind();
        let seq = match from.kind() {
            NodeKind::Server => {
                let s = &mut self.servers[from.index() as usize];
                s.seq += 1;
                s.seq
            }
            NodeKind::Client => {
                let c = self.client_mut(from);
                c.seq += 1;
                c.seq
            }
        };
        let env = Rc::new(Envelope { sender: from, fifo_seq: seq, sent_at: self.now, scope, msg });
        let targets: Vec<NodeId> = match scope {
            Scope::Servers => self.present_servers.clone(),
            Scope::Clients => self.present_clients.clone(),
            Scope::To(q) => {
                let present = match q.kind() {
                    NodeKind::Server => self.servers.get(q.index() as usize).is_some_and(|s| s.present),
                    NodeKind::Client => {
                        self.clients.get(q.index() as usize).is_some_and(|c| c.as_ref().is_some_and(|c| c.present))
                    }
                };
                if present {
                    vec![q]
                } else {
                    vec![]
                }
            }
        };
        // An honest update-echo carries a prefix-closed log, so a shorter
        // one behind a longer one on the same FIFO link changes nothing.
        let echo_len = match &env.msg {
            Message::UpdateEcho { writes, responder } if writes.lineage == Some(from) && *responder == from => {
                Some(writes.entries.len())
            }
            _ => None,
        };
        for &to in &targets {
            if self.elide(to, &env.msg) {
                self.stats.elided += 1;
                continue;
            }
            let (a, b) = (slot(from), slot(to));
            if self.fifo.len() <= a {
                self.fifo.resize_with(a + 1, Vec::new);
            }
            if self.fifo[a].len() <= b {
                self.fifo[a].resize(b + 1, (f64::NEG_INFINITY, 0));
            }
            if let Some(len) = echo_len {
                let promised = &mut self.fifo[a][b].1;
                if len <= *promised && to.is_server() {
                    self.stats.elided += 1;
                    continue;
                }
                *promised = len;
            }
            let frac = sample_fraction(&self.cfg.delay, from, to, &mut self.delay_rng);
            let last = &mut self.fifo[a][b].0;
            let t = (self.now + frac * self.d).max(*last);
            *last = t;
            self.push(t, Event::Deliver { to, env: env.clone() });
        }
        (targets.len() as u32, kind)
    }

    /// Client-bound messages that cannot change the recipient's state.
    fn elide(&self, to: NodeId, msg: &Message) -> bool {
        if !to.is_client() {
            return false;
        }
        match msg {
            Message::Reply { client, .. } | Message::Ack { client, .. } => *client != to,
            Message::EnterClientEcho(echo) => echo.target != to,
            Message::ServerInfo(changes) => changes.is_subset(&self.client(to).state.core.changes),
            _ => false,
        }
    }
}
