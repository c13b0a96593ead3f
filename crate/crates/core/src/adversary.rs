//! Byzantine server behaviour.
//!
//! A corrupt server runs an honest shadow state machine; its strategy then
//! rewrites what the shadow would have sent. Every rewritten emission goes
//! through [`Adversary::validate`], which enforces what signatures make
//! impossible to fake.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ChangeKind, ChangeSet, EchoPayload, Envelope, Message, NodeId, Scope, ServerChange, WriteEntry, WriteSnapshot,
};
use crate::protocol::{ServerState, WriteIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Strategy {
    /// No corrupt servers.
    #[default]
    None,
    /// Never sends anything.
    Silent,
    /// Reports its write history as it stood at `as_of` (in `d`; the start
    /// of the run when unset).
    StaleReplay {
        #[serde(default)]
        as_of: Option<f64>,
    },
    /// Sends each recipient its own version of every write history.
    Equivocate,
    /// Sends every reply and ack twice.
    DoubleReply,
    /// Announces a leave at `leave_at` (in `d`) and keeps replying.
    PostLeaveReply {
        #[serde(default = "default_leave_at")]
        leave_at: f64,
    },
    /// Lies about being joined, and replies even when it is not.
    FakeJoined {
        #[serde(default = "default_flip")]
        flip_probability: f64,
    },
    /// Inflates sequence numbers in every reported history.
    CorruptNum {
        #[serde(default = "default_inflate")]
        inflate: u64,
    },
    /// Enters late, never says anything beyond its enter announcement, and
    /// later departs, using up churn budget.
    ChurnAmplifier,
    /// Claims writes by a node it has never heard of. Breaks the signature
    /// model; exists to exercise validation.
    ForgeWriter,
}

fn default_leave_at() -> f64 {
    5.0
}

fn default_flip() -> f64 {
    0.5
}

fn default_inflate() -> u64 {
    1000
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Silent => "silent",
            Strategy::StaleReplay { .. } => "stale-replay",
            Strategy::Equivocate => "equivocate",
            Strategy::DoubleReply => "double-reply",
            Strategy::PostLeaveReply { .. } => "post-leave-reply",
            Strategy::FakeJoined { .. } => "fake-joined",
            Strategy::CorruptNum { .. } => "corrupt-num",
            Strategy::ChurnAmplifier => "churn-amplifier",
            Strategy::ForgeWriter => "forge-writer",
        }
    }

    /// Corrupt servers are late entrants rather than initial servers.
    pub fn enters_late(&self) -> bool {
        matches!(self, Strategy::ChurnAmplifier)
    }

    pub fn from_name(name: &str) -> Result<Strategy, AdversaryError> {
        if name == "none" || name == "forge-writer" {
            return Ok(if name == "none" { Strategy::None } else { Strategy::ForgeWriter });
        }
        strategy_catalog()
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| AdversaryError::UnknownStrategy(name.to_string()))
    }
}

/// Every model-respecting strategy with default settings.
pub fn strategy_catalog() -> Vec<Strategy> {
    vec![
        Strategy::Silent,
        Strategy::StaleReplay { as_of: None },
        Strategy::Equivocate,
        Strategy::DoubleReply,
        Strategy::PostLeaveReply { leave_at: default_leave_at() },
        Strategy::FakeJoined { flip_probability: default_flip() },
        Strategy::CorruptNum { inflate: default_inflate() },
        Strategy::ChurnAmplifier,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AdversarySpec {
    #[serde(default)]
    pub strategy: Strategy,
    /// Number of corrupt servers; `f` when unset.
    #[serde(default)]
    pub corrupt: Option<u32>,
    /// Mixed into the run seed for the adversary's own randomness.
    #[serde(default)]
    pub seed: u64,
}

impl AdversarySpec {
    pub fn new(strategy: Strategy) -> Self {
        AdversarySpec { strategy, corrupt: None, seed: 0 }
    }

    pub fn count(&self, f: u64) -> u32 {
        match self.strategy {
            Strategy::None => 0,
            _ => self.corrupt.unwrap_or(f as u32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdversaryError {
    #[error("unknown adversary strategy {0:?}")]
    UnknownStrategy(String),
    #[error("model violation by {server}: {reason}")]
    ModelViolation { server: NodeId, reason: String },
}

/// What a strategy may look at when rewriting a step's emissions.
pub struct Ctx<'a> {
    pub now: f64,
    pub me: NodeId,
    pub shadow: &'a ServerState,
    pub trigger: Option<&'a Envelope>,
    /// Servers and clients a broadcast sent now would reach.
    pub servers: &'a [NodeId],
    pub clients: &'a [NodeId],
}

#[derive(Debug, Clone, Default)]
struct Extra {
    frozen: Option<Rc<Vec<WriteEntry>>>,
    pretended: bool,
}

/// Shared state of all corrupt servers.
pub struct Adversary {
    strategy: Strategy,
    d: f64,
    corrupt: Vec<NodeId>,
    /// Records signed by others that some corrupt server has seen, plus
    /// every record a corrupt server could sign itself.
    allowed_changes: ChangeSet,
    seen: WriteIndex,
    seen_writers: FxHashSet<Option<NodeId>>,
    writers_scanned: usize,
    extra: FxHashMap<NodeId, Extra>,
    rng: ChaCha8Rng,
    mask_seed: u64,
}

impl Adversary {
    pub fn new(strategy: Strategy, d: f64, seed: u64) -> Self {
        let mut seen_writers = FxHashSet::default();
        seen_writers.insert(None);
        Adversary {
            strategy,
            d,
            corrupt: Vec::new(),
            allowed_changes: ChangeSet::new(),
            seen: WriteIndex::new(1),
            seen_writers,
            writers_scanned: 0,
            extra: FxHashMap::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask_seed: seed ^ 0x9e37_79b9_7f4a_7c15,
        }
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn corrupt(&self) -> &[NodeId] {
        &self.corrupt
    }

    pub fn is_corrupt(&self, id: NodeId) -> bool {
        self.corrupt.contains(&id)
    }

    pub fn add_corrupt(&mut self, id: NodeId) {
        if !self.is_corrupt(id) {
            self.corrupt.push(id);
            for kind in [ChangeKind::Enter, ChangeKind::Join, ChangeKind::Leave] {
                self.allowed_changes.insert(ServerChange { kind, subject: id });
            }
        }
    }

    /// Times (absolute) at which a corrupt server wants to act unprompted.
    pub fn wake_time(&self) -> Option<f64> {
        match self.strategy {
            Strategy::PostLeaveReply { leave_at } => Some(leave_at * self.d),
            _ => None,
        }
    }

    /// Learns everything carried by a message a corrupt server received.
    pub fn observe(&mut self, env: &Envelope) {
        if let Some(cs) = env.msg.change_sets() {
            self.allowed_changes.union_with(cs);
        }
        match &env.msg {
            Message::Enter => {
                self.allowed_changes.insert(ServerChange { kind: ChangeKind::Enter, subject: env.sender });
            }
            Message::Joined => {
                self.allowed_changes.insert(ServerChange { kind: ChangeKind::Join, subject: env.sender });
            }
            Message::Leave => {
                self.allowed_changes.insert(ServerChange { kind: ChangeKind::Leave, subject: env.sender });
            }
            Message::Update { value: Some(v), ts, client, .. } => {
                self.seen.insert(*client, WriteEntry::new(*v, *ts));
            }
            _ => {}
        }
        if let (Some(snap), Some(r)) = (env.msg.write_snapshot(), env.msg.responder()) {
            self.seen.merge(r, snap);
        }
        self.refresh_writers();
    }

    fn refresh_writers(&mut self) {
        let pairs = self.seen.pairs();
        for e in &pairs[self.writers_scanned..] {
            self.seen_writers.insert(e.ts.writer);
        }
        self.writers_scanned = pairs.len();
    }

    /// Called before the shadow handles an event.
    pub fn before_step(&mut self, now: f64, me: NodeId, shadow: &ServerState) {
        if let Strategy::StaleReplay { as_of } = self.strategy {
            let extra = self.extra.entry(me).or_default();
            if extra.frozen.is_none() && now >= as_of.unwrap_or(0.0) * self.d {
                extra.frozen = Some(shadow.core.own_snapshot().entries);
            }
        }
    }

    /// Called after the shadow handled an event.
    pub fn after_step(&mut self, shadow: &ServerState) {
        self.allowed_changes.union_with(&shadow.core.changes);
    }

    fn mask(&self, recipient: NodeId) -> u64 {
        let mut z = self.mask_seed ^ (recipient.index() as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0x94d0_49bb_1331_11eb);
        (z ^ (z >> 31)) | 1
    }

    /// Rewrites the honest emissions of one step in place.
    pub fn transform(&mut self, ctx: &Ctx<'_>, sends: &mut Vec<(Scope, Message)>) {
        match self.strategy.clone() {
            Strategy::None => {}
            Strategy::Silent => sends.clear(),
            Strategy::StaleReplay { .. } => {
                let frozen = self.extra.get(&ctx.me).and_then(|e| e.frozen.clone()).unwrap_or_default();
                for (_, msg) in sends.iter_mut() {
                    replace_writes(msg, |_| WriteSnapshot { lineage: None, entries: frozen.clone() });
                }
            }
            Strategy::Equivocate => {
                let honest = std::mem::take(sends);
                for (scope, msg) in honest {
                    if msg.write_snapshot().is_none() {
                        sends.push((scope, msg));
                        continue;
                    }
                    let single;
                    let recipients = match scope {
                        Scope::Servers => ctx.servers,
                        Scope::Clients => ctx.clients,
                        Scope::To(q) => {
                            single = [q];
                            &single[..]
                        }
                    };
                    for &q in recipients {
                        let mask = self.mask(q);
                        let mut copy = msg.clone();
                        replace_writes(&mut copy, |w| {
                            WriteSnapshot::detached(
                                w.entries.iter().map(|e| WriteEntry::new(e.value ^ mask, e.ts)).collect(),
                            )
                        });
                        sends.push((Scope::To(q), copy));
                    }
                }
            }
            Strategy::DoubleReply => {
                let honest = std::mem::take(sends);
                for (scope, msg) in honest {
                    let twice = matches!(msg, Message::Reply { .. } | Message::Ack { .. });
                    if twice {
                        sends.push((scope, msg.clone()));
                    }
                    sends.push((scope, msg));
                }
            }
            Strategy::PostLeaveReply { leave_at } => {
                let extra = self.extra.entry(ctx.me).or_default();
                if !extra.pretended && ctx.now >= leave_at * self.d {
                    extra.pretended = true;
                    let mut changes = (*ctx.shadow.core.changes).clone();
                    changes.insert(ServerChange { kind: ChangeKind::Leave, subject: ctx.me });
                    sends.insert(0, (Scope::Servers, Message::Leave));
                    sends.insert(1, (Scope::Clients, Message::ServerInfo(Rc::new(changes))));
                }
            }
            Strategy::FakeJoined { flip_probability } => {
                for (_, msg) in sends.iter_mut() {
                    if let Message::EnterEcho(e) | Message::EnterClientEcho(e) = msg {
                        if self.rng.random::<f64>() < flip_probability {
                            let mut lie = (**e).clone();
                            lie.joined = !lie.joined;
                            *e = Rc::new(lie);
                        }
                    }
                }
                if !ctx.shadow.is_joined() {
                    match ctx.trigger.map(|env| &env.msg) {
                        Some(Message::Query { tag, client }) if client.is_client() => {
                            sends.push((
                                Scope::Clients,
                                Message::Reply {
                                    writes: ctx.shadow.core.own_snapshot(),
                                    tag: *tag,
                                    client: *client,
                                    responder: ctx.me,
                                },
                            ));
                        }
                        Some(Message::Update { tag, client, .. }) if client.is_client() => {
                            sends
                                .push((Scope::Clients, Message::Ack { tag: *tag, client: *client, responder: ctx.me }));
                        }
                        _ => {}
                    }
                }
            }
            Strategy::CorruptNum { inflate } => {
                for (_, msg) in sends.iter_mut() {
                    replace_writes(msg, |w| {
                        WriteSnapshot::detached(
                            w.entries
                                .iter()
                                .map(|e| {
                                    let mut ts = e.ts;
                                    ts.num += inflate;
                                    WriteEntry::new(e.value, ts)
                                })
                                .collect(),
                        )
                    });
                }
            }
            Strategy::ChurnAmplifier => sends.retain(|(_, m)| matches!(m, Message::Enter)),
            Strategy::ForgeWriter => {
                let forged =
                    WriteEntry::new(0xdead, crate::model::Timestamp::new(9, NodeId::client(u32::MAX - ctx.me.index())));
                for (_, msg) in sends.iter_mut() {
                    replace_writes(msg, |w| {
                        let mut entries = (*w.entries).clone();
                        entries.push(forged);
                        WriteSnapshot::detached(entries)
                    });
                }
            }
        }
        // Altered or not, a corrupt server's history is no longer a trusted prefix.
        for (_, msg) in sends.iter_mut() {
            replace_writes(msg, |w| WriteSnapshot { lineage: None, entries: w.entries.clone() });
        }
    }

    /// Rejects any emission a signature scheme would not allow.
    pub fn validate(&self, me: NodeId, sends: &[(Scope, Message)]) -> Result<(), AdversaryError> {
        let violation = |reason: String| Err(AdversaryError::ModelViolation { server: me, reason });
        for (_, msg) in sends {
            if let Some(r) = msg.responder() {
                if r != me {
                    return violation(format!("{} claims responder {r}", msg.kind().name()));
                }
            }
            if let Message::Query { client, .. } | Message::Update { client, .. } = msg {
                if *client != me {
                    return violation(format!("{} on behalf of {client}", msg.kind().name()));
                }
            }
            if let Some(cs) = msg.change_sets() {
                if !cs.is_subset(&self.allowed_changes) {
                    return violation(format!("{} carries unseen membership records", msg.kind().name()));
                }
            }
            if let Some(w) = msg.write_snapshot() {
                if w.entries.len() > self.seen.pairs().len() {
                    return violation(format!(
                        "{} reports {} writes, only {} seen",
                        msg.kind().name(),
                        w.entries.len(),
                        self.seen.pairs().len()
                    ));
                }
                if let Some(e) = w.entries.iter().find(|e| !self.seen_writers.contains(&e.ts.writer)) {
                    return violation(format!("{} attributes a write to unseen writer {}", msg.kind().name(), e.ts));
                }
            }
        }
        Ok(())
    }
}

fn replace_writes(msg: &mut Message, f: impl Fn(&WriteSnapshot) -> WriteSnapshot) {
    match msg {
        Message::EnterEcho(e) | Message::EnterClientEcho(e) => {
            let mut echo: EchoPayload = (**e).clone();
            echo.writes = f(&echo.writes);
            *e = Rc::new(echo);
        }
        Message::Reply { writes, .. } | Message::UpdateEcho { writes, .. } => *writes = f(writes),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Timestamp;
    use crate::params::Params;

    fn params() -> Params<f64> {
        Params::new(0.01, 1, 10, Some(0.82), Some(0.84))
    }

    fn setup(strategy: Strategy) -> (Adversary, ServerState) {
        let servers: Vec<NodeId> = (0..10).map(NodeId::server).collect();
        let me = NodeId::server(0);
        let mut adv = Adversary::new(strategy, 1.0, 3);
        adv.add_corrupt(me);
        let shadow = ServerState::initial(me, &params(), &servers);
        adv.after_step(&shadow);
        (adv, shadow)
    }

    fn reply(me: NodeId, entries: Vec<WriteEntry>) -> (Scope, Message) {
        (
            Scope::Clients,
            Message::Reply {
                writes: WriteSnapshot::detached(entries),
                tag: 1,
                client: NodeId::client(20),
                responder: me,
            },
        )
    }

    fn learn(adv: &mut Adversary, entry: WriteEntry) {
        let c = entry.ts.writer.unwrap();
        let env = Envelope {
            sender: c,
            fifo_seq: 0,
            sent_at: 0.0,
            scope: Scope::Servers,
            msg: Message::Update { value: Some(entry.value), ts: entry.ts, tag: 1, client: c },
        };
        adv.observe(&env);
    }

    #[test]
    fn catalog_names_are_unique_and_resolvable() {
        let names: Vec<&str> = strategy_catalog().iter().map(Strategy::name).collect();
        assert_eq!(names.len(), 8);
        for n in &names {
            assert_eq!(Strategy::from_name(n).unwrap().name(), *n);
        }
        assert!(matches!(Strategy::from_name("teleport"), Err(AdversaryError::UnknownStrategy(_))));
    }

    #[test]
    fn stale_subsets_pass_validation() {
        let (mut adv, _) = setup(Strategy::StaleReplay { as_of: None });
        let e = WriteEntry::new(4, Timestamp::new(1, NodeId::client(20)));
        learn(&mut adv, e);
        let me = NodeId::server(0);
        assert!(adv.validate(me, &[reply(me, vec![e])]).is_ok());
        assert!(adv.validate(me, &[reply(me, vec![])]).is_ok());
    }

    #[test]
    fn forged_writer_is_rejected() {
        let (mut adv, _) = setup(Strategy::ForgeWriter);
        learn(&mut adv, WriteEntry::new(4, Timestamp::new(1, NodeId::client(20))));
        let me = NodeId::server(0);
        let forged = WriteEntry::new(4, Timestamp::new(9, NodeId::client(999)));
        assert!(matches!(adv.validate(me, &[reply(me, vec![forged])]), Err(AdversaryError::ModelViolation { .. })));
    }

    #[test]
    fn modified_values_with_known_writer_are_legal() {
        let (mut adv, _) = setup(Strategy::Equivocate);
        let e = WriteEntry::new(4, Timestamp::new(5, NodeId::client(1)));
        learn(&mut adv, e);
        let me = NodeId::server(0);
        let changed = WriteEntry::new(77, Timestamp::new(5, NodeId::client(1)));
        assert!(adv.validate(me, &[reply(me, vec![changed])]).is_ok());
        assert!(adv.validate(me, &[reply(me, vec![changed, e])]).is_err(), "more entries than seen");
    }

    #[test]
    fn impersonation_and_unseen_records_are_rejected() {
        let (adv, _) = setup(Strategy::Silent);
        let me = NodeId::server(0);
        assert!(adv.validate(me, &[reply(NodeId::server(3), vec![])]).is_err());
        let mut cs = ChangeSet::new();
        cs.insert(ServerChange { kind: ChangeKind::Leave, subject: NodeId::server(3) });
        assert!(adv.validate(me, &[(Scope::Clients, Message::ServerInfo(Rc::new(cs)))]).is_err());
        let mut own = ChangeSet::new();
        own.insert(ServerChange { kind: ChangeKind::Leave, subject: me });
        assert!(adv.validate(me, &[(Scope::Clients, Message::ServerInfo(Rc::new(own)))]).is_ok());
    }

    #[test]
    fn equivocation_sends_differing_unicasts() {
        let (mut adv, shadow) = setup(Strategy::Equivocate);
        let me = NodeId::server(0);
        let e = WriteEntry::new(4, Timestamp::new(5, NodeId::client(1)));
        learn(&mut adv, e);
        let clients = [NodeId::client(20), NodeId::client(21)];
        let ctx = Ctx { now: 0.0, me, shadow: &shadow, trigger: None, servers: &[], clients: &clients };
        let mut sends = vec![reply(me, vec![e])];
        adv.transform(&ctx, &mut sends);
        assert_eq!(sends.len(), 2);
        let values: Vec<u64> = sends.iter().map(|(_, m)| m.write_snapshot().unwrap().entries[0].value).collect();
        assert_ne!(values[0], values[1]);
        assert!(values.iter().all(|&v| v != 4));
        assert!(adv.validate(me, &sends).is_ok());
    }

    #[test]
    fn double_reply_duplicates_acks() {
        let (mut adv, shadow) = setup(Strategy::DoubleReply);
        let me = NodeId::server(0);
        let ctx = Ctx { now: 0.0, me, shadow: &shadow, trigger: None, servers: &[], clients: &[] };
        let ack = Message::Ack { tag: 1, client: NodeId::client(20), responder: me };
        let mut sends = vec![
            (Scope::Clients, ack.clone()),
            (Scope::Servers, Message::UpdateEcho { writes: WriteSnapshot::empty(), responder: me }),
        ];
        adv.transform(&ctx, &mut sends);
        assert_eq!(sends.iter().filter(|(_, m)| *m == ack).count(), 2);
    }
}
