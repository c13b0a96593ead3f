//! Shared vocabulary: node identities, timestamps, membership records,
//! write histories, message envelopes and operation records.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Server,
    Client,
}

/// Globally unique node identity. Indices are never reused, and the kind
/// is visible to everyone (the built-in client test).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    index: u32,
    kind: NodeKind,
}

impl NodeId {
    pub const fn server(index: u32) -> Self {
        NodeId { index, kind: NodeKind::Server }
    }

    pub const fn client(index: u32) -> Self {
        NodeId { index, kind: NodeKind::Client }
    }

    pub fn index(self) -> u32 {
        self.index
    }

    pub fn kind(self) -> NodeKind {
        self.kind
    }

    pub fn is_client(self) -> bool {
        self.kind == NodeKind::Client
    }

    pub fn is_server(self) -> bool {
        self.kind == NodeKind::Server
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.kind {
            NodeKind::Server => 's',
            NodeKind::Client => 'c',
        };
        write!(f, "{prefix}{}", self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed node id {0:?}")]
pub struct NodeIdParseError(String);

impl FromStr for NodeId {
    type Err = NodeIdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || NodeIdParseError(s.to_string());
        let (kind, digits) = match s.split_at_checked(1).ok_or_else(err)? {
            ("s", d) => (NodeKind::Server, d),
            ("c", d) => (NodeKind::Client, d),
            _ => return Err(err()),
        };
        let index = digits.parse().map_err(|_| err())?;
        Ok(NodeId { index, kind })
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Register values. `None` stands for the initial value ⊥.
pub type Value = u64;

/// `(num, w_id)` with `w_id = None` for ⊥, which sorts below every id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(into = "(u64, Option<NodeId>)", from = "(u64, Option<NodeId>)")]
pub struct Timestamp {
    pub num: u64,
    pub writer: Option<NodeId>,
}

impl Timestamp {
    pub const INITIAL: Timestamp = Timestamp { num: 0, writer: None };

    pub fn new(num: u64, writer: NodeId) -> Self {
        Timestamp { num, writer: Some(writer) }
    }
}

impl From<Timestamp> for (u64, Option<NodeId>) {
    fn from(ts: Timestamp) -> Self {
        (ts.num, ts.writer)
    }
}

impl From<(u64, Option<NodeId>)> for Timestamp {
    fn from((num, writer): (u64, Option<NodeId>)) -> Self {
        Timestamp { num, writer }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.writer {
            Some(w) => write!(f, "({}, {w})", self.num),
            None => write!(f, "({}, ⊥)", self.num),
        }
    }
}

pub fn ts_less(a: &Timestamp, b: &Timestamp) -> bool {
    a < b
}

/// A `(value, timestamp)` pair. Ordered by timestamp, then value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WriteEntry {
    pub ts: Timestamp,
    pub value: Value,
}

impl WriteEntry {
    pub fn new(value: Value, ts: Timestamp) -> Self {
        WriteEntry { ts, value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Enter,
    Join,
    Leave,
}

/// A self-signed membership record about `subject`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ServerChange {
    pub kind: ChangeKind,
    pub subject: NodeId,
}

impl ServerChange {
    pub fn signer(&self) -> NodeId {
        self.subject
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
struct Bits(Vec<u64>);

impl Bits {
    fn get(&self, i: u32) -> bool {
        let (w, b) = (i as usize / 64, i % 64);
        self.0.get(w).is_some_and(|word| word >> b & 1 == 1)
    }

    fn set(&mut self, i: u32) -> bool {
        let (w, b) = (i as usize / 64, i % 64);
        if self.0.len() <= w {
            self.0.resize(w + 1, 0);
        }
        let before = self.0[w];
        self.0[w] |= 1 << b;
        before != self.0[w]
    }

    fn union(&mut self, other: &Bits) -> bool {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), 0);
        }
        let mut changed = false;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            let merged = *a | *b;
            changed |= merged != *a;
            *a = merged;
        }
        changed
    }

    fn is_subset(&self, other: &Bits) -> bool {
        self.0.iter().enumerate().all(|(i, w)| w & !other.0.get(i).copied().unwrap_or(0) == 0)
    }

    fn count_minus(&self, minus: &Bits) -> usize {
        self.0.iter().enumerate().map(|(i, w)| (w & !minus.0.get(i).copied().unwrap_or(0)).count_ones() as usize).sum()
    }

    fn ones(&self) -> impl Iterator<Item = u32> + '_ {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, &w)| (0..64).filter(move |b| w >> b & 1 == 1).map(move |b| (i * 64 + b) as u32))
    }
}

/// A set of [`ServerChange`] records, stored as one bitset per kind over
/// server indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ChangeSet {
    enters: Bits,
    joins: Bits,
    leaves: Bits,
}

impl ChangeSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// `{enter(q), join(q) | q in initial}`.
    pub fn bootstrap(initial: impl IntoIterator<Item = NodeId>) -> Self {
        let mut set = ChangeSet::new();
        for q in initial {
            set.insert(ServerChange { kind: ChangeKind::Enter, subject: q });
            set.insert(ServerChange { kind: ChangeKind::Join, subject: q });
        }
        set
    }

    fn bits(&self, kind: ChangeKind) -> &Bits {
        match kind {
            ChangeKind::Enter => &self.enters,
            ChangeKind::Join => &self.joins,
            ChangeKind::Leave => &self.leaves,
        }
    }

    /// Returns whether the record was new. Only server subjects are stored.
    pub fn insert(&mut self, change: ServerChange) -> bool {
        debug_assert!(change.subject.is_server());
        let i = change.subject.index();
        match change.kind {
            ChangeKind::Enter => self.enters.set(i),
            ChangeKind::Join => self.joins.set(i),
            ChangeKind::Leave => self.leaves.set(i),
        }
    }

    pub fn contains(&self, change: ServerChange) -> bool {
        self.bits(change.kind).get(change.subject.index())
    }

    pub fn has(&self, kind: ChangeKind, subject: NodeId) -> bool {
        self.contains(ServerChange { kind, subject })
    }

    pub fn union_with(&mut self, other: &ChangeSet) -> bool {
        let a = self.enters.union(&other.enters);
        let b = self.joins.union(&other.joins);
        let c = self.leaves.union(&other.leaves);
        a | b | c
    }

    pub fn is_subset(&self, other: &ChangeSet) -> bool {
        self.enters.is_subset(&other.enters)
            && self.joins.is_subset(&other.joins)
            && self.leaves.is_subset(&other.leaves)
    }

    pub fn has_left(&self, q: NodeId) -> bool {
        q.is_server() && self.leaves.get(q.index())
    }

    /// `|{q | enter(q) ∈ C ∧ leave(q) ∉ C}|`
    pub fn present_count(&self) -> usize {
        self.enters.count_minus(&self.leaves)
    }

    /// `|{q | join(q) ∈ C ∧ leave(q) ∉ C}|`
    pub fn member_count(&self) -> usize {
        self.joins.count_minus(&self.leaves)
    }

    pub fn present(&self) -> Vec<NodeId> {
        self.enters.ones().filter(|&i| !self.leaves.get(i)).map(NodeId::server).collect()
    }

    pub fn members(&self) -> Vec<NodeId> {
        self.joins.ones().filter(|&i| !self.leaves.get(i)).map(NodeId::server).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = ServerChange> + '_ {
        [ChangeKind::Enter, ChangeKind::Join, ChangeKind::Leave].into_iter().flat_map(move |kind| {
            self.bits(kind).ones().map(move |i| ServerChange { kind, subject: NodeId::server(i) })
        })
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.iter().next().is_none()
    }

    /// Keeps only records also in `keep`.
    pub fn retain_within(&self, keep: &ChangeSet) -> ChangeSet {
        let mut out = ChangeSet::new();
        for c in self.iter().filter(|c| keep.contains(*c)) {
            out.insert(c);
        }
        out
    }
}

impl FromIterator<ServerChange> for ChangeSet {
    fn from_iter<I: IntoIterator<Item = ServerChange>>(iter: I) -> Self {
        let mut set = ChangeSet::new();
        for c in iter {
            set.insert(c);
        }
        set
    }
}

/// Per-node write histories in plain form: the reference representation
/// used for `derive_valid_val` and for export.
pub type KnownWrites = BTreeMap<NodeId, BTreeSet<WriteEntry>>;

/// The latest pair attested by at least `f + 1` distinct keys of `k`.
///
/// Returns `None` for `(⊥, (0, ⊥))`. Ties on timestamp break toward the
/// larger value.
pub fn derive_valid_val(k: &KnownWrites, f: u64) -> Option<WriteEntry> {
    derive_with_threshold(k, f + 1)
}

pub fn derive_with_threshold(k: &KnownWrites, threshold: u64) -> Option<WriteEntry> {
    let mut support: BTreeMap<WriteEntry, u64> = BTreeMap::new();
    for set in k.values() {
        for entry in set {
            *support.entry(*entry).or_default() += 1;
        }
    }
    support.into_iter().filter(|(_, n)| *n >= threshold).map(|(e, _)| e).max()
}

/// A write-history payload. `lineage` names the correct node whose
/// append-only log this is a prefix of; altered payloads carry `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteSnapshot {
    pub lineage: Option<NodeId>,
    pub entries: Rc<Vec<WriteEntry>>,
}

impl WriteSnapshot {
    pub fn empty() -> Self {
        WriteSnapshot { lineage: None, entries: Rc::new(Vec::new()) }
    }

    pub fn detached(entries: Vec<WriteEntry>) -> Self {
        WriteSnapshot { lineage: None, entries: Rc::new(entries) }
    }
}

/// Where a message goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Servers,
    Clients,
    To(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EchoPayload {
    pub changes: Rc<ChangeSet>,
    pub writes: WriteSnapshot,
    pub joined: bool,
    pub target: NodeId,
    pub responder: NodeId,
}

/// Message bodies. Membership announcements (`Enter`, `EnterClient`,
/// `Joined`, `Leave`) concern their sender, whose identity the network
/// attaches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Enter,
    EnterClient,
    EnterEcho(Rc<EchoPayload>),
    EnterClientEcho(Rc<EchoPayload>),
    Joined,
    JoinedEcho { subject: NodeId, responder: NodeId },
    Leave,
    LeaveEcho { subject: NodeId, responder: NodeId },
    ServerInfo(Rc<ChangeSet>),
    Query { tag: u64, client: NodeId },
    Reply { writes: WriteSnapshot, tag: u64, client: NodeId, responder: NodeId },
    Update { value: Option<Value>, ts: Timestamp, tag: u64, client: NodeId },
    Ack { tag: u64, client: NodeId, responder: NodeId },
    UpdateEcho { writes: WriteSnapshot, responder: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Enter,
    EnterEcho,
    EnterClient,
    EnterClientEcho,
    Joined,
    JoinedEcho,
    Leave,
    LeaveEcho,
    ServerInfo,
    Query,
    Reply,
    Update,
    Ack,
    UpdateEcho,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Enter => "enter",
            MessageKind::EnterEcho => "enter-echo",
            MessageKind::EnterClient => "enter-client",
            MessageKind::EnterClientEcho => "enter-client-echo",
            MessageKind::Joined => "joined",
            MessageKind::JoinedEcho => "joined-echo",
            MessageKind::Leave => "leave",
            MessageKind::LeaveEcho => "leave-echo",
            MessageKind::ServerInfo => "server-info",
            MessageKind::Query => "query",
            MessageKind::Reply => "reply",
            MessageKind::Update => "update",
            MessageKind::Ack => "ack",
            MessageKind::UpdateEcho => "update-echo",
        }
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Enter => MessageKind::Enter,
            Message::EnterClient => MessageKind::EnterClient,
            Message::EnterEcho(_) => MessageKind::EnterEcho,
            Message::EnterClientEcho(_) => MessageKind::EnterClientEcho,
            Message::Joined => MessageKind::Joined,
            Message::JoinedEcho { .. } => MessageKind::JoinedEcho,
            Message::Leave => MessageKind::Leave,
            Message::LeaveEcho { .. } => MessageKind::LeaveEcho,
            Message::ServerInfo(_) => MessageKind::ServerInfo,
            Message::Query { .. } => MessageKind::Query,
            Message::Reply { .. } => MessageKind::Reply,
            Message::Update { .. } => MessageKind::Update,
            Message::Ack { .. } => MessageKind::Ack,
            Message::UpdateEcho { .. } => MessageKind::UpdateEcho,
        }
    }

    /// The responder field, for kinds that carry one.
    pub fn responder(&self) -> Option<NodeId> {
        match self {
            Message::EnterEcho(p) | Message::EnterClientEcho(p) => Some(p.responder),
            Message::JoinedEcho { responder, .. }
            | Message::LeaveEcho { responder, .. }
            | Message::Reply { responder, .. }
            | Message::Ack { responder, .. }
            | Message::UpdateEcho { responder, .. } => Some(*responder),
            _ => None,
        }
    }

    pub fn change_sets(&self) -> Option<&ChangeSet> {
        match self {
            Message::EnterEcho(p) | Message::EnterClientEcho(p) => Some(&p.changes),
            Message::ServerInfo(c) => Some(c),
            _ => None,
        }
    }

    pub fn write_snapshot(&self) -> Option<&WriteSnapshot> {
        match self {
            Message::EnterEcho(p) | Message::EnterClientEcho(p) => Some(&p.writes),
            Message::Reply { writes, .. } | Message::UpdateEcho { writes, .. } => Some(writes),
            _ => None,
        }
    }
}

/// A message in flight. `sender` is attached by the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub sender: NodeId,
    pub fifo_seq: u64,
    pub sent_at: f64,
    pub scope: Scope,
    pub msg: Message,
}

impl Envelope {
    pub fn kind(&self) -> MessageKind {
        self.msg.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Read,
    Write,
}

/// One read or write as seen by the checker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub op_id: u64,
    pub client: NodeId,
    pub kind: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub written_value: Option<Value>,
    /// For completed reads, the returned value (`None` is ⊥).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub returned_value: Option<Value>,
    pub invoke_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_witness: Option<Timestamp>,
}

impl OpRecord {
    pub fn is_complete(&self) -> bool {
        self.response_time.is_some()
    }

    /// The op's value in the register's sense: the written value for
    /// writes, the returned one for reads.
    pub fn value(&self) -> Option<Value> {
        match self.kind {
            OpKind::Write => self.written_value,
            OpKind::Read => self.returned_value,
        }
    }

    /// Real-time precedence: `self` responded before `other` was invoked.
    pub fn precedes(&self, other: &OpRecord) -> bool {
        self.response_time.is_some_and(|r| r < other.invoke_time)
    }
}

/// Total order on simulation times for sorting.
pub fn cmp_time(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}
