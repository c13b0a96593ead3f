//! Knowledge shared by servers and clients: membership records, write
//! histories with their support index, the join procedure, value adoption
//! and duplicate suppression.

use std::rc::Rc;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::model::{
    ChangeKind, ChangeSet, KnownWrites, MessageKind, NodeId, ServerChange, Timestamp, Value, WriteEntry, WriteSnapshot,
};

#[derive(Debug, Clone, Default)]
struct KeyEntries {
    bits: Vec<u64>,
    len: usize,
    /// `(lineage, n)`: the first `n` entries of that log are already in.
    cursor: Option<(NodeId, usize)>,
}

/// `Known_Writes` plus an incremental count of how many keys attest each
/// pair, so the best pair with enough support is available in O(1).
#[derive(Debug, Clone)]
pub struct WriteIndex {
    threshold: u32,
    ids: FxHashMap<WriteEntry, u32>,
    pairs: Vec<WriteEntry>,
    support: Vec<u32>,
    keys: FxHashMap<NodeId, KeyEntries>,
    best: Option<WriteEntry>,
}

impl WriteIndex {
    pub fn new(threshold: u32) -> Self {
        WriteIndex {
            threshold: threshold.max(1),
            ids: FxHashMap::default(),
            pairs: Vec::new(),
            support: Vec::new(),
            keys: FxHashMap::default(),
            best: None,
        }
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    fn intern(&mut self, entry: WriteEntry) -> u32 {
        if let Some(&id) = self.ids.get(&entry) {
            return id;
        }
        let id = self.pairs.len() as u32;
        self.ids.insert(entry, id);
        self.pairs.push(entry);
        self.support.push(0);
        id
    }

    /// Adds `entry` under `key`; returns whether it was new there.
    pub fn insert(&mut self, key: NodeId, entry: WriteEntry) -> bool {
        let id = self.intern(entry);
        let slot = self.keys.entry(key).or_default();
        let (w, b) = (id as usize / 64, id % 64);
        if slot.bits.len() <= w {
            slot.bits.resize(w + 1, 0);
        }
        if slot.bits[w] >> b & 1 == 1 {
            return false;
        }
        slot.bits[w] |= 1 << b;
        slot.len += 1;
        let count = &mut self.support[id as usize];
        *count += 1;
        if *count == self.threshold && self.best.is_none_or(|best| entry > best) {
            self.best = Some(entry);
        }
        true
    }

    /// `Known_Writes[key] := Known_Writes[key] ∪ snapshot`
    pub fn merge(&mut self, key: NodeId, snapshot: &WriteSnapshot) {
        let entries = &snapshot.entries;
        let start = match (snapshot.lineage, self.keys.get(&key).and_then(|k| k.cursor)) {
            (Some(l), Some((cl, n))) if l == cl && n <= entries.len() => n,
            _ => 0,
        };
        for &entry in &entries[start..] {
            self.insert(key, entry);
        }
        if let Some(l) = snapshot.lineage {
            self.keys.entry(key).or_default().cursor = Some((l, entries.len()));
        }
    }

    /// The latest pair with enough support, `None` meaning `(⊥, (0, ⊥))`.
    pub fn valid_val(&self) -> Option<WriteEntry> {
        self.best
    }

    pub fn entries_of(&self, key: NodeId) -> Vec<WriteEntry> {
        let Some(slot) = self.keys.get(&key) else { return Vec::new() };
        let mut out: Vec<WriteEntry> = slot
            .bits
            .iter()
            .enumerate()
            .flat_map(|(w, &word)| (0..64).filter(move |b| word >> b & 1 == 1).map(move |b| w * 64 + b))
            .map(|id| self.pairs[id])
            .collect();
        out.sort();
        out
    }

    pub fn key_len(&self, key: NodeId) -> usize {
        self.keys.get(&key).map_or(0, |k| k.len)
    }

    /// Every distinct pair ever inserted under any key.
    pub fn pairs(&self) -> &[WriteEntry] {
        &self.pairs
    }

    pub fn to_known_writes(&self) -> KnownWrites {
        let mut keys: Vec<NodeId> = self.keys.keys().copied().collect();
        keys.sort();
        keys.into_iter().map(|k| (k, self.entries_of(k).into_iter().collect())).collect()
    }
}

/// How a node decides it has joined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JoinRule {
    /// After more than `f` joined echoes, wait for `gamma · |Present|` echoes.
    Quorum { gamma: f64 },
    /// Join on the first echo flagged joined, whatever the system size.
    FirstJoinedEcho,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Receipt {
    kind: MessageKind,
    subject: NodeId,
    tag: u64,
    responder: NodeId,
}

/// State common to servers and clients.
#[derive(Debug, Clone)]
pub struct Core {
    pub me: NodeId,
    pub f: u64,
    join_rule: JoinRule,
    pub changes: Rc<ChangeSet>,
    pub join_bound: f64,
    pub enter_echo_counter: u64,
    pub enter_echo_from_joined_counter: u64,
    pub is_joined: bool,
    pub val: Option<Value>,
    pub ts: Timestamp,
    pub writes: WriteIndex,
    own_log: Rc<Vec<WriteEntry>>,
    receipts: FxHashSet<Receipt>,
}

impl Core {
    pub fn new(me: NodeId, f: u64, join_rule: JoinRule, support_threshold: u32) -> Self {
        Core {
            me,
            f,
            join_rule,
            changes: Rc::new(ChangeSet::new()),
            join_bound: 0.0,
            enter_echo_counter: 0,
            enter_echo_from_joined_counter: 0,
            is_joined: false,
            val: None,
            ts: Timestamp::INITIAL,
            writes: WriteIndex::new(support_threshold),
            own_log: Rc::new(Vec::new()),
            receipts: FxHashSet::default(),
        }
    }

    /// Members of the initial configuration start joined and know it.
    pub fn bootstrap(&mut self, initial_servers: &[NodeId]) {
        self.changes = Rc::new(ChangeSet::bootstrap(initial_servers.iter().copied()));
        self.is_joined = true;
    }

    pub fn add_change(&mut self, kind: ChangeKind, subject: NodeId) {
        let change = ServerChange { kind, subject };
        if !self.changes.contains(change) {
            Rc::make_mut(&mut self.changes).insert(change);
        }
    }

    pub fn union_changes(&mut self, other: &ChangeSet) {
        if !other.is_subset(&self.changes) {
            Rc::make_mut(&mut self.changes).union_with(other);
        }
    }

    pub fn present_count(&self) -> usize {
        self.changes.present_count()
    }

    pub fn member_count(&self) -> usize {
        self.changes.member_count()
    }

    /// `Known_Writes[self]` as a sendable snapshot.
    pub fn own_snapshot(&self) -> WriteSnapshot {
        WriteSnapshot { lineage: Some(self.me), entries: self.own_log.clone() }
    }

    /// Length of `Known_Writes[self]`.
    pub fn own_len(&self) -> usize {
        self.own_log.len()
    }

    /// `Known_Writes[self] := Known_Writes[self] ∪ {entry}`
    pub fn record_own(&mut self, entry: WriteEntry) {
        if self.writes.insert(self.me, entry) {
            Rc::make_mut(&mut self.own_log).push(entry);
        }
    }

    /// Replaces the register contents with `(value, ts)`.
    pub fn adopt(&mut self, value: Value, ts: Timestamp) {
        debug_assert!(ts > self.ts, "timestamps never regress");
        self.val = Some(value);
        self.ts = ts;
        self.record_own(WriteEntry::new(value, ts));
    }

    /// Duplicate and departed-sender filter. Marks the receipt when it
    /// passes.
    pub fn is_valid_message(&mut self, kind: MessageKind, subject: NodeId, tag: u64, responder: NodeId) -> bool {
        !self.changes.has_left(responder) && self.receipts.insert(Receipt { kind, subject, tag, responder })
    }

    /// Counts one echo addressed to this node; returns true on the step that
    /// completes the join.
    pub fn join_protocol(&mut self, j: bool) -> bool {
        self.enter_echo_counter += 1;
        if j && self.join_bound == 0.0 {
            self.enter_echo_from_joined_counter += 1;
            match self.join_rule {
                JoinRule::Quorum { gamma } => {
                    if self.enter_echo_from_joined_counter > self.f {
                        self.join_bound = gamma * self.present_count() as f64;
                    }
                }
                JoinRule::FirstJoinedEcho => self.join_bound = 1.0,
            }
        }
        if self.enter_echo_counter as f64 >= self.join_bound && self.join_bound > 0.0 {
            self.is_joined = true;
            return true;
        }
        false
    }

    /// Adopts `valid_val` if it is newer than the register.
    pub fn set_value_timestamp(&mut self) {
        if let Some(vv) = self.writes.valid_val() {
            if vv.ts > self.ts {
                self.adopt(vv.value, vv.ts);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::derive_with_threshold;
    use proptest::prelude::*;

    fn s(i: u32) -> NodeId {
        NodeId::server(i)
    }

    fn entry(v: Value, n: u64, w: u32) -> WriteEntry {
        WriteEntry::new(v, Timestamp::new(n, NodeId::client(w)))
    }

    #[test]
    fn delta_merge_matches_full_merge() {
        let log: Vec<WriteEntry> = (1..=5).map(|n| entry(n, n, 9)).collect();
        let mut idx = WriteIndex::new(2);
        for len in [2, 2, 4, 5] {
            let snap = WriteSnapshot { lineage: Some(s(1)), entries: Rc::new(log[..len].to_vec()) };
            idx.merge(s(1), &snap);
        }
        assert_eq!(idx.entries_of(s(1)), log);
        assert_eq!(idx.valid_val(), None);
        idx.merge(s(2), &WriteSnapshot::detached(log[..3].to_vec()));
        assert_eq!(idx.valid_val(), Some(log[2]));
    }

    #[test]
    fn join_needs_more_than_f_joined_echoes() {
        let mut core = Core::new(s(20), 1, JoinRule::Quorum { gamma: 0.82 }, 2);
        core.union_changes(&ChangeSet::bootstrap((0..10).map(s)));
        assert!(!core.join_protocol(true));
        for _ in 0..20 {
            assert!(!core.join_protocol(false));
        }
        assert_eq!(core.join_bound, 0.0);
    }

    #[test]
    fn join_bound_is_fractional() {
        let mut core = Core::new(s(20), 1, JoinRule::Quorum { gamma: 0.82 }, 2);
        core.union_changes(&ChangeSet::bootstrap((0..10).map(s)));
        assert!(!core.join_protocol(true));
        assert!(!core.join_protocol(true));
        assert!((core.join_bound - 8.2).abs() < 1e-12);
        let mut joined_at = None;
        for k in 3..=12 {
            if core.join_protocol(false) {
                joined_at = Some(k);
                break;
            }
        }
        assert_eq!(joined_at, Some(9));
    }

    #[test]
    fn set_value_timestamp_never_regresses() {
        let mut core = Core::new(s(0), 1, JoinRule::Quorum { gamma: 0.8 }, 2);
        core.set_value_timestamp();
        assert_eq!((core.val, core.ts), (None, Timestamp::INITIAL));

        let u = entry(11, 4, 2);
        core.adopt(3, Timestamp::new(3, NodeId::client(1)));
        core.writes.insert(s(5), u);
        core.writes.insert(s(6), u);
        core.set_value_timestamp();
        assert_eq!((core.val, core.ts), (Some(11), u.ts));

        let mut ahead = Core::new(s(0), 1, JoinRule::Quorum { gamma: 0.8 }, 2);
        ahead.adopt(7, Timestamp::new(5, NodeId::client(1)));
        ahead.writes.insert(s(5), u);
        ahead.writes.insert(s(6), u);
        ahead.set_value_timestamp();
        assert_eq!(ahead.ts, Timestamp::new(5, NodeId::client(1)));
    }

    #[test]
    fn receipts_dedupe_per_tag_and_respect_leaves() {
        let mut core = Core::new(NodeId::client(1), 1, JoinRule::Quorum { gamma: 0.8 }, 2);
        let c1 = NodeId::client(1);
        assert!(core.is_valid_message(MessageKind::Ack, c1, 7, s(3)));
        assert!(!core.is_valid_message(MessageKind::Ack, c1, 7, s(3)));
        assert!(core.is_valid_message(MessageKind::Ack, c1, 8, s(3)));
        core.add_change(ChangeKind::Leave, s(3));
        assert!(!core.is_valid_message(MessageKind::Reply, c1, 9, s(3)));
    }

    fn arb_ops() -> impl Strategy<Value = Vec<(u32, u64, u64, u32)>> {
        proptest::collection::vec((0u32..6, 0u64..3, 0u64..4, 0u32..3), 0..40)
    }

    proptest! {
        #[test]
        fn incremental_support_matches_scan(ops in arb_ops(), threshold in 1u32..4) {
            let mut idx = WriteIndex::new(threshold);
            for (key, value, num, writer) in ops {
                idx.insert(s(key), entry(value, num, writer));
                let scan = derive_with_threshold(&idx.to_known_writes(), threshold as u64);
                prop_assert_eq!(idx.valid_val(), scan);
            }
        }

        #[test]
        fn prefix_merges_equal_set_union(cuts in proptest::collection::vec(0usize..12, 1..6)) {
            let log: Vec<WriteEntry> = (0..12).map(|n| entry(n, n, 1)).collect();
            let mut sorted = cuts.clone();
            sorted.sort();
            let mut idx = WriteIndex::new(1);
            for &c in &sorted {
                idx.merge(s(0), &WriteSnapshot { lineage: Some(s(0)), entries: Rc::new(log[..c].to_vec()) });
            }
            let max = *sorted.last().unwrap();
            prop_assert_eq!(idx.entries_of(s(0)), log[..max].to_vec());
        }
    }
}
