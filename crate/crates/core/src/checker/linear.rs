//! Linearizability of a single read/write register.

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use super::history::History;
use crate::model::{cmp_time, OpKind, OpRecord, Timestamp, Value};

/// Histories with at most this many candidate ops are searched without
/// memoization.
pub const EXHAUSTIVE_CAP: usize = 12;
/// Largest number of writes whose orders are enumerated when timestamps
/// are missing.
pub const WRITE_ORDER_CAP: usize = 10;
/// State budget for the memoized search.
pub const SEARCH_BUDGET: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Writes ordered by their timestamps.
    Witness,
    /// Every write order consistent with real time, each completed by the
    /// timestamp construction.
    WriteOrders,
    Exhaustive,
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Violation {
    Malformed {
        reason: String,
    },
    /// A read returned a value that no write wrote.
    UnknownValue {
        read: u64,
        value: Value,
    },
    /// A read returned a value already overwritten by a write that
    /// completed before the read began.
    StaleRead {
        read: u64,
        returned: Option<Value>,
        overwritten_by: u64,
    },
    /// `earlier` finished before `later` started yet is ordered after it.
    RealTime {
        earlier: u64,
        later: u64,
    },
    /// No order of the operations satisfies register semantics.
    NoLinearization,
    /// The search ran out of budget.
    SearchLimit {
        states: usize,
    },
}

impl Violation {
    /// The read a violation pins the blame on, if any.
    pub fn failing_read(&self) -> Option<u64> {
        match self {
            Violation::UnknownValue { read, .. } | Violation::StaleRead { read, .. } => Some(*read),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinVerdict {
    pub linearizable: bool,
    pub method: Method,
    /// Op ids in linearization order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl LinVerdict {
    fn pass(method: Method, order: Vec<u64>) -> Self {
        LinVerdict { linearizable: true, method, witness: Some(order), violation: None, notes: Vec::new() }
    }

    fn fail(method: Method, violation: Violation) -> Self {
        LinVerdict { linearizable: false, method, witness: None, violation: Some(violation), notes: Vec::new() }
    }
}

/// Operations that take part: every completed op, plus each pending write
/// whose value some completed read returned.
pub fn candidates(h: &History) -> Vec<&OpRecord> {
    let read_values: FxHashSet<Value> =
        h.ops.iter().filter(|o| o.kind == OpKind::Read && o.is_complete()).filter_map(|o| o.returned_value).collect();
    h.ops
        .iter()
        .filter(|o| {
            o.is_complete() || (o.kind == OpKind::Write && o.written_value.is_some_and(|v| read_values.contains(&v)))
        })
        .collect()
}

fn sort_by_invoke(ops: &mut [&OpRecord]) {
    ops.sort_by(|a, b| cmp_time(a.invoke_time, b.invoke_time).then(a.op_id.cmp(&b.op_id)));
}

/// Places ⊥-reads first, then each write followed by the reads taking
/// their value from it, in invocation order. `source` maps a read to the
/// position in `writes` it reads from, `None` for ⊥.
fn construct<'a>(
    writes: &[&'a OpRecord],
    reads: &[&'a OpRecord],
    source: impl Fn(&OpRecord) -> Result<Option<usize>, Violation>,
) -> Result<Vec<&'a OpRecord>, Violation> {
    let mut initial = Vec::new();
    let mut after: Vec<Vec<&OpRecord>> = vec![Vec::new(); writes.len()];
    for &r in reads {
        match source(r)? {
            None => initial.push(r),
            Some(w) => after[w].push(r),
        }
    }
    sort_by_invoke(&mut initial);
    let mut order = initial;
    for (w, mut rs) in writes.iter().zip(after) {
        order.push(w);
        sort_by_invoke(&mut rs);
        order.extend(rs);
    }
    Ok(order)
}

/// First pair ordered against real time, as `(earlier, later)`.
fn real_time_breach(order: &[&OpRecord]) -> Option<(u64, u64)> {
    for (j, later) in order.iter().enumerate() {
        for earlier in &order[j + 1..] {
            if earlier.response_time.is_some_and(|r| r < later.invoke_time) {
                return Some((earlier.op_id, later.op_id));
            }
        }
    }
    None
}

fn breach_violation(order: &[&OpRecord], earlier: u64, later: u64) -> Violation {
    let find = |id: u64| order.iter().find(|o| o.op_id == id).expect("op in order");
    let (e, l) = (find(earlier), find(later));
    if l.kind == OpKind::Read && e.kind == OpKind::Write {
        Violation::StaleRead { read: later, returned: l.returned_value, overwritten_by: earlier }
    } else if e.kind == OpKind::Read && l.kind == OpKind::Write {
        // A read that saw a write started after it responded.
        Violation::StaleRead { read: earlier, returned: e.returned_value, overwritten_by: later }
    } else {
        Violation::RealTime { earlier, later }
    }
}

/// Replays an order against register semantics and real time.
pub fn replay(h: &History, order: &[u64]) -> Result<(), String> {
    let by_id: FxHashMap<u64, &OpRecord> = h.ops.iter().map(|o| (o.op_id, o)).collect();
    let mut seen = FxHashSet::default();
    let mut value: Option<Value> = None;
    let mut ops = Vec::with_capacity(order.len());
    for id in order {
        let op = by_id.get(id).ok_or_else(|| format!("op {id} not in history"))?;
        if !seen.insert(*id) {
            return Err(format!("op {id} appears twice"));
        }
        match op.kind {
            OpKind::Write => value = op.written_value,
            OpKind::Read => {
                if op.returned_value != value {
                    return Err(format!("read {id} returned {:?}, register held {value:?}", op.returned_value));
                }
            }
        }
        ops.push(*op);
    }
    for op in &h.ops {
        if op.is_complete() && !seen.contains(&op.op_id) {
            return Err(format!("completed op {} missing", op.op_id));
        }
    }
    for (i, later) in ops.iter().enumerate() {
        for earlier in &ops[i + 1..] {
            if earlier.precedes(later) {
                return Err(format!("op {} precedes op {} in real time", earlier.op_id, later.op_id));
            }
        }
    }
    Ok(())
}

fn split(cands: &[&'_ OpRecord]) -> (Vec<usize>, Vec<usize>) {
    let writes = (0..cands.len()).filter(|&i| cands[i].kind == OpKind::Write).collect();
    let reads = (0..cands.len()).filter(|&i| cands[i].kind == OpKind::Read).collect();
    (writes, reads)
}

/// The timestamp construction. Needs a witness on every candidate op.
pub fn check_with_timestamps(h: &History) -> Option<LinVerdict> {
    let cands = candidates(h);
    if cands.iter().any(|o| o.timestamp_witness.is_none()) {
        return None;
    }
    let (wi, ri) = split(&cands);
    let mut writes: Vec<&OpRecord> = wi.iter().map(|&i| cands[i]).collect();
    let reads: Vec<&OpRecord> = ri.iter().map(|&i| cands[i]).collect();
    writes.sort_by_key(|w| w.timestamp_witness);
    if writes.windows(2).any(|p| p[0].timestamp_witness == p[1].timestamp_witness) {
        return None;
    }
    let by_ts: FxHashMap<Timestamp, usize> =
        writes.iter().enumerate().map(|(i, w)| (w.timestamp_witness.expect("witness"), i)).collect();
    let values: FxHashSet<Value> =
        h.ops.iter().filter_map(|o| (o.kind == OpKind::Write).then_some(o.written_value).flatten()).collect();
    let source = |r: &OpRecord| -> Result<Option<usize>, Violation> {
        let ts = r.timestamp_witness.expect("witness");
        let unknown = |v: Option<Value>| match v {
            Some(value) if !values.contains(&value) => Violation::UnknownValue { read: r.op_id, value },
            _ => {
                Violation::Malformed { reason: format!("read {} carries timestamp {ts} of no matching write", r.op_id) }
            }
        };
        if ts == Timestamp::INITIAL {
            return if r.returned_value.is_none() { Ok(None) } else { Err(unknown(r.returned_value)) };
        }
        match by_ts.get(&ts) {
            Some(&w) if writes[w].written_value == r.returned_value => Ok(Some(w)),
            _ => Err(unknown(r.returned_value)),
        }
    };
    let verdict = match construct(&writes, &reads, source) {
        Err(v) => LinVerdict::fail(Method::Witness, v),
        Ok(order) => match real_time_breach(&order) {
            None => LinVerdict::pass(Method::Witness, order.iter().map(|o| o.op_id).collect()),
            Some((e, l)) => LinVerdict::fail(Method::Witness, breach_violation(&order, e, l)),
        },
    };
    Some(verdict)
}

/// The construction applied to every write order consistent with real
/// time; reads find their source by value. Needs distinct written values.
pub fn check_all_write_orders(h: &History) -> Option<LinVerdict> {
    if !h.duplicate_writes().is_empty() {
        return None;
    }
    let cands = candidates(h);
    let (wi, ri) = split(&cands);
    if wi.len() > WRITE_ORDER_CAP {
        return None;
    }
    let writes: Vec<&OpRecord> = wi.iter().map(|&i| cands[i]).collect();
    let reads: Vec<&OpRecord> = ri.iter().map(|&i| cands[i]).collect();
    let all_values: FxHashSet<Value> =
        h.ops.iter().filter_map(|o| (o.kind == OpKind::Write).then_some(o.written_value).flatten()).collect();
    for r in &reads {
        if let Some(v) = r.returned_value {
            if !all_values.contains(&v) {
                return Some(LinVerdict::fail(
                    Method::WriteOrders,
                    Violation::UnknownValue { read: r.op_id, value: v },
                ));
            }
        }
    }

    let mut perm: Vec<usize> = Vec::with_capacity(writes.len());
    let mut used = vec![false; writes.len()];
    let mut found = None;
    let mut first_breach = None;
    enumerate_orders(&writes, &mut perm, &mut used, &mut |perm| {
        let ordered: Vec<&OpRecord> = perm.iter().map(|&i| writes[i]).collect();
        let pos: FxHashMap<Value, usize> =
            ordered.iter().enumerate().map(|(i, w)| (w.written_value.expect("write value"), i)).collect();
        let order = construct(&ordered, &reads, |r| Ok(r.returned_value.map(|v| pos[&v]))).expect("sources resolve");
        match real_time_breach(&order) {
            None => {
                found = Some(order.iter().map(|o| o.op_id).collect::<Vec<u64>>());
                true
            }
            Some((e, l)) => {
                first_breach.get_or_insert_with(|| breach_violation(&order, e, l));
                false
            }
        }
    });
    Some(match found {
        Some(order) => LinVerdict::pass(Method::WriteOrders, order),
        None => LinVerdict::fail(Method::WriteOrders, first_breach.unwrap_or(Violation::NoLinearization)),
    })
}

/// Visits write permutations that respect real-time order among writes;
/// stops when `visit` returns true.
fn enumerate_orders(
    writes: &[&OpRecord],
    perm: &mut Vec<usize>,
    used: &mut [bool],
    visit: &mut dyn FnMut(&[usize]) -> bool,
) -> bool {
    if perm.len() == writes.len() {
        return visit(perm);
    }
    for i in 0..writes.len() {
        if used[i] {
            continue;
        }
        // Every unplaced write that precedes i must come first.
        if (0..writes.len()).any(|j| j != i && !used[j] && writes[j].precedes(writes[i])) {
            continue;
        }
        used[i] = true;
        perm.push(i);
        if enumerate_orders(writes, perm, used, visit) {
            return true;
        }
        perm.pop();
        used[i] = false;
    }
    false
}

/// Witness construction: by timestamps when every op has one, otherwise
/// over all write orders, otherwise a search.
pub fn check_linearizable_witness(h: &History) -> LinVerdict {
    if let Err(reason) = h.well_formed() {
        return LinVerdict::fail(Method::Witness, Violation::Malformed { reason });
    }
    check_with_timestamps(h)
        .or_else(|| check_all_write_orders(h))
        .unwrap_or_else(|| check_linearizable_search(h, EXHAUSTIVE_CAP))
}

/// Full check: the timestamp witness, confirmed by search whenever it
/// fails.
pub fn check_linearizable(h: &History) -> LinVerdict {
    let first = check_linearizable_witness(h);
    if first.linearizable || matches!(first.violation, Some(Violation::Malformed { .. })) {
        return first;
    }
    if matches!(first.method, Method::Exhaustive | Method::Pruned) {
        return first;
    }
    let mut second = check_linearizable_search(h, EXHAUSTIVE_CAP);
    if second.linearizable {
        second.notes.push(format!("timestamp order failed: {:?}", first.violation));
        second
    } else {
        // The construction names a concrete culprit; keep it.
        let mut verdict = first;
        if let Some(Violation::SearchLimit { states }) = second.violation {
            verdict.notes.push(format!("search gave up after {states} states"));
        } else {
            verdict.notes.push("confirmed by search".into());
        }
        verdict
    }
}

/// Search for a linearization. Histories above `cap` candidates use a
/// memo over (linearized set, register value).
pub fn check_linearizable_search(h: &History, cap: usize) -> LinVerdict {
    if let Err(reason) = h.well_formed() {
        return LinVerdict::fail(Method::Exhaustive, Violation::Malformed { reason });
    }
    let mut cands = candidates(h);
    sort_by_invoke(&mut cands);
    let n = cands.len();
    let words = n.div_ceil(64).max(1);
    let mut preds = vec![vec![0u64; words]; n];
    for i in 0..n {
        for j in 0..n {
            if cands[j].precedes(cands[i]) {
                preds[i][j / 64] |= 1 << (j % 64);
            }
        }
    }
    let mut required = vec![0u64; words];
    for (i, op) in cands.iter().enumerate() {
        if op.is_complete() {
            required[i / 64] |= 1 << (i % 64);
        }
    }
    let memo = n > cap;
    let mut search = Search {
        ops: &cands,
        preds,
        required,
        failed: FxHashSet::default(),
        memo,
        states: 0,
        path: Vec::with_capacity(n),
        exhausted: false,
    };
    let method = if memo { Method::Pruned } else { Method::Exhaustive };
    let mut done = vec![0u64; words];
    if search.dfs(&mut done, None) {
        let order = search.path.iter().map(|&i| cands[i].op_id).collect();
        let mut v = LinVerdict::pass(method, order);
        if memo {
            v.notes.push(format!("{n} candidate ops exceed the exhaustive cap of {cap}"));
        }
        return v;
    }
    if search.exhausted {
        return LinVerdict::fail(method, Violation::SearchLimit { states: search.states });
    }
    LinVerdict::fail(method, Violation::NoLinearization)
}

struct Search<'a, 'h> {
    ops: &'a [&'h OpRecord],
    preds: Vec<Vec<u64>>,
    required: Vec<u64>,
    failed: FxHashSet<(Vec<u64>, Option<Value>)>,
    memo: bool,
    states: usize,
    path: Vec<usize>,
    exhausted: bool,
}

impl Search<'_, '_> {
    fn dfs(&mut self, done: &mut Vec<u64>, value: Option<Value>) -> bool {
        if self.required.iter().zip(done.iter()).all(|(r, d)| r & !d == 0) {
            return true;
        }
        self.states += 1;
        if self.states > SEARCH_BUDGET {
            self.exhausted = true;
            return false;
        }
        if self.memo && self.failed.contains(&(done.clone(), value)) {
            return false;
        }
        // An op is only eligible before the earliest pending response.
        let deadline = (0..self.ops.len())
            .filter(|&i| !bit(done, i))
            .filter_map(|i| self.ops[i].response_time)
            .min_by(|a, b| cmp_time(*a, *b))
            .unwrap_or(f64::INFINITY);
        for i in 0..self.ops.len() {
            if bit(done, i) || self.ops[i].invoke_time > deadline {
                continue;
            }
            if self.preds[i].iter().zip(done.iter()).any(|(p, d)| p & !d != 0) {
                continue;
            }
            let op = self.ops[i];
            let next = match op.kind {
                OpKind::Read if op.returned_value != value => continue,
                OpKind::Read => value,
                OpKind::Write => op.written_value,
            };
            done[i / 64] |= 1 << (i % 64);
            self.path.push(i);
            if self.dfs(done, next) {
                return true;
            }
            self.path.pop();
            done[i / 64] &= !(1 << (i % 64));
            if self.exhausted {
                return false;
            }
        }
        if self.memo {
            self.failed.insert((done.clone(), value));
        }
        false
    }
}

fn bit(words: &[u64], i: usize) -> bool {
    words[i / 64] >> (i % 64) & 1 == 1
}
