//! Churn-model audits recomputed from a trace.

use serde::{Deserialize, Serialize};

use super::liveness::lifetimes;
use crate::model::NodeKind;
use crate::sim::{Trace, Trigger};

const SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditKind {
    /// Server count never below its floor.
    Floor,
    /// Enter/leave count in every window of length `d`.
    ChurnWindow,
    /// Entrants over `i` windows.
    GrowthEnters,
    /// Server count after `i` windows.
    GrowthSize,
    /// Departures over `i` windows.
    Departures,
    /// Enough correct servers around every instant.
    CorrectWindow,
}

impl AuditKind {
    pub const ALL: [AuditKind; 6] = [
        AuditKind::Floor,
        AuditKind::ChurnWindow,
        AuditKind::GrowthEnters,
        AuditKind::GrowthSize,
        AuditKind::Departures,
        AuditKind::CorrectWindow,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub kind: AuditKind,
    pub passed: bool,
    /// Window starts (or instants) evaluated.
    pub points: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_violation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, kind: AuditKind) -> &AuditCheck {
        self.checks.iter().find(|c| c.kind == kind).expect("every audit runs")
    }

    pub fn failing(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Server churn reconstructed from a trace.
#[derive(Debug, Clone)]
pub struct ServerTimeline {
    initial: i64,
    /// Event times, nondecreasing.
    times: Vec<f64>,
    /// +1 for an enter, -1 for a departure.
    delta: Vec<i64>,
    /// Server count right after each event.
    after: Vec<i64>,
}

impl ServerTimeline {
    pub fn from_trace(trace: &Trace) -> Self {
        let mut times = Vec::new();
        let mut delta = Vec::new();
        for step in trace.steps.iter().filter(|s| s.kind == NodeKind::Server) {
            let dv = match step.trigger {
                Trigger::Enter { .. } => 1,
                Trigger::Leave | Trigger::Crash => -1,
                _ => continue,
            };
            times.push(step.t);
            delta.push(dv);
        }
        Self::new(trace.header.initial_servers.len() as i64, times, delta)
    }

    pub fn new(initial: i64, times: Vec<f64>, delta: Vec<i64>) -> Self {
        let mut after = Vec::with_capacity(times.len());
        let mut ns = initial;
        for d in &delta {
            ns += d;
            after.push(ns);
        }
        ServerTimeline { initial, times, delta, after }
    }

    /// Servers present at `t`, counting events at `t`.
    pub fn ns(&self, t: f64) -> i64 {
        let k = self.times.partition_point(|&e| e <= t);
        if k == 0 {
            self.initial
        } else {
            self.after[k - 1]
        }
    }

    /// Events with `lo <= e <= hi`, or `lo < e <= hi` when `open_left`.
    fn count(&self, lo: f64, hi: f64, open_left: bool, want: Option<i64>) -> usize {
        let a =
            if open_left { self.times.partition_point(|&e| e <= lo) } else { self.times.partition_point(|&e| e < lo) };
        let b = self.times.partition_point(|&e| e <= hi);
        if a >= b {
            return 0;
        }
        match want {
            None => b - a,
            Some(sign) => self.delta[a..b].iter().filter(|&&d| d == sign).count(),
        }
    }

    pub fn min_ns(&self) -> i64 {
        self.after.iter().copied().chain([self.initial]).min().unwrap_or(self.initial)
    }

    pub fn max_ns(&self) -> i64 {
        self.after.iter().copied().chain([self.initial]).max().unwrap_or(self.initial)
    }
}

/// Sorted distinct points in `[0, end]` plus the midpoints between them.
fn probe_points(mut breaks: Vec<f64>, end: f64) -> Vec<f64> {
    breaks.push(0.0);
    breaks.push(end);
    breaks.retain(|&b| (0.0..=end).contains(&b));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut out = Vec::with_capacity(breaks.len() * 2);
    for w in breaks.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.extend(breaks.last());
    out
}

struct Tally {
    kind: AuditKind,
    points: u64,
    first: Option<String>,
}

impl Tally {
    fn new(kind: AuditKind) -> Self {
        Tally { kind, points: 0, first: None }
    }

    fn see(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.points += 1;
        if !ok && self.first.is_none() {
            self.first = Some(detail());
        }
    }

    fn done(self) -> AuditCheck {
        AuditCheck { kind: self.kind, passed: self.first.is_none(), points: self.points, first_violation: self.first }
    }
}

pub fn audit_model(trace: &Trace) -> AuditReport {
    let p = &trace.header.params;
    let (alpha, d, f) = (p.alpha, p.d, p.f as usize);
    let end = trace.footer.end_time;
    let tl = ServerTimeline::from_trace(trace);
    let mut checks = Vec::new();

    let mut floor = Tally::new(AuditKind::Floor);
    floor.see(tl.initial >= p.ns_min as i64, || format!("{} initial servers", tl.initial));
    for (t, ns) in tl.times.iter().zip(&tl.after) {
        floor.see(*ns >= p.ns_min as i64, || format!("{ns} servers at t={t}"));
    }
    checks.push(floor.done());

    let mut window = Tally::new(AuditKind::ChurnWindow);
    let breaks = tl.times.iter().flat_map(|&e| [e, e - d]).collect();
    for t0 in probe_points(breaks, end) {
        let count = tl.count(t0, t0 + d, false, None);
        let ns = tl.ns(t0);
        window.see(count as f64 <= alpha * ns as f64 + SLACK, || {
            format!("{count} events in [{t0}, {}] with {ns} servers", t0 + d)
        });
    }
    checks.push(window.done());

    let total_enters = tl.delta.iter().filter(|&&x| x > 0).count() as f64;
    let total_leaves = tl.delta.iter().filter(|&&x| x < 0).count() as f64;
    let (min_ns, max_ns) = (tl.min_ns() as f64, tl.max_ns() as f64);
    let horizon = (end / d).floor() as i64;
    let mut enters = Tally::new(AuditKind::GrowthEnters);
    let mut size = Tally::new(AuditKind::GrowthSize);
    for i in 1..=horizon {
        let grow = (1.0 + alpha).powi(i as i32);
        let shrink = (1.0 - alpha).powi(i as i32);
        if (grow - 1.0) * min_ns >= total_enters + 1.0 && shrink * max_ns <= min_ns && grow * min_ns >= max_ns {
            break;
        }
        let span = i as f64 * d;
        let breaks = tl.times.iter().flat_map(|&e| [e, e - span]).collect();
        for t in probe_points(breaks, end - span) {
            let ns = tl.ns(t) as f64;
            let entered = tl.count(t, t + span, true, Some(1));
            enters.see(entered as f64 <= (grow - 1.0) * ns + SLACK, || {
                format!("{entered} entered in ({t}, {}] from {ns} servers", t + span)
            });
            let later = tl.ns(t + span) as f64;
            size.see(shrink * ns <= later + SLACK && later <= grow * ns + SLACK, || {
                format!("{ns} servers at {t} became {later} at {}", t + span)
            });
        }
    }
    checks.push(enters.done());
    checks.push(size.done());

    let mut leaves = Tally::new(AuditKind::Departures);
    let cap = if alpha > 0.0 { (-1.0 / (1.0 - alpha).log2()).floor() as i64 } else { i64::MAX };
    for i in 1..=horizon.min(cap) {
        let bound_frac = 1.0 - (1.0 - alpha).powi(i as i32);
        if bound_frac * min_ns >= total_leaves + 1.0 {
            break;
        }
        let span = i as f64 * d;
        let breaks = tl.times.iter().flat_map(|&e| [e, e - span]).collect();
        for t in probe_points(breaks, end - span) {
            let ns = tl.ns(t) as f64;
            let left = tl.count(t, t + span, true, Some(-1));
            leaves.see(left as f64 <= bound_frac * ns + SLACK, || {
                format!("{left} left in ({t}, {}] from {ns} servers", t + span)
            });
        }
    }
    checks.push(leaves.done());

    let mut correct = Tally::new(AuditKind::CorrectWindow);
    let servers: Vec<_> =
        lifetimes(trace).into_iter().filter(|l| l.node.kind() == NodeKind::Server && !l.corrupt).collect();
    let breaks =
        servers.iter().flat_map(|l| [Some(l.entered + 2.0 * d), l.departed.map(|x| x - d)]).flatten().collect();
    for t in probe_points(breaks, end) {
        let (lo, hi) = ((t - 2.0 * d).max(0.0), t + d);
        let active = servers.iter().filter(|l| l.entered <= lo && l.departed.is_none_or(|x| x > hi)).count();
        correct.see(active > f, || format!("{active} correct servers active throughout [{lo}, {hi}]"));
    }
    checks.push(correct.done());

    AuditReport { checks }
}
