//! Server membership ground truth and sliding-window admission.

use serde::{Deserialize, Serialize};

use super::config::ChurnAction;
use crate::model::NodeId;

const SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub t: f64,
    pub action: ChurnAction,
    pub server: NodeId,
}

/// Realized server enter/leave events and the server count they imply.
#[derive(Debug, Clone)]
pub struct ChurnLedger {
    d: f64,
    initial: u32,
    events: Vec<ChurnEvent>,
    /// Server count after each event, parallel to `events`.
    after: Vec<u32>,
}

impl ChurnLedger {
    pub fn new(d: f64, initial: u32) -> Self {
        ChurnLedger { d, initial, events: Vec::new(), after: Vec::new() }
    }

    pub fn events(&self) -> &[ChurnEvent] {
        &self.events
    }

    pub fn current(&self) -> u32 {
        self.after.last().copied().unwrap_or(self.initial)
    }

    pub fn record(&mut self, event: ChurnEvent) {
        debug_assert!(self.events.last().is_none_or(|e| e.t <= event.t));
        let next = match event.action {
            ChurnAction::Enter => self.current() + 1,
            ChurnAction::Leave => self.current() - 1,
        };
        self.events.push(event);
        self.after.push(next);
    }

    /// Server count after every event at or before `t`.
    fn ns_right(&self, t: f64) -> u32 {
        let k = self.events.partition_point(|e| e.t <= t);
        if k == 0 {
            self.initial
        } else {
            self.after[k - 1]
        }
    }

    /// Server count after every event strictly before `t`.
    fn ns_left(&self, t: f64) -> u32 {
        let k = self.events.partition_point(|e| e.t < t);
        if k == 0 {
            self.initial
        } else {
            self.after[k - 1]
        }
    }

    /// Whether one more enter/leave at time `t` (not before any recorded
    /// event) keeps every window `[t0, t0 + d]`, `t0` in `[t - d, t]`,
    /// within `rate · NS(t0)` events. `rate` is the scaled churn rate.
    pub fn admits(&self, t: f64, action: ChurnAction, rate: f64) -> bool {
        let start = (t - self.d).max(0.0);
        let now = self.current();
        let proposed = match action {
            ChurnAction::Enter => now + 1,
            ChurnAction::Leave => now.saturating_sub(1),
        };
        let first = self.events.partition_point(|e| e.t < start);
        let within = |count: usize, ns: u32| count as f64 <= rate * ns as f64 + SLACK;

        // t0 = start: every recorded event in [start, t] plus the proposal.
        if !within(self.events.len() - first + 1, self.ns_right(start)) {
            return false;
        }
        // t0 at (and just before) each event time in the window.
        let mut k = first;
        while k < self.events.len() {
            let e = self.events[k].t;
            let count = self.events.len() - k + 1;
            let right = if e == t { proposed.min(self.ns_right(e)) } else { self.ns_right(e) };
            if !within(count, self.ns_left(e).min(right)) {
                return false;
            }
            while k < self.events.len() && self.events[k].t == e {
                k += 1;
            }
        }
        // t0 = t: events already at t plus the proposal.
        let at_t = self.events.len() - self.events.partition_point(|e| e.t < t);
        within(at_t + 1, self.ns_left(t).min(proposed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64, action: ChurnAction) -> ChurnEvent {
        ChurnEvent { t, action, server: NodeId::server(0) }
    }

    #[test]
    fn two_events_per_window_at_two_percent_of_hundred() {
        let mut ledger = ChurnLedger::new(1.0, 100);
        assert!(ledger.admits(0.5, ChurnAction::Enter, 0.02));
        ledger.record(ev(0.5, ChurnAction::Enter));
        assert!(ledger.admits(0.7, ChurnAction::Leave, 0.02));
        ledger.record(ev(0.7, ChurnAction::Leave));
        assert!(!ledger.admits(1.4, ChurnAction::Enter, 0.02));
        assert!(ledger.admits(1.51, ChurnAction::Enter, 0.02));
    }

    #[test]
    fn count_right_after_an_event_applies() {
        // NS = 99 from 0.5 on, so [0.5, 1.5] allows only 1.98 events.
        let mut ledger = ChurnLedger::new(1.0, 100);
        ledger.record(ev(0.5, ChurnAction::Leave));
        assert!(!ledger.admits(0.7, ChurnAction::Enter, 0.02));
        assert!(ledger.admits(1.51, ChurnAction::Enter, 0.02));
    }

    #[test]
    fn zero_rate_admits_nothing() {
        let ledger = ChurnLedger::new(1.0, 100);
        assert!(!ledger.admits(3.0, ChurnAction::Enter, 0.0));
    }

    #[test]
    fn smallest_system_can_grow_but_not_shrink() {
        // rate * 50 = 1: a leave leaves 49 servers, whose window allows 0.98.
        let mut ledger = ChurnLedger::new(1.0, 50);
        assert!(!ledger.admits(0.0, ChurnAction::Leave, 0.02));
        assert!(ledger.admits(0.0, ChurnAction::Enter, 0.02));
        ledger.record(ev(0.0, ChurnAction::Enter));
        assert!(!ledger.admits(0.9, ChurnAction::Leave, 0.02));
        assert!(ledger.admits(1.01, ChurnAction::Leave, 0.02));
        ledger.record(ev(1.01, ChurnAction::Leave));
        assert!(!ledger.admits(1.5, ChurnAction::Enter, 0.02));
        assert!(ledger.admits(2.02, ChurnAction::Enter, 0.02));
    }
}
