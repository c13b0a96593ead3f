use std::rc::Rc;

use super::common::{Core, JoinRule};
use super::{NodeEvent, Outbox};
use crate::model::{ChangeKind, EchoPayload, Envelope, Message, MessageKind, NodeId, Timestamp, WriteEntry};
use crate::params::Params;

#[derive(Debug, Clone)]
pub struct ServerState {
    pub core: Core,
    pub halted: bool,
}

impl ServerState {
    /// A server that is present at time 0.
    pub fn initial(me: NodeId, params: &Params<f64>, initial_servers: &[NodeId]) -> Self {
        let mut state = Self::entrant(me, params);
        state.core.bootstrap(initial_servers);
        state
    }

    /// A server that will enter later.
    pub fn entrant(me: NodeId, params: &Params<f64>) -> Self {
        debug_assert!(me.is_server());
        let gamma = params.gamma.unwrap_or(0.0);
        ServerState { core: Core::new(me, params.f, JoinRule::Quorum { gamma }, (params.f + 1) as u32), halted: false }
    }

    pub fn me(&self) -> NodeId {
        self.core.me
    }

    pub fn is_joined(&self) -> bool {
        self.core.is_joined
    }

    pub fn handle(&mut self, event: NodeEvent<'_>, out: &mut Outbox) {
        if self.halted {
            return;
        }
        match event {
            NodeEvent::Enter => self.on_enter(out),
            NodeEvent::Leave | NodeEvent::Crash => self.on_leave(out),
            NodeEvent::Invoke(_) => debug_assert!(false, "servers do not invoke operations"),
            NodeEvent::Receive(env) => self.on_receive(env, out),
        }
    }

    fn server_info(&self, out: &mut Outbox) {
        out.c_bcast(Message::ServerInfo(self.core.changes.clone()));
    }

    fn echo(&self, target: NodeId) -> Rc<EchoPayload> {
        Rc::new(EchoPayload {
            changes: self.core.changes.clone(),
            writes: self.core.own_snapshot(),
            joined: self.core.is_joined,
            target,
            responder: self.me(),
        })
    }

    fn on_enter(&mut self, out: &mut Outbox) {
        self.core.add_change(ChangeKind::Enter, self.me());
        out.s_bcast(Message::Enter);
        self.server_info(out);
    }

    fn on_leave(&mut self, out: &mut Outbox) {
        self.core.add_change(ChangeKind::Leave, self.me());
        out.s_bcast(Message::Leave);
        self.server_info(out);
        self.halted = true;
    }

    fn on_receive(&mut self, env: &Envelope, out: &mut Outbox) {
        let p = self.me();
        let q = env.sender;
        let core = &mut self.core;
        match &env.msg {
            Message::Enter => {
                if core.is_valid_message(MessageKind::Enter, q, 0, q) {
                    core.add_change(ChangeKind::Enter, q);
                    out.s_bcast(Message::EnterEcho(self.echo(q)));
                    self.server_info(out);
                }
            }
            Message::EnterClient => {
                if q.is_client() {
                    out.c_bcast(Message::EnterClientEcho(self.echo(q)));
                }
            }
            Message::EnterEcho(echo) => {
                let (target, r) = (echo.target, echo.responder);
                if core.is_valid_message(MessageKind::EnterEcho, target, 0, r) {
                    core.union_changes(&echo.changes);
                    if echo.joined {
                        core.writes.merge(r, &echo.writes);
                    }
                    if !core.is_joined && target == p && core.join_protocol(echo.joined) {
                        core.add_change(ChangeKind::Join, p);
                        out.s_bcast(Message::Joined);
                        self.server_info(out);
                    }
                    self.core.set_value_timestamp();
                }
            }
            Message::Joined => {
                if core.is_valid_message(MessageKind::Joined, q, 0, q) {
                    core.add_change(ChangeKind::Enter, q);
                    core.add_change(ChangeKind::Join, q);
                    out.s_bcast(Message::JoinedEcho { subject: q, responder: p });
                    self.server_info(out);
                }
            }
            Message::JoinedEcho { subject, responder } => {
                if core.is_valid_message(MessageKind::JoinedEcho, *subject, 0, *responder) {
                    core.add_change(ChangeKind::Enter, *subject);
                    core.add_change(ChangeKind::Join, *subject);
                    self.server_info(out);
                }
            }
            Message::Leave => {
                if core.is_valid_message(MessageKind::Leave, q, 0, q) {
                    core.add_change(ChangeKind::Leave, q);
                    out.s_bcast(Message::LeaveEcho { subject: q, responder: p });
                    self.server_info(out);
                }
            }
            Message::LeaveEcho { subject, responder } => {
                if core.is_valid_message(MessageKind::LeaveEcho, *subject, 0, *responder) {
                    core.add_change(ChangeKind::Leave, *subject);
                    self.server_info(out);
                }
            }
            Message::Query { tag, client } => {
                if core.is_joined && client.is_client() {
                    out.c_bcast(Message::Reply {
                        writes: core.own_snapshot(),
                        tag: *tag,
                        client: *client,
                        responder: p,
                    });
                }
            }
            Message::Update { value, ts, tag, client } => {
                if client.is_client() {
                    if *ts > core.ts {
                        if let Some(v) = value {
                            core.adopt(*v, *ts);
                        }
                    }
                    if core.is_joined {
                        out.c_bcast(Message::Ack { tag: *tag, client: *client, responder: p });
                    }
                    out.s_bcast(Message::UpdateEcho { writes: core.own_snapshot(), responder: p });
                }
            }
            Message::UpdateEcho { writes, responder } => {
                core.writes.merge(*responder, writes);
                core.set_value_timestamp();
            }
            Message::EnterClientEcho(_) | Message::ServerInfo(_) | Message::Reply { .. } | Message::Ack { .. } => {}
        }
    }

    /// `(val, (num, w_id))`
    pub fn register(&self) -> (Option<u64>, Timestamp) {
        (self.core.val, self.core.ts)
    }

    pub fn own_entries(&self) -> Vec<WriteEntry> {
        self.core.writes.entries_of(self.me())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Scope, WriteSnapshot};

    fn params() -> Params<f64> {
        Params::new(0.01, 1, 10, Some(0.82), Some(0.84))
    }

    fn servers(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId::server).collect()
    }

    fn env(sender: NodeId, msg: Message) -> Envelope {
        Envelope { sender, fifo_seq: 0, sent_at: 0.0, scope: Scope::Servers, msg }
    }

    fn deliver(s: &mut ServerState, e: &Envelope) -> Outbox {
        let mut out = Outbox::default();
        s.handle(NodeEvent::Receive(e), &mut out);
        out
    }

    #[test]
    fn joined_server_answers_client_queries() {
        let mut s = ServerState::initial(NodeId::server(0), &params(), &servers(10));
        let c1 = NodeId::client(20);
        let out = deliver(&mut s, &env(c1, Message::Query { tag: 5, client: c1 }));
        assert_eq!(out.sends.len(), 1);
        match &out.sends[0] {
            (Scope::Clients, Message::Reply { tag: 5, client, responder, writes }) => {
                assert_eq!((*client, *responder), (c1, NodeId::server(0)));
                assert!(writes.entries.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn queries_from_servers_are_ignored() {
        let mut s = ServerState::initial(NodeId::server(0), &params(), &servers(10));
        let s9 = NodeId::server(9);
        assert!(deliver(&mut s, &env(s9, Message::Query { tag: 5, client: s9 })).is_empty());
    }

    #[test]
    fn update_is_adopted_acked_and_echoed() {
        let mut s = ServerState::initial(NodeId::server(0), &params(), &servers(10));
        let c1 = NodeId::client(20);
        let ts = Timestamp::new(1, c1);
        let out = deliver(&mut s, &env(c1, Message::Update { value: Some(42), ts, tag: 3, client: c1 }));
        assert_eq!(s.register(), (Some(42), ts));
        assert_eq!(s.own_entries(), vec![WriteEntry::new(42, ts)]);
        let kinds: Vec<_> = out.sends.iter().map(|(_, m)| m.kind()).collect();
        assert_eq!(kinds, vec![MessageKind::Ack, MessageKind::UpdateEcho]);
    }

    #[test]
    fn older_update_is_acked_not_adopted() {
        let mut s = ServerState::initial(NodeId::server(0), &params(), &servers(10));
        let c1 = NodeId::client(20);
        let newer = Timestamp::new(4, c1);
        deliver(&mut s, &env(c1, Message::Update { value: Some(1), ts: newer, tag: 1, client: c1 }));
        let out = deliver(
            &mut s,
            &env(c1, Message::Update { value: Some(2), ts: Timestamp::new(3, c1), tag: 2, client: c1 }),
        );
        assert_eq!(s.register(), (Some(1), newer));
        assert_eq!(out.sends.len(), 2);
    }

    #[test]
    fn duplicate_enter_is_dropped() {
        let mut s = ServerState::initial(NodeId::server(0), &params(), &servers(10));
        let q = NodeId::server(30);
        assert_eq!(deliver(&mut s, &env(q, Message::Enter)).sends.len(), 2);
        assert!(deliver(&mut s, &env(q, Message::Enter)).is_empty());
    }

    #[test]
    fn entrant_joins_after_quorum_of_echoes() {
        let p = NodeId::server(30);
        let mut s = ServerState::entrant(p, &params());
        let mut out = Outbox::default();
        s.handle(NodeEvent::Enter, &mut out);
        let mut changes = crate::model::ChangeSet::bootstrap(servers(10));
        changes.insert(crate::model::ServerChange { kind: ChangeKind::Enter, subject: p });
        let changes = Rc::new(changes);
        let mut joined_after = None;
        for r in 0..10 {
            let echo = Rc::new(EchoPayload {
                changes: changes.clone(),
                writes: WriteSnapshot::empty(),
                joined: true,
                target: p,
                responder: NodeId::server(r),
            });
            let out = deliver(&mut s, &env(NodeId::server(r), Message::EnterEcho(echo)));
            if s.is_joined() {
                assert_eq!(out.sends[0].1, Message::Joined);
                joined_after = Some(r + 1);
                break;
            }
        }
        // |Present| = 11 at the bound, 0.82 * 11 = 9.02
        assert_eq!(joined_after, Some(10));
    }
}
