use super::common::{Core, JoinRule};
use super::{NodeEvent, Note, OpRequest, Outbox, Response};
use crate::model::{Envelope, Message, MessageKind, NodeId, Timestamp, Value};
use crate::params::Params;

/// How many replies or acks a phase waits for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplyRule {
    /// `beta · |Members|`
    Fraction(f64),
    /// A constant count.
    Fixed(u64),
}

/// Client thresholds. [`ClientRules::abcc`] follows the parameters;
/// [`ClientRules::uniform`] ignores system size and `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientRules {
    pub join: JoinRule,
    pub reply: ReplyRule,
    pub support: u32,
}

impl ClientRules {
    pub fn abcc(params: &Params<f64>) -> Self {
        ClientRules {
            join: JoinRule::Quorum { gamma: params.gamma.unwrap_or(0.0) },
            reply: ReplyRule::Fraction(params.beta.unwrap_or(1.0)),
            support: (params.f + 1) as u32,
        }
    }

    pub fn uniform() -> Self {
        ClientRules { join: JoinRule::FirstJoinedEcho, reply: ReplyRule::Fixed(1), support: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub core: Core,
    rules: ClientRules,
    pub temp: Option<Value>,
    pub tag: u64,
    pub rw_bound: f64,
    pub rw_counter: u64,
    pub rp_pending: bool,
    pub wp_pending: bool,
    pub read_pending: bool,
    pub write_pending: bool,
    pub halted: bool,
}

impl ClientState {
    pub fn initial(me: NodeId, params: &Params<f64>, rules: ClientRules, initial_servers: &[NodeId]) -> Self {
        let mut state = Self::entrant(me, params, rules);
        state.core.bootstrap(initial_servers);
        state
    }

    pub fn entrant(me: NodeId, params: &Params<f64>, rules: ClientRules) -> Self {
        debug_assert!(me.is_client());
        ClientState {
            core: Core::new(me, params.f, rules.join, rules.support),
            rules,
            temp: None,
            tag: 0,
            rw_bound: 0.0,
            rw_counter: 0,
            rp_pending: false,
            wp_pending: false,
            read_pending: false,
            write_pending: false,
            halted: false,
        }
    }

    pub fn me(&self) -> NodeId {
        self.core.me
    }

    pub fn is_joined(&self) -> bool {
        self.core.is_joined
    }

    pub fn is_idle(&self) -> bool {
        !self.read_pending && !self.write_pending
    }

    pub fn handle(&mut self, event: NodeEvent<'_>, out: &mut Outbox) {
        if self.halted {
            return;
        }
        match event {
            NodeEvent::Enter => out.s_bcast(Message::EnterClient),
            NodeEvent::Leave | NodeEvent::Crash => self.halted = true,
            NodeEvent::Invoke(op) => self.invoke(op, out),
            NodeEvent::Receive(env) => self.on_receive(env, out),
        }
    }

    fn invoke(&mut self, op: OpRequest, out: &mut Outbox) {
        assert!(self.is_joined() && self.is_idle(), "{} invoked while joining or busy", self.me());
        match op {
            OpRequest::Read => self.read_pending = true,
            OpRequest::Write(v) => {
                self.write_pending = true;
                self.temp = Some(v);
            }
        }
        self.begin_read_phase(out);
    }

    fn bound(&self) -> f64 {
        match self.rules.reply {
            ReplyRule::Fraction(beta) => beta * self.core.member_count() as f64,
            ReplyRule::Fixed(n) => n as f64,
        }
    }

    fn begin_read_phase(&mut self, out: &mut Outbox) {
        self.tag += 1;
        out.s_bcast(Message::Query { tag: self.tag, client: self.me() });
        self.rw_bound = self.bound();
        self.rw_counter = 0;
        self.rp_pending = true;
    }

    fn begin_write_phase(&mut self, out: &mut Outbox) {
        let core = &mut self.core;
        if self.write_pending {
            core.val = self.temp;
            core.ts = Timestamp::new(core.ts.num + 1, core.me);
        }
        if self.read_pending {
            self.temp = core.val;
        }
        let ts = core.ts;
        out.s_bcast(Message::Update { value: self.temp, ts, tag: self.tag, client: core.me });
        out.notes.push(Note::WritePhase { ts, value: self.temp });
        self.rw_bound = self.bound();
        self.rw_counter = 0;
        self.wp_pending = true;
    }

    fn on_receive(&mut self, env: &Envelope, out: &mut Outbox) {
        let p = self.me();
        match &env.msg {
            Message::EnterClientEcho(echo) => {
                let core = &mut self.core;
                if echo.target == p
                    && core.is_valid_message(MessageKind::EnterClientEcho, echo.target, 0, echo.responder)
                {
                    core.union_changes(&echo.changes);
                    if echo.joined {
                        core.writes.merge(echo.responder, &echo.writes);
                    }
                    if !core.is_joined && core.join_protocol(echo.joined) {
                        out.responses.push(Response::Joined);
                    }
                }
                self.core.set_value_timestamp();
            }
            Message::ServerInfo(changes) => self.core.union_changes(changes),
            Message::Reply { writes, tag, client, responder } => {
                // Replies for other clients cannot affect this one.
                if *client != p {
                    return;
                }
                if self.core.is_valid_message(MessageKind::Reply, *client, *tag, *responder)
                    && self.rp_pending
                    && *tag == self.tag
                {
                    self.rw_counter += 1;
                    self.core.writes.merge(*responder, writes);
                    if self.rw_counter as f64 >= self.rw_bound {
                        self.core.set_value_timestamp();
                        self.rp_pending = false;
                        self.begin_write_phase(out);
                    }
                }
            }
            Message::Ack { tag, client, responder } => {
                if *client != p {
                    return;
                }
                if self.core.is_valid_message(MessageKind::Ack, *client, *tag, *responder)
                    && self.wp_pending
                    && *tag == self.tag
                {
                    self.rw_counter += 1;
                    if self.rw_counter as f64 >= self.rw_bound {
                        self.wp_pending = false;
                        if self.read_pending {
                            self.read_pending = false;
                            out.responses.push(Response::Return(self.temp));
                        }
                        if self.write_pending {
                            self.write_pending = false;
                            out.responses.push(Response::Ack);
                        }
                    }
                }
            }
            _ => {}
        }
    }
}
