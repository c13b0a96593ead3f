//! Server and client state machines.
//!
//! Handlers are pure state transitions: they append emissions, responses
//! and notes to an [`Outbox`] and never perform I/O.

mod client;
mod common;
mod server;

pub use client::{ClientRules, ClientState, ReplyRule};
pub use common::{Core, JoinRule, WriteIndex};
pub use server::ServerState;

use crate::model::{Envelope, Message, Scope, Timestamp, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpRequest {
    Read,
    Write(Value),
}

#[derive(Debug, Clone, Copy)]
pub enum NodeEvent<'a> {
    Enter,
    Leave,
    Crash,
    Invoke(OpRequest),
    Receive(&'a Envelope),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Joined,
    Return(Option<Value>),
    Ack,
}

/// Observations the checker needs that are not responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Note {
    /// The client broadcast its update with this timestamp.
    WritePhase { ts: Timestamp, value: Option<Value> },
}

#[derive(Debug, Clone, Default)]
pub struct Outbox {
    pub sends: Vec<(Scope, Message)>,
    pub responses: Vec<Response>,
    pub notes: Vec<Note>,
}

impl Outbox {
    pub fn clear(&mut self) {
        self.sends.clear();
        self.responses.clear();
        self.notes.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.sends.is_empty() && self.responses.is_empty() && self.notes.is_empty()
    }

    fn s_bcast(&mut self, msg: Message) {
        self.sends.push((Scope::Servers, msg));
    }

    fn c_bcast(&mut self, msg: Message) {
        self.sends.push((Scope::Clients, msg));
    }
}
