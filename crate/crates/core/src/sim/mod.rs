//! Deterministic discrete-event simulation of servers, clients, churn and
//! a Byzantine adversary.

pub mod churn;
pub mod config;
pub mod delay;
mod engine;
pub mod trace;
mod workload;

use thiserror::Error;

pub use churn::{ChurnEvent, ChurnLedger};
pub use config::{
    ChurnAction, ChurnPattern, ClientVariant, Count, DelayModel, DelayRule, ScriptAction, ScriptStep, ScriptedChurn,
    SimConfig, TraceLevel, Workload,
};
pub use engine::{run, RunOutput, RunStats};
pub use trace::{NoteRecord, ResponseRecord, SentSummary, StepRecord, Trace, TraceFooter, TraceHeader, Trigger};

use crate::adversary::AdversaryError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parameters violate constraints {0}")]
    Infeasible(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}
