//! Core of locflow: a data-locality-aware master/worker framework.
//!
//! Workunits are only handed to clients that already hold every required
//! input file. When no client can prove it holds the inputs within a wait
//! window, an optional "get input" application is dispatched to generate or
//! fetch them.
//!
//! This crate is pure logic: the domain model, the wire protocol, the
//! scheduler state machine (driven by an abstract clock) and a deterministic
//! simulator that drives that same scheduler.

pub mod archive;
mod b64;
pub mod catalog;
pub mod codec;
pub mod credit;
pub mod dag;
pub mod ids;
pub mod job;
pub mod model;
pub mod protocol;
pub mod scheduler;
pub mod signing;
pub mod sim;
pub mod transport;

use thiserror::Error;

pub use ids::{AppId, ClientId, EnvId, GroupId, PatchId, ResultId, UserId, WuId};
pub use model::{Digest, FileId, FileTemplate, Timestamp, Workunit, WorkunitState};

/// Violations of domain-model invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid file name {0:?}")]
    InvalidName(String),
    #[error("invalid digest {0:?}: expected 64 lowercase hex characters")]
    InvalidDigest(String),
    #[error("duplicate file name {0:?}")]
    DuplicateName(String),
    #[error("invalid application: {0}")]
    InvalidApplication(String),
    #[error("workunit {0} has non-positive limits")]
    InvalidLimits(WuId),
    #[error("invalid hardware description")]
    InvalidHardware,
    #[error("duplicate workunit {0}")]
    DuplicateWorkunit(WuId),
    #[error("predecessor {0} does not exist")]
    DanglingPredecessor(WuId),
    #[error("dependency cycle: {}", display_path(.0))]
    CycleDetected(Vec<WuId>),
}

fn display_path(path: &[WuId]) -> String {
    path.iter()
        .map(WuId::as_str)
        .collect::<Vec<_>>()
        .join(" -> ")
}
