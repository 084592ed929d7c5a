//! Scheduler event traces and their validator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ClientId, ResultId, WuId};
use crate::model::{ResultState, Timestamp, WorkunitState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TraceEvent {
    Submitted {
        at: Timestamp,
        wu_id: WuId,
        predecessors: Vec<WuId>,
    },
    Transition {
        at: Timestamp,
        wu_id: WuId,
        from: WorkunitState,
        to: WorkunitState,
    },
    Assigned {
        at: Timestamp,
        wu_id: WuId,
        result_id: ResultId,
        client_id: ClientId,
    },
    ResultClosed {
        at: Timestamp,
        wu_id: WuId,
        result_id: ResultId,
        state: ResultState,
    },
    WaitStarted {
        at: Timestamp,
        wu_id: WuId,
    },
    WaitExpired {
        at: Timestamp,
        wu_id: WuId,
    },
    Reserved {
        at: Timestamp,
        wu_id: WuId,
        client_id: ClientId,
    },
    GetInputIssued {
        at: Timestamp,
        wu_id: WuId,
        client_id: ClientId,
    },
}

impl TraceEvent {
    pub fn at(&self) -> Timestamp {
        match self {
            TraceEvent::Submitted { at, .. }
            | TraceEvent::Transition { at, .. }
            | TraceEvent::Assigned { at, .. }
            | TraceEvent::ResultClosed { at, .. }
            | TraceEvent::WaitStarted { at, .. }
            | TraceEvent::WaitExpired { at, .. }
            | TraceEvent::Reserved { at, .. }
            | TraceEvent::GetInputIssued { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("event {index}: unknown workunit {wu_id}")]
    UnknownWorkunit { index: usize, wu_id: WuId },
    #[error("event {index}: {wu_id} recorded {from} but was {actual}")]
    StateMismatch {
        index: usize,
        wu_id: WuId,
        from: WorkunitState,
        actual: WorkunitState,
    },
    #[error("event {index}: illegal transition {from} -> {to} for {wu_id}")]
    IllegalTransition {
        index: usize,
        wu_id: WuId,
        from: WorkunitState,
        to: WorkunitState,
    },
    #[error("event {index}: {wu_id} assigned at {at} before predecessor {pred} completed")]
    OrderViolation {
        index: usize,
        wu_id: WuId,
        pred: WuId,
        at: Timestamp,
    },
    #[error("event {index}: result {result_id} of {wu_id} opened twice or closed while not open")]
    ResultMismatch {
        index: usize,
        wu_id: WuId,
        result_id: ResultId,
    },
    #[error("event {index}: time went backwards")]
    TimeReversal { index: usize },
}

/// Replays a trace through the workunit state machine. Checks that every
/// transition starts from the replayed state and is allowed, that time never
/// decreases, that a workunit never has two open results, and that no
/// workunit is assigned before all of its predecessors completed.
pub fn validate_trace(events: &[TraceEvent]) -> Result<(), TraceError> {
    struct Replay {
        state: WorkunitState,
        predecessors: Vec<WuId>,
        done_at: Option<Timestamp>,
        open_result: Option<ResultId>,
    }
    let mut wus: BTreeMap<WuId, Replay> = BTreeMap::new();
    let mut last = Timestamp(0);
    for (index, ev) in events.iter().enumerate() {
        if ev.at() < last {
            return Err(TraceError::TimeReversal { index });
        }
        last = ev.at();
        let unknown = |wu_id: &WuId| TraceError::UnknownWorkunit {
            index,
            wu_id: wu_id.clone(),
        };
        match ev {
            TraceEvent::Submitted {
                wu_id,
                predecessors,
                ..
            } => {
                wus.insert(
                    wu_id.clone(),
                    Replay {
                        state: WorkunitState::Pending,
                        predecessors: predecessors.clone(),
                        done_at: None,
                        open_result: None,
                    },
                );
            }
            TraceEvent::Transition {
                at,
                wu_id,
                from,
                to,
            } => {
                let r = wus.get_mut(wu_id).ok_or_else(|| unknown(wu_id))?;
                if r.state != *from {
                    return Err(TraceError::StateMismatch {
                        index,
                        wu_id: wu_id.clone(),
                        from: *from,
                        actual: r.state,
                    });
                }
                if !from.can_transition_to(*to) {
                    return Err(TraceError::IllegalTransition {
                        index,
                        wu_id: wu_id.clone(),
                        from: *from,
                        to: *to,
                    });
                }
                r.state = *to;
                if *to == WorkunitState::Done {
                    r.done_at = Some(*at);
                }
            }
            TraceEvent::Assigned {
                at,
                wu_id,
                result_id,
                ..
            } => {
                let r = wus.get(wu_id).ok_or_else(|| unknown(wu_id))?;
                for p in &r.predecessors {
                    let ok = wus
                        .get(p)
                        .and_then(|pr| pr.done_at)
                        .is_some_and(|d| d <= *at);
                    if !ok {
                        return Err(TraceError::OrderViolation {
                            index,
                            wu_id: wu_id.clone(),
                            pred: p.clone(),
                            at: *at,
                        });
                    }
                }
                let r = wus.get_mut(wu_id).expect("checked");
                if r.open_result.is_some() || r.state != WorkunitState::Assigned {
                    return Err(TraceError::ResultMismatch {
                        index,
                        wu_id: wu_id.clone(),
                        result_id: result_id.clone(),
                    });
                }
                r.open_result = Some(result_id.clone());
            }
            TraceEvent::ResultClosed {
                wu_id, result_id, ..
            } => {
                let r = wus.get_mut(wu_id).ok_or_else(|| unknown(wu_id))?;
                if r.open_result.as_ref() != Some(result_id) {
                    return Err(TraceError::ResultMismatch {
                        index,
                        wu_id: wu_id.clone(),
                        result_id: result_id.clone(),
                    });
                }
                r.open_result = None;
            }
            TraceEvent::WaitStarted { wu_id, .. }
            | TraceEvent::WaitExpired { wu_id, .. }
            | TraceEvent::Reserved { wu_id, .. }
            | TraceEvent::GetInputIssued { wu_id, .. } => {
                wus.get(wu_id).ok_or_else(|| unknown(wu_id))?;
            }
        }
    }
    Ok(())
}
