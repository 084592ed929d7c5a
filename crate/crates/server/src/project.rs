//! The persisted project: scheduler state plus the job registry, changed
//! only by logged commands.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use locflow_core::archive::{self, PackInput};
use locflow_core::catalog::CatalogError;
use locflow_core::job::{self, JobError, JobSpec};
use locflow_core::model::{ApplicationSpec, Hardware, ResultState};
use locflow_core::protocol::{
    ErrorKind, ErrorReply, GetInputDone, InventoryAnswer, Message, ResultReport, StatusReport,
    WorkRequest,
};
use locflow_core::scheduler::{Scheduler, SchedulerError, SchedulerPolicy};
use locflow_core::{ClientId, GroupId, ModelError, Timestamp, UserId, WorkunitState, WuId};
use serde::{Deserialize, Serialize};

use crate::blobs::{BlobError, BlobStore};
use crate::wal::Wal;

/// Snapshot every this many logged commands.
const SNAPSHOT_EVERY: u64 = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRecord {
    pub wu_ids: Vec<WuId>,
    /// Workunits whose outputs make up the job's archive.
    pub sinks: Vec<WuId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectState {
    pub scheduler: Scheduler,
    pub jobs: BTreeMap<String, JobRecord>,
}

/// A state change. Replaying the same commands on the same state gives the
/// same state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Register {
        now: Timestamp,
        client_id: Option<ClientId>,
        user_id: UserId,
        group_id: Option<GroupId>,
        hardware: Hardware,
    },
    WorkRequest {
        now: Timestamp,
        req: WorkRequest,
    },
    Touch {
        now: Timestamp,
        client_id: ClientId,
    },
    InventoryAnswer {
        now: Timestamp,
        answer: InventoryAnswer,
    },
    GetInputDone {
        now: Timestamp,
        done: GetInputDone,
    },
    Result {
        now: Timestamp,
        report: ResultReport,
    },
    Tick {
        now: Timestamp,
    },
    SubmitApplication {
        now: Timestamp,
        spec: ApplicationSpec,
    },
    SubmitJob {
        now: Timestamp,
        spec: JobSpec,
    },
}

pub fn error(kind: ErrorKind, message: impl Into<String>) -> ErrorReply {
    ErrorReply {
        kind,
        message: message.into(),
        detail: Vec::new(),
    }
}

pub fn scheduler_error(e: SchedulerError) -> ErrorReply {
    let kind = match &e {
        SchedulerError::UnknownClient(_) => ErrorKind::UnknownClient,
        SchedulerError::StaleProtocol(_) => ErrorKind::VersionMismatch,
        SchedulerError::UnknownResult(_) => ErrorKind::UnknownResult,
        SchedulerError::ResultNotInProgress(_) => ErrorKind::ResultNotInProgress,
        SchedulerError::UnknownAssignment { .. } => ErrorKind::UnknownAssignment,
        SchedulerError::UnknownWorkunit(_) => ErrorKind::NotFound,
        SchedulerError::Model(ModelError::CycleDetected(_)) => ErrorKind::CycleDetected,
        SchedulerError::Model(_) => ErrorKind::InvalidSubmission,
        SchedulerError::Catalog(CatalogError::UnknownApplication(_)) => {
            ErrorKind::UnknownApplication
        }
        SchedulerError::Catalog(_) => ErrorKind::InvalidSubmission,
    };
    error(kind, e.to_string())
}

impl ProjectState {
    pub fn new(policy: SchedulerPolicy) -> Self {
        ProjectState {
            scheduler: Scheduler::new(policy, Default::default()),
            jobs: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, cmd: &Command) -> Result<Message, ErrorReply> {
        let s = &mut self.scheduler;
        match cmd {
            Command::Register {
                now,
                client_id,
                user_id,
                group_id,
                hardware,
            } => s
                .register_client(
                    *now,
                    client_id.clone(),
                    user_id.clone(),
                    group_id.clone(),
                    *hardware,
                )
                .map(|client_id| Message::Registered { client_id })
                .map_err(scheduler_error),
            Command::WorkRequest { now, req } => s
                .handle_work_request(*now, req)
                .map(Message::Work)
                .map_err(scheduler_error),
            Command::Touch { now, client_id } => {
                s.touch(*now, client_id).map_err(scheduler_error)?;
                Ok(Message::Ack)
            }
            Command::InventoryAnswer { now, answer } => {
                if s.client(&answer.client_id).is_none() {
                    return Err(scheduler_error(SchedulerError::UnknownClient(
                        answer.client_id.clone(),
                    )));
                }
                s.handle_inventory_answers(*now, std::slice::from_ref(answer));
                Ok(Message::Ack)
            }
            Command::GetInputDone { now, done } => {
                s.handle_get_input_done(*now, &done.client_id, &done.wu_id, &done.new_files)
                    .map_err(scheduler_error)?;
                Ok(Message::Ack)
            }
            Command::Result { now, report } => {
                s.handle_result(*now, report).map_err(scheduler_error)?;
                Ok(Message::Ack)
            }
            Command::Tick { now } => {
                s.tick(*now);
                Ok(Message::Ack)
            }
            Command::SubmitApplication { now, spec } => {
                spec.validate()
                    .map_err(|e| error(ErrorKind::InvalidSubmission, e.to_string()))?;
                s.advance_clock(*now);
                s.catalog_mut().insert_app(spec.clone());
                Ok(Message::AppSubmitted {
                    app_id: spec.app_id.clone(),
                    version: spec.version,
                })
            }
            Command::SubmitJob { now, spec } => self.submit_job(*now, spec),
        }
    }

    fn submit_job(&mut self, now: Timestamp, spec: &JobSpec) -> Result<Message, ErrorReply> {
        if self.jobs.contains_key(&spec.name) {
            return Err(error(
                ErrorKind::DuplicateJob,
                format!("job {} exists", spec.name),
            ));
        }
        let expanded = job::expand(spec, 0).map_err(|e| match e {
            JobError::Model(ModelError::CycleDetected(_)) => {
                error(ErrorKind::CycleDetected, e.to_string())
            }
            e => error(ErrorKind::InvalidSubmission, e.to_string()),
        })?;
        for st in &spec.stages {
            if self.scheduler.catalog().app(&st.app_id).is_none() {
                return Err(error(
                    ErrorKind::UnknownApplication,
                    format!("unknown application {}", st.app_id),
                ));
            }
        }
        // Envs and patches must only land in the catalog if the workunits are
        // accepted, so the attempt runs on a copy.
        let mut next = self.scheduler.clone();
        for env in &expanded.envs {
            next.catalog_mut().insert_env(env.clone());
        }
        for patch in &expanded.patches {
            next.catalog_mut().insert_patch(patch.clone());
        }
        let wu_ids = next
            .submit(now, expanded.workunits)
            .map_err(scheduler_error)?;
        self.scheduler = next;
        self.jobs.insert(
            spec.name.clone(),
            JobRecord {
                wu_ids: wu_ids.clone(),
                sinks: expanded.sinks,
            },
        );
        Ok(Message::JobSubmitted {
            job: spec.name.clone(),
            wu_ids,
        })
    }

    pub fn status(&self, job: Option<&str>) -> Result<StatusReport, ErrorReply> {
        match job {
            None => Ok(self.scheduler.status_report(None, None)),
            Some(name) => {
                let rec = self
                    .jobs
                    .get(name)
                    .ok_or_else(|| error(ErrorKind::UnknownJob, format!("unknown job {name}")))?;
                Ok(self
                    .scheduler
                    .status_report(Some(name.to_owned()), Some(&rec.wu_ids)))
            }
        }
    }

    /// Packs the outputs of the job's sink workunits. Every workunit of the
    /// job must be DONE.
    pub fn aggregate(&self, job: &str, blobs: &BlobStore) -> Result<Vec<u8>, ErrorReply> {
        let rec = self
            .jobs
            .get(job)
            .ok_or_else(|| error(ErrorKind::UnknownJob, format!("unknown job {job}")))?;
        let unfinished: Vec<String> = rec
            .wu_ids
            .iter()
            .filter(|id| self.scheduler.state_of(id) != Some(WorkunitState::Done))
            .map(|id| id.to_string())
            .collect();
        if !unfinished.is_empty() {
            return Err(ErrorReply {
                kind: ErrorKind::JobIncomplete,
                message: format!("{} workunits not done", unfinished.len()),
                detail: unfinished,
            });
        }
        aggregate_results(&self.scheduler, &rec.sinks, job, blobs)
    }
}

/// Archive of the outputs of finished workunits, ordered by submission then
/// file name.
pub fn aggregate_results(
    scheduler: &Scheduler,
    wu_ids: &[WuId],
    job: &str,
    blobs: &BlobStore,
) -> Result<Vec<u8>, ErrorReply> {
    let mut files = Vec::new();
    for id in wu_ids {
        let wu = scheduler
            .workunit(id)
            .ok_or_else(|| error(ErrorKind::NotFound, format!("unknown workunit {id}")))?;
        if wu.state != WorkunitState::Done {
            return Err(ErrorReply {
                kind: ErrorKind::JobIncomplete,
                message: format!("{id} is {}", wu.state),
                detail: vec![id.to_string()],
            });
        }
        let result = scheduler
            .results()
            .find(|r| r.wu_id == *id && r.state == ResultState::Success)
            .ok_or_else(|| {
                error(
                    ErrorKind::Internal,
                    format!("{id} has no successful result"),
                )
            })?;
        for f in &result.output_files {
            if !wu.outputs.contains(&f.name) {
                continue;
            }
            let bytes = blobs.get(&f.digest).map_err(|e| match e {
                BlobError::NotFound(_) => error(ErrorKind::NotFound, e.to_string()),
                e => error(ErrorKind::Internal, e.to_string()),
            })?;
            files.push((wu.submit_seq, id.clone(), f.clone(), bytes));
        }
    }
    Ok(archive::pack(
        job,
        files
            .iter()
            .map(|(seq, wu_id, file, bytes)| PackInput {
                submit_seq: *seq,
                wu_id: wu_id.clone(),
                file: file.clone(),
                bytes,
            })
            .collect(),
    ))
}

/// The state together with its log.
pub struct Project {
    pub state: ProjectState,
    wal: Wal<Command>,
}

impl Project {
    /// Recovers the project in `dir`, or starts an empty one with `policy`.
    /// The policy always comes from the caller, so restarting with new
    /// settings takes effect.
    pub fn open(dir: &Path, policy: SchedulerPolicy) -> io::Result<Self> {
        let (wal, recovered) = Wal::open::<ProjectState>(dir)?;
        let mut state = recovered
            .state
            .unwrap_or_else(|| ProjectState::new(policy.clone()));
        state.scheduler.set_policy(policy);
        let replayed = recovered.commands.len();
        for cmd in &recovered.commands {
            // Only successful commands are logged; a failure here means the
            // log and the code disagree, which replay cannot repair.
            if let Err(e) = state.apply(cmd) {
                log::error!("replayed command failed: {}", e.message);
            }
        }
        if replayed > 0 {
            log::info!("replayed {replayed} logged commands");
        }
        Ok(Project { state, wal })
    }

    /// Applies `cmd` and logs it if it succeeded. The reply is only returned
    /// once the log write is durable.
    pub fn execute(&mut self, cmd: Command) -> Result<Message, ErrorReply> {
        let reply = self.state.apply(&cmd)?;
        self.log(&cmd)?;
        Ok(reply)
    }

    /// Runs a tick, logging it only if it changed more than the clock.
    pub fn tick(&mut self, now: Timestamp) -> Result<(), ErrorReply> {
        let mut unchanged = self.state.scheduler.clone();
        unchanged.advance_clock(now);
        self.state.scheduler.tick(now);
        if self.state.scheduler != unchanged {
            self.log(&Command::Tick { now })?;
        }
        Ok(())
    }

    fn log(&mut self, cmd: &Command) -> Result<(), ErrorReply> {
        let res = self.wal.append(cmd).and_then(|()| {
            if self.wal.since_snapshot() >= SNAPSHOT_EVERY {
                self.wal.snapshot(&self.state)
            } else {
                Ok(())
            }
        });
        res.map_err(|e| {
            log::error!("write-ahead log: {e}");
            error(ErrorKind::Internal, format!("persistence failure: {e}"))
        })
    }

    pub fn snapshot(&mut self) -> io::Result<()> {
        self.wal.snapshot(&self.state)
    }
}
