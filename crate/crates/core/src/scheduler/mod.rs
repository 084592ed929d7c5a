//! The locality-aware scheduler.
//!
//! A single state machine over an abstract clock. Every mutating operation
//! takes the current time; the server and the simulator drive the same code.
//!
//! For each work request the scheduler walks dependency-satisfied,
//! hardware-feasible workunits in submission order and
//!
//! 1. assigns the first one whose inputs are all in the requester's
//!    inventory (with matching digests where the digest is known);
//! 2. otherwise hands out a "get input" run for a workunit whose wait window
//!    expired and which names a get-input application;
//! 3. otherwise replies with no work and starts the wait window of every
//!    workunit no live client holds inputs for.
//!
//! While a window runs, inventory answers from clients can reserve the
//! workunit for the first client that proves it holds all inputs.

mod policy;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError};
use crate::credit::CreditLedger;
use crate::dag::validate_graph;
use crate::ids::{ClientId, EnvId, GroupId, ResultId, UserId, WuId};
use crate::model::{
    ClientRecord, FileId, Hardware, Inventory, ResultRecord, ResultState, Timestamp, Workunit,
    WorkunitState,
};
use crate::protocol::{
    Assignment, ClientStatus, CreditRow, GetInputAssignment, InventoryAnswer, InventoryQuery,
    ResultReport, ResultStatus, StatusReport, UploadStatus, WorkReply, WorkRequest, WorkunitStatus,
    PROTOCOL_VERSION,
};
use crate::ModelError;

pub use policy::SchedulerPolicy;
pub use trace::{validate_trace, TraceError, TraceEvent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("unknown client {0}")]
    UnknownClient(ClientId),
    #[error("stale protocol version {0}")]
    StaleProtocol(u32),
    #[error("unknown result {0}")]
    UnknownResult(ResultId),
    #[error("result {0} is not in progress")]
    ResultNotInProgress(ResultId),
    #[error("no get-input run of {wu_id} is outstanding for {client_id}")]
    UnknownAssignment { client_id: ClientId, wu_id: WuId },
    #[error("unknown workunit {0}")]
    UnknownWorkunit(WuId),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientEntry {
    record: ClientRecord,
    /// Set when the client misses a deadline; cleared on its next contact.
    lost: bool,
    cached_envs: BTreeSet<EnvId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GetInputTicket {
    pub ticket: ResultId,
    pub client_id: ClientId,
    pub issued_at: Timestamp,
    pub deadline_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scheduler {
    policy: SchedulerPolicy,
    now: Timestamp,
    catalog: Catalog,
    workunits: BTreeMap<WuId, Workunit>,
    /// submit_seq -> workunit, i.e. FIFO order.
    queue: BTreeMap<u64, WuId>,
    next_seq: u64,
    results: BTreeMap<ResultId, ResultRecord>,
    /// The single non-terminal result of each assigned workunit.
    active: BTreeMap<WuId, ResultId>,
    clients: BTreeMap<ClientId, ClientEntry>,
    wait_timers: BTreeMap<WuId, Timestamp>,
    get_input_eligible: BTreeSet<WuId>,
    get_input_tickets: BTreeMap<WuId, GetInputTicket>,
    reservations: BTreeMap<WuId, ClientId>,
    /// Digests of files whose content the project knows (uploaded outputs).
    known_files: BTreeMap<String, FileId>,
    credit: CreditLedger,
    next_result: u64,
    next_client: u64,
    #[serde(skip)]
    trace: Option<Vec<TraceEvent>>,
}

impl Scheduler {
    pub fn new(policy: SchedulerPolicy, catalog: Catalog) -> Self {
        Scheduler {
            policy,
            now: Timestamp(0),
            catalog,
            workunits: BTreeMap::new(),
            queue: BTreeMap::new(),
            next_seq: 1,
            results: BTreeMap::new(),
            active: BTreeMap::new(),
            clients: BTreeMap::new(),
            wait_timers: BTreeMap::new(),
            get_input_eligible: BTreeSet::new(),
            get_input_tickets: BTreeMap::new(),
            reservations: BTreeMap::new(),
            known_files: BTreeMap::new(),
            credit: CreditLedger::new(),
            next_result: 1,
            next_client: 1,
            trace: None,
        }
    }

    /// Starts recording every state change for later validation.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    // ---- accessors -------------------------------------------------------

    pub fn policy(&self) -> &SchedulerPolicy {
        &self.policy
    }

    pub fn set_policy(&mut self, policy: SchedulerPolicy) {
        self.policy = policy;
    }

    /// Moves the clock forward without any other effect.
    pub fn advance_clock(&mut self, now: Timestamp) {
        self.advance(now);
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn catalog_mut(&mut self) -> &mut Catalog {
        &mut self.catalog
    }

    pub fn workunit(&self, id: &WuId) -> Option<&Workunit> {
        self.workunits.get(id)
    }

    /// Workunits in submission order.
    pub fn workunits(&self) -> impl Iterator<Item = &Workunit> {
        self.queue.values().map(|id| &self.workunits[id])
    }

    pub fn result(&self, id: &ResultId) -> Option<&ResultRecord> {
        self.results.get(id)
    }

    pub fn results(&self) -> impl Iterator<Item = &ResultRecord> {
        self.results.values()
    }

    pub fn active_result(&self, wu: &WuId) -> Option<&ResultRecord> {
        self.active.get(wu).map(|r| &self.results[r])
    }

    pub fn client(&self, id: &ClientId) -> Option<&ClientRecord> {
        self.clients.get(id).map(|c| &c.record)
    }

    pub fn clients(&self) -> impl Iterator<Item = &ClientRecord> {
        self.clients.values().map(|c| &c.record)
    }

    pub fn is_lost(&self, id: &ClientId) -> bool {
        self.clients.get(id).is_some_and(|c| c.lost)
    }

    pub fn has_cached_env(&self, client: &ClientId, env: &EnvId) -> bool {
        self.clients
            .get(client)
            .is_some_and(|c| c.cached_envs.contains(env))
    }

    pub fn reservation(&self, wu: &WuId) -> Option<&ClientId> {
        self.reservations.get(wu)
    }

    pub fn reservations(&self) -> impl Iterator<Item = (&WuId, &ClientId)> {
        self.reservations.iter()
    }

    pub fn wait_timer(&self, wu: &WuId) -> Option<Timestamp> {
        self.wait_timers.get(wu).copied()
    }

    pub fn is_get_input_eligible(&self, wu: &WuId) -> bool {
        self.get_input_eligible.contains(wu)
    }

    pub fn get_input_ticket(&self, wu: &WuId) -> Option<&GetInputTicket> {
        self.get_input_tickets.get(wu)
    }

    pub fn known_file(&self, name: &str) -> Option<&FileId> {
        self.known_files.get(name)
    }

    pub fn credit(&self) -> &CreditLedger {
        &self.credit
    }

    /// True iff every predecessor of `wu` is DONE.
    pub fn dependencies_satisfied(&self, wu: &WuId) -> bool {
        self.workunits.get(wu).is_some_and(|w| {
            w.predecessors
                .iter()
                .all(|p| self.state_of(p) == Some(WorkunitState::Done))
        })
    }

    pub fn state_of(&self, wu: &WuId) -> Option<WorkunitState> {
        self.workunits.get(wu).map(|w| w.state)
    }

    /// Does `inventory` hold every input of `wu`? Names must be present and,
    /// where the project knows a file's digest, the digest must agree.
    pub fn covers(&self, inventory: &Inventory, wu: &Workunit) -> bool {
        wu.required_inputs
            .iter()
            .all(|name| match inventory.get(name) {
                None => false,
                Some(held) => self
                    .known_files
                    .get(name)
                    .is_none_or(|known| known.digest == held.digest),
            })
    }

    /// Names an inventory query should ask clients about: inputs of waiting
    /// workunits whose wait window is running.
    pub fn pending_inventory_query(&self) -> InventoryQuery {
        let mut names = BTreeSet::new();
        if self.policy.poll_via_rpc {
            for wu in self.wait_timers.keys() {
                if let Some(w) = self.workunits.get(wu) {
                    if w.state == WorkunitState::WaitingForData {
                        names.extend(w.required_inputs.iter().cloned());
                    }
                }
            }
        }
        InventoryQuery {
            names: names.into_iter().collect(),
        }
    }

    // ---- clients ---------------------------------------------------------

    /// Registers a client, or refreshes an existing one when `client_id`
    /// names it.
    pub fn register_client(
        &mut self,
        now: Timestamp,
        client_id: Option<ClientId>,
        user_id: UserId,
        group_id: Option<GroupId>,
        hardware: Hardware,
    ) -> Result<ClientId, SchedulerError> {
        hardware.validate()?;
        self.advance(now);
        let id = match client_id {
            Some(id) => id,
            None => loop {
                let id = ClientId::new(format!("c{}", self.next_client));
                self.next_client += 1;
                if !self.clients.contains_key(&id) {
                    break id;
                }
            },
        };
        let entry = self
            .clients
            .entry(id.clone())
            .or_insert_with(|| ClientEntry {
                record: ClientRecord {
                    client_id: id.clone(),
                    user_id: user_id.clone(),
                    group_id: group_id.clone(),
                    hardware,
                    inventory: Inventory::new(),
                    last_contact: now,
                },
                lost: false,
                cached_envs: BTreeSet::new(),
            });
        entry.record.user_id = user_id;
        entry.record.group_id = group_id;
        entry.record.hardware = hardware;
        entry.record.last_contact = now;
        entry.lost = false;
        self.refresh_all();
        Ok(id)
    }

    /// Records contact from a client without a work request.
    pub fn touch(&mut self, now: Timestamp, client: &ClientId) -> Result<(), SchedulerError> {
        self.advance(now);
        let entry = self
            .clients
            .get_mut(client)
            .ok_or_else(|| SchedulerError::UnknownClient(client.clone()))?;
        entry.record.last_contact = now;
        let was_lost = std::mem::replace(&mut entry.lost, false);
        if was_lost {
            self.refresh_all();
        }
        Ok(())
    }

    // ---- submission ------------------------------------------------------

    /// Adds workunits in the given order. Each gets the next `submit_seq`
    /// and starts PENDING.
    pub fn submit(
        &mut self,
        now: Timestamp,
        wus: Vec<Workunit>,
    ) -> Result<Vec<WuId>, SchedulerError> {
        self.advance(now);
        for wu in &wus {
            wu.validate()?;
            self.catalog.check_references(wu)?;
            if self.workunits.contains_key(&wu.wu_id) {
                return Err(ModelError::DuplicateWorkunit(wu.wu_id.clone()).into());
            }
        }
        validate_graph(
            self.workunits
                .values()
                .chain(wus.iter())
                .map(|w| (&w.wu_id, w.predecessors.as_slice())),
        )?;
        let mut ids = Vec::with_capacity(wus.len());
        for mut wu in wus {
            wu.submit_seq = self.next_seq;
            self.next_seq += 1;
            wu.state = WorkunitState::Pending;
            wu.failed_attempts = 0;
            self.queue.insert(wu.submit_seq, wu.wu_id.clone());
            ids.push(wu.wu_id.clone());
            self.record(TraceEvent::Submitted {
                at: now,
                wu_id: wu.wu_id.clone(),
                predecessors: wu.predecessors.clone(),
            });
            self.workunits.insert(wu.wu_id.clone(), wu);
        }
        self.refresh_all();
        Ok(ids)
    }

    // ---- work requests ---------------------------------------------------

    pub fn handle_work_request(
        &mut self,
        now: Timestamp,
        req: &WorkRequest,
    ) -> Result<WorkReply, SchedulerError> {
        if req.protocol_version != PROTOCOL_VERSION {
            return Err(SchedulerError::StaleProtocol(req.protocol_version));
        }
        if !self.clients.contains_key(&req.client_id) {
            return Err(SchedulerError::UnknownClient(req.client_id.clone()));
        }
        req.hardware.validate()?;
        let inventory = Inventory::from_files(req.inventory.iter().cloned())?;
        self.advance(now);
        let changed = {
            let entry = self.clients.get_mut(&req.client_id).expect("checked above");
            let changed = entry.lost || entry.record.inventory != inventory;
            entry.record.hardware = req.hardware;
            entry.record.inventory = inventory;
            entry.record.last_contact = now;
            entry.lost = false;
            changed
        };
        // States are a fixpoint after every operation; only a new inventory
        // or a returning client can move them.
        if changed {
            self.refresh_all();
        }

        let client = &self.clients[&req.client_id].record;

        // Branch 1: inputs already local.
        let local = self.queue.values().find(|id| {
            let wu = &self.workunits[*id];
            wu.state == WorkunitState::Ready
                && self
                    .reservations
                    .get(*id)
                    .is_none_or(|c| *c == req.client_id)
                && self
                    .catalog
                    .requirements(&wu.app_id)
                    .is_some_and(|r| client.hardware.satisfies(&r))
                && self.covers(&client.inventory, wu)
        });
        if let Some(id) = local.cloned() {
            return self
                .assign(now, &id, &req.client_id)
                .map(WorkReply::Assignment);
        }

        // Branch 3: a wait window expired and a get-input application exists.
        let get_input = self.queue.values().find(|id| {
            let wu = &self.workunits[*id];
            wu.state == WorkunitState::WaitingForData
                && self.get_input_eligible.contains(*id)
                && !self.get_input_tickets.contains_key(*id)
                && !self.reservations.contains_key(*id)
                && wu
                    .get_input_app
                    .as_ref()
                    .and_then(|app| self.catalog.requirements(app))
                    .is_some_and(|r| client.hardware.satisfies(&r))
        });
        if let Some(id) = get_input.cloned() {
            return self
                .issue_get_input(now, &id, &req.client_id)
                .map(WorkReply::GetInputAssignment);
        }

        // Branch 2: wait.
        let window = self.policy.wait_window_secs;
        let blocked: Vec<WuId> = self
            .queue
            .values()
            .filter(|id| {
                self.workunits[*id].state == WorkunitState::WaitingForData
                    && !self.wait_timers.contains_key(*id)
                    && !self.get_input_eligible.contains(*id)
                    && !self.get_input_tickets.contains_key(*id)
            })
            .cloned()
            .collect();
        for id in blocked {
            self.wait_timers.insert(id.clone(), now.plus_secs(window));
            self.record(TraceEvent::WaitStarted { at: now, wu_id: id });
        }
        Ok(WorkReply::NoWork {
            backoff_secs: self.policy.no_work_backoff_secs,
        })
    }

    fn assign(
        &mut self,
        now: Timestamp,
        wu_id: &WuId,
        client_id: &ClientId,
    ) -> Result<Assignment, SchedulerError> {
        let wu = &self.workunits[wu_id];
        let manifest = self.catalog.manifest_for(wu)?;
        let result_id = ResultId::new(format!("r{}", self.next_result));
        self.next_result += 1;
        let deadline_at = now.plus_secs(wu.deadline_secs);
        let assignment = Assignment {
            result_id: result_id.clone(),
            wu_id: wu_id.clone(),
            deadline_at,
            manifest,
            inputs: wu.required_inputs.clone(),
            outputs: wu.outputs.clone(),
            max_result_size_bytes: wu.max_result_size_bytes,
        };
        let env_id = wu.env_id.clone();
        self.results.insert(
            result_id.clone(),
            ResultRecord {
                result_id: result_id.clone(),
                wu_id: wu_id.clone(),
                client_id: client_id.clone(),
                state: ResultState::InProgress,
                assigned_at: now,
                deadline_at,
                cpu_seconds: 0.0,
                output_files: Vec::new(),
            },
        );
        self.active.insert(wu_id.clone(), result_id.clone());
        self.reservations.remove(wu_id);
        self.wait_timers.remove(wu_id);
        self.get_input_eligible.remove(wu_id);
        self.get_input_tickets.remove(wu_id);
        if let Some(c) = self.clients.get_mut(client_id) {
            c.cached_envs.insert(env_id);
        }
        self.set_state(wu_id, WorkunitState::Assigned);
        self.record(TraceEvent::Assigned {
            at: now,
            wu_id: wu_id.clone(),
            result_id,
            client_id: client_id.clone(),
        });
        Ok(assignment)
    }

    fn issue_get_input(
        &mut self,
        now: Timestamp,
        wu_id: &WuId,
        client_id: &ClientId,
    ) -> Result<GetInputAssignment, SchedulerError> {
        let wu = &self.workunits[wu_id];
        let app = wu.get_input_app.clone().expect("filtered on get_input_app");
        let manifest = self.catalog.app_manifest(&app)?;
        let ticket = ResultId::new(format!("g{}", self.next_result));
        self.next_result += 1;
        let deadline_at = now.plus_secs(wu.deadline_secs);
        let reply = GetInputAssignment {
            result_id: ticket.clone(),
            wu_id: wu_id.clone(),
            deadline_at,
            manifest,
            targets: wu.required_inputs.clone(),
        };
        self.get_input_tickets.insert(
            wu_id.clone(),
            GetInputTicket {
                ticket,
                client_id: client_id.clone(),
                issued_at: now,
                deadline_at,
            },
        );
        self.record(TraceEvent::GetInputIssued {
            at: now,
            wu_id: wu_id.clone(),
            client_id: client_id.clone(),
        });
        Ok(reply)
    }

    // ---- wait window, RPC answers, get-input -----------------------------

    /// Reserves waiting workunits for the first answering client that holds
    /// all of their inputs. Late or irrelevant answers are ignored.
    pub fn handle_inventory_answers(&mut self, now: Timestamp, answers: &[InventoryAnswer]) {
        self.advance(now);
        let waiting: Vec<WuId> = self
            .queue
            .values()
            .filter(|id| {
                self.workunits[*id].state == WorkunitState::WaitingForData
                    && !self.reservations.contains_key(*id)
                    && !self.get_input_tickets.contains_key(*id)
            })
            .cloned()
            .collect();
        for id in waiting {
            let wu = &self.workunits[&id];
            let req = self.catalog.requirements(&wu.app_id).unwrap_or_default();
            let candidates: Vec<&ClientId> = answers
                .iter()
                .filter(|a| {
                    self.clients.get(&a.client_id).is_some_and(|c| {
                        !c.lost
                            && c.record.hardware.satisfies(&req)
                            && wu.required_inputs.iter().all(|n| a.held.contains(n))
                    })
                })
                .map(|a| &a.client_id)
                .collect();
            let chosen = if self.policy.prefer_cached_env {
                candidates
                    .iter()
                    .find(|c| self.has_cached_env(c, &wu.env_id))
                    .or(candidates.first())
            } else {
                candidates.first()
            };
            if let Some(client) = chosen.map(|c| (*c).clone()) {
                self.reserve(now, &id, client);
            }
        }
        self.refresh_all();
    }

    fn reserve(&mut self, now: Timestamp, wu_id: &WuId, client_id: ClientId) {
        self.wait_timers.remove(wu_id);
        self.get_input_eligible.remove(wu_id);
        self.record(TraceEvent::Reserved {
            at: now,
            wu_id: wu_id.clone(),
            client_id: client_id.clone(),
        });
        self.reservations.insert(wu_id.clone(), client_id);
        if self.workunits[wu_id].state == WorkunitState::WaitingForData {
            self.set_state(wu_id, WorkunitState::Ready);
        }
    }

    /// Closes wait windows that ran out: the workunit becomes eligible for
    /// a get-input run, or FAILED when it has no get-input application.
    pub fn expire_waits(&mut self, now: Timestamp) {
        self.advance(now);
        let expired: Vec<WuId> = self
            .wait_timers
            .iter()
            .filter(|(_, until)| now > **until)
            .map(|(id, _)| id.clone())
            .collect();
        if expired.is_empty() {
            return;
        }
        for id in expired {
            self.wait_timers.remove(&id);
            let wu = &self.workunits[&id];
            if wu.state != WorkunitState::WaitingForData {
                continue;
            }
            if wu.get_input_app.is_some() {
                self.get_input_eligible.insert(id.clone());
                self.record(TraceEvent::WaitExpired { at: now, wu_id: id });
            } else {
                self.record(TraceEvent::WaitExpired {
                    at: now,
                    wu_id: id.clone(),
                });
                self.set_state(&id, WorkunitState::Failed);
            }
        }
        self.refresh_all();
    }

    /// A client finished a get-input run and now declares `new_files`.
    pub fn handle_get_input_done(
        &mut self,
        now: Timestamp,
        client_id: &ClientId,
        wu_id: &WuId,
        new_files: &[FileId],
    ) -> Result<(), SchedulerError> {
        match self.get_input_tickets.get(wu_id) {
            Some(t) if t.client_id == *client_id => {}
            _ => {
                return Err(SchedulerError::UnknownAssignment {
                    client_id: client_id.clone(),
                    wu_id: wu_id.clone(),
                })
            }
        }
        let mut added = Inventory::new();
        for f in new_files {
            f.validate()?;
            added.insert(f.clone());
        }
        self.advance(now);
        self.get_input_tickets.remove(wu_id);
        let window = self.policy.wait_window_secs;
        let entry = self
            .clients
            .get_mut(client_id)
            .ok_or_else(|| SchedulerError::UnknownClient(client_id.clone()))?;
        entry.record.last_contact = now;
        entry.lost = false;
        for f in added.files() {
            entry.record.inventory.insert(f.clone());
        }
        let covered = {
            let inv = &self.clients[client_id].record.inventory;
            self.covers(inv, &self.workunits[wu_id])
        };
        if !added.is_empty()
            && covered
            && self.workunits[wu_id].state == WorkunitState::WaitingForData
        {
            self.reserve(now, wu_id, client_id.clone());
        } else if self.workunits[wu_id].state == WorkunitState::WaitingForData {
            self.get_input_eligible.remove(wu_id);
            self.wait_timers
                .insert(wu_id.clone(), now.plus_secs(window));
            self.record(TraceEvent::WaitStarted {
                at: now,
                wu_id: wu_id.clone(),
            });
        }
        self.refresh_all();
        Ok(())
    }

    // ---- results and deadlines -------------------------------------------

    /// Closes an in-progress result and returns its final state.
    pub fn handle_result(
        &mut self,
        now: Timestamp,
        report: &ResultReport,
    ) -> Result<ResultState, SchedulerError> {
        let result = self
            .results
            .get(&report.result_id)
            .ok_or_else(|| SchedulerError::UnknownResult(report.result_id.clone()))?;
        if result.state != ResultState::InProgress {
            return Err(SchedulerError::ResultNotInProgress(
                report.result_id.clone(),
            ));
        }
        let wu_id = result.wu_id.clone();
        let client_id = result.client_id.clone();
        for f in &report.outputs {
            f.validate()?;
        }
        self.advance(now);
        let wu = &self.workunits[&wu_id];

        let outcome = if report
            .outputs
            .iter()
            .any(|f| f.size_bytes > wu.max_result_size_bytes)
        {
            ResultState::Oversize
        } else if report.status == UploadStatus::Success
            && wu
                .outputs
                .iter()
                .all(|name| report.outputs.iter().any(|f| f.name == *name))
        {
            ResultState::Success
        } else {
            ResultState::Error
        };
        let expected: BTreeSet<&str> = wu.outputs.iter().map(String::as_str).collect();
        let produced: Vec<FileId> = report
            .outputs
            .iter()
            .filter(|f| expected.contains(f.name.as_str()))
            .cloned()
            .collect();

        let result = self
            .results
            .get_mut(&report.result_id)
            .expect("checked above");
        result.state = outcome;
        result.cpu_seconds = if report.cpu_seconds.is_finite() {
            report.cpu_seconds.max(0.0)
        } else {
            0.0
        };
        result.output_files = report.outputs.clone();
        let cpu = result.cpu_seconds;
        self.active.remove(&wu_id);
        self.record(TraceEvent::ResultClosed {
            at: now,
            wu_id: wu_id.clone(),
            result_id: report.result_id.clone(),
            state: outcome,
        });

        if outcome == ResultState::Success {
            if let Some(entry) = self.clients.get_mut(&client_id) {
                for f in &produced {
                    entry.record.inventory.insert(f.clone());
                }
                entry.record.last_contact = now;
                entry.lost = false;
                self.credit.grant(&entry.record, cpu);
            }
            for f in produced {
                self.known_files.insert(f.name.clone(), f);
            }
            self.set_state(&wu_id, WorkunitState::Done);
        } else {
            self.fail_attempt(&wu_id);
        }
        self.refresh_all();
        Ok(outcome)
    }

    fn fail_attempt(&mut self, wu_id: &WuId) {
        let wu = self.workunits.get_mut(wu_id).expect("known workunit");
        wu.failed_attempts += 1;
        if wu.retries_exhausted() {
            self.set_state(wu_id, WorkunitState::Failed);
        } else if self.holder_exists(wu_id) {
            self.set_state(wu_id, WorkunitState::Ready);
        } else {
            self.set_state(wu_id, WorkunitState::WaitingForData);
        }
    }

    /// Times out in-progress results with `now > deadline_at`; their clients
    /// are considered lost until they make contact again.
    pub fn expire_deadlines(&mut self, now: Timestamp) {
        self.advance(now);
        let overdue: Vec<(WuId, ResultId)> = self
            .active
            .iter()
            .filter(|(_, r)| now > self.results[*r].deadline_at)
            .map(|(w, r)| (w.clone(), r.clone()))
            .collect();
        let mut changed = !overdue.is_empty();
        for (wu_id, result_id) in overdue {
            let result = self.results.get_mut(&result_id).expect("active result");
            result.state = ResultState::Timeout;
            let client_id = result.client_id.clone();
            self.active.remove(&wu_id);
            self.record(TraceEvent::ResultClosed {
                at: now,
                wu_id: wu_id.clone(),
                result_id,
                state: ResultState::Timeout,
            });
            self.mark_lost(&client_id);
            self.fail_attempt(&wu_id);
        }

        let stale: Vec<WuId> = self
            .get_input_tickets
            .iter()
            .filter(|(_, t)| now > t.deadline_at)
            .map(|(w, _)| w.clone())
            .collect();
        changed |= !stale.is_empty();
        for wu_id in stale {
            if let Some(t) = self.get_input_tickets.remove(&wu_id) {
                self.mark_lost(&t.client_id);
            }
            if self.workunits[&wu_id].state == WorkunitState::WaitingForData {
                self.get_input_eligible.insert(wu_id);
            }
        }
        if changed {
            self.refresh_all();
        }
    }

    /// Deadline and wait-window expiry in one step.
    pub fn tick(&mut self, now: Timestamp) {
        self.expire_deadlines(now);
        self.expire_waits(now);
    }

    fn mark_lost(&mut self, client_id: &ClientId) {
        if let Some(c) = self.clients.get_mut(client_id) {
            c.lost = true;
        }
        self.reservations.retain(|_, c| c != client_id);
    }

    // ---- state bookkeeping -------------------------------------------------

    fn advance(&mut self, now: Timestamp) {
        if now > self.now {
            self.now = now;
        }
    }

    fn record(&mut self, ev: TraceEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(ev);
        }
    }

    fn set_state(&mut self, wu_id: &WuId, to: WorkunitState) {
        let wu = self.workunits.get_mut(wu_id).expect("known workunit");
        let from = wu.state;
        if from == to {
            return;
        }
        assert!(
            from.can_transition_to(to),
            "illegal workunit transition {from} -> {to} for {wu_id}"
        );
        wu.state = to;
        if to != WorkunitState::WaitingForData {
            self.wait_timers.remove(wu_id);
            self.get_input_eligible.remove(wu_id);
        }
        if to != WorkunitState::Ready && to != WorkunitState::WaitingForData {
            self.reservations.remove(wu_id);
        }
        let at = self.now;
        self.record(TraceEvent::Transition {
            at,
            wu_id: wu_id.clone(),
            from,
            to,
        });
    }

    /// Some live client's last declared inventory holds every input.
    fn holder_exists(&self, wu_id: &WuId) -> bool {
        let wu = &self.workunits[wu_id];
        self.clients
            .values()
            .any(|c| !c.lost && self.covers(&c.record.inventory, wu))
    }

    /// Re-derives data-dependent states until nothing changes: promotes
    /// pending workunits whose predecessors are done, fails those with a
    /// failed predecessor, and moves workunits between READY and
    /// WAITING_FOR_DATA as holders appear or disappear.
    fn refresh_all(&mut self) {
        loop {
            let mut changed = false;
            let ids: Vec<WuId> = self.queue.values().cloned().collect();
            for id in ids {
                let wu = &self.workunits[&id];
                let target = match wu.state {
                    WorkunitState::Pending => {
                        let preds: Vec<WorkunitState> = wu
                            .predecessors
                            .iter()
                            .map(|p| self.workunits[p].state)
                            .collect();
                        if preds.contains(&WorkunitState::Failed) {
                            Some(WorkunitState::Failed)
                        } else if preds.iter().all(|s| *s == WorkunitState::Done) {
                            Some(self.data_state(&id))
                        } else {
                            None
                        }
                    }
                    WorkunitState::WaitingForData | WorkunitState::Ready => {
                        Some(self.data_state(&id))
                    }
                    _ => None,
                };
                if let Some(to) = target {
                    if to != self.workunits[&id].state {
                        self.set_state(&id, to);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn data_state(&self, id: &WuId) -> WorkunitState {
        if self.workunits[id].required_inputs.is_empty() {
            return WorkunitState::Ready;
        }
        let reserved_live = self
            .reservations
            .get(id)
            .is_some_and(|c| self.clients.get(c).is_some_and(|e| !e.lost));
        if reserved_live || self.holder_exists(id) {
            WorkunitState::Ready
        } else {
            WorkunitState::WaitingForData
        }
    }

    // ---- reporting -------------------------------------------------------

    /// Status over all workunits, or over `only` when given.
    pub fn status_report(&self, job: Option<String>, only: Option<&[WuId]>) -> StatusReport {
        let selected: Vec<&Workunit> = match only {
            Some(ids) => ids.iter().filter_map(|id| self.workunits.get(id)).collect(),
            None => self.workunits().collect(),
        };
        let mut counts: BTreeMap<WorkunitState, u64> =
            WorkunitState::ALL.iter().map(|s| (*s, 0)).collect();
        let mut workunits = Vec::with_capacity(selected.len());
        let mut results = Vec::new();
        for wu in &selected {
            *counts.entry(wu.state).or_default() += 1;
            let client_id = self
                .active
                .get(&wu.wu_id)
                .map(|r| self.results[r].client_id.clone())
                .or_else(|| self.reservations.get(&wu.wu_id).cloned());
            workunits.push(WorkunitStatus {
                wu_id: wu.wu_id.clone(),
                state: wu.state,
                submit_seq: wu.submit_seq,
                failed_attempts: wu.failed_attempts,
                client_id,
            });
        }
        let wanted: BTreeSet<&WuId> = selected.iter().map(|w| &w.wu_id).collect();
        for r in self.results.values() {
            if wanted.contains(&r.wu_id) {
                results.push(ResultStatus {
                    result_id: r.result_id.clone(),
                    wu_id: r.wu_id.clone(),
                    client_id: r.client_id.clone(),
                    state: r.state,
                });
            }
        }
        StatusReport {
            job,
            counts,
            total: selected.len() as u64,
            workunits,
            results,
            clients: self
                .clients
                .values()
                .map(|c| ClientStatus {
                    client_id: c.record.client_id.clone(),
                    user_id: c.record.user_id.clone(),
                    inventory_files: c.record.inventory.len() as u64,
                    inventory_bytes: c.record.inventory.files().map(|f| f.size_bytes).sum(),
                    lost: c.lost,
                })
                .collect(),
            leaderboard: self
                .credit
                .leaderboard()
                .into_iter()
                .map(|(user_id, credit)| CreditRow { user_id, credit })
                .collect(),
        }
    }
}
