//! Deterministic discrete-event simulator.
//!
//! Synthetic clients talk to the real [`Scheduler`] through its `handle_*`
//! operations on a virtual millisecond clock. Every interaction that hands a
//! client work costs `overhead_secs`; a client that gets NO_WORK asks again
//! after `poll_interval_secs`; a client that finishes a task asks again
//! immediately.
//!
//! The stage costs and byte sizes in [`SimConfig::default`] are calibration
//! constants for this model, not measurements.

mod pipeline;
mod report;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::ids::{AppId, ClientId, EnvId, ResultId, UserId, WuId};
use crate::model::{
    AppFile, ApplicationSpec, Digest, EnvironmentBundle, FileId, Hardware, ResultState, Timestamp,
    WorkunitState,
};
use crate::protocol::{
    InventoryAnswer, ResultReport, UploadStatus, WorkReply, WorkRequest, PROTOCOL_VERSION,
};
use crate::scheduler::trace::TraceEvent;
use crate::scheduler::{Scheduler, SchedulerPolicy};

pub use pipeline::{
    build_muon_pipeline, Pipeline, Stage, TaskProfile, EXTERNAL_INPUT, FETCH_APP, MUON_APP,
    PARTITIONS,
};
pub use report::{emit_report, REPORT_COLUMNS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event count {0} is not a positive multiple of 10")]
    InvalidEventCount(u64),
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
}

/// Where the outputs of a finished task end up.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Outputs stay on the client that produced them.
    #[default]
    Strict,
    /// Outputs are copied to every live client (shared storage).
    Replicate,
    /// Generation outputs go to a data server only; every partition has to
    /// be fetched by a get-input run before it can be processed.
    GetInput,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::Strict => "strict",
            Placement::Replicate => "replicate",
            Placement::GetInput => "get-input",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageValues<T> {
    pub gen: T,
    pub sim: T,
    pub digi: T,
    pub reco: T,
}

impl<T: Copy> StageValues<T> {
    pub fn get(&self, stage: Stage) -> T {
        match stage {
            Stage::Gen => self.gen,
            Stage::Sim => self.sim,
            Stage::Digi => self.digi,
            Stage::Reco => self.reco,
        }
    }
}

/// Client `client` (index into the client list) stops responding at `at_secs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crash {
    pub client: u32,
    pub at_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_clients: u32,
    pub events: u64,
    /// Seconds of compute per event.
    pub cost_per_event: StageValues<f64>,
    /// Output bytes per event.
    pub bytes_per_event: StageValues<u64>,
    /// Seconds added to every interaction that hands out work.
    pub overhead_secs: f64,
    pub poll_interval_secs: f64,
    pub placement: Placement,
    pub wait_window_secs: u64,
    pub poll_via_rpc: bool,
    /// Seconds a get-input run takes, excluding overhead.
    pub get_input_secs: f64,
    pub deadline_secs: u64,
    pub max_retries: u32,
    pub app_bytes: u64,
    pub env_bytes: u64,
    /// Clients start at offsets drawn uniformly from `[0, start_jitter_secs]`.
    pub start_jitter_secs: f64,
    pub seed: u64,
    pub crashes: Vec<Crash>,
    /// Simulation stops at this virtual time even if work remains.
    pub horizon_secs: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_clients: 1,
            events: 100,
            cost_per_event: StageValues {
                gen: 1.0,
                sim: 6.0,
                digi: 2.0,
                reco: 4.0,
            },
            bytes_per_event: StageValues {
                gen: 100_000,
                sim: 500_000,
                digi: 200_000,
                reco: 50_000,
            },
            overhead_secs: 40.0,
            poll_interval_secs: 5.0,
            placement: Placement::Strict,
            wait_window_secs: 60,
            poll_via_rpc: true,
            get_input_secs: 10.0,
            deadline_secs: 86_400,
            max_retries: 3,
            app_bytes: 5_000_000,
            env_bytes: 100_000,
            start_jitter_secs: 0.0,
            seed: 0,
            crashes: Vec::new(),
            horizon_secs: 1.0e8,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_owned()));
        if self.n_clients == 0 {
            return bad("n_clients must be at least 1");
        }
        if self.events < PARTITIONS || !self.events.is_multiple_of(PARTITIONS) {
            return Err(SimError::InvalidEventCount(self.events));
        }
        let c = &self.cost_per_event;
        if [c.gen, c.sim, c.digi, c.reco]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return bad("stage costs must be finite and non-negative");
        }
        if !self.overhead_secs.is_finite() || self.overhead_secs < 0.0 {
            return bad("overhead must be finite and non-negative");
        }
        if !self.poll_interval_secs.is_finite() || self.poll_interval_secs <= 0.0 {
            return bad("poll interval must be positive");
        }
        if !self.get_input_secs.is_finite() || self.get_input_secs < 0.0 {
            return bad("get-input time must be finite and non-negative");
        }
        if !self.start_jitter_secs.is_finite() || self.start_jitter_secs < 0.0 {
            return bad("start jitter must be finite and non-negative");
        }
        if self.wait_window_secs == 0 || self.deadline_secs == 0 {
            return bad("wait window and deadline must be positive");
        }
        if self.horizon_secs.is_nan() || self.horizon_secs <= 0.0 {
            return bad("horizon must be positive");
        }
        if self.crashes.iter().any(|c| c.client >= self.n_clients) {
            return bad("crash names a client that does not exist");
        }
        Ok(())
    }

    /// Compute seconds of one workunit.
    pub fn task_secs(&self, profile: &TaskProfile) -> f64 {
        self.cost_per_event.get(profile.stage) * profile.events as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Sim,
    /// Serial execution on one machine without the framework.
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub kind: RunKind,
    pub events: u64,
    pub n_clients: u32,
    pub placement: Placement,
    pub overhead_secs: f64,
    pub makespan_secs: f64,
    /// Serial execution of every stage on one machine without overhead.
    pub baseline_secs: f64,
    pub messages_exchanged: u64,
    /// Input-file bytes that crossed the network: replicated outputs and
    /// get-input fetches.
    pub bytes_moved_input: u64,
    /// Application, environment and result-upload bytes.
    pub bytes_moved_other: u64,
    /// Compute jobs whose inputs were all produced or fetched by the client
    /// that ran them, over all compute jobs.
    pub locality_fraction: f64,
    pub compute_jobs: u64,
    pub local_jobs: u64,
    pub get_input_runs: u64,
    pub timeouts: u64,
    pub done: u64,
    pub failed: u64,
    /// Workunits still non-terminal when the simulation stopped.
    pub unfinished: u64,
    /// Compute seconds spent by each client, including work lost to crashes.
    pub client_busy_secs: Vec<f64>,
    /// Compute seconds of every task started.
    pub executed_task_secs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Origin {
    /// Produced by a job on this client or fetched by its own get-input run.
    Own,
    /// Pushed by replication.
    Pushed,
}

struct SimClient {
    id: ClientId,
    alive: bool,
    inventory: BTreeMap<String, (FileId, Origin)>,
    /// Names of application/environment files already downloaded.
    cache: BTreeSet<(String, Digest)>,
    busy_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Request(usize),
    Finish {
        client: usize,
        result_id: ResultId,
        wu_id: WuId,
    },
    FetchDone {
        client: usize,
        wu_id: WuId,
        targets: Vec<String>,
    },
    Crash(usize),
}

fn ms(secs: f64) -> u64 {
    (secs * 1000.0).round() as u64
}

fn synthetic_file(name: &str, tag: &str, size_bytes: u64) -> FileId {
    let digest = Digest::of(format!("{name}\0{tag}").as_bytes());
    FileId::new(name, digest, size_bytes).expect("generated names are valid")
}

fn catalog(config: &SimConfig) -> Catalog {
    let mut catalog = Catalog::new();
    for app in [MUON_APP, FETCH_APP] {
        catalog.insert_app(ApplicationSpec {
            app_id: AppId::new(app),
            version: 1,
            files: vec![AppFile {
                file: synthetic_file(&format!("{app}.bin"), "app", config.app_bytes),
                signature: vec![0; 64],
                entry: true,
            }],
            min_memory_mb: 0,
            min_disk_mb: 0,
        });
    }
    for stage in Stage::ALL {
        catalog.insert_env(EnvironmentBundle {
            env_id: EnvId::new(format!("env-{}", stage.as_str())),
            app_id: AppId::new(MUON_APP),
            files: vec![synthetic_file(
                &format!("{}.opts", stage.as_str()),
                "env",
                config.env_bytes,
            )],
        });
    }
    catalog
}

/// The result of a run together with the scheduler's event trace.
pub struct SimOutcome {
    pub report: SimReport,
    pub trace: Vec<TraceEvent>,
}

pub fn simulate(config: &SimConfig, pipeline: &Pipeline) -> Result<SimReport, SimError> {
    simulate_traced(config, pipeline).map(|o| o.report)
}

pub fn simulate_traced(config: &SimConfig, pipeline: &Pipeline) -> Result<SimOutcome, SimError> {
    config.validate()?;
    Sim::new(config, pipeline)?.run()
}

struct Sim<'a> {
    config: &'a SimConfig,
    pipeline: &'a Pipeline,
    sched: Scheduler,
    clients: Vec<SimClient>,
    queue: BinaryHeap<Reverse<(u64, u64, Event)>>,
    next_event: u64,
    last_query_ms: Option<u64>,
    report: SimReport,
}

impl<'a> Sim<'a> {
    fn new(config: &'a SimConfig, pipeline: &'a Pipeline) -> Result<Self, SimError> {
        let policy = SchedulerPolicy {
            wait_window_secs: config.wait_window_secs,
            poll_via_rpc: config.poll_via_rpc,
            prefer_cached_env: false,
            no_work_backoff_secs: config.poll_interval_secs.ceil() as u64,
        };
        let mut sched = Scheduler::new(policy, catalog(config));
        sched.enable_trace();

        let mut wus = pipeline.workunits.clone();
        for wu in &mut wus {
            wu.deadline_secs = config.deadline_secs;
            wu.max_retries = config.max_retries;
            if config.placement == Placement::GetInput
                && pipeline.profiles.get(&wu.wu_id).map(|p| p.stage) == Some(Stage::Sim)
            {
                wu.get_input_app = Some(AppId::new(FETCH_APP));
            }
        }
        sched
            .submit(Timestamp(0), wus)
            .map_err(|e| SimError::InvalidConfig(format!("pipeline rejected: {e}")))?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sim = Sim {
            config,
            pipeline,
            sched,
            clients: Vec::new(),
            queue: BinaryHeap::new(),
            next_event: 0,
            last_query_ms: None,
            report: SimReport {
                kind: RunKind::Sim,
                events: config.events,
                n_clients: config.n_clients,
                placement: config.placement,
                overhead_secs: config.overhead_secs,
                makespan_secs: 0.0,
                baseline_secs: baseline_secs(config, pipeline),
                messages_exchanged: 0,
                bytes_moved_input: 0,
                bytes_moved_other: 0,
                locality_fraction: 1.0,
                compute_jobs: 0,
                local_jobs: 0,
                get_input_runs: 0,
                timeouts: 0,
                done: 0,
                failed: 0,
                unfinished: 0,
                client_busy_secs: Vec::new(),
                executed_task_secs: 0.0,
            },
        };
        for i in 0..config.n_clients {
            let id = sim
                .sched
                .register_client(
                    Timestamp(0),
                    None,
                    UserId::new(format!("user{i}")),
                    None,
                    Hardware::default(),
                )
                .expect("default hardware is valid");
            sim.report.messages_exchanged += 2;
            sim.clients.push(SimClient {
                id,
                alive: true,
                inventory: BTreeMap::new(),
                cache: BTreeSet::new(),
                busy_ms: 0,
            });
            let start = if config.start_jitter_secs > 0.0 {
                ms(rng.gen_range(0.0..=config.start_jitter_secs))
            } else {
                0
            };
            sim.push(start, Event::Request(i as usize));
        }
        for c in &config.crashes {
            sim.push(ms(c.at_secs.max(0.0)), Event::Crash(c.client as usize));
        }
        Ok(sim)
    }

    fn push(&mut self, at: u64, ev: Event) {
        self.queue.push(Reverse((at, self.next_event, ev)));
        self.next_event += 1;
    }

    fn all_terminal(&self) -> bool {
        self.sched.workunits().all(|w| w.state.is_terminal())
    }

    fn run(mut self) -> Result<SimOutcome, SimError> {
        let horizon = ms(self.config.horizon_secs);
        while let Some(Reverse((t, _, ev))) = self.queue.pop() {
            if self.all_terminal() || t > horizon {
                break;
            }
            match ev {
                Event::Request(c) => self.request(t, c),
                Event::Finish {
                    client,
                    result_id,
                    wu_id,
                } => self.finish(t, client, result_id, wu_id),
                Event::FetchDone {
                    client,
                    wu_id,
                    targets,
                } => self.fetch_done(t, client, wu_id, targets),
                Event::Crash(c) => self.clients[c].alive = false,
            }
        }
        let mut report = self.report;
        for wu in self.sched.workunits() {
            match wu.state {
                WorkunitState::Done => report.done += 1,
                WorkunitState::Failed => report.failed += 1,
                _ => report.unfinished += 1,
            }
        }
        report.timeouts = self
            .sched
            .results()
            .filter(|r| r.state == ResultState::Timeout)
            .count() as u64;
        let trace = self.sched.take_trace();
        report.makespan_secs = trace
            .iter()
            .filter_map(|ev| match ev {
                TraceEvent::Transition { at, to, .. } if to.is_terminal() => Some(at.0),
                _ => None,
            })
            .max()
            .unwrap_or(0) as f64
            / 1000.0;
        report.locality_fraction = if report.compute_jobs == 0 {
            1.0
        } else {
            report.local_jobs as f64 / report.compute_jobs as f64
        };
        report.client_busy_secs = self
            .clients
            .iter()
            .map(|c| c.busy_ms as f64 / 1000.0)
            .collect();
        Ok(SimOutcome { report, trace })
    }

    fn inventory_of(&self, c: usize) -> Vec<FileId> {
        self.clients[c]
            .inventory
            .values()
            .map(|(f, _)| f.clone())
            .collect()
    }

    /// Asks every live client about the inputs of waiting workunits, at
    /// most once per poll interval.
    fn poll_inventories(&mut self, t: u64) {
        let query = self.sched.pending_inventory_query();
        if query.names.is_empty() {
            return;
        }
        let interval = ms(self.config.poll_interval_secs);
        if self.last_query_ms.is_some_and(|last| t < last + interval) {
            return;
        }
        self.last_query_ms = Some(t);
        let mut answers = Vec::new();
        for c in self.clients.iter().filter(|c| c.alive) {
            self.report.messages_exchanged += 2;
            let held = query
                .names
                .iter()
                .filter(|n| c.inventory.contains_key(*n))
                .cloned()
                .collect();
            answers.push(InventoryAnswer {
                client_id: c.id.clone(),
                held,
            });
        }
        self.sched.handle_inventory_answers(Timestamp(t), &answers);
    }

    /// Downloads manifest files not yet cached; returns bytes moved.
    fn download(&mut self, c: usize, files: impl IntoIterator<Item = FileId>) {
        for f in files {
            if self.clients[c].cache.insert((f.name.clone(), f.digest)) {
                self.report.bytes_moved_other += f.size_bytes;
                self.report.messages_exchanged += 2;
            }
        }
    }

    fn request(&mut self, t: u64, c: usize) {
        if !self.clients[c].alive {
            return;
        }
        let now = Timestamp(t);
        self.sched.tick(now);
        self.poll_inventories(t);
        let req = WorkRequest {
            client_id: self.clients[c].id.clone(),
            hardware: Hardware::default(),
            inventory: self.inventory_of(c),
            protocol_version: PROTOCOL_VERSION,
        };
        self.report.messages_exchanged += 2;
        let reply = self
            .sched
            .handle_work_request(now, &req)
            .expect("simulated requests are well formed");
        let overhead = ms(self.config.overhead_secs);
        match reply {
            WorkReply::Assignment(a) => {
                self.download(c, a.manifest.into_iter().map(|m| m.file));
                let profile = self.pipeline.profiles[&a.wu_id];
                let cost = ms(self.config.task_secs(&profile));
                let client = &mut self.clients[c];
                client.busy_ms += cost;
                self.report.executed_task_secs += cost as f64 / 1000.0;
                self.report.compute_jobs += 1;
                let local = a.inputs.iter().all(|n| {
                    client
                        .inventory
                        .get(n)
                        .is_some_and(|(_, o)| *o == Origin::Own)
                });
                if local {
                    self.report.local_jobs += 1;
                }
                self.push(
                    t + overhead + cost,
                    Event::Finish {
                        client: c,
                        result_id: a.result_id,
                        wu_id: a.wu_id,
                    },
                );
            }
            WorkReply::GetInputAssignment(g) => {
                self.download(c, g.manifest.into_iter().map(|m| m.file));
                self.report.get_input_runs += 1;
                let cost = ms(self.config.get_input_secs);
                self.push(
                    t + overhead + cost,
                    Event::FetchDone {
                        client: c,
                        wu_id: g.wu_id,
                        targets: g.targets,
                    },
                );
            }
            WorkReply::NoWork { .. } => {
                self.push(t + ms(self.config.poll_interval_secs), Event::Request(c));
            }
        }
    }

    fn finish(&mut self, t: u64, c: usize, result_id: ResultId, wu_id: WuId) {
        if !self.clients[c].alive {
            return;
        }
        let now = Timestamp(t);
        self.sched.tick(now);
        let wu = self
            .sched
            .workunit(&wu_id)
            .expect("assigned workunit exists")
            .clone();
        let profile = self.pipeline.profiles[&wu_id];
        let attempt = self.sched.results().count();
        let per_file = self.config.bytes_per_event.get(profile.stage) * profile.events
            / wu.outputs.len().max(1) as u64;
        let outputs: Vec<FileId> = wu
            .outputs
            .iter()
            .map(|n| synthetic_file(n, &format!("{wu_id}/{attempt}"), per_file))
            .collect();
        let report = ResultReport {
            result_id,
            status: UploadStatus::Success,
            cpu_seconds: self.config.task_secs(&profile),
            outputs: outputs.clone(),
        };
        self.report.messages_exchanged += 2;
        self.report.bytes_moved_other += outputs.iter().map(|f| f.size_bytes).sum::<u64>();
        // Otherwise the result timed out meanwhile and the upload is rejected.
        if let Ok(ResultState::Success) = self.sched.handle_result(now, &report) {
            self.place_outputs(c, profile.stage, outputs);
        }
        self.request(t, c);
    }

    fn place_outputs(&mut self, c: usize, stage: Stage, outputs: Vec<FileId>) {
        match self.config.placement {
            Placement::GetInput if stage == Stage::Gen => {}
            Placement::Replicate => {
                for f in &outputs {
                    for (i, other) in self.clients.iter_mut().enumerate() {
                        if i != c && other.alive {
                            other
                                .inventory
                                .insert(f.name.clone(), (f.clone(), Origin::Pushed));
                            self.report.bytes_moved_input += f.size_bytes;
                        }
                    }
                }
                let own = &mut self.clients[c].inventory;
                for f in outputs {
                    own.insert(f.name.clone(), (f, Origin::Own));
                }
            }
            _ => {
                let own = &mut self.clients[c].inventory;
                for f in outputs {
                    own.insert(f.name.clone(), (f, Origin::Own));
                }
            }
        }
    }

    fn fetch_done(&mut self, t: u64, c: usize, wu_id: WuId, targets: Vec<String>) {
        if !self.clients[c].alive {
            return;
        }
        let now = Timestamp(t);
        self.sched.tick(now);
        let mut fetched = Vec::new();
        for name in &targets {
            let file = self.sched.known_file(name).cloned().or_else(|| {
                self.pipeline
                    .external_inputs
                    .get(name)
                    .map(|size| synthetic_file(name, "external", *size))
            });
            if let Some(f) = file {
                self.report.bytes_moved_input += f.size_bytes;
                self.clients[c]
                    .inventory
                    .insert(f.name.clone(), (f.clone(), Origin::Own));
                fetched.push(f);
            }
        }
        self.report.messages_exchanged += 2;
        let client_id = self.clients[c].id.clone();
        // A ticket that expired meanwhile is simply gone.
        let _ = self
            .sched
            .handle_get_input_done(now, &client_id, &wu_id, &fetched);
        self.request(t, c);
    }
}

impl SimReport {
    /// The non-framework reference run for `events`.
    pub fn baseline(config: &SimConfig, pipeline: &Pipeline) -> SimReport {
        let secs = baseline_secs(config, pipeline);
        SimReport {
            kind: RunKind::Baseline,
            events: pipeline.events,
            n_clients: 1,
            placement: config.placement,
            overhead_secs: 0.0,
            makespan_secs: secs,
            baseline_secs: secs,
            messages_exchanged: 0,
            bytes_moved_input: 0,
            bytes_moved_other: 0,
            locality_fraction: 1.0,
            compute_jobs: pipeline.profiles.len() as u64,
            local_jobs: pipeline.profiles.len() as u64,
            get_input_runs: 0,
            timeouts: 0,
            done: pipeline.profiles.len() as u64,
            failed: 0,
            unfinished: 0,
            client_busy_secs: vec![secs],
            executed_task_secs: secs,
        }
    }
}

/// Runs `template` for every combination of event count and client count,
/// followed by one baseline per event count.
pub fn sweep(
    template: &SimConfig,
    events: &[u64],
    clients: &[u32],
) -> Result<Vec<SimReport>, SimError> {
    let mut out = Vec::new();
    let mut baselines = Vec::new();
    for &e in events {
        let pipeline = build_muon_pipeline(e)?;
        for &n in clients {
            let config = SimConfig {
                events: e,
                n_clients: n,
                ..template.clone()
            };
            out.push(simulate(&config, &pipeline)?);
        }
        baselines.push(SimReport::baseline(template, &pipeline));
    }
    out.extend(baselines);
    Ok(out)
}

/// Zero-overhead serial execution of every workunit.
pub fn baseline_secs(config: &SimConfig, pipeline: &Pipeline) -> f64 {
    let ms_total: u64 = pipeline
        .profiles
        .values()
        .map(|p| ms(config.task_secs(p)))
        .sum();
    ms_total as f64 / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(config: &SimConfig) -> SimReport {
        let p = build_muon_pipeline(config.events).unwrap();
        simulate(config, &p).unwrap()
    }

    #[test]
    fn single_client_without_overhead_matches_baseline() {
        let r = run(&SimConfig {
            overhead_secs: 0.0,
            ..SimConfig::default()
        });
        assert_eq!(r.baseline_secs, 1300.0);
        assert_eq!(r.makespan_secs, r.baseline_secs);
        assert_eq!(r.done, 31);
    }

    #[test]
    fn zero_cost_pipeline_is_pure_overhead() {
        let r = run(&SimConfig {
            cost_per_event: StageValues {
                gen: 0.0,
                sim: 0.0,
                digi: 0.0,
                reco: 0.0,
            },
            ..SimConfig::default()
        });
        assert_eq!(r.baseline_secs, 0.0);
        assert_eq!(r.makespan_secs, 31.0 * 40.0);
    }

    #[test]
    fn strict_placement_keeps_everything_local() {
        let r = run(&SimConfig {
            n_clients: 8,
            ..SimConfig::default()
        });
        assert_eq!(r.bytes_moved_input, 0);
        assert_eq!(r.locality_fraction, 1.0);
        assert_eq!(r.compute_jobs, 31);
        assert_eq!(r.done, 31);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let p = build_muon_pipeline(100).unwrap();
        for c in [
            SimConfig {
                n_clients: 0,
                ..SimConfig::default()
            },
            SimConfig {
                poll_interval_secs: 0.0,
                ..SimConfig::default()
            },
            SimConfig {
                overhead_secs: -1.0,
                ..SimConfig::default()
            },
        ] {
            assert!(simulate(&c, &p).is_err());
        }
    }
}
