//! The locflow worker daemon.
//!
//! Registers with the server, then loops: scan the data directory, request
//! work with the full inventory, download whatever application, environment
//! and patch files are not cached, run the job in a fresh sandbox and upload
//! its outputs. Outputs also move into the data directory, where they become
//! inputs the server can route back to this worker.
//!
//! A second thread sends heartbeats and answers the server's inventory
//! queries.

mod exec;
mod inventory;
mod sandbox;
mod transfer;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use locflow_core::model::Hardware;
use locflow_core::protocol::{
    Assignment, GetInputAssignment, GetInputDone, InventoryAnswer, ManifestEntry, Message, Payload,
    Registration, ResultUpload, UploadStatus, WorkReply, WorkRequest, PROTOCOL_VERSION,
};
use locflow_core::signing::PublicKey;
use locflow_core::transport::{Endpoint, TransportError};
use locflow_core::{ClientId, FileId, GroupId, Timestamp, UserId};

pub use exec::{execute, ExecError, ExecOutcome, ExitKind};
pub use inventory::{data_file_names, is_data_file_name, scan_inventory, InventoryError, Scanner};
pub use sandbox::{build_sandbox, BlobCache, Sandbox, SandboxError};
pub use transfer::{read_transfer_log, TransferLog, TransferRecord};

pub const TRANSFER_LOG: &str = "transfers.log";
const CLIENT_ID_FILE: &str = "client_id";

#[derive(Clone, Debug)]
pub struct WorkerConfig {
    pub server: String,
    pub data_dir: PathBuf,
    pub work_dir: PathBuf,
    pub project_key: PublicKey,
    pub user_id: UserId,
    pub group_id: Option<GroupId>,
    pub hardware: Hardware,
    pub heartbeat: Duration,
    /// Upper bound on a single run; the assignment deadline also bounds it.
    pub task_timeout: Option<Duration>,
    /// First delay after a network failure; doubles up to `max_backoff`.
    pub min_backoff: Duration,
    pub max_backoff: Duration,
}

impl WorkerConfig {
    pub fn new(
        server: impl Into<String>,
        data_dir: PathBuf,
        work_dir: PathBuf,
        key: PublicKey,
    ) -> Self {
        WorkerConfig {
            server: server.into(),
            data_dir,
            work_dir,
            project_key: key,
            user_id: UserId::new("anonymous"),
            group_id: None,
            hardware: Hardware {
                cpu_count: thread::available_parallelism().map_or(1, |n| n.get() as u32),
                benchmark_gflops: 1.0,
                memory_mb: 4096,
                disk_mb: 100_000,
            },
            heartbeat: Duration::from_secs(5),
            task_timeout: None,
            min_backoff: Duration::from_secs(1),
            max_backoff: Duration::from_secs(300),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Exponential backoff for network failures.
#[derive(Clone, Debug)]
pub struct Backoff {
    min: Duration,
    max: Duration,
    next: Duration,
}

impl Backoff {
    pub fn new(min: Duration, max: Duration) -> Self {
        Backoff {
            min,
            max,
            next: min,
        }
    }

    pub fn next_delay(&mut self) -> Duration {
        let d = self.next;
        self.next = (self.next * 2).min(self.max);
        d
    }

    pub fn reset(&mut self) {
        self.next = self.min;
    }
}

fn wall_now() -> Timestamp {
    Timestamp(
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
    )
}

/// Sleeps up to `d`, waking early when `stop` is set. Returns false if
/// stopped.
fn sleep_unless(stop: &AtomicBool, d: Duration) -> bool {
    let end = Instant::now() + d;
    while Instant::now() < end {
        if stop.load(Ordering::SeqCst) {
            return false;
        }
        thread::sleep((end - Instant::now()).min(Duration::from_millis(50)));
    }
    !stop.load(Ordering::SeqCst)
}

struct Stopped;

pub struct Worker {
    config: WorkerConfig,
    endpoint: Endpoint,
    cache: BlobCache,
    log: Arc<TransferLog>,
    scanner: Scanner,
    client_id: Option<ClientId>,
    stop: Arc<AtomicBool>,
}

impl Worker {
    pub fn new(mut config: WorkerConfig, stop: Arc<AtomicBool>) -> Result<Self, WorkerError> {
        fs::create_dir_all(&config.data_dir)?;
        fs::create_dir_all(&config.work_dir)?;
        // Jobs run with the sandbox as working directory.
        config.data_dir = fs::canonicalize(&config.data_dir)?;
        config.work_dir = fs::canonicalize(&config.work_dir)?;
        let cache = BlobCache::open(config.work_dir.join("cache"))?;
        let log = Arc::new(TransferLog::open(&config.work_dir.join(TRANSFER_LOG))?);
        let client_id = match fs::read_to_string(config.work_dir.join(CLIENT_ID_FILE)) {
            Ok(s) if !s.trim().is_empty() => Some(ClientId::new(s.trim())),
            _ => None,
        };
        Ok(Worker {
            endpoint: Endpoint::new(config.server.clone()),
            config,
            cache,
            log,
            scanner: Scanner::default(),
            client_id,
            stop,
        })
    }

    pub fn client_id(&self) -> Option<&ClientId> {
        self.client_id.as_ref()
    }

    /// Calls the server, retrying network failures with backoff until it
    /// answers or the worker is stopped.
    fn call(&self, msg: &Message) -> Result<Result<Message, TransportError>, Stopped> {
        let mut backoff = Backoff::new(self.config.min_backoff, self.config.max_backoff);
        loop {
            match self.endpoint.call(msg) {
                Err(e) if e.is_transient() => {
                    let d = backoff.next_delay();
                    log::warn!("{}: {e}; retrying in {:?}", msg.name(), d);
                    if !sleep_unless(&self.stop, d) {
                        return Err(Stopped);
                    }
                }
                other => return Ok(other),
            }
        }
    }

    fn register(&mut self) -> Result<ClientId, Stopped> {
        loop {
            let reg = Message::Register(Registration {
                client_id: self.client_id.clone(),
                user_id: self.config.user_id.clone(),
                group_id: self.config.group_id.clone(),
                hardware: self.config.hardware,
            });
            match self.call(&reg)? {
                Ok(Message::Registered { client_id }) => {
                    if let Err(e) = fs::write(
                        self.config.work_dir.join(CLIENT_ID_FILE),
                        client_id.as_str(),
                    ) {
                        log::warn!("persisting client id: {e}");
                    }
                    log::info!("registered as {client_id}");
                    self.client_id = Some(client_id.clone());
                    return Ok(client_id);
                }
                other => {
                    log::error!("registration failed: {other:?}");
                    if !sleep_unless(
                        &self.stop,
                        self.config.max_backoff.min(Duration::from_secs(10)),
                    ) {
                        return Err(Stopped);
                    }
                }
            }
        }
    }

    /// Runs until `stop` is set.
    pub fn run(mut self) -> Result<(), WorkerError> {
        let Ok(client_id) = self.register() else {
            return Ok(());
        };
        let heartbeat = self.spawn_heartbeat(client_id);
        let res = self.main_loop();
        self.stop.store(true, Ordering::SeqCst);
        let _ = heartbeat.join();
        res
    }

    fn spawn_heartbeat(&self, client_id: ClientId) -> thread::JoinHandle<()> {
        let endpoint = self.endpoint.clone();
        let stop = Arc::clone(&self.stop);
        let data_dir = self.config.data_dir.clone();
        let every = self.config.heartbeat;
        thread::spawn(move || {
            while sleep_unless(&stop, every) {
                let query = match endpoint.call(&Message::Heartbeat {
                    client_id: client_id.clone(),
                }) {
                    Ok(Message::InventoryQuery(q)) => q,
                    Ok(_) => continue,
                    Err(e) => {
                        log::debug!("heartbeat: {e}");
                        continue;
                    }
                };
                let Ok(names) = data_file_names(&data_dir) else {
                    continue;
                };
                let answer = InventoryAnswer::answer(
                    client_id.clone(),
                    &query,
                    names.iter().map(String::as_str),
                );
                if !answer.held.is_empty() {
                    if let Err(e) = endpoint.call(&Message::InventoryAnswer(answer)) {
                        log::debug!("inventory answer: {e}");
                    }
                }
            }
        })
    }

    fn main_loop(&mut self) -> Result<(), WorkerError> {
        while !self.stop.load(Ordering::SeqCst) {
            let client_id = match &self.client_id {
                Some(c) => c.clone(),
                None => match self.register() {
                    Ok(c) => c,
                    Err(Stopped) => return Ok(()),
                },
            };
            let inventory = self.scanner.scan(&self.config.data_dir)?;
            let req = Message::WorkRequest(WorkRequest {
                client_id,
                hardware: self.config.hardware,
                inventory,
                protocol_version: PROTOCOL_VERSION,
            });
            let reply = match self.call(&req) {
                Err(Stopped) => return Ok(()),
                Ok(r) => r,
            };
            match reply {
                Ok(Message::Work(WorkReply::Assignment(a))) => {
                    log::info!("assigned {} ({})", a.wu_id, a.result_id);
                    if self.run_assignment(&a).is_err() {
                        return Ok(());
                    }
                }
                Ok(Message::Work(WorkReply::GetInputAssignment(g))) => {
                    log::info!("get-input for {} ({})", g.wu_id, g.result_id);
                    if self.run_get_input(&g).is_err() {
                        return Ok(());
                    }
                }
                Ok(Message::Work(WorkReply::NoWork { backoff_secs })) => {
                    if !sleep_unless(&self.stop, Duration::from_secs(backoff_secs)) {
                        return Ok(());
                    }
                }
                Err(TransportError::Server(e))
                    if e.kind == locflow_core::protocol::ErrorKind::UnknownClient =>
                {
                    log::warn!("server does not know this client; registering again");
                    self.client_id = None;
                }
                other => {
                    log::error!("work request: {other:?}");
                    if !sleep_unless(&self.stop, self.config.min_backoff) {
                        return Ok(());
                    }
                }
            }
        }
        Ok(())
    }

    /// Downloads every manifest file not already cached.
    fn fetch_manifest(&self, manifest: &[ManifestEntry]) -> Result<Result<(), String>, Stopped> {
        for e in manifest {
            if self.cache.contains(&e.file.digest) {
                continue;
            }
            let bytes = match self.call(&Message::Download {
                digest: e.file.digest,
            })? {
                Ok(Message::Blob(p)) => p.bytes,
                other => return Ok(Err(format!("download of {}: {other:?}", e.file.name))),
            };
            self.log
                .record("down", e.purpose.as_str(), &e.file.name, bytes.len() as u64);
            match self.cache.insert(&e.file.digest, &bytes) {
                Ok(true) => {}
                Ok(false) => return Ok(Err(format!("{} does not match its digest", e.file.name))),
                Err(err) => return Ok(Err(format!("caching {}: {err}", e.file.name))),
            }
        }
        Ok(Ok(()))
    }

    fn timeout_for(&self, deadline: Timestamp) -> Duration {
        let left = Duration::from_millis(deadline.0.saturating_sub(wall_now().0).max(1000));
        self.config.task_timeout.map_or(left, |t| t.min(left))
    }

    fn sandbox_dir(&self, run: &str) -> PathBuf {
        self.config.work_dir.join("sandboxes").join(run)
    }

    fn run_assignment(&mut self, a: &Assignment) -> Result<(), Stopped> {
        let upload = match self.fetch_manifest(&a.manifest)? {
            Err(reason) => failure(a, reason),
            Ok(()) => self.execute_assignment(a),
        };
        let outcome = upload.status;
        let sizes: Vec<(String, u64)> = upload
            .outputs
            .iter()
            .map(|p| (p.file.name.clone(), p.file.size_bytes))
            .collect();
        let within_limit = upload
            .outputs
            .iter()
            .all(|p| p.file.size_bytes <= a.max_result_size_bytes);
        let accepted = match self.call(&Message::Upload(upload))? {
            Ok(_) => {
                for (name, bytes) in &sizes {
                    self.log.record("up", "OUTPUT", name, *bytes);
                }
                true
            }
            Err(e) => {
                log::error!("upload of {}: {e}", a.result_id);
                false
            }
        };
        let dir = self.sandbox_dir(a.result_id.as_str());
        if accepted && outcome == UploadStatus::Success && within_limit {
            for (name, _) in &sizes {
                let dest = self.config.data_dir.join(name);
                if let Err(e) = move_file(&dir.join(name), &dest) {
                    log::error!("keeping output {name}: {e}");
                }
            }
        }
        let _ = fs::remove_dir_all(&dir);
        Ok(())
    }

    fn execute_assignment(&self, a: &Assignment) -> ResultUpload {
        let dir = self.sandbox_dir(a.result_id.as_str());
        let sandbox = match build_sandbox(
            &dir,
            &self.cache,
            &a.manifest,
            &a.inputs,
            &self.config.data_dir,
            &self.config.project_key,
        ) {
            Ok(s) => s,
            Err(e) => return failure(a, e.to_string()),
        };
        let env = [
            ("LOCFLOW_WU_ID", a.wu_id.to_string()),
            ("LOCFLOW_RESULT_ID", a.result_id.to_string()),
            ("LOCFLOW_INPUTS", a.inputs.join(" ")),
            ("LOCFLOW_OUTPUTS", a.outputs.join(" ")),
        ];
        let run = match execute(
            &sandbox.entry,
            &sandbox.dir,
            &env,
            self.timeout_for(a.deadline_at),
        ) {
            Ok(r) => r,
            Err(e) => return failure(a, e.to_string()),
        };
        let mut outputs = Vec::new();
        let mut complete = true;
        for name in &a.outputs {
            match fs::read(sandbox.dir.join(name)) {
                Ok(bytes) => match Payload::new(name.clone(), bytes) {
                    Ok(p) => outputs.push(p),
                    Err(_) => complete = false,
                },
                Err(_) => complete = false,
            }
        }
        if !run.succeeded() || !complete {
            log::warn!(
                "{} failed: {:?}{}",
                a.result_id,
                run.exit,
                if complete { "" } else { ", outputs missing" }
            );
        }
        ResultUpload {
            result_id: a.result_id.clone(),
            status: if run.succeeded() && complete {
                UploadStatus::Success
            } else {
                UploadStatus::Error
            },
            cpu_seconds: run.cpu_seconds,
            outputs,
        }
    }

    fn run_get_input(&mut self, g: &GetInputAssignment) -> Result<(), Stopped> {
        let before = self.scanner.scan(&self.config.data_dir).unwrap_or_default();
        if let Ok(()) = self.fetch_manifest(&g.manifest)? {
            let dir = self.sandbox_dir(g.result_id.as_str());
            match build_sandbox(
                &dir,
                &self.cache,
                &g.manifest,
                &[],
                &self.config.data_dir,
                &self.config.project_key,
            ) {
                Ok(sb) => {
                    let env = [
                        ("LOCFLOW_WU_ID", g.wu_id.to_string()),
                        ("LOCFLOW_TARGETS", g.targets.join(" ")),
                        (
                            "LOCFLOW_DATA_DIR",
                            self.config.data_dir.display().to_string(),
                        ),
                    ];
                    match execute(&sb.entry, &sb.dir, &env, self.timeout_for(g.deadline_at)) {
                        Ok(run) if run.succeeded() => {
                            for t in &g.targets {
                                let src = sb.dir.join(t);
                                if src.is_file() {
                                    if let Err(e) = move_file(&src, &self.config.data_dir.join(t)) {
                                        log::error!("keeping fetched {t}: {e}");
                                    }
                                }
                            }
                        }
                        Ok(run) => log::warn!("get-input {} failed: {:?}", g.result_id, run.exit),
                        Err(e) => log::warn!("get-input {}: {e}", g.result_id),
                    }
                }
                Err(e) => log::warn!("get-input sandbox: {e}"),
            }
            let _ = fs::remove_dir_all(&dir);
        }
        let after = self.scanner.scan(&self.config.data_dir).unwrap_or_default();
        let new_files: Vec<FileId> = after.into_iter().filter(|f| !before.contains(f)).collect();
        let Some(client_id) = self.client_id.clone() else {
            return Ok(());
        };
        let done = Message::GetInputDone(GetInputDone {
            client_id,
            wu_id: g.wu_id.clone(),
            new_files,
        });
        if let Err(e) = self.call(&done)? {
            log::error!("get-input done: {e}");
        }
        Ok(())
    }
}

fn failure(a: &Assignment, reason: String) -> ResultUpload {
    log::warn!("{} cannot run: {reason}", a.result_id);
    ResultUpload {
        result_id: a.result_id.clone(),
        status: UploadStatus::Error,
        cpu_seconds: 0.0,
        outputs: Vec::new(),
    }
}

/// Renames, falling back to copy-then-delete across filesystems. The file
/// appears under its final name atomically.
fn move_file(src: &Path, dest: &Path) -> io::Result<()> {
    if fs::rename(src, dest).is_ok() {
        return Ok(());
    }
    let name = dest.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dest.with_file_name(format!(".{name}.tmp"));
    fs::copy(src, &tmp)?;
    fs::rename(&tmp, dest)?;
    fs::remove_file(src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps_at_five_minutes() {
        let mut b = Backoff::new(Duration::from_secs(1), Duration::from_secs(300));
        let delays: Vec<u64> = (0..12).map(|_| b.next_delay().as_secs()).collect();
        assert_eq!(delays, [1, 2, 4, 8, 16, 32, 64, 128, 256, 300, 300, 300]);
        b.reset();
        assert_eq!(b.next_delay().as_secs(), 1);
    }
}
