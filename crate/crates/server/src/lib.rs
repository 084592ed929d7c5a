//! The locflow server: one process holding the scheduler, the project
//! database and the file store.
//!
//! Each TCP connection carries one request frame and one reply frame.
//! Connections are served on their own threads; all scheduler changes are
//! funnelled to a single owner thread, which logs each change durably before
//! replying. A tick thread drives deadline and wait-window expiry.
//!
//! On-disk layout under the data directory:
//!
//! ```text
//! project.json        signature scheme and project public key
//! blobs/<sha256-hex>  file contents, keyed by digest
//! state/snapshot.json project state after some log record
//! state/wal.log       commands logged since the snapshot
//! ```

mod blobs;
pub mod project;
mod service;
mod wal;

use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use locflow_core::codec::{read_frame, write_frame};
use locflow_core::scheduler::SchedulerPolicy;
use locflow_core::signing::{PublicKey, SCHEME};
use serde::{Deserialize, Serialize};

pub use blobs::{BlobError, BlobStore};
pub use project::{aggregate_results, Command, JobRecord, Project, ProjectState};

use service::{Handler, Request};

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub public_key: PublicKey,
    pub tick: Duration,
    pub policy: SchedulerPolicy,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectMeta {
    signature_scheme: String,
    public_key: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Config(String),
}

fn check_meta(dir: &Path, key: &PublicKey) -> Result<(), ServerError> {
    let path = dir.join("project.json");
    match std::fs::read(&path) {
        Ok(bytes) => {
            let meta: ProjectMeta = serde_json::from_slice(&bytes)
                .map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
            if meta.signature_scheme != SCHEME {
                return Err(ServerError::Config(format!(
                    "project uses signature scheme {}, this server supports {SCHEME}",
                    meta.signature_scheme
                )));
            }
            if meta.public_key != key.to_hex() {
                return Err(ServerError::Config(
                    "keypair does not match the project's public key".into(),
                ));
            }
            Ok(())
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let meta = ProjectMeta {
                signature_scheme: SCHEME.into(),
                public_key: key.to_hex(),
            };
            let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
            text.push('\n');
            std::fs::write(&path, text)?;
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

/// A running server.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    owner_tx: Sender<Request>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Stops accepting, writes a final snapshot and waits for the threads.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.owner_tx.send(Request::Shutdown);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        self.join();
    }
}

pub fn start(config: ServerConfig) -> Result<ServerHandle, ServerError> {
    config.policy.validate().map_err(ServerError::Config)?;
    if config.tick.is_zero() {
        return Err(ServerError::Config("tick interval must be positive".into()));
    }
    std::fs::create_dir_all(&config.data_dir)?;
    check_meta(&config.data_dir, &config.public_key)?;
    let blobs = Arc::new(BlobStore::open(config.data_dir.join("blobs"))?);
    let project = Project::open(&config.data_dir.join("state"), config.policy.clone())?;
    let listener = TcpListener::bind(&config.listen)?;
    let addr = listener.local_addr()?;
    log::info!("listening on {addr}");

    let stop = Arc::new(AtomicBool::new(false));
    let (owner_tx, owner_rx) = mpsc::channel();
    let mut threads = Vec::new();

    let owner_blobs = Arc::clone(&blobs);
    threads.push(
        thread::Builder::new()
            .name("scheduler".into())
            .spawn(move || service::own(project, &owner_blobs, owner_rx))?,
    );

    let tick_tx = owner_tx.clone();
    let tick_stop = Arc::clone(&stop);
    let tick = config.tick;
    thread::Builder::new().name("tick".into()).spawn(move || {
        while !tick_stop.load(Ordering::SeqCst) {
            thread::sleep(tick);
            if tick_tx.send(Request::Tick).is_err() {
                break;
            }
        }
    })?;

    let accept_tx = owner_tx.clone();
    let accept_stop = Arc::clone(&stop);
    let key = config.public_key;
    threads.push(
        thread::Builder::new()
            .name("accept".into())
            .spawn(move || {
                for stream in listener.incoming() {
                    if accept_stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let stream = match stream {
                        Ok(s) => s,
                        Err(e) => {
                            log::warn!("accept: {e}");
                            continue;
                        }
                    };
                    let tx = accept_tx.clone();
                    let blobs = Arc::clone(&blobs);
                    let spawned = thread::Builder::new()
                        .name("conn".into())
                        .spawn(move || serve_connection(stream, &tx, &blobs, &key));
                    if let Err(e) = spawned {
                        log::error!("spawning connection thread: {e}");
                    }
                }
            })?,
    );

    Ok(ServerHandle {
        addr,
        stop,
        owner_tx,
        threads,
    })
}

fn serve_connection(
    stream: TcpStream,
    owner: &Sender<Request>,
    blobs: &BlobStore,
    key: &PublicKey,
) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(120)));
    let _ = stream.set_write_timeout(Some(Duration::from_secs(120)));
    let _ = stream.set_nodelay(true);
    let reply = match read_frame(&stream) {
        Ok(None) => return,
        Ok(Some(msg)) => {
            let name = msg.name();
            let reply = Handler { owner, blobs, key }.handle(msg);
            log::debug!("{name} -> {}", reply.name());
            reply
        }
        Err(e) => match service::decode_failure(&e) {
            Some(reply) => {
                log::warn!("rejecting frame: {e}");
                reply
            }
            None => return,
        },
    };
    if let Err(e) = write_frame(&stream, &reply) {
        log::debug!("writing reply: {e}");
    }
    let _ = stream.shutdown(Shutdown::Both);
}
