//! Request handling. Connection threads verify and store file contents;
//! everything that touches scheduler state goes through the owner thread.

use std::sync::mpsc::{self, Receiver, Sender};
use std::time::{SystemTime, UNIX_EPOCH};

use locflow_core::codec::ProtocolError;
use locflow_core::protocol::{
    ErrorKind, ErrorReply, Message, Payload, SubmitApplication, SubmitJob,
};
use locflow_core::signing::{verify_digest, PublicKey};
use locflow_core::{FileId, Timestamp};

use crate::blobs::{BlobError, BlobStore};
use crate::project::{error, Command, Project};

type MakeCommand = Box<dyn FnOnce(Timestamp) -> Command + Send>;

pub(crate) enum Request {
    Execute(MakeCommand, Sender<Message>),
    Heartbeat(locflow_core::ClientId, Sender<Message>),
    Status(Option<String>, Sender<Message>),
    Fetch(String, Sender<Message>),
    Tick,
    Shutdown,
}

pub(crate) fn wall_clock() -> Timestamp {
    let ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    Timestamp(ms)
}

fn reply_of(r: Result<Message, ErrorReply>) -> Message {
    r.unwrap_or_else(Message::Error)
}

/// The scheduler owner loop: applies requests one at a time.
pub(crate) fn own(mut project: Project, blobs: &BlobStore, rx: Receiver<Request>) {
    let mut last = Timestamp(0);
    let mut now = || {
        last = last.max(wall_clock());
        last
    };
    for req in rx {
        match req {
            Request::Execute(make, tx) => {
                let cmd = make(now());
                let _ = tx.send(reply_of(project.execute(cmd)));
            }
            Request::Heartbeat(client_id, tx) => {
                let touched = project.execute(Command::Touch {
                    now: now(),
                    client_id,
                });
                let reply = touched.map(|_| {
                    let query = project.state.scheduler.pending_inventory_query();
                    if query.names.is_empty() {
                        Message::Ack
                    } else {
                        Message::InventoryQuery(query)
                    }
                });
                let _ = tx.send(reply_of(reply));
            }
            Request::Status(job, tx) => {
                let reply = project
                    .state
                    .status(job.as_deref())
                    .map(Message::StatusReport);
                let _ = tx.send(reply_of(reply));
            }
            Request::Fetch(job, tx) => {
                let reply = project
                    .state
                    .aggregate(&job, blobs)
                    .map(|bytes| Message::Archive { bytes });
                let _ = tx.send(reply_of(reply));
            }
            Request::Tick => {
                if let Err(e) = project.tick(now()) {
                    log::error!("tick: {}", e.message);
                }
            }
            Request::Shutdown => break,
        }
    }
    if let Err(e) = project.snapshot() {
        log::error!("final snapshot: {e}");
    }
}

pub(crate) struct Handler<'a> {
    pub owner: &'a Sender<Request>,
    pub blobs: &'a BlobStore,
    pub key: &'a PublicKey,
}

impl Handler<'_> {
    fn ask(&self, make: impl FnOnce(Sender<Message>) -> Request) -> Message {
        let (tx, rx) = mpsc::channel();
        if self.owner.send(make(tx)).is_err() {
            return Message::error(ErrorKind::Internal, "server is shutting down");
        }
        rx.recv()
            .unwrap_or_else(|_| Message::error(ErrorKind::Internal, "server is shutting down"))
    }

    fn execute(&self, make: impl FnOnce(Timestamp) -> Command + Send + 'static) -> Message {
        self.ask(|tx| Request::Execute(Box::new(make), tx))
    }

    pub fn handle(&self, msg: Message) -> Message {
        if let Err(e) = msg.validate() {
            return Message::error(ErrorKind::InvalidMessage, e);
        }
        match msg {
            Message::Register(r) => self.execute(move |now| Command::Register {
                now,
                client_id: r.client_id,
                user_id: r.user_id,
                group_id: r.group_id,
                hardware: r.hardware,
            }),
            Message::WorkRequest(req) => self.execute(move |now| Command::WorkRequest { now, req }),
            Message::Download { digest } => match self.blobs.get(&digest) {
                Ok(bytes) => {
                    let file = FileId::new(digest.to_hex(), digest, bytes.len() as u64)
                        .expect("hex digests are valid names");
                    Message::Blob(Payload { file, bytes })
                }
                Err(BlobError::NotFound(_)) => {
                    Message::error(ErrorKind::NotFound, format!("no blob {digest}"))
                }
                Err(e) => Message::error(ErrorKind::Internal, e.to_string()),
            },
            Message::Upload(up) => {
                if let Err(e) = self.store(&up.outputs) {
                    return Message::Error(e);
                }
                let report = up.report();
                self.execute(move |now| Command::Result { now, report })
            }
            Message::GetInputDone(done) => {
                self.execute(move |now| Command::GetInputDone { now, done })
            }
            Message::Heartbeat { client_id } => self.ask(|tx| Request::Heartbeat(client_id, tx)),
            Message::InventoryAnswer(answer) => {
                self.execute(move |now| Command::InventoryAnswer { now, answer })
            }
            Message::SubmitApplication(sub) => match self.check_application(&sub) {
                Ok(()) => {
                    let spec = sub.spec;
                    self.execute(move |now| Command::SubmitApplication { now, spec })
                }
                Err(e) => Message::Error(e),
            },
            Message::SubmitJob(sub) => match self.check_job(&sub) {
                Ok(()) => {
                    let spec = sub.spec;
                    self.execute(move |now| Command::SubmitJob { now, spec })
                }
                Err(e) => Message::Error(e),
            },
            Message::Status { job } => self.ask(|tx| Request::Status(job, tx)),
            Message::Fetch { job } => self.ask(|tx| Request::Fetch(job, tx)),
            other => Message::error(
                ErrorKind::InvalidMessage,
                format!("{} is not a request", other.name()),
            ),
        }
    }

    fn verify(&self, payloads: &[Payload]) -> Result<(), ErrorReply> {
        match payloads.iter().find(|p| !p.file.matches(&p.bytes)) {
            Some(p) => Err(error(
                ErrorKind::DigestMismatch,
                format!("{} does not match its digest", p.file.name),
            )),
            None => Ok(()),
        }
    }

    /// Checks every payload against its declared digest, then stores it.
    fn store(&self, payloads: &[Payload]) -> Result<(), ErrorReply> {
        self.verify(payloads)?;
        for p in payloads {
            self.blobs
                .put(&p.bytes)
                .map_err(|e| error(ErrorKind::Internal, format!("storing {}: {e}", p.file.name)))?;
        }
        Ok(())
    }

    fn check_application(&self, sub: &SubmitApplication) -> Result<(), ErrorReply> {
        sub.spec
            .validate()
            .map_err(|e| error(ErrorKind::InvalidSubmission, e.to_string()))?;
        self.verify(&sub.blobs)?;
        for f in &sub.spec.files {
            let uploaded = sub.blobs.iter().any(|p| p.file.digest == f.file.digest);
            if !uploaded && !self.blobs.contains(&f.file.digest) {
                return Err(error(
                    ErrorKind::DigestMismatch,
                    format!("no content with the digest of {}", f.file.name),
                ));
            }
            if !verify_digest(&f.file.digest, &f.signature, self.key) {
                return Err(error(
                    ErrorKind::BadSignature,
                    format!("signature of {} does not verify", f.file.name),
                ));
            }
        }
        self.store(&sub.blobs)
    }

    fn check_job(&self, sub: &SubmitJob) -> Result<(), ErrorReply> {
        self.store(&sub.blobs)?;
        let missing: Vec<String> = sub
            .spec
            .stages
            .iter()
            .flat_map(|st| st.env.iter().chain(st.patch.iter()))
            .filter(|f| !self.blobs.contains(&f.digest))
            .map(|f| f.name.clone())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ErrorReply {
                kind: ErrorKind::NotFound,
                message: "environment or patch files were not uploaded".into(),
                detail: missing,
            })
        }
    }
}

/// The in-band reply for a frame that could not be decoded.
pub(crate) fn decode_failure(e: &ProtocolError) -> Option<Message> {
    let kind = match e {
        ProtocolError::MalformedMessage(_) => ErrorKind::MalformedMessage,
        ProtocolError::VersionMismatch { .. } => ErrorKind::VersionMismatch,
        ProtocolError::Invalid(_) => ErrorKind::InvalidMessage,
        ProtocolError::Io(_) => return None,
    };
    Some(Message::error(kind, e.to_string()))
}
