//! Messages exchanged between workers, the CLI and the server.
//!
//! Every exchange is one request frame followed by one response frame on a
//! fresh TCP connection. See `PROTOCOL.md` at the repository root for the
//! field-by-field schema.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{AppId, ClientId, GroupId, ResultId, UserId, WuId};
use crate::job::JobSpec;
use crate::model::{
    ApplicationSpec, Digest, FileId, Hardware, ResultState, Timestamp, WorkunitState,
};

pub const PROTOCOL_VERSION: u32 = 1;

/// Why a file appears in a download manifest. Main-job inputs never do.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Purpose {
    App,
    Env,
    Patch,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::App => "APP",
            Purpose::Env => "ENV",
            Purpose::Patch => "PATCH",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: FileId,
    pub purpose: Purpose,
    #[serde(default, with = "opt_b64", skip_serializing_if = "Option::is_none")]
    pub signature: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub entry: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

mod opt_b64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => crate::b64::serialize(bytes, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        #[derive(Deserialize)]
        struct W(#[serde(with = "crate::b64")] Vec<u8>);
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

/// First contact: the worker describes itself; the server assigns or
/// confirms its client id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registration {
    pub client_id: Option<ClientId>,
    pub user_id: UserId,
    pub group_id: Option<GroupId>,
    pub hardware: Hardware,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkRequest {
    pub client_id: ClientId,
    pub hardware: Hardware,
    /// Every data file the client holds, sent in full on each request.
    pub inventory: Vec<FileId>,
    pub protocol_version: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub result_id: ResultId,
    pub wu_id: WuId,
    pub deadline_at: Timestamp,
    pub manifest: Vec<ManifestEntry>,
    /// Names of required inputs; they are already in the client's data
    /// directory and are never downloaded.
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub max_result_size_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GetInputAssignment {
    pub result_id: ResultId,
    pub wu_id: WuId,
    pub deadline_at: Timestamp,
    pub manifest: Vec<ManifestEntry>,
    /// Input names the get-input application should produce.
    pub targets: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    content = "body",
    rename_all = "SCREAMING_SNAKE_CASE",
    deny_unknown_fields
)]
pub enum WorkReply {
    Assignment(Assignment),
    GetInputAssignment(GetInputAssignment),
    NoWork { backoff_secs: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventoryQuery {
    pub names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventoryAnswer {
    pub client_id: ClientId,
    pub held: Vec<String>,
}

impl InventoryAnswer {
    /// Answers `query` from the names a client holds; the result is always a
    /// subset of the query.
    pub fn answer<'a>(
        client_id: ClientId,
        query: &InventoryQuery,
        held: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let held: BTreeSet<&str> = held.into_iter().collect();
        InventoryAnswer {
            client_id,
            held: query
                .names
                .iter()
                .filter(|n| held.contains(n.as_str()))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UploadStatus {
    Success,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payload {
    pub file: FileId,
    #[serde(with = "crate::b64")]
    pub bytes: Vec<u8>,
}

impl Payload {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Result<Self, crate::ModelError> {
        Ok(Payload {
            file: FileId::for_bytes(name, &bytes)?,
            bytes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultUpload {
    pub result_id: ResultId,
    pub status: UploadStatus,
    pub cpu_seconds: f64,
    pub outputs: Vec<Payload>,
}

impl ResultUpload {
    /// The byte-free view the scheduler consumes.
    pub fn report(&self) -> ResultReport {
        ResultReport {
            result_id: self.result_id.clone(),
            status: self.status,
            cpu_seconds: self.cpu_seconds,
            outputs: self.outputs.iter().map(|p| p.file.clone()).collect(),
        }
    }
}

/// A result upload with payloads replaced by their file ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultReport {
    pub result_id: ResultId,
    pub status: UploadStatus,
    pub cpu_seconds: f64,
    pub outputs: Vec<FileId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GetInputDone {
    pub client_id: ClientId,
    pub wu_id: WuId,
    pub new_files: Vec<FileId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkunitStatus {
    pub wu_id: WuId,
    pub state: WorkunitState,
    pub submit_seq: u64,
    pub failed_attempts: u32,
    pub client_id: Option<ClientId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultStatus {
    pub result_id: ResultId,
    pub wu_id: WuId,
    pub client_id: ClientId,
    pub state: ResultState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientStatus {
    pub client_id: ClientId,
    pub user_id: UserId,
    pub inventory_files: u64,
    pub inventory_bytes: u64,
    pub lost: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreditRow {
    pub user_id: UserId,
    pub credit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusReport {
    pub job: Option<String>,
    /// Workunit totals per state; always sums to `total`.
    pub counts: BTreeMap<WorkunitState, u64>,
    pub total: u64,
    pub workunits: Vec<WorkunitStatus>,
    pub results: Vec<ResultStatus>,
    pub clients: Vec<ClientStatus>,
    pub leaderboard: Vec<CreditRow>,
}

impl StatusReport {
    pub fn count(&self, state: WorkunitState) -> u64 {
        self.counts.get(&state).copied().unwrap_or(0)
    }

    pub fn all_terminal(&self) -> bool {
        self.workunits.iter().all(|w| w.state.is_terminal())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorKind {
    MalformedMessage,
    VersionMismatch,
    InvalidMessage,
    UnknownClient,
    UnknownResult,
    ResultNotInProgress,
    UnknownAssignment,
    UnknownApplication,
    UnknownJob,
    DuplicateJob,
    BadSignature,
    DigestMismatch,
    CycleDetected,
    InvalidSubmission,
    JobIncomplete,
    NotFound,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReply {
    pub kind: ErrorKind,
    pub message: String,
    /// Kind-specific detail, e.g. the unfinished workunits of `JobIncomplete`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detail: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitApplication {
    pub spec: ApplicationSpec,
    pub blobs: Vec<Payload>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitJob {
    pub spec: JobSpec,
    /// Environment and patch file contents; the server keeps one copy per
    /// digest.
    pub blobs: Vec<Payload>,
}

/// Every message that can appear in a frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "type",
    content = "body",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum Message {
    // worker -> server
    Register(Registration),
    WorkRequest(WorkRequest),
    Download {
        digest: Digest,
    },
    Upload(ResultUpload),
    GetInputDone(GetInputDone),
    Heartbeat {
        client_id: ClientId,
    },
    InventoryAnswer(InventoryAnswer),
    // cli -> server
    SubmitApplication(SubmitApplication),
    SubmitJob(SubmitJob),
    Status {
        job: Option<String>,
    },
    Fetch {
        job: String,
    },
    // server -> peer
    Registered {
        client_id: ClientId,
    },
    Work(WorkReply),
    Blob(Payload),
    InventoryQuery(InventoryQuery),
    Ack,
    AppSubmitted {
        app_id: AppId,
        version: u32,
    },
    JobSubmitted {
        job: String,
        wu_ids: Vec<WuId>,
    },
    StatusReport(StatusReport),
    Archive {
        #[serde(with = "crate::b64")]
        bytes: Vec<u8>,
    },
    Error(ErrorReply),
}

impl Message {
    pub fn error(kind: ErrorKind, message: impl Into<String>) -> Self {
        Message::Error(ErrorReply {
            kind,
            message: message.into(),
            detail: Vec::new(),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Register(_) => "register",
            Message::WorkRequest(_) => "work_request",
            Message::Download { .. } => "download",
            Message::Upload(_) => "upload",
            Message::GetInputDone(_) => "get_input_done",
            Message::Heartbeat { .. } => "heartbeat",
            Message::InventoryAnswer(_) => "inventory_answer",
            Message::SubmitApplication(_) => "submit_application",
            Message::SubmitJob(_) => "submit_job",
            Message::Status { .. } => "status",
            Message::Fetch { .. } => "fetch",
            Message::Registered { .. } => "registered",
            Message::Work(_) => "work",
            Message::Blob(_) => "blob",
            Message::InventoryQuery(_) => "inventory_query",
            Message::Ack => "ack",
            Message::AppSubmitted { .. } => "app_submitted",
            Message::JobSubmitted { .. } => "job_submitted",
            Message::StatusReport(_) => "status_report",
            Message::Archive { .. } => "archive",
            Message::Error(_) => "error",
        }
    }

    /// Checks the per-type invariants that the encoding alone cannot express.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Message::WorkRequest(req) => {
                distinct(req.inventory.iter().map(|f| f.name.as_str()), "inventory")?;
                for f in &req.inventory {
                    f.validate().map_err(|e| e.to_string())?;
                }
                req.hardware.validate().map_err(|e| e.to_string())
            }
            Message::Register(reg) => reg.hardware.validate().map_err(|e| e.to_string()),
            Message::Work(reply) => validate_reply(reply),
            Message::Upload(up) => {
                if !up.cpu_seconds.is_finite() || up.cpu_seconds < 0.0 {
                    return Err("cpu_seconds must be a finite non-negative number".into());
                }
                validate_payloads(&up.outputs)
            }
            Message::Blob(p) => validate_payloads(std::slice::from_ref(p)),
            Message::SubmitApplication(s) => validate_payloads(&s.blobs),
            Message::SubmitJob(s) => validate_payloads(&s.blobs),
            Message::InventoryQuery(q) => distinct(q.names.iter().map(String::as_str), "query"),
            Message::InventoryAnswer(a) => distinct(a.held.iter().map(String::as_str), "answer"),
            Message::GetInputDone(g) => {
                distinct(g.new_files.iter().map(|f| f.name.as_str()), "new_files")
            }
            _ => Ok(()),
        }
    }
}

fn distinct<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(format!("duplicate name {n:?} in {what}"));
        }
    }
    Ok(())
}

fn validate_payloads(payloads: &[Payload]) -> Result<(), String> {
    for p in payloads {
        if p.bytes.len() as u64 != p.file.size_bytes {
            return Err(format!(
                "payload {} is {} bytes, declared {}",
                p.file.name,
                p.bytes.len(),
                p.file.size_bytes
            ));
        }
    }
    Ok(())
}

pub fn validate_reply(reply: &WorkReply) -> Result<(), String> {
    let manifest = match reply {
        WorkReply::Assignment(a) => {
            let inputs: BTreeSet<&str> = a.inputs.iter().map(String::as_str).collect();
            if let Some(e) = a
                .manifest
                .iter()
                .find(|e| inputs.contains(e.file.name.as_str()))
            {
                return Err(format!("manifest lists required input {}", e.file.name));
            }
            &a.manifest
        }
        WorkReply::GetInputAssignment(g) => &g.manifest,
        WorkReply::NoWork { .. } => return Ok(()),
    };
    for e in manifest {
        if e.purpose == Purpose::App && e.signature.as_deref().is_none_or(<[u8]>::is_empty) {
            return Err(format!("APP file {} carries no signature", e.file.name));
        }
    }
    Ok(())
}
