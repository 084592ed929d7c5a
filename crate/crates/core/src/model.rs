//! Shared domain types: files, applications, environments, workunits,
//! results and clients.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::ids::{AppId, ClientId, EnvId, GroupId, PatchId, ResultId, UserId, WuId};
use crate::ModelError;

/// Longest permitted file name, in bytes.
pub const MAX_NAME_LEN: usize = 255;

/// Milliseconds on an abstract clock. The server maps it to wall time, the
/// simulator to virtual time.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn from_secs(secs: u64) -> Self {
        Timestamp(secs.saturating_mul(1000))
    }

    pub fn plus_secs(self, secs: u64) -> Self {
        Timestamp(self.0.saturating_add(secs.saturating_mul(1000)))
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// SHA-256 content digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = ModelError;

    /// Accepts exactly 64 lowercase hex characters.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(ModelError::InvalidDigest(s.to_owned()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| ModelError::InvalidDigest(s.to_owned()))?;
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Checks that `name` can be used as a single path component.
pub fn validate_file_name(name: &str) -> Result<(), ModelError> {
    let bad = name.is_empty()
        || name.len() > MAX_NAME_LEN
        || name == "."
        || name == ".."
        || name.bytes().any(|b| b == b'/' || b == b'\\' || b == 0);
    if bad {
        Err(ModelError::InvalidName(name.to_owned()))
    } else {
        Ok(())
    }
}

/// A content-addressed data file.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileId {
    pub name: String,
    pub digest: Digest,
    pub size_bytes: u64,
}

impl FileId {
    pub fn new(
        name: impl Into<String>,
        digest: Digest,
        size_bytes: u64,
    ) -> Result<Self, ModelError> {
        let name = name.into();
        validate_file_name(&name)?;
        Ok(FileId {
            name,
            digest,
            size_bytes,
        })
    }

    pub fn for_bytes(name: impl Into<String>, bytes: &[u8]) -> Result<Self, ModelError> {
        Self::new(name, Digest::of(bytes), bytes.len() as u64)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        validate_file_name(&self.name)
    }

    /// True when `bytes` are exactly the content this id names.
    pub fn matches(&self, bytes: &[u8]) -> bool {
        bytes.len() as u64 == self.size_bytes && Digest::of(bytes) == self.digest
    }
}

/// A file name pattern; `{index}` is the only substitution variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FileTemplate(pub String);

impl FileTemplate {
    pub const VARIABLE: &'static str = "{index}";

    pub fn new(pattern: impl Into<String>) -> Self {
        FileTemplate(pattern.into())
    }

    pub fn pattern(&self) -> &str {
        &self.0
    }

    /// Substitutes every `{index}` with the decimal `index`.
    pub fn resolve(&self, index: u64) -> Result<String, ModelError> {
        let name = self.0.replace(Self::VARIABLE, &index.to_string());
        validate_file_name(&name)?;
        Ok(name)
    }
}

/// One file of an application, with its detached signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppFile {
    pub file: FileId,
    #[serde(with = "crate::b64")]
    pub signature: Vec<u8>,
    pub entry: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationSpec {
    pub app_id: AppId,
    pub version: u32,
    pub files: Vec<AppFile>,
    pub min_memory_mb: u64,
    pub min_disk_mb: u64,
}

impl ApplicationSpec {
    /// Structural checks; signatures are verified separately against a key.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.version < 1 {
            return Err(ModelError::InvalidApplication(format!(
                "{}: version must be >= 1",
                self.app_id
            )));
        }
        if self.files.is_empty() {
            return Err(ModelError::InvalidApplication(format!(
                "{}: no files",
                self.app_id
            )));
        }
        let entries = self.files.iter().filter(|f| f.entry).count();
        if entries != 1 {
            return Err(ModelError::InvalidApplication(format!(
                "{}: expected exactly one entry executable, found {entries}",
                self.app_id
            )));
        }
        let mut names = BTreeSet::new();
        for f in &self.files {
            f.file.validate()?;
            if f.signature.is_empty() {
                return Err(ModelError::InvalidApplication(format!(
                    "{}: {} is unsigned",
                    self.app_id, f.file.name
                )));
            }
            if !names.insert(f.file.name.as_str()) {
                return Err(ModelError::DuplicateName(f.file.name.clone()));
            }
        }
        Ok(())
    }

    pub fn entry(&self) -> &AppFile {
        self.files
            .iter()
            .find(|f| f.entry)
            .expect("validated application has an entry file")
    }

    pub fn requirements(&self) -> AppRequirements {
        AppRequirements {
            min_memory_mb: self.min_memory_mb,
            min_disk_mb: self.min_disk_mb,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppRequirements {
    pub min_memory_mb: u64,
    pub min_disk_mb: u64,
}

fn distinct_names<'a>(files: impl IntoIterator<Item = &'a FileId>) -> Result<(), ModelError> {
    let mut seen = BTreeSet::new();
    for f in files {
        f.validate()?;
        if !seen.insert(f.name.as_str()) {
            return Err(ModelError::DuplicateName(f.name.clone()));
        }
    }
    Ok(())
}

/// Files (job options, scripts, configuration) that define an execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentBundle {
    pub env_id: EnvId,
    pub app_id: AppId,
    pub files: Vec<FileId>,
}

impl EnvironmentBundle {
    pub fn validate(&self) -> Result<(), ModelError> {
        distinct_names(&self.files)
    }
}

/// Overlay on an environment; same-named files replace the environment's.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub patch_id: PatchId,
    pub env_id: EnvId,
    pub overlay_files: Vec<FileId>,
}

impl Patch {
    pub fn validate(&self) -> Result<(), ModelError> {
        distinct_names(&self.overlay_files)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkunitState {
    Pending,
    WaitingForData,
    Ready,
    Assigned,
    Done,
    Failed,
}

impl WorkunitState {
    pub const ALL: [WorkunitState; 6] = [
        WorkunitState::Pending,
        WorkunitState::WaitingForData,
        WorkunitState::Ready,
        WorkunitState::Assigned,
        WorkunitState::Done,
        WorkunitState::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, WorkunitState::Done | WorkunitState::Failed)
    }

    /// The workunit lifecycle.
    ///
    /// Beyond the basic forward path this admits three edges: a pending
    /// workunit fails when a predecessor failed, and a ready or assigned
    /// workunit falls back to waiting when the only client holding its
    /// inputs is lost.
    pub fn can_transition_to(self, to: WorkunitState) -> bool {
        use WorkunitState::*;
        matches!(
            (self, to),
            (Pending, WaitingForData)
                | (Pending, Ready)
                | (Pending, Failed)
                | (WaitingForData, Ready)
                | (WaitingForData, Failed)
                | (Ready, Assigned)
                | (Ready, WaitingForData)
                | (Assigned, Done)
                | (Assigned, Ready)
                | (Assigned, WaitingForData)
                | (Assigned, Failed)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WorkunitState::Pending => "PENDING",
            WorkunitState::WaitingForData => "WAITING_FOR_DATA",
            WorkunitState::Ready => "READY",
            WorkunitState::Assigned => "ASSIGNED",
            WorkunitState::Done => "DONE",
            WorkunitState::Failed => "FAILED",
        }
    }
}

impl fmt::Display for WorkunitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One schedulable computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workunit {
    pub wu_id: WuId,
    pub app_id: AppId,
    pub env_id: EnvId,
    pub patch_id: Option<PatchId>,
    /// Resolved input file names; all must be local to the executing client.
    pub required_inputs: Vec<String>,
    pub output_template: FileTemplate,
    /// Resolved output names the execution must produce.
    pub outputs: Vec<String>,
    pub get_input_app: Option<AppId>,
    pub predecessors: Vec<WuId>,
    pub max_result_size_bytes: u64,
    pub deadline_secs: u64,
    pub max_retries: u32,
    pub submit_seq: u64,
    pub state: WorkunitState,
    pub failed_attempts: u32,
}

impl Workunit {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for name in &self.required_inputs {
            validate_file_name(name)?;
            if !seen.insert(name.as_str()) {
                return Err(ModelError::DuplicateName(name.clone()));
            }
        }
        for name in &self.outputs {
            validate_file_name(name)?;
        }
        if self.max_result_size_bytes == 0 || self.deadline_secs == 0 {
            return Err(ModelError::InvalidLimits(self.wu_id.clone()));
        }
        Ok(())
    }

    pub fn retries_exhausted(&self) -> bool {
        self.failed_attempts > self.max_retries
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResultState {
    Unsent,
    InProgress,
    Success,
    Error,
    Timeout,
    Oversize,
}

impl ResultState {
    pub fn as_str(self) -> &'static str {
        match self {
            ResultState::Unsent => "UNSENT",
            ResultState::InProgress => "IN_PROGRESS",
            ResultState::Success => "SUCCESS",
            ResultState::Error => "ERROR",
            ResultState::Timeout => "TIMEOUT",
            ResultState::Oversize => "OVERSIZE",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ResultState::Success
                | ResultState::Error
                | ResultState::Timeout
                | ResultState::Oversize
        )
    }

    pub fn can_transition_to(self, to: ResultState) -> bool {
        match self {
            ResultState::Unsent => to == ResultState::InProgress,
            ResultState::InProgress => to.is_terminal(),
            _ => false,
        }
    }
}

/// One attempt at a workunit on one client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub result_id: ResultId,
    pub wu_id: WuId,
    pub client_id: ClientId,
    pub state: ResultState,
    pub assigned_at: Timestamp,
    pub deadline_at: Timestamp,
    pub cpu_seconds: f64,
    pub output_files: Vec<FileId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hardware {
    pub cpu_count: u32,
    pub benchmark_gflops: f64,
    pub memory_mb: u64,
    pub disk_mb: u64,
}

impl Hardware {
    pub fn satisfies(&self, req: &AppRequirements) -> bool {
        self.memory_mb >= req.min_memory_mb && self.disk_mb >= req.min_disk_mb
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.cpu_count == 0 || !self.benchmark_gflops.is_finite() || self.benchmark_gflops <= 0.0
        {
            return Err(ModelError::InvalidHardware);
        }
        Ok(())
    }
}

impl Default for Hardware {
    fn default() -> Self {
        Hardware {
            cpu_count: 1,
            benchmark_gflops: 1.0,
            memory_mb: 0,
            disk_mb: 0,
        }
    }
}

/// The data files a client holds, keyed by name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Inventory(BTreeMap<String, FileId>);

impl Inventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, file: FileId) -> Option<FileId> {
        self.0.insert(file.name.clone(), file)
    }

    pub fn get(&self, name: &str) -> Option<&FileId> {
        self.0.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn files(&self) -> impl Iterator<Item = &FileId> {
        self.0.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Builds an inventory, rejecting duplicate names.
    pub fn from_files(files: impl IntoIterator<Item = FileId>) -> Result<Self, ModelError> {
        let mut inv = Inventory::new();
        for f in files {
            f.validate()?;
            let name = f.name.clone();
            if inv.insert(f).is_some() {
                return Err(ModelError::DuplicateName(name));
            }
        }
        Ok(inv)
    }

    pub fn to_vec(&self) -> Vec<FileId> {
        self.0.values().cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientRecord {
    pub client_id: ClientId,
    pub user_id: UserId,
    pub group_id: Option<GroupId>,
    pub hardware: Hardware,
    pub inventory: Inventory,
    pub last_contact: Timestamp,
}
