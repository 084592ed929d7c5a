//! The job output archive.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LFAR"
//! 4       4     format version, u32 big-endian (= 1)
//! 8       8     manifest length M, u64 big-endian
//! 16      M     manifest, canonical JSON:
//!               {"job":..,"entries":[{"wu_id":..,"file":{"name","digest","size_bytes"}},..]}
//! 16+M    ..    file contents concatenated in manifest order, no padding
//! ```
//!
//! Entries are ordered by (workunit submit_seq, file name), so the same job
//! always produces byte-identical archives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::WuId;
use crate::model::FileId;

pub const MAGIC: &[u8; 4] = b"LFAR";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveEntry {
    pub wu_id: WuId,
    pub file: FileId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveManifest {
    pub job: String,
    pub entries: Vec<ArchiveEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArchiveError {
    #[error("not an archive: {0}")]
    Format(String),
    #[error("digest mismatch for {0}")]
    DigestMismatch(String),
}

/// One file to pack.
pub struct PackInput<'a> {
    pub submit_seq: u64,
    pub wu_id: WuId,
    pub file: FileId,
    pub bytes: &'a [u8],
}

pub fn pack(job: &str, mut inputs: Vec<PackInput<'_>>) -> Vec<u8> {
    inputs.sort_by(|a, b| {
        (a.submit_seq, a.file.name.as_str()).cmp(&(b.submit_seq, b.file.name.as_str()))
    });
    let manifest = ArchiveManifest {
        job: job.to_owned(),
        entries: inputs
            .iter()
            .map(|i| ArchiveEntry {
                wu_id: i.wu_id.clone(),
                file: i.file.clone(),
            })
            .collect(),
    };
    let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
    let body: usize = inputs.iter().map(|i| i.bytes.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + body);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_be_bytes());
    out.extend_from_slice(&manifest);
    for i in &inputs {
        out.extend_from_slice(i.bytes);
    }
    out
}

/// A parsed archive; every file's digest has been verified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unpacked<'a> {
    pub manifest: ArchiveManifest,
    pub contents: Vec<&'a [u8]>,
}

pub fn unpack(bytes: &[u8]) -> Result<Unpacked<'_>, ArchiveError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(ArchiveError::Format("bad magic".into()));
    }
    let version = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ArchiveError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let mlen = u64::from_be_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let mend = usize::try_from(mlen)
        .ok()
        .and_then(|m| m.checked_add(HEADER_LEN))
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| ArchiveError::Format("manifest overruns archive".into()))?;
    let manifest: ArchiveManifest = serde_json::from_slice(&bytes[HEADER_LEN..mend])
        .map_err(|e| ArchiveError::Format(format!("manifest: {e}")))?;
    let mut pos = mend;
    let mut contents = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let end = usize::try_from(e.file.size_bytes)
            .ok()
            .and_then(|s| pos.checked_add(s))
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| ArchiveError::Format(format!("{} overruns archive", e.file.name)))?;
        let data = &bytes[pos..end];
        if !e.file.matches(data) {
            return Err(ArchiveError::DigestMismatch(e.file.name.clone()));
        }
        contents.push(data);
        pos = end;
    }
    if pos != bytes.len() {
        return Err(ArchiveError::Format("trailing bytes".into()));
    }
    Ok(Unpacked { manifest, contents })
}
