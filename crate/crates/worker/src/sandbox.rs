//! Downloaded blobs and the per-run sandbox directory built from them.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use locflow_core::protocol::{ManifestEntry, Purpose};
use locflow_core::signing::{verify_digest, PublicKey};
use locflow_core::Digest;

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("{name} ({digest}) has not been downloaded")]
    MissingBlob { name: String, digest: Digest },
    #[error("signature of {0} does not verify against the project key")]
    BadSignature(String),
    #[error("manifest has no entry executable")]
    NoEntry,
    #[error("input {0} is not in the data directory")]
    MissingInput(String),
    #[error("sandbox io: {0}")]
    Io(#[from] io::Error),
}

/// Verified blobs on local disk, one file per digest.
pub struct BlobCache {
    dir: PathBuf,
}

impl BlobCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(BlobCache { dir })
    }

    pub fn path(&self, digest: &Digest) -> PathBuf {
        self.dir.join(digest.to_hex())
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.path(digest).is_file()
    }

    /// Stores `bytes` if they hash to `digest`; returns whether they did.
    pub fn insert(&self, digest: &Digest, bytes: &[u8]) -> io::Result<bool> {
        if Digest::of(bytes) != *digest {
            return Ok(false);
        }
        let tmp = self.dir.join(format!(".{}.tmp", digest.to_hex()));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, self.path(digest))?;
        Ok(true)
    }
}

#[derive(Debug)]
pub struct Sandbox {
    pub dir: PathBuf,
    pub entry: PathBuf,
}

/// Populates `dir` (which is emptied first) with the manifest files and
/// copies of `inputs` from `data_dir`. Patch files shadow environment files
/// of the same name; application files are verified against `key`.
pub fn build_sandbox(
    dir: &Path,
    cache: &BlobCache,
    manifest: &[ManifestEntry],
    inputs: &[String],
    data_dir: &Path,
    key: &PublicKey,
) -> Result<Sandbox, SandboxError> {
    let mut layers: BTreeMap<&str, &ManifestEntry> = BTreeMap::new();
    let rank = |p: Purpose| match p {
        Purpose::Env => 0,
        Purpose::Patch => 1,
        Purpose::App => 2,
    };
    for e in manifest {
        if !cache.contains(&e.file.digest) {
            return Err(SandboxError::MissingBlob {
                name: e.file.name.clone(),
                digest: e.file.digest,
            });
        }
        if e.purpose == Purpose::App {
            let sig = e.signature.as_deref().unwrap_or_default();
            if !verify_digest(&e.file.digest, sig, key) {
                return Err(SandboxError::BadSignature(e.file.name.clone()));
            }
        }
        let wins = layers
            .get(e.file.name.as_str())
            .is_none_or(|prev| rank(e.purpose) >= rank(prev.purpose));
        if wins {
            layers.insert(&e.file.name, e);
        }
    }
    let entry = manifest
        .iter()
        .find(|e| e.entry && e.purpose == Purpose::App)
        .ok_or(SandboxError::NoEntry)?;

    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    for (name, e) in &layers {
        let dest = dir.join(name);
        fs::copy(cache.path(&e.file.digest), &dest)?;
        let mode = if e.purpose == Purpose::App {
            0o755
        } else {
            0o644
        };
        fs::set_permissions(&dest, fs::Permissions::from_mode(mode))?;
    }
    for name in inputs {
        let src = data_dir.join(name);
        if !src.is_file() {
            return Err(SandboxError::MissingInput(name.clone()));
        }
        let dest = dir.join(name);
        fs::copy(&src, &dest)?;
        fs::set_permissions(&dest, fs::Permissions::from_mode(0o444))?;
    }
    Ok(Sandbox {
        dir: dir.to_owned(),
        entry: dir.join(&entry.file.name),
    })
}
