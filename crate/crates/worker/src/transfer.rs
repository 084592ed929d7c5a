//! Append-only log of every byte the worker moves over the network.
//!
//! One tab-separated record per line:
//!
//! ```text
//! <direction>\t<purpose>\t<name>\t<bytes>\t<unix-ms>
//! ```
//!
//! `direction` is `down` or `up`; `purpose` is `APP`, `ENV` or `PATCH` for
//! downloads and `OUTPUT` for uploads. Main-job inputs never appear.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferRecord {
    pub direction: String,
    pub purpose: String,
    pub name: String,
    pub bytes: u64,
    pub at_ms: u64,
}

pub struct TransferLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl TransferLog {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(TransferLog {
            path: path.to_owned(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, direction: &str, purpose: &str, name: &str, bytes: u64) {
        let at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let line = format!("{direction}\t{purpose}\t{name}\t{bytes}\t{at}\n");
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = f.write_all(line.as_bytes()) {
            log::warn!("transfer log: {e}");
        }
    }
}

pub fn read_transfer_log(path: &Path) -> io::Result<Vec<TransferRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("bad record {line:?}"),
            ));
        }
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
        };
        out.push(TransferRecord {
            direction: f[0].into(),
            purpose: f[1].into(),
            name: f[2].into(),
            bytes: num(f[3])?,
            at_ms: num(f[4])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.log");
        let log = TransferLog::open(&path).unwrap();
        log.record("down", "APP", "run.sh", 12);
        log.record("up", "OUTPUT", "a.dat", 3);
        let recs = read_transfer_log(&path).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].purpose, "APP");
        assert_eq!(recs[1].bytes, 3);
    }
}
