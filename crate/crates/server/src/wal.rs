//! Write-ahead log plus snapshot.
//!
//! The log is a sequence of records
//!
//! ```text
//! u32 BE  payload length
//! u32 BE  CRC-32 of the payload
//! ..      payload: JSON {"seq": n, "cmd": ..}
//! ```
//!
//! appended and fsynced before a command's reply leaves the server. A
//! snapshot holds the state after record `seq`; on recovery, records with a
//! higher `seq` are replayed on top of it. A torn or corrupt tail is cut off.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

const HEADER: usize = 8;

#[derive(Serialize, Deserialize)]
struct Record<C> {
    seq: u64,
    cmd: C,
}

#[derive(Serialize, Deserialize)]
struct Snapshot<S> {
    seq: u64,
    state: S,
}

pub struct Wal<C> {
    dir: PathBuf,
    log: File,
    seq: u64,
    since_snapshot: u64,
    _cmd: PhantomData<C>,
}

/// What was found on disk.
pub struct Recovered<S, C> {
    pub state: Option<S>,
    /// Commands logged after the snapshot, in order.
    pub commands: Vec<C>,
}

impl<C: Serialize + DeserializeOwned> Wal<C> {
    /// Opens (creating if needed) the log in `dir` and returns the recovered
    /// snapshot and tail.
    pub fn open<S: DeserializeOwned>(dir: &Path) -> io::Result<(Self, Recovered<S, C>)> {
        fs::create_dir_all(dir)?;
        let (snap_seq, state) = match fs::read(dir.join("snapshot.json")) {
            Ok(bytes) => {
                let snap: Snapshot<S> = serde_json::from_slice(&bytes).map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("snapshot: {e}"))
                })?;
                (snap.seq, Some(snap.state))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => (0, None),
            Err(e) => return Err(e),
        };
        let path = dir.join("wal.log");
        let mut log = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut bytes = Vec::new();
        log.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut seq = snap_seq;
        let mut commands = Vec::new();
        while let Some((rec, next)) = parse_record::<C>(&bytes, pos) {
            if rec.seq > seq {
                seq = rec.seq;
                commands.push(rec.cmd);
            }
            pos = next;
        }
        if pos < bytes.len() {
            log::warn!(
                "discarding {} bytes of torn write-ahead log tail",
                bytes.len() - pos
            );
            log.set_len(pos as u64)?;
            log.sync_all()?;
        }
        log.seek(SeekFrom::End(0))?;
        let since_snapshot = commands.len() as u64;
        Ok((
            Wal {
                dir: dir.to_owned(),
                log,
                seq,
                since_snapshot,
                _cmd: PhantomData,
            },
            Recovered { state, commands },
        ))
    }

    /// Durably appends one command.
    pub fn append(&mut self, cmd: &C) -> io::Result<()> {
        let payload = serde_json::to_vec(&Record {
            seq: self.seq + 1,
            cmd,
        })
        .map_err(io::Error::other)?;
        let mut rec = Vec::with_capacity(HEADER + payload.len());
        rec.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        rec.extend_from_slice(&crc32fast::hash(&payload).to_be_bytes());
        rec.extend_from_slice(&payload);
        self.log.write_all(&rec)?;
        self.log.sync_data()?;
        self.seq += 1;
        self.since_snapshot += 1;
        Ok(())
    }

    pub fn since_snapshot(&self) -> u64 {
        self.since_snapshot
    }

    /// Writes `state` as the snapshot for everything logged so far, then
    /// empties the log.
    pub fn snapshot<S: Serialize>(&mut self, state: &S) -> io::Result<()> {
        let bytes = serde_json::to_vec(&Snapshot {
            seq: self.seq,
            state,
        })
        .map_err(io::Error::other)?;
        let tmp = self.dir.join("snapshot.json.tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, self.dir.join("snapshot.json"))?;
        // Records up to `seq` are now redundant; a crash before the truncate
        // only leaves records the snapshot already covers.
        self.log.set_len(0)?;
        self.log.sync_all()?;
        self.since_snapshot = 0;
        Ok(())
    }
}

fn parse_record<C: DeserializeOwned>(bytes: &[u8], pos: usize) -> Option<(Record<C>, usize)> {
    let header = bytes.get(pos..pos + HEADER)?;
    let len = u32::from_be_bytes(header[..4].try_into().ok()?) as usize;
    let crc = u32::from_be_bytes(header[4..].try_into().ok()?);
    let payload = bytes.get(pos + HEADER..pos + HEADER + len)?;
    if crc32fast::hash(payload) != crc {
        return None;
    }
    let rec = serde_json::from_slice(payload).ok()?;
    Some((rec, pos + HEADER + len))
}

#[cfg(test)]
mod tests {
    use super::*;

    type Log = Wal<u32>;

    #[test]
    fn replays_after_snapshot_only() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (mut wal, rec) = Log::open::<Vec<u32>>(dir.path()).unwrap();
            assert!(rec.state.is_none() && rec.commands.is_empty());
            wal.append(&1).unwrap();
            wal.append(&2).unwrap();
            wal.snapshot(&vec![1u32, 2]).unwrap();
            wal.append(&3).unwrap();
        }
        let (_, rec) = Log::open::<Vec<u32>>(dir.path()).unwrap();
        assert_eq!(rec.state, Some(vec![1, 2]));
        assert_eq!(rec.commands, vec![3]);
    }

    #[test]
    fn torn_tail_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (mut wal, _) = Log::open::<()>(dir.path()).unwrap();
            wal.append(&7).unwrap();
            wal.append(&8).unwrap();
        }
        let path = dir.path().join("wal.log");
        let len = fs::metadata(&path).unwrap().len();
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(len - 2).unwrap();
        let (mut wal, rec) = Log::open::<()>(dir.path()).unwrap();
        assert_eq!(rec.commands, vec![7]);
        wal.append(&9).unwrap();
        drop(wal);
        let (_, rec) = Log::open::<()>(dir.path()).unwrap();
        assert_eq!(rec.commands, vec![7, 9]);
    }

    #[test]
    fn corrupt_record_ends_replay() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (mut wal, _) = Log::open::<()>(dir.path()).unwrap();
            wal.append(&1).unwrap();
            wal.append(&2).unwrap();
        }
        let path = dir.path().join("wal.log");
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 2;
        bytes[last] ^= 0x20;
        fs::write(&path, bytes).unwrap();
        let (_, rec) = Log::open::<()>(dir.path()).unwrap();
        assert_eq!(rec.commands, vec![1]);
    }

    #[test]
    fn stale_records_covered_by_snapshot_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let saved;
        {
            let (mut wal, _) = Log::open::<Vec<u32>>(dir.path()).unwrap();
            wal.append(&1).unwrap();
            wal.append(&2).unwrap();
            saved = fs::read(dir.path().join("wal.log")).unwrap();
            wal.snapshot(&vec![1u32, 2]).unwrap();
        }
        // Crash between the snapshot rename and the log truncation.
        fs::write(dir.path().join("wal.log"), saved).unwrap();
        let (_, rec) = Log::open::<Vec<u32>>(dir.path()).unwrap();
        assert_eq!(rec.state, Some(vec![1, 2]));
        assert!(rec.commands.is_empty());
    }
}
