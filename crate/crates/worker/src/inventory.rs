//! The data directory as an inventory of content-addressed files.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use locflow_core::model::validate_file_name;
use locflow_core::{Digest, FileId};

#[derive(Debug, thiserror::Error)]
pub enum InventoryError {
    #[error("cannot read data directory {path}: {source}")]
    UnreadableDirectory { path: PathBuf, source: io::Error },
}

/// Hidden files and the usual temp-file spellings are never data.
pub fn is_data_file_name(name: &str) -> bool {
    !name.starts_with('.')
        && !name.ends_with('~')
        && !name.ends_with(".tmp")
        && !name.ends_with(".part")
        && validate_file_name(name).is_ok()
}

/// Scans `dir`, hashing every regular data file. Results are sorted by name.
pub fn scan_inventory(dir: &Path) -> Result<Vec<FileId>, InventoryError> {
    Scanner::default().scan(dir)
}

/// Names of the data files in `dir`, without hashing.
pub fn data_file_names(dir: &Path) -> Result<Vec<String>, InventoryError> {
    let mut names: Vec<String> = entries(dir)?.into_iter().map(|(n, _, _)| n).collect();
    names.sort();
    Ok(names)
}

fn entries(dir: &Path) -> Result<Vec<(String, u64, Option<SystemTime>)>, InventoryError> {
    let unreadable = |source| InventoryError::UnreadableDirectory {
        path: dir.to_owned(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(unreadable)? {
        let entry = entry.map_err(unreadable)?;
        let Ok(name) = entry.file_name().into_string() else {
            continue;
        };
        if !is_data_file_name(&name) {
            continue;
        }
        // Follows symlinks: a link to a data file is a data file.
        let Ok(meta) = fs::metadata(entry.path()) else {
            continue;
        };
        if meta.is_file() {
            out.push((name, meta.len(), meta.modified().ok()));
        }
    }
    Ok(out)
}

/// Remembers digests keyed by (name, size, mtime) so unchanged files are not
/// rehashed on every request.
#[derive(Default)]
pub struct Scanner {
    cache: HashMap<String, (u64, Option<SystemTime>, Digest)>,
}

impl Scanner {
    pub fn scan(&mut self, dir: &Path) -> Result<Vec<FileId>, InventoryError> {
        let mut files = Vec::new();
        let mut seen = HashMap::new();
        for (name, len, mtime) in entries(dir)? {
            let cached = self
                .cache
                .get(&name)
                .filter(|(l, m, _)| *l == len && *m == mtime && mtime.is_some())
                .map(|(_, _, d)| *d);
            let digest = match cached {
                Some(d) => d,
                None => match fs::read(dir.join(&name)) {
                    Ok(bytes) if bytes.len() as u64 == len => Digest::of(&bytes),
                    // Vanished or changed while we looked; the next scan sees it.
                    _ => continue,
                },
            };
            seen.insert(name.clone(), (len, mtime, digest));
            files.push(FileId::new(name, digest, len).expect("name checked"));
        }
        self.cache = seen;
        files.sort();
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(scan_inventory(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn hidden_and_temp_files_and_directories_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        for n in [".hidden", "x.tmp", "y~", "z.part", "data.bin"] {
            fs::write(dir.path().join(n), n).unwrap();
        }
        fs::create_dir(dir.path().join("sub")).unwrap();
        let inv = scan_inventory(dir.path()).unwrap();
        assert_eq!(inv.len(), 1);
        assert_eq!(inv[0].name, "data.bin");
    }

    #[test]
    fn missing_directory_is_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            scan_inventory(&dir.path().join("nope")),
            Err(InventoryError::UnreadableDirectory { .. })
        ));
    }

    #[test]
    fn modified_file_gets_a_new_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.dat");
        fs::write(&path, b"one").unwrap();
        let mut s = Scanner::default();
        let first = s.scan(dir.path()).unwrap();
        fs::write(&path, b"three").unwrap();
        let second = s.scan(dir.path()).unwrap();
        assert_eq!(second.len(), 1);
        assert_ne!(first[0].digest, second[0].digest);
        assert_eq!(second[0], FileId::for_bytes("f.dat", b"three").unwrap());
    }
}
