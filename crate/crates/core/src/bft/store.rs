//! Replica-local persistence: an append-only log plus an in-memory index.
//!
//! Keys are content digests `h`. The first committed value for a key wins;
//! re-committing the identical bundle is a no-op and a different bundle for
//! a known key is refused.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{AccessType, Digest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreEntry {
    pub h: Digest,
    pub sigma: Vec<u8>,
    pub at: AccessType,
    pub epoch: u64,
    pub slot: u32,
    pub owner: u16,
}

impl StoreEntry {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.sigma.len() + 64);
        w.raw(&self.h)
            .u8(self.at.to_byte())
            .u64(self.epoch)
            .u32(self.slot)
            .u16(self.owner)
            .bytes(&self.sigma);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let e = StoreEntry {
            h: r.array()?,
            at: AccessType::from_byte(r.u8()?)?,
            epoch: r.u64()?,
            slot: r.u32()?,
            owner: r.u16()?,
            sigma: r.bytes()?.to_vec(),
        };
        r.finish()?;
        Ok(e)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("corrupt log record {index}: {source}")]
    Corrupt { index: usize, source: DecodeError },
}

/// Append-only record log. Records are opaque byte strings.
pub trait LogBackend: Send {
    fn append(&mut self, record: &[u8]) -> io::Result<()>;
    fn records(&self) -> io::Result<Vec<Vec<u8>>>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryLog {
    records: Vec<Vec<u8>>,
}

impl LogBackend for MemoryLog {
    fn append(&mut self, record: &[u8]) -> io::Result<()> {
        self.records.push(record.to_vec());
        Ok(())
    }

    fn records(&self) -> io::Result<Vec<Vec<u8>>> {
        Ok(self.records.clone())
    }
}

/// `u32` big-endian length prefix per record. A torn final record (short
/// write before a crash) is ignored on replay.
#[derive(Debug)]
pub struct FileLog {
    path: PathBuf,
    file: File,
}

impl FileLog {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(FileLog { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_length_prefixed(path: &Path) -> io::Result<Vec<Vec<u8>>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + 4 <= buf.len() {
        let len = u32::from_be_bytes(buf[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        if pos + 4 + len > buf.len() {
            break;
        }
        out.push(buf[pos + 4..pos + 4 + len].to_vec());
        pos += 4 + len;
    }
    Ok(out)
}

impl LogBackend for FileLog {
    fn append(&mut self, record: &[u8]) -> io::Result<()> {
        let mut b = Vec::with_capacity(record.len() + 4);
        b.extend_from_slice(&(record.len() as u32).to_be_bytes());
        b.extend_from_slice(record);
        self.file.write_all(&b)?;
        self.file.flush()
    }

    fn records(&self) -> io::Result<Vec<Vec<u8>>> {
        read_length_prefixed(&self.path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    Stored,
    Duplicate,
    Conflict,
}

pub struct Store {
    backend: Box<dyn LogBackend>,
    index: HashMap<Digest, usize>,
    log: Vec<StoreEntry>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("entries", &self.log.len())
            .finish()
    }
}

impl Default for Store {
    fn default() -> Self {
        Store::new(Box::new(MemoryLog::default()))
    }
}

impl Store {
    pub fn new(backend: Box<dyn LogBackend>) -> Self {
        Store {
            backend,
            index: HashMap::new(),
            log: Vec::new(),
        }
    }

    /// Rebuilds the index by replaying the backend's log.
    pub fn open(backend: Box<dyn LogBackend>) -> Result<Self, StoreError> {
        let records = backend.records()?;
        let mut store = Store::new(backend);
        for (index, rec) in records.iter().enumerate() {
            let e =
                StoreEntry::decode(rec).map_err(|source| StoreError::Corrupt { index, source })?;
            if !store.index.contains_key(&e.h) {
                store.index.insert(e.h, store.log.len());
                store.log.push(e);
            }
        }
        Ok(store)
    }

    pub fn commit(&mut self, entry: StoreEntry) -> io::Result<CommitOutcome> {
        if let Some(&i) = self.index.get(&entry.h) {
            return Ok(if self.log[i].sigma == entry.sigma {
                CommitOutcome::Duplicate
            } else {
                CommitOutcome::Conflict
            });
        }
        self.backend.append(&entry.encode())?;
        self.index.insert(entry.h, self.log.len());
        self.log.push(entry);
        Ok(CommitOutcome::Stored)
    }

    pub fn get(&self, h: &Digest) -> Option<&StoreEntry> {
        self.index.get(h).map(|&i| &self.log[i])
    }

    pub fn contains(&self, h: &Digest) -> bool {
        self.index.contains_key(h)
    }

    /// Entries in delivery order.
    pub fn entries(&self) -> &[StoreEntry] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(h: u8, sigma: &[u8], slot: u32) -> StoreEntry {
        StoreEntry {
            h: [h; 32],
            sigma: sigma.to_vec(),
            at: AccessType::Te,
            epoch: 1,
            slot,
            owner: 9,
        }
    }

    #[test]
    fn first_commit_wins() {
        let mut s = Store::default();
        assert_eq!(s.commit(entry(1, b"a", 0)).unwrap(), CommitOutcome::Stored);
        assert_eq!(
            s.commit(entry(1, b"a", 5)).unwrap(),
            CommitOutcome::Duplicate
        );
        assert_eq!(
            s.commit(entry(1, b"b", 6)).unwrap(),
            CommitOutcome::Conflict
        );
        assert_eq!(s.get(&[1; 32]).unwrap().sigma, b"a");
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn file_log_replays_and_ignores_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("replica.log");
        {
            let mut s = Store::new(Box::new(FileLog::open(&p).unwrap()));
            s.commit(entry(1, b"one", 0)).unwrap();
            s.commit(entry(2, b"two", 1)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(&[0, 0, 1, 0, 7, 7]).unwrap();
        let s = Store::open(Box::new(FileLog::open(&p).unwrap())).unwrap();
        assert_eq!(s.entries().len(), 2);
        assert_eq!(s.get(&[2; 32]).unwrap().sigma, b"two");
    }

    #[test]
    fn corrupt_record_is_reported() {
        let mut log = MemoryLog::default();
        log.append(&[1, 2, 3]).unwrap();
        assert!(matches!(
            Store::open(Box::new(log)),
            Err(StoreError::Corrupt { index: 0, .. })
        ));
    }

    proptest! {
        #[test]
        fn index_matches_first_occurrence(ops in prop::collection::vec((0u8..6, 0u8..3), 0..60)) {
            let mut s = Store::default();
            let mut first: HashMap<u8, u8> = HashMap::new();
            for (i, (k, v)) in ops.iter().enumerate() {
                let out = s.commit(entry(*k, &[*v], i as u32)).unwrap();
                match first.get(k) {
                    None => { prop_assert_eq!(out, CommitOutcome::Stored); first.insert(*k, *v); }
                    Some(w) if w == v => prop_assert_eq!(out, CommitOutcome::Duplicate),
                    Some(_) => prop_assert_eq!(out, CommitOutcome::Conflict),
                }
            }
            prop_assert_eq!(s.len(), first.len());
            for (k, v) in first {
                prop_assert_eq!(&s.get(&[k; 32]).unwrap().sigma, &vec![v]);
            }
            let replayed = Store::open(Box::new(MemoryLog { records: s.entries().iter().map(StoreEntry::encode).collect() })).unwrap();
            prop_assert_eq!(replayed.entries(), s.entries());
        }
    }
}
