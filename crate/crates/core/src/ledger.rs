//! Simulated permissioned ledger: an append-only hash chain of blocks
//! holding owner records `(AT, c_h, c_p)` and access audit records.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::bft::store::{FileLog, LogBackend};
use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{sha256, AccessType, Digest};
use crate::verifier::AuditEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Txid(pub Digest);

impl fmt::Display for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl std::str::FromStr for Txid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = hex::decode(s).map_err(|e| e.to_string())?;
        Ok(Txid(
            raw.try_into()
                .map_err(|_| "txid must be 32 bytes".to_string())?,
        ))
    }
}

impl serde::Serialize for Txid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for Txid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnChainRecord {
    pub at: AccessType,
    pub c_h: Vec<u8>,
    pub c_p: Vec<u8>,
    pub owner_id: String,
    pub timestamp: u64,
}

impl OnChainRecord {
    pub fn write(&self, w: &mut Writer) {
        w.u8(self.at.to_byte())
            .bytes(&self.c_h)
            .bytes(&self.c_p)
            .str(&self.owner_id)
            .u64(self.timestamp);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(OnChainRecord {
            at: AccessType::from_byte(r.u8()?)?,
            c_h: r.bytes()?.to_vec(),
            c_p: r.bytes()?.to_vec(),
            owner_id: r.string()?,
            timestamp: r.u64()?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainRecord {
    Data(OnChainRecord),
    Audit(AuditEntry),
}

impl ChainRecord {
    fn write(&self, w: &mut Writer) {
        match self {
            ChainRecord::Data(r) => {
                w.u8(1);
                r.write(w);
            }
            ChainRecord::Audit(a) => {
                w.u8(2);
                a.write(w);
            }
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            1 => Ok(ChainRecord::Data(OnChainRecord::read(r)?)),
            2 => Ok(ChainRecord::Audit(AuditEntry::read(r)?)),
            t => Err(DecodeError::UnknownTag(t)),
        }
    }

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub records: Vec<ChainRecord>,
    pub block_hash: Digest,
}

fn block_hash(height: u64, prev: &Digest, records: &[ChainRecord]) -> Digest {
    let mut w = Writer::new();
    w.raw(b"facos/block")
        .u64(height)
        .raw(prev)
        .u32(records.len() as u32);
    for r in records {
        w.bytes(&r.encode());
    }
    sha256(&w.finish())
}

/// Position-salted record id.
pub fn txid_for(record: &ChainRecord, height: u64, index: u32) -> Txid {
    let mut w = Writer::new();
    w.raw(b"facos/txid")
        .bytes(&record.encode())
        .u64(height)
        .u32(index);
    Txid(sha256(&w.finish()))
}

impl Block {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.height)
            .raw(&self.prev_hash)
            .u32(self.records.len() as u32);
        for r in &self.records {
            r.write(&mut w);
        }
        w.raw(&self.block_hash);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let height = r.u64()?;
        let prev_hash = r.array()?;
        let k = r.u32()? as usize;
        let mut records = Vec::with_capacity(k.min(1024));
        for _ in 0..k {
            records.push(ChainRecord::read(&mut r)?);
        }
        let block_hash = r.array()?;
        r.finish()?;
        Ok(Block {
            height,
            prev_hash,
            records,
            block_hash,
        })
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("owner `{0}` is not registered")]
    UnregisteredOwner(String),
    #[error("txid not found")]
    NotFound,
    #[error("chain broken at height {0}")]
    BrokenChain(u64),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

pub struct Ledger {
    blocks: Vec<Block>,
    index: HashMap<Txid, (usize, usize)>,
    owners: BTreeSet<String>,
    clock: u64,
    sink: Option<Box<dyn LogBackend>>,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger")
            .field("height", &self.blocks.len())
            .finish()
    }
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new()
    }
}

impl Ledger {
    pub fn new() -> Self {
        Ledger {
            blocks: Vec::new(),
            index: HashMap::new(),
            owners: BTreeSet::new(),
            clock: 0,
            sink: None,
        }
    }

    /// Opens (or creates) a chain file, replaying and verifying existing blocks.
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let mut ledger = Ledger::new();
        if path.exists() {
            for raw in crate::bft::store::read_length_prefixed(path)? {
                ledger.push_block(Block::decode(&raw)?);
            }
            ledger.verify()?;
        }
        ledger.sink = Some(Box::new(FileLog::open(path)?));
        Ok(ledger)
    }

    pub fn register_owner(&mut self, owner: impl Into<String>) {
        self.owners.insert(owner.into());
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    fn push_block(&mut self, block: Block) {
        let b = self.blocks.len();
        for (i, rec) in block.records.iter().enumerate() {
            self.index
                .insert(txid_for(rec, block.height, i as u32), (b, i));
            if let ChainRecord::Data(d) = rec {
                self.clock = self.clock.max(d.timestamp + 1);
            }
        }
        self.blocks.push(block);
    }

    /// Appends one block holding `records`; returns their txids.
    pub fn append(&mut self, records: Vec<ChainRecord>) -> Result<Vec<Txid>, LedgerError> {
        for r in &records {
            if let ChainRecord::Data(d) = r {
                if !self.owners.contains(&d.owner_id) {
                    return Err(LedgerError::UnregisteredOwner(d.owner_id.clone()));
                }
            }
        }
        let height = self.height();
        let prev = self.blocks.last().map_or([0; 32], |b| b.block_hash);
        let block = Block {
            height,
            prev_hash: prev,
            block_hash: block_hash(height, &prev, &records),
            records,
        };
        if let Some(sink) = self.sink.as_mut() {
            sink.append(&block.encode())?;
        }
        let ids = (0..block.records.len())
            .map(|i| txid_for(&block.records[i], height, i as u32))
            .collect();
        self.push_block(block);
        Ok(ids)
    }

    /// Stamps the record with the ledger clock and appends it.
    pub fn submit(&mut self, mut record: OnChainRecord) -> Result<Txid, LedgerError> {
        record.timestamp = self.clock;
        let id = self.append(vec![ChainRecord::Data(record)])?;
        Ok(id[0])
    }

    pub fn audit(&mut self, entry: AuditEntry) -> Result<Txid, LedgerError> {
        Ok(self.append(vec![ChainRecord::Audit(entry)])?[0])
    }

    pub fn fetch(&self, txid: &Txid) -> Result<&OnChainRecord, LedgerError> {
        match self.index.get(txid) {
            Some(&(b, i)) => match &self.blocks[b].records[i] {
                ChainRecord::Data(d) => Ok(d),
                ChainRecord::Audit(_) => Err(LedgerError::NotFound),
            },
            None => Err(LedgerError::NotFound),
        }
    }

    pub fn audit_records(&self) -> impl Iterator<Item = &AuditEntry> {
        self.blocks
            .iter()
            .flat_map(|b| &b.records)
            .filter_map(|r| match r {
                ChainRecord::Audit(a) => Some(a),
                ChainRecord::Data(_) => None,
            })
    }

    /// Walks the chain from genesis checking links and block hashes.
    pub fn verify(&self) -> Result<(), LedgerError> {
        let mut prev = [0u8; 32];
        for (h, b) in self.blocks.iter().enumerate() {
            if b.height != h as u64
                || b.prev_hash != prev
                || block_hash(b.height, &b.prev_hash, &b.records) != b.block_hash
            {
                return Err(LedgerError::BrokenChain(h as u64));
            }
            prev = b.block_hash;
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn blocks_mut(&mut self) -> &mut Vec<Block> {
        &mut self.blocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(owner: &str, c_h: &[u8]) -> OnChainRecord {
        OnChainRecord {
            at: AccessType::Abe,
            c_h: c_h.to_vec(),
            c_p: b"policy".to_vec(),
            owner_id: owner.into(),
            timestamp: 0,
        }
    }

    fn ledger() -> Ledger {
        let mut l = Ledger::new();
        l.register_owner("owner-1");
        l
    }

    #[test]
    fn identical_content_gets_distinct_txids() {
        let mut l = ledger();
        let a = l.submit(rec("owner-1", b"x")).unwrap();
        let b = l.submit(rec("owner-1", b"x")).unwrap();
        assert_ne!(a, b);
        assert_eq!(l.fetch(&a).unwrap().c_h, b"x");
    }

    #[test]
    fn unregistered_owner_rejected_and_unknown_txid_not_found() {
        let mut l = ledger();
        assert!(matches!(
            l.submit(rec("mallory", b"x")),
            Err(LedgerError::UnregisteredOwner(_))
        ));
        assert!(matches!(
            l.fetch(&Txid([0; 32])),
            Err(LedgerError::NotFound)
        ));
        assert_eq!(l.height(), 0);
    }

    #[test]
    fn tampering_breaks_verification() {
        let mut l = ledger();
        for i in 0..5u8 {
            l.submit(rec("owner-1", &[i])).unwrap();
        }
        l.verify().unwrap();
        if let ChainRecord::Data(d) = &mut l.blocks_mut()[2].records[0] {
            d.c_p = b"other".to_vec();
        }
        assert!(matches!(l.verify(), Err(LedgerError::BrokenChain(2))));
    }

    #[test]
    fn bulk_round_trip_1000() {
        let mut l = ledger();
        let mut ids = Vec::new();
        for i in 0..1000u32 {
            ids.push((i, l.submit(rec("owner-1", &i.to_be_bytes())).unwrap()));
        }
        let distinct: BTreeSet<_> = ids.iter().map(|(_, t)| *t).collect();
        assert_eq!(distinct.len(), 1000);
        for (i, t) in ids {
            let r = l.fetch(&t).unwrap();
            assert_eq!(r.c_h, i.to_be_bytes());
            assert_eq!(r.timestamp, i as u64);
        }
    }

    #[test]
    fn chain_file_persists_and_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("chain.bin");
        let t = {
            let mut l = Ledger::open(&p).unwrap();
            l.register_owner("owner-1");
            l.submit(rec("owner-1", b"a")).unwrap();
            l.submit(rec("owner-1", b"b")).unwrap()
        };
        let l = Ledger::open(&p).unwrap();
        assert_eq!(l.height(), 2);
        assert_eq!(l.fetch(&t).unwrap().c_h, b"b");
    }

    #[test]
    fn txid_hex_round_trip() {
        let t = Txid([0xab; 32]);
        let s = t.to_string();
        assert_eq!(s, "ab".repeat(32));
        assert_eq!(s.parse::<Txid>().unwrap(), t);
        assert!("zz".parse::<Txid>().is_err());
    }
}
