//! Trusted verifier: decrypts the owner's policy and the requester's claimed
//! attributes, checks them against each other and reports to the KGC.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::pke::{self, PkePublicKey, PkeSecretKey};
use crate::crypto::{AccessType, PartialAttribute, Policy};
use crate::ledger::Txid;

/// The verifier keypair. The secret half has no accessor.
pub struct VerifierKeys {
    sk: PkeSecretKey,
    pk: PkePublicKey,
}

impl std::fmt::Debug for VerifierKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VerifierKeys")
            .field("pk", &hex::encode(self.pk.0))
            .finish()
    }
}

impl VerifierKeys {
    pub fn new(sk: PkeSecretKey) -> Self {
        let pk = sk.public_key();
        VerifierKeys { sk, pk }
    }

    pub fn public_key(&self) -> &PkePublicKey {
        &self.pk
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: u64,
    pub txid: Txid,
    pub requester: String,
    pub res: bool,
    pub reason: String,
}

impl AuditEntry {
    pub fn write(&self, w: &mut Writer) {
        w.u64(self.timestamp)
            .raw(&self.txid.0)
            .str(&self.requester)
            .u8(self.res as u8)
            .str(&self.reason);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(AuditEntry {
            timestamp: r.u64()?,
            txid: Txid(r.array()?),
            requester: r.string()?,
            res: match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err(DecodeError::Invalid("flag")),
            },
            reason: r.string()?,
        })
    }
}

/// Append-only audit trail, one JSON object per line when file-backed.
#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
    file: Option<File>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> io::Result<Self> {
        let mut entries = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                entries.push(
                    serde_json::from_str(&line)
                        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
                );
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            entries,
            file: Some(file),
        })
    }

    pub fn append(&mut self, e: AuditEntry) -> io::Result<()> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_vec(&e).map_err(io::Error::other)?;
            line.push(b'\n');
            f.write_all(&line)?;
        }
        self.entries.push(e);
        Ok(())
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }
}

/// Whether the claimed attributes satisfy the policy.
///
/// For TE, `te_label` is the label the session context implies; `None`
/// leaves label binding to the threshold ciphertext itself.
pub fn satisfies(p: &Policy, pu: &PartialAttribute, te_label: Option<&[u8]>) -> bool {
    match (p, pu) {
        (Policy::Abe(formula), PartialAttribute::Abe(attrs)) => formula.evaluate(attrs),
        (Policy::Be { .. }, PartialAttribute::Be(leaf)) => {
            p.eligible_leaves().is_some_and(|e| e.contains(leaf))
        }
        (Policy::Te { label, authorized }, PartialAttribute::Te(id)) => {
            authorized.contains(id) && te_label.is_none_or(|l| l == label.as_slice())
        }
        _ => false,
    }
}

pub const REASON_OK: &str = "ok";
pub const REASON_DECRYPT_FAIL: &str = "decrypt_fail";
pub const REASON_TYPE_MISMATCH: &str = "type_mismatch";
pub const REASON_NOT_SATISFIED: &str = "not_satisfied";
pub const REASON_NOT_FOUND: &str = "not_found";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationSession {
    pub txid: Txid,
    pub requester_id: String,
    pub at_b: AccessType,
    pub at_d: AccessType,
    pub c_p: Vec<u8>,
    pub c_pu: Vec<u8>,
    pub res: bool,
}

#[derive(Debug)]
pub struct Verifier {
    keys: VerifierKeys,
    /// Requests waiting for the ledger record, keyed by txid.
    pending: BTreeMap<Txid, Vec<(String, AccessType, Vec<u8>)>>,
    sessions: BTreeMap<(Txid, String), VerificationSession>,
    audit: AuditLog,
    clock: u64,
}

impl Verifier {
    pub fn new(keys: VerifierKeys, audit: AuditLog) -> Self {
        Verifier {
            keys,
            pending: BTreeMap::new(),
            sessions: BTreeMap::new(),
            audit,
            clock: 0,
        }
    }

    pub fn public_key(&self) -> &PkePublicKey {
        self.keys.public_key()
    }

    /// `(res, reason)` for one check. Both ciphertexts must decrypt, the
    /// access types must agree and the attributes must satisfy the policy.
    pub fn verify(
        &self,
        at_b: AccessType,
        c_p: &[u8],
        at_d: AccessType,
        c_pu: &[u8],
    ) -> (bool, &'static str) {
        let policy = pke::decrypt(&self.keys.sk, c_p)
            .ok()
            .and_then(|b| Policy::decode(&b).ok());
        let pu = pke::decrypt(&self.keys.sk, c_pu)
            .ok()
            .and_then(|b| PartialAttribute::decode(&b).ok());
        let (Some(policy), Some(pu)) = (policy, pu) else {
            return (false, REASON_DECRYPT_FAIL);
        };
        if at_b != at_d || policy.tag() != at_b || pu.tag() != at_d {
            return (false, REASON_TYPE_MISMATCH);
        }
        if satisfies(&policy, &pu, None) {
            (true, REASON_OK)
        } else {
            (false, REASON_NOT_SATISFIED)
        }
    }

    pub fn cached(&self, txid: &Txid, requester: &str) -> Option<&VerificationSession> {
        self.sessions.get(&(*txid, requester.to_string()))
    }

    /// Queues a request; returns true if the record must be pulled from the ledger.
    pub fn request(
        &mut self,
        txid: Txid,
        requester: String,
        at_d: AccessType,
        c_pu: Vec<u8>,
    ) -> bool {
        let q = self.pending.entry(txid).or_default();
        let first = q.is_empty();
        q.push((requester, at_d, c_pu));
        first
    }

    /// Completes every request waiting on `txid`. Returns `(requester, res)`
    /// reports for the KGC together with the audit entries written.
    pub fn on_record(
        &mut self,
        txid: Txid,
        record: Option<(AccessType, &[u8])>,
    ) -> io::Result<Vec<AuditEntry>> {
        let waiting = self.pending.remove(&txid).unwrap_or_default();
        let mut out = Vec::with_capacity(waiting.len());
        for (requester, at_d, c_pu) in waiting {
            let (res, reason) = match record {
                Some((at_b, c_p)) => {
                    let (res, reason) = self.verify(at_b, c_p, at_d, &c_pu);
                    self.sessions.insert(
                        (txid, requester.clone()),
                        VerificationSession {
                            txid,
                            requester_id: requester.clone(),
                            at_b,
                            at_d,
                            c_p: c_p.to_vec(),
                            c_pu,
                            res,
                        },
                    );
                    (res, reason)
                }
                None => (false, REASON_NOT_FOUND),
            };
            let entry = AuditEntry {
                timestamp: self.clock,
                txid,
                requester,
                res,
                reason: reason.to_string(),
            };
            self.clock += 1;
            self.audit.append(entry.clone())?;
            out.push(entry);
        }
        Ok(out)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &VerificationSession> {
        self.sessions.values()
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }
}
