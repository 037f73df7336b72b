//! Data-owner and data-requester protocol drivers.
//!
//! Sessions are sans-IO state machines: they consume messages and timer
//! ticks and return the messages to send. The simulator and the socket
//! transport both drive them.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::bft::tx::{OriginKey, Tx};
use crate::crypto::abe::{AbePublicKey, AbeSecretKey};
use crate::crypto::be::{LeafKeys, SubtreeKeyTree};
use crate::crypto::engine::WriteKeys;
use crate::crypto::pke::{self, PkePublicKey, PkeSecretKey};
use crate::crypto::te::{self, DecryptionShare, TeCiphertext, TePublicKey};
use crate::crypto::{
    decrypt_get_hash, read_engine, sha256, write_engine, AccessType, CipherBundle, CryptoError,
    CryptoRand, Digest, HashKey, PartialAttribute, Policy, ReadKey,
};
use crate::ledger::{OnChainRecord, Txid};
use crate::wire::{Message, NodeId, ReadReply, SlotView};

/// Network addresses of the fixed parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Peers {
    pub n: usize,
    pub f: usize,
    pub ledger: NodeId,
    pub verifier: NodeId,
    pub kgc: NodeId,
}

impl Peers {
    /// Replicas `0..n`, then ledger, verifier and KGC.
    pub fn standard(n: usize, f: usize) -> Self {
        Peers {
            n,
            f,
            ledger: n as NodeId,
            verifier: n as NodeId + 1,
            kgc: n as NodeId + 2,
        }
    }

    pub fn first_client(&self) -> NodeId {
        self.kgc + 1
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("access denied")]
    AccessDenied,
    #[error("retrieved data failed the hash check")]
    IntegrityFail,
    #[error("record not found on chain")]
    NotFound,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Exponential backoff in logical time.
#[derive(Debug, Clone, Copy)]
pub struct Backoff {
    pub base: u64,
    pub cap: u64,
    attempt: u32,
}

impl Backoff {
    pub fn new(base: u64, cap: u64) -> Self {
        Backoff {
            base,
            cap,
            attempt: 0,
        }
    }

    pub fn next_delay(&mut self) -> u64 {
        let d = self
            .base
            .saturating_mul(1 << self.attempt.min(20))
            .min(self.cap);
        self.attempt += 1;
        d
    }

    pub fn attempts(&self) -> u32 {
        self.attempt
    }
}

/// The owner's description of who may read, before it becomes a [`Policy`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttributeList {
    Abe(String),
    Be { revoked: BTreeSet<usize> },
    Te { authorized: BTreeSet<String> },
}

impl AttributeList {
    pub fn access_type(&self) -> AccessType {
        match self {
            AttributeList::Abe(_) => AccessType::Abe,
            AttributeList::Be { .. } => AccessType::Be,
            AttributeList::Te { .. } => AccessType::Te,
        }
    }

    /// TE policies are labelled with the content hash `h`.
    pub fn to_policy(&self, h: &Digest, group_size: usize) -> Result<Policy, CryptoError> {
        match self {
            AttributeList::Abe(f) => Policy::abe(f),
            AttributeList::Be { revoked } => Policy::be(group_size, revoked.iter().copied()),
            AttributeList::Te { authorized } => Policy::te(h.to_vec(), authorized.iter().cloned()),
        }
    }
}

/// What an owner needs to write.
#[derive(Clone)]
pub struct OwnerKeys {
    pub owner_id: String,
    pub node: NodeId,
    pub origin: OriginKey,
    pub abe: AbePublicKey,
    pub be_tree: SubtreeKeyTree,
    pub te: TePublicKey,
    pub verifier: PkePublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OwnerState {
    /// Waiting for f+1 storage acks.
    Storing,
    /// Waiting for the ledger receipt of this nonce.
    Anchoring {
        nonce: u64,
    },
    /// Waiting for the KGC to hold the dataset key.
    Depositing {
        txid: Txid,
    },
    Done {
        txid: Txid,
    },
}

pub struct OwnerSession {
    pub at: AccessType,
    pub policy: Policy,
    pub h: Digest,
    pub tx: Tx,
    pub c_h: Vec<u8>,
    hash_sk: Option<PkeSecretKey>,
    acks: BTreeSet<NodeId>,
    state: OwnerState,
    nonce: u64,
    peers: Peers,
    owner_id: String,
    c_p: Vec<u8>,
    pub backoff: Backoff,
}

impl std::fmt::Debug for OwnerSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OwnerSession")
            .field("at", &self.at)
            .field("h", &hex::encode(&self.h[..8]))
            .field("acks", &self.acks.len())
            .field("state", &self.state)
            .finish()
    }
}

impl OwnerSession {
    /// Encrypts `m` locally. Fails before any network traffic if the
    /// policy admits no one.
    pub fn new(
        m: &[u8],
        al: &AttributeList,
        keys: &OwnerKeys,
        peers: Peers,
        nonce: u64,
        rng: &mut impl CryptoRand,
    ) -> Result<Self, ClientError> {
        let at = al.access_type();
        let h = sha256(m);
        let policy = al.to_policy(&h, keys.be_tree.n_clients())?;
        let hash_sk = (at != AccessType::Abe).then(|| PkeSecretKey::generate(rng));
        let hash_pk = hash_sk.as_ref().map(PkeSecretKey::public_key);
        let wk = WriteKeys {
            abe: Some(&keys.abe),
            be_tree: Some(&keys.be_tree),
            te: Some(&keys.te),
            hash_pk: hash_pk.as_ref(),
        };
        let (bundle, c_h) = write_engine(m, at, &policy, wk, rng)?;
        let tx = Tx::new(keys.node, &keys.origin, h, bundle.encode());
        let c_p = pke::encrypt(&keys.verifier, &policy.encode(), rng);
        Ok(OwnerSession {
            at,
            policy,
            h,
            tx,
            c_h,
            hash_sk,
            acks: BTreeSet::new(),
            state: OwnerState::Storing,
            nonce,
            peers,
            owner_id: keys.owner_id.clone(),
            c_p,
            backoff: Backoff::new(2_000, 64_000),
        })
    }

    pub fn state(&self) -> &OwnerState {
        &self.state
    }

    pub fn acks(&self) -> usize {
        self.acks.len()
    }

    pub fn txid(&self) -> Option<Txid> {
        match self.state {
            OwnerState::Depositing { txid } | OwnerState::Done { txid } => Some(txid),
            _ => None,
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self.state, OwnerState::Done { .. })
    }

    /// Submission to one uniformly chosen replica.
    pub fn start(&mut self, rng: &mut impl Rng) -> Vec<(NodeId, Message)> {
        let to = rng.gen_range(0..self.peers.n) as NodeId;
        vec![(to, Message::TxSubmit(self.tx.clone()))]
    }

    fn record(&self) -> OnChainRecord {
        OnChainRecord {
            at: self.at,
            c_h: self.c_h.clone(),
            c_p: self.c_p.clone(),
            owner_id: self.owner_id.clone(),
            timestamp: 0,
        }
    }

    pub fn on_message(&mut self, from: NodeId, msg: &Message) -> Vec<(NodeId, Message)> {
        match (&self.state, msg) {
            (OwnerState::Storing, Message::TxAck { h })
                if *h == self.h && (from as usize) < self.peers.n =>
            {
                self.acks.insert(from);
                if self.acks.len() > self.peers.f {
                    self.state = OwnerState::Anchoring { nonce: self.nonce };
                    self.backoff = Backoff::new(self.backoff.base, self.backoff.cap);
                    return vec![(
                        self.peers.ledger,
                        Message::LedgerSubmit {
                            nonce: self.nonce,
                            record: self.record(),
                        },
                    )];
                }
            }
            (
                OwnerState::Anchoring { nonce },
                Message::LedgerReceipt {
                    nonce: r,
                    txid: Some(txid),
                },
            ) if *nonce == *r && from == self.peers.ledger => {
                let txid = *txid;
                match &self.hash_sk {
                    Some(sk) => {
                        self.state = OwnerState::Depositing { txid };
                        return vec![(
                            self.peers.kgc,
                            Message::Deposit {
                                txid,
                                sk: sk.to_bytes(),
                            },
                        )];
                    }
                    None => self.state = OwnerState::Done { txid },
                }
            }
            (OwnerState::Depositing { txid }, Message::DepositAck { txid: t })
                if txid == t && from == self.peers.kgc =>
            {
                self.state = OwnerState::Done { txid: *txid };
            }
            _ => {}
        }
        Vec::new()
    }

    /// Retransmission after a backoff expired without progress.
    pub fn on_timer(&mut self, rng: &mut impl Rng) -> Vec<(NodeId, Message)> {
        match &self.state {
            OwnerState::Storing => self.start(rng),
            OwnerState::Anchoring { nonce } => vec![(
                self.peers.ledger,
                Message::LedgerSubmit {
                    nonce: *nonce,
                    record: self.record(),
                },
            )],
            OwnerState::Depositing { txid } => vec![(
                self.peers.kgc,
                Message::Deposit {
                    txid: *txid,
                    sk: self
                        .hash_sk
                        .as_ref()
                        .expect("depositing implies a key")
                        .to_bytes(),
                },
            )],
            OwnerState::Done { .. } => Vec::new(),
        }
    }
}

/// A requester's registered identity and long-lived keys.
#[derive(Debug, Clone)]
pub struct RequesterProfile {
    pub identity: String,
    pub attributes: BTreeSet<String>,
    pub leaf: Option<usize>,
    pub leaf_keys: Option<LeafKeys>,
}

impl RequesterProfile {
    /// The claim presented to the verifier for a dataset of type `at`.
    pub fn partial_attribute(&self, at: AccessType) -> PartialAttribute {
        match at {
            AccessType::Abe => PartialAttribute::Abe(self.attributes.clone()),
            // an unplaced requester claims a leaf outside every group
            AccessType::Be => PartialAttribute::Be(self.leaf.unwrap_or(usize::MAX >> 1)),
            AccessType::Te => PartialAttribute::Te(self.identity.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequesterState {
    Fetching,
    /// Verification requested; waiting for the KGC's answer.
    Verifying {
        at: AccessType,
    },
    Reading {
        at: AccessType,
        h: Digest,
    },
    Delivered,
    Failed(ClientError),
}

#[allow(clippy::large_enum_variant)]
enum HeldKey {
    Abe(AbeSecretKey),
    Pke(PkeSecretKey),
}

pub struct RequesterSession {
    pub txid: Txid,
    profile: RequesterProfile,
    peers: Peers,
    te_pk: TePublicKey,
    verifier_pk: PkePublicKey,
    state: RequesterState,
    record: Option<OnChainRecord>,
    key: Option<HeldKey>,
    replies: BTreeMap<NodeId, ReadReply>,
    reads_sent: u64,
    delivered: Option<Vec<u8>>,
    pub backoff: Backoff,
}

impl std::fmt::Debug for RequesterSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RequesterSession")
            .field("txid", &self.txid)
            .field("requester", &self.profile.identity)
            .field("state", &self.state)
            .finish()
    }
}

impl RequesterSession {
    pub fn new(
        txid: Txid,
        profile: RequesterProfile,
        peers: Peers,
        te_pk: TePublicKey,
        verifier_pk: PkePublicKey,
    ) -> Self {
        RequesterSession {
            txid,
            profile,
            peers,
            te_pk,
            verifier_pk,
            state: RequesterState::Fetching,
            record: None,
            key: None,
            replies: BTreeMap::new(),
            reads_sent: 0,
            delivered: None,
            backoff: Backoff::new(2_000, 64_000),
        }
    }

    pub fn state(&self) -> &RequesterState {
        &self.state
    }

    pub fn identity(&self) -> &str {
        &self.profile.identity
    }

    pub fn delivered(&self) -> Option<&[u8]> {
        self.delivered.as_deref()
    }

    pub fn reads_sent(&self) -> u64 {
        self.reads_sent
    }

    pub fn is_finished(&self) -> bool {
        matches!(
            self.state,
            RequesterState::Delivered | RequesterState::Failed(_)
        )
    }

    pub fn start(&mut self) -> Vec<(NodeId, Message)> {
        vec![(self.peers.ledger, Message::LedgerFetch { txid: self.txid })]
    }

    fn read_all(&mut self, h: Digest) -> Vec<(NodeId, Message)> {
        self.reads_sent += self.peers.n as u64;
        (0..self.peers.n as NodeId)
            .map(|r| (r, Message::ReadReq { h }))
            .collect()
    }

    /// Returns messages to send. When the session delivers, `delivered()`
    /// becomes `Some` exactly once.
    pub fn on_message(
        &mut self,
        from: NodeId,
        msg: Message,
        rng: &mut impl CryptoRand,
    ) -> Vec<(NodeId, Message)> {
        match (&self.state, msg) {
            (RequesterState::Fetching, Message::LedgerRecord { txid, record })
                if txid == self.txid && from == self.peers.ledger =>
            {
                let Some(record) = record else {
                    self.state = RequesterState::Failed(ClientError::NotFound);
                    return Vec::new();
                };
                let at = record.at;
                let pu = self.profile.partial_attribute(at);
                let c_pu = pke::encrypt(&self.verifier_pk, &pu.encode(), rng);
                self.record = Some(record);
                self.state = RequesterState::Verifying { at };
                vec![
                    (
                        self.peers.verifier,
                        Message::VerifyReq {
                            txid,
                            requester: self.profile.identity.clone(),
                            at_d: at,
                            c_pu,
                        },
                    ),
                    (
                        self.peers.kgc,
                        Message::ReleaseReq {
                            txid,
                            requester: self.profile.identity.clone(),
                        },
                    ),
                ]
            }
            (RequesterState::Verifying { .. }, Message::KeyDenied { txid })
                if txid == self.txid && from == self.peers.kgc =>
            {
                self.state = RequesterState::Failed(ClientError::AccessDenied);
                Vec::new()
            }
            (RequesterState::Verifying { at }, Message::KeyRelease { txid, at: kat, key })
                if txid == self.txid && from == self.peers.kgc =>
            {
                let at = *at;
                match self.accept_key(at, kat, &key) {
                    Ok(h) => {
                        self.state = RequesterState::Reading { at, h };
                        self.read_all(h)
                    }
                    Err(e) => {
                        self.state = RequesterState::Failed(e);
                        Vec::new()
                    }
                }
            }
            (RequesterState::Reading { at, h }, Message::ReadResp { h: rh, reply })
                if rh == *h && (from as usize) < self.peers.n =>
            {
                let (at, h) = (*at, *h);
                self.replies.insert(from, reply);
                self.try_match(at, h);
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn accept_key(
        &mut self,
        at: AccessType,
        kat: AccessType,
        key: &[u8],
    ) -> Result<Digest, ClientError> {
        if kat != at {
            return Err(CryptoError::KeyMismatch.into());
        }
        let held = match at {
            AccessType::Abe => HeldKey::Abe(AbeSecretKey::decode(key)?),
            AccessType::Be | AccessType::Te => {
                let b: [u8; 32] = key.try_into().map_err(|_| CryptoError::KeyMismatch)?;
                HeldKey::Pke(PkeSecretKey::from_bytes(b))
            }
        };
        let c_h = &self.record.as_ref().expect("record fetched before key").c_h;
        let hk = match &held {
            HeldKey::Abe(sk) => HashKey::Abe(sk),
            HeldKey::Pke(sk) => HashKey::Pke(sk),
        };
        let h = decrypt_get_hash(at, hk, c_h)?;
        self.key = Some(held);
        Ok(h)
    }

    /// f+1 byte-identical bundles, or for TE an identical bundle backed by
    /// f+1 verifying shares.
    fn try_match(&mut self, at: AccessType, h: Digest) {
        let need = self.peers.f + 1;
        let mut groups: BTreeMap<&[u8], Vec<Option<&[u8]>>> = BTreeMap::new();
        for reply in self.replies.values() {
            match reply {
                ReadReply::Sigma(s) => groups.entry(s.as_slice()).or_default().push(None),
                ReadReply::Te { sigma, share } => groups
                    .entry(sigma.as_slice())
                    .or_default()
                    .push(Some(share.as_slice())),
                ReadReply::NotFound | ReadReply::Corrupt => {}
            }
        }
        let mut result = None;
        for (sigma, shares) in groups {
            if shares.len() < need {
                continue;
            }
            let Ok(bundle) = CipherBundle::decode(sigma) else {
                continue;
            };
            if bundle.tag != at {
                continue;
            }
            let m = match at {
                AccessType::Te => {
                    let Ok(ct) = TeCiphertext::decode(&bundle.x) else {
                        continue;
                    };
                    let verified: Vec<DecryptionShare> = shares
                        .iter()
                        .flatten()
                        .filter_map(|s| DecryptionShare::decode(s).ok())
                        .filter(|s| te::verify_share(&self.te_pk, &ct, &h, s))
                        .collect();
                    if verified.len() < need {
                        continue;
                    }
                    read_engine(
                        &bundle,
                        ReadKey::Te {
                            pk: &self.te_pk,
                            shares: &verified[..need],
                        },
                    )
                }
                AccessType::Abe => match &self.key {
                    Some(HeldKey::Abe(sk)) => read_engine(&bundle, ReadKey::Abe(sk)),
                    _ => Err(CryptoError::KeyMismatch),
                },
                AccessType::Be => match &self.profile.leaf_keys {
                    Some(lk) => read_engine(&bundle, ReadKey::Be(lk)),
                    None => Err(CryptoError::Denied),
                },
            };
            result = Some(match m {
                Ok(m) if sha256(&m) == h => Ok(m),
                Ok(_) => Err(ClientError::IntegrityFail),
                Err(CryptoError::Denied) => Err(ClientError::AccessDenied),
                Err(_) => Err(ClientError::IntegrityFail),
            });
            break;
        }
        match result {
            Some(Ok(m)) => {
                self.delivered = Some(m);
                self.state = RequesterState::Delivered;
            }
            Some(Err(e)) => self.state = RequesterState::Failed(e),
            None => {}
        }
    }

    /// Re-asks whatever the current step is waiting for.
    pub fn on_timer(&mut self) -> Vec<(NodeId, Message)> {
        match self.state.clone() {
            RequesterState::Fetching => self.start(),
            RequesterState::Verifying { .. } => vec![(
                self.peers.kgc,
                Message::ReleaseReq {
                    txid: self.txid,
                    requester: self.profile.identity.clone(),
                },
            )],
            RequesterState::Reading { h, .. } => {
                // replicas that had nothing yet are asked again
                let stale: Vec<NodeId> = (0..self.peers.n as NodeId)
                    .filter(|r| {
                        !matches!(
                            self.replies.get(r),
                            Some(ReadReply::Sigma(_) | ReadReply::Te { .. })
                        )
                    })
                    .collect();
                self.reads_sent += stale.len() as u64;
                stale
                    .into_iter()
                    .map(|r| (r, Message::ReadReq { h }))
                    .collect()
            }
            RequesterState::Delivered | RequesterState::Failed(_) => Vec::new(),
        }
    }
}

/// Walks the committed slots `(epoch, proposer)` in order, skipping a slot
/// once f+1 replicas report it empty.
#[derive(Debug, Clone)]
pub struct SlotCursor {
    n: usize,
    f: usize,
    epoch: u64,
    proposer: u16,
    views: BTreeMap<NodeId, SlotView>,
    skipped: u64,
}

impl SlotCursor {
    pub fn new(n: usize, f: usize) -> Self {
        SlotCursor {
            n,
            f,
            epoch: 0,
            proposer: 0,
            views: BTreeMap::new(),
            skipped: 0,
        }
    }

    pub fn position(&self) -> (u64, u16) {
        (self.epoch, self.proposer)
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn request(&self) -> Vec<(NodeId, Message)> {
        (0..self.n as NodeId)
            .map(|r| {
                (
                    r,
                    Message::SlotReq {
                        epoch: self.epoch,
                        proposer: self.proposer,
                    },
                )
            })
            .collect()
    }

    fn step(&mut self) {
        self.views.clear();
        self.proposer += 1;
        if self.proposer as usize == self.n {
            self.proposer = 0;
            self.epoch += 1;
        }
    }

    /// Feeds one response. Returns the slot's hashes once f+1 replicas agree
    /// it is filled, or an empty list when it was skipped; `None` while
    /// undecided. The cursor moves on in both cases.
    pub fn on_response(
        &mut self,
        from: NodeId,
        epoch: u64,
        proposer: u16,
        view: SlotView,
    ) -> Option<Vec<Digest>> {
        if (epoch, proposer) != (self.epoch, self.proposer) || from as usize >= self.n {
            return None;
        }
        self.views.insert(from, view);
        let empties = self
            .views
            .values()
            .filter(|v| **v == SlotView::Empty)
            .count();
        if empties > self.f {
            self.skipped += 1;
            self.step();
            return Some(Vec::new());
        }
        let mut filled: BTreeMap<&Vec<Digest>, usize> = BTreeMap::new();
        for v in self.views.values() {
            if let SlotView::Filled(hs) = v {
                *filled.entry(hs).or_default() += 1;
            }
        }
        let hit = filled
            .into_iter()
            .find(|(_, c)| *c > self.f)
            .map(|(hs, _)| hs.clone());
        if let Some(hs) = hit {
            self.step();
            return Some(hs);
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_to_cap() {
        let mut b = Backoff::new(10, 70);
        let d: Vec<u64> = (0..5).map(|_| b.next_delay()).collect();
        assert_eq!(d, vec![10, 20, 40, 70, 70]);
        assert_eq!(b.attempts(), 5);
    }

    #[test]
    fn slot_cursor_skips_after_f_plus_one_empty() {
        let mut c = SlotCursor::new(4, 1);
        assert_eq!(c.on_response(0, 0, 0, SlotView::Empty), None);
        // a stale or foreign reply does not count
        assert_eq!(c.on_response(1, 5, 0, SlotView::Empty), None);
        assert_eq!(c.on_response(1, 0, 0, SlotView::Empty), Some(vec![]));
        assert_eq!(c.position(), (0, 1));
        assert_eq!(c.skipped(), 1);
        let hs = vec![[1u8; 32]];
        assert_eq!(
            c.on_response(0, 0, 1, SlotView::Filled(vec![[9; 32]])),
            None
        );
        assert_eq!(c.on_response(1, 0, 1, SlotView::Filled(hs.clone())), None);
        assert_eq!(c.on_response(2, 0, 1, SlotView::Unknown), None);
        assert_eq!(
            c.on_response(3, 0, 1, SlotView::Filled(hs.clone())),
            Some(hs)
        );
        assert_eq!(c.position(), (0, 2));
        c.step();
        c.step();
        assert_eq!(c.position(), (1, 0));
    }

    #[test]
    fn attribute_list_policies() {
        let h = [3u8; 32];
        let te = AttributeList::Te {
            authorized: ["alice".to_string()].into(),
        };
        match te.to_policy(&h, 8).unwrap() {
            Policy::Te { label, .. } => assert_eq!(label, h.to_vec()),
            p => panic!("{p:?}"),
        }
        let all = AttributeList::Be {
            revoked: (0..8).collect(),
        };
        assert!(all
            .to_policy(&h, 8)
            .unwrap()
            .eligible_leaves()
            .unwrap()
            .is_empty());
        assert_eq!(
            AttributeList::Abe("A".into()).access_type(),
            AccessType::Abe
        );
    }
}
