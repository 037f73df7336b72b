//! Deterministic discrete-event simulation of a whole deployment: n
//! replicas, the ledger, the verifier, the KGC, owners and requesters, all
//! talking through encoded frames over a seeded asynchronous network.

pub mod adversary;
pub mod artifacts;
pub mod metrics;
pub mod properties;
pub mod scheduler;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bft::aba::SeededCoin;
use crate::bft::rbc::{Body, RbcMsg};
use crate::bft::replica::{Note, Output, Replica, TeContext};
use crate::bft::store::Store;
use crate::bft::tx::{decode_batch, encode_batch, Tx};
use crate::bft::ReplicaConfig;
use crate::client::{
    AttributeList, Backoff, ClientError, OwnerKeys, OwnerSession, OwnerState, Peers,
    RequesterProfile, RequesterSession, RequesterState,
};
use crate::crypto::be::SubtreeKeyTree;
use crate::crypto::pke::{PkePublicKey, PkeSecretKey};
use crate::crypto::te::{TePublicKey, TeSecretShare};
use crate::crypto::{sha256, AccessType, Digest};
use crate::kgc::{Credentials, Issued, Kgc, KgcError, SystemParams};
use crate::ledger::{Block, Ledger, Txid};
use crate::node::{Directory, KgcNode, LedgerNode, VerifierNode};
use crate::verifier::{AuditLog, Verifier, VerifierKeys};
use crate::wire::{Message, NodeId, ReadReply};

pub use adversary::{AdversarySpec, Behavior};
pub use metrics::Metrics;
pub use properties::Verdict;
use scheduler::{Policy as SchedPolicy, Scheduler};
use trace::{EventKind, Trace};

/// Requester that satisfies every default policy.
pub const GRANTED: &str = "alice";
/// Requester that satisfies none of them.
pub const REFUSED: &str = "mallory";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub n: usize,
    pub f: usize,
    /// Transactions per epoch across all replicas.
    pub batch: usize,
    /// Number of data owners.
    pub clients: usize,
    /// Plaintext bytes per write.
    pub size: usize,
    pub access: AccessType,
    pub adversary: String,
    /// Total writes.
    pub writes: usize,
    /// Every this many writes, both requesters try to read; 0 disables reads.
    pub read_every: usize,
    /// Writes in flight per owner.
    pub window: usize,
    pub group_size: usize,
    pub max_age: u64,
    pub fifo: bool,
    /// First retransmission delay in logical steps; doubles up to 16x.
    pub retry_base: u64,
    pub step_budget: u64,
    /// Keep delivery-level events in memory (they are always hashed).
    pub keep_deliveries: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            n: 4,
            f: 1,
            batch: 40,
            clients: 4,
            size: 250,
            access: AccessType::Be,
            adversary: "none".into(),
            writes: 1000,
            read_every: 10,
            window: 10,
            group_size: 8,
            max_age: 5_000,
            fifo: false,
            retry_base: 20_000,
            step_budget: 20_000_000,
            keep_deliveries: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("setup failed: {0}")]
    Setup(#[from] KgcError),
}

impl SimConfig {
    pub fn validate(&self) -> Result<AdversarySpec, SimError> {
        let bad = |s: String| Err(SimError::Config(s));
        if self.f == 0 && self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.n < 3 * self.f + 1 {
            return bad(format!("n={} is below 3f+1 for f={}", self.n, self.f));
        }
        if self.batch == 0 || self.clients == 0 || self.window == 0 {
            return bad("batch, clients and window must be positive".into());
        }
        if self.size < 8 {
            return bad("size must be at least 8 bytes".into());
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2".into());
        }
        let spec = AdversarySpec::parse(&self.adversary, self.n).map_err(SimError::Config)?;
        spec.validate(self.n, self.f).map_err(SimError::Config)?;
        Ok(spec)
    }

    /// The attribute list every owner writes under. `GRANTED` satisfies it,
    /// `REFUSED` does not.
    /// Whether write `idx` is followed by a read from each requester.
    pub fn reads_after(&self, idx: usize) -> bool {
        self.read_every != 0 && idx.is_multiple_of(self.read_every)
    }

    pub fn attribute_list(&self) -> AttributeList {
        match self.access {
            AccessType::Abe => AttributeList::Abe("dept_A AND role_analyst".into()),
            AccessType::Be => AttributeList::Be {
                revoked: [0].into(),
            },
            AccessType::Te => AttributeList::Te {
                authorized: [GRANTED.to_string()].into(),
            },
        }
    }
}

fn requester_creds(identity: &str) -> (BTreeSet<String>, usize) {
    if identity == GRANTED {
        (["dept_A".to_string(), "role_analyst".to_string()].into(), 1)
    } else {
        (["dept_B".to_string()].into(), 0)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RequesterStats {
    pub sessions: usize,
    pub delivered: usize,
    pub denied: usize,
    pub failed: usize,
    pub reads_sent: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Stats {
    pub writes_done: usize,
    pub writes_refused: usize,
    pub committed: usize,
    pub retries: u64,
    pub evidence: usize,
    pub forged: usize,
    pub rejected: usize,
    pub messages: u64,
    pub bytes: u64,
    pub dropped: u64,
    pub forced_deliveries: u64,
    pub max_age_seen: u64,
    pub requesters: BTreeMap<String, RequesterStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub config: SimConfig,
    pub trace_hash: String,
    pub trace_events: u64,
    pub stop_reason: String,
    pub completed: bool,
    pub steps: u64,
    pub logical_time: u64,
    pub verdicts: Vec<Verdict>,
    pub stats: Stats,
    pub metrics: Metrics,
}

impl ScenarioReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

/// Plain-text verdict table.
pub fn verdict_table(verdicts: &[Verdict]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:<6} detail", "property", "result");
    for v in verdicts {
        let _ = writeln!(
            s,
            "{:<16} {:<6} {}",
            v.name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    s
}

/// A finished run with everything needed to write its artifacts.
#[derive(Debug)]
pub struct Outcome {
    pub report: ScenarioReport,
    pub trace: Trace,
    pub chain: Vec<Block>,
    pub audit: Vec<crate::verifier::AuditEntry>,
    pub registry: Vec<crate::kgc::RegistryRecord>,
}

/// Everything a deployment holds after the one-time setup: registered
/// parties, issued keys and freshly initialised replicas.
pub struct Deployment {
    pub peers: Peers,
    pub kgc: Kgc,
    pub dir: Directory,
    pub ledger: Ledger,
    pub verifier_sk: PkeSecretKey,
    pub verifier_pk: PkePublicKey,
    pub te_pk: TePublicKey,
    pub te_shares: Vec<TeSecretShare>,
    pub replicas: Vec<Replica>,
    pub owners: Vec<OwnerKeys>,
    pub requesters: Vec<(NodeId, RequesterProfile)>,
}

impl Deployment {
    /// Node layout: replicas `0..n`, then ledger, verifier and KGC, then the
    /// owners, then the `GRANTED` and `REFUSED` requesters.
    pub fn new(cfg: &SimConfig) -> Result<Self, SimError> {
        let peers = Peers::standard(cfg.n, cfg.f);
        let mut setup_rng = rng_for(cfg.seed, "setup");
        let mut kgc = Kgc::setup(
            SystemParams {
                n: cfg.n,
                f: cfg.f,
                group_size: cfg.group_size,
                security_bits: 128,
            },
            &mut setup_rng,
        )?;
        let mut dir = Directory::default();

        let verifier_sk = match kgc.register("verifier", Credentials::Verifier, &mut setup_rng)? {
            Issued::Verifier { sk } => sk,
            _ => unreachable!("verifier registration issues a verifier key"),
        };
        dir.bind("verifier", peers.verifier);
        let pp = kgc.public_params();
        let verifier_pk = verifier_sk.public_key();

        let mut te_shares = Vec::with_capacity(cfg.n);
        for i in 0..cfg.n as u16 {
            match kgc.register(
                &format!("replica-{i}"),
                Credentials::Replica { index: i },
                &mut setup_rng,
            )? {
                Issued::Replica { share } => te_shares.push(share),
                _ => unreachable!("replica registration issues a share"),
            }
        }

        let first = peers.first_client();
        let mut owners = Vec::with_capacity(cfg.clients);
        let mut ledger = Ledger::new();
        for o in 0..cfg.clients {
            let node = first + o as NodeId;
            let id = format!("owner-{o}");
            let (origin, be_seed) =
                match kgc.register(&id, Credentials::Owner { node }, &mut setup_rng)? {
                    Issued::Owner { origin, be_seed } => (origin, be_seed),
                    _ => unreachable!("owner registration issues an origin key"),
                };
            dir.bind(&id, node);
            ledger.register_owner(id.clone());
            let be_tree =
                SubtreeKeyTree::build(cfg.group_size, &be_seed).map_err(KgcError::from)?;
            owners.push(OwnerKeys {
                owner_id: id,
                node,
                origin,
                abe: pp.abe.clone(),
                be_tree,
                te: pp.te.clone(),
                verifier: verifier_pk,
            });
        }

        let mut requesters = Vec::new();
        for (k, identity) in [GRANTED, REFUSED].into_iter().enumerate() {
            let node = first + (cfg.clients + k) as NodeId;
            let (attributes, leaf) = requester_creds(identity);
            let creds = Credentials::Requester {
                attributes: attributes.clone(),
                leaf: Some(leaf),
            };
            let leaf_keys = match kgc.register(identity, creds, &mut setup_rng)? {
                Issued::Requester { leaf_keys } => leaf_keys,
                _ => unreachable!("requester registration issues leaf keys"),
            };
            dir.bind(identity, node);
            requesters.push((
                node,
                RequesterProfile {
                    identity: identity.to_string(),
                    attributes,
                    leaf: Some(leaf),
                    leaf_keys,
                },
            ));
        }

        let coin = SeededCoin(sub_seed(cfg.seed, "coin"));
        let origins = kgc.origin_directory().clone();
        let mut replicas = Vec::with_capacity(cfg.n);
        for (i, share) in te_shares.iter().enumerate() {
            let rc = ReplicaConfig::new(cfg.n, cfg.f, i as u16, cfg.batch)
                .map_err(|e| SimError::Config(e.to_string()))?;
            let te = Some(TeContext {
                pk: pp.te.clone(),
                share: share.clone(),
            });
            let seed = u64::from_be_bytes(
                sub_seed(cfg.seed, &format!("replica-{i}"))[..8]
                    .try_into()
                    .expect("8 bytes"),
            );
            replicas.push(Replica::new(
                rc,
                origins.clone(),
                coin,
                te,
                Store::default(),
                seed,
            ));
        }
        Ok(Deployment {
            peers,
            kgc,
            dir,
            ledger,
            verifier_sk,
            verifier_pk,
            te_pk: pp.te,
            te_shares,
            replicas,
            owners,
            requesters,
        })
    }
}

enum Envelope {
    Msg {
        from: NodeId,
        to: NodeId,
        bytes: Vec<u8>,
    },
    Timer {
        node: NodeId,
        key: usize,
    },
}

struct OwnerNode {
    node: NodeId,
    keys: OwnerKeys,
    rng: ChaCha20Rng,
    queue: VecDeque<usize>,
    sessions: BTreeMap<usize, OwnerSession>,
    by_h: HashMap<Digest, usize>,
    by_txid: HashMap<Txid, usize>,
}

struct RequesterNode {
    node: NodeId,
    profile: RequesterProfile,
    rng: ChaCha20Rng,
    sessions: Vec<RequesterSession>,
    started: Vec<u64>,
    by_txid: HashMap<Txid, usize>,
    by_h: HashMap<Digest, Vec<usize>>,
}

struct World {
    cfg: SimConfig,
    spec: AdversarySpec,
    peers: Peers,
    al: AttributeList,
    sched: Scheduler<Envelope>,
    trace: Trace,
    replicas: Vec<Replica>,
    ledger: LedgerNode,
    verifier: VerifierNode,
    kgc: KgcNode<ChaCha20Rng>,
    owners: Vec<OwnerNode>,
    requesters: Vec<RequesterNode>,
    te_pk: TePublicKey,
    verifier_pk: PkePublicKey,
    adv_rng: ChaCha20Rng,
    in_flight: u64,
    outstanding_writes: usize,
    truth: HashMap<Txid, Digest>,
    write_of: HashMap<Digest, usize>,
    first_commit_seen: BTreeSet<Digest>,
    metrics: metrics::Collector,
    stats: Stats,
    epoch_reporter: Option<u16>,
}

pub(crate) fn sub_seed(seed: u64, label: &str) -> [u8; 32] {
    let mut b = seed.to_be_bytes().to_vec();
    b.extend_from_slice(label.as_bytes());
    sha256(&b)
}

pub(crate) fn rng_for(seed: u64, label: &str) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(sub_seed(seed, label))
}

/// Plaintext of write `idx`: its index followed by seeded random bytes, so
/// distinct writes never share a content hash.
pub(crate) fn make_message(idx: usize, size: usize, rng: &mut impl RngCore) -> Vec<u8> {
    let mut m = vec![0u8; size];
    m[..8].copy_from_slice(&(idx as u64).to_be_bytes());
    rng.fill_bytes(&mut m[8..]);
    m
}

impl World {
    fn build(cfg: SimConfig) -> Result<Self, SimError> {
        let spec = cfg.validate()?;
        let d = Deployment::new(&cfg)?;
        let peers = d.peers;
        let owners = d
            .owners
            .into_iter()
            .enumerate()
            .map(|(o, keys)| OwnerNode {
                node: keys.node,
                rng: rng_for(cfg.seed, &keys.owner_id),
                keys,
                queue: (o..cfg.writes).step_by(cfg.clients).collect(),
                sessions: BTreeMap::new(),
                by_h: HashMap::new(),
                by_txid: HashMap::new(),
            })
            .collect();
        let requesters = d
            .requesters
            .into_iter()
            .map(|(node, profile)| RequesterNode {
                node,
                rng: rng_for(cfg.seed, &profile.identity),
                profile,
                sessions: Vec::new(),
                started: Vec::new(),
                by_txid: HashMap::new(),
                by_h: HashMap::new(),
            })
            .collect();
        let (replicas, ledger, dir, kgc, vsk) = (d.replicas, d.ledger, d.dir, d.kgc, d.verifier_sk);
        let pp_te = d.te_pk;
        let verifier_pk = d.verifier_pk;

        let policy = if cfg.fifo {
            SchedPolicy::Fifo
        } else {
            SchedPolicy::Random {
                max_age: cfg.max_age,
            }
        };
        let sched_seed = u64::from_be_bytes(
            sub_seed(cfg.seed, "network")[..8]
                .try_into()
                .expect("8 bytes"),
        );
        let epoch_reporter = (0..cfg.n as u16).find(|r| !spec.is_corrupt(*r));
        let stats = Stats {
            requesters: [GRANTED, REFUSED]
                .iter()
                .map(|r| (r.to_string(), RequesterStats::default()))
                .collect(),
            ..Stats::default()
        };
        Ok(World {
            al: cfg.attribute_list(),
            spec,
            peers,
            sched: Scheduler::new(sched_seed, policy),
            trace: Trace::new(cfg.keep_deliveries),
            replicas,
            ledger: LedgerNode::new(ledger, dir.clone(), peers.verifier),
            verifier: VerifierNode::new(
                Verifier::new(VerifierKeys::new(vsk), AuditLog::in_memory()),
                dir.clone(),
                peers.ledger,
                peers.kgc,
            ),
            kgc: KgcNode::new(kgc, dir, peers.verifier, rng_for(cfg.seed, "kgc")),
            owners,
            requesters,
            te_pk: pp_te,
            verifier_pk,
            adv_rng: rng_for(cfg.seed, "adversary"),
            in_flight: 0,
            outstanding_writes: cfg.writes,
            truth: HashMap::new(),
            write_of: HashMap::new(),
            first_commit_seen: BTreeSet::new(),
            metrics: metrics::Collector::default(),
            stats,
            epoch_reporter,
            cfg,
        })
    }

    fn now(&self) -> u64 {
        self.sched.now()
    }

    fn event(&mut self, kind: EventKind) {
        let t = self.now();
        self.trace.push(t, kind);
    }

    fn send_after(&mut self, from: NodeId, to: NodeId, msg: &Message, delay: u64) {
        let bytes = msg.encode(from);
        self.in_flight += 1;
        self.sched
            .push_after(delay, Envelope::Msg { from, to, bytes });
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: &Message) {
        self.send_after(from, to, msg, 0);
    }

    fn send_all(&mut self, from: NodeId, out: Vec<(NodeId, Message)>) {
        for (to, m) in out {
            self.send(from, to, &m);
        }
    }

    fn timer(&mut self, node: NodeId, key: usize, delay: u64) {
        self.sched
            .push_after(delay.max(1), Envelope::Timer { node, key });
    }

    fn finished(&self) -> bool {
        self.outstanding_writes == 0
            && self.in_flight == 0
            && self
                .requesters
                .iter()
                .all(|r| r.sessions.iter().all(RequesterSession::is_finished))
    }

    fn run(&mut self) -> (bool, String) {
        for o in 0..self.owners.len() {
            for _ in 0..self.cfg.window {
                self.launch(o);
            }
        }
        loop {
            if self.finished() {
                return (true, "quiescent".into());
            }
            if self.sched.steps() >= self.cfg.step_budget {
                return (
                    false,
                    format!("step budget of {} exhausted", self.cfg.step_budget),
                );
            }
            match self.sched.pop() {
                None => return (false, "no pending events with sessions unfinished".into()),
                Some(Envelope::Msg { from, to, bytes }) => {
                    self.in_flight -= 1;
                    self.deliver(from, to, bytes);
                }
                Some(Envelope::Timer { node, key }) => self.fire(node, key),
            }
        }
    }

    fn deliver(&mut self, from: NodeId, to: NodeId, bytes: Vec<u8>) {
        let Ok((sender, msg)) = Message::decode(&bytes) else {
            return;
        };
        if sender != from {
            return;
        }
        let p = self.peers;
        if (to as usize) < p.n {
            if let Some(Behavior::Crash { at }) = self.spec.behavior(to) {
                if self.now() >= at {
                    self.stats.dropped += 1;
                    self.event(EventKind::Drop {
                        from,
                        to,
                        msg: msg.name(),
                    });
                    return;
                }
            }
        }
        self.stats.messages += 1;
        self.stats.bytes += bytes.len() as u64;
        self.event(EventKind::Deliver {
            from,
            to,
            msg: msg.name(),
            bytes: bytes.len(),
        });
        if (to as usize) < p.n {
            self.deliver_replica(to, from, msg);
        } else if to == p.ledger {
            let out = self.ledger.handle(from, msg);
            self.send_all(to, out);
        } else if to == p.verifier {
            let out = self.verifier.handle(from, msg);
            self.send_all(to, out);
        } else if to == p.kgc {
            let out = self.kgc.handle(from, msg);
            for (dst, m) in &out {
                let requester = self.kgc.dir.identity(*dst).unwrap_or("?").to_string();
                match m {
                    Message::KeyRelease { txid, .. } => self.event(EventKind::KeyRelease {
                        requester,
                        txid: *txid,
                    }),
                    Message::KeyDenied { txid } => self.event(EventKind::KeyDenied {
                        requester,
                        txid: *txid,
                    }),
                    _ => {}
                }
            }
            self.send_all(to, out);
        } else {
            let idx = (to - p.first_client()) as usize;
            if idx < self.owners.len() {
                self.deliver_owner(idx, from, msg);
            } else if let Some(r) = self
                .requesters
                .get(idx - self.owners.len())
                .map(|_| idx - self.owners.len())
            {
                self.deliver_requester(r, from, msg);
            }
        }
    }

    fn deliver_replica(&mut self, r: NodeId, from: NodeId, msg: Message) {
        let behavior = self.spec.behavior(r);
        if let (Some(Behavior::GarbageReads), Message::ReadReq { h }) = (behavior, &msg) {
            let mut junk = vec![0u8; 64];
            self.adv_rng.fill_bytes(&mut junk);
            let reply = match self.cfg.access {
                AccessType::Te => ReadReply::Te {
                    sigma: junk.clone(),
                    share: junk[..32].to_vec(),
                },
                _ => ReadReply::Sigma(junk),
            };
            self.send(r, from, &Message::ReadResp { h: *h, reply });
            return;
        }
        let outs = self.replicas[r as usize].handle(from, msg);
        let notes = self.replicas[r as usize].take_notes();
        for note in notes {
            self.note(r, note);
        }
        if behavior == Some(Behavior::Mute) {
            return;
        }
        for out in outs {
            match out {
                Output::Send(to, m) => self.replica_send(r, to, m, behavior),
                Output::Broadcast(m) => {
                    if behavior == Some(Behavior::Equivocate) {
                        if let Message::Rbc {
                            epoch,
                            proposer,
                            msg: RbcMsg::Init(Body::Full(p)),
                        } = &m
                        {
                            if *proposer == r {
                                self.equivocate(r, *epoch, p.clone());
                                continue;
                            }
                        }
                    }
                    for to in 0..self.cfg.n as NodeId {
                        if to != r {
                            self.replica_send(r, to, m.clone(), behavior);
                        }
                    }
                }
            }
        }
    }

    fn replica_send(&mut self, r: NodeId, to: NodeId, m: Message, behavior: Option<Behavior>) {
        let delay = match behavior {
            Some(Behavior::Delay { max }) if max > 0 => self.adv_rng.gen_range(1..=max),
            _ => 0,
        };
        self.send_after(r, to, &m, delay);
    }

    /// Half the replicas get the real proposal, the other half a batch with
    /// a forged-origin transaction appended. The forged one is also gossiped.
    fn equivocate(&mut self, r: NodeId, epoch: u64, payload: Vec<u8>) {
        let mut txs = decode_batch(&payload).unwrap_or_default();
        let mut h = [0u8; 32];
        self.adv_rng.fill_bytes(&mut h);
        let victim = self.owners[self.adv_rng.gen_range(0..self.owners.len())].node;
        let sigma = txs
            .first()
            .map(|t| t.sigma.clone())
            .unwrap_or_else(|| vec![0; 16]);
        let mut sig = [0u8; 64];
        self.adv_rng.fill_bytes(&mut sig);
        let forged = Tx {
            owner: victim,
            h,
            sigma,
            sig,
        };
        txs.push(forged.clone());
        let alt = encode_batch(&txs);
        self.stats.forged += 1;
        self.event(EventKind::Forged { by: r, h });
        let others: Vec<NodeId> = (0..self.cfg.n as NodeId).filter(|x| *x != r).collect();
        let half = others.len() / 2;
        for (k, to) in others.into_iter().enumerate() {
            let body = if k < half {
                payload.clone()
            } else {
                alt.clone()
            };
            let m = Message::Rbc {
                epoch,
                proposer: r,
                msg: RbcMsg::Init(Body::Full(body)),
            };
            self.send(r, to, &m);
            self.send(r, to, &Message::TxGossip(forged.clone()));
        }
    }

    fn note(&mut self, r: NodeId, note: Note) {
        let correct = !self.spec.is_corrupt(r);
        match note {
            Note::Admit { h, .. } => self.event(EventKind::Admit { replica: r, h }),
            Note::Reject { h, reason, .. } => {
                self.stats.rejected += 1;
                self.event(EventKind::Reject {
                    replica: r,
                    h,
                    reason: reason.to_string(),
                })
            }
            Note::Commit { epoch, slot, h, .. } => {
                if correct && self.first_commit_seen.insert(h) {
                    if let Some(idx) = self.write_of.get(&h) {
                        let now = self.now();
                        self.metrics.writes.entry(*idx).or_default().first_commit = Some(now);
                    }
                }
                if Some(r) == self.epoch_reporter {
                    self.stats.committed += 1;
                }
                self.event(EventKind::Commit {
                    replica: r,
                    epoch,
                    slot,
                    h,
                })
            }
            Note::Conflict { h } => self.event(EventKind::Conflict { replica: r, h }),
            Note::EpochCommitted { epoch, txs, .. } => {
                if Some(r) == self.epoch_reporter {
                    let now = self.now();
                    self.metrics.epoch(epoch, now, txs);
                }
                self.event(EventKind::EpochCommitted {
                    replica: r,
                    epoch,
                    txs,
                })
            }
            Note::Evidence(detail) => {
                if correct {
                    self.stats.evidence += 1;
                }
                self.event(EventKind::Evidence { replica: r, detail })
            }
            Note::CorruptStore { h } => self.event(EventKind::Evidence {
                replica: r,
                detail: format!("stored value for {} failed to decode", hex::encode(&h[..8])),
            }),
        }
    }

    fn launch(&mut self, o: usize) {
        while let Some(idx) = self.owners[o].queue.pop_front() {
            let owner = &mut self.owners[o];
            let m = make_message(idx, self.cfg.size, &mut owner.rng);
            let t0 = Instant::now();
            let res = OwnerSession::new(
                &m,
                &self.al,
                &owner.keys,
                self.peers,
                idx as u64,
                &mut owner.rng,
            );
            let us = t0.elapsed().as_secs_f64() * 1e6;
            let node = owner.node;
            match res {
                Err(e) => {
                    self.outstanding_writes -= 1;
                    self.stats.writes_refused += 1;
                    self.event(EventKind::WriteRefused {
                        owner: node,
                        reason: e.to_string(),
                    });
                    continue;
                }
                Ok(mut s) => {
                    s.backoff = Backoff::new(self.cfg.retry_base, self.cfg.retry_base * 16);
                    let delay = s.backoff.next_delay();
                    let out = s.start(&mut owner.rng);
                    let (h, at) = (s.h, s.at);
                    owner.by_h.insert(h, idx);
                    owner.sessions.insert(idx, s);
                    self.write_of.insert(h, idx);
                    let now = self.now();
                    let w = self.metrics.writes.entry(idx).or_default();
                    w.encrypt_us = us;
                    w.submitted = Some(now);
                    self.event(EventKind::Write { owner: node, h, at });
                    self.send_all(node, out);
                    self.timer(node, idx, delay);
                    return;
                }
            }
        }
    }

    fn deliver_owner(&mut self, o: usize, from: NodeId, msg: Message) {
        let owner = &self.owners[o];
        let idx = match &msg {
            Message::TxAck { h } => owner.by_h.get(h).copied(),
            Message::LedgerReceipt { nonce, .. } => Some(*nonce as usize),
            Message::DepositAck { txid } => owner.by_txid.get(txid).copied(),
            _ => None,
        };
        let Some(idx) = idx else { return };
        let Some(s) = self.owners[o].sessions.get_mut(&idx) else {
            return;
        };
        let before = s.state().clone();
        let out = s.on_message(from, &msg);
        let after = s.state().clone();
        let h = s.h;
        let node = self.owners[o].node;
        self.send_all(node, out);
        self.owner_progress(o, idx, h, before, after);
    }

    fn owner_progress(
        &mut self,
        o: usize,
        idx: usize,
        h: Digest,
        before: OwnerState,
        after: OwnerState,
    ) {
        if before == after {
            return;
        }
        let node = self.owners[o].node;
        let now = self.now();
        if matches!(before, OwnerState::Storing) {
            self.metrics.writes.entry(idx).or_default().acked = Some(now);
            self.event(EventKind::Acked { owner: node, h });
        }
        if let (
            OwnerState::Anchoring { .. },
            OwnerState::Depositing { txid } | OwnerState::Done { txid },
        ) = (&before, &after)
        {
            self.owners[o].by_txid.insert(*txid, idx);
            self.truth.insert(*txid, h);
            self.metrics.writes.entry(idx).or_default().anchored = Some(now);
            self.event(EventKind::Anchored {
                owner: node,
                h,
                txid: *txid,
            });
        }
        if let OwnerState::Done { txid } = after {
            self.metrics.writes.entry(idx).or_default().done = Some(now);
            self.owners[o].sessions.remove(&idx);
            self.outstanding_writes -= 1;
            self.stats.writes_done += 1;
            if self.cfg.reads_after(idx) {
                let at = self.cfg.access;
                for r in 0..self.requesters.len() {
                    let to = self.requesters[r].node;
                    self.send(node, to, &Message::ShareTxid { txid, at });
                }
            }
            self.launch(o);
        }
    }

    fn deliver_requester(&mut self, r: usize, from: NodeId, msg: Message) {
        let req = &mut self.requesters[r];
        let node = req.node;
        let idx = match &msg {
            Message::ShareTxid { txid, .. } => {
                if req.by_txid.contains_key(txid) {
                    return;
                }
                let mut s = RequesterSession::new(
                    *txid,
                    req.profile.clone(),
                    self.peers,
                    self.te_pk.clone(),
                    self.verifier_pk,
                );
                s.backoff = Backoff::new(self.cfg.retry_base, self.cfg.retry_base * 16);
                let delay = s.backoff.next_delay();
                let out = s.start();
                let k = req.sessions.len();
                req.by_txid.insert(*txid, k);
                req.sessions.push(s);
                req.started.push(self.sched.now());
                let id = req.profile.identity.clone();
                self.stats.requesters.entry(id).or_default().sessions += 1;
                self.send_all(node, out);
                self.timer(node, k, delay);
                return;
            }
            Message::LedgerRecord { txid, .. }
            | Message::KeyRelease { txid, .. }
            | Message::KeyDenied { txid } => req.by_txid.get(txid).copied(),
            Message::ReadResp { h, .. } => {
                // one reply may serve several sessions reading the same h
                let ks = req.by_h.get(h).cloned().unwrap_or_default();
                for k in ks {
                    self.requester_step(r, k, |s, rng| s.on_message(from, msg.clone(), rng));
                }
                return;
            }
            _ => None,
        };
        if let Some(k) = idx {
            self.requester_step(r, k, |s, rng| s.on_message(from, msg, rng));
        }
    }

    fn requester_step(
        &mut self,
        r: usize,
        k: usize,
        step: impl FnOnce(&mut RequesterSession, &mut ChaCha20Rng) -> Vec<(NodeId, Message)>,
    ) {
        let req = &mut self.requesters[r];
        let node = req.node;
        let s = &mut req.sessions[k];
        let before = s.state().clone();
        let out = step(s, &mut req.rng);
        let after = s.state().clone();
        let txid = s.txid;
        let identity = req.profile.identity.clone();
        if let (RequesterState::Verifying { .. }, RequesterState::Reading { h, .. }) =
            (&before, &after)
        {
            req.by_h.entry(*h).or_default().push(k);
        }
        let delivered = (before != after && after == RequesterState::Delivered)
            .then(|| sha256(s.delivered().unwrap_or_default()));
        let started = req.started[k];
        for (to, m) in &out {
            if matches!(m, Message::ReadReq { .. }) {
                self.stats
                    .requesters
                    .entry(identity.clone())
                    .or_default()
                    .reads_sent += 1;
                self.event(EventKind::ReadSent {
                    requester: identity.clone(),
                    txid,
                    to: *to,
                });
            }
        }
        self.send_all(node, out);
        if before == after {
            return;
        }
        let now = self.now();
        match after {
            RequesterState::Delivered => {
                let ok = delivered == self.truth.get(&txid).copied();
                self.metrics.reads.push((started, now));
                self.stats
                    .requesters
                    .entry(identity.clone())
                    .or_default()
                    .delivered += 1;
                self.event(EventKind::Delivered {
                    requester: identity,
                    txid,
                    ok,
                });
            }
            RequesterState::Failed(e) => {
                let st = self.stats.requesters.entry(identity.clone()).or_default();
                if e == ClientError::AccessDenied {
                    st.denied += 1;
                } else {
                    st.failed += 1;
                }
                self.event(EventKind::ReadFailed {
                    requester: identity,
                    txid,
                    reason: e.to_string(),
                });
            }
            _ => {}
        }
    }

    fn fire(&mut self, node: NodeId, key: usize) {
        let idx = (node - self.peers.first_client()) as usize;
        if idx < self.owners.len() {
            let owner = &mut self.owners[idx];
            let Some(s) = owner.sessions.get_mut(&key) else {
                return;
            };
            if s.is_done() {
                return;
            }
            let out = s.on_timer(&mut owner.rng);
            let delay = s.backoff.next_delay();
            self.stats.retries += 1;
            self.event(EventKind::Timer { node });
            self.send_all(node, out);
            self.timer(node, key, delay);
        } else {
            let r = idx - self.owners.len();
            let s = &mut self.requesters[r].sessions[key];
            if s.is_finished() {
                return;
            }
            let delay = s.backoff.next_delay();
            self.stats.retries += 1;
            self.event(EventKind::Timer { node });
            self.requester_step(r, key, |s, _| s.on_timer());
            self.timer(node, key, delay);
        }
    }

    fn finish(mut self, completed: bool, stop_reason: String) -> Outcome {
        let correct: BTreeSet<u16> = (0..self.cfg.n as u16)
            .filter(|r| !self.spec.is_corrupt(*r))
            .collect();
        let facts = properties::Facts {
            correct,
            completed,
            stop_reason: stop_reason.clone(),
        };
        let verdicts = properties::check_all(self.trace.events(), &facts);
        self.stats.forced_deliveries = self.sched.forced();
        self.stats.max_age_seen = self.sched.max_age_seen();
        let report = ScenarioReport {
            trace_hash: self.trace.hash_hex(),
            trace_events: self.trace.len(),
            stop_reason,
            completed,
            steps: self.sched.steps(),
            logical_time: self.sched.now(),
            verdicts,
            metrics: self.metrics.finish(self.sched.now()),
            stats: self.stats,
            config: self.cfg,
        };
        Outcome {
            report,
            trace: self.trace,
            chain: self.ledger.ledger.blocks().to_vec(),
            audit: self.verifier.verifier.audit().entries().to_vec(),
            registry: self.kgc.kgc.registry().cloned().collect(),
        }
    }
}

/// Runs one scenario to quiescence (or until it provably cannot finish).
pub fn run(cfg: SimConfig) -> Result<Outcome, SimError> {
    let mut world = World::build(cfg)?;
    let (completed, reason) = world.run();
    Ok(world.finish(completed, reason))
}

/// Re-runs a saved configuration and reports whether the trace hash matches.
pub fn replay(cfg: SimConfig, expected_hash: &str) -> Result<(bool, Outcome), SimError> {
    let out = run(cfg)?;
    Ok((out.report.trace_hash == expected_hash, out))
}
