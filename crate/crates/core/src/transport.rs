//! Loopback TCP deployment: every party runs on its own thread behind its
//! own listener and speaks framed messages over real sockets.
//!
//! Replicas are configured from a JSON cluster file and load their
//! threshold key shares from key files, so the same layout works across
//! processes. Timing is wall-clock and therefore not reproducible; the
//! acceptance suite uses the simulator instead.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bft::aba::SeededCoin;
use crate::bft::replica::{Output, Replica, TeContext};
use crate::bft::store::{FileLog, Store};
use crate::bft::ReplicaConfig;
use crate::client::{
    AttributeList, Backoff, ClientError, OwnerKeys, OwnerSession, Peers, RequesterProfile,
    RequesterSession, RequesterState,
};
use crate::crypto::keyfile::KeyFile;
use crate::crypto::pke::PkePublicKey;
use crate::crypto::te::TePublicKey;
use crate::crypto::{CryptoError, Digest};
use crate::ledger::{Ledger, Txid};
use crate::node::{KgcNode, LedgerNode, VerifierNode};
use crate::sim::{
    make_message, rng_for, sub_seed, AdversarySpec, Behavior, Deployment, RequesterStats,
    SimConfig, SimError,
};
use crate::verifier::{AuditLog, Verifier, VerifierKeys};
use crate::wire::{read_frame, write_frame, Message, NodeId};

pub const CLUSTER_FILE: &str = "cluster.json";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaEntry {
    pub id: u16,
    pub listen: String,
    pub share_key: PathBuf,
    pub store: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyEntry {
    pub node: NodeId,
    pub identity: String,
    pub listen: String,
}

/// Replica config file: n, f, B, listen addresses and key file paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n: usize,
    pub f: usize,
    pub batch: usize,
    pub te_public_key: PathBuf,
    pub verifier_public_key: PathBuf,
    pub chain: PathBuf,
    pub audit_log: PathBuf,
    pub replicas: Vec<ReplicaEntry>,
    /// Ledger, verifier, KGC and clients, by node id.
    pub parties: Vec<PartyEntry>,
}

impl ClusterConfig {
    pub fn load(path: &Path) -> io::Result<Self> {
        serde_json::from_slice(&fs::read(path)?).map_err(io::Error::from)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)
    }

    fn addresses(&self) -> io::Result<Vec<SocketAddr>> {
        let mut all: BTreeMap<NodeId, &str> = self
            .replicas
            .iter()
            .map(|r| (r.id, r.listen.as_str()))
            .collect();
        all.extend(self.parties.iter().map(|p| (p.node, p.listen.as_str())));
        all.values()
            .map(|a| {
                a.parse()
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, format!("{a}: {e}")))
            })
            .collect()
    }
}

type Inbox = Receiver<(NodeId, Message)>;

/// Outbound side of one node: lazily opened connections to peers.
struct Net {
    me: NodeId,
    addrs: Arc<Vec<SocketAddr>>,
    conns: HashMap<NodeId, BufWriter<TcpStream>>,
}

impl Net {
    fn new(me: NodeId, addrs: Arc<Vec<SocketAddr>>) -> Self {
        Net {
            me,
            addrs,
            conns: HashMap::new(),
        }
    }

    fn send(&mut self, to: NodeId, msg: &Message) {
        let frame = msg.to_frame(self.me);
        for _ in 0..2 {
            if !self.conns.contains_key(&to) {
                let Some(addr) = self.addrs.get(to as usize) else {
                    return;
                };
                match TcpStream::connect(addr) {
                    Ok(s) => {
                        let _ = s.set_nodelay(true);
                        self.conns.insert(to, BufWriter::new(s));
                    }
                    Err(_) => return,
                }
            }
            let w = self.conns.get_mut(&to).expect("just connected");
            if write_frame(w, &frame).and_then(|_| w.flush()).is_ok() {
                return;
            }
            // stale connection; reconnect once
            self.conns.remove(&to);
        }
    }

    fn send_all(&mut self, out: Vec<(NodeId, Message)>) {
        for (to, m) in out {
            self.send(to, &m);
        }
    }
}

/// Accepts connections and feeds decoded frames into the node's inbox.
fn listen(
    listener: TcpListener,
    tx: Sender<(NodeId, Message)>,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    thread::spawn(move || {
        for stream in listener.incoming() {
            if stop.load(Ordering::Relaxed) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let tx = tx.clone();
            thread::spawn(move || {
                let mut r = BufReader::new(stream);
                while let Ok(Some(frame)) = read_frame(&mut r) {
                    let Ok(msg) = Message::from_frame(&frame) else {
                        continue;
                    };
                    if tx.send((frame.sender, msg)).is_err() {
                        break;
                    }
                }
            });
        }
    })
}

const POLL: Duration = Duration::from_millis(20);

fn serve<S, T>(
    mut state: S,
    inbox: Inbox,
    mut net: Net,
    stop: Arc<AtomicBool>,
    mut handle: impl FnMut(&mut S, NodeId, Message, &mut Net),
    done: impl FnOnce(S) -> T,
) -> T {
    while !stop.load(Ordering::Relaxed) {
        match inbox.recv_timeout(POLL) {
            Ok((from, msg)) => handle(&mut state, from, msg, &mut net),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    done(state)
}

#[derive(Debug, Default)]
struct Progress {
    writes_done: usize,
    writes_refused: usize,
    shared: BTreeMap<String, usize>,
    requesters: BTreeMap<String, RequesterStats>,
}

impl Progress {
    fn complete(&self, writes: usize) -> bool {
        self.writes_done + self.writes_refused == writes
            && self.shared.iter().all(|(who, n)| {
                let s = self.requesters.get(who).cloned().unwrap_or_default();
                s.delivered + s.denied + s.failed == *n
            })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TcpReport {
    pub writes_total: usize,
    pub writes_done: usize,
    pub writes_refused: usize,
    pub wall_ms: f64,
    pub timed_out: bool,
    /// Committed entries per running replica.
    pub committed: BTreeMap<u16, usize>,
    /// Running replicas hold prefix-consistent commit sequences of equal length.
    pub agreement: bool,
    pub chain_height: u64,
    pub requesters: BTreeMap<String, RequesterStats>,
}

impl TcpReport {
    pub fn ok(&self) -> bool {
        let g = self
            .requesters
            .get(crate::sim::GRANTED)
            .cloned()
            .unwrap_or_default();
        let r = self
            .requesters
            .get(crate::sim::REFUSED)
            .cloned()
            .unwrap_or_default();
        !self.timed_out
            && self.agreement
            && self.writes_done + self.writes_refused == self.writes_total
            && g.delivered == g.sessions
            && r.denied == r.sessions
            && r.reads_sent == 0
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "writes {}/{} in {:.0} ms{}\n",
            self.writes_done,
            self.writes_total,
            self.wall_ms,
            if self.timed_out { " (timed out)" } else { "" }
        );
        for (r, c) in &self.committed {
            s.push_str(&format!("replica {r}: {c} committed\n"));
        }
        s.push_str(&format!(
            "agreement: {}\nchain height: {}\n",
            if self.agreement { "PASS" } else { "FAIL" },
            self.chain_height
        ));
        for (who, st) in &self.requesters {
            s.push_str(&format!(
                "{who:<8} sessions {}  delivered {}  denied {}  failed {}  reads {}\n",
                st.sessions, st.delivered, st.denied, st.failed, st.reads_sent
            ));
        }
        s
    }
}

/// Writes key files and the cluster file for `d` into `dir`, binding every
/// party to a loopback port. Returns the config and the bound listeners.
fn provision(
    cfg: &SimConfig,
    d: &Deployment,
    dir: &Path,
) -> Result<(ClusterConfig, Vec<TcpListener>), TransportError> {
    let keys = dir.join("keys");
    fs::create_dir_all(&keys)?;
    let total = d
        .requesters
        .last()
        .map_or(d.peers.first_client() as usize, |(n, _)| *n as usize + 1);
    let listeners: Vec<TcpListener> = (0..total)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<io::Result<_>>()?;
    let addr = |i: usize| listeners[i].local_addr().map(|a| a.to_string());

    let te_pub = keys.join("te.pub.fack");
    KeyFile::TePublic(d.te_pk.clone()).write_to(&te_pub)?;
    let ver_pub = keys.join("verifier.pub.fack");
    KeyFile::PkePublic(d.verifier_pk).write_to(&ver_pub)?;
    KeyFile::PkeSecret(d.verifier_sk.clone()).write_to(&keys.join("verifier.sk.fack"))?;
    KeyFile::AbePublic(d.kgc.public_params().abe).write_to(&keys.join("abe.pub.fack"))?;
    for (_, p) in &d.requesters {
        if let Some(lk) = &p.leaf_keys {
            KeyFile::BeLeaf(lk.clone())
                .write_to(&keys.join(format!("{}.leaf.fack", p.identity)))?;
        }
    }
    let mut replicas = Vec::with_capacity(cfg.n);
    for (i, share) in d.te_shares.iter().enumerate() {
        let path = keys.join(format!("replica-{i}.share.fack"));
        KeyFile::TeShare(share.clone()).write_to(&path)?;
        replicas.push(ReplicaEntry {
            id: i as u16,
            listen: addr(i)?,
            share_key: path,
            store: dir.join(format!("replica-{i}.log")),
        });
    }
    let p = d.peers;
    let mut parties = vec![
        PartyEntry {
            node: p.ledger,
            identity: "ledger".into(),
            listen: addr(p.ledger as usize)?,
        },
        PartyEntry {
            node: p.verifier,
            identity: "verifier".into(),
            listen: addr(p.verifier as usize)?,
        },
        PartyEntry {
            node: p.kgc,
            identity: "kgc".into(),
            listen: addr(p.kgc as usize)?,
        },
    ];
    for o in &d.owners {
        parties.push(PartyEntry {
            node: o.node,
            identity: o.owner_id.clone(),
            listen: addr(o.node as usize)?,
        });
    }
    for (node, prof) in &d.requesters {
        parties.push(PartyEntry {
            node: *node,
            identity: prof.identity.clone(),
            listen: addr(*node as usize)?,
        });
    }
    let cluster = ClusterConfig {
        n: cfg.n,
        f: cfg.f,
        batch: cfg.batch,
        te_public_key: te_pub,
        verifier_public_key: ver_pub,
        chain: dir.join("chain.bin"),
        audit_log: dir.join("audit.log"),
        replicas,
        parties,
    };
    cluster.save(&dir.join(CLUSTER_FILE))?;
    Ok((cluster, listeners))
}

fn load_te(cluster: &ClusterConfig, entry: &ReplicaEntry) -> Result<TeContext, TransportError> {
    let bad =
        |what: &str| TransportError::Unsupported(format!("{what} key file has the wrong kind"));
    let pk = match KeyFile::read_from(&cluster.te_public_key)?? {
        KeyFile::TePublic(pk) => pk,
        _ => return Err(bad("TE public")),
    };
    let share = match KeyFile::read_from(&entry.share_key)?? {
        KeyFile::TeShare(s) => s,
        _ => return Err(bad("TE share")),
    };
    Ok(TeContext { pk, share })
}

fn fresh(path: &Path) -> io::Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

struct OwnerCtx {
    keys: OwnerKeys,
    queue: VecDeque<usize>,
    al: AttributeList,
    peers: Peers,
    readers: Vec<(NodeId, String)>,
}

fn run_owner(
    cfg: SimConfig,
    ctx: OwnerCtx,
    inbox: Inbox,
    mut net: Net,
    stop: Arc<AtomicBool>,
    progress: Arc<Mutex<Progress>>,
) {
    let mut rng = rng_for(cfg.seed, &ctx.keys.owner_id);
    let mut queue = ctx.queue;
    let mut sessions: BTreeMap<usize, (OwnerSession, Instant)> = BTreeMap::new();
    let mut by_h: HashMap<Digest, usize> = HashMap::new();
    let mut by_txid: HashMap<Txid, usize> = HashMap::new();
    let retry = Duration::from_millis(cfg.retry_base.clamp(50, 2_000));
    while !stop.load(Ordering::Relaxed) {
        while sessions.len() < cfg.window {
            let Some(idx) = queue.pop_front() else { break };
            let m = make_message(idx, cfg.size, &mut rng);
            match OwnerSession::new(&m, &ctx.al, &ctx.keys, ctx.peers, idx as u64, &mut rng) {
                Ok(mut s) => {
                    s.backoff =
                        Backoff::new(retry.as_millis() as u64, retry.as_millis() as u64 * 16);
                    let out = s.start(&mut rng);
                    net.send_all(out);
                    by_h.insert(s.h, idx);
                    let due = Instant::now() + Duration::from_millis(s.backoff.next_delay());
                    sessions.insert(idx, (s, due));
                }
                Err(_) => progress.lock().expect("progress lock").writes_refused += 1,
            }
        }
        if sessions.is_empty() && queue.is_empty() {
            break;
        }
        match inbox.recv_timeout(POLL) {
            Ok((from, msg)) => {
                let idx = match &msg {
                    Message::TxAck { h } => by_h.get(h).copied(),
                    Message::LedgerReceipt { nonce, .. } => Some(*nonce as usize),
                    Message::DepositAck { txid } => by_txid.get(txid).copied(),
                    _ => None,
                };
                let Some((s, _)) = idx.and_then(|i| sessions.get_mut(&i)) else {
                    continue;
                };
                let idx = idx.expect("matched above");
                let out = s.on_message(from, &msg);
                net.send_all(out);
                if let Some(t) = s.txid() {
                    by_txid.insert(t, idx);
                }
                if s.is_done() {
                    let txid = s.txid().expect("done implies txid");
                    sessions.remove(&idx);
                    let mut p = progress.lock().expect("progress lock");
                    p.writes_done += 1;
                    if cfg.reads_after(idx) {
                        for (node, who) in &ctx.readers {
                            *p.shared.entry(who.clone()).or_default() += 1;
                            net.send(
                                *node,
                                &Message::ShareTxid {
                                    txid,
                                    at: cfg.access,
                                },
                            );
                        }
                    }
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        let now = Instant::now();
        for (s, due) in sessions.values_mut() {
            if *due <= now {
                let out = s.on_timer(&mut rng);
                net.send_all(out);
                *due = now + Duration::from_millis(s.backoff.next_delay());
            }
        }
    }
}

struct RequesterCtx {
    profile: RequesterProfile,
    peers: Peers,
    te_pk: TePublicKey,
    verifier_pk: PkePublicKey,
}

fn run_requester(
    cfg: SimConfig,
    ctx: RequesterCtx,
    inbox: Inbox,
    mut net: Net,
    stop: Arc<AtomicBool>,
    progress: Arc<Mutex<Progress>>,
) {
    let who = ctx.profile.identity.clone();
    let mut rng = rng_for(cfg.seed, &who);
    let mut sessions: Vec<(RequesterSession, Instant, bool)> = Vec::new();
    let mut by_txid: HashMap<Txid, usize> = HashMap::new();
    let retry = cfg.retry_base.clamp(50, 2_000);
    let count_reads = |out: &[(NodeId, Message)], progress: &Mutex<Progress>| {
        let reads = out
            .iter()
            .filter(|(_, m)| matches!(m, Message::ReadReq { .. }))
            .count() as u64;
        if reads > 0 {
            progress
                .lock()
                .expect("progress lock")
                .requesters
                .entry(who.clone())
                .or_default()
                .reads_sent += reads;
        }
    };
    while !stop.load(Ordering::Relaxed) {
        match inbox.recv_timeout(POLL) {
            Ok((_, Message::ShareTxid { txid, .. })) if !by_txid.contains_key(&txid) => {
                let mut s = RequesterSession::new(
                    txid,
                    ctx.profile.clone(),
                    ctx.peers,
                    ctx.te_pk.clone(),
                    ctx.verifier_pk,
                );
                s.backoff = Backoff::new(retry, retry * 16);
                net.send_all(s.start());
                let due = Instant::now() + Duration::from_millis(s.backoff.next_delay());
                by_txid.insert(txid, sessions.len());
                sessions.push((s, due, false));
                progress
                    .lock()
                    .expect("progress lock")
                    .requesters
                    .entry(who.clone())
                    .or_default()
                    .sessions += 1;
            }
            Ok((from, msg)) => {
                let k = match &msg {
                    Message::LedgerRecord { txid, .. } | Message::KeyRelease { txid, .. } | Message::KeyDenied { txid } => by_txid.get(txid).copied(),
                    Message::ReadResp { h, .. } => sessions
                        .iter()
                        .position(|(s, _, _)| matches!(s.state(), RequesterState::Reading { h: sh, .. } if sh == h)),
                    _ => None,
                };
                if let Some(k) = k {
                    let out = sessions[k].0.on_message(from, msg, &mut rng);
                    count_reads(&out, &progress);
                    net.send_all(out);
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        let now = Instant::now();
        for (s, due, counted) in sessions.iter_mut() {
            if !s.is_finished() && *due <= now {
                let out = s.on_timer();
                count_reads(&out, &progress);
                net.send_all(out);
                *due = now + Duration::from_millis(s.backoff.next_delay());
            }
            if s.is_finished() && !*counted {
                *counted = true;
                let mut p = progress.lock().expect("progress lock");
                let st = p.requesters.entry(who.clone()).or_default();
                match s.state() {
                    RequesterState::Delivered => st.delivered += 1,
                    RequesterState::Failed(ClientError::AccessDenied) => st.denied += 1,
                    _ => st.failed += 1,
                }
            }
        }
    }
}

/// Runs `cfg` over loopback sockets, leaving the cluster file, key files,
/// replica logs, chain and audit log in `dir`.
pub fn run(cfg: &SimConfig, dir: &Path) -> Result<TcpReport, TransportError> {
    let spec: AdversarySpec = cfg.validate()?;
    let mut skip = BTreeMap::new();
    for (r, b) in &spec.corrupt {
        match b {
            Behavior::Crash { .. } | Behavior::Mute => {
                skip.insert(*r, *b);
            }
            other => {
                return Err(TransportError::Unsupported(format!(
                    "`{other}` is only available in the simulator"
                )))
            }
        }
    }
    fs::create_dir_all(dir)?;
    let d = Deployment::new(cfg)?;
    let (cluster, listeners) = provision(cfg, &d, dir)?;
    let addrs = Arc::new(cluster.addresses()?);
    let stop = Arc::new(AtomicBool::new(false));
    let progress = Arc::new(Mutex::new(Progress::default()));
    let mut inboxes = Vec::new();
    let mut acceptors = Vec::new();
    for l in listeners {
        let (tx, rx) = mpsc::channel();
        acceptors.push(listen(l, tx, stop.clone()));
        inboxes.push(Some(rx));
    }
    let mut take = |node: NodeId| inboxes[node as usize].take().expect("one inbox per node");

    // replicas, rebuilt from the cluster file and key files
    let coin = SeededCoin(sub_seed(cfg.seed, "coin"));
    let origins = d.kgc.origin_directory().clone();
    let mut replica_threads = Vec::new();
    for entry in &cluster.replicas {
        let id = entry.id;
        let inbox = take(id);
        if matches!(skip.get(&id), Some(Behavior::Crash { .. })) {
            continue;
        }
        let te = load_te(&cluster, entry)?;
        fresh(&entry.store)?;
        let store = Store::open(Box::new(FileLog::open(&entry.store)?))
            .map_err(|e| TransportError::Unsupported(e.to_string()))?;
        let rc = ReplicaConfig::new(cluster.n, cluster.f, id, cluster.batch)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let seed = u64::from_be_bytes(
            sub_seed(cfg.seed, &format!("replica-{id}"))[..8]
                .try_into()
                .expect("8 bytes"),
        );
        let replica = Replica::new(rc, origins.clone(), coin, Some(te), store, seed);
        let mute = skip.get(&id) == Some(&Behavior::Mute);
        let n = cluster.n as NodeId;
        let net = Net::new(id, addrs.clone());
        let stop = stop.clone();
        replica_threads.push(thread::spawn(move || {
            serve(
                replica,
                inbox,
                net,
                stop,
                |replica, from, msg, net| {
                    let outs = replica.handle(from, msg);
                    replica.take_notes();
                    if mute {
                        return;
                    }
                    for o in outs {
                        match o {
                            Output::Send(to, m) => net.send(to, &m),
                            Output::Broadcast(m) => {
                                for to in (0..n).filter(|t| *t != id) {
                                    net.send(to, &m);
                                }
                            }
                        }
                    }
                },
                |replica| (id, mute, replica.committed().to_vec()),
            )
        }));
    }

    let p = d.peers;
    let mut ledger = {
        fresh(&cluster.chain)?;
        Ledger::open(&cluster.chain).map_err(|e| TransportError::Unsupported(e.to_string()))?
    };
    for o in &d.owners {
        ledger.register_owner(o.owner_id.clone());
    }
    let ledger_node = LedgerNode::new(ledger, d.dir.clone(), p.verifier);
    let ledger_thread = {
        let (inbox, net, stop) = (
            take(p.ledger),
            Net::new(p.ledger, addrs.clone()),
            stop.clone(),
        );
        thread::spawn(move || {
            serve(
                ledger_node,
                inbox,
                net,
                stop,
                |l, from, msg, net| net.send_all(l.handle(from, msg)),
                |l| l.ledger.height(),
            )
        })
    };
    fresh(&cluster.audit_log)?;
    let verifier_node = VerifierNode::new(
        Verifier::new(
            VerifierKeys::new(d.verifier_sk.clone()),
            AuditLog::open(&cluster.audit_log)?,
        ),
        d.dir.clone(),
        p.ledger,
        p.kgc,
    );
    let verifier_thread = {
        let (inbox, net, stop) = (
            take(p.verifier),
            Net::new(p.verifier, addrs.clone()),
            stop.clone(),
        );
        thread::spawn(move || {
            serve(
                verifier_node,
                inbox,
                net,
                stop,
                |x, from, msg, net| net.send_all(x.handle(from, msg)),
                |_| (),
            )
        })
    };
    let kgc_node = KgcNode::new(d.kgc, d.dir.clone(), p.verifier, rng_for(cfg.seed, "kgc"));
    let kgc_thread = {
        let (inbox, net, stop) = (take(p.kgc), Net::new(p.kgc, addrs.clone()), stop.clone());
        thread::spawn(move || {
            serve(
                kgc_node,
                inbox,
                net,
                stop,
                |x, from, msg, net| net.send_all(x.handle(from, msg)),
                |_| (),
            )
        })
    };

    let started = Instant::now();
    let readers: Vec<(NodeId, String)> = d
        .requesters
        .iter()
        .map(|(n, p)| (*n, p.identity.clone()))
        .collect();
    let mut clients = Vec::new();
    for (o, keys) in d.owners.into_iter().enumerate() {
        let ctx = OwnerCtx {
            queue: (o..cfg.writes).step_by(cfg.clients).collect(),
            keys,
            al: cfg.attribute_list(),
            peers: p,
            readers: readers.clone(),
        };
        let node = ctx.keys.node;
        let (inbox, net, stop, progress, cfg) = (
            take(node),
            Net::new(node, addrs.clone()),
            stop.clone(),
            progress.clone(),
            cfg.clone(),
        );
        clients.push(thread::spawn(move || {
            run_owner(cfg, ctx, inbox, net, stop, progress)
        }));
    }
    for (node, profile) in d.requesters {
        let ctx = RequesterCtx {
            profile,
            peers: p,
            te_pk: d.te_pk.clone(),
            verifier_pk: d.verifier_pk,
        };
        let (inbox, net, stop, progress, cfg) = (
            take(node),
            Net::new(node, addrs.clone()),
            stop.clone(),
            progress.clone(),
            cfg.clone(),
        );
        clients.push(thread::spawn(move || {
            run_requester(cfg, ctx, inbox, net, stop, progress)
        }));
    }

    let deadline = started + Duration::from_secs(30 + cfg.writes as u64 / 5);
    let timed_out = loop {
        if progress.lock().expect("progress lock").complete(cfg.writes) {
            break false;
        }
        if Instant::now() >= deadline {
            break true;
        }
        thread::sleep(POLL);
    };
    // give replicas a moment to finish the epochs already under way
    thread::sleep(Duration::from_millis(200));
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    stop.store(true, Ordering::Relaxed);
    for a in addrs.iter() {
        // wakes blocked accept loops
        let _ = TcpStream::connect(a);
    }
    for c in clients {
        let _ = c.join();
    }
    let mut seqs = BTreeMap::new();
    for t in replica_threads {
        if let Ok((id, mute, seq)) = t.join() {
            if !mute {
                seqs.insert(id, seq);
            }
        }
    }
    let chain_height = ledger_thread.join().unwrap_or(0);
    let _ = verifier_thread.join();
    let _ = kgc_thread.join();
    for a in acceptors {
        let _ = a.join();
    }

    let agreement = {
        let v: Vec<&Vec<Digest>> = seqs.values().collect();
        v.windows(2).all(|w| w[0] == w[1])
    };
    let p = progress.lock().expect("progress lock");
    Ok(TcpReport {
        writes_total: cfg.writes,
        writes_done: p.writes_done,
        writes_refused: p.writes_refused,
        wall_ms,
        timed_out,
        committed: seqs.iter().map(|(r, s)| (*r, s.len())).collect(),
        agreement,
        chain_height,
        requesters: p.requesters.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::AccessType;

    #[test]
    fn small_cluster_over_loopback() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig {
            writes: 12,
            read_every: 4,
            retry_base: 200,
            access: AccessType::Te,
            ..SimConfig::default()
        };
        let rep = run(&cfg, dir.path()).unwrap();
        assert!(rep.ok(), "{}", rep.table());
        let cluster = ClusterConfig::load(&dir.path().join(CLUSTER_FILE)).unwrap();
        assert_eq!(cluster.replicas.len(), 4);
        assert!(matches!(
            KeyFile::read_from(&cluster.replicas[0].share_key)
                .unwrap()
                .unwrap(),
            KeyFile::TeShare(_)
        ));
        // the chain on disk replays
        let ledger = Ledger::open(&cluster.chain).unwrap();
        assert_eq!(ledger.height(), rep.chain_height);
    }

    #[test]
    fn crashed_replica_is_tolerated_and_others_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig {
            writes: 8,
            read_every: 4,
            retry_base: 200,
            adversary: "crash:3@0".into(),
            ..SimConfig::default()
        };
        let rep = run(&cfg, dir.path()).unwrap();
        assert!(rep.ok(), "{}", rep.table());
        assert_eq!(rep.committed.len(), 3);
        let cfg = SimConfig {
            adversary: "equivocate:3".into(),
            ..cfg
        };
        assert!(matches!(
            run(&cfg, dir.path()),
            Err(TransportError::Unsupported(_))
        ));
    }
}
