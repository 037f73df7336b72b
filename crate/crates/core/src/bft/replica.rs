//! Replica event processor: transaction admission, epochs of n parallel
//! RBC + ABA instances, deterministic commit, and the read path.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::aba::{Aba, AbaEvent, AbaMsg, SeededCoin};
use super::rbc::{Rbc, RbcEvent, RbcMsg};
use super::store::{CommitOutcome, Store, StoreEntry};
use super::tx::{decode_batch, encode_batch, OriginDirectory, Tx, TxReject};
use super::ReplicaConfig;
use crate::crypto::te::{self, TeCiphertext, TePublicKey, TeSecretShare};
use crate::crypto::{sha256, AccessType, CipherBundle, Digest};
use crate::wire::{Message, NodeId, ReadReply, SlotView};

/// Backup copies of gossiped transactions become proposable after this
/// many epochs without being committed.
pub const BACKUP_STALE_EPOCHS: u64 = 3;
/// Messages this far ahead of the current epoch are dropped.
pub const EPOCH_WINDOW: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Send(NodeId, Message),
    /// To every other replica.
    Broadcast(Message),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Note {
    Admit {
        h: Digest,
        owner: u16,
    },
    Reject {
        h: Digest,
        owner: u16,
        reason: TxReject,
    },
    Commit {
        epoch: u64,
        slot: u16,
        h: Digest,
        owner: u16,
    },
    Conflict {
        h: Digest,
    },
    EpochCommitted {
        epoch: u64,
        txs: usize,
        slots: Vec<u16>,
    },
    Evidence(String),
    /// Local decode failure on the read path.
    CorruptStore {
        h: Digest,
    },
}

#[derive(Clone)]
pub struct TeContext {
    pub pk: TePublicKey,
    pub share: TeSecretShare,
}

#[derive(Debug)]
struct Buffered {
    seq: u64,
    tx: Tx,
    /// Received directly from the owner rather than by gossip.
    own: bool,
    since: u64,
}

struct Epoch {
    rbc: Vec<Rbc>,
    aba: Vec<Aba>,
    delivered: Vec<Option<Option<Vec<u8>>>>,
    proposed: bool,
    zeros_input: bool,
}

impl Epoch {
    fn new(cfg: &ReplicaConfig, s: u64) -> Self {
        let n = cfg.n;
        Epoch {
            rbc: (0..n as u16)
                .map(|j| Rbc::new(n, cfg.f, cfg.replica_id, j))
                .collect(),
            aba: (0..n as u16).map(|j| Aba::new(n, cfg.f, s, j)).collect(),
            delivered: vec![None; n],
            proposed: false,
            zeros_input: false,
        }
    }

    fn ones(&self) -> usize {
        self.aba
            .iter()
            .filter(|a| a.decision() == Some(true))
            .count()
    }

    fn ready_to_commit(&self) -> bool {
        self.aba
            .iter()
            .zip(&self.delivered)
            .all(|(a, d)| match a.decision() {
                Some(true) => d.is_some(),
                Some(false) => true,
                None => false,
            })
    }

    fn finished(&self) -> bool {
        self.aba.iter().all(Aba::terminated)
    }
}

pub struct Replica {
    cfg: ReplicaConfig,
    origins: OriginDirectory,
    coin: SeededCoin,
    te: Option<TeContext>,
    rng: ChaCha20Rng,
    store: Store,
    buffer: HashMap<Digest, Buffered>,
    order: BTreeMap<u64, Digest>,
    next_seq: u64,
    /// Verdicts keyed by the digest of the full encoded transaction.
    checked: HashMap<Digest, Result<AccessType, TxReject>>,
    cur: u64,
    epochs: BTreeMap<u64, Epoch>,
    slots: BTreeMap<u64, Vec<SlotView>>,
    local: VecDeque<(NodeId, Message)>,
    out: Vec<Output>,
    notes: Vec<Note>,
    committed: Vec<Digest>,
}

impl std::fmt::Debug for Replica {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Replica")
            .field("id", &self.cfg.replica_id)
            .field("epoch", &self.cur)
            .field("buffer", &self.buffer.len())
            .field("stored", &self.store.len())
            .finish()
    }
}

impl Replica {
    pub fn new(
        cfg: ReplicaConfig,
        origins: OriginDirectory,
        coin: SeededCoin,
        te: Option<TeContext>,
        store: Store,
        seed: u64,
    ) -> Self {
        Replica {
            cfg,
            origins,
            coin,
            te,
            rng: ChaCha20Rng::seed_from_u64(seed),
            store,
            buffer: HashMap::new(),
            order: BTreeMap::new(),
            next_seq: 0,
            checked: HashMap::new(),
            cur: 0,
            epochs: BTreeMap::new(),
            slots: BTreeMap::new(),
            local: VecDeque::new(),
            out: Vec::new(),
            notes: Vec::new(),
            committed: Vec::new(),
        }
    }

    pub fn id(&self) -> u16 {
        self.cfg.replica_id
    }

    pub fn config(&self) -> &ReplicaConfig {
        &self.cfg
    }

    /// Next epoch to commit.
    pub fn epoch(&self) -> u64 {
        self.cur
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// Content hashes in local commit order.
    pub fn committed(&self) -> &[Digest] {
        &self.committed
    }

    pub fn take_notes(&mut self) -> Vec<Note> {
        std::mem::take(&mut self.notes)
    }

    pub fn slot_view(&self, epoch: u64, proposer: u16) -> SlotView {
        self.slots
            .get(&epoch)
            .and_then(|v| v.get(proposer as usize))
            .cloned()
            .unwrap_or(SlotView::Unknown)
    }

    pub fn handle(&mut self, from: NodeId, msg: Message) -> Vec<Output> {
        self.local.push_back((from, msg));
        while let Some((from, msg)) = self.local.pop_front() {
            self.dispatch(from, msg);
        }
        self.advance();
        std::mem::take(&mut self.out)
    }

    fn is_replica(&self, id: NodeId) -> bool {
        (id as usize) < self.cfg.n
    }

    fn dispatch(&mut self, from: NodeId, msg: Message) {
        match msg {
            Message::TxSubmit(tx) => self.on_submit(from, tx, true),
            Message::TxGossip(tx) if self.is_replica(from) => self.on_submit(from, tx, false),
            Message::Rbc {
                epoch,
                proposer,
                msg,
            } if self.is_replica(from) => self.on_rbc(from, epoch, proposer, msg),
            Message::Aba {
                epoch,
                instance,
                msg,
            } if self.is_replica(from) => self.on_aba(from, epoch, instance, msg),
            Message::ReadReq { h } => {
                let reply = self.read(&h);
                self.out
                    .push(Output::Send(from, Message::ReadResp { h, reply }));
            }
            Message::SlotReq { epoch, proposer } => {
                let view = self.slot_view(epoch, proposer);
                self.out.push(Output::Send(
                    from,
                    Message::SlotResp {
                        epoch,
                        proposer,
                        view,
                    },
                ));
            }
            _ => {}
        }
    }

    /// Own messages go through the local queue, everyone else's through the network.
    fn broadcast(&mut self, msg: Message) {
        self.out.push(Output::Broadcast(msg.clone()));
        self.local.push_back((self.cfg.replica_id, msg));
    }

    fn send(&mut self, to: u16, msg: Message) {
        if to == self.cfg.replica_id {
            self.local.push_back((to, msg));
        } else {
            self.out.push(Output::Send(to, msg));
        }
    }

    fn check(&mut self, tx: &Tx) -> Result<AccessType, TxReject> {
        let key = sha256(&tx.encode());
        if let Some(v) = self.checked.get(&key) {
            return *v;
        }
        let v = tx.check(&self.origins).map(|b| b.tag);
        self.checked.insert(key, v);
        v
    }

    fn on_submit(&mut self, from: NodeId, tx: Tx, direct: bool) {
        if let Err(reason) = self.check(&tx) {
            if direct {
                self.notes.push(Note::Reject {
                    h: tx.h,
                    owner: tx.owner,
                    reason,
                });
            }
            return;
        }
        if let Some(e) = self.store.get(&tx.h) {
            if direct && e.sigma == tx.sigma {
                self.out
                    .push(Output::Send(from, Message::TxAck { h: tx.h }));
            }
            return;
        }
        if let Some(b) = self.buffer.get_mut(&tx.h) {
            // a retry promotes our backup copy
            if direct && !b.own && b.tx == tx {
                b.own = true;
                self.broadcast_gossip(tx);
            }
            return;
        }
        if direct {
            self.notes.push(Note::Admit {
                h: tx.h,
                owner: tx.owner,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.order.insert(seq, tx.h);
        self.buffer.insert(
            tx.h,
            Buffered {
                seq,
                tx: tx.clone(),
                own: direct,
                since: self.cur,
            },
        );
        if direct {
            self.broadcast_gossip(tx);
        }
    }

    fn broadcast_gossip(&mut self, tx: Tx) {
        self.out.push(Output::Broadcast(Message::TxGossip(tx)));
    }

    fn eligible(&self, b: &Buffered) -> bool {
        b.own || self.cur >= b.since + BACKUP_STALE_EPOCHS
    }

    fn batch(&self) -> Vec<Tx> {
        self.order
            .values()
            .filter_map(|h| self.buffer.get(h))
            .filter(|b| self.eligible(b))
            .take(self.cfg.per_replica_batch())
            .map(|b| b.tx.clone())
            .collect()
    }

    fn epoch_mut(&mut self, s: u64) -> Option<&mut Epoch> {
        if s < self.cur || s >= self.cur + EPOCH_WINDOW {
            // already committed epochs are kept until their ABAs terminate
            return self.epochs.get_mut(&s);
        }
        let cfg = self.cfg;
        Some(self.epochs.entry(s).or_insert_with(|| Epoch::new(&cfg, s)))
    }

    fn on_rbc(&mut self, from: NodeId, s: u64, proposer: u16, msg: RbcMsg) {
        if !self.is_replica(proposer) {
            return;
        }
        let Some(ep) = self.epoch_mut(s) else { return };
        let events = ep.rbc[proposer as usize].handle(from, msg);
        for ev in events {
            match ev {
                RbcEvent::Send(to, m) => self.send(
                    to,
                    Message::Rbc {
                        epoch: s,
                        proposer,
                        msg: m,
                    },
                ),
                RbcEvent::Broadcast(m) => self.broadcast(Message::Rbc {
                    epoch: s,
                    proposer,
                    msg: m,
                }),
                RbcEvent::Deliver(v) => {
                    let ep = self.epochs.get_mut(&s).expect("epoch exists");
                    ep.delivered[proposer as usize] = Some(v);
                    if s == self.cur && ep.proposed {
                        self.input_aba(s, proposer, true);
                    }
                }
                RbcEvent::Evidence(e) => self.notes.push(Note::Evidence(format!("epoch {s}: {e}"))),
            }
        }
    }

    fn on_aba(&mut self, from: NodeId, s: u64, j: u16, msg: AbaMsg) {
        if !self.is_replica(j) {
            return;
        }
        let coin = self.coin;
        let Some(ep) = self.epoch_mut(s) else { return };
        let events = ep.aba[j as usize].handle(from, msg, &coin);
        self.aba_events(s, j, events);
    }

    fn input_aba(&mut self, s: u64, j: u16, b: bool) {
        let coin = self.coin;
        let ep = self.epochs.get_mut(&s).expect("epoch exists");
        if ep.aba[j as usize].has_input() || ep.aba[j as usize].terminated() {
            return;
        }
        let events = ep.aba[j as usize].input(b, &coin);
        self.aba_events(s, j, events);
    }

    fn aba_events(&mut self, s: u64, j: u16, events: Vec<AbaEvent>) {
        let mut decided = false;
        for ev in events {
            match ev {
                AbaEvent::Broadcast(m) => self.broadcast(Message::Aba {
                    epoch: s,
                    instance: j,
                    msg: m,
                }),
                AbaEvent::Decide(_) => decided = true,
            }
        }
        if decided && s == self.cur {
            self.maybe_input_zeros(s);
        }
    }

    fn maybe_input_zeros(&mut self, s: u64) {
        let n_f = self.cfg.n - self.cfg.f;
        let Some(ep) = self.epochs.get_mut(&s) else {
            return;
        };
        if ep.zeros_input || !ep.proposed || ep.ones() < n_f {
            return;
        }
        ep.zeros_input = true;
        for j in 0..self.cfg.n as u16 {
            self.input_aba(s, j, false);
        }
    }

    /// Starts the current epoch if there is work, commits finished epochs,
    /// and repeats until neither applies.
    fn advance(&mut self) {
        loop {
            let s = self.cur;
            let has_msgs = self.epochs.contains_key(&s);
            let proposed = self.epochs.get(&s).is_some_and(|e| e.proposed);
            if !proposed && (has_msgs || !self.buffer.is_empty()) {
                self.start_epoch(s);
            }
            while let Some((from, msg)) = self.local.pop_front() {
                self.dispatch(from, msg);
            }
            if self
                .epochs
                .get(&s)
                .is_some_and(|e| e.proposed && e.ready_to_commit())
            {
                self.commit(s);
                self.cur += 1;
                self.epochs.retain(|k, e| *k > s || !e.finished());
                continue;
            }
            break;
        }
        self.epochs.retain(|k, e| *k >= self.cur || !e.finished());
    }

    fn start_epoch(&mut self, s: u64) {
        let batch = encode_batch(&self.batch());
        let me = self.cfg.replica_id;
        let ep = self.epoch_mut(s).expect("current epoch is in window");
        ep.proposed = true;
        let events = ep.rbc[me as usize].propose(&batch);
        for ev in events {
            match ev {
                RbcEvent::Send(to, m) => self.send(
                    to,
                    Message::Rbc {
                        epoch: s,
                        proposer: me,
                        msg: m,
                    },
                ),
                RbcEvent::Broadcast(m) => self.broadcast(Message::Rbc {
                    epoch: s,
                    proposer: me,
                    msg: m,
                }),
                _ => {}
            }
        }
        // deliveries that arrived while the epoch was still in the future
        let ep = &self.epochs[&s];
        let pending: Vec<u16> = (0..self.cfg.n as u16)
            .filter(|j| ep.delivered[*j as usize].is_some())
            .collect();
        for j in pending {
            self.input_aba(s, j, true);
        }
        self.maybe_input_zeros(s);
    }

    fn commit(&mut self, s: u64) {
        let ep = self.epochs.get_mut(&s).expect("epoch exists");
        let mut proposals: Vec<(u16, Option<Vec<u8>>)> = Vec::new();
        for j in 0..self.cfg.n {
            if ep.aba[j].decision() == Some(true) {
                proposals.push((j as u16, ep.delivered[j].take().flatten()));
            }
        }
        let mut views = vec![SlotView::Empty; self.cfg.n];
        let mut seen: HashSet<Digest> = HashSet::new();
        let mut slots = Vec::new();
        let mut total = 0;
        for (j, payload) in proposals {
            slots.push(j);
            let txs = match payload.as_deref().map(decode_batch) {
                Some(Ok(txs)) => txs,
                Some(Err(e)) => {
                    self.notes.push(Note::Evidence(format!(
                        "epoch {s}: undecodable batch from {j}: {e}"
                    )));
                    continue;
                }
                None => {
                    self.notes.push(Note::Evidence(format!(
                        "epoch {s}: inconsistent coded broadcast from {j}"
                    )));
                    continue;
                }
            };
            let mut hashes = Vec::new();
            for tx in txs {
                let at = match self.check(&tx) {
                    Ok(at) => at,
                    Err(reason) => {
                        self.notes.push(Note::Reject {
                            h: tx.h,
                            owner: tx.owner,
                            reason,
                        });
                        continue;
                    }
                };
                if !seen.insert(tx.h) {
                    continue;
                }
                let entry = StoreEntry {
                    h: tx.h,
                    sigma: tx.sigma,
                    at,
                    epoch: s,
                    slot: j as u32,
                    owner: tx.owner,
                };
                let outcome = match self.store.commit(entry) {
                    Ok(o) => o,
                    Err(e) => {
                        self.notes
                            .push(Note::Evidence(format!("store write failed: {e}")));
                        continue;
                    }
                };
                self.remove_buffered(&tx.h);
                match outcome {
                    CommitOutcome::Stored => {
                        total += 1;
                        hashes.push(tx.h);
                        self.committed.push(tx.h);
                        self.notes.push(Note::Commit {
                            epoch: s,
                            slot: j,
                            h: tx.h,
                            owner: tx.owner,
                        });
                        self.out
                            .push(Output::Send(tx.owner, Message::TxAck { h: tx.h }));
                    }
                    CommitOutcome::Duplicate => {
                        self.out
                            .push(Output::Send(tx.owner, Message::TxAck { h: tx.h }));
                    }
                    CommitOutcome::Conflict => self.notes.push(Note::Conflict { h: tx.h }),
                }
            }
            if !hashes.is_empty() {
                views[j as usize] = SlotView::Filled(hashes);
            }
        }
        self.slots.insert(s, views);
        self.notes.push(Note::EpochCommitted {
            epoch: s,
            txs: total,
            slots,
        });
    }

    fn remove_buffered(&mut self, h: &Digest) {
        if let Some(b) = self.buffer.remove(h) {
            self.order.remove(&b.seq);
        }
    }

    fn read(&mut self, h: &Digest) -> ReadReply {
        let Some(entry) = self.store.get(h) else {
            return ReadReply::NotFound;
        };
        if entry.at != AccessType::Te {
            return ReadReply::Sigma(entry.sigma.clone());
        }
        let sigma = entry.sigma.clone();
        let Some(ctx) = &self.te else {
            return ReadReply::Sigma(sigma);
        };
        let share = CipherBundle::decode(&sigma)
            .ok()
            .and_then(|b| TeCiphertext::decode(&b.x).ok())
            .and_then(|ct| te::share_dec(&ctx.share, &ct, h, &mut self.rng).ok());
        match share {
            Some(s) => ReadReply::Te {
                sigma,
                share: s.encode(),
            },
            None => {
                self.notes.push(Note::CorruptStore { h: *h });
                ReadReply::Corrupt
            }
        }
    }
}
