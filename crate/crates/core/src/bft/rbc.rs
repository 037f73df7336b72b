//! Bracha reliable broadcast.
//!
//! Payloads up to [`CODED_THRESHOLD`] travel whole in INIT and ECHO. Larger
//! ones are Reed-Solomon coded into `n` shards (any `n - 2f` reconstruct)
//! and committed to by a Merkle root, so each ECHO carries one shard.

use std::collections::{BTreeMap, BTreeSet};

use reed_solomon_erasure::galois_8::ReedSolomon;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{sha256, Digest};

pub const CODED_THRESHOLD: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub root: Digest,
    pub index: u16,
    pub data_len: u32,
    pub data: Vec<u8>,
    pub proof: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Full(Vec<u8>),
    Shard(Shard),
}

impl Body {
    fn digest(&self) -> Digest {
        match self {
            Body::Full(p) => sha256(p),
            Body::Shard(s) => s.root,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RbcMsg {
    Init(Body),
    Echo(Body),
    Ready(Digest),
}

impl RbcMsg {
    pub fn write(&self, w: &mut Writer) {
        let put_body = |w: &mut Writer, b: &Body| match b {
            Body::Full(p) => {
                w.u8(0).bytes(p);
            }
            Body::Shard(s) => {
                w.u8(1)
                    .raw(&s.root)
                    .u16(s.index)
                    .u32(s.data_len)
                    .bytes(&s.data);
                w.u8(s.proof.len() as u8);
                for d in &s.proof {
                    w.raw(d);
                }
            }
        };
        match self {
            RbcMsg::Init(b) | RbcMsg::Echo(b) => put_body(w, b),
            RbcMsg::Ready(d) => {
                w.raw(d);
            }
        }
    }

    /// `kind` is 0 for INIT, 1 for ECHO, 2 for READY (carried in the frame header).
    pub fn read(kind: u8, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let body = |r: &mut Reader<'_>| -> Result<Body, DecodeError> {
            match r.u8()? {
                0 => Ok(Body::Full(r.bytes()?.to_vec())),
                1 => {
                    let root = r.array()?;
                    let index = r.u16()?;
                    let data_len = r.u32()?;
                    let data = r.bytes()?.to_vec();
                    let k = r.u8()? as usize;
                    let mut proof = Vec::with_capacity(k);
                    for _ in 0..k {
                        proof.push(r.array()?);
                    }
                    Ok(Body::Shard(Shard {
                        root,
                        index,
                        data_len,
                        data,
                        proof,
                    }))
                }
                t => Err(DecodeError::UnknownTag(t)),
            }
        };
        match kind {
            0 => Ok(RbcMsg::Init(body(r)?)),
            1 => Ok(RbcMsg::Echo(body(r)?)),
            2 => Ok(RbcMsg::Ready(r.array()?)),
            t => Err(DecodeError::UnknownTag(t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RbcEvent {
    /// Send to one replica.
    Send(u16, RbcMsg),
    Broadcast(RbcMsg),
    /// `None` means the sender's shards were inconsistent; treated as an
    /// empty proposal by every correct replica alike.
    Deliver(Option<Vec<u8>>),
    Evidence(String),
}

fn leaf_hash(index: u16, data: &[u8]) -> Digest {
    let mut b = Vec::with_capacity(data.len() + 3);
    b.push(0);
    b.extend_from_slice(&index.to_be_bytes());
    b.extend_from_slice(data);
    sha256(&b)
}

fn node_hash(l: &Digest, r: &Digest) -> Digest {
    let mut b = [0u8; 65];
    b[0] = 1;
    b[1..33].copy_from_slice(l);
    b[33..].copy_from_slice(r);
    sha256(&b)
}

fn bind_root(merkle: &Digest, data_len: u32) -> Digest {
    let mut b = b"facos/rbc/root".to_vec();
    b.extend_from_slice(merkle);
    b.extend_from_slice(&data_len.to_be_bytes());
    sha256(&b)
}

/// Merkle tree over shard leaves; returns the bound root and one proof per shard.
fn merkle(shards: &[Vec<u8>], data_len: u32) -> (Digest, Vec<Vec<Digest>>) {
    let width = shards.len().next_power_of_two();
    let mut level: Vec<Digest> = (0..width)
        .map(|i| shards.get(i).map_or([0; 32], |s| leaf_hash(i as u16, s)))
        .collect();
    let mut proofs = vec![Vec::new(); shards.len()];
    let mut pos: Vec<usize> = (0..shards.len()).collect();
    while level.len() > 1 {
        for (p, proof) in pos.iter_mut().zip(proofs.iter_mut()) {
            proof.push(level[*p ^ 1]);
            *p /= 2;
        }
        level = level.chunks(2).map(|c| node_hash(&c[0], &c[1])).collect();
    }
    (bind_root(&level[0], data_len), proofs)
}

fn verify_shard(s: &Shard) -> bool {
    let mut acc = leaf_hash(s.index, &s.data);
    let mut idx = s.index as usize;
    for sib in &s.proof {
        acc = if idx.is_multiple_of(2) {
            node_hash(&acc, sib)
        } else {
            node_hash(sib, &acc)
        };
        idx /= 2;
    }
    idx == 0 && bind_root(&acc, s.data_len) == s.root
}

fn coder(n: usize, f: usize) -> ReedSolomon {
    ReedSolomon::new(n - 2 * f, 2 * f).expect("n > 3f gives valid shard counts")
}

/// Splits `payload` into `n` shards with Merkle proofs.
pub fn encode_shards(payload: &[u8], n: usize, f: usize) -> Vec<Shard> {
    let k = n - 2 * f;
    let size = payload.len().div_ceil(k).max(1);
    let mut shards: Vec<Vec<u8>> = (0..n)
        .map(|i| {
            let mut s = vec![0u8; size];
            if i < k {
                let lo = (i * size).min(payload.len());
                let hi = ((i + 1) * size).min(payload.len());
                s[..hi - lo].copy_from_slice(&payload[lo..hi]);
            }
            s
        })
        .collect();
    coder(n, f)
        .encode(&mut shards)
        .expect("uniform shard sizes");
    let data_len = payload.len() as u32;
    let (root, proofs) = merkle(&shards, data_len);
    shards
        .into_iter()
        .zip(proofs)
        .enumerate()
        .map(|(i, (data, proof))| Shard {
            root,
            index: i as u16,
            data_len,
            data,
            proof,
        })
        .collect()
}

/// Reconstructs from any `n - 2f` shards and checks the re-encoding against `root`.
fn decode_shards(
    have: &BTreeMap<u16, Vec<u8>>,
    root: &Digest,
    data_len: u32,
    n: usize,
    f: usize,
) -> Option<Vec<u8>> {
    let mut slots: Vec<Option<Vec<u8>>> = (0..n as u16).map(|i| have.get(&i).cloned()).collect();
    let size = have.values().next()?.len();
    if have.values().any(|s| s.len() != size) {
        return None;
    }
    coder(n, f).reconstruct(&mut slots).ok()?;
    let shards: Vec<Vec<u8>> = slots
        .into_iter()
        .map(|s| s.expect("reconstructed"))
        .collect();
    if merkle(&shards, data_len).0 != *root {
        return None;
    }
    let k = n - 2 * f;
    let mut out: Vec<u8> = shards[..k].concat();
    if out.len() < data_len as usize {
        return None;
    }
    out.truncate(data_len as usize);
    Some(out)
}

/// One broadcast instance: `proposer`'s value for one epoch.
#[derive(Debug, Clone)]
pub struct Rbc {
    n: usize,
    f: usize,
    me: u16,
    proposer: u16,
    init_digest: Option<Digest>,
    echo_sent: bool,
    ready_sent: bool,
    delivered: bool,
    echo_from: BTreeSet<u16>,
    echoes: BTreeMap<Digest, usize>,
    ready_from: BTreeSet<u16>,
    readies: BTreeMap<Digest, usize>,
    payloads: BTreeMap<Digest, Vec<u8>>,
    shards: BTreeMap<Digest, (u32, BTreeMap<u16, Vec<u8>>)>,
}

impl Rbc {
    pub fn new(n: usize, f: usize, me: u16, proposer: u16) -> Self {
        Rbc {
            n,
            f,
            me,
            proposer,
            init_digest: None,
            echo_sent: false,
            ready_sent: false,
            delivered: false,
            echo_from: BTreeSet::new(),
            echoes: BTreeMap::new(),
            ready_from: BTreeSet::new(),
            readies: BTreeMap::new(),
            payloads: BTreeMap::new(),
            shards: BTreeMap::new(),
        }
    }

    pub fn delivered(&self) -> bool {
        self.delivered
    }

    fn coded(&self, len: usize) -> bool {
        len > CODED_THRESHOLD && self.f > 0
    }

    /// INIT messages for every replica; only the proposer calls this.
    pub fn propose(&self, payload: &[u8]) -> Vec<RbcEvent> {
        if self.coded(payload.len()) {
            encode_shards(payload, self.n, self.f)
                .into_iter()
                .map(|s| RbcEvent::Send(s.index, RbcMsg::Init(Body::Shard(s))))
                .collect()
        } else {
            vec![RbcEvent::Broadcast(RbcMsg::Init(Body::Full(
                payload.to_vec(),
            )))]
        }
    }

    pub fn handle(&mut self, from: u16, msg: RbcMsg) -> Vec<RbcEvent> {
        let mut out = Vec::new();
        if self.delivered {
            return out;
        }
        match msg {
            RbcMsg::Init(body) => self.on_init(from, body, &mut out),
            RbcMsg::Echo(body) => self.on_echo(from, body, &mut out),
            RbcMsg::Ready(d) => {
                if self.ready_from.insert(from) {
                    *self.readies.entry(d).or_default() += 1;
                }
            }
        }
        self.progress(&mut out);
        out
    }

    fn on_init(&mut self, from: u16, body: Body, out: &mut Vec<RbcEvent>) {
        if from != self.proposer {
            out.push(RbcEvent::Evidence(format!(
                "INIT for instance {} sent by {from}",
                self.proposer
            )));
            return;
        }
        let d = body.digest();
        if let Some(prev) = self.init_digest {
            if prev != d {
                out.push(RbcEvent::Evidence(format!(
                    "equivocating INIT from {from}: {} then {}",
                    hex::encode(&prev[..8]),
                    hex::encode(&d[..8])
                )));
            }
            return;
        }
        match &body {
            Body::Full(p) => {
                self.payloads.insert(d, p.clone());
            }
            Body::Shard(s) => {
                if s.index != self.me || !verify_shard(s) {
                    out.push(RbcEvent::Evidence(format!("bad INIT shard from {from}")));
                    return;
                }
            }
        }
        self.init_digest = Some(d);
        if !self.echo_sent {
            self.echo_sent = true;
            out.push(RbcEvent::Broadcast(RbcMsg::Echo(body)));
        }
    }

    fn on_echo(&mut self, from: u16, body: Body, out: &mut Vec<RbcEvent>) {
        if self.echo_from.contains(&from) {
            return;
        }
        let d = body.digest();
        match body {
            Body::Full(p) => {
                self.payloads.entry(d).or_insert(p);
            }
            Body::Shard(s) => {
                if s.index != from || !verify_shard(&s) {
                    out.push(RbcEvent::Evidence(format!("bad ECHO shard from {from}")));
                    return;
                }
                let e = self
                    .shards
                    .entry(d)
                    .or_insert_with(|| (s.data_len, BTreeMap::new()));
                e.1.insert(s.index, s.data);
            }
        }
        self.echo_from.insert(from);
        *self.echoes.entry(d).or_default() += 1;
    }

    fn echo_threshold(&self, d: &Digest) -> usize {
        if self.shards.contains_key(d) {
            self.n - self.f
        } else {
            (self.n + self.f + 1).div_ceil(2)
        }
    }

    fn progress(&mut self, out: &mut Vec<RbcEvent>) {
        if !self.ready_sent {
            let by_echo = self
                .echoes
                .iter()
                .find(|(d, c)| **c >= self.echo_threshold(d))
                .map(|(d, _)| *d);
            let by_ready = self
                .readies
                .iter()
                .find(|(_, c)| **c > self.f)
                .map(|(d, _)| *d);
            if let Some(d) = by_echo.or(by_ready) {
                self.ready_sent = true;
                out.push(RbcEvent::Broadcast(RbcMsg::Ready(d)));
            }
        }
        let quorum = 2 * self.f + 1;
        let Some(d) = self
            .readies
            .iter()
            .find(|(_, c)| **c >= quorum)
            .map(|(d, _)| *d)
        else {
            return;
        };
        if let Some(p) = self.payloads.get(&d) {
            self.delivered = true;
            out.push(RbcEvent::Deliver(Some(p.clone())));
        } else if let Some((len, have)) = self.shards.get(&d) {
            if have.len() >= self.n - 2 * self.f {
                self.delivered = true;
                let value = decode_shards(have, &d, *len, self.n, self.f);
                if value.is_none() {
                    out.push(RbcEvent::Evidence(format!(
                        "inconsistent encoding from {}",
                        self.proposer
                    )));
                }
                out.push(RbcEvent::Deliver(value));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    /// Randomly ordered in-memory network of RBC instances for one proposer.
    /// `byz_inits` lets a faulty proposer hand chosen INIT messages to chosen replicas.
    fn simulate(
        n: usize,
        f: usize,
        seed: u64,
        honest_payload: Option<Vec<u8>>,
        byz_inits: Vec<(u16, RbcMsg)>,
        silent: &[u16],
    ) -> Vec<Option<Option<Vec<u8>>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes: Vec<Rbc> = (0..n as u16).map(|i| Rbc::new(n, f, i, 0)).collect();
        let mut queue: VecDeque<(u16, u16, RbcMsg)> = VecDeque::new();
        let mut delivered = vec![None; n];
        let push = |q: &mut VecDeque<_>,
                    from: u16,
                    ev: RbcEvent,
                    dl: &mut Vec<Option<Option<Vec<u8>>>>| match ev {
            RbcEvent::Send(to, m) => q.push_back((from, to, m)),
            RbcEvent::Broadcast(m) => {
                for to in 0..n as u16 {
                    q.push_back((from, to, m.clone()));
                }
            }
            RbcEvent::Deliver(v) => {
                assert!(dl[from as usize].is_none(), "double delivery");
                dl[from as usize] = Some(v);
            }
            RbcEvent::Evidence(_) => {}
        };
        if let Some(p) = honest_payload {
            for ev in nodes[0].propose(&p) {
                push(&mut queue, 0, ev, &mut delivered);
            }
        }
        for (to, m) in byz_inits {
            queue.push_back((0, to, m));
        }
        while !queue.is_empty() {
            let i = rng.gen_range(0..queue.len());
            let (from, to, m) = queue.remove(i).unwrap();
            if silent.contains(&to) {
                continue;
            }
            for ev in nodes[to as usize].handle(from, m) {
                push(&mut queue, to, ev, &mut delivered);
            }
        }
        delivered
    }

    #[test]
    fn honest_sender_everyone_delivers() {
        for seed in 0..20 {
            let d = simulate(4, 1, seed, Some(b"batch".to_vec()), vec![], &[]);
            assert!(d.iter().all(|v| v == &Some(Some(b"batch".to_vec()))));
        }
    }

    #[test]
    fn large_payload_uses_shards_and_round_trips() {
        let payload: Vec<u8> = (0..CODED_THRESHOLD + 1234).map(|i| (i * 7) as u8).collect();
        let rbc = Rbc::new(4, 1, 0, 0);
        let evs = rbc.propose(&payload);
        assert_eq!(evs.len(), 4);
        assert!(matches!(
            &evs[0],
            RbcEvent::Send(0, RbcMsg::Init(Body::Shard(_)))
        ));
        for seed in 0..5 {
            let d = simulate(4, 1, seed, Some(payload.clone()), vec![], &[3]);
            for v in &d[..3] {
                assert_eq!(v.as_ref().unwrap().as_ref().unwrap(), &payload);
            }
        }
    }

    #[test]
    fn shard_proofs_and_reconstruction() {
        let payload: Vec<u8> = (0..1000u32).map(|i| i as u8).collect();
        for (n, f) in [(4, 1), (7, 2), (10, 3)] {
            let shards = encode_shards(&payload, n, f);
            assert!(shards.iter().all(verify_shard));
            let mut bad = shards[1].clone();
            bad.data[0] ^= 1;
            assert!(!verify_shard(&bad));
            let have: BTreeMap<u16, Vec<u8>> = shards
                .iter()
                .skip(2 * f)
                .map(|s| (s.index, s.data.clone()))
                .collect();
            assert_eq!(
                decode_shards(&have, &shards[0].root, 1000, n, f).unwrap(),
                payload
            );
        }
    }

    #[test]
    fn equivocating_sender_splits_halves_at_most_one_value() {
        let msg = |v: &[u8]| RbcMsg::Init(Body::Full(v.to_vec()));
        for seed in 0..200 {
            // replica 0 is the Byzantine proposer and does not run honest code
            let inits = vec![(1, msg(b"v")), (2, msg(b"v")), (3, msg(b"w"))];
            let d = simulate(4, 1, seed, None, inits, &[0]);
            let values: BTreeSet<_> = d[1..].iter().flatten().collect();
            assert!(values.len() <= 1, "seed {seed}: {values:?}");
            let count = d[1..].iter().filter(|v| v.is_some()).count();
            assert!(count == 0 || count == 3, "totality, seed {seed}");
        }
    }

    /// Exhaustive search over all delivery orders of a small configuration
    /// where the sender reaches only two replicas before crashing.
    #[test]
    fn crash_after_partial_init_all_or_none_exhaustive() {
        fn explore(
            nodes: Vec<Rbc>,
            pending: Vec<(u16, u16, RbcMsg)>,
            delivered: Vec<bool>,
            budget: &mut usize,
        ) {
            if *budget == 0 {
                return;
            }
            if pending.is_empty() {
                *budget -= 1;
                let c = delivered[1..].iter().filter(|d| **d).count();
                assert!(c == 0 || c == 3, "agreement violated: {delivered:?}");
                return;
            }
            // branch on the first few choices only; the rest are FIFO
            let branch = if pending.len() > 6 { 2 } else { pending.len() };
            for i in 0..branch {
                let mut nodes2 = nodes.clone();
                let mut pending2 = pending.clone();
                let mut delivered2 = delivered.clone();
                let (from, to, m) = pending2.remove(i);
                if to == 0 {
                    explore(nodes2, pending2, delivered2, budget);
                    continue;
                }
                for ev in nodes2[to as usize].handle(from, m) {
                    match ev {
                        RbcEvent::Broadcast(m) => {
                            for t in 0..4 {
                                pending2.push((to, t, m.clone()));
                            }
                        }
                        RbcEvent::Send(t, m) => pending2.push((to, t, m)),
                        RbcEvent::Deliver(_) => delivered2[to as usize] = true,
                        RbcEvent::Evidence(_) => {}
                    }
                }
                explore(nodes2, pending2, delivered2, budget);
            }
        }
        let nodes: Vec<Rbc> = (0..4u16).map(|i| Rbc::new(4, 1, i, 0)).collect();
        let init = RbcMsg::Init(Body::Full(b"x".to_vec()));
        let pending = vec![(0, 1, init.clone()), (0, 2, init)];
        let mut budget = 20_000;
        explore(nodes, pending, vec![false; 4], &mut budget);
    }

    #[test]
    fn init_from_non_proposer_is_evidence() {
        let mut r = Rbc::new(4, 1, 1, 0);
        let ev = r.handle(2, RbcMsg::Init(Body::Full(vec![1])));
        assert!(matches!(ev.as_slice(), [RbcEvent::Evidence(_)]));
    }

    #[test]
    fn message_codec_round_trip() {
        let shard = encode_shards(&[1, 2, 3], 4, 1).remove(2);
        for (kind, m) in [
            (0, RbcMsg::Init(Body::Full(vec![9; 10]))),
            (1, RbcMsg::Echo(Body::Shard(shard))),
            (2, RbcMsg::Ready([7; 32])),
        ] {
            let mut w = Writer::new();
            m.write(&mut w);
            let buf = w.finish();
            let mut r = Reader::new(&buf);
            assert_eq!(RbcMsg::read(kind, &mut r).unwrap(), m);
            r.finish().unwrap();
        }
    }
}
