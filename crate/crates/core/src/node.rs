//! Sans-IO wrappers that put the ledger, the verifier and the KGC on the
//! wire. Each takes a decoded message and returns what to send.

use std::collections::{BTreeMap, HashMap};

use crate::crypto::CryptoRand;
use crate::kgc::{Credentials, Kgc, Role};
use crate::ledger::{Ledger, Txid};
use crate::verifier::Verifier;
use crate::wire::{Message, NodeId};

pub type Outbox = Vec<(NodeId, Message)>;

/// Identity to node bindings learned at registration.
#[derive(Debug, Clone, Default)]
pub struct Directory {
    nodes: BTreeMap<String, NodeId>,
}

impl Directory {
    pub fn bind(&mut self, identity: &str, node: NodeId) {
        self.nodes.insert(identity.to_string(), node);
    }

    pub fn node(&self, identity: &str) -> Option<NodeId> {
        self.nodes.get(identity).copied()
    }

    pub fn identity(&self, node: NodeId) -> Option<&str> {
        self.nodes
            .iter()
            .find(|(_, n)| **n == node)
            .map(|(i, _)| i.as_str())
    }

    /// A message claiming `identity` must come from its bound node.
    pub fn speaks_for(&self, identity: &str, node: NodeId) -> bool {
        self.node(identity) == Some(node)
    }
}

#[derive(Debug)]
pub struct LedgerNode {
    pub ledger: Ledger,
    pub dir: Directory,
    verifier: NodeId,
    receipts: HashMap<(NodeId, u64), Option<Txid>>,
}

impl LedgerNode {
    pub fn new(ledger: Ledger, dir: Directory, verifier: NodeId) -> Self {
        LedgerNode {
            ledger,
            dir,
            verifier,
            receipts: HashMap::new(),
        }
    }

    pub fn handle(&mut self, from: NodeId, msg: Message) -> Outbox {
        match msg {
            Message::LedgerSubmit { nonce, record } => {
                // retries get the receipt of the first submission
                let txid = match self.receipts.get(&(from, nonce)) {
                    Some(t) => *t,
                    None => {
                        let t = if self.dir.speaks_for(&record.owner_id, from) {
                            self.ledger.submit(record).ok()
                        } else {
                            None
                        };
                        self.receipts.insert((from, nonce), t);
                        t
                    }
                };
                vec![(from, Message::LedgerReceipt { nonce, txid })]
            }
            Message::LedgerFetch { txid } => {
                let record = self.ledger.fetch(&txid).ok().cloned();
                vec![(from, Message::LedgerRecord { txid, record })]
            }
            Message::LedgerAudit(entry) if from == self.verifier => {
                // audit trail failures are not fatal to the protocol
                let _ = self.ledger.audit(entry);
                Vec::new()
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct VerifierNode {
    pub verifier: Verifier,
    pub dir: Directory,
    ledger: NodeId,
    kgc: NodeId,
}

impl VerifierNode {
    pub fn new(verifier: Verifier, dir: Directory, ledger: NodeId, kgc: NodeId) -> Self {
        VerifierNode {
            verifier,
            dir,
            ledger,
            kgc,
        }
    }

    pub fn handle(&mut self, from: NodeId, msg: Message) -> Outbox {
        match msg {
            Message::VerifyReq {
                txid,
                requester,
                at_d,
                c_pu,
            } => {
                if !self.dir.speaks_for(&requester, from) {
                    return Vec::new();
                }
                if let Some(s) = self.verifier.cached(&txid, &requester) {
                    let m = Message::VerifyReport {
                        txid,
                        requester,
                        at: s.at_b,
                        res: s.res,
                    };
                    return vec![(self.kgc, m)];
                }
                if self.verifier.request(txid, requester, at_d, c_pu) {
                    vec![(self.ledger, Message::LedgerFetch { txid })]
                } else {
                    Vec::new()
                }
            }
            Message::LedgerRecord { txid, record } if from == self.ledger => {
                let at_b = record.as_ref().map(|r| r.at);
                let entries = match self
                    .verifier
                    .on_record(txid, record.as_ref().map(|r| (r.at, r.c_p.as_slice())))
                {
                    Ok(e) => e,
                    Err(_) => return Vec::new(),
                };
                let mut out = Vec::with_capacity(entries.len() * 2);
                for e in entries {
                    let at = self
                        .verifier
                        .cached(&txid, &e.requester)
                        .map(|s| s.at_b)
                        .or(at_b)
                        .unwrap_or(crate::crypto::AccessType::Abe);
                    out.push((
                        self.kgc,
                        Message::VerifyReport {
                            txid,
                            requester: e.requester.clone(),
                            at,
                            res: e.res,
                        },
                    ));
                    out.push((self.ledger, Message::LedgerAudit(e)));
                }
                out
            }
            _ => Vec::new(),
        }
    }
}

pub struct KgcNode<R> {
    pub kgc: Kgc,
    pub dir: Directory,
    verifier: NodeId,
    pending: BTreeMap<(Txid, String), NodeId>,
    rng: R,
}

impl<R> std::fmt::Debug for KgcNode<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KgcNode")
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl<R: CryptoRand> KgcNode<R> {
    pub fn new(kgc: Kgc, dir: Directory, verifier: NodeId, rng: R) -> Self {
        KgcNode {
            kgc,
            dir,
            verifier,
            pending: BTreeMap::new(),
            rng,
        }
    }

    fn answer(&mut self, txid: Txid, requester: &str, to: NodeId) -> Option<(NodeId, Message)> {
        let (at, res) = self.kgc.report_for(txid, requester)?;
        let msg = if res {
            match self.kgc.release_key(requester, txid, at, &mut self.rng) {
                Ok(r) => Message::KeyRelease {
                    txid,
                    at: r.at,
                    key: r.key,
                },
                Err(_) => Message::KeyDenied { txid },
            }
        } else {
            Message::KeyDenied { txid }
        };
        Some((to, msg))
    }

    pub fn handle(&mut self, from: NodeId, msg: Message) -> Outbox {
        match msg {
            Message::Register {
                identity,
                role,
                creds,
            } => {
                let issued = Credentials::decode(role, &creds)
                    .map_err(|e| e.to_string())
                    .and_then(|c| {
                        self.kgc
                            .register(&identity, c, &mut self.rng)
                            .map_err(|e| e.to_string())
                    });
                let (ok, body) = match issued {
                    Ok(i) => {
                        if role != Role::Replica {
                            self.dir.bind(&identity, from);
                        }
                        (true, i.encode())
                    }
                    Err(e) => (false, e.into_bytes()),
                };
                vec![(from, Message::Registered { identity, ok, body })]
            }
            Message::VerifyReport {
                txid,
                requester,
                at,
                res,
            } if from == self.verifier => {
                self.kgc.report(txid, &requester, at, res);
                match self.pending.remove(&(txid, requester.clone())) {
                    Some(to) => self.answer(txid, &requester, to).into_iter().collect(),
                    None => Vec::new(),
                }
            }
            Message::ReleaseReq { txid, requester } => {
                if !self.dir.speaks_for(&requester, from) {
                    return Vec::new();
                }
                match self.answer(txid, &requester, from) {
                    Some(out) => vec![out],
                    None => {
                        // parked until the verifier reports
                        self.pending.insert((txid, requester), from);
                        Vec::new()
                    }
                }
            }
            Message::Deposit { txid, sk } => {
                if self
                    .dir
                    .identity(from)
                    .and_then(|i| self.kgc.lookup(i))
                    .map(|r| r.role)
                    != Some(Role::Owner)
                {
                    return Vec::new();
                }
                self.kgc.deposit(txid, sk);
                vec![(from, Message::DepositAck { txid })]
            }
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::AccessType;
    use crate::kgc::SystemParams;
    use crate::ledger::OnChainRecord;
    use crate::verifier::{AuditLog, VerifierKeys};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const LEDGER: NodeId = 4;
    const VERIFIER: NodeId = 5;
    const KGC: NodeId = 6;
    const OWNER: NodeId = 7;
    const REQ: NodeId = 8;

    fn record(owner: &str) -> OnChainRecord {
        OnChainRecord {
            at: AccessType::Be,
            c_h: vec![1],
            c_p: vec![2],
            owner_id: owner.into(),
            timestamp: 0,
        }
    }

    #[test]
    fn ledger_dedups_retries_and_binds_owner() {
        let mut ledger = Ledger::new();
        ledger.register_owner("o");
        let mut dir = Directory::default();
        dir.bind("o", OWNER);
        let mut n = LedgerNode::new(ledger, dir, VERIFIER);
        let a = n.handle(
            OWNER,
            Message::LedgerSubmit {
                nonce: 1,
                record: record("o"),
            },
        );
        let b = n.handle(
            OWNER,
            Message::LedgerSubmit {
                nonce: 1,
                record: record("o"),
            },
        );
        assert_eq!(a, b);
        assert_eq!(n.ledger.height(), 1);
        // someone else claiming the owner's identity is refused
        let c = n.handle(
            REQ,
            Message::LedgerSubmit {
                nonce: 1,
                record: record("o"),
            },
        );
        assert_eq!(
            c,
            vec![(
                REQ,
                Message::LedgerReceipt {
                    nonce: 1,
                    txid: None
                }
            )]
        );
    }

    #[test]
    fn kgc_parks_release_until_report() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let kgc = Kgc::setup(
            SystemParams {
                n: 4,
                f: 1,
                group_size: 8,
                security_bits: 128,
            },
            &mut rng,
        )
        .unwrap();
        let mut node = KgcNode::new(kgc, Directory::default(), VERIFIER, rng);
        let creds = Credentials::Owner { node: OWNER }.encode();
        let out = node.handle(
            OWNER,
            Message::Register {
                identity: "o".into(),
                role: Role::Owner,
                creds,
            },
        );
        assert!(matches!(&out[0].1, Message::Registered { ok: true, .. }));
        let creds = Credentials::Requester {
            attributes: Default::default(),
            leaf: Some(2),
        }
        .encode();
        node.handle(
            REQ,
            Message::Register {
                identity: "r".into(),
                role: Role::Requester,
                creds,
            },
        );

        let txid = Txid([3; 32]);
        assert_eq!(
            node.handle(OWNER, Message::Deposit { txid, sk: [9; 32] }),
            vec![(OWNER, Message::DepositAck { txid })]
        );
        // a requester cannot deposit
        assert!(node
            .handle(REQ, Message::Deposit { txid, sk: [1; 32] })
            .is_empty());
        assert!(node
            .handle(
                REQ,
                Message::ReleaseReq {
                    txid,
                    requester: "r".into()
                }
            )
            .is_empty());
        // impersonation is ignored
        assert!(node
            .handle(
                OWNER,
                Message::ReleaseReq {
                    txid,
                    requester: "r".into()
                }
            )
            .is_empty());
        let out = node.handle(
            VERIFIER,
            Message::VerifyReport {
                txid,
                requester: "r".into(),
                at: AccessType::Be,
                res: true,
            },
        );
        assert_eq!(
            out,
            vec![(
                REQ,
                Message::KeyRelease {
                    txid,
                    at: AccessType::Be,
                    key: vec![9; 32]
                }
            )]
        );

        let t2 = Txid([4; 32]);
        node.handle(
            VERIFIER,
            Message::VerifyReport {
                txid: t2,
                requester: "r".into(),
                at: AccessType::Be,
                res: false,
            },
        );
        assert_eq!(
            node.handle(
                REQ,
                Message::ReleaseReq {
                    txid: t2,
                    requester: "r".into()
                }
            ),
            vec![(REQ, Message::KeyDenied { txid: t2 })]
        );
    }

    #[test]
    fn verifier_fetches_once_and_reports() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let sk = crate::crypto::pke::PkeSecretKey::generate(&mut rng);
        let v = Verifier::new(VerifierKeys::new(sk), AuditLog::in_memory());
        let mut dir = Directory::default();
        dir.bind("r", REQ);
        let mut node = VerifierNode::new(v, dir, LEDGER, KGC);
        let txid = Txid([5; 32]);
        let req = Message::VerifyReq {
            txid,
            requester: "r".into(),
            at_d: AccessType::Be,
            c_pu: vec![0],
        };
        assert_eq!(
            node.handle(REQ, req.clone()),
            vec![(LEDGER, Message::LedgerFetch { txid })]
        );
        let out = node.handle(LEDGER, Message::LedgerRecord { txid, record: None });
        assert_eq!(out.len(), 2);
        assert!(matches!(
            &out[0].1,
            Message::VerifyReport { res: false, .. }
        ));
        assert!(matches!(&out[1].1, Message::LedgerAudit(_)));
    }
}
