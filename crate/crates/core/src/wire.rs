//! Length-prefixed frames shared by every actor.
//!
//! ```text
//! u32 len | "FBFT" | version u16 | epoch u64 | instance u16 | msg_type u8 | sender u16 | body
//! ```
//!
//! `len` counts everything after itself. `epoch`/`instance` address BFT
//! protocol instances and are zero for other traffic.

use std::io::{self, Read, Write};

use crate::bft::aba::AbaMsg;
use crate::bft::rbc::RbcMsg;
use crate::bft::tx::Tx;
use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{AccessType, Digest};
use crate::kgc::Role;
use crate::ledger::{OnChainRecord, Txid};
use crate::verifier::AuditEntry;

pub const MAGIC: &[u8; 4] = b"FBFT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 8 + 2 + 1 + 2;
/// Upper bound accepted from a socket before allocating.
pub const MAX_FRAME: usize = 64 << 20;

pub type NodeId = u16;

pub mod msg_type {
    pub const RBC_INIT: u8 = 0x10;
    pub const RBC_ECHO: u8 = 0x11;
    pub const RBC_READY: u8 = 0x12;
    pub const ABA_BVAL: u8 = 0x18;
    pub const ABA_AUX: u8 = 0x19;
    pub const ABA_CONF: u8 = 0x1a;
    pub const ABA_TERM: u8 = 0x1b;
    pub const TX_SUBMIT: u8 = 0x20;
    pub const TX_GOSSIP: u8 = 0x21;
    pub const TX_ACK: u8 = 0x22;
    pub const READ_REQ: u8 = 0x28;
    pub const READ_RESP: u8 = 0x29;
    pub const SLOT_REQ: u8 = 0x2a;
    pub const SLOT_RESP: u8 = 0x2b;
    // 0x40..=0x4f reserved for ledger traffic
    pub const LEDGER_SUBMIT: u8 = 0x40;
    pub const LEDGER_RECEIPT: u8 = 0x41;
    pub const LEDGER_FETCH: u8 = 0x42;
    pub const LEDGER_RECORD: u8 = 0x43;
    pub const LEDGER_AUDIT: u8 = 0x44;
    pub const VERIFY_REQ: u8 = 0x50;
    pub const VERIFY_REPORT: u8 = 0x51;
    pub const KGC_REGISTER: u8 = 0x58;
    pub const KGC_REGISTERED: u8 = 0x59;
    pub const KGC_RELEASE_REQ: u8 = 0x5a;
    pub const KGC_RELEASE: u8 = 0x5b;
    pub const KGC_DENIED: u8 = 0x5c;
    pub const KGC_DEPOSIT: u8 = 0x5d;
    pub const KGC_DEPOSIT_ACK: u8 = 0x5e;
    pub const SHARE_TXID: u8 = 0x60;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub epoch: u64,
    pub instance: u16,
    pub msg_type: u8,
    pub sender: NodeId,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.body.len() + HEADER_LEN + 4);
        w.u32((HEADER_LEN + self.body.len()) as u32)
            .raw(MAGIC)
            .u16(VERSION)
            .u64(self.epoch)
            .u16(self.instance)
            .u8(self.msg_type)
            .u16(self.sender)
            .raw(&self.body);
        w.finish()
    }

    /// Decodes exactly one frame including its length prefix.
    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let len = r.u32()? as usize;
        if len != r.remaining() {
            return Err(DecodeError::Invalid("frame length"));
        }
        Self::decode_unprefixed(r.rest())
    }

    fn decode_unprefixed(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        if r.raw(4)? != MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let v = r.u16()?;
        if v != VERSION {
            return Err(DecodeError::Version(v));
        }
        Ok(Frame {
            epoch: r.u64()?,
            instance: r.u16()?,
            msg_type: r.u8()?,
            sender: r.u16()?,
            body: r.rest().to_vec(),
        })
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())
}

/// Reads one frame from a byte stream; `Ok(None)` on clean EOF.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if !(HEADER_LEN..=MAX_FRAME).contains(&len) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "frame length out of range",
        ));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Frame::decode_unprefixed(&buf)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// A replica's answer to a read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadReply {
    NotFound,
    /// ABE/BE: the stored bundle verbatim.
    Sigma(Vec<u8>),
    /// TE: the stored bundle plus this replica's encoded decryption share.
    Te {
        sigma: Vec<u8>,
        share: Vec<u8>,
    },
    /// The stored value failed to decode.
    Corrupt,
}

/// What a replica holds for one proposer slot of a committed epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotView {
    /// Epoch not committed here yet.
    Unknown,
    Empty,
    Filled(Vec<Digest>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Rbc {
        epoch: u64,
        proposer: u16,
        msg: RbcMsg,
    },
    Aba {
        epoch: u64,
        instance: u16,
        msg: AbaMsg,
    },
    TxSubmit(Tx),
    TxGossip(Tx),
    TxAck {
        h: Digest,
    },
    ReadReq {
        h: Digest,
    },
    ReadResp {
        h: Digest,
        reply: ReadReply,
    },
    SlotReq {
        epoch: u64,
        proposer: u16,
    },
    SlotResp {
        epoch: u64,
        proposer: u16,
        view: SlotView,
    },
    LedgerSubmit {
        nonce: u64,
        record: OnChainRecord,
    },
    /// `None` when the ledger refused the record.
    LedgerReceipt {
        nonce: u64,
        txid: Option<Txid>,
    },
    LedgerFetch {
        txid: Txid,
    },
    LedgerRecord {
        txid: Txid,
        record: Option<OnChainRecord>,
    },
    LedgerAudit(AuditEntry),
    VerifyReq {
        txid: Txid,
        requester: String,
        at_d: AccessType,
        c_pu: Vec<u8>,
    },
    VerifyReport {
        txid: Txid,
        requester: String,
        at: AccessType,
        res: bool,
    },
    Register {
        identity: String,
        role: Role,
        creds: Vec<u8>,
    },
    Registered {
        identity: String,
        ok: bool,
        body: Vec<u8>,
    },
    ReleaseReq {
        txid: Txid,
        requester: String,
    },
    KeyRelease {
        txid: Txid,
        at: AccessType,
        key: Vec<u8>,
    },
    KeyDenied {
        txid: Txid,
    },
    Deposit {
        txid: Txid,
        sk: [u8; 32],
    },
    DepositAck {
        txid: Txid,
    },
    ShareTxid {
        txid: Txid,
        at: AccessType,
    },
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        use msg_type::*;
        match self {
            Message::Rbc { msg, .. } => match msg {
                RbcMsg::Init(_) => RBC_INIT,
                RbcMsg::Echo(_) => RBC_ECHO,
                RbcMsg::Ready(_) => RBC_READY,
            },
            Message::Aba { msg, .. } => ABA_BVAL + msg.kind(),
            Message::TxSubmit(_) => TX_SUBMIT,
            Message::TxGossip(_) => TX_GOSSIP,
            Message::TxAck { .. } => TX_ACK,
            Message::ReadReq { .. } => READ_REQ,
            Message::ReadResp { .. } => READ_RESP,
            Message::SlotReq { .. } => SLOT_REQ,
            Message::SlotResp { .. } => SLOT_RESP,
            Message::LedgerSubmit { .. } => LEDGER_SUBMIT,
            Message::LedgerReceipt { .. } => LEDGER_RECEIPT,
            Message::LedgerFetch { .. } => LEDGER_FETCH,
            Message::LedgerRecord { .. } => LEDGER_RECORD,
            Message::LedgerAudit(_) => LEDGER_AUDIT,
            Message::VerifyReq { .. } => VERIFY_REQ,
            Message::VerifyReport { .. } => VERIFY_REPORT,
            Message::Register { .. } => KGC_REGISTER,
            Message::Registered { .. } => KGC_REGISTERED,
            Message::ReleaseReq { .. } => KGC_RELEASE_REQ,
            Message::KeyRelease { .. } => KGC_RELEASE,
            Message::KeyDenied { .. } => KGC_DENIED,
            Message::Deposit { .. } => KGC_DEPOSIT,
            Message::DepositAck { .. } => KGC_DEPOSIT_ACK,
            Message::ShareTxid { .. } => SHARE_TXID,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Rbc { msg, .. } => match msg {
                RbcMsg::Init(_) => "RBC_INIT",
                RbcMsg::Echo(_) => "RBC_ECHO",
                RbcMsg::Ready(_) => "RBC_READY",
            },
            Message::Aba { msg, .. } => match msg {
                AbaMsg::Bval { .. } => "ABA_BVAL",
                AbaMsg::Aux { .. } => "ABA_AUX",
                AbaMsg::Conf { .. } => "ABA_CONF",
                AbaMsg::Term(_) => "ABA_TERM",
            },
            Message::TxSubmit(_) => "TX_SUBMIT",
            Message::TxGossip(_) => "TX_GOSSIP",
            Message::TxAck { .. } => "TX_ACK",
            Message::ReadReq { .. } => "READ_REQ",
            Message::ReadResp { .. } => "READ_RESP",
            Message::SlotReq { .. } => "SLOT_REQ",
            Message::SlotResp { .. } => "SLOT_RESP",
            Message::LedgerSubmit { .. } => "LEDGER_SUBMIT",
            Message::LedgerReceipt { .. } => "LEDGER_RECEIPT",
            Message::LedgerFetch { .. } => "LEDGER_FETCH",
            Message::LedgerRecord { .. } => "LEDGER_RECORD",
            Message::LedgerAudit(_) => "LEDGER_AUDIT",
            Message::VerifyReq { .. } => "VERIFY_REQ",
            Message::VerifyReport { .. } => "VERIFY_REPORT",
            Message::Register { .. } => "REGISTER",
            Message::Registered { .. } => "REGISTERED",
            Message::ReleaseReq { .. } => "RELEASE_REQ",
            Message::KeyRelease { .. } => "KEY_RELEASE",
            Message::KeyDenied { .. } => "KEY_DENIED",
            Message::Deposit { .. } => "DEPOSIT",
            Message::DepositAck { .. } => "DEPOSIT_ACK",
            Message::ShareTxid { .. } => "SHARE_TXID",
        }
    }

    pub fn to_frame(&self, sender: NodeId) -> Frame {
        let (epoch, instance) = match self {
            Message::Rbc {
                epoch, proposer, ..
            } => (*epoch, *proposer),
            Message::Aba {
                epoch, instance, ..
            } => (*epoch, *instance),
            Message::SlotReq { epoch, proposer }
            | Message::SlotResp {
                epoch, proposer, ..
            } => (*epoch, *proposer),
            Message::LedgerSubmit { nonce, .. } | Message::LedgerReceipt { nonce, .. } => {
                (*nonce, 0)
            }
            _ => (0, 0),
        };
        let mut w = Writer::new();
        self.write_body(&mut w);
        Frame {
            epoch,
            instance,
            msg_type: self.msg_type(),
            sender,
            body: w.finish(),
        }
    }

    pub fn encode(&self, sender: NodeId) -> Vec<u8> {
        self.to_frame(sender).encode()
    }

    fn write_body(&self, w: &mut Writer) {
        match self {
            Message::Rbc { msg, .. } => msg.write(w),
            Message::Aba { msg, .. } => msg.write(w),
            Message::TxSubmit(tx) | Message::TxGossip(tx) => tx.write(w),
            Message::TxAck { h } | Message::ReadReq { h } => {
                w.raw(h);
            }
            Message::ReadResp { h, reply } => {
                w.raw(h);
                match reply {
                    ReadReply::NotFound => {
                        w.u8(0);
                    }
                    ReadReply::Sigma(s) => {
                        w.u8(1).bytes(s);
                    }
                    ReadReply::Te { sigma, share } => {
                        w.u8(2).bytes(sigma).bytes(share);
                    }
                    ReadReply::Corrupt => {
                        w.u8(3);
                    }
                }
            }
            Message::SlotReq { .. } => {}
            Message::SlotResp { view, .. } => match view {
                SlotView::Unknown => {
                    w.u8(0);
                }
                SlotView::Empty => {
                    w.u8(1);
                }
                SlotView::Filled(hs) => {
                    w.u8(2).u32(hs.len() as u32);
                    for h in hs {
                        w.raw(h);
                    }
                }
            },
            Message::LedgerSubmit { record, .. } => record.write(w),
            Message::LedgerReceipt { txid, .. } => match txid {
                Some(t) => {
                    w.u8(1).raw(&t.0);
                }
                None => {
                    w.u8(0);
                }
            },
            Message::LedgerFetch { txid }
            | Message::KeyDenied { txid }
            | Message::DepositAck { txid } => {
                w.raw(&txid.0);
            }
            Message::LedgerRecord { txid, record } => {
                w.raw(&txid.0);
                match record {
                    Some(r) => {
                        w.u8(1);
                        r.write(w);
                    }
                    None => {
                        w.u8(0);
                    }
                }
            }
            Message::LedgerAudit(a) => a.write(w),
            Message::VerifyReq {
                txid,
                requester,
                at_d,
                c_pu,
            } => {
                w.raw(&txid.0).str(requester).u8(at_d.to_byte()).bytes(c_pu);
            }
            Message::VerifyReport {
                txid,
                requester,
                at,
                res,
            } => {
                w.raw(&txid.0)
                    .str(requester)
                    .u8(at.to_byte())
                    .u8(*res as u8);
            }
            Message::Register {
                identity,
                role,
                creds,
            } => {
                w.str(identity).u8(role.to_byte()).bytes(creds);
            }
            Message::Registered { identity, ok, body } => {
                w.str(identity).u8(*ok as u8).bytes(body);
            }
            Message::ReleaseReq { txid, requester } => {
                w.raw(&txid.0).str(requester);
            }
            Message::KeyRelease { txid, at, key } => {
                w.raw(&txid.0).u8(at.to_byte()).bytes(key);
            }
            Message::Deposit { txid, sk } => {
                w.raw(&txid.0).raw(sk);
            }
            Message::ShareTxid { txid, at } => {
                w.raw(&txid.0).u8(at.to_byte());
            }
        }
    }

    pub fn from_frame(f: &Frame) -> Result<Self, DecodeError> {
        use msg_type::*;
        let mut r = Reader::new(&f.body);
        let txid = |r: &mut Reader<'_>| -> Result<Txid, DecodeError> { Ok(Txid(r.array()?)) };
        let flag = |v: u8| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Invalid("flag")),
        };
        let m = match f.msg_type {
            RBC_INIT..=RBC_READY => Message::Rbc {
                epoch: f.epoch,
                proposer: f.instance,
                msg: RbcMsg::read(f.msg_type - RBC_INIT, &mut r)?,
            },
            ABA_BVAL..=ABA_TERM => Message::Aba {
                epoch: f.epoch,
                instance: f.instance,
                msg: AbaMsg::read(f.msg_type - ABA_BVAL, &mut r)?,
            },
            TX_SUBMIT => Message::TxSubmit(Tx::read(&mut r)?),
            TX_GOSSIP => Message::TxGossip(Tx::read(&mut r)?),
            TX_ACK => Message::TxAck { h: r.array()? },
            READ_REQ => Message::ReadReq { h: r.array()? },
            READ_RESP => {
                let h = r.array()?;
                let reply = match r.u8()? {
                    0 => ReadReply::NotFound,
                    1 => ReadReply::Sigma(r.bytes()?.to_vec()),
                    2 => ReadReply::Te {
                        sigma: r.bytes()?.to_vec(),
                        share: r.bytes()?.to_vec(),
                    },
                    3 => ReadReply::Corrupt,
                    t => return Err(DecodeError::UnknownTag(t)),
                };
                Message::ReadResp { h, reply }
            }
            SLOT_REQ => Message::SlotReq {
                epoch: f.epoch,
                proposer: f.instance,
            },
            SLOT_RESP => {
                let view = match r.u8()? {
                    0 => SlotView::Unknown,
                    1 => SlotView::Empty,
                    2 => {
                        let k = r.u32()? as usize;
                        let mut hs = Vec::with_capacity(k.min(4096));
                        for _ in 0..k {
                            hs.push(r.array()?);
                        }
                        SlotView::Filled(hs)
                    }
                    t => return Err(DecodeError::UnknownTag(t)),
                };
                Message::SlotResp {
                    epoch: f.epoch,
                    proposer: f.instance,
                    view,
                }
            }
            LEDGER_SUBMIT => Message::LedgerSubmit {
                nonce: f.epoch,
                record: OnChainRecord::read(&mut r)?,
            },
            LEDGER_RECEIPT => Message::LedgerReceipt {
                nonce: f.epoch,
                txid: if flag(r.u8()?)? {
                    Some(txid(&mut r)?)
                } else {
                    None
                },
            },
            LEDGER_FETCH => Message::LedgerFetch {
                txid: txid(&mut r)?,
            },
            LEDGER_RECORD => {
                let t = txid(&mut r)?;
                let record = if flag(r.u8()?)? {
                    Some(OnChainRecord::read(&mut r)?)
                } else {
                    None
                };
                Message::LedgerRecord { txid: t, record }
            }
            LEDGER_AUDIT => Message::LedgerAudit(AuditEntry::read(&mut r)?),
            VERIFY_REQ => Message::VerifyReq {
                txid: txid(&mut r)?,
                requester: r.string()?,
                at_d: AccessType::from_byte(r.u8()?)?,
                c_pu: r.bytes()?.to_vec(),
            },
            VERIFY_REPORT => Message::VerifyReport {
                txid: txid(&mut r)?,
                requester: r.string()?,
                at: AccessType::from_byte(r.u8()?)?,
                res: flag(r.u8()?)?,
            },
            KGC_REGISTER => Message::Register {
                identity: r.string()?,
                role: Role::from_byte(r.u8()?)?,
                creds: r.bytes()?.to_vec(),
            },
            KGC_REGISTERED => Message::Registered {
                identity: r.string()?,
                ok: flag(r.u8()?)?,
                body: r.bytes()?.to_vec(),
            },
            KGC_RELEASE_REQ => Message::ReleaseReq {
                txid: txid(&mut r)?,
                requester: r.string()?,
            },
            KGC_RELEASE => Message::KeyRelease {
                txid: txid(&mut r)?,
                at: AccessType::from_byte(r.u8()?)?,
                key: r.bytes()?.to_vec(),
            },
            KGC_DENIED => Message::KeyDenied {
                txid: txid(&mut r)?,
            },
            KGC_DEPOSIT => Message::Deposit {
                txid: txid(&mut r)?,
                sk: r.array()?,
            },
            KGC_DEPOSIT_ACK => Message::DepositAck {
                txid: txid(&mut r)?,
            },
            SHARE_TXID => Message::ShareTxid {
                txid: txid(&mut r)?,
                at: AccessType::from_byte(r.u8()?)?,
            },
            t => return Err(DecodeError::UnknownTag(t)),
        };
        r.finish()?;
        Ok(m)
    }

    pub fn decode(buf: &[u8]) -> Result<(NodeId, Self), DecodeError> {
        let f = Frame::decode(buf)?;
        Ok((f.sender, Message::from_frame(&f)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bft::rbc::Body;

    fn samples() -> Vec<Message> {
        let t = Txid([3; 32]);
        let rec = OnChainRecord {
            at: AccessType::Te,
            c_h: vec![1],
            c_p: vec![2],
            owner_id: "o".into(),
            timestamp: 4,
        };
        vec![
            Message::Rbc {
                epoch: 7,
                proposer: 2,
                msg: RbcMsg::Init(Body::Full(vec![1, 2])),
            },
            Message::Rbc {
                epoch: 7,
                proposer: 2,
                msg: RbcMsg::Ready([1; 32]),
            },
            Message::Aba {
                epoch: 1,
                instance: 3,
                msg: AbaMsg::Conf { round: 2, vals: 3 },
            },
            Message::Aba {
                epoch: 1,
                instance: 3,
                msg: AbaMsg::Term(false),
            },
            Message::TxSubmit(Tx {
                owner: 9,
                h: [1; 32],
                sigma: vec![5; 10],
                sig: [6; 64],
            }),
            Message::TxAck { h: [2; 32] },
            Message::ReadReq { h: [2; 32] },
            Message::ReadResp {
                h: [2; 32],
                reply: ReadReply::Te {
                    sigma: vec![1],
                    share: vec![2, 3],
                },
            },
            Message::ReadResp {
                h: [2; 32],
                reply: ReadReply::NotFound,
            },
            Message::SlotReq {
                epoch: 4,
                proposer: 1,
            },
            Message::SlotResp {
                epoch: 4,
                proposer: 1,
                view: SlotView::Filled(vec![[1; 32], [2; 32]]),
            },
            Message::SlotResp {
                epoch: 4,
                proposer: 1,
                view: SlotView::Empty,
            },
            Message::LedgerSubmit {
                nonce: 11,
                record: rec.clone(),
            },
            Message::LedgerReceipt {
                nonce: 11,
                txid: Some(t),
            },
            Message::LedgerReceipt {
                nonce: 12,
                txid: None,
            },
            Message::LedgerFetch { txid: t },
            Message::LedgerRecord {
                txid: t,
                record: Some(rec),
            },
            Message::LedgerRecord {
                txid: t,
                record: None,
            },
            Message::LedgerAudit(AuditEntry {
                timestamp: 1,
                txid: t,
                requester: "r".into(),
                res: true,
                reason: "ok".into(),
            }),
            Message::VerifyReq {
                txid: t,
                requester: "r".into(),
                at_d: AccessType::Abe,
                c_pu: vec![9],
            },
            Message::VerifyReport {
                txid: t,
                requester: "r".into(),
                at: AccessType::Be,
                res: false,
            },
            Message::Register {
                identity: "x".into(),
                role: Role::Requester,
                creds: vec![1],
            },
            Message::Registered {
                identity: "x".into(),
                ok: true,
                body: vec![],
            },
            Message::ReleaseReq {
                txid: t,
                requester: "r".into(),
            },
            Message::KeyRelease {
                txid: t,
                at: AccessType::Be,
                key: vec![4; 32],
            },
            Message::KeyDenied { txid: t },
            Message::Deposit {
                txid: t,
                sk: [8; 32],
            },
            Message::DepositAck { txid: t },
            Message::ShareTxid {
                txid: t,
                at: AccessType::Te,
            },
        ]
    }

    #[test]
    fn every_message_round_trips_through_a_frame() {
        for m in samples() {
            let bytes = m.encode(42);
            assert_eq!(&bytes[4..8], MAGIC);
            let (sender, back) = Message::decode(&bytes).unwrap();
            assert_eq!(sender, 42);
            assert_eq!(back, m, "{}", m.name());
        }
    }

    #[test]
    fn header_layout() {
        let f = Message::Aba {
            epoch: 0x0102,
            instance: 5,
            msg: AbaMsg::Term(true),
        }
        .to_frame(7);
        let b = f.encode();
        assert_eq!(
            u32::from_be_bytes(b[..4].try_into().unwrap()) as usize,
            b.len() - 4
        );
        assert_eq!(&b[8..10], &VERSION.to_be_bytes());
        assert_eq!(&b[10..18], &0x0102u64.to_be_bytes());
        assert_eq!(&b[18..20], &5u16.to_be_bytes());
        assert_eq!(b[20], msg_type::ABA_TERM);
        assert_eq!(&b[21..23], &7u16.to_be_bytes());
    }

    #[test]
    fn rejects_bad_frames() {
        let mut b = Message::TxAck { h: [0; 32] }.encode(1);
        assert!(Message::decode(&b[..b.len() - 1]).is_err());
        b[4] = b'X';
        assert_eq!(Frame::decode(&b), Err(DecodeError::BadMagic));
        let mut b = Message::TxAck { h: [0; 32] }.encode(1);
        b[20] = 0xff;
        assert!(Message::decode(&b).is_err());
    }

    #[test]
    fn stream_reader_handles_back_to_back_frames() {
        let mut buf = Vec::new();
        for m in samples() {
            write_frame(&mut buf, &m.to_frame(3)).unwrap();
        }
        let mut cur = io::Cursor::new(buf);
        let mut n = 0;
        while let Some(f) = read_frame(&mut cur).unwrap() {
            Message::from_frame(&f).unwrap();
            n += 1;
        }
        assert_eq!(n, samples().len());
    }
}
