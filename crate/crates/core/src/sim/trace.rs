//! Totally ordered event trace with a stable hash and NDJSON export.

use std::io::{self, Write};

use serde::Serialize;
use sha2::{Digest as _, Sha256};

use crate::codec::Writer;
use crate::crypto::{AccessType, Digest};
use crate::ledger::Txid;
use crate::wire::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Deliver {
        from: NodeId,
        to: NodeId,
        msg: &'static str,
        bytes: usize,
    },
    Drop {
        from: NodeId,
        to: NodeId,
        msg: &'static str,
    },
    Timer {
        node: NodeId,
    },
    Write {
        owner: NodeId,
        #[serde(with = "hex_digest")]
        h: Digest,
        at: AccessType,
    },
    WriteRefused {
        owner: NodeId,
        reason: String,
    },
    Admit {
        replica: NodeId,
        #[serde(with = "hex_digest")]
        h: Digest,
    },
    Reject {
        replica: NodeId,
        #[serde(with = "hex_digest")]
        h: Digest,
        reason: String,
    },
    Commit {
        replica: NodeId,
        epoch: u64,
        slot: u16,
        #[serde(with = "hex_digest")]
        h: Digest,
    },
    Conflict {
        replica: NodeId,
        #[serde(with = "hex_digest")]
        h: Digest,
    },
    EpochCommitted {
        replica: NodeId,
        epoch: u64,
        txs: usize,
    },
    Evidence {
        replica: NodeId,
        detail: String,
    },
    Forged {
        by: NodeId,
        #[serde(with = "hex_digest")]
        h: Digest,
    },
    Acked {
        owner: NodeId,
        #[serde(with = "hex_digest")]
        h: Digest,
    },
    Anchored {
        owner: NodeId,
        #[serde(with = "hex_digest")]
        h: Digest,
        txid: Txid,
    },
    KeyRelease {
        requester: String,
        txid: Txid,
    },
    KeyDenied {
        requester: String,
        txid: Txid,
    },
    ReadSent {
        requester: String,
        txid: Txid,
        to: NodeId,
    },
    Delivered {
        requester: String,
        txid: Txid,
        ok: bool,
    },
    ReadFailed {
        requester: String,
        txid: Txid,
        reason: String,
    },
}

mod hex_digest {
    pub fn serialize<S: serde::Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub t: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl TraceEvent {
    fn write(&self, w: &mut Writer) {
        w.u64(self.t).u64(self.seq);
        match &self.kind {
            EventKind::Deliver {
                from,
                to,
                msg,
                bytes,
            } => {
                w.u8(0).u16(*from).u16(*to).str(msg).u64(*bytes as u64);
            }
            EventKind::Drop { from, to, msg } => {
                w.u8(1).u16(*from).u16(*to).str(msg);
            }
            EventKind::Timer { node } => {
                w.u8(2).u16(*node);
            }
            EventKind::Write { owner, h, at } => {
                w.u8(3).u16(*owner).raw(h).u8(at.to_byte());
            }
            EventKind::WriteRefused { owner, reason } => {
                w.u8(4).u16(*owner).str(reason);
            }
            EventKind::Admit { replica, h } => {
                w.u8(5).u16(*replica).raw(h);
            }
            EventKind::Reject { replica, h, reason } => {
                w.u8(6).u16(*replica).raw(h).str(reason);
            }
            EventKind::Commit {
                replica,
                epoch,
                slot,
                h,
            } => {
                w.u8(7).u16(*replica).u64(*epoch).u16(*slot).raw(h);
            }
            EventKind::Conflict { replica, h } => {
                w.u8(8).u16(*replica).raw(h);
            }
            EventKind::EpochCommitted {
                replica,
                epoch,
                txs,
            } => {
                w.u8(9).u16(*replica).u64(*epoch).u64(*txs as u64);
            }
            EventKind::Evidence { replica, detail } => {
                w.u8(10).u16(*replica).str(detail);
            }
            EventKind::Forged { by, h } => {
                w.u8(11).u16(*by).raw(h);
            }
            EventKind::Acked { owner, h } => {
                w.u8(12).u16(*owner).raw(h);
            }
            EventKind::Anchored { owner, h, txid } => {
                w.u8(13).u16(*owner).raw(h).raw(&txid.0);
            }
            EventKind::KeyRelease { requester, txid } => {
                w.u8(14).str(requester).raw(&txid.0);
            }
            EventKind::KeyDenied { requester, txid } => {
                w.u8(15).str(requester).raw(&txid.0);
            }
            EventKind::ReadSent {
                requester,
                txid,
                to,
            } => {
                w.u8(16).str(requester).raw(&txid.0).u16(*to);
            }
            EventKind::Delivered {
                requester,
                txid,
                ok,
            } => {
                w.u8(17).str(requester).raw(&txid.0).u8(*ok as u8);
            }
            EventKind::ReadFailed {
                requester,
                txid,
                reason,
            } => {
                w.u8(18).str(requester).raw(&txid.0).str(reason);
            }
        }
    }
}

/// Events in order, hashed incrementally.
#[derive(Clone)]
pub struct Trace {
    events: Vec<TraceEvent>,
    hasher: Sha256,
    keep: bool,
    len: u64,
}

impl std::fmt::Debug for Trace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trace").field("len", &self.len).finish()
    }
}

impl Default for Trace {
    fn default() -> Self {
        Trace::new(true)
    }
}

impl Trace {
    /// With `keep = false` only the hash and protocol-level events are retained.
    pub fn new(keep: bool) -> Self {
        Trace {
            events: Vec::new(),
            hasher: Sha256::new(),
            keep,
            len: 0,
        }
    }

    pub fn push(&mut self, t: u64, kind: EventKind) {
        let ev = TraceEvent {
            t,
            seq: self.len,
            kind,
        };
        let mut w = Writer::with_capacity(64);
        ev.write(&mut w);
        let b = w.finish();
        self.hasher.update((b.len() as u32).to_be_bytes());
        self.hasher.update(&b);
        self.len += 1;
        if self.keep
            || !matches!(
                ev.kind,
                EventKind::Deliver { .. } | EventKind::Drop { .. } | EventKind::Timer { .. }
            )
        {
            self.events.push(ev);
        }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn hash(&self) -> Digest {
        self.hasher.clone().finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }

    pub fn write_ndjson(&self, w: &mut impl Write) -> io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut *w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_order_and_content() {
        let mut a = Trace::new(true);
        let mut b = Trace::new(false);
        for tr in [&mut a, &mut b] {
            tr.push(1, EventKind::Timer { node: 3 });
            tr.push(
                2,
                EventKind::Admit {
                    replica: 0,
                    h: [1; 32],
                },
            );
        }
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.events().len(), 2);
        assert_eq!(b.events().len(), 1);
        let mut c = Trace::new(true);
        c.push(
            2,
            EventKind::Admit {
                replica: 0,
                h: [1; 32],
            },
        );
        c.push(1, EventKind::Timer { node: 3 });
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn ndjson_lines_are_flat_objects() {
        let mut t = Trace::new(true);
        t.push(
            7,
            EventKind::Commit {
                replica: 1,
                epoch: 2,
                slot: 3,
                h: [0xab; 32],
            },
        );
        let mut out = Vec::new();
        t.write_ndjson(&mut out).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v["kind"], "commit");
        assert_eq!(v["t"], 7);
        assert_eq!(v["h"].as_str().unwrap().len(), 64);
    }
}
