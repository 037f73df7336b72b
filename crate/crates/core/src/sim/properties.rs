//! Reliability properties evaluated from a trace alone.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use super::trace::{EventKind, TraceEvent};
use crate::crypto::Digest;
use crate::ledger::Txid;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &'static str, problems: Vec<String>) -> Self {
        Verdict {
            name,
            pass: problems.is_empty(),
            detail: if problems.is_empty() {
                "ok".into()
            } else {
                let extra = problems.len().saturating_sub(3);
                let mut d = problems.into_iter().take(3).collect::<Vec<_>>().join("; ");
                if extra > 0 {
                    d.push_str(&format!("; and {extra} more"));
                }
                d
            },
        }
    }
}

pub const PROPERTY_NAMES: [&str; 7] = [
    "agreement",
    "total_order",
    "uniqueness",
    "authentication",
    "liveness",
    "integrity",
    "gate_ordering",
];

/// Context the trace does not carry by itself.
#[derive(Debug, Clone)]
pub struct Facts {
    pub correct: BTreeSet<u16>,
    /// Whether the run reached quiescence with every session finished.
    pub completed: bool,
    pub stop_reason: String,
}

fn short(h: &Digest) -> String {
    hex::encode(&h[..6])
}

fn sequences(
    events: &[TraceEvent],
    correct: &BTreeSet<u16>,
) -> BTreeMap<u16, Vec<(u64, u16, Digest)>> {
    let mut seqs: BTreeMap<u16, Vec<_>> = correct.iter().map(|r| (*r, Vec::new())).collect();
    for e in events {
        if let EventKind::Commit {
            replica,
            epoch,
            slot,
            h,
        } = &e.kind
        {
            if let Some(s) = seqs.get_mut(replica) {
                s.push((*epoch, *slot, *h));
            }
        }
    }
    seqs
}

pub fn check_all(events: &[TraceEvent], facts: &Facts) -> Vec<Verdict> {
    let seqs = sequences(events, &facts.correct);
    vec![
        agreement(&seqs, facts),
        total_order(&seqs),
        uniqueness(events, &seqs),
        authentication(events, facts),
        liveness(events, &seqs, facts),
        integrity(events),
        gate_ordering(events),
    ]
}

/// At quiescence every correct replica holds the same committed sequence.
fn agreement(seqs: &BTreeMap<u16, Vec<(u64, u16, Digest)>>, facts: &Facts) -> Verdict {
    let mut problems = Vec::new();
    if facts.completed {
        let mut it = seqs.iter();
        if let Some((r0, s0)) = it.next() {
            for (r, s) in it {
                if s.len() != s0.len() {
                    problems.push(format!(
                        "replica {r} committed {} entries, replica {r0} {}",
                        s.len(),
                        s0.len()
                    ));
                }
            }
        }
    }
    // the prefix check below also covers agreement on content
    let order = total_order(seqs);
    if !order.pass {
        problems.push(order.detail);
    }
    Verdict::new("agreement", problems)
}

/// Committed sequences are pairwise prefix-consistent.
fn total_order(seqs: &BTreeMap<u16, Vec<(u64, u16, Digest)>>) -> Verdict {
    let mut problems = Vec::new();
    let all: Vec<_> = seqs.iter().collect();
    for (i, (ra, a)) in all.iter().enumerate() {
        for (rb, b) in &all[i + 1..] {
            if let Some(k) = a.iter().zip(b.iter()).position(|(x, y)| x != y) {
                problems.push(format!(
                    "replicas {ra} and {rb} diverge at position {k}: {} vs {}",
                    short(&a[k].2),
                    short(&b[k].2)
                ));
            }
        }
    }
    Verdict::new("total_order", problems)
}

fn uniqueness(events: &[TraceEvent], seqs: &BTreeMap<u16, Vec<(u64, u16, Digest)>>) -> Verdict {
    let mut problems = Vec::new();
    for (r, s) in seqs {
        let mut hs = HashSet::new();
        for (epoch, slot, h) in s {
            if !hs.insert(*h) {
                problems.push(format!(
                    "replica {r} committed {} twice (epoch {epoch}, slot {slot})",
                    short(h)
                ));
            }
        }
    }
    let mut delivered: HashSet<(&str, Txid)> = HashSet::new();
    for e in events {
        if let EventKind::Delivered {
            requester, txid, ..
        } = &e.kind
        {
            if !delivered.insert((requester.as_str(), *txid)) {
                problems.push(format!("{requester} delivered {txid} twice"));
            }
        }
    }
    Verdict::new("uniqueness", problems)
}

/// Every committed transaction was written by a registered owner; forged
/// ones never commit.
fn authentication(events: &[TraceEvent], facts: &Facts) -> Verdict {
    let mut written = HashSet::new();
    let mut forged = HashSet::new();
    for e in events {
        match &e.kind {
            EventKind::Write { h, .. } => {
                written.insert(*h);
            }
            EventKind::Forged { h, .. } => {
                forged.insert(*h);
            }
            _ => {}
        }
    }
    let mut problems = Vec::new();
    for e in events {
        if let EventKind::Commit { replica, h, .. } = &e.kind {
            if !facts.correct.contains(replica) {
                continue;
            }
            if forged.contains(h) {
                problems.push(format!("replica {replica} committed forged {}", short(h)));
            } else if !written.contains(h) {
                problems.push(format!("replica {replica} committed unknown {}", short(h)));
            }
        }
    }
    Verdict::new("authentication", problems)
}

/// Every write admitted at a correct replica commits at every correct
/// replica, and every session finished.
fn liveness(
    events: &[TraceEvent],
    seqs: &BTreeMap<u16, Vec<(u64, u16, Digest)>>,
    facts: &Facts,
) -> Verdict {
    let mut problems = Vec::new();
    if !facts.completed {
        problems.push(format!("run did not complete: {}", facts.stop_reason));
    }
    let committed: BTreeMap<u16, HashSet<Digest>> = seqs
        .iter()
        .map(|(r, s)| (*r, s.iter().map(|x| x.2).collect()))
        .collect();
    let mut admitted = BTreeSet::new();
    let mut acked = HashSet::new();
    let mut written = BTreeSet::new();
    for e in events {
        match &e.kind {
            EventKind::Admit { replica, h } if facts.correct.contains(replica) => {
                admitted.insert(*h);
            }
            EventKind::Acked { h, .. } => {
                acked.insert(*h);
            }
            EventKind::Write { h, .. } => {
                written.insert(*h);
            }
            _ => {}
        }
    }
    for h in &admitted {
        for (r, set) in &committed {
            if !set.contains(h) {
                problems.push(format!(
                    "{} admitted but not committed at replica {r}",
                    short(h)
                ));
            }
        }
    }
    let unacked = written.iter().filter(|h| !acked.contains(*h)).count();
    if unacked > 0 {
        problems.push(format!("{unacked} writes never reached f+1 acks"));
    }
    Verdict::new("liveness", problems)
}

fn integrity(events: &[TraceEvent]) -> Verdict {
    let problems = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Delivered {
                requester,
                txid,
                ok: false,
            } => Some(format!("{requester} delivered wrong data for {txid}")),
            _ => None,
        })
        .collect();
    Verdict::new("integrity", problems)
}

/// No off-chain read leaves a requester before its key was released.
fn gate_ordering(events: &[TraceEvent]) -> Verdict {
    let mut released: HashSet<(&str, Txid)> = HashSet::new();
    let mut problems = Vec::new();
    for e in events {
        match &e.kind {
            EventKind::KeyRelease { requester, txid } => {
                released.insert((requester.as_str(), *txid));
            }
            EventKind::ReadSent {
                requester, txid, ..
            } if !released.contains(&(requester.as_str(), *txid)) => {
                problems.push(format!("{requester} read {txid} before key release"));
            }
            _ => {}
        }
    }
    Verdict::new("gate_ordering", problems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::AccessType;

    fn ev(kind: EventKind) -> TraceEvent {
        TraceEvent { t: 0, seq: 0, kind }
    }

    fn facts() -> Facts {
        Facts {
            correct: [0, 1].into(),
            completed: true,
            stop_reason: "quiescent".into(),
        }
    }

    fn commit(replica: u16, h: u8) -> TraceEvent {
        ev(EventKind::Commit {
            replica,
            epoch: 0,
            slot: 0,
            h: [h; 32],
        })
    }

    fn write(h: u8) -> TraceEvent {
        ev(EventKind::Write {
            owner: 9,
            h: [h; 32],
            at: AccessType::Be,
        })
    }

    fn find<'a>(v: &'a [Verdict], name: &str) -> &'a Verdict {
        v.iter().find(|x| x.name == name).unwrap()
    }

    #[test]
    fn honest_trace_passes() {
        let t = vec![
            write(1),
            write(2),
            commit(0, 1),
            commit(1, 1),
            commit(0, 2),
            commit(1, 2),
        ];
        let mut t = t;
        t.push(ev(EventKind::Acked {
            owner: 9,
            h: [1; 32],
        }));
        t.push(ev(EventKind::Acked {
            owner: 9,
            h: [2; 32],
        }));
        let v = check_all(&t, &facts());
        assert!(v.iter().all(|x| x.pass), "{v:?}");
        assert_eq!(v.len(), PROPERTY_NAMES.len());
    }

    #[test]
    fn divergence_and_duplicates_are_caught() {
        let t = vec![write(1), write(2), commit(0, 1), commit(1, 2), commit(0, 1)];
        let v = check_all(&t, &facts());
        assert!(!find(&v, "total_order").pass);
        assert!(!find(&v, "agreement").pass);
        assert!(!find(&v, "uniqueness").pass);
    }

    #[test]
    fn forged_commit_fails_authentication() {
        let t = vec![
            ev(EventKind::Forged { by: 3, h: [5; 32] }),
            commit(0, 5),
            commit(1, 5),
        ];
        assert!(!find(&check_all(&t, &facts()), "authentication").pass);
        // a faulty replica's log is not judged
        let t = vec![commit(3, 7)];
        assert!(find(&check_all(&t, &facts()), "authentication").pass);
    }

    #[test]
    fn read_before_release_breaks_gate() {
        let txid = Txid([1; 32]);
        let r = "alice".to_string();
        let t = vec![
            ev(EventKind::ReadSent {
                requester: r.clone(),
                txid,
                to: 0,
            }),
            ev(EventKind::KeyRelease {
                requester: r.clone(),
                txid,
            }),
        ];
        assert!(!find(&check_all(&t, &facts()), "gate_ordering").pass);
        let t = vec![
            ev(EventKind::KeyRelease {
                requester: r.clone(),
                txid,
            }),
            ev(EventKind::ReadSent {
                requester: r,
                txid,
                to: 0,
            }),
        ];
        assert!(find(&check_all(&t, &facts()), "gate_ordering").pass);
    }

    #[test]
    fn liveness_needs_completion_and_commits() {
        let t = vec![
            write(1),
            ev(EventKind::Admit {
                replica: 0,
                h: [1; 32],
            }),
            commit(0, 1),
        ];
        let v = check_all(&t, &facts());
        assert!(!find(&v, "liveness").pass);
        let mut f = facts();
        f.completed = false;
        f.stop_reason = "step budget".into();
        let v = check_all(&[], &f);
        assert!(!find(&v, "liveness").pass);
    }

    #[test]
    fn wrong_delivery_fails_integrity() {
        let t = vec![ev(EventKind::Delivered {
            requester: "a".into(),
            txid: Txid([0; 32]),
            ok: false,
        })];
        assert!(!find(&check_all(&t, &facts()), "integrity").pass);
    }
}
