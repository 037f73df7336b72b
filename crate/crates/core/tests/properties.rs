use std::collections::BTreeSet;
use std::io::Cursor;

use proptest::prelude::*;

use facos::crypto::be::SubtreeKeyTree;
use facos::crypto::Formula;
use facos::ledger::Txid;
use facos::sim::{self, SimConfig};
use facos::wire::{read_frame, Frame};

fn frame() -> impl Strategy<Value = Frame> {
    (
        any::<u64>(),
        any::<u16>(),
        any::<u8>(),
        any::<u16>(),
        prop::collection::vec(any::<u8>(), 0..512),
    )
        .prop_map(|(epoch, instance, msg_type, sender, body)| Frame {
            epoch,
            instance,
            msg_type,
            sender,
            body,
        })
}

fn formula() -> impl Strategy<Value = String> {
    let leaf = (0..6u8).prop_map(|i| format!("a{i}"));
    leaf.prop_recursive(3, 12, 3, |inner| {
        (prop::collection::vec(inner, 2..4), any::<bool>())
            .prop_map(|(kids, and)| format!("({})", kids.join(if and { " AND " } else { " OR " })))
    })
}

proptest! {
    #[test]
    fn frames_round_trip(f in frame()) {
        let bytes = f.encode();
        prop_assert_eq!(Frame::decode(&bytes).unwrap(), f.clone());
        let mut cur = Cursor::new(bytes);
        prop_assert_eq!(read_frame(&mut cur).unwrap(), Some(f));
        prop_assert_eq!(read_frame(&mut cur).unwrap(), None);
    }

    #[test]
    fn truncated_frames_never_decode(f in frame(), cut in 1usize..32) {
        let bytes = f.encode();
        let cut = cut.min(bytes.len());
        prop_assert!(Frame::decode(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn policy_text_round_trips(src in formula(), held in prop::collection::btree_set((0..6u8).prop_map(|i| format!("a{i}")), 0..6)) {
        let f = Formula::parse(&src).unwrap();
        let again = Formula::parse(&f.to_string()).unwrap();
        prop_assert_eq!(&again, &f);
        prop_assert_eq!(again.evaluate(&held), f.evaluate(&held));
        // monotone: more attributes never revoke access
        let all: BTreeSet<String> = (0..6).map(|i| format!("a{i}")).collect();
        if f.evaluate(&held) {
            prop_assert!(f.evaluate(&all));
        }
    }

    #[test]
    fn cover_is_exact(revoked in prop::collection::btree_set(0usize..16, 0..15)) {
        let tree = SubtreeKeyTree::build(16, &[7; 32]).unwrap();
        let cover = tree.cover(&revoked).unwrap();
        for leaf in 0..16 {
            let node = tree.leaf_node(leaf);
            let mut ancestors = 0;
            let mut cur = Some(node);
            while let Some(c) = cur {
                ancestors += cover.nodes().contains(&c) as usize;
                cur = facos::crypto::be::parent(c);
            }
            prop_assert_eq!(ancestors, usize::from(!revoked.contains(&leaf)), "leaf {}", leaf);
        }
    }

    #[test]
    fn txid_hex_round_trips(raw in any::<[u8; 32]>()) {
        let t = Txid(raw);
        let s = t.to_string();
        prop_assert_eq!(s.len(), 64);
        prop_assert!(s.chars().all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c)));
        prop_assert_eq!(s.parse::<Txid>().unwrap(), t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn small_scenarios_are_safe_and_deterministic(
        seed in any::<u64>(),
        adv in prop::sample::select(vec!["none", "crash:0@0", "crash:2@1500", "mute:1", "delay:3:300", "garbage:2", "equivocate:1"]),
        batch in prop::sample::select(vec![4usize, 12, 40]),
        fifo in any::<bool>(),
    ) {
        let cfg = SimConfig { seed, writes: 24, read_every: 4, adversary: adv.into(), batch, fifo, ..SimConfig::default() };
        let a = sim::run(cfg.clone()).unwrap();
        prop_assert!(a.report.all_pass(), "{}", sim::verdict_table(&a.report.verdicts));
        prop_assert_eq!(a.report.stats.writes_done, 24);
        let b = sim::run(cfg).unwrap();
        prop_assert_eq!(a.report.trace_hash, b.report.trace_hash);
    }
}
