//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any of them does.
//!
//! Oracles here are written independently of the library: cover sets are
//! checked against a recursive leaf-range cover, policies against a
//! hand-rolled boolean evaluator.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use facos::bench::time_scheme;
use facos::crypto::be::SubtreeKeyTree;
use facos::crypto::te::{self, DecryptionShare};
use facos::crypto::{abe, AccessType, CryptoError, Formula};
use facos::sim::{self, artifacts, SimConfig, GRANTED, REFUSED};

struct Line {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    took: Duration,
}

fn timed(id: u8, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Line {
    let t0 = Instant::now();
    let (pass, detail) = f();
    let took = t0.elapsed();
    let line = Line {
        id,
        name,
        pass,
        detail,
        took,
    };
    println!(
        "criterion {} {:<22} {}  {} ({:.1} s)",
        line.id,
        line.name,
        if line.pass { "PASS" } else { "FAIL" },
        line.detail,
        line.took.as_secs_f64()
    );
    line
}

// ---- 1: cover sets ----

/// Minimal complete-subtree cover of leaves `[lo, lo+len)` rooted at `node`.
fn oracle_cover(node: usize, lo: usize, len: usize, revoked: &BTreeSet<usize>) -> Vec<usize> {
    let hit = revoked.range(lo..lo + len).count();
    if hit == 0 {
        return vec![node];
    }
    if hit == len {
        return Vec::new();
    }
    let half = len / 2;
    let mut v = oracle_cover(2 * node + 1, lo, half, revoked);
    v.extend(oracle_cover(2 * node + 2, lo + half, half, revoked));
    v
}

/// Leaves under `node` in a heap-ordered tree with `n` leaves.
fn leaves_under(node: usize, n: usize) -> std::ops::Range<usize> {
    let depth = (usize::BITS - 1 - (node + 1).leading_zeros()) as usize;
    let leaf_depth = n.trailing_zeros() as usize;
    let span = 1usize << (leaf_depth - depth);
    let first = (node + 1) * span - 1 - (n - 1);
    first..first + span
}

fn criterion_1() -> (bool, String) {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut cases = 0;
    let mut bad = Vec::new();
    for log_n in 1..=10 {
        let n = 1usize << log_n;
        let tree = SubtreeKeyTree::build(n, &[log_n as u8; 32]).expect("tree");
        let all: Vec<usize> = (0..n).collect();
        for _ in 0..200 {
            cases += 1;
            let r = rng.gen_range(0..=n);
            let revoked: BTreeSet<usize> = all.choose_multiple(&mut rng, r).copied().collect();
            let k: Vec<usize> = match tree.cover(&revoked) {
                Ok(c) => c.nodes().iter().copied().collect(),
                Err(CryptoError::EmptyAudience) if r == n => Vec::new(),
                Err(e) => {
                    bad.push(format!("N={n} r={r}: {e}"));
                    continue;
                }
            };
            let bound = if r == 0 {
                1
            } else {
                r * (n as f64 / r as f64).log2().ceil() as usize
            };
            if (r == 0 && k.len() != 1) || k.len() > bound {
                bad.push(format!("N={n} r={r}: |K|={} > {bound}", k.len()));
            }
            // disjoint and exactly the non-revoked leaves
            let mut covered = BTreeSet::new();
            let disjoint = k
                .iter()
                .flat_map(|&node| leaves_under(node, n))
                .all(|l| covered.insert(l));
            let expect: BTreeSet<usize> = all
                .iter()
                .filter(|l| !revoked.contains(l))
                .copied()
                .collect();
            if !disjoint || covered != expect {
                bad.push(format!("N={n} r={r}: not an exact disjoint cover"));
            }
            let minimal = oracle_cover(0, 0, n, &revoked);
            if minimal.len() != k.len() {
                bad.push(format!(
                    "N={n} r={r}: |K|={} but minimal cover has {}",
                    k.len(),
                    minimal.len()
                ));
            }
        }
    }
    (
        bad.is_empty(),
        format!(
            "{cases} cases, {} bad {}",
            bad.len(),
            bad.first().cloned().unwrap_or_default()
        ),
    )
}

// ---- 2: ABE ----

#[derive(Debug, Clone)]
enum Tree {
    Leaf(String),
    Gate(bool, Vec<Tree>), // true = AND
}

impl Tree {
    fn eval(&self, attrs: &BTreeSet<String>) -> bool {
        match self {
            Tree::Leaf(a) => attrs.contains(a),
            Tree::Gate(true, kids) => kids.iter().all(|k| k.eval(attrs)),
            Tree::Gate(false, kids) => kids.iter().any(|k| k.eval(attrs)),
        }
    }

    fn render(&self) -> String {
        match self {
            Tree::Leaf(a) => a.clone(),
            Tree::Gate(and, kids) => {
                let op = if *and { " AND " } else { " OR " };
                format!(
                    "({})",
                    kids.iter().map(Tree::render).collect::<Vec<_>>().join(op)
                )
            }
        }
    }
}

fn random_tree(attrs: &[String], rng: &mut impl Rng) -> Tree {
    if attrs.len() == 1 {
        return Tree::Leaf(attrs[0].clone());
    }
    let parts = rng.gen_range(2..=attrs.len().min(3));
    let mut cuts: Vec<usize> = (1..attrs.len())
        .collect::<Vec<_>>()
        .choose_multiple(rng, parts - 1)
        .copied()
        .collect();
    cuts.sort_unstable();
    cuts.insert(0, 0);
    cuts.push(attrs.len());
    let kids = cuts
        .windows(2)
        .map(|w| random_tree(&attrs[w[0]..w[1]], rng))
        .collect();
    Tree::Gate(rng.gen_bool(0.5), kids)
}

fn criterion_2() -> (bool, String) {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let universe: Vec<String> = (0..8).map(|i| format!("attr{i}")).collect();
    let (pk, msk) = abe::setup(128, &mut rng).expect("setup");
    let (mut cases, mut sat, mut mismatches) = (0, 0, Vec::new());
    while cases < 520 {
        let k = rng.gen_range(1..=6);
        let chosen: Vec<String> = universe.choose_multiple(&mut rng, k).cloned().collect();
        let tree = random_tree(&chosen, &mut rng);
        let formula = Formula::parse(&tree.render()).expect("rendered policy parses");
        let held: BTreeSet<String> = universe
            .iter()
            .filter(|_| rng.gen_bool(0.5))
            .cloned()
            .collect();
        if held.is_empty() {
            continue;
        }
        cases += 1;
        let expect = tree.eval(&held);
        sat += expect as usize;
        let mut m = vec![0u8; 32];
        rng.fill_bytes(&mut m);
        let ct = abe::encrypt(&pk, &m, &formula, &mut rng);
        let sk = abe::keygen(&msk, &held, &mut rng).expect("keygen");
        let ok = match abe::decrypt(&sk, &ct) {
            Ok(out) => expect && out == m,
            Err(CryptoError::Denied) => !expect,
            Err(_) => false,
        };
        if !ok {
            mismatches.push(format!("{} with {held:?}", tree.render()));
        }
    }
    (
        mismatches.is_empty(),
        format!(
            "{cases} pairs ({sat} satisfying), {} mismatches {}",
            mismatches.len(),
            mismatches.first().cloned().unwrap_or_default()
        ),
    )
}

// ---- 3: TE ----

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

fn flip_bit(s: &DecryptionShare, bit: usize) -> DecryptionShare {
    let mut s = s.clone();
    let mut bit = bit;
    if bit < 16 {
        s.replica_id ^= 1 << bit;
        return s;
    }
    bit -= 16;
    for field in [&mut s.share_value, &mut s.proof, &mut s.label] {
        if bit < field.len() * 8 {
            field[bit / 8] ^= 1 << (bit % 8);
            break;
        }
        bit -= field.len() * 8;
    }
    s
}

fn criterion_3() -> (bool, String) {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let label = b"acceptance".to_vec();
    let m = b"threshold plaintext".to_vec();
    let (mut combos, mut bad) = (0, Vec::new());
    for n in 1..=7 {
        for t in 1..=n {
            let keys = te::setup(n, t, &mut rng).expect("setup");
            let ct = te::encrypt(&keys.pk, &m, &label, &mut rng).expect("encrypt");
            let shares: Vec<DecryptionShare> = keys
                .shares
                .iter()
                .map(|s| te::share_dec(s, &ct, &label, &mut rng).expect("share"))
                .collect();
            for sub in subsets(n, t) {
                combos += 1;
                let picked: Vec<DecryptionShare> = sub.iter().map(|&i| shares[i].clone()).collect();
                if te::combine(&keys.pk, &ct, &label, &picked).as_deref() != Ok(&m[..]) {
                    bad.push(format!("n={n} t={t} {sub:?} did not recover"));
                }
            }
            for sub in subsets(n, t - 1) {
                combos += 1;
                let picked: Vec<DecryptionShare> = sub.iter().map(|&i| shares[i].clone()).collect();
                if !matches!(
                    te::combine(&keys.pk, &ct, &label, &picked),
                    Err(CryptoError::InsufficientShares { .. })
                ) {
                    bad.push(format!("n={n} t={t} {sub:?} was not rejected"));
                }
            }
        }
    }
    let keys = te::setup(7, 3, &mut rng).expect("setup");
    let mut false_accepts = 0;
    let mut mutations = 0;
    while mutations < 1000 {
        let ct = te::encrypt(&keys.pk, &m, &label, &mut rng).expect("encrypt");
        for _ in 0..100 {
            let s = &keys.shares[rng.gen_range(0..7)];
            let share = te::share_dec(s, &ct, &label, &mut rng).expect("share");
            let bits = 16 + 8 * (share.share_value.len() + share.proof.len() + share.label.len());
            let mutated = flip_bit(&share, rng.gen_range(0..bits));
            mutations += 1;
            if te::verify_share(&keys.pk, &ct, &label, &mutated) {
                false_accepts += 1;
            }
        }
    }
    (
        bad.is_empty() && false_accepts == 0,
        format!(
            "{combos} subsets, {} bad; {mutations} mutations, {false_accepts} false accepts",
            bad.len()
        ),
    )
}

// ---- 4: BFT reliability ----

fn criterion_4() -> (bool, String) {
    const SEEDS: u64 = 200;
    const SAFETY: [&str; 5] = [
        "agreement",
        "total_order",
        "uniqueness",
        "authentication",
        "liveness",
    ];
    let t0 = Instant::now();
    let (mut runs, mut failing) = (0, Vec::new());
    for seed in 0..SEEDS {
        let r = seed % 4;
        let adversaries = [
            "none".to_string(),
            format!("crash:{r}@{}", (seed % 3) * 10_000),
            format!("mute:{r}"),
            format!("equivocate:{r}"),
        ];
        for adversary in adversaries {
            // writes only: the read path is exercised in criterion 5
            let cfg = SimConfig {
                seed,
                adversary: adversary.clone(),
                read_every: 0,
                ..SimConfig::default()
            };
            assert_eq!((cfg.n, cfg.f, cfg.writes), (4, 1, 1000));
            runs += 1;
            let out = sim::run(cfg).expect("valid config");
            let rep = &out.report;
            let failed: Vec<&str> = SAFETY
                .iter()
                .copied()
                .filter(|v| !rep.verdict(v).is_some_and(|v| v.pass))
                .collect();
            if !failed.is_empty() || !rep.completed || rep.stats.writes_done != 1000 {
                failing.push(format!(
                    "seed {seed} {adversary}: {failed:?} {}",
                    rep.stop_reason
                ));
            }
        }
    }
    let took = t0.elapsed();
    let in_budget = took < Duration::from_secs(600);
    (
        failing.is_empty() && in_budget,
        format!(
            "{runs} runs of 1000 writes, {} failing{}{}",
            failing.len(),
            if in_budget {
                ""
            } else {
                ", over the 10 min budget"
            },
            failing
                .first()
                .map(|f| format!(": {f}"))
                .unwrap_or_default()
        ),
    )
}

// ---- 5: end to end ----

fn criterion_5() -> (bool, String) {
    let mut bad = Vec::new();
    let mut trips = 0;
    for at in AccessType::ALL {
        for adversary in ["none", "garbage:2"] {
            let cfg = SimConfig {
                seed: 5,
                access: at,
                writes: 100,
                read_every: 1,
                adversary: adversary.into(),
                ..SimConfig::default()
            };
            let out = sim::run(cfg).expect("valid config");
            let rep = &out.report;
            let g = rep
                .stats
                .requesters
                .get(GRANTED)
                .cloned()
                .unwrap_or_default();
            let r = rep
                .stats
                .requesters
                .get(REFUSED)
                .cloned()
                .unwrap_or_default();
            trips += g.sessions;
            let tag = format!("{at}/{adversary}");
            if g.sessions != 100 || g.delivered != 100 {
                bad.push(format!("{tag}: {}/{} delivered", g.delivered, g.sessions));
            }
            if r.sessions != 100 || r.denied != 100 || r.reads_sent != 0 {
                bad.push(format!(
                    "{tag}: refused requester {}/{} denied, {} reads",
                    r.denied, r.sessions, r.reads_sent
                ));
            }
            for v in ["integrity", "gate_ordering"] {
                if !rep.verdict(v).is_some_and(|v| v.pass) {
                    bad.push(format!("{tag}: {v} failed"));
                }
            }
        }
    }
    (
        bad.is_empty(),
        format!(
            "{trips} granted round trips, {} problems {}",
            bad.len(),
            bad.first().cloned().unwrap_or_default()
        ),
    )
}

// ---- 6: determinism ----

fn criterion_6() -> (bool, String) {
    let scenarios = [
        // starved of steps: liveness fails
        SimConfig {
            seed: 61,
            writes: 200,
            step_budget: 3_000,
            ..SimConfig::default()
        },
        SimConfig {
            seed: 62,
            writes: 200,
            adversary: "crash:1@0".into(),
            step_budget: 5_000,
            ..SimConfig::default()
        },
        SimConfig {
            seed: 63,
            writes: 100,
            adversary: "equivocate:0".into(),
            ..SimConfig::default()
        },
        SimConfig {
            seed: 64,
            writes: 100,
            access: AccessType::Te,
            adversary: "delay:2:400".into(),
            ..SimConfig::default()
        },
    ];
    let dir = tempfile::tempdir().expect("tempdir");
    let (mut failing_seen, mut bad) = (0, Vec::new());
    for (i, cfg) in scenarios.into_iter().enumerate() {
        let out = sim::run(cfg).expect("valid config");
        failing_seen += !out.report.all_pass() as usize;
        let d = dir.path().join(i.to_string());
        artifacts::write_all(&out, &d).expect("artifacts");
        let cfg = artifacts::read_config(&d).expect("config");
        let summary = artifacts::read_summary(&d).expect("summary");
        let (same, again) = sim::replay(cfg, &summary.trace_hash).expect("replay");
        if !same || again.report.trace_hash != out.report.trace_hash {
            bad.push(i);
        }
    }
    (
        bad.is_empty() && failing_seen >= 2,
        format!(
            "4 scenarios ({failing_seen} failing) replayed, {} hash mismatches",
            bad.len()
        ),
    )
}

// ---- 7: encryption ordering ----

fn criterion_7() -> (bool, String) {
    let t = |at| time_scheme(at, 250, 30, 7).expect("timing").enc_ms;
    let (be, te, abe) = (t(AccessType::Be), t(AccessType::Te), t(AccessType::Abe));
    (
        be < te && te < abe,
        format!("enc ms BE {be:.4} < TE {te:.4} < ABE {abe:.4}"),
    )
}

#[test]
fn acceptance() {
    println!();
    let lines = [
        timed(1, "cover-set bound", criterion_1),
        timed(2, "abe semantics", criterion_2),
        timed(3, "te thresholds", criterion_3),
        timed(4, "bft reliability", criterion_4),
        timed(5, "end to end", criterion_5),
        timed(6, "determinism", criterion_6),
        timed(7, "encryption ordering", criterion_7),
    ];
    let mut failed: Vec<String> = lines
        .iter()
        .filter(|l| !l.pass)
        .map(|l| format!("{} {}", l.id, l.name))
        .collect();
    if lines[0].took > Duration::from_secs(60) {
        failed.push("1 cover-set bound over 60 s".into());
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
