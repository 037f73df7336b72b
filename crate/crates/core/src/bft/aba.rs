//! Round-based binary agreement with a common coin (BVAL / AUX / CONF / TERM).

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::sha256;

/// Common coin for `(epoch, instance, round)`.
///
/// The production interface would be a threshold-signature coin; the
/// simulator uses [`SeededCoin`], which only the scheduler's seed determines.
pub trait Coin {
    fn flip(&self, epoch: u64, instance: u16, round: u32) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct SeededCoin(pub [u8; 32]);

impl Coin for SeededCoin {
    fn flip(&self, epoch: u64, instance: u16, round: u32) -> bool {
        let mut b = Vec::with_capacity(64);
        b.extend_from_slice(b"facos/coin");
        b.extend_from_slice(&self.0);
        b.extend_from_slice(&epoch.to_be_bytes());
        b.extend_from_slice(&instance.to_be_bytes());
        b.extend_from_slice(&round.to_be_bytes());
        sha256(&b)[0] & 1 == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbaMsg {
    Bval {
        round: u32,
        b: bool,
    },
    Aux {
        round: u32,
        b: bool,
    },
    /// Candidate set as a bitmask: bit 0 = false, bit 1 = true.
    Conf {
        round: u32,
        vals: u8,
    },
    Term(bool),
}

impl AbaMsg {
    pub fn kind(&self) -> u8 {
        match self {
            AbaMsg::Bval { .. } => 0,
            AbaMsg::Aux { .. } => 1,
            AbaMsg::Conf { .. } => 2,
            AbaMsg::Term(_) => 3,
        }
    }

    pub fn write(&self, w: &mut Writer) {
        match *self {
            AbaMsg::Bval { round, b } | AbaMsg::Aux { round, b } => {
                w.u32(round).u8(b as u8);
            }
            AbaMsg::Conf { round, vals } => {
                w.u32(round).u8(vals);
            }
            AbaMsg::Term(b) => {
                w.u8(b as u8);
            }
        }
    }

    pub fn read(kind: u8, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let bit = |v: u8| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Invalid("bit")),
        };
        Ok(match kind {
            0 => AbaMsg::Bval {
                round: r.u32()?,
                b: bit(r.u8()?)?,
            },
            1 => AbaMsg::Aux {
                round: r.u32()?,
                b: bit(r.u8()?)?,
            },
            2 => {
                let round = r.u32()?;
                let vals = r.u8()?;
                if vals == 0 || vals > 3 {
                    return Err(DecodeError::Invalid("candidate set"));
                }
                AbaMsg::Conf { round, vals }
            }
            3 => AbaMsg::Term(bit(r.u8()?)?),
            t => return Err(DecodeError::UnknownTag(t)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbaEvent {
    Broadcast(AbaMsg),
    Decide(bool),
}

fn mask(b: bool) -> u8 {
    1 << (b as u8)
}

#[derive(Debug, Clone, Default)]
struct Round {
    bval_from: [BTreeSet<u16>; 2],
    bval_sent: [bool; 2],
    bin_values: u8,
    aux_from: BTreeMap<u16, bool>,
    aux_sent: bool,
    conf_from: BTreeMap<u16, u8>,
    /// Candidate set we sent in CONF.
    conf_vals: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct Aba {
    n: usize,
    f: usize,
    epoch: u64,
    instance: u16,
    est: Option<bool>,
    round: u32,
    rounds: BTreeMap<u32, Round>,
    decided: Option<bool>,
    terminated: bool,
    term_from: BTreeMap<u16, bool>,
    term_sent: bool,
}

impl Aba {
    pub fn new(n: usize, f: usize, epoch: u64, instance: u16) -> Self {
        Aba {
            n,
            f,
            epoch,
            instance,
            est: None,
            round: 0,
            rounds: BTreeMap::new(),
            decided: None,
            terminated: false,
            term_from: BTreeMap::new(),
            term_sent: false,
        }
    }

    pub fn has_input(&self) -> bool {
        self.est.is_some()
    }

    pub fn decision(&self) -> Option<bool> {
        self.decided
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn input(&mut self, b: bool, coin: &impl Coin) -> Vec<AbaEvent> {
        let mut out = Vec::new();
        if self.est.is_some() || self.terminated {
            return out;
        }
        self.est = Some(b);
        self.start_round(&mut out);
        self.progress(coin, &mut out);
        out
    }

    pub fn handle(&mut self, from: u16, msg: AbaMsg, coin: &impl Coin) -> Vec<AbaEvent> {
        let mut out = Vec::new();
        if self.terminated {
            return out;
        }
        match msg {
            AbaMsg::Bval { round, .. } | AbaMsg::Aux { round, .. } | AbaMsg::Conf { round, .. }
                if round < self.round => {}
            AbaMsg::Bval { round, b } => {
                self.rounds.entry(round).or_default().bval_from[b as usize].insert(from);
            }
            AbaMsg::Aux { round, b } => {
                self.rounds
                    .entry(round)
                    .or_default()
                    .aux_from
                    .entry(from)
                    .or_insert(b);
            }
            AbaMsg::Conf { round, vals } => {
                self.rounds
                    .entry(round)
                    .or_default()
                    .conf_from
                    .entry(from)
                    .or_insert(vals);
            }
            AbaMsg::Term(b) => {
                self.term_from.entry(from).or_insert(b);
            }
        }
        self.progress(coin, &mut out);
        out
    }

    fn start_round(&mut self, out: &mut Vec<AbaEvent>) {
        let est = self.est.expect("round started after input");
        let st = self.rounds.entry(self.round).or_default();
        if !st.bval_sent[est as usize] {
            st.bval_sent[est as usize] = true;
            out.push(AbaEvent::Broadcast(AbaMsg::Bval {
                round: self.round,
                b: est,
            }));
        }
    }

    fn decide(&mut self, b: bool, out: &mut Vec<AbaEvent>) {
        if self.decided.is_none() {
            self.decided = Some(b);
            out.push(AbaEvent::Decide(b));
        }
        if !self.term_sent {
            self.term_sent = true;
            out.push(AbaEvent::Broadcast(AbaMsg::Term(b)));
        }
    }

    fn progress(&mut self, coin: &impl Coin, out: &mut Vec<AbaEvent>) {
        for b in [false, true] {
            let c = self.term_from.values().filter(|v| **v == b).count();
            if c > self.f {
                self.decide(b, out);
            }
            if c > 2 * self.f {
                self.terminated = true;
                return;
            }
        }
        if self.est.is_none() {
            return;
        }
        while self.step_round(coin, out) {}
    }

    /// Advances the current round as far as its tallies allow; true if it completed.
    fn step_round(&mut self, coin: &impl Coin, out: &mut Vec<AbaEvent>) -> bool {
        let (n, f, r) = (self.n, self.f, self.round);
        let st = self.rounds.entry(r).or_default();
        for b in [false, true] {
            let i = b as usize;
            if st.bval_from[i].len() > f && !st.bval_sent[i] {
                st.bval_sent[i] = true;
                out.push(AbaEvent::Broadcast(AbaMsg::Bval { round: r, b }));
            }
            if st.bval_from[i].len() > 2 * f && st.bin_values & mask(b) == 0 {
                st.bin_values |= mask(b);
                if !st.aux_sent {
                    st.aux_sent = true;
                    out.push(AbaEvent::Broadcast(AbaMsg::Aux { round: r, b }));
                }
            }
        }
        if st.bin_values == 0 {
            return false;
        }
        if st.conf_vals.is_none() {
            let bin = st.bin_values;
            let supported: Vec<bool> = st
                .aux_from
                .values()
                .copied()
                .filter(|b| bin & mask(*b) != 0)
                .collect();
            if supported.len() < n - f {
                return false;
            }
            let vals = supported.iter().fold(0u8, |acc, b| acc | mask(*b));
            st.conf_vals = Some(vals);
            out.push(AbaEvent::Broadcast(AbaMsg::Conf { round: r, vals }));
        }
        let bin = st.bin_values;
        let accepted = st.conf_from.values().filter(|v| **v & !bin == 0).count();
        if accepted < n - f {
            return false;
        }
        let vals = st.conf_vals.expect("conf sent");
        let s = coin.flip(self.epoch, self.instance, r);
        if vals == mask(false) || vals == mask(true) {
            let b = vals == mask(true);
            self.est = Some(b);
            if b == s {
                self.decide(b, out);
            }
        } else {
            self.est = Some(s);
        }
        self.round += 1;
        // drop tallies of finished rounds
        self.rounds.retain(|k, _| *k > r);
        self.start_round(out);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Runs `n` instances with `inputs` (None = crashed) under a random schedule.
    fn run(n: usize, f: usize, inputs: &[Option<bool>], seed: u64) -> Vec<Option<bool>> {
        let coin = SeededCoin([seed as u8; 32]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes: Vec<Aba> = (0..n).map(|_| Aba::new(n, f, 3, 1)).collect();
        let mut q: Vec<(u16, u16, AbaMsg)> = Vec::new();
        let mut decided = vec![None; n];
        let emit =
            |q: &mut Vec<_>, from: usize, evs: Vec<AbaEvent>, decided: &mut Vec<Option<bool>>| {
                for ev in evs {
                    match ev {
                        AbaEvent::Broadcast(m) => {
                            for to in 0..n as u16 {
                                q.push((from as u16, to, m));
                            }
                        }
                        AbaEvent::Decide(b) => {
                            assert!(decided[from].is_none());
                            decided[from] = Some(b);
                        }
                    }
                }
            };
        for (i, inp) in inputs.iter().enumerate() {
            if let Some(b) = inp {
                let evs = nodes[i].input(*b, &coin);
                emit(&mut q, i, evs, &mut decided);
            }
        }
        let mut steps = 0;
        while !q.is_empty() {
            steps += 1;
            assert!(steps < 200_000, "no termination");
            let i = rng.gen_range(0..q.len());
            let (from, to, m) = q.swap_remove(i);
            if inputs[to as usize].is_none() {
                continue;
            }
            let evs = nodes[to as usize].handle(from, m, &coin);
            emit(&mut q, to as usize, evs, &mut decided);
        }
        for (i, node) in nodes.iter().enumerate() {
            if inputs[i].is_some() {
                assert!(node.terminated(), "node {i} did not terminate");
            }
        }
        decided
    }

    #[test]
    fn unanimous_inputs_decide_that_value() {
        for seed in 0..50 {
            for b in [false, true] {
                let d = run(4, 1, &[Some(b); 4], seed);
                assert!(d.iter().all(|x| *x == Some(b)));
            }
        }
    }

    #[test]
    fn mixed_inputs_agree_over_500_seeds() {
        for seed in 0..500u64 {
            let inputs: Vec<Option<bool>> = (0..4).map(|i| Some((seed >> i) & 1 == 1)).collect();
            let d = run(4, 1, &inputs, seed);
            assert!(
                d.iter().all(|x| x.is_some() && *x == d[0]),
                "seed {seed}: {d:?}"
            );
        }
    }

    #[test]
    fn one_crashed_replica_still_terminates() {
        for seed in 0..100u64 {
            let inputs = [Some(seed % 2 == 0), Some(true), Some(false), None];
            let d = run(4, 1, &inputs, seed);
            assert!(
                d[..3].iter().all(|x| x.is_some() && *x == d[0]),
                "seed {seed}"
            );
        }
        for seed in 0..30u64 {
            let inputs = [
                Some(true),
                Some(false),
                Some(true),
                Some(false),
                Some(true),
                None,
                None,
            ];
            let d = run(7, 2, &inputs, seed);
            assert!(
                d[..5].iter().all(|x| x.is_some() && *x == d[0]),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn codec_round_trip_and_rejects_bad_bits() {
        for m in [
            AbaMsg::Bval { round: 4, b: true },
            AbaMsg::Aux { round: 0, b: false },
            AbaMsg::Conf { round: 9, vals: 3 },
            AbaMsg::Term(true),
        ] {
            let mut w = Writer::new();
            m.write(&mut w);
            let buf = w.finish();
            let mut r = Reader::new(&buf);
            assert_eq!(AbaMsg::read(m.kind(), &mut r).unwrap(), m);
        }
        assert!(AbaMsg::read(0, &mut Reader::new(&[0, 0, 0, 0, 2])).is_err());
        assert!(AbaMsg::read(2, &mut Reader::new(&[0, 0, 0, 0, 0])).is_err());
    }

    #[test]
    fn coin_is_deterministic_and_not_constant() {
        let c = SeededCoin([1; 32]);
        assert_eq!(c.flip(1, 2, 3), c.flip(1, 2, 3));
        let ones = (0..200).filter(|r| c.flip(0, 0, *r)).count();
        assert!((60..140).contains(&ones));
    }
}
