//! Byzantine replica behaviours and their spec-string syntax.
//!
//! A spec is a comma-separated list of `behaviour[:replica][:arg]` items,
//! e.g. `crash:3@500`, `mute:2`, `delay:1:400`, `garbage:0`, `equivocate:3`.
//! The replica defaults to the last one. `none` or an empty string means no
//! corruption.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum Behavior {
    /// Stops receiving and sending from this step on.
    Crash { at: u64 },
    /// Processes messages but never sends.
    Mute,
    /// Every outgoing message is held back up to `max` steps.
    Delay { max: u64 },
    /// Answers reads with random bytes.
    GarbageReads,
    /// Sends conflicting proposals to the two halves of the replica set and
    /// slips forged-origin transactions into them.
    Equivocate,
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Behavior::Crash { at } => write!(f, "crash@{at}"),
            Behavior::Mute => f.write_str("mute"),
            Behavior::Delay { max } => write!(f, "delay({max})"),
            Behavior::GarbageReads => f.write_str("garbage"),
            Behavior::Equivocate => f.write_str("equivocate"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub corrupt: BTreeMap<u16, Behavior>,
}

impl AdversarySpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(replica: u16, b: Behavior) -> Self {
        AdversarySpec {
            corrupt: [(replica, b)].into(),
        }
    }

    pub fn behavior(&self, replica: u16) -> Option<Behavior> {
        self.corrupt.get(&replica).copied()
    }

    pub fn is_corrupt(&self, replica: u16) -> bool {
        self.corrupt.contains_key(&replica)
    }

    pub fn validate(&self, n: usize, f: usize) -> Result<(), String> {
        if self.corrupt.len() > f {
            return Err(format!(
                "{} corrupt replicas exceed f={f}",
                self.corrupt.len()
            ));
        }
        if let Some(r) = self.corrupt.keys().find(|r| **r as usize >= n) {
            return Err(format!("replica {r} out of range for n={n}"));
        }
        Ok(())
    }

    /// Parses with `n` known so the default replica can be filled in.
    pub fn parse(s: &str, n: usize) -> Result<Self, String> {
        let mut spec = AdversarySpec::default();
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(spec);
        }
        let last = n.checked_sub(1).ok_or("n must be positive")? as u16;
        for item in s.split(',').map(str::trim) {
            let (item, at) = match item.split_once('@') {
                Some((a, b)) => (
                    a,
                    Some(
                        b.parse::<u64>()
                            .map_err(|e| format!("bad step in `{item}`: {e}"))?,
                    ),
                ),
                None => (item, None),
            };
            let mut parts = item.split(':');
            let name = parts.next().unwrap_or_default();
            let replica = match parts.next() {
                Some(r) if !r.is_empty() => r
                    .parse::<u16>()
                    .map_err(|e| format!("bad replica in `{item}`: {e}"))?,
                _ => last,
            };
            let arg = parts.next();
            let b = match name {
                "crash" => Behavior::Crash {
                    at: at.unwrap_or(0),
                },
                "mute" => Behavior::Mute,
                "delay" => Behavior::Delay {
                    max: arg
                        .map(u64::from_str)
                        .transpose()
                        .map_err(|e| format!("bad delay in `{item}`: {e}"))?
                        .unwrap_or(500),
                },
                "garbage" | "garbage_read_replies" => Behavior::GarbageReads,
                "equivocate" | "equivocate_rbc" => Behavior::Equivocate,
                other => return Err(format!("unknown adversary behaviour `{other}`")),
            };
            if spec.corrupt.insert(replica, b).is_some() {
                return Err(format!("replica {replica} given two behaviours"));
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for AdversarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.corrupt.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self
            .corrupt
            .iter()
            .map(|(r, b)| match b {
                Behavior::Crash { at } => format!("crash:{r}@{at}"),
                Behavior::Mute => format!("mute:{r}"),
                Behavior::Delay { max } => format!("delay:{r}:{max}"),
                Behavior::GarbageReads => format!("garbage:{r}"),
                Behavior::Equivocate => format!("equivocate:{r}"),
            })
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert!(AdversarySpec::parse("none", 4).unwrap().corrupt.is_empty());
        assert!(AdversarySpec::parse("", 4).unwrap().corrupt.is_empty());
        let s = AdversarySpec::parse("crash", 4).unwrap();
        assert_eq!(s.behavior(3), Some(Behavior::Crash { at: 0 }));
        let s = AdversarySpec::parse("crash:1@250", 4).unwrap();
        assert_eq!(s.behavior(1), Some(Behavior::Crash { at: 250 }));
        let s = AdversarySpec::parse("delay:2:90", 4).unwrap();
        assert_eq!(s.behavior(2), Some(Behavior::Delay { max: 90 }));
        let s = AdversarySpec::parse("mute:0, garbage:1", 7).unwrap();
        assert_eq!(s.corrupt.len(), 2);
        assert!(s.validate(7, 2).is_ok());
        assert!(s.validate(4, 1).is_err());
        assert!(AdversarySpec::parse("bogus", 4).is_err());
        assert!(AdversarySpec::parse("mute:1,crash:1", 4).is_err());
    }

    #[test]
    fn display_round_trips() {
        for s in [
            "crash:3@7",
            "mute:0,equivocate:2",
            "delay:1:40",
            "garbage:3",
            "none",
        ] {
            let spec = AdversarySpec::parse(s, 4).unwrap();
            assert_eq!(AdversarySpec::parse(&spec.to_string(), 4).unwrap(), spec);
        }
        assert_eq!(
            AdversarySpec::parse("crash", 4).unwrap().to_string(),
            "crash:3@0"
        );
    }
}
