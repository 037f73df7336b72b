//! Access-control engines: attribute-based (ABE), subset-cover broadcast
//! (BE) and labeled threshold encryption (TE), plus the hybrid write/read
//! engines that combine them with authenticated symmetric encryption.

pub mod abe;
pub mod aead;
pub mod be;
pub mod engine;
pub mod group;
pub mod keyfile;
pub mod lsss;
pub mod pke;
pub mod policy;
pub mod te;

use std::collections::BTreeSet;
use std::fmt;

use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};

pub use engine::{decrypt_get_hash, read_engine, write_engine, CipherBundle, HashKey, ReadKey};
pub use policy::Formula;

/// Randomness source accepted by every randomized operation.
pub trait CryptoRand: RngCore + CryptoRng {}
impl<T: RngCore + CryptoRng> CryptoRand for T {}

/// SHA-256 digest used for content hashes and txids.
pub type Digest = [u8; 32];

pub fn sha256(data: &[u8]) -> Digest {
    Sha256::digest(data).into()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("access denied")]
    Denied,
    #[error("bundle failed authentication")]
    CorruptBundle,
    #[error("insufficient decryption shares: have {have}, need {need}")]
    InsufficientShares { have: usize, need: usize },
    #[error("no recipient left after revocation")]
    EmptyAudience,
    #[error("access type {expected} does not match {found}")]
    TagMismatch {
        expected: AccessType,
        found: AccessType,
    },
    #[error("key does not match ciphertext")]
    KeyMismatch,
    #[error("malformed policy formula: {0}")]
    MalformedFormula(String),
    #[error("unsupported security level {0}")]
    UnsupportedSecurityLevel(u32),
    #[error("invalid threshold t={t} for n={n}")]
    InvalidThreshold { n: usize, t: usize },
    #[error("label does not match ciphertext")]
    LabelMismatch,
    #[error("decryption share from replica {0} failed verification")]
    InvalidShare(u16),
    #[error("duplicate decryption share from replica {0}")]
    DuplicateShare(u16),
    #[error("invalid ciphertext")]
    InvalidCiphertext,
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("empty attribute set")]
    EmptyAttributes,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Which access-control scheme protects a dataset.
///
/// The byte values follow the owner-side numbering `{1: BE, 2: ABE, 3: TE}`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum AccessType {
    Be,
    Abe,
    Te,
}

impl AccessType {
    pub const ALL: [AccessType; 3] = [AccessType::Abe, AccessType::Be, AccessType::Te];

    pub fn to_byte(self) -> u8 {
        match self {
            AccessType::Be => 1,
            AccessType::Abe => 2,
            AccessType::Te => 3,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, DecodeError> {
        match b {
            1 => Ok(AccessType::Be),
            2 => Ok(AccessType::Abe),
            3 => Ok(AccessType::Te),
            other => Err(DecodeError::UnknownTag(other)),
        }
    }
}

impl fmt::Display for AccessType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessType::Abe => "ABE",
            AccessType::Be => "BE",
            AccessType::Te => "TE",
        })
    }
}

impl std::str::FromStr for AccessType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "abe" => Ok(AccessType::Abe),
            "be" => Ok(AccessType::Be),
            "te" => Ok(AccessType::Te),
            other => Err(format!("unknown access type `{other}`")),
        }
    }
}

/// Who may read a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Policy {
    Abe(Formula),
    Be {
        group_size: usize,
        revoked: BTreeSet<usize>,
    },
    Te {
        label: Vec<u8>,
        authorized: BTreeSet<String>,
    },
}

impl Policy {
    pub fn abe(formula: &str) -> Result<Self, CryptoError> {
        Ok(Policy::Abe(Formula::parse(formula)?))
    }

    pub fn be(
        group_size: usize,
        revoked: impl IntoIterator<Item = usize>,
    ) -> Result<Self, CryptoError> {
        let p = Policy::Be {
            group_size,
            revoked: revoked.into_iter().collect(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn te(
        label: impl Into<Vec<u8>>,
        authorized: impl IntoIterator<Item = String>,
    ) -> Result<Self, CryptoError> {
        let p = Policy::Te {
            label: label.into(),
            authorized: authorized.into_iter().collect(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn tag(&self) -> AccessType {
        match self {
            Policy::Abe(_) => AccessType::Abe,
            Policy::Be { .. } => AccessType::Be,
            Policy::Te { .. } => AccessType::Te,
        }
    }

    pub fn validate(&self) -> Result<(), CryptoError> {
        match self {
            Policy::Abe(_) => Ok(()),
            Policy::Be {
                group_size,
                revoked,
            } => {
                if *group_size == 0 {
                    return Err(CryptoError::InvalidPolicy("empty client group".into()));
                }
                match revoked.iter().next_back() {
                    Some(&max) if max >= *group_size => Err(CryptoError::InvalidPolicy(format!(
                        "revoked leaf {max} outside group of {group_size}"
                    ))),
                    _ => Ok(()),
                }
            }
            Policy::Te { label, .. } if label.is_empty() => {
                Err(CryptoError::InvalidPolicy("empty TE label".into()))
            }
            Policy::Te { .. } => Ok(()),
        }
    }

    /// Non-revoked leaves of a BE policy.
    pub fn eligible_leaves(&self) -> Option<BTreeSet<usize>> {
        match self {
            Policy::Be {
                group_size,
                revoked,
            } => Some((0..*group_size).filter(|l| !revoked.contains(l)).collect()),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.tag().to_byte());
        match self {
            Policy::Abe(f) => {
                w.str(&f.to_string());
            }
            Policy::Be {
                group_size,
                revoked,
            } => {
                w.u64(*group_size as u64).u32(revoked.len() as u32);
                for r in revoked {
                    w.u64(*r as u64);
                }
            }
            Policy::Te { label, authorized } => {
                w.bytes(label).u32(authorized.len() as u32);
                for id in authorized {
                    w.str(id);
                }
            }
        }
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let p = match AccessType::from_byte(r.u8()?)? {
            AccessType::Abe => Policy::Abe(Formula::parse(&r.string()?)?),
            AccessType::Be => {
                let group_size = r.u64()? as usize;
                let k = r.u32()? as usize;
                let mut revoked = BTreeSet::new();
                for _ in 0..k {
                    revoked.insert(r.u64()? as usize);
                }
                Policy::Be {
                    group_size,
                    revoked,
                }
            }
            AccessType::Te => {
                let label = r.bytes()?.to_vec();
                let k = r.u32()? as usize;
                let mut authorized = BTreeSet::new();
                for _ in 0..k {
                    authorized.insert(r.string()?);
                }
                Policy::Te { label, authorized }
            }
        };
        r.finish()?;
        p.validate()?;
        Ok(p)
    }
}

/// A requester's claimed credential, shaped by the access type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartialAttribute {
    Abe(BTreeSet<String>),
    Be(usize),
    Te(String),
}

impl PartialAttribute {
    pub fn tag(&self) -> AccessType {
        match self {
            PartialAttribute::Abe(_) => AccessType::Abe,
            PartialAttribute::Be(_) => AccessType::Be,
            PartialAttribute::Te(_) => AccessType::Te,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.tag().to_byte());
        match self {
            PartialAttribute::Abe(attrs) => {
                w.u32(attrs.len() as u32);
                for a in attrs {
                    w.str(a);
                }
            }
            PartialAttribute::Be(leaf) => {
                w.u64(*leaf as u64);
            }
            PartialAttribute::Te(id) => {
                w.str(id);
            }
        }
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let pu = match AccessType::from_byte(r.u8()?)? {
            AccessType::Abe => {
                let k = r.u32()? as usize;
                let mut attrs = BTreeSet::new();
                for _ in 0..k {
                    attrs.insert(r.string()?);
                }
                PartialAttribute::Abe(attrs)
            }
            AccessType::Be => PartialAttribute::Be(r.u64()? as usize),
            AccessType::Te => PartialAttribute::Te(r.string()?),
        };
        r.finish()?;
        Ok(pu)
    }
}
