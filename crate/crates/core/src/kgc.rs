//! Key generation center: scheme setup, entity registration and key
//! release gated on the verifier's verdict.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::bft::tx::{OriginDirectory, OriginKey};
use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::abe::{self, AbeMasterKey, AbePublicKey, AbeSecretKey};
use crate::crypto::be::{LeafKeys, SubtreeKeyTree};
use crate::crypto::pke::{PkePublicKey, PkeSecretKey};
use crate::crypto::te::{self, TePublicKey, TeSecretShare};
use crate::crypto::{AccessType, CryptoError, CryptoRand};
use crate::ledger::Txid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Owner,
    Requester,
    Replica,
    Verifier,
}

impl Role {
    pub fn to_byte(self) -> u8 {
        match self {
            Role::Owner => 1,
            Role::Requester => 2,
            Role::Replica => 3,
            Role::Verifier => 4,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, DecodeError> {
        Ok(match b {
            1 => Role::Owner,
            2 => Role::Requester,
            3 => Role::Replica,
            4 => Role::Verifier,
            t => return Err(DecodeError::UnknownTag(t)),
        })
    }
}

/// What an entity presents at registration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Credentials {
    /// `node` is the owner's network id, used as its transaction origin.
    Owner {
        node: u16,
    },
    Requester {
        attributes: BTreeSet<String>,
        leaf: Option<usize>,
    },
    Replica {
        index: u16,
    },
    Verifier,
}

impl Credentials {
    pub fn role(&self) -> Role {
        match self {
            Credentials::Owner { .. } => Role::Owner,
            Credentials::Requester { .. } => Role::Requester,
            Credentials::Replica { .. } => Role::Replica,
            Credentials::Verifier => Role::Verifier,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Credentials::Owner { node } => {
                w.u16(*node);
            }
            Credentials::Requester { attributes, leaf } => {
                w.u32(attributes.len() as u32);
                for a in attributes {
                    w.str(a);
                }
                w.u64(leaf.map_or(u64::MAX, |l| l as u64));
            }
            Credentials::Replica { index } => {
                w.u16(*index);
            }
            Credentials::Verifier => {}
        }
        w.finish()
    }

    pub fn decode(role: Role, buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let c = match role {
            Role::Owner => Credentials::Owner { node: r.u16()? },
            Role::Requester => {
                let k = r.u32()? as usize;
                let mut attributes = BTreeSet::new();
                for _ in 0..k {
                    attributes.insert(r.string()?);
                }
                let leaf = r.u64()?;
                Credentials::Requester {
                    attributes,
                    leaf: (leaf != u64::MAX).then_some(leaf as usize),
                }
            }
            Role::Replica => Credentials::Replica { index: r.u16()? },
            Role::Verifier => Credentials::Verifier,
        };
        r.finish()?;
        Ok(c)
    }
}

/// Base keys handed out at registration.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Issued {
    Owner {
        origin: OriginKey,
        /// Seed of the subtree key tree, so the owner can encrypt to any cover.
        be_seed: [u8; 32],
    },
    Requester {
        leaf_keys: Option<LeafKeys>,
    },
    Replica {
        share: TeSecretShare,
    },
    Verifier {
        sk: PkeSecretKey,
    },
}

impl Issued {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Issued::Owner { origin, be_seed } => {
                w.u8(1).raw(&origin.to_bytes()).raw(be_seed);
            }
            Issued::Requester { leaf_keys } => {
                w.u8(2);
                match leaf_keys {
                    Some(k) => {
                        w.u8(1).bytes(&k.encode());
                    }
                    None => {
                        w.u8(0);
                    }
                }
            }
            Issued::Replica { share } => {
                w.u8(3).bytes(&share.encode());
            }
            Issued::Verifier { sk } => {
                w.u8(4).raw(&sk.to_bytes());
            }
        }
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let i = match r.u8()? {
            1 => Issued::Owner {
                origin: OriginKey::from_bytes(r.array()?),
                be_seed: r.array()?,
            },
            2 => Issued::Requester {
                leaf_keys: match r.u8()? {
                    1 => Some(LeafKeys::decode(r.bytes()?)?),
                    _ => None,
                },
            },
            3 => Issued::Replica {
                share: TeSecretShare::decode(r.bytes()?)?,
            },
            4 => Issued::Verifier {
                sk: PkeSecretKey::from_bytes(r.array()?),
            },
            t => return Err(DecodeError::UnknownTag(t).into()),
        };
        r.finish()?;
        Ok(i)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KgcError {
    #[error("identity `{0}` already registered")]
    Duplicate(String),
    #[error("unknown identity `{0}`")]
    Unknown(String),
    #[error("all {0} replica slots are taken")]
    ReplicaSlotsFull(usize),
    #[error("replica index {0} out of range or taken")]
    BadReplicaIndex(u16),
    #[error("BE leaf {0} outside the client group")]
    BadLeaf(usize),
    #[error("access denied")]
    Denied,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemParams {
    pub n: usize,
    pub f: usize,
    /// Size of the BE client group.
    pub group_size: usize,
    pub security_bits: u32,
}

/// Everything public that every entity learns after setup.
#[derive(Debug, Clone)]
pub struct PublicParams {
    pub abe: AbePublicKey,
    pub te: TePublicKey,
    pub verifier: Option<PkePublicKey>,
    pub group_size: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegistryRecord {
    pub identity: String,
    pub role: Role,
    pub attributes: Vec<String>,
    pub leaf: Option<usize>,
    pub node: Option<u16>,
}

#[derive(Debug, Clone)]
pub struct KeyRelease {
    pub requester_id: String,
    pub txid: Txid,
    pub at: AccessType,
    /// Encoded ABE secret key, or the 32-byte dataset key for BE/TE.
    pub key: Vec<u8>,
}

pub struct Kgc {
    params: SystemParams,
    abe_msk: AbeMasterKey,
    be_seed: [u8; 32],
    be_tree: SubtreeKeyTree,
    te_pk: TePublicKey,
    te_shares: Vec<Option<TeSecretShare>>,
    verifier_pk: Option<PkePublicKey>,
    origins: OriginDirectory,
    registry: BTreeMap<String, RegistryRecord>,
    reports: BTreeMap<(Txid, String), (AccessType, bool)>,
    deposits: HashMap<Txid, [u8; 32]>,
    releases: u64,
}

impl std::fmt::Debug for Kgc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kgc")
            .field("params", &self.params)
            .field("registered", &self.registry.len())
            .finish()
    }
}

impl Kgc {
    /// One-time synchronous setup of all three schemes.
    pub fn setup(params: SystemParams, rng: &mut impl CryptoRand) -> Result<Self, KgcError> {
        let (abe_pk, abe_msk) = abe::setup(params.security_bits, rng)?;
        let _ = abe_pk;
        let tk = te::setup(params.n, params.f + 1, rng)?;
        let mut be_seed = [0u8; 32];
        rng.fill_bytes(&mut be_seed);
        let be_tree = SubtreeKeyTree::build(params.group_size, &be_seed)?;
        Ok(Kgc {
            params,
            abe_msk,
            be_seed,
            be_tree,
            te_pk: tk.pk,
            te_shares: tk.shares.into_iter().map(Some).collect(),
            verifier_pk: None,
            origins: OriginDirectory::default(),
            registry: BTreeMap::new(),
            reports: BTreeMap::new(),
            deposits: HashMap::new(),
            releases: 0,
        })
    }

    pub fn params(&self) -> SystemParams {
        self.params
    }

    pub fn public_params(&self) -> PublicParams {
        PublicParams {
            abe: self.abe_msk.public_key().clone(),
            te: self.te_pk.clone(),
            verifier: self.verifier_pk,
            group_size: self.params.group_size,
        }
    }

    pub fn origin_directory(&self) -> &OriginDirectory {
        &self.origins
    }

    pub fn register(
        &mut self,
        identity: &str,
        creds: Credentials,
        rng: &mut impl CryptoRand,
    ) -> Result<Issued, KgcError> {
        if self.registry.contains_key(identity) {
            return Err(KgcError::Duplicate(identity.to_string()));
        }
        let mut rec = RegistryRecord {
            identity: identity.to_string(),
            role: creds.role(),
            attributes: Vec::new(),
            leaf: None,
            node: None,
        };
        let issued = match creds {
            Credentials::Owner { node } => {
                let origin = OriginKey::generate(rng);
                self.origins
                    .insert(node, origin.public())
                    .map_err(CryptoError::from)?;
                rec.node = Some(node);
                Issued::Owner {
                    origin,
                    be_seed: self.be_seed,
                }
            }
            Credentials::Requester { attributes, leaf } => {
                let leaf_keys = match leaf {
                    Some(l) if l >= self.params.group_size => return Err(KgcError::BadLeaf(l)),
                    Some(l) => Some(self.be_tree.leaf_keys(l)?),
                    None => None,
                };
                rec.attributes = attributes.into_iter().collect();
                rec.leaf = leaf;
                Issued::Requester { leaf_keys }
            }
            Credentials::Replica { index } => {
                let taken = self
                    .registry
                    .values()
                    .filter(|r| r.role == Role::Replica)
                    .count();
                if taken >= self.params.n {
                    return Err(KgcError::ReplicaSlotsFull(self.params.n));
                }
                let share = self
                    .te_shares
                    .get_mut(index as usize)
                    .and_then(Option::take)
                    .ok_or(KgcError::BadReplicaIndex(index))?;
                rec.node = Some(index);
                Issued::Replica { share }
            }
            Credentials::Verifier => {
                let sk = PkeSecretKey::generate(rng);
                self.verifier_pk = Some(sk.public_key());
                Issued::Verifier { sk }
            }
        };
        self.registry.insert(identity.to_string(), rec);
        Ok(issued)
    }

    pub fn registry(&self) -> impl Iterator<Item = &RegistryRecord> {
        self.registry.values()
    }

    pub fn lookup(&self, identity: &str) -> Option<&RegistryRecord> {
        self.registry.get(identity)
    }

    /// Records the owner's per-dataset `c_h` key for a freshly written txid.
    pub fn deposit(&mut self, txid: Txid, sk: [u8; 32]) {
        self.deposits.entry(txid).or_insert(sk);
    }

    /// Verifier verdict for `(txid, requester)`. The first report wins.
    pub fn report(&mut self, txid: Txid, requester: &str, at: AccessType, res: bool) {
        self.reports
            .entry((txid, requester.to_string()))
            .or_insert((at, res));
    }

    pub fn report_for(&self, txid: Txid, requester: &str) -> Option<(AccessType, bool)> {
        self.reports.get(&(txid, requester.to_string())).copied()
    }

    pub fn release_key(
        &mut self,
        requester: &str,
        txid: Txid,
        at: AccessType,
        rng: &mut impl CryptoRand,
    ) -> Result<KeyRelease, KgcError> {
        let rec = self
            .registry
            .get(requester)
            .ok_or_else(|| KgcError::Unknown(requester.to_string()))?;
        if self.reports.get(&(txid, requester.to_string())) != Some(&(at, true)) {
            return Err(KgcError::Denied);
        }
        let key = match at {
            AccessType::Abe => {
                // registered attributes only, never what the requester claimed
                let attrs: BTreeSet<String> = rec.attributes.iter().cloned().collect();
                let sk: AbeSecretKey = abe::keygen(&self.abe_msk, &attrs, rng)?;
                sk.encode()
            }
            AccessType::Be | AccessType::Te => {
                self.deposits.get(&txid).ok_or(KgcError::Denied)?.to_vec()
            }
        };
        self.releases += 1;
        Ok(KeyRelease {
            requester_id: requester.to_string(),
            txid,
            at,
            key,
        })
    }

    pub fn releases(&self) -> u64 {
        self.releases
    }
}
