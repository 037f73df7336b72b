//! Hybrid write/read engines.
//!
//! The write engine encrypts a payload under a fresh symmetric key and
//! wraps that key with the selected access-control scheme, producing the
//! off-chain bundle `(c_m, x)` plus `c_h`, the encrypted content hash that
//! goes on chain. The read engine reverses the process given key material
//! of the matching kind.

use super::abe::{self, AbeCiphertext, AbePublicKey, AbeSecretKey};
use super::aead::{self, Algorithm, SymmetricKey};
use super::be::{self, LeafKeys, SubtreeKeyTree};
use super::pke::{self, PkePublicKey, PkeSecretKey};
use super::te::{self, DecryptionShare, TeCiphertext, TePublicKey};
use super::{sha256, AccessType, CryptoError, CryptoRand, Digest, Policy};
use crate::codec::{DecodeError, Reader, Writer};

const BUNDLE_MAGIC: &[u8; 3] = b"FCB";
const BUNDLE_VERSION: u8 = 1;
const PAYLOAD_AAD: &[u8] = b"facos/payload";

/// The off-chain stored value `sigma = (c_m, x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherBundle {
    pub tag: AccessType,
    pub c_m: Vec<u8>,
    pub x: Vec<u8>,
}

impl CipherBundle {
    pub fn new(tag: AccessType, c_m: Vec<u8>, x: Vec<u8>) -> Self {
        CipherBundle { tag, c_m, x }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.c_m.len() + self.x.len() + 16);
        w.raw(BUNDLE_MAGIC)
            .u8(BUNDLE_VERSION)
            .u8(self.tag.to_byte())
            .bytes(&self.c_m)
            .bytes(&self.x);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        if r.raw(3)? != BUNDLE_MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let v = r.u8()?;
        if v != BUNDLE_VERSION {
            return Err(DecodeError::Version(v as u16));
        }
        let tag = AccessType::from_byte(r.u8()?)?;
        let c_m = r.bytes()?.to_vec();
        let x = r.bytes()?.to_vec();
        r.finish()?;
        Ok(CipherBundle { tag, c_m, x })
    }
}

/// Public material the owner encrypts under. Only the entry for the chosen
/// access type needs to be present.
#[derive(Clone, Copy)]
pub struct WriteKeys<'a> {
    pub abe: Option<&'a AbePublicKey>,
    pub be_tree: Option<&'a SubtreeKeyTree>,
    pub te: Option<&'a TePublicKey>,
    /// Per-dataset public key for `c_h` on the BE and TE paths.
    pub hash_pk: Option<&'a PkePublicKey>,
}

pub enum ReadKey<'a> {
    Abe(&'a AbeSecretKey),
    Be(&'a LeafKeys),
    Te {
        pk: &'a TePublicKey,
        shares: &'a [DecryptionShare],
    },
}

impl ReadKey<'_> {
    fn tag(&self) -> AccessType {
        match self {
            ReadKey::Abe(_) => AccessType::Abe,
            ReadKey::Be(_) => AccessType::Be,
            ReadKey::Te { .. } => AccessType::Te,
        }
    }
}

/// Key released for recovering the content hash.
pub enum HashKey<'a> {
    Abe(&'a AbeSecretKey),
    Pke(&'a PkeSecretKey),
}

fn seal_payload(m: &[u8], rng: &mut impl CryptoRand) -> (SymmetricKey, Vec<u8>) {
    let key = SymmetricKey::random(rng);
    let c_m = aead::seal(Algorithm::Aes256Gcm, &key, m, PAYLOAD_AAD, rng);
    (key, c_m)
}

fn require<T>(k: Option<T>) -> Result<T, CryptoError> {
    k.ok_or(CryptoError::KeyMismatch)
}

/// Returns `(sigma, c_h)`.
pub fn write_engine(
    m: &[u8],
    at: AccessType,
    policy: &Policy,
    keys: WriteKeys<'_>,
    rng: &mut impl CryptoRand,
) -> Result<(CipherBundle, Vec<u8>), CryptoError> {
    if policy.tag() != at {
        return Err(CryptoError::TagMismatch {
            expected: at,
            found: policy.tag(),
        });
    }
    policy.validate()?;
    let h = sha256(m);
    match policy {
        Policy::Abe(formula) => {
            let pk = require(keys.abe)?;
            let (key, c_m) = seal_payload(m, rng);
            let x = abe::encrypt(pk, key.as_bytes(), formula, rng).encode();
            let c_h = abe::encrypt(pk, &h, formula, rng).encode();
            Ok((CipherBundle::new(at, c_m, x), c_h))
        }
        Policy::Be {
            group_size,
            revoked,
        } => {
            let tree = require(keys.be_tree)?;
            if tree.n_clients() != *group_size {
                return Err(CryptoError::InvalidPolicy(format!(
                    "policy group of {group_size} does not match tree of {}",
                    tree.n_clients()
                )));
            }
            let hash_pk = require(keys.hash_pk)?;
            let bundle = be::encrypt(m, tree, revoked, rng)?;
            let c_h = pke::encrypt(hash_pk, &h, rng);
            Ok((bundle, c_h))
        }
        Policy::Te { label, .. } => {
            let pk = require(keys.te)?;
            let hash_pk = require(keys.hash_pk)?;
            let (key, c_m) = seal_payload(m, rng);
            let x = te::encrypt(pk, key.as_bytes(), label, rng)?.encode();
            let c_h = pke::encrypt(hash_pk, &h, rng);
            Ok((CipherBundle::new(at, c_m, x), c_h))
        }
    }
}

pub fn read_engine(bundle: &CipherBundle, key: ReadKey<'_>) -> Result<Vec<u8>, CryptoError> {
    if key.tag() != bundle.tag {
        return Err(CryptoError::TagMismatch {
            expected: bundle.tag,
            found: key.tag(),
        });
    }
    match key {
        ReadKey::Abe(sk) => {
            let ct = AbeCiphertext::decode(&bundle.x).map_err(|_| CryptoError::CorruptBundle)?;
            let key = SymmetricKey::from_slice(&abe::decrypt(sk, &ct)?)?;
            aead::open(&key, &bundle.c_m, PAYLOAD_AAD)
        }
        ReadKey::Be(leaf_keys) => be::decrypt(leaf_keys, bundle),
        ReadKey::Te { pk, shares } => {
            let ct = TeCiphertext::decode(&bundle.x).map_err(|_| CryptoError::CorruptBundle)?;
            let label = ct.label().to_vec();
            let key = SymmetricKey::from_slice(&te::combine(pk, &ct, &label, shares)?)?;
            aead::open(&key, &bundle.c_m, PAYLOAD_AAD)
        }
    }
}

pub fn decrypt_get_hash(
    at: AccessType,
    key: HashKey<'_>,
    c_h: &[u8],
) -> Result<Digest, CryptoError> {
    let h = match (at, key) {
        (AccessType::Abe, HashKey::Abe(sk)) => {
            let ct = AbeCiphertext::decode(c_h).map_err(|_| CryptoError::CorruptBundle)?;
            abe::decrypt(sk, &ct)?
        }
        (AccessType::Be | AccessType::Te, HashKey::Pke(sk)) => pke::decrypt(sk, c_h)?,
        _ => return Err(CryptoError::KeyMismatch),
    };
    h.try_into().map_err(|_| CryptoError::CorruptBundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Formula;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeSet;

    struct Fixture {
        abe_pk: AbePublicKey,
        abe_msk: abe::AbeMasterKey,
        tree: SubtreeKeyTree,
        te: te::TeKeys,
        hash_sk: PkeSecretKey,
    }

    fn fixture(rng: &mut ChaCha20Rng) -> Fixture {
        let (abe_pk, abe_msk) = abe::setup(128, rng).unwrap();
        let hash_sk = PkeSecretKey::generate(rng);
        Fixture {
            abe_pk,
            abe_msk,
            tree: SubtreeKeyTree::build(8, &[3; 32]).unwrap(),
            te: te::setup(4, 2, rng).unwrap(),
            hash_sk,
        }
    }

    impl Fixture {
        fn keys<'a>(&'a self, hash_pk: &'a PkePublicKey) -> WriteKeys<'a> {
            WriteKeys {
                abe: Some(&self.abe_pk),
                be_tree: Some(&self.tree),
                te: Some(&self.te.pk),
                hash_pk: Some(hash_pk),
            }
        }
    }

    #[test]
    fn bundle_encoding_is_self_describing() {
        let b = CipherBundle::new(AccessType::Te, vec![1, 2, 3], vec![4]);
        let enc = b.encode();
        assert_eq!(&enc[..3], b"FCB");
        assert_eq!(CipherBundle::decode(&enc).unwrap(), b);
        assert!(CipherBundle::decode(&enc[1..]).is_err());
        let mut bad = enc.clone();
        bad[4] = 9;
        assert!(CipherBundle::decode(&bad).is_err());
    }

    #[test]
    fn te_250_byte_payload_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let fx = fixture(&mut rng);
        let hpk = fx.hash_sk.public_key();
        let mut m = vec![0u8; 250];
        rng.fill(&mut m[..]);
        let h = sha256(&m);
        let p = Policy::te(h.to_vec(), ["alice".to_string()]).unwrap();
        let (sigma, c_h) = write_engine(&m, AccessType::Te, &p, fx.keys(&hpk), &mut rng).unwrap();
        let sigma = CipherBundle::decode(&sigma.encode()).unwrap();
        assert_eq!(
            decrypt_get_hash(AccessType::Te, HashKey::Pke(&fx.hash_sk), &c_h).unwrap(),
            h
        );
        let ct = TeCiphertext::decode(&sigma.x).unwrap();
        let shares: Vec<_> = [0usize, 2]
            .iter()
            .map(|&i| te::share_dec(&fx.te.shares[i], &ct, &h, &mut rng).unwrap())
            .collect();
        let out = read_engine(
            &sigma,
            ReadKey::Te {
                pk: &fx.te.pk,
                shares: &shares,
            },
        )
        .unwrap();
        assert_eq!(out, m);
        assert_eq!(
            read_engine(
                &sigma,
                ReadKey::Te {
                    pk: &fx.te.pk,
                    shares: &shares[..1]
                }
            ),
            Err(CryptoError::InsufficientShares { have: 1, need: 2 })
        );
    }

    #[test]
    fn empty_message_hash_anchor() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let fx = fixture(&mut rng);
        let hpk = fx.hash_sk.public_key();
        let p = Policy::be(8, []).unwrap();
        let (sigma, c_h) = write_engine(b"", AccessType::Be, &p, fx.keys(&hpk), &mut rng).unwrap();
        let h = decrypt_get_hash(AccessType::Be, HashKey::Pke(&fx.hash_sk), &c_h).unwrap();
        assert_eq!(
            hex::encode(h),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            read_engine(&sigma, ReadKey::Be(&fx.tree.leaf_keys(3).unwrap())).unwrap(),
            b""
        );
    }

    #[test]
    fn tag_mismatch_and_key_mismatch() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let fx = fixture(&mut rng);
        let hpk = fx.hash_sk.public_key();
        let p = Policy::be(8, []).unwrap();
        assert!(matches!(
            write_engine(b"x", AccessType::Abe, &p, fx.keys(&hpk), &mut rng),
            Err(CryptoError::TagMismatch { .. })
        ));
        let all = Policy::be(8, 0..8).unwrap();
        assert_eq!(
            write_engine(b"x", AccessType::Be, &all, fx.keys(&hpk), &mut rng).unwrap_err(),
            CryptoError::EmptyAudience
        );
        let sk = abe::keygen(&fx.abe_msk, &["A".to_string()].into(), &mut rng).unwrap();
        let (_, c_h) = write_engine(b"x", AccessType::Be, &p, fx.keys(&hpk), &mut rng).unwrap();
        assert_eq!(
            decrypt_get_hash(AccessType::Be, HashKey::Abe(&sk), &c_h),
            Err(CryptoError::KeyMismatch)
        );
        let stranger = PkeSecretKey::generate(&mut rng);
        assert_eq!(
            decrypt_get_hash(AccessType::Be, HashKey::Pke(&stranger), &c_h),
            Err(CryptoError::KeyMismatch)
        );
    }

    #[test]
    fn abe_path_denies_without_garbage() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let fx = fixture(&mut rng);
        let hpk = fx.hash_sk.public_key();
        let p = Policy::Abe(Formula::parse("A AND B").unwrap());
        let (sigma, c_h) =
            write_engine(b"abe data", AccessType::Abe, &p, fx.keys(&hpk), &mut rng).unwrap();
        let good = abe::keygen(
            &fx.abe_msk,
            &["A".to_string(), "B".to_string()].into(),
            &mut rng,
        )
        .unwrap();
        let bad = abe::keygen(&fx.abe_msk, &["A".to_string()].into(), &mut rng).unwrap();
        assert_eq!(
            read_engine(&sigma, ReadKey::Abe(&good)).unwrap(),
            b"abe data"
        );
        assert_eq!(
            read_engine(&sigma, ReadKey::Abe(&bad)),
            Err(CryptoError::Denied)
        );
        assert_eq!(
            decrypt_get_hash(AccessType::Abe, HashKey::Abe(&good), &c_h).unwrap(),
            sha256(b"abe data")
        );
        assert_eq!(
            decrypt_get_hash(AccessType::Abe, HashKey::Abe(&bad), &c_h),
            Err(CryptoError::Denied)
        );
    }

    #[test]
    fn tampered_payload_is_corrupt_not_denied() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let fx = fixture(&mut rng);
        let hpk = fx.hash_sk.public_key();
        let p = Policy::be(8, [1]).unwrap();
        let (mut sigma, _) =
            write_engine(b"payload", AccessType::Be, &p, fx.keys(&hpk), &mut rng).unwrap();
        sigma.c_m[15] ^= 4;
        assert_eq!(
            read_engine(&sigma, ReadKey::Be(&fx.tree.leaf_keys(0).unwrap())),
            Err(CryptoError::CorruptBundle)
        );
        assert_eq!(
            read_engine(&sigma, ReadKey::Be(&fx.tree.leaf_keys(1).unwrap())),
            Err(CryptoError::Denied)
        );
    }

    #[test]
    fn tampered_c_h_never_yields_wrong_digest() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let fx = fixture(&mut rng);
        let hpk = fx.hash_sk.public_key();
        let p = Policy::te(b"L".to_vec(), BTreeSet::new()).unwrap();
        let (_, c_h) =
            write_engine(b"hash me", AccessType::Te, &p, fx.keys(&hpk), &mut rng).unwrap();
        for _ in 0..200 {
            let mut bad = c_h.clone();
            let bit = rng.gen_range(0..bad.len() * 8);
            bad[bit / 8] ^= 1 << (bit % 8);
            assert!(decrypt_get_hash(AccessType::Te, HashKey::Pke(&fx.hash_sk), &bad).is_err());
        }
    }
}
