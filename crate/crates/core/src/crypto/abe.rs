//! Ciphertext-policy attribute-based encryption.
//!
//! Large-universe CP-ABE over the BLS12-381 pairing with a Lewko–Waters
//! share matrix. Attributes are hashed onto G1, so the universe need not be
//! fixed at setup. The scheme encapsulates a target-group element which is
//! hashed into an AES-256-GCM key for the payload, so a key that satisfies
//! the policy but does not match the ciphertext fails authentication rather
//! than yielding garbage.
//!
//! * setup: `pk = (g1, g2, g1^a, e(g1, g2)^alpha)`, `msk = g1^alpha`
//! * keygen(S): `K = g1^alpha * g1^(a t)`, `L = g2^t`, `K_x = H(x)^t` for `x` in `S`
//! * encrypt: shares `lambda_i` of `s`; `C' = g2^s`,
//!   `C_i = g1^(a lambda_i) * H(rho(i))^(-r_i)`, `D_i = g2^(r_i)`
//! * decrypt: `e(K, C') / prod_i (e(C_i, L) e(K_rho(i), D_i))^(w_i) = e(g1, g2)^(alpha s)`

use std::collections::{BTreeMap, BTreeSet};

use ark_bls12_381::{Bls12_381, Fr, G1Affine, G1Projective, G2Affine, G2Projective};
use ark_ec::pairing::{Pairing, PairingOutput};
use ark_ec::{CurveGroup, PrimeGroup};
use ark_ff::Zero;

use super::aead::{self, Algorithm, SymmetricKey};
use super::group::{self, hash_to_g1, random_scalar};
use super::lsss::{reconstruction_rows, ShareMatrix};
use super::policy::Formula;
use super::{sha256, CryptoError, CryptoRand};
use crate::codec::{Reader, Writer};

const ATTR_DST: &[u8] = b"FACOS-ABE-ATTR-V1_BLS12381G1_XMD:SHA-256_SSWU_RO_";
const KEM_DOMAIN: &[u8] = b"facos/abe/kem/v1";

type Gt = PairingOutput<Bls12_381>;

/// Supported security levels, in bits.
pub const SUPPORTED_SECURITY: [u32; 1] = [128];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbePublicKey {
    g1: G1Affine,
    g2: G2Affine,
    g1_a: G1Affine,
    egg_alpha: Gt,
}

#[derive(Clone)]
pub struct AbeMasterKey {
    g1_alpha: G1Affine,
    pk: AbePublicKey,
}

impl std::fmt::Debug for AbeMasterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AbeMasterKey(..)")
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct AbeSecretKey {
    attrs: BTreeSet<String>,
    k: G1Affine,
    l: G2Affine,
    kx: BTreeMap<String, G1Affine>,
}

impl std::fmt::Debug for AbeSecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AbeSecretKey")
            .field("attrs", &self.attrs)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbeCiphertext {
    formula: Formula,
    c_prime: G2Affine,
    rows: Vec<(G1Affine, G2Affine)>,
    sealed: Vec<u8>,
}

fn hash_attr(attr: &str) -> G1Affine {
    hash_to_g1(ATTR_DST, attr.as_bytes())
}

fn kem_key(mask: &Gt) -> SymmetricKey {
    let mut buf = KEM_DOMAIN.to_vec();
    buf.extend(group::to_bytes(mask));
    SymmetricKey(sha256(&buf))
}

pub fn setup(
    security_bits: u32,
    rng: &mut impl CryptoRand,
) -> Result<(AbePublicKey, AbeMasterKey), CryptoError> {
    if !SUPPORTED_SECURITY.contains(&security_bits) {
        return Err(CryptoError::UnsupportedSecurityLevel(security_bits));
    }
    let alpha = random_scalar(rng);
    let a = random_scalar(rng);
    let g1 = G1Projective::generator();
    let g2 = G2Projective::generator();
    let pk = AbePublicKey {
        g1: g1.into_affine(),
        g2: g2.into_affine(),
        g1_a: (g1 * a).into_affine(),
        egg_alpha: Bls12_381::pairing(g1, g2) * alpha,
    };
    let msk = AbeMasterKey {
        g1_alpha: (g1 * alpha).into_affine(),
        pk: pk.clone(),
    };
    Ok((pk, msk))
}

pub fn keygen(
    msk: &AbeMasterKey,
    attrs: &BTreeSet<String>,
    rng: &mut impl CryptoRand,
) -> Result<AbeSecretKey, CryptoError> {
    if attrs.is_empty() {
        return Err(CryptoError::EmptyAttributes);
    }
    let t = random_scalar(rng);
    let k = (msk.g1_alpha + msk.pk.g1_a * t).into_affine();
    let l = (msk.pk.g2 * t).into_affine();
    let kx = attrs
        .iter()
        .map(|x| (x.clone(), (hash_attr(x) * t).into_affine()))
        .collect();
    Ok(AbeSecretKey {
        attrs: attrs.clone(),
        k,
        l,
        kx,
    })
}

pub fn encrypt(
    pk: &AbePublicKey,
    payload: &[u8],
    formula: &Formula,
    rng: &mut impl CryptoRand,
) -> AbeCiphertext {
    let matrix = ShareMatrix::from_formula(formula);
    let s = random_scalar(rng);
    let mut v = vec![s];
    v.extend((1..matrix.cols()).map(|_| random_scalar(rng)));

    let rows = matrix
        .rows()
        .iter()
        .zip(matrix.labels())
        .map(|(row, attr)| {
            let lambda = row
                .iter()
                .zip(&v)
                .fold(Fr::zero(), |acc, (&m, vj)| match m {
                    1 => acc + vj,
                    -1 => acc - vj,
                    _ => acc,
                });
            let r = random_scalar(rng);
            let c = (pk.g1_a * lambda - hash_attr(attr) * r).into_affine();
            let d = (pk.g2 * r).into_affine();
            (c, d)
        })
        .collect();

    let mask = pk.egg_alpha * s;
    let key = kem_key(&mask);
    let aad = formula.to_string();
    AbeCiphertext {
        formula: formula.clone(),
        c_prime: (pk.g2 * s).into_affine(),
        rows,
        sealed: aead::seal(Algorithm::Aes256Gcm, &key, payload, aad.as_bytes(), rng),
    }
}

/// `Denied` when the key's attributes do not satisfy the policy;
/// `CorruptBundle` when they do but the ciphertext fails authentication.
pub fn decrypt(sk: &AbeSecretKey, ct: &AbeCiphertext) -> Result<Vec<u8>, CryptoError> {
    let selected = reconstruction_rows(&ct.formula, &sk.attrs).ok_or(CryptoError::Denied)?;
    let matrix = ShareMatrix::from_formula(&ct.formula);
    if matrix.len() != ct.rows.len() {
        return Err(CryptoError::CorruptBundle);
    }
    let mut c_sum = G1Projective::zero();
    let mut g1s: Vec<G1Affine> = vec![sk.k];
    let mut g2s: Vec<G2Affine> = vec![ct.c_prime];
    for &i in &selected {
        let (c, d) = ct.rows[i];
        c_sum += c;
        let kx = sk.kx.get(&matrix.labels()[i]).ok_or(CryptoError::Denied)?;
        g1s.push((-G1Projective::from(*kx)).into_affine());
        g2s.push(d);
    }
    g1s.push((-c_sum).into_affine());
    g2s.push(sk.l);
    let mask = Bls12_381::multi_pairing(g1s, g2s);
    let key = kem_key(&mask);
    aead::open(&key, &ct.sealed, ct.formula.to_string().as_bytes())
}

impl AbeSecretKey {
    pub fn attributes(&self) -> &BTreeSet<String> {
        &self.attrs
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.attrs.len() as u32);
        for a in &self.attrs {
            w.str(a);
            group::put(&mut w, &self.kx[a]);
        }
        group::put(&mut w, &self.k);
        group::put(&mut w, &self.l);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let n = r.u32()? as usize;
        let mut attrs = BTreeSet::new();
        let mut kx = BTreeMap::new();
        for _ in 0..n {
            let a = r.string()?;
            kx.insert(a.clone(), group::get(&mut r)?);
            attrs.insert(a);
        }
        let k = group::get(&mut r)?;
        let l = group::get(&mut r)?;
        r.finish()?;
        Ok(AbeSecretKey { attrs, k, l, kx })
    }
}

impl AbePublicKey {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        group::put(&mut w, &self.g1);
        group::put(&mut w, &self.g2);
        group::put(&mut w, &self.g1_a);
        group::put(&mut w, &self.egg_alpha);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let pk = AbePublicKey {
            g1: group::get(&mut r)?,
            g2: group::get(&mut r)?,
            g1_a: group::get(&mut r)?,
            egg_alpha: group::get(&mut r)?,
        };
        r.finish()?;
        Ok(pk)
    }
}

impl AbeMasterKey {
    pub fn public_key(&self) -> &AbePublicKey {
        &self.pk
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        group::put(&mut w, &self.g1_alpha);
        w.bytes(&self.pk.encode());
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let g1_alpha = group::get(&mut r)?;
        let pk = AbePublicKey::decode(r.bytes()?)?;
        r.finish()?;
        Ok(AbeMasterKey { g1_alpha, pk })
    }
}

impl AbeCiphertext {
    pub fn formula(&self) -> &Formula {
        &self.formula
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(&self.formula.to_string());
        group::put(&mut w, &self.c_prime);
        w.u32(self.rows.len() as u32);
        for (c, d) in &self.rows {
            group::put(&mut w, c);
            group::put(&mut w, d);
        }
        w.bytes(&self.sealed);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let formula = Formula::parse(&r.string()?)?;
        let c_prime = group::get(&mut r)?;
        let n = r.u32()? as usize;
        if n != formula.leaf_count() {
            return Err(CryptoError::InvalidCiphertext);
        }
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            rows.push((group::get(&mut r)?, group::get(&mut r)?));
        }
        let sealed = r.bytes()?.to_vec();
        r.finish()?;
        Ok(AbeCiphertext {
            formula,
            c_prime,
            rows,
            sealed,
        })
    }
}
