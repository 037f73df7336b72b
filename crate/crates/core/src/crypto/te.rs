//! Labeled threshold encryption in the TDH2 style.
//!
//! The master secret `x` is Shamir-shared with threshold `t` among `n`
//! replicas; replica `i` (1-based) holds `x_i = F(i)` and publishes
//! `h_i = g^(x_i)`. Ciphertexts carry a Chaum–Pedersen style proof binding
//! the label, and every decryption share carries a proof of correct
//! exponentiation, so both are publicly verifiable.
//!
//! * encrypt: `c = m xor KDF(h^r)`, `u = g^r`, `ub = gb^r`,
//!   `e = H(c, L, u, g^s, ub, gb^s)`, `f = s + r e`
//! * share: `u_i = u^(x_i)` with proof `(e_i, f_i)` that
//!   `log_u(u_i) = log_g(h_i)`; the proof hash also covers the label and
//!   the ciphertext digest.
//! * combine: `h^r = prod u_i^(lambda_i)` over any `t` shares.

use std::collections::BTreeMap;

use ark_bls12_381::{Fr, G1Affine, G1Projective};
use ark_ec::{CurveGroup, PrimeGroup, VariableBaseMSM};
use ark_ff::{Field, One, Zero};

use super::group::{self, hash_to_g1, hash_to_scalar, random_scalar};
use super::{sha256, CryptoError, CryptoRand};
use crate::codec::{Reader, Writer};

const GBAR_DST: &[u8] = b"FACOS-TE-GBAR-V1_BLS12381G1_XMD:SHA-256_SSWU_RO_";

fn gbar() -> G1Affine {
    hash_to_g1(GBAR_DST, b"second generator")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TePublicKey {
    n: usize,
    t: usize,
    h: G1Affine,
    /// `h_i = g^(x_i)` for replica indices `1..=n`.
    vks: Vec<G1Affine>,
}

#[derive(Clone, PartialEq, Eq)]
pub struct TeSecretShare {
    index: u16,
    x: Fr,
}

impl std::fmt::Debug for TeSecretShare {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TeSecretShare({})", self.index)
    }
}

#[derive(Debug, Clone)]
pub struct TeKeys {
    pub pk: TePublicKey,
    pub shares: Vec<TeSecretShare>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeCiphertext {
    label: Vec<u8>,
    c: Vec<u8>,
    u: G1Affine,
    ubar: G1Affine,
    e: Fr,
    f: Fr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecryptionShare {
    /// 1-based Shamir index of the issuing replica.
    pub replica_id: u16,
    pub share_value: Vec<u8>,
    pub proof: Vec<u8>,
    pub label: Vec<u8>,
}

fn mask(hr: &G1Affine, len: usize) -> Vec<u8> {
    let seed = group::to_bytes(hr);
    let mut out = Vec::with_capacity(len + 32);
    let mut ctr = 0u64;
    while out.len() < len {
        let mut block = b"facos/te/kdf/v1".to_vec();
        block.extend_from_slice(&seed);
        block.extend_from_slice(&ctr.to_be_bytes());
        out.extend_from_slice(&sha256(&block));
        ctr += 1;
    }
    out.truncate(len);
    out
}

fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

fn ct_challenge(
    c: &[u8],
    label: &[u8],
    u: &G1Affine,
    w: &G1Affine,
    ubar: &G1Affine,
    wbar: &G1Affine,
) -> Fr {
    hash_to_scalar(&[
        b"facos/te/ct/v1",
        c,
        label,
        &group::to_bytes(u),
        &group::to_bytes(w),
        &group::to_bytes(ubar),
        &group::to_bytes(wbar),
    ])
}

fn share_challenge(
    ct_digest: &[u8],
    label: &[u8],
    index: u16,
    ui: &G1Affine,
    uhat: &G1Affine,
    hhat: &G1Affine,
) -> Fr {
    hash_to_scalar(&[
        b"facos/te/share/v1",
        ct_digest,
        label,
        &index.to_be_bytes(),
        &group::to_bytes(ui),
        &group::to_bytes(uhat),
        &group::to_bytes(hhat),
    ])
}

pub fn setup(n: usize, t: usize, rng: &mut impl CryptoRand) -> Result<TeKeys, CryptoError> {
    if t == 0 || t > n || n > u16::MAX as usize {
        return Err(CryptoError::InvalidThreshold { n, t });
    }
    let coeffs: Vec<Fr> = (0..t).map(|_| random_scalar(rng)).collect();
    let eval = |i: u64| {
        let x = Fr::from(i);
        coeffs.iter().rev().fold(Fr::zero(), |acc, c| acc * x + c)
    };
    let g = G1Projective::generator();
    let shares: Vec<TeSecretShare> = (1..=n as u16)
        .map(|i| TeSecretShare {
            index: i,
            x: eval(i as u64),
        })
        .collect();
    let vks = shares.iter().map(|s| (g * s.x).into_affine()).collect();
    Ok(TeKeys {
        pk: TePublicKey {
            n,
            t,
            h: (g * coeffs[0]).into_affine(),
            vks,
        },
        shares,
    })
}

pub fn encrypt(
    pk: &TePublicKey,
    m: &[u8],
    label: &[u8],
    rng: &mut impl CryptoRand,
) -> Result<TeCiphertext, CryptoError> {
    if label.is_empty() {
        return Err(CryptoError::InvalidPolicy("empty TE label".into()));
    }
    let g = G1Projective::generator();
    let gb = gbar();
    let r = random_scalar(rng);
    let s = random_scalar(rng);
    let hr = (pk.h * r).into_affine();
    let c = xor(m, &mask(&hr, m.len()));
    let u = (g * r).into_affine();
    let w = (g * s).into_affine();
    let ubar = (gb * r).into_affine();
    let wbar = (gb * s).into_affine();
    let e = ct_challenge(&c, label, &u, &w, &ubar, &wbar);
    Ok(TeCiphertext {
        label: label.to_vec(),
        c,
        u,
        ubar,
        e,
        f: s + r * e,
    })
}

impl TeCiphertext {
    pub fn label(&self) -> &[u8] {
        &self.label
    }

    /// Checks the proof that `u` and `ubar` share a discrete log, bound to
    /// `c` and the label.
    pub fn is_valid(&self) -> bool {
        let g = G1Projective::generator();
        let gb = gbar();
        let w = (g * self.f - self.u * self.e).into_affine();
        let wbar = (gb * self.f - self.ubar * self.e).into_affine();
        ct_challenge(&self.c, &self.label, &self.u, &w, &self.ubar, &wbar) == self.e
    }

    fn digest(&self) -> [u8; 32] {
        sha256(&self.encode())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.label).bytes(&self.c);
        group::put(&mut w, &self.u);
        group::put(&mut w, &self.ubar);
        group::put(&mut w, &self.e);
        group::put(&mut w, &self.f);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let ct = TeCiphertext {
            label: r.bytes()?.to_vec(),
            c: r.bytes()?.to_vec(),
            u: group::get(&mut r)?,
            ubar: group::get(&mut r)?,
            e: group::get(&mut r)?,
            f: group::get(&mut r)?,
        };
        r.finish()?;
        Ok(ct)
    }
}

/// Refuses (rather than emitting a non-verifying share) when `label` does
/// not match the ciphertext or the ciphertext proof is invalid.
pub fn share_dec(
    sk: &TeSecretShare,
    ct: &TeCiphertext,
    label: &[u8],
    rng: &mut impl CryptoRand,
) -> Result<DecryptionShare, CryptoError> {
    if label != ct.label.as_slice() {
        return Err(CryptoError::LabelMismatch);
    }
    if !ct.is_valid() {
        return Err(CryptoError::InvalidCiphertext);
    }
    let g = G1Projective::generator();
    let ui = (ct.u * sk.x).into_affine();
    let si = random_scalar(rng);
    let uhat = (ct.u * si).into_affine();
    let hhat = (g * si).into_affine();
    let ei = share_challenge(&ct.digest(), label, sk.index, &ui, &uhat, &hhat);
    let fi = si + sk.x * ei;
    let mut proof = Writer::new();
    group::put(&mut proof, &ei);
    group::put(&mut proof, &fi);
    Ok(DecryptionShare {
        replica_id: sk.index,
        share_value: group::to_bytes(&ui),
        proof: proof.finish(),
        label: label.to_vec(),
    })
}

fn parse_share(share: &DecryptionShare) -> Result<(G1Affine, Fr, Fr), CryptoError> {
    let ui: G1Affine = group::from_bytes(&share.share_value)?;
    let mut r = Reader::new(&share.proof);
    let ei: Fr = group::get(&mut r)?;
    let fi: Fr = group::get(&mut r)?;
    r.finish()?;
    Ok((ui, ei, fi))
}

/// Public share verification. Deterministic; false on any label mismatch,
/// malformed encoding, unknown replica or failed proof.
pub fn verify_share(
    pk: &TePublicKey,
    ct: &TeCiphertext,
    label: &[u8],
    share: &DecryptionShare,
) -> bool {
    if label != ct.label.as_slice() || share.label != label {
        return false;
    }
    let idx = share.replica_id as usize;
    if idx == 0 || idx > pk.n || !ct.is_valid() {
        return false;
    }
    let Ok((ui, ei, fi)) = parse_share(share) else {
        return false;
    };
    let g = G1Projective::generator();
    let uhat = (ct.u * fi - ui * ei).into_affine();
    let hhat = (g * fi - pk.vks[idx - 1] * ei).into_affine();
    share_challenge(&ct.digest(), label, share.replica_id, &ui, &uhat, &hhat) == ei
}

fn lagrange_at_zero(indices: &[u16]) -> Vec<Fr> {
    indices
        .iter()
        .map(|&i| {
            let xi = Fr::from(i as u64);
            let (num, den) =
                indices
                    .iter()
                    .filter(|&&j| j != i)
                    .fold((Fr::one(), Fr::one()), |(n, d), &j| {
                        let xj = Fr::from(j as u64);
                        (n * xj, d * (xj - xi))
                    });
            num * den.inverse().expect("distinct indices")
        })
        .collect()
}

/// Verifies every share before combining; any failure rejects the whole
/// call. The lowest `t` indices are used, so the result does not depend on
/// which superset was supplied.
pub fn combine(
    pk: &TePublicKey,
    ct: &TeCiphertext,
    label: &[u8],
    shares: &[DecryptionShare],
) -> Result<Vec<u8>, CryptoError> {
    let mut by_id: BTreeMap<u16, G1Affine> = BTreeMap::new();
    for s in shares {
        if !verify_share(pk, ct, label, s) {
            return Err(CryptoError::InvalidShare(s.replica_id));
        }
        let (ui, _, _) = parse_share(s)?;
        if by_id.insert(s.replica_id, ui).is_some() {
            return Err(CryptoError::DuplicateShare(s.replica_id));
        }
    }
    if by_id.len() < pk.t {
        return Err(CryptoError::InsufficientShares {
            have: by_id.len(),
            need: pk.t,
        });
    }
    let chosen: Vec<(u16, G1Affine)> = by_id.into_iter().take(pk.t).collect();
    let ids: Vec<u16> = chosen.iter().map(|(i, _)| *i).collect();
    let bases: Vec<G1Affine> = chosen.iter().map(|(_, u)| *u).collect();
    let hr = G1Projective::msm(&bases, &lagrange_at_zero(&ids))
        .expect("equal-length bases and scalars")
        .into_affine();
    Ok(xor(&ct.c, &mask(&hr, ct.c.len())))
}

impl TePublicKey {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn threshold(&self) -> usize {
        self.t
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u16(self.n as u16).u16(self.t as u16);
        group::put(&mut w, &self.h);
        for vk in &self.vks {
            group::put(&mut w, vk);
        }
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let n = r.u16()? as usize;
        let t = r.u16()? as usize;
        if t == 0 || t > n {
            return Err(CryptoError::InvalidThreshold { n, t });
        }
        let h = group::get(&mut r)?;
        let vks = (0..n)
            .map(|_| group::get(&mut r))
            .collect::<Result<_, _>>()?;
        r.finish()?;
        Ok(TePublicKey { n, t, h, vks })
    }
}

impl TeSecretShare {
    pub fn index(&self) -> u16 {
        self.index
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u16(self.index);
        group::put(&mut w, &self.x);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let index = r.u16()?;
        let x = group::get(&mut r)?;
        r.finish()?;
        Ok(TeSecretShare { index, x })
    }
}

impl DecryptionShare {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u16(self.replica_id)
            .bytes(&self.share_value)
            .bytes(&self.proof)
            .bytes(&self.label);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let s = DecryptionShare {
            replica_id: r.u16()?,
            share_value: r.bytes()?.to_vec(),
            proof: r.bytes()?.to_vec(),
            label: r.bytes()?.to_vec(),
        };
        r.finish()?;
        Ok(s)
    }
}
