//! Owner transactions `(h, sigma)` carrying an origin signature.
//!
//! The signature is publicly verifiable so every correct replica reaches the
//! same accept/reject verdict for a committed batch, and a Byzantine replica
//! cannot mint transactions in an owner's name.

use std::collections::BTreeMap;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{CipherBundle, CryptoRand, Digest};

/// An owner's signing key, issued at registration.
#[derive(Clone)]
pub struct OriginKey(SigningKey);

impl std::fmt::Debug for OriginKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("OriginKey(..)")
    }
}

impl OriginKey {
    pub fn generate(rng: &mut impl CryptoRand) -> Self {
        OriginKey(SigningKey::generate(rng))
    }

    pub fn from_bytes(b: [u8; 32]) -> Self {
        OriginKey(SigningKey::from_bytes(&b))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn public(&self) -> [u8; 32] {
        self.0.verifying_key().to_bytes()
    }

    fn sign(&self, msg: &[u8]) -> [u8; 64] {
        self.0.sign(msg).to_bytes()
    }
}

fn signed_bytes(owner: u16, h: &Digest, sigma: &[u8]) -> Vec<u8> {
    let mut w = Writer::with_capacity(sigma.len() + 64);
    w.raw(b"facos/tx/v1").u16(owner).raw(h).bytes(sigma);
    w.finish()
}

/// Public origin keys of every registered owner.
#[derive(Debug, Clone, Default)]
pub struct OriginDirectory {
    keys: BTreeMap<u16, VerifyingKey>,
}

impl OriginDirectory {
    pub fn insert(&mut self, owner: u16, public: [u8; 32]) -> Result<(), DecodeError> {
        let vk =
            VerifyingKey::from_bytes(&public).map_err(|_| DecodeError::Invalid("origin key"))?;
        self.keys.insert(owner, vk);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u16, [u8; 32])> + '_ {
        self.keys.iter().map(|(k, v)| (*k, v.to_bytes()))
    }

    fn verify(&self, tx: &Tx) -> Result<(), TxReject> {
        let vk = self.keys.get(&tx.owner).ok_or(TxReject::UnknownOwner)?;
        vk.verify(
            &signed_bytes(tx.owner, &tx.h, &tx.sigma),
            &Signature::from_bytes(&tx.sig),
        )
        .map_err(|_| TxReject::BadOrigin)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tx {
    pub owner: u16,
    pub h: Digest,
    pub sigma: Vec<u8>,
    pub sig: [u8; 64],
}

impl Tx {
    pub fn new(owner: u16, key: &OriginKey, h: Digest, sigma: Vec<u8>) -> Self {
        let sig = key.sign(&signed_bytes(owner, &h, &sigma));
        Tx {
            owner,
            h,
            sigma,
            sig,
        }
    }

    /// Origin signature and bundle shape.
    pub fn check(&self, dir: &OriginDirectory) -> Result<CipherBundle, TxReject> {
        dir.verify(self)?;
        CipherBundle::decode(&self.sigma).map_err(|_| TxReject::MalformedBundle)
    }

    pub fn write(&self, w: &mut Writer) {
        w.u16(self.owner)
            .raw(&self.h)
            .bytes(&self.sigma)
            .raw(&self.sig);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Tx {
            owner: r.u16()?,
            h: r.array()?,
            sigma: r.bytes()?.to_vec(),
            sig: r.array()?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.sigma.len() + 112);
        self.write(&mut w);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let tx = Tx::read(&mut r)?;
        r.finish()?;
        Ok(tx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxReject {
    UnknownOwner,
    BadOrigin,
    MalformedBundle,
}

impl std::fmt::Display for TxReject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TxReject::UnknownOwner => "unknown_owner",
            TxReject::BadOrigin => "bad_origin",
            TxReject::MalformedBundle => "malformed_bundle",
        })
    }
}

/// A proposal: the batch a replica feeds into its RBC instance.
pub fn encode_batch(txs: &[Tx]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(txs.len() as u32);
    for tx in txs {
        tx.write(&mut w);
    }
    w.finish()
}

pub fn decode_batch(buf: &[u8]) -> Result<Vec<Tx>, DecodeError> {
    let mut r = Reader::new(buf);
    let k = r.u32()? as usize;
    let mut out = Vec::with_capacity(k.min(4096));
    for _ in 0..k {
        out.push(Tx::read(&mut r)?);
    }
    r.finish()?;
    Ok(out)
}
