//! Long-lived public-key encryption: X25519 key encapsulation, HKDF-SHA256
//! key derivation and ChaCha20-Poly1305 for the body.
//!
//! Used for the content-hash ciphertext `c_h` on the BE/TE paths and for
//! everything addressed to the trusted verifier.

use hkdf::Hkdf;
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};

use super::aead::{self, Algorithm, SymmetricKey};
use super::{CryptoError, CryptoRand};

const KDF_INFO: &[u8] = b"facos/pke/v1";

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PkePublicKey(pub [u8; 32]);

impl std::fmt::Debug for PkePublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PkePublicKey({})", hex::encode(&self.0[..6]))
    }
}

#[derive(Clone)]
pub struct PkeSecretKey(StaticSecret);

impl std::fmt::Debug for PkeSecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PkeSecretKey(..)")
    }
}

impl PkeSecretKey {
    pub fn generate(rng: &mut impl CryptoRand) -> Self {
        PkeSecretKey(StaticSecret::random_from_rng(rng))
    }

    pub fn public_key(&self) -> PkePublicKey {
        PkePublicKey(PublicKey::from(&self.0).to_bytes())
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn from_bytes(b: [u8; 32]) -> Self {
        PkeSecretKey(StaticSecret::from(b))
    }
}

fn derive_key(shared: &[u8; 32], eph: &[u8; 32], recipient: &[u8; 32]) -> SymmetricKey {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(eph);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; 32];
    hk.expand(KDF_INFO, &mut okm).expect("32-byte HKDF output");
    SymmetricKey(okm)
}

/// Output layout: `ephemeral public key (32) || sealed body`.
pub fn encrypt(pk: &PkePublicKey, msg: &[u8], rng: &mut impl CryptoRand) -> Vec<u8> {
    let eph = StaticSecret::random_from_rng(&mut *rng);
    let eph_pub = PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&PublicKey::from(pk.0));
    let key = derive_key(shared.as_bytes(), &eph_pub, &pk.0);
    let mut out = eph_pub.to_vec();
    out.extend(aead::seal(
        Algorithm::ChaCha20Poly1305,
        &key,
        msg,
        &eph_pub,
        rng,
    ));
    out
}

/// Wrong key, tampering and malformed input all fail as `KeyMismatch`; the
/// two are indistinguishable to the recipient.
pub fn decrypt(sk: &PkeSecretKey, ct: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ct.len() < 32 + aead::OVERHEAD {
        return Err(CryptoError::KeyMismatch);
    }
    let eph_pub: [u8; 32] = ct[..32].try_into().unwrap();
    let shared = sk.0.diffie_hellman(&PublicKey::from(eph_pub));
    if !shared.was_contributory() {
        return Err(CryptoError::KeyMismatch);
    }
    let key = derive_key(shared.as_bytes(), &eph_pub, &sk.public_key().0);
    aead::open(&key, &ct[32..], &eph_pub).map_err(|_| CryptoError::KeyMismatch)
}
