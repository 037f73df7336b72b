//! Authenticated symmetric encryption.
//!
//! Sealed output is self-describing: `alg (1) || nonce (12) || ciphertext || tag (16)`.

use aes_gcm::Aes256Gcm;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;

use super::{CryptoError, CryptoRand};

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const OVERHEAD: usize = 1 + NONCE_LEN + TAG_LEN;

#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey(pub [u8; KEY_LEN]);

impl SymmetricKey {
    pub fn random(rng: &mut impl CryptoRand) -> Self {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        SymmetricKey(k)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn from_slice(b: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; KEY_LEN] = b.try_into().map_err(|_| CryptoError::CorruptBundle)?;
        Ok(SymmetricKey(arr))
    }
}

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

/// The block-cipher mode used for payloads, and the stream-cipher mode used
/// by the broadcast scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Aes256Gcm = 1,
    ChaCha20Poly1305 = 2,
}

impl Algorithm {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Algorithm::Aes256Gcm),
            2 => Some(Algorithm::ChaCha20Poly1305),
            _ => None,
        }
    }
}

pub fn seal(
    alg: Algorithm,
    key: &SymmetricKey,
    plaintext: &[u8],
    aad: &[u8],
    rng: &mut impl CryptoRand,
) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let payload = Payload {
        msg: plaintext,
        aad,
    };
    let ct = match alg {
        Algorithm::Aes256Gcm => {
            Aes256Gcm::new(key.0.as_ref().into()).encrypt(nonce.as_ref().into(), payload)
        }
        Algorithm::ChaCha20Poly1305 => {
            ChaCha20Poly1305::new(key.0.as_ref().into()).encrypt(nonce.as_ref().into(), payload)
        }
    }
    .expect("AEAD encryption of in-memory buffer");
    let mut out = Vec::with_capacity(OVERHEAD + plaintext.len());
    out.push(alg as u8);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

/// Any authentication failure, including a wrong key, is `CorruptBundle`.
pub fn open(key: &SymmetricKey, sealed: &[u8], aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if sealed.len() < OVERHEAD {
        return Err(CryptoError::CorruptBundle);
    }
    let alg = Algorithm::from_byte(sealed[0]).ok_or(CryptoError::CorruptBundle)?;
    let nonce = &sealed[1..1 + NONCE_LEN];
    let payload = Payload {
        msg: &sealed[1 + NONCE_LEN..],
        aad,
    };
    match alg {
        Algorithm::Aes256Gcm => {
            Aes256Gcm::new(key.0.as_ref().into()).decrypt(nonce.into(), payload)
        }
        Algorithm::ChaCha20Poly1305 => {
            ChaCha20Poly1305::new(key.0.as_ref().into()).decrypt(nonce.into(), payload)
        }
    }
    .map_err(|_| CryptoError::CorruptBundle)
}
