//! Versioned key files: `"FACK" || version u16 || scheme u8 || kind u8 || body`.
//!
//! Scheme bytes reuse the access-type numbering; `4` marks long-lived
//! public-key encryption keys.

use std::path::Path;

use super::abe::{AbeMasterKey, AbePublicKey, AbeSecretKey};
use super::be::LeafKeys;
use super::pke::{PkePublicKey, PkeSecretKey};
use super::te::{TePublicKey, TeSecretShare};
use super::CryptoError;
use crate::codec::{DecodeError, Reader, Writer};

const MAGIC: &[u8; 4] = b"FACK";
const VERSION: u16 = 1;
const SCHEME_PKE: u8 = 4;

#[derive(Debug, Clone)]
pub enum KeyFile {
    AbePublic(AbePublicKey),
    AbeMaster(AbeMasterKey),
    AbeSecret(AbeSecretKey),
    BeLeaf(LeafKeys),
    /// Seed from which a whole subtree key tree is re-derived.
    BeTreeSeed {
        n_clients: u64,
        seed: [u8; 32],
    },
    TePublic(TePublicKey),
    TeShare(TeSecretShare),
    PkePublic(PkePublicKey),
    PkeSecret(PkeSecretKey),
}

impl KeyFile {
    fn header(&self) -> (u8, u8) {
        match self {
            KeyFile::BeLeaf(_) => (1, 1),
            KeyFile::BeTreeSeed { .. } => (1, 2),
            KeyFile::AbePublic(_) => (2, 1),
            KeyFile::AbeMaster(_) => (2, 2),
            KeyFile::AbeSecret(_) => (2, 3),
            KeyFile::TePublic(_) => (3, 1),
            KeyFile::TeShare(_) => (3, 2),
            KeyFile::PkePublic(_) => (SCHEME_PKE, 1),
            KeyFile::PkeSecret(_) => (SCHEME_PKE, 2),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let (scheme, kind) = self.header();
        let body = match self {
            KeyFile::AbePublic(k) => k.encode(),
            KeyFile::AbeMaster(k) => k.encode(),
            KeyFile::AbeSecret(k) => k.encode(),
            KeyFile::BeLeaf(k) => k.encode(),
            KeyFile::BeTreeSeed { n_clients, seed } => {
                let mut w = Writer::new();
                w.u64(*n_clients).raw(seed);
                w.finish()
            }
            KeyFile::TePublic(k) => k.encode(),
            KeyFile::TeShare(k) => k.encode(),
            KeyFile::PkePublic(k) => k.0.to_vec(),
            KeyFile::PkeSecret(k) => k.to_bytes().to_vec(),
        };
        let mut w = Writer::new();
        w.raw(MAGIC).u16(VERSION).u8(scheme).u8(kind).bytes(&body);
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        if r.raw(4)? != MAGIC {
            return Err(DecodeError::BadMagic.into());
        }
        let v = r.u16()?;
        if v != VERSION {
            return Err(DecodeError::Version(v).into());
        }
        let scheme = r.u8()?;
        let kind = r.u8()?;
        let body = r.bytes()?;
        r.finish()?;
        let fixed32 = |b: &[u8]| -> Result<[u8; 32], CryptoError> {
            b.try_into()
                .map_err(|_| DecodeError::Invalid("32-byte key").into())
        };
        Ok(match (scheme, kind) {
            (1, 1) => KeyFile::BeLeaf(LeafKeys::decode(body)?),
            (1, 2) => {
                let mut r = Reader::new(body);
                let n_clients = r.u64()?;
                let seed = r.array()?;
                r.finish()?;
                KeyFile::BeTreeSeed { n_clients, seed }
            }
            (2, 1) => KeyFile::AbePublic(AbePublicKey::decode(body)?),
            (2, 2) => KeyFile::AbeMaster(AbeMasterKey::decode(body)?),
            (2, 3) => KeyFile::AbeSecret(AbeSecretKey::decode(body)?),
            (3, 1) => KeyFile::TePublic(TePublicKey::decode(body)?),
            (3, 2) => KeyFile::TeShare(TeSecretShare::decode(body)?),
            (SCHEME_PKE, 1) => KeyFile::PkePublic(PkePublicKey(fixed32(body)?)),
            (SCHEME_PKE, 2) => KeyFile::PkeSecret(PkeSecretKey::from_bytes(fixed32(body)?)),
            (s, _) if !(1..=SCHEME_PKE).contains(&s) => {
                return Err(DecodeError::UnknownTag(s).into())
            }
            (_, k) => return Err(DecodeError::UnknownTag(k).into()),
        })
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.encode())
    }

    pub fn read_from(path: &Path) -> std::io::Result<Result<Self, CryptoError>> {
        Ok(Self::decode(&std::fs::read(path)?))
    }
}
