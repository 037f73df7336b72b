//! Prime-order group helpers over BLS12-381 shared by the ABE and TE schemes.

use ark_bls12_381::{g1, Fr, G1Affine, G1Projective};
use ark_ec::hashing::curve_maps::wb::WBMap;
use ark_ec::hashing::map_to_curve_hasher::MapToCurveBasedHasher;
use ark_ec::hashing::HashToCurve;
use ark_ff::field_hashers::DefaultFieldHasher;
use ark_ff::{PrimeField, UniformRand};
use ark_serialize::{CanonicalDeserialize, CanonicalSerialize};
use sha2::{Digest as _, Sha256, Sha512};

use super::{CryptoError, CryptoRand};
use crate::codec::{Reader, Writer};

pub type Scalar = Fr;

type G1Hasher =
    MapToCurveBasedHasher<G1Projective, DefaultFieldHasher<Sha256, 128>, WBMap<g1::Config>>;

/// Hash an arbitrary message onto G1 under a domain-separation tag.
pub fn hash_to_g1(dst: &[u8], msg: &[u8]) -> G1Affine {
    G1Hasher::new(dst)
        .and_then(|h| h.hash(msg))
        .expect("hash-to-curve with a fixed, non-empty DST")
}

/// Hash to a scalar via a 512-bit digest reduced mod the group order.
pub fn hash_to_scalar(parts: &[&[u8]]) -> Scalar {
    let mut h = Sha512::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    Fr::from_le_bytes_mod_order(&h.finalize())
}

pub fn random_scalar(rng: &mut impl CryptoRand) -> Scalar {
    Fr::rand(rng)
}

pub fn to_bytes<T: CanonicalSerialize>(v: &T) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.compressed_size());
    v.serialize_compressed(&mut out)
        .expect("serialize into Vec");
    out
}

pub fn from_bytes<T: CanonicalDeserialize>(b: &[u8]) -> Result<T, CryptoError> {
    T::deserialize_compressed(b).map_err(|_| CryptoError::InvalidCiphertext)
}

pub fn put<T: CanonicalSerialize>(w: &mut Writer, v: &T) {
    w.bytes(&to_bytes(v));
}

pub fn get<T: CanonicalDeserialize>(r: &mut Reader<'_>) -> Result<T, CryptoError> {
    from_bytes(r.bytes()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_to_g1_is_deterministic_and_domain_separated() {
        let a = hash_to_g1(b"dst-1", b"A");
        assert_eq!(a, hash_to_g1(b"dst-1", b"A"));
        assert_ne!(a, hash_to_g1(b"dst-2", b"A"));
        assert_ne!(a, hash_to_g1(b"dst-1", b"B"));
        assert!(a.is_on_curve() && a.is_in_correct_subgroup_assuming_on_curve());
    }

    #[test]
    fn hash_to_scalar_is_length_framed() {
        assert_ne!(
            hash_to_scalar(&[b"ab", b"c"]),
            hash_to_scalar(&[b"a", b"bc"])
        );
    }
}
