//! Complete-subtree broadcast encryption.
//!
//! Recipients sit at the leaves of a full binary tree stored in heap order:
//! node 0 is the root and node `i` has children `2i+1` and `2i+2`. Every
//! node carries a symmetric key; a leaf holds its own key and all of its
//! ancestors' keys. A message is encrypted once under a fresh stream key,
//! which is then wrapped under each node of the cover set: the minimal
//! set of subtrees whose leaves are exactly the non-revoked recipients.

use std::collections::BTreeSet;

use hkdf::Hkdf;
use sha2::Sha256;

use super::aead::{self, Algorithm, SymmetricKey};
use super::engine::CipherBundle;
use super::{AccessType, CryptoError, CryptoRand};
use crate::codec::{Reader, Writer};

const PAYLOAD_AAD: &[u8] = b"facos/be/payload";

#[derive(Clone)]
pub struct SubtreeKeyTree {
    n_clients: usize,
    n_leaves: usize,
    node_keys: Vec<SymmetricKey>,
}

impl std::fmt::Debug for SubtreeKeyTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubtreeKeyTree")
            .field("n_clients", &self.n_clients)
            .field("n_leaves", &self.n_leaves)
            .finish_non_exhaustive()
    }
}

/// A recipient's key chain, ordered from its leaf up to the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafKeys {
    pub leaf_index: usize,
    pub keys: Vec<(usize, SymmetricKey)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoverSet(BTreeSet<usize>);

impl CoverSet {
    pub fn nodes(&self) -> &BTreeSet<usize> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn parent(node: usize) -> Option<usize> {
    (node > 0).then(|| (node - 1) / 2)
}

/// `node` itself followed by each ancestor up to the root.
pub fn path_to_root(node: usize) -> impl Iterator<Item = usize> {
    std::iter::successors(Some(node), |&n| parent(n))
}

impl SubtreeKeyTree {
    /// Leaves are padded to the next power of two; padding leaves are
    /// permanently revoked.
    pub fn build(n_clients: usize, seed: &[u8; 32]) -> Result<Self, CryptoError> {
        if n_clients == 0 {
            return Err(CryptoError::InvalidPolicy("empty client group".into()));
        }
        let n_leaves = n_clients.next_power_of_two();
        let hk = Hkdf::<Sha256>::new(Some(b"facos/be/tree/v1"), seed);
        let node_keys = (0..2 * n_leaves - 1)
            .map(|i| {
                let mut k = [0u8; 32];
                hk.expand(&(i as u64).to_be_bytes(), &mut k)
                    .expect("32-byte HKDF output");
                SymmetricKey(k)
            })
            .collect();
        Ok(SubtreeKeyTree {
            n_clients,
            n_leaves,
            node_keys,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn node_count(&self) -> usize {
        self.node_keys.len()
    }

    pub fn leaf_offset(&self) -> usize {
        self.n_leaves - 1
    }

    pub fn leaf_node(&self, leaf: usize) -> usize {
        self.leaf_offset() + leaf
    }

    pub fn node_key(&self, node: usize) -> &SymmetricKey {
        &self.node_keys[node]
    }

    pub fn leaf_keys(&self, leaf: usize) -> Result<LeafKeys, CryptoError> {
        if leaf >= self.n_clients {
            return Err(CryptoError::InvalidPolicy(format!(
                "leaf {leaf} outside group of {}",
                self.n_clients
            )));
        }
        let keys = path_to_root(self.leaf_node(leaf))
            .map(|n| (n, self.node_keys[n].clone()))
            .collect();
        Ok(LeafKeys {
            leaf_index: leaf,
            keys,
        })
    }

    /// Start from the non-revoked leaf nodes and sweep the internal nodes
    /// from the bottom up, replacing any pair of present siblings by their
    /// parent.
    pub fn cover(&self, revoked: &BTreeSet<usize>) -> Result<CoverSet, CryptoError> {
        if let Some(&bad) = revoked.iter().find(|&&r| r >= self.n_clients) {
            return Err(CryptoError::InvalidPolicy(format!(
                "revoked leaf {bad} outside group of {}",
                self.n_clients
            )));
        }
        let mut k: BTreeSet<usize> = (0..self.n_clients)
            .filter(|l| !revoked.contains(l))
            .map(|l| self.leaf_node(l))
            .collect();
        if k.is_empty() {
            return Err(CryptoError::EmptyAudience);
        }
        for i in (0..self.n_leaves - 1).rev() {
            if k.contains(&(2 * i + 1)) && k.contains(&(2 * i + 2)) {
                k.remove(&(2 * i + 1));
                k.remove(&(2 * i + 2));
                k.insert(i);
            }
        }
        Ok(CoverSet(k))
    }
}

/// Wrapped stream keys, one per cover node, in ascending node order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeHeader {
    pub entries: Vec<(usize, Vec<u8>)>,
}

impl BeHeader {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.entries.len() as u32);
        for (node, wrap) in &self.entries {
            w.u64(*node as u64).bytes(wrap);
        }
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        let mut last = None;
        for _ in 0..n {
            let node = r.u64()? as usize;
            if last.is_some_and(|l| l >= node) {
                return Err(CryptoError::InvalidCiphertext);
            }
            last = Some(node);
            entries.push((node, r.bytes()?.to_vec()));
        }
        r.finish()?;
        Ok(BeHeader { entries })
    }
}

fn wrap_aad(node: usize) -> [u8; 8] {
    (node as u64).to_be_bytes()
}

pub fn encrypt(
    m: &[u8],
    tree: &SubtreeKeyTree,
    revoked: &BTreeSet<usize>,
    rng: &mut impl CryptoRand,
) -> Result<CipherBundle, CryptoError> {
    let cover = tree.cover(revoked)?;
    let key_sc = SymmetricKey::random(rng);
    let c_m = aead::seal(Algorithm::ChaCha20Poly1305, &key_sc, m, PAYLOAD_AAD, rng);
    let entries = cover
        .nodes()
        .iter()
        .map(|&node| {
            let wrap = aead::seal(
                Algorithm::ChaCha20Poly1305,
                tree.node_key(node),
                key_sc.as_bytes(),
                &wrap_aad(node),
                rng,
            );
            (node, wrap)
        })
        .collect();
    Ok(CipherBundle::new(
        AccessType::Be,
        c_m,
        BeHeader { entries }.encode(),
    ))
}

/// Select the entry whose node lies on the leaf's path to the root.
pub fn decrypt(leaf_keys: &LeafKeys, bundle: &CipherBundle) -> Result<Vec<u8>, CryptoError> {
    if bundle.tag != AccessType::Be {
        return Err(CryptoError::TagMismatch {
            expected: AccessType::Be,
            found: bundle.tag,
        });
    }
    let header = BeHeader::decode(&bundle.x).map_err(|_| CryptoError::CorruptBundle)?;
    let (node, key) = leaf_keys
        .keys
        .iter()
        .find_map(|(n, k)| {
            header
                .entries
                .binary_search_by_key(n, |(node, _)| *node)
                .ok()
                .map(|i| (&header.entries[i], k))
        })
        .ok_or(CryptoError::Denied)?;
    let key_sc = aead::open(key, &node.1, &wrap_aad(node.0))?;
    let key_sc = SymmetricKey::from_slice(&key_sc)?;
    aead::open(&key_sc, &bundle.c_m, PAYLOAD_AAD)
}

impl LeafKeys {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.leaf_index as u64).u32(self.keys.len() as u32);
        for (n, k) in &self.keys {
            w.u64(*n as u64).raw(k.as_bytes());
        }
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf);
        let leaf_index = r.u64()? as usize;
        let n = r.u32()? as usize;
        let mut keys = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let node = r.u64()? as usize;
            keys.push((node, SymmetricKey(r.array()?)));
        }
        r.finish()?;
        Ok(LeafKeys { leaf_index, keys })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn revoked(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    /// Independent oracle: each non-revoked leaf has exactly one cover node
    /// on its root path, each revoked leaf has none.
    fn exact_cover(tree: &SubtreeKeyTree, rev: &BTreeSet<usize>, cover: &CoverSet) -> bool {
        (0..tree.n_leaves()).all(|leaf| {
            let hits = path_to_root(tree.leaf_node(leaf))
                .filter(|n| cover.nodes().contains(n))
                .count();
            let eligible = leaf < tree.n_clients() && !rev.contains(&leaf);
            hits == usize::from(eligible)
        })
    }

    #[test]
    fn four_clients_give_seven_nodes() {
        let t = SubtreeKeyTree::build(4, &[0; 32]).unwrap();
        assert_eq!(t.node_count(), 7);
        assert_eq!((t.leaf_node(0), t.leaf_node(3)), (3, 6));
    }

    #[test]
    fn five_clients_pad_to_eight_leaves() {
        let t = SubtreeKeyTree::build(5, &[0; 32]).unwrap();
        assert_eq!((t.n_leaves(), t.node_count()), (8, 15));
        let c = t.cover(&BTreeSet::new()).unwrap();
        assert!(exact_cover(&t, &BTreeSet::new(), &c));
        // leaves 5..8 are dummies, so the root cannot cover.
        assert!(!c.nodes().contains(&0));
        assert_eq!(c.nodes(), &[1, 11].into_iter().collect());
    }

    #[test]
    fn leaf_key_chain_is_ancestor_path() {
        let t = SubtreeKeyTree::build(4, &[1; 32]).unwrap();
        let lk = t.leaf_keys(0).unwrap();
        let nodes: Vec<usize> = lk.keys.iter().map(|(n, _)| *n).collect();
        assert_eq!(nodes, vec![3, 1, 0]);
        let t8 = SubtreeKeyTree::build(8, &[1; 32]).unwrap();
        assert_eq!(t8.leaf_keys(1).unwrap().keys.len(), 4);
        assert!(t8.leaf_keys(8).is_err());
    }

    #[test]
    fn cover_examples() {
        let t = SubtreeKeyTree::build(8, &[2; 32]).unwrap();
        assert_eq!(
            t.cover(&revoked(&[])).unwrap().nodes(),
            &[0].into_iter().collect()
        );
        let c = t.cover(&revoked(&[0])).unwrap();
        assert_eq!(c.nodes(), &[2, 4, 8].into_iter().collect());
        assert!(exact_cover(&t, &revoked(&[0]), &c));
        let t4 = SubtreeKeyTree::build(4, &[2; 32]).unwrap();
        assert_eq!(t4.cover(&revoked(&[2])).unwrap().len(), 2);
        assert_eq!(t.cover(&(0..8).collect()), Err(CryptoError::EmptyAudience));
        assert!(t.cover(&revoked(&[8])).is_err());
    }

    #[test]
    fn single_client_uses_root() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let t = SubtreeKeyTree::build(1, &[3; 32]).unwrap();
        assert_eq!(t.node_count(), 1);
        let b = encrypt(b"hi", &t, &BTreeSet::new(), &mut rng).unwrap();
        let h = BeHeader::decode(&b.x).unwrap();
        assert_eq!(h.entries.len(), 1);
        assert_eq!(h.entries[0].0, 0);
        assert_eq!(decrypt(&t.leaf_keys(0).unwrap(), &b).unwrap(), b"hi");
    }

    #[test]
    fn per_leaf_decryption_matches_revocation() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let t = SubtreeKeyTree::build(8, &[4; 32]).unwrap();
        let rev = revoked(&[0]);
        let b = encrypt(b"broadcast", &t, &rev, &mut rng).unwrap();
        let h = BeHeader::decode(&b.x).unwrap();
        let nodes: Vec<usize> = h.entries.iter().map(|e| e.0).collect();
        assert_eq!(nodes, vec![2, 4, 8]);
        for leaf in 0..8 {
            let r = decrypt(&t.leaf_keys(leaf).unwrap(), &b);
            if rev.contains(&leaf) {
                assert_eq!(r, Err(CryptoError::Denied));
            } else {
                assert_eq!(r.unwrap(), b"broadcast");
            }
        }
    }

    #[test]
    fn corrupted_wrap_is_not_denied() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let t = SubtreeKeyTree::build(2, &[5; 32]).unwrap();
        let mut b = encrypt(b"m", &t, &BTreeSet::new(), &mut rng).unwrap();
        let mut h = BeHeader::decode(&b.x).unwrap();
        h.entries[0].1[20] ^= 1;
        b.x = h.encode();
        assert_eq!(
            decrypt(&t.leaf_keys(0).unwrap(), &b),
            Err(CryptoError::CorruptBundle)
        );
    }

    #[test]
    fn leaf_keys_encoding_round_trips() {
        let t = SubtreeKeyTree::build(16, &[6; 32]).unwrap();
        let lk = t.leaf_keys(11).unwrap();
        assert_eq!(LeafKeys::decode(&lk.encode()).unwrap(), lk);
    }
}
