//! FACOS: fine-grained access control for data shared through an
//! asynchronous BFT off-chain store, with encrypted metadata anchored on a
//! permissioned ledger.

pub mod bench;
pub mod bft;
pub mod client;
pub mod codec;
pub mod crypto;
pub mod kgc;
pub mod ledger;
pub mod node;
pub mod sim;
pub mod transport;
pub mod verifier;
pub mod wire;
