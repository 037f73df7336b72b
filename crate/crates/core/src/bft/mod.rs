//! Asynchronous BFT replicated store: per-epoch reliable broadcast plus
//! binary agreement, local persistence and the quorum read path.

pub mod aba;
pub mod rbc;
pub mod replica;
pub mod store;
pub mod tx;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaConfig {
    pub n: usize,
    pub f: usize,
    pub replica_id: u16,
    /// Maximum transactions per epoch across all replicas.
    pub batch_cap: usize,
}

impl ReplicaConfig {
    pub fn new(n: usize, f: usize, replica_id: u16, batch_cap: usize) -> Result<Self, String> {
        if n == 0 || 3 * f + 1 > n {
            return Err(format!("f={f} too large for n={n}"));
        }
        if replica_id as usize >= n {
            return Err(format!("replica id {replica_id} out of range for n={n}"));
        }
        if batch_cap == 0 {
            return Err("batch cap must be positive".into());
        }
        Ok(ReplicaConfig {
            n,
            f,
            replica_id,
            batch_cap,
        })
    }

    pub fn per_replica_batch(&self) -> usize {
        self.batch_cap.div_ceil(self.n)
    }
}
