//! Wall-clock latency of the three access-control schemes plus an
//! end-to-end simulated write/read per scheme.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::crypto::be::SubtreeKeyTree;
use crate::crypto::engine::WriteKeys;
use crate::crypto::pke::PkeSecretKey;
use crate::crypto::te::{self, TeCiphertext};
use crate::crypto::{abe, read_engine, write_engine, AccessType, CryptoError, Policy, ReadKey};
use crate::sim::{self, SimConfig, SimError};

#[derive(Debug, Clone, Copy, Serialize, Default)]
pub struct SchemeTiming {
    pub enc_ms: f64,
    pub dec_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SchemeReport {
    pub access: AccessType,
    pub size: usize,
    pub iters: usize,
    /// Owner-side `write_engine`, mean milliseconds.
    pub enc_ms: f64,
    /// Requester-side `read_engine`, mean milliseconds. For TE this covers
    /// combining t shares, not producing them.
    pub dec_ms: f64,
    /// Mean wall-clock milliseconds per write in a simulated run.
    pub e2e_write_ms: Option<f64>,
    pub e2e_write_steps: Option<f64>,
    pub e2e_read_steps: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub schemes: Vec<SchemeReport>,
    /// enc(BE) < enc(TE) < enc(ABE)
    pub ordering_holds: bool,
}

impl BenchReport {
    pub fn get(&self, at: AccessType) -> &SchemeReport {
        self.schemes
            .iter()
            .find(|s| s.access == at)
            .expect("every scheme is benched")
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<6} {:>10} {:>12} {:>12} {:>14}\n",
            "scheme", "size", "enc_ms", "dec_ms", "e2e_write_ms"
        );
        for r in &self.schemes {
            s.push_str(&format!(
                "{:<6} {:>10} {:>12.4} {:>12.4} {:>14}\n",
                r.access.to_string(),
                r.size,
                r.enc_ms,
                r.dec_ms,
                r.e2e_write_ms.map_or("-".into(), |v| format!("{v:.3}"))
            ));
        }
        s.push_str(&format!(
            "ordering enc(BE) < enc(TE) < enc(ABE): {}\n",
            if self.ordering_holds {
                "holds"
            } else {
                "VIOLATED"
            }
        ));
        s
    }
}

/// Mean encryption and decryption time of one scheme on `size`-byte
/// payloads. Policies mirror the simulator's defaults.
pub fn time_scheme(
    at: AccessType,
    size: usize,
    iters: usize,
    seed: u64,
) -> Result<SchemeTiming, CryptoError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut m = vec![0u8; size];
    rng.fill_bytes(&mut m);
    let (abe_pk, abe_msk) = abe::setup(128, &mut rng)?;
    let mut seed32 = [0u8; 32];
    rng.fill_bytes(&mut seed32);
    let tree = SubtreeKeyTree::build(8, &seed32)?;
    let tk = te::setup(4, 2, &mut rng)?;
    let hash_sk = PkeSecretKey::generate(&mut rng);
    let hash_pk = hash_sk.public_key();
    let label = b"bench".to_vec();
    let policy = match at {
        AccessType::Abe => Policy::abe("dept_A AND role_analyst")?,
        AccessType::Be => Policy::be(8, [0])?,
        AccessType::Te => Policy::te(label.clone(), ["alice".to_string()])?,
    };
    let keys = WriteKeys {
        abe: Some(&abe_pk),
        be_tree: Some(&tree),
        te: Some(&tk.pk),
        hash_pk: Some(&hash_pk),
    };
    let abe_sk = abe::keygen(
        &abe_msk,
        &["dept_A".to_string(), "role_analyst".to_string()].into(),
        &mut rng,
    )?;
    let leaf = tree.leaf_keys(1)?;

    let iters = iters.max(1);
    let mut enc = 0.0;
    let mut dec = 0.0;
    for _ in 0..iters {
        let t0 = Instant::now();
        let (bundle, _c_h) = write_engine(&m, at, &policy, keys, &mut rng)?;
        enc += t0.elapsed().as_secs_f64();
        // replica-side share production is outside the requester's timing
        let shares = if at == AccessType::Te {
            let ct = TeCiphertext::decode(&bundle.x)?;
            tk.shares[..2]
                .iter()
                .map(|s| te::share_dec(s, &ct, &label, &mut rng))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };
        let key = match at {
            AccessType::Abe => ReadKey::Abe(&abe_sk),
            AccessType::Be => ReadKey::Be(&leaf),
            AccessType::Te => ReadKey::Te {
                pk: &tk.pk,
                shares: &shares,
            },
        };
        let t0 = Instant::now();
        let out = read_engine(&bundle, key)?;
        dec += t0.elapsed().as_secs_f64();
        debug_assert_eq!(out, m);
    }
    Ok(SchemeTiming {
        enc_ms: enc * 1e3 / iters as f64,
        dec_ms: dec * 1e3 / iters as f64,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Times all three schemes. With `e2e_writes > 0` also runs a simulated
/// deployment per scheme (based on `base`) and reports per-write latency.
pub fn run(base: &SimConfig, iters: usize, e2e_writes: usize) -> Result<BenchReport, BenchError> {
    let mut schemes = Vec::new();
    for at in [AccessType::Be, AccessType::Te, AccessType::Abe] {
        let t = time_scheme(at, base.size, iters, base.seed)?;
        let mut r = SchemeReport {
            access: at,
            size: base.size,
            iters,
            enc_ms: t.enc_ms,
            dec_ms: t.dec_ms,
            e2e_write_ms: None,
            e2e_write_steps: None,
            e2e_read_steps: None,
        };
        if e2e_writes > 0 {
            let cfg = SimConfig {
                access: at,
                writes: e2e_writes,
                read_every: 1,
                ..base.clone()
            };
            let t0 = Instant::now();
            let out = sim::run(cfg)?;
            r.e2e_write_ms = Some(t0.elapsed().as_secs_f64() * 1e3 / e2e_writes as f64);
            r.e2e_write_steps = Some(out.report.metrics.phases.end_to_end_write_steps.mean);
            r.e2e_read_steps = Some(out.report.metrics.phases.read_steps.mean);
        }
        schemes.push(r);
    }
    let enc = |at| {
        schemes
            .iter()
            .find(|s: &&SchemeReport| s.access == at)
            .map(|s| s.enc_ms)
            .unwrap_or(f64::NAN)
    };
    let ordering_holds =
        enc(AccessType::Be) < enc(AccessType::Te) && enc(AccessType::Te) < enc(AccessType::Abe);
    Ok(BenchReport {
        schemes,
        ordering_holds,
    })
}
