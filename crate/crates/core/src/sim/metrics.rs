//! Per-write phase latencies and per-epoch commit records.

use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Percentiles {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Percentiles::default();
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
        Percentiles {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: at(0.5),
            p90: at(0.9),
            p99: at(0.99),
            max: v[v.len() - 1],
        }
    }
}

/// Timestamps of one write, in logical steps unless noted.
#[derive(Debug, Clone, Default)]
pub struct WriteTimes {
    pub encrypt_us: f64,
    pub submitted: Option<u64>,
    pub first_commit: Option<u64>,
    pub acked: Option<u64>,
    pub anchored: Option<u64>,
    pub done: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub committed_at: u64,
    pub txs: usize,
    /// Steps since the previous epoch committed at the same replica.
    pub latency: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Collector {
    pub writes: BTreeMap<usize, WriteTimes>,
    pub epochs: Vec<EpochRecord>,
    pub reads: Vec<(u64, u64)>,
    last_epoch_at: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseReport {
    /// Client-side encryption, wall-clock microseconds.
    pub encryption_us: Percentiles,
    /// Submission to first commit at a correct replica.
    pub consensus_steps: Percentiles,
    /// First commit to f+1 acknowledgements at the owner.
    pub storage_steps: Percentiles,
    /// Ledger submission to final receipt (and key deposit).
    pub on_chain_steps: Percentiles,
    pub end_to_end_write_steps: Percentiles,
    pub read_steps: Percentiles,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub phases: PhaseReport,
    pub epochs: Vec<EpochRecord>,
    pub committed_txs: usize,
    pub logical_time: u64,
    pub throughput_tx_per_kstep: f64,
}

impl Collector {
    pub fn epoch(&mut self, epoch: u64, at: u64, txs: usize) {
        let latency = at - self.last_epoch_at.min(at);
        self.last_epoch_at = at;
        self.epochs.push(EpochRecord {
            epoch,
            committed_at: at,
            txs,
            latency,
        });
    }

    pub fn finish(&self, logical_time: u64) -> Metrics {
        let diff = |a: Option<u64>, b: Option<u64>| match (a, b) {
            (Some(a), Some(b)) if b >= a => Some((b - a) as f64),
            _ => None,
        };
        let col = |f: &dyn Fn(&WriteTimes) -> Option<f64>| -> Vec<f64> {
            self.writes.values().filter_map(f).collect()
        };
        let committed_txs = self.epochs.iter().map(|e| e.txs).sum();
        Metrics {
            phases: PhaseReport {
                encryption_us: Percentiles::of(&col(&|w| w.submitted.map(|_| w.encrypt_us))),
                consensus_steps: Percentiles::of(&col(&|w| diff(w.submitted, w.first_commit))),
                storage_steps: Percentiles::of(&col(&|w| diff(w.first_commit, w.acked))),
                on_chain_steps: Percentiles::of(&col(&|w| diff(w.acked, w.done))),
                end_to_end_write_steps: Percentiles::of(&col(&|w| diff(w.submitted, w.done))),
                read_steps: Percentiles::of(
                    &self
                        .reads
                        .iter()
                        .map(|(a, b)| (b - a) as f64)
                        .collect::<Vec<_>>(),
                ),
            },
            epochs: self.epochs.clone(),
            committed_txs,
            logical_time,
            throughput_tx_per_kstep: if logical_time == 0 {
                0.0
            } else {
                committed_txs as f64 * 1000.0 / logical_time as f64
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_of_known_sample() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let p = Percentiles::of(&v);
        assert_eq!(p.count, 100);
        assert_eq!(p.mean, 50.5);
        assert_eq!(p.p50, 51.0);
        assert_eq!(p.max, 100.0);
        assert_eq!(Percentiles::of(&[]).count, 0);
    }

    #[test]
    fn phases_from_timestamps() {
        let mut c = Collector::default();
        c.writes.insert(
            0,
            WriteTimes {
                encrypt_us: 3.0,
                submitted: Some(10),
                first_commit: Some(30),
                acked: Some(45),
                anchored: Some(50),
                done: Some(60),
            },
        );
        c.epoch(0, 30, 1);
        let m = c.finish(100);
        assert_eq!(m.phases.consensus_steps.mean, 20.0);
        assert_eq!(m.phases.storage_steps.mean, 15.0);
        assert_eq!(m.phases.on_chain_steps.mean, 15.0);
        assert_eq!(m.committed_txs, 1);
        assert_eq!(m.throughput_tx_per_kstep, 10.0);
    }
}
