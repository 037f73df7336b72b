//! Files a run leaves behind in its output directory.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{verdict_table, Outcome, SimConfig};
use crate::bft::store::{FileLog, LogBackend};

pub const CONFIG: &str = "config.json";
pub const METRICS: &str = "metrics.json";
pub const TRACE: &str = "trace.ndjson";
pub const VERDICTS: &str = "verdicts.txt";
pub const SUMMARY: &str = "summary.json";
pub const CHAIN: &str = "chain.bin";
pub const AUDIT: &str = "audit.ndjson";
pub const REGISTRY: &str = "registry.json";

/// Enough to replay a run and check it reproduced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub trace_hash: String,
    pub completed: bool,
    pub stop_reason: String,
    pub all_pass: bool,
    pub failing: Vec<String>,
}

fn json_to(path: &Path, v: &impl Serialize) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush()
}

pub fn write_all(out: &Outcome, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let r = &out.report;
    json_to(&dir.join(CONFIG), &r.config)?;
    json_to(
        &dir.join(METRICS),
        &serde_json::json!({
            "steps": r.steps,
            "logical_time": r.logical_time,
            "stats": r.stats,
            "metrics": r.metrics,
        }),
    )?;
    json_to(
        &dir.join(SUMMARY),
        &Summary {
            trace_hash: r.trace_hash.clone(),
            completed: r.completed,
            stop_reason: r.stop_reason.clone(),
            all_pass: r.all_pass(),
            failing: r
                .verdicts
                .iter()
                .filter(|v| !v.pass)
                .map(|v| v.name.to_string())
                .collect(),
        },
    )?;
    fs::write(dir.join(VERDICTS), verdict_table(&r.verdicts))?;

    let mut w = BufWriter::new(File::create(dir.join(TRACE))?);
    out.trace.write_ndjson(&mut w)?;
    w.flush()?;

    // the chain file is rewritten from scratch each run
    let chain = dir.join(CHAIN);
    if chain.exists() {
        fs::remove_file(&chain)?;
    }
    let mut log = FileLog::open(&chain)?;
    for b in &out.chain {
        log.append(&b.encode())?;
    }

    let mut w = BufWriter::new(File::create(dir.join(AUDIT))?);
    for e in &out.audit {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    json_to(&dir.join(REGISTRY), &out.registry)
}

pub fn read_config(dir: &Path) -> io::Result<SimConfig> {
    let f = File::open(dir.join(CONFIG))?;
    serde_json::from_reader(f).map_err(io::Error::from)
}

pub fn read_summary(dir: &Path) -> io::Result<Summary> {
    let f = File::open(dir.join(SUMMARY))?;
    serde_json::from_reader(f).map_err(io::Error::from)
}

/// The last `max` protocol events before the end of the run, as NDJSON.
pub fn excerpt(out: &Outcome, max: usize) -> String {
    let ev = out.trace.events();
    let start = ev.len().saturating_sub(max);
    ev[start..]
        .iter()
        .filter_map(|e| serde_json::to_string(e).ok())
        .collect::<Vec<_>>()
        .join("\n")
}
