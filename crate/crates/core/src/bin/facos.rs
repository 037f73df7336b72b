use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use facos::crypto::AccessType;
use facos::sim::{self, artifacts, verdict_table, SimConfig};
use facos::transport;

#[derive(Parser)]
#[command(
    name = "facos",
    version,
    about = "Access-controlled BFT storage: simulator, benches and replay"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and check every property on its trace.
    Run(RunArgs),
    /// Time the three access-control schemes.
    Bench(BenchArgs),
    /// Re-run a saved scenario and compare trace hashes.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Access {
    Abe,
    Be,
    Te,
}

impl From<Access> for AccessType {
    fn from(a: Access) -> Self {
        match a {
            Access::Abe => AccessType::Abe,
            Access::Be => AccessType::Be,
            Access::Te => AccessType::Te,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Transport {
    /// Seeded in-process scheduler.
    Sim,
    /// Loopback TCP, one thread per node.
    Tcp,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, env = "FACOS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "FACOS_N", default_value_t = 4)]
    n: usize,
    #[arg(long, env = "FACOS_F", default_value_t = 1)]
    f: usize,
    /// Transactions per epoch across all replicas.
    #[arg(long, env = "FACOS_BATCH", default_value_t = 40)]
    batch: usize,
    /// Number of data owners.
    #[arg(long, env = "FACOS_CLIENTS", default_value_t = 4)]
    clients: usize,
    /// Plaintext bytes per write.
    #[arg(long, env = "FACOS_SIZE", default_value_t = 250)]
    size: usize,
    #[arg(long, env = "FACOS_ACCESS", value_enum, default_value_t = Access::Be)]
    access: Access,
    /// e.g. `none`, `crash:3@0`, `mute:2`, `equivocate`, `garbage:1`, `delay:0:400`
    #[arg(long, env = "FACOS_ADVERSARY", default_value = "none")]
    adversary: String,
    #[arg(long, env = "FACOS_TRANSPORT", value_enum, default_value_t = Transport::Sim)]
    transport: Transport,
    #[arg(long, env = "FACOS_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Total writes.
    #[arg(long, env = "FACOS_WRITES", default_value_t = 1000)]
    writes: usize,
    /// Both requesters read every this many writes; 0 disables reads.
    #[arg(long, env = "FACOS_READ_EVERY", default_value_t = 10)]
    read_every: usize,
    /// Writes in flight per owner.
    #[arg(long, env = "FACOS_WINDOW", default_value_t = 10)]
    window: usize,
    /// Deliver in send order instead of at random.
    #[arg(long, env = "FACOS_FIFO")]
    fifo: bool,
    /// Keep every delivery in trace.ndjson, not just protocol events.
    #[arg(long, env = "FACOS_TRACE_ALL")]
    trace_all: bool,
    /// Start from a saved config.json; flags given explicitly still win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "FACOS_ITERS", default_value_t = 20)]
    iters: usize,
    /// Simulated writes per scheme for the end-to-end figures; 0 skips them.
    #[arg(long, env = "FACOS_E2E_WRITES", default_value_t = 50)]
    e2e_writes: usize,
}

#[derive(Args)]
struct ReplayArgs {
    /// Output directory of an earlier `run`.
    dir: PathBuf,
    /// Where to write the replayed artifacts.
    #[arg(long, env = "FACOS_OUT")]
    out: Option<PathBuf>,
}

fn base_config(c: &Common) -> SimConfig {
    SimConfig {
        seed: c.seed,
        n: c.n,
        f: c.f,
        batch: c.batch,
        clients: c.clients,
        size: c.size,
        access: c.access.into(),
        adversary: c.adversary.clone(),
        ..SimConfig::default()
    }
}

fn finish(out: &sim::Outcome, dir: Option<&PathBuf>) -> ExitCode {
    let r = &out.report;
    print!("{}", verdict_table(&r.verdicts));
    println!(
        "writes {}/{}  committed {}  steps {}  trace {}",
        r.stats.writes_done, r.config.writes, r.stats.committed, r.steps, r.trace_hash
    );
    for (who, s) in &r.stats.requesters {
        println!(
            "{who:<8} sessions {}  delivered {}  denied {}  failed {}  reads {}",
            s.sessions, s.delivered, s.denied, s.failed, s.reads_sent
        );
    }
    if let Some(d) = dir {
        if let Err(e) = artifacts::write_all(out, d) {
            eprintln!("writing artifacts to {}: {e}", d.display());
            return ExitCode::from(2);
        }
        println!("artifacts in {}", d.display());
    }
    if r.all_pass() {
        ExitCode::SUCCESS
    } else {
        eprintln!("property violation; last protocol events:");
        eprintln!("{}", artifacts::excerpt(out, 20));
        ExitCode::FAILURE
    }
}

fn cmd_run(a: RunArgs, matches: &clap::ArgMatches) -> ExitCode {
    let mut cfg = match &a.config {
        Some(p) => match std::fs::read(p)
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice::<SimConfig>(&b).map_err(|e| e.to_string()))
        {
            Ok(c) => c,
            Err(e) => {
                eprintln!("reading {}: {e}", p.display());
                return ExitCode::from(2);
            }
        },
        None => SimConfig::default(),
    };
    let flags = base_config(&a.common);
    let given = |id: &str| {
        matches
            .subcommand_matches("run")
            .and_then(|m| m.value_source(id))
            .is_some_and(|s| s != clap::parser::ValueSource::DefaultValue)
    };
    let from_file = a.config.is_some();
    macro_rules! pick {
        ($field:ident, $id:literal, $val:expr) => {
            if !from_file || given($id) {
                cfg.$field = $val;
            }
        };
    }
    pick!(seed, "seed", flags.seed);
    pick!(n, "n", flags.n);
    pick!(f, "f", flags.f);
    pick!(batch, "batch", flags.batch);
    pick!(clients, "clients", flags.clients);
    pick!(size, "size", flags.size);
    pick!(access, "access", flags.access);
    pick!(adversary, "adversary", flags.adversary.clone());
    pick!(writes, "writes", a.writes);
    pick!(read_every, "read_every", a.read_every);
    pick!(window, "window", a.window);
    pick!(fifo, "fifo", a.fifo);
    pick!(keep_deliveries, "trace_all", a.trace_all);

    if a.common.transport == Transport::Tcp {
        let dir = a
            .common
            .out
            .clone()
            .unwrap_or_else(|| std::env::temp_dir().join(format!("facos-tcp-{}", cfg.seed)));
        return match transport::run(&cfg, &dir) {
            Ok(rep) => {
                print!("{}", rep.table());
                println!("replica config and keys in {}", dir.display());
                if rep.ok() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(2)
            }
        };
    }
    match sim::run(cfg) {
        Ok(out) => finish(&out, a.common.out.as_ref()),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_bench(a: BenchArgs) -> ExitCode {
    let cfg = base_config(&a.common);
    match facos::bench::run(&cfg, a.iters, a.e2e_writes) {
        Ok(rep) => {
            print!("{}", rep.table());
            if let Some(d) = &a.common.out {
                let write = std::fs::create_dir_all(d).and_then(|_| {
                    std::fs::write(
                        d.join("bench.json"),
                        serde_json::to_vec_pretty(&rep).unwrap_or_default(),
                    )
                });
                if let Err(e) = write {
                    eprintln!("writing bench.json: {e}");
                    return ExitCode::from(2);
                }
            }
            if rep.ordering_holds {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_replay(a: ReplayArgs) -> ExitCode {
    let (cfg, summary) = match (
        artifacts::read_config(&a.dir),
        artifacts::read_summary(&a.dir),
    ) {
        (Ok(c), Ok(s)) => (c, s),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("reading {}: {e}", a.dir.display());
            return ExitCode::from(2);
        }
    };
    match sim::replay(cfg, &summary.trace_hash) {
        Ok((same, out)) => {
            println!("recorded {}", summary.trace_hash);
            println!("replayed {}", out.report.trace_hash);
            println!("{}", if same { "identical" } else { "DIFFERENT" });
            // a replayed failure is a faithful reproduction, so only a
            // hash or verdict mismatch fails here
            let _ = finish(&out, a.out.as_ref());
            if same && summary.all_pass == out.report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let matches = <Cli as clap::CommandFactory>::command().get_matches();
    let cli = match <Cli as clap::FromArgMatches>::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match cli.cmd {
        Cmd::Run(a) => cmd_run(a, &matches),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Replay(a) => cmd_replay(a),
    }
}
