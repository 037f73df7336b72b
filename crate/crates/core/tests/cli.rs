use std::process::Command;

fn facos() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_facos"));
    // keep the caller's environment from leaking into flag defaults
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("FACOS_")) {
        c.env_remove(k);
    }
    c
}

#[test]
fn run_writes_artifacts_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let st = facos()
        .args([
            "run",
            "--writes",
            "30",
            "--read-every",
            "5",
            "--access",
            "abe",
            "--adversary",
            "equivocate:0",
            "--seed",
            "4",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&st.stdout);
    assert!(
        st.status.success(),
        "{stdout}{}",
        String::from_utf8_lossy(&st.stderr)
    );
    assert!(stdout.contains("agreement") && stdout.contains("PASS"));
    for f in [
        "config.json",
        "summary.json",
        "verdicts.txt",
        "metrics.json",
        "trace.ndjson",
        "chain.bin",
        "audit.ndjson",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let st = facos().arg("replay").arg(&out).output().unwrap();
    assert!(st.status.success());
    assert!(String::from_utf8_lossy(&st.stdout).contains("identical"));
}

#[test]
fn env_overrides_flags_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let st = facos()
        .env("FACOS_ACCESS", "te")
        .env("FACOS_SEED", "11")
        .env("FACOS_WRITES", "12")
        .args(["run", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        st.status.success(),
        "{}",
        String::from_utf8_lossy(&st.stderr)
    );
    let cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["access"], "te");
    assert_eq!(cfg["seed"], 11);
    assert_eq!(cfg["writes"], 12);
}

#[test]
fn property_violation_exits_nonzero_with_excerpt() {
    let dir = tempfile::tempdir().unwrap();
    // liveness cannot hold with a starved step budget
    let cfg = serde_json::json!({ "writes": 100, "step_budget": 2000, "seed": 9 });
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let st = facos()
        .args(["run", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&st.stderr);
    assert!(stderr.contains("property violation"), "{stderr}");
    assert!(
        stderr.lines().skip(1).any(|l| l.starts_with('{')),
        "{stderr}"
    );
    assert!(String::from_utf8_lossy(&st.stdout).contains("FAIL"));
}

#[test]
fn bad_config_is_rejected() {
    let st = facos()
        .args(["run", "--adversary", "crash:0,crash:1", "--writes", "4"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = facos().args(["run", "--access", "rsa"]).output().unwrap();
    assert!(!st.status.success());
}

#[test]
fn bench_reports_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let st = facos()
        .args(["bench", "--iters", "3", "--e2e-writes", "4", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&st.stdout);
    assert!(stdout.contains("ordering"), "{stdout}");
    let rep: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("bench.json")).unwrap()).unwrap();
    assert_eq!(rep["schemes"].as_array().unwrap().len(), 3);
}

#[test]
fn tcp_transport_runs() {
    let dir = tempfile::tempdir().unwrap();
    let st = facos()
        .args(["run", "--transport", "tcp", "--writes", "10", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        st.status.success(),
        "{}{}",
        String::from_utf8_lossy(&st.stdout),
        String::from_utf8_lossy(&st.stderr)
    );
    assert!(dir.path().join("cluster.json").exists());
}
