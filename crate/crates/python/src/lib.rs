//! Python bindings: the simulator, the bench, and the three access-control
//! schemes at the primitive level.

use std::collections::BTreeSet;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use facos::crypto::be::SubtreeKeyTree;
use facos::crypto::te::{self, DecryptionShare, TeCiphertext, TeKeys};
use facos::crypto::{abe, AccessType, CryptoError, Formula};
use facos::ledger::Txid;
use facos::sim::{self, Outcome, SimConfig};

create_exception!(facos_py, FacosError, PyException);
create_exception!(facos_py, AccessDenied, FacosError);

fn crypto_err(e: CryptoError) -> PyErr {
    match e {
        CryptoError::Denied => AccessDenied::new_err("access denied"),
        other => FacosError::new_err(other.to_string()),
    }
}

fn parse_access(s: &str) -> PyResult<AccessType> {
    match s.to_ascii_lowercase().as_str() {
        "abe" => Ok(AccessType::Abe),
        "be" => Ok(AccessType::Be),
        "te" => Ok(AccessType::Te),
        _ => Err(PyValueError::new_err(format!(
            "access must be abe, be or te, not {s:?}"
        ))),
    }
}

fn rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

/// Result of one simulated scenario.
#[pyclass(frozen, module = "facos_py")]
struct Report {
    out: Outcome,
}

#[pymethods]
impl Report {
    #[getter]
    fn trace_hash(&self) -> &str {
        &self.out.report.trace_hash
    }

    #[getter]
    fn completed(&self) -> bool {
        self.out.report.completed
    }

    #[getter]
    fn all_pass(&self) -> bool {
        self.out.report.all_pass()
    }

    #[getter]
    fn stop_reason(&self) -> &str {
        &self.out.report.stop_reason
    }

    /// `(name, pass, detail)` per property.
    #[getter]
    fn verdicts(&self) -> Vec<(String, bool, String)> {
        self.out
            .report
            .verdicts
            .iter()
            .map(|v| (v.name.to_string(), v.pass, v.detail.clone()))
            .collect()
    }

    #[getter]
    fn chain_height(&self) -> usize {
        self.out.chain.len()
    }

    /// The whole report (config, stats, metrics, verdicts) as JSON.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.out.report).map_err(|e| FacosError::new_err(e.to_string()))
    }

    fn table(&self) -> String {
        sim::verdict_table(&self.out.report.verdicts)
    }

    /// Writes config, metrics, trace, verdicts, chain and audit log.
    fn save(&self, dir: &str) -> PyResult<()> {
        sim::artifacts::write_all(&self.out, dir.as_ref())
            .map_err(|e| FacosError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let r = &self.out.report;
        format!(
            "Report(trace_hash='{}', all_pass={}, steps={})",
            r.trace_hash,
            r.all_pass(),
            r.steps
        )
    }
}

#[allow(clippy::too_many_arguments)]
#[pyfunction]
#[pyo3(signature = (seed=0, n=4, f=1, batch=40, clients=4, size=250, access="be", adversary="none", writes=1000, read_every=10))]
fn config_json(
    seed: u64,
    n: usize,
    f: usize,
    batch: usize,
    clients: usize,
    size: usize,
    access: &str,
    adversary: &str,
    writes: usize,
    read_every: usize,
) -> PyResult<String> {
    let cfg = SimConfig {
        seed,
        n,
        f,
        batch,
        clients,
        size,
        access: parse_access(access)?,
        adversary: adversary.to_string(),
        writes,
        read_every,
        ..SimConfig::default()
    };
    serde_json::to_string(&cfg).map_err(|e| FacosError::new_err(e.to_string()))
}

fn load_config(json: &str) -> PyResult<SimConfig> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs a scenario described by a JSON config (see `config_json`).
#[pyfunction]
fn run(py: Python<'_>, config: &str) -> PyResult<Report> {
    let cfg = load_config(config)?;
    let out = py
        .detach(|| sim::run(cfg))
        .map_err(|e| FacosError::new_err(e.to_string()))?;
    Ok(Report { out })
}

/// Re-runs `config` and reports whether the trace hash matches.
#[pyfunction]
fn replay(py: Python<'_>, config: &str, expected_hash: &str) -> PyResult<(bool, Report)> {
    let cfg = load_config(config)?;
    let (same, out) = py
        .detach(|| sim::replay(cfg, expected_hash))
        .map_err(|e| FacosError::new_err(e.to_string()))?;
    Ok((same, Report { out }))
}

/// Mean `(enc_ms, dec_ms)` for one scheme.
#[pyfunction]
#[pyo3(signature = (access, size=250, iters=10, seed=0))]
fn time_scheme(
    py: Python<'_>,
    access: &str,
    size: usize,
    iters: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let at = parse_access(access)?;
    let t = py
        .detach(|| facos::bench::time_scheme(at, size, iters, seed))
        .map_err(crypto_err)?;
    Ok((t.enc_ms, t.dec_ms))
}

/// Parsed monotone access formula, e.g. `"dept_A AND (role_x OR role_y)"`.
#[pyclass(frozen, module = "facos_py", name = "Policy")]
struct PyPolicy {
    inner: Formula,
}

#[pymethods]
impl PyPolicy {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Formula::parse(text)
            .map(|inner| PyPolicy { inner })
            .map_err(crypto_err)
    }

    fn evaluate(&self, attrs: BTreeSet<String>) -> bool {
        self.inner.evaluate(&attrs)
    }

    fn attributes(&self) -> BTreeSet<String> {
        self.inner.attributes()
    }

    fn __repr__(&self) -> String {
        format!("Policy('{}')", self.inner)
    }
}

#[pyclass(frozen, module = "facos_py")]
struct AbeKey {
    inner: abe::AbeSecretKey,
}

#[pymethods]
impl AbeKey {
    fn attributes(&self) -> BTreeSet<String> {
        self.inner.attributes().clone()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.encode())
    }
}

/// Attribute authority holding the master key.
#[pyclass(frozen, module = "facos_py")]
struct AbeAuthority {
    pk: abe::AbePublicKey,
    msk: abe::AbeMasterKey,
    seed: Option<u64>,
}

#[pymethods]
impl AbeAuthority {
    #[new]
    #[pyo3(signature = (seed=None))]
    fn new(seed: Option<u64>) -> PyResult<Self> {
        let (pk, msk) = abe::setup(128, &mut rng(seed)).map_err(crypto_err)?;
        Ok(AbeAuthority { pk, msk, seed })
    }

    fn keygen(&self, attrs: BTreeSet<String>) -> PyResult<AbeKey> {
        let mut r = rng(self.seed.map(|s| s ^ 0x6b65_7967));
        abe::keygen(&self.msk, &attrs, &mut r)
            .map(|inner| AbeKey { inner })
            .map_err(crypto_err)
    }

    fn encrypt<'py>(&self, py: Python<'py>, policy: &PyPolicy, data: &[u8]) -> Bound<'py, PyBytes> {
        let ct = abe::encrypt(&self.pk, data, &policy.inner, &mut rng(None));
        PyBytes::new(py, &ct.encode())
    }

    /// Raises `AccessDenied` when the key's attributes miss the policy.
    #[staticmethod]
    fn decrypt<'py>(
        py: Python<'py>,
        key: &AbeKey,
        ciphertext: &[u8],
    ) -> PyResult<Bound<'py, PyBytes>> {
        let ct = abe::AbeCiphertext::decode(ciphertext).map_err(crypto_err)?;
        let m = abe::decrypt(&key.inner, &ct).map_err(crypto_err)?;
        Ok(PyBytes::new(py, &m))
    }
}

/// Complete-subtree revocation over a group of `n` recipients.
#[pyclass(frozen, module = "facos_py")]
struct BroadcastGroup {
    tree: SubtreeKeyTree,
}

#[pymethods]
impl BroadcastGroup {
    #[new]
    #[pyo3(signature = (n, seed=0))]
    fn new(n: usize, seed: u64) -> PyResult<Self> {
        let mut s = [0u8; 32];
        s[..8].copy_from_slice(&seed.to_be_bytes());
        SubtreeKeyTree::build(n, &s)
            .map(|tree| BroadcastGroup { tree })
            .map_err(crypto_err)
    }

    /// Heap indices of the subtree roots covering everyone not revoked.
    fn cover(&self, revoked: BTreeSet<usize>) -> PyResult<Vec<usize>> {
        self.tree
            .cover(&revoked)
            .map(|c| c.nodes().iter().copied().collect())
            .map_err(crypto_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.tree.n_clients()
    }
}

/// Dealer-generated threshold key set; shares are addressed 1..=n.
#[pyclass(frozen, module = "facos_py")]
struct ThresholdKeys {
    keys: TeKeys,
}

#[pymethods]
impl ThresholdKeys {
    #[new]
    #[pyo3(signature = (n, t, seed=None))]
    fn new(n: usize, t: usize, seed: Option<u64>) -> PyResult<Self> {
        te::setup(n, t, &mut rng(seed))
            .map(|keys| ThresholdKeys { keys })
            .map_err(crypto_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.keys.pk.n()
    }

    #[getter]
    fn t(&self) -> usize {
        self.keys.pk.threshold()
    }

    fn encrypt<'py>(
        &self,
        py: Python<'py>,
        data: &[u8],
        label: &[u8],
    ) -> PyResult<Bound<'py, PyBytes>> {
        let ct = te::encrypt(&self.keys.pk, data, label, &mut rng(None)).map_err(crypto_err)?;
        Ok(PyBytes::new(py, &ct.encode()))
    }

    fn share<'py>(
        &self,
        py: Python<'py>,
        index: usize,
        ciphertext: &[u8],
        label: &[u8],
    ) -> PyResult<Bound<'py, PyBytes>> {
        let sk = index
            .checked_sub(1)
            .and_then(|i| self.keys.shares.get(i))
            .ok_or_else(|| {
                PyValueError::new_err(format!(
                    "share index {index} outside 1..={}",
                    self.keys.shares.len()
                ))
            })?;
        let ct = TeCiphertext::decode(ciphertext).map_err(crypto_err)?;
        let s = te::share_dec(sk, &ct, label, &mut rng(None)).map_err(crypto_err)?;
        Ok(PyBytes::new(py, &s.encode()))
    }

    fn verify_share(&self, ciphertext: &[u8], label: &[u8], share: &[u8]) -> PyResult<bool> {
        let ct = TeCiphertext::decode(ciphertext).map_err(crypto_err)?;
        Ok(DecryptionShare::decode(share)
            .is_ok_and(|s| te::verify_share(&self.keys.pk, &ct, label, &s)))
    }

    fn combine<'py>(
        &self,
        py: Python<'py>,
        ciphertext: &[u8],
        label: &[u8],
        shares: Vec<Vec<u8>>,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let ct = TeCiphertext::decode(ciphertext).map_err(crypto_err)?;
        let shares = shares
            .iter()
            .map(|s| DecryptionShare::decode(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(crypto_err)?;
        let m = te::combine(&self.keys.pk, &ct, label, &shares).map_err(crypto_err)?;
        Ok(PyBytes::new(py, &m))
    }
}

/// Lowercase hex of a 32-byte txid, as printed in logs and the chain file.
#[pyfunction]
fn txid_hex(raw: [u8; 32]) -> String {
    Txid(raw).to_string()
}

#[pymodule]
fn facos_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("FacosError", m.py().get_type::<FacosError>())?;
    m.add("AccessDenied", m.py().get_type::<AccessDenied>())?;
    m.add_class::<Report>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<AbeKey>()?;
    m.add_class::<AbeAuthority>()?;
    m.add_class::<BroadcastGroup>()?;
    m.add_class::<ThresholdKeys>()?;
    m.add_function(wrap_pyfunction!(config_json, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(time_scheme, m)?)?;
    m.add_function(wrap_pyfunction!(txid_hex, m)?)?;
    Ok(())
}
