//! Shared fixture and sweep for the service test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::Parser;
use jsonschema::{Draft, JSONSchema};
use serde_json::{json, Value};
use tempfile::TempDir;

use readmit_service::api::{router, AppState};
use readmit_service::cli::{run, Cli};
use readmit_service::config::ServiceConfig;
use readmit_service::store::Store;

pub fn cli(args: &[&str]) -> anyhow::Result<()> {
    let mut full = vec!["readmit"];
    full.extend_from_slice(args);
    run(Cli::try_parse_from(full)?)
}

pub struct Fixture {
    pub dir: TempDir,
    pub config: ServiceConfig,
}

impl Fixture {
    pub fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }
}

/// Runs the CLI pipeline on a synthetic cohort inside a temp directory.
pub fn build_fixture(rows: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let (raw, prep, model, report, cards) = (p("raw.csv"), p("prep"), p("model.txt"), p("report"), p("cards.ndjson"));
    let matrix = p("prep/matrix.csv");
    let labels = p("prep/labels.txt");
    let encounters = p("prep/encounters.csv");
    let train_cfg = p("train.toml");
    std::fs::write(&train_cfg, "n_estimators = 120\n").unwrap();
    let rows = rows.to_string();
    let seed = seed.to_string();
    cli(&["synth", "--rows", &rows, "--seed", &seed, "--out", &raw]).unwrap();
    cli(&["ingest", "--input", &raw, "--out", &prep]).unwrap();
    cli(&["features", "--input", &encounters, "--out", &matrix]).unwrap();
    cli(&["split", "--labels", &labels, "--out", &prep]).unwrap();
    cli(&["train", "--data", &prep, "--config", &train_cfg, "--out", &model, "--quiet", "--trained-at", "1700000000"]).unwrap();
    cli(&["evaluate", "--model", &model, "--data", &prep, "--out", &report]).unwrap();
    cli(&["export-cards", "--model", &model, "--data", &prep, "--out", &cards]).unwrap();
    let config = ServiceConfig {
        bind: "127.0.0.1:0".parse().unwrap(),
        model: model.into(),
        cards: cards.into(),
        data: prep.into(),
        metrics: Some(dir.path().join("report/metrics.json")),
        static_dir: None,
        read_only: true,
    };
    Fixture { dir, config }
}

/// Serves `state` on an ephemeral loopback port.
pub async fn spawn(state: AppState) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(state, None)).await.unwrap();
    });
    addr
}

pub async fn spawn_loaded(cfg: &ServiceConfig) -> SocketAddr {
    spawn(AppState::loaded(Store::load(cfg).unwrap())).await
}

fn docs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

pub struct Schemas {
    compiled: BTreeMap<&'static str, JSONSchema>,
}

pub const SCHEMA_FILES: [&str; 6] = [
    "patient_card",
    "patients_page",
    "whatif_request",
    "whatif_response",
    "model_metrics",
    "error",
];

impl Schemas {
    pub fn load() -> Self {
        let read = |name: &str| -> Value {
            let p = docs_dir().join(format!("{name}.schema.json"));
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap()
        };
        let docs: Vec<(&str, Value)> = SCHEMA_FILES.iter().map(|n| (*n, read(n))).collect();
        let mut compiled = BTreeMap::new();
        for (name, schema) in &docs {
            let mut opts = JSONSchema::options();
            opts.with_draft(Draft::Draft7);
            for (other, doc) in &docs {
                opts.with_document(format!("https://readmit.example/schemas/{other}.schema.json"), doc.clone());
            }
            let s = opts.compile(schema).unwrap_or_else(|e| panic!("{name}: {e}"));
            compiled.insert(*name, s);
        }
        Schemas { compiled }
    }

    pub fn check(&self, name: &str, v: &Value) -> Result<(), String> {
        let s = &self.compiled[name];
        s.validate(v).map_err(|errs| {
            let msgs: Vec<String> = errs.map(|e| format!("{} at {}", e, e.instance_path)).collect();
            format!("{name}: {}", msgs.join("; "))
        })
    }
}

fn socket_inodes() -> HashSet<u64> {
    let mut out = HashSet::new();
    if let Ok(rd) = std::fs::read_dir("/proc/self/fd") {
        for e in rd.flatten() {
            if let Ok(t) = std::fs::read_link(e.path()) {
                let t = t.to_string_lossy();
                if let Some(n) = t.strip_prefix("socket:[").and_then(|r| r.strip_suffix(']')) {
                    if let Ok(n) = n.parse() {
                        out.insert(n);
                    }
                }
            }
        }
    }
    out
}

fn is_local(hex_addr: &str) -> bool {
    let ip = hex_addr.split(':').next().unwrap_or("");
    match ip.len() {
        // IPv4, little-endian: 127.x.x.x ends in 7F; 0.0.0.0 is unconnected.
        8 => ip.ends_with("7F") || ip == "00000000",
        // IPv6: ::1, ::, or IPv4-mapped loopback.
        32 => {
            ip == "00000000000000000000000001000000"
                || ip == "00000000000000000000000000000000"
                || (ip.starts_with("0000000000000000FFFF0000") && ip.ends_with("7F"))
        }
        _ => false,
    }
}

/// Remote endpoints of this process's TCP sockets that are not loopback.
/// `None` when `/proc` is unavailable.
pub fn outbound_connections() -> Option<Vec<String>> {
    let ours = socket_inodes();
    let mut bad = Vec::new();
    let mut readable = false;
    for table in ["/proc/self/net/tcp", "/proc/self/net/tcp6"] {
        let Ok(text) = std::fs::read_to_string(table) else { continue };
        readable = true;
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() < 10 {
                continue;
            }
            let inode: u64 = cols[9].parse().unwrap_or(0);
            if ours.contains(&inode) && !is_local(cols[2]) {
                bad.push(format!("{table}: {} -> {}", cols[1], cols[2]));
            }
        }
    }
    readable.then_some(bad)
}

#[derive(Debug, Default)]
pub struct Sweep {
    pub requests: usize,
    pub validated: usize,
    pub failures: Vec<String>,
    pub max_identity_delta: f64,
    pub outbound: Vec<String>,
    pub proc_readable: bool,
}

impl Sweep {
    fn fail(&mut self, msg: String) {
        self.failures.push(msg);
    }

    fn audit(&mut self) {
        match outbound_connections() {
            Some(bad) => {
                self.proc_readable = true;
                self.outbound.extend(bad);
            }
            None => self.proc_readable = false,
        }
    }
}

async fn get(client: &reqwest::Client, url: String) -> (u16, String) {
    let r = client.get(url).send().await.unwrap();
    (r.status().as_u16(), r.text().await.unwrap())
}

async fn post(client: &reqwest::Client, url: String, body: &Value) -> (u16, String) {
    let r = client.post(url).json(body).send().await.unwrap();
    (r.status().as_u16(), r.text().await.unwrap())
}

/// Hits every endpoint and every card, validating each body against its
/// published schema.
pub async fn sweep(addr: SocketAddr, schemas: &Schemas, metrics_file: Option<&Path>) -> Sweep {
    let base = format!("http://{addr}");
    let client = reqwest::Client::builder().no_proxy().build().unwrap();
    let mut s = Sweep::default();
    let check = |s: &mut Sweep, schema: &str, want: u16, got: (u16, String), what: &str| -> Option<Value> {
        s.requests += 1;
        if got.0 != want {
            s.fail(format!("{what}: status {} (want {want}): {}", got.0, got.1));
            return None;
        }
        let v: Value = match serde_json::from_str(&got.1) {
            Ok(v) => v,
            Err(e) => {
                s.fail(format!("{what}: body is not JSON: {e}"));
                return None;
            }
        };
        match schemas.check(schema, &v) {
            Ok(()) => s.validated += 1,
            Err(e) => s.fail(format!("{what}: {e}")),
        }
        Some(v)
    };

    // Listing, both sort orders, every page.
    let mut ids = Vec::new();
    let first = check(&mut s, "patients_page", 200, get(&client, format!("{base}/patients")).await, "GET /patients");
    let total = first.as_ref().and_then(|v| v["total"].as_u64()).unwrap_or(0) as usize;
    let pages = total.div_ceil(20).max(1);
    let mut prev_score = f64::INFINITY;
    for page in 1..=pages {
        let url = format!("{base}/patients?sort=score&page={page}");
        if let Some(v) = check(&mut s, "patients_page", 200, get(&client, url).await, "GET /patients?sort=score") {
            for p in v["patients"].as_array().unwrap() {
                let sc = p["risk_score"].as_f64().unwrap();
                if sc > prev_score {
                    s.fail(format!("score order broken at page {page}"));
                }
                prev_score = sc;
            }
        }
        let url = format!("{base}/patients?sort=id&page={page}");
        if let Some(v) = check(&mut s, "patients_page", 200, get(&client, url).await, "GET /patients?sort=id") {
            ids.extend(v["patients"].as_array().unwrap().iter().map(|p| p["encounter_id"].as_u64().unwrap()));
        }
    }
    if ids.len() != total || ids.windows(2).any(|w| w[0] >= w[1]) {
        s.fail(format!("id listing has {} ascending ids, expected {total}", ids.len()));
    }
    let past_end = format!("{base}/patients?page={}", pages + 1);
    if let Some(v) = check(&mut s, "patients_page", 200, get(&client, past_end).await, "GET /patients past end") {
        if !v["patients"].as_array().unwrap().is_empty() {
            s.fail("page past the end is not empty".into());
        }
    }
    check(&mut s, "error", 400, get(&client, format!("{base}/patients?sort=age")).await, "GET /patients?sort=age");
    s.audit();

    // Every card, and an identity what-if for each.
    for &id in &ids {
        let (status, body) = get(&client, format!("{base}/patients/{id}/card")).await;
        let Some(card) = check(&mut s, "patient_card", 200, (status, body.clone()), "GET card") else {
            continue;
        };
        let tier = card["tier"].clone();
        let req = json!({ "encounter_id": id, "overrides": {} });
        if let Some(r) = check(&mut s, "whatif_response", 200, post(&client, format!("{base}/whatif"), &req).await, "POST /whatif {}") {
            let d = (r["new_score"].as_f64().unwrap() - card["risk_score"].as_f64().unwrap()).abs();
            s.max_identity_delta = s.max_identity_delta.max(d);
            if r["new_tier"] != tier {
                s.fail(format!("identity what-if changed tier of {id}"));
            }
        }
        let (_, again) = get(&client, format!("{base}/patients/{id}/card")).await;
        if again != body {
            s.fail(format!("card {id} changed after a what-if"));
        }
    }
    s.audit();

    // Overrides and error paths.
    if let Some(&id) = ids.first() {
        let req = json!({ "encounter_id": id, "overrides": { "number_inpatient": 5, "age_mid": 85 } });
        let a = post(&client, format!("{base}/whatif"), &req).await;
        let b = post(&client, format!("{base}/whatif"), &req).await;
        if a != b {
            s.fail("repeated what-if bodies differ".into());
        }
        if let Some(v) = check(&mut s, "whatif_response", 200, a, "POST /whatif overrides") {
            if v["recomputed"] != json!(["number_inpatient"]) || v["direct_overrides"] != json!(["age_mid"]) {
                s.fail(format!("override bookkeeping wrong: {v}"));
            }
        }
        let bad = json!({ "encounter_id": id, "overrides": { "zzz": 1 } });
        check(&mut s, "error", 422, post(&client, format!("{base}/whatif"), &bad).await, "POST /whatif unknown feature");
        let neg = json!({ "encounter_id": id, "overrides": { "number_inpatient": -1 } });
        check(&mut s, "error", 422, post(&client, format!("{base}/whatif"), &neg).await, "POST /whatif bad value");
    }
    let missing = json!({ "encounter_id": 1, "overrides": {} });
    check(&mut s, "error", 404, post(&client, format!("{base}/whatif"), &missing).await, "POST /whatif unknown encounter");
    check(&mut s, "error", 404, get(&client, format!("{base}/patients/1/card")).await, "GET unknown card");
    check(&mut s, "error", 404, get(&client, format!("{base}/patients/abc/card")).await, "GET non-numeric card");

    let m = get(&client, format!("{base}/model/metrics")).await;
    match metrics_file {
        Some(p) => {
            let body = m.1.clone();
            if let Some(v) = check(&mut s, "model_metrics", 200, m, "GET /model/metrics") {
                if body != std::fs::read_to_string(p).unwrap() {
                    s.fail("metrics body differs from the evaluate output".into());
                }
                if v["config"]["max_depth"] != json!(6) {
                    s.fail("metrics config does not echo max_depth".into());
                }
            }
        }
        None => {
            check(&mut s, "error", 404, m, "GET /model/metrics unevaluated");
        }
    }
    s.audit();
    s
}
