//! One PASS/FAIL line per acceptance criterion. Dataset criteria read
//! `READMIT_DATA`, falling back to `data/diabetic_data.csv` at the
//! workspace root; they fail when neither exists.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;
#[path = "../../service/tests/support/mod.rs"]
mod support;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use readmit_core::explain::{gain_importance, path_contributions};
use readmit_core::features::{FeatureEngineer, FeatureKind, FeatureMatrix, FeatureRegistry};
use readmit_core::gbdt::{grad_hess, train, weighted_logloss_row, TrainConfig};
use readmit_core::ingest::{parse_dataset, Encounter};
use readmit_core::metrics::{auprc, auroc, eda_report, EvalReport};
use readmit_core::split::{gather, stratified_split, SplitConfig};
use readmit_core::synth::{cohort, SynthConfig};

const AUROC: (f64, f64) = (0.72, 0.03);
const AUPRC: (f64, f64) = (0.11, 0.03);
const RECALL: (f64, f64) = (0.59, 0.10);
const PRECISION: (f64, f64) = (0.09, 0.04);
const BALANCED_ACCURACY: (f64, f64) = (0.65, 0.05);
const THRESHOLD: f64 = 0.5;
const UTILIZATION: [&str; 5] = [
    "inpatient_ge_2",
    "number_inpatient",
    "discharge_disposition_id",
    "prior_util_sum",
    "discharge_home",
];
const MIN_OVERLAP: usize = 3;
const MIN_EDA_RATIO: f64 = 2.5;
const LOS_READMITTED: (f64, f64) = (4.0, 1.0);
const LOS_NOT_READMITTED: (f64, f64) = (3.0, 1.0);
const METRIC_ORACLE_TOL: f64 = 1e-12;
const GRAD_REL_TOL: f64 = 1e-6;
const COMPLETENESS_TOL: f64 = 1e-9;
const WHATIF_TOL: f64 = 1e-12;

struct Outcome {
    name: &'static str,
    result: Result<String, String>,
}

fn within(x: f64, (center, tol): (f64, f64)) -> bool {
    (x - center).abs() <= tol
}

fn band(label: &str, x: f64, b: (f64, f64)) -> (bool, String) {
    (within(x, b), format!("{label} {x:.4} (want {} ± {})", b.0, b.1))
}

fn dataset_path() -> PathBuf {
    match std::env::var_os("READMIT_DATA") {
        Some(p) => PathBuf::from(p),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/diabetic_data.csv"),
    }
}

struct RealRun {
    encounters: Vec<Encounter>,
    report: EvalReport,
    top5: Vec<String>,
}

fn real_run(path: &Path) -> Result<RealRun, String> {
    let file = std::fs::File::open(path).map_err(|e| format!("dataset not available at {}: {e}", path.display()))?;
    let parsed = parse_dataset(std::io::BufReader::new(file)).map_err(|e| e.to_string())?;
    let labels = parsed.labels();
    let fe = FeatureEngineer::default();
    let m = fe.matrixize(&parsed.encounters).map_err(|e| e.to_string())?;
    let split = stratified_split(&labels, &SplitConfig::default()).map_err(|e| e.to_string())?;
    let (model, _) = train(&m, &labels, &split, &TrainConfig::default(), fe.registry()).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = split.test_idx.iter().map(|&i| model.predict_proba(m.row(i)).unwrap()).collect();
    let y = gather(&labels, &split.test_idx);
    let report = EvalReport::compute(&scores, &y, THRESHOLD).map_err(|e| e.to_string())?;
    let top5 = gain_importance(&model).top(5).iter().map(|r| r.feature.clone()).collect();
    Ok(RealRun {
        encounters: parsed.encounters,
        report,
        top5,
    })
}

fn dataset_criteria(out: &mut Vec<Outcome>) {
    let path = dataset_path();
    let run = real_run(&path);
    let from = |f: &dyn Fn(&RealRun) -> (bool, String)| match &run {
        Ok(r) => {
            let (ok, msg) = f(r);
            if ok {
                Ok(msg)
            } else {
                Err(msg)
            }
        }
        Err(e) => Err(e.clone()),
    };
    out.push(Outcome {
        name: "headline metrics",
        result: from(&|r| {
            let (a, ma) = band("auroc", r.report.auroc, AUROC);
            let (b, mb) = band("auprc", r.report.auprc, AUPRC);
            (a && b, format!("{ma}, {mb}"))
        }),
    });
    out.push(Outcome {
        name: "threshold metrics",
        result: from(&|r| {
            let (a, ma) = band("recall", r.report.recall, RECALL);
            let (b, mb) = band("precision", r.report.precision, PRECISION);
            let (c, mc) = band("balanced accuracy", r.report.balanced_accuracy, BALANCED_ACCURACY);
            (a && b && c, format!("{ma}, {mb}, {mc} at {THRESHOLD}"))
        }),
    });
    out.push(Outcome {
        name: "importance overlap",
        result: from(&|r| {
            let hits = r.top5.iter().filter(|f| UTILIZATION.contains(&f.as_str())).count();
            (hits >= MIN_OVERLAP, format!("{hits} of top 5 {:?} (want ≥ {MIN_OVERLAP})", r.top5))
        }),
    });
    out.push(Outcome {
        name: "eda reproduction",
        result: from(&|r| {
            let eda = match eda_report(&r.encounters) {
                Ok(e) => e,
                Err(e) => return (false, e.to_string()),
            };
            let ratio = eda.heavy_vs_none_ratio().unwrap_or(f64::NAN);
            let m = &eda.los_median_by_outcome;
            let (yes, no) = (m.readmitted.unwrap_or(f64::NAN), m.not_readmitted.unwrap_or(f64::NAN));
            let ok = ratio >= MIN_EDA_RATIO && yes > no && within(yes, LOS_READMITTED) && within(no, LOS_NOT_READMITTED);
            (ok, format!("3+ vs 0 inpatient ratio {ratio:.3} (want ≥ {MIN_EDA_RATIO}), LOS medians {yes} vs {no}"))
        }),
    });
}

fn random_tree_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<u8>, usize) {
    loop {
        let n = rng.gen_range(2..=20);
        let f = rng.gen_range(1..=3);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..f)
                    .map(|_| if rng.gen_bool(0.2) { f64::NAN } else { f64::from(rng.gen_range(0u8..4)) })
                    .collect()
            })
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (rows, labels, rng.gen_range(1..=2));
        }
    }
}

fn oracle_tree() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = 1000;
    for c in 0..cases {
        let (rows, labels, depth) = random_tree_instance(&mut rng);
        oracles::check_first_tree(&rows, &labels, depth).map_err(|e| format!("case {c}: {e}"))?;
    }
    Ok(format!("{cases} instances (n ≤ 20, ≤ 3 features, depth ≤ 2) match exhaustive search"))
}

fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = rng.gen_range(2..=200);
        // Coarse grid so ties are common.
        let levels = rng.gen_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / f64::from(levels)).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

fn oracle_metrics() -> (Result<String, String>, Result<String, String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = 500;
    let (mut roc_err, mut pr_err) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let (s, y) = random_scores(&mut rng);
        roc_err = roc_err.max((auroc(&s, &y).unwrap() - oracles::auroc_pairs(&s, &y)).abs());
        pr_err = pr_err.max((auprc(&s, &y).unwrap() - oracles::auprc_enumerated(&s, &y)).abs());
    }
    let verdict = |err: f64, what: &str| {
        let msg = format!("max |{what} - oracle| = {err:.2e} over {cases} sets (want ≤ {METRIC_ORACLE_TOL:e})");
        if err <= METRIC_ORACLE_TOL {
            Ok(msg)
        } else {
            Err(msg)
        }
    };
    (verdict(roc_err, "auroc"), verdict(pr_err, "auprc"))
}

fn oracle_grad_hess() -> Result<String, String> {
    let step = 1e-4;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for label in [0u8, 1] {
        for w in [1.0, 4.0, 8.0, 15.0] {
            for i in -48..=48 {
                let m = f64::from(i) * 0.25;
                let (g, h) = grad_hess(m, label, w);
                let f = |x| weighted_logloss_row(x, label, w);
                let fd_g = (f(m + step) - f(m - step)) / (2.0 * step);
                let gp = |x| grad_hess(x, label, w).0;
                let fd_h = (gp(m + step) - gp(m - step)) / (2.0 * step);
                worst = worst.max(rel(g, fd_g)).max(rel(h, fd_h));
                checked += 1;
            }
        }
    }
    let msg = format!("worst relative error {worst:.2e} over {checked} points (want < {GRAD_REL_TOL:e})");
    if worst < GRAD_REL_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn synthetic_problem(rows: usize, seed: u64) -> (FeatureMatrix, Vec<u8>, FeatureEngineer) {
    let encounters = cohort(&SynthConfig {
        rows,
        seed,
        ..Default::default()
    });
    let fe = FeatureEngineer::default();
    let m = fe.matrixize(&encounters).unwrap();
    let y = encounters.iter().map(Encounter::label).collect();
    (m, y, fe)
}

fn oracle_completeness() -> Result<String, String> {
    let (m, y, fe) = synthetic_problem(3000, 3);
    let split = stratified_split(&y, &SplitConfig::default()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        n_estimators: 120,
        ..Default::default()
    };
    let (model, _) = train(&m, &y, &split, &cfg, fe.registry()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let kinds = fe.registry().kinds().to_vec();
    let mut worst = 0.0f64;
    let rows = 1000;
    for _ in 0..rows {
        let mut x = m.row(rng.gen_range(0..m.rows())).to_vec();
        for (v, k) in x.iter_mut().zip(&kinds) {
            if rng.gen_bool(0.3) {
                *v = match k {
                    FeatureKind::Binary => f64::from(rng.gen_range(0u8..2)),
                    _ if rng.gen_bool(0.1) => f64::NAN,
                    _ => rng.gen_range(-2.0..40.0),
                };
            }
        }
        let a = path_contributions(&model, &x).map_err(|e| e.to_string())?;
        let margin = model.predict_margin(&x).map_err(|e| e.to_string())?;
        worst = worst.max((a.margin() - margin).abs());
    }
    let msg = format!("max |base + Σφ − margin| = {worst:.2e} over {rows} rows (want < {COMPLETENESS_TOL:e})");
    if worst < COMPLETENESS_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn oracle_monotone_loss() -> Result<String, String> {
    let (m, y, fe) = synthetic_problem(2000, 5);
    let split = stratified_split(&y, &SplitConfig::default()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        subsample: 1.0,
        colsample_bytree: 1.0,
        n_estimators: 100,
        early_stopping_rounds: 1000,
        ..Default::default()
    };
    let reg: &FeatureRegistry = fe.registry();
    let (_, hist) = train(&m, &y, &split, &cfg, reg).map_err(|e| e.to_string())?;
    let mut prev = hist.initial_logloss;
    for (round, &l) in hist.train_logloss.iter().enumerate() {
        if l > prev {
            return Err(format!("round {round}: loss rose from {prev} to {l}"));
        }
        prev = l;
    }
    Ok(format!(
        "{} rounds, loss {:.5} -> {prev:.5}, never increasing",
        hist.train_logloss.len(),
        hist.initial_logloss
    ))
}

fn determinism() -> Result<String, String> {
    let a = support::build_fixture(2500, 21);
    let b = support::build_fixture(2500, 21);
    for (what, pa, pb) in [
        ("model", &a.config.model, &b.config.model),
        ("cards", &a.config.cards, &b.config.cards),
    ] {
        let (x, y) = (std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        if x != y {
            return Err(format!("{what} files differ between runs"));
        }
    }
    let cards = std::fs::read_to_string(&a.config.cards).unwrap().lines().count();
    Ok(format!("model and {cards} cards byte-identical across two runs"))
}

fn service_contract() -> Result<String, String> {
    let f = support::build_fixture(2500, 31);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let s = rt.block_on(async {
        let addr = support::spawn_loaded(&f.config).await;
        support::sweep(addr, &support::Schemas::load(), f.config.metrics.as_deref()).await
    });
    let mut problems = s.failures.clone();
    if s.validated != s.requests {
        problems.push(format!("{} of {} responses validated", s.validated, s.requests));
    }
    if s.max_identity_delta > WHATIF_TOL {
        problems.push(format!("empty what-if drifted by {:e}", s.max_identity_delta));
    }
    if !s.proc_readable {
        problems.push("socket table unreadable; outbound connections not audited".into());
    }
    problems.extend(s.outbound.iter().map(|o| format!("outbound connection {o}")));
    let msg = format!(
        "{} requests schema-valid, empty what-if max drift {:.1e}, {} outbound connections",
        s.validated,
        s.max_identity_delta,
        s.outbound.len()
    );
    if problems.is_empty() {
        Ok(msg)
    } else {
        problems.truncate(5);
        Err(format!("{msg}: {}", problems.join("; ")))
    }
}

fn main() -> ExitCode {
    let mut out = Vec::new();
    dataset_criteria(&mut out);
    let (roc, pr) = oracle_metrics();
    out.push(Outcome { name: "oracle: greedy split", result: oracle_tree() });
    out.push(Outcome { name: "oracle: auroc", result: roc });
    out.push(Outcome { name: "oracle: auprc", result: pr });
    out.push(Outcome { name: "oracle: grad_hess", result: oracle_grad_hess() });
    out.push(Outcome { name: "oracle: attribution completeness", result: oracle_completeness() });
    out.push(Outcome { name: "oracle: monotone training loss", result: oracle_monotone_loss() });
    out.push(Outcome { name: "determinism", result: determinism() });
    out.push(Outcome { name: "service contract", result: service_contract() });

    let mut failed = 0;
    for o in &out {
        match &o.result {
            Ok(m) => println!("PASS {}: {m}", o.name),
            Err(m) => {
                failed += 1;
                println!("FAIL {}: {m}", o.name);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", out.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
