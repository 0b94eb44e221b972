use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use readmit_core::artifacts::{self, DataDir};
use readmit_core::card::{calibrate_tiers, write_ndjson, CardBuilder, ModelMeta, PhraseTable, TierThresholds};
use readmit_core::explain::{gain_importance, path_contributions};
use readmit_core::features::{FeatureEngineer, FeatureOptions};
use readmit_core::gbdt::{train, Ensemble, TrainConfig};
use readmit_core::ingest::{exclude_dispositions, parse_dataset, prevalence, write_dataset, EXPIRED_OR_HOSPICE};
use readmit_core::metrics::{eda_report, write_points, EvalReport};
use readmit_core::split::{gather, stratified_split, SplitConfig};
use readmit_core::synth::{cohort, SynthConfig};
use readmit_core::Error;

use crate::api::{router, AppState};
use crate::config::ServiceConfig;
use crate::store::Store;

pub const METRICS_FILE: &str = "metrics.json";
pub const ROC_FILE: &str = "roc.csv";
pub const PR_FILE: &str = "pr.csv";

#[derive(Debug, Parser)]
#[command(name = "readmit", version, about = "30-day readmission risk pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the raw extract and report row, error and label counts.
    Ingest(IngestArgs),
    /// Engineer the feature matrix.
    Features(FeaturesArgs),
    /// Stratified train/validation/test split of a label file.
    Split(SplitArgs),
    /// Fit the boosted ensemble with early stopping.
    Train(TrainArgs),
    /// Score a split and write metrics plus ROC/PR points.
    Evaluate(EvaluateArgs),
    /// Cohort breakdowns by prior stays, length of stay and disposition.
    Eda(EdaArgs),
    /// Gain importance, or one row's path contributions.
    Explain(ExplainArgs),
    /// Build a patient card for every test encounter.
    ExportCards(ExportArgs),
    /// Run the local HTTP service.
    Serve(ServeArgs),
    /// Write a synthetic cohort in the source schema.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Print the summary report.
    #[arg(long)]
    pub report: bool,
    /// Write encounters.csv and labels.txt into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Drop encounters discharged as expired or to hospice.
    #[arg(long)]
    pub exclude_expired: bool,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Matrix CSV; registry.txt is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub medications: bool,
    #[arg(long)]
    pub diag_groups: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Share of the non-test pool held out for validation.
    #[arg(long, default_value_t = 0.2)]
    pub valid_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// TOML with any TrainConfig fields; omitted fields keep defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Training stamp (Unix seconds). Defaults to SOURCE_DATE_EPOCH, then 0.
    #[arg(long)]
    pub trained_at: Option<u64>,
    /// Per-round history as JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Suppress the per-round log.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
}

#[derive(Debug, Args)]
pub struct EdaArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub exclude_expired: bool,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Matrix row to attribute; needs --data.
    #[arg(long, requires = "data")]
    pub row: Option<usize>,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Phrase table (feature<TAB>phrase) replacing the bundled one.
    #[arg(long)]
    pub phrases: Option<PathBuf>,
    /// Fixed high cut instead of validation quantiles; needs --medium-cut.
    #[arg(long, requires = "medium_cut")]
    pub high_cut: Option<f64>,
    #[arg(long, requires = "high_cut")]
    pub medium_cut: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    pub rows: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Error class for the one-line `error[<class>]` report.
pub fn error_class(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return e.class();
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<toml::de::Error>() || cause.is::<serde_json::Error>() {
            return "config";
        }
    }
    "internal"
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Features(a) => features(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Eda(a) => eda(a),
        Command::Explain(a) => explain(a),
        Command::ExportCards(a) => export_cards(a),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn load_encounters(path: &Path, exclude_expired: bool) -> Result<readmit_core::ingest::ParseOutcome> {
    let mut out = parse_dataset(open(path)?)?;
    for e in out.errors.iter().take(5) {
        warn!("{}: skipped {e}", path.display());
    }
    if exclude_expired {
        out.encounters = exclude_dispositions(out.encounters, &EXPIRED_OR_HOSPICE);
    }
    Ok(out)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let out = load_encounters(&a.input, a.exclude_expired)?;
    let labels = out.labels();
    if a.report || a.out.is_none() {
        println!("rows_read {}", out.rows_read);
        println!("row_errors {}", out.errors.len());
        println!("encounters {}", out.encounters.len());
        println!("positives {}", labels.iter().filter(|&&l| l == 1).count());
        println!("prevalence {:.6}", prevalence(&labels)?);
    }
    if let Some(dir) = a.out {
        let d = DataDir::new(dir);
        d.create()?;
        d.write_encounters(&out.encounters)?;
        d.write_labels(&labels)?;
        info!("wrote {} encounters to {}", out.encounters.len(), d.root().display());
    }
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let out = load_encounters(&a.input, false)?;
    let fe = FeatureEngineer::new(FeatureOptions {
        include_medications: a.medications,
        include_diag_groups: a.diag_groups,
    });
    let m = fe.matrixize(&out.encounters)?;
    artifacts::write_matrix(&a.out, &m, fe.registry())?;
    println!("rows {} features {} registry {}", m.rows(), m.cols(), fe.registry().fingerprint());
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let labels = artifacts::read_labels(&a.labels)?;
    let cfg = SplitConfig {
        test_fraction: a.test_fraction,
        valid_fraction_of_pool: a.valid_fraction,
        seed: a.seed,
    };
    let s = stratified_split(&labels, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    s.save(&a.out)?;
    for (name, idx) in [("train", &s.train_idx), ("valid", &s.valid_idx), ("test", &s.test_idx)] {
        let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
        println!("{name} {} positives {pos}", idx.len());
    }
    Ok(())
}

pub fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(p) = path else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
    let cfg: TrainConfig = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn trained_at(flag: Option<u64>) -> Result<u64> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("SOURCE_DATE_EPOCH={v:?} is not a Unix timestamp")).into()),
        Err(_) => Ok(0),
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = load_train_config(a.config.as_deref())?;
    let d = DataDir::new(&a.data);
    let (matrix, registry) = d.read_matrix()?;
    let labels = d.read_labels()?;
    let split = d.read_split()?;
    let (mut model, hist) = train(&matrix, &labels, &split, &cfg, &registry)?;
    model.trained_at_unix = trained_at(a.trained_at)?;
    if !a.quiet {
        for (r, (auprc, loss)) in hist.valid_auprc.iter().zip(&hist.train_logloss).enumerate() {
            println!("round {r} valid_auprc {auprc:.6} train_logloss {loss:.6}");
        }
    }
    println!(
        "best_iteration {} valid_auprc {:.6} trees {} scale_pos_weight {:.4}",
        model.best_iteration,
        hist.valid_auprc[model.best_iteration],
        model.trees.len(),
        hist.scale_pos_weight
    );
    model.save(&a.out)?;
    if let Some(p) = a.history {
        let text = serde_json::to_string_pretty(&hist)?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Curves {
    roc: &'static str,
    pr: &'static str,
}

/// Body of `metrics.json`, served as-is by `/model/metrics`.
#[derive(Serialize)]
struct MetricsDoc<'a> {
    model_fingerprint: String,
    split: &'static str,
    report: &'a EvalReport,
    config: &'a TrainConfig,
    best_iteration: usize,
    curves: Curves,
}

fn scores_for(model: &Ensemble, m: &readmit_core::features::FeatureMatrix, idx: &[usize]) -> Result<Vec<f64>> {
    idx.iter().map(|&i| Ok(model.predict_proba(m.row(i))?)).collect()
}

fn check_model_matches(model: &Ensemble, registry: &readmit_core::features::FeatureRegistry) -> Result<()> {
    if model.registry != *registry {
        bail!(Error::Contract(format!(
            "model registry {} does not match data registry {}",
            model.registry_fingerprint(),
            registry.fingerprint()
        )));
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let model = Ensemble::load(&a.model)?;
    let d = DataDir::new(&a.data);
    let (matrix, registry) = d.read_matrix()?;
    check_model_matches(&model, &registry)?;
    let labels = d.read_labels()?;
    let split = d.read_split()?;
    let (name, idx) = match a.split {
        SplitName::Train => ("train", &split.train_idx),
        SplitName::Valid => ("valid", &split.valid_idx),
        SplitName::Test => ("test", &split.test_idx),
    };
    let scores = scores_for(&model, &matrix, idx)?;
    let y = gather(&labels, idx);
    let report = EvalReport::compute(&scores, &y, a.threshold)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let doc = MetricsDoc {
        model_fingerprint: model.fingerprint(),
        split: name,
        report: &report,
        config: &model.config,
        best_iteration: model.best_iteration,
        curves: Curves { roc: ROC_FILE, pr: PR_FILE },
    };
    let mp = a.out.join(METRICS_FILE);
    fs::write(&mp, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(&mp, e))?;
    let rp = a.out.join(ROC_FILE);
    write_points(create(&rp)?, ("fpr", "tpr"), &report.roc_points).map_err(|e| Error::io(&rp, e))?;
    let pp = a.out.join(PR_FILE);
    write_points(create(&pp)?, ("recall", "precision"), &report.pr_points).map_err(|e| Error::io(&pp, e))?;
    println!("split {name} n {} prevalence {:.4}", report.n, report.prevalence);
    println!("auroc {:.4} auprc {:.4}", report.auroc, report.auprc);
    println!(
        "threshold {} precision {:.4} recall {:.4} f1 {:.4} balanced_accuracy {:.4}",
        report.threshold, report.precision, report.recall, report.f1, report.balanced_accuracy
    );
    let c = report.confusion;
    println!("tp {} fp {} tn {} fn {}", c.tp, c.fp, c.tn, c.fn_);
    Ok(())
}

fn eda(a: EdaArgs) -> Result<()> {
    let out = load_encounters(&a.input, a.exclude_expired)?;
    let r = eda_report(&out.encounters)?;
    let mut w = create(&a.out)?;
    r.write_csv(&mut w).map_err(|e| Error::io(&a.out, e))?;
    for g in &r.readmit_rate_by_prior_inpatient {
        println!("prior_inpatient {} n {} rate {:.4}", g.key, g.n, g.rate);
    }
    match r.heavy_vs_none_ratio() {
        Some(x) => println!("heavy_vs_none_ratio {x:.3}"),
        None => println!("heavy_vs_none_ratio undefined"),
    }
    let fmt = |m: Option<f64>| m.map_or("none".to_string(), |v| v.to_string());
    println!(
        "los_median readmitted {} not_readmitted {}",
        fmt(r.los_median_by_outcome.readmitted),
        fmt(r.los_median_by_outcome.not_readmitted)
    );
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<()> {
    let model = Ensemble::load(&a.model)?;
    match (a.row, a.data) {
        (Some(row), Some(data)) => {
            let (matrix, registry) = DataDir::new(data).read_matrix()?;
            check_model_matches(&model, &registry)?;
            if row >= matrix.rows() {
                bail!(Error::Domain(format!("row {row} is beyond the {} matrix rows", matrix.rows())));
            }
            let attr = path_contributions(&model, matrix.row(row))?;
            println!("base {:.6}", attr.base);
            println!("margin {:.6}", attr.margin());
            for c in attr.contributions.iter().take(a.top) {
                println!("{:>3} {:<28} {:+.6}", c.rank, c.feature, c.value);
            }
        }
        _ => {
            let imp = gain_importance(&model);
            for (i, r) in imp.top(a.top).iter().enumerate() {
                println!("{:>3} {:<28} {:.4}", i + 1, r.feature, r.gain);
            }
        }
    }
    Ok(())
}

fn export_cards(a: ExportArgs) -> Result<()> {
    let model = Ensemble::load(&a.model)?;
    let d = DataDir::new(&a.data);
    let (matrix, registry) = d.read_matrix()?;
    check_model_matches(&model, &registry)?;
    let labels = d.read_labels()?;
    let split = d.read_split()?;
    let encounters = d.read_encounters()?;
    if encounters.len() != matrix.rows() {
        bail!(Error::Contract(format!(
            "{} encounters but {} matrix rows",
            encounters.len(),
            matrix.rows()
        )));
    }
    let cuts = match (a.high_cut, a.medium_cut) {
        (Some(h), Some(m)) => TierThresholds::fixed(h, m)?,
        _ => calibrate_tiers(&scores_for(&model, &matrix, &split.valid_idx)?)?,
    };
    let test_scores = scores_for(&model, &matrix, &split.test_idx)?;
    let y = gather(&labels, &split.test_idx);
    let report = EvalReport::compute(&test_scores, &y, 0.5)?;
    let meta = ModelMeta::new(&model, &cuts, report.auroc, report.auprc)?;
    let phrases = match &a.phrases {
        Some(p) => PhraseTable::from_tsv(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => PhraseTable::bundled(),
    };
    let builder = CardBuilder::new(model, cuts, phrases, meta)?;
    let test: Vec<_> = split.test_idx.iter().map(|&i| encounters[i].clone()).collect();
    let cards = builder.export(&test)?;
    let mut w = create(&a.out)?;
    write_ndjson(&mut w, &cards)?;
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    println!(
        "cards {} high_cut {:.6} medium_cut {:.6} test_auroc {:.4}",
        cards.len(),
        cuts.high_cut,
        cuts.medium_cut,
        report.auroc
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig::load(&a.config)?;
    cfg.check_paths()?;
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(cfg.bind)
            .await
            .map_err(|e| Error::io(cfg.bind.to_string(), e))?;
        let state = AppState::default();
        let app = router(state.clone(), cfg.static_dir.clone());
        let loader = cfg.clone();
        tokio::task::spawn_blocking(move || match Store::load(&loader) {
            Ok(store) => {
                info!("loaded {} cards", store.len());
                state.set(store);
            }
            Err(e) => {
                eprintln!("error[{}] {e:#}", error_class(&e));
                std::process::exit(1);
            }
        });
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await.context("serving")?;
        Ok(())
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let es = cohort(&SynthConfig {
        rows: a.rows,
        seed: a.seed,
        ..Default::default()
    });
    write_dataset(create(&a.out)?, &es)?;
    println!("rows {}", es.len());
    Ok(())
}
