use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDate;
use cityagent_core::data::{BlobSpec, DatasetFormat, FileStore, SeriesSpec, STORE_ENV};
use cityagent_core::hpo::trace_to_jsonl;
use cityagent_core::orchestrator::{
    Catalog, Intent, IntentOutput, LlmConfig, ParseOutcome, PlanParams, RoundOptions, Session,
    VisualizationKind, VisualizationPayload,
};
use cityagent_core::temporal::{train, Checkpoint, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::api::{serve, AppState, ServiceConfig};
use crate::datasets::{bundle_from_csv, bundle_from_synth, load_bundle, save_bundle};
use crate::jobs::{run_intent, IntentRun, JobRequest};
use crate::{DatasetUpload, ServiceError, SynthRequest};

pub const SEED_ENV: &str = "CITYAGENT_SEED";
pub const PORT_ENV: &str = "CITYAGENT_PORT";
pub const WORKERS_ENV: &str = "CITYAGENT_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "cityagent",
    version,
    about = "Spatiotemporal IoT analytics from the command line"
)]
pub struct Cli {
    /// Directory of the record store holding datasets, sessions and jobs.
    #[arg(long, global = true, env = STORE_ENV, default_value = "cityagent-store")]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load CSV files into the store as a dataset.
    Ingest(IngestArgs),
    /// Generate a seeded synthetic dataset into the store.
    Synth(SynthArgs),
    /// Train a forecaster and save its checkpoint.
    Train(TrainArgs),
    /// Train a forecaster and report real against predicted values.
    Predict(PredictArgs),
    /// Tune the hidden size with the island-model genetic algorithm.
    Hpo(HpoArgs),
    /// Sensor similarity matrix or graph.
    Similarity(SimilarityArgs),
    /// Spectral clustering of the sensors.
    Cluster(ClusterArgs),
    /// Similarity and feature profiles between clusters.
    CompareClusters(CompareArgs),
    /// Interactive session reading one request per line from stdin.
    Chat(ChatArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Series,
    City,
    Sensors,
}

impl From<FormatArg> for DatasetFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Series => DatasetFormat::Series,
            FormatArg::City => DatasetFormat::City,
            FormatArg::Sensors => DatasetFormat::Sensors,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub id: String,
    #[arg(long, value_enum)]
    pub format: FormatArg,
    #[arg(long)]
    pub csv: PathBuf,
    /// `node_id,street_id` memberships.
    #[arg(long)]
    pub streets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub id: String,
    /// JSON file with `blobs` and/or `series` specs; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub per_cluster: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Only a single series, no sensors.
    #[arg(long, conflicts_with = "sensors_only")]
    pub series_only: bool,
    /// Only sensors, no series.
    #[arg(long)]
    pub sensors_only: bool,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub dataset: String,
    #[arg(long, env = SEED_ENV, default_value_t = 7)]
    pub seed: u64,
    /// Threads for the parallel parts; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Write the result JSON here instead of printing a summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the result JSON on stdout.
    #[arg(long)]
    pub json: bool,
    /// Write each visualization payload as `<kind>.json` into this directory.
    #[arg(long)]
    pub payload_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub node: Option<String>,
    #[arg(long)]
    pub feature: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, env = SEED_ENV, default_value_t = 7)]
    pub seed: u64,
    /// Checkpoint file to write.
    #[arg(long)]
    pub model: PathBuf,
    /// Training summary JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub node: Option<String>,
    #[arg(long)]
    pub feature: Option<String>,
    /// First day (YYYY-MM-DD) to forecast; default is the test split.
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HpoArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub node: Option<String>,
    #[arg(long)]
    pub feature: Option<String>,
    #[arg(long)]
    pub islands: Option<usize>,
    /// Total population across islands.
    #[arg(long, alias = "population")]
    pub pop: Option<usize>,
    /// Migration rounds.
    #[arg(long)]
    pub outer: Option<usize>,
    /// Generations per island between migrations.
    #[arg(long)]
    pub inner: Option<usize>,
    /// Training epochs per fitness evaluation.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_hidden: Option<i64>,
    /// Line-delimited search trace (generation, island, best fitness, params).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiffusionArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimilarityView {
    Heatmap,
    Graph,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub diffusion: DiffusionArgs,
    #[arg(long, value_enum, default_value = "heatmap")]
    pub view: SimilarityView,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub diffusion: DiffusionArgs,
    /// Cluster count; chosen from the metric table when omitted.
    #[arg(long)]
    pub k: Option<usize>,
    /// `node_id,label` CSV file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CompareView {
    Heatmap,
    Profiles,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub diffusion: DiffusionArgs,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated cluster labels to compare.
    #[arg(long, value_delimiter = ',')]
    pub clusters: Vec<usize>,
    #[arg(long, value_enum, default_value = "heatmap")]
    pub view: CompareView,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Datasets to bind; the last one is the default.
    #[arg(long = "dataset", required = true)]
    pub datasets: Vec<String>,
    #[arg(long, env = SEED_ENV, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Ask the language model configured in the environment before the rule parser.
    #[arg(long)]
    pub llm: bool,
    /// Write every payload as `round<N>-<step>-<kind>.json` into this directory.
    #[arg(long)]
    pub payload_dir: Option<PathBuf>,
    /// Write the whole session JSON here on exit.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = PORT_ENV, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = SEED_ENV, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Jobs slower than this return 202 and are polled.
    #[arg(long, default_value_t = 2000)]
    pub job_threshold_ms: u64,
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(cli: Cli) -> Result<(), ServiceError> {
    let store = || FileStore::open(&cli.store).map_err(ServiceError::from);
    match cli.command {
        Command::Ingest(a) => {
            let read =
                |p: &Path| std::fs::read_to_string(p).map_err(|e| ServiceError::io(p.display(), e));
            let upload = DatasetUpload {
                id: a.id.clone(),
                format: a.format.into(),
                csv: read(&a.csv)?,
                streets_csv: a.streets.as_deref().map(read).transpose()?,
            };
            let bundle = bundle_from_csv(&upload)?;
            save_bundle(&store()?, &bundle)?;
            print_json(&bundle.summary())
        }
        Command::Synth(a) => {
            let mut req = match &a.spec {
                Some(p) => {
                    let text =
                        std::fs::read_to_string(p).map_err(|e| ServiceError::io(p.display(), e))?;
                    let mut value: serde_json::Value = serde_json::from_str(&text)
                        .map_err(|e| ServiceError::Validation(e.to_string()))?;
                    if let Some(obj) = value.as_object_mut() {
                        obj.insert("id".into(), a.id.clone().into());
                    }
                    serde_json::from_value(value)
                        .map_err(|e| ServiceError::Validation(e.to_string()))?
                }
                None => SynthRequest {
                    id: a.id.clone(),
                    blobs: None,
                    series: None,
                },
            };
            if !a.series_only && (req.blobs.is_some() || req.series.is_none() || a.sensors_only) {
                let blobs = req.blobs.get_or_insert_with(BlobSpec::default);
                blobs.clusters = a.clusters.unwrap_or(blobs.clusters);
                blobs.per_cluster = a.per_cluster.unwrap_or(blobs.per_cluster);
                blobs.seed = a.seed.unwrap_or(blobs.seed);
            }
            if !a.sensors_only {
                let series = req.series.get_or_insert_with(SeriesSpec::default);
                series.length = a.length.unwrap_or(series.length);
                series.seed = a.seed.unwrap_or(series.seed);
            }
            if a.series_only {
                req.blobs = None;
            }
            if a.sensors_only {
                req.series = None;
            }
            let bundle = bundle_from_synth(&req)?;
            save_bundle(&store()?, &bundle)?;
            print_json(&bundle.summary())
        }
        Command::Train(a) => {
            let bundle = load_bundle(&store()?, &a.dataset)?;
            let series = bundle.series_for(a.node.as_deref())?;
            let defaults = TrainConfig::default();
            let target = match &a.feature {
                Some(f) => Some(series.feature_index(f).ok_or_else(|| {
                    ServiceError::Validation(format!("series {} has no feature {f}", series.id))
                })?),
                None => None,
            };
            let cfg = TrainConfig {
                epochs: a.epochs.unwrap_or(defaults.epochs),
                hidden: a.hidden.unwrap_or(defaults.hidden),
                seed: a.seed,
                target_column: target,
                ..defaults
            };
            let outcome = train(series, &cfg)?;
            let checkpoint = Checkpoint::new(&outcome.forecaster, &cfg);
            if let Some(dir) = a.model.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir.display(), e))?;
            }
            checkpoint.save(&a.model)?;
            let summary = TrainSummary {
                dataset: bundle.id.clone(),
                series_id: series.id.clone(),
                feature: series.feature_names[outcome.forecaster.target_column].clone(),
                best_epoch: outcome.best_epoch,
                best_val_loss: outcome.best_val_loss,
                history: outcome
                    .history
                    .iter()
                    .map(|r| serde_json::to_value(r).expect("epoch records serialize"))
                    .collect(),
            };
            match &a.out {
                Some(p) => write_file(p, &pretty(&summary)),
                None => {
                    println!(
                        "trained {} on {} for {} epochs; best validation loss {:.6} at epoch {}",
                        summary.feature,
                        summary.series_id,
                        summary.history.len(),
                        summary.best_val_loss,
                        summary.best_epoch
                    );
                    Ok(())
                }
            }
        }
        Command::Predict(a) => {
            let params = PlanParams {
                nodes: a.node.into_iter().collect(),
                feature: a.feature,
                date_from: parse_date(a.from.as_deref())?,
                date_to: parse_date(a.to.as_deref())?,
                epochs: a.epochs,
                ..PlanParams::default()
            };
            analysis(&cli.store, Intent::Predict, params, None, &a.common, |_| {
                Ok(())
            })
        }
        Command::Hpo(a) => {
            let params = PlanParams {
                nodes: a.node.into_iter().collect(),
                feature: a.feature,
                islands: a.islands,
                population: a.pop,
                outer_iterations: a.outer,
                inner_iterations: a.inner,
                epochs: a.epochs,
                max_hidden: a.max_hidden,
                ..PlanParams::default()
            };
            let trace = a.trace.clone();
            analysis(
                &cli.store,
                Intent::Hpo,
                params,
                None,
                &a.common,
                |run| match (&trace, run.outputs.first()) {
                    (Some(p), Some(IntentOutput::Hpo(out))) => {
                        write_file(p, &trace_to_jsonl(&out.trace))
                    }
                    _ => Ok(()),
                },
            )
        }
        Command::Similarity(a) => {
            let viz = match a.view {
                SimilarityView::Heatmap => VisualizationKind::Heatmap,
                SimilarityView::Graph => VisualizationKind::ForceGraph,
            };
            analysis(
                &cli.store,
                Intent::Similarity,
                diffusion(&a.diffusion),
                Some(viz),
                &a.common,
                |_| Ok(()),
            )
        }
        Command::Cluster(a) => {
            let params = PlanParams {
                k: a.k,
                ..diffusion(&a.diffusion)
            };
            let labels = a.labels.clone();
            analysis(
                &cli.store,
                Intent::Cluster,
                params,
                None,
                &a.common,
                |run| match (&labels, run.outputs.first()) {
                    (Some(p), Some(IntentOutput::Cluster(out))) => {
                        let mut text = String::from("node_id,label\n");
                        for (point, label) in out.points.iter().zip(&out.labels) {
                            text.push_str(&format!("{},{label}\n", point.id));
                        }
                        write_file(p, &text)
                    }
                    _ => Ok(()),
                },
            )
        }
        Command::CompareClusters(a) => {
            let params = PlanParams {
                k: a.k,
                clusters: a.clusters.clone(),
                ..diffusion(&a.diffusion)
            };
            let viz = match a.view {
                CompareView::Heatmap => VisualizationKind::Heatmap,
                CompareView::Profiles => VisualizationKind::ParallelCoords,
            };
            analysis(
                &cli.store,
                Intent::CompareClusters,
                params,
                Some(viz),
                &a.common,
                |_| Ok(()),
            )
        }
        Command::Chat(a) => chat(&cli.store, a),
        Command::Serve(a) => {
            let config = ServiceConfig {
                port: a.port,
                store_root: cli.store.clone(),
                llm: LlmConfig::from_env(),
                default_seed: a.seed,
                workers: a.workers.unwrap_or(ServiceConfig::default().workers),
                job_threshold: Duration::from_millis(a.job_threshold_ms),
                ..ServiceConfig::default()
            };
            run_server(config)
        }
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    dataset: String,
    series_id: String,
    feature: String,
    best_epoch: usize,
    best_val_loss: f64,
    history: Vec<serde_json::Value>,
}

fn diffusion(d: &DiffusionArgs) -> PlanParams {
    PlanParams {
        alpha: d.alpha,
        theta: d.theta,
        lambda: d.lambda,
        ..PlanParams::default()
    }
}

fn parse_date(s: Option<&str>) -> Result<Option<NaiveDate>, ServiceError> {
    s.map(|d| {
        d.parse()
            .map_err(|e| ServiceError::Validation(format!("date {d:?}: {e}")))
    })
    .transpose()
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("results serialize") + "\n"
}

fn print_json<T: Serialize>(value: &T) -> Result<(), ServiceError> {
    print!("{}", pretty(value));
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), ServiceError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir.display(), e))?;
    }
    std::fs::write(path, text).map_err(|e| ServiceError::io(path.display(), e))
}

fn write_payloads(
    dir: &Path,
    payloads: &[(String, &VisualizationPayload)],
) -> Result<(), ServiceError> {
    for (name, p) in payloads {
        write_file(&dir.join(format!("{name}.json")), &pretty(p))?;
    }
    Ok(())
}

/// Runs one intent exactly as `POST /jobs/{intent}` does and writes its outputs.
fn analysis(
    store_root: &Path,
    intent: Intent,
    params: PlanParams,
    visualization: Option<VisualizationKind>,
    common: &Common,
    extra: impl FnOnce(&IntentRun) -> Result<(), ServiceError>,
) -> Result<(), ServiceError> {
    let store = FileStore::open(store_root)?;
    let mut catalog = Catalog::new();
    catalog.insert(load_bundle(&store, &common.dataset)?);
    let req = JobRequest {
        dataset: common.dataset.clone(),
        params,
        visualization,
        seed: Some(common.seed),
    };
    let run = run_intent(&catalog, intent, &req, common.seed, common.workers.max(1))?;
    let output = run
        .outputs
        .first()
        .ok_or_else(|| ServiceError::Internal("analysis produced no output".into()))?;
    if let Some(p) = &common.out {
        write_file(p, &pretty(output))?;
    }
    if common.json {
        print_json(output)?;
    }
    if let Some(dir) = &common.payload_dir {
        let named: Vec<(String, &VisualizationPayload)> = run
            .payloads
            .iter()
            .map(|p| (p.kind().as_str().to_string(), p))
            .collect();
        write_payloads(dir, &named)?;
    }
    extra(&run)?;
    if !common.json {
        println!("{}", output.summary());
        for p in &run.payloads {
            println!("{}", p.narrative);
        }
        for n in &run.notices {
            println!("{n}");
        }
    }
    for t in &run.timings {
        eprintln!("{:?} step took {:.1} ms", t.agent, t.elapsed_ms);
    }
    Ok(())
}

fn chat(store_root: &Path, a: ChatArgs) -> Result<(), ServiceError> {
    let store = FileStore::open(store_root)?;
    let mut catalog = Catalog::new();
    let mut session = Session::new(uuid::Uuid::new_v4().to_string(), a.seed);
    for d in &a.datasets {
        catalog.insert(load_bundle(&store, d)?);
        session.bind_dataset(d.clone());
    }
    let opts = RoundOptions {
        llm: if a.llm { LlmConfig::from_env() } else { None },
        workers: a.workers.max(1),
        polish_narratives: false,
    };
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| ServiceError::io("stdin", e))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if matches!(text, "exit" | "quit") {
            break;
        }
        match session.run_round(text, &catalog, &opts) {
            Ok(round) => {
                let mut lines = Vec::new();
                match &round.outcome {
                    ParseOutcome::Clarification { message } => lines.push(message.clone()),
                    ParseOutcome::Plan { .. } => {
                        lines.extend(
                            round
                                .payloads
                                .iter()
                                .map(|p| format!("[{}] {}", p.kind().as_str(), p.narrative)),
                        );
                        lines.extend(round.notices.iter().cloned());
                    }
                }
                for l in lines {
                    writeln!(stdout, "{l}").map_err(|e| ServiceError::io("stdout", e))?;
                }
                if let Some(dir) = &a.payload_dir {
                    let named: Vec<(String, &VisualizationPayload)> = round
                        .payloads
                        .iter()
                        .enumerate()
                        .map(|(i, p)| {
                            (
                                format!("round{}-{}-{}", round.index, i + 1, p.kind().as_str()),
                                p,
                            )
                        })
                        .collect();
                    write_payloads(dir, &named)?;
                }
            }
            Err(e) => writeln!(stdout, "error: {e}").map_err(|e| ServiceError::io("stdout", e))?,
        }
    }
    if let Some(p) = &a.transcript {
        write_file(p, &pretty(&session))?;
    }
    Ok(())
}

fn run_server(config: ServiceConfig) -> Result<(), ServiceError> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let runtime =
        tokio::runtime::Runtime::new().map_err(|e| ServiceError::Internal(e.to_string()))?;
    runtime.block_on(async move {
        let addr = std::net::SocketAddr::from(([0, 0, 0, 0], config.port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| ServiceError::io(addr, e))?;
        let state = AppState::new(config)?;
        tracing::info!("listening on {addr}");
        serve(listener, state, shutdown_signal())
            .await
            .map_err(|e| ServiceError::io(addr, e))
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = terminate => {}
    }
    tracing::info!("shutting down; draining jobs");
}
