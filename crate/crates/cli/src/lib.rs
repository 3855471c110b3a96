//! Command-line pipeline: corpus ingestion through criteria mining, bulk
//! annotation, scorer training and selection, plus the annotation service.

pub mod config;
pub mod error;
pub mod report;
pub mod run_dir;
pub mod server;
pub mod stages;

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use qcrit_core::annotation::AnnotationSession;
use qcrit_core::corpus::Pair;
use qcrit_core::jsonl;
use qcrit_core::llm_gateway::Gateway;
use qcrit_core::par::Mode;
use qcrit_core::text::{hash_parts, to_hex};

use config::{parse_set, RunConfig};
use error::CliError;
use run_dir::{RunDir, Stage};
use stages::Ctx;

#[derive(Debug, Parser)]
#[command(
    name = "qcrit",
    version,
    about = "Mine quality criteria, annotate pairs, train a scorer and select data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read the corpus into the run directory.
    Ingest,
    /// Sample length-grouped human, test and agent pairs.
    SamplePairs,
    /// Serve human and test pairs to annotators over HTTP.
    AnnotateServe {
        /// Listen address; overrides `serve.addr`.
        #[arg(long)]
        addr: Option<String>,
        /// Shared token; overrides `serve.token`.
        #[arg(long)]
        token: Option<String>,
    },
    /// Evolve criteria against the human labels and evaluate them on the test split.
    MineCriteria,
    /// Label agent pairs by majority vote over the final criteria.
    AnnotateBulk,
    /// Fit the pairwise scorer on the bulk-labeled pairs.
    TrainScorer,
    /// Score and normalize every document.
    Score,
    /// Sample documents with Gumbel top-k over the scores.
    Select,
    /// Write CSV tables and SVG plots.
    Report,
    /// Run every offline stage in order, resuming where a previous run stopped.
    Pipeline,
}

#[derive(Debug, Args)]
pub struct Options {
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "qcrit-run")]
    pub run_dir: PathBuf,
    /// JSON file with config overrides.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub domain: Option<String>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub criteria_seeds: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Gold source for human and test pairs: `labels` or `simulated`.
    #[arg(long, global = true)]
    pub gold: Option<String>,
    /// Documents to select.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Selection temperature.
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Any config field, e.g. `--set evolution.iterations=5`.
    #[arg(long = "set", global = true, value_name = "KEY=JSON")]
    pub set: Vec<String>,
    /// Discard this stage's artifacts and rerun it.
    #[arg(long, global = true)]
    pub force: bool,
    /// Disable data parallelism.
    #[arg(long, global = true)]
    pub sequential: bool,
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Ingest => Stage::Ingest,
            Command::SamplePairs => Stage::SamplePairs,
            Command::AnnotateServe { .. } => Stage::AnnotateServe,
            Command::MineCriteria => Stage::MineCriteria,
            Command::AnnotateBulk => Stage::AnnotateBulk,
            Command::TrainScorer => Stage::TrainScorer,
            Command::Score => Stage::Score,
            Command::Select => Stage::Select,
            Command::Report => Stage::Report,
            Command::Pipeline => return None,
        })
    }
}

impl Options {
    /// Overrides in increasing precedence.
    fn overrides(&self) -> Result<Vec<Value>, CliError> {
        let mut out = Vec::new();
        let snapshot = self.run_dir.join("config.json");
        if snapshot.exists() {
            out.push(RunConfig::from_file(&snapshot)?);
        }
        if let Some(p) = &self.config {
            out.push(RunConfig::from_file(p)?);
        }
        let mut flags = Map::new();
        let path = |p: &PathBuf| Value::String(p.display().to_string());
        if let Some(d) = &self.domain {
            flags.insert("domain".into(), Value::String(d.clone()));
        }
        if let Some(p) = &self.corpus {
            flags.insert("corpus".into(), path(p));
        }
        if let Some(p) = &self.criteria_seeds {
            flags.insert("criteria_seeds".into(), path(p));
        }
        if let Some(s) = self.seed {
            flags.insert("seed".into(), s.into());
        }
        if let Some(g) = &self.gold {
            flags.insert("gold".into(), Value::String(g.clone()));
        }
        let mut selection = Map::new();
        if let Some(k) = self.k {
            selection.insert("k".into(), k.into());
        }
        if let Some(t) = self.temperature {
            selection.insert("temperature".into(), t.into());
        }
        if !selection.is_empty() {
            flags.insert("selection".into(), Value::Object(selection));
        }
        out.push(Value::Object(flags));
        for s in &self.set {
            out.push(parse_set(s)?);
        }
        Ok(out)
    }

    fn mode(&self) -> Mode {
        if self.sequential {
            Mode::Sequential
        } else {
            Mode::default()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.command.stage() {
        Some(stage) => run_stage(cli, stage),
        None => {
            for stage in Stage::PIPELINE {
                run_stage(cli, stage)?;
            }
            Ok(())
        }
    }
}

fn run_stage(cli: &Cli, stage: Stage) -> Result<(), CliError> {
    let opts = &cli.opts;
    let cfg = RunConfig::resolve(&opts.overrides()?)?;
    let dir = RunDir::open(&opts.run_dir, stage)?;
    if dir.is_done(stage) && !opts.force && stage != Stage::AnnotateServe {
        log::info!(
            "{} already complete; pass --force to rerun it",
            stage.name()
        );
        return Ok(());
    }
    dir.require_prerequisites()?;
    dir.invalidate(opts.force)?;
    let ctx = Ctx {
        cfg: &cfg,
        dir: &dir,
        mode: opts.mode(),
    };
    log::info!("{}: starting in {}", stage.name(), dir.root().display());
    let result = match stage {
        Stage::Ingest => stages::ingest(&ctx),
        Stage::SamplePairs => stages::sample_pairs(&ctx),
        Stage::AnnotateServe => {
            let (addr, token) = match &cli.command {
                Command::AnnotateServe { addr, token } => (addr.clone(), token.clone()),
                _ => (None, None),
            };
            serve(&ctx, addr, token)
        }
        Stage::MineCriteria | Stage::AnnotateBulk => {
            let gateway = Arc::new(cfg.gateway()?);
            let r = if stage == Stage::MineCriteria {
                stages::mine_criteria(&ctx, &gateway)
            } else {
                stages::annotate_bulk(&ctx, &gateway)
            };
            record_usage(&dir, &gateway);
            r
        }
        Stage::TrainScorer => stages::train_scorer(&ctx),
        Stage::Score => stages::score(&ctx),
        Stage::Select => stages::select(&ctx),
        Stage::Report => report::report(&ctx),
    };
    result?;
    dir.mark_done()
}

fn record_usage(dir: &RunDir, gateway: &Gateway) {
    if let Err(e) = dir.record_usage(&gateway.usage()) {
        log::warn!("could not update usage.json: {e}");
    }
}

/// Human and test pairs, the ones annotators see.
fn annotation_pairs(ctx: &Ctx) -> Result<Vec<Pair>, CliError> {
    let mut pairs: Vec<Pair> = jsonl::read(&ctx.dir.path("pairs/human.jsonl"))?;
    pairs.extend(jsonl::read::<Pair>(&ctx.dir.path("pairs/test.jsonl"))?);
    Ok(pairs)
}

pub fn open_session(ctx: &Ctx) -> Result<AnnotationSession, CliError> {
    let corpus = stages::load_corpus(ctx)?;
    Ok(AnnotationSession::open(
        corpus,
        annotation_pairs(ctx)?,
        ctx.cfg.domain,
        ctx.cfg.seed,
        &ctx.dir.path("labels.jsonl"),
    )?)
}

fn generated_token() -> String {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    let h = hash_parts(nanos as u64, &[&std::process::id().to_string()]);
    to_hex(&h.to_be_bytes())
}

fn serve(ctx: &Ctx, addr: Option<String>, token: Option<String>) -> Result<(), CliError> {
    let addr = addr.unwrap_or_else(|| ctx.cfg.serve.addr.clone());
    let token = token
        .or_else(|| ctx.cfg.serve.token.clone())
        .unwrap_or_else(generated_token);
    let state = Arc::new(server::AppState {
        session: open_session(ctx)?,
        token: token.clone(),
    });
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Config(format!("cannot listen on {addr}: {e}")))?;
        println!("annotation service on http://{addr} (token {token})");
        axum::serve(listener, server::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(CliError::from)
    })
}
