//! `simhitl`: ingest, summarize, embed, query and calibrate a project from
//! the command line, or serve it over HTTP.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ColorChoice, Parser, Subcommand, ValueEnum};

use simhitl_core::ingest::{ingest_image_manifest, ingest_tabular, synth_aml, SynthSpec};
use simhitl_core::pipeline::{neighbors, PipelineError};
use simhitl_core::prompting::{parse_interest, render_prompt, DEFAULT_TAG_COUNT};
use simhitl_core::provider::{
    connect, fixture_key, Provider, ProviderConfig, ProviderError, ProviderKind, ReplayProvider, DEFAULT_EMBED_DIM,
};
use simhitl_core::session::SessionError;
use simhitl_core::store::{LoadWarning, Project, ProjectStore, WriterLock};

#[derive(Debug, Parser)]
#[command(name = "simhitl", version, about = "Interest-driven profiling and similarity search over tabular and image data")]
struct Cli {
    /// Project directory.
    #[arg(long, short = 'p', global = true, default_value = ".", env = "SIM_PROJECT")]
    project: PathBuf,

    #[command(flatten)]
    provider: ProviderArgs,

    /// More log output (-v info, -vv debug).
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Stub,
    Replay,
    Live,
}

#[derive(Debug, clap::Args)]
struct ProviderArgs {
    /// Summarization and embedding backend.
    #[arg(long, global = true, value_enum, default_value = "stub")]
    provider: Kind,

    /// Base URL of a live backend. The API key is read from SIM_API_KEY.
    #[arg(long, global = true, env = "SIM_API_BASE")]
    endpoint: Option<String>,

    /// Model name for a live backend.
    #[arg(long, global = true, default_value = "")]
    model: String,

    /// Replay fixture file; with a live backend, responses are recorded here.
    #[arg(long, global = true)]
    fixture: Option<PathBuf>,

    /// Stub embedding dimension.
    #[arg(long, global = true, default_value_t = DEFAULT_EMBED_DIM)]
    embed_dim: usize,
}

impl ProviderArgs {
    fn config(&self) -> ProviderConfig {
        let mut cfg = ProviderConfig::stub(self.embed_dim);
        cfg.kind = match self.provider {
            Kind::Stub => ProviderKind::Stub,
            Kind::Replay => ProviderKind::Replay,
            Kind::Live => ProviderKind::Live,
        };
        cfg.endpoint = self.endpoint.clone();
        cfg.model = self.model.clone();
        cfg.fixture_path = self.fixture.clone();
        cfg
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add data points to the project, creating it if needed.
    Ingest {
        #[command(subcommand)]
        source: IngestSource,
        /// Id for a new project (defaults to the directory name).
        #[arg(long, global = true)]
        project_id: Option<String>,
    },
    /// Write a synthetic AML customer table and its ground truth.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth CSV (defaults to `<out>` with a `.truth.csv` suffix).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Summarize points under an interest, outside any review session.
    Summarize {
        #[arg(long)]
        interest: String,
        /// Only these point ids (comma separated); all points when omitted.
        #[arg(long, value_delimiter = ',')]
        points: Vec<String>,
    },
    /// Embed every stored profile that has no embedding yet.
    Embed,
    /// Print the nearest neighbors of a point.
    Query {
        #[arg(long)]
        point: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Fit the similarity threshold to stored expert labels.
    Calibrate {
        /// Only this session's labels; every session's when omitted.
        #[arg(long)]
        session: Option<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Check that a replay fixture covers every point under the given interests.
    ReplayVerify {
        /// Interest to check; repeat for several prompt versions.
        #[arg(long, required = true)]
        interest: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
enum IngestSource {
    /// A CSV file with a header row.
    Tabular {
        path: PathBuf,
        #[arg(long, default_value = "id")]
        id_column: String,
    },
    /// A JSON manifest of images.
    Images { path: PathBuf },
}

fn main() -> ExitCode {
    let no_color = std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty());
    let cmd = <Cli as clap::CommandFactory>::command().color(if no_color {
        ColorChoice::Never
    } else {
        ColorChoice::Auto
    });
    let cli = match cmd.try_get_matches().and_then(|m| <Cli as clap::FromArgMatches>::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose, no_color);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn init_logging(verbose: u8, no_color: bool) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(!no_color)
        .init();
}

/// 2 for provider failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let provider = err.chain().any(|cause| {
        cause.is::<ProviderError>()
            || matches!(cause.downcast_ref::<PipelineError>(), Some(PipelineError::Provider(_)))
            || matches!(
                cause.downcast_ref::<PipelineError>(),
                Some(PipelineError::Session(SessionError::Provider(_)))
            )
            || matches!(cause.downcast_ref::<SessionError>(), Some(SessionError::Provider(_)))
            || matches!(
                cause.downcast_ref::<simhitl_service::ServiceError>(),
                Some(simhitl_service::ServiceError::Provider(_))
            )
    });
    if provider {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    let dir = cli.project.as_path();
    match cli.command {
        Command::Ingest { source, project_id } => ingest(dir, source, project_id),
        Command::Synth {
            seed,
            n,
            clusters,
            fraction,
            out,
            truth,
        } => synth(seed, n, clusters, fraction, &out, truth),
        Command::Summarize { interest, points } => {
            let provider = connect(&cli.provider.config())?;
            summarize(dir, &interest, &points, provider.as_ref())
        }
        Command::Embed => {
            let provider = connect(&cli.provider.config())?;
            embed(dir, provider.as_ref())
        }
        Command::Query { point, k } => query(dir, &point, k),
        Command::Calibrate { session } => calibrate(dir, session.as_deref()),
        Command::Serve { addr } => serve(dir, addr, &cli.provider.config()),
        Command::ReplayVerify { interest } => replay_verify(dir, &cli.provider, &interest),
    }
}

/// Opens an existing project for writing.
fn open(dir: &Path) -> Result<(ProjectStore, WriterLock, Project)> {
    open_with(dir, true)
}

fn open_with(dir: &Path, warn: bool) -> Result<(ProjectStore, WriterLock, Project)> {
    let store = ProjectStore::new(dir);
    if !store.exists() {
        bail!("no project at {} (run `simhitl ingest` first)", dir.display());
    }
    let lock = store.lock()?;
    let project = load_with(&store, warn)?;
    Ok((store, lock, project))
}

fn load(store: &ProjectStore) -> Result<Project> {
    load_with(store, true)
}

fn load_with(store: &ProjectStore, warn: bool) -> Result<Project> {
    let loaded = store
        .load()
        .with_context(|| format!("loading project at {}", store.dir().display()))?;
    for w in loaded.warnings.iter().filter(|_| warn) {
        match w {
            LoadWarning::OrphanProfiles(ids) => {
                let shown = ids.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
                let more = if ids.len() > 5 { ", ..." } else { "" };
                eprintln!(
                    "warning: {} profiles have no embedding yet ({shown}{more}); run `simhitl embed`",
                    ids.len()
                )
            }
        }
    }
    Ok(loaded.project)
}

fn ingest(dir: &Path, source: IngestSource, project_id: Option<String>) -> Result<()> {
    let store = ProjectStore::new(dir);
    let _lock = store.lock()?;
    let mut project = if store.exists() {
        load(&store)?
    } else {
        let id = project_id
            .or_else(|| {
                std::path::absolute(dir)
                    .ok()?
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
            })
            .unwrap_or_else(|| "project".into());
        Project::new(id)
    };
    let points = match &source {
        IngestSource::Tabular { path, id_column } => ingest_tabular(path, id_column)?.0,
        IngestSource::Images { path } => ingest_image_manifest(path)?,
    };
    let n = project.add_points(points)?;
    if store.exists() {
        store.write_points(&project.points)?;
    } else {
        store.save(&project)?;
    }
    println!("ingested {n} points ({} total) into {}", project.points.len(), project.project_id);
    Ok(())
}

fn synth(seed: u64, n: usize, clusters: usize, fraction: f64, out: &Path, truth: Option<PathBuf>) -> Result<()> {
    let spec = SynthSpec {
        seed,
        n_customers: n,
        n_clusters: clusters,
        launder_fraction: fraction,
    };
    let data = synth_aml(&spec)?;
    let truth = truth.unwrap_or_else(|| {
        let stem = out.file_stem().unwrap_or_default().to_string_lossy();
        out.with_file_name(format!("{stem}.truth.csv"))
    });
    let create = |p: &Path| File::create(p).with_context(|| format!("creating {}", p.display())).map(BufWriter::new);
    data.write_csv(create(out)?)?;
    data.write_truth_csv(create(&truth)?)?;
    println!("wrote {} customers to {} and ground truth to {}", n, out.display(), truth.display());
    Ok(())
}

fn summarize(dir: &Path, interest: &str, points: &[String], provider: &dyn Provider) -> Result<()> {
    let (store, _lock, mut project) = open(dir)?;
    let profiles = project.batch_summarize(interest, points, provider)?;
    store.append_profiles(project.dim, &profiles, &[])?;
    let version = profiles.first().map(|r| r.profile.prompt_version).unwrap_or(0);
    println!("summarized {} points (prompt version {version})", profiles.len());
    Ok(())
}

fn embed(dir: &Path, provider: &dyn Provider) -> Result<()> {
    // orphan profiles are what this command resolves
    let (store, _lock, mut project) = open_with(dir, false)?;
    let had_dim = project.dim.is_some();
    let records = project.embed_pending(provider)?;
    // dim first: a crash before the append then leaves only orphan profiles
    if !had_dim && project.dim.is_some() {
        store.write_meta(&project)?;
    }
    store.append_profiles(project.dim, &[], &records)?;
    match project.dim {
        Some(dim) => println!("embedded {} profiles (dim {dim})", records.len()),
        None => println!("embedded 0 profiles"),
    }
    Ok(())
}

/// Six fractional digits, truncated rather than rounded.
fn truncate6(x: f64) -> String {
    let s = format!("{x:.17}");
    let dot = s.find('.').expect("fixed notation");
    s[..dot + 7].to_owned()
}

fn query(dir: &Path, point: &str, k: usize) -> Result<()> {
    let project = load(&ProjectStore::new(dir))?;
    if project.point(point).is_none() {
        return Err(PipelineError::UnknownPoint(point.to_owned()).into());
    }
    if k == 0 {
        bail!("--k must be at least 1");
    }
    let index = project.canonical_index()?;
    let rows = neighbors(&index, point, k, project.threshold.as_ref())?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "rank,id,score,label")?;
    for n in rows {
        let label = n.label.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
        writeln!(out, "{},{},{},{label}", n.rank, n.id, truncate6(n.score))?;
    }
    Ok(())
}

fn calibrate(dir: &Path, session: Option<&str>) -> Result<()> {
    let (store, _lock, mut project) = open(dir)?;
    let t = project.calibrate(session)?;
    store.write_meta(&project)?;
    let stats = t.calibration_stats.ok_or_else(|| anyhow!("calibration produced no statistics"))?;
    println!("tau,j,positives,negatives,true_positives,false_positives");
    println!(
        "{},{},{},{},{},{}",
        truncate6(t.tau),
        truncate6(stats.j),
        stats.positives,
        stats.negatives,
        stats.true_positives,
        stats.false_positives
    );
    Ok(())
}

fn serve(dir: &Path, addr: SocketAddr, cfg: &ProviderConfig) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(simhitl_service::serve(dir, addr, cfg))?;
    Ok(())
}

fn replay_verify(dir: &Path, args: &ProviderArgs, interests: &[String]) -> Result<()> {
    let fixture = args
        .fixture
        .as_ref()
        .ok_or_else(|| anyhow!("--fixture is required"))?;
    let replay = ReplayProvider::open(fixture)?;
    let project = load(&ProjectStore::new(dir))?;
    let mut missing = 0;
    for raw in interests {
        let prompt = render_prompt(&parse_interest(raw)?, DEFAULT_TAG_COUNT)?;
        let absent: Vec<&str> = project
            .points
            .iter()
            .filter(|p| !replay.contains(&fixture_key(&prompt.text, &p.payload)))
            .map(|p| p.id.as_str())
            .collect();
        println!(
            "{}/{} covered: {}",
            project.points.len() - absent.len(),
            project.points.len(),
            prompt.text
        );
        if !absent.is_empty() {
            println!("  missing: {}", absent.join(", "));
        }
        missing += absent.len();
    }
    if missing > 0 {
        bail!("{missing} point/prompt combinations are not in {}", fixture.display());
    }
    Ok(())
}
