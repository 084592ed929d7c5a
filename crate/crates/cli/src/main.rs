//! `locflow`: submit jobs, watch them, fetch their results, run the
//! simulator, and launch the server and workers.

mod manifest;
mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use locflow_core::archive;
use locflow_core::protocol::{ErrorKind, Message, StatusReport};
use locflow_core::scheduler::SchedulerPolicy;
use locflow_core::signing::{Keypair, PublicKey};
use locflow_core::sim::{self, Placement, RunKind, SimConfig, StageValues};
use locflow_core::transport::{Endpoint, TransportError};
use locflow_core::{GroupId, UserId};

#[derive(Parser)]
#[command(
    name = "locflow",
    version,
    about = "Data-locality-aware master/worker computing"
)]
struct Cli {
    /// Address of the project server.
    #[arg(
        long,
        global = true,
        env = "LOCFLOW_SERVER",
        default_value = "127.0.0.1:7400"
    )]
    server: String,
    /// Output style of submit and status.
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    /// Tab-separated records, one per line; see the README for the schema.
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Register the applications and submit the job of a manifest.
    Submit {
        manifest: PathBuf,
        /// Project keypair used to sign application files.
        #[arg(long, env = "LOCFLOW_KEYPAIR")]
        keypair: Option<PathBuf>,
    },
    /// Show workunit states, client inventories and credit.
    Status {
        job: Option<String>,
        /// Re-poll until every workunit is DONE or FAILED.
        #[arg(long)]
        watch: bool,
        #[arg(long, default_value_t = 5.0)]
        interval_secs: f64,
    },
    /// Download the result archive of a finished job and verify it.
    Fetch {
        job: String,
        #[arg(long, short)]
        out: PathBuf,
        /// Also unpack the files into this directory.
        #[arg(long)]
        extract: Option<PathBuf>,
    },
    /// Verify an archive on disk.
    Verify {
        archive: PathBuf,
        #[arg(long)]
        extract: Option<PathBuf>,
    },
    /// Run the pipeline simulator and print a CSV report.
    Sim(SimArgs),
    /// Run the project server.
    Server(ServerArgs),
    /// Run a worker.
    Worker(WorkerArgs),
    /// Create a project keypair.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Also write the public half on its own, for workers.
        #[arg(long)]
        public: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct SimArgs {
    /// Event counts, each a positive multiple of 10.
    #[arg(long, value_delimiter = ',', default_values_t = [100, 1000])]
    events: Vec<u64>,
    /// Client counts.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 8])]
    clients: Vec<u32>,
    /// Seconds per event, e.g. `gen=1,sim=6,digi=2,reco=4`; missing stages
    /// keep their defaults.
    #[arg(long, value_parser = parse_costs)]
    cost: Option<StageValues<f64>>,
    /// Seconds added to every interaction that hands out work.
    #[arg(long, default_value_t = 40.0)]
    overhead: f64,
    #[arg(long, default_value_t = 5.0)]
    poll_interval: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where outputs go: strict, replicate, get-input; comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_placement, default_value = "strict")]
    placement: Vec<Placement>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ServerArgs {
    #[arg(long, env = "LOCFLOW_LISTEN", default_value = "127.0.0.1:7400")]
    listen: String,
    #[arg(long, env = "LOCFLOW_DATA_DIR")]
    data_dir: PathBuf,
    /// Key file holding the project public key; a full keypair also works.
    #[arg(long, env = "LOCFLOW_KEYPAIR")]
    keypair: PathBuf,
    #[arg(long, env = "LOCFLOW_TICK_SECS", default_value_t = 1.0)]
    tick_secs: f64,
    #[arg(long, env = "LOCFLOW_WAIT_WINDOW_SECS", default_value_t = 120)]
    wait_window_secs: u64,
    #[arg(long, env = "LOCFLOW_NO_WORK_BACKOFF_SECS", default_value_t = 10)]
    no_work_backoff_secs: u64,
}

#[derive(clap::Args)]
struct WorkerArgs {
    /// Where input and output data files live.
    #[arg(long, env = "LOCFLOW_DATA_DIR")]
    data_dir: PathBuf,
    /// Cache, sandboxes, client id and transfer log.
    #[arg(long, env = "LOCFLOW_WORK_DIR")]
    work_dir: PathBuf,
    /// Key file with the project public key.
    #[arg(long, env = "LOCFLOW_PROJECT_KEY")]
    project_key: PathBuf,
    #[arg(long, env = "LOCFLOW_USER", default_value = "anonymous")]
    user: String,
    #[arg(long, env = "LOCFLOW_GROUP")]
    group: Option<String>,
    #[arg(long, default_value_t = 5.0)]
    heartbeat_secs: f64,
    /// Kill runs after this long even if the deadline is later.
    #[arg(long)]
    task_timeout_secs: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    min_backoff_secs: f64,
    #[arg(long, default_value_t = 300.0)]
    max_backoff_secs: f64,
    #[arg(long)]
    cpus: Option<u32>,
    #[arg(long, default_value_t = 1.0)]
    gflops: f64,
    #[arg(long, default_value_t = 4096)]
    memory_mb: u64,
    #[arg(long, default_value_t = 100_000)]
    disk_mb: u64,
}

fn parse_costs(s: &str) -> Result<StageValues<f64>, String> {
    let mut v = SimConfig::default().cost_per_event;
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let (k, x) = part
            .split_once('=')
            .ok_or_else(|| format!("{part:?} is not STAGE=SECONDS"))?;
        let x: f64 = x.parse().map_err(|e| format!("{part:?}: {e}"))?;
        match k.trim() {
            "gen" => v.gen = x,
            "sim" => v.sim = x,
            "digi" => v.digi = x,
            "reco" => v.reco = x,
            other => return Err(format!("unknown stage {other:?}")),
        }
    }
    Ok(v)
}

fn parse_placement(s: &str) -> Result<Placement, String> {
    match s {
        "strict" => Ok(Placement::Strict),
        "replicate" => Ok(Placement::Replicate),
        "get-input" => Ok(Placement::GetInput),
        other => Err(format!("unknown placement {other:?}")),
    }
}

fn secs(x: f64, what: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(x)
        .with_context(|| format!("{what} must be a non-negative number of seconds"))
}

fn call(ep: &Endpoint, msg: &Message) -> Result<Message> {
    ep.call(msg).map_err(anyhow::Error::from)
}

fn submit(ep: &Endpoint, format: Format, path: &Path, keypair: Option<&Path>) -> Result<()> {
    let key = keypair
        .map(|p| Keypair::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let submission = manifest::load(path, key.as_ref())?;
    let mut out = std::io::stdout().lock();
    for app in submission.applications {
        match call(ep, &Message::SubmitApplication(app))? {
            Message::AppSubmitted { app_id, version } => match format {
                Format::Human => {
                    writeln!(out, "registered application {app_id} version {version}")?
                }
                Format::Table => writeln!(out, "app\t{app_id}\t{version}")?,
            },
            other => bail!("unexpected reply {}", other.name()),
        }
    }
    if let Some(job) = submission.job {
        match call(ep, &Message::SubmitJob(job))? {
            Message::JobSubmitted { job, wu_ids } => {
                if format == Format::Human {
                    writeln!(out, "submitted job {job}: {} workunits", wu_ids.len())?;
                }
                for w in wu_ids {
                    match format {
                        Format::Human => writeln!(out, "  {w}")?,
                        Format::Table => writeln!(out, "workunit\t{w}")?,
                    }
                }
            }
            other => bail!("unexpected reply {}", other.name()),
        }
    }
    Ok(())
}

fn fetch_status(ep: &Endpoint, job: Option<&str>) -> Result<StatusReport> {
    match call(
        ep,
        &Message::Status {
            job: job.map(str::to_owned),
        },
    )? {
        Message::StatusReport(r) => Ok(r),
        other => bail!("unexpected reply {}", other.name()),
    }
}

fn status(
    ep: &Endpoint,
    format: Format,
    job: Option<&str>,
    watch: bool,
    interval: Duration,
) -> Result<()> {
    loop {
        let r = fetch_status(ep, job)?;
        let text = match format {
            Format::Human => report::human(&r),
            Format::Table => report::table(&r),
        };
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes())?;
        if !watch || r.all_terminal() {
            return Ok(());
        }
        writeln!(out)?;
        out.flush()?;
        drop(out);
        thread::sleep(interval);
    }
}

/// Verifies `bytes` and optionally writes its files under `extract`.
fn check_archive(bytes: &[u8], extract: Option<&Path>) -> Result<archive::ArchiveManifest> {
    let unpacked = archive::unpack(bytes)?;
    if let Some(dir) = extract {
        fs::create_dir_all(dir)?;
        for (entry, data) in unpacked.manifest.entries.iter().zip(&unpacked.contents) {
            let dest = dir.join(&entry.file.name);
            if dest.exists() {
                bail!("{} exists; not overwriting", dest.display());
            }
            fs::write(&dest, data).with_context(|| format!("writing {}", dest.display()))?;
        }
    }
    Ok(unpacked.manifest)
}

fn summarise(m: &archive::ArchiveManifest) -> String {
    let bytes: u64 = m.entries.iter().map(|e| e.file.size_bytes).sum();
    format!(
        "{} files, {bytes} bytes, all digests verified",
        m.entries.len()
    )
}

fn fetch(ep: &Endpoint, job: &str, out: &Path, extract: Option<&Path>) -> Result<()> {
    let bytes = match call(
        ep,
        &Message::Fetch {
            job: job.to_owned(),
        },
    )? {
        Message::Archive { bytes } => bytes,
        other => bail!("unexpected reply {}", other.name()),
    };
    let manifest = check_archive(&bytes, extract)?;
    let tmp = out.with_extension("part");
    fs::write(&tmp, &bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, out)?;
    println!("wrote {}: {}", out.display(), summarise(&manifest));
    Ok(())
}

fn simulate(args: &SimArgs) -> Result<()> {
    let template = SimConfig {
        cost_per_event: args.cost.unwrap_or(SimConfig::default().cost_per_event),
        overhead_secs: args.overhead,
        poll_interval_secs: args.poll_interval,
        seed: args.seed,
        ..SimConfig::default()
    };
    let mut runs = Vec::new();
    let mut baselines = Vec::new();
    for &placement in &args.placement {
        let config = SimConfig {
            placement,
            ..template.clone()
        };
        for r in sim::sweep(&config, &args.events, &args.clients)? {
            match r.kind {
                RunKind::Sim => runs.push(r),
                RunKind::Baseline if baselines.len() < args.events.len() => baselines.push(r),
                RunKind::Baseline => {}
            }
        }
    }
    runs.extend(baselines);
    let csv = sim::emit_report(&runs);
    match &args.out {
        Some(path) => {
            fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn server(args: &ServerArgs) -> Result<()> {
    let public_key = PublicKey::load(&args.keypair)
        .with_context(|| format!("loading {}", args.keypair.display()))?;
    let handle = locflow_server::start(locflow_server::ServerConfig {
        listen: args.listen.clone(),
        data_dir: args.data_dir.clone(),
        public_key,
        tick: secs(args.tick_secs, "--tick-secs")?,
        policy: SchedulerPolicy {
            wait_window_secs: args.wait_window_secs,
            no_work_backoff_secs: args.no_work_backoff_secs,
            ..SchedulerPolicy::default()
        },
    })?;
    println!("listening on {}", handle.addr());
    std::io::stdout().flush()?;
    handle.join();
    Ok(())
}

fn worker(server: &str, args: &WorkerArgs) -> Result<()> {
    let key = PublicKey::load(&args.project_key)
        .with_context(|| format!("loading {}", args.project_key.display()))?;
    let mut config = locflow_worker::WorkerConfig::new(
        server,
        args.data_dir.clone(),
        args.work_dir.clone(),
        key,
    );
    config.user_id = UserId::new(&args.user);
    config.group_id = args.group.as_ref().map(GroupId::new);
    config.heartbeat = secs(args.heartbeat_secs, "--heartbeat-secs")?;
    config.task_timeout = args
        .task_timeout_secs
        .map(|s| secs(s, "--task-timeout-secs"))
        .transpose()?;
    config.min_backoff = secs(args.min_backoff_secs, "--min-backoff-secs")?;
    config.max_backoff = secs(args.max_backoff_secs, "--max-backoff-secs")?;
    if let Some(c) = args.cpus {
        config.hardware.cpu_count = c;
    }
    config.hardware.benchmark_gflops = args.gflops;
    config.hardware.memory_mb = args.memory_mb;
    config.hardware.disk_mb = args.disk_mb;
    let w = locflow_worker::Worker::new(config, Arc::new(AtomicBool::new(false)))?;
    w.run()?;
    Ok(())
}

fn keygen(out: &Path, public: Option<&Path>) -> Result<()> {
    if out.exists() {
        bail!("{} exists; not overwriting", out.display());
    }
    let kp = Keypair::generate();
    kp.save(out)?;
    if let Some(p) = public {
        kp.public().save(p)?;
    }
    println!("{}", kp.public().to_hex());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ep = Endpoint::new(&cli.server);
    match &cli.command {
        Command::Submit { manifest, keypair } => {
            submit(&ep, cli.format, manifest, keypair.as_deref())
        }
        Command::Status {
            job,
            watch,
            interval_secs,
        } => status(
            &ep,
            cli.format,
            job.as_deref(),
            *watch,
            secs(*interval_secs, "--interval-secs")?,
        ),
        Command::Fetch { job, out, extract } => fetch(&ep, job, out, extract.as_deref()),
        Command::Verify { archive, extract } => {
            let bytes =
                fs::read(archive).with_context(|| format!("reading {}", archive.display()))?;
            let m = check_archive(&bytes, extract.as_deref())?;
            println!("{}: job {}, {}", archive.display(), m.job, summarise(&m));
            Ok(())
        }
        Command::Sim(args) => simulate(args),
        Command::Server(args) => server(args),
        Command::Worker(args) => worker(&cli.server, args),
        Command::Keygen { out, public } => keygen(out, public.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.command {
        Command::Server(_) | Command::Worker(_) => "info",
        _ => "warn",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(TransportError::Server(reply)) = e.downcast_ref::<TransportError>() {
                if reply.kind == ErrorKind::JobIncomplete {
                    eprintln!("unfinished workunits:");
                }
                for d in &reply.detail {
                    eprintln!("  {d}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
