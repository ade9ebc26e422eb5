use clap::{Parser, Subcommand};
use jjaqed_cli::config::{self, RunConfig, SchemaError};
use jjaqed_cli::{output, tasks};
use std::path::PathBuf;
use std::process::ExitCode;
use jjaqed_cli::tasks::TaskError;

#[derive(Parser)]
#[command(name = "jjaqed", version, about = "Artificial atom coupled to a Josephson junction array")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML configuration file.
    config: PathBuf,
    /// Worker threads for independent grid points.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    validate: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run any task.
    Run(RunArgs),
    /// Run a grid task, distributing points over the workers.
    Sweep(RunArgs),
}

enum Failure {
    Schema(String),
    Numeric(String),
    Tracking(String),
    Io(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (class, msg, code) = match self {
            Failure::Schema(m) => ("schema", m, 2),
            Failure::Numeric(m) => ("numeric", m, 3),
            Failure::Tracking(m) => ("tracking", m, 4),
            Failure::Io(m) => ("io", m, 1),
        };
        eprintln!("error[{class}]: {msg}");
        ExitCode::from(code)
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        Failure::Schema(e.0)
    }
}

impl From<TaskError> for Failure {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Qed(e @ jjaqed::QedError::Tracking { .. }) => Failure::Tracking(e.to_string()),
            TaskError::Qed(e) => Failure::Numeric(format!("{}: {e}", e.class())),
            TaskError::AllFailed(n, e) => Failure::Numeric(format!("all {n} grid points failed; first: {}: {e}", e.class())),
        }
    }
}

fn execute(args: RunArgs, sweep: bool) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Failure::Io(format!("{}: {e}", args.config.display())))?;
    let mut cfg: RunConfig = config::load(&text)?;
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(Failure::Schema("workers must be >= 1".into()));
        }
        cfg.workers = w;
    }
    if let Some(o) = args.output {
        cfg.output = o;
    }
    if sweep && !cfg.task.is_sweep() {
        return Err(Failure::Schema(format!("task {} is not a grid task; use `run`", cfg.task.name())));
    }
    let rendered = cfg.render();
    if args.validate {
        print!("{rendered}");
        return Ok(());
    }
    faer::set_global_parallelism(faer::Par::Seq);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Failure::Io(format!("thread pool: {e}")))?;
    let tables = tasks::run_task(&cfg, &pool)?;
    let paths = output::write_tables(&cfg.output, cfg.task.name(), &rendered, &tables).map_err(|e| Failure::Io(format!("{e:#}")))?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => execute(a, false),
        Command::Sweep(a) => execute(a, true),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
