//! `gradsurge`: generate data, train, sweep, verify and inspect runs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradsurge::harness::config::{reference_doc, ExperimentConfig};
use gradsurge::harness::experiment::{generate_data, render_report, run_experiment, write_run, RunReport};
use gradsurge::harness::sweep::{summary_from_runs_csv, summary_table, sweep, write_sweep};
use gradsurge::harness::verify::{verify, VerifyOptions};
use gradsurge::tasks::{write_jsonl, AuxTask};
use gradsurge::training::Method;
use gradsurge::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "gradsurge", version, about = "Auxiliary-task gradient surgery and bi-level task weighting on synthetic graphs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (falls back to GRADSURGE_SEED, then the config file).
    #[arg(long, global = true, env = "GRADSURGE_SEED")]
    seed: Option<u64>,
    /// FT, MTL, GradSim, GradScale, PCGrad, RCGrad, BLO or BLORC.
    #[arg(long, global = true)]
    method: Option<Method>,
    /// Comma-separated auxiliary tasks, e.g. `am,ep,ig,mp`.
    #[arg(long, global = true, value_delimiter = ',')]
    aux: Option<Vec<AuxTask>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic graph pool as JSON lines.
    GenData {
        /// Destination file (default `<out>/graphs.jsonl`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train one run and write its report.
    Train,
    /// Train every configured method over several seeds.
    Sweep {
        /// Number of seeds (overrides `sweep.n_seeds`).
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated methods (overrides `sweep.methods`).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Run the numerical self-checks.
    Verify {
        /// Multiplier on every tolerance; below 1 tightens.
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
        /// Neumann step in units of 1/lambda_max for the hypergradient check.
        #[arg(long, default_value_t = 0.1)]
        neumann_beta_factor: f64,
    },
    /// Summarize a run report or a sweep directory.
    Report { path: PathBuf },
    /// Print the configuration reference with all defaults.
    ConfigReference,
}

fn resolve_config(g: &GlobalArgs) -> gradsurge::Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        cfg.sweep.first_seed = seed;
    }
    if let Some(m) = g.method {
        cfg.method = m;
    }
    if let Some(aux) = &g.aux {
        cfg.aux = aux.clone();
    }
    if let Some(out) = &g.out {
        cfg.out_dir = out.clone();
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape { .. } | Error::Usage(_) | Error::Json(_) => EXIT_CONFIG,
        Error::NonFinite { .. } | Error::Divergent { .. } | Error::UndefinedMetric(_) => EXIT_NUMERIC,
        Error::Io(_) => 1,
    }
}

fn report_path(path: &Path) -> gradsurge::Result<()> {
    let mut stdout = io::stdout().lock();
    if path.is_dir() {
        let runs = path.join("sweep_runs.csv");
        if runs.exists() {
            let summary = summary_from_runs_csv(&fs::read_to_string(runs)?)?;
            print!("{}", summary_table(&summary));
            return Ok(());
        }
        let report = RunReport::load(&path.join("report.json"))?;
        render_report(&report, &mut stdout)?;
        return Ok(());
    }
    if path.extension().is_some_and(|e| e == "csv") {
        let summary = summary_from_runs_csv(&fs::read_to_string(path)?)?;
        print!("{}", summary_table(&summary));
        return Ok(());
    }
    render_report(&RunReport::load(path)?, &mut stdout)?;
    Ok(())
}

fn run(cli: Cli) -> gradsurge::Result<u8> {
    if let Command::ConfigReference = cli.command {
        print!("{}", reference_doc());
        return Ok(0);
    }
    let mut cfg = resolve_config(&cli.global)?;
    if let Command::Sweep { seeds, methods } = &cli.command {
        if let Some(n) = seeds {
            cfg.sweep.n_seeds = *n;
        }
        if let Some(m) = methods {
            cfg.sweep.methods = m.clone();
        }
    }
    cfg.validate()?;
    if cli.global.print_config {
        println!("{}", cfg.to_json_pretty());
        return Ok(0);
    }
    match cli.command {
        Command::GenData { output } => {
            let graphs = generate_data(&cfg)?;
            let path = output.unwrap_or_else(|| cfg.out_dir.join("graphs.jsonl"));
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            write_jsonl(&path, &graphs)?;
            println!("wrote {} graphs to {}", graphs.len(), path.display());
        }
        Command::Train => {
            let report = run_experiment(&cfg)?;
            let dir = write_run(&report)?;
            render_report(&report, &mut io::stdout().lock())?;
            println!("report written to {}", dir.join("report.json").display());
        }
        Command::Sweep { .. } => {
            let result = sweep(&cfg)?;
            write_sweep(&result, &cfg.out_dir)?;
            print!("{}", summary_table(&result.summary));
            println!("summary written to {}", cfg.out_dir.join("sweep_summary.csv").display());
        }
        Command::Verify {
            tolerance_scale,
            neumann_beta_factor,
        } => {
            let report = verify(&VerifyOptions {
                tolerance_scale,
                neumann_beta_factor,
                seed: cfg.seed,
            })?;
            println!("{report}");
            if !report.passed() {
                return Ok(EXIT_VERIFY);
            }
        }
        Command::Report { path } => report_path(&path)?,
        Command::ConfigReference => unreachable!("handled above"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
