use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crnsim::error::Error;
use crnsim::exec::{with_threads, Execution};
use crnsim::experiments::{parse_config_file, preset, run_to_dir, Plan, PresetName};

const THREADS_ENV: &str = "CRNSIM_THREADS";

/// Monte-Carlo simulator for reconfigurable multiband spectrum sensing.
#[derive(Debug, Parser)]
#[command(name = "crnsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detector ROC curves (analytic and empirical). Defaults to the fig4_roc preset.
    Roc(RunArgs),
    /// Aggregate-throughput sweep.
    Sweep(RunArgs),
    /// Consensus-learning trace.
    Consensus(RunArgs),
    /// Run a compiled-in preset by name.
    Preset(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration document.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// fig4_roc, fig9a_protection, fig9b_snr or fig10_consensus.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Master seed, overriding the configuration.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Monte-Carlo trials, overriding the configuration.
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads; falls back to CRNSIM_THREADS, then all cores.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

fn resolve_plan(command: &str, args: &RunArgs) -> Result<(Plan, Option<PresetName>), Error> {
    let preset_name = args.preset.as_deref().map(str::parse::<PresetName>).transpose()?;
    let plan = match (&args.config, preset_name) {
        (Some(path), _) => parse_config_file(path).map_err(|e| match e {
            Error::Io(io) => Error::Validation {
                field: "config".into(),
                message: format!("cannot read {}: {io}", path.display()),
            },
            e => e,
        })?,
        (None, Some(name)) => preset(name),
        (None, None) if command == "roc" => preset(PresetName::Fig4Roc),
        (None, None) => {
            return Err(Error::Validation {
                field: "config".into(),
                message: format!("`{command}` needs --config or --preset"),
            })
        }
    };
    if command != "preset" && plan.kind_name() != command {
        return Err(Error::Validation {
            field: "config".into(),
            message: format!("a {} plan cannot be run by `{command}`", plan.kind_name()),
        });
    }
    let mut plan = plan;
    if let Some(seed) = args.seed {
        plan.set_seed(seed);
    }
    if let Some(trials) = args.trials {
        plan.set_trials(trials);
    }
    plan.validate()?;
    Ok((plan, preset_name))
}

fn thread_count(args: &RunArgs) -> Result<Option<usize>, Error> {
    if args.threads.is_some() {
        return Ok(args.threads);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Validation {
            field: THREADS_ENV.into(),
            message: format!("`{v}` is not a thread count"),
        }),
        Err(_) => Ok(None),
    }
}

fn run(command: &str, args: &RunArgs) -> Result<(), Error> {
    if command == "preset" && args.preset.is_none() {
        return Err(Error::Validation {
            field: "preset".into(),
            message: "`preset` needs --preset NAME".into(),
        });
    }
    let (plan, preset_name) = resolve_plan(command, args)?;
    let threads = thread_count(args)?;
    let manifest = with_threads(threads, || {
        run_to_dir(&plan, &args.out, Execution::Parallel, command, preset_name, threads)
    })??;
    for file in &manifest.outputs {
        println!("{}", args.out.join(file).display());
    }
    println!("{}", args.out.join(crnsim::experiments::MANIFEST_FILE).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, args) = match &cli.command {
        Command::Roc(a) => ("roc", a),
        Command::Sweep(a) => ("sweep", a),
        Command::Consensus(a) => ("consensus", a),
        Command::Preset(a) => ("preset", a),
    };
    match run(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
