//! `puriscope <experiment> [flags]`: run one named experiment and write its
//! result file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use puriscope_core::experiments::{
    run_experiment, Experiment, ExperimentConfig, ExperimentOutput, QubitList, SeparationTask,
};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_PRECONDITION: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;
const EXIT_USAGE: u8 = 64;

const VERSION: &str = env!("PURISCOPE_VERSION");

#[derive(Parser, Debug)]
#[command(name = "puriscope", version = VERSION, about = "Purification-based estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact identity checks on random purifications.
    Identities(RunArgs),
    /// Moment estimator error versus system size.
    Moment(RunArgs),
    /// Virtual cooling estimator error versus system size.
    Cooling(RunArgs),
    /// Principal component estimator error versus system size.
    Pca(RunArgs),
    /// Support QFI estimator error versus system size.
    Qfi(RunArgs),
    /// Channel unitarity from the Choi state.
    ChannelUnitarity(RunArgs),
    /// Virtual channel distillation.
    ChannelDistill(RunArgs),
    /// Principal Kraus component of a channel.
    ChannelPca(RunArgs),
    /// Purification versus single-copy strategies.
    Separation(RunArgs),
    /// Server verification acceptance rates.
    CryptoVerify(RunArgs),
    /// Blind observable estimation.
    CryptoBlind(RunArgs),
    /// Controlled-cycle circuit baseline.
    SwapTest(RunArgs),
}

impl Command {
    fn split(self) -> (Experiment, RunArgs) {
        use Command::*;
        match self {
            Identities(a) => (Experiment::Identities, a),
            Moment(a) => (Experiment::Moment, a),
            Cooling(a) => (Experiment::Cooling, a),
            Pca(a) => (Experiment::Pca, a),
            Qfi(a) => (Experiment::Qfi, a),
            ChannelUnitarity(a) => (Experiment::ChannelUnitarity, a),
            ChannelDistill(a) => (Experiment::ChannelDistill, a),
            ChannelPca(a) => (Experiment::ChannelPca, a),
            Separation(a) => (Experiment::Separation, a),
            CryptoVerify(a) => (Experiment::CryptoVerify, a),
            CryptoBlind(a) => (Experiment::CryptoBlind, a),
            SwapTest(a) => (Experiment::SwapTest, a),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Qubit counts: `5`, `2..8` or `4,6,8`.
    #[arg(long)]
    n: Option<QubitList>,
    #[arg(long)]
    ancilla: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    t: Option<u32>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    rounds: Option<u64>,
    /// purity, cooling or fisher.
    #[arg(long)]
    task: Option<SeparationTask>,
    /// Falls back to PURISCOPE_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// The JSON result is always written; `csv` adds a table next to it.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("PURISCOPE_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| format!("PURISCOPE_SEED='{v}' is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

fn write_outputs(out: &ExperimentOutput, dir: &Path, format: Format) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let stem = out.experiment.name();
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&json, out.to_json() + "\n")?;
    let mut written = vec![json];
    if format == Format::Csv {
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, out.to_csv())?;
        written.push(csv);
    }
    Ok(written)
}

fn run(experiment: Experiment, args: RunArgs) -> u8 {
    let seed = match resolve_seed(args.seed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(jobs) = args.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    }
    let config = ExperimentConfig {
        n: args.n,
        ancilla: args.ancilla,
        rank: args.rank,
        t: args.t,
        budget: args.budget,
        trials: args.trials,
        rounds: args.rounds,
        task: args.task,
        seed,
    };
    let mut output = match run_experiment(experiment, &config, VERSION) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return if e.is_precondition() { EXIT_PRECONDITION } else { EXIT_ERROR };
        }
    };
    output.timestamp = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    match write_outputs(&output, &args.out, args.format) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: writing results to {}: {e}", args.out.display());
            return EXIT_ERROR;
        }
    }
    for (k, v) in &output.summary.metrics {
        println!("{k} = {v}");
    }
    if output.summary.pass {
        println!("{experiment}: pass");
        EXIT_OK
    } else {
        println!("{experiment}: FAIL");
        EXIT_THRESHOLD
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (experiment, args) = cli.command.split();
    ExitCode::from(run(experiment, args))
}
