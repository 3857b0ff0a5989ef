use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mobunc::pipeline::{Pipeline, RunConfig};
use mobunc::{Error, Exec};

#[derive(Parser)]
#[command(name = "mobunc", version, about = "Uncertainty-aware mobility anomaly pipeline")]
struct Cli {
    /// Run configuration (TOML). Relative paths inside it resolve against
    /// the file's directory.
    #[arg(short, long, global = true, default_value = "mobunc.toml")]
    config: PathBuf,

    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population and inject anomalies.
    Simulate,
    /// Validate events (or extract them from GPS) and index windows.
    Tokenize,
    /// Train the model and write a checkpoint.
    Train,
    /// Score validation and test events.
    Score,
    /// Compute prediction, rejection and detection metrics.
    Evaluate,
    /// Write CSV tables and a summary from the metrics.
    Report,
    /// Run all stages in order.
    Run,
    /// Print a configuration with every default filled in.
    InitConfig {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::MissingArtifact(_) => 3,
        Error::Schema(_) | Error::Provenance(_) | Error::Json(_) => 4,
        Error::Numeric(_) => 5,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
        Error::Io(_) => 1,
    }
}

fn base_dir(config: &Path) -> PathBuf {
    match config.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn run(cli: &Cli) -> mobunc::Result<()> {
    if let Command::InitConfig { seed } = cli.command {
        let cfg = RunConfig::from_toml(&format!("seed = {seed}\n"))?;
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let cfg = RunConfig::load(&cli.config)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let pipeline = Pipeline::new(cfg, &base_dir(&cli.config), exec)?;
    match cli.command {
        Command::Simulate => pipeline.simulate(),
        Command::Tokenize => pipeline.tokenize(),
        Command::Train => {
            let report = pipeline.train()?;
            for (epoch, loss) in report.epoch_loss.iter().enumerate() {
                println!("epoch {} loss {loss:.6}", epoch + 1);
            }
            Ok(())
        }
        Command::Score => pipeline.score(),
        Command::Evaluate => pipeline.evaluate().map(|_| ()),
        Command::Report => pipeline.report(),
        Command::Run => pipeline.run_all(),
        Command::InitConfig { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
