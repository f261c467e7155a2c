use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ise_cli::checks::Suite;
use ise_cli::{commands, exit, exit_code};
use ise_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ise", version, about = "Invariant signature experiments")]
struct Cli {
    /// JSON config file for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory (or bank file for gabor-bank).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class dataset.
    GenData,
    /// Nearest-neighbor accuracy against training examples per class.
    SampleComplexity,
    /// Run a property suite; exits 1 when an assertion fails.
    Check {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Print the signature of one image as JSON.
    Signature {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        /// Pooling spec as inline JSON or a file path.
        #[arg(long)]
        pooling: String,
        /// "full", or a window as inline JSON or a file path.
        #[arg(long, default_value = "full")]
        window: String,
    },
    /// Build a Gabor template bank.
    GaborBank,
}

fn need_config(cli: &Cli) -> Result<&PathBuf> {
    cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))
}

fn run(cli: &Cli) -> Result<i32> {
    let start = std::time::Instant::now();
    let code = match &cli.command {
        Command::GenData => {
            let data = commands::gen_data(need_config(cli)?, cli.seed, &cli.out)?;
            eprintln!("wrote {} samples to {}", data.samples.len(), cli.out.display());
            exit::PASS
        }
        Command::SampleComplexity => {
            for p in commands::sample_complexity_cmd(need_config(cli)?, cli.seed, &cli.out)? {
                eprintln!("wrote {}", p.display());
            }
            exit::PASS
        }
        Command::Check { suite } => {
            let report = commands::check_cmd(*suite, cli.config.as_deref(), cli.seed, &cli.out)?;
            for a in &report.assertions {
                eprintln!("{} {}: {:e} (bound {:e})", if a.passed { "ok  " } else { "FAIL" }, a.name, a.value, a.bound);
            }
            if report.passed {
                exit::PASS
            } else {
                exit::ASSERTION
            }
        }
        Command::Signature { image, bank, pooling, window } => {
            print!("{}", commands::signature_cmd(image, bank, pooling, window)?);
            exit::PASS
        }
        Command::GaborBank => {
            let path = commands::gabor_bank_cmd(need_config(cli)?, &cli.out)?;
            eprintln!("wrote {}", path.display());
            exit::PASS
        }
    };
    eprintln!("runtime {:.3}s", start.elapsed().as_secs_f64());
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(exit::CONFIG as u8);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
