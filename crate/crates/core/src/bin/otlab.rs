use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use otlab::cli::{exit_code, Command, ErrorReport, Run};
use otlab::config::Config;
use otlab::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    Solve,
    Excess,
    Tilt,
    Iterate,
    Seminorm,
    Certify,
    Scan,
    Calibrate,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Solve => Command::Solve,
            Sub::Excess => Command::Excess,
            Sub::Tilt => Command::Tilt,
            Sub::Iterate => Command::Iterate,
            Sub::Seminorm => Command::Seminorm,
            Sub::Certify => Command::Certify,
            Sub::Scan => Command::Scan,
            Sub::Calibrate => Command::Calibrate,
        }
    }
}

/// Epsilon-regularity lab for optimal transport maps on gridded densities.
#[derive(Debug, Parser)]
#[command(name = "otlab", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "otlab-out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn report(e: &Error) -> ExitCode {
    let r = ErrorReport::new(e);
    eprintln!("{}", serde_json::to_string(&r).unwrap_or_else(|_| e.to_string()));
    ExitCode::from(exit_code(e) as u8)
}

fn run(args: &Args) -> otlab::Result<String> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let (config, base) = match &args.config {
        Some(p) => (Config::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (Config::default(), PathBuf::from(".")),
    };
    Run::new(config, &base, &args.out, args.seed).execute(args.command.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OTLAB_LOG", "warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&Error::InvalidInput(e.to_string())),
    };
    match run(&args) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}
