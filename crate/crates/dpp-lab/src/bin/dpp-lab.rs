use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpp_lab::{catalog, LabError, EXIT_ERROR};

/// Runs DPP regularity experiments from TOML configs.
#[derive(Debug, Parser)]
#[command(name = "dpp-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `out/<config stem>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        jobs: Option<u32>,
    },
    /// List experiment kinds.
    List,
    /// Describe one experiment kind.
    Describe { kind: String },
}

fn execute(cli: Cli) -> Result<i32, LabError> {
    match cli.command {
        Command::List => {
            print!("{}", catalog::list());
            Ok(0)
        }
        Command::Describe { kind } => {
            print!("{}", catalog::describe(&kind)?);
            Ok(0)
        }
        Command::Run { config, out, jobs } => {
            if let Some(n) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n as usize)
                    .build_global()
                    .map_err(|e| LabError::Config(format!("--jobs: {e}")))?;
            }
            let out = out.unwrap_or_else(|| {
                let stem = config.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
                PathBuf::from("out").join(stem)
            });
            let summary = dpp_lab::run(&config, &out)?;
            for (name, pass) in &summary.checks {
                println!("{} {name}", if *pass { "PASS" } else { "FAIL" });
            }
            println!("{} -> {}", if summary.pass { "pass" } else { "fail" }, summary.out_dir.display());
            Ok(summary.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
