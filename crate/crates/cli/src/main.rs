//! `opengrape` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or i/o failure, 2 invalid config,
//! 3 optimizer not converged, 4 gradient check failed.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "opengrape", version, about = "Open-system GRAPE: simulate, optimize and check qubit and N-level controls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate the initial state under the initial-guess controls.
    Simulate(Common),
    /// Run the adaptive-step gradient descent.
    Optimize(Common),
    /// Compare the analytic gradient against central finite differences.
    Gradcheck(Common),
    /// Tabulate a spectral density on an omega grid.
    Spectrum(Common),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Built-in configuration; repeat to sweep several into OUT/<name>.
    #[arg(long, value_name = "NAME")]
    preset: Vec<String>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the config echo and summary line.
    #[arg(long)]
    quiet: bool,
    /// Worker threads for preset sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

type Runner = fn(&RunConfig, &Path) -> Result<String, CliError>;

fn run_one(run: Runner, mut cfg: RunConfig, seed: Option<u64>, out: &Path, quiet: bool) -> Result<String, CliError> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(out)?;
    let echo = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Io(e.into()))? + "\n";
    std::fs::write(out.join("config.json"), &echo)?;
    if !quiet {
        print!("{echo}");
    }
    run(&cfg, out)
}

fn report(r: &Result<String, CliError>, quiet: bool) {
    match r {
        Ok(line) if !quiet => println!("{line}"),
        Ok(_) => {}
        Err(e) => eprintln!("error: {e}"),
    }
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run, c): (Runner, Common) = match cli.command {
        Command::Simulate(c) => (commands::simulate, c),
        Command::Optimize(c) => (commands::optimize, c),
        Command::Gradcheck(c) => (commands::gradcheck, c),
        Command::Spectrum(c) => (commands::spectrum, c),
        Command::Presets => {
            for p in config::PRESETS {
                println!("{p}");
            }
            return ExitCode::SUCCESS;
        }
    };

    if let Some(path) = &c.config {
        let r = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            .and_then(|text| config::parse(&text))
            .and_then(|cfg| run_one(run, cfg, c.seed, &c.out, c.quiet));
        report(&r, c.quiet);
        return exit(r.err().map_or(0, |e| e.exit_code()));
    }

    let jobs: Vec<(String, Result<RunConfig, CliError>)> =
        c.preset.iter().map(|name| (name.clone(), config::preset(name))).collect();
    if jobs.is_empty() {
        eprintln!("error: invalid config: pass --config PATH or --preset NAME");
        return exit(2);
    }
    let sweep = jobs.len() > 1;
    let dir = |name: &str| if sweep { c.out.join(name) } else { c.out.clone() };
    let execute = |(name, cfg): &(String, Result<RunConfig, CliError>)| -> Result<String, CliError> {
        match cfg {
            Ok(cfg) => run_one(run, cfg.clone(), c.seed, &dir(name), c.quiet || sweep),
            Err(CliError::Config(m)) => Err(CliError::Config(m.clone())),
            Err(e) => Err(CliError::Config(e.to_string())),
        }
    };

    let results: Vec<Result<String, CliError>> = if c.jobs > 1 && sweep {
        let chunk = jobs.len().div_ceil(c.jobs);
        std::thread::scope(|s| {
            let handles: Vec<_> =
                jobs.chunks(chunk).map(|part| s.spawn(|| part.iter().map(execute).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
        })
    } else {
        jobs.iter().map(execute).collect()
    };

    let mut code = 0;
    for ((name, _), r) in jobs.iter().zip(&results) {
        if sweep && !c.quiet {
            if let Ok(line) = r {
                println!("[{name}] {line}");
            }
        }
        if sweep {
            if let Err(e) = r {
                eprintln!("[{name}] error: {e}");
            }
        } else {
            report(r, c.quiet);
        }
        code = code.max(r.as_ref().err().map_or(0, |e| e.exit_code()));
    }
    exit(code)
}
