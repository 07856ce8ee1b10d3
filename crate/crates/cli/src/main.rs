use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cocycle_lab::error::Error;
use cocycle_lab::scenario::{self, Outcome, RunOptions};

#[derive(Parser)]
#[command(name = "cocycle-lab", version, about = "Matrix cocycles, holonomies and conjugacies over hyperbolic systems")]
struct Cli {
    /// Worker threads for the rayon pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the seed declared in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for the report, CSV side files and timings.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config file, or a gallery entry by name.
    Run { scenario: String },
    /// List the built-in scenarios.
    Gallery {
        /// Print the config text of one entry instead of the list.
        #[arg(long)]
        show: Option<String>,
    },
    /// Summarize a report written by `run`.
    Report {
        path: PathBuf,
        #[arg(long)]
        pretty: bool,
    },
}

fn run(cli: &Cli, target: &str) -> Result<ExitCode, Error> {
    let opts = RunOptions { seed: cli.seed };
    let path = PathBuf::from(target);
    let outcome: Outcome = if path.exists() {
        scenario::run_scenario(&path, &opts)?
    } else {
        scenario::run_gallery(target, &opts)?
    };
    let written = outcome.write(&cli.out_dir)?;
    let r = &outcome.report;
    for c in &r.checks {
        println!("{} {}", if c.passed { "ok  " } else { "FAIL" }, c.name);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    println!("{} in {:.2}s (budget {}s)", r.scenario.name, outcome.elapsed_seconds, r.scenario.budget_seconds);
    if r.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("check failed: {} of {} checks did not pass", r.failed_checks().len(), r.checks.len());
        Ok(ExitCode::from(2))
    }
}

fn report(path: &PathBuf, pretty: bool) -> Result<ExitCode, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    if v["schema"] != scenario::SCHEMA {
        return Err(Error::Parse(format!("unexpected schema {}", v["schema"])));
    }
    if pretty {
        println!("scenario {} ({})", v["scenario"]["name"].as_str().unwrap_or("?"), v["scenario"]["kind"].as_str().unwrap_or("?"));
        for c in v["checks"].as_array().into_iter().flatten() {
            let mark = if c["passed"].as_bool() == Some(true) { "ok  " } else { "FAIL" };
            let value = match (&c["value"], &c["threshold"]) {
                (serde_json::Value::Number(x), serde_json::Value::Number(t)) => format!(" {x} {} {t}", c["relation"].as_str().unwrap_or("")),
                _ => c["detail"].as_str().map(|d| format!(" ({d})")).unwrap_or_default(),
            };
            println!("{mark} {}{value}", c["name"].as_str().unwrap_or("?"));
        }
        println!("passed: {}", v["passed"]);
    } else {
        println!("{}", serde_json::to_string(&v).unwrap());
    }
    Ok(if v["passed"].as_bool() == Some(true) { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Run { scenario } => run(&cli, scenario),
        Command::Gallery { show: Some(name) } => scenario::gallery_config(name).map(|c| {
            print!("{c}");
            ExitCode::SUCCESS
        }),
        Command::Gallery { show: None } => {
            for g in scenario::gallery() {
                println!("{:<24} {}", g.name, g.description);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { path, pretty } => report(path, *pretty),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}
