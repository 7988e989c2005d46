//! `social-learning` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use super::{figures, load_config, preset, preset_source, run_experiment, HarnessError, Overrides, PRESET_NAMES};

#[derive(Debug, Parser)]
#[command(
    name = "social-learning",
    version,
    about = "Simulate non-Bayesian social learning with uncertain likelihood models",
    after_help = "Presets: paper_low, paper_high, paper_certain, figure1, figure2"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a bundled preset.
    Preset {
        #[arg(value_parser = PRESET_NAMES)]
        name: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Print error tables and checks from an output directory.
    Analyze { dir: PathBuf },
    /// Rebuild fig5_beliefs.csv from the belief CSVs in an output directory.
    Figures { dir: PathBuf },
}

#[derive(Debug, Args)]
struct RunOpts {
    /// Output directory [default: out/<name>]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rounds per run; checkpoints past it are dropped.
    #[arg(long)]
    horizon: Option<u64>,
    /// Monte Carlo runs.
    #[arg(long)]
    runs: Option<u64>,
    #[arg(long)]
    agents: Option<usize>,
    /// Worker threads [default: available parallelism]
    #[arg(long)]
    threads: Option<usize>,
}

impl RunOpts {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            horizon: self.horizon,
            runs: self.runs,
            agents: self.agents,
            output: self.out.clone(),
        }
    }
}

/// Parses `args` (including the program name), runs, and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli.command) {
        Ok(message) => {
            print!("{message}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<String, HarnessError> {
    match command {
        Command::Run { config, opts } => {
            let source = std::fs::read_to_string(&config)
                .map_err(|e| HarnessError::Invalid(format!("{}: {e}", config.display())))?;
            let mut cfg = load_config(&config)?;
            run_loaded(&mut cfg, &source, &opts)
        }
        Command::Preset { name, opts } => {
            let mut cfg = preset(&name)?;
            let source = preset_source(&name).expect("name checked by the parser");
            run_loaded(&mut cfg, source, &opts)
        }
        Command::Analyze { dir } => analyze(&dir),
        Command::Figures { dir } => {
            let csv = figures::regenerate_fig5(&dir)?;
            let path = dir.join("fig5_beliefs.csv");
            std::fs::write(&path, csv).map_err(HarnessError::io(&path))?;
            Ok(format!("wrote {}\n", path.display()))
        }
    }
}

fn run_loaded(cfg: &mut super::ExperimentConfig, source: &str, opts: &RunOpts) -> Result<String, HarnessError> {
    if opts.threads == Some(0) {
        return Err(HarnessError::Invalid("--threads must be at least 1".into()));
    }
    cfg.apply(&opts.overrides())?;
    let artifacts = run_experiment(cfg, source, opts.threads)?;
    Ok(format!("wrote {}\n", artifacts.dir.display()))
}

fn cell(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Number(n) => format!("{:>12.4e}", n.as_f64().unwrap_or(f64::NAN)),
        serde_json::Value::String(s) => format!("{s:>12}"),
        _ => format!("{:>12}", "-"),
    }
}

/// Renders the tables stored in `summary.json`.
pub fn analyze(dir: &Path) -> Result<String, HarnessError> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
    let s: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| HarnessError::Invalid(format!("{}: {e}", path.display())))?;
    let mut out = String::new();
    let _ = writeln!(out, "{} (seed {})", s["name"].as_str().unwrap_or("?"), s["seed"]);
    if let Some(sim) = s.get("simulation") {
        let _ = writeln!(
            out,
            "{} agents, {} hypotheses, regime {}, T = {}, {} runs",
            sim["agents"], sim["hypotheses"], sim["regime"].as_str().unwrap_or("?"), sim["horizon"], sim["runs"]
        );
        let checkpoints: Vec<String> = sim["checkpoints"]
            .as_array()
            .map(|a| a.iter().map(|c| format!("{:>12}", format!("t={c}"))).collect())
            .unwrap_or_default();
        for rule in sim["rules"].as_array().into_iter().flatten() {
            let _ = writeln!(out, "\n[{}]", rule["rule"].as_str().unwrap_or("?"));
            let stats = &rule["error_stats"];
            for key in ["e_lambda", "e_con", "e_cen"] {
                let _ = writeln!(out, "{key:<10}{}", checkpoints.join(""));
                for (theta, row) in stats[key].as_array().into_iter().flatten().enumerate() {
                    let cells: String = row.as_array().into_iter().flatten().map(|c| cell(&c["value"])).collect();
                    let _ = writeln!(out, "  θ{theta:<6}{cells}");
                }
            }
            let _ = writeln!(out, "slope");
            for (theta, fit) in rule["rates"].as_array().into_iter().flatten().enumerate() {
                let _ = writeln!(out, "  θ{theta:<6}{}", cell(&fit["slope"]));
            }
        }
        let _ = writeln!(out, "\nchecks");
        for c in sim["checks"].as_array().into_iter().flatten() {
            let verdict = if c["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
            let rule = c["rule"].as_str().map(|r| format!(" [{r}]")).unwrap_or_default();
            let _ = writeln!(
                out,
                "  {verdict} {}{rule}: {}",
                c["name"].as_str().unwrap_or("?"),
                c["detail"].as_str().unwrap_or("")
            );
        }
    }
    if let Some(curves) = s.get("figure1") {
        let _ = writeln!(out, "\nfigure1: rival preferred");
        for c in curves.as_array().into_iter().flatten() {
            let _ = writeln!(
                out,
                "  truth evidence {:>6}: {} totals, range {}",
                c["truth_evidence"], c["rival_preferred_count"], c["rival_preferred"]
            );
        }
    }
    if let Some(f) = s.get("figure2") {
        let _ = writeln!(
            out,
            "\nfigure2: {} points per curve; matched increasing {}; mismatched negative at max {}",
            f["points"], f["matched_increasing"], f["mismatched_negative_at_max"]
        );
    }
    Ok(out)
}
