//! Thin command-line front end over the library.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use incofl::{
    linear_cka, normalize_pair, probe_constants, project_theorem1, run_experiment,
    ExperimentConfig, ProjectionBranch, Result, RunOptions, Tensor,
};

#[derive(Parser)]
#[command(
    name = "incofl",
    version,
    about = "Federated simulation of depth-heterogeneous clients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the metrics CSV and summary JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for local training.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Apply the conflict correction to one pair of updates, given as
    /// comma-separated numbers.
    Project {
        #[arg(long)]
        g0: String,
        #[arg(long)]
        gk: String,
        /// Rescale both updates to unit norm first.
        #[arg(long)]
        normalize: bool,
        /// Keep the aligned update unmodified instead of always
        /// subtracting the projection.
        #[arg(long)]
        strict_branch: bool,
    },
    /// Linear similarity between two feature matrices read from CSV files.
    Cka {
        #[arg(long)]
        features_a: PathBuf,
        #[arg(long)]
        features_b: PathBuf,
    },
    /// Probe smoothness and gradient statistics for a config, printed as
    /// one JSON record.
    EstimateConstants {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => cmd_run(&config, seed, out, threads),
        Command::Project {
            g0,
            gk,
            normalize,
            strict_branch,
        } => cmd_project(&g0, &gk, normalize, strict_branch),
        Command::Cka {
            features_a,
            features_b,
        } => cmd_cka(&features_a, &features_b),
        Command::EstimateConstants { config } => cmd_estimate(&config),
    }
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let seeds = match seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let opts = RunOptions {
        out_dir: out,
        threads,
    };
    for s in seeds {
        let summary = run_experiment(&cfg, s, &opts)?;
        let last = &summary.final_round;
        println!(
            "seed {s}: round {} mean_acc {:.4} min {:.4} max {:.4} ({:.1}s)",
            last.round, last.mean_acc, last.min_acc, last.max_acc, summary.wall_clock_secs
        );
        if let Some(path) = &summary.artifacts.metrics_csv {
            println!("  metrics: {}", path.display());
        }
        if let Some(path) = &summary.artifacts.summary_json {
            println!("  summary: {}", path.display());
        }
    }
    Ok(())
}

fn cmd_project(g0: &str, gk: &str, normalize: bool, strict_branch: bool) -> Result<()> {
    let g0 = Tensor::vector(parse_numbers(g0)?)?;
    let gk = Tensor::vector(parse_numbers(gk)?)?;
    let (g0, gk) = if normalize {
        let (a, b, _) = normalize_pair(&g0, &gk, 1e-12);
        (a, b)
    } else {
        (g0, gk)
    };
    let outcome = project_theorem1(&g0, &gk)?;
    let g_opt = if strict_branch {
        outcome.g_opt.clone()
    } else {
        gk.add_scaled(-outcome.theta, &g0)?
    };
    println!("alpha = {}", outcome.alpha);
    println!("beta = {}", outcome.beta);
    println!("theta = {}", outcome.theta);
    println!(
        "branch = {}",
        match outcome.branch {
            ProjectionBranch::Identity => "identity",
            ProjectionBranch::Corrected => "corrected",
        }
    );
    let rendered: Vec<String> = g_opt.values().iter().map(f64::to_string).collect();
    println!("g_opt = {}", rendered.join(", "));
    Ok(())
}

fn cmd_cka(features_a: &Path, features_b: &Path) -> Result<()> {
    let a = read_matrix(features_a)?;
    let b = read_matrix(features_b)?;
    println!("cka = {}", linear_cka(&a, &b)?);
    Ok(())
}

fn cmd_estimate(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let report = probe_constants(&cfg, cfg.seeds[0])?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|token| !token.is_empty())
        .map(|token| {
            token.parse::<f64>().map_err(|_| {
                incofl::Error::InvalidConfig(format!("could not parse '{token}' as a number"))
            })
        })
        .collect()
}

fn read_matrix(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_numbers(line).map_err(|_| {
            incofl::Error::InvalidConfig(format!(
                "{}:{}: expected comma-separated numbers",
                path.display(),
                number + 1
            ))
        })?;
        rows.push(row);
    }
    Tensor::from_rows(rows)
}
