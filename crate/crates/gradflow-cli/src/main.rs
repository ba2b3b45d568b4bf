mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use gradflow::checks::{self, Resolution};
use experiments::{CheckRecord, Outcome, RunContext};

#[derive(Parser, Debug)]
#[command(name = "gradflow", version, about = "Run gradient-flow experiments and their checks")]
struct Cli {
    #[command(subcommand)]
    experiment: Experiment,
    /// JSON config; missing fields take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory (default: out/<experiment>)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// coarser resolution for a fast smoke run
    #[arg(long, global = true)]
    quick: bool,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// skip the built-in acceptance criteria tied to the experiment
    #[arg(long, global = true)]
    no_criteria: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Experiment {
    /// Cosh identities and Legendre duality
    Identities,
    /// Quadratic versus entropic two-state structures
    TwoState,
    /// Reversible chains: energy balance and particle simulations
    Markov,
    /// Three-state family and its EDP sweep
    ThreeState,
    /// Thin layer versus transmission condition
    Membrane,
    /// Diffusion through a double well versus the reaction limit
    Reaction,
    /// Closed forms of the cell problems versus brute force
    Oracle,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Self::Identities => "identities",
            Self::TwoState => "two-state",
            Self::Markov => "markov",
            Self::ThreeState => "three-state",
            Self::Membrane => "membrane",
            Self::Reaction => "reaction",
            Self::Oracle => "oracle",
        }
    }

    /// Acceptance criteria (1-based ids of `checks::run`) covered by the experiment.
    fn criteria(self) -> &'static [u8] {
        match self {
            Self::Identities => &[1, 2],
            Self::TwoState => &[3, 4],
            Self::Markov => &[4, 5, 12, 13],
            Self::ThreeState => &[6, 7, 8],
            Self::Membrane => &[10],
            Self::Reaction => &[11],
            Self::Oracle => &[9],
        }
    }

    fn run(self, ctx: &RunContext) -> Result<Outcome> {
        match self {
            Self::Identities => experiments::identities(ctx),
            Self::TwoState => experiments::two_state(ctx),
            Self::Markov => experiments::markov(ctx),
            Self::ThreeState => experiments::three_state(ctx),
            Self::Membrane => experiments::membrane(ctx),
            Self::Reaction => experiments::reaction(ctx),
            Self::Oracle => experiments::oracle(ctx),
        }
    }
}

#[derive(Serialize)]
struct Criterion {
    id: u8,
    name: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'static str,
    seed: u64,
    quick: bool,
    config: &'a serde_json::Value,
    passed: bool,
    checks: &'a [CheckRecord],
    criteria: Vec<Criterion>,
    files: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("{}: failed: {}", cli.experiment.name(), failures.join(", "));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns the names of failed checks.
fn run(cli: &Cli) -> Result<Vec<String>> {
    if let Some(jobs) = cli.jobs {
        anyhow::ensure!(jobs > 0, "--jobs must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring the thread pool")?;
    }
    let exp = cli.experiment;
    let ctx = RunContext { config: cli.config.as_deref(), quick: cli.quick, seed: cli.seed };
    let outcome = exp.run(&ctx)?;

    let res = if cli.quick { Resolution::Quick } else { Resolution::Full };
    let criteria: Vec<Criterion> = if cli.no_criteria {
        Vec::new()
    } else {
        exp.criteria()
            .iter()
            .map(|&id| {
                let o = checks::run(id, res);
                Criterion { id: o.id, name: o.name, passed: o.passed, detail: o.detail, seconds: o.seconds }
            })
            .collect()
    };

    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out").join(exp.name()));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::new();
    for table in &outcome.tables {
        files.extend(table.save(&out)?);
    }
    for (name, bytes) in &outcome.files {
        std::fs::write(out.join(name), bytes).with_context(|| format!("writing {name}"))?;
        files.push(name.clone());
    }

    let mut failures = Vec::new();
    for c in &outcome.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failures.push(c.name.clone());
        }
    }
    for c in &criteria {
        println!("{} [{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.name, c.detail);
        if !c.passed {
            failures.push(format!("[{}] {}", c.id, c.name));
        }
    }

    files.push("summary.json".into());
    let summary = Summary {
        experiment: exp.name(),
        seed: cli.seed,
        quick: cli.quick,
        config: &outcome.config,
        passed: failures.is_empty(),
        checks: &outcome.checks,
        criteria,
        files,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out.join("summary.json"), json + "\n").context("writing summary.json")?;
    println!("wrote {}", out.display());
    Ok(failures)
}
