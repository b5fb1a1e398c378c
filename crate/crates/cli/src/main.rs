mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rydsps::{Distribution, Execution, RunConfig};

use crate::manifest::{sha256_file, RunManifest, MANIFEST_NAME};

/// Environment variable overriding the N³ × time-node budget of the
/// double-excitation angular density.
pub const P2_BUDGET_VAR: &str = "RYDSPS_P2_BUDGET";
pub const DEFAULT_P2_BUDGET: f64 = 1e11;

#[derive(Parser, Debug, Clone)]
#[command(name = "rydsps", version, about = "Rydberg-blockade single-photon source simulator")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML file with [physical] and [pulses] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master seed; stage seeds are derived from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DistArg {
    Boltzmann,
    Liad,
}

impl From<DistArg> for Distribution {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Boltzmann => Distribution::Boltzmann,
            DistArg::Liad => Distribution::Liad,
        }
    }
}

/// Positive count; accepts scientific notation such as `1e6`.
pub fn parse_count(s: &str) -> Result<usize, String> {
    let n = match s.parse::<usize>() {
        Ok(n) => n,
        Err(_) => {
            let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
            if !x.is_finite() || x < 0.0 || x.fract() != 0.0 || x > usize::MAX as f64 {
                return Err(format!("`{s}` is not a whole number"));
            }
            x as usize
        }
    };
    if n == 0 {
        return Err(String::from("must be at least 1"));
    }
    Ok(n)
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Sample atom ensembles and their wall survival.
    Sample(commands::SampleArgs),
    /// Excite atom ensembles with the configured pulses.
    Excite(commands::ExciteArgs),
    /// Decay excited ensembles written by `excite`.
    Decay(commands::DecayArgs),
    /// Emitted and cone populations of an angular profile table.
    Analyze(commands::AnalyzeArgs),
    /// Optimize the pulses for mean W-state fidelity.
    Optimize(commands::OptimizeArgs),
    /// Sample, excite, group and decay in one run.
    Pipeline(commands::PipelineArgs),
    /// Forward-cone emission of ideal W states against t_W.
    TwScan(commands::TwScanArgs),
    /// Peak emission rate of grouped ideal W states against atom number.
    Scaling(commands::ScalingArgs),
    /// Rerun a manifest into --out and compare checksums.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sample(_) => "sample",
            Command::Excite(_) => "excite",
            Command::Decay(_) => "decay",
            Command::Analyze(_) => "analyze",
            Command::Optimize(_) => "optimize",
            Command::Pipeline(_) => "pipeline",
            Command::TwScan(_) => "tw-scan",
            Command::Scaling(_) => "scaling",
            Command::Replay(_) => "replay",
        }
    }
}

fn execution(threads: Option<usize>) -> Execution {
    match threads {
        Some(1) => Execution::Sequential,
        Some(n) => {
            rydsps::par::init_threads(n);
            Execution::Parallel
        }
        None => Execution::default(),
    }
}

fn p2_budget() -> Result<f64> {
    match std::env::var(P2_BUDGET_VAR) {
        Ok(v) => {
            let b: f64 = v.trim().parse().with_context(|| format!("{P2_BUDGET_VAR}={v} is not a number"))?;
            if !(b > 0.0) {
                bail!("{P2_BUDGET_VAR} must be positive");
            }
            Ok(b)
        }
        Err(_) => Ok(DEFAULT_P2_BUDGET),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn replay(common: &Common, args: &ReplayArgs) -> Result<bool> {
    let old = RunManifest::load(&args.manifest)?;
    let argv = std::iter::once(String::from("rydsps")).chain(old.args.iter().cloned());
    let mut cli = Cli::try_parse_from(argv).context("manifest arguments do not parse")?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("a replay manifest cannot be replayed");
    }
    cli.common.out = common.out.clone();
    cli.common.threads = common.threads.or(cli.common.threads);
    let exec = execution(cli.common.threads);
    let new = commands::run(&cli, old.args.clone(), old.config.clone(), exec, old.p2_budget)?;
    let mut same = true;
    for rec in &old.outputs {
        let path = common.out.join(&rec.path);
        let status = match sha256_file(&path) {
            Ok((h, _)) if h == rec.sha256 => "identical",
            Ok(_) => {
                same = false;
                "DIFFERS"
            }
            Err(_) => {
                same = false;
                "MISSING"
            }
        };
        println!("{status:9} {}", rec.path);
    }
    if new.outputs.len() != old.outputs.len() {
        println!("output count {} vs {} in the manifest", new.outputs.len(), old.outputs.len());
        same = false;
    }
    Ok(same)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Replay(args) => replay(&cli.common, args).inspect(|&same| {
            if same {
                println!("replay reproduced every output of {}", args.manifest.display());
            } else {
                eprintln!("replay differs from {}", args.manifest.display());
            }
        }),
        cmd => (|| {
            let config = load_config(&cli.common)?;
            let budget = p2_budget()?;
            let exec = execution(cli.common.threads);
            let args: Vec<String> = std::env::args().skip(1).collect();
            let m = commands::run(&cli, args, config, exec, budget)?;
            println!("{}: {} outputs, manifest {}", cmd.name(), m.outputs.len(), cli.common.out.join(MANIFEST_NAME).display());
            Ok(true)
        })(),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("100"), Ok(100));
        assert_eq!(parse_count("1e6"), Ok(1_000_000));
        assert!(parse_count("0").is_err());
        assert!(parse_count("0e3").is_err());
        assert!(parse_count("2.5").is_err());
        assert!(parse_count("-3").is_err());
        assert!(parse_count("ten").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
