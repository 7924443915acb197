use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sednoise_cli::{cmd_features, cmd_inject, cmd_report, cmd_run, cmd_synth, CliError, ExperimentConfig, Options};

/// Sound event classification under label noise: features, synthetic data,
/// noise injection and multi-seed loss comparisons.
///
/// Exit codes: 0 success, 1 config error, 2 data error, 3 numeric abort.
#[derive(Parser)]
#[command(name = "sednoise", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract and cache log-mel features for every clip of the manifest.
    Features(Common),
    /// Write the configured synthetic dataset as WAV files and a manifest.
    SynthData(Common),
    /// Corrupt noisy-origin labels and audio; write provenance and a noise report.
    InjectNoise(Common),
    /// Train and evaluate every (subset, loss) cell of the config's grid.
    Run(Common),
    /// Rebuild report.txt and plots from the CSV and JSON results of a run.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Recompute cached features even when they are up to date.
    #[arg(long)]
    force: bool,
    /// Worker threads (default: one per core). Results do not depend on it.
    #[arg(long, value_name = "N")]
    jobs: Option<NonZeroUsize>,
    /// Override the seed this command uses: the synthetic dataset seed for
    /// synth-data, the noise seed for inject-noise, the base run seed otherwise.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the config's output_dir.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment config whose output_dir holds the results.
    #[arg(long, value_name = "PATH", required_unless_present = "output")]
    config: Option<PathBuf>,
    /// Results directory; overrides the config's output_dir.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy)]
enum Kind {
    Features,
    Synth,
    Inject,
    Run,
}

fn load(args: &Common, kind: Kind) -> Result<(ExperimentConfig, Options), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(dir) = &args.output {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        match kind {
            Kind::Synth => {
                if let Some(s) = cfg.dataset.synthetic.as_mut() {
                    s.seed = seed;
                }
            }
            Kind::Inject => {
                if let Some(n) = cfg.noise.as_mut() {
                    n.seed = seed;
                }
            }
            Kind::Features | Kind::Run => cfg.train.seed = seed,
        }
        cfg.validate()?;
    }
    let opts = Options {
        force: args.force,
        jobs: args.jobs.map(NonZeroUsize::get),
        verbose: true,
    };
    Ok((cfg, opts))
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Features(a) => {
            let (cfg, opts) = load(&a, Kind::Features)?;
            let s = cmd_features(&cfg, &opts)?;
            println!("features: {} computed, {} up to date, {} failed", s.computed, s.skipped, s.failed.len());
            if !s.failed.is_empty() {
                let list: Vec<String> = s.failed.iter().map(|(p, e)| format!("  {}: {e}", p.display())).collect();
                return Err(CliError::Data(format!("{} clip(s) failed:\n{}", s.failed.len(), list.join("\n"))));
            }
        }
        Command::SynthData(a) => {
            let (cfg, opts) = load(&a, Kind::Synth)?;
            let s = cmd_synth(&cfg, &opts)?;
            println!("wrote {} clips and {} distractors; manifest at {}", s.clips, s.distractors, s.manifest.display());
        }
        Command::InjectNoise(a) => {
            let (cfg, opts) = load(&a, Kind::Inject)?;
            let s = cmd_inject(&cfg, &opts)?;
            println!("corrupted manifest at {}", s.manifest.display());
            match s.report {
                Some(r) => print!("{r}"),
                None => println!("no noisy-origin records; nothing was corrupted"),
            }
        }
        Command::Run(a) => {
            let (cfg, opts) = load(&a, Kind::Run)?;
            let s = cmd_run(&cfg, &opts)?;
            print!("{}", s.table);
            println!("report at {}", s.report_csv.display());
        }
        Command::Report(a) => {
            let dir = match (a.output, a.config) {
                (Some(dir), _) => dir,
                (None, Some(path)) => ExperimentConfig::load(path)?.output_dir,
                (None, None) => unreachable!("clap requires one of --config and --output"),
            };
            print!("{}", cmd_report(&dir)?.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
