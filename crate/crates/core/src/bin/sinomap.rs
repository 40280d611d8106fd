use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sinomap::config::ExperimentConfig;
use sinomap::pipeline::{self, Ctx, EnhanceRequest};

/// Exit status when the report had to emit "n/a" cells.
const EXIT_INCOMPLETE_REPORT: u8 = 4;

#[derive(Parser)]
#[command(name = "sinomap", version, about = "Low-dose CT sinogram enhancement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantoms and high- and low-dose sinograms.
    Simulate(Common),
    /// Train every configured method at every dose level.
    Train(Common),
    /// Run trained networks over the test sinograms.
    Enhance(EnhanceArgs),
    /// Score enhanced sinograms and their reconstructions.
    Evaluate(Common),
    /// Aggregate metrics into a markdown table.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides experiment.out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides experiment.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress messages.
    #[arg(long)]
    quiet: bool,
    /// Write a text preview next to each sinogram written.
    #[arg(long)]
    dump: bool,
}

#[derive(Args)]
struct EnhanceArgs {
    #[command(flatten)]
    common: Common,
    /// Network checkpoint to use instead of the trained models.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// A .sino file or directory to enhance; requires --checkpoint.
    #[arg(long, requires = "checkpoint")]
    input: Option<PathBuf>,
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("SINOMAP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("SINOMAP_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn load(common: &Common) -> sinomap::Result<(ExperimentConfig, Ctx)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    let ctx = Ctx {
        quiet: common.quiet,
        dump: common.dump,
    };
    Ok((cfg, ctx))
}

fn run(command: Command) -> sinomap::Result<u8> {
    match command {
        Command::Simulate(c) => {
            let (cfg, ctx) = load(&c)?;
            pipeline::cmd_simulate(&cfg, ctx)?;
        }
        Command::Train(c) => {
            let (cfg, ctx) = load(&c)?;
            pipeline::cmd_train(&cfg, ctx)?;
        }
        Command::Enhance(a) => {
            let (cfg, ctx) = load(&a.common)?;
            let req = EnhanceRequest {
                checkpoint: a.checkpoint,
                input: a.input,
                out: None,
            };
            pipeline::cmd_enhance(&cfg, &req, ctx)?;
        }
        Command::Evaluate(c) => {
            let (cfg, ctx) = load(&c)?;
            pipeline::cmd_evaluate(&cfg, ctx)?;
        }
        Command::Report(c) => {
            let (cfg, ctx) = load(&c)?;
            let outcome = pipeline::cmd_report(&cfg, ctx)?;
            if !c.quiet {
                print!("{}", outcome.markdown);
            }
            if !outcome.missing.is_empty() {
                return Ok(EXIT_INCOMPLETE_REPORT);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
