use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svo_harness::commands::{self, CommandOutput};
use svo_harness::run::default_threads;
use svo_harness::{reference_config, HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "svo", version, about = "Multi-agent driving with social value orientation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Root seed; also replaces the training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides SVO_OUT_DIR and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for episode rollouts.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes and write their logs and metrics.
    Simulate(Common),
    /// Roll out the recognition dataset.
    GenData(Common),
    /// Train the recognition network.
    TrainRecog(Common),
    /// Train the decision policy with SAC.
    TrainSac(Common),
    /// Evaluate a policy and write metrics.
    Evaluate(Common),
    /// Evaluate over a grid of fixed all-agent SVOs.
    SweepSvo(Common),
    /// Train and compare the recognition variants.
    Ablate(Common),
    /// Print the reference configuration.
    ReferenceConfig,
}

fn fail(kind: &str, msg: impl std::fmt::Display, code: u8) -> ExitCode {
    let msg = msg.to_string().replace('\n', " ");
    eprintln!("error: {kind}: {}", msg.trim());
    ExitCode::from(code)
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf, usize), HarnessError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = cfg.resolve_output_dir(common.out.as_deref());
    let threads = common.threads.unwrap_or_else(default_threads);
    Ok((cfg, out, threads))
}

fn execute(command: &Command) -> Result<CommandOutput, HarnessError> {
    let common = match command {
        Command::Simulate(c)
        | Command::GenData(c)
        | Command::TrainRecog(c)
        | Command::TrainSac(c)
        | Command::Evaluate(c)
        | Command::SweepSvo(c)
        | Command::Ablate(c) => c,
        Command::ReferenceConfig => unreachable!("handled in main"),
    };
    let (cfg, out, threads) = load(common)?;
    let out = out.as_path();
    std::fs::create_dir_all(out).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let result = match command {
        Command::Simulate(_) => commands::simulate(&cfg, out, threads),
        Command::GenData(_) => commands::gen_data(&cfg, out),
        Command::TrainRecog(_) => commands::train_recog(&cfg, out),
        Command::TrainSac(_) => commands::train_sac(&cfg, out),
        Command::Evaluate(_) => commands::evaluate(&cfg, out, threads),
        Command::SweepSvo(_) => commands::sweep_svo(&cfg, out, threads),
        Command::Ablate(_) => commands::ablate(&cfg, out),
        Command::ReferenceConfig => unreachable!(),
    }?;
    write_used_config(&cfg, out)?;
    Ok(result)
}

fn write_used_config(cfg: &RunConfig, out: &Path) -> Result<(), HarnessError> {
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|source| HarnessError::Io { path, source })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("invalid arguments");
            return fail("usage", line.trim_start_matches("error: "), 2);
        }
    };
    if let Command::ReferenceConfig = cli.command {
        print!("{}", reference_config());
        return ExitCode::SUCCESS;
    }
    match execute(&cli.command) {
        Ok(out) => {
            println!("{}", out.summary);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = if e.kind() == "config" { 2 } else { 1 };
            fail(e.kind(), e, code)
        }
    }
}
