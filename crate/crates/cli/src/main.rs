//! `ytower`: inducing schemes, return maps and tower statistics for
//! interval maps, driven by a key=value config file.
//!
//! Exit status: 0 on success, 2 when the map violates a hypothesis of the
//! construction, 64 on a bad config or command line, 1 otherwise.

mod config;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{ConfigError, RunConfig, Stage};
use pipeline::{Failure, Run};

#[derive(Parser)]
#[command(
    name = "ytower",
    version,
    about = "Inducing schemes and Young towers for interval maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Critical-orbit sequences and the summability verdicts
    Analyze(Common),
    /// Large-scale partitions and the tail of p_hat
    Induce(Common),
    /// Full-return Markov map, tail of R, distortion checks
    Returnmap(Common),
    /// Tower bookkeeping over the return map
    Tower(Common),
    /// Invariant density and correlation decay
    Corr(Common),
    /// Central limit test
    Clt(Common),
    /// Locate the Fibonacci parameter of the configured family
    Fibfind(Common),
    /// Summary from the artifacts already in the output directory
    Report(Common),
    /// Every stage enabled in the config, then the report
    All(Common),
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Worker thread cap
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; beats OUTPUT_DIR and the config
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Analyze(c)
            | Command::Induce(c)
            | Command::Returnmap(c)
            | Command::Tower(c)
            | Command::Corr(c)
            | Command::Clt(c)
            | Command::Fibfind(c)
            | Command::Report(c)
            | Command::All(c) => c,
        }
    }

    /// The requested stage with its prerequisites, in run order.
    fn stages(&self, cfg: &RunConfig) -> Vec<Stage> {
        let target = match self {
            Command::Analyze(_) => Stage::Analyze,
            Command::Induce(_) => Stage::Induce,
            Command::Returnmap(_) => Stage::ReturnMap,
            Command::Tower(_) => Stage::Tower,
            Command::Corr(_) => Stage::Corr,
            Command::Clt(_) => Stage::Clt,
            Command::All(_) => return cfg.stages.clone(),
            Command::Fibfind(_) | Command::Report(_) => return Vec::new(),
        };
        let mut out = vec![target];
        let mut i = 0;
        while i < out.len() {
            for d in out[i].requires() {
                if !out.contains(d) {
                    out.push(*d);
                }
            }
            i += 1;
        }
        out.sort();
        out
    }
}

fn execute(cmd: &Command) -> Result<(), Failure> {
    let start = Instant::now();
    let common = cmd.common();
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = match (&common.out, std::env::var_os("OUTPUT_DIR")) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => cfg.output_dir.clone(),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(ConfigError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    std::fs::create_dir_all(&out).map_err(|e| Failure::Internal(e.to_string()))?;

    match cmd {
        Command::Fibfind(_) => {
            let a = pipeline::fibfind(&cfg, &out)?;
            println!("fibonacci parameter  {a:.17}");
            return Ok(());
        }
        Command::Report(_) => {
            print!("{}", report::emit(&out, None)?);
            return Ok(());
        }
        _ => {}
    }

    let stages = cmd.stages(&cfg);
    let report_runtime = cfg.report_runtime;
    let mut run = Run::new(cfg, out.clone())?;
    for st in stages {
        eprintln!("ytower: stage {}", st.id());
        run.run_stage(st)?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let table = report::emit(&out, report_runtime.then_some(elapsed))?;
    if matches!(cmd, Command::All(_)) {
        print!("{table}");
    }
    eprintln!(
        "ytower: done in {elapsed:.1} s, artifacts in {}",
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 64 } else { 0 });
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ytower: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
