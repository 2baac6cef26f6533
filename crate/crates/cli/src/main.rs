//! `harsiam`: prepare data, train the segmentation and recognition networks,
//! segment, embed, cluster and evaluate. All steps share one run directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use harsiam::config::RunConfig;
use harsiam::run;
use log::info;

#[derive(Parser)]
#[command(name = "harsiam", version, about = "Weakly supervised activity segmentation and recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate streams, split, normalize and cache them.
    Prepare(Common),
    /// Train the boundary scorer.
    TrainSeg(Common),
    /// Train the similarity metric on same/different pairs.
    TrainRec(Common),
    /// Detect boundary regions in the evaluated split.
    Segment(Common),
    /// Embed every detected segment.
    Embed(Common),
    /// Cluster the embeddings.
    Cluster(Common),
    /// Score segments and clusters and write the report.
    Evaluate(Common),
    /// Every step above, in order.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file. Without it, `<out>/config.json` is reused when
    /// present, otherwise defaults apply.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Wall-clock budget per training step, in seconds.
    #[arg(long)]
    time_limit: Option<u64>,
}

impl Common {
    fn resolve(&self) -> harsiam::Result<RunConfig> {
        let mut cfg = match (&self.config, &self.out) {
            (Some(path), _) => RunConfig::from_file(path)?,
            (None, Some(dir)) if dir.join(run::CONFIG).exists() => RunConfig::from_file(&dir.join(run::CONFIG))?,
            _ => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out {
            cfg.out_dir = dir.clone();
        }
        if let Some(t) = self.time_limit {
            cfg.time_limit_secs = Some(t);
        }
        Ok(cfg)
    }
}

fn execute(cmd: &Command) -> harsiam::Result<()> {
    use Command::*;
    let common = match cmd {
        Prepare(c) | TrainSeg(c) | TrainRec(c) | Segment(c) | Embed(c) | Cluster(c) | Evaluate(c) | Run(c) => c,
    };
    let cfg = common.resolve()?;
    let dir = cfg.out_dir.display().to_string();
    match cmd {
        Prepare(_) => {
            let s = run::prepare(&cfg)?;
            info!(
                "cached {} / {} / {} streams ({} channels) in {dir}/{}",
                s.train,
                s.validation,
                s.test,
                s.channels,
                run::DATA
            );
        }
        TrainSeg(_) => {
            let s = run::train_seg(&cfg)?;
            info!("{} steps, final loss {:?}, validation loss {:?}", s.steps, s.final_loss, s.validation_loss);
        }
        TrainRec(_) => {
            let s = run::train_rec(&cfg)?;
            info!("{} steps, final loss {:?}, validation loss {:?}", s.steps, s.final_loss, s.validation_loss);
        }
        Segment(_) => {
            let n = run::segment(&cfg)?;
            info!("{n} boundary regions");
        }
        Embed(_) => {
            let n = run::embed(&cfg)?;
            info!("{n} segments embedded");
        }
        Cluster(_) => {
            let k = run::cluster(&cfg)?;
            info!("{k} clusters");
        }
        Evaluate(_) => print!("{}", run::evaluate(&cfg)?),
        Run(_) => print!("{}", run::run_all(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("harsiam: error: {e}");
            ExitCode::FAILURE
        }
    }
}
