mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use metaprompt::harness::{InitMode, RunConfig};
use metaprompt::meta::Algorithm;

#[derive(Debug, Parser)]
#[command(name = "metaprompt", version, about = "Meta-learned soft-prompt initialization for few-shot prompt classifiers")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they override values from `--config`.
#[derive(Debug, clap::Args)]
struct GlobalArgs {
    /// TOML run configuration laid over the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory of the run.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// maml, fomaml, reptile or mslb.
    #[arg(long, global = true)]
    algo: Option<Algorithm>,
    #[arg(long, global = true)]
    inner_steps: Option<usize>,
    /// random, pretrain or meta.
    #[arg(long, global = true)]
    init: Option<InitMode>,
    /// Checkpoint to continue training from or to evaluate.
    #[arg(long, global = true, value_name = "CKPT")]
    resume: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic corpus as JSONL.
    GenData,
    /// Tune a prompt on the pooled train split and checkpoint it.
    Pretrain,
    /// Meta-train a prompt initialization, checkpointing every epoch.
    MetaTrain,
    /// Adapt to test episodes and write metrics.
    MetaTest,
    /// Compare initializations, templates and algorithms across seeds.
    Suite,
    /// Check analytic gradients against finite differences.
    Gradcheck,
}

impl GlobalArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(algo) = self.algo {
            cfg.meta.algorithm = algo;
        }
        if let Some(k) = self.inner_steps {
            cfg.inner.steps = k;
        }
        if let Some(init) = self.init {
            cfg.init = init;
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(path) = &cli.global.config {
        if !path.is_file() {
            eprintln!("error: config file {} not found\n", path.display());
            eprintln!("{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
    }
    let result = cli.global.resolve().and_then(|cfg| {
        commands::init_threads(cfg.threads)?;
        match cli.command {
            Command::GenData => commands::gen_data(&cfg),
            Command::Pretrain => commands::pretrain(&cfg),
            Command::MetaTrain => commands::meta_train(&cfg, cli.global.resume.as_deref()),
            Command::MetaTest => commands::meta_test(&cfg, cli.global.resume.as_deref()),
            Command::Suite => commands::suite(&cfg),
            Command::Gradcheck => commands::gradcheck(cfg.seed),
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
