use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context};
use metaprompt::episodes::{generate_synthetic_corpus, write_jsonl};
use metaprompt::harness::{run_experiment_suite, Assets, Run, RunConfig, RunMetrics, TrainerState};
use metaprompt::oracle::{maml_suite, primitive_suite, task_loss_suite, SuiteReport};
use metaprompt::persist::{
    load_checkpoint, save_checkpoint, spec_hash, write_config, write_run_metrics, write_suite_report, write_train_csv,
    Checkpoint, RunDir, TRAIN_CSV,
};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const PRETRAIN_CKPT: &str = "pretrain.ckpt";
pub const META_CKPT: &str = "meta.ckpt";

const FIRST_ORDER_TOL: f64 = 1e-6;
const SECOND_ORDER_TOL: f64 = 1e-4;
const MAML_TOL: f64 = 1e-4;

pub fn init_threads(threads: usize) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")
}

fn open_run(cfg: &RunConfig) -> anyhow::Result<RunDir> {
    let dir = RunDir::open(&cfg.out_dir)?;
    write_config(&dir, cfg)?;
    Ok(dir)
}

fn checkpoint(hash: &str, run: &Run, state: &TrainerState) -> Checkpoint {
    Checkpoint {
        spec_hash: hash.to_string(),
        seed: run.cfg.seed,
        state: state.clone(),
    }
}

fn load_for(run: &Run, path: &Path) -> anyhow::Result<Checkpoint> {
    let ck = load_checkpoint(path, &run.model).with_context(|| format!("loading {}", path.display()))?;
    if ck.seed != run.cfg.seed {
        bail!("checkpoint {} was written with seed {}, run seed is {}", path.display(), ck.seed, run.cfg.seed);
    }
    Ok(ck)
}

pub fn gen_data(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let dir = open_run(cfg)?;
    let corpus = generate_synthetic_corpus(&cfg.data.synthetic, cfg.data.seed)?;
    let path = dir.path(CORPUS_FILE);
    write_jsonl(&corpus, &path)?;
    println!(
        "wrote {} examples over {} labels to {}",
        corpus.examples.len(),
        corpus.num_labels(),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn pretrain(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let dir = open_run(cfg)?;
    let assets = Assets::prepare(cfg)?;
    let run = Run::new(&assets, cfg)?;
    let params = run.pretrain_init(&run.random_init())?;
    let mut state = TrainerState::new(&params);
    state.finished = true;
    let path = dir.path(PRETRAIN_CKPT);
    save_checkpoint(&checkpoint(&spec_hash(&run.model)?, &run, &state), &path)?;
    println!("pretrained prompt written to {}", path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn meta_train(cfg: &RunConfig, resume: Option<&Path>) -> anyhow::Result<ExitCode> {
    let dir = open_run(cfg)?;
    let assets = Assets::prepare(cfg)?;
    let run = Run::new(&assets, cfg)?;
    let resumed = resume.map(|p| load_for(&run, p)).transpose()?.map(|ck| ck.state);
    let path = dir.path(META_CKPT);
    let hash = spec_hash(&run.model)?;
    let state = run.meta_train(&run.random_init(), resumed, |s| {
        let h = s.history.last().expect("epoch recorded");
        eprintln!(
            "epoch {}: train loss {:.4}, val accuracy {:.4}",
            h.epoch, h.train_loss, h.val_accuracy
        );
        save_checkpoint(&checkpoint(&hash, &run, s), &path)
    })?;
    save_checkpoint(&checkpoint(&hash, &run, &state), &path)?;
    write_train_csv(&dir.path(TRAIN_CSV), &state.history)?;
    println!(
        "{} epochs, best val accuracy {:.4}; checkpoint {}",
        state.epoch,
        state.best_val,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn meta_test(cfg: &RunConfig, resume: Option<&Path>) -> anyhow::Result<ExitCode> {
    let dir = open_run(cfg)?;
    let assets = Assets::prepare(cfg)?;
    let run = Run::new(&assets, cfg)?;
    let (params, train) = match resume {
        Some(p) => {
            let ck = load_for(&run, p)?;
            (ck.state.best_params, ck.state.history)
        }
        None => run.init(cfg.init)?,
    };
    let test = run.meta_test(&params)?;
    let metrics = RunMetrics {
        config_hash: cfg.hash()?,
        init: cfg.init,
        train,
        test,
    };
    write_run_metrics(&dir, &metrics)?;
    println!(
        "{} init: accuracy {:.4} ± {:.4} over {} episodes",
        cfg.init.name(),
        metrics.test.accuracy_mean,
        metrics.test.accuracy_std,
        metrics.test.episodes.len()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn suite(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let dir = open_run(cfg)?;
    let assets = Assets::prepare(cfg)?;
    let report = run_experiment_suite(&assets, cfg, |line| eprintln!("{line}"))?;
    write_suite_report(&dir, &report)?;
    for (mode, mean, std) in &report.summary.init_accuracy {
        println!("{:<8} {mean:.4} ± {std:.4}", mode.name());
    }
    for (mode, std) in &report.summary.template_std {
        println!("{:<8} template std {std:.4}", mode.name());
    }
    for (algo, mean) in &report.summary.algorithm_accuracy {
        println!("{:<8} {mean:.4}", algo.name());
    }
    Ok(ExitCode::SUCCESS)
}

fn print_report(r: &SuiteReport) {
    match r.max_second_order {
        Some(s) => println!(
            "{:<10} {:>4} instances  max rel. error {:.3e} (hvp {:.3e})",
            r.name, r.instances, r.max_first_order, s
        ),
        None => println!("{:<10} {:>4} instances  max rel. error {:.3e}", r.name, r.instances, r.max_first_order),
    }
}

pub fn gradcheck(seed: u64) -> anyhow::Result<ExitCode> {
    let prim = primitive_suite(seed, 5)?;
    let task = task_loss_suite(seed.wrapping_add(1), 20)?;
    let maml = maml_suite(seed.wrapping_add(2), 20, 3)?;
    let mut ok = true;
    for r in [&prim, &task] {
        print_report(r);
        ok &= r.max_first_order < FIRST_ORDER_TOL && r.max_second_order.is_some_and(|s| s < SECOND_ORDER_TOL);
    }
    print_report(&maml);
    ok &= maml.max_first_order < MAML_TOL;
    if ok {
        println!("ok");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAILED");
        Ok(ExitCode::FAILURE)
    }
}
