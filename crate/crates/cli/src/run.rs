//! The `train` command: load config and corpora, build the vocabulary and
//! sharing plan, drive the trainer in checkpoint-sized chunks, and keep the
//! snapshot with the best dev selection score.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use textsimp_core::bandit::BanditTrace;
use textsimp_core::checkpoint::Checkpoint;
use textsimp_core::config::RunConfig;
use textsimp_core::corpus::{load_pairs, strip_specials, SentencePair, Vocab};
use textsimp_core::metrics;
use textsimp_core::model::{Model, ModelConfig};
use textsimp_core::sharing::build_plan;
use textsimp_core::trainer::{
    ratio_from_trace, selection_score, write_history, Schedule, TaskData, Trainer,
};
use textsimp_core::{tasks, Error, Result};

#[derive(Args)]
pub struct TrainArgs {
    /// Run configuration file (flat `key = value` lines)
    #[arg(long)]
    pub config: PathBuf,
    /// Settings applied on top of the file, e.g. `schedule=dynamic n_s=10`
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply_overrides(&args.overrides)?;
    resolve_trace_schedule(&mut cfg)?;

    let tasks = load_tasks(&cfg)?;
    for t in &tasks {
        println!(
            "task {}: {} training pairs, {} dev pairs",
            t.name,
            t.train.len(),
            t.dev.len()
        );
    }

    // A warm start adopts the donor checkpoint's vocabulary — the copied
    // embedding rows are only meaningful under the token mapping they were
    // trained with. Fresh runs build one vocabulary over every
    // participating task's training text.
    let warm_ckpt = match &cfg.train.warm_start {
        Some(path) => Some(Checkpoint::load(Path::new(path))?),
        None => None,
    };
    let vocab = match &warm_ckpt {
        Some(ckpt) => ckpt.vocab()?,
        None => {
            let mut sentences: Vec<&Vec<String>> = Vec::new();
            for t in &tasks {
                for p in &t.train {
                    sentences.push(&p.source);
                    sentences.push(&p.target);
                }
            }
            Vocab::build(sentences, cfg.vocab_cap)
        }
    };
    println!("vocabulary: {} entries", vocab.size());

    let model_cfg = ModelConfig {
        hidden_size: cfg.hidden_size,
        embedding_size: cfg.embedding_size,
        vocab_size: vocab.size(),
        reverse_source: cfg.reverse_source,
    };

    // Presets describe all three tasks; pairs whose partner is not loaded
    // in this run are dropped.
    let loaded: BTreeSet<&str> = tasks.iter().map(|t| t.name.as_str()).collect();
    let mut plan = build_plan(cfg.preset, cfg.train.lambda)?;
    plan.pairs
        .retain(|p| loaded.contains(p.task_a.as_str()) && loaded.contains(p.task_b.as_str()));

    // Selection decodes run on a prefix of the main dev set, kept aside
    // here because the trainer takes ownership of the task data.
    let eval_dev: Vec<SentencePair> = tasks
        .iter()
        .find(|t| t.name == tasks::MAIN)
        .expect("load_tasks guarantees a main task")
        .dev
        .iter()
        .take(cfg.train.eval_subset_size)
        .cloned()
        .collect();

    let mut trainer = Trainer::new(&model_cfg, &vocab, cfg.train.clone(), plan, tasks)?;
    if let Some(ckpt) = &warm_ckpt {
        ckpt.restore_params_into(&mut trainer)?;
        println!(
            "warm start from {} (learning rate {})",
            cfg.train.warm_start.as_deref().unwrap_or_default(),
            trainer.config().effective_lr()
        );
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    let out_dir = Path::new(&cfg.out_dir);
    let by_rounds = matches!(
        trainer.config().schedule,
        Schedule::Dynamic | Schedule::Random
    );
    let total = if by_rounds {
        trainer.config().rounds
    } else {
        trainer.config().steps
    };
    let every = if cfg.checkpoint_every == 0 {
        total.max(1)
    } else {
        cfg.checkpoint_every
    };

    let mut best: Option<(f64, u64)> = None;
    loop {
        let done = if by_rounds {
            trainer.rounds_done() as usize
        } else {
            trainer.global_step() as usize
        };
        let left = total.saturating_sub(done);
        if left == 0 {
            break;
        }
        let k = every.min(left);
        if by_rounds {
            trainer.run_rounds(k)?;
        } else {
            trainer.run_static_steps(k)?;
        }

        let step = trainer.global_step();
        let ckpt = Checkpoint::from_trainer(&trainer);
        let path = out_dir.join(format!("step-{step}.ckpt"));
        ckpt.save(&path)?;
        match score_snapshot(&trainer, &model_cfg, &vocab, &eval_dev, cfg.decode_max_len) {
            Some(score) => {
                println!("step {step}: saved {} (selection score {score:.4})", path.display());
                if best.map_or(true, |(b, _)| score > b) {
                    best = Some((score, step));
                    ckpt.save(&out_dir.join("best.ckpt"))?;
                }
            }
            None => println!(
                "step {step}: saved {} (not scorable yet — decodes carry no words)",
                path.display()
            ),
        }
    }

    Checkpoint::from_trainer(&trainer).save(&out_dir.join("last.ckpt"))?;
    write_history(&out_dir.join("history.csv"), trainer.history())?;
    if !trainer.trace().is_empty() {
        trainer.trace().write_csv(&out_dir.join("trace.csv"))?;
        println!("scheduler trace in {}", out_dir.join("trace.csv").display());
    }
    match best {
        Some((score, step)) => println!(
            "best checkpoint: step {step} with selection score {score:.4} ({})",
            out_dir.join("best.ckpt").display()
        ),
        None => println!(
            "no snapshot was scorable; final model is {}",
            out_dir.join("last.ckpt").display()
        ),
    }
    println!(
        "done: {} steps trained, history in {}",
        trainer.global_step(),
        out_dir.join("history.csv").display()
    );
    Ok(())
}

/// Swaps a `ratio_from_trace` schedule for the static ratio counted from
/// the recorded trace's tail.
fn resolve_trace_schedule(cfg: &mut RunConfig) -> Result<()> {
    if cfg.train.schedule != Schedule::RatioFromTrace {
        return Ok(());
    }
    let path = cfg.trace_file.clone().ok_or_else(|| {
        Error::Config(
            "schedule ratio_from_trace needs train.trace_file pointing at a recorded trace"
                .into(),
        )
    })?;
    let trace = BanditTrace::load_csv(Path::new(&path))?;
    let counts = ratio_from_trace(&trace, cfg.train.trace_fraction, tasks::ALL.len())?;
    let mut ratio = [0u32; 3];
    ratio[..counts.len()].copy_from_slice(&counts);
    println!(
        "trace {path} resolves to mixing ratio {}:{}:{}",
        ratio[0], ratio[1], ratio[2]
    );
    cfg.train.mixing_ratio = ratio;
    cfg.train.schedule = Schedule::Static;
    Ok(())
}

/// Loads every task with configured training data, in canonical order.
/// Tasks without dev files validate on their training pairs.
fn load_tasks(cfg: &RunConfig) -> Result<Vec<TaskData>> {
    let mut out = Vec::new();
    for name in tasks::ALL {
        let Some(paths) = cfg.tasks.get(name) else {
            continue;
        };
        if !paths.has_train() {
            return Err(Error::Config(format!(
                "task {name:?} needs both data.{name}.train_src and data.{name}.train_tgt"
            )));
        }
        let train = load_pairs(
            Path::new(paths.train_src.as_ref().unwrap()),
            Path::new(paths.train_tgt.as_ref().unwrap()),
        )?;
        let dev = if paths.has_dev() {
            load_pairs(
                Path::new(paths.dev_src.as_ref().unwrap()),
                Path::new(paths.dev_tgt.as_ref().unwrap()),
            )?
        } else {
            eprintln!("note: task {name:?} has no dev files; validating on its training pairs");
            train.clone()
        };
        out.push(TaskData {
            name: name.to_string(),
            train,
            dev,
        });
    }
    if !out.iter().any(|t| t.name == tasks::MAIN) {
        return Err(Error::Config(
            "config must provide data.main.train_src and data.main.train_tgt".into(),
        ));
    }
    Ok(out)
}

/// Greedy-decodes the dev prefix and scores it; None when the metrics are
/// undefined (every decode empty or word-free), which outranks nothing.
fn score_snapshot(
    trainer: &Trainer,
    model_cfg: &ModelConfig,
    vocab: &Vocab,
    eval_dev: &[SentencePair],
    max_len: usize,
) -> Option<f64> {
    let store = trainer.store(tasks::MAIN).ok()?;
    let model = Model::new(model_cfg, store);
    let mut sources = Vec::with_capacity(eval_dev.len());
    let mut outputs = Vec::with_capacity(eval_dev.len());
    let mut references = Vec::with_capacity(eval_dev.len());
    for pair in eval_dev {
        let decoded = model.greedy(&pair.source, vocab, max_len);
        sources.push(pair.source.clone());
        outputs.push(decoded.tokens);
        references.push(vec![strip_specials(&pair.target)]);
    }
    let report = metrics::evaluate(&sources, &outputs, &references).ok()?;
    Some(selection_score(report.sari.total, report.bleu, report.fkgl))
}
