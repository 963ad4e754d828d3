//! The `decode` command: load a checkpoint, rebuild its vocabulary and main
//! model, and simplify a file of sentences one line at a time.

use std::io::Read;
use std::path::{Path, PathBuf};

use clap::Args;
use textsimp_core::checkpoint::Checkpoint;
use textsimp_core::corpus::write_atomic;
use textsimp_core::model::{Model, ModelConfig};
use textsimp_core::params::ParameterStore;
use textsimp_core::{tasks, Error, Result};

#[derive(Args)]
pub struct DecodeArgs {
    /// Trained checkpoint to decode with
    #[arg(long)]
    pub model: PathBuf,
    /// Sentences to simplify, one per line (`-` reads standard input)
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; omitted means standard output
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Beam width; 1 decodes greedily
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    /// Longest output to produce, in tokens
    #[arg(long, default_value_t = 60)]
    pub max_len: usize,
    /// Which task's model to decode with
    #[arg(long, default_value = tasks::MAIN)]
    pub task: String,
}

pub fn cmd_decode(args: DecodeArgs) -> Result<()> {
    if args.beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(&args.model)?;
    let model_cfg = ckpt.model_config()?;
    let vocab = ckpt.vocab()?;
    if model_cfg.vocab_size != vocab.size() {
        return Err(Error::Checkpoint(format!(
            "shape conflict: checkpoint lists vocab size {} but carries {} vocabulary entries",
            model_cfg.vocab_size,
            vocab.size()
        )));
    }
    let store = ckpt.store(&args.task)?;
    check_store_shapes(&model_cfg, &store)?;
    let model = Model::new(&model_cfg, &store);

    let text = read_input(&args.input)?;
    let mut out = String::new();
    for line in text.lines() {
        let source: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if source.is_empty() {
            out.push('\n');
            continue;
        }
        let decoded = if args.beam == 1 {
            model.greedy(&source, &vocab, args.max_len)
        } else {
            model.beam(&source, &vocab, args.beam, args.max_len)
        };
        out.push_str(&decoded.tokens.join(" "));
        out.push('\n');
    }

    match &args.output {
        Some(path) => write_atomic(path, out.as_bytes())?,
        None => print!("{out}"),
    }
    Ok(())
}

/// The embedding table pins down both sizes a decode depends on; a
/// checkpoint whose tensors disagree with its own metadata is refused with
/// the conflicting shapes spelled out.
fn check_store_shapes(cfg: &ModelConfig, store: &ParameterStore) -> Result<()> {
    let embed = store.require("embed")?;
    let shape = embed.borrow().tensor.shape().to_vec();
    if shape != [cfg.vocab_size, cfg.embedding_size] {
        return Err(Error::Checkpoint(format!(
            "shape conflict: embedding table is {:?} but the checkpoint metadata says [{}, {}]",
            shape, cfg.vocab_size, cfg.embedding_size
        )));
    }
    Ok(())
}

fn read_input(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        return Ok(buf);
    }
    std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}
