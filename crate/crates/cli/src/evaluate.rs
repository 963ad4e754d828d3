//! The `evaluate` command: score decoded sentences against references and
//! the source, print a stable `key = value` report, and write a
//! per-sentence score table.

use std::io::Read;
use std::path::{Path, PathBuf};

use clap::Args;
use textsimp_core::corpus::write_atomic;
use textsimp_core::metrics::{evaluate, rouge_l, sari_sentence};
use textsimp_core::{Error, Result};

#[derive(Args)]
pub struct EvaluateArgs {
    /// Source sentences, one per line (`-` reads standard input)
    #[arg(long)]
    pub source: PathBuf,
    /// System outputs aligned with the sources (`-` reads standard input)
    #[arg(long)]
    pub output: PathBuf,
    /// Reference files, comma-separated, each aligned with the sources
    #[arg(long, value_delimiter = ',', required = true)]
    pub refs: Vec<PathBuf>,
    /// Where the per-sentence score table goes
    #[arg(long, default_value = "scores.csv")]
    pub per_sentence: PathBuf,
}

pub fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    if args.source.as_os_str() == "-" && args.output.as_os_str() == "-" {
        return Err(Error::Config(
            "only one of --source and --output can read standard input".into(),
        ));
    }
    let sources = read_tokenized(&args.source)?;
    let outputs = read_tokenized(&args.output)?;
    if outputs.len() != sources.len() {
        return Err(Error::Data(format!(
            "{} has {} lines but {} has {} lines",
            args.source.display(),
            sources.len(),
            args.output.display(),
            outputs.len()
        )));
    }
    let mut references: Vec<Vec<Vec<String>>> = vec![Vec::new(); sources.len()];
    for path in &args.refs {
        let lines = read_tokenized(path)?;
        if lines.len() != sources.len() {
            return Err(Error::Data(format!(
                "{} has {} lines but {} has {} lines",
                args.source.display(),
                sources.len(),
                path.display(),
                lines.len()
            )));
        }
        for (slot, line) in references.iter_mut().zip(lines) {
            slot.push(line);
        }
    }

    let report = evaluate(&sources, &outputs, &references)?;
    println!("sentences = {}", sources.len());
    println!("references = {}", args.refs.len());
    println!("sari = {:.6}", report.sari.total);
    println!("sari_add = {:.6}", report.sari.f_add);
    println!("sari_keep = {:.6}", report.sari.f_keep);
    println!("sari_del = {:.6}", report.sari.p_del);
    println!("bleu = {:.6}", report.bleu);
    println!("fkgl = {:.6}", report.fkgl);
    println!("match_exact = {:.6}", report.exact_match * 100.0);
    println!("match_rouge_l = {:.6}", report.rouge_l);

    write_per_sentence(&args.per_sentence, &sources, &outputs, &references)?;
    Ok(())
}

fn write_per_sentence(
    path: &Path,
    sources: &[Vec<String>],
    outputs: &[Vec<String>],
    references: &[Vec<Vec<String>>],
) -> Result<()> {
    let mut csv = String::from("index,sari,sari_add,sari_keep,sari_del,rouge_l,exact_match\n");
    for (i, ((src, out), refs)) in sources.iter().zip(outputs).zip(references).enumerate() {
        let sari = sari_sentence(src, out, refs)?;
        let rouge = rouge_l(out, src);
        let exact = u8::from(src == out);
        csv.push_str(&format!(
            "{i},{:.6},{:.6},{:.6},{:.6},{:.6},{exact}\n",
            sari.total, sari.f_add, sari.f_keep, sari.p_del, rouge
        ));
    }
    write_atomic(path, csv.as_bytes())
}

/// Reads whitespace-tokenized lines; empty lines stay as empty sentences so
/// line alignment is preserved.
fn read_tokenized(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = if path.as_os_str() == "-" {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        buf
    } else {
        std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?
    };
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}
