//! Evaluation metrics over pre-tokenized, whitespace-split, lowercased
//! sentences. Nothing in here re-tokenizes; a token list in is the unit of
//! truth. All functions are pure.

mod bleu;
mod fkgl;
mod rouge;
mod sari;

pub use bleu::bleu;
pub use fkgl::{fkgl, syllables};
pub use rouge::rouge_l;
pub use sari::{sari_corpus, sari_sentence, SariOps, SariReport};

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Joins n-gram tokens with a separator that cannot occur inside a token.
pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    if tokens.len() < n || n == 0 {
        return counts;
    }
    for window in tokens.windows(n) {
        let key = window.join("\u{1}");
        *counts.entry(key).or_insert(0.0) += 1.0;
    }
    counts
}

/// How closely outputs track their inputs: exact-match rate, corpus BLEU of
/// outputs against sources, and mean ROUGE-L against sources. High values
/// mean the system is mostly copying.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchReport {
    /// Fraction of outputs token-identical to their source, in [0, 1].
    pub exact_match: f64,
    pub bleu: f64,
    pub rouge_l: f64,
}

pub fn match_with_input(
    sources: &[Vec<String>],
    outputs: &[Vec<String>],
) -> Result<MatchReport> {
    if sources.len() != outputs.len() {
        return Err(Error::Contract(format!(
            "match-with-input needs aligned corpora: {} sources vs {} outputs",
            sources.len(),
            outputs.len()
        )));
    }
    if sources.is_empty() {
        return Err(Error::Contract("match-with-input on an empty corpus".into()));
    }
    let exact = sources
        .iter()
        .zip(outputs)
        .filter(|(s, o)| s == o)
        .count() as f64
        / sources.len() as f64;
    let ref_lists: Vec<Vec<Vec<String>>> = sources.iter().map(|s| vec![s.clone()]).collect();
    let bleu_vs_source = bleu(outputs, &ref_lists)?;
    let mean_rouge = sources
        .iter()
        .zip(outputs)
        .map(|(s, o)| rouge_l(o, s))
        .sum::<f64>()
        / sources.len() as f64;
    Ok(MatchReport {
        exact_match: exact,
        bleu: bleu_vs_source,
        rouge_l: mean_rouge,
    })
}

/// The full scorecard for a decoded corpus.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub sari: SariReport,
    /// Corpus BLEU-4 against the references.
    pub bleu: f64,
    /// Readability grade of the outputs (lower reads easier; can go negative).
    pub fkgl: f64,
    /// Mean ROUGE-L of outputs against their *sources*.
    pub rouge_l: f64,
    /// Fraction of outputs identical to their source, in [0, 1].
    pub exact_match: f64,
}

/// Scores `outputs` against `references` (quality) and `sources`
/// (closeness-to-input). `references[i]` holds all reference simplifications
/// of sentence `i`.
pub fn evaluate(
    sources: &[Vec<String>],
    outputs: &[Vec<String>],
    references: &[Vec<Vec<String>>],
) -> Result<MetricReport> {
    if sources.len() != outputs.len() || outputs.len() != references.len() {
        return Err(Error::Contract(format!(
            "evaluate needs aligned corpora: {} sources, {} outputs, {} reference rows",
            sources.len(),
            outputs.len(),
            references.len()
        )));
    }
    let sari = sari_corpus(sources, outputs, references)?;
    let bleu = bleu(outputs, references)?;
    let fkgl = fkgl(outputs)?;
    let matching = match_with_input(sources, outputs)?;
    Ok(MetricReport {
        sari,
        bleu,
        fkgl,
        rouge_l: matching.rouge_l,
        exact_match: matching.exact_match,
    })
}

#[cfg(test)]
pub(crate) fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ngram_counts_basic() {
        let t = toks("a b a b c");
        let uni = ngram_counts(&t, 1);
        assert_eq!(uni["a"], 2.0);
        assert_eq!(uni["c"], 1.0);
        let bi = ngram_counts(&t, 2);
        assert_eq!(bi[&format!("a\u{1}b")], 2.0);
        assert_eq!(bi.len(), 3);
        assert!(ngram_counts(&t, 6).is_empty());
    }

    #[test]
    fn identity_outputs_match_input_perfectly() {
        let src = vec![toks("the cat sat on the mat"), toks("a long example sentence here")];
        let m = match_with_input(&src, &src).unwrap();
        assert_eq!(m.exact_match, 1.0);
        assert!((m.bleu - 100.0).abs() < 1e-9);
        assert!((m.rouge_l - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_outputs_match_nothing() {
        let src = vec![toks("aa bb cc dd"), toks("ee ff gg hh")];
        let out = vec![toks("xx yy zz ww"), toks("qq rr ss tt")];
        let m = match_with_input(&src, &out).unwrap();
        assert_eq!(m.exact_match, 0.0);
        assert_eq!(m.bleu, 0.0);
        assert_eq!(m.rouge_l, 0.0);
    }

    #[test]
    fn evaluate_identity_scorecard() {
        let src = vec![
            toks("the old cat sat on the mat"),
            toks("children play games outside every day"),
        ];
        let refs: Vec<Vec<Vec<String>>> = src.iter().map(|s| vec![s.clone()]).collect();
        let report = evaluate(&src, &src, &refs).unwrap();
        assert!((report.sari.total - 100.0 / 3.0).abs() < 1e-9);
        assert!((report.bleu - 100.0).abs() < 1e-9);
        assert_eq!(report.exact_match, 1.0);
        assert!((report.rouge_l - 100.0).abs() < 1e-9);
    }

    #[test]
    fn evaluate_rejects_misaligned_corpora() {
        let a = vec![toks("a b")];
        let refs = vec![vec![toks("a b")], vec![toks("c d")]];
        assert!(evaluate(&a, &a, &refs).is_err());
    }

    #[test]
    fn corpus_order_permutation_invariance() {
        let src = vec![toks("one two three four"), toks("five six seven eight nine")];
        let out = vec![toks("one two three"), toks("five six seven nine")];
        let refs = vec![vec![toks("one two four")], vec![toks("five seven eight")]];
        let fwd = evaluate(&src, &out, &refs).unwrap();
        let src_r: Vec<_> = src.iter().rev().cloned().collect();
        let out_r: Vec<_> = out.iter().rev().cloned().collect();
        let refs_r: Vec<_> = refs.iter().rev().cloned().collect();
        let rev = evaluate(&src_r, &out_r, &refs_r).unwrap();
        assert!((fwd.sari.total - rev.sari.total).abs() < 1e-12);
        assert!((fwd.rouge_l - rev.rouge_l).abs() < 1e-12);
        assert_eq!(fwd.exact_match, rev.exact_match);
    }
}
