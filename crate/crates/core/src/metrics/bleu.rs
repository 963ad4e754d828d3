//! Corpus-level BLEU-4: geometric mean of modified n-gram precisions times a
//! brevity penalty. No smoothing — a zero count at any order zeroes the
//! score, which is the honest behavior for corpus-level use.

use super::ngram_counts;
use crate::error::{Error, Result};

/// `reference_lists[i]` holds every reference translation of `outputs[i]`.
pub fn bleu(outputs: &[Vec<String>], reference_lists: &[Vec<Vec<String>>]) -> Result<f64> {
    if outputs.len() != reference_lists.len() {
        return Err(Error::Contract(format!(
            "BLEU needs aligned corpora: {} outputs vs {} reference rows",
            outputs.len(),
            reference_lists.len()
        )));
    }
    if outputs.is_empty() {
        return Err(Error::Contract("BLEU on an empty corpus".to_string()));
    }
    for (i, refs) in reference_lists.iter().enumerate() {
        if refs.is_empty() {
            return Err(Error::Contract(format!(
                "BLEU sentence {i} has no references"
            )));
        }
    }

    let mut log_p_sum = 0.0;
    for n in 1..=4usize {
        let mut clipped = 0.0;
        let mut total = 0.0;
        for (out, refs) in outputs.iter().zip(reference_lists) {
            let out_counts = ngram_counts(out, n);
            // clip each output n-gram by its max count over the references
            let mut max_ref: std::collections::BTreeMap<String, f64> = Default::default();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(g).or_insert(0.0);
                    if c > *slot {
                        *slot = c;
                    }
                }
            }
            for (g, c) in &out_counts {
                total += c;
                let cap = max_ref.get(g).copied().unwrap_or(0.0);
                clipped += c.min(cap);
            }
        }
        if clipped == 0.0 || total == 0.0 {
            return Ok(0.0);
        }
        log_p_sum += (clipped / total).ln();
    }

    let c: usize = outputs.iter().map(Vec::len).sum();
    let r: usize = outputs
        .iter()
        .zip(reference_lists)
        .map(|(out, refs)| {
            refs.iter()
                .map(Vec::len)
                .min_by_key(|len| {
                    let diff = len.abs_diff(out.len());
                    (diff, *len) // tie goes to the shorter reference
                })
                .expect("non-empty reference list checked above")
        })
        .sum();
    if c == 0 {
        return Ok(0.0);
    }
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(100.0 * bp * (log_p_sum / 4.0).exp())
}
