//! SARI: scores a rewrite by how well its additions, kept words, and
//! deletions agree with reference rewrites, relative to the source.
//!
//! For each n-gram order 1..=4 the source multiset I, output multiset O, and
//! fractional reference multiset R̄ (counts divided by the number of
//! references) are combined with multiset arithmetic:
//!
//! * add:  candidate O∖I, target R̄∖I — precision, recall, F1
//! * keep: candidate O∩I, target R̄∩I — precision, recall, F1
//! * del:  candidate I∖O, target I∖R̄ — precision only
//!
//! Every 0/0 ratio is defined as 0. Orders longer than the sentence simply
//! contribute zeros. Sentence scores are averaged over the corpus.

use std::collections::BTreeMap;

use super::ngram_counts;
use crate::error::{Error, Result};

type Counts = BTreeMap<String, f64>;

/// One n-gram order's operation scores, each in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SariOps {
    pub f_add: f64,
    pub f_keep: f64,
    pub p_del: f64,
}

/// Aggregate SARI plus its decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SariReport {
    /// Mean over orders of (f_add + f_keep + p_del)/3, in [0, 100].
    pub total: f64,
    /// Mean over orders of each component.
    pub f_add: f64,
    pub f_keep: f64,
    pub p_del: f64,
    /// Per-order breakdown, index 0 = unigrams .. index 3 = 4-grams.
    pub by_order: [SariOps; 4],
}

fn saturating_sub(a: &Counts, b: &Counts) -> Counts {
    let mut out = Counts::new();
    for (k, va) in a {
        let vb = b.get(k).copied().unwrap_or(0.0);
        let d = va - vb;
        if d > 0.0 {
            out.insert(k.clone(), d);
        }
    }
    out
}

fn intersect(a: &Counts, b: &Counts) -> Counts {
    let mut out = Counts::new();
    for (k, va) in a {
        if let Some(vb) = b.get(k) {
            let m = va.min(*vb);
            if m > 0.0 {
                out.insert(k.clone(), m);
            }
        }
    }
    out
}

fn mass(c: &Counts) -> f64 {
    c.values().sum()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn order_scores(source: &[String], output: &[String], refs: &[Vec<String>], n: usize) -> SariOps {
    let i = ngram_counts(source, n);
    let o = ngram_counts(output, n);
    let k = refs.len() as f64;
    let mut rbar = Counts::new();
    for r in refs {
        for (g, c) in ngram_counts(r, n) {
            *rbar.entry(g).or_insert(0.0) += c / k;
        }
    }

    let add_cand = saturating_sub(&o, &i);
    let add_targ = saturating_sub(&rbar, &i);
    let add_hit = mass(&intersect(&add_cand, &add_targ));
    let p_add = ratio(add_hit, mass(&add_cand));
    let r_add = ratio(add_hit, mass(&add_targ));

    let keep_cand = intersect(&o, &i);
    let keep_targ = intersect(&rbar, &i);
    let keep_hit = mass(&intersect(&keep_cand, &keep_targ));
    let p_keep = ratio(keep_hit, mass(&keep_cand));
    let r_keep = ratio(keep_hit, mass(&keep_targ));

    let del_cand = saturating_sub(&i, &o);
    let del_targ = saturating_sub(&i, &rbar);
    let del_hit = mass(&intersect(&del_cand, &del_targ));
    let p_del = ratio(del_hit, mass(&del_cand));

    SariOps {
        f_add: 100.0 * f1(p_add, r_add),
        f_keep: 100.0 * f1(p_keep, r_keep),
        p_del: 100.0 * p_del,
    }
}

/// SARI of one output sentence against its source and ≥1 references.
pub fn sari_sentence(
    source: &[String],
    output: &[String],
    references: &[Vec<String>],
) -> Result<SariReport> {
    if references.is_empty() {
        return Err(Error::Contract(
            "SARI needs at least one reference".to_string(),
        ));
    }
    let mut by_order = [SariOps::default(); 4];
    for (idx, ops) in by_order.iter_mut().enumerate() {
        *ops = order_scores(source, output, references, idx + 1);
    }
    let mean =
        |f: fn(&SariOps) -> f64| by_order.iter().map(f).sum::<f64>() / by_order.len() as f64;
    let (f_add, f_keep, p_del) = (
        mean(|o| o.f_add),
        mean(|o| o.f_keep),
        mean(|o| o.p_del),
    );
    Ok(SariReport {
        total: (f_add + f_keep + p_del) / 3.0,
        f_add,
        f_keep,
        p_del,
        by_order,
    })
}

/// Mean of per-sentence SARI over an aligned corpus.
pub fn sari_corpus(
    sources: &[Vec<String>],
    outputs: &[Vec<String>],
    references: &[Vec<Vec<String>>],
) -> Result<SariReport> {
    if sources.len() != outputs.len() || outputs.len() != references.len() {
        return Err(Error::Contract(format!(
            "SARI needs aligned corpora: {} sources, {} outputs, {} reference rows",
            sources.len(),
            outputs.len(),
            references.len()
        )));
    }
    if sources.is_empty() {
        return Err(Error::Contract("SARI on an empty corpus".to_string()));
    }
    let mut acc = SariReport {
        total: 0.0,
        f_add: 0.0,
        f_keep: 0.0,
        p_del: 0.0,
        by_order: [SariOps::default(); 4],
    };
    for ((s, o), r) in sources.iter().zip(outputs).zip(references) {
        let one = sari_sentence(s, o, r)?;
        acc.total += one.total;
        acc.f_add += one.f_add;
        acc.f_keep += one.f_keep;
        acc.p_del += one.p_del;
        for (dst, src) in acc.by_order.iter_mut().zip(&one.by_order) {
            dst.f_add += src.f_add;
            dst.f_keep += src.f_keep;
            dst.p_del += src.p_del;
        }
    }
    let n = sources.len() as f64;
    acc.total /= n;
    acc.f_add /= n;
    acc.f_keep /= n;
    acc.p_del /= n;
    for ops in &mut acc.by_order {
        ops.f_add /= n;
        ops.f_keep /= n;
        ops.p_del /= n;
    }
    Ok(acc)
}
