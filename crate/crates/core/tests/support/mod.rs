//! Shared fixtures for the integration suites: a from-first-principles
//! reimplementation of every evaluation metric (the second half of the
//! dual-implementation oracle), a fixed table of hand-built scoring triples,
//! and the synthetic task generators the training-benefit tests run on.
//!
//! Nothing here calls into the production metric code; agreement between the
//! two implementations is exactly what the oracle tests assert.

#![allow(dead_code)] // each test target uses its own slice of this module

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use textsimp_core::corpus::{SentencePair, Vocab, BOS_TOKEN, EOS_TOKEN};

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Wraps plain target tokens the way the corpus loader does.
pub fn wrap(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() + 2);
    out.push(BOS_TOKEN.to_string());
    out.extend_from_slice(tokens);
    out.push(EOS_TOKEN.to_string());
    out
}

pub fn pair(source: &str, target: &str) -> SentencePair {
    SentencePair {
        source: toks(source),
        target: wrap(&toks(target)),
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Brute-force metric reimplementation
// ═══════════════════════════════════════════════════════════════════════

/// Deliberately naive re-derivations of SARI, BLEU, FKGL, and ROUGE-L:
/// n-grams kept as token-window lists, counts found by quadratic scans, the
/// LCS done on a full two-dimensional table. Slow and obvious on purpose.
pub mod brute {
    /// All n-grams of `tokens` as owned windows, in order.
    fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
        if n == 0 || tokens.len() < n {
            return Vec::new();
        }
        tokens.windows(n).map(|w| w.to_vec()).collect()
    }

    fn count_in(list: &[Vec<String>], g: &[String]) -> f64 {
        list.iter().filter(|x| x.as_slice() == g).count() as f64
    }

    /// Every distinct gram seen across the given lists, first-seen order.
    fn distinct(lists: &[&[Vec<String>]]) -> Vec<Vec<String>> {
        let mut seen: Vec<Vec<String>> = Vec::new();
        for list in lists {
            for g in *list {
                if !seen.iter().any(|s| s == g) {
                    seen.push(g.clone());
                }
            }
        }
        seen
    }

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct OrderScores {
        pub f_add: f64,
        pub f_keep: f64,
        pub p_del: f64,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct SariScores {
        pub total: f64,
        pub f_add: f64,
        pub f_keep: f64,
        pub p_del: f64,
        pub by_order: [OrderScores; 4],
    }

    fn div(num: f64, den: f64) -> f64 {
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    fn f_measure(p: f64, r: f64) -> f64 {
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn sari_order(
        source: &[String],
        output: &[String],
        refs: &[Vec<String>],
        n: usize,
    ) -> OrderScores {
        let src = grams(source, n);
        let out = grams(output, n);
        let ref_lists: Vec<Vec<Vec<String>>> = refs.iter().map(|r| grams(r, n)).collect();
        let k = refs.len() as f64;

        let mut everything: Vec<&[Vec<String>]> = vec![&src, &out];
        for r in &ref_lists {
            everything.push(r);
        }
        let universe = distinct(&everything);

        // per-gram counts: i from the source, o from the output, rbar the
        // mean count over the references
        let mut add_hit = 0.0;
        let mut add_cand_mass = 0.0;
        let mut add_targ_mass = 0.0;
        let mut keep_hit = 0.0;
        let mut keep_cand_mass = 0.0;
        let mut keep_targ_mass = 0.0;
        let mut del_hit = 0.0;
        let mut del_cand_mass = 0.0;
        for g in &universe {
            let i = count_in(&src, g);
            let o = count_in(&out, g);
            let rbar: f64 = ref_lists.iter().map(|r| count_in(r, g)).sum::<f64>() / k;

            let add_cand = (o - i).max(0.0);
            let add_targ = (rbar - i).max(0.0);
            add_cand_mass += add_cand;
            add_targ_mass += add_targ;
            add_hit += add_cand.min(add_targ);

            let keep_cand = o.min(i);
            let keep_targ = rbar.min(i);
            keep_cand_mass += keep_cand;
            keep_targ_mass += keep_targ;
            keep_hit += keep_cand.min(keep_targ);

            // deletion is precision-only, so the target mass never matters
            let del_cand = (i - o).max(0.0);
            let del_targ = (i - rbar).max(0.0);
            del_cand_mass += del_cand;
            del_hit += del_cand.min(del_targ);
        }

        let p_add = div(add_hit, add_cand_mass);
        let r_add = div(add_hit, add_targ_mass);
        let p_keep = div(keep_hit, keep_cand_mass);
        let r_keep = div(keep_hit, keep_targ_mass);
        OrderScores {
            f_add: 100.0 * f_measure(p_add, r_add),
            f_keep: 100.0 * f_measure(p_keep, r_keep),
            p_del: 100.0 * div(del_hit, del_cand_mass),
        }
    }

    pub fn sari(source: &[String], output: &[String], refs: &[Vec<String>]) -> SariScores {
        let by_order = [
            sari_order(source, output, refs, 1),
            sari_order(source, output, refs, 2),
            sari_order(source, output, refs, 3),
            sari_order(source, output, refs, 4),
        ];
        let f_add = by_order.iter().map(|o| o.f_add).sum::<f64>() / 4.0;
        let f_keep = by_order.iter().map(|o| o.f_keep).sum::<f64>() / 4.0;
        let p_del = by_order.iter().map(|o| o.p_del).sum::<f64>() / 4.0;
        SariScores {
            total: (f_add + f_keep + p_del) / 3.0,
            f_add,
            f_keep,
            p_del,
            by_order,
        }
    }

    /// Corpus BLEU-4, no smoothing, closest-reference brevity penalty with
    /// ties broken toward the shorter reference.
    pub fn bleu(outputs: &[Vec<String>], reference_lists: &[Vec<Vec<String>>]) -> f64 {
        assert_eq!(outputs.len(), reference_lists.len());
        let mut log_sum = 0.0;
        for n in 1..=4usize {
            let mut clipped = 0.0;
            let mut total = 0.0;
            for (out, refs) in outputs.iter().zip(reference_lists) {
                let out_grams = grams(out, n);
                let ref_gram_lists: Vec<Vec<Vec<String>>> =
                    refs.iter().map(|r| grams(r, n)).collect();
                for g in distinct(&[&out_grams]) {
                    let c = count_in(&out_grams, &g);
                    let cap = ref_gram_lists
                        .iter()
                        .map(|r| count_in(r, &g))
                        .fold(0.0, f64::max);
                    total += c;
                    clipped += c.min(cap);
                }
            }
            if clipped == 0.0 || total == 0.0 {
                return 0.0;
            }
            log_sum += (clipped / total).ln();
        }

        let c: usize = outputs.iter().map(Vec::len).sum();
        let mut r = 0usize;
        for (out, refs) in outputs.iter().zip(reference_lists) {
            let mut best = refs[0].len();
            for cand in refs.iter().skip(1).map(Vec::len) {
                let better = cand.abs_diff(out.len()) < best.abs_diff(out.len())
                    || (cand.abs_diff(out.len()) == best.abs_diff(out.len()) && cand < best);
                if better {
                    best = cand;
                }
            }
            r += best;
        }
        if c == 0 {
            return 0.0;
        }
        let bp = if c > r {
            1.0
        } else {
            (1.0 - r as f64 / c as f64).exp()
        };
        100.0 * bp * (log_sum / 4.0).exp()
    }

    /// LCS length on a full (len+1)² table.
    fn lcs(a: &[String], b: &[String]) -> usize {
        let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                table[i][j] = if a[i - 1] == b[j - 1] {
                    table[i - 1][j - 1] + 1
                } else {
                    table[i - 1][j].max(table[i][j - 1])
                };
            }
        }
        table[a.len()][b.len()]
    }

    pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
        if candidate.is_empty() || reference.is_empty() {
            return 0.0;
        }
        let l = lcs(candidate, reference) as f64;
        if l == 0.0 {
            return 0.0;
        }
        let p = l / candidate.len() as f64;
        let r = l / reference.len() as f64;
        100.0 * 2.0 * p * r / (p + r)
    }

    /// Vowel-run syllable count: runs of a/e/i/o/u/y over the word's ASCII
    /// letters, one dropped for a silent trailing 'e' (kept after a
    /// consonant + "le"), floored at one.
    pub fn syllables(word: &str) -> usize {
        let mut letters = String::new();
        for c in word.chars() {
            for lower in c.to_lowercase() {
                if lower.is_ascii_alphabetic() {
                    letters.push(lower);
                }
            }
        }
        if letters.is_empty() {
            return 1;
        }
        let vowel = |c: u8| b"aeiouy".contains(&c);
        let bytes = letters.as_bytes();
        let mut runs = 0;
        let mut prev_was_vowel = false;
        for &b in bytes {
            let v = vowel(b);
            if v && !prev_was_vowel {
                runs += 1;
            }
            prev_was_vowel = v;
        }
        let n = bytes.len();
        let consonant_le = n >= 3 && bytes[n - 2] == b'l' && !vowel(bytes[n - 3]);
        if bytes[n - 1] == b'e' && !consonant_le && runs > 1 {
            runs -= 1;
        }
        runs.max(1)
    }

    /// Grade level over tokenized sentences. Panics on inputs the production
    /// version rejects; the oracle tests only feed it scoreable text.
    pub fn fkgl(sentences: &[Vec<String>]) -> f64 {
        let mut words = 0usize;
        let mut sylls = 0usize;
        for sentence in sentences {
            for token in sentence {
                if token.chars().any(char::is_alphanumeric) {
                    words += 1;
                    sylls += syllables(token);
                }
            }
        }
        assert!(!sentences.is_empty() && words > 0, "unscoreable text");
        0.39 * (words as f64 / sentences.len() as f64)
            + 11.8 * (sylls as f64 / words as f64)
            - 15.59
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Hand-built scoring triples
// ═══════════════════════════════════════════════════════════════════════

/// (source, output, references) — twenty cases covering identity, pure
/// deletion, additions in and out of reference, substitutions, fractional
/// multi-reference counts, repeated tokens, punctuation, digits, mixed case,
/// an empty output, and sentences shorter than the top n-gram order.
pub fn hand_triples() -> Vec<(Vec<String>, Vec<String>, Vec<Vec<String>>)> {
    let t = toks;
    vec![
        // identity, single reference
        (
            t("the cat sat on the mat"),
            t("the cat sat on the mat"),
            vec![t("the cat sat on the mat")],
        ),
        // pure deletion agreeing with the reference
        (
            t("the very old cat sat quietly"),
            t("the old cat sat"),
            vec![t("the old cat sat")],
        ),
        // deletion the reference does not want
        (
            t("the old cat sat"),
            t("the cat"),
            vec![t("the old cat sat")],
        ),
        // addition present in one of two references
        (
            t("the cat sat"),
            t("the small cat sat"),
            vec![t("the small cat sat"), t("the cat sat down")],
        ),
        // addition no reference wants
        (
            t("the cat sat"),
            t("the purple cat sat"),
            vec![t("the cat sat")],
        ),
        // substitution split across two references
        (
            t("the enormous dog barked"),
            t("the big dog barked"),
            vec![t("the big dog barked"), t("the large dog barked")],
        ),
        // repeated tokens on both sides
        (t("a a b a"), t("a b a a"), vec![t("a a b"), t("a b")]),
        // empty output
        (t("remove everything now"), vec![], vec![t("remove it")]),
        // scrambled output: unigrams kept, word order lost
        (
            t("one two three four five"),
            t("five four three two one"),
            vec![t("one two three four five")],
        ),
        // three references with fractional agreement
        (
            t("the committee deliberated at length"),
            t("the committee talked"),
            vec![
                t("the committee talked"),
                t("the committee met"),
                t("the group talked at length"),
            ],
        ),
        // punctuation tokens count as grams but not as words
        (
            t("the cat sat . really ."),
            t("the cat sat ."),
            vec![t("the cat sat .")],
        ),
        // digits are word-like tokens with floor-one syllables
        (
            t("version 2 of the 10 step plan"),
            t("version 2 of the plan"),
            vec![t("version 2 of the plan")],
        ),
        // long source, two-token output: orders 3 and 4 empty on the output
        (
            t("the weather yesterday afternoon was unusually cold and windy"),
            t("cold weather"),
            vec![t("it was cold and windy")],
        ),
        // source shorter than the top n-gram order
        (t("big dog"), t("dog"), vec![t("a dog"), t("dog")]),
        // reference much longer than the source: heavy addition targets
        (
            t("storms came"),
            t("storms came overnight"),
            vec![t("heavy storms came through the valley overnight")],
        ),
        // mixed case is case-sensitive in every metric
        (
            t("The CAT sat"),
            t("the cat sat"),
            vec![t("the cat sat"), t("The cat sat")],
        ),
        // silent-e and consonant-le words for the syllable path
        (
            t("the whale circled the stable table"),
            t("the whale circled the table"),
            vec![t("a whale circled a table")],
        ),
        // output repeats a token more often than the source has it
        (
            t("repeat the word"),
            t("the the the word"),
            vec![t("the word")],
        ),
        // fully disjoint triple
        (t("aa bb cc"), t("dd ee"), vec![t("ff gg hh")]),
        // output equal to a reference but not to the source
        (
            t("the legislation was promulgated in the year two thousand"),
            t("the law was made in two thousand"),
            vec![t("the law was made in two thousand")],
        ),
    ]
}

// ═══════════════════════════════════════════════════════════════════════
// Synthetic task suite
// ═══════════════════════════════════════════════════════════════════════

/// Three toy sequence tasks over one shared token pool. The main task is a
/// deletion analogue of simplification; the auxiliaries exercise the same
/// encoder skills (position tracking, token identity) with different output
/// rules, which is what makes sharing encoder-side layers pay off.
pub mod synth {
    use super::*;

    /// Content tokens every task keeps or transforms.
    pub const KEEP: [&str; 8] = [
        "sun", "moon", "tree", "rock", "bird", "fish", "wind", "rain",
    ];
    /// Filler tokens the main task must learn to drop.
    pub const MARKED: [&str; 4] = ["ugh", "bah", "meh", "pff"];

    /// One vocabulary over the whole pool, the way a run over these tasks
    /// would build it.
    pub fn vocab() -> Vocab {
        let sentences: Vec<Vec<String>> = KEEP
            .iter()
            .chain(MARKED.iter())
            .map(|t| vec![t.to_string()])
            .collect();
        Vocab::build(sentences.iter(), 1000)
    }

    /// A source of 5–9 pool tokens with at least two content tokens and at
    /// least one filler.
    fn gen_source(rng: &mut ChaCha8Rng) -> Vec<String> {
        loop {
            let len = rng.gen_range(5..=9);
            let tokens: Vec<String> = (0..len)
                .map(|_| {
                    if rng.gen::<f64>() < 0.3 {
                        MARKED[rng.gen_range(0..MARKED.len())].to_string()
                    } else {
                        KEEP[rng.gen_range(0..KEEP.len())].to_string()
                    }
                })
                .collect();
            let marked = tokens.iter().filter(|t| MARKED.contains(&t.as_str())).count();
            if marked >= 1 && tokens.len() - marked >= 2 {
                return tokens;
            }
        }
    }

    /// Delete-marked-tokens: the target keeps the content tokens in order
    /// and drops every filler.
    pub fn main_target(source: &[String]) -> Vec<String> {
        source
            .iter()
            .filter(|t| !MARKED.contains(&t.as_str()))
            .cloned()
            .collect()
    }

    /// Subsequence generation: the target is the tokens at even positions.
    pub fn sub_target(source: &[String]) -> Vec<String> {
        source.iter().step_by(2).cloned().collect()
    }

    /// Token-map substitution: each token moves to the next one in its class
    /// (cyclic), so the mapping is a fixed bijection over the pool.
    pub fn map_target(source: &[String]) -> Vec<String> {
        let next = |table: &[&str], t: &str| {
            let i = table.iter().position(|x| *x == t).unwrap();
            table[(i + 1) % table.len()].to_string()
        };
        source
            .iter()
            .map(|t| {
                if MARKED.contains(&t.as_str()) {
                    next(&MARKED, t)
                } else {
                    next(&KEEP, t)
                }
            })
            .collect()
    }

    fn gen_pairs(
        rng: &mut ChaCha8Rng,
        n: usize,
        target: impl Fn(&[String]) -> Vec<String>,
    ) -> Vec<SentencePair> {
        (0..n)
            .map(|_| {
                let source = gen_source(rng);
                let tgt = wrap(&target(&source));
                SentencePair { source, target: tgt }
            })
            .collect()
    }

    pub fn main_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<SentencePair> {
        gen_pairs(rng, n, main_target)
    }

    pub fn sub_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<SentencePair> {
        gen_pairs(rng, n, sub_target)
    }

    pub fn map_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<SentencePair> {
        gen_pairs(rng, n, map_target)
    }
}
