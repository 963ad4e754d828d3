//! ROUGE-L: longest-common-subsequence F1 between two token sequences.

/// LCS-based F1 (β = 1) scaled to 0–100. Either side empty → 0; the caller
/// decides whether that deserves a warning.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    100.0 * 2.0 * p * r / (p + r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    // one-row DP: prev[j] = LCS(a[..i], b[..j])
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::toks;

    #[test]
    fn identical_sequences_score_100() {
        let s = toks("the cat sat on the mat");
        assert!((rouge_l(&s, &s) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_sequences_score_0() {
        assert_eq!(rouge_l(&toks("aa bb"), &toks("cc dd")), 0.0);
    }

    #[test]
    fn hand_case() {
        // LCS("a b c d", "a c d") = 3; P = 3/4, R = 1, F1 = 6/7 → 85.71…
        let got = rouge_l(&toks("a b c d"), &toks("a c d"));
        assert!((got - 100.0 * 6.0 / 7.0).abs() < 1e-9);
        assert!((got - 85.71).abs() < 0.01);
    }

    #[test]
    fn subsequence_need_not_be_contiguous() {
        let got = rouge_l(&toks("x a y b z c"), &toks("a b c"));
        // LCS = 3, P = 3/6, R = 3/3 → F1 = 2·0.5·1/1.5 = 2/3
        assert!((got - 100.0 * 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_sides_score_0() {
        assert_eq!(rouge_l(&[], &toks("a")), 0.0);
        assert_eq!(rouge_l(&toks("a"), &[]), 0.0);
    }
}
