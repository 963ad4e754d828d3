//! Flesch–Kincaid grade level with a vowel-group syllable heuristic.

use crate::error::{Error, Result};

/// Heuristic syllable count for one token: count maximal runs of vowels
/// (a, e, i, o, u, y) in the letters of the word; subtract one for a silent
/// trailing 'e' unless the word ends in consonant + "le" (as in "table");
/// floor at 1.
pub fn syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .flat_map(|c| c.to_lowercase())
        .filter(|c| c.is_ascii_alphabetic())
        .collect();
    if letters.is_empty() {
        return 1;
    }
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0usize;
    let mut in_group = false;
    for &c in &letters {
        if is_vowel(c) {
            if !in_group {
                groups += 1;
                in_group = true;
            }
        } else {
            in_group = false;
        }
    }
    let n = letters.len();
    let silent_e = letters[n - 1] == 'e'
        && !(n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]));
    if silent_e && groups > 1 {
        groups -= 1;
    }
    groups.max(1)
}

/// Grade level of a tokenized text:
/// `0.39·(words/sentences) + 11.8·(syllables/words) − 15.59`.
///
/// A "word" is any token containing at least one alphanumeric character, so
/// punctuation tokens are skipped. Short texts score below zero; lower means
/// easier to read.
pub fn fkgl(sentences: &[Vec<String>]) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::Contract("FKGL of an empty text".to_string()));
    }
    let mut words = 0usize;
    let mut sylls = 0usize;
    for sentence in sentences {
        for token in sentence {
            if token.chars().any(|c| c.is_alphanumeric()) {
                words += 1;
                sylls += syllables(token);
            }
        }
    }
    if words == 0 {
        return Err(Error::Contract(
            "FKGL needs at least one word-like token".to_string(),
        ));
    }
    let asl = words as f64 / sentences.len() as f64;
    let asw = sylls as f64 / words as f64;
    Ok(0.39 * asl + 11.8 * asw - 15.59)
}
