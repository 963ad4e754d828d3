//! Parallel-corpus loading, capped vocabulary, and padded batch assembly
//! with extended copy ids.
//!
//! Corpus files are plain text, line-aligned, whitespace-tokenized, and
//! lowercase. Targets get `<bos>`/`<eos>` wrapped on load. All task models
//! share one vocabulary (built over every participating task's training
//! text) so they can share one architecture description; embeddings still
//! stay private to each task under every sharing plan. Batches never mix
//! tasks — they are built per task dataset.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
const SPECIALS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

pub const DEFAULT_VOCAB_CAP: usize = 50_000;

/// Frequency-capped token↔id bijection with four fixed specials at ids 0–3.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
}

impl Vocab {
    /// Counts tokens across `sentences`, keeps the `cap` most frequent
    /// (ties broken by lexicographic token order), and prepends the
    /// specials. Special token strings appearing in the data are ignored —
    /// they can never be counted out or duplicated.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Vec<String>>, cap: usize) -> Vocab {
        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        for sentence in sentences {
            for token in sentence {
                if SPECIALS.contains(&token.as_str()) {
                    continue;
                }
                *freq.entry(token).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        // highest count first; the BTreeMap source already yields ties in
        // lexicographic order, and the stable sort keeps them that way
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        ranked.truncate(cap);

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut counts: Vec<u64> = vec![0; SPECIALS.len()];
        for (token, count) in ranked {
            id_to_token.push(token.to_string());
            counts.push(count);
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            token_to_id,
            id_to_token,
            counts,
        }
    }

    /// Total entries including the four specials.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn encode(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn decode(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    /// `token<TAB>count`, one line per entry, in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (token, count) in self.id_to_token.iter().zip(&self.counts) {
            out.push_str(token);
            out.push('\t');
            out.push_str(&count.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vocab> {
        let mut id_to_token = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (token, count) = line.split_once('\t').ok_or_else(|| {
                Error::Data(format!("vocab line {}: expected token<TAB>count", i + 1))
            })?;
            let count: u64 = count.parse().map_err(|_| {
                Error::Data(format!("vocab line {}: bad count {count:?}", i + 1))
            })?;
            id_to_token.push(token.to_string());
            counts.push(count);
        }
        for (i, special) in SPECIALS.iter().enumerate() {
            if id_to_token.get(i).map(String::as_str) != Some(*special) {
                return Err(Error::Data(format!(
                    "vocab entry {i} must be the special {special:?}"
                )));
            }
        }
        let token_to_id: BTreeMap<String, usize> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if token_to_id.len() != id_to_token.len() {
            return Err(Error::Data("vocab file contains duplicate tokens".into()));
        }
        Ok(Vocab {
            token_to_id,
            id_to_token,
            counts,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load_file(path: &Path) -> Result<Vocab> {
        Vocab::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Writes via a temporary sibling file plus rename, so an interrupted run
/// never leaves a truncated file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Data(format!("cannot write to {}", path.display())))?;
    let mut tmp = std::ffi::OsString::from(".");
    tmp.push(file_name);
    tmp.push(".tmp");
    let tmp_path = match dir {
        Some(d) => d.join(&tmp),
        None => std::path::PathBuf::from(&tmp),
    };
    std::fs::write(&tmp_path, bytes)?;
    std::fs::rename(&tmp_path, path)?;
    Ok(())
}

/// One aligned example. `target` is wrapped: `<bos> tokens… <eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Loads a line-aligned pair of files. Every line must be non-empty; targets
/// come back wrapped in `<bos>`/`<eos>`.
pub fn load_pairs(source_path: &Path, target_path: &Path) -> Result<Vec<SentencePair>> {
    let src_lines = read_lines(source_path)?;
    let tgt_lines = read_lines(target_path)?;
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Data(format!(
            "{} has {} lines but {} has {} lines",
            source_path.display(),
            src_lines.len(),
            target_path.display(),
            tgt_lines.len()
        )));
    }
    let mut pairs = Vec::with_capacity(src_lines.len());
    for (i, (s, t)) in src_lines.iter().zip(&tgt_lines).enumerate() {
        let lineno = i + 1;
        let source: Vec<String> = s.split_whitespace().map(str::to_string).collect();
        let mut target = vec![BOS_TOKEN.to_string()];
        target.extend(t.split_whitespace().map(str::to_string));
        target.push(EOS_TOKEN.to_string());
        if source.is_empty() {
            return Err(Error::Data(format!(
                "{} line {lineno} is empty",
                source_path.display()
            )));
        }
        if target.len() == 2 {
            return Err(Error::Data(format!(
                "{} line {lineno} is empty",
                target_path.display()
            )));
        }
        pairs.push(SentencePair { source, target });
    }
    Ok(pairs)
}

/// Removes the wrapper/filler specials from a token sequence.
pub fn strip_specials(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !SPECIALS.contains(&t.as_str()))
        .cloned()
        .collect()
}

/// Writes one sentence per line, tokens joined by single spaces, trailing
/// newline at end of file. Loading a file produced here reproduces it
/// byte-for-byte; loading an arbitrary file and re-writing normalizes
/// whitespace runs and guarantees the trailing newline.
pub fn write_sentences(path: &Path, sentences: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.join(" "));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// A padded batch in both id spaces. Extended ids cover the base vocabulary
/// plus this batch element's source-only (OOV) tokens, which occupy
/// consecutive slots starting at `vocab.size()`.
#[derive(Debug, Clone)]
pub struct SentenceBatch {
    /// Batch size B.
    pub size: usize,
    /// Padded source length S.
    pub src_len: usize,
    /// Padded decoder length T (one step shorter than the wrapped target).
    pub tgt_len: usize,
    /// `[B][S]` source ids in the base vocabulary (OOVs → UNK).
    pub source_ids: Vec<Vec<usize>>,
    /// `[B][S]` source ids in the extended space (OOVs → vocab_size + slot).
    pub source_ext_ids: Vec<Vec<usize>>,
    /// `[B][S]` 1.0 on real tokens, 0.0 on padding.
    pub source_mask: Vec<Vec<f64>>,
    /// Per-element OOV surface forms, slot order.
    pub oov_tokens: Vec<Vec<String>>,
    /// `[B][T]` decoder inputs in the base vocabulary, starting at `<bos>`.
    pub decoder_input_ids: Vec<Vec<usize>>,
    /// `[B][T]` next-token targets in the extended space, ending at `<eos>`.
    pub target_ext_ids: Vec<Vec<usize>>,
    /// `[B][T]` 1.0 on real target positions, 0.0 on padding.
    pub target_mask: Vec<Vec<f64>>,
    /// Largest OOV count in the batch; the copy distribution is
    /// `vocab.size() + max_oov` wide.
    pub max_oov: usize,
}

impl SentenceBatch {
    /// Assembles one batch from pairs. Targets must already be wrapped
    /// (`load_pairs` does this).
    pub fn from_pairs(pairs: &[SentencePair], vocab: &Vocab) -> SentenceBatch {
        assert!(!pairs.is_empty(), "batch of zero pairs");
        let size = pairs.len();
        let src_len = pairs.iter().map(|p| p.source.len()).max().unwrap();
        let tgt_len = pairs.iter().map(|p| p.target.len() - 1).max().unwrap();

        let mut batch = SentenceBatch {
            size,
            src_len,
            tgt_len,
            source_ids: Vec::with_capacity(size),
            source_ext_ids: Vec::with_capacity(size),
            source_mask: Vec::with_capacity(size),
            oov_tokens: Vec::with_capacity(size),
            decoder_input_ids: Vec::with_capacity(size),
            target_ext_ids: Vec::with_capacity(size),
            target_mask: Vec::with_capacity(size),
            max_oov: 0,
        };

        for pair in pairs {
            let mut oov: Vec<String> = Vec::new();
            let mut ids = Vec::with_capacity(src_len);
            let mut ext = Vec::with_capacity(src_len);
            let mut mask = Vec::with_capacity(src_len);
            for token in &pair.source {
                let id = vocab.encode(token);
                ids.push(id);
                if id == UNK && token != UNK_TOKEN {
                    let slot = match oov.iter().position(|t| t == token) {
                        Some(s) => s,
                        None => {
                            oov.push(token.clone());
                            oov.len() - 1
                        }
                    };
                    ext.push(vocab.size() + slot);
                } else {
                    ext.push(id);
                }
                mask.push(1.0);
            }
            while ids.len() < src_len {
                ids.push(PAD);
                ext.push(PAD);
                mask.push(0.0);
            }

            // decoder reads target[..len-1], predicts target[1..]
            let steps = pair.target.len() - 1;
            let mut dec_in = Vec::with_capacity(tgt_len);
            let mut tgt_out = Vec::with_capacity(tgt_len);
            let mut tmask = Vec::with_capacity(tgt_len);
            for t in 0..steps {
                dec_in.push(vocab.encode(&pair.target[t]));
                let next = &pair.target[t + 1];
                let base = vocab.encode(next);
                let ext_id = if base == UNK && next != UNK_TOKEN {
                    match oov.iter().position(|tok| tok == next) {
                        Some(slot) => vocab.size() + slot,
                        None => UNK,
                    }
                } else {
                    base
                };
                tgt_out.push(ext_id);
                tmask.push(1.0);
            }
            while dec_in.len() < tgt_len {
                dec_in.push(PAD);
                tgt_out.push(PAD);
                tmask.push(0.0);
            }

            batch.max_oov = batch.max_oov.max(oov.len());
            batch.source_ids.push(ids);
            batch.source_ext_ids.push(ext);
            batch.source_mask.push(mask);
            batch.oov_tokens.push(oov);
            batch.decoder_input_ids.push(dec_in);
            batch.target_ext_ids.push(tgt_out);
            batch.target_mask.push(tmask);
        }
        batch
    }

    /// Width of the extended distribution for this batch.
    pub fn ext_width(&self, vocab: &Vocab) -> usize {
        vocab.size() + self.max_oov
    }
}

/// Surface form for an extended id of one batch element; `None` when the id
/// points past the element's own OOV list.
pub fn ext_id_to_token<'a>(vocab: &'a Vocab, oov: &'a [String], id: usize) -> Option<&'a str> {
    if id < vocab.size() {
        Some(vocab.decode(id))
    } else {
        oov.get(id - vocab.size()).map(String::as_str)
    }
}

/// Shuffles pairs (seeded), groups them into length-sorted chunks of
/// `batch_size` to limit padding, then shuffles the chunk order. Same seed,
/// same pairs → identical batches.
pub fn make_batches(
    pairs: &[SentencePair],
    vocab: &Vocab,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<SentenceBatch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    if pairs.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(rng);
    // stable sort: the shuffle decides order within equal source lengths
    order.sort_by_key(|&i| pairs[i].source.len());
    let mut chunks: Vec<&[usize]> = order.chunks(batch_size).collect();
    chunks.shuffle(rng);
    chunks
        .into_iter()
        .map(|chunk| {
            let members: Vec<SentencePair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            SentenceBatch::from_pairs(&members, vocab)
        })
        .collect()
}
