//! Greedy and beam-search decoding.
//!
//! Both searches are generic over a step function `(&state, prev_token) →
//! (log-probs over the extended vocabulary, next state)`, so they can be
//! exercised against hand-enumerable toy tables as well as the full model.
//! Log-probabilities must be ≤ 0 (i.e. come from a distribution); the
//! early-termination rule relies on scores only decreasing as sequences grow.
//!
//! Ties in score are broken toward the lower token id, which makes
//! `beam_search` with width 1 reproduce `greedy` exactly.

use std::rc::Rc;

use crate::corpus::{ext_id_to_token, SentenceBatch, SentencePair, Vocab, BOS, BOS_TOKEN, EOS, EOS_TOKEN, UNK_TOKEN};
use crate::tensor::{Tape, LOG_FLOOR};

use super::{embedding_id_for, Model};

/// A decoded sequence of extended-vocabulary ids, excluding BOS and EOS.
/// `log_prob` includes the terminating EOS when one was produced;
/// `truncated` marks sequences cut off at the length limit instead.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub truncated: bool,
}

/// A decoded sequence restored to surface forms: ids beyond the base
/// vocabulary are replaced by the source token occupying that OOV slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSentence {
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub truncated: bool,
}

fn argmax_lowest_id(log_probs: &[f64]) -> usize {
    assert!(!log_probs.is_empty(), "empty candidate distribution");
    let mut best = 0;
    for (i, &lp) in log_probs.iter().enumerate().skip(1) {
        if lp > log_probs[best] {
            best = i;
        }
    }
    best
}

/// Repeatedly takes the single most likely token until EOS or `max_len`.
pub fn greedy_from_fn<S>(
    init: S,
    bos: usize,
    eos: usize,
    max_len: usize,
    mut step: impl FnMut(&S, usize) -> (Vec<f64>, S),
) -> DecodeResult {
    let mut state = init;
    let mut prev = bos;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let (log_probs, next) = step(&state, prev);
        let choice = argmax_lowest_id(&log_probs);
        log_prob += log_probs[choice];
        if choice == eos {
            return DecodeResult {
                tokens,
                log_prob,
                truncated: false,
            };
        }
        tokens.push(choice);
        prev = choice;
        state = next;
    }
    DecodeResult {
        tokens,
        log_prob,
        truncated: true,
    }
}

struct Hyp<S> {
    state: S,
    prev: usize,
    tokens: Vec<usize>,
    lp: f64,
}

/// Width-limited best-first search. Keeps the `beam` best unfinished
/// prefixes per depth; EOS expansions move to a finished pool without
/// consuming live slots. Returns the best finished hypothesis, or the best
/// live prefix flagged `truncated` when nothing finished within `max_len`.
pub fn beam_from_fn<S: Clone>(
    init: S,
    bos: usize,
    eos: usize,
    beam: usize,
    max_len: usize,
    mut step: impl FnMut(&S, usize) -> (Vec<f64>, S),
) -> DecodeResult {
    assert!(beam >= 1, "beam width must be at least 1");
    let mut live = vec![Hyp {
        state: init,
        prev: bos,
        tokens: Vec::new(),
        lp: 0.0,
    }];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    // The pruning shortcut below is only sound while every step score is a
    // genuine log-probability (≤ 0), so extensions cannot raise a score.
    let mut scores_nonpositive = true;

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut next_states = Vec::with_capacity(live.len());
        // (cumulative lp, token, hyp index) — sorted best-first with ties
        // toward lower token id, then earlier hypothesis.
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (hi, hyp) in live.iter().enumerate() {
            let (log_probs, next) = step(&hyp.state, hyp.prev);
            if log_probs.iter().any(|&l| l > 0.0) {
                scores_nonpositive = false;
            }
            for (token, &l) in log_probs.iter().enumerate() {
                candidates.push((hyp.lp + l, token, hi));
            }
            next_states.push(next);
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("NaN score in beam search")
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        // Scan best-first until the live set refills. EOS candidates met
        // along the way finish; anything ranked below the beam-th surviving
        // prefix is pruned, EOS included — with width 1 this reproduces the
        // greedy choice exactly.
        let mut new_live: Vec<Hyp<S>> = Vec::with_capacity(beam);
        let mut finished_taken = 0;
        for &(lp, token, hi) in &candidates {
            if new_live.len() == beam {
                break;
            }
            if token == eos {
                if finished_taken < beam {
                    finished.push((live[hi].tokens.clone(), lp));
                    finished_taken += 1;
                }
            } else {
                let mut tokens = live[hi].tokens.clone();
                tokens.push(token);
                new_live.push(Hyp {
                    state: next_states[hi].clone(),
                    prev: token,
                    tokens,
                    lp,
                });
            }
        }
        live = new_live;
        if scores_nonpositive && !finished.is_empty() {
            let best_fin = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|h| h.lp).fold(f64::NEG_INFINITY, f64::max);
            if best_fin >= best_live {
                break; // no live prefix can still overtake a finished one
            }
        }
    }

    if let Some(best) = finished.iter().enumerate().max_by(|a, b| {
        a.1 .1
            .partial_cmp(&b.1 .1)
            .expect("NaN score in beam search")
            .then(b.0.cmp(&a.0)) // equal scores: keep the earliest (best-ranked)
    }) {
        return DecodeResult {
            tokens: best.1 .0.clone(),
            log_prob: best.1 .1,
            truncated: false,
        };
    }
    let best = live
        .iter()
        .max_by(|a, b| a.lp.partial_cmp(&b.lp).expect("NaN score in beam search"))
        .expect("beam search lost every hypothesis");
    DecodeResult {
        tokens: best.tokens.clone(),
        log_prob: best.lp,
        truncated: true,
    }
}

enum SearchMode {
    Greedy,
    Beam(usize),
}

impl Model<'_> {
    /// Greedy decode of one tokenized source sentence.
    pub fn greedy(&self, source: &[String], vocab: &Vocab, max_len: usize) -> DecodedSentence {
        self.run_decode(source, vocab, max_len, SearchMode::Greedy)
    }

    /// Beam-search decode of one tokenized source sentence.
    pub fn beam(
        &self,
        source: &[String],
        vocab: &Vocab,
        beam: usize,
        max_len: usize,
    ) -> DecodedSentence {
        self.run_decode(source, vocab, max_len, SearchMode::Beam(beam))
    }

    fn run_decode(
        &self,
        source: &[String],
        vocab: &Vocab,
        max_len: usize,
        mode: SearchMode,
    ) -> DecodedSentence {
        assert!(!source.is_empty(), "decoding an empty source sentence");
        assert_eq!(vocab.size(), self.config().vocab_size, "vocab size disagrees with model config");
        let pair = SentencePair {
            source: source.to_vec(),
            target: vec![BOS_TOKEN.to_string(), EOS_TOKEN.to_string()],
        };
        let batch = SentenceBatch::from_pairs(std::slice::from_ref(&pair), vocab);
        let width = vocab.size() + batch.max_oov;
        let ext_flat: Vec<usize> = batch.source_ext_ids[0].clone();

        let tape = Tape::inference();
        let staged = self.stage(&tape);
        let enc = self.encode(&tape, &staged, &batch);
        let init = [enc.finals[0], enc.finals[1]];

        let step = |state: &_, prev: usize| {
            let base = embedding_id_for(prev, vocab);
            let d_t = staged.embed.lookup(Rc::new(vec![base]));
            let (vars, next) = self.decode_step(
                &tape,
                &staged,
                &enc,
                &batch.source_mask,
                &ext_flat,
                width,
                d_t,
                *state,
            );
            let log_probs: Vec<f64> = vars
                .p_final
                .values()
                .iter()
                .map(|&p| p.max(LOG_FLOOR).ln())
                .collect();
            (log_probs, next)
        };

        let result = match mode {
            SearchMode::Greedy => greedy_from_fn(init, BOS, EOS, max_len, step),
            SearchMode::Beam(width) => beam_from_fn(init, BOS, EOS, width, max_len, step),
        };
        let tokens = result
            .tokens
            .iter()
            .map(|&id| {
                ext_id_to_token(vocab, &batch.oov_tokens[0], id)
                    .unwrap_or(UNK_TOKEN)
                    .to_string()
            })
            .collect();
        DecodedSentence {
            tokens,
            log_prob: result.log_prob,
            truncated: result.truncated,
        }
    }
}
