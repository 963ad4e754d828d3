//! Two-layer LSTM encoder–decoder with additive attention and a copy gate.
//!
//! One decode step produces four distributions: attention weights over the
//! source, a generation distribution over the vocabulary, a scalar gate
//! p_g, and the final mixture over the *extended* vocabulary
//! (base vocab + per-sentence OOV slots):
//!
//! ```text
//! p_final[y] = p_g · p_vocab[y] + (1 − p_g) · Σ_{i : src_ext[i] = y} alpha[i]
//! ```
//!
//! so rare tokens can be copied straight from the source instead of being
//! collapsed to UNK. The architecture ops (`lstm_cell`, `additive_attention`,
//! `generation_head`, `copy_gate`, `final_distribution`) are standalone
//! tape-level functions; [`Model`] wires named parameters into them.

pub mod decode;

use std::rc::Rc;

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{SentenceBatch, Vocab, UNK};
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::sharing::LayerGroup;
use crate::tensor::{Tape, Tensor, Var};

/// Both the encoder and decoder stack exactly two LSTM layers.
pub const NUM_LAYERS: usize = 2;

/// Scale of the uniform weight initialization.
const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub embedding_size: usize,
    pub vocab_size: usize,
    /// Feed the source right-to-left. The encoder is unidirectional; this
    /// knob flips its direction without touching batch layout or attention.
    pub reverse_source: bool,
}

impl ModelConfig {
    /// Production defaults: hidden 256, embedding 128, left-to-right.
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            hidden_size: 256,
            embedding_size: 128,
            vocab_size,
            reverse_source: false,
        }
    }

    /// Small dimensions for tests and toy runs.
    pub fn toy(vocab_size: usize, hidden: usize, embedding: usize) -> Self {
        ModelConfig {
            hidden_size: hidden,
            embedding_size: embedding,
            vocab_size,
            reverse_source: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.embedding_size == 0 {
            return Err(Error::Config(format!(
                "model sizes must be positive: hidden {}, embedding {}",
                self.hidden_size, self.embedding_size
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocab size must cover the 4 specials, got {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Creates one task's parameters: weights ~ U(−0.1, 0.1) from the given
/// stream, biases zero. Insertion order is fixed so identical seeds give
/// bitwise-identical stores.
pub fn init_store(task: &str, config: &ModelConfig, rng: &mut ChaCha8Rng) -> ParameterStore {
    let (h, e, v) = (config.hidden_size, config.embedding_size, config.vocab_size);
    let dist = Uniform::new(-INIT_RANGE, INIT_RANGE);
    let mut store = ParameterStore::new(task);
    let mut weight = |store: &mut ParameterStore, name: &str, group, shape: &[usize]| {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
        store.insert(name, group, Tensor::from_values(shape, values).with_grad());
    };
    let zeros = |store: &mut ParameterStore, name: &str, group, shape: &[usize]| {
        store.insert(name, group, Tensor::zeros(shape).with_grad());
    };

    weight(&mut store, "embed", LayerGroup::Embedding, &[v, e]);

    weight(&mut store, "enc1.w_ih", LayerGroup::EncL1, &[e, 4 * h]);
    weight(&mut store, "enc1.w_hh", LayerGroup::EncL1, &[h, 4 * h]);
    zeros(&mut store, "enc1.bias", LayerGroup::EncL1, &[4 * h]);
    weight(&mut store, "enc2.w_ih", LayerGroup::EncL2, &[h, 4 * h]);
    weight(&mut store, "enc2.w_hh", LayerGroup::EncL2, &[h, 4 * h]);
    zeros(&mut store, "enc2.bias", LayerGroup::EncL2, &[4 * h]);

    weight(&mut store, "dec1.w_ih", LayerGroup::DecL1, &[e, 4 * h]);
    weight(&mut store, "dec1.w_hh", LayerGroup::DecL1, &[h, 4 * h]);
    zeros(&mut store, "dec1.bias", LayerGroup::DecL1, &[4 * h]);
    weight(&mut store, "dec2.w_ih", LayerGroup::DecL2, &[h, 4 * h]);
    weight(&mut store, "dec2.w_hh", LayerGroup::DecL2, &[h, 4 * h]);
    zeros(&mut store, "dec2.bias", LayerGroup::DecL2, &[4 * h]);

    weight(&mut store, "attn.w_query", LayerGroup::Attention, &[h, h]);
    weight(&mut store, "attn.w_keys", LayerGroup::Attention, &[h, h]);
    weight(&mut store, "attn.v", LayerGroup::Attention, &[h, 1]);
    zeros(&mut store, "attn.bias", LayerGroup::Attention, &[h]);

    weight(&mut store, "out.w_merge", LayerGroup::OutputProjection, &[2 * h, h]);
    weight(&mut store, "out.w_proj", LayerGroup::OutputProjection, &[h, v]);

    weight(&mut store, "gate.w_context", LayerGroup::CopyGate, &[h, 1]);
    weight(&mut store, "gate.w_state", LayerGroup::CopyGate, &[h, 1]);
    weight(&mut store, "gate.w_input", LayerGroup::CopyGate, &[e, 1]);
    zeros(&mut store, "gate.bias", LayerGroup::CopyGate, &[1]);

    store
}

/// One LSTM layer's weights as tape variables. Gate blocks are laid out
/// `[input, forget, cell-candidate, output]` along the 4H axis.
#[derive(Clone, Copy)]
pub struct LstmWeights<'t> {
    /// `[input_size, 4H]`
    pub w_ih: Var<'t>,
    /// `[H, 4H]`
    pub w_hh: Var<'t>,
    /// `[4H]`
    pub bias: Var<'t>,
}

/// Standard LSTM cell: i,f,o = σ(·), g = tanh(·), c′ = f⊙c + i⊙g,
/// h′ = o⊙tanh(c′). All of `x [B,in]`, `h [B,H]`, `c [B,H]` are row-major.
pub fn lstm_cell<'t>(
    x: Var<'t>,
    h: Var<'t>,
    c: Var<'t>,
    w: &LstmWeights<'t>,
) -> (Var<'t>, Var<'t>) {
    let hidden = h.cols();
    let gates = x.matmul(w.w_ih).add(h.matmul(w.w_hh)).add_bias(w.bias);
    let i = gates.slice_cols(0, hidden).sigmoid();
    let f = gates.slice_cols(hidden, hidden).sigmoid();
    let g = gates.slice_cols(2 * hidden, hidden).tanh();
    let o = gates.slice_cols(3 * hidden, hidden).sigmoid();
    let c_next = f.mul(c).add(i.mul(g));
    let h_next = o.mul(c_next.tanh());
    (h_next, c_next)
}

/// Additive attention over precomputed keys.
///
/// `query_proj` is W_a·s_t `[B,H]`; `keys[i]` is U_a·h_i + b_a `[B,H]`;
/// `states[i]` is h_i `[B,H]`; `v` is `[H,1]`; `mask[b][i]` is 1.0 on real
/// source positions. Returns (alpha `[B,S]`, context `[B,H]`): alpha is a
/// masked softmax of e_{t,i} = vᵀtanh(query + key_i), exactly zero on pads,
/// and the context is Σ_i alpha_i·h_i.
pub fn additive_attention<'t>(
    tape: &'t Tape,
    query_proj: Var<'t>,
    states: &[Var<'t>],
    keys: &[Var<'t>],
    v: Var<'t>,
    mask: &[Vec<f64>],
) -> (Var<'t>, Var<'t>) {
    assert!(!states.is_empty(), "attention over an empty source");
    assert_eq!(states.len(), keys.len(), "states/keys length mismatch");
    let scores: Vec<Var<'t>> = keys
        .iter()
        .map(|key| query_proj.add(*key).tanh().matmul(v))
        .collect();
    let e = tape.concat_cols(&scores); // [B, S]
    let flat_mask: Vec<f64> = mask.iter().flat_map(|row| row.iter().copied()).collect();
    let alpha = e.masked_softmax(Rc::new(flat_mask));
    let mut context: Option<Var<'t>> = None;
    for (i, state) in states.iter().enumerate() {
        let weight = alpha.slice_cols(i, 1); // [B,1] — numel B, one scale per row
        let term = state.scale_rows(weight);
        context = Some(match context {
            Some(acc) => acc.add(term),
            None => term,
        });
    }
    (alpha, context.expect("states nonempty"))
}

/// Merges context and state through tanh, then projects to a vocabulary
/// softmax: s′ = tanh(W_c·[c_t, s_t]), p_vocab = softmax(W_s·s′).
pub fn generation_head<'t>(
    tape: &'t Tape,
    context: Var<'t>,
    s_t: Var<'t>,
    w_merge: Var<'t>,
    w_proj: Var<'t>,
) -> Var<'t> {
    let merged = tape.concat_cols(&[context, s_t]).matmul(w_merge).tanh();
    merged.matmul(w_proj).softmax()
}

/// Generation-vs-copy gate: p_g = σ(W_g·c_t + U_g·s_t + V_g·d_t + b_g),
/// a `[B,1]` column strictly inside (0,1).
pub fn copy_gate<'t>(
    context: Var<'t>,
    s_t: Var<'t>,
    d_t: Var<'t>,
    w_context: Var<'t>,
    w_state: Var<'t>,
    w_input: Var<'t>,
    bias: Var<'t>,
) -> Var<'t> {
    context
        .matmul(w_context)
        .add(s_t.matmul(w_state))
        .add(d_t.matmul(w_input))
        .add_bias(bias)
        .sigmoid()
}

/// Mixes generation and copy mass over the extended vocabulary:
/// `p_final[y] = p_g·p_vocab[y] + (1−p_g)·Σ_{i: ext_ids[i]=y} alpha[i]`.
///
/// `ext_ids` is row-major `[B·S]` aligned with `alpha [B,S]`; `width` must
/// be at least the vocab size and exceed every id. Repeated source tokens
/// accumulate their attention mass on one id. OOV slots (ids ≥ vocab size)
/// receive copy mass only.
pub fn final_distribution<'t>(
    tape: &'t Tape,
    p_vocab: Var<'t>,
    alpha: Var<'t>,
    p_g: Var<'t>,
    ext_ids: &[usize],
    width: usize,
) -> Var<'t> {
    let vocab_size = p_vocab.cols();
    assert!(
        width >= vocab_size,
        "extended width {width} smaller than vocab {vocab_size}"
    );
    for &id in ext_ids {
        assert!(id < width, "extended id {id} out of range for width {width}");
    }
    let rows = p_vocab.rows();
    let gen = p_vocab.scale_rows(p_g);
    let gen_wide = if width == vocab_size {
        gen
    } else {
        let zeros = tape.zeros(&[rows, width - vocab_size]);
        tape.concat_cols(&[gen, zeros])
    };
    let keep = p_g.affine(-1.0, 1.0); // 1 − p_g
    let copy = alpha
        .scatter_add_cols(Rc::new(ext_ids.to_vec()), width)
        .scale_rows(keep);
    gen_wide.add(copy)
}

/// Teacher-forced per-step distributions, exported as plain values for
/// inspection and tests.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// `[B, vocab]` row-major.
    pub p_vocab: Vec<f64>,
    /// `[B, S]` row-major; zero on padded positions.
    pub alpha: Vec<f64>,
    /// `[B]`.
    pub p_g: Vec<f64>,
    /// `[B, width]` row-major.
    pub p_final: Vec<f64>,
    pub width: usize,
}

struct Staged<'t> {
    embed: Var<'t>,
    enc: [LstmWeights<'t>; NUM_LAYERS],
    dec: [LstmWeights<'t>; NUM_LAYERS],
    attn_w_query: Var<'t>,
    attn_w_keys: Var<'t>,
    attn_v: Var<'t>,
    attn_bias: Var<'t>,
    out_w_merge: Var<'t>,
    out_w_proj: Var<'t>,
    gate_w_context: Var<'t>,
    gate_w_state: Var<'t>,
    gate_w_input: Var<'t>,
    gate_bias: Var<'t>,
}

/// Encoder artifacts one decode step needs.
struct Encoded<'t> {
    /// Top-layer state per source position, each `[B,H]`.
    states: Vec<Var<'t>>,
    /// Attention keys U_a·h_i + b_a per position, each `[B,H]`.
    keys: Vec<Var<'t>>,
    /// Final (h, c) per layer, for decoder initialization.
    finals: [(Var<'t>, Var<'t>); NUM_LAYERS],
}

/// A config plus the parameter store that realizes it. The store must have
/// been produced by [`init_store`] with the same config (or loaded from a
/// checkpoint of one).
pub struct Model<'a> {
    config: &'a ModelConfig,
    store: &'a ParameterStore,
}

impl<'a> Model<'a> {
    pub fn new(config: &'a ModelConfig, store: &'a ParameterStore) -> Model<'a> {
        Model { config, store }
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    fn stage<'t>(&self, tape: &'t Tape) -> Staged<'t> {
        let p = |name: &str| -> Var<'t> {
            tape.param(
                self.store
                    .get(name)
                    .unwrap_or_else(|| panic!("store {:?} missing parameter {name:?}", self.store.task())),
            )
        };
        let lstm = |prefix: &str| LstmWeights {
            w_ih: p(&format!("{prefix}.w_ih")),
            w_hh: p(&format!("{prefix}.w_hh")),
            bias: p(&format!("{prefix}.bias")),
        };
        Staged {
            embed: p("embed"),
            enc: [lstm("enc1"), lstm("enc2")],
            dec: [lstm("dec1"), lstm("dec2")],
            attn_w_query: p("attn.w_query"),
            attn_w_keys: p("attn.w_keys"),
            attn_v: p("attn.v"),
            attn_bias: p("attn.bias"),
            out_w_merge: p("out.w_merge"),
            out_w_proj: p("out.w_proj"),
            gate_w_context: p("gate.w_context"),
            gate_w_state: p("gate.w_state"),
            gate_w_input: p("gate.w_input"),
            gate_bias: p("gate.bias"),
        }
    }

    /// Runs the encoder over the batch. Padded positions never alter the
    /// running state (mask blending), so each row's final state is the state
    /// at its true end regardless of padding, in both directions.
    fn encode<'t>(&self, tape: &'t Tape, staged: &Staged<'t>, batch: &SentenceBatch) -> Encoded<'t> {
        assert!(batch.src_len >= 1, "encoding an empty source");
        let (b, s, h) = (batch.size, batch.src_len, self.config.hidden_size);

        let mut layer_h = [tape.zeros(&[b, h]), tape.zeros(&[b, h])];
        let mut layer_c = [tape.zeros(&[b, h]), tape.zeros(&[b, h])];
        let mut states: Vec<Option<Var<'t>>> = vec![None; s];

        let order: Vec<usize> = if self.config.reverse_source {
            (0..s).rev().collect()
        } else {
            (0..s).collect()
        };
        for t in order {
            let ids: Vec<usize> = (0..b).map(|r| batch.source_ids[r][t]).collect();
            let x0 = staged.embed.lookup(Rc::new(ids));
            let m_col: Vec<f64> = (0..b).map(|r| batch.source_mask[r][t]).collect();
            let m = tape.constant(&[b], m_col.clone());
            let inv: Vec<f64> = m_col.iter().map(|v| 1.0 - v).collect();
            let inv = tape.constant(&[b], inv);

            let mut x = x0;
            for layer in 0..NUM_LAYERS {
                let (h_new, c_new) = lstm_cell(x, layer_h[layer], layer_c[layer], &staged.enc[layer]);
                // freeze state on padded rows
                layer_h[layer] = h_new.scale_rows(m).add(layer_h[layer].scale_rows(inv));
                layer_c[layer] = c_new.scale_rows(m).add(layer_c[layer].scale_rows(inv));
                x = layer_h[layer];
            }
            states[t] = Some(layer_h[NUM_LAYERS - 1]);
        }
        let states: Vec<Var<'t>> = states.into_iter().map(Option::unwrap).collect();
        let keys: Vec<Var<'t>> = states
            .iter()
            .map(|st| st.matmul(staged.attn_w_keys).add_bias(staged.attn_bias))
            .collect();
        Encoded {
            states,
            keys,
            finals: [
                (layer_h[0], layer_c[0]),
                (layer_h[1], layer_c[1]),
            ],
        }
    }

    /// One decoder step from `(h, c)` per layer, given the previous token's
    /// embedding `d_t [B,E]`. Returns the four distributions plus the next
    /// recurrent state.
    #[allow(clippy::type_complexity)]
    fn decode_step<'t>(
        &self,
        tape: &'t Tape,
        staged: &Staged<'t>,
        enc: &Encoded<'t>,
        source_mask: &[Vec<f64>],
        ext_ids_flat: &[usize],
        width: usize,
        d_t: Var<'t>,
        state: [(Var<'t>, Var<'t>); NUM_LAYERS],
    ) -> (StepVars<'t>, [(Var<'t>, Var<'t>); NUM_LAYERS]) {
        let mut x = d_t;
        let mut next = state;
        for layer in 0..NUM_LAYERS {
            let (h_new, c_new) = lstm_cell(x, next[layer].0, next[layer].1, &staged.dec[layer]);
            next[layer] = (h_new, c_new);
            x = h_new;
        }
        let s_t = next[NUM_LAYERS - 1].0;
        let query = s_t.matmul(staged.attn_w_query);
        let (alpha, context) =
            additive_attention(tape, query, &enc.states, &enc.keys, staged.attn_v, source_mask);
        let p_vocab = generation_head(tape, context, s_t, staged.out_w_merge, staged.out_w_proj);
        let p_g = copy_gate(
            context,
            s_t,
            d_t,
            staged.gate_w_context,
            staged.gate_w_state,
            staged.gate_w_input,
            staged.gate_bias,
        );
        let p_final = final_distribution(tape, p_vocab, alpha, p_g, ext_ids_flat, width);
        (
            StepVars {
                p_vocab,
                alpha,
                p_g,
                p_final,
            },
            next,
        )
    }

    /// Teacher-forced full pass: the scalar loss (mean −log p over real
    /// target tokens per sentence, then mean over the batch) ready for
    /// backward. Probabilities are floored at 1e-12 before the log; each
    /// floor hit bumps the tape's clamp counter.
    pub fn forward_loss<'t>(&self, tape: &'t Tape, batch: &SentenceBatch, vocab_size: usize) -> Var<'t> {
        let outputs = self.teacher_forced(tape, batch, vocab_size);
        let picked: Vec<Var<'t>> = outputs
            .steps
            .iter()
            .enumerate()
            .map(|(t, step)| {
                let ids: Vec<usize> = (0..batch.size).map(|b| batch.target_ext_ids[b][t]).collect();
                step.p_final.gather_cols(Rc::new(ids))
            })
            .collect();
        nll_reduce(tape, &picked, &batch.target_mask)
    }

    /// The per-step distributions under teacher forcing, as plain values.
    pub fn run_steps(&self, batch: &SentenceBatch, vocab_size: usize) -> Vec<StepOutput> {
        let tape = Tape::inference();
        let outputs = self.teacher_forced(&tape, batch, vocab_size);
        outputs
            .steps
            .iter()
            .map(|s| StepOutput {
                p_vocab: s.p_vocab.values(),
                alpha: s.alpha.values(),
                p_g: s.p_g.values(),
                p_final: s.p_final.values(),
                width: s.p_final.cols(),
            })
            .collect()
    }

    fn teacher_forced<'t>(
        &self,
        tape: &'t Tape,
        batch: &SentenceBatch,
        vocab_size: usize,
    ) -> TeacherOutputs<'t> {
        assert_eq!(
            vocab_size, self.config.vocab_size,
            "vocab size disagrees with model config"
        );
        let staged = self.stage(tape);
        let enc = self.encode(tape, &staged, batch);
        let width = vocab_size + batch.max_oov;
        let ext_flat: Vec<usize> = batch
            .source_ext_ids
            .iter()
            .flat_map(|row| row.iter().copied())
            .collect();
        let mut state = [enc.finals[0], enc.finals[1]];
        let mut steps = Vec::with_capacity(batch.tgt_len);
        for t in 0..batch.tgt_len {
            let ids: Vec<usize> = (0..batch.size)
                .map(|b| batch.decoder_input_ids[b][t])
                .collect();
            let d_t = staged.embed.lookup(Rc::new(ids));
            let (step, next) = self.decode_step(
                tape,
                &staged,
                &enc,
                &batch.source_mask,
                &ext_flat,
                width,
                d_t,
                state,
            );
            state = next;
            steps.push(step);
        }
        TeacherOutputs { steps }
    }
}

struct StepVars<'t> {
    p_vocab: Var<'t>,
    alpha: Var<'t>,
    p_g: Var<'t>,
    p_final: Var<'t>,
}

struct TeacherOutputs<'t> {
    steps: Vec<StepVars<'t>>,
}

/// Reduces per-step picked probabilities `[B,1]` into the scalar loss:
/// token-mean of −log p per row (only where `target_mask` is 1), then mean
/// over rows. Padded positions contribute exactly zero (their probability is
/// replaced by 1 before the log).
pub fn nll_reduce<'t>(tape: &'t Tape, picked: &[Var<'t>], target_mask: &[Vec<f64>]) -> Var<'t> {
    assert!(!picked.is_empty(), "loss over zero decode steps");
    let b = target_mask.len();
    let mut acc: Option<Var<'t>> = None;
    for (t, p) in picked.iter().enumerate() {
        let m_col: Vec<f64> = (0..b).map(|r| target_mask[r][t]).collect();
        let inv: Vec<f64> = m_col.iter().map(|v| 1.0 - v).collect();
        let m = tape.constant(&[b], m_col);
        let inv = tape.constant(&[b, 1], inv);
        let adjusted = p.scale_rows(m).add(inv);
        let log_p = adjusted.log_clamped();
        acc = Some(match acc {
            Some(a) => a.add(log_p),
            None => log_p,
        });
    }
    let lens: Vec<f64> = (0..b)
        .map(|r| {
            let n: f64 = target_mask[r].iter().sum();
            assert!(n > 0.0, "batch row {r} has no real target tokens");
            1.0 / n
        })
        .collect();
    let inv_len = tape.constant(&[b], lens);
    let row_means = acc.unwrap().scale_rows(inv_len);
    row_means.sum().affine(-1.0 / b as f64, 0.0)
}

/// Base-vocabulary id used to embed a previously produced *extended* id:
/// copies of OOV tokens fall back to UNK.
pub fn embedding_id_for(ext_id: usize, vocab: &Vocab) -> usize {
    if ext_id < vocab.size() {
        ext_id
    } else {
        UNK
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentencePair;
    use crate::rng::derive_rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn zero_lstm<'t>(tape: &'t Tape, input: usize, hidden: usize) -> LstmWeights<'t> {
        LstmWeights {
            w_ih: tape.zeros(&[input, 4 * hidden]),
            w_hh: tape.zeros(&[hidden, 4 * hidden]),
            bias: tape.zeros(&[4 * hidden]),
        }
    }

    #[test]
    fn lstm_cell_zero_weights_halves_cell_state() {
        let tape = Tape::new();
        let w = zero_lstm(&tape, 3, 2);
        let x = tape.constant(&[1, 3], vec![0.7, -0.2, 1.1]);
        let h = tape.constant(&[1, 2], vec![0.3, -0.4]);
        let c = tape.constant(&[1, 2], vec![0.8, -1.2]);
        let (h2, c2) = lstm_cell(x, h, c, &w);
        for (got, c0) in c2.values().iter().zip([0.8f64, -1.2]) {
            assert!((got - 0.5 * c0).abs() < 1e-15);
        }
        for (got, c0) in h2.values().iter().zip([0.8f64, -1.2]) {
            assert!((got - 0.5 * (0.5 * c0).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn lstm_cell_zero_everything_stays_zero() {
        let tape = Tape::new();
        let w = zero_lstm(&tape, 2, 2);
        let x = tape.zeros(&[1, 2]);
        let h = tape.zeros(&[1, 2]);
        let c = tape.zeros(&[1, 2]);
        let (h2, c2) = lstm_cell(x, h, c, &w);
        assert_eq!(h2.values(), vec![0.0, 0.0]);
        assert_eq!(c2.values(), vec![0.0, 0.0]);
    }

    #[test]
    fn attention_single_position_is_identity() {
        let tape = Tape::new();
        let query = tape.constant(&[1, 2], vec![0.3, -0.5]);
        let state = tape.constant(&[1, 2], vec![1.5, 2.5]);
        let key = tape.constant(&[1, 2], vec![0.1, 0.2]);
        let v = tape.constant(&[2, 1], vec![0.7, -0.3]);
        let (alpha, context) =
            additive_attention(&tape, query, &[state], &[key], v, &[vec![1.0]]);
        assert_eq!(alpha.values(), vec![1.0]);
        assert_eq!(context.values(), vec![1.5, 2.5]);
    }

    #[test]
    fn attention_identical_states_is_uniform() {
        let tape = Tape::new();
        let query = tape.constant(&[1, 2], vec![0.3, -0.5]);
        let state = tape.constant(&[1, 2], vec![1.0, -1.0]);
        let key = tape.constant(&[1, 2], vec![0.4, 0.6]);
        let v = tape.constant(&[2, 1], vec![0.7, -0.3]);
        let (alpha, context) = additive_attention(
            &tape,
            query,
            &[state, state, state],
            &[key, key, key],
            v,
            &[vec![1.0, 1.0, 1.0]],
        );
        for a in alpha.values() {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
        for (c, s) in context.values().iter().zip([1.0, -1.0]) {
            assert!((c - s).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_two_positions_match_hand_softmax() {
        // H = 1: e_i = v·tanh(q + k_i)
        let tape = Tape::new();
        let (q, v_w) = (0.2, 1.5);
        let (k1, k2) = (0.3, -0.8);
        let (h1v, h2v) = (2.0, -1.0);
        let query = tape.constant(&[1, 1], vec![q]);
        let s1 = tape.constant(&[1, 1], vec![h1v]);
        let s2 = tape.constant(&[1, 1], vec![h2v]);
        let key1 = tape.constant(&[1, 1], vec![k1]);
        let key2 = tape.constant(&[1, 1], vec![k2]);
        let v = tape.constant(&[1, 1], vec![v_w]);
        let (alpha, context) =
            additive_attention(&tape, query, &[s1, s2], &[key1, key2], v, &[vec![1.0, 1.0]]);
        let e1 = v_w * (q + k1).tanh();
        let e2 = v_w * (q + k2).tanh();
        let z = e1.exp() + e2.exp();
        let (a1, a2) = (e1.exp() / z, e2.exp() / z);
        let got = alpha.values();
        assert!((got[0] - a1).abs() < 1e-12);
        assert!((got[1] - a2).abs() < 1e-12);
        assert!((context.values()[0] - (a1 * h1v + a2 * h2v)).abs() < 1e-12);
    }

    #[test]
    fn generation_head_zero_projection_is_uniform() {
        let tape = Tape::new();
        let context = tape.constant(&[1, 2], vec![0.9, -0.1]);
        let s_t = tape.constant(&[1, 2], vec![0.4, 0.2]);
        let w_merge = tape.constant(&[4, 2], vec![0.1; 8]);
        let w_proj = tape.zeros(&[2, 5]);
        let p = generation_head(&tape, context, s_t, w_merge, w_proj);
        for v in p.values() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_head_two_word_hand_case() {
        // H = 1, vocab = 2: s' = tanh(w1·c + w2·s), logits = [a·s', b·s']
        let tape = Tape::new();
        let (c, s) = (0.6, -0.4);
        let (w1, w2) = (0.5, 1.25);
        let (a, b) = (2.0, -1.0);
        let context = tape.constant(&[1, 1], vec![c]);
        let s_t = tape.constant(&[1, 1], vec![s]);
        let w_merge = tape.constant(&[2, 1], vec![w1, w2]);
        let w_proj = tape.constant(&[1, 2], vec![a, b]);
        let p = generation_head(&tape, context, s_t, w_merge, w_proj);
        let sp = (w1 * c + w2 * s).tanh();
        let z = (a * sp).exp() + (b * sp).exp();
        let got = p.values();
        assert!((got[0] - (a * sp).exp() / z).abs() < 1e-12);
        assert!((got[1] - (b * sp).exp() / z).abs() < 1e-12);
    }

    #[test]
    fn copy_gate_zero_weights_is_half_and_saturates_with_bias() {
        let tape = Tape::new();
        let context = tape.constant(&[1, 2], vec![3.0, -1.0]);
        let s_t = tape.constant(&[1, 2], vec![0.5, 0.5]);
        let d_t = tape.constant(&[1, 3], vec![1.0, 2.0, 3.0]);
        let wc = tape.zeros(&[2, 1]);
        let ws = tape.zeros(&[2, 1]);
        let wi = tape.zeros(&[3, 1]);
        let b0 = tape.zeros(&[1]);
        let p = copy_gate(context, s_t, d_t, wc, ws, wi, b0);
        assert!((p.values()[0] - 0.5).abs() < 1e-15);

        let b10 = tape.constant(&[1], vec![10.0]);
        let p_hi = copy_gate(context, s_t, d_t, wc, ws, wi, b10);
        assert!(p_hi.values()[0] > 0.99);
        assert!(p_hi.values()[0] < 1.0);
    }

    #[test]
    fn final_distribution_pure_generation() {
        let tape = Tape::new();
        let p_vocab = tape.constant(&[1, 4], vec![0.1, 0.2, 0.3, 0.4]);
        let alpha = tape.constant(&[1, 2], vec![0.5, 0.5]);
        let p_g = tape.constant(&[1, 1], vec![1.0]);
        let p = final_distribution(&tape, p_vocab, alpha, p_g, &[4, 5], 6);
        let v = p.values();
        assert_eq!(&v[..4], &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(&v[4..], &[0.0, 0.0], "OOV slots carry no generation mass");
    }

    #[test]
    fn final_distribution_pure_copy_single_source() {
        let tape = Tape::new();
        let p_vocab = tape.constant(&[1, 6], vec![1.0 / 6.0; 6]);
        let alpha = tape.constant(&[1, 1], vec![1.0]);
        let p_g = tape.constant(&[1, 1], vec![0.0]);
        let p = final_distribution(&tape, p_vocab, alpha, p_g, &[5], 6);
        let v = p.values();
        assert_eq!(v[5], 1.0);
        assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn final_distribution_hand_mix_with_repeated_ids() {
        let tape = Tape::new();
        let mut pv = vec![0.0; 6];
        pv[0] = 0.5;
        pv[1] = 0.5;
        let p_vocab = tape.constant(&[1, 6], pv);
        let alpha = tape.constant(&[1, 2], vec![0.3, 0.7]);
        let p_g = tape.constant(&[1, 1], vec![0.6]);
        let p = final_distribution(&tape, p_vocab, alpha, p_g, &[0, 0], 6);
        let v = p.values();
        assert!((v[0] - 0.7).abs() < 1e-15, "0.6·0.5 + 0.4·(0.3+0.7) = 0.7");
        assert!((v[1] - 0.3).abs() < 1e-15);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn final_distribution_rejects_bad_extended_id() {
        let tape = Tape::new();
        let p_vocab = tape.constant(&[1, 4], vec![0.25; 4]);
        let alpha = tape.constant(&[1, 1], vec![1.0]);
        let p_g = tape.constant(&[1, 1], vec![0.5]);
        final_distribution(&tape, p_vocab, alpha, p_g, &[9], 6);
    }

    #[test]
    fn nll_uniform_distribution_gives_log_width() {
        let tape = Tape::new();
        let width = 10.0f64;
        let picked = [
            tape.constant(&[2, 1], vec![1.0 / width; 2]),
            tape.constant(&[2, 1], vec![1.0 / width; 2]),
        ];
        let mask = vec![vec![1.0, 1.0], vec![1.0, 0.0]];
        let loss = nll_reduce(&tape, &picked, &mask);
        assert!((loss.scalar() - width.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_perfect_prediction_gives_zero() {
        let tape = Tape::new();
        let picked = [tape.constant(&[2, 1], vec![1.0, 1.0])];
        let mask = vec![vec![1.0], vec![1.0]];
        let loss = nll_reduce(&tape, &picked, &mask);
        assert_eq!(loss.scalar(), 0.0);
        assert_eq!(tape.clamp_hits(), 0);
    }

    #[test]
    fn nll_pads_contribute_nothing_even_with_zero_probability() {
        let tape = Tape::new();
        // second step of row 0 is a pad with probability 0 — must not clamp
        let picked = [
            tape.constant(&[1, 1], vec![0.5]),
            tape.constant(&[1, 1], vec![0.0]),
        ];
        let mask = vec![vec![1.0, 0.0]];
        let loss = nll_reduce(&tape, &picked, &mask);
        assert!((loss.scalar() - 0.5f64.ln().abs()).abs() < 1e-12);
        assert_eq!(tape.clamp_hits(), 0);
    }

    fn toy_setup() -> (Vocab, ModelConfig) {
        let corpus = [toks("the cat sat mat dog ran")];
        let vocab = Vocab::build(corpus.iter(), 50);
        let config = ModelConfig::toy(vocab.size(), 4, 3);
        (vocab, config)
    }

    fn batch_from(vocab: &Vocab, src: &str, tgt: &str) -> SentenceBatch {
        let pair = SentencePair {
            source: toks(src),
            target: {
                let mut t = vec!["<bos>".to_string()];
                t.extend(toks(tgt));
                t.push("<eos>".to_string());
                t
            },
        };
        SentenceBatch::from_pairs(&[pair], vocab)
    }

    #[test]
    fn step_distributions_are_normalized() {
        let (vocab, config) = toy_setup();
        let mut rng = derive_rng(42, "init/main");
        let store = init_store("main", &config, &mut rng);
        let model = Model::new(&config, &store);
        let batch = batch_from(&vocab, "the zorp sat", "the zorp");
        let steps = model.run_steps(&batch, vocab.size());
        assert_eq!(steps.len(), 3);
        for step in &steps {
            assert!((step.p_vocab.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((step.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((step.p_final.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(step.p_g[0] > 0.0 && step.p_g[0] < 1.0);
            assert_eq!(step.width, vocab.size() + 1);
        }
    }

    #[test]
    fn identical_batch_rows_get_identical_outputs() {
        let (vocab, config) = toy_setup();
        let mut rng = derive_rng(7, "init/main");
        let store = init_store("main", &config, &mut rng);
        let model = Model::new(&config, &store);
        let pair = SentencePair {
            source: toks("the cat sat"),
            target: toks("<bos> the cat <eos>"),
        };
        let batch = SentenceBatch::from_pairs(&[pair.clone(), pair], &vocab);
        let steps = model.run_steps(&batch, vocab.size());
        for step in &steps {
            let w = step.width;
            assert_eq!(&step.p_final[..w], &step.p_final[w..2 * w]);
            assert_eq!(step.p_g[0], step.p_g[1]);
        }
    }

    #[test]
    fn loss_is_deterministic_and_finite() {
        let (vocab, config) = toy_setup();
        let mut rng = derive_rng(3, "init/main");
        let store = init_store("main", &config, &mut rng);
        let model = Model::new(&config, &store);
        let batch = batch_from(&vocab, "the cat sat", "the cat");
        let tape1 = Tape::new();
        let l1 = model.forward_loss(&tape1, &batch, vocab.size()).scalar();
        let tape2 = Tape::new();
        let l2 = model.forward_loss(&tape2, &batch, vocab.size()).scalar();
        assert_eq!(l1, l2);
        assert!(l1.is_finite() && l1 > 0.0);
    }

    #[test]
    fn init_store_is_seed_deterministic() {
        let (_, config) = toy_setup();
        let a = init_store("main", &config, &mut derive_rng(1, "init/main"));
        let b = init_store("main", &config, &mut derive_rng(1, "init/main"));
        assert_eq!(a.snapshot(), b.snapshot());
        let c = init_store("main", &config, &mut derive_rng(2, "init/main"));
        assert_ne!(a.snapshot(), c.snapshot());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(10).validate().is_ok());
        assert!(ModelConfig::toy(3, 4, 4).validate().is_err());
        assert!(ModelConfig::toy(10, 0, 4).validate().is_err());
    }
}
