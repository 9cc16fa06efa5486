//! A small deterministic post-LN transformer encoder with full layer-state
//! exposure, masked-language-model pretraining, supervised fine-tuning, and
//! a finite-difference gradient oracle.
//!
//! The architecture is the standard encoder stack at desk scale: learned
//! token + position embeddings followed by a layer norm, then N blocks of
//! multi-head self-attention and a GELU feed-forward, each with a residual
//! connection and post-layer-norm. All arithmetic is f64 and every
//! operation is bit-deterministic given its seed.

mod backprop;
mod head;
mod tokenizer;
mod train;

pub use backprop::HeadParams;
pub use head::{parse_head_spec, HeadLayer, HeadSpec};
pub use tokenizer::{
    split_words, tokenize, Vocabulary, CLS, MASK, PAD, RESERVED_TOKENS, SEP, UNK,
};
pub use train::{
    finetune_base, finetune_base_traced, gradient_check, gradient_check_detailed,
    gradient_check_with_head, pretrain_mlm, pretrain_mlm_traced, FineTuneConfig, FinetuneTrace,
    PretrainTrace,
};

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder shape and numeric settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Transformer blocks (the embedding layer is extra, as layer 0).
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Total token-id space, reserved ids included.
    pub vocab_size: usize,
    pub max_tokens: usize,
    /// Variance guard inside layer norm. Zero is permitted and makes layer
    /// norm exactly idempotent, which the degenerate-model tests exploit.
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> EncoderConfig {
        EncoderConfig {
            num_layers: 4,
            hidden_dim: 32,
            num_heads: 4,
            ffn_dim: 64,
            vocab_size: 64,
            max_tokens: 64,
            layer_norm_eps: 1e-12,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Default shape sized to a concrete vocabulary.
    pub fn for_vocab(vocab: &Vocabulary) -> EncoderConfig {
        EncoderConfig {
            vocab_size: vocab.size(),
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_tokens", self.max_tokens),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be ≥ 1")));
            }
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::InvalidParameter(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.vocab_size <= RESERVED_TOKENS {
            return Err(Error::InvalidParameter(format!(
                "vocab_size {} leaves no room after the {} reserved ids",
                self.vocab_size, RESERVED_TOKENS
            )));
        }
        if !self.layer_norm_eps.is_finite() || self.layer_norm_eps < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "layer_norm_eps must be finite and ≥ 0, got {}",
                self.layer_norm_eps
            )));
        }
        if self.max_tokens < 2 {
            return Err(Error::InvalidParameter(
                "max_tokens must fit at least CLS and SEP".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

/// A dense affine map `y = x·Wᵀ + b` with `w` stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub(crate) fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Linear {
        Linear {
            w: uniform_matrix(out_dim, in_dim, rng),
            b: Array1::zeros(out_dim),
        }
    }

    pub(crate) fn zeros(out_dim: usize, in_dim: usize) -> Linear {
        Linear {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    /// Rows of `x` are examples: (T, in) → (T, out).
    pub(crate) fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

/// Layer-norm gain and bias (epsilon comes from the config).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    pub(crate) fn identity(dim: usize) -> LayerNorm {
        LayerNorm {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }
}

/// One transformer block: multi-head attention and feed-forward, each with
/// residual + post-layer-norm.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Block {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln1: LayerNorm,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub ln2: LayerNorm,
}

/// All trainable tensors, in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params {
    /// Token embeddings, vocab_size × hidden.
    pub tok: Array2<f64>,
    /// Position embeddings, max_tokens × hidden.
    pub pos: Array2<f64>,
    pub embed_ln: LayerNorm,
    pub blocks: Vec<Block>,
    /// Masked-token output head, hidden → vocab.
    pub mlm: Linear,
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}

impl Params {
    fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Params {
        let h = config.hidden_dim;
        Params {
            tok: uniform_matrix(config.vocab_size, h, rng),
            pos: uniform_matrix(config.max_tokens, h, rng),
            embed_ln: LayerNorm::identity(h),
            blocks: (0..config.num_layers)
                .map(|_| Block {
                    q: Linear::init(h, h, rng),
                    k: Linear::init(h, h, rng),
                    v: Linear::init(h, h, rng),
                    o: Linear::init(h, h, rng),
                    ln1: LayerNorm::identity(h),
                    ffn1: Linear::init(config.ffn_dim, h, rng),
                    ffn2: Linear::init(h, config.ffn_dim, rng),
                    ln2: LayerNorm::identity(h),
                })
                .collect(),
            mlm: Linear::init(config.vocab_size, h, rng),
        }
    }

    pub(crate) fn zeros(config: &EncoderConfig) -> Params {
        let h = config.hidden_dim;
        let zero_ln = || LayerNorm {
            gain: Array1::zeros(h),
            bias: Array1::zeros(h),
        };
        Params {
            tok: Array2::zeros((config.vocab_size, h)),
            pos: Array2::zeros((config.max_tokens, h)),
            embed_ln: zero_ln(),
            blocks: (0..config.num_layers)
                .map(|_| Block {
                    q: Linear::zeros(h, h),
                    k: Linear::zeros(h, h),
                    v: Linear::zeros(h, h),
                    o: Linear::zeros(h, h),
                    ln1: zero_ln(),
                    ffn1: Linear::zeros(config.ffn_dim, h),
                    ffn2: Linear::zeros(h, config.ffn_dim),
                    ln2: zero_ln(),
                })
                .collect(),
            mlm: Linear::zeros(config.vocab_size, h),
        }
    }

    /// Immutable view of every tensor, in the fixed checkpoint order.
    pub(crate) fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("tok".into(), self.tok.as_slice().expect("standard layout")),
            ("pos".into(), self.pos.as_slice().expect("standard layout")),
            ("embed_ln.gain".into(), self.embed_ln.gain.as_slice().unwrap()),
            ("embed_ln.bias".into(), self.embed_ln.bias.as_slice().unwrap()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let name = |part: &str| format!("block{i}.{part}");
            out.push((name("q.w"), b.q.w.as_slice().unwrap()));
            out.push((name("q.b"), b.q.b.as_slice().unwrap()));
            out.push((name("k.w"), b.k.w.as_slice().unwrap()));
            out.push((name("k.b"), b.k.b.as_slice().unwrap()));
            out.push((name("v.w"), b.v.w.as_slice().unwrap()));
            out.push((name("v.b"), b.v.b.as_slice().unwrap()));
            out.push((name("o.w"), b.o.w.as_slice().unwrap()));
            out.push((name("o.b"), b.o.b.as_slice().unwrap()));
            out.push((name("ln1.gain"), b.ln1.gain.as_slice().unwrap()));
            out.push((name("ln1.bias"), b.ln1.bias.as_slice().unwrap()));
            out.push((name("ffn1.w"), b.ffn1.w.as_slice().unwrap()));
            out.push((name("ffn1.b"), b.ffn1.b.as_slice().unwrap()));
            out.push((name("ffn2.w"), b.ffn2.w.as_slice().unwrap()));
            out.push((name("ffn2.b"), b.ffn2.b.as_slice().unwrap()));
            out.push((name("ln2.gain"), b.ln2.gain.as_slice().unwrap()));
            out.push((name("ln2.bias"), b.ln2.bias.as_slice().unwrap()));
        }
        out.push(("mlm.w".into(), self.mlm.w.as_slice().unwrap()));
        out.push(("mlm.b".into(), self.mlm.b.as_slice().unwrap()));
        out
    }

    /// Mutable view of every tensor, in the same order as [`tensors`].
    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("tok".into(), self.tok.as_slice_mut().expect("standard layout")),
            ("pos".into(), self.pos.as_slice_mut().expect("standard layout")),
            ("embed_ln.gain".into(), self.embed_ln.gain.as_slice_mut().unwrap()),
            ("embed_ln.bias".into(), self.embed_ln.bias.as_slice_mut().unwrap()),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let name = |part: &str| format!("block{i}.{part}");
            out.push((name("q.w"), b.q.w.as_slice_mut().unwrap()));
            out.push((name("q.b"), b.q.b.as_slice_mut().unwrap()));
            out.push((name("k.w"), b.k.w.as_slice_mut().unwrap()));
            out.push((name("k.b"), b.k.b.as_slice_mut().unwrap()));
            out.push((name("v.w"), b.v.w.as_slice_mut().unwrap()));
            out.push((name("v.b"), b.v.b.as_slice_mut().unwrap()));
            out.push((name("o.w"), b.o.w.as_slice_mut().unwrap()));
            out.push((name("o.b"), b.o.b.as_slice_mut().unwrap()));
            out.push((name("ln1.gain"), b.ln1.gain.as_slice_mut().unwrap()));
            out.push((name("ln1.bias"), b.ln1.bias.as_slice_mut().unwrap()));
            out.push((name("ffn1.w"), b.ffn1.w.as_slice_mut().unwrap()));
            out.push((name("ffn1.b"), b.ffn1.b.as_slice_mut().unwrap()));
            out.push((name("ffn2.w"), b.ffn2.w.as_slice_mut().unwrap()));
            out.push((name("ffn2.b"), b.ffn2.b.as_slice_mut().unwrap()));
            out.push((name("ln2.gain"), b.ln2.gain.as_slice_mut().unwrap()));
            out.push((name("ln2.bias"), b.ln2.bias.as_slice_mut().unwrap()));
        }
        out.push(("mlm.w".into(), self.mlm.w.as_slice_mut().unwrap()));
        out.push(("mlm.b".into(), self.mlm.b.as_slice_mut().unwrap()));
        out
    }

    /// SGD step: `self ← self − lr · grads`.
    pub(crate) fn apply_gradients(&mut self, grads: &Params, lr: f64) {
        let g = grads.tensors();
        for ((name, p), (gname, gv)) in self.tensors_mut().into_iter().zip(g) {
            debug_assert_eq!(name, gname);
            for (pi, gi) in p.iter_mut().zip(gv) {
                *pi -= lr * gi;
            }
        }
    }
}

/// The encoder: configuration, vocabulary, and parameters. The vocabulary
/// travels with the model so text operations stay self-contained across
/// checkpoint boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub(crate) params: Params,
}

/// Deterministically initialize an encoder: scaled-uniform linear maps,
/// identity layer norms, zero biases, all drawn from `config.seed`.
pub fn init_encoder(config: EncoderConfig, vocab: Vocabulary) -> Result<EncoderModel> {
    config.validate()?;
    if config.vocab_size != vocab.size() {
        return Err(Error::DimensionMismatch {
            expected: config.vocab_size,
            got: vocab.size(),
            context: "config vocab_size vs vocabulary".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = Params::init(&config, &mut rng);
    Ok(EncoderModel {
        config,
        vocab,
        params,
    })
}

impl EncoderModel {
    /// Tokenize with this model's vocabulary and length limit.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        tokenize(text, &self.vocab, self.config.max_tokens)
    }

    /// Zero all attention and feed-forward weights and biases, keeping
    /// embeddings and layer norms. With `layer_norm_eps = 0` every block
    /// reduces to re-normalizing an already normalized input, so all layer
    /// outputs equal the embedding output; used by diagnostic tests.
    pub fn zero_sublayer_weights(&mut self) {
        for b in &mut self.params.blocks {
            for lin in [&mut b.q, &mut b.k, &mut b.v, &mut b.o, &mut b.ffn1, &mut b.ffn2] {
                lin.w.fill(0.0);
                lin.b.fill(0.0);
            }
        }
    }

    pub(crate) fn validate_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot encode an empty token sequence".into(),
            ));
        }
        if tokens.len() > self.config.max_tokens {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_tokens,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id: bad as usize,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }
}

/// All layer activations for one sequence: `(num_layers + 1) × T × hidden`,
/// index 0 the embedding-layer output, token 0 the CLS position. Token ids
/// ride along so downstream pooling can exclude PAD positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensor {
    pub values: Array3<f64>,
    pub token_ids: Vec<u32>,
}

impl LayerTensor {
    pub fn token_count(&self) -> usize {
        self.values.dim().1
    }

    pub fn hidden_dim(&self) -> usize {
        self.values.dim().2
    }

    /// Extent of the layer axis: the embedding layer plus every
    /// transformer layer (the "12+embed" convention).
    pub fn num_layers(&self) -> usize {
        self.values.dim().0
    }
}

/// Run the encoder over a token sequence, returning every layer's hidden
/// states (embedding layer first). Pure and deterministic.
pub fn encode(model: &EncoderModel, tokens: &[u32]) -> Result<LayerTensor> {
    model.validate_tokens(tokens)?;
    let states = backprop::forward(model, tokens, false)?.layer_outputs;
    let (t, h) = (tokens.len(), model.config.hidden_dim);
    let mut values = Array3::zeros((states.len(), t, h));
    for (l, state) in states.iter().enumerate() {
        values
            .index_axis_mut(ndarray::Axis(0), l)
            .assign(state);
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "encoder output".into(),
                row: i,
            });
        }
    }
    Ok(LayerTensor {
        values,
        token_ids: tokens.to_vec(),
    })
}
