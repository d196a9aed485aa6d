//! Pre-norm transformer encoder whose input layer sums token, position and
//! timestamp embeddings.

use numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TslmError};
use crate::input::{TimestampedInput, TIMESTAMP_VOCAB};

fn default_timestamp_vocab() -> usize {
    TIMESTAMP_VOCAB
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_width: usize,
    /// Filled in from the vocabulary when training starts.
    #[serde(default)]
    pub vocab_size: usize,
    pub max_len: usize,
    #[serde(default = "default_timestamp_vocab")]
    pub timestamp_vocab: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            ff_width: 64,
            vocab_size: 0,
            max_len: 128,
            timestamp_vocab: TIMESTAMP_VOCAB,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TslmError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.ff_width == 0 {
            return bad("d_model, n_heads, n_layers and ff_width must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.timestamp_vocab != TIMESTAMP_VOCAB {
            return bad(format!("timestamp_vocab must be {TIMESTAMP_VOCAB}, got {}", self.timestamp_vocab));
        }
        if self.vocab_size < 4 {
            return bad(format!("vocab_size {} cannot hold the reserved tokens", self.vocab_size));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Whether stochastic layers are active for a forward pass.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub attn_norm: (ParamId, ParamId),
    pub heads: Vec<HeadParams>,
    pub ff_norm: (ParamId, ParamId),
    pub ff_in: (ParamId, ParamId),
    pub ff_out: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub timestamp_embedding: ParamId,
    pub layers: Vec<LayerParams>,
    pub final_norm: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `T x d_model` token representations.
    pub hidden: Var,
    /// One `T x T` attention matrix per (layer, head), layer-major.
    pub attention: Vec<Var>,
}

impl EncoderOutput {
    /// Representation of the first (`[CLS]`) token as a `1 x d_model` row.
    pub fn cls(&self, tape: &mut Tape) -> Result<Var> {
        Ok(tape.gather_rows(self.hidden, &[0])?)
    }
}

const EMBEDDING_STD: f64 = 0.1;

fn linear_init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Result<Tensor> {
    Ok(Tensor::randn(vec![fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng)?)
}

fn norm_pair(store: &mut ParamStore, prefix: &str, d: usize) -> Result<(ParamId, ParamId)> {
    let gain = store.register(format!("{prefix}.gain"), Tensor::full(vec![d], 1.0)?)?;
    let bias = store.register(format!("{prefix}.bias"), Tensor::zeros(vec![d])?)?;
    Ok((gain, bias))
}

impl Encoder {
    /// Registers all encoder parameters. The timestamp table starts at zero,
    /// so a fresh encoder is step-agnostic until training moves it.
    pub fn new(config: EncoderConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let dh = config.head_dim();
        let token_embedding = store.register(
            "encoder.token_embedding",
            Tensor::randn(vec![config.vocab_size, d], EMBEDDING_STD, rng)?,
        )?;
        let position_embedding = store.register(
            "encoder.position_embedding",
            Tensor::randn(vec![config.max_len, d], EMBEDDING_STD, rng)?,
        )?;
        let timestamp_embedding = store.register(
            "encoder.timestamp_embedding",
            Tensor::zeros(vec![config.timestamp_vocab, d])?,
        )?;

        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("encoder.layer{l}");
            let attn_norm = norm_pair(store, &format!("{p}.attn_norm"), d)?;
            let mut heads = Vec::with_capacity(config.n_heads);
            for h in 0..config.n_heads {
                let hp = format!("{p}.head{h}");
                heads.push(HeadParams {
                    query: store.register(format!("{hp}.query"), linear_init(rng, d, dh)?)?,
                    key: store.register(format!("{hp}.key"), linear_init(rng, d, dh)?)?,
                    value: store.register(format!("{hp}.value"), linear_init(rng, d, dh)?)?,
                    // fan-in is d across all heads
                    output: store.register(
                        format!("{hp}.output"),
                        Tensor::randn(vec![dh, d], 1.0 / (d as f64).sqrt(), rng)?,
                    )?,
                });
            }
            let ff_norm = norm_pair(store, &format!("{p}.ff_norm"), d)?;
            let ff_in = (
                store.register(format!("{p}.ff_in.weight"), linear_init(rng, d, config.ff_width)?)?,
                store.register(format!("{p}.ff_in.bias"), Tensor::zeros(vec![config.ff_width])?)?,
            );
            let ff_out = (
                store.register(format!("{p}.ff_out.weight"), linear_init(rng, config.ff_width, d)?)?,
                store.register(format!("{p}.ff_out.bias"), Tensor::zeros(vec![d])?)?,
            );
            layers.push(LayerParams { attn_norm, heads, ff_norm, ff_in, ff_out });
        }
        let final_norm = norm_pair(store, "encoder.final_norm", d)?;
        Ok(Encoder {
            config,
            token_embedding,
            position_embedding,
            timestamp_embedding,
            layers,
            final_norm,
        })
    }

    /// `token_emb[id_t] + pos_emb[t] + timestamp_emb[ts_t]` for every token.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, input: &TimestampedInput) -> Result<Var> {
        let len = input.len();
        if len > self.config.max_len {
            return Err(TslmError::SequenceTooLong { len, max: self.config.max_len });
        }
        let tok = tape.param(store, self.token_embedding);
        let pos = tape.param(store, self.position_embedding);
        let ts = tape.param(store, self.timestamp_embedding);
        let tok = tape.gather_rows(tok, &input.layout.token_ids)?;
        let pos = tape.gather_rows(pos, &input.layout.position_ids)?;
        let ts = tape.gather_rows(ts, &input.timestamp_ids)?;
        let sum = tape.add(tok, pos)?;
        Ok(tape.add(sum, ts)?)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        embedded: Var,
        mode: &mut Mode,
    ) -> Result<EncoderOutput> {
        let shape = tape.shape(embedded).to_vec();
        let len = shape[0];
        if len > self.config.max_len {
            return Err(TslmError::SequenceTooLong { len, max: self.config.max_len });
        }
        let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
        let mut x = embedded;
        let mut attention = Vec::new();
        for layer in &self.layers {
            let h = norm(tape, store, x, layer.attn_norm)?;
            let mut mixed: Option<Var> = None;
            for head in &layer.heads {
                let wq = tape.param(store, head.query);
                let wk = tape.param(store, head.key);
                let wv = tape.param(store, head.value);
                let wo = tape.param(store, head.output);
                let q = tape.matmul(h, wq)?;
                let k = tape.matmul(h, wk)?;
                let v = tape.matmul(h, wv)?;
                let kt = tape.transpose(k)?;
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, scale);
                let probs = tape.softmax_last(scores)?;
                attention.push(probs);
                let ctx = tape.matmul(probs, v)?;
                // concat(heads) · W_o == Σ_h head_h · W_o[rows of h]
                let out = tape.matmul(ctx, wo)?;
                mixed = Some(match mixed {
                    Some(acc) => tape.add(acc, out)?,
                    None => out,
                });
            }
            let attn = dropout(tape, mixed.expect("n_heads > 0"), self.config.dropout, mode)?;
            x = tape.add(x, attn)?;

            let h = norm(tape, store, x, layer.ff_norm)?;
            let w1 = tape.param(store, layer.ff_in.0);
            let b1 = tape.param(store, layer.ff_in.1);
            let w2 = tape.param(store, layer.ff_out.0);
            let b2 = tape.param(store, layer.ff_out.1);
            let f = tape.matmul(h, w1)?;
            let f = tape.add_row(f, b1)?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2)?;
            let f = tape.add_row(f, b2)?;
            let f = dropout(tape, f, self.config.dropout, mode)?;
            x = tape.add(x, f)?;
        }
        let hidden = norm(tape, store, x, self.final_norm)?;
        Ok(EncoderOutput { hidden, attention })
    }
}

fn norm(tape: &mut Tape, store: &ParamStore, x: Var, (gain, bias): (ParamId, ParamId)) -> Result<Var> {
    let g = tape.param(store, gain);
    let b = tape.param(store, bias);
    Ok(tape.layer_norm(x, g, b)?)
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: &mut Mode) -> Result<Var> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mask = (0..tape.value(x).len())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            Ok(tape.mul_const(x, mask)?)
        }
        _ => Ok(x),
    }
}
