//! Layered token encoder that can be run in two halves, plus a per-token
//! linear classifier.
//!
//! Blocks are pre-norm transformer layers. `h^0` is token plus position
//! embedding; block `l` maps `h^{l-1}` to `h^l`. Pad positions are removed
//! from attention by an additive `-1e30` key bias, which makes their weight
//! exactly zero after the softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, ParamStore, Tape, Tensor, Var};
use crate::corpus::{SubtokenizedSentence, Vocab};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e30;

/// Architecture hyperparameters; vocabulary and tag counts come from data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            heads: 2,
            d_ff: 128,
            layers: 4,
            max_len: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub config: EncoderConfig,
    pub vocab: usize,
    pub num_tags: usize,
}

impl EncoderDims {
    pub fn head_dim(&self) -> usize {
        self.config.d_model / self.config.heads
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.d_model == 0 || c.heads == 0 || c.d_ff == 0 || c.max_len < 3 {
            return Err(Error::Config(format!("degenerate encoder dimensions {c:?}")));
        }
        if !c.d_model.is_multiple_of(c.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                c.d_model, c.heads
            )));
        }
        if self.vocab == 0 || self.num_tags == 0 {
            return Err(Error::Config("empty vocabulary or tag set".into()));
        }
        Ok(())
    }
}

/// Encoder (θ) and classifier (φ) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub store: ParamStore,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, values).expect("finite").requires_grad()
}

fn block_name(l: usize, part: &str) -> String {
    format!("block{l}.{part}")
}

const BLOCK_PARTS: [&str; 14] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo",
    "attn.bo", "ln2.gain", "ln2.bias", "ffn.w1", "ffn.b1",
];

/// Deterministic initialization: projections uniform in `±1/sqrt(fan_in)`,
/// embeddings uniform in `±0.02`, biases zero, norm gains one.
pub fn init_params(dims: EncoderDims, seed: u64) -> Result<EncoderParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = dims.config;
    let (d, ff) = (c.d_model, c.d_ff);
    let proj = 1.0 / (d as f64).sqrt();
    let mut store = ParamStore::new();
    store.insert("embed.token", uniform(&mut rng, vec![dims.vocab, d], 0.02))?;
    store.insert("embed.position", uniform(&mut rng, vec![c.max_len, d], 0.02))?;
    for l in 1..=c.layers {
        for part in BLOCK_PARTS {
            let t = match part {
                "ln1.gain" | "ln2.gain" => Tensor::filled(vec![d], 1.0).requires_grad(),
                "ffn.w1" => uniform(&mut rng, vec![d, ff], proj),
                "ffn.b1" => Tensor::zeros(vec![ff]).requires_grad(),
                p if p.starts_with("attn.w") => uniform(&mut rng, vec![d, d], proj),
                _ => Tensor::zeros(vec![d]).requires_grad(),
            };
            store.insert(block_name(l, part), t)?;
        }
        store.insert(block_name(l, "ffn.w2"), uniform(&mut rng, vec![ff, d], 1.0 / (ff as f64).sqrt()))?;
        store.insert(block_name(l, "ffn.b2"), Tensor::zeros(vec![d]).requires_grad())?;
    }
    store.insert("final_ln.gain", Tensor::filled(vec![d], 1.0).requires_grad())?;
    store.insert("final_ln.bias", Tensor::zeros(vec![d]).requires_grad())?;
    store.insert("classifier.weight", uniform(&mut rng, vec![d, dims.num_tags], proj))?;
    store.insert("classifier.bias", Tensor::zeros(vec![dims.num_tags]).requires_grad())?;
    Ok(EncoderParams { dims, store })
}

impl EncoderParams {
    /// Records every parameter as a leaf; `trainable` controls gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars: Vec<Var> = self
            .store
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone().with_grad(trainable)))
            .collect();
        self.bind_vars(vars).expect("one var per slot")
    }

    /// Builds a binding from one var per store slot, in store order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<Bound> {
        if vars.len() != self.store.len() {
            return Err(Error::Data(format!(
                "{} vars for {} parameters",
                vars.len(),
                self.store.len()
            )));
        }
        let get = |name: &str| vars[self.store.slot(name).expect("parameter present")];
        let blocks = (1..=self.dims.config.layers)
            .map(|l| {
                let g = |p: &str| get(&block_name(l, p));
                BlockVars {
                    ln1_gain: g("ln1.gain"),
                    ln1_bias: g("ln1.bias"),
                    wq: g("attn.wq"),
                    bq: g("attn.bq"),
                    wk: g("attn.wk"),
                    bk: g("attn.bk"),
                    wv: g("attn.wv"),
                    bv: g("attn.bv"),
                    wo: g("attn.wo"),
                    bo: g("attn.bo"),
                    ln2_gain: g("ln2.gain"),
                    ln2_bias: g("ln2.bias"),
                    w1: g("ffn.w1"),
                    b1: g("ffn.b1"),
                    w2: g("ffn.w2"),
                    b2: g("ffn.b2"),
                }
            })
            .collect();
        Ok(Bound {
            dims: self.dims,
            token_embed: get("embed.token"),
            pos_embed: get("embed.position"),
            blocks,
            final_gain: get("final_ln.gain"),
            final_bias: get("final_ln.bias"),
            cls_weight: get("classifier.weight"),
            cls_bias: get("classifier.bias"),
            slots: vars,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = self.dims.config;
        let mut ckpt = Checkpoint {
            params: self.store.clone(),
            ..Default::default()
        };
        for (k, v) in [
            ("d_model", c.d_model),
            ("heads", c.heads),
            ("d_ff", c.d_ff),
            ("layers", c.layers),
            ("max_len", c.max_len),
            ("vocab", self.dims.vocab),
            ("num_tags", self.dims.num_tags),
        ] {
            ckpt.meta.insert(format!("encoder.{k}"), v.to_string());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            ckpt.meta
                .get(&format!("encoder.{k}"))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing encoder.{k}")))
        };
        let dims = EncoderDims {
            config: EncoderConfig {
                d_model: get("d_model")?,
                heads: get("heads")?,
                d_ff: get("d_ff")?,
                layers: get("layers")?,
                max_len: get("max_len")?,
            },
            vocab: get("vocab")?,
            num_tags: get("num_tags")?,
        };
        let reference = init_params(dims, 0)?;
        if reference.store.names() != ckpt.params.names() {
            return Err(Error::Checkpoint("parameter names do not match the encoder layout".into()));
        }
        for ((name, want), got) in reference.store.iter().zip(ckpt.params.tensors()) {
            if want.shape() != got.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        let mut store = ckpt.params.clone();
        for t in store.tensors_mut() {
            *t = t.clone().requires_grad();
        }
        Ok(EncoderParams { dims, store })
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockVars {
    ln1_gain: Var,
    ln1_bias: Var,
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    ln2_gain: Var,
    ln2_bias: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// Parameters recorded on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    dims: EncoderDims,
    token_embed: Var,
    pos_embed: Var,
    blocks: Vec<BlockVars>,
    final_gain: Var,
    final_bias: Var,
    cls_weight: Var,
    cls_bias: Var,
    /// One var per store slot, in store order.
    pub slots: Vec<Var>,
}

impl Bound {
    pub fn dims(&self) -> EncoderDims {
        self.dims
    }
}

/// Token ids and pad flags of one padded sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderInput {
    pub ids: Vec<usize>,
    pub is_pad: Vec<bool>,
}

impl EncoderInput {
    pub fn new(sub: &SubtokenizedSentence, vocab: &Vocab) -> Self {
        EncoderInput {
            ids: vocab.encode(&sub.subtokens),
            is_pad: (0..sub.len()).map(|i| sub.is_pad(i)).collect(),
        }
    }

    fn key_bias(&self) -> Tensor {
        let values = self.is_pad.iter().map(|&p| if p { MASKED } else { 0.0 }).collect();
        Tensor::new(vec![self.ids.len()], values).expect("finite")
    }
}

/// Per-sentence hidden states after `layer` blocks. Each state is
/// `max_len × d_model`; the batch dimension is the vector.
#[derive(Debug, Clone)]
pub struct HiddenStates {
    pub layer: usize,
    pub states: Vec<Var>,
    /// Additive attention key bias per sentence (pad positions masked).
    key_bias: Vec<Var>,
}

impl HiddenStates {
    pub fn batch(&self) -> usize {
        self.states.len()
    }

    /// `(batch, max_len, d_model)`
    pub fn shape(&self, tape: &Tape) -> Result<[usize; 3]> {
        let first = self.states.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        let s = tape.shape(*first)?;
        Ok([self.states.len(), s[0], s[1]])
    }

    /// `λ·self + (1-λ)·other`, keeping this batch's attention masks.
    pub fn interpolate(&self, tape: &mut Tape, other: &HiddenStates, lambdas: &[f64]) -> Result<HiddenStates> {
        if self.layer != other.layer {
            return Err(Error::Data(format!(
                "cannot mix hidden states of layers {} and {}",
                self.layer, other.layer
            )));
        }
        if self.batch() != other.batch() || lambdas.len() != self.batch() {
            return Err(Error::Data(format!(
                "batch sizes differ: {} anchors, {} partners, {} ratios",
                self.batch(),
                other.batch(),
                lambdas.len()
            )));
        }
        let mut states = Vec::with_capacity(self.batch());
        for ((&h, &hp), &lambda) in self.states.iter().zip(&other.states).zip(lambdas) {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::domain("interpolate", format!("ratio {lambda} outside [0, 1]")));
            }
            let a = tape.scale(h, lambda)?;
            let b = tape.scale(hp, 1.0 - lambda)?;
            states.push(tape.add(a, b)?);
        }
        Ok(HiddenStates {
            layer: self.layer,
            states,
            key_bias: self.key_bias.clone(),
        })
    }
}

/// Classifier output per sentence, each `max_len × C`.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub logits: Vec<Var>,
    pub probs: Vec<Var>,
}

fn layer_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = tape.layer_norm_rows(x, LN_EPS)?;
    let n = tape.mul_row(n, gain)?;
    tape.add_row(n, bias)
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn block(tape: &mut Tape, dims: &EncoderDims, p: &BlockVars, h: Var, key_bias: Var) -> Result<Var> {
    let heads = dims.config.heads;
    let hd = dims.head_dim();
    let x = layer_norm(tape, h, p.ln1_gain, p.ln1_bias)?;
    let q = affine(tape, x, p.wq, p.bq)?;
    let k = affine(tape, x, p.wk, p.bk)?;
    let v = affine(tape, x, p.wv, p.bv)?;
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = tape.slice(q, 1, head * hd, hd)?;
        let kh = tape.slice(k, 1, head * hd, hd)?;
        let vh = tape.slice(v, 1, head * hd, hd)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt())?;
        let scores = tape.add_row(scores, key_bias)?;
        let weights = tape.softmax_rows(scores)?;
        outs.push(tape.matmul(weights, vh)?);
    }
    let attn = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    let attn = affine(tape, attn, p.wo, p.bo)?;
    let h = tape.add(h, attn)?;

    let x = layer_norm(tape, h, p.ln2_gain, p.ln2_bias)?;
    let f = affine(tape, x, p.w1, p.b1)?;
    let f = tape.relu(f)?;
    let f = affine(tape, f, p.w2, p.b2)?;
    tape.add(h, f)
}

fn run_blocks(tape: &mut Tape, bound: &Bound, h: HiddenStates, upto: usize) -> Result<HiddenStates> {
    let mut states = h.states;
    for l in h.layer + 1..=upto {
        let p = &bound.blocks[l - 1];
        for (s, &bias) in states.iter_mut().zip(&h.key_bias) {
            *s = block(tape, &bound.dims, p, *s, bias)?;
        }
    }
    Ok(HiddenStates {
        layer: upto,
        states,
        key_bias: h.key_bias,
    })
}

/// Embeds the batch and applies blocks `1..=m`.
pub fn forward_lower(tape: &mut Tape, bound: &Bound, inputs: &[EncoderInput], m: usize) -> Result<HiddenStates> {
    let layers = bound.dims.config.layers;
    if m > layers {
        return Err(Error::Config(format!("mix layer {m} outside 0..={layers}")));
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut key_bias = Vec::with_capacity(inputs.len());
    for input in inputs {
        let n = input.ids.len();
        if n > bound.dims.config.max_len {
            return Err(Error::Truncation {
                len: n,
                max_len: bound.dims.config.max_len,
            });
        }
        if input.is_pad.len() != n {
            return Err(Error::Data("pad flags and ids differ in length".into()));
        }
        let tok = tape.gather_rows(bound.token_embed, &input.ids)?;
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(bound.pos_embed, &positions)?;
        states.push(tape.add(tok, pos)?);
        key_bias.push(tape.constant(input.key_bias()));
    }
    run_blocks(
        tape,
        bound,
        HiddenStates {
            layer: 0,
            states,
            key_bias,
        },
        m,
    )
}

/// Applies blocks `m+1..=L` to hidden states tagged with layer `m`.
pub fn forward_upper(tape: &mut Tape, bound: &Bound, h: HiddenStates, m: usize) -> Result<HiddenStates> {
    if h.layer != m {
        return Err(Error::Data(format!("hidden states are at layer {}, expected {m}", h.layer)));
    }
    let layers = bound.dims.config.layers;
    if m > layers {
        return Err(Error::Config(format!("layer {m} outside 0..={layers}")));
    }
    run_blocks(tape, bound, h, layers)
}

/// Final norm, linear projection and row softmax.
pub fn classify(tape: &mut Tape, bound: &Bound, h: &HiddenStates) -> Result<Predictions> {
    let layers = bound.dims.config.layers;
    if h.layer != layers {
        return Err(Error::Data(format!(
            "classifier needs layer {layers} states, got layer {}",
            h.layer
        )));
    }
    let mut logits = Vec::with_capacity(h.batch());
    let mut probs = Vec::with_capacity(h.batch());
    for &s in &h.states {
        let x = layer_norm(tape, s, bound.final_gain, bound.final_bias)?;
        let z = affine(tape, x, bound.cls_weight, bound.cls_bias)?;
        probs.push(tape.softmax_rows(z)?);
        logits.push(z);
    }
    Ok(Predictions { logits, probs })
}

/// Final-layer hidden states (before the classifier norm), as plain tensors.
pub fn encode(params: &EncoderParams, inputs: &[EncoderInput]) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let h = forward_lower(&mut tape, &bound, inputs, params.dims.config.layers)?;
    h.states.iter().map(|&s| tape.tensor(s)).collect()
}

/// Full forward pass to per-token probabilities, as plain tensors.
pub fn predict(params: &EncoderParams, inputs: &[EncoderInput]) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let h = forward_lower(&mut tape, &bound, inputs, params.dims.config.layers)?;
    let preds = classify(&mut tape, &bound, &h)?;
    preds.probs.iter().map(|&p| tape.tensor(p)).collect()
}
