//! Encoder-decoder speech recognizer with a frozen-parameter contract.
//!
//! The model is deliberately small: a linear frontend, pre-norm transformer
//! stacks, learned positional embeddings over the full (prompt-included)
//! sequence, and an output projection tied to the decoder embedding matrix.
//! Prompts enter as extra leading rows; nothing else about the forward pass
//! changes, so a prompt-free call is bit-identical to the pre-expansion model.

use std::collections::{BTreeMap, HashMap};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::hashing::Fnv64;
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub type ParamMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub sot: usize,
    pub task: usize,
    pub no_timestamps: usize,
    pub prev: usize,
    pub eot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub enc_ctx: usize,
    pub dec_ctx: usize,
    pub vocab_size: usize,
    pub specials: SpecialTokens,
    /// (tag, token id) per base language, in training order.
    pub base_languages: Vec<(String, usize)>,
    /// First id handed out to language tokens.
    pub lang_token_base: usize,
}

impl ModelConfig {
    pub fn from_run_config(cfg: &RunConfig) -> Result<Self> {
        let v = cfg.model.vocab_size;
        let specials = SpecialTokens {
            sot: v - 6,
            task: v - 5,
            no_timestamps: v - 4,
            prev: v - 3,
            eot: v - 2,
        };
        let base_languages = cfg
            .base_language_tags()
            .into_iter()
            .enumerate()
            .map(|(i, tag)| (tag, cfg.model.lang_token_base + i))
            .collect();
        let mc = ModelConfig {
            embed_dim: cfg.model.embed_dim,
            feature_dim: cfg.model.feature_dim,
            heads: cfg.model.heads,
            enc_layers: cfg.model.enc_layers,
            dec_layers: cfg.model.dec_layers,
            enc_ctx: cfg.model.enc_ctx,
            dec_ctx: cfg.model.dec_ctx,
            vocab_size: v,
            specials,
            base_languages,
            lang_token_base: cfg.model.lang_token_base,
        };
        mc.validate()?;
        Ok(mc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.dec_ctx < 5 {
            return Err(Error::Config(format!("dec_ctx {} below 4 + 1", self.dec_ctx)));
        }
        let s = &self.specials;
        let mut ids = vec![s.sot, s.task, s.no_timestamps, s.prev, s.eot];
        for (_, id) in &self.base_languages {
            ids.push(*id);
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &ids {
            if *id >= self.vocab_size || !seen.insert(*id) {
                return Err(Error::Config(format!(
                    "special/language token id {id} duplicated or outside vocab {}",
                    self.vocab_size
                )));
            }
        }
        if self.base_languages.is_empty() {
            return Err(Error::Config("at least one base language required".into()));
        }
        Ok(())
    }

    pub fn base_language_token_ids(&self) -> Vec<usize> {
        self.base_languages.iter().map(|(_, id)| *id).collect()
    }

    pub fn base_language_tags(&self) -> Vec<String> {
        self.base_languages.iter().map(|(t, _)| t.clone()).collect()
    }

    pub fn language_token(&self, tag: &str) -> Option<usize> {
        self.base_languages
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, id)| *id)
    }

    /// Token id for the next expanded language, given how many exist already.
    pub fn allocate_language_token(&self, existing_expanded: usize) -> Result<usize> {
        let id = self.lang_token_base + self.base_languages.len() + existing_expanded;
        if id >= self.specials.sot {
            return Err(Error::InvalidArgument(
                "language token space exhausted".to_string(),
            ));
        }
        Ok(id)
    }

    /// The four conditioning tokens: sot, language, task, no-timestamps.
    pub fn special_prefix(&self, lang_token: usize) -> [usize; 4] {
        [
            self.specials.sot,
            lang_token,
            self.specials.task,
            self.specials.no_timestamps,
        ]
    }

    fn mlp_hidden(&self) -> usize {
        4 * self.embed_dim
    }
}

/// Prompt material already resolved to plain tensors for inference.
#[derive(Debug, Clone, Default)]
pub struct ActivePrompts {
    /// Rows prepended to the encoder input, outermost first
    /// (language prompt rows before soft prompt rows).
    pub encoder_rows: Vec<Tensor>,
    /// Rows inserted before the special prefix in the decoder.
    pub decoder_prompt: Option<Tensor>,
    /// Replacement embedding row for the language slot of the prefix.
    pub lang_embed_override: Option<Tensor>,
}

impl ActivePrompts {
    pub fn none() -> Self {
        ActivePrompts::default()
    }

    pub fn encoder_row_count(&self) -> usize {
        self.encoder_rows.iter().map(|t| t.rows()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    /// True when decoding stopped at the context limit instead of eot.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct BaseModel {
    pub config: ModelConfig,
    params: ParamMap,
    frozen: bool,
}

impl BaseModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed).fork("model-init");
        let e = config.embed_dim;
        let d = e / config.heads;
        let h = config.mlp_hidden();
        let std = 0.02;
        let mut p = ParamMap::new();

        p.insert("frontend.w".into(), Tensor::randn(config.feature_dim, e, std, &mut rng));
        p.insert("frontend.b".into(), Tensor::zeros(vec![1, e]));
        p.insert("embed.tokens".into(), Tensor::randn(config.vocab_size, e, std, &mut rng));
        p.insert("enc.pos".into(), Tensor::randn(config.enc_ctx, e, std, &mut rng));
        p.insert("dec.pos".into(), Tensor::randn(config.dec_ctx, e, std, &mut rng));

        let attn = |p: &mut ParamMap, rng: &mut Rng, prefix: String| {
            for head in 0..config.heads {
                p.insert(format!("{prefix}.h{head}.q"), Tensor::randn(e, d, std, rng));
                p.insert(format!("{prefix}.h{head}.k"), Tensor::randn(e, d, std, rng));
                p.insert(format!("{prefix}.h{head}.v"), Tensor::randn(e, d, std, rng));
                p.insert(format!("{prefix}.h{head}.o"), Tensor::randn(d, e, std, rng));
            }
            p.insert(format!("{prefix}.bias"), Tensor::zeros(vec![1, e]));
        };
        let ln = |p: &mut ParamMap, prefix: String| {
            p.insert(format!("{prefix}.g"), Tensor::new(vec![1, e], vec![1.0; e]).unwrap());
            p.insert(format!("{prefix}.b"), Tensor::zeros(vec![1, e]));
        };
        let mlp = |p: &mut ParamMap, rng: &mut Rng, prefix: String| {
            p.insert(format!("{prefix}.w1"), Tensor::randn(e, h, std, rng));
            p.insert(format!("{prefix}.b1"), Tensor::zeros(vec![1, h]));
            p.insert(format!("{prefix}.w2"), Tensor::randn(h, e, std, rng));
            p.insert(format!("{prefix}.b2"), Tensor::zeros(vec![1, e]));
        };

        for i in 0..config.enc_layers {
            ln(&mut p, format!("enc.{i}.ln1"));
            attn(&mut p, &mut rng, format!("enc.{i}.attn"));
            ln(&mut p, format!("enc.{i}.ln2"));
            mlp(&mut p, &mut rng, format!("enc.{i}.mlp"));
        }
        ln(&mut p, "enc.final_ln".to_string());
        for i in 0..config.dec_layers {
            ln(&mut p, format!("dec.{i}.ln1"));
            attn(&mut p, &mut rng, format!("dec.{i}.self"));
            ln(&mut p, format!("dec.{i}.ln2"));
            attn(&mut p, &mut rng, format!("dec.{i}.cross"));
            ln(&mut p, format!("dec.{i}.ln3"));
            mlp(&mut p, &mut rng, format!("dec.{i}.mlp"));
        }
        ln(&mut p, "dec.final_ln".to_string());

        Ok(BaseModel {
            config,
            params: p,
            frozen: false,
        })
    }

    /// Assemble a model from explicit parameters (tests, checkpoint loading).
    pub fn from_params(config: ModelConfig, params: ParamMap) -> Result<Self> {
        config.validate()?;
        Ok(BaseModel {
            config,
            params,
            frozen: false,
        })
    }

    pub fn params(&self) -> &ParamMap {
        &self.params
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Embedding matrix E.
    pub fn embedding(&self) -> &Tensor {
        &self.params["embed.tokens"]
    }

    pub fn embedding_row(&self, token: usize) -> Result<Tensor> {
        let e = self.embedding();
        if token >= e.rows() {
            return Err(Error::InvalidArgument(format!(
                "token id {token} outside embedding table"
            )));
        }
        Ok(e.rows_slice(token, token + 1))
    }

    /// FNV over names, shapes and exact f64 bit patterns of every parameter.
    pub fn content_hash(&self) -> u64 {
        let mut h = Fnv64::new();
        for (name, t) in &self.params {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update(&(d as u64).to_le_bytes());
            }
            h.update_f64_bits(t.data());
        }
        h.finish()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    /// Mutable access for pretraining and the full fine-tune baseline;
    /// refused once frozen.
    pub fn params_mut(&mut self) -> Result<&mut ParamMap> {
        if self.frozen {
            return Err(Error::InvalidArgument(
                "model is frozen; base parameters cannot change".to_string(),
            ));
        }
        Ok(&mut self.params)
    }

    pub fn thawed_clone(&self) -> BaseModel {
        let mut m = self.clone();
        m.frozen = false;
        m
    }

    // ---- inference entry points --------------------------------------------

    /// Greedy decoding: argmax per step (lowest index on ties) until eot or
    /// the decoder context fills up.
    pub fn greedy_decode(
        &self,
        features: &Tensor,
        lang_token: usize,
        prompts: &ActivePrompts,
    ) -> Result<DecodeResult> {
        let mut tape = Tape::new(true);
        let mut fwd = Forward::frozen(self);

        let enc_rows: Vec<NodeId> = prompts
            .encoder_rows
            .iter()
            .map(|t| tape.leaf(t))
            .collect::<Result<_>>()?;
        let enc_states = fwd.encode(&mut tape, features, &enc_rows)?;

        let dec_prompt = prompts
            .decoder_prompt
            .as_ref()
            .map(|t| tape.leaf(t))
            .transpose()?;
        let override_row = prompts
            .lang_embed_override
            .as_ref()
            .map(|t| tape.leaf(t))
            .transpose()?;
        let prefix = fwd.special_prefix(&mut tape, lang_token, override_row)?;

        let n_prompt = dec_prompt.map(|id| tape.shape(id)[0]).unwrap_or(0);
        let budget = self.config.dec_ctx - (n_prompt + 4);
        let mut tokens: Vec<usize> = Vec::new();
        loop {
            let logits = fwd.decoder(&mut tape, dec_prompt, prefix, &tokens, enc_states)?;
            let rows = tape.shape(logits)[0];
            let v = tape.shape(logits)[1];
            let last = &tape.data(logits)[(rows - 1) * v..rows * v];
            let mut best = 0usize;
            for (j, &x) in last.iter().enumerate() {
                if x > last[best] {
                    best = j;
                }
            }
            if best == self.config.specials.eot {
                return Ok(DecodeResult {
                    tokens,
                    truncated: false,
                });
            }
            tokens.push(best);
            if tokens.len() >= budget {
                return Ok(DecodeResult {
                    tokens,
                    truncated: true,
                });
            }
        }
    }

    /// Probability distribution over base languages: run the decoder on the
    /// bare start token, softmax the next-token logits, keep the base language
    /// entries and renormalize to sum 1.
    pub fn identify_language(&self, features: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new(true);
        let mut fwd = Forward::frozen(self);
        let enc_states = fwd.encode(&mut tape, features, &[])?;

        let table = fwd.param(&mut tape, "embed.tokens")?;
        let sot_only = tape.embed(table, &[self.config.specials.sot])?;
        let logits = fwd.decoder_rows(&mut tape, &[sot_only], enc_states)?;

        let v = self.config.vocab_size;
        let row = &tape.data(logits)[..v];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let probs: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let ids = self.config.base_language_token_ids();
        let mass: f64 = ids.iter().map(|&id| probs[id]).sum();
        Ok(ids.iter().map(|&id| probs[id] / mass).collect())
    }
}

/// Per-tape view of the model: registers each parameter once, either as a
/// frozen leaf (prompt training, inference) or as a trainable parameter
/// (pretraining, full fine-tune).
pub struct Forward<'m> {
    model: &'m BaseModel,
    trainable: bool,
    cache: HashMap<String, NodeId>,
}

impl<'m> Forward<'m> {
    pub fn frozen(model: &'m BaseModel) -> Self {
        Forward {
            model,
            trainable: false,
            cache: HashMap::new(),
        }
    }

    pub fn trainable(model: &'m BaseModel) -> Self {
        Forward {
            model,
            trainable: true,
            cache: HashMap::new(),
        }
    }

    pub fn param(&mut self, tape: &mut Tape, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.cache.get(name) {
            return Ok(id);
        }
        let tensor = self
            .model
            .params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model parameter '{name}'")))?;
        let id = if self.trainable {
            tape.param(name, tensor)?
        } else {
            tape.leaf(tensor)?
        };
        self.cache.insert(name.to_string(), id);
        Ok(id)
    }

    /// Encoder pass. `prompt_rows` are prepended before the projected
    /// features; positional embeddings cover the concatenated sequence from
    /// position zero.
    pub fn encode(
        &mut self,
        tape: &mut Tape,
        features: &Tensor,
        prompt_rows: &[NodeId],
    ) -> Result<NodeId> {
        let cfg = &self.model.config;
        if features.cols() != cfg.feature_dim {
            return Err(Error::shape(
                "encode",
                format!(
                    "feature dim {} != configured {}",
                    features.cols(),
                    cfg.feature_dim
                ),
            ));
        }
        let l = features.rows();
        let n: usize = prompt_rows.iter().map(|&id| tape.shape(id)[0]).sum();
        if n + l > cfg.enc_ctx {
            return Err(Error::ContextOverflow {
                what: "encoder input".to_string(),
                needed: n + l,
                limit: cfg.enc_ctx,
            });
        }

        let x = tape.leaf(features)?;
        let w = self.param(tape, "frontend.w")?;
        let b = self.param(tape, "frontend.b")?;
        let proj = tape.matmul(x, w)?;
        let proj = tape.add(proj, b)?;

        let seq = if prompt_rows.is_empty() {
            proj
        } else {
            let mut parts = prompt_rows.to_vec();
            parts.push(proj);
            tape.concat_rows(&parts)?
        };
        let pos_table = self.param(tape, "enc.pos")?;
        let pos = tape.slice_rows(pos_table, 0, n + l)?;
        let mut h = tape.add(seq, pos)?;

        for i in 0..cfg.enc_layers {
            h = self.encoder_layer(tape, i, h)?;
        }
        let g = self.param(tape, "enc.final_ln.g")?;
        let b = self.param(tape, "enc.final_ln.b")?;
        tape.layer_norm(h, g, b, 1e-5)
    }

    fn encoder_layer(&mut self, tape: &mut Tape, i: usize, x: NodeId) -> Result<NodeId> {
        let ln1 = self.layer_norm(tape, &format!("enc.{i}.ln1"), x)?;
        let attn = self.attention(tape, &format!("enc.{i}.attn"), ln1, ln1, false)?;
        let x = tape.add(x, attn)?;
        let ln2 = self.layer_norm(tape, &format!("enc.{i}.ln2"), x)?;
        let ff = self.mlp(tape, &format!("enc.{i}.mlp"), ln2)?;
        tape.add(x, ff)
    }

    /// Embedded special prefix [sot, lang, task, no-timestamps], with an
    /// optional trainable replacement for the language row.
    pub fn special_prefix(
        &mut self,
        tape: &mut Tape,
        lang_token: usize,
        override_row: Option<NodeId>,
    ) -> Result<NodeId> {
        let cfg = &self.model.config;
        if lang_token >= cfg.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "language token {lang_token} outside vocabulary"
            )));
        }
        let table = self.param(tape, "embed.tokens")?;
        match override_row {
            None => tape.embed(table, &cfg.special_prefix(lang_token)),
            Some(row) => {
                if tape.shape(row) != [1, cfg.embed_dim] {
                    return Err(Error::shape(
                        "special-prefix",
                        format!("override row shape {:?}", tape.shape(row)),
                    ));
                }
                let sot = tape.embed(table, &[cfg.specials.sot])?;
                let rest = tape.embed(table, &[cfg.specials.task, cfg.specials.no_timestamps])?;
                tape.concat_rows(&[sot, row, rest])
            }
        }
    }

    /// Decoder pass over [prompt rows, prefix, embedded targets]; returns
    /// next-token logits for every position.
    pub fn decoder(
        &mut self,
        tape: &mut Tape,
        dec_prompt: Option<NodeId>,
        prefix: NodeId,
        targets: &[usize],
        enc_states: NodeId,
    ) -> Result<NodeId> {
        let mut rows: Vec<NodeId> = Vec::new();
        if let Some(p) = dec_prompt {
            rows.push(p);
        }
        rows.push(prefix);
        if !targets.is_empty() {
            let table = self.param(tape, "embed.tokens")?;
            rows.push(tape.embed(table, targets)?);
        }
        self.decoder_rows(tape, &rows, enc_states)
    }

    fn decoder_rows(
        &mut self,
        tape: &mut Tape,
        row_nodes: &[NodeId],
        enc_states: NodeId,
    ) -> Result<NodeId> {
        let cfg = &self.model.config;
        let total: usize = row_nodes.iter().map(|&id| tape.shape(id)[0]).sum();
        if total > cfg.dec_ctx {
            return Err(Error::ContextOverflow {
                what: "decoder input".to_string(),
                needed: total,
                limit: cfg.dec_ctx,
            });
        }
        let seq = if row_nodes.len() == 1 {
            row_nodes[0]
        } else {
            tape.concat_rows(row_nodes)?
        };
        let pos_table = self.param(tape, "dec.pos")?;
        let pos = tape.slice_rows(pos_table, 0, total)?;
        let mut h = tape.add(seq, pos)?;

        for i in 0..cfg.dec_layers {
            let ln1 = self.layer_norm(tape, &format!("dec.{i}.ln1"), h)?;
            let self_attn = self.attention(tape, &format!("dec.{i}.self"), ln1, ln1, true)?;
            let x = tape.add(h, self_attn)?;
            let ln2 = self.layer_norm(tape, &format!("dec.{i}.ln2"), x)?;
            let cross = self.attention(tape, &format!("dec.{i}.cross"), ln2, enc_states, false)?;
            let x = tape.add(x, cross)?;
            let ln3 = self.layer_norm(tape, &format!("dec.{i}.ln3"), x)?;
            let ff = self.mlp(tape, &format!("dec.{i}.mlp"), ln3)?;
            h = tape.add(x, ff)?;
        }
        let g = self.param(tape, "dec.final_ln.g")?;
        let b = self.param(tape, "dec.final_ln.b")?;
        let normed = tape.layer_norm(h, g, b, 1e-5)?;

        // logits tied to the embedding matrix
        let table = self.param(tape, "embed.tokens")?;
        let et = tape.transpose(table)?;
        tape.matmul(normed, et)
    }

    fn layer_norm(&mut self, tape: &mut Tape, prefix: &str, x: NodeId) -> Result<NodeId> {
        let g = self.param(tape, &format!("{prefix}.g"))?;
        let b = self.param(tape, &format!("{prefix}.b"))?;
        tape.layer_norm(x, g, b, 1e-5)
    }

    fn attention(
        &mut self,
        tape: &mut Tape,
        prefix: &str,
        x_q: NodeId,
        x_kv: NodeId,
        causal: bool,
    ) -> Result<NodeId> {
        let cfg = &self.model.config;
        let d = cfg.embed_dim / cfg.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut acc: Option<NodeId> = None;
        for head in 0..cfg.heads {
            let wq = self.param(tape, &format!("{prefix}.h{head}.q"))?;
            let wk = self.param(tape, &format!("{prefix}.h{head}.k"))?;
            let wv = self.param(tape, &format!("{prefix}.h{head}.v"))?;
            let wo = self.param(tape, &format!("{prefix}.h{head}.o"))?;
            let q = tape.matmul(x_q, wq)?;
            let k = tape.matmul(x_kv, wk)?;
            let v = tape.matmul(x_kv, wv)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let scores = if causal {
                tape.causal_mask(scores)?
            } else {
                scores
            };
            let attn = tape.softmax(scores)?;
            let ctx = tape.matmul(attn, v)?;
            let proj = tape.matmul(ctx, wo)?;
            acc = Some(match acc {
                None => proj,
                Some(prev) => tape.add(prev, proj)?,
            });
        }
        let bias = self.param(tape, &format!("{prefix}.bias"))?;
        tape.add(acc.expect("heads >= 1"), bias)
    }

    fn mlp(&mut self, tape: &mut Tape, prefix: &str, x: NodeId) -> Result<NodeId> {
        let w1 = self.param(tape, &format!("{prefix}.w1"))?;
        let b1 = self.param(tape, &format!("{prefix}.b1"))?;
        let w2 = self.param(tape, &format!("{prefix}.w2"))?;
        let b2 = self.param(tape, &format!("{prefix}.b2"))?;
        let h = tape.matmul(x, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.gelu(h)?;
        let h = tape.matmul(h, w2)?;
        tape.add(h, b2)
    }
}

/// Supervised (row, token) pairs for teacher forcing: the transcript tokens
/// and the end-of-transcript token; prompt rows and the special prefix are
/// conditioning, not targets.
pub fn transcript_positions(
    n_prompt_rows: usize,
    transcript: &[usize],
    eot: usize,
) -> Vec<(usize, usize)> {
    let base = n_prompt_rows + 3; // the last special row predicts the first token
    let mut out = Vec::with_capacity(transcript.len() + 1);
    for (j, &tok) in transcript.iter().enumerate() {
        out.push((base + j, tok));
    }
    out.push((base + transcript.len(), eot));
    out
}

/// Mean cross-entropy over the supervised transcript positions.
pub fn teacher_loss(
    tape: &mut Tape,
    logits: NodeId,
    n_prompt_rows: usize,
    transcript: &[usize],
    eot: usize,
) -> Result<NodeId> {
    let positions = transcript_positions(n_prompt_rows, transcript, eot);
    tape.cross_entropy(logits, &positions)
}

/// Pretraining loss: transcript positions plus supervision of the language
/// token at the start-of-transcript position, mirroring how the full-size
/// model learns language identification. `n_prefix_rows` is the number of
/// conditioning rows sitting before the special prefix.
pub fn pretrain_loss(
    tape: &mut Tape,
    logits: NodeId,
    n_prefix_rows: usize,
    transcript: &[usize],
    lang_token: usize,
    eot: usize,
) -> Result<NodeId> {
    let mut positions = vec![(n_prefix_rows, lang_token)];
    positions.extend(transcript_positions(n_prefix_rows, transcript, eot));
    tape.cross_entropy(logits, &positions)
}

#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        feature_dim: 16,
        heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        enc_ctx: 64,
        dec_ctx: 32,
        vocab_size: 32,
        specials: SpecialTokens {
            sot: 26,
            task: 27,
            no_timestamps: 28,
            prev: 29,
            eot: 30,
        },
        base_languages: vec![("base-0".into(), 20), ("base-1".into(), 21)],
        lang_token_base: 20,
    }
}
