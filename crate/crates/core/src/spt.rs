//! Soft prompt parameter sets and the prompt training loop.
//!
//! A prompt set owns up to two trainable matrices: rows prepended to the
//! encoder features and rows inserted before the decoder's special prefix.
//! Training touches nothing else; the base model participates in every
//! forward pass as frozen leaves, so gradients flow through it into the
//! prompts without ever producing an update for its parameters.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::hashing::Fnv64;
use crate::lapt::{prompt_encoder_forward, LaptParams};
use crate::model::{teacher_loss, BaseModel, Forward, ParamMap};
use crate::optim::Adam;
use crate::rng::Rng;
use crate::synthdata::Utterance;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    Encoder,
    Decoder,
    Entire,
}

impl PromptMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::Encoder => "encoder",
            PromptMode::Decoder => "decoder",
            PromptMode::Entire => "entire",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(PromptMode::Encoder),
            "decoder" => Ok(PromptMode::Decoder),
            "entire" => Ok(PromptMode::Entire),
            other => Err(Error::InvalidArgument(format!("unknown prompt mode '{other}'"))),
        }
    }

    pub fn uses_encoder(&self) -> bool {
        matches!(self, PromptMode::Encoder | PromptMode::Entire)
    }

    pub fn uses_decoder(&self) -> bool {
        matches!(self, PromptMode::Decoder | PromptMode::Entire)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    /// Registry identity ("shared" or the owning language tag).
    pub id: String,
    pub mode: PromptMode,
    /// Owning language tag, or "shared".
    pub owner: String,
    pub enc_prompt: Option<Tensor>,
    pub dec_prompt: Option<Tensor>,
    pub lapt: Option<LaptParams>,
}

impl PromptSet {
    /// Initialize prompts by copying uniformly sampled rows of the frozen
    /// embedding matrix. Context limits are checked here so an impossible
    /// length fails at construction, not at the first forward pass.
    pub fn init(
        id: &str,
        owner: &str,
        mode: PromptMode,
        n_enc: usize,
        n_dec: usize,
        seed: u64,
        model: &BaseModel,
    ) -> Result<Self> {
        let cfg = &model.config;
        if mode.uses_encoder() {
            if n_enc == 0 {
                return Err(Error::InvalidArgument("encoder prompt length 0".into()));
            }
            if n_enc + 1 > cfg.enc_ctx {
                return Err(Error::ContextOverflow {
                    what: "encoder prompt".to_string(),
                    needed: n_enc + 1,
                    limit: cfg.enc_ctx,
                });
            }
        }
        if mode.uses_decoder() {
            if n_dec == 0 {
                return Err(Error::InvalidArgument("decoder prompt length 0".into()));
            }
            // prompt + 4 specials + at least one generated token
            if n_dec + 4 + 1 > cfg.dec_ctx {
                return Err(Error::ContextOverflow {
                    what: "decoder prompt".to_string(),
                    needed: n_dec + 4 + 1,
                    limit: cfg.dec_ctx,
                });
            }
        }

        let mut rng = Rng::new(seed).fork("prompt-init");
        let embedding = model.embedding();
        let e = cfg.embed_dim;
        let mut sample_rows = |n: usize| -> Tensor {
            let mut data = Vec::with_capacity(n * e);
            for _ in 0..n {
                let row = rng.next_below(cfg.vocab_size);
                data.extend_from_slice(embedding.row(row));
            }
            Tensor::matrix(n, e, data).expect("sampled prompt rows")
        };

        Ok(PromptSet {
            id: id.to_string(),
            owner: owner.to_string(),
            mode,
            enc_prompt: mode.uses_encoder().then(|| sample_rows(n_enc)),
            dec_prompt: mode.uses_decoder().then(|| sample_rows(n_dec)),
            lapt: None,
        })
    }

    pub fn n_enc(&self) -> usize {
        self.enc_prompt.as_ref().map(|t| t.rows()).unwrap_or(0)
    }

    pub fn n_dec(&self) -> usize {
        self.dec_prompt.as_ref().map(|t| t.rows()).unwrap_or(0)
    }

    /// Prompt-matrix parameters plus any attached language-aware parameters
    /// for the given active tags.
    pub fn to_param_map(&self, active_tags: &BTreeSet<String>) -> ParamMap {
        let mut map = ParamMap::new();
        if let Some(p) = &self.enc_prompt {
            map.insert("prompt.enc".into(), p.clone());
        }
        if let Some(p) = &self.dec_prompt {
            map.insert("prompt.dec".into(), p.clone());
        }
        if let Some(lapt) = &self.lapt {
            lapt.collect_params(&mut map, active_tags);
        }
        map
    }

    /// Write trained values back after an optimization run.
    pub fn absorb_param_map(&mut self, map: &ParamMap) {
        if let Some(t) = map.get("prompt.enc") {
            self.enc_prompt = Some(t.clone());
        }
        if let Some(t) = map.get("prompt.dec") {
            self.dec_prompt = Some(t.clone());
        }
        if let Some(lapt) = &mut self.lapt {
            lapt.absorb_params(map);
        }
    }

    /// Count of stored prompt parameters (soft prompts plus any language-aware
    /// attachment), for the bookkeeping reports.
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        if let Some(p) = &self.enc_prompt {
            n += p.numel();
        }
        if let Some(p) = &self.dec_prompt {
            n += p.numel();
        }
        if let Some(lapt) = &self.lapt {
            n += lapt.parameter_count();
        }
        n
    }

    /// FNV over the serialized-relevant content; used by isolation audits.
    pub fn content_hash(&self) -> u64 {
        let mut h = Fnv64::new();
        h.update(self.id.as_bytes());
        h.update(self.owner.as_bytes());
        h.update(self.mode.as_str().as_bytes());
        for t in [&self.enc_prompt, &self.dec_prompt].into_iter().flatten() {
            h.update_f64_bits(t.data());
        }
        if let Some(lapt) = &self.lapt {
            lapt.hash_into(&mut h);
        }
        h.finish()
    }

    /// Compose the model-facing inputs: `[P, proj(X)]` for the encoder and
    /// `[P', embed(g)]` for the decoder prefix. X and E are read, never
    /// written; absent prompts leave the corresponding side untouched.
    pub fn apply(
        &self,
        model: &BaseModel,
        features: &Tensor,
        lang_token: usize,
    ) -> Result<(Tensor, Tensor)> {
        let cfg = &model.config;
        let l = features.rows();
        if self.n_enc() + l > cfg.enc_ctx {
            return Err(Error::ContextOverflow {
                what: "encoder input".to_string(),
                needed: self.n_enc() + l,
                limit: cfg.enc_ctx,
            });
        }
        if self.n_dec() + 4 > cfg.dec_ctx {
            return Err(Error::ContextOverflow {
                what: "decoder prefix".to_string(),
                needed: self.n_dec() + 4,
                limit: cfg.dec_ctx,
            });
        }

        let proj = frontend_projection(model, features)?;
        let enc_input = match &self.enc_prompt {
            Some(p) => vstack(&[p, &proj]),
            None => proj,
        };

        let embedding = model.embedding();
        let mut g_rows = Vec::new();
        for tok in cfg.special_prefix(lang_token) {
            g_rows.extend_from_slice(embedding.row(tok));
        }
        let g_mat = Tensor::matrix(4, cfg.embed_dim, g_rows)?;
        let dec_prefix = match &self.dec_prompt {
            Some(p) => vstack(&[p, &g_mat]),
            None => g_mat,
        };
        Ok((enc_input, dec_prefix))
    }
}

/// The frontend projection `X @ W + b` as plain values.
pub fn frontend_projection(model: &BaseModel, features: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new(true);
    let x = tape.leaf(features)?;
    let w = tape.leaf(&model.params()["frontend.w"])?;
    let b = tape.leaf(&model.params()["frontend.b"])?;
    let wx = tape.matmul(x, w)?;
    let out = tape.add(wx, b)?;
    Ok(tape.tensor(out))
}

fn vstack(parts: &[&Tensor]) -> Tensor {
    let cols = parts[0].cols();
    let rows = parts.iter().map(|t| t.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for t in parts {
        data.extend_from_slice(t.data());
    }
    Tensor::matrix(rows, cols, data).expect("stacked rows")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            learning_rate,
            epochs,
            batch_size,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed,
        }
    }

    pub fn from_section(s: &crate::config::TrainSection) -> Self {
        TrainConfig::new(s.learning_rate, s.epochs, s.batch_size, s.seed)
    }

    pub fn optimizer(&self) -> Adam {
        let mut adam = Adam::new(self.learning_rate);
        adam.beta1 = self.beta1;
        adam.beta2 = self.beta2;
        adam.eps = self.eps;
        adam
    }
}

/// Node handles for one utterance's prompt material on a tape.
pub(crate) struct PromptNodes {
    pub enc_rows: Vec<NodeId>,
    pub dec_prompt: Option<NodeId>,
    pub override_row: Option<NodeId>,
    pub n_dec_rows: usize,
}

/// Registers prompt parameters once per tape and resolves per-utterance
/// material (language prompt rows, embedding override) for a tag.
pub(crate) struct PromptGraph<'a> {
    prompt_set: &'a PromptSet,
    trainable: bool,
    enc_node: Option<NodeId>,
    dec_node: Option<NodeId>,
    pe_nodes: Option<[NodeId; 4]>,
    override_nodes: BTreeMap<String, NodeId>,
    source_nodes: BTreeMap<String, NodeId>,
}

impl<'a> PromptGraph<'a> {
    pub fn new(prompt_set: &'a PromptSet, trainable: bool) -> Self {
        PromptGraph {
            prompt_set,
            trainable,
            enc_node: None,
            dec_node: None,
            pe_nodes: None,
            override_nodes: BTreeMap::new(),
            source_nodes: BTreeMap::new(),
        }
    }

    fn register(&mut self, tape: &mut Tape, name: &str, t: &Tensor) -> Result<NodeId> {
        if self.trainable {
            tape.param(name, t)
        } else {
            tape.leaf(t)
        }
    }

    /// Prompt nodes for an utterance of `tag`. Shared prompt matrices are
    /// registered once; per-language attachment rows are registered on first
    /// use of the tag.
    pub fn for_tag(&mut self, tape: &mut Tape, tag: &str) -> Result<PromptNodes> {
        let set = self.prompt_set;
        if self.enc_node.is_none() {
            if let Some(p) = &set.enc_prompt {
                self.enc_node = Some(self.register(tape, "prompt.enc", p)?);
            }
        }
        if self.dec_node.is_none() {
            if let Some(p) = &set.dec_prompt {
                self.dec_node = Some(self.register(tape, "prompt.dec", p)?);
            }
        }

        let mut enc_rows = Vec::new();
        let mut override_row = None;
        if let Some(lapt) = &set.lapt {
            if self.pe_nodes.is_none() {
                self.pe_nodes = Some([
                    self.register(tape, "lapt.pe.w1", &lapt.encoder.w1)?,
                    self.register(tape, "lapt.pe.b1", &lapt.encoder.b1)?,
                    self.register(tape, "lapt.pe.w2", &lapt.encoder.w2)?,
                    self.register(tape, "lapt.pe.b2", &lapt.encoder.b2)?,
                ]);
            }
            let binding = lapt.binding(tag)?;
            if !self.source_nodes.contains_key(tag) {
                // the seed embedding is conditioning, not a trainable parameter
                let src = tape.leaf(&binding.source_embedding)?;
                self.source_nodes.insert(tag.to_string(), src);
                let ov = self.register(
                    tape,
                    &format!("lapt.lang.{tag}.embed_row"),
                    &binding.embed_row,
                )?;
                self.override_nodes.insert(tag.to_string(), ov);
            }
            let [w1, b1, w2, b2] = self.pe_nodes.unwrap();
            let lp = prompt_encoder_forward(tape, w1, b1, w2, b2, self.source_nodes[tag])?;
            let lp_rows = if lapt.n_lp == 1 {
                lp
            } else {
                tape.concat_rows(&vec![lp; lapt.n_lp])?
            };
            enc_rows.push(lp_rows);
            override_row = Some(self.override_nodes[tag]);
        }
        if let Some(enc) = self.enc_node {
            enc_rows.push(enc);
        }
        Ok(PromptNodes {
            enc_rows,
            dec_prompt: self.dec_node,
            override_row,
            n_dec_rows: set.n_dec(),
        })
    }
}

/// Teacher-forced loss of one utterance under a prompt configuration.
pub(crate) fn utterance_loss(
    tape: &mut Tape,
    fwd: &mut Forward,
    nodes: &PromptNodes,
    model: &BaseModel,
    utt: &Utterance,
    lang_token: usize,
) -> Result<NodeId> {
    let enc = fwd.encode(tape, &utt.features, &nodes.enc_rows)?;
    let prefix = fwd.special_prefix(tape, lang_token, nodes.override_row)?;
    let logits = fwd.decoder(tape, nodes.dec_prompt, prefix, &utt.transcript, enc)?;
    teacher_loss(
        tape,
        logits,
        nodes.n_dec_rows,
        &utt.transcript,
        model.config.specials.eot,
    )
}

/// Deterministic keyed visit order, used for epoch shuffling and seeded
/// sampling without replacement.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut keyed: Vec<(u64, usize)> = (0..len)
        .map(|i| {
            let mut h = Fnv64::new();
            h.update(&seed.to_le_bytes());
            h.update(&(epoch as u64).to_le_bytes());
            h.update(&(i as u64).to_le_bytes());
            (h.finish(), i)
        })
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, i)| i).collect()
}

pub(crate) fn divergence_error(step: usize, params: &ParamMap) -> Error {
    let norms: Vec<String> = params
        .iter()
        .map(|(k, t)| format!("{k}={:.3e}", t.norm()))
        .collect();
    Error::NonFinite {
        context: format!("training step {step}"),
        diagnostics: Some(format!("parameter norms: {}", norms.join(", "))),
    }
}

/// Train the prompt parameters (and any language-aware attachment) against a
/// frozen base model. Returns per-epoch mean training loss.
pub fn train_prompts(
    prompt_set: &mut PromptSet,
    corpus: &[Utterance],
    model: &BaseModel,
    lang_tokens: &BTreeMap<String, usize>,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if !model.is_frozen() {
        return Err(Error::InvalidArgument(
            "prompt training requires a frozen base model".to_string(),
        ));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".to_string()));
    }
    for utt in corpus {
        if !lang_tokens.contains_key(&utt.tag) {
            return Err(Error::UnknownLanguage(utt.tag.clone()));
        }
    }
    let active_tags: BTreeSet<String> = corpus.iter().map(|u| u.tag.clone()).collect();
    let mut params = prompt_set.to_param_map(&active_tags);
    let mut adam = cfg.optimizer();
    let base_hash = model.content_hash();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(corpus.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            // working set: current parameter values for this step
            let mut working = prompt_set.clone();
            working.absorb_param_map(&params);

            let mut tape = Tape::new(true);
            let mut fwd = Forward::frozen(model);
            let mut graph = PromptGraph::new(&working, true);
            let mut total: Option<NodeId> = None;
            for &idx in chunk {
                let utt = &corpus[idx];
                let nodes = graph.for_tag(&mut tape, &utt.tag)?;
                let loss =
                    utterance_loss(&mut tape, &mut fwd, &nodes, model, utt, lang_tokens[&utt.tag])?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let mean = tape.scale(total.expect("nonempty batch"), 1.0 / chunk.len() as f64)?;
            let loss_value = tape.data(mean)[0];
            if !loss_value.is_finite() {
                return Err(divergence_error(step, &params));
            }
            epoch_loss += loss_value * chunk.len() as f64;

            let grads = tape.backward(mean)?;
            adam.step(&mut params, &grads)?;
            step += 1;
        }
        history.push(epoch_loss / corpus.len() as f64);
    }

    debug_assert_eq!(model.content_hash(), base_hash);
    prompt_set.absorb_param_map(&params);
    Ok(history)
}
