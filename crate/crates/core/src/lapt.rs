//! Language-aware prompt tuning.
//!
//! Step 1 estimates which base language a new language resembles: M feature
//! segments are pushed through language identification and each segment casts
//! one vote for its argmax language. Votes are kept as integer counts so the
//! similarity vector sums to exactly 1 as a rational, with no float drift.
//!
//! Step 2 turns the winning language's pre-trained token embedding into a
//! language prompt via a small trainable encoder, and gives the new language
//! its own decoder token whose embedding row starts as a copy of the similar
//! language's row. The base embedding matrix is never written; the row lives
//! with the prompt parameters.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::hashing::Fnv64;
use crate::model::{ActivePrompts, BaseModel, ParamMap};
use crate::rng::Rng;
use crate::spt::PromptSet;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaptMode {
    /// One prompt set serves every new language.
    Shared,
    /// One prompt set per new language.
    Separate,
}

impl LaptMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LaptMode::Shared => "shared",
            LaptMode::Separate => "separate",
        }
    }

    /// Parses the CLI spelling; "off" maps to None.
    pub fn parse(s: &str) -> Result<Option<Self>> {
        match s {
            "off" => Ok(None),
            "shared" => Ok(Some(LaptMode::Shared)),
            "separate" => Ok(Some(LaptMode::Separate)),
            other => Err(Error::InvalidArgument(format!("unknown lapt mode '{other}'"))),
        }
    }
}

/// Eq.-style similarity: one argmax vote per sampled segment, counts over
/// base languages. `sim_k = counts[k] / m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityVector {
    pub tags: Vec<String>,
    pub counts: Vec<u32>,
    pub m: u32,
}

impl SimilarityVector {
    pub fn new(tags: Vec<String>, counts: Vec<u32>) -> Result<Self> {
        if tags.len() != counts.len() || tags.is_empty() {
            return Err(Error::InvalidArgument(
                "similarity vector needs one count per base language".to_string(),
            ));
        }
        let m: u32 = counts.iter().sum();
        if m == 0 {
            return Err(Error::InvalidArgument("similarity requires M >= 1".to_string()));
        }
        Ok(SimilarityVector { tags, counts, m })
    }

    pub fn sim(&self, k: usize) -> f64 {
        f64::from(self.counts[k]) / f64::from(self.m)
    }

    pub fn sims(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|k| self.sim(k)).collect()
    }

    /// Index of the most similar base language, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = k;
            }
        }
        best
    }

    /// True when the winning vote count is shared by more than one language.
    pub fn is_tie(&self) -> bool {
        let top = self.counts[self.argmax()];
        self.counts.iter().filter(|&&c| c == top).count() > 1
    }

    /// Machine-parseable report.
    pub fn render_report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("m = {}\n", self.m));
        for (k, tag) in self.tags.iter().enumerate() {
            out.push_str(&format!("sim {tag} {:.6}\n", self.sim(k)));
        }
        out.push_str(&format!("most_similar = {}\n", self.tags[self.argmax()]));
        out.push_str(&format!("tie = {}\n", self.is_tie()));
        out
    }
}

/// One vote per posterior row: argmax with lowest-index tie-breaking.
/// Multiplying any row by a positive constant cannot change its vote.
pub fn similarity_from_posteriors(
    tags: &[String],
    posteriors: &[Vec<f64>],
) -> Result<SimilarityVector> {
    if posteriors.is_empty() {
        return Err(Error::InvalidArgument(
            "similarity estimation requires M >= 1 segments".to_string(),
        ));
    }
    let mut counts = vec![0u32; tags.len()];
    for row in posteriors {
        if row.len() != tags.len() {
            return Err(Error::shape(
                "similarity",
                format!("posterior width {} != base languages {}", row.len(), tags.len()),
            ));
        }
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        counts[best] += 1;
    }
    SimilarityVector::new(tags.to_vec(), counts)
}

/// Step 1: language-identify M segments of the new language and tally votes.
pub fn estimate_similarity(model: &BaseModel, segments: &[&Tensor]) -> Result<SimilarityVector> {
    let posteriors: Vec<Vec<f64>> = segments
        .iter()
        .map(|x| model.identify_language(x))
        .collect::<Result<_>>()?;
    similarity_from_posteriors(&model.config.base_language_tags(), &posteriors)
}

/// Most similar base language tag.
pub fn most_similar(sim: &SimilarityVector) -> &str {
    &sim.tags[sim.argmax()]
}

/// Two-layer gelu MLP mapping an embedding row to the model dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEncoder {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl PromptEncoder {
    pub fn new(embed_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed).fork("prompt-encoder");
        PromptEncoder {
            w1: Tensor::randn(embed_dim, hidden, 0.02, &mut rng),
            b1: Tensor::zeros(vec![1, hidden]),
            w2: Tensor::randn(hidden, embed_dim, 0.02, &mut rng),
            b2: Tensor::zeros(vec![1, embed_dim]),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.numel() + self.b1.numel() + self.w2.numel() + self.b2.numel()
    }

    /// Value-level forward for inference.
    pub fn encode(&self, input_row: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(true);
        let w1 = tape.leaf(&self.w1)?;
        let b1 = tape.leaf(&self.b1)?;
        let w2 = tape.leaf(&self.w2)?;
        let b2 = tape.leaf(&self.b2)?;
        let x = tape.leaf(input_row)?;
        let out = prompt_encoder_forward(&mut tape, w1, b1, w2, b2, x)?;
        Ok(tape.tensor(out))
    }
}

/// On-tape prompt-encoder forward, shared by training and gradient checks.
/// Residual around the MLP: at initialization the language prompt IS the
/// pre-trained language embedding, and training shapes it from there.
pub fn prompt_encoder_forward(
    tape: &mut Tape,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    input: NodeId,
) -> Result<NodeId> {
    let h = tape.matmul(input, w1)?;
    let h = tape.add(h, b1)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, w2)?;
    let h = tape.add(h, b2)?;
    tape.add(input, h)
}

/// Per-language attachment: the frozen seed embedding driving the prompt
/// encoder, plus the trainable embedding row for the language's own token.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageBinding {
    pub token_id: usize,
    pub source_embedding: Tensor,
    pub embed_row: Tensor,
    pub similar_base: String,
}

/// Language-aware attachment of a prompt set.
#[derive(Debug, Clone, PartialEq)]
pub struct LaptParams {
    pub n_lp: usize,
    pub encoder: PromptEncoder,
    pub languages: BTreeMap<String, LanguageBinding>,
}

impl LaptParams {
    pub fn binding(&self, tag: &str) -> Result<&LanguageBinding> {
        self.languages
            .get(tag)
            .ok_or_else(|| Error::UnknownLanguage(tag.to_string()))
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.parameter_count()
            + self.languages.values().map(|b| b.embed_row.numel()).sum::<usize>()
    }

    pub(crate) fn collect_params(&self, map: &mut ParamMap, active_tags: &BTreeSet<String>) {
        map.insert("lapt.pe.w1".into(), self.encoder.w1.clone());
        map.insert("lapt.pe.b1".into(), self.encoder.b1.clone());
        map.insert("lapt.pe.w2".into(), self.encoder.w2.clone());
        map.insert("lapt.pe.b2".into(), self.encoder.b2.clone());
        for (tag, binding) in &self.languages {
            if active_tags.contains(tag) {
                map.insert(format!("lapt.lang.{tag}.embed_row"), binding.embed_row.clone());
            }
        }
    }

    pub(crate) fn absorb_params(&mut self, map: &ParamMap) {
        if let Some(t) = map.get("lapt.pe.w1") {
            self.encoder.w1 = t.clone();
        }
        if let Some(t) = map.get("lapt.pe.b1") {
            self.encoder.b1 = t.clone();
        }
        if let Some(t) = map.get("lapt.pe.w2") {
            self.encoder.w2 = t.clone();
        }
        if let Some(t) = map.get("lapt.pe.b2") {
            self.encoder.b2 = t.clone();
        }
        for (tag, binding) in &mut self.languages {
            if let Some(t) = map.get(&format!("lapt.lang.{tag}.embed_row")) {
                binding.embed_row = t.clone();
            }
        }
    }

    pub(crate) fn hash_into(&self, h: &mut Fnv64) {
        h.update(&(self.n_lp as u64).to_le_bytes());
        for t in [
            &self.encoder.w1,
            &self.encoder.b1,
            &self.encoder.w2,
            &self.encoder.b2,
        ] {
            h.update_f64_bits(t.data());
        }
        for (tag, b) in &self.languages {
            h.update(tag.as_bytes());
            h.update(&(b.token_id as u64).to_le_bytes());
            h.update_f64_bits(b.source_embedding.data());
            h.update_f64_bits(b.embed_row.data());
        }
    }

    /// Language prompt rows for a tag, value-level.
    pub fn language_prompt_rows(&self, tag: &str) -> Result<Tensor> {
        let binding = self.binding(tag)?;
        let row = self.encoder.encode(&binding.source_embedding)?;
        if self.n_lp == 1 {
            return Ok(row);
        }
        let e = row.cols();
        let mut data = Vec::with_capacity(self.n_lp * e);
        for _ in 0..self.n_lp {
            data.extend_from_slice(row.data());
        }
        Tensor::matrix(self.n_lp, e, data)
    }
}

/// Step 2 construction: a fresh language-aware attachment seeded from the
/// most similar base language's token embedding. `blend` switches the seed
/// to the similarity-weighted combination of all base embeddings.
pub fn build_language_prompt(
    new_tag: &str,
    similar_base: &str,
    token_id: usize,
    model: &BaseModel,
    n_lp: usize,
    hidden: usize,
    seed: u64,
    blend: Option<&SimilarityVector>,
) -> Result<LaptParams> {
    let mut lapt = LaptParams {
        n_lp,
        encoder: PromptEncoder::new(model.config.embed_dim, hidden, seed),
        languages: BTreeMap::new(),
    };
    bind_language(&mut lapt, new_tag, similar_base, token_id, model, blend)?;
    Ok(lapt)
}

/// Register one more language on an existing attachment (shared variant).
pub fn bind_language(
    lapt: &mut LaptParams,
    new_tag: &str,
    similar_base: &str,
    token_id: usize,
    model: &BaseModel,
    blend: Option<&SimilarityVector>,
) -> Result<()> {
    let source_embedding = match blend {
        None => similar_language_row(model, similar_base)?,
        Some(sim) => blended_row(model, sim)?,
    };
    lapt.languages.insert(
        new_tag.to_string(),
        LanguageBinding {
            token_id,
            source_embedding: source_embedding.clone(),
            // the new token's input embedding starts as the similar
            // language's row and trains from there
            embed_row: similar_language_row(model, similar_base)?,
            similar_base: similar_base.to_string(),
        },
    );
    let _ = source_embedding;
    Ok(())
}

fn similar_language_row(model: &BaseModel, tag: &str) -> Result<Tensor> {
    let token = model
        .config
        .language_token(tag)
        .ok_or_else(|| Error::UnknownLanguage(tag.to_string()))?;
    model.embedding_row(token)
}

fn blended_row(model: &BaseModel, sim: &SimilarityVector) -> Result<Tensor> {
    let e = model.config.embed_dim;
    let mut acc = vec![0.0; e];
    for (k, tag) in sim.tags.iter().enumerate() {
        let row = similar_language_row(model, tag)?;
        let w = sim.sim(k);
        for (a, &x) in acc.iter_mut().zip(row.data()) {
            *a += w * x;
        }
    }
    Tensor::matrix(1, e, acc)
}

/// Full input composition for one utterance of a LAPT-managed language:
/// `[LP, P, proj(X)]` on the encoder side, `[P', embed(g)]` with the
/// language slot replaced by the trainable row on the decoder side.
/// Without an attachment this is exactly the plain prompt composition.
pub fn compose_lapt_input(
    set: &PromptSet,
    model: &BaseModel,
    features: &Tensor,
    tag: &str,
    fallback_lang_token: usize,
) -> Result<(Tensor, Tensor)> {
    let lapt = match &set.lapt {
        None => return set.apply(model, features, fallback_lang_token),
        Some(l) => l,
    };
    let binding = lapt.binding(tag)?;
    let lp = lapt.language_prompt_rows(tag)?;

    let total_prompt_rows = lp.rows() + set.n_enc();
    if total_prompt_rows + features.rows() > model.config.enc_ctx {
        return Err(Error::ContextOverflow {
            what: "encoder input".to_string(),
            needed: total_prompt_rows + features.rows(),
            limit: model.config.enc_ctx,
        });
    }

    let (plain_enc, _) = set.apply(model, features, fallback_lang_token)?;
    let e = model.config.embed_dim;
    let mut enc_data = Vec::with_capacity((lp.rows() + plain_enc.rows()) * e);
    enc_data.extend_from_slice(lp.data());
    enc_data.extend_from_slice(plain_enc.data());
    let enc_input = Tensor::matrix(lp.rows() + plain_enc.rows(), e, enc_data)?;

    let cfg = &model.config;
    let embedding = model.embedding();
    let mut prefix = Vec::with_capacity(4 * e);
    prefix.extend_from_slice(embedding.row(cfg.specials.sot));
    prefix.extend_from_slice(binding.embed_row.data());
    prefix.extend_from_slice(embedding.row(cfg.specials.task));
    prefix.extend_from_slice(embedding.row(cfg.specials.no_timestamps));
    let g_mat = Tensor::matrix(4, e, prefix)?;
    let dec_prefix = match &set.dec_prompt {
        Some(p) => {
            let mut data = Vec::with_capacity((p.rows() + 4) * e);
            data.extend_from_slice(p.data());
            data.extend_from_slice(g_mat.data());
            Tensor::matrix(p.rows() + 4, e, data)?
        }
        None => g_mat,
    };
    Ok((enc_input, dec_prefix))
}

/// Inference-time prompt material for `tag` under a prompt set.
pub fn active_prompts(set: &PromptSet, tag: &str) -> Result<ActivePrompts> {
    let mut prompts = ActivePrompts {
        encoder_rows: Vec::new(),
        decoder_prompt: set.dec_prompt.clone(),
        lang_embed_override: None,
    };
    if let Some(lapt) = &set.lapt {
        let binding = lapt.binding(tag)?;
        prompts.encoder_rows.push(lapt.language_prompt_rows(tag)?);
        prompts.lang_embed_override = Some(binding.embed_row.clone());
    }
    if let Some(p) = &set.enc_prompt {
        prompts.encoder_rows.push(p.clone());
    }
    Ok(prompts)
}
