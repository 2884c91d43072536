//! Language-expansion workflow: the registry, activation, forgetting audits
//! and the full fine-tune baseline used for contrast.
//!
//! The registry is the single persistent record of which languages exist,
//! which prompt set serves each expanded language, and the journal of
//! expansion events. It serializes to a CRC-checked container holding a
//! canonical metadata document plus the prompt tensors, and it round-trips
//! byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::container::{
    read_file_verified, read_tensor_section, write_file, write_tensor_section, ByteReader,
    ByteWriter,
};
use crate::error::{Error, Result};
use crate::eval::{cer, evaluate, CerReport};
use crate::lapt::{
    active_prompts, bind_language, build_language_prompt, estimate_similarity, most_similar,
    LanguageBinding, LaptMode, LaptParams, PromptEncoder, SimilarityVector,
};
use crate::model::{ActivePrompts, BaseModel, Forward};
use crate::spt::{
    divergence_error, epoch_order, train_prompts, PromptMode, PromptSet, TrainConfig,
};
use crate::synthdata::{Corpus, Utterance};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const REGISTRY_MAGIC: &[u8; 4] = b"SPTR";
pub const REGISTRY_VERSION: u16 = 1;

pub const SHARED_SET_ID: &str = "shared";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LanguageStatus {
    Base,
    Expanded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub tag: String,
    pub status: LanguageStatus,
    pub prompt_set_id: Option<String>,
    pub mode: Option<PromptMode>,
    pub lapt: Option<LaptMode>,
    pub similar_base: Option<String>,
    pub lang_token: usize,
    /// Digest of the run config active when the entry was created.
    pub config_digest: u64,
    /// Journal index of the expansion event; base entries have none.
    pub created_event: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JournalEvent {
    pub index: usize,
    pub action: String,
    pub tag: String,
    pub mode: Option<String>,
    pub lapt: Option<String>,
    pub similar_base: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageRegistry {
    /// Digest of the checkpoint's config document this registry belongs to.
    pub checkpoint_digest: u64,
    pub entries: BTreeMap<String, RegistryEntry>,
    pub prompt_sets: BTreeMap<String, PromptSet>,
    pub journal: Vec<JournalEvent>,
}

/// Inference configuration for one language.
#[derive(Debug)]
pub struct Activation<'r> {
    pub lang_token: usize,
    pub prompt_set: Option<&'r PromptSet>,
}

impl LanguageRegistry {
    /// Fresh registry over a checkpoint: one base entry per base language.
    pub fn new(cfg: &RunConfig, model: &BaseModel) -> Self {
        let digest = cfg.digest();
        let mut entries = BTreeMap::new();
        for (tag, token) in &model.config.base_languages {
            entries.insert(
                tag.clone(),
                RegistryEntry {
                    tag: tag.clone(),
                    status: LanguageStatus::Base,
                    prompt_set_id: None,
                    mode: None,
                    lapt: None,
                    similar_base: None,
                    lang_token: *token,
                    config_digest: digest,
                    created_event: None,
                },
            );
        }
        LanguageRegistry {
            checkpoint_digest: digest,
            entries,
            prompt_sets: BTreeMap::new(),
            journal: Vec::new(),
        }
    }

    pub fn expanded_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.status == LanguageStatus::Expanded)
            .count()
    }

    /// Which prompts and language token to run a registered language with.
    /// Base languages decode prompt-free.
    pub fn activate(&self, tag: &str) -> Result<Activation<'_>> {
        let entry = self
            .entries
            .get(tag)
            .ok_or_else(|| Error::UnknownLanguage(tag.to_string()))?;
        let prompt_set = match &entry.prompt_set_id {
            None => None,
            Some(id) => Some(self.prompt_sets.get(id).ok_or_else(|| {
                Error::InvalidArgument(format!("registry references missing prompt set '{id}'"))
            })?),
        };
        Ok(Activation {
            lang_token: entry.lang_token,
            prompt_set,
        })
    }

    /// Tag resolver for the evaluation harness.
    pub fn resolver(&self) -> impl Fn(&str) -> Result<(usize, ActivePrompts)> + '_ {
        move |tag: &str| {
            let activation = self.activate(tag)?;
            let prompts = match activation.prompt_set {
                None => ActivePrompts::none(),
                Some(set) => active_prompts(set, tag)?,
            };
            Ok((activation.lang_token, prompts))
        }
    }

    /// Trainable parameters behind a tag's activation, for reporting.
    pub fn activation_parameter_count(&self, tag: &str) -> Result<usize> {
        let activation = self.activate(tag)?;
        Ok(activation.prompt_set.map(|s| s.parameter_count()).unwrap_or(0))
    }

    pub fn stored_prompt_parameters(&self) -> usize {
        self.prompt_sets.values().map(|s| s.parameter_count()).sum()
    }
}

// ---- forgetting reports -----------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LangDelta {
    pub tag: String,
    pub status: LanguageStatus,
    pub cer_before: f64,
    pub cer_after: f64,
    pub outputs_identical: bool,
}

impl LangDelta {
    pub fn delta(&self) -> f64 {
        self.cer_after - self.cer_before
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingReport {
    pub base_hash_before: u64,
    pub base_hash_after: u64,
    pub deltas: Vec<LangDelta>,
}

impl ForgettingReport {
    pub fn hash_equal(&self) -> bool {
        self.base_hash_before == self.base_hash_after
    }

    pub fn all_outputs_identical(&self) -> bool {
        self.deltas.iter().all(|d| d.outputs_identical)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "base_hash_before = {:016x}\nbase_hash_after = {:016x}\nhash_equal = {}\n",
            self.base_hash_before,
            self.base_hash_after,
            self.hash_equal()
        ));
        for d in &self.deltas {
            out.push_str(&format!(
                "lang {} cer_before {:.6} cer_after {:.6} delta {:+.6} outputs_identical {}\n",
                d.tag,
                d.cer_before,
                d.cer_after,
                d.delta(),
                d.outputs_identical
            ));
        }
        out
    }
}

fn decode_corpus(
    model: &BaseModel,
    registry: &LanguageRegistry,
    tag: &str,
    utterances: &[Utterance],
) -> Result<Vec<Vec<usize>>> {
    let resolve = registry.resolver();
    let (token, prompts) = resolve(tag)?;
    utterances
        .iter()
        .map(|u| Ok(model.greedy_decode(&u.features, token, &prompts)?.tokens))
        .collect()
}

fn corpus_cer(utterances: &[Utterance], decodes: &[Vec<usize>]) -> f64 {
    let mut edits = 0usize;
    let mut len = 0usize;
    for (u, d) in utterances.iter().zip(decodes) {
        edits += cer(&u.transcript, d).0.distance();
        len += u.transcript.len();
    }
    edits as f64 / len.max(1) as f64
}

// ---- expansion --------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ExpansionRequest {
    pub tag: String,
    pub mode: PromptMode,
    pub lapt: Option<LaptMode>,
    pub n_enc: usize,
    pub n_dec: usize,
    pub n_lp: usize,
    pub prompt_encoder_hidden: usize,
    /// M segments for similarity estimation.
    pub segments: usize,
    pub blend_init: bool,
    /// Shared variant only: also revisit earlier expanded languages' corpora.
    pub interleave_shared: bool,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExpansionOutcome {
    pub tag: String,
    pub prompt_set_id: String,
    pub lang_token: usize,
    pub similarity: Option<SimilarityVector>,
    pub similar_base: Option<String>,
    pub loss_history: Vec<f64>,
    pub forgetting: ForgettingReport,
}

/// Add a language: estimate similarity (when language-aware), initialize or
/// continue a prompt set, train it against the frozen base, register the
/// result and audit every previously registered language with available test
/// data. `corpora` maps tags to their corpora; it must contain the new tag.
pub fn expand_language(
    registry: &mut LanguageRegistry,
    model: &BaseModel,
    req: &ExpansionRequest,
    corpora: &BTreeMap<String, Corpus>,
) -> Result<ExpansionOutcome> {
    if registry.entries.contains_key(&req.tag) {
        return Err(Error::DuplicateLanguage(req.tag.clone()));
    }
    if !model.is_frozen() {
        return Err(Error::InvalidArgument(
            "expansion requires a frozen base model".to_string(),
        ));
    }
    let corpus = corpora
        .get(&req.tag)
        .ok_or_else(|| Error::UnknownLanguage(req.tag.clone()))?;
    if corpus.train.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "corpus for '{}' has no training utterances",
            req.tag
        )));
    }

    // audit targets: everything registered before this expansion
    let audit_tags: Vec<String> = registry
        .entries
        .keys()
        .filter(|t| corpora.contains_key(*t))
        .cloned()
        .collect();
    let hash_before = model.content_hash();
    let mut before: BTreeMap<String, (f64, Vec<Vec<usize>>)> = BTreeMap::new();
    for tag in &audit_tags {
        let test = &corpora[tag].test;
        let decodes = decode_corpus(model, registry, tag, test)?;
        before.insert(tag.clone(), (corpus_cer(test, &decodes), decodes));
    }

    // step 1: similarity (language-aware variants only)
    let (similarity, similar_base) = match req.lapt {
        None => (None, None),
        Some(_) => {
            if req.segments == 0 {
                return Err(Error::InvalidArgument("segments must be >= 1".to_string()));
            }
            if corpus.train.len() < req.segments {
                return Err(Error::InvalidArgument(format!(
                    "need {} segments but train split has {}",
                    req.segments,
                    corpus.train.len()
                )));
            }
            let order = epoch_order(corpus.train.len(), req.seed ^ 0x5e67, 0);
            let segments: Vec<&Tensor> = order[..req.segments]
                .iter()
                .map(|&i| &corpus.train[i].features)
                .collect();
            let sim = estimate_similarity(model, &segments)?;
            let similar = most_similar(&sim).to_string();
            (Some(sim), Some(similar))
        }
    };

    // prompt set: fresh for separate/off, continued for shared
    let lang_token = model.config.allocate_language_token(registry.expanded_count())?;
    let set_id = match req.lapt {
        Some(LaptMode::Shared) => SHARED_SET_ID.to_string(),
        _ => req.tag.clone(),
    };
    let mut set = match (req.lapt, registry.prompt_sets.get(&set_id)) {
        (Some(LaptMode::Shared), Some(existing)) => existing.clone(),
        _ => PromptSet::init(
            &set_id,
            if set_id == SHARED_SET_ID { SHARED_SET_ID } else { &req.tag },
            req.mode,
            req.n_enc,
            req.n_dec,
            req.seed,
            model,
        )?,
    };

    if let Some(_mode) = req.lapt {
        let similar = similar_base.as_deref().expect("similarity ran");
        match &mut set.lapt {
            None => {
                set.lapt = Some(build_language_prompt(
                    &req.tag,
                    similar,
                    lang_token,
                    model,
                    req.n_lp,
                    req.prompt_encoder_hidden,
                    req.seed,
                    req.blend_init.then_some(similarity.as_ref().expect("similarity ran")),
                )?);
            }
            Some(lapt) => {
                bind_language(
                    lapt,
                    &req.tag,
                    similar,
                    lang_token,
                    model,
                    req.blend_init.then_some(similarity.as_ref().expect("similarity ran")),
                )?;
            }
        }
    }

    // training corpus: the new language, plus earlier shared languages when
    // interleaving is on
    let mut train_utts: Vec<Utterance> = Vec::new();
    let mut lang_tokens: BTreeMap<String, usize> = BTreeMap::new();
    lang_tokens.insert(req.tag.clone(), lang_token);
    if req.lapt == Some(LaptMode::Shared) && req.interleave_shared {
        for (tag, entry) in &registry.entries {
            if entry.prompt_set_id.as_deref() == Some(SHARED_SET_ID) {
                if let Some(c) = corpora.get(tag) {
                    train_utts.extend(c.train.iter().cloned());
                    lang_tokens.insert(tag.clone(), entry.lang_token);
                }
            }
        }
    }
    train_utts.extend(corpus.train.iter().cloned());

    let loss_history = train_prompts(&mut set, &train_utts, model, &lang_tokens, &req.train)?;

    // register
    registry.prompt_sets.insert(set_id.clone(), set);
    let event_index = registry.journal.len();
    registry.journal.push(JournalEvent {
        index: event_index,
        action: "expand".to_string(),
        tag: req.tag.clone(),
        mode: Some(req.mode.as_str().to_string()),
        lapt: Some(match req.lapt {
            None => "off".to_string(),
            Some(m) => m.as_str().to_string(),
        }),
        similar_base: similar_base.clone(),
        seed: req.seed,
    });
    registry.entries.insert(
        req.tag.clone(),
        RegistryEntry {
            tag: req.tag.clone(),
            status: LanguageStatus::Expanded,
            prompt_set_id: Some(set_id.clone()),
            mode: Some(req.mode),
            lapt: req.lapt,
            similar_base: similar_base.clone(),
            lang_token,
            config_digest: registry.checkpoint_digest,
            created_event: Some(event_index),
        },
    );

    // audit: base languages must be bit-identical; earlier expanded languages
    // are measured (shared prompts may drift)
    let mut deltas = Vec::new();
    for tag in &audit_tags {
        let test = &corpora[tag].test;
        let decodes_after = decode_corpus(model, registry, tag, test)?;
        let (cer_before, decodes_before) = &before[tag];
        deltas.push(LangDelta {
            tag: tag.clone(),
            status: registry.entries[tag].status,
            cer_before: *cer_before,
            cer_after: corpus_cer(test, &decodes_after),
            outputs_identical: *decodes_before == decodes_after,
        });
    }
    let forgetting = ForgettingReport {
        base_hash_before: hash_before,
        base_hash_after: model.content_hash(),
        deltas,
    };

    Ok(ExpansionOutcome {
        tag: req.tag.clone(),
        prompt_set_id: set_id,
        lang_token,
        similarity,
        similar_base,
        loss_history,
        forgetting,
    })
}

// ---- full-model training (pretrain and the FFT baseline) --------------------

/// Train every parameter of an unfrozen model. Pretraining supervises the
/// language token at the start position; fine-tuning supervises transcripts
/// only.
pub fn train_full_model(
    model: &mut BaseModel,
    corpus: &[Utterance],
    lang_tokens: &BTreeMap<String, usize>,
    cfg: &TrainConfig,
    supervise_lid: bool,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".to_string()));
    }
    for utt in corpus {
        if !lang_tokens.contains_key(&utt.tag) {
            return Err(Error::UnknownLanguage(utt.tag.clone()));
        }
    }
    let mut adam = cfg.optimizer();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(corpus.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new(true);
            let mut fwd = Forward::trainable(model);
            let mut total: Option<NodeId> = None;
            for &idx in chunk {
                let utt = &corpus[idx];
                let lang = lang_tokens[&utt.tag];
                let enc = fwd.encode(&mut tape, &utt.features, &[])?;
                let prefix = fwd.special_prefix(&mut tape, lang, None)?;
                let logits = fwd.decoder(&mut tape, None, prefix, &utt.transcript, enc)?;
                let loss = if supervise_lid {
                    crate::model::pretrain_loss(
                        &mut tape,
                        logits,
                        0,
                        &utt.transcript,
                        lang,
                        model.config.specials.eot,
                    )?
                } else {
                    crate::model::teacher_loss(
                        &mut tape,
                        logits,
                        0,
                        &utt.transcript,
                        model.config.specials.eot,
                    )?
                };
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let mean = tape.scale(total.expect("nonempty batch"), 1.0 / chunk.len() as f64)?;
            let loss_value = tape.data(mean)[0];
            if !loss_value.is_finite() {
                return Err(divergence_error(step, model.params()));
            }
            epoch_loss += loss_value * chunk.len() as f64;
            let grads = tape.backward(mean)?;
            adam.step(model.params_mut()?, &grads)?;
            step += 1;
        }
        history.push(epoch_loss / corpus.len() as f64);
    }
    Ok(history)
}

/// Pretrain the base model with prompt-region conditioning.
///
/// The full-size model this stands in for is trained with previous-text
/// tokens occupying the region before the start token and can place content
/// at any offset; that robustness is exactly what soft prompts rely on. Here
/// each training utterance randomly (seeded) gains a few noise rows before
/// the encoder features and a short random token context before the special
/// prefix, so positional rows across the prompt range receive training and a
/// populated prompt region is ordinary to the frozen model.
pub fn pretrain_base(
    model: &mut BaseModel,
    corpus: &[Utterance],
    lang_tokens: &BTreeMap<String, usize>,
    cfg: &TrainConfig,
    enc_offsets: &[usize],
    dec_offsets: &[usize],
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".to_string()));
    }
    for utt in corpus {
        if !lang_tokens.contains_key(&utt.tag) {
            return Err(Error::UnknownLanguage(utt.tag.clone()));
        }
    }
    let e = model.config.embed_dim;
    let prev_token = model.config.specials.prev;
    let char_region = model.config.lang_token_base.max(1);
    let mut by_tag: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, utt) in corpus.iter().enumerate() {
        by_tag.entry(utt.tag.clone()).or_default().push(i);
    }
    let mut adam = cfg.optimizer();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    // curriculum: master the plain task first, then mix in offsets
    let clean_epochs = cfg.epochs / 3;
    for epoch in 0..cfg.epochs {
        let augment = epoch >= clean_epochs;
        let order = epoch_order(corpus.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new(true);
            let mut fwd = Forward::trainable(model);
            let mut total: Option<NodeId> = None;
            for &idx in chunk {
                let utt = &corpus[idx];
                let lang = lang_tokens[&utt.tag];
                let mut aug = crate::rng::Rng::new(cfg.seed)
                    .fork(&format!("augment-{epoch}-{idx}"));

                // encoder-side conditioning rows in embedding space; half the
                // passes stay clean so the plain task trains at full strength
                let k = if !augment || enc_offsets.is_empty() || aug.next_f64() < 0.5 {
                    0
                } else {
                    enc_offsets[aug.next_below(enc_offsets.len())]
                };
                let enc_rows = if k == 0 {
                    Vec::new()
                } else {
                    let noise = Tensor::matrix(k, e, aug.normal_vec(k * e, 0.15))?;
                    vec![tape.leaf(&noise)?]
                };
                let enc = fwd.encode(&mut tape, &utt.features, &enc_rows)?;

                // decoder-side conditioning: the prev token plus text drawn
                // from another utterance of the same language, mirroring
                // previous-transcript conditioning: informative about the
                // language, silent about the answer
                let j = if !augment || dec_offsets.is_empty() || aug.next_f64() < 0.5 {
                    0
                } else {
                    dec_offsets[aug.next_below(dec_offsets.len())]
                };
                let dec_prefix = if j == 0 {
                    None
                } else {
                    let mut ctx = vec![prev_token];
                    let siblings = &by_tag[&utt.tag];
                    let donor_idx = siblings[aug.next_below(siblings.len())];
                    if donor_idx == idx || corpus[donor_idx].transcript.is_empty() {
                        for _ in 1..j {
                            ctx.push(aug.next_below(char_region));
                        }
                    } else {
                        let donor = &corpus[donor_idx].transcript;
                        let start = aug.next_below(donor.len());
                        for step in 1..j {
                            ctx.push(donor[(start + step) % donor.len()]);
                        }
                    }
                    let table = fwd.param(&mut tape, "embed.tokens")?;
                    Some(tape.embed(table, &ctx)?)
                };

                let prefix = fwd.special_prefix(&mut tape, lang, None)?;
                let logits = fwd.decoder(&mut tape, dec_prefix, prefix, &utt.transcript, enc)?;
                let loss = crate::model::pretrain_loss(
                    &mut tape,
                    logits,
                    j,
                    &utt.transcript,
                    lang,
                    model.config.specials.eot,
                )?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let mean = tape.scale(total.expect("nonempty batch"), 1.0 / chunk.len() as f64)?;
            let loss_value = tape.data(mean)[0];
            if !loss_value.is_finite() {
                return Err(divergence_error(step, model.params()));
            }
            epoch_loss += loss_value * chunk.len() as f64;
            let grads = tape.backward(mean)?;
            adam.step(model.params_mut()?, &grads)?;
            step += 1;
        }
        history.push(epoch_loss / corpus.len() as f64);
    }
    Ok(history)
}

/// Full fine-tune baseline: clone the base, thaw it, train every parameter on
/// the new language. The source model is untouched; the result is a separate
/// frozen model whose hash necessarily differs.
pub fn fft_baseline(
    base: &BaseModel,
    corpus: &[Utterance],
    lang_tokens: &BTreeMap<String, usize>,
    cfg: &TrainConfig,
) -> Result<(BaseModel, Vec<f64>)> {
    let mut tuned = base.thawed_clone();
    let history = train_full_model(&mut tuned, corpus, lang_tokens, cfg, false)?;
    tuned.freeze();
    Ok((tuned, history))
}

/// Decode per-language test corpora under two checkpoints of the same config
/// and report CER deltas plus output equality; refuses mismatched configs.
pub fn audit_forgetting(
    before: &(RunConfig, BaseModel),
    after: &(RunConfig, BaseModel),
    corpora: &BTreeMap<String, Vec<Utterance>>,
) -> Result<ForgettingReport> {
    let (cfg_before, model_before) = before;
    let (cfg_after, model_after) = after;
    if cfg_before.digest() != cfg_after.digest() {
        return Err(Error::DigestMismatch {
            detail: format!(
                "before {:016x} vs after {:016x}",
                cfg_before.digest(),
                cfg_after.digest()
            ),
        });
    }
    if corpora.is_empty() {
        return Err(Error::InvalidArgument("no audit corpora".to_string()));
    }
    let mut deltas = Vec::new();
    for (tag, test) in corpora {
        let token = model_before
            .config
            .language_token(tag)
            .ok_or_else(|| Error::UnknownLanguage(tag.clone()))?;
        let none = ActivePrompts::none();
        let mut decodes_before = Vec::new();
        let mut decodes_after = Vec::new();
        for utt in test {
            decodes_before.push(model_before.greedy_decode(&utt.features, token, &none)?.tokens);
            decodes_after.push(model_after.greedy_decode(&utt.features, token, &none)?.tokens);
        }
        deltas.push(LangDelta {
            tag: tag.clone(),
            status: LanguageStatus::Base,
            cer_before: corpus_cer(test, &decodes_before),
            cer_after: corpus_cer(test, &decodes_after),
            outputs_identical: decodes_before == decodes_after,
        });
    }
    Ok(ForgettingReport {
        base_hash_before: model_before.content_hash(),
        base_hash_after: model_after.content_hash(),
        deltas,
    })
}

/// Evaluate a split under the registry's activations.
pub fn evaluate_with_registry(
    model: &BaseModel,
    registry: &LanguageRegistry,
    utterances: &[Utterance],
) -> Result<CerReport> {
    let resolve = registry.resolver();
    evaluate(model, &resolve, utterances)
}

// ---- registry persistence ----------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryDoc {
    version: u32,
    checkpoint_digest: String,
    entries: BTreeMap<String, EntryDoc>,
    journal: Vec<JournalEventDoc>,
    sets: BTreeMap<String, SetDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDoc {
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_set_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lapt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    similar_base: Option<String>,
    lang_token: usize,
    config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_event: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JournalEventDoc {
    index: usize,
    action: String,
    tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lapt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    similar_base: Option<String>,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetDoc {
    owner: String,
    mode: String,
    has_enc: bool,
    has_dec: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_lp: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    bindings: BTreeMap<String, BindingDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BindingDoc {
    token_id: usize,
    similar_base: String,
}

fn hex64(v: u64) -> String {
    format!("{v:016x}")
}

fn parse_hex64(s: &str, path: &str) -> Result<u64> {
    u64::from_str_radix(s, 16).map_err(|_| Error::format(path, format!("bad digest '{s}'")))
}

pub fn registry_bytes(registry: &LanguageRegistry) -> Result<Vec<u8>> {
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut sets = BTreeMap::new();
    for (id, set) in &registry.prompt_sets {
        if let Some(t) = &set.enc_prompt {
            tensors.insert(format!("set.{id}.enc"), t.clone());
        }
        if let Some(t) = &set.dec_prompt {
            tensors.insert(format!("set.{id}.dec"), t.clone());
        }
        let mut bindings = BTreeMap::new();
        let n_lp = set.lapt.as_ref().map(|lapt| {
            tensors.insert(format!("set.{id}.pe.w1"), lapt.encoder.w1.clone());
            tensors.insert(format!("set.{id}.pe.b1"), lapt.encoder.b1.clone());
            tensors.insert(format!("set.{id}.pe.w2"), lapt.encoder.w2.clone());
            tensors.insert(format!("set.{id}.pe.b2"), lapt.encoder.b2.clone());
            for (tag, b) in &lapt.languages {
                tensors.insert(format!("set.{id}.lang.{tag}.source"), b.source_embedding.clone());
                tensors.insert(format!("set.{id}.lang.{tag}.row"), b.embed_row.clone());
                bindings.insert(
                    tag.clone(),
                    BindingDoc {
                        token_id: b.token_id,
                        similar_base: b.similar_base.clone(),
                    },
                );
            }
            lapt.n_lp
        });
        sets.insert(
            id.clone(),
            SetDoc {
                owner: set.owner.clone(),
                mode: set.mode.as_str().to_string(),
                has_enc: set.enc_prompt.is_some(),
                has_dec: set.dec_prompt.is_some(),
                n_lp,
                bindings,
            },
        );
    }

    let doc = RegistryDoc {
        version: u32::from(REGISTRY_VERSION),
        checkpoint_digest: hex64(registry.checkpoint_digest),
        entries: registry
            .entries
            .iter()
            .map(|(tag, e)| {
                (
                    tag.clone(),
                    EntryDoc {
                        status: match e.status {
                            LanguageStatus::Base => "base".to_string(),
                            LanguageStatus::Expanded => "expanded".to_string(),
                        },
                        prompt_set_id: e.prompt_set_id.clone(),
                        mode: e.mode.map(|m| m.as_str().to_string()),
                        lapt: e.lapt.map(|m| m.as_str().to_string()),
                        similar_base: e.similar_base.clone(),
                        lang_token: e.lang_token,
                        config_digest: hex64(e.config_digest),
                        created_event: e.created_event,
                    },
                )
            })
            .collect(),
        journal: registry
            .journal
            .iter()
            .map(|j| JournalEventDoc {
                index: j.index,
                action: j.action.clone(),
                tag: j.tag.clone(),
                mode: j.mode.clone(),
                lapt: j.lapt.clone(),
                similar_base: j.similar_base.clone(),
                seed: j.seed,
            })
            .collect(),
        sets,
    };
    let doc_text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;

    let mut w = ByteWriter::new();
    w.put_bytes(REGISTRY_MAGIC);
    w.put_u16(REGISTRY_VERSION);
    w.put_u64(registry.checkpoint_digest);
    w.put_string(&doc_text);
    write_tensor_section(&mut w, &tensors);
    Ok(w.into_bytes_with_crc())
}

pub fn save_registry(path: &std::path::Path, registry: &LanguageRegistry) -> Result<()> {
    write_file(path, &registry_bytes(registry)?)
}

pub fn load_registry(path: &std::path::Path) -> Result<LanguageRegistry> {
    let body = read_file_verified(path)?;
    let display = path.display().to_string();
    let mut r = ByteReader::new(&body, &display);
    if r.take_bytes(4)? != REGISTRY_MAGIC {
        return Err(Error::format(&display, "bad magic (not a registry)"));
    }
    let version = r.take_u16()?;
    if version != REGISTRY_VERSION {
        return Err(Error::format(&display, format!("unsupported version {version}")));
    }
    let header_digest = r.take_u64()?;
    let doc_text = r.take_string()?;
    let doc: RegistryDoc =
        toml::from_str(&doc_text).map_err(|e| Error::format(&display, e.to_string()))?;
    let mut tensors = read_tensor_section(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::format(&display, "trailing bytes after tensor section"));
    }
    let doc_digest = parse_hex64(&doc.checkpoint_digest, &display)?;
    if doc_digest != header_digest {
        return Err(Error::format(&display, "header and document digests disagree"));
    }

    let mut take = |name: String| -> Result<Tensor> {
        tensors
            .remove(&name)
            .ok_or_else(|| Error::format(&display, format!("missing tensor '{name}'")))
    };

    let mut prompt_sets = BTreeMap::new();
    for (id, set_doc) in &doc.sets {
        let mode = PromptMode::parse(&set_doc.mode)?;
        let enc_prompt = set_doc.has_enc.then(|| take(format!("set.{id}.enc"))).transpose()?;
        let dec_prompt = set_doc.has_dec.then(|| take(format!("set.{id}.dec"))).transpose()?;
        let lapt = match set_doc.n_lp {
            None => None,
            Some(n_lp) => {
                let encoder = PromptEncoder {
                    w1: take(format!("set.{id}.pe.w1"))?,
                    b1: take(format!("set.{id}.pe.b1"))?,
                    w2: take(format!("set.{id}.pe.w2"))?,
                    b2: take(format!("set.{id}.pe.b2"))?,
                };
                let mut languages = BTreeMap::new();
                for (tag, b) in &set_doc.bindings {
                    languages.insert(
                        tag.clone(),
                        LanguageBinding {
                            token_id: b.token_id,
                            source_embedding: take(format!("set.{id}.lang.{tag}.source"))?,
                            embed_row: take(format!("set.{id}.lang.{tag}.row"))?,
                            similar_base: b.similar_base.clone(),
                        },
                    );
                }
                Some(LaptParams {
                    n_lp,
                    encoder,
                    languages,
                })
            }
        };
        prompt_sets.insert(
            id.clone(),
            PromptSet {
                id: id.clone(),
                owner: set_doc.owner.clone(),
                mode,
                enc_prompt,
                dec_prompt,
                lapt,
            },
        );
    }
    if !tensors.is_empty() {
        let leftover: Vec<&String> = tensors.keys().collect();
        return Err(Error::format(&display, format!("unreferenced tensors {leftover:?}")));
    }

    let mut entries = BTreeMap::new();
    for (tag, e) in &doc.entries {
        let status = match e.status.as_str() {
            "base" => LanguageStatus::Base,
            "expanded" => LanguageStatus::Expanded,
            other => return Err(Error::format(&display, format!("bad status '{other}'"))),
        };
        entries.insert(
            tag.clone(),
            RegistryEntry {
                tag: tag.clone(),
                status,
                prompt_set_id: e.prompt_set_id.clone(),
                mode: e.mode.as_deref().map(PromptMode::parse).transpose()?,
                lapt: match e.lapt.as_deref() {
                    None => None,
                    Some(s) => LaptMode::parse(s)?,
                },
                similar_base: e.similar_base.clone(),
                lang_token: e.lang_token,
                config_digest: parse_hex64(&e.config_digest, &display)?,
                created_event: e.created_event,
            },
        );
    }

    Ok(LanguageRegistry {
        checkpoint_digest: header_digest,
        entries,
        prompt_sets,
        journal: doc
            .journal
            .into_iter()
            .map(|j| JournalEvent {
                index: j.index,
                action: j.action,
                tag: j.tag,
                mode: j.mode,
                lapt: j.lapt,
                similar_base: j.similar_base,
                seed: j.seed,
            })
            .collect(),
    })
}
