//! The seven workflow commands. Each is callable in-process; `main` only
//! parses arguments and maps errors to exit codes.

use std::collections::BTreeMap;
use std::path::Path;

use promptasr_core::checkpoint::{load_checkpoint, save_checkpoint};
use promptasr_core::config::RunConfig;
use promptasr_core::continual::{
    audit_forgetting, evaluate_with_registry, expand_language, fft_baseline, load_registry,
    pretrain_base, save_registry, ExpansionRequest, LanguageRegistry,
};
use promptasr_core::error::{Error, Result};
use promptasr_core::eval::cer;
use promptasr_core::lapt::{estimate_similarity, LaptMode};
use promptasr_core::model::{ActivePrompts, BaseModel, ModelConfig};
use promptasr_core::spt::{epoch_order, PromptMode, TrainConfig};
use promptasr_core::synthdata::{self, Utterance};
use promptasr_core::tensor::Tensor;

use crate::workspace::{
    generate_all, load_available, load_corpus, resolve_data_dir, split_path, RegistryLock,
};

/// Prompt-region widths conditioned during pretraining: the configured
/// lengths (and their language-prompt variants on the encoder side) weighted
/// heavily, the remaining sweep lengths lightly, all clipped to what the
/// contexts can hold. Entries repeat to weight the sampling.
pub fn prompt_region_offsets(cfg: &RunConfig) -> (Vec<usize>, Vec<usize>) {
    let sweep = [4usize, 8, 16, 32];
    let max_l = cfg.data.max_tokens * cfg.data.frame_rate;
    let enc_fits = |k: usize| k + max_l <= cfg.model.enc_ctx;
    let dec_fits = |n: usize| n + 4 + cfg.data.max_tokens + 1 <= cfg.model.dec_ctx;

    let mut enc = Vec::new();
    for k in [cfg.prompt.n_enc, cfg.prompt.n_enc + cfg.lapt.n_lp] {
        if enc_fits(k) {
            enc.extend(std::iter::repeat_n(k, 4));
        }
    }
    for n in sweep {
        for extra in [0, cfg.lapt.n_lp] {
            let k = n + extra;
            if enc_fits(k) && !enc.contains(&k) {
                enc.push(k);
            }
        }
    }

    let mut dec = Vec::new();
    if dec_fits(cfg.prompt.n_dec) {
        dec.extend(std::iter::repeat_n(cfg.prompt.n_dec, 6));
    }
    for n in sweep {
        if dec_fits(n) && !dec.contains(&n) {
            dec.push(n);
        }
    }
    (enc, dec)
}

pub fn gen_data(config_path: &Path, data_dir_flag: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let data_dir = resolve_data_dir(&cfg, data_dir_flag);
    std::fs::create_dir_all(&data_dir).map_err(|e| Error::io(data_dir.display().to_string(), e))?;
    for (tag, corpus) in generate_all(&cfg)? {
        for (split, utts) in [
            ("train", &corpus.train),
            ("dev", &corpus.dev),
            ("test", &corpus.test),
        ] {
            let path = split_path(&data_dir, &tag, split);
            synthdata::save_split(&path, utts)?;
            println!("wrote {} ({} utterances)", path.display(), utts.len());
        }
    }
    Ok(())
}

pub fn pretrain(
    config_path: &Path,
    data_dir_flag: Option<&Path>,
    out_flag: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let data_dir = resolve_data_dir(&cfg, data_dir_flag);
    let out = out_flag
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| std::path::PathBuf::from(&cfg.paths.checkpoint));

    let model_cfg = ModelConfig::from_run_config(&cfg)?;
    let mut model = BaseModel::new(model_cfg.clone(), cfg.pretrain.seed)?;

    let mut train_utts: Vec<Utterance> = Vec::new();
    let mut lang_tokens = BTreeMap::new();
    for (tag, token) in &model_cfg.base_languages {
        let corpus = load_corpus(&data_dir, tag)?;
        train_utts.extend(corpus.train);
        lang_tokens.insert(tag.clone(), *token);
    }

    let train_cfg = TrainConfig::from_section(&cfg.pretrain);
    let (enc_offsets, dec_offsets) = prompt_region_offsets(&cfg);
    let history = pretrain_base(
        &mut model,
        &train_utts,
        &lang_tokens,
        &train_cfg,
        &enc_offsets,
        &dec_offsets,
    )?;
    println!(
        "pretrain loss: first {:.4} last {:.4} over {} epochs",
        history.first().unwrap_or(&f64::NAN),
        history.last().unwrap_or(&f64::NAN),
        history.len()
    );

    model.freeze();
    save_checkpoint(&out, &cfg, &model)?;
    println!("wrote {}", out.display());

    // report dev CER with the model as it will be seen by later commands
    let (_, reloaded) = load_checkpoint(&out)?;
    for (tag, token) in &reloaded.config.base_languages {
        let dev = synthdata::load_split(&split_path(&data_dir, tag, "dev"))?;
        let mut edits = 0usize;
        let mut len = 0usize;
        for utt in &dev {
            let decoded = reloaded.greedy_decode(&utt.features, *token, &ActivePrompts::none())?;
            edits += cer(&utt.transcript, &decoded.tokens).0.distance();
            len += utt.transcript.len();
        }
        println!(
            "dev cer {tag} = {:.4} ({} utterances)",
            edits as f64 / len.max(1) as f64,
            dev.len()
        );
    }
    Ok(())
}

pub fn similarity(checkpoint: &Path, corpus_path: &Path, m: usize, seed: u64) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument("--m must be >= 1".to_string()));
    }
    let (_cfg, model) = load_checkpoint(checkpoint)?;
    let utterances = synthdata::load_split(corpus_path)?;
    if utterances.len() < m {
        return Err(Error::InvalidArgument(format!(
            "corpus has {} utterances, need {m}",
            utterances.len()
        )));
    }
    let order = epoch_order(utterances.len(), seed ^ 0x5e67, 0);
    let segments: Vec<&Tensor> = order[..m].iter().map(|&i| &utterances[i].features).collect();
    let sim = estimate_similarity(&model, &segments)?;
    print!("{}", sim.render_report());
    Ok(())
}

pub struct ExpandArgs<'a> {
    pub checkpoint: &'a Path,
    pub registry: &'a Path,
    pub tag: &'a str,
    pub mode: &'a str,
    pub lapt: &'a str,
    pub n_enc: Option<usize>,
    pub n_dec: Option<usize>,
    pub seed: Option<u64>,
    pub data_dir: Option<&'a Path>,
}

pub fn expand(args: ExpandArgs) -> Result<()> {
    let (cfg, model) = load_checkpoint(args.checkpoint)?;
    let data_dir = resolve_data_dir(&cfg, args.data_dir);

    let _lock = RegistryLock::acquire(args.registry)?;
    let mut registry = if args.registry.exists() {
        let r = load_registry(args.registry)?;
        if r.checkpoint_digest != cfg.digest() {
            return Err(Error::DigestMismatch {
                detail: format!(
                    "registry {:016x} vs checkpoint {:016x}",
                    r.checkpoint_digest,
                    cfg.digest()
                ),
            });
        }
        r
    } else {
        LanguageRegistry::new(&cfg, &model)
    };

    let tags: Vec<String> = cfg
        .data
        .languages
        .iter()
        .map(|l| l.tag.clone())
        .chain(registry.entries.keys().cloned())
        .collect();
    let corpora = load_available(&data_dir, &tags)?;

    let request = ExpansionRequest {
        tag: args.tag.to_string(),
        mode: PromptMode::parse(args.mode)?,
        lapt: LaptMode::parse(args.lapt)?,
        n_enc: args.n_enc.unwrap_or(cfg.prompt.n_enc),
        n_dec: args.n_dec.unwrap_or(cfg.prompt.n_dec),
        n_lp: cfg.lapt.n_lp,
        prompt_encoder_hidden: cfg.lapt.prompt_encoder_hidden,
        segments: cfg.lapt.segments,
        blend_init: cfg.lapt.blend_init,
        interleave_shared: cfg.lapt.interleave_shared,
        train: TrainConfig::from_section(&promptasr_core::config::TrainSection {
            epochs: cfg.prompt.epochs,
            batch_size: cfg.prompt.batch_size,
            learning_rate: cfg.prompt.learning_rate,
            seed: cfg.prompt.seed,
        }),
        seed: args.seed.unwrap_or(cfg.prompt.seed),
    };

    let outcome = expand_language(&mut registry, &model, &request, &corpora)?;
    save_registry(args.registry, &registry)?;

    if let Some(sim) = &outcome.similarity {
        print!("{}", sim.render_report());
    }
    println!(
        "expanded {} with prompt set '{}' (token {})",
        outcome.tag, outcome.prompt_set_id, outcome.lang_token
    );
    println!(
        "train loss: first {:.4} last {:.4}",
        outcome.loss_history.first().unwrap_or(&f64::NAN),
        outcome.loss_history.last().unwrap_or(&f64::NAN)
    );
    print!("{}", outcome.forgetting.render());
    println!("wrote {}", args.registry.display());
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    registry_path: &Path,
    split: &str,
    languages: Option<&str>,
    data_dir_flag: Option<&Path>,
) -> Result<()> {
    let (cfg, model) = load_checkpoint(checkpoint)?;
    let registry = load_registry(registry_path)?;
    if registry.checkpoint_digest != cfg.digest() {
        return Err(Error::DigestMismatch {
            detail: format!(
                "registry {:016x} vs checkpoint {:016x}",
                registry.checkpoint_digest,
                cfg.digest()
            ),
        });
    }
    let data_dir = resolve_data_dir(&cfg, data_dir_flag);

    let tags: Vec<String> = match languages {
        Some(csv) => csv.split(',').map(|s| s.trim().to_string()).collect(),
        None => registry.entries.keys().cloned().collect(),
    };
    let mut utterances = Vec::new();
    for tag in &tags {
        if !registry.entries.contains_key(tag) {
            return Err(Error::UnknownLanguage(tag.clone()));
        }
        let path = split_path(&data_dir, tag, split);
        if languages.is_some() || path.exists() {
            utterances.extend(synthdata::load_split(&path)?);
        }
    }
    if utterances.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no utterances found for split '{split}' in {}",
            data_dir.display()
        )));
    }

    let mut report = evaluate_with_registry(&model, &registry, &utterances)?;
    report.trainable_params = Some(registry.stored_prompt_parameters());
    print!("{}", report.render_table("registry"));
    Ok(())
}

pub fn audit(
    before_path: &Path,
    after_path: &Path,
    languages: Option<&str>,
    data_dir_flag: Option<&Path>,
) -> Result<()> {
    let before = load_checkpoint(before_path)?;
    let after = load_checkpoint(after_path)?;
    let data_dir = resolve_data_dir(&before.0, data_dir_flag);

    let tags: Vec<String> = match languages {
        Some(csv) => csv.split(',').map(|s| s.trim().to_string()).collect(),
        None => before.1.config.base_language_tags(),
    };
    let mut corpora = BTreeMap::new();
    for tag in &tags {
        corpora.insert(
            tag.clone(),
            synthdata::load_split(&split_path(&data_dir, tag, "test"))?,
        );
    }
    let report = audit_forgetting(&before, &after, &corpora)?;
    print!("{}", report.render());
    Ok(())
}

pub fn fft(
    checkpoint: &Path,
    tag: &str,
    out: &Path,
    data_dir_flag: Option<&Path>,
) -> Result<()> {
    if out == checkpoint {
        return Err(Error::InvalidArgument(
            "refusing to overwrite the source checkpoint; pick a different --out".to_string(),
        ));
    }
    let (cfg, model) = load_checkpoint(checkpoint)?;
    let data_dir = resolve_data_dir(&cfg, data_dir_flag);
    let corpus = load_corpus(&data_dir, tag)?;

    let mut lang_tokens = BTreeMap::new();
    match model.config.language_token(tag) {
        Some(token) => {
            lang_tokens.insert(tag.to_string(), token);
        }
        None => {
            lang_tokens.insert(tag.to_string(), model.config.allocate_language_token(0)?);
        }
    }

    let train_cfg = TrainConfig::from_section(&cfg.fft);
    let (tuned, history) = fft_baseline(&model, &corpus.train, &lang_tokens, &train_cfg)?;
    save_checkpoint(out, &cfg, &tuned)?;
    println!(
        "fft loss: first {:.4} last {:.4} over {} epochs",
        history.first().unwrap_or(&f64::NAN),
        history.last().unwrap_or(&f64::NAN),
        history.len()
    );
    println!(
        "base hash {:016x} -> tuned hash {:016x}",
        model.content_hash(),
        tuned.content_hash()
    );
    println!("wrote {}", out.display());
    Ok(())
}
