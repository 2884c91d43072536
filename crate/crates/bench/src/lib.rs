//! Shared builders for the criterion benchmarks.

use std::collections::BTreeMap;

use promptasr_core::model::{BaseModel, ModelConfig, SpecialTokens};
use promptasr_core::rng::Rng;
use promptasr_core::spt::{PromptMode, PromptSet};
use promptasr_core::synthdata::{generate_corpus, LanguageSpec, Utterance};
use promptasr_core::tensor::Tensor;

pub fn bench_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 64,
        feature_dim: 64,
        heads: 4,
        enc_layers: 2,
        dec_layers: 2,
        enc_ctx: 256,
        dec_ctx: 64,
        vocab_size: 256,
        specials: SpecialTokens {
            sot: 250,
            task: 251,
            no_timestamps: 252,
            prev: 253,
            eot: 254,
        },
        base_languages: vec![("base-0".into(), 200), ("base-1".into(), 201)],
        lang_token_base: 200,
    }
}

pub fn frozen_model(seed: u64) -> BaseModel {
    let mut m = BaseModel::new(bench_config(), seed).unwrap();
    m.freeze();
    m
}

pub fn features(rows: usize, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::randn(rows, 64, 1.0, &mut rng)
}

pub fn small_corpus(seed: u64) -> Vec<Utterance> {
    let spec = LanguageSpec::root("base-0", (0..20).collect(), 64, 0.1, seed);
    generate_corpus(&spec, 16, 3, 8, 2, seed).unwrap().train
}

pub fn prompt_set(model: &BaseModel) -> PromptSet {
    PromptSet::init("b", "b", PromptMode::Entire, 16, 16, 7, model).unwrap()
}

pub fn lang_tokens() -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    m.insert("base-0".to_string(), 200usize);
    m
}
