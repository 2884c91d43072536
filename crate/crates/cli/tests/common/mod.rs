//! Shared helpers for CLI integration tests: a miniature run configuration
//! that trains in seconds.

use promptasr_core::config::RunConfig;

pub fn tiny_run_config(data_dir: &str, checkpoint: &str, registry: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.embed_dim = 16;
    cfg.model.feature_dim = 16;
    cfg.model.heads = 2;
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.model.enc_ctx = 64;
    cfg.model.dec_ctx = 32;
    cfg.model.vocab_size = 64;
    cfg.model.lang_token_base = 30;
    cfg.data.utterances_per_language = 12;
    cfg.data.vocab_per_language = 8;
    cfg.data.min_tokens = 2;
    cfg.data.max_tokens = 4;
    cfg.pretrain.epochs = 3;
    cfg.pretrain.learning_rate = 3e-3;
    cfg.prompt.n_enc = 4;
    cfg.prompt.n_dec = 4;
    cfg.prompt.epochs = 2;
    cfg.prompt.batch_size = 2;
    cfg.lapt.segments = 4;
    cfg.lapt.prompt_encoder_hidden = 32;
    cfg.fft.epochs = 2;
    cfg.paths.data_dir = data_dir.to_string();
    cfg.paths.checkpoint = checkpoint.to_string();
    cfg.paths.registry = registry.to_string();
    cfg
}

pub fn write_config(dir: &std::path::Path, cfg: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.canonical_toml()).unwrap();
    path
}
