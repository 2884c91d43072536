//! Run configuration: canonical structured text, schema-versioned.
//!
//! One [`RunConfig`] drives data generation, pretraining, expansion and
//! evaluation. The canonical TOML rendering is embedded into every artifact
//! the run produces, and its digest ties registries to checkpoints. Unknown
//! keys are rejected during parsing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::fnv1a64;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelSection,
    pub data: DataSection,
    pub pretrain: TrainSection,
    pub prompt: PromptSection,
    pub lapt: LaptSection,
    pub fft: TrainSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Embedding / model dimension e.
    pub embed_dim: usize,
    /// Raw acoustic feature dimension; defaults to embed_dim.
    pub feature_dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub enc_ctx: usize,
    pub dec_ctx: usize,
    pub vocab_size: usize,
    /// First token id reserved for language tokens; character tokens live below it.
    pub lang_token_base: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    pub utterances_per_language: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Frames emitted per transcript token.
    pub frame_rate: usize,
    /// Vocabulary size of each synthetic language.
    pub vocab_per_language: usize,
    pub noise_std: f64,
    pub languages: Vec<LanguageEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LanguageEntry {
    pub tag: String,
    pub role: LanguageRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Fraction of vocabulary and emission rows shared with the parent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relatedness: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum LanguageRole {
    /// Pretrained into the base model.
    Base,
    /// Derived from a parent, added later by expansion.
    Derived,
    /// Same acoustics as the parent, disjoint transcripts: the suite that
    /// makes full fine-tuning forget.
    Conflicting,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    pub n_enc: usize,
    pub n_dec: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LaptSection {
    /// Language-prompt rows prepended before the encoder soft prompt.
    pub n_lp: usize,
    /// M: audio segments sampled for similarity estimation.
    pub segments: usize,
    /// Initialize the language prompt from the similarity-weighted blend of
    /// all base embeddings instead of copying the most similar one.
    pub blend_init: bool,
    /// In shared mode, interleave earlier expanded languages' corpora when
    /// training a later language.
    pub interleave_shared: bool,
    pub prompt_encoder_hidden: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: String,
    pub checkpoint: String,
    pub registry: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            model: ModelSection {
                embed_dim: 64,
                feature_dim: 64,
                heads: 4,
                enc_layers: 2,
                dec_layers: 2,
                enc_ctx: 256,
                dec_ctx: 64,
                vocab_size: 256,
                lang_token_base: 200,
            },
            data: DataSection {
                seed: 1234,
                utterances_per_language: 200,
                min_tokens: 3,
                max_tokens: 8,
                frame_rate: 2,
                vocab_per_language: 20,
                noise_std: 0.1,
                languages: vec![
                    LanguageEntry {
                        tag: "base-0".into(),
                        role: LanguageRole::Base,
                        parent: None,
                        relatedness: None,
                        seed: 10,
                    },
                    LanguageEntry {
                        tag: "base-1".into(),
                        role: LanguageRole::Base,
                        parent: None,
                        relatedness: None,
                        seed: 11,
                    },
                    LanguageEntry {
                        tag: "base-2".into(),
                        role: LanguageRole::Base,
                        parent: None,
                        relatedness: None,
                        seed: 12,
                    },
                    LanguageEntry {
                        tag: "child-0".into(),
                        role: LanguageRole::Derived,
                        parent: Some("base-0".into()),
                        relatedness: Some(0.9),
                        seed: 20,
                    },
                    LanguageEntry {
                        tag: "child-1".into(),
                        role: LanguageRole::Derived,
                        parent: Some("base-1".into()),
                        relatedness: Some(0.5),
                        seed: 21,
                    },
                    LanguageEntry {
                        tag: "overlap-0".into(),
                        role: LanguageRole::Conflicting,
                        parent: Some("base-0".into()),
                        relatedness: None,
                        seed: 22,
                    },
                ],
            },
            pretrain: TrainSection {
                epochs: 60,
                batch_size: 8,
                learning_rate: 1e-3,
                seed: 500,
            },
            prompt: PromptSection {
                n_enc: 16,
                n_dec: 16,
                epochs: 20,
                batch_size: 2,
                learning_rate: 1e-3,
                seed: 600,
            },
            lapt: LaptSection {
                n_lp: 1,
                segments: 8,
                blend_init: false,
                interleave_shared: false,
                prompt_encoder_hidden: 128,
            },
            fft: TrainSection {
                epochs: 20,
                batch_size: 8,
                learning_rate: 1e-4,
                seed: 700,
            },
            paths: PathsSection {
                data_dir: "data".into(),
                checkpoint: "base.sptw".into(),
                registry: "registry.sptr".into(),
            },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    /// Canonical rendering: field order is fixed by the struct definitions,
    /// so identical configs serialize to identical bytes.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> u64 {
        fnv1a64(self.canonical_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let m = &self.model;
        if m.embed_dim == 0 || m.embed_dim % m.heads != 0 {
            return Err(Error::Config(format!(
                "model.embed_dim {} must be a positive multiple of model.heads {}",
                m.embed_dim, m.heads
            )));
        }
        if m.dec_ctx < 5 {
            return Err(Error::Config(format!(
                "model.dec_ctx {} must be at least 5",
                m.dec_ctx
            )));
        }
        if m.lang_token_base + 32 > m.vocab_size {
            return Err(Error::Config(
                "model.lang_token_base leaves no room for language and special tokens".into(),
            ));
        }
        if self.data.min_tokens == 0 || self.data.min_tokens > self.data.max_tokens {
            return Err(Error::Config(format!(
                "data.min_tokens {} / data.max_tokens {} invalid",
                self.data.min_tokens, self.data.max_tokens
            )));
        }
        if self.data.frame_rate == 0 {
            return Err(Error::Config("data.frame_rate must be >= 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for lang in &self.data.languages {
            if !seen.insert(lang.tag.clone()) {
                return Err(Error::Config(format!(
                    "data.languages: duplicate tag '{}'",
                    lang.tag
                )));
            }
            match lang.role {
                LanguageRole::Base => {
                    if lang.parent.is_some() || lang.relatedness.is_some() {
                        return Err(Error::Config(format!(
                            "data.languages[{}]: base languages take no parent or relatedness",
                            lang.tag
                        )));
                    }
                }
                LanguageRole::Derived => {
                    let rho = lang.relatedness.ok_or_else(|| {
                        Error::Config(format!(
                            "data.languages[{}].relatedness is required for derived languages",
                            lang.tag
                        ))
                    })?;
                    if !(0.0..=1.0).contains(&rho) {
                        return Err(Error::Config(format!(
                            "data.languages[{}].relatedness {} outside [0, 1]",
                            lang.tag, rho
                        )));
                    }
                    self.check_parent(lang)?;
                }
                LanguageRole::Conflicting => {
                    if lang.relatedness.is_some() {
                        return Err(Error::Config(format!(
                            "data.languages[{}]: conflicting languages take no relatedness",
                            lang.tag
                        )));
                    }
                    self.check_parent(lang)?;
                }
            }
        }
        if self.base_language_tags().is_empty() {
            return Err(Error::Config("data.languages needs at least one base language".into()));
        }
        for (name, lr) in [
            ("pretrain", self.pretrain.learning_rate),
            ("prompt", self.prompt.learning_rate as f64),
            ("fft", self.fft.learning_rate),
        ] {
            if lr < 0.0 || !lr.is_finite() {
                return Err(Error::Config(format!("{name}.learning_rate {lr} invalid")));
            }
        }
        if self.lapt.segments == 0 {
            return Err(Error::Config("lapt.segments must be >= 1".into()));
        }
        Ok(())
    }

    fn check_parent(&self, lang: &LanguageEntry) -> Result<()> {
        let parent = lang.parent.as_deref().ok_or_else(|| {
            Error::Config(format!("data.languages[{}].parent is required", lang.tag))
        })?;
        let ok = self
            .data
            .languages
            .iter()
            .any(|l| l.tag == parent && l.role == LanguageRole::Base);
        if !ok {
            return Err(Error::Config(format!(
                "data.languages[{}].parent '{}' is not a base language",
                lang.tag, parent
            )));
        }
        Ok(())
    }

    pub fn base_language_tags(&self) -> Vec<String> {
        self.data
            .languages
            .iter()
            .filter(|l| l.role == LanguageRole::Base)
            .map(|l| l.tag.clone())
            .collect()
    }

    pub fn language_entry(&self, tag: &str) -> Result<&LanguageEntry> {
        self.data
            .languages
            .iter()
            .find(|l| l.tag == tag)
            .ok_or_else(|| Error::UnknownLanguage(tag.to_string()))
    }
}
