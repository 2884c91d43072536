//! Shared filesystem plumbing: corpus layout, language construction from the
//! config, and the registry lock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use promptasr_core::config::{LanguageRole, RunConfig};
use promptasr_core::error::{Error, Result};
use promptasr_core::hashing::Fnv64;
use promptasr_core::synthdata::{self, Corpus, LanguageSpec};

pub const DATA_DIR_ENV: &str = "PROMPTASR_DATA_DIR";

/// Directory holding corpus files: explicit flag, then the environment
/// override, then the config's paths section.
pub fn resolve_data_dir(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(&cfg.paths.data_dir)
}

pub fn split_path(data_dir: &Path, tag: &str, split: &str) -> PathBuf {
    data_dir.join(format!("{tag}.{split}.sptc"))
}

/// Build every language of the config.
///
/// Base languages take disjoint character blocks. Derived and conflicting
/// languages draw their non-shared characters from the other base languages'
/// inventories (seeded order): like real scripts, the characters are already
/// known to the recognizer while the sounds attached to them are new. Tokens
/// the base model cannot emit at all would make expansion unlearnable for
/// any parameter-efficient method.
pub fn language_specs(cfg: &RunConfig) -> Result<Vec<LanguageSpec>> {
    let n_base = cfg
        .data
        .languages
        .iter()
        .filter(|l| l.role == LanguageRole::Base)
        .count();
    let region = cfg.model.lang_token_base;
    let block = region / n_base.max(1);
    if cfg.data.vocab_per_language > block {
        return Err(Error::Config(format!(
            "data.vocab_per_language {} exceeds the {} ids available per base language",
            cfg.data.vocab_per_language, block
        )));
    }

    let mut specs: Vec<LanguageSpec> = Vec::new();
    let mut base_index = 0usize;
    for entry in &cfg.data.languages {
        let spec = match entry.role {
            LanguageRole::Base => {
                let ids =
                    (base_index * block..base_index * block + cfg.data.vocab_per_language).collect();
                base_index += 1;
                LanguageSpec::root(
                    &entry.tag,
                    ids,
                    cfg.model.feature_dim,
                    cfg.data.noise_std,
                    entry.seed,
                )
            }
            LanguageRole::Derived | LanguageRole::Conflicting => {
                let parent_tag = entry.parent.as_deref().expect("validated");
                let parent = specs
                    .iter()
                    .find(|s| s.tag == parent_tag)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "data.languages[{}].parent '{parent_tag}' must appear earlier",
                            entry.tag
                        ))
                    })?;
                let pool = borrow_pool(&specs, parent_tag, entry.seed);
                if entry.role == LanguageRole::Derived {
                    LanguageSpec::derive(
                        parent,
                        &entry.tag,
                        entry.relatedness.expect("validated"),
                        &pool,
                        entry.seed,
                    )?
                } else {
                    LanguageSpec::derive_conflicting(parent, &entry.tag, &pool, entry.seed)?
                }
            }
        };
        specs.push(spec);
    }
    Ok(specs)
}

/// Characters of every base language except the parent, in seeded order.
fn borrow_pool(specs: &[LanguageSpec], parent_tag: &str, seed: u64) -> Vec<usize> {
    let pool: Vec<usize> = specs
        .iter()
        .filter(|s| s.parent.is_none() && s.tag != parent_tag)
        .flat_map(|s| s.vocab.iter().copied())
        .collect();
    promptasr_core::spt::epoch_order(pool.len(), seed, 0)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Per-language corpus seed derived from the data seed and the entry seed.
pub fn corpus_seed(cfg: &RunConfig, tag: &str, entry_seed: u64) -> u64 {
    let mut h = Fnv64::new();
    h.update(&cfg.data.seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(&entry_seed.to_le_bytes());
    h.finish()
}

pub fn generate_all(cfg: &RunConfig) -> Result<Vec<(String, Corpus)>> {
    let specs = language_specs(cfg)?;
    let mut out = Vec::new();
    for spec in &specs {
        let entry = cfg.language_entry(&spec.tag)?;
        let corpus = synthdata::generate_corpus(
            spec,
            cfg.data.utterances_per_language,
            cfg.data.min_tokens,
            cfg.data.max_tokens,
            cfg.data.frame_rate,
            corpus_seed(cfg, &spec.tag, entry.seed),
        )?;
        out.push((spec.tag.clone(), corpus));
    }
    Ok(out)
}

/// Load one language's three splits from disk.
pub fn load_corpus(data_dir: &Path, tag: &str) -> Result<Corpus> {
    Ok(Corpus {
        train: synthdata::load_split(&split_path(data_dir, tag, "train"))?,
        dev: synthdata::load_split(&split_path(data_dir, tag, "dev"))?,
        test: synthdata::load_split(&split_path(data_dir, tag, "test"))?,
    })
}

/// Load every language with data present in the directory.
pub fn load_available(data_dir: &Path, tags: &[String]) -> Result<BTreeMap<String, Corpus>> {
    let mut out = BTreeMap::new();
    for tag in tags {
        if split_path(data_dir, tag, "train").exists() {
            out.insert(tag.clone(), load_corpus(data_dir, tag)?);
        }
    }
    Ok(out)
}

/// Advisory exclusive lock for registry mutations: a sibling `.lock` file
/// created exclusively and removed on drop.
pub struct RegistryLock {
    path: PathBuf,
}

impl RegistryLock {
    pub fn acquire(registry_path: &Path) -> Result<Self> {
        let path = registry_path.with_extension("sptr.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(RegistryLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::InvalidArgument(format!(
                    "registry is locked (remove stale {} if no other process is running)",
                    path.display()
                )))
            }
            Err(e) => Err(Error::io(path.display().to_string(), e)),
        }
    }
}

impl Drop for RegistryLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_vocabularies_do_not_overlap() {
        let cfg = RunConfig::default();
        let specs = language_specs(&cfg).unwrap();
        let base: Vec<&LanguageSpec> = specs.iter().filter(|s| s.parent.is_none()).collect();
        for (i, a) in base.iter().enumerate() {
            for b in base.iter().skip(i + 1) {
                assert!(a.vocab.iter().all(|id| !b.vocab.contains(id)));
            }
        }
    }

    #[test]
    fn derived_language_shares_with_its_parent() {
        let cfg = RunConfig::default();
        let specs = language_specs(&cfg).unwrap();
        let base0 = specs.iter().find(|s| s.tag == "base-0").unwrap();
        let child0 = specs.iter().find(|s| s.tag == "child-0").unwrap();
        let shared = child0
            .vocab
            .iter()
            .filter(|id| base0.vocab.contains(id))
            .count();
        // rho = 0.9 of 20
        assert_eq!(shared, 18);
    }

    #[test]
    fn conflicting_language_reuses_acoustics_only() {
        let cfg = RunConfig::default();
        let specs = language_specs(&cfg).unwrap();
        let base0 = specs.iter().find(|s| s.tag == "base-0").unwrap();
        let overlap = specs.iter().find(|s| s.tag == "overlap-0").unwrap();
        assert_eq!(overlap.emission, base0.emission);
        assert!(overlap.vocab.iter().all(|id| !base0.vocab.contains(id)));
    }

    #[test]
    fn non_shared_characters_are_borrowed_from_other_base_scripts() {
        let cfg = RunConfig::default();
        let specs = language_specs(&cfg).unwrap();
        let known: Vec<usize> = specs
            .iter()
            .filter(|s| s.parent.is_none())
            .flat_map(|s| s.vocab.iter().copied())
            .collect();
        for tag in ["child-0", "child-1", "overlap-0"] {
            let spec = specs.iter().find(|s| s.tag == tag).unwrap();
            assert!(
                spec.vocab.iter().all(|id| known.contains(id)),
                "{tag} uses a character the base model cannot emit"
            );
        }
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let reg = dir.path().join("r.sptr");
        let lock = RegistryLock::acquire(&reg).unwrap();
        assert!(RegistryLock::acquire(&reg).is_err());
        drop(lock);
        assert!(RegistryLock::acquire(&reg).is_ok());
    }

    #[test]
    fn env_override_wins_over_config() {
        let cfg = RunConfig::default();
        std::env::set_var(DATA_DIR_ENV, "/tmp/elsewhere");
        let dir = resolve_data_dir(&cfg, None);
        std::env::remove_var(DATA_DIR_ENV);
        assert_eq!(dir, PathBuf::from("/tmp/elsewhere"));
        // explicit flag still beats the environment
        std::env::set_var(DATA_DIR_ENV, "/tmp/elsewhere");
        let dir2 = resolve_data_dir(&cfg, Some(Path::new("/tmp/flag")));
        std::env::remove_var(DATA_DIR_ENV);
        assert_eq!(dir2, PathBuf::from("/tmp/flag"));
    }
}
