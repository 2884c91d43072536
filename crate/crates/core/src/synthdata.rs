//! Deterministic synthetic multilingual corpora.
//!
//! Each language owns a token vocabulary and a Gaussian emission vector per
//! token; an utterance repeats each transcript token's emission for
//! `frame_rate` frames plus noise. Languages derived from a parent share a
//! controllable fraction of vocabulary and emission rows, which is the knob
//! that makes cross-lingual similarity estimation meaningful at this scale.
//! All randomness flows from explicit seeds.

use std::collections::BTreeSet;
use std::path::Path;

use crate::container::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::hashing::Fnv64;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CORPUS_MAGIC: &[u8; 4] = b"SPTC";
pub const CORPUS_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSpec {
    pub tag: String,
    /// Global token ids this language writes transcripts in.
    pub vocab: Vec<usize>,
    /// One emission mean per vocab entry, feature_dim wide.
    pub emission: Vec<Vec<f64>>,
    pub noise_std: f64,
    /// Fraction of vocabulary and emissions shared with the parent.
    pub relatedness: f64,
    pub parent: Option<String>,
    pub seed: u64,
    pub feature_dim: usize,
}

impl LanguageSpec {
    /// A root language over the given token ids, emissions drawn fresh.
    pub fn root(
        tag: &str,
        vocab: Vec<usize>,
        feature_dim: usize,
        noise_std: f64,
        seed: u64,
    ) -> Self {
        let mut rng = Rng::new(seed).fork("emissions");
        let emission = (0..vocab.len())
            .map(|_| rng.normal_vec(feature_dim, 1.0))
            .collect();
        LanguageSpec {
            tag: tag.to_string(),
            vocab,
            emission,
            noise_std,
            relatedness: 0.0,
            parent: None,
            seed,
            feature_dim,
        }
    }

    /// Derive a child sharing `ceil(rho * V)` leading vocab entries and their
    /// emission rows with the parent; the remainder uses fresh token ids and
    /// fresh emissions.
    pub fn derive(
        parent: &LanguageSpec,
        tag: &str,
        rho: f64,
        fresh_ids: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!(
                "relatedness {rho} outside [0, 1]"
            )));
        }
        let v = parent.vocab.len();
        let n_shared = (rho * v as f64).ceil() as usize;
        let n_fresh = v - n_shared;
        if fresh_ids.len() < n_fresh {
            return Err(Error::InvalidArgument(format!(
                "need {n_fresh} fresh token ids, got {}",
                fresh_ids.len()
            )));
        }
        let parent_set: BTreeSet<usize> = parent.vocab.iter().copied().collect();
        if fresh_ids[..n_fresh].iter().any(|id| parent_set.contains(id)) {
            return Err(Error::InvalidArgument(
                "fresh token ids overlap the parent vocabulary".to_string(),
            ));
        }
        let mut vocab = parent.vocab[..n_shared].to_vec();
        let mut emission: Vec<Vec<f64>> = parent.emission[..n_shared].to_vec();
        let mut rng = Rng::new(seed).fork("emissions");
        for &id in &fresh_ids[..n_fresh] {
            vocab.push(id);
            emission.push(rng.normal_vec(parent.feature_dim, 1.0));
        }
        Ok(LanguageSpec {
            tag: tag.to_string(),
            vocab,
            emission,
            noise_std: parent.noise_std,
            relatedness: rho,
            parent: Some(parent.tag.clone()),
            seed,
            feature_dim: parent.feature_dim,
        })
    }

    /// Same acoustics as the parent, disjoint transcripts. Full fine-tuning
    /// on such a language must unlearn the parent's sound-to-token mapping.
    pub fn derive_conflicting(
        parent: &LanguageSpec,
        tag: &str,
        fresh_ids: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let v = parent.vocab.len();
        if fresh_ids.len() < v {
            return Err(Error::InvalidArgument(format!(
                "need {v} fresh token ids, got {}",
                fresh_ids.len()
            )));
        }
        let parent_set: BTreeSet<usize> = parent.vocab.iter().copied().collect();
        if fresh_ids[..v].iter().any(|id| parent_set.contains(id)) {
            return Err(Error::InvalidArgument(
                "fresh token ids overlap the parent vocabulary".to_string(),
            ));
        }
        Ok(LanguageSpec {
            tag: tag.to_string(),
            vocab: fresh_ids[..v].to_vec(),
            emission: parent.emission.clone(),
            noise_std: parent.noise_std,
            relatedness: 0.0,
            parent: Some(parent.tag.clone()),
            seed,
            feature_dim: parent.feature_dim,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: Tensor,
    pub transcript: Vec<usize>,
    pub tag: String,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, name: &str) -> Result<&[Utterance]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// Generate `count` utterances and split them 70/10/20 by a stable hash of
/// the utterance index, so membership never depends on generation order.
pub fn generate_corpus(
    spec: &LanguageSpec,
    count: usize,
    min_tokens: usize,
    max_tokens: usize,
    frame_rate: usize,
    seed: u64,
) -> Result<Corpus> {
    if count < 3 {
        return Err(Error::InvalidArgument(format!(
            "corpus needs at least 3 utterances, got {count}"
        )));
    }
    if min_tokens == 0 || min_tokens > max_tokens {
        return Err(Error::InvalidArgument(format!(
            "bad token length range {min_tokens}..={max_tokens}"
        )));
    }
    if frame_rate == 0 {
        return Err(Error::InvalidArgument("frame rate must be >= 1".to_string()));
    }

    let utterances: Vec<Utterance> = (0..count)
        .map(|i| synthesize(spec, i, min_tokens, max_tokens, frame_rate, seed))
        .collect::<Result<_>>()?;

    // hash-ordered assignment: sort indices by keyed hash, then carve splits
    let mut keyed: Vec<(u64, usize)> = (0..count)
        .map(|i| {
            let mut h = Fnv64::new();
            h.update(&seed.to_le_bytes());
            h.update(&(i as u64).to_le_bytes());
            (h.finish(), i)
        })
        .collect();
    keyed.sort();
    let n_train = count * 7 / 10;
    let n_dev = count / 10;

    let mut corpus = Corpus::default();
    for (rank, &(_, idx)) in keyed.iter().enumerate() {
        let utt = utterances[idx].clone();
        if rank < n_train {
            corpus.train.push(utt);
        } else if rank < n_train + n_dev {
            corpus.dev.push(utt);
        } else {
            corpus.test.push(utt);
        }
    }
    Ok(corpus)
}

fn synthesize(
    spec: &LanguageSpec,
    index: usize,
    min_tokens: usize,
    max_tokens: usize,
    frame_rate: usize,
    seed: u64,
) -> Result<Utterance> {
    let mut rng = Rng::new(seed).fork(&format!("utt-{index}"));
    let n_tokens = rng.next_range(min_tokens, max_tokens);
    let positions: Vec<usize> = (0..n_tokens)
        .map(|_| rng.next_below(spec.vocab.len()))
        .collect();
    let transcript: Vec<usize> = positions.iter().map(|&p| spec.vocab[p]).collect();

    let l = n_tokens * frame_rate;
    let mut data = Vec::with_capacity(l * spec.feature_dim);
    for &p in &positions {
        for _ in 0..frame_rate {
            for &mean in &spec.emission[p] {
                let value = if spec.noise_std > 0.0 {
                    mean + spec.noise_std * rng.next_normal()
                } else {
                    mean
                };
                data.push(value);
            }
        }
    }
    Ok(Utterance {
        features: Tensor::matrix(l, spec.feature_dim, data)?,
        transcript,
        tag: spec.tag.clone(),
    })
}

// ---- corpus container ------------------------------------------------------

/// Serialize one split: header, then per utterance tag / l / feature_dim /
/// f32 features / token count / token ids. Read back until end of input.
pub fn corpus_split_bytes(utterances: &[Utterance]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_bytes(CORPUS_MAGIC);
    w.put_u16(CORPUS_VERSION);
    for utt in utterances {
        w.put_string(&utt.tag);
        w.put_u32(utt.features.rows() as u32);
        w.put_u32(utt.features.cols() as u32);
        for &v in utt.features.data() {
            w.put_f32(v as f32);
        }
        w.put_u32(utt.transcript.len() as u32);
        for &t in &utt.transcript {
            w.put_u32(t as u32);
        }
    }
    w.into_bytes()
}

pub fn save_split(path: &Path, utterances: &[Utterance]) -> Result<()> {
    crate::container::write_file(path, &corpus_split_bytes(utterances))
}

pub fn load_split(path: &Path) -> Result<Vec<Utterance>> {
    let bytes = crate::container::read_file(path)?;
    let display = path.display().to_string();
    let mut r = ByteReader::new(&bytes, &display);
    if r.take_bytes(4)? != CORPUS_MAGIC {
        return Err(Error::format(&display, "bad magic (not a corpus file)"));
    }
    let version = r.take_u16()?;
    if version != CORPUS_VERSION {
        return Err(Error::format(&display, format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while r.remaining() > 0 {
        let tag = r.take_string()?;
        let l = r.take_u32()? as usize;
        let dim = r.take_u32()? as usize;
        if l == 0 || dim == 0 {
            return Err(Error::format(&display, "utterance with empty feature matrix"));
        }
        let mut data = Vec::with_capacity(l * dim);
        for _ in 0..l * dim {
            data.push(f64::from(r.take_f32()?));
        }
        let n_tokens = r.take_u32()? as usize;
        let mut transcript = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            transcript.push(r.take_u32()? as usize);
        }
        out.push(Utterance {
            features: Tensor::matrix(l, dim, data)?,
            transcript,
            tag,
        });
    }
    Ok(out)
}
