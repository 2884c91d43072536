//! Hand-constructed models with argmax paths that can be reasoned out on
//! paper, used as decoding oracles.
//!
//! The copy model routes information purely through cross-attention:
//! dimensions 0..31 carry token identity, 32..63 carry position one-hots.
//! The encoder is an identity pass (attention and MLP outputs zeroed), the
//! decoder's query projection shifts position p to p-3, so the row that
//! predicts transcript token i attends exactly the encoder frame of token i.
//! Everything else is zeroed. Greedy decoding must therefore reproduce the
//! transcript frame-for-frame, ending on the end-of-transcript marker frame.

use std::collections::BTreeMap;

use promptasr_core::eval::{evaluate, lid_accuracy};
use promptasr_core::model::{
    ActivePrompts, BaseModel, ModelConfig, ParamMap, SpecialTokens,
};
use promptasr_core::rng::Rng;
use promptasr_core::synthdata::Utterance;
use promptasr_core::tensor::Tensor;

const E: usize = 64;
const TOKEN_DIMS: usize = 32; // 0..31 token identity, 31 doubles as the eot marker
const EOT_MARKER_DIM: usize = 31;

fn zeros(rows: usize, cols: usize) -> Tensor {
    Tensor::zeros(vec![rows, cols])
}

fn ones_row(cols: usize) -> Tensor {
    Tensor::new(vec![1, cols], vec![1.0; cols]).unwrap()
}

fn eye(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    Tensor::matrix(n, n, data).unwrap()
}

fn copy_config() -> ModelConfig {
    ModelConfig {
        embed_dim: E,
        feature_dim: E,
        heads: 1,
        enc_layers: 1,
        dec_layers: 1,
        enc_ctx: 32,
        dec_ctx: 32,
        vocab_size: 32,
        specials: SpecialTokens {
            sot: 26,
            task: 27,
            no_timestamps: 28,
            prev: 29,
            eot: 30,
        },
        base_languages: vec![("copy".into(), 20)],
        lang_token_base: 20,
    }
}

fn ln_params(p: &mut ParamMap, prefix: &str) {
    p.insert(format!("{prefix}.g"), ones_row(E));
    p.insert(format!("{prefix}.b"), zeros(1, E));
}

fn zero_attention(p: &mut ParamMap, prefix: &str) {
    p.insert(format!("{prefix}.h0.q"), zeros(E, E));
    p.insert(format!("{prefix}.h0.k"), zeros(E, E));
    p.insert(format!("{prefix}.h0.v"), zeros(E, E));
    p.insert(format!("{prefix}.h0.o"), zeros(E, E));
    p.insert(format!("{prefix}.bias"), zeros(1, E));
}

fn zero_mlp(p: &mut ParamMap, prefix: &str) {
    let h = 4 * E;
    p.insert(format!("{prefix}.w1"), zeros(E, h));
    p.insert(format!("{prefix}.b1"), zeros(1, h));
    p.insert(format!("{prefix}.w2"), zeros(h, E));
    p.insert(format!("{prefix}.b2"), zeros(1, E));
}

fn position_table(rows: usize) -> Tensor {
    let mut data = vec![0.0; rows * E];
    for p in 0..rows.min(TOKEN_DIMS) {
        data[p * E + TOKEN_DIMS + p] = 1.0;
    }
    Tensor::matrix(rows, E, data).unwrap()
}

/// Token embeddings: one-hot identity for real tokens, the marker dimension
/// for eot, nothing for the unused id 31.
fn embedding_table() -> Tensor {
    let mut data = vec![0.0; 32 * E];
    for t in 0..30 {
        data[t * E + t] = 1.0;
    }
    data[30 * E + EOT_MARKER_DIM] = 1.0;
    Tensor::matrix(32, E, data).unwrap()
}

fn build_copy_model() -> BaseModel {
    let cfg = copy_config();
    let mut p = ParamMap::new();
    p.insert("frontend.w".into(), eye(E));
    p.insert("frontend.b".into(), zeros(1, E));
    p.insert("embed.tokens".into(), embedding_table());
    p.insert("enc.pos".into(), position_table(cfg.enc_ctx));
    p.insert("dec.pos".into(), position_table(cfg.dec_ctx));

    ln_params(&mut p, "enc.0.ln1");
    zero_attention(&mut p, "enc.0.attn");
    ln_params(&mut p, "enc.0.ln2");
    zero_mlp(&mut p, "enc.0.mlp");
    ln_params(&mut p, "enc.final_ln");

    ln_params(&mut p, "dec.0.ln1");
    zero_attention(&mut p, "dec.0.self");
    ln_params(&mut p, "dec.0.ln2");

    // cross attention: queries shift position p to p-3, keys and values read
    // the encoder states unchanged, the output keeps only token dimensions
    let alpha = 10.0;
    let beta = 2.0;
    let mut wq = vec![0.0; E * E];
    for p_idx in 3..TOKEN_DIMS {
        wq[(TOKEN_DIMS + p_idx) * E + (TOKEN_DIMS + p_idx - 3)] = alpha;
    }
    let mut wo = vec![0.0; E * E];
    for d in 0..TOKEN_DIMS {
        wo[d * E + d] = beta;
    }
    p.insert("dec.0.cross.h0.q".into(), Tensor::matrix(E, E, wq).unwrap());
    p.insert("dec.0.cross.h0.k".into(), eye(E));
    p.insert("dec.0.cross.h0.v".into(), eye(E));
    p.insert("dec.0.cross.h0.o".into(), Tensor::matrix(E, E, wo).unwrap());
    p.insert("dec.0.cross.bias".into(), zeros(1, E));

    ln_params(&mut p, "dec.0.ln3");
    zero_mlp(&mut p, "dec.0.mlp");
    ln_params(&mut p, "dec.final_ln");

    let mut model = BaseModel::from_params(cfg, p).unwrap();
    model.freeze();
    model
}

/// One feature frame per token, then the eot marker frame.
fn features_for(transcript: &[usize]) -> Tensor {
    let l = transcript.len() + 1;
    let mut data = vec![0.0; l * E];
    for (i, &t) in transcript.iter().enumerate() {
        data[i * E + t] = 1.0;
    }
    data[transcript.len() * E + EOT_MARKER_DIM] = 1.0;
    Tensor::matrix(l, E, data).unwrap()
}

fn random_transcript(rng: &mut Rng) -> Vec<usize> {
    let len = rng.next_range(1, 9);
    (0..len).map(|_| rng.next_below(20)).collect()
}

#[test]
fn copy_model_decodes_exact_transcripts() {
    let model = build_copy_model();
    let mut rng = Rng::new(42);
    for _ in 0..25 {
        let transcript = random_transcript(&mut rng);
        let x = features_for(&transcript);
        let out = model.greedy_decode(&x, 20, &ActivePrompts::none()).unwrap();
        assert_eq!(out.tokens, transcript, "copy model must reproduce input");
        assert!(!out.truncated);
    }
}

#[test]
fn copy_model_handles_repeated_tokens() {
    let model = build_copy_model();
    for transcript in [vec![7, 7, 7], vec![0, 0], vec![19, 19, 19, 19, 19]] {
        let x = features_for(&transcript);
        let out = model.greedy_decode(&x, 20, &ActivePrompts::none()).unwrap();
        assert_eq!(out.tokens, transcript);
    }
}

#[test]
fn perfect_model_scores_zero_cer() {
    let model = build_copy_model();
    let mut rng = Rng::new(7);
    let utterances: Vec<Utterance> = (0..10)
        .map(|_| {
            let transcript = random_transcript(&mut rng);
            Utterance {
                features: features_for(&transcript),
                transcript,
                tag: "copy".to_string(),
            }
        })
        .collect();
    let resolver = |_tag: &str| Ok((20usize, ActivePrompts::none()));
    let report = evaluate(&model, &resolver, &utterances).unwrap();
    assert_eq!(report.overall.total_edits, 0);
    assert_eq!(report.overall.rate(), 0.0);
    assert_eq!(report.language_cer("copy"), Some(0.0));
}

#[test]
fn immediate_eot_model_scores_cer_one_all_deletions() {
    // adding a large eot-direction bias to every decoder row ends decoding
    // before the first token
    let mut model = build_copy_model().thawed_clone();
    {
        let params = model.params_mut().unwrap();
        let bias = params.get_mut("dec.0.mlp.b2").unwrap();
        bias.data_mut()[EOT_MARKER_DIM] = 60.0;
    }
    model.freeze();

    let mut rng = Rng::new(8);
    let utterances: Vec<Utterance> = (0..6)
        .map(|_| {
            let transcript = random_transcript(&mut rng);
            Utterance {
                features: features_for(&transcript),
                transcript,
                tag: "copy".to_string(),
            }
        })
        .collect();
    let resolver = |_tag: &str| Ok((20usize, ActivePrompts::none()));
    let report = evaluate(&model, &resolver, &utterances).unwrap();
    assert_eq!(report.overall.rate(), 1.0);
    let deletions: usize = report.utterances.iter().map(|u| u.edits.deletions).sum();
    assert_eq!(deletions, report.overall.total_edits);
}

#[test]
fn lid_accuracy_is_perfect_with_one_base_language() {
    let model = build_copy_model();
    let mut rng = Rng::new(9);
    let segments: Vec<Utterance> = (0..5)
        .map(|_| {
            let transcript = random_transcript(&mut rng);
            Utterance {
                features: features_for(&transcript),
                transcript,
                tag: "copy".to_string(),
            }
        })
        .collect();
    assert_eq!(lid_accuracy(&model, &segments).unwrap(), 1.0);
}

#[test]
fn tied_language_logits_send_all_votes_to_index_zero() {
    // two base languages whose token embeddings are identical: the restricted
    // softmax ties and the argmax rule sends every vote to index 0
    let mut cfg = copy_config();
    cfg.base_languages = vec![("first".into(), 20), ("second".into(), 21)];
    let mut base = build_copy_model().thawed_clone();
    {
        let params = base.params_mut().unwrap();
        let emb = params.get_mut("embed.tokens").unwrap();
        let row20: Vec<f64> = emb.row(20).to_vec();
        let cols = emb.cols();
        emb.data_mut()[21 * cols..22 * cols].copy_from_slice(&row20);
    }
    let model = {
        let mut m = BaseModel::from_params(cfg, base.params().clone()).unwrap();
        m.freeze();
        m
    };

    let mut rng = Rng::new(10);
    let segments: Vec<Utterance> = (0..8)
        .map(|i| {
            let transcript = random_transcript(&mut rng);
            Utterance {
                features: features_for(&transcript),
                transcript,
                tag: if i % 2 == 0 { "first" } else { "second" }.to_string(),
            }
        })
        .collect();
    // half the labels are "first" (index 0), so the tie rule scores exactly 0.5
    let acc = lid_accuracy(&model, &segments).unwrap();
    assert_eq!(acc, 0.5);
    for seg in &segments {
        let p = model.identify_language(&seg.features).unwrap();
        assert_eq!(p[0], p[1]);
    }
}

#[test]
fn seen_language_decoding_ignores_prompt_sets_entirely() {
    // the frozen model decodes a base language identically before and after
    // unrelated prompt material exists anywhere
    let model = build_copy_model();
    let transcript = vec![3, 1, 4, 1, 5];
    let x = features_for(&transcript);
    let before = model.greedy_decode(&x, 20, &ActivePrompts::none()).unwrap();

    // build some prompt state; the base-language call never sees it
    let _unused = promptasr_core::spt::PromptSet::init(
        "other",
        "other",
        promptasr_core::spt::PromptMode::Entire,
        4,
        4,
        1,
        &model,
    )
    .unwrap();
    let after = model.greedy_decode(&x, 20, &ActivePrompts::none()).unwrap();
    assert_eq!(before, after);

    let mut map = BTreeMap::new();
    map.insert("k".to_string(), 1usize);
    assert_eq!(map.len(), 1);
}
