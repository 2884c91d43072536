//! Decode a few utterances of a registered language and print reference vs
//! hypothesis token ids.
//!
//! Usage: inspect_decodes <checkpoint> <registry> <split-file> <tag>

use promptasr_core::checkpoint::load_checkpoint;
use promptasr_core::continual::load_registry;
use promptasr_core::synthdata::load_split;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (ckpt, reg, split_file, tag) = (&args[1], &args[2], &args[3], &args[4]);
    let (_cfg, model) = load_checkpoint(std::path::Path::new(ckpt)).unwrap();
    let registry = load_registry(std::path::Path::new(reg)).unwrap();
    let utts = load_split(std::path::Path::new(split_file)).unwrap();
    let resolve = registry.resolver();
    let (token, prompts) = resolve(tag).unwrap();
    for utt in utts.iter().take(6) {
        let out = model.greedy_decode(&utt.features, token, &prompts).unwrap();
        println!("ref {:?}", utt.transcript);
        println!("hyp {:?} truncated={}", out.tokens, out.truncated);
    }
}
