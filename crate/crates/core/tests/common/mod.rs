#![allow(dead_code)]

use elbert::model::{Model, ModelConfig, TokenSequence, FIRST_WORD_ID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(depth: usize) -> ModelConfig {
    ModelConfig {
        depth,
        hidden: 16,
        heads: 2,
        ffn: 32,
        vocab: 30,
        max_seq_len: 12,
        classes: 3,
    }
}

pub fn random_sequences(seed: u64, k: usize, cfg: &ModelConfig) -> Vec<TokenSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let len = rng.random_range(0..cfg.max_seq_len);
            let body: Vec<usize> = (0..len).map(|_| rng.random_range(FIRST_WORD_ID..cfg.vocab)).collect();
            TokenSequence::with_cls(&body)
        })
        .collect()
}

pub fn distinct(values: &[usize]) -> usize {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Random model with every weight matrix scaled by `scale`, so hidden states
/// keep changing from one iteration to the next and outputs differ between
/// inputs.
pub fn lively_model(cfg: ModelConfig, seed: u64, scale: f64) -> Model {
    let mut m = Model::init(cfg, seed).unwrap();
    for (name, t) in m.params_mut().entries_mut() {
        if !name.ends_with("gain") && !name.ends_with("bias") && name != "exit_logits" {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    m
}
