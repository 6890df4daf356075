use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::numerics::Matrix;

/// Initial value of every exit-weight logit.
pub const EXIT_LOGIT_INIT: f64 = 4.0;
const INIT_STD: f64 = 0.02;

/// The one encoder block reused at every depth.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<M> {
    pub query: M,
    pub query_bias: M,
    pub key: M,
    pub key_bias: M,
    pub value: M,
    pub value_bias: M,
    pub output: M,
    pub output_bias: M,
    pub attn_norm_gain: M,
    pub attn_norm_bias: M,
    pub ffn_in: M,
    pub ffn_in_bias: M,
    pub ffn_out: M,
    pub ffn_out_bias: M,
    pub ffn_norm_gain: M,
    pub ffn_norm_bias: M,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights<M> {
    pub weight: M,
    pub bias: M,
}

/// Every trainable tensor of the model, generic over storage so the same
/// layout can hold values, tape handles, gradients or optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<M> {
    pub token_embedding: M,
    pub position_embedding: M,
    pub encoder: EncoderWeights<M>,
    pub classifier: ClassifierWeights<M>,
    /// `1×(d−1)` logits of the per-exit loss weights; only used in training.
    pub exit_logits: M,
}

pub type Parameters = ParamSet<Matrix>;

impl<M> ParamSet<M> {
    /// Tensors in canonical (weight-file manifest) order.
    pub fn entries(&self) -> Vec<(&'static str, &M)> {
        let e = &self.encoder;
        vec![
            ("token_embedding", &self.token_embedding),
            ("position_embedding", &self.position_embedding),
            ("encoder.query", &e.query),
            ("encoder.query_bias", &e.query_bias),
            ("encoder.key", &e.key),
            ("encoder.key_bias", &e.key_bias),
            ("encoder.value", &e.value),
            ("encoder.value_bias", &e.value_bias),
            ("encoder.output", &e.output),
            ("encoder.output_bias", &e.output_bias),
            ("encoder.attn_norm_gain", &e.attn_norm_gain),
            ("encoder.attn_norm_bias", &e.attn_norm_bias),
            ("encoder.ffn_in", &e.ffn_in),
            ("encoder.ffn_in_bias", &e.ffn_in_bias),
            ("encoder.ffn_out", &e.ffn_out),
            ("encoder.ffn_out_bias", &e.ffn_out_bias),
            ("encoder.ffn_norm_gain", &e.ffn_norm_gain),
            ("encoder.ffn_norm_bias", &e.ffn_norm_bias),
            ("classifier.weight", &self.classifier.weight),
            ("classifier.bias", &self.classifier.bias),
            ("exit_logits", &self.exit_logits),
        ]
    }

    pub fn entries_mut(&mut self) -> Vec<(&'static str, &mut M)> {
        let e = &mut self.encoder;
        vec![
            ("token_embedding", &mut self.token_embedding),
            ("position_embedding", &mut self.position_embedding),
            ("encoder.query", &mut e.query),
            ("encoder.query_bias", &mut e.query_bias),
            ("encoder.key", &mut e.key),
            ("encoder.key_bias", &mut e.key_bias),
            ("encoder.value", &mut e.value),
            ("encoder.value_bias", &mut e.value_bias),
            ("encoder.output", &mut e.output),
            ("encoder.output_bias", &mut e.output_bias),
            ("encoder.attn_norm_gain", &mut e.attn_norm_gain),
            ("encoder.attn_norm_bias", &mut e.attn_norm_bias),
            ("encoder.ffn_in", &mut e.ffn_in),
            ("encoder.ffn_in_bias", &mut e.ffn_in_bias),
            ("encoder.ffn_out", &mut e.ffn_out),
            ("encoder.ffn_out_bias", &mut e.ffn_out_bias),
            ("encoder.ffn_norm_gain", &mut e.ffn_norm_gain),
            ("encoder.ffn_norm_bias", &mut e.ffn_norm_bias),
            ("classifier.weight", &mut self.classifier.weight),
            ("classifier.bias", &mut self.classifier.bias),
            ("exit_logits", &mut self.exit_logits),
        ]
    }

    /// Applies `f` to every tensor, preserving layout.
    pub fn map<N>(&self, mut f: impl FnMut(&'static str, &M) -> N) -> ParamSet<N> {
        let e = &self.encoder;
        ParamSet {
            token_embedding: f("token_embedding", &self.token_embedding),
            position_embedding: f("position_embedding", &self.position_embedding),
            encoder: EncoderWeights {
                query: f("encoder.query", &e.query),
                query_bias: f("encoder.query_bias", &e.query_bias),
                key: f("encoder.key", &e.key),
                key_bias: f("encoder.key_bias", &e.key_bias),
                value: f("encoder.value", &e.value),
                value_bias: f("encoder.value_bias", &e.value_bias),
                output: f("encoder.output", &e.output),
                output_bias: f("encoder.output_bias", &e.output_bias),
                attn_norm_gain: f("encoder.attn_norm_gain", &e.attn_norm_gain),
                attn_norm_bias: f("encoder.attn_norm_bias", &e.attn_norm_bias),
                ffn_in: f("encoder.ffn_in", &e.ffn_in),
                ffn_in_bias: f("encoder.ffn_in_bias", &e.ffn_in_bias),
                ffn_out: f("encoder.ffn_out", &e.ffn_out),
                ffn_out_bias: f("encoder.ffn_out_bias", &e.ffn_out_bias),
                ffn_norm_gain: f("encoder.ffn_norm_gain", &e.ffn_norm_gain),
                ffn_norm_bias: f("encoder.ffn_norm_bias", &e.ffn_norm_bias),
            },
            classifier: ClassifierWeights {
                weight: f("classifier.weight", &self.classifier.weight),
                bias: f("classifier.bias", &self.classifier.bias),
            },
            exit_logits: f("exit_logits", &self.exit_logits),
        }
    }
}

/// Expected `(rows, cols)` of every tensor for `cfg`.
pub fn shapes(cfg: &ModelConfig) -> ParamSet<(usize, usize)> {
    let (h, f) = (cfg.hidden, cfg.ffn);
    ParamSet {
        token_embedding: (cfg.vocab, h),
        position_embedding: (cfg.max_seq_len, h),
        encoder: EncoderWeights {
            query: (h, h),
            query_bias: (1, h),
            key: (h, h),
            key_bias: (1, h),
            value: (h, h),
            value_bias: (1, h),
            output: (h, h),
            output_bias: (1, h),
            attn_norm_gain: (1, h),
            attn_norm_bias: (1, h),
            ffn_in: (h, f),
            ffn_in_bias: (1, f),
            ffn_out: (f, h),
            ffn_out_bias: (1, h),
            ffn_norm_gain: (1, h),
            ffn_norm_bias: (1, h),
        },
        classifier: ClassifierWeights {
            weight: (h, cfg.classes),
            bias: (1, cfg.classes),
        },
        exit_logits: (1, cfg.depth - 1),
    }
}

impl Parameters {
    /// Seeded initialization: weights ~ N(0, 0.02²), biases 0, norm gains 1,
    /// exit logits 4.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        shapes(cfg).map(|name, &(r, c)| {
            if name == "exit_logits" {
                Matrix::filled(r, c, EXIT_LOGIT_INIT)
            } else if name.ends_with("_gain") {
                Matrix::filled(r, c, 1.0)
            } else if name.ends_with("bias") {
                Matrix::zeros(r, c)
            } else {
                let data = (0..r * c).map(|_| normal.sample(&mut rng)).collect();
                Matrix::new(r, c, data).expect("finite init")
            }
        })
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, m| Matrix::zeros(m.rows(), m.cols()))
    }

    /// Scalars in all tensors, exit logits included.
    pub fn count(&self) -> usize {
        self.entries().iter().map(|(_, m)| m.len()).sum()
    }

    /// Scalars used by inference, i.e. everything except the exit-weight
    /// logits. Independent of depth.
    pub fn network_count(&self) -> usize {
        self.count() - self.exit_logits.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries()
            .iter()
            .flat_map(|(_, m)| m.data().iter().copied())
            .collect()
    }

    /// Overwrites all tensors from a flat vector in [`Self::flatten`] order.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.count(), "flat parameter length");
        let mut offset = 0;
        for (_, m) in self.entries_mut() {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}
