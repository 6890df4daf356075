//! Multi-exit fine-tuning.
//!
//! Every depth `i` contributes a cross-entropy loss `L_i` against the ground
//! truth label. The losses are combined with weights `w_i = σ(t_i)` for
//! `i < d` and `w_d = d − Σ σ(t_i)`, so the weights always sum to `d`; the
//! logits `t_i` start at 4 and are trained together with the network.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{classifier_head, encoder_block, LayerTrace, Model, Parameters, TokenSequence, WeightFile};
use crate::numerics::{cross_entropy, sigmoid, Matrix, Ops, Tape};

/// One supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: TokenSequence,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            batch_size: 32,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("moment decays must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-exit loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitWeights(pub Vec<f64>);

impl ExitWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `w_i = σ(t_i)` for the `d − 1` logits, then `w_d = d − Σ σ(t_i)`.
pub fn exit_weights(logits: &[f64]) -> ExitWeights {
    let d = logits.len() + 1;
    let mut w: Vec<f64> = logits.iter().map(|&t| sigmoid(t)).collect();
    let head: f64 = w.iter().sum();
    w.push(d as f64 - head);
    ExitWeights(w)
}

/// Cross-entropy of every layer's distribution against `label`.
pub fn layer_losses(trace: &LayerTrace, label: usize) -> Result<Vec<f64>> {
    trace.probs().iter().map(|p| cross_entropy(p, label)).collect()
}

/// `Σ w_i · L_i` over a full-depth trace.
pub fn total_loss(trace: &LayerTrace, label: usize, logits: &[f64]) -> Result<f64> {
    let losses = layer_losses(trace, label)?;
    weighted_loss(&losses, logits)
}

/// `Σ w_i · L_i` given the per-layer losses directly.
pub fn weighted_loss(losses: &[f64], logits: &[f64]) -> Result<f64> {
    if losses.len() != logits.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "{} layer losses for {} exit logits",
            losses.len(),
            logits.len()
        )));
    }
    let w = exit_weights(logits);
    Ok(w.0.iter().zip(losses).map(|(w, l)| w * l).sum())
}

/// Loss of one example evaluated without a tape.
pub fn example_loss(model: &Model, example: &Example) -> Result<f64> {
    let pred = model.forward_with_trace(&example.tokens, None)?;
    total_loss(&pred.trace, example.label, model.params().exit_logits.data())
}

/// Loss and gradient (w.r.t. every parameter, exit logits included) of one
/// example.
pub fn example_gradient(model: &Model, example: &Example) -> Result<(f64, Parameters)> {
    let cfg = model.config();
    if example.label >= cfg.classes {
        return Err(Error::InvalidInput(format!(
            "label {} out of range for {} classes",
            example.label, cfg.classes
        )));
    }
    // validates ids and length
    model.embed(&example.tokens)?;

    let mut tape = Tape::new();
    let vars = model.params().map(|_, m| tape.leaf(m.clone()));
    let ids = example.tokens.ids();
    let mask = example.tokens.mask();

    let mut h = tape.embed(&vars.token_embedding, &vars.position_embedding, ids, mask);
    let mut losses = Vec::with_capacity(cfg.depth);
    for _ in 0..cfg.depth {
        let (next, _) = encoder_block(&mut tape, &h, mask, &vars.encoder, cfg.heads);
        h = next;
        let p = classifier_head(&mut tape, &h, &vars.classifier);
        losses.push(tape.cross_entropy(p, example.label));
    }
    let losses = tape.concat_cols(&losses);
    let weights = tape.exit_weights(vars.exit_logits);
    let weighted = tape.hadamard(weights, losses);
    let total = tape.sum(weighted);

    let loss = tape.val(total).data()[0];
    let grads = tape.backward(total);
    Ok((loss, vars.map(|_, v| grads.wrt(*v))))
}

/// Mean loss and mean gradient over `batch`. Per-example work runs in
/// parallel; the reduction is sequential in batch order.
pub fn batch_gradient(model: &Model, batch: &[Example]) -> Result<(f64, Parameters)> {
    let per_example: Vec<(f64, Parameters)> = batch
        .par_iter()
        .map(|ex| example_gradient(model, ex))
        .collect::<Result<_>>()?;
    let mut sum = model.params().zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_example {
        loss += l;
        for ((_, acc), (_, gm)) in sum.entries_mut().into_iter().zip(g.entries()) {
            acc.add_assign(gm);
        }
    }
    let n = batch.len() as f64;
    for (_, m) in sum.entries_mut() {
        m.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss / n, sum))
}

/// First/second-moment adaptive optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub first: Parameters,
    pub second: Parameters,
}

impl Adam {
    pub fn new(params: &Parameters) -> Self {
        Self {
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut Parameters, grads: &Parameters, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let tensors = params
            .entries_mut()
            .into_iter()
            .zip(grads.entries())
            .zip(self.first.entries_mut())
            .zip(self.second.entries_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut());
            for (((p, &g), m), v) in it {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Full-depth accuracy on the validation split (NaN when it is empty).
    pub val_accuracy: f64,
    pub exit_weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: Adam,
    pub history: Vec<EpochMetrics>,
}

/// Full-depth accuracy.
pub fn accuracy(model: &Model, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let correct: usize = examples
        .par_iter()
        .map(|ex| model.forward_with_trace(&ex.tokens, None).map(|p| usize::from(p.label == ex.label)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / examples.len() as f64)
}

/// Mini-batch training on the weighted multi-exit loss. The exit logits are
/// reset to their initial value before the first step. Reproducible from
/// `cfg.seed`.
pub fn train(model: Model, train_set: &[Example], val_set: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(model, train_set, val_set, cfg, |_| {})
}

pub fn train_with_callback(
    mut model: Model,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let classes = model.config().classes;
    if let Some(ex) = train_set.iter().chain(val_set).find(|ex| ex.label >= classes) {
        return Err(Error::InvalidInput(format!("label {} out of range for {classes} classes", ex.label)));
    }
    {
        let t = &mut model.params_mut().exit_logits;
        let (r, c) = t.shape();
        *t = Matrix::filled(r, c, crate::model::EXIT_LOGIT_INIT);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut optimizer = Adam::new(model.params());
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, grads) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            optimizer.update(model.params_mut(), &grads, cfg);
            loss_sum += loss;
            batches += 1;
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_accuracy: accuracy(&model, val_set)?,
            exit_weights: exit_weights(model.params().exit_logits.data()).0,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, val accuracy {:.4}",
            metrics.train_loss,
            metrics.val_accuracy
        );
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        history,
    })
}

/// Weight file of `model` with the optimizer moments appended as
/// `adam.first.<name>` / `adam.second.<name>` tensors.
pub fn checkpoint_file(model: &Model, optimizer: &Adam) -> WeightFile {
    let mut file = model.to_weight_file();
    file.set_meta("adam.step", optimizer.step.to_string());
    for (prefix, set) in [("adam.first", &optimizer.first), ("adam.second", &optimizer.second)] {
        for (name, m) in set.entries() {
            file.tensors.push((format!("{prefix}.{name}"), m.clone()));
        }
    }
    file
}

/// Optimizer state stored in a checkpoint, if any.
pub fn optimizer_from_file(file: &WeightFile, model: &Model) -> Result<Option<Adam>> {
    let Some(step) = file.meta("adam.step") else {
        return Ok(None);
    };
    let step = step
        .parse()
        .map_err(|_| Error::WeightFile(format!("adam.step = {step:?} is not a count")))?;
    let mut missing = None;
    let mut load = |prefix: &str| {
        model.params().map(|name, m| {
            let key = format!("{prefix}.{name}");
            match file.tensor(&key) {
                Some(t) if t.shape() == m.shape() => t.clone(),
                _ => {
                    missing.get_or_insert(key);
                    Matrix::zeros(m.rows(), m.cols())
                }
            }
        })
    };
    let first = load("adam.first");
    let second = load("adam.second");
    if let Some(key) = missing {
        return Err(Error::WeightFile(format!("optimizer tensor {key} missing or misshapen")));
    }
    Ok(Some(Adam { step, first, second }))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, optimizer: &Adam) -> Result<()> {
    checkpoint_file(model, optimizer).write(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn weights_at_zero_logits() {
        assert_eq!(exit_weights(&[0.0; 3]).0, vec![0.5, 0.5, 0.5, 2.5]);
    }

    #[test]
    fn weights_at_initial_logits_depth_24() {
        let w = exit_weights(&[4.0; 23]);
        // 50-digit σ(4) and 24 − 23σ(4)
        for &wi in &w.0[..23] {
            assert!((wi - 0.982_013_790_037_908_4).abs() < 1e-15);
        }
        assert!((w.0[23] - 1.413_682_829_128_105_8).abs() < 1e-12);
    }

    #[test]
    fn layer_loss_examples() {
        let onehot = LayerTrace::from_probs(vec![vec![0.0, 1.0, 0.0]; 4]);
        assert_eq!(layer_losses(&onehot, 1).unwrap(), vec![0.0; 4]);
        let uniform = LayerTrace::from_probs(vec![vec![1.0 / 3.0; 3]; 4]);
        for l in layer_losses(&uniform, 2).unwrap() {
            assert!((l - 3f64.ln()).abs() < 1e-15);
        }
        assert!(layer_losses(&uniform, 3).is_err());
    }

    #[test]
    fn weighted_loss_examples() {
        assert_eq!(weighted_loss(&[2.0, 4.0], &[0.0]).unwrap(), 7.0);
        let c = 0.37;
        let l = weighted_loss(&[c; 6], &[0.3, -2.0, 5.0, 1.0, 0.0]).unwrap();
        assert!((l - 6.0 * c).abs() < 1e-12);
        assert!(weighted_loss(&[1.0, 2.0, 3.0], &[0.0]).is_err());
    }

    #[test]
    fn exit_logit_derivative_matches_closed_form() {
        // d/dt of σ(t)·L1 + (2 − σ(t))·L2 = σ'(t)(L1 − L2)
        let (l1, l2) = (0.8, 2.3);
        let t = 0.6;
        let mut tape = Tape::new();
        let tv = tape.leaf(Matrix::row_vector(vec![t]));
        let losses = tape.leaf(Matrix::row_vector(vec![l1, l2]));
        let w = tape.exit_weights(tv);
        let prod = tape.hadamard(w, losses);
        let total = tape.sum(prod);
        let g = tape.backward(total).wrt(tv).data()[0];
        let s = sigmoid(t);
        assert!((g - s * (1.0 - s) * (l1 - l2)).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = ModelConfig { depth: 2, hidden: 8, heads: 2, ffn: 8, vocab: 10, max_seq_len: 4, classes: 2 };
        let model = Model::init(cfg, 2).unwrap();
        let data: Vec<Example> = (0..6)
            .map(|i| Example { tokens: TokenSequence::with_cls(&[3 + i % 4]), label: i % 2 })
            .collect();
        let tc = TrainConfig { learning_rate: 0.0, batch_size: 4, epochs: 2, ..Default::default() };
        let out = train(model.clone(), &data, &data, &tc).unwrap();
        let a: Vec<u64> = out.model.params().flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = model.params().flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_empty_and_bad_labels() {
        let cfg = ModelConfig { depth: 2, hidden: 8, heads: 2, ffn: 8, vocab: 10, max_seq_len: 4, classes: 2 };
        let model = Model::init(cfg, 2).unwrap();
        assert!(train(model.clone(), &[], &[], &TrainConfig::default()).is_err());
        let bad = [Example { tokens: TokenSequence::with_cls(&[3]), label: 2 }];
        assert!(train(model, &bad, &[], &TrainConfig::default()).is_err());
    }
}
