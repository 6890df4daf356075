//! Shared-encoder classifier: embedding, one encoder block applied `d`
//! times, and one classifier read out after every application.

mod config;
pub mod params;
mod weights;

pub use config::ModelConfig;
pub use params::{ClassifierWeights, EncoderWeights, ParamSet, Parameters, EXIT_LOGIT_INIT};
pub use weights::WeightFile;

use crate::error::{Error, Result};
use crate::exit_policy::{decide, ExitPolicy, ExitStage};
use crate::numerics::{argmax, Eval, Matrix, Ops, LN_EPS};

/// `(seq_len × hidden)` activations of one sample.
pub type HiddenState = Matrix;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const UNK_ID: usize = 2;
/// First id available for ordinary words.
pub const FIRST_WORD_ID: usize = 3;

/// Token ids with a padding mask. Position 0 is always `[CLS]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
    mask: Vec<bool>,
}

impl TokenSequence {
    /// Prepends `[CLS]` to `body`; no padding.
    pub fn with_cls(body: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(body.len() + 1);
        ids.push(CLS_ID);
        ids.extend_from_slice(body);
        let mask = vec![true; ids.len()];
        Self { ids, mask }
    }

    /// Takes ids as given (`ids[0]` must be `[CLS]`); all positions real.
    pub fn from_ids(ids: Vec<usize>) -> Result<Self> {
        if ids.first() != Some(&CLS_ID) {
            return Err(Error::InvalidInput("token sequence must start with [CLS]".into()));
        }
        let mask = vec![true; ids.len()];
        Ok(Self { ids, mask })
    }

    /// Copy padded with `[PAD]` up to `len` (no-op if already that long).
    pub fn padded_to(&self, len: usize) -> Self {
        let mut out = self.unpadded();
        while out.ids.len() < len {
            out.ids.push(PAD_ID);
            out.mask.push(false);
        }
        out
    }

    pub fn unpadded(&self) -> Self {
        let n = self.real_len();
        Self {
            ids: self.ids[..n].to_vec(),
            mask: self.mask[..n].to_vec(),
        }
    }

    /// Truncates real tokens so the sequence fits in `max_len` positions.
    pub fn truncated(&self, max_len: usize) -> Self {
        let n = self.real_len().min(max_len);
        Self {
            ids: self.ids[..n].to_vec(),
            mask: vec![true; n],
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Per-layer classifier outputs of one sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerTrace {
    probs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    cls_attention: Option<Vec<Vec<f64>>>,
}

impl LayerTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trace from explicit distributions (labels derived by argmax).
    pub fn from_probs(probs: Vec<Vec<f64>>) -> Self {
        let labels = probs.iter().map(|p| argmax(p)).collect();
        Self {
            probs,
            labels,
            cls_attention: None,
        }
    }

    pub fn push(&mut self, p: Vec<f64>) {
        self.labels.push(argmax(&p));
        self.probs.push(p);
    }

    pub(crate) fn push_attention(&mut self, row: Vec<f64>) {
        self.cls_attention.get_or_insert_with(Vec::new).push(row);
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.probs.last().map(Vec::as_slice)
    }

    /// Head-averaged attention row of `[CLS]` per layer, if recorded.
    pub fn cls_attention(&self) -> Option<&[Vec<f64>]> {
        self.cls_attention.as_deref()
    }
}

/// Result of a single-sample forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    /// Depth at which the sample stopped, in `1..=d`.
    pub exit_layer: usize,
    pub stage: ExitStage,
    pub trace: LayerTrace,
}

pub(crate) fn encoder_block<O: Ops>(
    o: &mut O,
    h: &O::M,
    mask: &[bool],
    w: &EncoderWeights<O::M>,
    heads: usize,
) -> (O::M, Vec<O::M>) {
    let hidden = o.value(h).cols();
    let dh = hidden / heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    let q = o.matmul(h, &w.query);
    let q = o.add_row(&q, &w.query_bias);
    let k = o.matmul(h, &w.key);
    let k = o.add_row(&k, &w.key_bias);
    let v = o.matmul(h, &w.value);
    let v = o.add_row(&v, &w.value_bias);

    let mut contexts = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = o.slice_cols(&q, head * dh, dh);
        let kh = o.slice_cols(&k, head * dh, dh);
        let vh = o.slice_cols(&v, head * dh, dh);
        let scores = o.matmul_nt(&qh, &kh);
        let scores = o.scale(&scores, inv_sqrt);
        let probs = o.masked_softmax(&scores, mask);
        contexts.push(o.matmul(&probs, &vh));
        attention.push(probs);
    }
    let ctx = o.concat_cols(&contexts);
    let attn = o.matmul(&ctx, &w.output);
    let attn = o.add_row(&attn, &w.output_bias);
    let res = o.add(h, &attn);
    let h1 = o.layer_norm(&res, &w.attn_norm_gain, &w.attn_norm_bias, LN_EPS);

    let f = o.matmul(&h1, &w.ffn_in);
    let f = o.add_row(&f, &w.ffn_in_bias);
    let f = o.gelu(&f);
    let f = o.matmul(&f, &w.ffn_out);
    let f = o.add_row(&f, &w.ffn_out_bias);
    let res = o.add(&h1, &f);
    let h2 = o.layer_norm(&res, &w.ffn_norm_gain, &w.ffn_norm_bias, LN_EPS);
    (h2, attention)
}

/// Softmax over `W·h[CLS] + b`, as a `1×C` row.
pub(crate) fn classifier_head<O: Ops>(o: &mut O, h: &O::M, w: &ClassifierWeights<O::M>) -> O::M {
    let cls = o.row(h, 0);
    let logits = o.matmul(&cls, &w.weight);
    let logits = o.add_row(&logits, &w.bias);
    let classes = o.value(&logits).cols();
    o.masked_softmax(&logits, &vec![true; classes])
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Parameters,
}

impl Model {
    pub fn new(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        let expected = params::shapes(&config);
        for ((name, m), (_, s)) in params.entries().into_iter().zip(expected.entries()) {
            if m.shape() != *s {
                return Err(Error::shape("Model::new", format!("{name} is {:?}, expected {s:?}", m.shape())));
            }
        }
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Parameters::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn depth(&self) -> usize {
        self.config.depth
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn into_params(self) -> Parameters {
        self.params
    }

    /// The same weights run for only the first `depth` iterations (plain
    /// depth compression). Exit logits are truncated; they play no part in
    /// inference.
    pub fn with_depth(&self, depth: usize) -> Result<Model> {
        if depth > self.config.depth {
            return Err(Error::Config(format!(
                "depth override {depth} exceeds the trained depth {}",
                self.config.depth
            )));
        }
        let config = ModelConfig { depth, ..self.config };
        config.validate()?;
        let mut params = self.params.clone();
        let mut t = self.params.exit_logits.data().to_vec();
        t.resize(depth - 1, EXIT_LOGIT_INIT);
        params.exit_logits = Matrix::row_vector(t);
        Ok(Model { config, params })
    }

    fn check_tokens(&self, x: &TokenSequence) -> Result<()> {
        if x.is_empty() || x.len() > self.config.max_seq_len {
            return Err(Error::InvalidInput(format!(
                "sequence length {} outside 1..={}",
                x.len(),
                self.config.max_seq_len
            )));
        }
        if !x.mask()[0] {
            return Err(Error::InvalidInput("[CLS] position is masked".into()));
        }
        if let Some(&bad) = x.ids().iter().find(|&&id| id >= self.config.vocab) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab
            )));
        }
        Ok(())
    }

    /// Token plus positional embedding; padded rows are zero.
    pub fn embed(&self, x: &TokenSequence) -> Result<HiddenState> {
        self.check_tokens(x)?;
        let p = &self.params;
        Ok(Eval.embed(&p.token_embedding, &p.position_embedding, x.ids(), x.mask()))
    }

    /// One application of the shared encoder block. Returns the new hidden
    /// state and one `seq_len × seq_len` attention matrix per head.
    pub fn encoder_step(&self, h: &HiddenState, mask: &[bool]) -> Result<(HiddenState, Vec<Matrix>)> {
        if h.cols() != self.config.hidden || h.rows() != mask.len() || h.rows() == 0 {
            return Err(Error::shape(
                "encoder_step",
                format!("hidden {:?} with mask of {}", h.shape(), mask.len()),
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidInput("every position is masked".into()));
        }
        Ok(self.encoder_step_unchecked(h, mask))
    }

    pub(crate) fn encoder_step_unchecked(&self, h: &HiddenState, mask: &[bool]) -> (HiddenState, Vec<Matrix>) {
        encoder_block(&mut Eval, h, mask, &self.params.encoder, self.config.heads)
    }

    /// Class distribution from the `[CLS]` row.
    pub fn classify(&self, h: &HiddenState) -> Vec<f64> {
        classifier_head(&mut Eval, h, &self.params.classifier).into_data()
    }

    /// Runs up to `d` encoder iterations, classifying after each and
    /// stopping at the first exit signal of `policy`. With no policy all
    /// `d` layers run.
    pub fn forward_with_trace(&self, x: &TokenSequence, policy: Option<&ExitPolicy>) -> Result<Prediction> {
        self.forward_impl(x, policy, false)
    }

    /// Full-depth pass that also records head-averaged `[CLS]` attention.
    pub fn forward_with_attention(&self, x: &TokenSequence) -> Result<Prediction> {
        self.forward_impl(x, None, true)
    }

    fn forward_impl(&self, x: &TokenSequence, policy: Option<&ExitPolicy>, attention: bool) -> Result<Prediction> {
        let d = self.config.depth;
        let mut h = self.embed(x)?;
        let mut trace = LayerTrace::new();
        for layer in 1..=d {
            let (next, att) = self.encoder_step_unchecked(&h, x.mask());
            h = next;
            if attention {
                trace.push_attention(head_averaged_cls_row(&att));
            }
            trace.push(self.classify(&h));
            let decision = decide(policy, &trace, layer, d);
            if decision.exit {
                return Ok(Prediction {
                    label: trace.labels()[layer - 1],
                    exit_layer: layer,
                    stage: decision.stage,
                    trace,
                });
            }
        }
        unreachable!("decide always exits at depth d")
    }

    /// Materializes every hidden state `h_0..h_d` (no early exit).
    pub fn hidden_states(&self, x: &TokenSequence) -> Result<Vec<HiddenState>> {
        let mut states = vec![self.embed(x)?];
        for _ in 0..self.config.depth {
            let (next, _) = self.encoder_step_unchecked(states.last().expect("non-empty"), x.mask());
            states.push(next);
        }
        Ok(states)
    }
}

/// Mean over heads of attention row 0.
pub(crate) fn head_averaged_cls_row(attention: &[Matrix]) -> Vec<f64> {
    let n = attention[0].cols();
    let mut row = vec![0.0; n];
    for a in attention {
        for (r, v) in row.iter_mut().zip(a.row(0)) {
            *r += v;
        }
    }
    let heads = attention.len() as f64;
    row.iter_mut().for_each(|r| *r /= heads);
    row
}
