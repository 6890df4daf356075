use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{HiddenState, Model, TokenSequence};
use crate::numerics::Matrix;

/// What a scheduler needs from the network: admit a sample into a slot
/// (embedding), advance a whole batch of slots by one shared encoder
/// iteration, and read a slot's class distribution.
pub trait Engine: Sync {
    type Slot: Send + Sync;

    fn depth(&self) -> usize;

    fn stream_len(&self) -> usize;

    /// Embeds stream item `sample` into a fresh slot.
    fn admit(&self, sample: usize) -> Self::Slot;

    /// An all-zero slot.
    fn vacant(&self) -> Self::Slot;

    /// One encoder iteration over every slot in the batch.
    fn step(&self, slots: &mut [Self::Slot]);

    fn classify(&self, slot: &Self::Slot) -> Vec<f64>;
}

/// One sample's activations, padded to the model's maximum length.
#[derive(Debug, Clone)]
pub struct ModelSlot {
    pub hidden: HiddenState,
    pub mask: Vec<bool>,
}

/// [`Engine`] backed by a real [`Model`] over a token stream.
pub struct ModelEngine<'a> {
    model: &'a Model,
    stream: Vec<TokenSequence>,
}

impl<'a> ModelEngine<'a> {
    /// Pads (after truncating) every item to `max_seq_len` and checks ids.
    pub fn new(model: &'a Model, stream: &[TokenSequence]) -> Result<Self> {
        let s = model.config().max_seq_len;
        let stream: Vec<TokenSequence> = stream.iter().map(|x| x.truncated(s).padded_to(s)).collect();
        for (i, x) in stream.iter().enumerate() {
            model
                .embed(x)
                .map_err(|e| Error::InvalidInput(format!("stream item {i}: {e}")))?;
        }
        Ok(Self { model, stream })
    }

    pub fn model(&self) -> &Model {
        self.model
    }
}

impl Engine for ModelEngine<'_> {
    type Slot = ModelSlot;

    fn depth(&self) -> usize {
        self.model.depth()
    }

    fn stream_len(&self) -> usize {
        self.stream.len()
    }

    fn admit(&self, sample: usize) -> ModelSlot {
        let x = &self.stream[sample];
        ModelSlot {
            hidden: self.model.embed(x).expect("stream validated on construction"),
            mask: x.mask().to_vec(),
        }
    }

    fn vacant(&self) -> ModelSlot {
        let cfg = self.model.config();
        let mut mask = vec![false; cfg.max_seq_len];
        mask[0] = true;
        ModelSlot {
            hidden: Matrix::zeros(cfg.max_seq_len, cfg.hidden),
            mask,
        }
    }

    fn step(&self, slots: &mut [ModelSlot]) {
        slots.par_iter_mut().for_each(|s| {
            s.hidden = self.model.encoder_step_unchecked(&s.hidden, &s.mask).0;
        });
    }

    fn classify(&self, slot: &ModelSlot) -> Vec<f64> {
        self.model.classify(&slot.hidden)
    }
}

/// Synthetic engine whose samples become certain at a planned depth.
///
/// Before its planned layer a sample alternates between `(0.6, 0.4)` and
/// `(0.4, 0.6)` (puzzlement ≈ 0.971, no stable label); from the planned
/// layer on it reports `(1, 0)`. Under a policy with `delta` in
/// `(0, 0.97)` every sample therefore exits by stage 1 exactly at its plan.
#[derive(Debug, Clone)]
pub struct ScriptedEngine {
    depth: usize,
    plan: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct ScriptedSlot {
    sample: Option<usize>,
    layers: usize,
}

impl ScriptedEngine {
    pub fn new(depth: usize, plan: Vec<usize>) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("depth must be positive".into()));
        }
        if let Some(bad) = plan.iter().find(|&&l| l == 0 || l > depth) {
            return Err(Error::InvalidInput(format!("planned exit {bad} outside 1..={depth}")));
        }
        Ok(Self { depth, plan })
    }

    pub fn plan(&self) -> &[usize] {
        &self.plan
    }
}

impl Engine for ScriptedEngine {
    type Slot = ScriptedSlot;

    fn depth(&self) -> usize {
        self.depth
    }

    fn stream_len(&self) -> usize {
        self.plan.len()
    }

    fn admit(&self, sample: usize) -> ScriptedSlot {
        ScriptedSlot {
            sample: Some(sample),
            layers: 0,
        }
    }

    fn vacant(&self) -> ScriptedSlot {
        ScriptedSlot {
            sample: None,
            layers: 0,
        }
    }

    fn step(&self, slots: &mut [ScriptedSlot]) {
        for s in slots {
            s.layers += 1;
        }
    }

    fn classify(&self, slot: &ScriptedSlot) -> Vec<f64> {
        match slot.sample {
            Some(i) if slot.layers >= self.plan[i] => vec![1.0, 0.0],
            _ if slot.layers % 2 == 1 => vec![0.6, 0.4],
            _ => vec![0.4, 0.6],
        }
    }
}
