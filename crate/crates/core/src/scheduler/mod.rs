//! Execution strategies over the shared encoder.
//!
//! - Case 1: one sample at a time, full depth.
//! - Case 2: one sample at a time, early exit.
//! - Case 3: fixed batches of `N`, full depth.
//! - Case 4: fixed batches of `N`, early exit; a batch runs until its
//!   slowest sample exits and finished samples occupy dead slots.
//! - `alg1`, slot refill: exited samples free their slot and fresh
//!   samples are embedded into it before the next encoder call, so a batch
//!   mixes samples at different depths. Legal only because every depth
//!   shares the same encoder weights.
//!
//! All strategies drive an [`Engine`] and produce a [`StepLog`] that the
//! [`CostModel`] turns into simulated time.

mod cost;
mod engine;
mod export;

pub use cost::{compare_strategies, simulate_latency, ComparisonRow, CostModel, Latency, SpeedupBreakdown};
pub use engine::{Engine, ModelEngine, ModelSlot, ScriptedEngine, ScriptedSlot};
pub use export::{write_comparison_csv, write_samples_csv, write_steps_csv};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exit_policy::{decide, ExitPolicy, ExitStage};
use crate::model::LayerTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Case1,
    Case2,
    Case3,
    Case4,
    Algorithm1,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Case1,
        Strategy::Case2,
        Strategy::Case3,
        Strategy::Case4,
        Strategy::Algorithm1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Case1 => "case1",
            Strategy::Case2 => "case2",
            Strategy::Case3 => "case3",
            Strategy::Case4 => "case4",
            Strategy::Algorithm1 => "alg1",
        }
    }

    /// Whether the strategy applies the exit policy.
    pub fn uses_policy(self) -> bool {
        matches!(self, Strategy::Case2 | Strategy::Case4 | Strategy::Algorithm1)
    }

    /// Whether the strategy batches (`N` slots) rather than running one
    /// sample at a time.
    pub fn is_batched(self) -> bool {
        matches!(self, Strategy::Case3 | Strategy::Case4 | Strategy::Algorithm1)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown strategy {s:?}")))
    }
}

/// One encoder invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub step: usize,
    /// Slots holding a sample that still needs this layer.
    pub occupancy: usize,
    /// Samples embedded right before this step.
    pub refills: usize,
    /// Batch width physically computed.
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub exit_layer: usize,
    pub stage: ExitStage,
    pub prediction: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub strategy: Strategy,
    pub n_slots: usize,
    pub depth: usize,
    pub steps: Vec<StepRecord>,
    /// In completion order.
    pub samples: Vec<SampleRecord>,
}

impl StepLog {
    fn new(strategy: Strategy, n_slots: usize, depth: usize) -> Self {
        Self {
            strategy,
            n_slots,
            depth,
            steps: Vec::new(),
            samples: Vec::new(),
        }
    }

    pub fn total_occupancy(&self) -> usize {
        self.steps.iter().map(|s| s.occupancy).sum()
    }

    pub fn total_executed_layers(&self) -> usize {
        self.samples.iter().map(|s| s.exit_layer).sum()
    }

    /// Σ occupancy over steps equals Σ executed layers over samples.
    pub fn is_conserved(&self) -> bool {
        self.total_occupancy() == self.total_executed_layers()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub sample_id: usize,
    pub prediction: usize,
    pub exit_layer: usize,
    pub stage: ExitStage,
    pub trace: LayerTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Ordered by sample id.
    pub results: Vec<SampleResult>,
    pub log: StepLog,
}

impl RunOutput {
    fn finish(mut results: Vec<SampleResult>, log: StepLog) -> Self {
        results.sort_by_key(|r| r.sample_id);
        Self { results, log }
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.results.iter().map(|r| r.prediction).collect()
    }

    pub fn exit_layers(&self) -> Vec<usize> {
        self.results.iter().map(|r| r.exit_layer).collect()
    }

    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        if self.results.is_empty() {
            return f64::NAN;
        }
        let correct = self
            .results
            .iter()
            .filter(|r| labels.get(r.sample_id) == Some(&r.prediction))
            .count();
        correct as f64 / self.results.len() as f64
    }
}

/// `(Σ exit layers) / (samples × d)`.
pub fn compute_ratio(log: &StepLog, depth: usize) -> Result<f64> {
    if log.samples.is_empty() || depth == 0 {
        return Err(Error::InvalidInput("compute ratio of an empty log".into()));
    }
    Ok(log.total_executed_layers() as f64 / (log.samples.len() * depth) as f64)
}

/// Slot-refill bookkeeping for `N` slots.
pub struct BatchState<S> {
    pub slots: Vec<S>,
    /// `F̂`: slot holds a sample still being computed.
    pub active: Vec<bool>,
    /// `L̂`: encoder iterations applied to the slot's current sample.
    pub iterations: Vec<usize>,
    /// Slots freed since the last refill.
    pub return_list: Vec<usize>,
    pub traces: Vec<LayerTrace>,
    pub sample_ids: Vec<Option<usize>>,
}

impl<S> BatchState<S> {
    pub fn new(n: usize, vacant: impl Fn() -> S) -> Self {
        Self {
            slots: (0..n).map(|_| vacant()).collect(),
            active: vec![false; n],
            iterations: vec![0; n],
            return_list: (0..n).collect(),
            traces: vec![LayerTrace::new(); n],
            sample_ids: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn all_active(&self) -> bool {
        self.active.iter().all(|&a| a)
    }

    pub fn any_active(&self) -> bool {
        self.active.iter().any(|&a| a)
    }

    pub fn occupancy(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

struct Stepper<'e, E: Engine> {
    engine: &'e E,
    policy: Option<&'e ExitPolicy>,
    depth: usize,
    log: StepLog,
    results: Vec<SampleResult>,
}

impl<'e, E: Engine> Stepper<'e, E> {
    fn new(engine: &'e E, policy: Option<&'e ExitPolicy>, strategy: Strategy, n: usize) -> Self {
        let depth = engine.depth();
        Self {
            engine,
            policy,
            depth,
            log: StepLog::new(strategy, n, depth),
            results: Vec::new(),
        }
    }

    /// One shared encoder call over all slots, then per-slot classification
    /// and exit tests for the active ones. Returns the freed slot indices.
    fn step(&mut self, state: &mut BatchState<E::Slot>, refills: usize, width: usize) -> Vec<usize> {
        let occupancy = state.occupancy();
        self.engine.step(&mut state.slots);
        let mut freed = Vec::new();
        for i in 0..state.len() {
            if !state.active[i] {
                continue;
            }
            state.iterations[i] += 1;
            let layer = state.iterations[i];
            let p = self.engine.classify(&state.slots[i]);
            state.traces[i].push(p);
            let decision = decide(self.policy, &state.traces[i], layer, self.depth);
            if decision.exit {
                state.active[i] = false;
                state.iterations[i] = 0;
                let trace = std::mem::take(&mut state.traces[i]);
                let sample_id = state.sample_ids[i].expect("active slot holds a sample");
                let prediction = *trace.labels().last().expect("non-empty trace");
                self.log.samples.push(SampleRecord {
                    sample_id,
                    exit_layer: layer,
                    stage: decision.stage,
                    prediction,
                });
                self.results.push(SampleResult {
                    sample_id,
                    prediction,
                    exit_layer: layer,
                    stage: decision.stage,
                    trace,
                });
                freed.push(i);
            }
        }
        let step = self.log.steps.len();
        self.log.steps.push(StepRecord {
            step,
            occupancy,
            refills,
            width,
        });
        freed
    }

    fn admit(&self, state: &mut BatchState<E::Slot>, slot: usize, sample: usize) {
        state.slots[slot] = self.engine.admit(sample);
        state.sample_ids[slot] = Some(sample);
        state.traces[slot] = LayerTrace::new();
        state.iterations[slot] = 0;
        state.active[slot] = true;
    }

    fn finish(self) -> RunOutput {
        RunOutput::finish(self.results, self.log)
    }
}

/// Fixed synchronous batches of `n`; each batch steps until every member
/// has exited. Exited members stay in the batch as dead slots.
fn run_synchronous<E: Engine>(engine: &E, policy: Option<&ExitPolicy>, n: usize, strategy: Strategy) -> Result<RunOutput> {
    if n == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut stepper = Stepper::new(engine, policy, strategy, n);
    let k = engine.stream_len();
    let mut start = 0;
    while start < k {
        let end = (start + n).min(k);
        let mut state = BatchState::new(end - start, || engine.vacant());
        for (slot, sample) in (start..end).enumerate() {
            stepper.admit(&mut state, slot, sample);
        }
        let mut refills = end - start;
        while state.any_active() {
            stepper.step(&mut state, refills, n);
            refills = 0;
        }
        start = end;
    }
    Ok(stepper.finish())
}

/// Sequential, full depth, no exit policy.
pub fn run_case1<E: Engine>(engine: &E) -> Result<RunOutput> {
    run_synchronous(engine, None, 1, Strategy::Case1)
}

/// Sequential with per-sample early exit.
pub fn run_case2<E: Engine>(engine: &E, policy: Option<&ExitPolicy>) -> Result<RunOutput> {
    run_synchronous(engine, policy, 1, Strategy::Case2)
}

/// Fixed batches of `n`, full depth.
pub fn run_case3<E: Engine>(engine: &E, n: usize) -> Result<RunOutput> {
    run_synchronous(engine, None, n, Strategy::Case3)
}

/// Fixed batches of `n` with early exit; each batch lasts as long as its
/// slowest sample.
pub fn run_case4<E: Engine>(engine: &E, policy: Option<&ExitPolicy>, n: usize) -> Result<RunOutput> {
    run_synchronous(engine, policy, n, Strategy::Case4)
}

/// Slot-refill batched inference over `n` slots.
///
/// Refill phase: the next `len(return list)` samples are embedded into the
/// freed slots. Step phase: the shared encoder runs over all `n` slots and
/// every active slot is classified and tested; the phase repeats while every
/// slot is active and ends as soon as any slot exits (or reaches depth `d`).
/// Once the stream is exhausted, the drain phase zero-fills inactive slots
/// and keeps stepping until no slot is active.
///
/// When fewer samples remain than slots were freed, only the available ones
/// are admitted; the remaining slots stay inactive and the drain phase
/// finishes the batch.
pub fn run_algorithm1<E: Engine>(engine: &E, policy: Option<&ExitPolicy>, n: usize) -> Result<RunOutput> {
    if n == 0 {
        return Err(Error::Config("number of slots must be at least 1".into()));
    }
    let mut stepper = Stepper::new(engine, policy, Strategy::Algorithm1, n);
    let mut state = BatchState::new(n, || engine.vacant());
    let k = engine.stream_len();
    let mut next = 0;
    // samples embedded since the last encoder call
    let mut refills = 0;

    while next < k {
        let freed = std::mem::take(&mut state.return_list);
        for slot in freed {
            if next == k {
                break;
            }
            stepper.admit(&mut state, slot, next);
            next += 1;
            refills += 1;
        }
        while state.all_active() {
            let freed = stepper.step(&mut state, refills, n);
            state.return_list.extend(freed);
            refills = 0;
        }
    }

    while state.any_active() {
        for i in 0..n {
            if !state.active[i] && state.sample_ids[i].is_some() {
                state.slots[i] = engine.vacant();
                state.sample_ids[i] = None;
            }
        }
        stepper.step(&mut state, refills, n);
        refills = 0;
    }
    Ok(stepper.finish())
}

/// Dispatches to the runner for `strategy`; `n` is ignored by the
/// sequential cases and `policy` by the full-depth ones.
pub fn run_strategy<E: Engine>(engine: &E, strategy: Strategy, policy: Option<&ExitPolicy>, n: usize) -> Result<RunOutput> {
    match strategy {
        Strategy::Case1 => run_case1(engine),
        Strategy::Case2 => run_case2(engine, policy),
        Strategy::Case3 => run_case3(engine, n),
        Strategy::Case4 => run_case4(engine, policy, n),
        Strategy::Algorithm1 => run_algorithm1(engine, policy, n),
    }
}
