//! Python bindings: models, exit policies, training and the scheduler
//! comparison. Token inputs are lists of word ids without the leading
//! `[CLS]`, which is added here.

use elbert::exit_policy::{Criterion, ExitPolicy, Window, DEFAULT_RANGE_EPS};
use elbert::harness::{self, Checkpoint, SynthSpec};
use elbert::model::{Model, ModelConfig, TokenSequence};
use elbert::scheduler::{self, CostModel, ModelEngine, RunOutput, ScriptedEngine, SpeedupBreakdown, Strategy};
use elbert::training::{self, Example, TrainConfig};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn err(e: elbert::Error) -> PyErr {
    match e {
        elbert::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for elbert::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn sequences(ids: &[Vec<usize>]) -> Vec<TokenSequence> {
    ids.iter().map(|body| TokenSequence::with_cls(body)).collect()
}

#[pyclass(name = "ExitPolicy", frozen, skip_from_py_object, module = "elbert_py")]
#[derive(Clone)]
struct PyExitPolicy {
    inner: ExitPolicy,
}

#[pymethods]
impl PyExitPolicy {
    /// `window=None` disables the window test.
    #[new]
    #[pyo3(signature = (delta, window = Some(8), criterion = "bias-trend", range_eps = DEFAULT_RANGE_EPS))]
    fn new(delta: f64, window: Option<usize>, criterion: &str, range_eps: f64) -> PyResult<Self> {
        let inner = ExitPolicy {
            delta,
            window: window.map_or(Window::Disabled, Window::Size),
            criterion: criterion.parse::<Criterion>().py_err()?,
            range_eps,
        };
        inner.validate().py_err()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn threshold_only(delta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: ExitPolicy::threshold_only(delta).py_err()?,
        })
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn window(&self) -> Option<usize> {
        match self.inner.window {
            Window::Size(w) => Some(w),
            Window::Disabled => None,
        }
    }

    #[getter]
    fn criterion(&self) -> &'static str {
        self.inner.criterion.as_str()
    }

    #[getter]
    fn range_eps(&self) -> f64 {
        self.inner.range_eps
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "ExitPolicy(delta={}, window={}, criterion={:?}, range_eps={})",
            p.delta, p.window, p.criterion.as_str(), p.range_eps
        )
    }
}

/// Result of one forward pass.
#[pyclass(name = "Prediction", frozen, get_all, module = "elbert_py")]
struct PyPrediction {
    label: usize,
    exit_layer: usize,
    stage: &'static str,
    /// Class distribution after every executed iteration.
    probs: Vec<Vec<f64>>,
}

#[pyclass(name = "Model", frozen, skip_from_py_object, module = "elbert_py")]
#[derive(Clone)]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    /// Randomly initialized model.
    #[new]
    #[pyo3(signature = (depth = 6, hidden = 32, heads = 4, ffn = 64, vocab = 128, max_seq_len = 16, classes = 3, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        depth: usize,
        hidden: usize,
        heads: usize,
        ffn: usize,
        vocab: usize,
        max_seq_len: usize,
        classes: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ModelConfig {
            depth,
            hidden,
            heads,
            ffn,
            vocab,
            max_seq_len,
            classes,
        };
        Ok(Self {
            inner: Model::init(cfg, seed).py_err()?,
        })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Model::load(path).py_err()?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save(path).py_err()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.config().classes
    }

    #[getter]
    fn vocab(&self) -> usize {
        self.inner.config().vocab
    }

    #[getter]
    fn max_seq_len(&self) -> usize {
        self.inner.config().max_seq_len
    }

    /// Parameters of the shared network, excluding the exit-weight logits.
    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params().network_count()
    }

    /// Exit-weight logits `t_1 … t_{d-1}`.
    #[getter]
    fn exit_logits(&self) -> Vec<f64> {
        self.inner.params().exit_logits.data().to_vec()
    }

    /// The first `depth` iterations only.
    fn with_depth(&self, depth: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_depth(depth).py_err()?,
        })
    }

    #[pyo3(signature = (ids, policy = None))]
    fn forward(&self, ids: Vec<usize>, policy: Option<PyRef<'_, PyExitPolicy>>) -> PyResult<PyPrediction> {
        let p = policy.map(|p| p.inner);
        let pred = self
            .inner
            .forward_with_trace(&TokenSequence::with_cls(&ids), p.as_ref())
            .py_err()?;
        Ok(PyPrediction {
            label: pred.label,
            exit_layer: pred.exit_layer,
            stage: pred.stage.as_str(),
            probs: pred.trace.probs().to_vec(),
        })
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "Model(depth={}, hidden={}, heads={}, ffn={}, vocab={}, max_seq_len={}, classes={})",
            c.depth, c.hidden, c.heads, c.ffn, c.vocab, c.max_seq_len, c.classes
        )
    }
}

/// A model saved by the command-line trainer, with its vocabulary.
#[pyclass(name = "Checkpoint", frozen, module = "elbert_py")]
struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(path).py_err()?,
        })
    }

    #[getter]
    fn model(&self) -> PyModel {
        PyModel {
            inner: self.inner.model.clone(),
        }
    }

    /// Word ids for `text` after the checkpoint's preprocessing.
    fn encode(&self, text: &str) -> Vec<usize> {
        let x = self
            .inner
            .vocab
            .encode(&self.inner.clean(text), self.inner.model.config().max_seq_len);
        x.unpadded().ids()[1..].to_vec()
    }
}

#[pyclass(name = "CostModel", frozen, skip_from_py_object, get_all, module = "elbert_py")]
#[derive(Clone)]
struct PyCostModel {
    step_fixed: f64,
    step_per_slot: f64,
    embed: f64,
    classifier: f64,
}

impl PyCostModel {
    fn to_inner(&self) -> PyResult<CostModel> {
        CostModel::new(self.step_fixed, self.step_per_slot, self.embed, self.classifier).py_err()
    }
}

#[pymethods]
impl PyCostModel {
    #[new]
    #[pyo3(signature = (step_fixed, step_per_slot, embed = 0.0, classifier = 0.0))]
    fn new(step_fixed: f64, step_per_slot: f64, embed: f64, classifier: f64) -> PyResult<Self> {
        let me = Self {
            step_fixed,
            step_per_slot,
            embed,
            classifier,
        };
        me.to_inner()?;
        Ok(me)
    }

    #[staticmethod]
    fn default() -> Self {
        let c = CostModel::default();
        Self {
            step_fixed: c.step_fixed,
            step_per_slot: c.step_per_slot,
            embed: c.embed,
            classifier: c.classifier,
        }
    }

    fn step_time(&self, width: usize) -> PyResult<f64> {
        Ok(self.to_inner()?.step_time(width))
    }
}

#[pyclass(name = "ComparisonRow", frozen, get_all, module = "elbert_py")]
struct PyComparisonRow {
    strategy: String,
    n_slots: usize,
    accuracy: Option<f64>,
    compute_ratio: f64,
    sim_time: f64,
    throughput: f64,
    speedup: f64,
    steps: usize,
}

#[pyclass(name = "Run", frozen, get_all, module = "elbert_py")]
struct PyRun {
    strategy: String,
    predictions: Vec<usize>,
    exit_layers: Vec<usize>,
    stages: Vec<&'static str>,
    /// Active slots per encoder step.
    occupancy: Vec<usize>,
    compute_ratio: f64,
    conserved: bool,
}

fn to_run(out: RunOutput, depth: usize) -> PyResult<PyRun> {
    Ok(PyRun {
        strategy: out.log.strategy.to_string(),
        predictions: out.predictions(),
        exit_layers: out.exit_layers(),
        stages: out.results.iter().map(|r| r.stage.as_str()).collect(),
        occupancy: out.log.steps.iter().map(|s| s.occupancy).collect(),
        compute_ratio: scheduler::compute_ratio(&out.log, depth).py_err()?,
        conserved: out.log.is_conserved(),
    })
}

#[pyclass(name = "Comparison", frozen, get_all, module = "elbert_py")]
struct PyComparison {
    rows: Vec<Py<PyComparisonRow>>,
    runs: Vec<Py<PyRun>>,
    /// Case 1 time over Case 2 time.
    early_exit_speedup: f64,
    /// Case 2 time over slot-refill time.
    batching_speedup: f64,
    /// Case 1 time over slot-refill time.
    total_speedup: f64,
}

fn compare<E: scheduler::Engine>(
    py: Python<'_>,
    engine: &E,
    policy: Option<&ExitPolicy>,
    n_slots: usize,
    cost: Option<&PyCostModel>,
    labels: Option<&[usize]>,
) -> PyResult<PyComparison> {
    let cm = match cost {
        Some(c) => c.to_inner()?,
        None => CostModel::default(),
    };
    let (rows, runs) = scheduler::compare_strategies(engine, policy, n_slots, &cm, labels).py_err()?;
    let b = SpeedupBreakdown::from_rows(&rows).py_err()?;
    let rows = rows
        .into_iter()
        .map(|r| {
            let row = PyComparisonRow {
                strategy: r.strategy.to_string(),
                n_slots: r.n_slots,
                accuracy: r.accuracy,
                compute_ratio: r.compute_ratio,
                sim_time: r.sim_time,
                throughput: r.throughput,
                speedup: r.speedup,
                steps: r.steps,
            };
            Py::new(py, row)
        })
        .collect::<PyResult<_>>()?;
    let runs = runs
        .into_iter()
        .map(|r| Py::new(py, to_run(r, engine.depth())?))
        .collect::<PyResult<_>>()?;
    Ok(PyComparison {
        rows,
        runs,
        early_exit_speedup: b.early_exit,
        batching_speedup: b.batching,
        total_speedup: b.total,
    })
}

/// Runs every strategy over `sequences` and prices each under `cost`
/// (the calibrated default when omitted).
#[pyfunction]
#[pyo3(signature = (model, sequences, policy = None, n_slots = 32, cost = None, labels = None))]
fn compare_strategies(
    py: Python<'_>,
    model: PyRef<'_, PyModel>,
    sequences: Vec<Vec<usize>>,
    policy: Option<PyRef<'_, PyExitPolicy>>,
    n_slots: usize,
    cost: Option<PyRef<'_, PyCostModel>>,
    labels: Option<Vec<usize>>,
) -> PyResult<PyComparison> {
    let stream = self::sequences(&sequences);
    let engine = ModelEngine::new(&model.inner, &stream).py_err()?;
    let p = policy.map(|p| p.inner);
    compare(py, &engine, p.as_ref(), n_slots, cost.as_deref(), labels.as_deref())
}

/// Strategy comparison on a synthetic workload where sample `i` exits at
/// layer `exit_layers[i]`; no model is run.
#[pyfunction]
#[pyo3(signature = (depth, exit_layers, n_slots = 32, cost = None))]
fn compare_scripted(
    py: Python<'_>,
    depth: usize,
    exit_layers: Vec<usize>,
    n_slots: usize,
    cost: Option<PyRef<'_, PyCostModel>>,
) -> PyResult<PyComparison> {
    let engine = ScriptedEngine::new(depth, exit_layers).py_err()?;
    let p = ExitPolicy::new(0.5).py_err()?;
    compare(py, &engine, Some(&p), n_slots, cost.as_deref(), None)
}

/// Runs one execution strategy (`case1`…`case4`, `alg1`) over a stream.
#[pyfunction]
#[pyo3(signature = (model, sequences, strategy, policy = None, n_slots = 8))]
fn run_strategy(
    model: PyRef<'_, PyModel>,
    sequences: Vec<Vec<usize>>,
    strategy: &str,
    policy: Option<PyRef<'_, PyExitPolicy>>,
    n_slots: usize,
) -> PyResult<PyRun> {
    let stream = self::sequences(&sequences);
    let engine = ModelEngine::new(&model.inner, &stream).py_err()?;
    let s: Strategy = strategy.parse().py_err()?;
    let p = policy.map(|p| p.inner);
    let out = scheduler::run_strategy(&engine, s, p.as_ref(), n_slots).py_err()?;
    to_run(out, model.inner.depth())
}

/// Normalized entropy of a class distribution.
#[pyfunction]
fn puzzlement(p: Vec<f64>) -> PyResult<f64> {
    elbert::puzzlement(&p).py_err()
}

/// Per-layer loss weights for exit logits `t_1 … t_{d-1}`; they sum to `d`.
#[pyfunction]
fn exit_weights(logits: Vec<f64>) -> Vec<f64> {
    training::exit_weights(&logits).as_slice().to_vec()
}

/// Default text cleaning.
#[pyfunction]
fn preprocess(text: &str) -> String {
    harness::preprocess(text)
}

/// Keyword-separable synthetic dataset as `(label, text)` pairs.
#[pyfunction]
#[pyo3(signature = (seed, n, classes = 3))]
fn synth_dataset(seed: u64, n: usize, classes: usize) -> PyResult<Vec<(usize, String)>> {
    let data = harness::synth_dataset(seed, n, classes, &SynthSpec::default()).py_err()?;
    Ok(data.into_iter().map(|r| (r.label, r.text)).collect())
}

fn examples(data: Vec<(Vec<usize>, usize)>) -> Vec<Example> {
    data.into_iter()
        .map(|(ids, label)| Example {
            tokens: TokenSequence::with_cls(&ids),
            label,
        })
        .collect()
}

type History = Vec<(usize, f64, f64)>;

/// Fine-tunes `model` on `(ids, label)` pairs. Returns the trained model
/// and `(epoch, train_loss, val_accuracy)` per epoch.
#[pyfunction]
#[pyo3(signature = (model, train, validation = Vec::new(), learning_rate = 1e-3, batch_size = 32, epochs = 10, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    model: PyRef<'_, PyModel>,
    train: Vec<(Vec<usize>, usize)>,
    validation: Vec<(Vec<usize>, usize)>,
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> PyResult<(PyModel, History)> {
    let cfg = TrainConfig {
        learning_rate,
        batch_size,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let (train, validation) = (examples(train), examples(validation));
    let start = model.inner.clone();
    let out = py
        .detach(|| training::train(start, &train, &validation, &cfg))
        .py_err()?;
    let history = out
        .history
        .iter()
        .map(|m| (m.epoch, m.train_loss, m.val_accuracy))
        .collect();
    Ok((PyModel { inner: out.model }, history))
}

#[pymodule]
fn elbert_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExitPolicy>()?;
    m.add_class::<PyPrediction>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyCostModel>()?;
    m.add_class::<PyComparisonRow>()?;
    m.add_class::<PyComparison>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(puzzlement, m)?)?;
    m.add_function(wrap_pyfunction!(exit_weights, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_strategy, m)?)?;
    m.add_function(wrap_pyfunction!(compare_strategies, m)?)?;
    m.add_function(wrap_pyfunction!(compare_scripted, m)?)?;
    Ok(())
}
