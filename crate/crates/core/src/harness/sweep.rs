use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exit_policy::ExitPolicy;
use crate::model::Model;
use crate::scheduler::{compute_ratio, run_algorithm1, run_case1, ModelEngine, RunOutput};
use crate::training::Example;

/// `0.1, 0.2, …, 1.0`.
pub fn default_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// One policy point. `policy` is `None` for the full-depth reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub policy: Option<ExitPolicy>,
    pub accuracy: f64,
    pub compute_ratio: f64,
    pub mean_exit_layer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Grid points in order, then the reference row.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn grid_rows(&self) -> &[SweepRow] {
        &self.rows[..self.rows.len() - 1]
    }

    pub fn reference(&self) -> &SweepRow {
        self.rows.last().expect("reference row is always present")
    }

    /// `delta,criterion,window,accuracy,compute_ratio,mean_exit_layer`; the
    /// reference row has `none` in the policy columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["delta", "criterion", "window", "accuracy", "compute_ratio", "mean_exit_layer"])?;
        for r in &self.rows {
            let (delta, criterion, window) = match &r.policy {
                Some(p) => (p.delta.to_string(), p.criterion.to_string(), p.window.to_string()),
                None => ("none".into(), "none".into(), "none".into()),
            };
            w.write_record([
                delta,
                criterion,
                window,
                r.accuracy.to_string(),
                r.compute_ratio.to_string(),
                r.mean_exit_layer.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn summarize(run: &RunOutput, labels: &[usize], depth: usize, policy: Option<ExitPolicy>) -> Result<SweepRow> {
    let layers = run.exit_layers();
    Ok(SweepRow {
        policy,
        accuracy: run.accuracy(labels),
        compute_ratio: compute_ratio(&run.log, depth)?,
        mean_exit_layer: layers.iter().sum::<usize>() as f64 / layers.len() as f64,
    })
}

/// Evaluates `base` with each `delta` in `grid` through the slot-refill
/// scheduler with `n_slots` slots, plus a full-depth reference row.
pub fn sweep_delta(model: &Model, data: &[Example], grid: &[f64], base: &ExitPolicy, n_slots: usize) -> Result<SweepResult> {
    if data.is_empty() {
        return Err(Error::InvalidInput("sweep needs a non-empty dataset".into()));
    }
    let stream: Vec<_> = data.iter().map(|e| e.tokens.clone()).collect();
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    let engine = ModelEngine::new(model, &stream)?;
    let depth = model.depth();

    let mut rows = grid
        .par_iter()
        .map(|&delta| {
            let policy = ExitPolicy { delta, ..*base };
            policy.validate()?;
            let run = run_algorithm1(&engine, Some(&policy), n_slots)?;
            summarize(&run, &labels, depth, Some(policy))
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = run_case1(&engine)?;
    rows.push(summarize(&reference, &labels, depth, None)?);
    Ok(SweepResult { rows })
}
