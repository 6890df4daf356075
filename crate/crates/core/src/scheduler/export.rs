use std::io::Write;

use crate::error::Result;

use super::{ComparisonRow, RunOutput, StepLog};

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// `sample_id,label,prediction,exit_layer,exit_stage`. The label column is
/// empty when labels are unknown.
pub fn write_samples_csv<W: Write>(out: W, run: &RunOutput, labels: Option<&[usize]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "label", "prediction", "exit_layer", "exit_stage"])?;
    for r in &run.results {
        let label = labels
            .and_then(|l| l.get(r.sample_id))
            .map(|l| l.to_string())
            .unwrap_or_default();
        w.write_record([
            r.sample_id.to_string(),
            label,
            r.prediction.to_string(),
            r.exit_layer.to_string(),
            r.stage.as_str().to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `step,strategy,occupancy`.
pub fn write_steps_csv<W: Write>(out: W, logs: &[&StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "strategy", "occupancy"])?;
    for log in logs {
        for s in &log.steps {
            w.write_record([s.step.to_string(), log.strategy.to_string(), s.occupancy.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `strategy,n_slots,accuracy,compute_ratio,sim_time,throughput,speedup`.
pub fn write_comparison_csv<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy",
        "n_slots",
        "accuracy",
        "compute_ratio",
        "sim_time",
        "throughput",
        "speedup",
    ])?;
    for r in rows {
        w.write_record([
            r.strategy.to_string(),
            r.n_slots.to_string(),
            r.accuracy.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.compute_ratio),
            fmt_f64(r.sim_time),
            fmt_f64(r.throughput),
            fmt_f64(r.speedup),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
