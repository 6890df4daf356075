use crate::error::{Error, Result};
use crate::exit_policy::ExitPolicy;

use super::{compute_ratio, run_strategy, Engine, RunOutput, StepLog, Strategy};

/// Affine per-step latency model.
///
/// One encoder call over a batch of width `n` costs `step_fixed +
/// step_per_slot * n` seconds. Each admitted sample pays `embed`; each
/// active slot pays `classifier` per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub step_fixed: f64,
    pub step_per_slot: f64,
    pub embed: f64,
    pub classifier: f64,
}

impl Default for CostModel {
    /// Calibrated so that full-depth batched inference at depth 24 moves
    /// from 38 text/s with one slot to 240 text/s with 32.
    fn default() -> Self {
        Self::calibrate(24, 38.0, 240.0, 32, 0.0, 0.0).expect("default calibration is valid")
    }
}

impl CostModel {
    pub fn new(step_fixed: f64, step_per_slot: f64, embed: f64, classifier: f64) -> Result<Self> {
        let cm = Self {
            step_fixed,
            step_per_slot,
            embed,
            classifier,
        };
        cm.validate()?;
        Ok(cm)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.step_fixed, self.step_per_slot, self.embed, self.classifier];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("cost model parameters must be finite".into()));
        }
        if self.step_fixed < 0.0 || self.embed < 0.0 || self.classifier < 0.0 {
            return Err(Error::Config("cost model parameters must be non-negative".into()));
        }
        if self.step_per_slot <= 0.0 {
            return Err(Error::Config("per-slot step cost must be positive".into()));
        }
        Ok(())
    }

    /// Solves for `(step_fixed, step_per_slot)` given full-depth throughput
    /// with one slot (`thr_one`) and with `n` slots (`thr_n`), keeping
    /// `embed` and `classifier` fixed.
    pub fn calibrate(depth: usize, thr_one: f64, thr_n: f64, n: usize, embed: f64, classifier: f64) -> Result<Self> {
        if depth == 0 || n < 2 {
            return Err(Error::Config("calibration needs depth ≥ 1 and n ≥ 2".into()));
        }
        if !(thr_one > 0.0 && thr_n > thr_one) {
            return Err(Error::Config(format!(
                "calibration needs 0 < thr_one < thr_n, got {thr_one} and {thr_n}"
            )));
        }
        let d = depth as f64;
        let t1 = 1.0 / thr_one;
        let tn = 1.0 / thr_n;
        let a = (t1 - tn) / (d * (1.0 - 1.0 / n as f64));
        let b = (t1 - embed - d * classifier) / d - a;
        Self::new(a, b, embed, classifier)
    }

    pub fn step_time(&self, width: usize) -> f64 {
        self.step_fixed + self.step_per_slot * width as f64
    }

    /// Closed-form full-depth throughput with `n` slots and a stream that
    /// fills every batch.
    pub fn saturated_throughput(&self, depth: usize, n: usize) -> f64 {
        let d = depth as f64;
        let per_batch = d * self.step_time(n) + n as f64 * (self.embed + d * self.classifier);
        n as f64 / per_batch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    pub total_time: f64,
    /// Samples per simulated second.
    pub throughput: f64,
}

pub fn simulate_latency(log: &StepLog, cm: &CostModel) -> Latency {
    let mut total = 0.0;
    for s in &log.steps {
        total += cm.step_time(s.width) + cm.classifier * s.occupancy as f64;
    }
    total += cm.embed * log.samples.len() as f64;
    let throughput = if total > 0.0 {
        log.samples.len() as f64 / total
    } else {
        0.0
    };
    Latency {
        total_time: total,
        throughput,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub n_slots: usize,
    /// `None` when no labels were supplied.
    pub accuracy: Option<f64>,
    pub compute_ratio: f64,
    pub sim_time: f64,
    pub throughput: f64,
    /// Relative to Case 1 on the same stream.
    pub speedup: f64,
    pub steps: usize,
}

/// Runs every strategy on the same stream and costs each under `cm`.
pub fn compare_strategies<E: Engine>(
    engine: &E,
    policy: Option<&ExitPolicy>,
    n: usize,
    cm: &CostModel,
    labels: Option<&[usize]>,
) -> Result<(Vec<ComparisonRow>, Vec<RunOutput>)> {
    if engine.stream_len() == 0 {
        return Err(Error::InvalidInput("cannot compare strategies on an empty stream".into()));
    }
    let runs = Strategy::ALL
        .iter()
        .map(|&s| run_strategy(engine, s, policy, n))
        .collect::<Result<Vec<_>>>()?;
    let baseline = simulate_latency(&runs[0].log, cm).total_time;
    let mut rows = Vec::with_capacity(runs.len());
    for run in &runs {
        let lat = simulate_latency(&run.log, cm);
        rows.push(ComparisonRow {
            strategy: run.log.strategy,
            n_slots: run.log.n_slots,
            accuracy: labels.map(|l| run.accuracy(l)),
            compute_ratio: compute_ratio(&run.log, engine.depth())?,
            sim_time: lat.total_time,
            throughput: lat.throughput,
            speedup: baseline / lat.total_time,
            steps: run.log.steps.len(),
        });
    }
    Ok((rows, runs))
}

/// Splits the slot-refill speedup over Case 1 into the part from early
/// exit alone (Case 1 → Case 2) and the part from batching (Case 2 →
/// slot refill).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupBreakdown {
    pub early_exit: f64,
    pub batching: f64,
    pub total: f64,
}

impl SpeedupBreakdown {
    pub fn from_times(case1: f64, case2: f64, alg1: f64) -> Self {
        Self {
            early_exit: case1 / case2,
            batching: case2 / alg1,
            total: case1 / alg1,
        }
    }

    pub fn from_rows(rows: &[ComparisonRow]) -> Result<Self> {
        let time = |s: Strategy| {
            rows.iter()
                .find(|r| r.strategy == s)
                .map(|r| r.sim_time)
                .ok_or_else(|| Error::InvalidInput(format!("no {s} row")))
        };
        Ok(Self::from_times(
            time(Strategy::Case1)?,
            time(Strategy::Case2)?,
            time(Strategy::Algorithm1)?,
        ))
    }

    /// Relative gap between `total` and `early_exit * batching`.
    pub fn factorization_error(&self) -> f64 {
        (self.total - self.early_exit * self.batching).abs() / self.total.abs().max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{run_case1, run_case2, run_case3, ScriptedEngine};
    use super::*;

    #[test]
    fn default_calibration_hits_targets() {
        let cm = CostModel::default();
        assert!((cm.saturated_throughput(24, 1) - 38.0).abs() < 1e-9);
        assert!((cm.saturated_throughput(24, 32) - 240.0).abs() < 1e-9);
        assert!(cm.step_fixed >= 0.0 && cm.step_per_slot > 0.0);
        assert!((cm.step_fixed - 9.5265e-4).abs() < 1e-7);
        assert!((cm.step_per_slot - 1.4384e-4).abs() < 1e-7);
    }

    #[test]
    fn calibration_with_overheads() {
        let cm = CostModel::calibrate(12, 50.0, 400.0, 16, 1e-4, 2e-5).unwrap();
        assert!((cm.saturated_throughput(12, 1) - 50.0).abs() < 1e-9);
        assert!((cm.saturated_throughput(12, 16) - 400.0).abs() < 1e-9);
    }

    #[test]
    fn calibration_rejects_nonsense() {
        assert!(CostModel::calibrate(24, 240.0, 38.0, 32, 0.0, 0.0).is_err());
        assert!(CostModel::calibrate(24, 38.0, 240.0, 1, 0.0, 0.0).is_err());
        assert!(CostModel::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(CostModel::new(-1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn case1_closed_form() {
        let cm = CostModel::new(0.5, 0.25, 0.125, 0.0625).unwrap();
        let e = ScriptedEngine::new(6, vec![1; 7]).unwrap();
        let lat = simulate_latency(&run_case1(&e).unwrap().log, &cm);
        let expect = 7.0 * 6.0 * (0.5 + 0.25) + 7.0 * 0.125 + 7.0 * 6.0 * 0.0625;
        assert!((lat.total_time - expect).abs() < 1e-12);
        assert!((lat.throughput - 7.0 / expect).abs() < 1e-12);
    }

    #[test]
    fn case3_throughput_saturates() {
        let cm = CostModel::default();
        let e = ScriptedEngine::new(24, vec![24; 64]).unwrap();
        let mut prev = 0.0;
        for n in [1, 2, 4, 8, 16, 32, 64] {
            let thr = simulate_latency(&run_case3(&e, n).unwrap().log, &cm).throughput;
            assert!(thr >= prev);
            assert!(thr <= 1.0 / (24.0 * cm.step_per_slot));
            assert!((thr - cm.saturated_throughput(24, n)).abs() < 1e-9);
            prev = thr;
        }
    }

    #[test]
    fn case2_speedup_is_inverse_compute_ratio() {
        let cm = CostModel::default();
        let e = ScriptedEngine::new(24, vec![4, 8, 24]).unwrap();
        let p = ExitPolicy::new(0.5).unwrap();
        let c1 = simulate_latency(&run_case1(&e).unwrap().log, &cm).total_time;
        let run2 = run_case2(&e, Some(&p)).unwrap();
        let c2 = simulate_latency(&run2.log, &cm).total_time;
        let ratio = compute_ratio(&run2.log, 24).unwrap();
        assert!((c1 / c2 - 1.0 / ratio).abs() < 1e-12);
    }

    #[test]
    fn comparison_without_policy() {
        let cm = CostModel::default();
        let e = ScriptedEngine::new(6, vec![2, 3, 1, 6, 5, 4, 2]).unwrap();
        let (rows, _) = compare_strategies(&e, None, 3, &cm, None).unwrap();
        assert!(rows.iter().all(|r| r.compute_ratio == 1.0));
        assert_eq!(rows[0].sim_time, rows[1].sim_time);
        assert_eq!(rows[2].steps, rows[3].steps);
        assert_eq!(rows[3].steps, rows[4].steps);
        let b = SpeedupBreakdown::from_rows(&rows).unwrap();
        assert!(b.factorization_error() < 1e-12);
    }
}
