//! Two-stage confidence-window exit decision.
//!
//! Stage 1 stops a sample as soon as the puzzlement (entropy of the class
//! distribution normalized by `ln C`) of the current layer falls strictly
//! below `delta`. Only if stage 1 does not fire is stage 2 consulted: it looks
//! at the trailing `W` classifier outputs and fires when the selected window
//! criterion holds. At the final layer the sample exits regardless.
//!
//! The logarithm base cancels in the normalized entropy; natural logs are
//! used throughout.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::LayerTrace;

/// Stage-2 window criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Criterion {
    /// Same argmax over the window and its probability never decreases.
    #[default]
    BiasTrend,
    /// Every coordinate varies by less than `range_eps` over the window.
    Range,
    /// Same predicted label over the window.
    StableLabel,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::BiasTrend => "bias-trend",
            Criterion::Range => "range",
            Criterion::StableLabel => "stable-label",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bias-trend" => Ok(Criterion::BiasTrend),
            "range" => Ok(Criterion::Range),
            "stable-label" => Ok(Criterion::StableLabel),
            other => Err(Error::InvalidInput(format!(
                "unknown criterion {other:?} (expected bias-trend, range or stable-label)"
            ))),
        }
    }
}

/// Stage-2 window length; `Disabled` behaves as an infinite window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Size(usize),
    Disabled,
}

impl Default for Window {
    fn default() -> Self {
        Window::Size(8)
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Size(w) => write!(f, "{w}"),
            Window::Disabled => f.write_str("inf"),
        }
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "off" | "none" => Ok(Window::Disabled),
            n => n
                .parse()
                .map(Window::Size)
                .map_err(|_| Error::InvalidInput(format!("window {n:?} is not a count or `inf`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitPolicy {
    /// Stage-1 threshold in `[0, 1]`; exit when puzzlement < delta.
    pub delta: f64,
    pub window: Window,
    pub criterion: Criterion,
    /// Threshold for [`Criterion::Range`].
    pub range_eps: f64,
}

pub const DEFAULT_RANGE_EPS: f64 = 0.05;

impl ExitPolicy {
    /// Policy with the default window (8, bias-trend).
    pub fn new(delta: f64) -> Result<Self> {
        let p = Self {
            delta,
            window: Window::default(),
            criterion: Criterion::default(),
            range_eps: DEFAULT_RANGE_EPS,
        };
        p.validate()?;
        Ok(p)
    }

    /// Stage-1 only.
    pub fn threshold_only(delta: f64) -> Result<Self> {
        let p = Self {
            window: Window::Disabled,
            ..Self::new(delta)?
        };
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} outside [0, 1]", self.delta)));
        }
        if let Window::Size(w) = self.window {
            if w < 2 {
                return Err(Error::Config(format!("window must be at least 2, got {w}")));
            }
        }
        if !(self.range_eps.is_finite() && self.range_eps >= 0.0) {
            return Err(Error::Config(format!("range_eps {} must be finite and >= 0", self.range_eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStage {
    None,
    Stage1,
    Stage2,
    Forced,
}

impl ExitStage {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitStage::None => "none",
            ExitStage::Stage1 => "stage1",
            ExitStage::Stage2 => "stage2",
            ExitStage::Forced => "forced",
        }
    }
}

impl fmt::Display for ExitStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExitDecision {
    pub exit: bool,
    pub stage: ExitStage,
}

impl ExitDecision {
    const CONTINUE: Self = Self {
        exit: false,
        stage: ExitStage::None,
    };

    fn at(stage: ExitStage) -> Self {
        Self { exit: true, stage }
    }
}

/// Normalized entropy `Σ p ln p / ln(1/C)` with `0 · ln 0 = 0`, in `[0, 1]`.
pub fn puzzlement(p: &[f64]) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::InvalidInput(format!("puzzlement needs at least 2 classes, got {}", p.len())));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput(format!("not a probability vector (sum {sum})")));
    }
    Ok(puzzlement_of(p))
}

pub(crate) fn puzzlement_of(p: &[f64]) -> f64 {
    // exact uniformity is reported as exactly 1 so that delta = 1 never fires on it
    if p.iter().all(|&v| v == p[0]) {
        return 1.0;
    }
    let neg_entropy: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();
    let norm = (1.0 / p.len() as f64).ln();
    (neg_entropy / norm).clamp(0.0, 1.0)
}

/// `puzzlement(p) < delta`.
pub fn stage1_exit(p: &[f64], delta: f64) -> bool {
    puzzlement_of(p) < delta
}

/// Window criterion over the trailing `W` entries of `trace`; false while
/// fewer than `W` layers have run or when the window is disabled.
pub fn stage2_exit(trace: &LayerTrace, policy: &ExitPolicy) -> bool {
    let Window::Size(w) = policy.window else {
        return false;
    };
    let n = trace.len();
    if n < w || w == 0 {
        return false;
    }
    let probs = &trace.probs()[n - w..];
    let labels = &trace.labels()[n - w..];
    let same_label = labels.iter().all(|&l| l == labels[0]);
    match policy.criterion {
        Criterion::StableLabel => same_label,
        Criterion::BiasTrend => {
            let c = labels[0];
            same_label && probs.windows(2).all(|pair| pair[1][c] >= pair[0][c])
        }
        Criterion::Range => {
            let classes = probs[0].len();
            (0..classes).all(|j| {
                let (lo, hi) = probs
                    .iter()
                    .map(|p| p[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                hi - lo < policy.range_eps
            })
        }
    }
}

/// Full decision for `layer` (1-based) of a depth-`depth` model; the last
/// entry of `trace` must be that layer's distribution.
pub fn cwb_decide(trace: &LayerTrace, policy: &ExitPolicy, layer: usize, depth: usize) -> ExitDecision {
    let Some(p) = trace.last() else {
        return ExitDecision::CONTINUE;
    };
    if stage1_exit(p, policy.delta) {
        ExitDecision::at(ExitStage::Stage1)
    } else if stage2_exit(trace, policy) {
        ExitDecision::at(ExitStage::Stage2)
    } else if layer >= depth {
        ExitDecision::at(ExitStage::Forced)
    } else {
        ExitDecision::CONTINUE
    }
}

/// [`cwb_decide`], or depth-only termination when `policy` is `None`.
pub fn decide(policy: Option<&ExitPolicy>, trace: &LayerTrace, layer: usize, depth: usize) -> ExitDecision {
    match policy {
        Some(p) => cwb_decide(trace, p, layer, depth),
        None if layer >= depth => ExitDecision::at(ExitStage::Forced),
        None => ExitDecision::CONTINUE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(delta: f64, w: usize, criterion: Criterion, range_eps: f64) -> ExitPolicy {
        ExitPolicy { delta, window: Window::Size(w), criterion, range_eps }
    }

    #[test]
    fn puzzlement_extremes() {
        for c in 2..10 {
            assert_eq!(puzzlement(&vec![1.0 / c as f64; c]).unwrap(), 1.0);
            let mut one_hot = vec![0.0; c];
            one_hot[c / 2] = 1.0;
            assert_eq!(puzzlement(&one_hot).unwrap(), 0.0);
        }
    }

    #[test]
    fn puzzlement_two_class_oracle() {
        // 50-digit evaluation of (0.9 ln 0.9 + 0.1 ln 0.1) / ln(1/2)
        let v = puzzlement(&[0.9, 0.1]).unwrap();
        assert!((v - 0.468_995_593_589_281_2).abs() < 1e-9, "{v}");
        let v = puzzlement(&[0.7, 0.2, 0.1]).unwrap();
        assert!((v - 0.729_846_699_162_097_5).abs() < 1e-9, "{v}");
    }

    #[test]
    fn puzzlement_rejects_bad_input() {
        assert!(puzzlement(&[1.0]).is_err());
        assert!(puzzlement(&[0.5, 0.6]).is_err());
    }

    #[test]
    fn stage1_examples() {
        assert!(!stage1_exit(&[1.0, 0.0], 0.0));
        assert!(!stage1_exit(&[0.5, 0.5], 0.0));
        assert!(stage1_exit(&[0.0, 1.0, 0.0], 0.1));
        assert!(!stage1_exit(&[1.0 / 3.0; 3], 1.0));
    }

    #[test]
    fn stage2_rising_window_fires_all_criteria() {
        let trace = LayerTrace::from_probs(vec![
            vec![0.3, 0.3, 0.4],
            vec![0.25, 0.25, 0.5],
            vec![0.2, 0.2, 0.6],
        ]);
        for c in [Criterion::BiasTrend, Criterion::Range, Criterion::StableLabel] {
            assert!(stage2_exit(&trace, &policy(0.0, 3, c, 0.25)), "{c}");
        }
        assert!(!stage2_exit(&trace, &policy(0.0, 3, Criterion::Range, 0.15)));
    }

    #[test]
    fn stage2_flipping_labels() {
        let trace = LayerTrace::from_probs(vec![vec![0.6, 0.4], vec![0.4, 0.6], vec![0.6, 0.4]]);
        assert!(!stage2_exit(&trace, &policy(0.0, 3, Criterion::BiasTrend, 0.05)));
        assert!(!stage2_exit(&trace, &policy(0.0, 3, Criterion::StableLabel, 0.05)));
    }

    #[test]
    fn stage2_bias_trend_requires_monotone() {
        let trace = LayerTrace::from_probs(vec![vec![0.7, 0.3], vec![0.6, 0.4], vec![0.8, 0.2]]);
        assert!(!stage2_exit(&trace, &policy(0.0, 3, Criterion::BiasTrend, 0.05)));
        assert!(stage2_exit(&trace, &policy(0.0, 3, Criterion::StableLabel, 0.05)));
    }

    #[test]
    fn stage2_needs_full_window() {
        let trace = LayerTrace::from_probs(vec![vec![1.0, 0.0]; 5]);
        for c in [Criterion::BiasTrend, Criterion::Range, Criterion::StableLabel] {
            assert!(!stage2_exit(&trace, &policy(0.0, 8, c, 1.0)));
        }
        let disabled = ExitPolicy { window: Window::Disabled, ..policy(0.0, 2, Criterion::StableLabel, 1.0) };
        assert!(!stage2_exit(&trace, &disabled));
    }

    #[test]
    fn decide_examples() {
        let unsure = LayerTrace::from_probs(vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.5, 0.3]]);
        let d = cwb_decide(&unsure, &policy(0.1, 8, Criterion::BiasTrend, 0.05), 2, 2);
        assert_eq!(d, ExitDecision { exit: true, stage: ExitStage::Forced });

        let sure = LayerTrace::from_probs(vec![vec![1.0, 0.0, 0.0]]);
        let d = cwb_decide(&sure, &policy(0.5, 8, Criterion::BiasTrend, 0.05), 1, 12);
        assert_eq!(d, ExitDecision { exit: true, stage: ExitStage::Stage1 });

        let steady = LayerTrace::from_probs(vec![vec![0.5, 0.3, 0.2], vec![0.45, 0.35, 0.2]]);
        let d = cwb_decide(&steady, &policy(0.0, 2, Criterion::StableLabel, 0.05), 2, 12);
        assert_eq!(d, ExitDecision { exit: true, stage: ExitStage::Stage2 });

        let d = cwb_decide(&steady, &policy(0.0, 3, Criterion::StableLabel, 0.05), 2, 12);
        assert_eq!(d, ExitDecision { exit: false, stage: ExitStage::None });
    }

    #[test]
    fn no_policy_only_forces_at_depth() {
        let t = LayerTrace::from_probs(vec![vec![1.0, 0.0]]);
        assert!(!decide(None, &t, 1, 3).exit);
        assert_eq!(decide(None, &t, 3, 3).stage, ExitStage::Forced);
    }

    #[test]
    fn policy_validation() {
        assert!(ExitPolicy::new(1.1).is_err());
        assert!(ExitPolicy::new(-0.1).is_err());
        let mut p = ExitPolicy::new(0.3).unwrap();
        assert_eq!(p.window, Window::Size(8));
        assert_eq!(p.criterion, Criterion::BiasTrend);
        p.window = Window::Size(1);
        assert!(p.validate().is_err());
    }

    #[test]
    fn parse_round_trips() {
        for c in [Criterion::BiasTrend, Criterion::Range, Criterion::StableLabel] {
            assert_eq!(c.as_str().parse::<Criterion>().unwrap(), c);
        }
        assert_eq!("inf".parse::<Window>().unwrap(), Window::Disabled);
        assert_eq!("8".parse::<Window>().unwrap(), Window::Size(8));
        assert!("x".parse::<Window>().is_err());
    }
}
