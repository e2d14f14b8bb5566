//! Threshold targeting policies: evaluation over a grid and selection.
//!
//! A threshold policy treats exactly the observations whose chosen
//! covariate strictly exceeds a cutoff, so a grid of cutoffs forms a
//! one-parameter family of nested treatment sets. [`evaluate_grid`] scores
//! every cutoff's profit gain over a baseline assignment with the same
//! doubly robust scores the rest of the inference layer uses, and
//! [`select_optimal`] picks the cutoff with the highest estimated gain.
//!
//! The reported interval for the selected cutoff is valid for that cutoff
//! *fixed in advance*; after selecting on the same data it is optimistic.
//! Honest inference for a data-chosen cutoff needs fresh data (or a holdout
//! split) for the evaluation step.

use crate::causal::{confidence_interval, scores_full, EstimateReport, NuisanceEstimates, ScoreVector};
use crate::data::CausalDataset;
use crate::error::{Error, Result};

/// A grid of threshold policies on one covariate: policy `c` treats `x`
/// when `x[covariate] > c` (strict).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPolicyClass {
    covariate: usize,
    thresholds: Vec<f64>,
}

impl ThresholdPolicyClass {
    /// `thresholds` must be non-empty, finite, and strictly ascending.
    pub fn new(covariate: usize, thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::Config("threshold grid must not be empty".into()));
        }
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("threshold grid must be finite".into()));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("threshold grid must be strictly ascending".into()));
        }
        Ok(ThresholdPolicyClass { covariate, thresholds })
    }

    /// Evenly spaced grid over `[lo, hi]` with the given step; both
    /// endpoints included (the last step may be shorter).
    pub fn even_grid(covariate: usize, lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "grid bounds must be finite with lo < hi, got [{}, {}]",
                lo, hi
            )));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Config(format!("grid step must be positive, got {}", step)));
        }
        let mut thresholds = Vec::new();
        let mut k = 0u32;
        loop {
            let c = lo + f64::from(k) * step;
            if c >= hi {
                break;
            }
            thresholds.push(c);
            k += 1;
        }
        thresholds.push(hi);
        ThresholdPolicyClass::new(covariate, thresholds)
    }

    pub fn covariate(&self) -> usize {
        self.covariate
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// The policy at one cutoff as an owned closure.
    pub fn policy_at(&self, threshold: f64) -> impl Fn(&[f64]) -> bool {
        let j = self.covariate;
        move |x: &[f64]| x[j] > threshold
    }
}

/// One evaluated cutoff: its profit gain over the baseline with interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPoint {
    pub threshold: f64,
    pub report: EstimateReport,
}

/// Profit-gain estimates for every cutoff in a grid, in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCurve {
    pub covariate: usize,
    pub margin: f64,
    pub cost: f64,
    pub points: Vec<PolicyPoint>,
}

/// Evaluates the profit gain of every cutoff in `class` over `baseline`.
/// Each observation contributes `(s_c(x) - s_base(x)) * (margin * (psi1 -
/// psi0) - cost)`, so only rows where the two assignments disagree matter.
/// A cutoff whose assignment agrees with the baseline on every row has an
/// exactly zero gain and is reported with a zero-width degenerate interval
/// rather than an error.
pub fn evaluate_grid(
    data: &CausalDataset,
    nuis: &NuisanceEstimates,
    class: &ThresholdPolicyClass,
    baseline: &dyn Fn(&[f64]) -> bool,
    margin: f64,
    cost: f64,
    level: f64,
) -> Result<PolicyCurve> {
    if class.covariate >= data.covariate_dim() {
        return Err(Error::Dimension(format!(
            "policy covariate index {} out of range for {} covariates",
            class.covariate,
            data.covariate_dim()
        )));
    }
    if !margin.is_finite() || !cost.is_finite() {
        return Err(Error::Config(format!(
            "margin and cost must be finite, got {} and {}",
            margin, cost
        )));
    }
    let s1 = scores_full(data, nuis, 1)?;
    let s0 = scores_full(data, nuis, 0)?;
    // Per-row effect-profit scores, shared by every cutoff.
    let gain: Vec<f64> = s1
        .values()
        .iter()
        .zip(s0.values())
        .map(|(&a, &b)| margin * (a - b) - cost)
        .collect();
    let base: Vec<bool> = data.covariates().iter_rows().map(|x| baseline(x)).collect();

    let mut points = Vec::with_capacity(class.thresholds.len());
    for &c in &class.thresholds {
        let mut all_zero = true;
        let values: Vec<f64> = data
            .covariates()
            .iter_rows()
            .enumerate()
            .map(|(i, x)| {
                let diff = f64::from(x[class.covariate] > c) - f64::from(base[i]);
                if diff != 0.0 {
                    all_zero = false;
                }
                diff * gain[i]
            })
            .collect();
        let estimand = format!("profit_gain_threshold_{}", c);
        let report = if all_zero {
            // The cutoff replicates the baseline assignment row for row:
            // the gain is identically zero with no sampling variability.
            EstimateReport {
                estimand,
                estimate: 0.0,
                std_error: 0.0,
                ci_lower: 0.0,
                ci_upper: 0.0,
                n: data.n(),
                level,
            }
        } else {
            confidence_interval(&ScoreVector::new(estimand, values), level)?
        };
        points.push(PolicyPoint { threshold: c, report });
    }
    Ok(PolicyCurve { covariate: class.covariate, margin, cost, points })
}

/// The grid point with the highest estimated gain; ties resolve to the
/// smallest cutoff.
pub fn select_optimal(curve: &PolicyCurve) -> Result<&PolicyPoint> {
    let mut best: Option<&PolicyPoint> = None;
    for point in &curve.points {
        let better = match best {
            None => true,
            Some(b) => point.report.estimate > b.report.estimate,
        };
        if better {
            best = Some(point);
        }
    }
    best.ok_or_else(|| Error::Config("cannot select from an empty policy curve".into()))
}
