//! Doubly robust second-step inference from fitted nuisance functions.
//!
//! Given outcome regressions per treatment arm and a propensity score, each
//! observation receives an influence score whose sample mean estimates the
//! target quantity and whose sample variance yields a plug-in confidence
//! interval. The score for arm `t`,
//!
//! ```text
//! psi_t(y, t_i, x) = 1{t_i = t} * (y - mu_t(x)) / P[T = t | x] + mu_t(x)
//! ```
//!
//! is doubly robust: it has mean `E[Y(t)]` if either the outcome regression
//! or the propensity is correct. Averages of affine combinations of these
//! scores produce every estimand here: average treatment effects ([`ate`]),
//! expected profits of targeting policies ([`profit`], [`profit_diff`]),
//! effects within subpopulations selected by treatment status ([`tot`]),
//! and a covariate/outcome decomposition of the outcome gap between arms
//! ([`decomposition`]).
//!
//! Estimates come paired with their score vectors so callers can combine
//! them further; [`confidence_interval`] turns any score vector into an
//! estimate with a normal-approximation interval. [`nuisance_diagnostics`]
//! reports, against known truths on simulated data, the error moments that
//! govern whether those intervals are trustworthy: the nuisance mean-square
//! errors, their product (the doubly robust bias bound), and the
//! leave-in correlation terms that vanish under sample splitting or
//! correct specification.

use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::CausalDataset;
use crate::error::{Error, Result};

/// A fitted scalar nuisance function of the covariates.
pub type NuisanceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Propensity specification: either a fitted function of the covariates or
/// a known constant (randomized assignment).
#[derive(Clone)]
pub enum Propensity {
    /// `P[T = 1 | x]` as a function of the covariates.
    Function(NuisanceFn),
    /// Constant `P[T = 1]`, e.g. a known randomization rate.
    Constant(f64),
}

impl Propensity {
    /// Empirical treated share of a dataset, for randomized designs whose
    /// rate is unknown.
    pub fn sample_frequency(data: &CausalDataset) -> Result<Propensity> {
        let n = data.n();
        if n == 0 {
            return Err(Error::Data("cannot compute a treatment frequency on no rows".into()));
        }
        let treated = data.arm_count(1);
        Ok(Propensity::Constant(treated as f64 / n as f64))
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Propensity::Function(f) => f(x),
            Propensity::Constant(p) => *p,
        }
    }
}

/// The fitted nuisance functions feeding the influence scores, with the
/// overlap clip applied to the propensity.
#[derive(Clone)]
pub struct NuisanceEstimates {
    mu0: NuisanceFn,
    mu1: NuisanceFn,
    propensity: Propensity,
    clip: f64,
}

impl NuisanceEstimates {
    /// Default clip: propensities are forced into `[0.01, 0.99]`.
    pub const DEFAULT_CLIP: f64 = 0.01;

    pub fn new(mu0: NuisanceFn, mu1: NuisanceFn, propensity: Propensity) -> Self {
        NuisanceEstimates { mu0, mu1, propensity, clip: Self::DEFAULT_CLIP }
    }

    /// Overrides the overlap clip; `clip` must lie in `(0, 0.5)`.
    pub fn with_clip(mut self, clip: f64) -> Result<Self> {
        if !(clip > 0.0 && clip < 0.5) {
            return Err(Error::Config(format!(
                "propensity clip must lie in (0, 0.5), got {}",
                clip
            )));
        }
        self.clip = clip;
        Ok(self)
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    /// Predicted outcome mean for arm `t` at `x`.
    pub fn mu(&self, t: u8, x: &[f64]) -> f64 {
        match t {
            0 => (self.mu0)(x),
            _ => (self.mu1)(x),
        }
    }

    /// Clipped probability of arm `t` at `x`: the treated propensity is
    /// clipped into `[clip, 1 - clip]` first, and the control probability
    /// is its complement, so the two arms always sum to one.
    pub fn arm_probability(&self, t: u8, x: &[f64]) -> f64 {
        let p1 = self.propensity.value(x).clamp(self.clip, 1.0 - self.clip);
        if t == 1 {
            p1
        } else {
            1.0 - p1
        }
    }
}

/// Influence scores for one estimand, one value per observation, tagged
/// with the estimand's name for reports.
#[derive(Debug, Clone)]
pub struct ScoreVector {
    estimand: String,
    values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(estimand: impl Into<String>, values: Vec<f64>) -> Self {
        ScoreVector { estimand: estimand.into(), values }
    }

    pub fn estimand(&self) -> &str {
        &self.estimand
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    /// Elementwise difference of two score vectors (e.g. treated minus
    /// control arm scores).
    pub fn minus(&self, other: &ScoreVector, estimand: impl Into<String>) -> Result<ScoreVector> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "score vectors have different lengths: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(ScoreVector::new(estimand, values))
    }
}

/// An estimate with its normal-approximation confidence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimand: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n: usize,
    /// Nominal coverage of the interval, e.g. 0.95.
    pub level: f64,
}

fn mean(values: &[f64]) -> f64 {
    neumaier_sum(values.iter().copied()) / values.len() as f64
}

/// Compensated (Neumaier) summation: keeps the estimate and interval
/// endpoints stable against cancellation when scores are large and nearly
/// balanced.
fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

fn check_nonempty(data: &CausalDataset) -> Result<()> {
    if data.n() == 0 {
        return Err(Error::Data("no observations".into()));
    }
    Ok(())
}

/// Influence scores for the mean potential outcome of arm `t` over the full
/// population: `1{t_i = t} (y_i - mu_t(x_i)) / P[T = t | x_i] + mu_t(x_i)`.
pub fn scores_full(data: &CausalDataset, nuis: &NuisanceEstimates, t: u8) -> Result<ScoreVector> {
    check_nonempty(data)?;
    let y = data.outcomes();
    let trt = data.treatments();
    let mut values = Vec::with_capacity(data.n());
    for (i, x) in data.covariates().iter_rows().enumerate() {
        let mu = nuis.mu(t, x);
        let correction = if trt[i] == t {
            (y[i] - mu) / nuis.arm_probability(t, x)
        } else {
            0.0
        };
        values.push(correction + mu);
    }
    Ok(ScoreVector::new(format!("mean_outcome_arm_{}", t), values))
}

/// Influence scores for the mean potential outcome of arm `t` within the
/// subpopulation whose realized treatment is `t_sub`:
///
/// ```text
/// (P[T = t_sub | x] / P[T = t_sub]) 1{t_i = t} (y_i - mu_t(x_i)) / P[T = t | x_i]
///   + 1{t_i = t_sub} mu_t(x_i) / P[T = t_sub]
/// ```
///
/// with `P[T = t_sub]` the sample frequency of the subpopulation. When
/// `t = t_sub` the propensity ratio cancels exactly and the score reduces
/// to the subpopulation average of realized outcomes.
pub fn scores_sub(
    data: &CausalDataset,
    nuis: &NuisanceEstimates,
    t: u8,
    t_sub: u8,
) -> Result<ScoreVector> {
    check_nonempty(data)?;
    let n_sub = data.arm_count(t_sub);
    if n_sub == 0 {
        return Err(Error::EmptyArm { arm: t_sub });
    }
    let p_sub = n_sub as f64 / data.n() as f64;
    let y = data.outcomes();
    let trt = data.treatments();
    let mut values = Vec::with_capacity(data.n());
    for (i, x) in data.covariates().iter_rows().enumerate() {
        let mu = nuis.mu(t, x);
        let mut score = 0.0;
        if trt[i] == t {
            // The t = t_sub case divides a probability by itself, which is
            // exactly 1.0 in floating point, so these scores then collapse
            // to 1{t_i = t} y_i / p_sub identically.
            score += nuis.arm_probability(t_sub, x) / p_sub * (y[i] - mu)
                / nuis.arm_probability(t, x);
        }
        if trt[i] == t_sub {
            score += mu / p_sub;
        }
        values.push(score);
    }
    Ok(ScoreVector::new(format!("mean_outcome_arm_{}_given_{}", t, t_sub), values))
}

/// Average treatment effect with its score vector.
pub fn ate(
    data: &CausalDataset,
    nuis: &NuisanceEstimates,
    level: f64,
) -> Result<(EstimateReport, ScoreVector)> {
    let s1 = scores_full(data, nuis, 1)?;
    let s0 = scores_full(data, nuis, 0)?;
    let diff = s1.minus(&s0, "ate")?;
    let report = confidence_interval(&diff, level)?;
    Ok((report, diff))
}

/// Expected per-person profit of the targeting rule `policy` at the given
/// margin and cost: treated rows earn `margin * E[Y(1)] - cost`, untreated
/// rows earn `margin * E[Y(0)]`, combined per observation via the policy's
/// own assignment.
pub fn profit(
    data: &CausalDataset,
    nuis: &NuisanceEstimates,
    policy: &dyn Fn(&[f64]) -> bool,
    margin: f64,
    cost: f64,
    level: f64,
) -> Result<(EstimateReport, ScoreVector)> {
    check_margin_cost(margin, cost)?;
    let s1 = scores_full(data, nuis, 1)?;
    let s0 = scores_full(data, nuis, 0)?;
    let values: Vec<f64> = data
        .covariates()
        .iter_rows()
        .enumerate()
        .map(|(i, x)| {
            if policy(x) {
                margin * s1.values()[i] - cost
            } else {
                margin * s0.values()[i]
            }
        })
        .collect();
    let scores = ScoreVector::new("profit", values);
    let report = confidence_interval(&scores, level)?;
    Ok((report, scores))
}

/// Profit difference between a candidate policy and a baseline policy.
/// Only rows where the two policies disagree contribute, each with score
/// `(s'(x) - s0(x)) * (margin * (psi1 - psi0) - cost)`.
pub fn profit_diff(
    data: &CausalDataset,
    nuis: &NuisanceEstimates,
    policy: &dyn Fn(&[f64]) -> bool,
    baseline: &dyn Fn(&[f64]) -> bool,
    margin: f64,
    cost: f64,
    level: f64,
) -> Result<(EstimateReport, ScoreVector)> {
    check_margin_cost(margin, cost)?;
    let s1 = scores_full(data, nuis, 1)?;
    let s0 = scores_full(data, nuis, 0)?;
    let values: Vec<f64> = data
        .covariates()
        .iter_rows()
        .enumerate()
        .map(|(i, x)| {
            let gap = f64::from(policy(x)) - f64::from(baseline(x));
            gap * (margin * (s1.values()[i] - s0.values()[i]) - cost)
        })
        .collect();
    let scores = ScoreVector::new("profit_difference", values);
    let report = confidence_interval(&scores, level)?;
    Ok((report, scores))
}

fn check_margin_cost(margin: f64, cost: f64) -> Result<()> {
    if !margin.is_finite() || !cost.is_finite() {
        return Err(Error::Config(format!(
            "margin and cost must be finite, got {} and {}",
            margin, cost
        )));
    }
    Ok(())
}

/// Treatment effect on the treated: the effect within the subpopulation
/// that actually received treatment.
pub fn tot(
    data: &CausalDataset,
    nuis: &NuisanceEstimates,
    level: f64,
) -> Result<(EstimateReport, ScoreVector)> {
    let s1 = scores_sub(data, nuis, 1, 1)?;
    let s0 = scores_sub(data, nuis, 0, 1)?;
    let diff = s1.minus(&s0, "tot")?;
    let report = confidence_interval(&diff, level)?;
    Ok((report, diff))
}

/// Decomposition of the raw outcome gap between the treated and control
/// subpopulations into a covariate-composition part and an outcome
/// (effect) part.
#[derive(Debug, Clone)]
pub struct OutcomeGapDecomposition {
    /// The raw gap: treated-arm outcomes among the treated minus
    /// control-arm outcomes among controls.
    pub gap: EstimateReport,
    /// Part of the gap explained by different covariate compositions of
    /// the two subpopulations (control outcomes evaluated on treated vs
    /// control covariates).
    pub covariate_part: EstimateReport,
    /// Part of the gap explained by treatment itself within the treated
    /// subpopulation.
    pub outcome_part: EstimateReport,
}

/// Splits the between-arm outcome gap additively: `gap = covariate_part
/// + outcome_part`, where the covariate part compares control outcomes
/// across the two subpopulations' covariates and the outcome part is the
/// effect on the treated. The three score vectors satisfy the identity
/// row by row.
pub fn decomposition(
    data: &CausalDataset,
    nuis: &NuisanceEstimates,
    level: f64,
) -> Result<OutcomeGapDecomposition> {
    let rho11 = scores_sub(data, nuis, 1, 1)?;
    let rho01 = scores_sub(data, nuis, 0, 1)?;
    let rho00 = scores_sub(data, nuis, 0, 0)?;
    let gap = rho11.minus(&rho00, "outcome_gap")?;
    let covariate_part = rho01.minus(&rho00, "outcome_gap_covariate_part")?;
    let outcome_part = rho11.minus(&rho01, "outcome_gap_outcome_part")?;
    Ok(OutcomeGapDecomposition {
        gap: confidence_interval(&gap, level)?,
        covariate_part: confidence_interval(&covariate_part, level)?,
        outcome_part: confidence_interval(&outcome_part, level)?,
    })
}

/// Sample mean of the scores with a normal-approximation interval at the
/// given level (e.g. 0.95). The variance is the plug-in estimator
/// `E_n[(s - mean)^2]` computed in a centered two-pass with compensated
/// summation; zero variance is reported as an error rather than a
/// zero-width interval.
pub fn confidence_interval(scores: &ScoreVector, level: f64) -> Result<EstimateReport> {
    if scores.is_empty() {
        return Err(Error::Data(format!("estimand {} has no scores", scores.estimand())));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::Config(format!(
            "confidence level must lie in [0, 1), got {}",
            level
        )));
    }
    let n = scores.len();
    let estimate = scores.mean();
    if !estimate.is_finite() {
        return Err(Error::Degenerate(format!(
            "estimand {} has a non-finite estimate",
            scores.estimand()
        )));
    }
    let variance =
        neumaier_sum(scores.values().iter().map(|&s| (s - estimate) * (s - estimate))) / n as f64;
    if variance <= 0.0 {
        return Err(Error::Degenerate(format!(
            "estimand {} has zero plug-in variance; the normal approximation is meaningless",
            scores.estimand()
        )));
    }
    let std_error = (variance / n as f64).sqrt();
    // Two-sided level: z is the (1 + level) / 2 quantile.
    let standard_normal = Normal::new(0.0, 1.0).expect("unit normal is well formed");
    let z = standard_normal.inverse_cdf((1.0 + level) / 2.0);
    Ok(EstimateReport {
        estimand: scores.estimand().to_string(),
        estimate,
        std_error,
        ci_lower: estimate - z * std_error,
        ci_upper: estimate + z * std_error,
        n,
        level,
    })
}

/// True nuisance functions of a simulated design, for diagnostics.
#[derive(Clone)]
pub struct OracleNuisances {
    pub mu0: NuisanceFn,
    pub mu1: NuisanceFn,
    /// True `P[T = 1 | x]`.
    pub propensity: NuisanceFn,
}

/// Error moments of fitted nuisances against known truths.
///
/// The products bound the bias of the doubly robust estimator (each is a
/// rate: root-MSE of the propensity times root-MSE of the corresponding
/// outcome regression), and the leave-in terms measure the correlation
/// between regression errors and the treatment-indicator residual that
/// arises from fitting and evaluating on the same rows. All `scaled_*`
/// fields multiply by `sqrt(n)`: the interval for the effect estimate is
/// trustworthy when the scaled products and scaled leave-in terms are
/// small.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceDiagnostics {
    pub n: usize,
    /// `E_n[(p_hat - p)^2]`.
    pub mse_propensity: f64,
    /// `E_n[(mu_hat_0 - mu_0)^2]`.
    pub mse_mu0: f64,
    /// `E_n[(mu_hat_1 - mu_1)^2]`.
    pub mse_mu1: f64,
    /// `sqrt(mse_propensity * mse_mu0)`.
    pub product_mu0: f64,
    /// `sqrt(mse_propensity * mse_mu1)`.
    pub product_mu1: f64,
    /// `E_n[(mu_hat_0 - mu_0)(1 - 1{t_i = 0} / P[T = 0 | x_i])]` with the
    /// true propensity in the indicator weight.
    pub leave_in_mu0: f64,
    /// Same for arm 1.
    pub leave_in_mu1: f64,
    /// `sqrt(n) * product_mu0`.
    pub scaled_product_mu0: f64,
    /// `sqrt(n) * product_mu1`.
    pub scaled_product_mu1: f64,
    /// `sqrt(n) * leave_in_mu0`.
    pub scaled_leave_in_mu0: f64,
    /// `sqrt(n) * leave_in_mu1`.
    pub scaled_leave_in_mu1: f64,
}

/// Computes [`NuisanceDiagnostics`] for fitted nuisances against the truth
/// on the given rows. The estimated propensity enters through the same
/// clipped value the scores use; the indicator weights in the leave-in
/// terms use the *true* propensity.
pub fn nuisance_diagnostics(
    data: &CausalDataset,
    nuis: &NuisanceEstimates,
    truth: &OracleNuisances,
) -> Result<NuisanceDiagnostics> {
    check_nonempty(data)?;
    let n = data.n();
    let nf = n as f64;
    let trt = data.treatments();
    let (mut sp, mut s0, mut s1) = (0.0, 0.0, 0.0);
    let (mut l0, mut l1) = (0.0, 0.0);
    for (i, x) in data.covariates().iter_rows().enumerate() {
        let p_true = (truth.propensity)(x);
        let dp = nuis.arm_probability(1, x) - p_true;
        sp += dp * dp;
        let d0 = nuis.mu(0, x) - (truth.mu0)(x);
        let d1 = nuis.mu(1, x) - (truth.mu1)(x);
        s0 += d0 * d0;
        s1 += d1 * d1;
        let w0 = 1.0 - f64::from(trt[i] == 0) / (1.0 - p_true);
        let w1 = 1.0 - f64::from(trt[i] == 1) / p_true;
        l0 += d0 * w0;
        l1 += d1 * w1;
    }
    let mse_propensity = sp / nf;
    let mse_mu0 = s0 / nf;
    let mse_mu1 = s1 / nf;
    let product_mu0 = (mse_propensity * mse_mu0).sqrt();
    let product_mu1 = (mse_propensity * mse_mu1).sqrt();
    let leave_in_mu0 = l0 / nf;
    let leave_in_mu1 = l1 / nf;
    let root_n = nf.sqrt();
    Ok(NuisanceDiagnostics {
        n,
        mse_propensity,
        mse_mu0,
        mse_mu1,
        product_mu0,
        product_mu1,
        leave_in_mu0,
        leave_in_mu1,
        scaled_product_mu0: root_n * product_mu0,
        scaled_product_mu1: root_n * product_mu1,
        scaled_leave_in_mu0: root_n * leave_in_mu0,
        scaled_leave_in_mu1: root_n * leave_in_mu1,
    })
}
