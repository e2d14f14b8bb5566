//! Monte Carlo harness: synthetic designs, an analytic effect oracle, a
//! replication engine, and a placebo experiment.
//!
//! The synthetic design draws covariates uniformly on the unit cube,
//! assigns treatment by a constant or logistic propensity, and generates
//! outcomes `y = mu0(x) + tau(x) t + noise` where `mu0` and `tau` are
//! affine in the covariates plus, in the nonlinear design, a quadratic
//! expansion (squares and pairwise interactions). Coefficients are drawn
//! once per study from their own seed and held fixed across replications;
//! because the moments of the uniform cube are known, the true average
//! effect has a closed form ([`true_ate`]) that the replication engine
//! scores coverage against.
//!
//! Reproducibility: every replication owns stream `rep` of a counter-mode
//! generator keyed by the master seed ([`rep_rng`]), and coefficient draws
//! use a reserved stream, so reports are identical regardless of thread
//! count or which subsets of replications run.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::causal::{
    ate, NuisanceEstimates, NuisanceFn, OracleNuisances, Propensity,
};
use crate::data::{CausalDataset, Matrix};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::network::ArchitectureSpec;
use crate::training::{
    fit_joint, fit_propensity, fit_regressions_by_arm, TrainConfig,
};

/// Stream reserved for coefficient draws so replication streams
/// (0, 1, 2, ...) can never collide with it.
const COEFFICIENT_STREAM: u64 = u64::MAX;

/// How treatment is assigned in the synthetic design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropensityDesign {
    /// Randomized assignment with a fixed rate.
    Constant(f64),
    /// `p(x) = sigmoid(alpha_p' (1, x))` with drawn coefficients.
    Logistic,
}

/// Whether the outcome surfaces include the quadratic expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeDesign {
    Linear,
    Nonlinear,
}

/// Interpretation of the second parameter in the design's normal
/// coefficient distributions (the reference text is ambiguous).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalConvention {
    /// `N(m, v)` means variance `v` (the default reading).
    Variance,
    /// `N(m, s)` means standard deviation `s`.
    StdDev,
}

/// Full description of one synthetic data-generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    /// Covariate dimension.
    pub d: usize,
    /// Sample size per replication.
    pub n: usize,
    pub propensity: PropensityDesign,
    pub outcome: OutcomeDesign,
    /// Seed for the once-per-study coefficient draw.
    pub coef_seed: u64,
    pub normal_convention: NormalConvention,
    /// Outcome noise standard deviation; the reference design uses 1.0.
    /// Zero is allowed as a test hook for exactness checks.
    pub noise_sd: f64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            d: 20,
            n: 10_000,
            propensity: PropensityDesign::Constant(0.5),
            outcome: OutcomeDesign::Linear,
            coef_seed: 0,
            normal_convention: NormalConvention::Variance,
            noise_sd: 1.0,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("covariate dimension must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("sample size must be at least 2, got {}", self.n)));
        }
        if let PropensityDesign::Constant(p) = self.propensity {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(Error::Config(format!(
                    "constant propensity must lie in [0, 1], got {}",
                    p
                )));
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::Config(format!(
                "noise standard deviation must be finite and non-negative, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

/// Dimension of the quadratic expansion: all squares and upper-triangle
/// interactions, `d (d + 1) / 2` terms.
pub fn phi_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

/// The quadratic expansion of `x` in the fixed ordering
/// `(x1^2, x1 x2, ..., x1 xd, x2^2, x2 x3, ..., xd^2)`.
pub fn phi(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut out = Vec::with_capacity(phi_dim(d));
    for i in 0..d {
        for j in i..d {
            out.push(x[i] * x[j]);
        }
    }
    out
}

/// Coefficients of one study, drawn once and fixed across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// Propensity coefficients `(intercept, slopes...)`, length `d + 1`.
    alpha_p: Vec<f64>,
    /// Control-outcome linear coefficients, length `d + 1`.
    alpha_mu: Vec<f64>,
    /// Effect linear coefficients, length `d + 1`.
    alpha_tau: Vec<f64>,
    /// Control-outcome quadratic coefficients, length `phi_dim(d)`;
    /// all zero in the linear design.
    beta_mu: Vec<f64>,
    /// Effect quadratic coefficients, same shape as `beta_mu`.
    beta_tau: Vec<f64>,
}

impl Coefficients {
    pub fn alpha_p(&self) -> &[f64] {
        &self.alpha_p
    }

    pub fn alpha_mu(&self) -> &[f64] {
        &self.alpha_mu
    }

    pub fn alpha_tau(&self) -> &[f64] {
        &self.alpha_tau
    }

    pub fn beta_mu(&self) -> &[f64] {
        &self.beta_mu
    }

    pub fn beta_tau(&self) -> &[f64] {
        &self.beta_tau
    }

    /// `P[T = 1 | x]` under the given assignment design.
    pub fn propensity_value(&self, design: PropensityDesign, x: &[f64]) -> f64 {
        match design {
            PropensityDesign::Constant(p) => p,
            PropensityDesign::Logistic => {
                let a = affine(&self.alpha_p, x);
                if a >= 0.0 {
                    1.0 / (1.0 + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Control-arm outcome surface `mu0(x)`.
    pub fn mu0_value(&self, outcome: OutcomeDesign, x: &[f64]) -> f64 {
        let mut v = affine(&self.alpha_mu, x);
        if outcome == OutcomeDesign::Nonlinear {
            v += quadratic(&self.beta_mu, x);
        }
        v
    }

    /// Effect surface `tau(x)`.
    pub fn tau_value(&self, outcome: OutcomeDesign, x: &[f64]) -> f64 {
        let mut v = affine(&self.alpha_tau, x);
        if outcome == OutcomeDesign::Nonlinear {
            v += quadratic(&self.beta_tau, x);
        }
        v
    }

    /// Treated-arm outcome surface `mu1(x) = mu0(x) + tau(x)`.
    pub fn mu1_value(&self, outcome: OutcomeDesign, x: &[f64]) -> f64 {
        self.mu0_value(outcome, x) + self.tau_value(outcome, x)
    }
}

fn affine(coef: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(coef.len(), x.len() + 1);
    let mut v = coef[0];
    for (c, xi) in coef[1..].iter().zip(x) {
        v += c * xi;
    }
    v
}

/// `beta' phi(x)` accumulated in the fixed `phi` ordering without
/// materializing the expansion.
fn quadratic(beta: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    debug_assert_eq!(beta.len(), phi_dim(d));
    let mut v = 0.0;
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            v += beta[k] * x[i] * x[j];
            k += 1;
        }
    }
    v
}

/// Draws a study's coefficients from `spec.coef_seed` on a reserved
/// generator stream. Draw order: propensity slopes, control-outcome
/// slopes, effect slopes, then both quadratic vectors, so shared
/// components coincide across designs with the same seed. In the logistic
/// design with `d > 20`, propensity slopes beyond the first 20 covariates
/// are drawn but set to zero (a fixed-sparsity rule); in the linear
/// design the quadratic vectors are drawn but zeroed.
pub fn draw_coefficients(spec: &DgpSpec) -> Result<Coefficients> {
    spec.validate()?;
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.coef_seed);
    rng.set_stream(COEFFICIENT_STREAM);
    let normal_sd = |scale: f64| match spec.normal_convention {
        NormalConvention::Variance => scale.sqrt(),
        NormalConvention::StdDev => scale,
    };

    let mut alpha_p = Vec::with_capacity(d + 1);
    alpha_p.push(0.09);
    for _ in 0..d {
        alpha_p.push(rng.random_range(-0.55..0.55));
    }
    if matches!(spec.propensity, PropensityDesign::Logistic) && d > 20 {
        for slope in &mut alpha_p[21..] {
            *slope = 0.0;
        }
    }

    let mut alpha_mu = Vec::with_capacity(d + 1);
    alpha_mu.push(0.09);
    let sd_mu = normal_sd(0.7);
    for _ in 0..d {
        let z: f64 = rng.sample(StandardNormal);
        alpha_mu.push(0.3 + sd_mu * z);
    }

    let mut alpha_tau = Vec::with_capacity(d + 1);
    alpha_tau.push(-0.05);
    for _ in 0..d {
        alpha_tau.push(rng.random_range(0.1..0.22));
    }

    let p_dim = phi_dim(d);
    let sd_beta = normal_sd(0.3);
    let mut beta_mu = Vec::with_capacity(p_dim);
    for _ in 0..p_dim {
        let z: f64 = rng.sample(StandardNormal);
        beta_mu.push(0.01 + sd_beta * z);
    }
    let mut beta_tau = Vec::with_capacity(p_dim);
    for _ in 0..p_dim {
        beta_tau.push(rng.random_range(-0.05..0.06));
    }
    if spec.outcome == OutcomeDesign::Linear {
        beta_mu.iter_mut().for_each(|b| *b = 0.0);
        beta_tau.iter_mut().for_each(|b| *b = 0.0);
    }

    Ok(Coefficients { alpha_p, alpha_mu, alpha_tau, beta_mu, beta_tau })
}

/// Analytic average effect `E[tau(X)]` over `X ~ U(0,1)^d`: the intercept
/// plus half the linear slopes, plus the quadratic terms weighted by the
/// uniform moments `E[X_i^2] = 1/3` and `E[X_i X_j] = 1/4` for `i != j`.
pub fn true_ate(coefs: &Coefficients, spec: &DgpSpec) -> f64 {
    let d = spec.d;
    let mut v = coefs.alpha_tau[0];
    for k in 0..d {
        v += 0.5 * coefs.alpha_tau[k + 1];
    }
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            v += coefs.beta_tau[k] * if i == j { 1.0 / 3.0 } else { 0.25 };
            k += 1;
        }
    }
    v
}

/// The replication generator: stream `rep` of a counter-mode generator
/// keyed by `master_seed`. Every replication's draws are independent of
/// every other's and of the coefficient draw.
pub fn rep_rng(master_seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rep);
    rng
}

/// Draws one sample from the design: covariates first (row major), then
/// treatments, then outcome noise, consuming `rng` in that fixed order.
pub fn generate_sample(
    coefs: &Coefficients,
    spec: &DgpSpec,
    rng: &mut impl Rng,
) -> Result<CausalDataset> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let mut xdata = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        xdata.push(rng.random_range(0.0..1.0));
    }
    let x = Matrix::new(n, d, xdata)?;
    let mut t = Vec::with_capacity(n);
    for row in x.iter_rows() {
        let p = coefs.propensity_value(spec.propensity, row);
        t.push(u8::from(rng.random::<f64>() < p));
    }
    let mut y = Vec::with_capacity(n);
    for (i, row) in x.iter_rows().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        let mean = coefs.mu0_value(spec.outcome, row)
            + f64::from(t[i]) * coefs.tau_value(spec.outcome, row);
        y.push(mean + spec.noise_sd * z);
    }
    CausalDataset::new(x, y, t)
}

/// The design's true nuisance functions as closures, for oracle runs and
/// diagnostics.
pub fn oracle_nuisances(coefs: &Coefficients, spec: &DgpSpec) -> OracleNuisances {
    let shared = Arc::new(coefs.clone());
    let (outcome, propensity) = (spec.outcome, spec.propensity);
    let c0 = Arc::clone(&shared);
    let c1 = Arc::clone(&shared);
    let cp = shared;
    OracleNuisances {
        mu0: Arc::new(move |x: &[f64]| c0.mu0_value(outcome, x)),
        mu1: Arc::new(move |x: &[f64]| c1.mu1_value(outcome, x)),
        propensity: Arc::new(move |x: &[f64]| cp.propensity_value(propensity, x)),
    }
}

/// How a study estimates the outcome regressions.
#[derive(Debug, Clone)]
pub enum NuisanceStrategy {
    /// Plug in the true surfaces (no training).
    Oracle,
    /// One two-head network fit on all rows.
    TrainedJoint { hidden_widths: Vec<usize>, train: TrainConfig },
    /// One scalar network per treatment arm.
    TrainedPerArm { hidden_widths: Vec<usize>, train: TrainConfig },
}

/// How a study estimates the propensity.
#[derive(Debug, Clone)]
pub enum PropensityStrategy {
    /// Plug in the design's true propensity (the known rate under
    /// randomized assignment).
    Oracle,
    /// The sample treatment frequency (randomized designs with an unknown
    /// rate).
    SampleFrequency,
    /// A logistic network fit of treatment on covariates.
    Trained { hidden_widths: Vec<usize>, train: TrainConfig },
}

/// Full specification of a coverage study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub dgp: DgpSpec,
    pub reps: usize,
    pub master_seed: u64,
    pub outcome_nuisance: NuisanceStrategy,
    pub propensity_nuisance: PropensityStrategy,
    /// Confidence level of the per-rep intervals.
    pub level: f64,
    /// Overlap clip passed to the score construction.
    pub clip: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            dgp: DgpSpec::default(),
            reps: 500,
            master_seed: 0,
            outcome_nuisance: NuisanceStrategy::Oracle,
            propensity_nuisance: PropensityStrategy::Oracle,
            level: 0.95,
            clip: NuisanceEstimates::DEFAULT_CLIP,
        }
    }
}

impl StudyConfig {
    fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.reps == 0 {
            return Err(Error::Config("a study needs at least 1 replication".into()));
        }
        if !(0.0..1.0).contains(&self.level) {
            return Err(Error::Config(format!(
                "confidence level must lie in [0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }
}

/// One replication's estimate and interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub rep: usize,
    pub tau_hat: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Whether the interval contains the study's true value.
    pub covered: bool,
}

/// Aggregate report of a replication study.
#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    /// The value coverage is scored against (0 for placebo studies).
    pub true_ate: f64,
    pub level: f64,
    /// Successful replications in replication order.
    pub records: Vec<RepRecord>,
    /// Replications that aborted with an error.
    pub failures: usize,
}

impl McReport {
    pub fn attempted(&self) -> usize {
        self.records.len() + self.failures
    }

    /// Mean estimate across successful replications (NaN if none).
    pub fn mean_estimate(&self) -> f64 {
        let n = self.records.len();
        self.records.iter().map(|r| r.tau_hat).sum::<f64>() / n as f64
    }

    /// Mean estimate minus the true value.
    pub fn bias(&self) -> f64 {
        self.mean_estimate() - self.true_ate
    }

    /// Fraction of successful replications whose interval covers the true
    /// value.
    pub fn coverage(&self) -> f64 {
        let n = self.records.len();
        self.records.iter().filter(|r| r.covered).count() as f64 / n as f64
    }

    pub fn avg_interval_length(&self) -> f64 {
        let n = self.records.len();
        self.records.iter().map(|r| r.ci_upper - r.ci_lower).sum::<f64>() / n as f64
    }

    /// Mean per-rep standard error, the scale for judging how far the mean
    /// estimate may wander from the truth.
    pub fn mean_std_error(&self) -> f64 {
        let n = self.records.len();
        self.records.iter().map(|r| r.std_error).sum::<f64>() / n as f64
    }

    /// One CSV row per successful replication.
    pub fn write_rows<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rep,tau_hat,std_error,ci_lower,ci_upper,covered")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.rep,
                r.tau_hat,
                r.std_error,
                r.ci_lower,
                r.ci_upper,
                u8::from(r.covered)
            )?;
        }
        Ok(())
    }

    /// Key-value summary block: bias, interval length, coverage.
    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "true_value {:.16e}", self.true_ate)?;
        writeln!(w, "level {}", self.level)?;
        writeln!(w, "reps_successful {}", self.records.len())?;
        writeln!(w, "reps_failed {}", self.failures)?;
        writeln!(w, "mean_estimate {:.16e}", self.mean_estimate())?;
        writeln!(w, "bias {:.16e}", self.bias())?;
        writeln!(w, "avg_interval_length {:.16e}", self.avg_interval_length())?;
        writeln!(w, "coverage {:.6}", self.coverage())?;
        Ok(())
    }
}

/// Builds the outcome nuisances for one replication's data.
fn build_outcome_nuisances(
    strategy: &NuisanceStrategy,
    data: &CausalDataset,
    oracle: &OracleNuisances,
    fit_seed: u64,
) -> Result<(NuisanceFn, NuisanceFn)> {
    match strategy {
        NuisanceStrategy::Oracle => Ok((Arc::clone(&oracle.mu0), Arc::clone(&oracle.mu1))),
        NuisanceStrategy::TrainedJoint { hidden_widths, train } => {
            let spec = ArchitectureSpec::new(data.covariate_dim(), hidden_widths.clone(), 2)?;
            let cfg = TrainConfig { seed: fit_seed, ..train.clone() };
            let model = fit_joint(data, &spec, &cfg)?;
            Ok((model.mu0_fn(), model.mu1_fn()))
        }
        NuisanceStrategy::TrainedPerArm { hidden_widths, train } => {
            let spec = ArchitectureSpec::new(data.covariate_dim(), hidden_widths.clone(), 1)?;
            let cfg = TrainConfig { seed: fit_seed, ..train.clone() };
            let arms = fit_regressions_by_arm(data, &LossKind::LeastSquares, &spec, &cfg)?;
            Ok((arms.control.mean_fn()?, arms.treated.mean_fn()?))
        }
    }
}

/// Builds the propensity for one replication's data.
fn build_propensity(
    strategy: &PropensityStrategy,
    data: &CausalDataset,
    oracle: &OracleNuisances,
    design: PropensityDesign,
    fit_seed: u64,
) -> Result<Propensity> {
    match strategy {
        PropensityStrategy::Oracle => Ok(match design {
            PropensityDesign::Constant(p) => Propensity::Constant(p),
            PropensityDesign::Logistic => Propensity::Function(Arc::clone(&oracle.propensity)),
        }),
        PropensityStrategy::SampleFrequency => Propensity::sample_frequency(data),
        PropensityStrategy::Trained { hidden_widths, train } => {
            let spec = ArchitectureSpec::new(data.covariate_dim(), hidden_widths.clone(), 1)?;
            let cfg = TrainConfig { seed: fit_seed, ..train.clone() };
            let model = fit_propensity(data, &spec, &cfg)?;
            Ok(Propensity::Function(model.mean_fn()?))
        }
    }
}

fn run_one_rep(cfg: &StudyConfig, coefs: &Coefficients, target: f64, rep: usize) -> Result<RepRecord> {
    let mut rng = rep_rng(cfg.master_seed, rep as u64);
    let data = generate_sample(coefs, &cfg.dgp, &mut rng)?;
    // Fit seeds are drawn whether or not a strategy trains, so the data
    // and every downstream draw are identical across strategies.
    let fit_seed: u64 = rng.random();
    let prop_seed: u64 = rng.random();
    let oracle = oracle_nuisances(coefs, &cfg.dgp);
    let (mu0, mu1) = build_outcome_nuisances(&cfg.outcome_nuisance, &data, &oracle, fit_seed)?;
    let propensity =
        build_propensity(&cfg.propensity_nuisance, &data, &oracle, cfg.dgp.propensity, prop_seed)?;
    let nuis = NuisanceEstimates::new(mu0, mu1, propensity).with_clip(cfg.clip)?;
    let (report, _) = ate(&data, &nuis, cfg.level)?;
    Ok(RepRecord {
        rep,
        tau_hat: report.estimate,
        std_error: report.std_error,
        ci_lower: report.ci_lower,
        ci_upper: report.ci_upper,
        covered: report.ci_lower <= target && target <= report.ci_upper,
    })
}

/// Runs a coverage study: draws coefficients once, then `reps`
/// replications in parallel (each on its own generator stream), scoring
/// every interval against the analytic truth. Replications that abort are
/// counted in [`McReport::failures`] and excluded from the aggregates.
pub fn run_study(cfg: &StudyConfig) -> Result<McReport> {
    cfg.validate()?;
    let coefs = draw_coefficients(&cfg.dgp)?;
    let target = true_ate(&coefs, &cfg.dgp);
    let outcomes: Vec<Result<RepRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_one_rep(cfg, &coefs, target, rep))
        .collect();
    let mut records = Vec::with_capacity(cfg.reps);
    let mut failures = 0;
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(_) => failures += 1,
        }
    }
    Ok(McReport { true_ate: target, level: cfg.level, records, failures })
}

/// Where a placebo study gets its base rows.
pub enum PlaceboSource<'a> {
    /// Generate fresh control rows from a synthetic design each
    /// replication.
    Dgp(&'a DgpSpec),
    /// Reuse a fixed dataset's control rows; replications differ only in
    /// the placebo assignment.
    Data(&'a CausalDataset),
}

/// Configuration of a placebo study.
#[derive(Debug, Clone)]
pub struct PlaceboConfig {
    /// Probability a control row is labeled placebo-treated.
    pub fraction: f64,
    pub reps: usize,
    pub master_seed: u64,
    pub outcome_nuisance: NuisanceStrategy,
    pub level: f64,
    pub clip: f64,
}

impl Default for PlaceboConfig {
    fn default() -> Self {
        PlaceboConfig {
            fraction: 0.5,
            reps: 500,
            master_seed: 0,
            outcome_nuisance: NuisanceStrategy::Oracle,
            level: 0.95,
            clip: NuisanceEstimates::DEFAULT_CLIP,
        }
    }
}

/// Runs the placebo experiment: keep only control rows, assign a fake
/// treatment independently of everything, rerun the full pipeline, and
/// score the intervals against the known true effect of zero. The
/// propensity is the placebo assignment's sample frequency. Under the
/// oracle outcome strategy both arms use the design's control surface
/// (there is no effect to know).
pub fn run_placebo(source: &PlaceboSource, cfg: &PlaceboConfig) -> Result<McReport> {
    if !(cfg.fraction > 0.0 && cfg.fraction < 1.0) {
        return Err(Error::Config(format!(
            "placebo fraction must lie strictly in (0, 1), got {} (1 would leave no controls)",
            cfg.fraction
        )));
    }
    if cfg.reps == 0 {
        return Err(Error::Config("a placebo study needs at least 1 replication".into()));
    }
    if !(0.0..1.0).contains(&cfg.level) {
        return Err(Error::Config(format!(
            "confidence level must lie in [0, 1), got {}",
            cfg.level
        )));
    }
    let coefs = match source {
        PlaceboSource::Dgp(spec) => Some((draw_coefficients(spec)?, (*spec).clone())),
        PlaceboSource::Data(data) => {
            if data.arm_count(0) == 0 {
                return Err(Error::EmptyArm { arm: 0 });
            }
            None
        }
    };

    let outcomes: Vec<Result<RepRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rep_rng(cfg.master_seed, rep as u64);
            let controls = match (source, &coefs) {
                (PlaceboSource::Dgp(_), Some((coefs, spec))) => {
                    let sample = generate_sample(coefs, spec, &mut rng)?;
                    let keep: Vec<bool> =
                        sample.treatments().iter().map(|&t| t == 0).collect();
                    sample.filter(|i| keep[i])?
                }
                (PlaceboSource::Data(data), _) => {
                    data.filter(|i| data.treatments()[i] == 0)?
                }
                _ => unreachable!("coefficients exist exactly for the DGP source"),
            };
            if controls.n() == 0 {
                return Err(Error::EmptyArm { arm: 0 });
            }
            let placebo: Vec<u8> = (0..controls.n())
                .map(|_| u8::from(rng.random::<f64>() < cfg.fraction))
                .collect();
            let fit_seed: u64 = rng.random();
            let data = controls.with_treatments(placebo)?;

            let oracle = match &coefs {
                Some((c, spec)) => {
                    let mu0 = oracle_nuisances(c, spec).mu0;
                    OracleNuisances {
                        mu0: Arc::clone(&mu0),
                        mu1: mu0,
                        propensity: Arc::new(move |_: &[f64]| 0.0),
                    }
                }
                None => OracleNuisances {
                    mu0: Arc::new(|_: &[f64]| 0.0),
                    mu1: Arc::new(|_: &[f64]| 0.0),
                    propensity: Arc::new(|_: &[f64]| 0.0),
                },
            };
            if matches!(cfg.outcome_nuisance, NuisanceStrategy::Oracle) && coefs.is_none() {
                return Err(Error::Config(
                    "oracle outcome nuisances are only defined for a synthetic placebo source"
                        .into(),
                ));
            }
            let (mu0, mu1) =
                build_outcome_nuisances(&cfg.outcome_nuisance, &data, &oracle, fit_seed)?;
            let propensity = Propensity::sample_frequency(&data)?;
            let nuis = NuisanceEstimates::new(mu0, mu1, propensity).with_clip(cfg.clip)?;
            let (report, _) = ate(&data, &nuis, cfg.level)?;
            Ok(RepRecord {
                rep,
                tau_hat: report.estimate,
                std_error: report.std_error,
                ci_lower: report.ci_lower,
                ci_upper: report.ci_upper,
                covered: report.ci_lower <= 0.0 && 0.0 <= report.ci_upper,
            })
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.reps);
    let mut failures = 0;
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(_) => failures += 1,
        }
    }
    Ok(McReport { true_ate: 0.0, level: cfg.level, records, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::nuisance_diagnostics;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }

    fn zeroed_coefficients(d: usize) -> Coefficients {
        Coefficients {
            alpha_p: vec![0.0; d + 1],
            alpha_mu: vec![0.0; d + 1],
            alpha_tau: vec![0.0; d + 1],
            beta_mu: vec![0.0; phi_dim(d)],
            beta_tau: vec![0.0; phi_dim(d)],
        }
    }

    #[test]
    fn true_effect_arithmetic_on_crafted_coefficients() {
        // Linear, d = 1, effect coefficients (-0.05, 0.1): the intercept
        // cancels half the slope exactly.
        let spec = DgpSpec { d: 1, ..DgpSpec::default() };
        let mut coefs = zeroed_coefficients(1);
        coefs.alpha_tau = vec![-0.05, 0.1];
        assert_eq!(true_ate(&coefs, &spec), 0.0);

        // Nonlinear, d = 2, quadratic effect coefficients on
        // (x1^2, x1 x2, x2^2) = (0.3, 0.4, 0.6): squares weight 1/3,
        // interactions 1/4.
        let spec = DgpSpec { d: 2, outcome: OutcomeDesign::Nonlinear, ..DgpSpec::default() };
        let mut coefs = zeroed_coefficients(2);
        coefs.beta_tau = vec![0.3, 0.4, 0.6];
        let expected = 0.3 / 3.0 + 0.4 / 4.0 + 0.6 / 3.0;
        assert_close(true_ate(&coefs, &spec), expected, 1e-15);
    }

    #[test]
    fn true_effect_matches_monte_carlo_integration() {
        // Independent oracle: integrate tau(X) over the uniform cube by
        // brute force and compare within 3 standard errors.
        let spec = DgpSpec {
            d: 3,
            outcome: OutcomeDesign::Nonlinear,
            coef_seed: 99,
            ..DgpSpec::default()
        };
        let coefs = draw_coefficients(&spec).unwrap();
        let analytic = true_ate(&coefs, &spec);
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let draws = 2_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut x = [0.0; 3];
        for _ in 0..draws {
            for xi in &mut x {
                *xi = rng.random_range(0.0..1.0);
            }
            let t = coefs.tau_value(spec.outcome, &x);
            sum += t;
            sumsq += t * t;
        }
        let mc_mean = sum / draws as f64;
        let mc_var = (sumsq / draws as f64 - mc_mean * mc_mean).max(0.0);
        let se = (mc_var / draws as f64).sqrt();
        assert!(
            (analytic - mc_mean).abs() <= 3.0 * se,
            "analytic {} vs MC {} (3 se = {})",
            analytic,
            mc_mean,
            3.0 * se
        );
    }

    #[test]
    fn coefficient_shapes_and_fixed_values() {
        let spec = DgpSpec { d: 4, outcome: OutcomeDesign::Nonlinear, ..DgpSpec::default() };
        let coefs = draw_coefficients(&spec).unwrap();
        assert_eq!(coefs.alpha_p()[0], 0.09);
        assert_eq!(coefs.alpha_mu()[0], 0.09);
        assert_eq!(coefs.alpha_tau()[0], -0.05);
        assert_eq!(coefs.alpha_p().len(), 5);
        assert_eq!(coefs.beta_mu().len(), phi_dim(4));
        for &s in &coefs.alpha_p()[1..] {
            assert!((-0.55..0.55).contains(&s));
        }
        for &s in &coefs.alpha_tau()[1..] {
            assert!((0.1..0.22).contains(&s));
        }
        for &s in coefs.beta_tau() {
            assert!((-0.05..0.06).contains(&s));
        }
        // Same seed, same coefficients.
        assert_eq!(coefs, draw_coefficients(&spec).unwrap());
        // Different seed differs.
        let other = draw_coefficients(&DgpSpec { coef_seed: 1, ..spec.clone() }).unwrap();
        assert_ne!(coefs, other);
    }

    #[test]
    fn linear_design_zeroes_the_quadratic_vectors() {
        let spec = DgpSpec { d: 3, outcome: OutcomeDesign::Linear, ..DgpSpec::default() };
        let coefs = draw_coefficients(&spec).unwrap();
        assert!(coefs.beta_mu().iter().all(|&b| b == 0.0));
        assert!(coefs.beta_tau().iter().all(|&b| b == 0.0));
        // And the alphas agree with the nonlinear draw at the same seed.
        let nl = draw_coefficients(&DgpSpec { outcome: OutcomeDesign::Nonlinear, ..spec })
            .unwrap();
        assert_eq!(coefs.alpha_mu(), nl.alpha_mu());
        assert_eq!(coefs.alpha_tau(), nl.alpha_tau());
    }

    #[test]
    fn logistic_high_dimensional_slopes_are_sparse() {
        let spec = DgpSpec {
            d: 100,
            propensity: PropensityDesign::Logistic,
            ..DgpSpec::default()
        };
        let coefs = draw_coefficients(&spec).unwrap();
        let nonzero = coefs.alpha_p()[1..].iter().filter(|&&s| s != 0.0).count();
        assert_eq!(nonzero, 20);
        assert!(coefs.alpha_p()[1..21].iter().all(|&s| s != 0.0));
        assert!(coefs.alpha_p()[21..].iter().all(|&s| s == 0.0));
        // Constant designs keep all slopes (they are simply unused).
        let dense = draw_coefficients(&DgpSpec {
            propensity: PropensityDesign::Constant(0.5),
            ..spec
        })
        .unwrap();
        assert!(dense.alpha_p()[1..].iter().all(|&s| s != 0.0));
    }

    #[test]
    fn phi_ordering_is_lexicographic() {
        let x = [2.0, 3.0, 5.0];
        assert_eq!(phi(&x), vec![4.0, 6.0, 10.0, 9.0, 15.0, 25.0]);
        assert_eq!(phi_dim(3), 6);
        // The inline accumulation agrees with the materialized expansion.
        let beta = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let expanded: f64 = phi(&x).iter().zip(&beta).map(|(p, b)| p * b).sum();
        assert_close(quadratic(&beta, &x), expanded, 1e-12);
    }

    #[test]
    fn sample_has_the_documented_marginals() {
        let spec = DgpSpec { d: 3, n: 20_000, ..DgpSpec::default() };
        let coefs = draw_coefficients(&spec).unwrap();
        let mut rng = rep_rng(7, 0);
        let data = generate_sample(&coefs, &spec, &mut rng).unwrap();
        assert_eq!(data.n(), 20_000);
        // Covariates in [0, 1).
        assert!(data.covariates().as_slice().iter().all(|&v| (0.0..1.0).contains(&v)));
        // Constant propensity 0.5: treated share concentrates.
        let share = data.arm_count(1) as f64 / data.n() as f64;
        assert!((0.49..=0.51).contains(&share), "treated share {}", share);
    }

    #[test]
    fn logistic_design_propensities_are_interior() {
        let spec = DgpSpec {
            d: 20,
            n: 5_000,
            propensity: PropensityDesign::Logistic,
            ..DgpSpec::default()
        };
        let coefs = draw_coefficients(&spec).unwrap();
        let mut rng = rep_rng(8, 0);
        let data = generate_sample(&coefs, &spec, &mut rng).unwrap();
        let (mut lo, mut hi) = (1.0f64, 0.0f64);
        for row in data.covariates().iter_rows() {
            let p = coefs.propensity_value(spec.propensity, row);
            lo = lo.min(p);
            hi = hi.max(p);
        }
        assert!(lo > 0.01 && hi < 0.99, "propensity range [{}, {}]", lo, hi);
        let share = data.arm_count(1) as f64 / data.n() as f64;
        assert!((0.2..0.8).contains(&share), "treated share {}", share);
    }

    #[test]
    fn noise_free_outcomes_are_exact() {
        let spec = DgpSpec { d: 2, n: 50, noise_sd: 0.0, ..DgpSpec::default() };
        let coefs = draw_coefficients(&spec).unwrap();
        let mut rng = rep_rng(9, 0);
        let data = generate_sample(&coefs, &spec, &mut rng).unwrap();
        for (i, row) in data.covariates().iter_rows().enumerate() {
            let expected = coefs.mu0_value(spec.outcome, row)
                + f64::from(data.treatments()[i]) * coefs.tau_value(spec.outcome, row);
            assert_eq!(data.outcomes()[i], expected, "row {}", i);
        }
    }

    #[test]
    fn replication_streams_are_disjoint_and_reproducible() {
        let spec = DgpSpec { d: 2, n: 30, ..DgpSpec::default() };
        let coefs = draw_coefficients(&spec).unwrap();
        let a = generate_sample(&coefs, &spec, &mut rep_rng(5, 0)).unwrap();
        let b = generate_sample(&coefs, &spec, &mut rep_rng(5, 0)).unwrap();
        let c = generate_sample(&coefs, &spec, &mut rep_rng(5, 1)).unwrap();
        assert_eq!(a.outcomes(), b.outcomes());
        assert_eq!(a.treatments(), b.treatments());
        assert_ne!(a.outcomes(), c.outcomes());
    }

    #[test]
    fn oracle_study_covers_at_a_small_scale() {
        let cfg = StudyConfig {
            dgp: DgpSpec { d: 5, n: 500, ..DgpSpec::default() },
            reps: 50,
            master_seed: 3,
            ..StudyConfig::default()
        };
        let report = run_study(&cfg).unwrap();
        assert_eq!(report.failures, 0);
        assert_eq!(report.records.len(), 50);
        assert!(report.coverage() >= 0.85, "coverage {}", report.coverage());
        assert!(report.bias().abs() < 0.05, "bias {}", report.bias());
        // Records arrive in replication order regardless of scheduling.
        for (i, r) in report.records.iter().enumerate() {
            assert_eq!(r.rep, i);
        }
    }

    #[test]
    fn single_replication_coverage_is_zero_or_one() {
        let cfg = StudyConfig {
            dgp: DgpSpec { d: 2, n: 200, ..DgpSpec::default() },
            reps: 1,
            master_seed: 4,
            ..StudyConfig::default()
        };
        let report = run_study(&cfg).unwrap();
        let c = report.coverage();
        assert!(c == 0.0 || c == 1.0);
    }

    #[test]
    fn studies_are_deterministic() {
        let cfg = StudyConfig {
            dgp: DgpSpec { d: 3, n: 300, ..DgpSpec::default() },
            reps: 4,
            master_seed: 11,
            ..StudyConfig::default()
        };
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trained_study_runs_end_to_end() {
        let train = TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.01,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let cfg = StudyConfig {
            dgp: DgpSpec { d: 3, n: 400, ..DgpSpec::default() },
            reps: 3,
            master_seed: 12,
            outcome_nuisance: NuisanceStrategy::TrainedJoint {
                hidden_widths: vec![8],
                train: train.clone(),
            },
            propensity_nuisance: PropensityStrategy::SampleFrequency,
            ..StudyConfig::default()
        };
        let report = run_study(&cfg).unwrap();
        assert_eq!(report.failures, 0);
        for r in &report.records {
            assert!(r.tau_hat.is_finite() && r.std_error > 0.0);
            assert!(r.ci_lower < r.ci_upper);
        }
        // Per-arm strategy sees the identical sample (same streams), so
        // its estimates are close but not identical.
        let cfg2 = StudyConfig {
            outcome_nuisance: NuisanceStrategy::TrainedPerArm {
                hidden_widths: vec![8],
                train,
            },
            ..cfg
        };
        let report2 = run_study(&cfg2).unwrap();
        assert_eq!(report2.failures, 0);
        assert!((report.records[0].tau_hat - report2.records[0].tau_hat).abs() < 0.5);
    }

    #[test]
    fn placebo_study_centers_on_zero() {
        let dgp = DgpSpec { d: 3, n: 600, ..DgpSpec::default() };
        let cfg = PlaceboConfig { reps: 20, master_seed: 13, ..PlaceboConfig::default() };
        let report = run_placebo(&PlaceboSource::Dgp(&dgp), &cfg).unwrap();
        assert_eq!(report.true_ate, 0.0);
        assert_eq!(report.failures, 0);
        assert_eq!(report.records.len(), 20);
        // Oracle nuisances on a true null: nearly nominal coverage even at
        // 20 reps, and the mean estimate is within a few pooled standard
        // errors of zero.
        assert!(report.coverage() >= 0.8, "coverage {}", report.coverage());
        let pooled = report.mean_std_error() / (report.records.len() as f64).sqrt();
        assert!(
            report.mean_estimate().abs() <= 4.0 * pooled,
            "mean {} vs pooled se {}",
            report.mean_estimate(),
            pooled
        );
    }

    #[test]
    fn placebo_from_data_reuses_controls_only() {
        let dgp = DgpSpec { d: 2, n: 400, ..DgpSpec::default() };
        let coefs = draw_coefficients(&dgp).unwrap();
        let base = generate_sample(&coefs, &dgp, &mut rep_rng(14, 0)).unwrap();
        let n_controls = base.arm_count(0);
        let train = TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.01,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let cfg = PlaceboConfig {
            reps: 3,
            master_seed: 15,
            outcome_nuisance: NuisanceStrategy::TrainedJoint {
                hidden_widths: vec![4],
                train,
            },
            ..PlaceboConfig::default()
        };
        let report = run_placebo(&PlaceboSource::Data(&base), &cfg).unwrap();
        assert_eq!(report.failures, 0);
        for r in &report.records {
            assert!(r.tau_hat.is_finite());
        }
        // All reps share the same base rows, so every interval is built
        // from exactly n_controls observations.
        assert!(n_controls > 0);
    }

    #[test]
    fn placebo_rejects_degenerate_fractions_and_missing_controls() {
        let dgp = DgpSpec { d: 2, n: 100, ..DgpSpec::default() };
        let bad = PlaceboConfig { fraction: 1.0, ..PlaceboConfig::default() };
        assert!(matches!(run_placebo(&PlaceboSource::Dgp(&dgp), &bad), Err(Error::Config(_))));
        let bad = PlaceboConfig { fraction: 0.0, ..PlaceboConfig::default() };
        assert!(matches!(run_placebo(&PlaceboSource::Dgp(&dgp), &bad), Err(Error::Config(_))));
        // A dataset with no controls cannot seed a placebo.
        let x = Matrix::new(3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        let all_treated = CausalDataset::new(x, vec![1.0, 2.0, 3.0], vec![1, 1, 1]).unwrap();
        assert!(matches!(
            run_placebo(&PlaceboSource::Data(&all_treated), &PlaceboConfig::default()),
            Err(Error::EmptyArm { arm: 0 })
        ));
    }

    #[test]
    fn report_summaries_and_rows_render() {
        let report = McReport {
            true_ate: 0.5,
            level: 0.95,
            records: vec![
                RepRecord {
                    rep: 0,
                    tau_hat: 0.52,
                    std_error: 0.05,
                    ci_lower: 0.42,
                    ci_upper: 0.62,
                    covered: true,
                },
                RepRecord {
                    rep: 1,
                    tau_hat: 0.70,
                    std_error: 0.05,
                    ci_lower: 0.60,
                    ci_upper: 0.80,
                    covered: false,
                },
            ],
            failures: 1,
        };
        assert_close(report.bias(), 0.11, 1e-12);
        assert_eq!(report.coverage(), 0.5);
        assert_close(report.avg_interval_length(), 0.2, 1e-12);
        assert_eq!(report.attempted(), 3);
        let mut rows = Vec::new();
        report.write_rows(&mut rows).unwrap();
        let text = String::from_utf8(rows).unwrap();
        assert!(text.starts_with("rep,tau_hat,std_error,ci_lower,ci_upper,covered\n"));
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(",1"));
        assert!(text.lines().nth(2).unwrap().ends_with(",0"));
        let mut summary = Vec::new();
        report.write_summary(&mut summary).unwrap();
        let text = String::from_utf8(summary).unwrap();
        assert!(text.contains("coverage 0.500000"));
        assert!(text.contains("reps_failed 1"));
    }

    #[test]
    fn nuisance_error_moments_shrink_with_sample_size() {
        // Fit the joint model at growing n and watch the diagnostics
        // decrease: the regression MSEs should drop clearly from the
        // smallest to the largest sample.
        let train = TrainConfig {
            epochs: 40,
            batch_size: 128,
            learning_rate: 0.01,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let mut mse0 = Vec::new();
        for (i, n) in [500usize, 2_000, 8_000].into_iter().enumerate() {
            let spec = DgpSpec { d: 5, n, ..DgpSpec::default() };
            let coefs = draw_coefficients(&spec).unwrap();
            let mut rng = rep_rng(16, i as u64);
            let data = generate_sample(&coefs, &spec, &mut rng).unwrap();
            let arch = ArchitectureSpec::new(5, vec![10], 2).unwrap();
            let model = fit_joint(&data, &arch, &train).unwrap();
            let nuis = NuisanceEstimates::new(
                model.mu0_fn(),
                model.mu1_fn(),
                Propensity::Constant(0.5),
            );
            let truth = oracle_nuisances(&coefs, &spec);
            let diag = nuisance_diagnostics(&data, &nuis, &truth).unwrap();
            assert_eq!(diag.mse_propensity, 0.0);
            mse0.push(diag.mse_mu0);
        }
        assert!(
            mse0[2] < mse0[0],
            "outcome regression MSE did not shrink: {:?}",
            mse0
        );
    }
}
