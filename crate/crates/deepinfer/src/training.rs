//! Minibatch training of networks against the loss family.
//!
//! One engine drives every fit: shuffle, split off a validation tail, then
//! run epochs of minibatch gradient steps where each sample contributes a
//! loss value and a gradient in prediction space that the network
//! backpropagates. The public entry points differ only in how that
//! per-sample step is built: [`fit`] pairs rows with outcome targets under a
//! [`LossKind`]; [`fit_joint`] trains a two-head network whose prediction is
//! `head0 + treatment * head1`, so the second head is the treatment-effect
//! surface; [`fit_regressions_by_arm`] fits one scalar regression per
//! treatment arm; [`fit_propensity`] fits a logistic model of treatment on
//! covariates.
//!
//! Randomness is split into three fixed streams of one counter-mode
//! generator keyed by [`TrainConfig::seed`]: stream 0 initializes weights
//! (so [`NetworkState::initialize`] with the same seed reproduces the
//! starting point exactly), stream 1 shuffles, stream 2 draws dropout
//! masks. Two calls with identical inputs produce bitwise-identical
//! networks.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::causal::NuisanceFn;
use crate::data::{CausalDataset, Matrix};
use crate::error::{Error, Result};
use crate::losses::{loss_value, loss_value_grad, mean_from_f, LossKind};
use crate::network::{ArchitectureSpec, ForwardCache, Gradients, NetworkState};

/// First-order update rule applied to each minibatch gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Plain stochastic gradient descent.
    Sgd,
    /// Adam with explicit bias correction: `m_hat = m / (1 - beta1^t)`,
    /// `v_hat = v / (1 - beta2^t)`, step `lr * m_hat / (sqrt(v_hat) + epsilon)`.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Hyperparameters for a single fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Fraction of rows held out (the tail after the initial shuffle) and
    /// scored but never trained on. Zero disables the holdout.
    pub validation_fraction: f64,
    /// Shuffle rows before the split and again before every epoch.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 256,
            epochs: 100,
            optimizer: Optimizer::default(),
            validation_fraction: 0.2,
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                return Err(Error::Config(format!(
                    "adam parameters out of range: beta1 {}, beta2 {}, epsilon {}",
                    beta1, beta2, epsilon
                )));
            }
        }
        Ok(())
    }
}

/// Final losses of a fit, measured with a clean evaluation pass (no
/// dropout) after the last epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    /// Mean per-sample loss over the training rows.
    pub training_loss: f64,
    /// Mean per-sample loss over the holdout rows; equals `training_loss`
    /// when the validation fraction is zero.
    pub validation_loss: f64,
    pub epochs_run: usize,
}

/// A fitted network paired with the loss it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    network: Arc<NetworkState>,
    kind: LossKind,
    report: FitReport,
}

impl TrainedModel {
    pub fn network(&self) -> &NetworkState {
        &self.network
    }

    /// Shared handle to the network, for closures that outlive `self`.
    pub fn shared_network(&self) -> Arc<NetworkState> {
        Arc::clone(&self.network)
    }

    pub fn loss_kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    /// Raw network output at `x`.
    pub fn predict_f(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.network.forward_eval(x)
    }

    /// Predicted outcome mean at `x` (the loss's link applied to the raw
    /// output).
    pub fn predict_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        mean_from_f(&self.kind, &self.network.forward_eval(x)?)
    }

    /// The predicted-mean map as a shareable scalar function, for use as a
    /// nuisance input to the inference layer. Only defined for scalar
    /// losses. The closure panics if prediction fails at call time (wrong
    /// input length, or a gamma-link output leaving its domain); use
    /// [`TrainedModel::predict_mean`] where fallible access is needed.
    pub fn mean_fn(&self) -> Result<NuisanceFn> {
        if self.kind.output_dim() != 1 {
            return Err(Error::Config(format!(
                "loss {} has {} outputs; a scalar nuisance function needs exactly 1",
                self.kind,
                self.kind.output_dim()
            )));
        }
        let net = Arc::clone(&self.network);
        let kind = self.kind;
        Ok(Arc::new(move |x: &[f64]| {
            let f = net.forward_eval(x).expect("nuisance prediction failed");
            mean_from_f(&kind, &f).expect("nuisance prediction failed")[0]
        }))
    }
}

/// Mean per-sample loss of `net` on `(covariates, targets)` in evaluation
/// mode (no dropout). Targets are stored row-major with one row per
/// covariate row.
pub fn evaluate_mean_loss(
    net: &NetworkState,
    kind: &LossKind,
    covariates: &Matrix,
    targets: &[f64],
) -> Result<f64> {
    let d = kind.output_dim();
    check_targets(covariates, targets, d)?;
    let mut sum = 0.0;
    for (i, row) in covariates.iter_rows().enumerate() {
        let f = net.forward_eval(row)?;
        sum += loss_value(kind, &f, &targets[i * d..(i + 1) * d])?;
    }
    Ok(sum / covariates.rows() as f64)
}

fn check_targets(covariates: &Matrix, targets: &[f64], dim: usize) -> Result<()> {
    if covariates.rows() == 0 {
        return Err(Error::Data("cannot fit on an empty dataset".into()));
    }
    if targets.len() != covariates.rows() * dim {
        return Err(Error::Dimension(format!(
            "{} rows with outcome dimension {} need {} target values, got {}",
            covariates.rows(),
            dim,
            covariates.rows() * dim,
            targets.len()
        )));
    }
    Ok(())
}

fn check_spec(spec: &ArchitectureSpec, input_dim: usize, output_dim: usize) -> Result<()> {
    if spec.input_dim() != input_dim {
        return Err(Error::Dimension(format!(
            "network expects {} inputs but the data has {} covariates",
            spec.input_dim(),
            input_dim
        )));
    }
    if spec.output_dim() != output_dim {
        return Err(Error::Dimension(format!(
            "network has {} outputs but the objective needs {}",
            spec.output_dim(),
            output_dim
        )));
    }
    Ok(())
}

enum OptState {
    Sgd,
    Adam { m: Gradients, v: Gradients, step: i32 },
}

impl OptState {
    fn new(opt: &Optimizer, spec: &ArchitectureSpec) -> Self {
        match opt {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam { .. } => {
                OptState::Adam { m: Gradients::zeros(spec), v: Gradients::zeros(spec), step: 0 }
            }
        }
    }
}

fn sgd_slice(w: &mut [f64], g: &[f64], lr: f64) {
    for (wi, &gi) in w.iter_mut().zip(g) {
        *wi -= lr * gi;
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_slice(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..w.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

fn apply_update(net: &mut NetworkState, grads: &Gradients, cfg: &TrainConfig, state: &mut OptState) {
    let lr = cfg.learning_rate;
    match (state, cfg.optimizer) {
        (OptState::Sgd, _) => {
            for (layer, glayer) in net.layers_mut().iter_mut().zip(grads.layers()) {
                sgd_slice(layer.weights_mut(), glayer.weights(), lr);
                sgd_slice(layer.bias_mut(), glayer.biases(), lr);
            }
        }
        (OptState::Adam { m, v, step }, Optimizer::Adam { beta1, beta2, epsilon }) => {
            *step += 1;
            let bc1 = 1.0 - beta1.powi(*step);
            let bc2 = 1.0 - beta2.powi(*step);
            for (((layer, glayer), mlayer), vlayer) in net
                .layers_mut()
                .iter_mut()
                .zip(grads.layers())
                .zip(m.layers_mut().iter_mut())
                .zip(v.layers_mut().iter_mut())
            {
                adam_slice(
                    layer.weights_mut(),
                    glayer.weights(),
                    mlayer.weights_mut(),
                    vlayer.weights_mut(),
                    lr,
                    beta1,
                    beta2,
                    epsilon,
                    bc1,
                    bc2,
                );
                adam_slice(
                    layer.bias_mut(),
                    glayer.biases(),
                    mlayer.bias_mut(),
                    vlayer.bias_mut(),
                    lr,
                    beta1,
                    beta2,
                    epsilon,
                    bc1,
                    bc2,
                );
            }
        }
        // OptState is built from cfg.optimizer, so the arms cannot disagree.
        (OptState::Adam { .. }, Optimizer::Sgd) => unreachable!(),
    }
}

/// Runs the minibatch engine. `sample` maps (network output, row index,
/// gradient buffer) to the per-sample loss, writing the loss gradient with
/// respect to the network output into the buffer.
fn run_engine<FS>(
    spec: &ArchitectureSpec,
    covariates: &Matrix,
    cfg: &TrainConfig,
    sample: &mut FS,
) -> Result<(NetworkState, FitReport)>
where
    FS: FnMut(&[f64], usize, &mut [f64]) -> Result<f64>,
{
    cfg.validate()?;
    let n = covariates.rows();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut indices: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        indices.shuffle(&mut shuffle_rng);
    }
    let n_val = (cfg.validation_fraction * n as f64).ceil() as usize;
    let n_train = n - n_val;
    if n_train == 0 {
        return Err(Error::Config(format!(
            "validation fraction {} leaves no training rows out of {}",
            cfg.validation_fraction, n
        )));
    }
    let (train_idx, val_idx) = indices.split_at_mut(n_train);

    let mut net = NetworkState::initialize(spec, cfg.seed)?;
    let mut cache = ForwardCache::for_spec(spec);
    let mut grads = Gradients::zeros(spec);
    let mut dldf = vec![0.0; spec.output_dim()];
    let mut opt_state = OptState::new(&cfg.optimizer, spec);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            train_idx.shuffle(&mut shuffle_rng);
        }
        for (batch, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            grads.clear();
            let mut loss_sum = 0.0;
            for &i in chunk {
                net.forward_into(covariates.row(i), Some(&mut dropout_rng), &mut cache);
                loss_sum += sample(cache.output(), i, &mut dldf)?;
                net.backward_accumulate(&cache, &dldf, &mut grads)?;
            }
            let scale = 1.0 / chunk.len() as f64;
            if !(loss_sum * scale).is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: batch + 1 });
            }
            grads.scale(scale);
            apply_update(&mut net, &grads, cfg, &mut opt_state);
        }
    }

    let mut eval = |idx: &[usize]| -> Result<f64> {
        let mut sum = 0.0;
        for &i in idx {
            net.forward_into(covariates.row(i), Option::<&mut ChaCha8Rng>::None, &mut cache);
            sum += sample(cache.output(), i, &mut dldf)?;
        }
        Ok(sum / idx.len() as f64)
    };
    let training_loss = eval(train_idx)?;
    let validation_loss = if val_idx.is_empty() { training_loss } else { eval(val_idx)? };

    Ok((net, FitReport { training_loss, validation_loss, epochs_run: cfg.epochs }))
}

/// Fits a network to `(covariates, targets)` under `kind`. Targets are
/// row-major with `kind.output_dim()` values per row.
pub fn fit(
    covariates: &Matrix,
    targets: &[f64],
    kind: &LossKind,
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let d = kind.output_dim();
    check_targets(covariates, targets, d)?;
    check_spec(spec, covariates.cols(), d)?;
    let mut sample = |f: &[f64], i: usize, dldf: &mut [f64]| -> Result<f64> {
        loss_value_grad(kind, f, &targets[i * d..(i + 1) * d], dldf)
    };
    let (net, report) = run_engine(spec, covariates, cfg, &mut sample)?;
    Ok(TrainedModel { network: Arc::new(net), kind: *kind, report })
}

/// Joint outcome model: a two-head network trained once on all rows under
/// least squares, predicting `head0(x) + t * head1(x)`. Head 0 is the
/// control-arm regression and head 1 the treatment-effect surface, so both
/// arms' regressions share every hidden feature.
#[derive(Debug, Clone)]
pub struct JointOutcomeModel {
    network: Arc<NetworkState>,
    report: FitReport,
}

impl JointOutcomeModel {
    pub fn network(&self) -> &NetworkState {
        &self.network
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    /// Predicted control-arm mean `head0(x)`.
    pub fn mu0(&self, x: &[f64]) -> Result<f64> {
        Ok(self.network.forward_eval(x)?[0])
    }

    /// Predicted treated-arm mean `head0(x) + head1(x)`.
    pub fn mu1(&self, x: &[f64]) -> Result<f64> {
        let f = self.network.forward_eval(x)?;
        Ok(f[0] + f[1])
    }

    /// Predicted treatment effect `head1(x)`.
    pub fn tau(&self, x: &[f64]) -> Result<f64> {
        Ok(self.network.forward_eval(x)?[1])
    }

    pub fn mu0_fn(&self) -> NuisanceFn {
        let net = Arc::clone(&self.network);
        Arc::new(move |x: &[f64]| net.forward_eval(x).expect("nuisance prediction failed")[0])
    }

    pub fn mu1_fn(&self) -> NuisanceFn {
        let net = Arc::clone(&self.network);
        Arc::new(move |x: &[f64]| {
            let f = net.forward_eval(x).expect("nuisance prediction failed");
            f[0] + f[1]
        })
    }

    pub fn tau_fn(&self) -> NuisanceFn {
        let net = Arc::clone(&self.network);
        Arc::new(move |x: &[f64]| net.forward_eval(x).expect("nuisance prediction failed")[1])
    }
}

/// Fits the two-head joint outcome model by least squares on
/// `head0(x) + t * head1(x)`. The architecture must declare exactly two
/// outputs.
/// Rows with `t = 0` contribute no gradient to head 1's output-layer
/// parameters, so in an all-control dataset those parameters keep their
/// initial values.
pub fn fit_joint(
    data: &CausalDataset,
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
) -> Result<JointOutcomeModel> {
    check_spec(spec, data.covariate_dim(), 2)?;
    let y = data.outcomes();
    let t = data.treatments();
    let mut sample = |f: &[f64], i: usize, dldf: &mut [f64]| -> Result<f64> {
        let ti = f64::from(t[i]);
        let r = f[0] + ti * f[1] - y[i];
        dldf[0] = r;
        dldf[1] = r * ti;
        Ok(0.5 * r * r)
    };
    let (net, report) = run_engine(spec, data.covariates(), cfg, &mut sample)?;
    Ok(JointOutcomeModel { network: Arc::new(net), report })
}

/// One outcome regression per treatment arm, fit separately on each arm's
/// rows with the same architecture, loss, and config (including the seed).
#[derive(Debug, Clone)]
pub struct ArmRegressions {
    /// Regression fit on the `t = 0` rows.
    pub control: TrainedModel,
    /// Regression fit on the `t = 1` rows.
    pub treated: TrainedModel,
}

/// Fits [`ArmRegressions`]. Fails with [`Error::EmptyArm`] if either arm
/// has no rows.
pub fn fit_regressions_by_arm(
    data: &CausalDataset,
    kind: &LossKind,
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
) -> Result<ArmRegressions> {
    let mut models = Vec::with_capacity(2);
    for arm in [0u8, 1u8] {
        if data.arm_count(arm) == 0 {
            return Err(Error::EmptyArm { arm });
        }
        let subset = data.filter(|i| data.treatments()[i] == arm)?;
        models.push(fit(subset.covariates(), subset.outcomes(), kind, spec, cfg)?);
    }
    let treated = models.pop().expect("two models were fit");
    let control = models.pop().expect("two models were fit");
    Ok(ArmRegressions { control, treated })
}

/// Fits a logistic regression of treatment on covariates; the model's
/// predicted mean is the propensity score estimate.
pub fn fit_propensity(
    data: &CausalDataset,
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let targets: Vec<f64> = data.treatments().iter().map(|&t| f64::from(t)).collect();
    fit(data.covariates(), &targets, &LossKind::Logistic, spec, cfg)
}
