//! Per-observation loss family with curvature and Lipschitz constants.
//!
//! All losses share one structure: `l(f, y) = -<y, f> + g(f)` with `g`
//! convex, so the conditional minimizer links the network output `f` to the
//! outcome mean (`mean_from_f`) and the loss is convex in `f` with second
//! derivative bounded on any sup-norm ball. For each member,
//! [`curvature_constants`] returns constants `(c_lower, c_upper, C)` such
//! that, for `f` and the minimizer `f*` bounded by `M`,
//!
//! ```text
//! c_lower * E[(f - f*)^2]  <=  E[l(f)] - E[l(f*)]  <=  c_upper * E[(f - f*)^2]
//! |l(f, z) - l(g, z)|      <=  C * |f - g|
//! ```
//!
//! Members: least squares (`1/2 (y-f)^2`), logistic, Poisson (`g = exp`),
//! gamma with `f = -1/mean` (so `f` lives in `[-M, -1/M]`, which requires
//! `M >= 1`), and multinomial with `K` non-baseline classes
//! (`g = ln(1 + sum_k exp(f_k))`, outcome one-hot of length `K`, the zero
//! vector encoding the baseline class).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which member of the loss family to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    LeastSquares,
    Logistic,
    Poisson,
    /// Gamma outcomes under the `f = -1/mean` parametrization.
    Gamma,
    /// `K` non-baseline classes; `f` and `y` have length `K`.
    Multinomial(usize),
}

impl LossKind {
    /// Multinomial constructor that rejects `K = 0`.
    pub fn multinomial(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("multinomial needs at least 1 non-baseline class".into()));
        }
        Ok(LossKind::Multinomial(k))
    }

    /// Length of `f` (and of `y`) for this loss.
    pub fn output_dim(&self) -> usize {
        match self {
            LossKind::Multinomial(k) => *k,
            _ => 1,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::LeastSquares => write!(f, "leastsquares"),
            LossKind::Logistic => write!(f, "logistic"),
            LossKind::Poisson => write!(f, "poisson"),
            LossKind::Gamma => write!(f, "gamma"),
            LossKind::Multinomial(k) => write!(f, "multinomial:{}", k),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leastsquares" => Ok(LossKind::LeastSquares),
            "logistic" => Ok(LossKind::Logistic),
            "poisson" => Ok(LossKind::Poisson),
            "gamma" => Ok(LossKind::Gamma),
            other => {
                if let Some(k) = other.strip_prefix("multinomial:") {
                    let k: usize = k.parse().map_err(|_| {
                        Error::Config(format!("invalid class count in loss tag '{}'", other))
                    })?;
                    LossKind::multinomial(k)
                } else {
                    Err(Error::Config(format!(
                        "unknown loss tag '{}' (expected leastsquares | logistic | poisson | gamma | multinomial:K)",
                        other
                    )))
                }
            }
        }
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    // ln(1 + e^t), stable for large |t|.
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn check_dims(kind: &LossKind, f: &[f64], y: &[f64]) -> Result<()> {
    let d = kind.output_dim();
    if f.len() != d || y.len() != d {
        return Err(Error::Dimension(format!(
            "loss {} expects f and y of length {}, got {} and {}",
            kind,
            d,
            f.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Multinomial class probabilities `z_k = e^{f_k} / (1 + sum_j e^{f_j})`,
/// computed against the shifted maximum for stability. Returns the implicit
/// baseline probability as well.
fn multinomial_probs(f: &[f64], z: &mut [f64]) -> f64 {
    let m = f.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut denom = (-m).exp();
    for (slot, &fk) in z.iter_mut().zip(f) {
        let e = (fk - m).exp();
        *slot = e;
        denom += e;
    }
    for slot in z.iter_mut() {
        *slot /= denom;
    }
    (-m).exp() / denom
}

/// Loss value at prediction `f` for outcome `y`.
pub fn loss_value(kind: &LossKind, f: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(kind, f, y)?;
    match kind {
        LossKind::LeastSquares => {
            let r = y[0] - f[0];
            Ok(0.5 * r * r)
        }
        LossKind::Logistic => {
            Ok(softplus(f[0]) - y[0] * f[0])
        }
        LossKind::Poisson => {
            Ok(f[0].exp() - y[0] * f[0])
        }
        LossKind::Gamma => {
            if f[0] >= 0.0 {
                return Err(Error::Domain(format!(
                    "gamma loss needs f < 0 (f = -1/mean), got {}",
                    f[0]
                )));
            }
            Ok(-y[0] * f[0] - (-f[0]).ln())
        }
        LossKind::Multinomial(k) => {
            let m = f.iter().fold(0.0f64, |a, &b| a.max(b));
            let mut denom = (-m).exp();
            for &fk in f {
                denom += (fk - m).exp();
            }
            let mut inner = 0.0;
            for i in 0..*k {
                inner += y[i] * f[i];
            }
            Ok(m + denom.ln() - inner)
        }
    }
}

/// Loss value and gradient with respect to `f`, fused so the training loop
/// pays for the transcendental functions once.
pub fn loss_value_grad(kind: &LossKind, f: &[f64], y: &[f64], grad: &mut [f64]) -> Result<f64> {
    check_dims(kind, f, y)?;
    if grad.len() != kind.output_dim() {
        return Err(Error::Dimension(format!(
            "gradient buffer has length {}, expected {}",
            grad.len(),
            kind.output_dim()
        )));
    }
    match kind {
        LossKind::LeastSquares => {
            let r = f[0] - y[0];
            grad[0] = r;
            Ok(0.5 * r * r)
        }
        LossKind::Logistic => {
            grad[0] = sigmoid(f[0]) - y[0];
            Ok(softplus(f[0]) - y[0] * f[0])
        }
        LossKind::Poisson => {
            let e = f[0].exp();
            grad[0] = e - y[0];
            Ok(e - y[0] * f[0])
        }
        LossKind::Gamma => {
            if f[0] >= 0.0 {
                return Err(Error::Domain(format!(
                    "gamma loss needs f < 0 (f = -1/mean), got {}",
                    f[0]
                )));
            }
            grad[0] = -y[0] - 1.0 / f[0];
            Ok(-y[0] * f[0] - (-f[0]).ln())
        }
        LossKind::Multinomial(_) => {
            let base = multinomial_probs(f, grad);
            // grad currently holds z; the log-partition value reuses it.
            let mut value = -(base.ln());
            for i in 0..f.len() {
                value -= y[i] * f[i];
                grad[i] -= y[i];
            }
            Ok(value)
        }
    }
}

/// Gradient of the loss with respect to `f`.
pub fn loss_grad(kind: &LossKind, f: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; kind.output_dim()];
    loss_value_grad(kind, f, y, &mut grad)?;
    Ok(grad)
}

/// Predicted outcome mean implied by `f`: the `y`-slope of the loss at its
/// stationary point. Least squares: `f`; logistic: `sigmoid(f)`; Poisson:
/// `exp(f)`; gamma: `-1/f`; multinomial: the class probabilities of the
/// non-baseline classes.
pub fn mean_from_f(kind: &LossKind, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != kind.output_dim() {
        return Err(Error::Dimension(format!(
            "loss {} expects f of length {}, got {}",
            kind,
            kind.output_dim(),
            f.len()
        )));
    }
    match kind {
        LossKind::LeastSquares => Ok(vec![f[0]]),
        LossKind::Logistic => Ok(vec![sigmoid(f[0])]),
        LossKind::Poisson => Ok(vec![f[0].exp()]),
        LossKind::Gamma => {
            if f[0] >= 0.0 {
                return Err(Error::Domain(format!(
                    "gamma loss needs f < 0 (f = -1/mean), got {}",
                    f[0]
                )));
            }
            Ok(vec![-1.0 / f[0]])
        }
        LossKind::Multinomial(k) => {
            let mut z = vec![0.0; *k];
            multinomial_probs(f, &mut z);
            Ok(z)
        }
    }
}

/// Checks that every outcome row lies in the loss's outcome space. Intended
/// for ingestion time; the per-call paths deliberately accept any finite `y`
/// because every member is linear in the outcome, and fractional outcomes
/// (e.g. averaged or interpolated targets) are meaningful under that
/// linearity.
pub fn validate_outcomes(kind: &LossKind, targets: &[f64]) -> Result<()> {
    let d = kind.output_dim();
    if targets.is_empty() || targets.len() % d != 0 {
        return Err(Error::Dimension(format!(
            "target buffer of length {} is not a multiple of the outcome dimension {}",
            targets.len(),
            d
        )));
    }
    for (row, chunk) in targets.chunks_exact(d).enumerate() {
        let bad = |what: &str| Error::Data(format!("row {}: {}", row, what));
        match kind {
            LossKind::LeastSquares => {
                if !chunk[0].is_finite() {
                    return Err(bad("least-squares outcome must be finite"));
                }
            }
            LossKind::Logistic => {
                if chunk[0] != 0.0 && chunk[0] != 1.0 {
                    return Err(bad(&format!("logistic outcome must be 0 or 1, got {}", chunk[0])));
                }
            }
            LossKind::Poisson => {
                if !(chunk[0].is_finite() && chunk[0] >= 0.0 && chunk[0].fract() == 0.0) {
                    return Err(bad(&format!(
                        "poisson outcome must be a non-negative count, got {}",
                        chunk[0]
                    )));
                }
            }
            LossKind::Gamma => {
                if !(chunk[0].is_finite() && chunk[0] > 0.0) {
                    return Err(bad(&format!("gamma outcome must be positive, got {}", chunk[0])));
                }
            }
            LossKind::Multinomial(_) => {
                let mut sum = 0.0;
                for &v in chunk {
                    if v != 0.0 && v != 1.0 {
                        return Err(bad(&format!(
                            "multinomial outcome entries must be 0 or 1, got {}",
                            v
                        )));
                    }
                    sum += v;
                }
                if sum > 1.0 {
                    return Err(bad("multinomial outcome must be one-hot or all-zero (baseline)"));
                }
            }
        }
    }
    Ok(())
}

/// Curvature sandwich and Lipschitz constants for predictions bounded by
/// `bound` in sup-norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureConstants {
    /// Lower constant `c_lower` in the curvature sandwich.
    pub curvature_lower: f64,
    /// Upper constant `c_upper` in the curvature sandwich.
    pub curvature_upper: f64,
    /// Lipschitz constant of `f -> l(f, z)` on the bounded domain.
    pub lipschitz: f64,
}

/// Constants for `kind` on the ball `|f| <= bound` (gamma:
/// `f in [-bound, -1/bound]`, which requires `bound >= 1`).
///
/// Derivation sketch: each loss has second derivative (Hessian) bounded
/// between `2 c_lower` and `2 c_upper` on the relevant domain, so a
/// second-order expansion around the minimizer yields the sandwich. The
/// multinomial constants bound the Hessian eigenvalues of the log-partition
/// function; its Lipschitz constant 2 bounds `||z - y||_2` with `z` a
/// subprobability vector and `y` one-hot.
pub fn curvature_constants(kind: &LossKind, bound: f64) -> Result<CurvatureConstants> {
    if !(bound.is_finite() && bound >= 0.0) {
        return Err(Error::Config(format!("bound must be finite and non-negative, got {}", bound)));
    }
    let m = bound;
    Ok(match kind {
        LossKind::LeastSquares => {
            CurvatureConstants { curvature_lower: 0.5, curvature_upper: 0.5, lipschitz: m }
        }
        LossKind::Logistic => CurvatureConstants {
            curvature_lower: 1.0 / (2.0 * (m.exp() + (-m).exp() + 2.0)),
            curvature_upper: 0.125,
            lipschitz: 1.0,
        },
        LossKind::Poisson => CurvatureConstants {
            curvature_lower: (-m).exp() / 2.0,
            curvature_upper: m.exp() / 2.0,
            lipschitz: m.exp() + m,
        },
        LossKind::Gamma => {
            if m < 1.0 {
                return Err(Error::Config(format!(
                    "gamma bound must be >= 1 so the domain [-M, -1/M] is nonempty, got {}",
                    m
                )));
            }
            CurvatureConstants {
                curvature_lower: 1.0 / (2.0 * m * m),
                curvature_upper: m * m / 2.0,
                lipschitz: 2.0 * m,
            }
        }
        LossKind::Multinomial(k) => {
            let kf = *k as f64;
            let lower = 1.0 / (2.0 * (1.0 + kf * m.exp()).powi(2));
            let upper = m.exp() / (2.0 * (1.0 + (kf - 1.0) * (-m).exp() + m.exp()));
            CurvatureConstants { curvature_lower: lower, curvature_upper: upper, lipschitz: 2.0 }
        }
    })
}
