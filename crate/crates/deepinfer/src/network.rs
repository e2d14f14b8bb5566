//! Fully connected feedforward ReLU networks with exact gradients.
//!
//! A network is a chain of affine layers with ReLU activations on every
//! hidden layer and an affine (identity) output layer. The module provides
//! deterministic seeded initialization, an eval-mode and a train-mode
//! forward pass (the latter with optional inverted dropout), reverse-mode
//! gradients that are exact for the function the forward pass computes,
//! a width/depth advisory rule driven by sample size and assumed smoothness,
//! and a versioned plain-text serialization that round-trips bit-exactly.
//!
//! Conventions baked into the math:
//! - ReLU's subgradient at exactly 0 is taken to be 0.
//! - With an output bound `M` supplied, outputs are truncated to
//!   `[-2M, 2M]`; the gradient through a binding truncation is 0.
//! - Dropout is "inverted": surviving units are scaled by `1/(1-rate)` at
//!   train time so eval-mode outputs need no rescaling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Shape and regularization description of a network.
///
/// `hidden_widths` may be empty, in which case the network is a single
/// affine map. `dropout_rates` always has one entry per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    input_dim: usize,
    hidden_widths: Vec<usize>,
    output_dim: usize,
    dropout_rates: Vec<f64>,
    clamp_bound: Option<f64>,
}

impl ArchitectureSpec {
    /// A spec with the given shape, no dropout, and no output clamp.
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize) -> Result<Self> {
        let dropout_rates = vec![0.0; hidden_widths.len()];
        let spec = Self { input_dim, hidden_widths, output_dim, dropout_rates, clamp_bound: None };
        spec.validate()?;
        Ok(spec)
    }

    /// Replaces the per-hidden-layer dropout rates (one per hidden layer,
    /// each in `[0, 1)`).
    pub fn with_dropout(mut self, rates: Vec<f64>) -> Result<Self> {
        self.dropout_rates = rates;
        self.validate()?;
        Ok(self)
    }

    /// Sets the output bound `M`; outputs are truncated to `[-2M, 2M]`.
    pub fn with_clamp(mut self, bound: f64) -> Result<Self> {
        self.clamp_bound = Some(bound);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Architecture("input_dim must be at least 1".into()));
        }
        if self.output_dim == 0 {
            return Err(Error::Architecture("output_dim must be at least 1".into()));
        }
        if let Some(w) = self.hidden_widths.iter().position(|&w| w == 0) {
            return Err(Error::Architecture(format!("hidden layer {} has width 0", w)));
        }
        if self.dropout_rates.len() != self.hidden_widths.len() {
            return Err(Error::Architecture(format!(
                "{} dropout rates for {} hidden layers",
                self.dropout_rates.len(),
                self.hidden_widths.len()
            )));
        }
        for (l, &r) in self.dropout_rates.iter().enumerate() {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Architecture(format!(
                    "dropout rate {} of layer {} is outside [0, 1)",
                    r, l
                )));
            }
        }
        if let Some(b) = self.clamp_bound {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::Architecture(format!(
                    "clamp bound must be positive and finite, got {}",
                    b
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.hidden_widths
    }

    pub fn dropout_rates(&self) -> &[f64] {
        &self.dropout_rates
    }

    pub fn clamp_bound(&self) -> Option<f64> {
        self.clamp_bound
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    /// Total number of hidden units across layers.
    pub fn hidden_units(&self) -> usize {
        self.hidden_widths.iter().sum()
    }

    /// Total number of trainable scalars: each layer contributes
    /// `(fan_in + 1) * fan_out`, counting its constant terms.
    pub fn param_count(&self) -> usize {
        let mut total = 0usize;
        let mut fan_in = self.input_dim;
        for &w in &self.hidden_widths {
            total += (fan_in + 1) * w;
            fan_in = w;
        }
        total + (fan_in + 1) * self.output_dim
    }

    /// `(fan_in, fan_out)` per layer, input to output.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in &self.hidden_widths {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }
}

/// One affine layer: `out = W a + b` with `W` stored row-major
/// (`out_dim` rows of `in_dim` weights).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Vec<f64>,
    bias: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim], in_dim, out_dim }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Weight from input unit `i` to output unit `o`.
    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.in_dim + i]
    }

    pub fn bias(&self, o: usize) -> f64 {
        self.bias[o]
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.bias
    }

    /// `out[o] = bias[o] + sum_i W[o,i] * input[i]`, fixed summation order.
    #[inline]
    fn affine(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            *slot = self.bias[o] + dot(row, input);
        }
    }
}

/// Dot product with four independent accumulators. The order of operations
/// is fixed, so results are bit-reproducible across runs and machines.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (qa, qb) in (&mut ca).zip(&mut cb) {
        s0 += qa[0] * qb[0];
        s1 += qa[1] * qb[1];
        s2 += qa[2] * qb[2];
        s3 += qa[3] * qb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// A network's parameters together with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    spec: ArchitectureSpec,
    layers: Vec<Layer>,
}

/// Per-parameter gradients, shaped exactly like the network's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<Layer>,
}

impl Gradients {
    /// All-zero gradients matching `spec`.
    pub fn zeros(spec: &ArchitectureSpec) -> Self {
        Self { layers: spec.layer_dims().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect() }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Resets every entry to zero, keeping the allocation.
    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Multiplies every entry by `s` (used to average minibatch sums).
    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w *= s);
            l.bias.iter_mut().for_each(|b| *b *= s);
        }
    }

    /// True if every entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|&w| w == 0.0) && l.bias.iter().all(|&b| b == 0.0))
    }
}

/// Buffers captured by a train-mode forward pass; everything `backward`
/// needs to produce exact gradients, reusable across calls.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Pre-activation of each hidden layer.
    preacts: Vec<Vec<f64>>,
    /// Post-activation (after ReLU and dropout scaling) of each hidden layer.
    acts: Vec<Vec<f64>>,
    /// Dropout factor per hidden unit: `0` or `1/(1-rate)`; `1` when inactive.
    drop: Vec<Vec<f64>>,
    /// Output-layer pre-activation, before any clamp.
    out_preact: Vec<f64>,
    /// Final output, after the clamp if one is configured.
    output: Vec<f64>,
}

impl ForwardCache {
    /// Preallocates buffers for `spec`.
    pub fn for_spec(spec: &ArchitectureSpec) -> Self {
        Self {
            input: vec![0.0; spec.input_dim],
            preacts: spec.hidden_widths.iter().map(|&w| vec![0.0; w]).collect(),
            acts: spec.hidden_widths.iter().map(|&w| vec![0.0; w]).collect(),
            drop: spec.hidden_widths.iter().map(|&w| vec![1.0; w]).collect(),
            out_preact: vec![0.0; spec.output_dim],
            output: vec![0.0; spec.output_dim],
        }
    }

    /// Network output recorded by the forward pass.
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl NetworkState {
    /// Deterministic He-style initialization: weights drawn from
    /// `N(0, 2/fan_in)` (variance `2/fan_in`), constant terms zero. Layers
    /// are drawn input-to-output, each row-major, from a ChaCha stream
    /// seeded with `seed`, so equal `(spec, seed)` gives bit-identical
    /// parameters.
    pub fn initialize(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.hidden_widths.len() + 1);
        for (fan_in, fan_out) in spec.layer_dims() {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::Architecture(e.to_string()))?;
            let mut layer = Layer::zeros(fan_in, fan_out);
            for w in layer.weights.iter_mut() {
                *w = dist.sample(&mut rng);
            }
            layers.push(layer);
        }
        Ok(Self { spec: spec.clone(), layers })
    }

    /// A network with every parameter set to zero (outputs are then the
    /// output-layer constants; useful for fixtures and as an optimizer
    /// starting point in tests).
    pub fn zeroed(spec: &ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_dims().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect();
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Eval-mode forward pass: dropout ignored, outputs clamped to
    /// `[-2M, 2M]` when a bound `M` is configured.
    pub fn forward_eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cache = ForwardCache::for_spec(&self.spec);
        self.forward_into(x, None::<&mut ChaCha8Rng>, &mut cache);
        Ok(cache.output)
    }

    /// Train-mode forward pass. When any hidden layer has a positive
    /// dropout rate, `rng` drives the unit masks: each hidden unit is
    /// zeroed independently with its layer's rate and survivors are scaled
    /// by `1/(1-rate)`. Returns the cache consumed by [`Self::backward`].
    pub fn forward_train<R: Rng>(&self, x: &[f64], rng: &mut R) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut cache = ForwardCache::for_spec(&self.spec);
        self.forward_into(x, Some(rng), &mut cache);
        Ok(cache)
    }

    /// In-place forward pass reusing `cache`'s buffers. `rng: None` is
    /// eval mode; `Some` is train mode (dropout applied where rates are
    /// positive). Called per-sample in the training hot loop.
    pub(crate) fn forward_into<R: Rng>(
        &self,
        x: &[f64],
        mut rng: Option<&mut R>,
        cache: &mut ForwardCache,
    ) {
        cache.input.copy_from_slice(x);
        let n_hidden = self.spec.hidden_widths.len();
        let mut prev: &[f64] = &cache.input;
        for l in 0..n_hidden {
            self.layers[l].affine(prev, &mut cache.preacts[l]);
            let rate = self.spec.dropout_rates[l];
            let apply_dropout = rate > 0.0 && rng.is_some();
            let (acts, drops) = (&mut cache.acts[l], &mut cache.drop[l]);
            if apply_dropout {
                let r = rng.as_deref_mut().expect("dropout requires an rng");
                let scale = 1.0 / (1.0 - rate);
                for (u, &z) in cache.preacts[l].iter().enumerate() {
                    let factor = if r.random::<f64>() < rate { 0.0 } else { scale };
                    drops[u] = factor;
                    acts[u] = if z > 0.0 { factor * z } else { 0.0 };
                }
            } else {
                for (u, &z) in cache.preacts[l].iter().enumerate() {
                    drops[u] = 1.0;
                    acts[u] = if z > 0.0 { z } else { 0.0 };
                }
            }
            prev = &cache.acts[l];
        }
        self.layers[n_hidden].affine(prev, &mut cache.out_preact);
        match self.spec.clamp_bound {
            Some(m) => {
                let lim = 2.0 * m;
                for (o, &z) in cache.out_preact.iter().enumerate() {
                    cache.output[o] = z.clamp(-lim, lim);
                }
            }
            None => cache.output.copy_from_slice(&cache.out_preact),
        }
    }

    /// Gradients of `sum_k dloss_df[k] * f_k(theta; x)` with respect to
    /// every parameter, for the exact function the forward pass that filled
    /// `cache` computed (same dropout mask, same clamp gating).
    pub fn backward(&self, cache: &ForwardCache, dloss_df: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros(&self.spec);
        self.backward_accumulate(cache, dloss_df, &mut grads)?;
        Ok(grads)
    }

    /// Adds this sample's gradients into `grads` (minibatch accumulation).
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        dloss_df: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if dloss_df.len() != self.spec.output_dim {
            return Err(Error::Dimension(format!(
                "dloss_df has {} entries, network has {} outputs",
                dloss_df.len(),
                self.spec.output_dim
            )));
        }
        let n_hidden = self.spec.hidden_widths.len();

        // Output-layer delta; a binding clamp has zero derivative.
        let mut delta: Vec<f64> = match self.spec.clamp_bound {
            Some(m) => {
                let lim = 2.0 * m;
                cache
                    .out_preact
                    .iter()
                    .zip(dloss_df)
                    .map(|(&z, &d)| if z.abs() < lim { d } else { 0.0 })
                    .collect()
            }
            None => dloss_df.to_vec(),
        };

        for l in (0..=n_hidden).rev() {
            let layer = &self.layers[l];
            let below: &[f64] = if l == 0 { &cache.input } else { &cache.acts[l - 1] };
            let gl = &mut grads.layers[l];
            let mut delta_below = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                gl.bias[o] += d;
                let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut gl.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                if d != 0.0 {
                    for i in 0..layer.in_dim {
                        grow[i] += d * below[i];
                        delta_below[i] += d * wrow[i];
                    }
                }
            }
            if l > 0 {
                // Chain through ReLU (subgradient 0 at 0) and the dropout
                // factor used in the forward pass.
                let z = &cache.preacts[l - 1];
                let f = &cache.drop[l - 1];
                for i in 0..delta_below.len() {
                    delta_below[i] = if z[i] > 0.0 { delta_below[i] * f[i] } else { 0.0 };
                }
                delta = delta_below;
            }
        }
        Ok(())
    }
}

/// Suggested architecture for `n` observations of dimension `d` under
/// assumed smoothness `beta`: width `ceil(width_scale * n^(d/(2(beta+d))) *
/// (ln n)^2)` on every layer and depth `max(1, ceil(depth_scale * ln n))`,
/// single output, no dropout, no clamp.
pub fn advise_architecture(
    n: usize,
    d: usize,
    beta: f64,
    width_scale: f64,
    depth_scale: f64,
) -> Result<ArchitectureSpec> {
    if n < 2 {
        return Err(Error::Config(format!("advise requires n >= 2, got {}", n)));
    }
    if d == 0 {
        return Err(Error::Config("advise requires d >= 1".into()));
    }
    if !(beta.is_finite() && beta >= 1.0) {
        return Err(Error::Config(format!("smoothness must be >= 1, got {}", beta)));
    }
    for (name, v) in [("width_scale", width_scale), ("depth_scale", depth_scale)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!("{} must be positive, got {}", name, v)));
        }
    }
    let nf = n as f64;
    let ln_n = nf.ln();
    let exponent = d as f64 / (2.0 * (beta + d as f64));
    let width = (width_scale * nf.powf(exponent) * ln_n * ln_n).ceil().max(1.0) as usize;
    let depth = (depth_scale * ln_n).ceil().max(1.0) as usize;
    ArchitectureSpec::new(d, vec![width; depth], 1)
}

// ---------------------------------------------------------------------------
// Serialization: versioned, self-describing plain text.
//
//   deepinfer-network v1
//   input_dim 2
//   output_dim 1
//   hidden_widths 3 3
//   dropout_rates 0e0 0e0
//   clamp none
//   layer 0 out 3 in 2
//   w <row of in-dim weights>   (one line per output unit)
//   ...
//   b <out-dim constants>
//   ...
//   end
//
// Floats are written with 17 significant digits ({:.16e}), which is enough
// for f64 values to round-trip bit-exactly.
// ---------------------------------------------------------------------------

const FORMAT_HEADER: &str = "deepinfer-network v1";

impl NetworkState {
    /// Renders the network in the versioned text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", FORMAT_HEADER);
        let _ = writeln!(s, "input_dim {}", self.spec.input_dim);
        let _ = writeln!(s, "output_dim {}", self.spec.output_dim);
        let _ = write!(s, "hidden_widths");
        for w in &self.spec.hidden_widths {
            let _ = write!(s, " {}", w);
        }
        s.push('\n');
        let _ = write!(s, "dropout_rates");
        for r in &self.spec.dropout_rates {
            let _ = write!(s, " {:.16e}", r);
        }
        s.push('\n');
        match self.spec.clamp_bound {
            Some(m) => {
                let _ = writeln!(s, "clamp {:.16e}", m);
            }
            None => {
                let _ = writeln!(s, "clamp none");
            }
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer {} out {} in {}", idx, layer.out_dim, layer.in_dim);
            for o in 0..layer.out_dim {
                let _ = write!(s, "w");
                for i in 0..layer.in_dim {
                    let _ = write!(s, " {:.16e}", layer.weights[o * layer.in_dim + i]);
                }
                s.push('\n');
            }
            let _ = write!(s, "b");
            for o in 0..layer.out_dim {
                let _ = write!(s, " {:.16e}", layer.bias[o]);
            }
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    /// Parses the text format produced by [`Self::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let fail = |line: usize, msg: String| Error::Format(format!("line {}: {}", line + 1, msg));

        let mut next_line = |expect: &str| -> Result<(usize, String)> {
            for (i, raw) in lines.by_ref() {
                let trimmed = raw.trim();
                if !trimmed.is_empty() {
                    return Ok((i, trimmed.to_string()));
                }
            }
            Err(Error::Format(format!("unexpected end of file, expected {}", expect)))
        };

        let (i, header) = next_line("header")?;
        if header != FORMAT_HEADER {
            return Err(fail(i, format!("unsupported format/version '{}'", header)));
        }

        let parse_kv = |line: &str, lineno: usize, key: &str| -> Result<Vec<String>> {
            let mut parts = line.split_whitespace();
            let k = parts.next().unwrap_or_default();
            if k != key {
                return Err(fail(lineno, format!("expected '{}', found '{}'", key, k)));
            }
            Ok(parts.map(String::from).collect())
        };
        let parse_usize = |s: &str, lineno: usize| -> Result<usize> {
            s.parse().map_err(|_| fail(lineno, format!("invalid integer '{}'", s)))
        };
        let parse_f64 = |s: &str, lineno: usize| -> Result<f64> {
            s.parse().map_err(|_| fail(lineno, format!("invalid number '{}'", s)))
        };

        let (i, line) = next_line("input_dim")?;
        let vals = parse_kv(&line, i, "input_dim")?;
        let input_dim = parse_usize(vals.first().map_or("", String::as_str), i)?;

        let (i, line) = next_line("output_dim")?;
        let vals = parse_kv(&line, i, "output_dim")?;
        let output_dim = parse_usize(vals.first().map_or("", String::as_str), i)?;

        let (i, line) = next_line("hidden_widths")?;
        let vals = parse_kv(&line, i, "hidden_widths")?;
        let mut hidden_widths = Vec::with_capacity(vals.len());
        for v in &vals {
            hidden_widths.push(parse_usize(v, i)?);
        }

        let (i, line) = next_line("dropout_rates")?;
        let vals = parse_kv(&line, i, "dropout_rates")?;
        let mut dropout_rates = Vec::with_capacity(vals.len());
        for v in &vals {
            dropout_rates.push(parse_f64(v, i)?);
        }

        let (i, line) = next_line("clamp")?;
        let vals = parse_kv(&line, i, "clamp")?;
        let clamp_bound = match vals.first().map(String::as_str) {
            Some("none") => None,
            Some(v) => Some(parse_f64(v, i)?),
            None => return Err(fail(i, "clamp line missing value".into())),
        };

        let spec = ArchitectureSpec {
            input_dim,
            hidden_widths,
            output_dim,
            dropout_rates,
            clamp_bound,
        };
        spec.validate().map_err(|e| Error::Format(e.to_string()))?;

        let mut layers = Vec::new();
        for (idx, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let (i, line) = next_line("layer header")?;
            let vals = parse_kv(&line, i, "layer")?;
            if vals.len() != 5 || vals[1] != "out" || vals[3] != "in" {
                return Err(fail(i, format!("malformed layer header '{}'", line)));
            }
            let l_idx = parse_usize(&vals[0], i)?;
            let l_out = parse_usize(&vals[2], i)?;
            let l_in = parse_usize(&vals[4], i)?;
            if l_idx != idx || l_out != fan_out || l_in != fan_in {
                return Err(fail(
                    i,
                    format!(
                        "layer header ({}, out {}, in {}) disagrees with architecture ({}, out {}, in {})",
                        l_idx, l_out, l_in, idx, fan_out, fan_in
                    ),
                ));
            }
            let mut layer = Layer::zeros(fan_in, fan_out);
            for o in 0..fan_out {
                let (i, line) = next_line("weight row")?;
                let vals = parse_kv(&line, i, "w")?;
                if vals.len() != fan_in {
                    return Err(fail(
                        i,
                        format!("weight row has {} entries, expected {}", vals.len(), fan_in),
                    ));
                }
                for (c, v) in vals.iter().enumerate() {
                    layer.weights[o * fan_in + c] = parse_f64(v, i)?;
                }
            }
            let (i, line) = next_line("bias row")?;
            let vals = parse_kv(&line, i, "b")?;
            if vals.len() != fan_out {
                return Err(fail(
                    i,
                    format!("bias row has {} entries, expected {}", vals.len(), fan_out),
                ));
            }
            for (o, v) in vals.iter().enumerate() {
                layer.bias[o] = parse_f64(v, i)?;
            }
            layers.push(layer);
        }

        let (i, line) = next_line("end")?;
        if line != "end" {
            return Err(fail(i, format!("expected 'end', found '{}'", line)));
        }
        Ok(Self { spec, layers })
    }

    /// Writes the network to `path` in the versioned text format.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Loads a network saved by [`Self::save`].
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}
