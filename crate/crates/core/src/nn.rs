//! Feed-forward regression network with inverted dropout on hidden
//! activations, hand-written backpropagation, and the warning-counter
//! early-stopping training loop.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{derive_seed, labels, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn leaky(input_dim: usize, output_dim: usize, slope: f64) -> Self {
        LayerSpec {
            input_dim,
            output_dim,
            activation: Activation::LeakyRelu { slope },
        }
    }

    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        LayerSpec {
            input_dim,
            output_dim,
            activation: Activation::Identity,
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config(format!("layer {k} has a zero dimension")));
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::config(format!(
                    "layer {k}: LeakyReLU slope {slope} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Layer sizes `input → hidden… → 1` with LeakyReLU hidden units.
pub fn mlp_specs(input_dim: usize, hidden: &[usize], slope: f64) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for &h in hidden {
        specs.push(LayerSpec::leaky(prev, h, slope));
        prev = h;
    }
    specs.push(LayerSpec::identity(prev, 1));
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `output_dim × input_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    #[inline]
    fn weight_row(&self, o: usize) -> &[f64] {
        let n = self.spec.input_dim;
        &self.weights[o * n..(o + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    dropout_rate: f64,
}

/// Per-hidden-layer keep indicators for one stochastic pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutMask {
    keep: Vec<Vec<bool>>,
}

impl DropoutMask {
    pub fn new(keep: Vec<Vec<bool>>) -> Self {
        DropoutMask { keep }
    }

    pub fn all_kept(widths: &[usize]) -> Self {
        DropoutMask {
            keep: widths.iter().map(|&w| vec![true; w]).collect(),
        }
    }

    /// Each unit is kept with probability `1 - drop_rate`.
    pub fn sample<R: Rng + ?Sized>(widths: &[usize], drop_rate: f64, rng: &mut R) -> Self {
        DropoutMask {
            keep: widths
                .iter()
                .map(|&w| (0..w).map(|_| rng.random::<f64>() >= drop_rate).collect())
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.keep
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::config("network needs at least one layer"));
    }
    for (k, s) in specs.iter().enumerate() {
        s.validate(k)?;
    }
    for (k, pair) in specs.windows(2).enumerate() {
        if pair[0].output_dim != pair[1].input_dim {
            return Err(Error::config(format!(
                "layer {k} outputs {} units but layer {} expects {}",
                pair[0].output_dim,
                k + 1,
                pair[1].input_dim
            )));
        }
    }
    let last = specs.last().unwrap();
    if last.output_dim != 1 || last.activation != Activation::Identity {
        return Err(Error::config(
            "final layer must be a single identity output unit",
        ));
    }
    Ok(())
}

fn validate_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// He-style initialization (fan-in scaled normal, LeakyReLU gain), zero biases.
pub fn init_network(specs: &[LayerSpec], dropout_rate: f64, seed: u64) -> Result<Network> {
    validate_specs(specs)?;
    validate_rate(dropout_rate)?;
    let mut rng = seeded_rng(derive_seed(seed, labels::INIT));
    let layers = specs
        .iter()
        .map(|&spec| {
            let gain = match spec.activation {
                Activation::LeakyRelu { slope } => 2.0 / (1.0 + slope * slope),
                Activation::Identity => 1.0,
            };
            let std = (gain / spec.input_dim as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let weights = (0..spec.input_dim * spec.output_dim)
                .map(|_| normal.sample(&mut rng))
                .collect();
            Layer {
                spec,
                weights,
                bias: vec![0.0; spec.output_dim],
            }
        })
        .collect();
    Ok(Network {
        layers,
        dropout_rate,
    })
}

/// Reusable per-example activation buffers.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    scale: Vec<Vec<f64>>,
}

impl Workspace {
    pub(crate) fn new(net: &Network) -> Self {
        let widths: Vec<usize> = net.layers.iter().map(|l| l.spec.output_dim).collect();
        let hidden = net.hidden_widths();
        Workspace {
            pre: widths.iter().map(|&w| vec![0.0; w]).collect(),
            post: widths.iter().map(|&w| vec![0.0; w]).collect(),
            delta: widths.iter().map(|&w| vec![0.0; w]).collect(),
            scale: hidden.iter().map(|&w| vec![1.0; w]).collect(),
        }
    }

    /// Write the inverted-dropout scale factors for `mask` (or all ones).
    pub(crate) fn set_mask(&mut self, mask: Option<&DropoutMask>, drop_rate: f64) {
        let inv = 1.0 / (1.0 - drop_rate);
        match mask {
            Some(m) => {
                for (s, k) in self.scale.iter_mut().zip(m.layers()) {
                    for (sv, &kv) in s.iter_mut().zip(k) {
                        *sv = if kv { inv } else { 0.0 };
                    }
                }
            }
            None => self.scale.iter_mut().for_each(|s| s.fill(1.0)),
        }
    }

    fn sample_mask<R: Rng + ?Sized>(&mut self, drop_rate: f64, rng: &mut R) {
        let inv = 1.0 / (1.0 - drop_rate);
        for s in &mut self.scale {
            for v in s.iter_mut() {
                *v = if rng.random::<f64>() >= drop_rate { inv } else { 0.0 };
            }
        }
    }
}

/// Parameter gradients, shaped like the network's weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
    }

    /// Same ordering as [`Network::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Network {
    /// Build from explicit weights (`output_dim × input_dim` matrices) and biases.
    pub fn from_parts(
        specs: &[LayerSpec],
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        dropout_rate: f64,
    ) -> Result<Network> {
        validate_specs(specs)?;
        validate_rate(dropout_rate)?;
        if weights.len() != specs.len() || biases.len() != specs.len() {
            return Err(Error::config("one weight matrix and bias per layer required"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        for (k, ((spec, w), b)) in specs.iter().zip(weights).zip(biases).enumerate() {
            if w.rows() != spec.output_dim || w.cols() != spec.input_dim || b.len() != spec.output_dim
            {
                return Err(Error::config(format!("layer {k} parameters have the wrong shape")));
            }
            layers.push(Layer {
                spec: *spec,
                weights: w.into_vec(),
                bias: b,
            });
        }
        Ok(Network {
            layers,
            dropout_rate,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        validate_rate(rate)?;
        self.dropout_rate = rate;
        Ok(())
    }

    /// Widths of the layers whose outputs are subject to dropout.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.spec.output_dim)
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flattened parameters: per layer, weights (row-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter vector has wrong length");
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
    }

    fn check_mask(&self, mask: &DropoutMask) -> Result<()> {
        let widths = self.hidden_widths();
        let ok = mask.layers().len() == widths.len()
            && mask.layers().iter().zip(&widths).all(|(m, &w)| m.len() == w);
        if ok {
            Ok(())
        } else {
            Err(Error::usage("dropout mask does not match hidden-layer widths"))
        }
    }

    /// Scalar prediction. Without a mask the full network is used unscaled;
    /// with a mask, kept hidden units are scaled by `1 / (1 - π)`.
    pub fn forward(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::usage(format!(
                "input has {} components, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!("component {bad} is {}", x[bad])));
        }
        if let Some(m) = mask {
            self.check_mask(m)?;
        }
        let mut ws = Workspace::new(self);
        ws.set_mask(mask, self.dropout_rate);
        Ok(self.forward_ws(x, &mut ws))
    }

    /// Forward pass using the scale factors already in `ws`.
    #[inline]
    pub(crate) fn forward_ws(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (before, rest) = ws.post.split_at_mut(k);
            let input: &[f64] = if k == 0 { x } else { &before[k - 1] };
            let out = &mut rest[0];
            let pre = &mut ws.pre[k];
            let act = layer.spec.activation;
            for o in 0..layer.spec.output_dim {
                let z = dot(layer.weight_row(o), input) + layer.bias[o];
                pre[o] = z;
                out[o] = act.apply(z);
            }
            if k < last {
                for (v, s) in out.iter_mut().zip(&ws.scale[k]) {
                    *v *= s;
                }
            }
        }
        ws.post[last][0]
    }

    /// Deterministic (mask-free) predictions for every row of `inputs`.
    pub fn predict(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::usage("input width does not match network"));
        }
        check_finite_rows(inputs)?;
        let mut ws = Workspace::new(self);
        ws.set_mask(None, self.dropout_rate);
        Ok((0..inputs.rows())
            .map(|i| self.forward_ws(inputs.row(i), &mut ws))
            .collect())
    }

    /// Backpropagate one example, accumulating `weight · ∂(ŷ - y)²/∂θ` into `grad`.
    /// Returns the squared error.
    fn backprop_one(
        &self,
        x: &[f64],
        y: f64,
        weight: f64,
        ws: &mut Workspace,
        grad: &mut Gradients,
    ) -> f64 {
        let pred = self.forward_ws(x, ws);
        let err = pred - y;
        let last = self.layers.len() - 1;
        ws.delta[last][0] =
            2.0 * err * weight * self.layers[last].spec.activation.derivative(ws.pre[last][0]);
        for k in (0..=last).rev() {
            let layer = &self.layers[k];
            let n_in = layer.spec.input_dim;
            {
                let input: &[f64] = if k == 0 { x } else { &ws.post[k - 1] };
                let gw = &mut grad.weights[k];
                let gb = &mut grad.biases[k];
                let delta = &ws.delta[k];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, &a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            if k > 0 {
                let (lower, upper) = ws.delta.split_at_mut(k);
                let prev = &mut lower[k - 1];
                let delta = &upper[0];
                prev.fill(0.0);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &w) in prev.iter_mut().zip(layer.weight_row(o)) {
                        *p += d * w;
                    }
                }
                let act = self.layers[k - 1].spec.activation;
                for ((p, &s), &z) in prev.iter_mut().zip(&ws.scale[k - 1]).zip(&ws.pre[k - 1]) {
                    *p *= s * act.derivative(z);
                }
            }
        }
        err * err
    }

    fn l2_penalty(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Loss and gradient on the rows `rows` of `(inputs, targets)`, with one
    /// fresh dropout mask per example drawn from `rng`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn loss_grad_rows(
        &self,
        inputs: &Matrix,
        targets: &[f64],
        rows: &[usize],
        drop_rate: f64,
        l2: f64,
        rng: &mut ChaCha8Rng,
        ws: &mut Workspace,
        grad: &mut Gradients,
    ) -> f64 {
        grad.clear();
        let w = 1.0 / rows.len() as f64;
        let mut sse = 0.0;
        for &r in rows {
            if drop_rate > 0.0 {
                ws.sample_mask(drop_rate, rng);
            } else {
                ws.set_mask(None, drop_rate);
            }
            sse += self.backprop_one(inputs.row(r), targets[r], w, ws, grad);
        }
        if l2 > 0.0 {
            for (gw, layer) in grad.weights.iter_mut().zip(&self.layers) {
                for (g, &wt) in gw.iter_mut().zip(&layer.weights) {
                    *g += 2.0 * l2 * wt;
                }
            }
        }
        sse * w + l2 * self.l2_penalty()
    }

    fn sgd_step(&mut self, grad: &Gradients, lr: f64) {
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grad.weights).zip(&grad.biases) {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
    }
}

pub(crate) fn check_finite_rows(inputs: &Matrix) -> Result<()> {
    if let Some(pos) = inputs.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!(
            "row {} column {} is not finite",
            pos / inputs.cols().max(1),
            pos % inputs.cols().max(1)
        )));
    }
    Ok(())
}

/// Mean squared error over the batch plus `l2 · ‖W‖²` (weights only), and
/// its exact gradient for the dropout masks realized from `mask_seed`
/// at the network's own dropout rate.
pub fn loss_and_gradient(
    net: &Network,
    inputs: &Matrix,
    targets: &[f64],
    mask_seed: u64,
    l2: f64,
) -> Result<(f64, Gradients)> {
    if inputs.rows() == 0 {
        return Err(Error::usage("empty batch"));
    }
    if inputs.rows() != targets.len() {
        return Err(Error::usage("inputs and targets differ in length"));
    }
    if inputs.cols() != net.input_dim() {
        return Err(Error::usage("input width does not match network"));
    }
    check_finite_rows(inputs)?;
    let rows: Vec<usize> = (0..inputs.rows()).collect();
    let mut ws = Workspace::new(net);
    let mut grad = Gradients::zeros_like(net);
    let mut rng = seeded_rng(mask_seed);
    let loss = net.loss_grad_rows(
        inputs,
        targets,
        &rows,
        net.dropout_rate,
        l2,
        &mut rng,
        &mut ws,
        &mut grad,
    );
    Ok((loss, grad))
}

fn default_lr_initial() -> f64 {
    1e-3
}
fn default_lr_decay() -> f64 {
    0.97
}
fn default_lr_step_epochs() -> usize {
    50_000
}
fn default_lr_floor() -> f64 {
    1e-5
}
fn default_l2() -> f64 {
    1e-4
}
fn default_batch_size() -> usize {
    200
}
fn default_dropout_train() -> f64 {
    0.1
}
fn default_epochs_mandatory() -> usize {
    10_000
}
fn default_epochs_max() -> usize {
    1_000_000
}
fn default_es_check_step() -> usize {
    100
}
fn default_es_window_frac() -> f64 {
    0.01
}
fn default_warnings_max() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr_initial")]
    pub lr_initial: f64,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_lr_step_epochs")]
    pub lr_step_epochs: usize,
    #[serde(default = "default_lr_floor")]
    pub lr_floor: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_dropout_train")]
    pub dropout_train: f64,
    #[serde(default = "default_epochs_mandatory")]
    pub epochs_mandatory: usize,
    /// Cap on the total number of epochs, mandatory phase included.
    #[serde(default = "default_epochs_max")]
    pub epochs_max: usize,
    #[serde(default = "default_es_check_step")]
    pub es_check_step: usize,
    #[serde(default = "default_es_window_frac")]
    pub es_window_frac: f64,
    #[serde(default = "default_warnings_max")]
    pub warnings_max: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: default_lr_initial(),
            lr_decay: default_lr_decay(),
            lr_step_epochs: default_lr_step_epochs(),
            lr_floor: default_lr_floor(),
            l2: default_l2(),
            batch_size: default_batch_size(),
            dropout_train: default_dropout_train(),
            epochs_mandatory: default_epochs_mandatory(),
            epochs_max: default_epochs_max(),
            es_check_step: default_es_check_step(),
            es_window_frac: default_es_window_frac(),
            warnings_max: default_warnings_max(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m.to_string()));
        if !(self.lr_initial > 0.0) || !(self.lr_floor >= 0.0) || self.lr_floor > self.lr_initial {
            return fail("need 0 <= lr_floor <= lr_initial and lr_initial > 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return fail("lr_decay must lie in (0, 1)");
        }
        if self.lr_step_epochs == 0 || self.batch_size == 0 || self.es_check_step == 0 {
            return fail("lr_step_epochs, batch_size and es_check_step must be positive");
        }
        if !(self.l2 >= 0.0) {
            return fail("l2 must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_train) {
            return fail("dropout_train must lie in [0, 1)");
        }
        if self.epochs_mandatory > self.epochs_max {
            return fail("epochs_mandatory exceeds epochs_max");
        }
        if !(self.es_window_frac >= 0.0) {
            return fail("es_window_frac must be non-negative");
        }
        Ok(())
    }
}

/// `max(lr_floor, lr_initial · lr_decay^⌊epoch / lr_step_epochs⌋)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.lr_step_epochs.max(1)) as f64;
    (cfg.lr_initial * cfg.lr_decay.powf(steps)).max(cfg.lr_floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_val_rmse: f64,
    pub stop_reason: StopReason,
    pub loss_trace: Vec<TracePoint>,
}

/// Warning counter over periodic validation errors.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    window_frac: f64,
    warnings_max: usize,
    warnings: usize,
    previous: f64,
}

impl EarlyStopping {
    pub const INITIAL_PREVIOUS: f64 = 1e10;

    pub fn new(cfg: &TrainConfig) -> Self {
        EarlyStopping {
            window_frac: cfg.es_window_frac,
            warnings_max: cfg.warnings_max,
            warnings: 0,
            previous: Self::INITIAL_PREVIOUS,
        }
    }

    /// Feed one validation error; returns `true` when training should stop.
    pub fn observe(&mut self, val_error: f64) -> bool {
        if val_error > self.previous * (1.0 + self.window_frac) {
            self.warnings += 1;
        } else {
            self.warnings = 0;
            self.previous = val_error;
        }
        self.warnings > self.warnings_max
    }

    pub fn warnings(&self) -> usize {
        self.warnings
    }

    pub fn previous(&self) -> f64 {
        self.previous
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutcome {
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<TracePoint>,
}

/// Drive the epoch schedule: `epochs_mandatory` unchecked epochs, then a
/// validation check every `es_check_step` epochs until the early-stopping
/// counter trips or `epochs_max` total epochs have run.
///
/// `run_epoch(e)` trains epoch `e` (0-based, used for the learning rate) and
/// returns its training loss; `validate()` returns the current validation RMSE.
pub fn run_schedule<E, V>(cfg: &TrainConfig, mut run_epoch: E, mut validate: V) -> Result<ScheduleOutcome>
where
    E: FnMut(usize) -> Result<f64>,
    V: FnMut() -> f64,
{
    let mandatory = cfg.epochs_mandatory.min(cfg.epochs_max);
    let mut epoch = 0;
    while epoch < mandatory {
        run_epoch(epoch)?;
        epoch += 1;
    }
    let mut stopper = EarlyStopping::new(cfg);
    let mut trace = Vec::new();
    let mut since_mandatory = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;
    while epoch < cfg.epochs_max {
        let loss = run_epoch(epoch)?;
        epoch += 1;
        since_mandatory += 1;
        if since_mandatory.is_multiple_of(cfg.es_check_step) {
            let val = validate();
            trace.push(TracePoint {
                epoch,
                train_loss: loss,
                val_rmse: val,
            });
            if stopper.observe(val) {
                stop_reason = StopReason::EarlyStopped;
                break;
            }
        }
    }
    Ok(ScheduleOutcome {
        epochs_run: epoch,
        stop_reason,
        trace,
    })
}

pub fn rmse(net: &Network, inputs: &Matrix, targets: &[f64]) -> Result<f64> {
    let preds = net.predict(inputs)?;
    let sse: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / targets.len().max(1) as f64).sqrt())
}

/// Minibatch SGD with per-example dropout masks at `cfg.dropout_train`,
/// the step-decay learning rate, and the early-stopping schedule.
/// The learning-rate schedule always restarts at epoch 0; weights are
/// taken as-is from `net`.
pub fn train(
    net: &mut Network,
    train_x: &Matrix,
    train_y: &[f64],
    val_x: &Matrix,
    val_y: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_x.rows() == 0 || train_x.rows() != train_y.len() {
        return Err(Error::usage("training set must be non-empty with one target per row"));
    }
    if val_x.rows() == 0 || val_x.rows() != val_y.len() {
        return Err(Error::usage("validation set must be non-empty with one target per row"));
    }
    if train_x.cols() != net.input_dim() || val_x.cols() != net.input_dim() {
        return Err(Error::usage("data width does not match network"));
    }
    check_finite_rows(train_x)?;
    check_finite_rows(val_x)?;

    let mut rng = seeded_rng(derive_seed(cfg.seed, labels::TRAIN));
    let mut order: Vec<usize> = (0..train_x.rows()).collect();
    let mut ws = Workspace::new(net);
    let mut grad = Gradients::zeros_like(net);
    let n = order.len();

    // run_schedule needs the network in both closures; share it via a cell.
    let cell = std::cell::RefCell::new(net);
    let outcome = run_schedule(
        cfg,
        |epoch| {
            let mut net = cell.borrow_mut();
            order.shuffle(&mut rng);
            let lr = lr_at_epoch(cfg, epoch);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let loss = net.loss_grad_rows(
                    train_x,
                    train_y,
                    chunk,
                    cfg.dropout_train,
                    cfg.l2,
                    &mut rng,
                    &mut ws,
                    &mut grad,
                );
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, loss });
                }
                total += loss * chunk.len() as f64;
                net.sgd_step(&grad, lr);
            }
            Ok(total / n as f64)
        },
        || {
            let net = cell.borrow();
            rmse(&net, val_x, val_y).unwrap_or(f64::NAN)
        },
    )?;
    let net = cell.into_inner();
    let final_val_rmse = rmse(net, val_x, val_y)?;
    if !final_val_rmse.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: outcome.epochs_run,
            loss: final_val_rmse,
        });
    }
    Ok(TrainReport {
        epochs_run: outcome.epochs_run,
        final_val_rmse,
        stop_reason: outcome.stop_reason,
        loss_trace: outcome.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_layer() -> Network {
        // 2 -> 2 (LeakyReLU 0.1) -> 1
        let specs = [LayerSpec::leaky(2, 2, 0.1), LayerSpec::identity(2, 1)];
        Network::from_parts(
            &specs,
            vec![
                Matrix::from_rows(&[[1.0, -2.0], [0.5, 0.25]]),
                Matrix::from_rows(&[[3.0, -1.0]]),
            ],
            vec![vec![0.5, -1.0], vec![0.25]],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn init_single_identity_layer() {
        let net = init_network(&[LayerSpec::identity(2, 1)], 0.0, 7).unwrap();
        assert_eq!(net.layers().len(), 1);
        assert_eq!(net.layers()[0].weights.len(), 2);
        assert_eq!(net.layers()[0].bias, vec![0.0]);
        assert!(net.hidden_widths().is_empty());
    }

    #[test]
    fn init_is_deterministic() {
        let specs = mlp_specs(3, &[8, 4], 0.01);
        let a = init_network(&specs, 0.1, 42).unwrap();
        let b = init_network(&specs, 0.1, 42).unwrap();
        let c = init_network(&specs, 0.1, 43).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn init_rejects_bad_specs() {
        let specs = [LayerSpec::leaky(2, 3, 0.1), LayerSpec::identity(4, 1)];
        assert!(matches!(init_network(&specs, 0.0, 0), Err(Error::Config(_))));
        let specs = [LayerSpec::leaky(2, 1, 0.1)];
        assert!(matches!(init_network(&specs, 0.0, 0), Err(Error::Config(_))));
        let specs = [LayerSpec::leaky(2, 3, 1.5), LayerSpec::identity(3, 1)];
        assert!(matches!(init_network(&specs, 0.0, 0), Err(Error::Config(_))));
        assert!(matches!(
            init_network(&[LayerSpec::identity(2, 1)], 1.0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forward_linear_identity() {
        let net = Network::from_parts(
            &[LayerSpec::identity(2, 1)],
            vec![Matrix::from_rows(&[[1.0, 1.0]])],
            vec![vec![0.0]],
            0.0,
        )
        .unwrap();
        assert_eq!(net.forward(&[2.0, 3.0], None).unwrap(), 5.0);
    }

    #[test]
    fn forward_rejects_nan() {
        let net = two_layer();
        assert!(matches!(
            net.forward(&[f64::NAN, 1.0], None),
            Err(Error::NumericInput(_))
        ));
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        let net = two_layer();
        let x = [1.0, 2.0];
        // hidden pre-activations: 1 - 4 + 0.5 = -2.5 ; 0.5 + 0.5 - 1 = 0
        let h0 = 0.1 * -2.5;
        let h1 = 0.1 * 0.0;
        let expected = 3.0 * h0 - 1.0 * h1 + 0.25;
        assert_relative_eq!(net.forward(&x, None).unwrap(), expected, epsilon = 1e-15);

        let x = [2.0, -1.0];
        // 2 + 2 + 0.5 = 4.5 ; 1 - 0.25 - 1 = -0.25
        let expected = 3.0 * 4.5 - (0.1 * -0.25) + 0.25;
        assert_relative_eq!(net.forward(&x, None).unwrap(), expected, epsilon = 1e-15);

        // keep only unit 0, π = 0.5 → scale 2
        let mask = DropoutMask::new(vec![vec![true, false]]);
        let expected = 3.0 * 4.5 * 2.0 + 0.25;
        assert_relative_eq!(net.forward(&x, Some(&mask)).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn zero_residual_has_zero_data_gradient() {
        let net = two_layer();
        let mut net0 = net.clone();
        net0.set_dropout_rate(0.0).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        let y = net0.forward(x.row(0), None).unwrap();
        let (loss, grad) = loss_and_gradient(&net0, &x, &[y], 1, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.flatten().iter().all(|&g| g == 0.0));

        let l2 = 0.3;
        let (loss, grad) = loss_and_gradient(&net0, &x, &[y], 1, l2).unwrap();
        assert_relative_eq!(loss, l2 * net0.l2_penalty(), epsilon = 1e-15);
        for (gw, layer) in grad.weights.iter().zip(net0.layers()) {
            for (g, w) in gw.iter().zip(&layer.weights) {
                assert_relative_eq!(*g, 2.0 * l2 * w, epsilon = 1e-15);
            }
        }
        assert!(grad.biases.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_batch_is_usage_error() {
        let net = two_layer();
        let x = Matrix::zeros(0, 2);
        assert!(matches!(loss_and_gradient(&net, &x, &[], 0, 0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn lr_schedule_defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 0), 1e-3);
        assert_eq!(lr_at_epoch(&cfg, 49_999), 1e-3);
        assert_relative_eq!(lr_at_epoch(&cfg, 50_000), 0.97e-3, epsilon = 1e-18);
        assert_eq!(lr_at_epoch(&cfg, 100_000_000), 1e-5);
    }

    fn scripted(cfg: &TrainConfig, vals: &[f64]) -> ScheduleOutcome {
        let mut i = 0;
        run_schedule(cfg, |_| Ok(0.0), || {
            let v = vals[i.min(vals.len() - 1)];
            i += 1;
            v
        })
        .unwrap()
    }

    #[test]
    fn four_degradations_stop_at_fourth_check() {
        let cfg = TrainConfig {
            epochs_mandatory: 0,
            epochs_max: 10_000,
            es_check_step: 10,
            ..TrainConfig::default()
        };
        let out = scripted(&cfg, &[1.0, 1.02, 1.03, 1.05, 1.04, 0.5]);
        assert_eq!(out.stop_reason, StopReason::EarlyStopped);
        assert_eq!(out.trace.len(), 5);
        assert_eq!(out.epochs_run, 50);
    }

    #[test]
    fn improving_forever_hits_max_epochs() {
        let cfg = TrainConfig {
            epochs_mandatory: 5,
            epochs_max: 205,
            es_check_step: 10,
            ..TrainConfig::default()
        };
        let vals: Vec<f64> = (0..100).map(|i| 1.0 / (i + 1) as f64).collect();
        let out = scripted(&cfg, &vals);
        assert_eq!(out.stop_reason, StopReason::MaxEpochs);
        assert_eq!(out.epochs_run, 205);
        assert_eq!(out.trace.len(), 20);
    }

    #[test]
    fn mandatory_phase_is_never_cut_short() {
        let cfg = TrainConfig {
            epochs_mandatory: 10,
            epochs_max: 1000,
            es_check_step: 1,
            warnings_max: 0,
            ..TrainConfig::default()
        };
        let out = scripted(&cfg, &[1.0, 2.0]);
        assert_eq!(out.stop_reason, StopReason::EarlyStopped);
        assert_eq!(out.epochs_run, 12);
        assert!(out.epochs_run >= 10);
    }

    #[test]
    fn small_degradation_inside_window_resets() {
        let cfg = TrainConfig::default();
        let mut es = EarlyStopping::new(&cfg);
        assert!(!es.observe(1.0));
        assert!(!es.observe(1.005));
        assert_eq!(es.warnings(), 0);
        assert_eq!(es.previous(), 1.005);
        assert!(!es.observe(1.2));
        assert_eq!(es.warnings(), 1);
        assert_eq!(es.previous(), 1.005);
    }

    #[test]
    fn training_reduces_error_and_is_deterministic() {
        let specs = mlp_specs(1, &[16], 0.01);
        let x = Matrix::from_fn(64, 1, |i, _| -1.0 + 2.0 * i as f64 / 63.0);
        let y: Vec<f64> = (0..64).map(|i| (2.0 * x[(i, 0)]).sin()).collect();
        let cfg = TrainConfig {
            lr_initial: 0.05,
            lr_floor: 1e-4,
            batch_size: 16,
            epochs_mandatory: 200,
            epochs_max: 400,
            es_check_step: 20,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut a = init_network(&specs, 0.1, 1).unwrap();
        let before = rmse(&a, &x, &y).unwrap();
        let ra = train(&mut a, &x, &y, &x, &y, &cfg).unwrap();
        assert!(ra.final_val_rmse < 0.5 * before, "{} vs {before}", ra.final_val_rmse);
        let mut b = init_network(&specs, 0.1, 1).unwrap();
        let rb = train(&mut b, &x, &y, &x, &y, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let specs = mlp_specs(1, &[8], 0.01);
        let x = Matrix::from_fn(8, 1, |i, _| i as f64 * 10.0);
        let y: Vec<f64> = (0..8).map(|i| 1e3 * i as f64).collect();
        let cfg = TrainConfig {
            lr_initial: 10.0,
            lr_floor: 1.0,
            batch_size: 8,
            epochs_mandatory: 50,
            epochs_max: 100,
            ..TrainConfig::default()
        };
        let mut net = init_network(&specs, 0.0, 1).unwrap();
        match train(&mut net, &x, &y, &x, &y, &cfg) {
            Err(Error::TrainingDiverged { epoch, .. }) => assert!(epoch < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
