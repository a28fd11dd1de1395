//! Dense feed-forward networks with exact backpropagation and Adam.
//!
//! Batches are row-major `batch × features` matrices. Layer weights are stored
//! row-major as `out_width × in_width`, so a layer computes
//! `z = x · Wᵀ + b` followed by its activation.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::linalg::{gemm, Matrix, View};
use crate::rng::SeededStream;

/// Default fixed slope for `LeakyRelu`.
pub const LEAKY_RELU_SLOPE: f64 = 0.2;
/// Default starting slope for `Prelu`.
pub const PRELU_INITIAL_SLOPE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    /// Leaky ReLU whose negative-side slope is a trainable scalar per layer.
    Prelu { initial_slope: f64 },
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn leaky_relu() -> Self {
        Self::LeakyRelu { slope: LEAKY_RELU_SLOPE }
    }

    pub fn prelu() -> Self {
        Self::Prelu { initial_slope: PRELU_INITIAL_SLOPE }
    }

    /// True when the derivative has a kink at zero.
    pub fn is_piecewise_linear(&self) -> bool {
        matches!(self, Self::Relu | Self::LeakyRelu { .. } | Self::Prelu { .. })
    }

    #[inline]
    fn apply(self, z: f64, prelu_slope: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Self::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Self::Prelu { .. } => {
                if z > 0.0 {
                    z
                } else {
                    prelu_slope * z
                }
            }
            Self::Tanh => libm::tanh(z),
            Self::Sigmoid => sigmoid(z),
            Self::Identity => z,
        }
    }

    /// `da/dz` given the pre-activation `z` and the activated value `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64, prelu_slope: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Self::Prelu { .. } => {
                if z > 0.0 {
                    1.0
                } else {
                    prelu_slope
                }
            }
            Self::Tanh => 1.0 - a * a,
            Self::Sigmoid => a * (1.0 - a),
            Self::Identity => 1.0,
        }
    }

    fn tag(self) -> (u8, f64) {
        match self {
            Self::Relu => (0, 0.0),
            Self::LeakyRelu { slope } => (1, slope),
            Self::Prelu { initial_slope } => (2, initial_slope),
            Self::Tanh => (3, 0.0),
            Self::Sigmoid => (4, 0.0),
            Self::Identity => (5, 0.0),
        }
    }

    fn from_tag(tag: u8, param: f64) -> Option<Self> {
        Some(match tag {
            0 => Self::Relu,
            1 => Self::LeakyRelu { slope: param },
            2 => Self::Prelu { initial_slope: param },
            3 => Self::Tanh,
            4 => Self::Sigmoid,
            5 => Self::Identity,
            _ => return None,
        })
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_width: usize,
    pub out_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_width: usize, out_width: usize, activation: Activation) -> Self {
        Self { in_width, out_width, activation }
    }
}

/// Which parameter group of a layer an error refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Weights,
    Biases,
    PreluSlope,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Weights => "weights",
            Self::Biases => "biases",
            Self::PreluSlope => "prelu slope",
        })
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("layer {layer}: widths must be positive (got {in_width}→{out_width})")]
    ZeroWidth { layer: usize, in_width: usize, out_width: usize },
    #[error("layer {layer} takes {expected} inputs but layer {} produces {found}", .layer - 1)]
    BrokenChain { layer: usize, expected: usize, found: usize },
    #[error("input has {found} columns, network expects {expected}")]
    InputWidth { expected: usize, found: usize },
    #[error("output gradient is {found_rows}×{found_cols}, forward output was {rows}×{cols}")]
    OutputGradShape { rows: usize, cols: usize, found_rows: usize, found_cols: usize },
    #[error("forward cache does not belong to this network state")]
    StaleCache,
    #[error("gradients do not match the network's parameter shapes")]
    GradientShape,
    #[error("non-finite gradient in layer {layer} {group}")]
    NonFiniteGradient { layer: usize, group: ParamGroup },
    #[error("parameter update produced a non-finite value in layer {layer} {group}")]
    NonFiniteParameter { layer: usize, group: ParamGroup },
    #[error("cannot seed backward at the pre-activation of a PReLU output layer")]
    PreluOutputSeed,
    #[error("malformed network encoding: {0}")]
    Decode(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    spec: LayerSpec,
    weights: Vec<f64>,
    biases: Vec<f64>,
    prelu_slope: Option<f64>,
}

impl Layer {
    fn zeros(spec: LayerSpec) -> Self {
        let prelu_slope = match spec.activation {
            Activation::Prelu { initial_slope } => Some(initial_slope),
            _ => None,
        };
        Self {
            spec,
            weights: vec![0.0; spec.in_width * spec.out_width],
            biases: vec![0.0; spec.out_width],
            prelu_slope,
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    /// Row-major `out_width × in_width`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn prelu_slope(&self) -> Option<f64> {
        self.prelu_slope
    }

    pub fn set_prelu_slope(&mut self, slope: f64) {
        if self.prelu_slope.is_some() {
            self.prelu_slope = Some(slope);
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len() + usize::from(self.prelu_slope.is_some())
    }
}

/// All trainable state of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    layers: Vec<Layer>,
    /// Bumped by every in-place update; ties forward caches to a state.
    #[serde(skip)]
    generation: u64,
}

/// Checks that a layer stack is non-empty, has positive widths and chains.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<(), NnError> {
    if specs.is_empty() {
        return Err(NnError::EmptyNetwork);
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_width == 0 || s.out_width == 0 {
            return Err(NnError::ZeroWidth { layer: i, in_width: s.in_width, out_width: s.out_width });
        }
        if i > 0 && specs[i - 1].out_width != s.in_width {
            return Err(NnError::BrokenChain { layer: i, expected: s.in_width, found: specs[i - 1].out_width });
        }
    }
    Ok(())
}

/// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero biases, PReLU
/// slopes at their configured initial value. Deterministic in `seed`.
pub fn init_network(specs: &[LayerSpec], seed: u64) -> Result<NetworkParams, NnError> {
    let mut net = NetworkParams::zeros(specs)?;
    let mut rng = SeededStream::new(seed);
    for layer in &mut net.layers {
        let bound = libm::sqrt(6.0 / (layer.spec.in_width + layer.spec.out_width) as f64);
        for w in &mut layer.weights {
            *w = rng.uniform_range(-bound, bound);
        }
    }
    Ok(net)
}

impl NetworkParams {
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self, NnError> {
        validate_specs(specs)?;
        Ok(Self { layers: specs.iter().copied().map(Layer::zeros).collect(), generation: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        self.generation += 1;
        &mut self.layers[i]
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.in_width
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_width
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().chain(&l.biases).all(|v| v.is_finite()) && l.prelu_slope.map_or(true, f64::is_finite)
        })
    }

    /// Parameters in canonical order: per layer, weights, biases, then slope.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
            out.extend(l.prelu_slope);
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat). Panics on length mismatch.
    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count(), "flat parameter length");
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&values[at..at + nb]);
            at += nb;
            if let Some(s) = l.prelu_slope.as_mut() {
                *s = values[at];
                at += 1;
            }
        }
        self.generation += 1;
    }

    /// Runs the network and keeps everything backward needs.
    pub fn forward(&self, batch: &Matrix) -> Result<ForwardCache, NnError> {
        self.check_input(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut preacts = Vec::with_capacity(self.layers.len());
        activations.push(batch.clone());
        for layer in &self.layers {
            let input = &activations[activations.len() - 1];
            let z = layer_preactivation(layer, input);
            let a = activate(layer, &z);
            preacts.push(z);
            activations.push(a);
        }
        Ok(ForwardCache { generation: self.generation, shapes: self.shape_key(), activations, preacts })
    }

    /// Forward pass without retaining intermediates.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix, NnError> {
        self.check_input(batch)?;
        let mut current = layer_preactivation(&self.layers[0], batch);
        apply_in_place(&self.layers[0], &mut current);
        for layer in &self.layers[1..] {
            let mut next = layer_preactivation(layer, &current);
            apply_in_place(layer, &mut next);
            current = next;
        }
        Ok(current)
    }

    /// Gradients of `Σ output_grad ⊙ output` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<Gradients, NnError> {
        self.backprop(cache, OutputGrad::Activated(output_grad), false).map(|b| b.gradients)
    }

    /// General backward pass; optionally also returns the gradient with
    /// respect to the network input.
    pub fn backward_full(
        &self,
        cache: &ForwardCache,
        seed: OutputGrad<'_>,
        want_input_grad: bool,
    ) -> Result<BackwardPass, NnError> {
        self.backprop(cache, seed, want_input_grad)
    }

    fn check_input(&self, batch: &Matrix) -> Result<(), NnError> {
        if batch.cols() != self.input_width() {
            return Err(NnError::InputWidth { expected: self.input_width(), found: batch.cols() });
        }
        Ok(())
    }

    fn shape_key(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for l in &self.layers {
            for v in [l.spec.in_width as u64, l.spec.out_width as u64, u64::from(l.spec.activation.tag().0)] {
                h = crate::rng::mix64(h ^ v);
            }
        }
        h
    }

    fn backprop(&self, cache: &ForwardCache, seed: OutputGrad<'_>, want_input: bool) -> Result<BackwardPass, NnError> {
        if cache.generation != self.generation
            || cache.shapes != self.shape_key()
            || cache.preacts.len() != self.layers.len()
        {
            return Err(NnError::StaleCache);
        }
        let out = cache.output();
        let seed_matrix = match seed {
            OutputGrad::Activated(g) | OutputGrad::PreActivation(g) => g,
        };
        if seed_matrix.rows() != out.rows() || seed_matrix.cols() != out.cols() {
            return Err(NnError::OutputGradShape {
                rows: out.rows(),
                cols: out.cols(),
                found_rows: seed_matrix.rows(),
                found_cols: seed_matrix.cols(),
            });
        }
        let n_layers = self.layers.len();
        if matches!(seed, OutputGrad::PreActivation(_))
            && matches!(self.layers[n_layers - 1].spec.activation, Activation::Prelu { .. })
        {
            return Err(NnError::PreluOutputSeed);
        }
        let batch = out.rows();
        let mut grads = Gradients::zeros_like(self);
        // Gradient with respect to the current layer's activated output.
        let mut upstream: Option<Matrix> = None;
        let mut input_grad = None;
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let z = &cache.preacts[l];
            let a = &cache.activations[l + 1];
            let x = &cache.activations[l];
            let slope = layer.prelu_slope.unwrap_or(0.0);
            let delta = match (l == n_layers - 1, seed, upstream.take()) {
                (true, OutputGrad::PreActivation(g), _) => g.clone(),
                (true, OutputGrad::Activated(g), _) => activation_backward(layer, z, a, g, slope, &mut grads.layers[l]),
                (false, _, Some(up)) => activation_backward(layer, z, a, &up, slope, &mut grads.layers[l]),
                (false, _, None) => unreachable!("upstream gradient is set for every hidden layer"),
            };
            let (inw, outw) = (layer.spec.in_width, layer.spec.out_width);
            let lg = &mut grads.layers[l];
            // dW = deltaᵀ · x
            gemm(
                outw,
                batch,
                inw,
                1.0,
                View::transposed(delta.as_slice(), outw),
                View::row_major(x.as_slice(), inw),
                0.0,
                &mut lg.weights,
            );
            for r in 0..batch {
                for (b, d) in lg.biases.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            if l > 0 || want_input {
                // dx = delta · W
                let mut dx = Matrix::zeros(batch, inw);
                gemm(
                    batch,
                    outw,
                    inw,
                    1.0,
                    View::row_major(delta.as_slice(), outw),
                    View::row_major(&layer.weights, inw),
                    0.0,
                    dx.as_mut_slice(),
                );
                if l > 0 {
                    upstream = Some(dx);
                } else {
                    input_grad = Some(dx);
                }
            }
        }
        Ok(BackwardPass { gradients: grads, input_grad })
    }

    /// Little-endian binary checkpoint; layout documented in the README.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.param_count() + 32 * self.layers.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            let (tag, param) = l.spec.activation.tag();
            out.extend_from_slice(&(l.spec.in_width as u32).to_le_bytes());
            out.extend_from_slice(&(l.spec.out_width as u32).to_le_bytes());
            out.push(tag);
            out.extend_from_slice(&param.to_le_bytes());
            for v in l.weights.iter().chain(&l.biases).chain(l.prelu_slope.as_ref()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Decode("bad magic"));
        }
        if r.u32()? != FORMAT_VERSION {
            return Err(NnError::Decode("unsupported version"));
        }
        let n = r.u32()? as usize;
        let mut specs = Vec::with_capacity(n.min(1024));
        let mut values = Vec::new();
        for _ in 0..n {
            let in_width = r.u32()? as usize;
            let out_width = r.u32()? as usize;
            let tag = r.take(1)?[0];
            let param = r.f64()?;
            let activation = Activation::from_tag(tag, param).ok_or(NnError::Decode("unknown activation"))?;
            let count = in_width
                .checked_mul(out_width)
                .and_then(|w| w.checked_add(out_width))
                .ok_or(NnError::Decode("layer too large"))?
                + usize::from(tag == 2);
            if count > r.remaining() / 8 {
                return Err(NnError::Decode("truncated"));
            }
            for _ in 0..count {
                values.push(r.f64()?);
            }
            specs.push(LayerSpec { in_width, out_width, activation });
        }
        if r.remaining() != 0 {
            return Err(NnError::Decode("trailing bytes"));
        }
        let mut net = Self::zeros(&specs).map_err(|_| NnError::Decode("invalid layer chain"))?;
        net.set_flat(&values);
        net.generation = 0;
        Ok(net)
    }
}

const MAGIC: &[u8; 4] = b"PGNN";
const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(NnError::Decode("truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }
}

fn layer_preactivation(layer: &Layer, input: &Matrix) -> Matrix {
    let (inw, outw) = (layer.spec.in_width, layer.spec.out_width);
    let batch = input.rows();
    let mut z = Matrix::zeros(batch, outw);
    for r in 0..batch {
        z.row_mut(r).copy_from_slice(&layer.biases);
    }
    // z += x · Wᵀ
    gemm(
        batch,
        inw,
        outw,
        1.0,
        View::row_major(input.as_slice(), inw),
        View::transposed(&layer.weights, inw),
        1.0,
        z.as_mut_slice(),
    );
    z
}

fn activate(layer: &Layer, z: &Matrix) -> Matrix {
    let mut a = z.clone();
    apply_in_place(layer, &mut a);
    a
}

fn apply_in_place(layer: &Layer, m: &mut Matrix) {
    let act = layer.spec.activation;
    if act == Activation::Identity {
        return;
    }
    let slope = layer.prelu_slope.unwrap_or(0.0);
    for v in m.as_mut_slice() {
        *v = act.apply(*v, slope);
    }
}

/// Turns `dL/da` into `dL/dz`, accumulating the PReLU slope gradient.
fn activation_backward(layer: &Layer, z: &Matrix, a: &Matrix, grad_a: &Matrix, slope: f64, lg: &mut LayerGrad) -> Matrix {
    let act = layer.spec.activation;
    let mut delta = grad_a.clone();
    if act == Activation::Identity {
        return delta;
    }
    if let Some(gs) = lg.prelu_slope.as_mut() {
        *gs = z
            .as_slice()
            .iter()
            .zip(grad_a.as_slice())
            .filter(|(zv, _)| **zv <= 0.0)
            .map(|(zv, g)| zv * g)
            .sum();
    }
    for ((d, zv), av) in delta.as_mut_slice().iter_mut().zip(z.as_slice()).zip(a.as_slice()) {
        *d *= act.derivative(*zv, *av, slope);
    }
    delta
}

/// Seed for a backward pass.
#[derive(Clone, Copy, Debug)]
pub enum OutputGrad<'a> {
    /// `dL/d(output)` after the final activation.
    Activated(&'a Matrix),
    /// `dL/dz` of the final layer, bypassing its activation. Used for fused
    /// sigmoid + cross-entropy.
    PreActivation(&'a Matrix),
}

/// Intermediates recorded by [`NetworkParams::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    shapes: u64,
    activations: Vec<Matrix>,
    preacts: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.activations[self.activations.len() - 1]
    }

    /// Pre-activation of the final layer (the logits for a sigmoid head).
    pub fn output_preactivation(&self) -> &Matrix {
        &self.preacts[self.preacts.len() - 1]
    }

    /// Pre-activations of every layer, in order.
    pub fn preactivations(&self) -> &[Matrix] {
        &self.preacts
    }
}

#[derive(Clone, Debug)]
pub struct BackwardPass {
    pub gradients: Gradients,
    pub input_grad: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub prelu_slope: Option<f64>,
}

/// Same shape as [`NetworkParams`]; also used for optimizer moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &NetworkParams) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                    prelu_slope: l.prelu_slope.map(|_| 0.0),
                })
                .collect(),
        }
    }

    pub fn matches(&self, net: &NetworkParams) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len()
                    && g.biases.len() == l.biases.len()
                    && g.prelu_slope.is_some() == l.prelu_slope.is_some()
            })
    }

    /// Same canonical order as [`NetworkParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
            out.extend(l.prelu_slope);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += y);
            if let (Some(x), Some(y)) = (a.prelu_slope.as_mut(), b.prelu_slope) {
                *x += y;
            }
        }
    }

    pub fn first_non_finite(&self) -> Option<(usize, ParamGroup)> {
        for (i, l) in self.layers.iter().enumerate() {
            if !l.weights.iter().all(|v| v.is_finite()) {
                return Some((i, ParamGroup::Weights));
            }
            if !l.biases.iter().all(|v| v.is_finite()) {
                return Some((i, ParamGroup::Biases));
            }
            if l.prelu_slope.is_some_and(|v| !v.is_finite()) {
                return Some((i, ParamGroup::PreluSlope));
            }
        }
        None
    }
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn is_valid(&self) -> bool {
        self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.epsilon.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(net: &NetworkParams, config: AdamConfig) -> Self {
        let zeros = Gradients::zeros_like(net);
        Self { config, first_moment: zeros.clone(), second_moment: zeros, step_count: 0 }
    }
}

/// One bias-corrected Adam update, in place. On error neither `net` nor
/// `state` is modified.
pub fn adam_step(net: &mut NetworkParams, grads: &Gradients, state: &mut AdamState) -> Result<(), NnError> {
    if !grads.matches(net) || !state.first_moment.matches(net) || !state.second_moment.matches(net) {
        return Err(NnError::GradientShape);
    }
    if let Some((layer, group)) = grads.first_non_finite() {
        return Err(NnError::NonFiniteGradient { layer, group });
    }
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    let t = state.step_count + 1;
    let c1 = 1.0 - libm::pow(beta1, t as f64);
    let c2 = 1.0 - libm::pow(beta2, t as f64);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
    };
    let mut next = net.layers.clone();
    let mut first = state.first_moment.clone();
    let mut second = state.second_moment.clone();
    for (i, layer) in next.iter_mut().enumerate() {
        let g = &grads.layers[i];
        let m = &mut first.layers[i];
        let v = &mut second.layers[i];
        for (((p, g), m), v) in layer.weights.iter_mut().zip(&g.weights).zip(&mut m.weights).zip(&mut v.weights) {
            update(p, *g, m, v);
        }
        for (((p, g), m), v) in layer.biases.iter_mut().zip(&g.biases).zip(&mut m.biases).zip(&mut v.biases) {
            update(p, *g, m, v);
        }
        if let (Some(p), Some(g), Some(m), Some(v)) =
            (layer.prelu_slope.as_mut(), g.prelu_slope, m.prelu_slope.as_mut(), v.prelu_slope.as_mut())
        {
            update(p, g, m, v);
        }
    }
    for (i, l) in next.iter().enumerate() {
        let bad = if !l.weights.iter().all(|v| v.is_finite()) {
            Some(ParamGroup::Weights)
        } else if !l.biases.iter().all(|v| v.is_finite()) {
            Some(ParamGroup::Biases)
        } else if l.prelu_slope.is_some_and(|v| !v.is_finite()) {
            Some(ParamGroup::PreluSlope)
        } else {
            None
        };
        if let Some(group) = bad {
            return Err(NnError::NonFiniteParameter { layer: i, group });
        }
    }
    net.layers = next;
    net.generation += 1;
    state.first_moment = first;
    state.second_moment = second;
    state.step_count = t;
    Ok(())
}
