//! A small ReLU MLP with hand-derived backpropagation, SGD with momentum,
//! and a warmup + step learning-rate schedule.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::numkit::{LogitMatrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

/// Layer widths from input dimension to class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::domain("an MLP needs at least input and output sizes"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::domain("layer sizes must be positive"));
        }
        if *self.layer_sizes.last().unwrap() < 2 {
            return Err(Error::domain("the output layer needs at least two classes"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

/// One affine layer; `weights` is `fan_in × fan_out` so that `y = x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Network parameters. The same shape also carries gradients and momentum
/// buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Inputs to every layer and hidden pre-activations, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.uniform(-limit, limit));
                Dense {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// All-zero parameters shaped like `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.nrows()];
        sizes.extend(self.layers.iter().map(|l| l.weights.ncols()));
        sizes
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec {
            layer_sizes: self.layer_sizes(),
            activation: Activation::Relu,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<(LogitMatrix, ForwardCache)> {
        let d = self.layers[0].weights.nrows();
        if batch.ncols() != d {
            return Err(Error::domain(format!(
                "batch has {} features, network expects {d}",
                batch.ncols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len() - 1);
        let mut h = batch.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weights) + &layer.bias;
            inputs.push(h);
            if i == last {
                let logits = LogitMatrix::new(z)?;
                return Ok((
                    logits,
                    ForwardCache {
                        inputs,
                        pre_activations,
                    },
                ));
            }
            h = z.mapv(|v| v.max(0.0));
            pre_activations.push(z);
        }
        unreachable!("a validated network has at least one layer")
    }

    /// Forward pass without keeping the cache.
    pub fn logits(&self, batch: ArrayView2<'_, f64>) -> Result<LogitMatrix> {
        self.forward(batch).map(|(l, _)| l)
    }

    /// Parameter gradients given `∂L/∂logits` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, logit_gradient: ArrayView2<'_, f64>) -> Result<MlpParams> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::domain("forward cache does not match this network"));
        }
        let n = cache.inputs[0].nrows();
        let k = self.n_classes();
        if logit_gradient.dim() != (n, k) {
            return Err(Error::domain(format!(
                "logit gradient is {:?}, expected {:?}",
                logit_gradient.dim(),
                (n, k)
            )));
        }
        for (layer, input) in self.layers.iter().zip(&cache.inputs) {
            if input.ncols() != layer.weights.nrows() || input.nrows() != n {
                return Err(Error::domain("forward cache does not match this network"));
            }
        }

        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = logit_gradient.to_owned();
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            grads.push(Dense {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                let mut prev = delta.dot(&self.layers[i].weights.t());
                Zip::from(&mut prev)
                    .and(&cache.pre_activations[i - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
                delta = prev;
            }
        }
        grads.reverse();
        Ok(MlpParams { layers: grads })
    }

    fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.dim() == b.weights.dim() && a.bias.dim() == b.bias.dim()
            })
    }

    /// Serialized checkpoint bytes.
    ///
    /// Layout (little-endian): `"DTKD"`, `u16` version, `u32` affine-layer
    /// count `L`, `L + 1` `u32` layer widths, then for each layer its
    /// `fan_in × fan_out` weights row-major followed by its biases, all `f32`.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let sizes = self.layer_sizes();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for layer in &self.layers {
            for &w in layer.weights.iter() {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
            for &b in layer.bias.iter() {
                out.extend_from_slice(&(b as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::parse(0, "bad checkpoint magic, expected \"DTKD\""));
        }
        let version_at = r.pos;
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                version_at,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let count_at = r.pos;
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(Error::parse(count_at, format!("implausible layer count {n_layers}")));
        }
        let mut sizes = Vec::with_capacity(n_layers + 1);
        for _ in 0..=n_layers {
            let at = r.pos;
            let s = r.u32()? as usize;
            if s == 0 {
                return Err(Error::parse(at, "zero layer width"));
            }
            sizes.push(s);
        }
        let mut layers = Vec::with_capacity(n_layers);
        for w in sizes.windows(2) {
            let weights = Array2::from_shape_vec((w[0], w[1]), r.f32s(w[0] * w[1])?)
                .expect("length checked");
            let bias = Array1::from(r.f32s(w[1])?);
            layers.push(Dense { weights, bias });
        }
        if r.pos as usize != bytes.len() {
            return Err(Error::parse(r.pos, "trailing bytes after checkpoint"));
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    /// Rounds every parameter to `f32`, i.e. what a checkpoint round trip keeps.
    pub fn rounded_to_f32(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.weights.mapv_inplace(|v| v as f32 as f64);
            l.bias.mapv_inplace(|v| v as f32 as f64);
        }
        out
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"DTKD";
const CHECKPOINT_VERSION: u16 = 1;

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: u64,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let start = self.pos as usize;
        let end = start
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::parse(self.pos, format!("truncated: need {n} bytes, file ends"))
            })?;
        self.pos = end as u64;
        Ok(&self.bytes[start..end])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let at = self.pos;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::parse(at, "size overflow"))?)?;
        let mut out = Vec::with_capacity(n);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::parse(at + 4 * i as u64, "non-finite value"));
            }
            out.push(v as f64);
        }
        Ok(out)
    }
}

/// Optimizer and learning-rate schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub decay_milestones: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    /// Desk-scale student schedule: the 240-epoch CIFAR recipe shrunk to 120.
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 120,
            warmup_epochs: 10,
            decay_milestones: vec![75, 90, 105],
            decay_factor: 0.1,
            batch_size: 64,
            seed: 42,
        }
    }
}

impl TrainSchedule {
    /// Shorter schedule used to pretrain teachers.
    pub fn teacher_default() -> Self {
        Self {
            epochs: 60,
            warmup_epochs: 5,
            decay_milestones: vec![38, 45, 53],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::domain("base_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::domain("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::domain("weight_decay must be nonnegative"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::domain("decay_factor must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be positive"));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::domain("warmup_epochs must be less than epochs"));
        }
        if self.decay_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("decay milestones must be strictly increasing"));
        }
        if self.decay_milestones.last().is_some_and(|&m| m >= self.epochs) {
            return Err(Error::domain("decay milestones must be below epochs"));
        }
        Ok(())
    }

    /// Learning rate for `epoch` (0-based).
    ///
    /// During warmup the rate ramps linearly, `base_lr · (epoch + 1) / warmup`;
    /// afterwards it is `base_lr · decay_factor^m` with `m` the number of
    /// milestones at or below `epoch`.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::domain(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.epochs
            )));
        }
        if epoch < self.warmup_epochs {
            return Ok(self.base_lr * (epoch + 1) as f64 / self.warmup_epochs as f64);
        }
        let passed = self.decay_milestones.iter().filter(|&&m| m <= epoch).count();
        Ok(self.base_lr * self.decay_factor.powi(passed as i32))
    }
}

/// One SGD step with momentum and coupled weight decay:
/// `v ← μ·v + g + wd·θ`, `θ ← θ − lr·v`.
pub fn sgd_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    schedule: &TrainSchedule,
    velocity: &mut MlpParams,
    lr_now: f64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(velocity) {
        return Err(Error::domain("parameter, gradient and velocity shapes differ"));
    }
    let (mu, wd) = (schedule.momentum, schedule.weight_decay);
    for ((p, g), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
    {
        Zip::from(&mut p.weights)
            .and(&g.weights)
            .and(&mut v.weights)
            .for_each(|p, &g, v| {
                *v = mu * *v + g + wd * *p;
                *p -= lr_now * *v;
            });
        Zip::from(&mut p.bias)
            .and(&g.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, v| {
                *v = mu * *v + g + wd * *p;
                *p -= lr_now * *v;
            });
    }
    Ok(())
}
