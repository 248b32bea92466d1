//! Dense ReLU network with manual backpropagation and heavy-ball SGD.
//!
//! Layer `l` maps `a_l` (`B × in`) to `z_l = a_l W_l + b_l` (`B × out`), with
//! `W_l` stored row-major as `in × out`. Hidden layers apply ReLU; the last
//! layer emits logits. All arithmetic is `f64`, and matrix products go through
//! single-threaded `matrixmultiply`, so results are bit-reproducible.

use std::io::{Read, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{at_path, ensure, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `inputs × outputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    seed: u64,
    layers: Vec<Dense>,
    velocity: Vec<LayerGrad>,
}

/// Gradient (or momentum buffer) for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            biases: vec![0.0; layer.biases.len()],
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases)
    }
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(LayerGrad::values)
    }
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `activations[l]` is the input of layer `l`; `activations[0]` is the batch.
    activations: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    #[inline]
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Smallest `|z|` over all hidden pre-activations.
    pub fn min_hidden_magnitude(&self) -> f64 {
        self.pre_activations
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`, zero biases.
    #[default]
    Glorot,
    /// Weights and biases `U(-s, s)` with `s = 1 / sqrt(fan_in)`: the default
    /// of PyTorch's `nn.Linear`.
    FanIn,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::Glorot => "glorot",
            InitScheme::FanIn => "fan_in",
        }
    }
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glorot" => Ok(Self::Glorot),
            "fan_in" | "fan-in" => Ok(Self::FanIn),
            _ => Err(Error::Validation(format!(
                "unknown init scheme `{s}` (expected glorot or fan_in)"
            ))),
        }
    }
}

/// Glorot-uniform weights `U(-s, s)`, `s = sqrt(6 / (fan_in + fan_out))`, zero
/// biases and zero momentum.
pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    init_mlp_with(layer_sizes, seed, InitScheme::Glorot)
}

/// Initialize with an explicit scheme. Draws come from stream
/// [`rng::STREAM_INIT`] of `seed`, layer by layer, weights before biases.
pub fn init_mlp_with(layer_sizes: &[usize], seed: u64, scheme: InitScheme) -> Result<MlpModel> {
    ensure!(
        layer_sizes.len() >= 2,
        "need at least an input and an output layer, got {:?}",
        layer_sizes
    );
    ensure!(
        layer_sizes.iter().all(|&s| s >= 1),
        "layer sizes must be positive, got {:?}",
        layer_sizes
    );
    let mut rng = rng::stream(seed, rng::STREAM_INIT);
    let layers: Vec<Dense> = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let s = match scheme {
                InitScheme::Glorot => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                InitScheme::FanIn => 1.0 / (fan_in as f64).sqrt(),
            };
            let dist = Uniform::new(-s, s).expect("finite positive bound");
            let weights = (0..fan_in * fan_out)
                .map(|_| dist.sample(&mut rng))
                .collect();
            let biases = match scheme {
                InitScheme::Glorot => vec![0.0; fan_out],
                InitScheme::FanIn => (0..fan_out).map(|_| dist.sample(&mut rng)).collect(),
            };
            Dense {
                inputs: fan_in,
                outputs: fan_out,
                weights,
                biases,
            }
        })
        .collect();
    let velocity = layers.iter().map(LayerGrad::zeros_like).collect();
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        seed,
        layers,
        velocity,
    })
}

impl MlpModel {
    #[inline]
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    #[inline]
    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn velocity(&self) -> &[LayerGrad] {
        &self.velocity
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters, layer by layer: weights then biases.
    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    /// Mutable access to the `index`-th entry of [`MlpModel::parameters`].
    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                return &mut layer.weights[index];
            }
            index -= layer.weights.len();
            if index < layer.biases.len() {
                return &mut layer.biases[index];
            }
            index -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// Logits only; does not retain a cache.
    pub fn logits(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        forward(self, inputs).map(|(z, _)| z)
    }
}

/// `c = a · b + beta · c` for row-major `a` (`m × k`, optionally stored
/// transposed) and `b` (`k × n`, optionally transposed).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above guarantee every index reached by the given
    // strides lies inside the slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Run the network on a row-major `B × n` batch.
pub fn forward(model: &MlpModel, inputs: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let width = model.input_width();
    ensure!(
        !inputs.is_empty() && inputs.len() % width == 0,
        "input buffer of {} values does not match width {width}",
        inputs.len()
    );
    let batch = inputs.len() / width;
    let mut activations = Vec::with_capacity(model.layers.len());
    let mut pre_activations = Vec::with_capacity(model.layers.len() - 1);
    let mut current = inputs.to_vec();
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let mut z: Vec<f64> = layer
            .biases
            .iter()
            .copied()
            .cycle()
            .take(batch * layer.outputs)
            .collect();
        gemm(
            batch,
            layer.inputs,
            layer.outputs,
            &current,
            false,
            &layer.weights,
            false,
            1.0,
            &mut z,
        );
        activations.push(std::mem::take(&mut current));
        if l == last {
            return Ok((
                z,
                ForwardCache {
                    batch,
                    activations,
                    pre_activations,
                },
            ));
        }
        current = z.iter().map(|&v| v.max(0.0)).collect();
        pre_activations.push(z);
    }
    unreachable!("model has at least one layer")
}

/// Reverse-mode gradients of a scalar whose logit gradient is `grad_logits`.
/// The ReLU derivative at exactly 0 is taken as 0.
pub fn backward(model: &MlpModel, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Gradients> {
    let batch = cache.batch;
    ensure!(
        cache.activations.len() == model.layers.len()
            && cache.activations[0].len() == batch * model.input_width(),
        "forward cache does not belong to this model"
    );
    ensure!(
        grad_logits.len() == batch * model.classes(),
        "expected {} logit gradients, got {}",
        batch * model.classes(),
        grad_logits.len()
    );
    let mut grads: Vec<LayerGrad> = Vec::with_capacity(model.layers.len());
    let mut delta = grad_logits.to_vec();
    for (l, layer) in model.layers.iter().enumerate().rev() {
        let a = &cache.activations[l];
        let mut dw = vec![0.0; layer.weights.len()];
        gemm(
            layer.inputs,
            batch,
            layer.outputs,
            a,
            true,
            &delta,
            false,
            0.0,
            &mut dw,
        );
        let mut db = vec![0.0; layer.outputs];
        for row in delta.chunks_exact(layer.outputs) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        if l > 0 {
            let mut prev = vec![0.0; batch * layer.inputs];
            gemm(
                batch,
                layer.outputs,
                layer.inputs,
                &delta,
                false,
                &layer.weights,
                true,
                0.0,
                &mut prev,
            );
            for (d, &z) in prev.iter_mut().zip(&cache.pre_activations[l - 1]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = prev;
        }
        grads.push(LayerGrad {
            weights: dw,
            biases: db,
        });
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

/// Heavy-ball update `v <- momentum * v + g; θ <- θ - lr * v`.
///
/// Non-finite gradients abort the step before any parameter changes.
pub fn sgd_step(model: &mut MlpModel, grads: &Gradients, lr: f64, momentum: f64) -> Result<()> {
    ensure!(
        lr.is_finite() && lr > 0.0,
        "learning rate must be > 0, got {lr}"
    );
    ensure!(
        (0.0..1.0).contains(&momentum),
        "momentum must lie in [0, 1), got {momentum}"
    );
    ensure!(
        grads.layers.len() == model.layers.len()
            && grads
                .layers
                .iter()
                .zip(&model.layers)
                .all(
                    |(g, l)| g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
                ),
        "gradient shapes do not match the model"
    );
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient; step aborted".into()));
    }
    for ((layer, vel), g) in model
        .layers
        .iter_mut()
        .zip(&mut model.velocity)
        .zip(&grads.layers)
    {
        for ((p, v), &gi) in layer
            .weights
            .iter_mut()
            .zip(&mut vel.weights)
            .zip(&g.weights)
        {
            *v = momentum * *v + gi;
            *p -= lr * *v;
        }
        for ((p, v), &gi) in layer.biases.iter_mut().zip(&mut vel.biases).zip(&g.biases) {
            *v = momentum * *v + gi;
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

// Checkpoint layout (all integers and floats little-endian):
//
//   bytes 0..8    magic  b"MILCCKPT"
//   u32           format version (1)
//   u32           number of layer sizes L+1
//   u64 × (L+1)   layer sizes
//   u64           seed
//   u64           epoch
//   u64           parameter count P
//   f64 × P       parameters, per layer: weights (in × out, row-major) then biases
//   f64 × P       momentum buffers in the same order
const CHECKPOINT_MAGIC: &[u8; 8] = b"MILCCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// A model together with the epoch it was saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub epoch: u64,
}

pub fn save_checkpoint(model: &MlpModel, epoch: u64, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 16 * model.parameter_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.layer_sizes.len() as u32).to_le_bytes());
    for &s in &model.layer_sizes {
        buf.extend_from_slice(&(s as u64).to_le_bytes());
    }
    buf.extend_from_slice(&model.seed.to_le_bytes());
    buf.extend_from_slice(&epoch.to_le_bytes());
    buf.extend_from_slice(&(model.parameter_count() as u64).to_le_bytes());
    for v in model.parameters() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in model.velocity.iter().flat_map(LayerGrad::values) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(at_path(path))?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(at_path(path))?
        .read_to_end(&mut bytes)?;
    let mut r = ByteReader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let n_sizes = r.u32()? as usize;
    let sizes = (0..n_sizes)
        .map(|_| r.u64().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let seed = r.u64()?;
    let epoch = r.u64()?;
    let count = r.u64()? as usize;
    let mut model =
        init_mlp(&sizes, seed).map_err(|e| Error::Format(format!("bad layer sizes: {e}")))?;
    if count != model.parameter_count() {
        return Err(Error::Format(format!(
            "parameter count {count} does not match layer sizes {sizes:?}"
        )));
    }
    for layer in &mut model.layers {
        for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            *p = r.f64()?;
        }
    }
    for vel in &mut model.velocity {
        for p in vel.weights.iter_mut().chain(vel.biases.iter_mut()) {
            *p = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(
            "trailing bytes after checkpoint payload".into(),
        ));
    }
    Ok(Checkpoint { model, epoch })
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
