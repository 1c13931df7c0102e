//! Residual MLP surrogate with exact-GELU activations, hand-written
//! backpropagation, Adam, and bit-exact JSON checkpoints.
//!
//! ```text
//! h_0     = x W_in + b_in
//! h_{k+1} = h_k + GELU(h_k W_k + b_k)      k = 0..depth
//! v(x)    = h_depth w_out + b_out
//! ```

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::specfun::erf;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub const CHECKPOINT_FORMAT: &str = "fracwos-surrogate";
pub const CHECKPOINT_VERSION: u32 = 1;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2))
}

/// `Φ(x) + x φ(x)`.
#[inline]
pub fn gelu_prime(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * FRAC_1_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
}

/// Weight matrix stored `fan_in x fan_out` plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(self.b.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.values().copied()).collect()
}

fn unflatten(layers: &mut [Layer], flat: &[f64]) -> Result<()> {
    let n: usize = layers.iter().map(|l| l.w.len() + l.b.len()).sum();
    if flat.len() != n {
        return Err(Error::Shape(format!("expected {n} parameters, got {}", flat.len())));
    }
    let mut it = flat.iter();
    for l in layers {
        for v in l.values_mut() {
            *v = *it.next().expect("length checked");
        }
    }
    Ok(())
}

/// Gradients, shaped like the surrogate's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Layer>,
}

impl Grads {
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }
}

/// Loss split into its two terms; `total = interior + beta * boundary`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParts {
    pub interior: f64,
    pub boundary: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    arch: Architecture,
    /// Input lift, `depth` residual blocks, output head.
    layers: Vec<Layer>,
}

impl Surrogate {
    fn check_arch(input_dim: usize, width: usize, depth: usize) -> Result<Architecture> {
        if input_dim == 0 || width == 0 || depth == 0 {
            return Err(Error::Config(format!(
                "network dims must be positive (input {input_dim}, width {width}, depth {depth})"
            )));
        }
        Ok(Architecture { input_dim, width, depth })
    }

    pub fn zeros(input_dim: usize, width: usize, depth: usize) -> Result<Self> {
        let arch = Self::check_arch(input_dim, width, depth)?;
        let mut layers = vec![Layer::zeros(input_dim, width)];
        layers.extend((0..depth).map(|_| Layer::zeros(width, width)));
        layers.push(Layer::zeros(width, 1));
        Ok(Self { arch, layers })
    }

    /// Weights uniform on `±1/sqrt(fan_in)`, biases zero.
    pub fn init(input_dim: usize, width: usize, depth: usize, seed: u64) -> Result<Self> {
        Self::init_from(input_dim, width, depth, &Stream::new(seed))
    }

    pub fn init_from(input_dim: usize, width: usize, depth: usize, stream: &Stream) -> Result<Self> {
        let mut s = Self::zeros(input_dim, width, depth)?;
        let mut rng = stream.rng();
        for layer in &mut s.layers {
            let bound = 1.0 / (layer.w.nrows() as f64).sqrt();
            for w in layer.w.iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(s)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        unflatten(&mut self.layers, flat)
    }

    fn check_batch(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass, one output per row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_batch(&x)?;
        let depth = self.arch.depth;
        let mut h = x.dot(&self.layers[0].w) + &self.layers[0].b;
        for layer in &self.layers[1..=depth] {
            let z = h.dot(&layer.w) + &layer.b;
            h.zip_mut_with(&z, |hi, &zi| *hi += gelu(zi));
        }
        let head = &self.layers[depth + 1];
        Ok(h.dot(&head.w).column(0).mapv(|v| v + head.b[0]))
    }

    /// Single-point forward pass without matrix temporaries.
    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                got: x.len(),
            });
        }
        let width = self.arch.width;
        let lift = &self.layers[0];
        let mut h = lift.b.to_vec();
        for (i, xi) in x.iter().enumerate() {
            let row = lift.w.row(i);
            for (hj, wij) in h.iter_mut().zip(row.iter()) {
                *hj += xi * wij;
            }
        }
        let mut z = vec![0.0; width];
        for layer in &self.layers[1..=self.arch.depth] {
            z.copy_from_slice(layer.b.as_slice().expect("contiguous"));
            for (i, hi) in h.iter().enumerate() {
                let row = layer.w.row(i);
                for (zj, wij) in z.iter_mut().zip(row.iter()) {
                    *zj += hi * wij;
                }
            }
            for (hj, zj) in h.iter_mut().zip(&z) {
                *hj += gelu(*zj);
            }
        }
        let head = &self.layers[self.arch.depth + 1];
        Ok(head.b[0] + h.iter().zip(head.w.column(0).iter()).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Weighted squared error `Σ_i (v(x_i) - t_i)² / n` and its gradient.
    fn mse_grad(&self, x: ArrayView2<f64>, t: ArrayView1<f64>, scale: f64) -> Result<(f64, Grads)> {
        self.check_batch(&x)?;
        if x.nrows() != t.len() {
            return Err(Error::Shape(format!("{} inputs vs {} targets", x.nrows(), t.len())));
        }
        let n = x.nrows() as f64;
        let depth = self.arch.depth;
        let mut hs = Vec::with_capacity(depth + 1);
        let mut zs = Vec::with_capacity(depth);
        let mut h = x.dot(&self.layers[0].w) + &self.layers[0].b;
        for layer in &self.layers[1..=depth] {
            let z = h.dot(&layer.w) + &layer.b;
            let mut next = h.clone();
            next.zip_mut_with(&z, |hi, &zi| *hi += gelu(zi));
            hs.push(h);
            zs.push(z);
            h = next;
        }
        let head = &self.layers[depth + 1];
        let out = h.dot(&head.w).column(0).mapv(|v| v + head.b[0]);
        let resid = &out - &t;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;

        let mut grads = Grads {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        };
        let delta_out = resid.mapv(|r| 2.0 * scale * r / n).insert_axis(Axis(1));
        grads.layers[depth + 1].w = h.t().dot(&delta_out);
        grads.layers[depth + 1].b = delta_out.sum_axis(Axis(0));
        let mut dh = delta_out.dot(&head.w.t());
        for k in (0..depth).rev() {
            let layer = &self.layers[k + 1];
            let mut dz = zs[k].mapv(gelu_prime);
            dz *= &dh;
            grads.layers[k + 1].w = hs[k].t().dot(&dz);
            grads.layers[k + 1].b = dz.sum_axis(Axis(0));
            dh += &dz.dot(&layer.w.t());
        }
        grads.layers[0].w = x.t().dot(&dh);
        grads.layers[0].b = dh.sum_axis(Axis(0));
        Ok((loss, grads))
    }

    /// `MSE_interior + beta * MSE_boundary` with its exact gradient.
    pub fn loss_and_grad(
        &self,
        x_int: ArrayView2<f64>,
        y_int: ArrayView1<f64>,
        x_bdy: ArrayView2<f64>,
        g_bdy: ArrayView1<f64>,
        beta: f64,
    ) -> Result<(LossParts, Grads)> {
        if x_int.nrows() == 0 {
            return Err(Error::Shape("interior batch is empty".into()));
        }
        if !(beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
        }
        let (interior, mut grads) = self.mse_grad(x_int, y_int, 1.0)?;
        if x_bdy.nrows() == 0 {
            if beta > 0.0 {
                return Err(Error::Shape("boundary batch is empty but beta > 0".into()));
            }
            return Ok((
                LossParts {
                    interior,
                    boundary: 0.0,
                    total: interior,
                },
                grads,
            ));
        }
        let (boundary, gb) = self.mse_grad(x_bdy, g_bdy, beta)?;
        if beta > 0.0 {
            grads.add_assign(&gb);
        }
        Ok((
            LossParts {
                interior,
                boundary,
                total: interior + beta * boundary,
            },
            grads,
        ))
    }

    pub fn adam_step(&mut self, opt: &mut OptimizerState, grads: &Grads) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.w.dim() != l.w.dim() || g.b.dim() != l.b.dim())
        {
            return Err(Error::Shape("gradient does not match network".into()));
        }
        opt.ensure_moments(&self.layers)?;
        let lr = opt.lr();
        let t = (opt.step + 1) as i32;
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        let (b1, b2, eps) = (opt.beta1, opt.beta2, opt.eps);
        for (((layer, g), m), v) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(opt.m.iter_mut())
            .zip(opt.v.iter_mut())
        {
            for (((p, gi), mi), vi) in layer.values_mut().zip(g.values()).zip(m.values_mut()).zip(v.values_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        opt.step += 1;
        Ok(())
    }
}

/// Adam moments plus the multiplicative learning-rate schedule
/// `lr(t) = base_lr * decay^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub base_lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl OptimizerState {
    /// Adam(0.9, 0.999, 1e-8) with a schedule reaching `0.01 * base_lr`
    /// after `total_steps`.
    pub fn new(net: &Surrogate, base_lr: f64, total_steps: u64) -> Result<Self> {
        if !(base_lr > 0.0) || total_steps == 0 {
            return Err(Error::Config(format!(
                "need base_lr > 0 and at least one step (lr {base_lr}, steps {total_steps})"
            )));
        }
        Ok(Self {
            step: 0,
            base_lr,
            decay: 0.01f64.powf(1.0 / total_steps as f64),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: net.layers.iter().map(Layer::zeros_like).collect(),
            v: net.layers.iter().map(Layer::zeros_like).collect(),
        })
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.base_lr * self.decay.powf(step as f64)
    }

    pub fn lr(&self) -> f64 {
        self.lr_at(self.step)
    }

    fn ensure_moments(&self, layers: &[Layer]) -> Result<()> {
        let ok = self.m.len() == layers.len()
            && self
                .m
                .iter()
                .zip(layers)
                .all(|(m, l)| m.w.dim() == l.w.dim() && m.b.dim() == l.b.dim());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("optimizer state does not match network".into()))
        }
    }
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| Error::Checkpoint(format!("bad float encoding {s:?}: {e}")))
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    rows: usize,
    cols: usize,
    w: Vec<String>,
    b: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerRecord {
    step: u64,
    base_lr: String,
    decay: String,
    beta1: String,
    beta2: String,
    eps: String,
    m: Vec<TensorRecord>,
    v: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    format: String,
    version: u32,
    architecture: Architecture,
    params: Vec<TensorRecord>,
    optimizer: OptimizerRecord,
}

fn encode(layers: &[Layer]) -> Vec<TensorRecord> {
    layers
        .iter()
        .map(|l| TensorRecord {
            rows: l.w.nrows(),
            cols: l.w.ncols(),
            w: l.w.iter().map(|v| hex(*v)).collect(),
            b: l.b.iter().map(|v| hex(*v)).collect(),
        })
        .collect()
}

fn decode(records: &[TensorRecord], template: &[Layer]) -> Result<Vec<Layer>> {
    if records.len() != template.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            template.len(),
            records.len()
        )));
    }
    records
        .iter()
        .zip(template)
        .enumerate()
        .map(|(i, (r, t))| {
            if (r.rows, r.cols) != t.w.dim() || r.w.len() != r.rows * r.cols || r.b.len() != t.b.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} has shape {}x{} (+{}), architecture needs {}x{} (+{})",
                    r.rows,
                    r.cols,
                    r.b.len(),
                    t.w.nrows(),
                    t.w.ncols(),
                    t.b.len()
                )));
            }
            let w = r.w.iter().map(|s| unhex(s)).collect::<Result<Vec<_>>>()?;
            let b = r.b.iter().map(|s| unhex(s)).collect::<Result<Vec<_>>>()?;
            Ok(Layer {
                w: Array2::from_shape_vec((r.rows, r.cols), w).map_err(|e| Error::Checkpoint(e.to_string()))?,
                b: Array1::from(b),
            })
        })
        .collect()
}

/// Writes network and optimizer state as self-describing JSON.
pub fn save_checkpoint(net: &Surrogate, opt: &OptimizerState, path: &Path) -> Result<()> {
    let rec = CheckpointRecord {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        architecture: net.arch,
        params: encode(&net.layers),
        optimizer: OptimizerRecord {
            step: opt.step,
            base_lr: hex(opt.base_lr),
            decay: hex(opt.decay),
            beta1: hex(opt.beta1),
            beta2: hex(opt.beta2),
            eps: hex(opt.eps),
            m: encode(&opt.m),
            v: encode(&opt.v),
        },
    };
    let text = serde_json::to_string(&rec).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Surrogate, OptimizerState)> {
    let text = std::fs::read_to_string(path)?;
    let rec: CheckpointRecord =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if rec.format != CHECKPOINT_FORMAT || rec.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{} (this build reads {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
            rec.format, rec.version
        )));
    }
    let a = rec.architecture;
    let template = Surrogate::zeros(a.input_dim, a.width, a.depth).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let layers = decode(&rec.params, &template.layers)?;
    let o = rec.optimizer;
    let opt = OptimizerState {
        step: o.step,
        base_lr: unhex(&o.base_lr)?,
        decay: unhex(&o.decay)?,
        beta1: unhex(&o.beta1)?,
        beta2: unhex(&o.beta2)?,
        eps: unhex(&o.eps)?,
        m: decode(&o.m, &template.layers)?,
        v: decode(&o.v, &template.layers)?,
    };
    let net = Surrogate { arch: a, layers };
    if net.layers.iter().any(|l| l.values().any(|v| !v.is_finite())) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok((net, opt))
}
