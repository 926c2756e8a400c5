//! Minimal feed-forward substrate: MLPs with reverse-mode gradients, an
//! Adam optimizer, and a float32 checkpoint format.
//!
//! Parameters live in one flat f64 vector per network so the optimizer and
//! the EMA target update are plain elementwise loops. Checkpoints store
//! float32 little-endian to keep files small; in-memory math is f64 so the
//! finite-difference gradient oracle is meaningful.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EmaqError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in terms of pre-activation z and output a.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected network. Layer l maps dims[l] -> dims[l+1] followed by
/// activations[l]. Parameters are flat: per layer, row-major weights then
/// biases.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    /// Flat offset of each layer's weight block.
    offsets: Vec<usize>,
}

impl Mlp {
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(EmaqError::Structural(
                "an MLP needs an input and an output dimension".into(),
            ));
        }
        if activations.len() != dims.len() - 1 {
            return Err(EmaqError::Structural(format!(
                "expected {} activations for {} layers, got {}",
                dims.len() - 1,
                dims.len() - 1,
                activations.len()
            )));
        }
        if dims.iter().any(|d| *d == 0) {
            return Err(EmaqError::Structural("layer dims must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut total = 0;
        for l in 0..dims.len() - 1 {
            offsets.push(total);
            total += dims[l] * dims[l + 1] + dims[l + 1];
        }
        Ok(Self {
            dims: dims.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; total],
            offsets,
        })
    }

    /// Glorot-uniform weight init, zero biases.
    pub fn glorot<R: Rng>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, activations)?;
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let base = net.offsets[l];
            for i in 0..fan_in * fan_out {
                net.params[base + i] = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(EmaqError::Structural(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    #[inline]
    fn layer_slices(&self, l: usize) -> (&[f64], &[f64]) {
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let base = self.offsets[l];
        let w = &self.params[base..base + fan_in * fan_out];
        let b = &self.params[base + fan_in * fan_out..base + fan_in * fan_out + fan_out];
        (w, b)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.dims[0] {
            return Err(EmaqError::Structural(format!(
                "input has {} entries, expected {}",
                input.len(),
                self.dims[0]
            )));
        }
        let mut x = input.to_vec();
        for l in 0..self.dims.len() - 1 {
            let (w, b) = self.layer_slices(l);
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let act = self.activations[l];
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(&x) {
                    z += wi * xi;
                }
                next.push(act.apply(z));
            }
            x = next;
        }
        Ok(x)
    }

    /// Forward pass retaining per-layer pre- and post-activations.
    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.dims[0] {
            return Err(EmaqError::Structural(format!(
                "input has {} entries, expected {}",
                input.len(),
                self.dims[0]
            )));
        }
        let mut pre = Vec::with_capacity(self.dims.len() - 1);
        let mut post = Vec::with_capacity(self.dims.len());
        post.push(input.to_vec());
        for l in 0..self.dims.len() - 1 {
            let (w, b) = self.layer_slices(l);
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let act = self.activations[l];
            let x = post.last().unwrap();
            let mut z_vec = Vec::with_capacity(fan_out);
            let mut a_vec = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(x) {
                    z += wi * xi;
                }
                z_vec.push(z);
                a_vec.push(act.apply(z));
            }
            pre.push(z_vec);
            post.push(a_vec);
        }
        Ok(ForwardCache { pre, post })
    }

    /// Accumulates parameter gradients for d(loss)/d(output) = output_grad
    /// into `grads` (flat, same layout as params) and returns the input
    /// gradient.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_dim() {
            return Err(EmaqError::Structural(format!(
                "output_grad has {} entries, expected {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(EmaqError::Structural(
                "gradient buffer size does not match parameter count".into(),
            ));
        }
        let mut da = output_grad.to_vec();
        for l in (0..self.dims.len() - 1).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (w, _) = self.layer_slices(l);
            let act = self.activations[l];
            let z = &cache.pre[l];
            let a = &cache.post[l + 1];
            let x = &cache.post[l];
            let base = self.offsets[l];
            let mut dx = vec![0.0; fan_in];
            for o in 0..fan_out {
                let dz = da[o] * act.derivative(z[o], a[o]);
                if dz == 0.0 {
                    continue;
                }
                let wrow = &w[o * fan_in..(o + 1) * fan_in];
                let grow = &mut grads[base + o * fan_in..base + (o + 1) * fan_in];
                for i in 0..fan_in {
                    grow[i] += dz * x[i];
                    dx[i] += dz * wrow[i];
                }
                grads[base + fan_in * fan_out + o] += dz;
            }
            da = dx;
        }
        Ok(da)
    }

    /// Convenience wrapper returning fresh gradients.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let input_grad = self.backward_accumulate(cache, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// EMA update: self <- alpha * self + (1 - alpha) * online.
    pub fn ema_from(&mut self, online: &Mlp, alpha: f64) -> Result<()> {
        if online.params.len() != self.params.len() {
            return Err(EmaqError::Structural(
                "EMA source and target shapes differ".into(),
            ));
        }
        for (t, w) in self.params.iter_mut().zip(&online.params) {
            *t = alpha * *t + (1.0 - alpha) * w;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Pre-activations per layer.
    pub pre: Vec<Vec<f64>>,
    /// post[0] is the input; post[l+1] the activations of layer l.
    pub post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().unwrap()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One Adam update in place. Rejects non-finite gradients without
    /// touching parameters or moments.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(EmaqError::Structural(
                "adam state does not match parameter count".into(),
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(EmaqError::NonFinite("gradient".into()));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
}

/// Writes a network as a one-line JSON header followed by the parameters as
/// little-endian float32.
pub fn write_checkpoint<W: Write>(writer: &mut W, net: &Mlp) -> Result<()> {
    let header = CheckpointHeader {
        layer_dims: net.layer_dims().to_vec(),
        activations: net.activations().to_vec(),
    };
    let line = serde_json::to_string(&header).expect("header serialization cannot fail");
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")?;
    for p in net.params() {
        writer.write_all(&(*p as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(reader: &mut R) -> Result<Mlp> {
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = reader.read(&mut byte)?;
        if n == 0 {
            return Err(EmaqError::Parse("checkpoint header is not terminated".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| EmaqError::Parse(format!("checkpoint header: {e}")))?;
    let mut net = Mlp::zeros(&header.layer_dims, &header.activations)?;
    let mut blob = vec![0u8; net.num_params() * 4];
    reader.read_exact(&mut blob).map_err(|e| {
        EmaqError::Parse(format!("checkpoint body truncated: {e}"))
    })?;
    for (i, chunk) in blob.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(EmaqError::Validation(format!(
                "checkpoint parameter {i} is not finite"
            )));
        }
        net.params_mut()[i] = v;
    }
    Ok(net)
}

/// Central-difference gradient check for a scalar loss over one network.
/// Returns the max relative error across parameters with non-negligible
/// gradient magnitude.
pub fn finite_difference_check<F>(net: &mut Mlp, loss: F, h: f64) -> Result<f64>
where
    F: Fn(&Mlp) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(net);
    let mut worst: f64 = 0.0;
    for i in 0..net.num_params() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + h;
        let (up, _) = loss(net);
        net.params_mut()[i] = orig - h;
        let (down, _) = loss(net);
        net.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > 1e-6 {
            let rel = (analytic[i] - numeric).abs() / scale;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
