//! Fully connected probabilistic network with hand-written backprop.
//!
//! Hidden layers use tanh; the output layer is linear and split into a mean
//! half and a log-variance half. Parameters live in one flat vector, layer by
//! layer: weights stored input-major (`w[i * out + o]`), then biases.

use rand::Rng;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilisticNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

fn layer_offsets(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut total = 0;
    for w in sizes.windows(2) {
        offsets.push(total);
        total += w[0] * w[1] + w[1];
    }
    (offsets, total)
}

/// Four-accumulator dot product; fixed association order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

/// Activations kept for the backward pass.
#[derive(Default)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl ProbabilisticNet {
    /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output layer");
        assert!(sizes[sizes.len() - 1] % 2 == 0, "output splits into mean and log-variance halves");
        let (offsets, total) = layer_offsets(sizes);
        let mut params = vec![0.0; total];
        for (l, w) in sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let off = offsets[l];
            for p in &mut params[off..off + w[0] * w[1]] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Self { sizes: sizes.to_vec(), params, offsets }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        let (offsets, total) = layer_offsets(sizes);
        (params.len() == total).then(|| Self { sizes: sizes.to_vec(), params, offsets })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// Dimension of the predicted mean (half the raw output).
    pub fn target_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1] / 2
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Forward pass over a row-major batch; fills `scratch.acts` with every
    /// layer's output (raw, log-variance not yet clamped).
    fn forward_into(&self, inputs: &[f64], batch: usize, scratch: &mut Scratch) {
        scratch.acts.resize_with(self.sizes.len(), Vec::new);
        scratch.acts[0].clear();
        scratch.acts[0].extend_from_slice(&inputs[..batch * self.sizes[0]]);
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let (head, tail) = scratch.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            y.clear();
            y.resize(batch * n_out, 0.0);
            for r in 0..batch {
                let yr = &mut y[r * n_out..(r + 1) * n_out];
                yr.copy_from_slice(b);
                for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
                    let wi = &w[i * n_out..(i + 1) * n_out];
                    for (yo, wo) in yr.iter_mut().zip(wi) {
                        *yo += xi * wo;
                    }
                }
            }
            if l + 1 < self.n_layers() {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
    }

    /// Mean and clamped log-variance for one input.
    pub fn predict(&self, input: &[f64], scratch: &mut Scratch) -> (Vec<f64>, Vec<f64>) {
        self.forward_into(input, 1, scratch);
        let out = &scratch.acts[self.sizes.len() - 1];
        let d = self.target_dim();
        let mean = out[..d].to_vec();
        let lv = out[d..].iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
        (mean, lv)
    }

    /// Predicted mean only, written into `mean`.
    pub fn predict_mean(&self, input: &[f64], scratch: &mut Scratch, mean: &mut [f64]) {
        self.forward_into(input, 1, scratch);
        let out = &scratch.acts[self.sizes.len() - 1];
        mean.copy_from_slice(&out[..mean.len()]);
    }

    /// Mean Gaussian negative log-likelihood (constant dropped) over a batch.
    pub fn nll_loss(&self, inputs: &[f64], targets: &[f64], scratch: &mut Scratch) -> f64 {
        let batch = targets.len() / self.target_dim();
        self.forward_into(inputs, batch, scratch);
        nll_from_outputs(&scratch.acts[self.sizes.len() - 1], targets, self.target_dim(), batch, None)
    }

    /// Loss and its gradient with respect to every parameter (`grad` is
    /// overwritten).
    pub fn loss_and_grad(&self, inputs: &[f64], targets: &[f64], grad: &mut [f64], scratch: &mut Scratch) -> f64 {
        let d = self.target_dim();
        let batch = targets.len() / d;
        assert!(batch > 0, "empty batch");
        self.forward_into(inputs, batch, scratch);
        let last = self.sizes.len() - 1;
        let mut delta = std::mem::take(&mut scratch.delta);
        let loss = nll_from_outputs(&scratch.acts[last], targets, d, batch, Some(&mut delta));
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut delta_next = std::mem::take(&mut scratch.delta_next);

        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let x = &scratch.acts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for r in 0..batch {
                    let dr = &delta[r * n_out..(r + 1) * n_out];
                    for (gbo, dv) in gb.iter_mut().zip(dr) {
                        *gbo += dv;
                    }
                    for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
                        let gwi = &mut gw[i * n_out..(i + 1) * n_out];
                        for (g, dv) in gwi.iter_mut().zip(dr) {
                            *g += xi * dv;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Back through the weights, then through tanh of the previous layer.
            let w = &self.params[off..off + n_in * n_out];
            delta_next.clear();
            delta_next.resize(batch * n_in, 0.0);
            for r in 0..batch {
                let dr = &delta[r * n_out..(r + 1) * n_out];
                for i in 0..n_in {
                    let a = x[r * n_in + i];
                    delta_next[r * n_in + i] = dot(&w[i * n_out..(i + 1) * n_out], dr) * (1.0 - a * a);
                }
            }
            std::mem::swap(&mut delta, &mut delta_next);
        }
        scratch.delta = delta;
        scratch.delta_next = delta_next;
        loss
    }
}

/// Loss from raw outputs; optionally writes dLoss/dOutput.
fn nll_from_outputs(out: &[f64], targets: &[f64], d: usize, batch: usize, mut dout: Option<&mut Vec<f64>>) -> f64 {
    if let Some(g) = dout.as_deref_mut() {
        g.clear();
        g.resize(batch * 2 * d, 0.0);
    }
    let inv_b = 1.0 / batch as f64;
    let mut total = 0.0;
    for r in 0..batch {
        let o = &out[r * 2 * d..(r + 1) * 2 * d];
        let t = &targets[r * d..(r + 1) * d];
        for j in 0..d {
            let raw_lv = o[d + j];
            let lv = raw_lv.clamp(LOGVAR_MIN, LOGVAR_MAX);
            let inv_var = (-lv).exp();
            let diff = o[j] - t[j];
            total += 0.5 * diff * diff * inv_var + 0.5 * lv;
            if let Some(g) = dout.as_deref_mut() {
                g[r * 2 * d + j] = diff * inv_var * inv_b;
                let inside = (LOGVAR_MIN..=LOGVAR_MAX).contains(&raw_lv);
                g[r * 2 * d + d + j] = if inside { (0.5 - 0.5 * diff * diff * inv_var) * inv_b } else { 0.0 };
            }
        }
    }
    total * inv_b
}

/// Adaptive-moment optimizer state for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}
