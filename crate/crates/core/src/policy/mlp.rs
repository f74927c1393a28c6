//! Dense multilayer perceptron with batched forward and backward passes.
//!
//! Parameters live in one flat vector; layer `i` stores its weight matrix
//! (`out x in`, row-major) followed by its bias. Batches are row-major
//! `batch x features`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `tanh` through a single `exp`; several times cheaper than libm's.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let t = (-2.0 * x.abs()).exp();
    ((1.0 - t) / (1.0 + t)).copysign(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `layers[0]` is the input; `layers[i]` the output of layer `i`.
    layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("non-empty cache")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// `c = a * b` (+ `c` when `accumulate`), with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index reachable with the given
    // dimensions and the dense strides used by the callers.
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

impl Mlp {
    pub fn num_params_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation: Activation::Tanh,
            params: vec![0.0; Self::num_params_for(sizes)],
        })
    }

    /// Scaled Gaussian init: hidden layers use gain `sqrt(2)/sqrt(fan_in)`,
    /// the output layer `output_gain/sqrt(fan_in)`; biases start at zero.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let n_layers = net.num_layers();
        let mut offset = 0;
        for layer in 0..n_layers {
            let (fan_in, fan_out) = (sizes[layer], sizes[layer + 1]);
            let gain = if layer + 1 == n_layers {
                output_gain
            } else {
                std::f64::consts::SQRT_2
            };
            let dist = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite std");
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = dist.sample(rng);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Offsets of (weights, bias) for each layer.
    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push((off, off + w[0] * w[1]));
            off += w[0] * w[1] + w[1];
        }
        offsets
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {:?}", self.sizes)));
        }
        if self.params.len() != Self::num_params_for(&self.sizes) {
            return Err(Error::Shape(format!(
                "expected {} parameters for {:?}, found {}",
                Self::num_params_for(&self.sizes),
                self.sizes,
                self.params.len()
            )));
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", self.params[i])));
        }
        Ok(())
    }

    /// Forward pass over a `batch x input_dim` block, keeping activations.
    pub fn forward_cached(&self, input: &[f64], batch: usize) -> Result<ForwardCache> {
        if input.len() != batch * self.input_dim() {
            return Err(Error::Shape(format!(
                "input of length {} does not match batch {batch} x {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(input.to_vec());
        let n_layers = self.num_layers();
        for (layer, (w_off, b_off)) in self.layer_offsets().into_iter().enumerate() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let x = &layers[layer];
            let mut y = vec![0.0; batch * fan_out];
            let bias = &self.params[b_off..b_off + fan_out];
            for row in y.chunks_exact_mut(fan_out) {
                row.copy_from_slice(bias);
            }
            // y += x * W^T
            gemm(
                batch,
                fan_in,
                fan_out,
                x,
                (fan_in as isize, 1),
                &self.params[w_off..],
                (1, fan_in as isize),
                &mut y,
                true,
            );
            if layer + 1 < n_layers {
                match self.activation {
                    Activation::Tanh => y.iter_mut().for_each(|v| *v = tanh(*v)),
                }
            }
            layers.push(y);
        }
        Ok(ForwardCache { batch, layers })
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut cache = self.forward_cached(input, batch)?;
        Ok(cache.layers.pop().unwrap())
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64], grad: &mut [f64]) {
        let batch = cache.batch;
        assert_eq!(d_output.len(), batch * self.output_dim());
        assert_eq!(grad.len(), self.params.len());
        let offsets = self.layer_offsets();
        let mut delta = d_output.to_vec();
        for layer in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let (w_off, b_off) = offsets[layer];
            if layer + 1 < self.num_layers() {
                let out = &cache.layers[layer + 1];
                delta.iter_mut().zip(out).for_each(|(d, y)| *d *= 1.0 - y * y);
            }
            let x = &cache.layers[layer];
            // dW += delta^T * x
            gemm(
                fan_out,
                batch,
                fan_in,
                &delta,
                (1, fan_out as isize),
                x,
                (fan_in as isize, 1),
                &mut grad[w_off..w_off + fan_out * fan_in],
                true,
            );
            let db = &mut grad[b_off..b_off + fan_out];
            for row in delta.chunks_exact(fan_out) {
                db.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            if layer > 0 {
                // dx = delta * W
                let mut dx = vec![0.0; batch * fan_in];
                gemm(
                    batch,
                    fan_out,
                    fan_in,
                    &delta,
                    (fan_out as isize, 1),
                    &self.params[w_off..w_off + fan_out * fan_in],
                    (fan_in as isize, 1),
                    &mut dx,
                    false,
                );
                delta = dx;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..net.num_layers() {
            let (fi, fo) = (net.sizes[l], net.sizes[l + 1]);
            let w = &net.params[off..off + fi * fo];
            let b = &net.params[off + fi * fo..off + fi * fo + fo];
            let mut y: Vec<f64> = (0..fo)
                .map(|o| b[o] + (0..fi).map(|i| w[o * fi + i] * a[i]).sum::<f64>())
                .collect();
            if l + 1 < net.num_layers() {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = y;
            off += fi * fo + fo;
        }
        a
    }

    #[test]
    fn tanh_matches_libm() {
        for i in -4000..=4000 {
            let x = i as f64 * 5e-3 + 1e-7;
            assert!((tanh(x) - x.tanh()).abs() < 1e-15, "{x}");
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(800.0), 1.0);
        assert_eq!(tanh(-800.0), -1.0);
    }

    #[test]
    fn batched_forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::random(&[5, 7, 6, 3], 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..4 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = net.forward(&x, 4).unwrap();
        for b in 0..4 {
            let expect = naive_forward(&net, &x[b * 5..(b + 1) * 5]);
            for o in 0..3 {
                assert!((y[b * 3 + o] - expect[o]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[4, 8, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5], 1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::zeros(&[4, 8, 2]).unwrap();
        assert!(net.forward(&[1.0; 5], 1).is_err());
        assert!(Mlp::zeros(&[4]).is_err());
        let mut broken = net.clone();
        broken.params.pop();
        assert!(broken.validate().is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::random(&[4, 8, 2], 1.0, &mut rng).unwrap();
        let batch = 3;
        let x: Vec<f64> = (0..batch * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..batch * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        // loss = sum(weights * output)
        let loss = |n: &Mlp| -> f64 {
            n.forward(&x, batch)
                .unwrap()
                .iter()
                .zip(&weights)
                .map(|(a, b)| a * b)
                .sum()
        };
        let cache = net.forward_cached(&x, batch).unwrap();
        let mut grad = vec![0.0; net.params.len()];
        net.backward(&cache, &weights, &mut grad);
        let eps = 1e-6;
        for (i, g) in grad.iter().enumerate() {
            let mut p = net.clone();
            p.params[i] += eps;
            let up = loss(&p);
            p.params[i] -= 2.0 * eps;
            let down = loss(&p);
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - g).abs() <= 1e-7 + 1e-5 * fd.abs(), "param {i}: {fd} vs {g}");
        }
    }
}
