//! Dense feed-forward network with rectifier hidden layers and a linear output.
//!
//! Everything is batched: inputs and activations are row-major `(batch, dim)`
//! buffers. Single-sample calls are batches of one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Parameters of a multilayer perceptron.
///
/// `weights[i]` is row-major with shape `(sizes[i + 1], sizes[i])`;
/// `biases[i]` has length `sizes[i + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activations recorded by a forward pass; enough to backpropagate exactly.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `activations[0]` is the input, the last entry is the network output.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

/// Gradients with the same layout as [`Mlp`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&g| g == 0.0))
    }

    /// Interleaved `[w0, b0, w1, b1, ...]`, matching [`Mlp::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

/// `c = alpha * a · b + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= extent(m, k, rsa, csa));
    assert!(b.len() >= extent(k, n, rsb, csb));
    assert!(c.len() >= extent(m, n, rsc, csc));
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the borrowed slices, and `c` cannot alias `a` or `b` (it is `&mut`).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

impl Mlp {
    /// Uniform initialization in `±1/sqrt(fan_in)`, biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        for (i, w) in mlp.weights.iter_mut().enumerate() {
            let bound = 1.0 / (sizes[i] as f64).sqrt();
            for x in w.iter_mut() {
                *x = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(
                "an MLP needs at least an input and an output layer".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let weights = sizes.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect();
        let biases = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(
        sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let template = Self::zeros(&sizes)?;
        check_len("mlp weight count", template.weights.len(), weights.len())?;
        check_len("mlp bias count", template.biases.len(), biases.len())?;
        for (t, w) in template.weights.iter().zip(&weights) {
            check_len("mlp weight matrix", t.len(), w.len())?;
        }
        for (t, b) in template.biases.iter().zip(&biases) {
            check_len("mlp bias vector", t.len(), b.len())?;
        }
        if weights.iter().chain(&biases).flatten().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                what: "parameter",
                layer: 0,
            });
        }
        Ok(Mlp {
            sizes,
            weights,
            biases,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Interleaved `[w0, b0, w1, b1, ...]`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat parameter vector", self.num_params(), flat.len())?;
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.forward_batch(x, 1)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Output only; no cache kept beyond the call.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<ForwardCache> {
        if batch == 0 {
            return Err(Error::dim("mlp batch size", 1, 0));
        }
        check_len("mlp input", batch * self.input_dim(), x.len())?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_vec());
        let last = self.num_layers() - 1;
        for layer in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let mut out = Vec::with_capacity(batch * n_out);
            for _ in 0..batch {
                out.extend_from_slice(&self.biases[layer]);
            }
            gemm(
                batch,
                n_in,
                n_out,
                1.0,
                &activations[layer],
                (n_in, 1),
                &self.weights[layer],
                (1, n_in),
                1.0,
                &mut out,
                (n_out, 1),
            );
            if layer != last {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            activations.push(out);
        }
        Ok(ForwardCache { batch, activations })
    }

    /// Gradients of `sum(upstream ⊙ output)` with respect to every parameter
    /// and to the input. Parameter gradients are summed over the batch.
    pub fn backprop(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = MlpGrads::zeros_like(self);
        let input_grad = self.backprop_impl(cache, upstream, Some(&mut grads))?;
        Ok((grads, input_grad))
    }

    /// Input gradient only, skipping the parameter-gradient products.
    pub fn backprop_input(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        self.backprop_impl(cache, upstream, None)
    }

    fn backprop_impl(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        mut grads: Option<&mut MlpGrads>,
    ) -> Result<Vec<f64>> {
        let batch = cache.batch;
        check_len("mlp cache depth", self.sizes.len(), cache.activations.len())?;
        for (i, a) in cache.activations.iter().enumerate() {
            check_len("mlp cache activation", batch * self.sizes[i], a.len())?;
        }
        check_len("mlp upstream gradient", batch * self.output_dim(), upstream.len())?;

        let mut delta = upstream.to_vec();
        for layer in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let input = &cache.activations[layer];
            if let Some(g) = grads.as_deref_mut() {
                gemm(
                    n_out,
                    batch,
                    n_in,
                    1.0,
                    &delta,
                    (1, n_out),
                    input,
                    (n_in, 1),
                    0.0,
                    &mut g.weights[layer],
                    (n_in, 1),
                );
                let gb = &mut g.biases[layer];
                gb.iter_mut().for_each(|x| *x = 0.0);
                for row in delta.chunks_exact(n_out) {
                    for (b, d) in gb.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            let mut next = vec![0.0; batch * n_in];
            gemm(
                batch,
                n_out,
                n_in,
                1.0,
                &delta,
                (n_out, 1),
                &self.weights[layer],
                (n_in, 1),
                0.0,
                &mut next,
                (n_in, 1),
            );
            if layer > 0 {
                // Rectifier derivative: active exactly where the stored output is positive.
                for (d, &h) in next.iter_mut().zip(input) {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// `self ← tau·source + (1 − tau)·self`, elementwise.
    pub fn blend_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if source.sizes != self.sizes {
            return Err(Error::Contract(
                "cannot blend networks of different shapes".into(),
            ));
        }
        for (dst, src) in self.tensors_mut().into_iter().zip(source.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}
