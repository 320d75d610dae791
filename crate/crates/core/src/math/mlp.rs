//! Fixed-topology multilayer perceptron with an explicit reverse pass.
//!
//! Weights are stored `[out, in]` so a single-sample forward map is
//! `y = act(W·x + b)`; batches are row-major `[batch, features]` and the
//! batched map is `Y = act(X·Wᵀ + b)`. The forward pass returns a [`Tape`]
//! holding every intermediate the reverse pass needs; the network itself keeps
//! no activation state.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Scalar, Tensor};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Elu => {
                if z > T::zero() {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and the output `a = act(z)`.
    #[inline]
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Elu => {
                if z > T::zero() {
                    T::one()
                } else {
                    a + T::one()
                }
            }
            Activation::Tanh => T::one() - a * a,
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `[out, in]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
    pub activation: Activation,
    /// Frozen layers still propagate gradients but are skipped by the optimizer.
    pub frozen: bool,
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Intermediates recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    generation: u64,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("tape has at least the input")
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.acts[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Parameter gradients, shaped like the network they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Tensor::zeros(l.weight.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += *y;
            }
            for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(|x| *x *= s);
            l.bias.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Flattened in the same order as [`Mlp::flat_params`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.data().iter().all(|x| x.is_zero()) && l.bias.data().iter().all(|x| x.is_zero())
        })
    }
}

#[derive(Debug, Clone)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
    generation: u64,
}

impl<T: Scalar> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl<T: Scalar> Mlp<T> {
    /// Build from explicit layers, checking that dimensions chain.
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.shape().len() != 2 || l.bias.shape() != [l.out_dim()] {
                return Err(Error::Config(format!(
                    "layer {i}: weight {:?} and bias {:?} are inconsistent",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Config(format!(
                    "layer {} expects {} inputs but layer {i} produces {}",
                    i + 1,
                    pair[1].in_dim(),
                    pair[0].out_dim()
                )));
            }
        }
        Ok(Mlp {
            layers,
            generation: next_generation(),
        })
    }

    /// Glorot-uniform weights, zero biases. `dims = [in, hidden.., out]`.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("invalid MLP dims {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| T::lit(rng.random_range(-bound..bound)))
                    .collect();
                Layer {
                    weight: Tensor::from_vec(&[fan_out, fan_in], w).expect("sized"),
                    bias: Tensor::zeros(&[fan_out]),
                    activation: if i + 1 == n { output } else { hidden },
                    frozen: false,
                }
            })
            .collect();
        Mlp::new(layers)
    }

    /// All-zero parameters.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("invalid MLP dims {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Layer {
                weight: Tensor::zeros(&[dims[i + 1], dims[i]]),
                bias: Tensor::zeros(&[dims[i + 1]]),
                activation: if i + 1 == n { output } else { hidden },
                frozen: false,
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable access; invalidates every outstanding tape.
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.generation = next_generation();
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                context: "Mlp::set_flat_params",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in self.layers_mut() {
            let n = l.weight.len();
            l.weight.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = l.bias.len();
            l.bias.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Copy parameters from a network of identical shape.
    pub fn copy_from(&mut self, other: &Mlp<T>) {
        assert_eq!(self.layers.len(), other.layers.len(), "copy_from: layer count");
        for (dst, src) in self.layers_mut().iter_mut().zip(&other.layers) {
            dst.weight.data_mut().copy_from_slice(src.weight.data());
            dst.bias.data_mut().copy_from_slice(src.bias.data());
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.cols() != self.in_dim() {
            return Err(Error::Dimension {
                context: "Mlp input",
                expected: self.in_dim(),
                got: input.cols(),
            });
        }
        Ok(())
    }

    fn affine(layer: &Layer<T>, x: &Tensor<T>) -> Tensor<T> {
        let (rows, inp, out) = (x.rows(), layer.in_dim(), layer.out_dim());
        let mut z = Tensor::zeros(&[rows, out]);
        for r in 0..rows {
            z.row_slice_mut(r).copy_from_slice(layer.bias.data());
        }
        T::gemm(
            rows,
            inp,
            out,
            T::one(),
            x.data(),
            inp,
            1,
            layer.weight.data(),
            1,
            inp,
            T::one(),
            z.data_mut(),
            out,
            1,
        );
        z
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            let act = layer.activation;
            x = Self::affine(layer, &x).map(|z| act.apply(z));
        }
        Ok(x)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(input.clone());
        for layer in &self.layers {
            let z = Self::affine(layer, acts.last().expect("non-empty"));
            let act = layer.activation;
            let a = z.map(|v| act.apply(v));
            pre.push(z);
            acts.push(a);
        }
        let out = acts.last().expect("non-empty").clone();
        Ok((
            out,
            Tape {
                generation: self.generation,
                acts,
                pre,
            },
        ))
    }

    fn check_tape(&self, tape: &Tape<T>, grad_out: &Tensor<T>) -> Result<()> {
        if tape.generation != self.generation || tape.pre.len() != self.layers.len() {
            return Err(Error::Usage(
                "stale tape: network parameters changed since the forward pass".into(),
            ));
        }
        let out = tape.output();
        if grad_out.rows() != out.rows() || grad_out.cols() != out.cols() {
            return Err(Error::Dimension {
                context: "Mlp::backward grad_out",
                expected: out.len(),
                got: grad_out.len(),
            });
        }
        Ok(())
    }

    fn reverse(
        &self,
        tape: &Tape<T>,
        grad_out: &Tensor<T>,
        want_params: bool,
    ) -> Result<(Option<MlpGrads<T>>, Tensor<T>)> {
        self.check_tape(tape, grad_out)?;
        let rows = grad_out.rows();
        let mut grads = want_params.then(|| MlpGrads::zeros_like(self));
        let mut delta = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (inp, out) = (layer.in_dim(), layer.out_dim());
            let z = &tape.pre[l];
            let a = &tape.acts[l + 1];
            let act = layer.activation;
            for ((d, &zv), &av) in delta.data_mut().iter_mut().zip(z.data()).zip(a.data()) {
                *d *= act.derivative(zv, av);
            }
            if let Some(g) = grads.as_mut() {
                let x = &tape.acts[l];
                let lg = &mut g.layers[l];
                // dW = deltaᵀ · X
                T::gemm(
                    out,
                    rows,
                    inp,
                    T::one(),
                    delta.data(),
                    1,
                    out,
                    x.data(),
                    inp,
                    1,
                    T::zero(),
                    lg.weight.data_mut(),
                    inp,
                    1,
                );
                let bias = lg.bias.data_mut();
                for r in 0..rows {
                    for (b, &d) in bias.iter_mut().zip(delta.row_slice(r)) {
                        *b += d;
                    }
                }
            }
            // dX = delta · W
            let mut dx = Tensor::zeros(&[rows, inp]);
            T::gemm(
                rows,
                out,
                inp,
                T::one(),
                delta.data(),
                out,
                1,
                layer.weight.data(),
                inp,
                1,
                T::zero(),
                dx.data_mut(),
                inp,
                1,
            );
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// Exact reverse-mode gradients of `sum(grad_out ⊙ forward(input))`.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &Tensor<T>) -> Result<(MlpGrads<T>, Tensor<T>)> {
        let (g, dx) = self.reverse(tape, grad_out, true)?;
        Ok((g.expect("requested"), dx))
    }

    /// Gradient with respect to the input only.
    pub fn backward_input(&self, tape: &Tape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.reverse(tape, grad_out, false)?.1)
    }

    /// Freeze every layer except the last one.
    pub fn freeze_trunk(&mut self) {
        let n = self.layers.len();
        for (i, l) in self.layers_mut().iter_mut().enumerate() {
            l.frozen = i + 1 < n;
        }
    }

    /// Re-initialise the final layer (Glorot-uniform weights, zero bias).
    pub fn reset_head<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let last = self.layers.len() - 1;
        let layer = &mut self.layers_mut()[last];
        let bound = (6.0 / (layer.in_dim() + layer.out_dim()) as f64).sqrt();
        for w in layer.weight.data_mut() {
            *w = T::lit(rng.random_range(-bound..bound));
        }
        layer.bias.fill(T::zero());
        layer.frozen = false;
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    activation: l.activation,
                    frozen: l.frozen,
                })
                .collect(),
            generation: next_generation(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity3() -> Mlp<f64> {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        Mlp::new(vec![Layer {
            weight: w,
            bias: Tensor::zeros(&[3]),
            activation: Activation::Identity,
            frozen: false,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = identity3();
        let y = net.predict(&Tensor::row(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_weight_layer_returns_bias() {
        let net = Mlp::new(vec![Layer {
            weight: Tensor::zeros(&[1, 4]),
            bias: Tensor::from_vec(&[1], vec![5.0]).unwrap(),
            activation: Activation::Identity,
            frozen: false,
        }])
        .unwrap();
        let y = net.predict(&Tensor::row(vec![3.0, -1.0, 8.0, 0.5])).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn zero_tanh_net_outputs_zero() {
        let net = Mlp::<f64>::zeros(&[4, 6, 2], Activation::Tanh, Activation::Tanh).unwrap();
        let y = net.predict(&Tensor::row(vec![9.0, -3.0, 1.0, 2.0])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = identity3();
        assert!(matches!(
            net.predict(&Tensor::row(vec![1.0, 2.0])),
            Err(Error::Dimension { .. })
        ));
        let bad = vec![
            Layer {
                weight: Tensor::<f64>::zeros(&[4, 3]),
                bias: Tensor::zeros(&[4]),
                activation: Activation::Elu,
                frozen: false,
            },
            Layer {
                weight: Tensor::zeros(&[2, 5]),
                bias: Tensor::zeros(&[2]),
                activation: Activation::Identity,
                frozen: false,
            },
        ];
        assert!(Mlp::new(bad).is_err());
    }

    #[test]
    fn identity_backward_is_outer_product() {
        let net = identity3();
        let x = Tensor::row(vec![1.0, 2.0, 3.0]);
        let (_, tape) = net.forward(&x).unwrap();
        let g = Tensor::row(vec![0.5, -1.0, 2.0]);
        let (grads, dx) = net.backward(&tape, &g).unwrap();
        assert_eq!(dx.data(), g.data());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(grads.layers[0].weight.data()[i * 3 + j], g.data()[i] * x.data()[j]);
            }
        }
        assert_eq!(grads.layers[0].bias.data(), g.data());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::<f64>::init(&[5, 7, 3], Activation::Elu, Activation::Identity, &mut rng).unwrap();
        let x = Tensor::from_rows(&[[0.1, -0.2, 0.3, 0.4, -0.5], [1.0, 2.0, -1.0, 0.0, 0.5]]).unwrap();
        let (_, tape) = net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&tape, &Tensor::zeros(&[2, 3])).unwrap();
        assert!(grads.is_zero());
        assert!(dx.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::<f64>::init(&[2, 3, 1], Activation::Elu, Activation::Identity, &mut rng).unwrap();
        let (_, tape) = net.forward(&Tensor::row(vec![1.0, 1.0])).unwrap();
        net.layers_mut()[0].bias.data_mut()[0] = 0.3;
        assert!(matches!(
            net.backward(&tape, &Tensor::row(vec![1.0])),
            Err(Error::Usage(_))
        ));
    }
}
