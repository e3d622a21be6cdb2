use rand::Rng as _;

use crate::error::{ensure_finite, Error, Result};
use crate::rng::Rng;

/// One affine layer. `weight` is stored row-major as `inputs × outputs`, so a
/// batch forward pass is a single `X · W` product.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Fully connected network with ReLU on every hidden layer and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Linear>,
}

/// Activations recorded by [`DenseNet::forward_recorded`], consumed by
/// [`DenseNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    batch: usize,
    // inputs[i] is the (post-activation) input of layer i
    inputs: Vec<Vec<f64>>,
}

impl Tape {
    /// A tape with nothing recorded; backward on it is a state error.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        !self.inputs.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Parameter gradients, shaped exactly like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(x, y)| *x += y);
            b.iter_mut().zip(ob).for_each(|(x, y)| *x += y);
        }
    }

    /// Flat views in the same order as [`DenseNet::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

/// `c = a·b + beta·c` where `a` is `m × k` and `b` is `k × n`, each optionally
/// stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
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
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths were checked against the stated shapes and the
    // strides never address outside them.
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

impl DenseNet {
    /// Builds a network with weights and biases drawn uniformly from
    /// `±1/sqrt(fan_in)`.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "a network needs an input, at least one hidden and an output size; got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("zero-width layer in {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Linear {
                inputs: w[0],
                outputs: w[1],
                weight: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self { layers })
    }

    /// Assembles a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidInput("need at least two layers".into()));
        }
        for l in &layers {
            if l.inputs == 0
                || l.outputs == 0
                || l.weight.len() != l.inputs * l.outputs
                || l.bias.len() != l.outputs
            {
                return Err(Error::InvalidInput(format!(
                    "layer {}x{} has inconsistent storage",
                    l.inputs, l.outputs
                )));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::InvalidInput(format!(
                    "layer output {} does not feed next input {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.param_slices().iter().map(|s| s.len()).collect()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(input, 1)
    }

    /// Forward pass over `batch` row-major samples without recording.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.run(input, batch, None)
    }

    /// Forward pass that records every layer input for a later backward pass.
    pub fn forward_recorded(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, Tape)> {
        let mut tape = Tape {
            batch,
            inputs: Vec::with_capacity(self.layers.len()),
        };
        let out = self.run(input, batch, Some(&mut tape))?;
        Ok((out, tape))
    }

    fn run(&self, input: &[f64], batch: usize, mut tape: Option<&mut Tape>) -> Result<Vec<f64>> {
        let in_dim = self.input_dim();
        if batch == 0 || input.len() != batch * in_dim {
            return Err(Error::InvalidInput(format!(
                "expected {batch} rows of {in_dim} inputs, got {} values",
                input.len()
            )));
        }
        ensure_finite(input, "network input")?;
        let last = self.layers.len() - 1;
        let mut current = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(batch * layer.outputs);
            for _ in 0..batch {
                out.extend_from_slice(&layer.bias);
            }
            gemm(
                batch,
                layer.inputs,
                layer.outputs,
                &current,
                false,
                &layer.weight,
                false,
                1.0,
                &mut out,
            );
            if i != last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            match tape.as_deref_mut() {
                Some(t) => t.inputs.push(std::mem::replace(&mut current, out)),
                None => current = out,
            }
        }
        ensure_finite(&current, "network output")?;
        Ok(current)
    }

    /// Reverse pass: parameter gradients and the gradient at the input.
    pub fn backward(&self, tape: &Tape, grad_output: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let (grads, input_grad) = self.reverse(tape, grad_output, true)?;
        Ok((grads.expect("parameter gradients requested"), input_grad))
    }

    /// Reverse pass that only propagates to the input (no parameter gradients).
    pub fn backward_input(&self, tape: &Tape, grad_output: &[f64]) -> Result<Vec<f64>> {
        Ok(self.reverse(tape, grad_output, false)?.1)
    }

    fn reverse(
        &self,
        tape: &Tape,
        grad_output: &[f64],
        want_params: bool,
    ) -> Result<(Option<Gradients>, Vec<f64>)> {
        if !tape.is_recorded() {
            return Err(Error::State("backward called without a recorded forward pass".into()));
        }
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::State("tape was recorded on a different network".into()));
        }
        let batch = tape.batch;
        if grad_output.len() != batch * self.output_dim() {
            return Err(Error::InvalidInput(format!(
                "output gradient has {} values, expected {}",
                grad_output.len(),
                batch * self.output_dim()
            )));
        }
        ensure_finite(grad_output, "output gradient")?;
        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut delta = grad_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[i];
            if let Some(g) = grads.as_mut() {
                let (gw, gb) = &mut g.layers[i];
                gemm(layer.inputs, batch, layer.outputs, x, true, &delta, false, 0.0, gw);
                for row in delta.chunks_exact(layer.outputs) {
                    gb.iter_mut().zip(row).for_each(|(b, d)| *b += d);
                }
            }
            let mut prev = vec![0.0; batch * layer.inputs];
            gemm(batch, layer.outputs, layer.inputs, &delta, false, &layer.weight, true, 0.0, &mut prev);
            if i > 0 {
                // x is the ReLU output of layer i-1; zero where the unit was inactive
                prev.iter_mut().zip(x).for_each(|(d, &a)| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = prev;
        }
        if let Some(g) = grads.as_ref() {
            for s in g.slices() {
                ensure_finite(s, "parameter gradient")?;
            }
        }
        Ok((grads, delta))
    }
}
