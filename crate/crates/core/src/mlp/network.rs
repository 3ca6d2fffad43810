use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fully connected sigmoid network with a single output unit.
///
/// All parameters live in one flat vector. Layer `l` maps `sizes[l]` inputs
/// to `sizes[l + 1]` outputs and owns a contiguous block: the `in × out`
/// weight matrix in row-major order followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_sizes: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    seed: u64,
}

/// Per-layer activations from one forward pass; `[0]` is the input.
pub type Activations = Vec<Vec<f64>>;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Network {
    /// Zero-initialised network.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidNetwork(
                "need at least an input and an output layer".into(),
            ));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s < 1) {
            return Err(Error::InvalidNetwork(format!("layer {pos} has size 0")));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidNetwork(
                "output layer must have one unit".into(),
            ));
        }
        let mut offsets = Vec::with_capacity(layer_sizes.len() - 1);
        let mut total = 0;
        for w in layer_sizes.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        Ok(Network {
            layer_sizes: layer_sizes.to_vec(),
            offsets,
            params: vec![0.0; total],
            seed: 0,
        })
    }

    /// Weights and biases drawn uniformly from `[-init_scale, init_scale]`.
    pub fn init(layer_sizes: &[usize], seed: u64, init_scale: f64) -> Result<Self> {
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(Error::InvalidNetwork(format!(
                "bad init_scale {init_scale}"
            )));
        }
        let mut net = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut net.params {
            *p = init_scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        net.seed = seed;
        Ok(net)
    }

    /// Rebuild from nested matrices (`weights[l][i][j]`, input `i` to unit `j`).
    pub fn from_parts(
        layer_sizes: &[usize],
        weights: &[Vec<Vec<f64>>],
        biases: &[Vec<f64>],
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        net.seed = seed;
        let layers = net.n_layers();
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::InvalidNetwork("wrong number of layers".into()));
        }
        for l in 0..layers {
            let (n_in, n_out) = (layer_sizes[l], layer_sizes[l + 1]);
            if weights[l].len() != n_in
                || weights[l].iter().any(|r| r.len() != n_out)
                || biases[l].len() != n_out
            {
                return Err(Error::InvalidNetwork(format!(
                    "layer {l} has the wrong shape"
                )));
            }
            for (i, row) in weights[l].iter().enumerate() {
                for (j, &w) in row.iter().enumerate() {
                    *net.weight_mut(l, i, j) = w;
                }
            }
            for (j, &b) in biases[l].iter().enumerate() {
                *net.bias_mut(l, j) = b;
            }
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidNetwork("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Number of weight layers.
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn weight_index(&self, l: usize, i: usize, j: usize) -> usize {
        self.offsets[l] + i * self.layer_sizes[l + 1] + j
    }

    fn bias_index(&self, l: usize, j: usize) -> usize {
        self.offsets[l] + self.layer_sizes[l] * self.layer_sizes[l + 1] + j
    }

    pub fn weight(&self, l: usize, i: usize, j: usize) -> f64 {
        self.params[self.weight_index(l, i, j)]
    }

    pub fn weight_mut(&mut self, l: usize, i: usize, j: usize) -> &mut f64 {
        let idx = self.weight_index(l, i, j);
        &mut self.params[idx]
    }

    pub fn bias(&self, l: usize, j: usize) -> f64 {
        self.params[self.bias_index(l, j)]
    }

    pub fn bias_mut(&mut self, l: usize, j: usize) -> &mut f64 {
        let idx = self.bias_index(l, j);
        &mut self.params[idx]
    }

    /// Weight matrix of layer `l` as rows of inputs.
    pub fn weight_matrix(&self, l: usize) -> Vec<Vec<f64>> {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        (0..n_in)
            .map(|i| (0..n_out).map(|j| self.weight(l, i, j)).collect())
            .collect()
    }

    pub fn bias_vector(&self, l: usize) -> Vec<f64> {
        (0..self.layer_sizes[l + 1])
            .map(|j| self.bias(l, j))
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::Dimension {
                expected: self.n_inputs(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-activations of every non-input layer plus activations of every layer.
    fn propagate(&self, x: &[f64]) -> (Vec<Vec<f64>>, Activations) {
        let mut acts: Activations = Vec::with_capacity(self.layer_sizes.len());
        let mut pre = Vec::with_capacity(self.n_layers());
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let input = &acts[l];
            let n_out = self.layer_sizes[l + 1];
            let z: Vec<f64> = (0..n_out)
                .map(|j| {
                    input
                        .iter()
                        .enumerate()
                        .map(|(i, a)| a * self.weight(l, i, j))
                        .sum::<f64>()
                        + self.bias(l, j)
                })
                .collect();
            acts.push(z.iter().map(|&v| sigmoid(v)).collect());
            pre.push(z);
        }
        (pre, acts)
    }

    /// Output probability and cached activations.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, Activations)> {
        self.check_input(x)?;
        let (_, acts) = self.propagate(x);
        Ok((acts.last().unwrap()[0], acts))
    }

    pub fn output(&self, x: &[f64]) -> Result<f64> {
        self.forward(x).map(|(o, _)| o)
    }

    /// Pre-sigmoid output, i.e. the log-odds `ln(o / (1 − o))`.
    pub fn log_odds(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let (pre, _) = self.propagate(x);
        Ok(pre.last().unwrap()[0])
    }

    /// Accumulate `∂E/∂θ` for one example into `grad`, where `dE/do` is
    /// `output_error`.
    fn backprop_into(&self, acts: &Activations, output_error: f64, grad: &mut [f64]) {
        let last = self.n_layers() - 1;
        let o = acts[last + 1][0];
        let mut delta = vec![output_error * o * (1.0 - o)];
        for l in (0..=last).rev() {
            let input = &acts[l];
            let n_out = self.layer_sizes[l + 1];
            for (i, a) in input.iter().enumerate() {
                for (j, d) in delta.iter().enumerate() {
                    grad[self.weight_index(l, i, j)] += a * d;
                }
            }
            for (j, d) in delta.iter().enumerate() {
                grad[self.bias_index(l, j)] += d;
            }
            if l > 0 {
                delta = input
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let back: f64 = (0..n_out).map(|j| self.weight(l, i, j) * delta[j]).sum();
                        back * a * (1.0 - a)
                    })
                    .collect();
            }
        }
    }

    /// Full-batch SSE `½ Σ (o − t)²` and its exact gradient.
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::EmptyInput("gradient of an empty batch"));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            let (o, acts) = self.forward(x)?;
            loss += 0.5 * (o - t) * (o - t);
            self.backprop_into(&acts, o - t, &mut grad);
        }
        Ok((loss, grad))
    }

    pub fn gradient(&self, inputs: &[Vec<f64>], targets: &[f64]) -> Result<Vec<f64>> {
        self.loss_and_gradient(inputs, targets).map(|(_, g)| g)
    }

    pub fn sse_on(&self, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
        let outputs = inputs
            .iter()
            .map(|x| self.output(x))
            .collect::<Result<Vec<_>>>()?;
        sse(&outputs, targets)
    }

    /// `∂ log-odds / ∂x` for one observation (the generalized weights).
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (_, acts) = self.propagate(x);
        let mut delta = vec![1.0];
        for l in (0..self.n_layers()).rev() {
            let input = &acts[l];
            let n_out = self.layer_sizes[l + 1];
            delta = (0..input.len())
                .map(|i| {
                    let back: f64 = (0..n_out).map(|j| self.weight(l, i, j) * delta[j]).sum();
                    if l > 0 {
                        back * input[i] * (1.0 - input[i])
                    } else {
                        back
                    }
                })
                .collect();
        }
        Ok(delta)
    }
}

/// `½ Σ (o − t)²` over all observations.
pub fn sse(outputs: &[f64], targets: &[f64]) -> Result<f64> {
    if outputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: outputs.len(),
            right: targets.len(),
        });
    }
    Ok(0.5
        * outputs
            .iter()
            .zip(targets)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>())
}
