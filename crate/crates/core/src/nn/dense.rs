use rand::Rng;

use super::param::{ParamSlot, Parameterized};
use super::tensor::{matmul_nn, matmul_nt, matmul_tn_acc, Tensor2};
use crate::error::{Result, ZicError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
    Sigmoid,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - 2.0 / ((2.0 * v).exp() + 1.0),
            Activation::Linear => v,
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Fully connected layer `y = act(x W^T + b)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
    grad_w: Tensor2,
    grad_b: Vec<f64>,
    cache: Option<(Tensor2, Tensor2)>,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = Tensor2::from_fn(outputs, inputs, |_, _| rng.random_range(-limit..limit));
        Self::from_parts(weights, vec![0.0; outputs], activation)
    }

    pub fn from_parts(weights: Tensor2, bias: Vec<f64>, activation: Activation) -> Self {
        assert_eq!(weights.rows(), bias.len());
        let (o, i) = weights.shape();
        Self {
            weights,
            bias,
            activation,
            grad_w: Tensor2::zeros(o, i),
            grad_b: vec![0.0; o],
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn grad_weights(&self) -> &Tensor2 {
        &self.grad_w
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_b
    }

    pub fn infer(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.cols() != self.inputs() {
            return Err(ZicError::ShapeMismatch {
                op: "dense_forward",
                expected: format!("{} input columns", self.inputs()),
                got: format!("{}", x.cols()),
            });
        }
        let mut z = matmul_nt(x, &self.weights);
        let cols = z.cols();
        for row in z.data_mut().chunks_exact_mut(cols) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v = self.activation.apply(*v + b);
            }
        }
        Ok(z)
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward(&mut self, x: &Tensor2) -> Result<Tensor2> {
        let y = self.infer(x)?;
        self.cache = Some((x.clone(), y.clone()));
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the gradient wrt the input.
    pub fn backward(&mut self, grad_out: &Tensor2) -> Tensor2 {
        let (x, y) = self.cache.take().expect("dense backward without forward");
        let mut gz = grad_out.clone();
        if self.activation != Activation::Linear {
            for (g, &yv) in gz.data_mut().iter_mut().zip(y.data()) {
                *g *= self.activation.derivative_from_output(yv);
            }
        }
        let cols = gz.cols();
        for row in gz.data().chunks_exact(cols) {
            for (gb, g) in self.grad_b.iter_mut().zip(row) {
                *gb += g;
            }
        }
        matmul_tn_acc(&gz, &x, &mut self.grad_w);
        matmul_nn(&gz, &self.weights)
    }
}

impl Parameterized for DenseLayer {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_>)) {
        let shape = self.weights.shape();
        f(ParamSlot {
            name: "weights",
            shape,
            values: self.weights.data_mut(),
            grads: Some(self.grad_w.data_mut()),
        });
        f(ParamSlot {
            name: "bias",
            shape: (1, self.bias.len()),
            values: &mut self.bias,
            grads: Some(&mut self.grad_b),
        });
    }
}

/// Shortcut connection: elementwise `x + f(x)`. The backward pass hands the
/// incoming gradient unchanged to both summands.
pub fn residual_add(x: &Tensor2, fx: &Tensor2) -> Result<Tensor2> {
    fx.check_shape("residual_add", x.shape())?;
    let mut out = x.clone();
    out.add_assign(fx);
    Ok(out)
}

/// Dense trunk: an input layer, `blocks` equal-width hidden layers (each
/// optionally wrapped in a shortcut), and an output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    input: DenseLayer,
    blocks: Vec<DenseLayer>,
    output: DenseLayer,
    shortcuts: bool,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        hidden: usize,
        blocks: usize,
        outputs: usize,
        output_activation: Activation,
        shortcuts: bool,
        rng: &mut R,
    ) -> Self {
        let input = DenseLayer::new(inputs, hidden, Activation::Tanh, rng);
        let blocks = (0..blocks)
            .map(|_| DenseLayer::new(hidden, hidden, Activation::Tanh, rng))
            .collect();
        let output = DenseLayer::new(hidden, outputs, output_activation, rng);
        Self {
            input,
            blocks,
            output,
            shortcuts,
        }
    }

    pub fn inputs(&self) -> usize {
        self.input.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.output.outputs()
    }

    pub fn infer(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut h = self.input.infer(x)?;
        for b in &self.blocks {
            let f = b.infer(&h)?;
            h = if self.shortcuts { residual_add(&h, &f)? } else { f };
        }
        self.output.infer(&h)
    }

    pub fn forward(&mut self, x: &Tensor2) -> Result<Tensor2> {
        let mut h = self.input.forward(x)?;
        for b in &mut self.blocks {
            let f = b.forward(&h)?;
            h = if self.shortcuts { residual_add(&h, &f)? } else { f };
        }
        self.output.forward(&h)
    }

    pub fn backward(&mut self, grad_out: &Tensor2) -> Tensor2 {
        let mut g = self.output.backward(grad_out);
        for b in self.blocks.iter_mut().rev() {
            let gf = b.backward(&g);
            if self.shortcuts {
                g.add_assign(&gf);
            } else {
                g = gf;
            }
        }
        self.input.backward(&g)
    }
}

impl Parameterized for Mlp {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_>)) {
        self.input.visit_params(f);
        for b in &mut self.blocks {
            b.visit_params(f);
        }
        self.output.visit_params(f);
    }
}
