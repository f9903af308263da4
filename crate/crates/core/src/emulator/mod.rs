//! Fully connected feed-forward emulators.
//!
//! An [`MlpEmulator`] is an ordered list of dense layers `a ← f(W a + b)`
//! with `W` stored `out × in`, row-major. Besides batched inference it
//! exposes the reverse-mode input gradient ([`MlpEmulator::input_vjp`]) and a
//! factored entry point that starts from the first layer's pre-activation,
//! which the ECA fit uses to avoid touching the full input dimension per row.
//!
//! Networks are exchanged as JSON documents:
//!
//! ```json
//! { "input_dim": 2, "output_dim": 1,
//!   "layers": [ { "weights": [[1.0, 1.0]], "bias": [0.0], "activation": "relu" } ] }
//! ```
//!
//! Any third-party MLP can be brought in by transcribing its matrices.

mod train;

pub use train::{r2_score, train_mlp, Architecture, TrainOptions, TrainReport, TrainedEmulator};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EcaError, Result};
use crate::linalg::{dot_unchecked, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Logistic,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output
    /// `a = f(z)`. The relu derivative at exactly zero is taken as zero.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Logistic => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = EcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "logistic" => Ok(Activation::Logistic),
            "identity" => Ok(Activation::Identity),
            other => Err(EcaError::Format(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(EcaError::dim(format!(
                "bias has length {} but weights have {} rows",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(EcaError::Numerics("non-finite bias entry".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// `z = W a + b`.
    #[inline]
    fn preactivate(&self, input: &[f64], z: &mut [f64]) {
        for (o, (zi, b)) in z.iter_mut().zip(&self.bias).enumerate() {
            *zi = dot_unchecked(self.weights.row(o), input) + b;
        }
    }
}

/// Per-row activation caches for forward and backward passes.
#[derive(Debug, Clone)]
pub struct Scratch {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Gradient with respect to the pre-activation of layer `layer`, valid
    /// after a backward pass.
    pub fn preactivation_grad(&self, layer: usize) -> &[f64] {
        &self.delta[layer]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpEmulator {
    layers: Vec<DenseLayer>,
    input_dim: usize,
    output_dim: usize,
}

impl MlpEmulator {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| EcaError::Format("emulator needs at least one layer".into()))?;
        let input_dim = first.in_dim();
        if input_dim == 0 {
            return Err(EcaError::dim("emulator input dimension is zero"));
        }
        let mut prev = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim() != prev {
                return Err(EcaError::dim(format!(
                    "layer {i} expects {} inputs but previous layer produces {prev}",
                    l.in_dim()
                )));
            }
            if l.out_dim() == 0 {
                return Err(EcaError::dim(format!("layer {i} has no outputs")));
            }
            prev = l.out_dim();
        }
        Ok(Self {
            layers,
            input_dim,
            output_dim: prev,
        })
    }

    /// Single identity layer of size `dim`; `y = x`.
    pub fn identity(dim: usize) -> Result<Self> {
        let mut w = Matrix::zeros(dim, dim);
        for i in 0..dim {
            w.set(i, i, 1.0);
        }
        Self::from_layers(vec![DenseLayer::new(w, vec![0.0; dim], Activation::Identity)?])
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn first_layer(&self) -> &DenseLayer {
        &self.layers[0]
    }

    pub fn scratch(&self) -> Scratch {
        let widths: Vec<usize> = self.layers.iter().map(|l| l.out_dim()).collect();
        Scratch {
            pre: widths.iter().map(|&w| vec![0.0; w]).collect(),
            post: widths.iter().map(|&w| vec![0.0; w]).collect(),
            delta: widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    /// Forward pass of one input row; the result is `scratch.output()`.
    pub fn forward_row<'s>(&self, x: &[f64], scratch: &'s mut Scratch) -> &'s [f64] {
        debug_assert_eq!(x.len(), self.input_dim);
        let first = &self.layers[0];
        first.preactivate(x, &mut scratch.pre[0]);
        self.finish_forward(scratch)
    }

    /// Forward pass starting from a given first-layer pre-activation
    /// `z₁ = W₁ x + b₁`. Equivalent to [`forward_row`](Self::forward_row) on
    /// any `x` producing that `z₁`.
    pub fn forward_from_first_preactivation<'s>(
        &self,
        z1: &[f64],
        scratch: &'s mut Scratch,
    ) -> &'s [f64] {
        scratch.pre[0].copy_from_slice(z1);
        self.finish_forward(scratch)
    }

    fn finish_forward<'s>(&self, scratch: &'s mut Scratch) -> &'s [f64] {
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                layer.preactivate(&scratch.post[l - 1], &mut scratch.pre[l]);
            }
            let act = layer.activation;
            for (a, &z) in scratch.post[l].iter_mut().zip(&scratch.pre[l]) {
                *a = act.apply(z);
            }
        }
        scratch.output()
    }

    /// Backpropagates `upstream = ∂L/∂output` through the cached forward
    /// pass, filling the per-layer pre-activation gradients. Returns the
    /// gradient with respect to the first layer's pre-activation.
    pub fn backward_to_first_preactivation<'s>(
        &self,
        upstream: &[f64],
        scratch: &'s mut Scratch,
    ) -> &'s [f64] {
        let last = self.layers.len() - 1;
        for l in (0..=last).rev() {
            let act = self.layers[l].activation;
            if l == last {
                for (i, d) in scratch.delta[l].iter_mut().enumerate() {
                    *d = upstream[i] * act.derivative(scratch.pre[l][i], scratch.post[l][i]);
                }
            } else {
                let next = &self.layers[l + 1];
                let (head, tail) = scratch.delta.split_at_mut(l + 1);
                let d_next = &tail[0];
                let d_here = &mut head[l];
                d_here.iter_mut().for_each(|d| *d = 0.0);
                for (o, &dn) in d_next.iter().enumerate() {
                    if dn != 0.0 {
                        crate::linalg::axpy(dn, next.weights.row(o), d_here);
                    }
                }
                for (i, d) in d_here.iter_mut().enumerate() {
                    *d *= act.derivative(scratch.pre[l][i], scratch.post[l][i]);
                }
            }
        }
        &scratch.delta[0]
    }

    /// Applies the network to every row of `x`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim {
            return Err(EcaError::dim(format!(
                "emulator expects {} input columns, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        let mut scratch = self.scratch();
        let mut out = Vec::with_capacity(x.rows() * self.output_dim);
        for row in x.row_iter() {
            out.extend_from_slice(self.forward_row(row, &mut scratch));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(EcaError::Numerics("emulator produced a non-finite output".into()));
        }
        Ok(Matrix::from_parts_unchecked(x.rows(), self.output_dim, out))
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::new(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.into_vec())
    }

    /// `Jᵀ · upstream` with `J` the Jacobian of the network at `x`.
    pub fn input_vjp(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim || upstream.len() != self.output_dim {
            return Err(EcaError::dim(format!(
                "vjp expects x of length {} and upstream of length {}, got {} and {}",
                self.input_dim,
                self.output_dim,
                x.len(),
                upstream.len()
            )));
        }
        let mut scratch = self.scratch();
        self.forward_row(x, &mut scratch);
        let d1 = self.backward_to_first_preactivation(upstream, &mut scratch);
        self.first_layer().weights.matvec_transposed(d1)
    }

    pub fn to_document(&self) -> EmulatorDocument {
        EmulatorDocument {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    weights: l.weights.row_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.clone(),
                    activation: l.activation.name().to_string(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: EmulatorDocument) -> Result<Self> {
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.into_iter().enumerate() {
            let activation: Activation = l.activation.parse()?;
            let cols = l.weights.first().map_or(0, Vec::len);
            if l.weights.iter().any(|r| r.len() != cols) {
                return Err(EcaError::Format(format!("layer {i} has ragged weight rows")));
            }
            let weights = Matrix::from_rows(&l.weights)?;
            layers.push(DenseLayer::new(weights, l.bias, activation)?);
        }
        let e = Self::from_layers(layers)?;
        if e.input_dim != doc.input_dim || e.output_dim != doc.output_dim {
            return Err(EcaError::dim(format!(
                "document declares {}→{} but layers chain {}→{}",
                doc.input_dim, doc.output_dim, e.input_dim, e.output_dim
            )));
        }
        Ok(e)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("emulator document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EmulatorDocument = serde_json::from_str(text)
            .map_err(|e| EcaError::Format(format!("emulator document: {e}")))?;
        Self::from_document(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EcaError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| EcaError::io(path, e))
    }
}

/// On-disk form of an emulator. Activations stay strings here so that an
/// unknown name surfaces as a format error rather than a parse failure deep
/// inside serde.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorDocument {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: String,
}
