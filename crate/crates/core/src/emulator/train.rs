//! Desk-scale emulator trainer: mini-batch Adam on mean-squared error with
//! decoupled weight decay and patience-based early stopping on a held-out
//! slice of the training rows.

use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, MlpEmulator};
use crate::error::{EcaError, Result};
use crate::linalg::Matrix;
use crate::optimizer::AdamState;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_activation: Activation,
}

impl Default for Architecture {
    /// Four hidden relu layers of 16 units, linear output.
    fn default() -> Self {
        Self {
            hidden: vec![16; 4],
            activation: Activation::Relu,
            output_activation: Activation::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of rows used for fitting; the rest drives early stopping.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            weight_decay: 1e-3,
            batch_size: 64,
            max_epochs: 2000,
            patience: 50,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_mse: f64,
    pub final_train_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedEmulator {
    pub emulator: MlpEmulator,
    pub report: TrainReport,
}

/// Coefficient of determination averaged uniformly over output columns.
pub fn r2_score(pred: &Matrix, known: &Matrix) -> Result<f64> {
    if pred.shape() != known.shape() {
        return Err(EcaError::dim(format!(
            "r2 of shapes {:?} and {:?}",
            pred.shape(),
            known.shape()
        )));
    }
    let (n, m) = known.shape();
    if n < 2 || m == 0 {
        return Err(EcaError::DegenerateData("r2 needs at least two rows".into()));
    }
    let mut total = 0.0;
    for j in 0..m {
        let mean = (0..n).map(|i| known.get(i, j)).sum::<f64>() / n as f64;
        let (mut ss_res, mut ss_tot) = (0.0, 0.0);
        for i in 0..n {
            ss_res += (known.get(i, j) - pred.get(i, j)).powi(2);
            ss_tot += (known.get(i, j) - mean).powi(2);
        }
        if ss_tot == 0.0 {
            return Err(EcaError::DegenerateData(format!("output column {j} is constant")));
        }
        total += 1.0 - ss_res / ss_tot;
    }
    Ok(total / m as f64)
}

fn init_layers(widths: &[usize], arch: &Architecture, rng: &mut SeededRng) -> Result<Vec<DenseLayer>> {
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for (li, w) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        // uniform(±1/√fan_in) for weights and biases alike
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        let bias = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
        let act = if li + 2 == widths.len() {
            arch.output_activation
        } else {
            arch.activation
        };
        layers.push(DenseLayer::new(Matrix::new(fan_out, fan_in, weights)?, bias, act)?);
    }
    Ok(layers)
}

fn mse(e: &MlpEmulator, x: &Matrix, y: &Matrix) -> f64 {
    let mut scratch = e.scratch();
    let mut acc = 0.0;
    for (xr, yr) in x.row_iter().zip(y.row_iter()) {
        let out = e.forward_row(xr, &mut scratch);
        acc += out.iter().zip(yr).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    acc / (x.rows() * y.cols()) as f64
}

/// Trains a fresh network on `(x, y)`. The returned emulator carries the
/// weights from the epoch with the lowest validation error.
pub fn train_mlp(
    x: &Matrix,
    y: &Matrix,
    arch: &Architecture,
    opts: &TrainOptions,
) -> Result<TrainedEmulator> {
    if x.rows() != y.rows() {
        return Err(EcaError::dim(format!(
            "x has {} rows but y has {}",
            x.rows(),
            y.rows()
        )));
    }
    if x.rows() < 2 {
        return Err(EcaError::DegenerateData("training needs at least two rows".into()));
    }
    if x.cols() == 0 || y.cols() == 0 {
        return Err(EcaError::dim("training data has zero columns"));
    }
    if x.as_slice().iter().chain(y.as_slice()).any(|v| !v.is_finite()) {
        return Err(EcaError::Numerics("training data contains non-finite values".into()));
    }
    if opts.batch_size == 0 || opts.max_epochs == 0 {
        return Err(EcaError::config("batch_size and max_epochs must be positive"));
    }
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
        return Err(EcaError::config("train_fraction must lie in (0, 1)"));
    }
    if arch.hidden.contains(&0) {
        return Err(EcaError::config("hidden layer widths must be positive"));
    }

    let mut rng = SeededRng::new(opts.seed);
    let order = rng.permutation(x.rows());
    let n_fit = ((x.rows() as f64 * opts.train_fraction).round() as usize).clamp(1, x.rows() - 1);
    let x_fit = x.select_rows(&order[..n_fit]);
    let y_fit = y.select_rows(&order[..n_fit]);
    let x_val = x.select_rows(&order[n_fit..]);
    let y_val = y.select_rows(&order[n_fit..]);

    let mut widths = vec![x.cols()];
    widths.extend_from_slice(&arch.hidden);
    widths.push(y.cols());
    let mut net = MlpEmulator::from_layers(init_layers(&widths, arch, &mut rng)?)?;

    let mut w_states = Vec::new();
    let mut b_states = Vec::new();
    for l in net.layers() {
        w_states.push(AdamState::new(l.weights.as_slice().len(), opts.lr, opts.betas)?);
        b_states.push(AdamState::new(l.bias.len(), opts.lr, opts.betas)?);
    }
    let mut w_grads: Vec<Vec<f64>> = net.layers().iter().map(|l| vec![0.0; l.weights.as_slice().len()]).collect();
    let mut b_grads: Vec<Vec<f64>> = net.layers().iter().map(|l| vec![0.0; l.bias.len()]).collect();

    let mut scratch = net.scratch();
    let mut upstream = vec![0.0; y.cols()];
    let mut best = (f64::INFINITY, 0usize, net.clone());
    let mut idx: Vec<usize> = (0..n_fit).collect();
    let mut epochs_run = 0;
    let decay = 1.0 - opts.lr * opts.weight_decay;

    for epoch in 0..opts.max_epochs {
        epochs_run = epoch + 1;
        rng.shuffle(&mut idx);
        for batch in idx.chunks(opts.batch_size) {
            w_grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            b_grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            let scale = 2.0 / (batch.len() * y.cols()) as f64;
            for &r in batch {
                let xr = x_fit.row(r);
                let out = net.forward_row(xr, &mut scratch);
                for ((u, o), t) in upstream.iter_mut().zip(out).zip(y_fit.row(r)) {
                    *u = scale * (o - t);
                }
                net.backward_to_first_preactivation(&upstream, &mut scratch);
                for l in 0..net.layers().len() {
                    let delta = scratch.preactivation_grad(l);
                    let input: &[f64] = if l == 0 { xr } else { &scratch.post[l - 1] };
                    let in_dim = input.len();
                    let gw = &mut w_grads[l];
                    for (o, &d) in delta.iter().enumerate() {
                        if d != 0.0 {
                            crate::linalg::axpy(d, input, &mut gw[o * in_dim..(o + 1) * in_dim]);
                        }
                    }
                    for (gb, &d) in b_grads[l].iter_mut().zip(delta) {
                        *gb += d;
                    }
                }
            }
            for (l, layer) in net.layers_mut().iter_mut().enumerate() {
                let w = layer.weights.as_mut_slice();
                w.iter_mut().for_each(|v| *v *= decay);
                w_states[l].step(w, &w_grads[l])?;
                b_states[l].step(&mut layer.bias, &b_grads[l])?;
            }
        }
        let val = mse(&net, &x_val, &y_val);
        if !val.is_finite() {
            return Err(EcaError::Numerics(format!("validation loss diverged at epoch {epoch}")));
        }
        if val < best.0 {
            best = (val, epoch, net.clone());
        } else if epoch - best.1 >= opts.patience {
            break;
        }
        log::debug!("epoch {epoch}: validation mse {val:.6}");
    }

    let (best_validation_mse, best_epoch, emulator) = best;
    let final_train_mse = mse(&emulator, &x_fit, &y_fit);
    Ok(TrainedEmulator {
        emulator,
        report: TrainReport {
            epochs_run,
            best_epoch,
            best_validation_mse,
            final_train_mse,
        },
    })
}
