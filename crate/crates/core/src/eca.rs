//! Emulator-based component analysis.
//!
//! [`EcaModel`] holds an ordered orthonormal basis `V = {v₁ … v_k}` in
//! (z-standardized) input space together with the emulator used to score
//! it. Components are fitted one at a time: with the earlier vectors `V`
//! frozen, each candidate `v` is scored by projecting every input row onto
//! `span(V) ⊕ v` and asking the emulator to reproduce the known responses.
//! The score is the generalized covered variance
//!
//! ```text
//! ρ = 1 − tr(ȲᵀȲ) / tr(YᵀY),   Ȳ = Y − y_emu(X_proj)
//! ```
//!
//! maximized by mini-batch Adam while `v` is kept on the unit sphere of the
//! orthogonal complement of `V`.
//!
//! The inverse direction (`inverse`, `reconstruct`) searches score vectors
//! `t'` whose expansion `Σ t'ⱼ vⱼ` the emulator maps closest to a given
//! response row.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::emulator::{MlpEmulator, Scratch};
use crate::error::{EcaError, Result};
use crate::linalg::{axpy, complement_project_in_place, dot_unchecked, normalize, Matrix};
use crate::optimizer::AdamState;
use crate::rng::SeededRng;

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BETAS: (f64, f64) = (0.9, 0.999);
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 10_000;
pub const DEFAULT_BATCH_SIZE: usize = 200;
pub const DEFAULT_LR_INV: f64 = 5e-2;
pub const DEFAULT_TOL_INV: f64 = 1e-4;
pub const DEFAULT_EPOCHS_INV: usize = 1000;

/// Options for [`EcaModel::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lr: f64,
    pub betas: (f64, f64),
    pub tol: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: Option<u64>,
    /// Independent random starts per component; the best covered variance wins.
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            betas: DEFAULT_BETAS,
            tol: DEFAULT_TOL,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: None,
            restarts: 1,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        AdamState::new(1, self.lr, self.betas)?;
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(EcaError::config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.restarts == 0 {
            return Err(EcaError::config(
                "epochs, batch_size and restarts must be positive",
            ));
        }
        Ok(())
    }
}

/// Options for [`EcaModel::inverse`] and [`EcaModel::reconstruct`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseOptions {
    pub lr: f64,
    pub betas: (f64, f64),
    pub tol: f64,
    pub epochs: usize,
    /// Accepted for symmetry with [`FitOptions`]; the search starts from
    /// `t' = 0` and draws no random numbers.
    pub seed: Option<u64>,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR_INV,
            betas: DEFAULT_BETAS,
            tol: DEFAULT_TOL_INV,
            epochs: DEFAULT_EPOCHS_INV,
            seed: None,
        }
    }
}

impl InverseOptions {
    pub fn validate(&self) -> Result<()> {
        AdamState::new(1, self.lr, self.betas)?;
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(EcaError::config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.epochs == 0 {
            return Err(EcaError::config("epochs must be positive"));
        }
        Ok(())
    }
}

/// Missing variance `tr(ȲᵀȲ) / tr(YᵀY)` with `Ȳ = y_known − y_pred`,
/// i.e. `1 − ρ`.
pub fn r2loss(y_pred: &Matrix, y_known: &Matrix) -> Result<f64> {
    if y_pred.shape() != y_known.shape() {
        return Err(EcaError::dim(format!(
            "prediction shape {:?} differs from known shape {:?}",
            y_pred.shape(),
            y_known.shape()
        )));
    }
    let total = y_known.frobenius_sq();
    if total.is_nan() || total <= 0.0 {
        return Err(EcaError::DegenerateData(
            "known responses have zero total variance".into(),
        ));
    }
    let missing: f64 = y_known
        .as_slice()
        .iter()
        .zip(y_pred.as_slice())
        .map(|(k, p)| (k - p) * (k - p))
        .sum();
    Ok(missing / total)
}

/// Loss of one candidate component given a frozen basis, with its exact
/// gradient.
///
/// The emulator's first layer is applied in factored form: for a row `x`
/// with frozen scores `tⱼ = vⱼ·x` and candidate score `s = v·x`, the first
/// pre-activation is `Σ tⱼ W₁vⱼ + s W₁v + b₁`. The frozen part is cached per
/// row, so each evaluation touches the input dimension only through `v·x`.
pub struct ComponentObjective<'a> {
    emulator: &'a MlpEmulator,
    x: &'a Matrix,
    y: &'a Matrix,
    /// `Σⱼ tⱼ W₁vⱼ + b₁` per row, `N × h₁`.
    frozen_pre: Vec<f64>,
    hidden: usize,
}

/// Reusable buffers for [`ComponentObjective`].
pub struct ObjectiveScratch {
    net: Scratch,
    w1v: Vec<f64>,
    z1: Vec<f64>,
    upstream: Vec<f64>,
    acc_hidden: Vec<f64>,
}

impl<'a> ComponentObjective<'a> {
    pub fn new<B: AsRef<[f64]>>(
        emulator: &'a MlpEmulator,
        frozen: &[B],
        x: &'a Matrix,
        y: &'a Matrix,
    ) -> Result<Self> {
        check_fit_shapes(emulator, x, y)?;
        let first = emulator.first_layer();
        let hidden = first.out_dim();
        let images: Vec<Vec<f64>> = frozen
            .iter()
            .map(|v| first.weights.matvec(v.as_ref()))
            .collect::<Result<_>>()?;
        let mut frozen_pre = Vec::with_capacity(x.rows() * hidden);
        for row in x.row_iter() {
            let start = frozen_pre.len();
            frozen_pre.extend_from_slice(&first.bias);
            let z = &mut frozen_pre[start..];
            for (v, img) in frozen.iter().zip(&images) {
                axpy(dot_unchecked(v.as_ref(), row), img, z);
            }
        }
        Ok(Self {
            emulator,
            x,
            y,
            frozen_pre,
            hidden,
        })
    }

    pub fn scratch(&self) -> ObjectiveScratch {
        ObjectiveScratch {
            net: self.emulator.scratch(),
            w1v: vec![0.0; self.hidden],
            z1: vec![0.0; self.hidden],
            upstream: vec![0.0; self.emulator.output_dim()],
            acc_hidden: vec![0.0; self.hidden],
        }
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    fn prepare(&self, v: &[f64], s: &mut ObjectiveScratch) {
        let w = &self.emulator.first_layer().weights;
        for (o, out) in s.w1v.iter_mut().enumerate() {
            *out = dot_unchecked(w.row(o), v);
        }
    }

    /// Emulator output for row `r`; returns `v·x_r` alongside.
    #[inline]
    fn predict_row<'s>(
        &self,
        r: usize,
        v: &[f64],
        w1v: &[f64],
        z1: &mut [f64],
        net: &'s mut Scratch,
    ) -> (f64, &'s [f64]) {
        let proj = dot_unchecked(v, self.x.row(r));
        z1.copy_from_slice(&self.frozen_pre[r * self.hidden..(r + 1) * self.hidden]);
        axpy(proj, w1v, z1);
        let out = self.emulator.forward_from_first_preactivation(z1, net);
        (proj, out)
    }

    /// `1 − ρ` over all rows.
    pub fn loss(&self, v: &[f64], s: &mut ObjectiveScratch) -> f64 {
        self.prepare(v, s);
        let mut missing = 0.0;
        let mut total = 0.0;
        for r in 0..self.x.rows() {
            let (_, out) = self.predict_row(r, v, &s.w1v, &mut s.z1, &mut s.net);
            let yr = self.y.row(r);
            missing += out.iter().zip(yr).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
            total += yr.iter().map(|b| b * b).sum::<f64>();
        }
        missing / total
    }

    /// `1 − ρ` restricted to `rows`, writing `∂/∂v` into `grad`. The
    /// gradient is the raw (unconstrained) one.
    pub fn loss_and_grad(
        &self,
        v: &[f64],
        rows: &[usize],
        grad: &mut [f64],
        s: &mut ObjectiveScratch,
    ) -> f64 {
        self.prepare(v, s);
        let total: f64 = rows
            .iter()
            .map(|&r| self.y.row(r).iter().map(|b| b * b).sum::<f64>())
            .sum();
        let scale = 2.0 / total;
        grad.iter_mut().for_each(|g| *g = 0.0);
        s.acc_hidden.iter_mut().for_each(|a| *a = 0.0);
        let mut missing = 0.0;
        for &r in rows {
            let (proj, out) = self.predict_row(r, v, &s.w1v, &mut s.z1, &mut s.net);
            let yr = self.y.row(r);
            let mut row_missing = 0.0;
            for ((u, a), b) in s.upstream.iter_mut().zip(out).zip(yr) {
                let e = a - b;
                row_missing += e * e;
                *u = scale * e;
            }
            missing += row_missing;
            let delta = self
                .emulator
                .backward_to_first_preactivation(&s.upstream, &mut s.net);
            // x_proj = … + (v·x) v, so ∂L/∂v = (g·v) x + (v·x) g with g = W₁ᵀδ;
            // both terms are formed without leaving the hidden width.
            let g_dot_v = dot_unchecked(delta, &s.w1v);
            axpy(g_dot_v, self.x.row(r), grad);
            axpy(proj, delta, &mut s.acc_hidden);
        }
        let w = &self.emulator.first_layer().weights;
        for (o, &a) in s.acc_hidden.iter().enumerate() {
            if a != 0.0 {
                axpy(a, w.row(o), grad);
            }
        }
        missing / total
    }
}

fn check_fit_shapes(emulator: &MlpEmulator, x: &Matrix, y: &Matrix) -> Result<()> {
    if x.cols() != emulator.input_dim() {
        return Err(EcaError::dim(format!(
            "x has {} columns but the emulator takes {}",
            x.cols(),
            emulator.input_dim()
        )));
    }
    if y.cols() != emulator.output_dim() {
        return Err(EcaError::dim(format!(
            "y has {} columns but the emulator produces {}",
            y.cols(),
            emulator.output_dim()
        )));
    }
    if x.rows() != y.rows() {
        return Err(EcaError::dim(format!(
            "x has {} rows but y has {}",
            x.rows(),
            y.rows()
        )));
    }
    Ok(())
}

/// Flips `v` so its entry of largest magnitude is positive.
pub fn canonicalize_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub rank: usize,
    pub epochs: usize,
    pub converged: bool,
    /// Covered variance of the winning restart, from the factored objective.
    pub rho: f64,
    /// Final covered variance of every restart, in order.
    pub restart_rhos: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub seed: u64,
    pub retained: usize,
    pub components: Vec<ComponentReport>,
}

#[derive(Debug, Clone)]
pub struct EcaModel {
    emulator: Arc<MlpEmulator>,
    basis: Vec<Vec<f64>>,
    y_var: Vec<f64>,
    x_var: Vec<f64>,
    seed: Option<u64>,
}

impl EcaModel {
    pub fn new(emulator: Arc<MlpEmulator>) -> Self {
        Self {
            emulator,
            basis: Vec::new(),
            y_var: Vec::new(),
            x_var: Vec::new(),
            seed: None,
        }
    }

    /// Builds a model around an existing basis. Vectors must be orthonormal
    /// within `1e-6`.
    pub fn with_basis(emulator: Arc<MlpEmulator>, basis: Vec<Vec<f64>>) -> Result<Self> {
        let d = emulator.input_dim();
        for (i, v) in basis.iter().enumerate() {
            if v.len() != d {
                return Err(EcaError::dim(format!(
                    "basis vector {i} has length {}, emulator takes {d}",
                    v.len()
                )));
            }
            for (j, w) in basis.iter().enumerate().take(i + 1) {
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot_unchecked(v, w) - target).abs() > 1e-6 {
                    return Err(EcaError::DegenerateVector(format!(
                        "basis vectors {i} and {j} are not orthonormal"
                    )));
                }
            }
        }
        Ok(Self {
            basis,
            ..Self::new(emulator)
        })
    }

    pub fn emulator(&self) -> &Arc<MlpEmulator> {
        &self.emulator
    }

    pub fn input_dim(&self) -> usize {
        self.emulator.input_dim()
    }

    pub fn n_components(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn y_var(&self) -> &[f64] {
        &self.y_var
    }

    pub fn x_var(&self) -> &[f64] {
        &self.x_var
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Seeds the initial guesses and mini-batch order of the next fit.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Replaces component `i` by `−vᵢ`. Coverage is unchanged; the sign of
    /// score column `i` flips.
    pub fn flip_component(&mut self, i: usize) {
        self.basis[i].iter_mut().for_each(|x| *x = -*x);
    }

    fn check_rank(&self, n_comp: usize) -> Result<()> {
        if n_comp > self.basis.len() {
            return Err(EcaError::dim(format!(
                "requested {n_comp} components, model has {}",
                self.basis.len()
            )));
        }
        Ok(())
    }

    /// Scores `t_{i,j} = vⱼ·xᵢ` for the first `n_comp` components.
    pub fn transform(&self, x: &Matrix, n_comp: usize) -> Result<Matrix> {
        self.check_rank(n_comp)?;
        if x.cols() != self.input_dim() {
            return Err(EcaError::dim(format!(
                "x has {} columns, model works in {} dimensions",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut out = Vec::with_capacity(x.rows() * n_comp);
        for row in x.row_iter() {
            out.extend(self.basis[..n_comp].iter().map(|v| dot_unchecked(v, row)));
        }
        Ok(Matrix::from_parts_unchecked(x.rows(), n_comp, out))
    }

    /// Rows `Σⱼ t_{i,j} vⱼ`, using as many components as `t` has columns.
    pub fn expand(&self, t: &Matrix) -> Result<Matrix> {
        let k = t.cols();
        self.check_rank(k)?;
        let d = self.input_dim();
        let mut out = Matrix::zeros(t.rows(), d);
        for (i, scores) in t.row_iter().enumerate() {
            let row = out.row_mut(i);
            for (tj, v) in scores.iter().zip(&self.basis) {
                axpy(*tj, v, row);
            }
        }
        Ok(out)
    }

    /// `expand(transform(x))`.
    pub fn project(&self, x: &Matrix, n_comp: usize) -> Result<Matrix> {
        self.expand(&self.transform(x, n_comp)?)
    }

    /// `ρ` of the emulator evaluated on the rank-`n_comp` projection of `x`.
    pub fn covered_variance(&self, x: &Matrix, y: &Matrix, n_comp: usize) -> Result<f64> {
        check_fit_shapes(&self.emulator, x, y)?;
        let pred = self.emulator.forward(&self.project(x, n_comp)?)?;
        Ok(1.0 - r2loss(&pred, y)?)
    }

    /// Covered variance with all components.
    pub fn test(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        self.covered_variance(x, y, self.basis.len())
    }

    /// `ρ` with `x` as its own target and `project(x)` as the prediction.
    pub fn x_covered_variance(&self, x: &Matrix, n_comp: usize) -> Result<f64> {
        let p = self.project(x, n_comp)?;
        Ok(1.0 - r2loss(&p, x)?)
    }

    /// Fits components up to rank `n_comp`.
    ///
    /// `keep > 0` retains the first `keep` existing components, `keep < 0`
    /// drops the last `|keep|`, and `keep == 0` starts from scratch. The
    /// seed is taken from `opts.seed`, else from [`set_seed`](Self::set_seed)
    /// or a previous fit, else drawn fresh; it is recorded on the model.
    pub fn fit(
        &mut self,
        x: &Matrix,
        y: &Matrix,
        n_comp: usize,
        opts: &FitOptions,
        keep: i64,
    ) -> Result<FitReport> {
        opts.validate()?;
        check_fit_shapes(&self.emulator, x, y)?;
        let d = self.input_dim();
        if n_comp == 0 || n_comp > d {
            return Err(EcaError::config(format!(
                "n_comp must lie in 1..={d}, got {n_comp}"
            )));
        }
        if x.rows() == 0 {
            return Err(EcaError::DegenerateData("no rows to fit".into()));
        }
        if !y.frobenius_sq().is_finite() || y.frobenius_sq() <= 0.0 {
            return Err(EcaError::DegenerateData(
                "responses have zero total variance".into(),
            ));
        }
        if x.rows() < 2 * d {
            log::warn!(
                "fitting {} rows in {d} dimensions; fits become unstable when rows approach the dimension",
                x.rows()
            );
        }

        let existing = self.basis.len() as i64;
        let retained = match keep {
            0 => 0,
            k if k > 0 && k <= existing => k,
            k if k < 0 && -k <= existing => existing + k,
            k => {
                return Err(EcaError::config(format!(
                    "keep = {k} is out of range for a model with {existing} components"
                )))
            }
        } as usize;
        let retained = retained.min(n_comp);

        let seed = opts
            .seed
            .or(self.seed)
            .unwrap_or_else(SeededRng::entropy_seed);
        self.seed = Some(seed);

        let mut basis: Vec<Vec<f64>> = self.basis[..retained].to_vec();
        let mut components = Vec::new();
        for rank in retained..n_comp {
            let (v, report) = self.fit_component(x, y, &basis, opts, seed, rank)?;
            basis.push(v);
            components.push(report);
        }

        self.basis = basis;
        self.y_var.clear();
        self.x_var.clear();
        for k in 1..=n_comp {
            let rho = self.covered_variance(x, y, k)?;
            if !rho.is_finite() {
                return Err(EcaError::Numerics(format!("covered variance at rank {k} is not finite")));
            }
            self.y_var.push(rho);
            self.x_var.push(self.x_covered_variance(x, k)?);
        }
        if self.y_var.windows(2).any(|w| w[1] < w[0]) {
            log::warn!("covered variance decreased with rank: {:?}", self.y_var);
        }
        Ok(FitReport {
            seed,
            retained,
            components,
        })
    }

    fn fit_component(
        &self,
        x: &Matrix,
        y: &Matrix,
        frozen: &[Vec<f64>],
        opts: &FitOptions,
        seed: u64,
        rank: usize,
    ) -> Result<(Vec<f64>, ComponentReport)> {
        let objective = ComponentObjective::new(&self.emulator, frozen, x, y)?;
        let mut best: Option<(f64, Vec<f64>, usize, bool)> = None;
        let mut restart_rhos = Vec::with_capacity(opts.restarts);
        for restart in 0..opts.restarts {
            let mut rng = SeededRng::stream(seed, rank as u64, restart as u64);
            let (v, loss, epochs, converged) = optimize_component(&objective, frozen, opts, &mut rng)?;
            restart_rhos.push(1.0 - loss);
            if best.as_ref().is_none_or(|b| loss < b.0) {
                best = Some((loss, v, epochs, converged));
            }
        }
        let (loss, mut v, epochs, converged) = best.expect("at least one restart");
        canonicalize_sign(&mut v);
        log::info!(
            "component {}: rho {:.6} after {epochs} epochs{}",
            rank + 1,
            1.0 - loss,
            if converged { "" } else { " (epoch limit)" }
        );
        Ok((
            v,
            ComponentReport {
                rank: rank + 1,
                epochs,
                converged,
                rho: 1.0 - loss,
                restart_rhos,
            },
        ))
    }

    /// Searches, independently per row of `y`, the scores `t'` minimizing
    /// the mean-squared error between `y_emu(Σ t'ⱼ vⱼ)` and the row, starting
    /// from `t' = 0`. Returns the scores and the final per-row error.
    pub fn inverse(
        &self,
        y: &Matrix,
        n_comp: usize,
        opts: &InverseOptions,
    ) -> Result<(Matrix, Vec<f64>)> {
        opts.validate()?;
        if self.basis.is_empty() {
            return Err(EcaError::State("model has no fitted components".into()));
        }
        if n_comp > self.basis.len() {
            return Err(EcaError::State(format!(
                "model is fitted to rank {}, inverse asked for {n_comp}",
                self.basis.len()
            )));
        }
        if n_comp == 0 {
            return Err(EcaError::config("inverse needs at least one component"));
        }
        if y.cols() != self.emulator.output_dim() {
            return Err(EcaError::dim(format!(
                "y has {} columns but the emulator produces {}",
                y.cols(),
                self.emulator.output_dim()
            )));
        }
        let search = ScoreSearch::new(&self.emulator, &self.basis[..n_comp])?;
        let mut scores = Vec::with_capacity(y.rows() * n_comp);
        let mut errors = Vec::with_capacity(y.rows());
        let mut buf = search.scratch();
        for (i, target) in y.row_iter().enumerate() {
            let (t, err) = search.solve(target, opts, &mut buf).map_err(|e| match e {
                EcaError::Numerics(m) => EcaError::Numerics(format!("row {i}: {m}")),
                other => other,
            })?;
            scores.extend(t);
            errors.push(err);
        }
        Ok((Matrix::from_parts_unchecked(y.rows(), n_comp, scores), errors))
    }

    /// `expand(inverse(y))`, with the same per-row errors.
    pub fn reconstruct(
        &self,
        y: &Matrix,
        n_comp: usize,
        opts: &InverseOptions,
    ) -> Result<(Matrix, Vec<f64>)> {
        let (t, err) = self.inverse(y, n_comp, opts)?;
        Ok((self.expand(&t)?, err))
    }

    pub fn to_document(&self, emulator_path: impl Into<PathBuf>) -> EcaModelDocument {
        EcaModelDocument {
            input_dim: self.input_dim(),
            output_dim: self.emulator.output_dim(),
            emulator: emulator_path.into(),
            basis: self.basis.clone(),
            y_var: self.y_var.clone(),
            x_var: self.x_var.clone(),
            seed: self.seed,
        }
    }

    pub fn from_document(doc: EcaModelDocument, emulator: Arc<MlpEmulator>) -> Result<Self> {
        if doc.input_dim != emulator.input_dim() || doc.output_dim != emulator.output_dim() {
            return Err(EcaError::dim(format!(
                "model document is {}→{} but the emulator is {}→{}",
                doc.input_dim,
                doc.output_dim,
                emulator.input_dim(),
                emulator.output_dim()
            )));
        }
        if doc.y_var.len() != doc.basis.len() || doc.x_var.len() != doc.basis.len() {
            return Err(EcaError::Format(
                "y_var and x_var must have one entry per component".into(),
            ));
        }
        let mut m = Self::with_basis(emulator, doc.basis)?;
        m.y_var = doc.y_var;
        m.x_var = doc.x_var;
        m.seed = doc.seed;
        Ok(m)
    }

    /// Writes the model; `emulator_path` is stored as given.
    pub fn save(&self, path: impl AsRef<Path>, emulator_path: impl Into<PathBuf>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_document(emulator_path))
            .expect("model document serializes");
        std::fs::write(path, text).map_err(|e| EcaError::io(path, e))
    }

    /// Reads a model and the emulator it references. A relative emulator
    /// path is resolved against the model file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let doc = EcaModelDocument::load(path)?;
        let emu_path = if doc.emulator.is_absolute() {
            doc.emulator.clone()
        } else {
            path.parent().unwrap_or(Path::new(".")).join(&doc.emulator)
        };
        let emulator = Arc::new(MlpEmulator::load(emu_path)?);
        Self::from_document(doc, emulator)
    }
}

/// Rank-1..k Adam search over one component with the complement constraint.
fn optimize_component(
    objective: &ComponentObjective<'_>,
    frozen: &[Vec<f64>],
    opts: &FitOptions,
    rng: &mut SeededRng,
) -> Result<(Vec<f64>, f64, usize, bool)> {
    let d = objective.x.cols();
    let mut v = Vec::new();
    // a draw landing inside span(frozen) has probability zero, but retry anyway
    for _ in 0..16 {
        let mut cand = rng.normal_vec(d);
        complement_project_in_place(&mut cand, frozen)?;
        if let Ok(u) = normalize(&cand) {
            v = u;
            break;
        }
    }
    if v.is_empty() {
        return Err(EcaError::DegenerateVector(
            "could not draw an initial vector outside the frozen span".into(),
        ));
    }

    let mut adam = AdamState::new(d, opts.lr, opts.betas)?;
    let mut scratch = objective.scratch();
    let mut grad = vec![0.0; d];
    let mut order: Vec<usize> = (0..objective.rows()).collect();
    let mut prev = objective.loss(&v, &mut scratch);
    if !prev.is_finite() {
        return Err(EcaError::Numerics("initial loss is not finite".into()));
    }
    let mut epochs = 0;
    let mut converged = false;
    for _ in 0..opts.epochs {
        epochs += 1;
        rng.shuffle(&mut order);
        for batch in order.chunks(opts.batch_size) {
            let batch_loss = objective.loss_and_grad(&v, batch, &mut grad, &mut scratch);
            if !batch_loss.is_finite() {
                return Err(EcaError::Numerics(format!(
                    "mini-batch loss is not finite in epoch {epochs}"
                )));
            }
            complement_project_in_place(&mut grad, frozen)?;
            adam.step(&mut v, &grad)?;
            complement_project_in_place(&mut v, frozen)?;
            v = normalize(&v)?;
        }
        let loss = objective.loss(&v, &mut scratch);
        if !loss.is_finite() {
            return Err(EcaError::Numerics(format!("loss is not finite after epoch {epochs}")));
        }
        let change = (loss - prev).abs();
        log::trace!("epoch {epochs}: loss {loss:.8} (change {change:.2e})");
        prev = loss;
        // tolerance scales with the covered variance, so the flat region
        // around an uninformative start (ρ ≈ 0) never reads as converged
        if change < opts.tol * (1.0 - loss).max(0.0) {
            converged = true;
            break;
        }
    }
    Ok((v, prev, epochs, converged))
}

/// Per-row score search used by `inverse`.
struct ScoreSearch<'a> {
    emulator: &'a MlpEmulator,
    /// `W₁vⱼ` for each component.
    images: Vec<Vec<f64>>,
}

struct SearchScratch {
    net: Scratch,
    z1: Vec<f64>,
    upstream: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> ScoreSearch<'a> {
    fn new(emulator: &'a MlpEmulator, basis: &[Vec<f64>]) -> Result<Self> {
        let w = &emulator.first_layer().weights;
        let images = basis.iter().map(|v| w.matvec(v)).collect::<Result<_>>()?;
        Ok(Self { emulator, images })
    }

    fn scratch(&self) -> SearchScratch {
        let h = self.emulator.first_layer().out_dim();
        SearchScratch {
            net: self.emulator.scratch(),
            z1: vec![0.0; h],
            upstream: vec![0.0; self.emulator.output_dim()],
            grad: vec![0.0; self.images.len()],
        }
    }

    /// Mean-squared error at `t`; fills `s.grad` with its gradient.
    fn eval(&self, t: &[f64], target: &[f64], s: &mut SearchScratch) -> f64 {
        s.z1.copy_from_slice(&self.emulator.first_layer().bias);
        for (tj, img) in t.iter().zip(&self.images) {
            axpy(*tj, img, &mut s.z1);
        }
        let out = self.emulator.forward_from_first_preactivation(&s.z1, &mut s.net);
        let m = target.len() as f64;
        let mut mse = 0.0;
        for ((u, a), b) in s.upstream.iter_mut().zip(out).zip(target) {
            let e = a - b;
            mse += e * e;
            *u = 2.0 * e / m;
        }
        let delta = self
            .emulator
            .backward_to_first_preactivation(&s.upstream, &mut s.net);
        for (g, img) in s.grad.iter_mut().zip(&self.images) {
            *g = dot_unchecked(delta, img);
        }
        mse / m
    }

    fn solve(&self, target: &[f64], opts: &InverseOptions, s: &mut SearchScratch) -> Result<(Vec<f64>, f64)> {
        let k = self.images.len();
        let mut t = vec![0.0; k];
        let mut adam = AdamState::new(k, opts.lr, opts.betas)?;
        let mut loss = self.eval(&t, target, s);
        let mut steps = 0;
        loop {
            if !loss.is_finite() {
                return Err(EcaError::Numerics("inverse loss is not finite".into()));
            }
            if steps == opts.epochs {
                break;
            }
            adam.step(&mut t, &s.grad)?;
            steps += 1;
            let next = self.eval(&t, target, s);
            let change = (next - loss).abs();
            loss = next;
            // relative to the error still left, so rows that start far from
            // their optimum are not cut off while Adam is still descending
            if change < opts.tol * loss || loss == 0.0 {
                break;
            }
        }
        if !loss.is_finite() {
            return Err(EcaError::Numerics("inverse loss is not finite".into()));
        }
        Ok((t, loss))
    }
}

/// On-disk form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcaModelDocument {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Path of the emulator document this model was fitted with.
    pub emulator: PathBuf,
    pub basis: Vec<Vec<f64>>,
    pub y_var: Vec<f64>,
    pub x_var: Vec<f64>,
    pub seed: Option<u64>,
}

impl EcaModelDocument {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EcaError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| EcaError::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{Activation, DenseLayer};
    use std::f64::consts::SQRT_2;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn linear(rows: &[&[f64]]) -> Arc<MlpEmulator> {
        let w = m(rows);
        let bias = vec![0.0; w.rows()];
        Arc::new(
            MlpEmulator::from_layers(vec![DenseLayer::new(w, bias, Activation::Identity).unwrap()])
                .unwrap(),
        )
    }

    fn gaussian(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = SeededRng::new(seed);
        Matrix::new(n, d, rng.normal_vec(n * d)).unwrap()
    }

    fn tanh_net(rng: &mut SeededRng, widths: &[usize]) -> MlpEmulator {
        let mut layers = Vec::new();
        for (k, w) in widths.windows(2).enumerate() {
            let (i, o) = (w[0], w[1]);
            let data = (0..i * o).map(|_| rng.normal() / (i as f64).sqrt()).collect();
            let bias = (0..o).map(|_| 0.3 * rng.normal()).collect();
            let act = if k + 2 == widths.len() { Activation::Identity } else { Activation::Tanh };
            layers.push(DenseLayer::new(Matrix::new(o, i, data).unwrap(), bias, act).unwrap());
        }
        MlpEmulator::from_layers(layers).unwrap()
    }

    fn seeded(seed: u64) -> FitOptions {
        FitOptions { seed: Some(seed), ..FitOptions::default() }
    }

    #[test]
    fn defaults() {
        let f = FitOptions::default();
        assert_eq!((f.lr, f.betas, f.tol, f.epochs, f.batch_size), (1e-3, (0.9, 0.999), 1e-4, 10_000, 200));
        assert_eq!((f.seed, f.restarts), (None, 1));
        let i = InverseOptions::default();
        assert_eq!((i.lr, i.betas, i.tol, i.epochs, i.seed), (0.05, (0.9, 0.999), 1e-4, 1000, None));
        assert!(FitOptions { batch_size: 0, ..f.clone() }.validate().is_err());
        assert!(FitOptions { tol: 0.0, ..f }.validate().is_err());
        assert!(InverseOptions { lr: 0.0, ..i }.validate().is_err());
    }

    #[test]
    fn r2loss_examples() {
        let known = m(&[&[1.0], &[-1.0]]);
        assert_eq!(r2loss(&known, &known).unwrap(), 0.0);
        assert_eq!(r2loss(&m(&[&[0.0], &[0.0]]), &known).unwrap(), 1.0);
        assert!((r2loss(&m(&[&[0.5], &[-0.5]]), &known).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(r2loss(&known, &m(&[&[0.0], &[0.0]])), Err(EcaError::DegenerateData(_))));
        assert!(matches!(r2loss(&m(&[&[1.0]]), &known), Err(EcaError::Dimension(_))));
    }

    #[test]
    fn linear_maps() {
        let e = linear(&[&[1.0, 0.0]]);
        let model = EcaModel::with_basis(e.clone(), vec![vec![1.0, 0.0]]).unwrap();
        let x = m(&[&[3.0, 4.0], &[0.0, 0.0]]);
        assert_eq!(model.transform(&x, 1).unwrap().as_slice(), &[3.0, 0.0]);
        assert_eq!(model.expand(&m(&[&[3.0]])).unwrap().as_slice(), &[3.0, 0.0]);
        assert_eq!(model.project(&x, 1).unwrap().as_slice(), &[3.0, 0.0, 0.0, 0.0]);
        assert!(matches!(model.transform(&x, 2), Err(EcaError::Dimension(_))));
        assert!(matches!(model.transform(&m(&[&[1.0]]), 1), Err(EcaError::Dimension(_))));

        let s = 1.0 / SQRT_2;
        let diag = EcaModel::with_basis(e, vec![vec![s, s], vec![s, -s]]).unwrap();
        let t = diag.transform(&m(&[&[1.0, 1.0]]), 1).unwrap();
        assert!((t.get(0, 0) - SQRT_2).abs() < 1e-15);
        let back = diag.expand(&m(&[&[SQRT_2, 0.0]])).unwrap();
        assert!((back.get(0, 0) - 1.0).abs() < 1e-15 && (back.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(diag.expand(&m(&[&[0.0, 0.0]])).unwrap().as_slice(), &[0.0, 0.0]);

        let orth = diag.project(&m(&[&[2.0, -2.0]]), 1).unwrap();
        assert!(orth.as_slice().iter().all(|v| v.abs() < 1e-10));
        let full = diag.project(&m(&[&[0.3, -1.7]]), 2).unwrap();
        assert!((full.get(0, 0) - 0.3).abs() < 1e-10 && (full.get(0, 1) + 1.7).abs() < 1e-10);
    }

    #[test]
    fn with_basis_rejects_non_orthonormal() {
        let e = linear(&[&[1.0, 0.0]]);
        assert!(matches!(
            EcaModel::with_basis(e.clone(), vec![vec![1.0, 0.0], vec![1.0, 0.0]]),
            Err(EcaError::DegenerateVector(_))
        ));
        assert!(matches!(EcaModel::with_basis(e, vec![vec![1.0]]), Err(EcaError::Dimension(_))));
    }

    #[test]
    fn covered_variance_boundaries() {
        let e = Arc::new(MlpEmulator::identity(2).unwrap());
        let x = gaussian(50, 2, 1);
        let full = EcaModel::with_basis(e.clone(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((full.covered_variance(&x, &x, 2).unwrap() - 1.0).abs() < 1e-12);
        // rank 0 feeds the zero vector, so the prediction is y_emu(0) = 0
        assert!((full.covered_variance(&x, &x, 0).unwrap()).abs() < 1e-12);

        let shifted = Arc::new(
            MlpEmulator::from_layers(vec![DenseLayer::new(
                m(&[&[1.0, 0.0]]),
                vec![0.5],
                Activation::Identity,
            )
            .unwrap()])
            .unwrap(),
        );
        let model = EcaModel::with_basis(shifted, vec![vec![1.0, 0.0]]).unwrap();
        let y = m(&[&[1.0], &[-1.0]]);
        let xs = m(&[&[9.0, 9.0], &[9.0, 9.0]]);
        // constant prediction 0.5: missing (0.25 + 2.25) / 2
        assert!((model.covered_variance(&xs, &y, 0).unwrap() - (1.0 - 1.25)).abs() < 1e-12);
    }

    #[test]
    fn x_covered_variance() {
        let d = 5;
        let x = gaussian(4000, d, 7);
        let e = Arc::new(MlpEmulator::identity(d).unwrap());
        let basis: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let model = EcaModel::with_basis(e, basis).unwrap();
        assert!((model.x_covered_variance(&x, d).unwrap() - 1.0).abs() < 1e-10);
        assert!(model.x_covered_variance(&x, 0).unwrap().abs() < 1e-12);
        assert!((model.x_covered_variance(&x, 1).unwrap() - 1.0 / d as f64).abs() < 0.02);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(11);
        let d = 4;
        let net = tanh_net(&mut rng, &[d, 6, 5, 2]);
        let x = gaussian(30, d, 12);
        let y = gaussian(30, 2, 13);
        let frozen = vec![normalize(&rng.normal_vec(d)).unwrap()];
        let obj = ComponentObjective::new(&net, &frozen, &x, &y).unwrap();
        let mut s = obj.scratch();
        let rows: Vec<usize> = (0..30).collect();
        for _ in 0..20 {
            let v = rng.normal_vec(d);
            let mut grad = vec![0.0; d];
            let base = obj.loss_and_grad(&v, &rows, &mut grad, &mut s);
            assert!((base - obj.loss(&v, &mut s)).abs() < 1e-12);
            let h = 1e-5;
            for i in 0..d {
                let mut p = v.clone();
                let mut q = v.clone();
                p[i] += h;
                q[i] -= h;
                let fd = (obj.loss(&p, &mut s) - obj.loss(&q, &mut s)) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
                assert!(rel < 1e-4, "coordinate {i}: fd {fd} analytic {}", grad[i]);
            }
        }
    }

    #[test]
    fn linear_case_recovers_first_axis() {
        let e = linear(&[&[1.0, 0.0, 0.0]]);
        let x = gaussian(2000, 3, 3);
        let y = Matrix::new(2000, 1, x.column(0)).unwrap();
        let mut model = EcaModel::new(e);
        let report = model.fit(&x, &y, 1, &seeded(5), 0).unwrap();
        let v = &model.basis()[0];
        assert!((v[0] - 1.0).abs() < 1e-2, "v1 = {v:?}");
        assert!(v[0] > 0.0, "sign canonicalized");
        assert_eq!(report.seed, 5);
        assert_eq!(model.y_var().len(), 1);
        assert!(model.y_var()[0] > 0.999);
    }

    fn two_axis_model() -> (EcaModel, Matrix, Matrix) {
        let e = linear(&[&[1.0, 0.0, 0.0], &[0.0, 0.5, 0.0]]);
        let x = gaussian(1000, 3, 21);
        let mut y = Matrix::zeros(1000, 2);
        for i in 0..1000 {
            y.set(i, 0, x.get(i, 0));
            y.set(i, 1, 0.5 * x.get(i, 1));
        }
        (EcaModel::new(e), x, y)
    }

    #[test]
    fn fit_invariants() {
        let (mut model, x, y) = two_axis_model();
        model.fit(&x, &y, 3, &seeded(1), 0).unwrap();
        let b = model.basis();
        for i in 0..3 {
            assert!((dot_unchecked(&b[i], &b[i]).sqrt() - 1.0).abs() < 1e-8);
            for j in 0..i {
                assert!(dot_unchecked(&b[i], &b[j]).abs() < 1e-6);
            }
        }
        assert!(model.y_var().windows(2).all(|w| w[1] >= w[0]), "{:?} {:?}", model.y_var(), b);
        assert!(model.x_var().windows(2).all(|w| w[1] >= w[0]));
        assert!((model.x_var()[2] - 1.0).abs() < 1e-10);

        let rho = model.covered_variance(&x, &y, 2).unwrap();
        let t = model.transform(&x, 2).unwrap();
        let mut flipped = model.clone();
        flipped.flip_component(1);
        assert!((flipped.covered_variance(&x, &y, 2).unwrap() - rho).abs() < 1e-12);
        let tf = flipped.transform(&x, 2).unwrap();
        for i in 0..x.rows() {
            assert_eq!(tf.get(i, 0), t.get(i, 0));
            assert_eq!(tf.get(i, 1), -t.get(i, 1));
        }

        let p = model.project(&x, 2).unwrap();
        assert_eq!(p, model.expand(&t).unwrap());
        let pp = model.project(&p, 2).unwrap();
        assert!(p.as_slice().iter().zip(pp.as_slice()).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn fixed_seed_is_bit_deterministic() {
        let (mut a, x, y) = two_axis_model();
        let mut b = a.clone();
        a.fit(&x, &y, 2, &seeded(9), 0).unwrap();
        b.set_seed(9);
        b.fit(&x, &y, 2, &FitOptions::default(), 0).unwrap();
        assert_eq!(a.basis(), b.basis());
        assert_eq!(a.y_var(), b.y_var());
    }

    #[test]
    fn unseeded_fit_records_its_seed() {
        let (mut a, x, y) = two_axis_model();
        let report = a.fit(&x, &y, 1, &FitOptions::default(), 0).unwrap();
        assert_eq!(a.seed(), Some(report.seed));
        let mut b = EcaModel::new(a.emulator().clone());
        b.fit(&x, &y, 1, &seeded(report.seed), 0).unwrap();
        assert_eq!(a.basis(), b.basis());
    }

    #[test]
    fn keep_semantics() {
        let (mut model, x, y) = two_axis_model();
        model.fit(&x, &y, 3, &seeded(1), 0).unwrap();
        let before = model.basis().to_vec();

        let mut dropped = model.clone();
        let r = dropped.fit(&x, &y, 3, &seeded(2), -1).unwrap();
        assert_eq!(r.retained, 2);
        assert_eq!(r.components.len(), 1);
        assert_eq!(&dropped.basis()[..2], &before[..2]);

        let mut kept = model.clone();
        let r = kept.fit(&x, &y, 2, &seeded(2), 1).unwrap();
        assert_eq!((r.retained, kept.n_components()), (1, 2));
        assert_eq!(kept.basis()[0], before[0]);

        // retaining more than requested truncates
        let mut trunc = model.clone();
        let r = trunc.fit(&x, &y, 1, &seeded(2), 3).unwrap();
        assert_eq!((r.retained, trunc.n_components()), (1, 1));
        assert_eq!(trunc.basis()[0], before[0]);

        assert!(matches!(model.fit(&x, &y, 3, &seeded(2), 4), Err(EcaError::Config(_))));
        assert!(matches!(model.fit(&x, &y, 3, &seeded(2), -4), Err(EcaError::Config(_))));
        assert!(matches!(model.fit(&x, &y, 4, &seeded(2), 0), Err(EcaError::Config(_))));
        assert!(matches!(model.fit(&x, &y, 0, &seeded(2), 0), Err(EcaError::Config(_))));
    }

    #[test]
    fn fit_rejects_bad_data() {
        let (mut model, x, _) = two_axis_model();
        let zeros = Matrix::zeros(1000, 2);
        assert!(matches!(model.fit(&x, &zeros, 1, &seeded(0), 0), Err(EcaError::DegenerateData(_))));
        let narrow = Matrix::zeros(1000, 1);
        assert!(matches!(model.fit(&x, &narrow, 1, &seeded(0), 0), Err(EcaError::Dimension(_))));
    }

    #[test]
    fn inverse_on_identity_chain() {
        let e = linear(&[&[1.0, 0.0]]);
        let model = EcaModel::with_basis(e, vec![vec![1.0, 0.0]]).unwrap();
        let y = m(&[&[0.5]]);
        let (t, err) = model.inverse(&y, 1, &InverseOptions::default()).unwrap();
        assert!((t.get(0, 0) - 0.5).abs() < 1e-3, "t' = {}", t.get(0, 0));
        assert!(err[0] < 1e-4);
        let (x, err2) = model.reconstruct(&y, 1, &InverseOptions::default()).unwrap();
        assert_eq!(x, model.expand(&t).unwrap());
        assert_eq!(err, err2);
        assert!((x.get(0, 0) - 0.5).abs() < 1e-3 && x.get(0, 1) == 0.0);
    }

    #[test]
    fn inverse_self_consistency() {
        let mut rng = SeededRng::new(4);
        let net = Arc::new(tanh_net(&mut rng, &[3, 8, 2]));
        let v = normalize(&[1.0, 1.0, 0.0]).unwrap();
        let model = EcaModel::with_basis(net.clone(), vec![v]).unwrap();
        let t0: Vec<f64> = (0..20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let x = model.expand(&Matrix::new(20, 1, t0.clone()).unwrap()).unwrap();
        let y = net.forward(&x).unwrap();
        let (_, err) = model.inverse(&y, 1, &InverseOptions::default()).unwrap();
        assert!(err.iter().all(|e| *e < 1e-3), "{err:?}");
    }

    #[test]
    fn inverse_state_errors() {
        let e = linear(&[&[1.0, 0.0]]);
        let empty = EcaModel::new(e.clone());
        let y = m(&[&[0.5]]);
        let opts = InverseOptions::default();
        assert!(matches!(empty.inverse(&y, 1, &opts), Err(EcaError::State(_))));
        assert!(matches!(empty.reconstruct(&y, 1, &opts), Err(EcaError::State(_))));
        let model = EcaModel::with_basis(e, vec![vec![1.0, 0.0]]).unwrap();
        assert!(matches!(model.inverse(&y, 2, &opts), Err(EcaError::State(_))));
        assert!(matches!(model.inverse(&m(&[&[0.5, 0.1]]), 1, &opts), Err(EcaError::Dimension(_))));
    }

    #[test]
    fn document_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (mut model, x, y) = two_axis_model();
        model.fit(&x, &y, 2, &seeded(3), 0).unwrap();
        model.emulator().save(dir.path().join("emu.json")).unwrap();
        let path = dir.path().join("model.json");
        model.save(&path, "emu.json").unwrap();
        let back = EcaModel::load(&path).unwrap();
        assert_eq!(back.basis(), model.basis());
        assert_eq!(back.y_var(), model.y_var());
        assert_eq!(back.x_var(), model.x_var());
        assert_eq!(back.seed(), Some(3));
    }

    #[test]
    fn canonical_sign() {
        let mut v = vec![0.1, -0.9, 0.3];
        canonicalize_sign(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
        canonicalize_sign(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
    }
}
