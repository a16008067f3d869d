//! The preference feature network and everything that trains it.
//!
//! The network is phi(x; W) = sqrt(m) * relu(W_L relu(... relu(W_1 x))),
//! with the rectifier applied after every matrix including the last, and a
//! score f(x) = theta^T phi(x). Initialization is structured in pairs: each
//! hidden matrix is block-diagonal with the *same* Gaussian block repeated,
//! and the final matrix has its right column half equal to the exact
//! negation of its left half. On inputs whose halves are identical (see
//! [`crate::context::symmetrize_context`]) the two branches cancel exactly
//! and the initial feature map is the zero vector — not merely small. The
//! forward pass evaluates each matrix in half/quadrant blocks so this
//! cancellation survives floating point verbatim.
//!
//! Training minimizes a variance-weighted negative log-likelihood over the
//! duel history plus a ridge pull of theta toward its initial value, by
//! manually backpropagated full-batch gradient steps (plain or
//! adaptive-moment). Because the score is linear in theta, the theta
//! subproblem is convex; [`refit_theta`] polishes it with a damped Newton
//! solve at fixed hidden weights.

use crate::error::{Error, Result};
use crate::gram;
use crate::history::HistoryEntry;
use crate::link::LinkFunction;
use crate::rng;
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write};
use std::path::Path;

// ---------------------------------------------------------------------------
// shapes and parameters
// ---------------------------------------------------------------------------

/// Architecture of the feature network. `d` is both the input and the
/// feature dimension; `m` is the width of every hidden layer. Both must be
/// even so the paired init's half-blocks line up, and there must be at
/// least one hidden layer. The network has `hidden_layers + 1` matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub d: usize,
    pub m: usize,
    pub hidden_layers: usize,
}

impl NetworkShape {
    pub fn new(d: usize, m: usize, hidden_layers: usize) -> Result<Self> {
        let shape = NetworkShape {
            d,
            m,
            hidden_layers,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || self.d % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "network input dimension must be even and >= 2, got {}",
                self.d
            )));
        }
        if self.m < 2 || self.m % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "network width must be even and >= 2, got {}",
                self.m
            )));
        }
        if self.hidden_layers < 1 {
            return Err(Error::InvalidInput(
                "network needs at least one hidden layer".into(),
            ));
        }
        Ok(())
    }

    /// Number of weight matrices (hidden layers plus the projection back to d).
    pub fn matrix_count(&self) -> usize {
        self.hidden_layers + 1
    }

    /// (rows, cols) of matrix `l`, 0-based.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        let last = self.matrix_count() - 1;
        match l {
            0 => (self.m, self.d),
            x if x == last => (self.d, self.m),
            _ => (self.m, self.m),
        }
    }

    /// Total number of scalar parameters: theta plus every matrix entry.
    pub fn param_count(&self) -> usize {
        let mut p = self.d;
        for l in 0..self.matrix_count() {
            let (r, c) = self.layer_dims(l);
            p += r * c;
        }
        p
    }
}

/// Learnable state: the last-layer vector theta (with its frozen initial
/// value, the ridge anchor) and the weight matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub shape: NetworkShape,
    pub theta: Array1<f64>,
    pub theta0: Array1<f64>,
    pub layers: Vec<Array2<f64>>,
}

impl NetworkParams {
    fn all_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
            && self
                .layers
                .iter()
                .all(|w| w.iter().all(|v| v.is_finite()))
    }
}

/// Draw the paired structured initialization.
///
/// Hidden matrices are [[B, 0], [0, B]] with one shared block B whose
/// entries are N(0, 4/m); the final matrix is [Omega, -Omega] with Omega
/// entries N(0, 2/m); theta entries are N(0, 1/d). The duplicated block and
/// the exact negation are what make the initial feature map vanish exactly
/// on duplicated-halves inputs.
pub fn init_network<R: Rng + ?Sized>(shape: &NetworkShape, rng_in: &mut R) -> Result<NetworkParams> {
    shape.validate()?;
    let hidden_sd = (4.0 / shape.m as f64).sqrt();
    let final_sd = (2.0 / shape.m as f64).sqrt();
    let theta_sd = (1.0 / shape.d as f64).sqrt();

    let mut layers = Vec::with_capacity(shape.matrix_count());
    for l in 0..shape.matrix_count() {
        let (rows, cols) = shape.layer_dims(l);
        let mut w = Array2::<f64>::zeros((rows, cols));
        if l == shape.matrix_count() - 1 {
            // final matrix: right column half is the exact negation of the left
            let ch = cols / 2;
            for i in 0..rows {
                for j in 0..ch {
                    let v = rng::normal(rng_in, 0.0, final_sd);
                    w[[i, j]] = v;
                    w[[i, j + ch]] = -v;
                }
            }
        } else {
            // hidden matrix: the same block in both diagonal positions
            let (rh, ch) = (rows / 2, cols / 2);
            for i in 0..rh {
                for j in 0..ch {
                    let v = rng::normal(rng_in, 0.0, hidden_sd);
                    w[[i, j]] = v;
                    w[[i + rh, j + ch]] = v;
                }
            }
        }
        layers.push(w);
    }
    let theta = Array1::from_iter((0..shape.d).map(|_| rng::normal(rng_in, 0.0, theta_sd)));
    Ok(NetworkParams {
        shape: *shape,
        theta0: theta.clone(),
        theta,
        layers,
    })
}

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

/// x (N x in) times w^T (in x out), evaluated in half blocks.
///
/// Splitting the input columns (and, for hidden layers, the output columns)
/// makes the two branches of the paired init run through identical kernel
/// calls on identical bits, so duplicated-halves inputs keep bit-identical
/// halves through every hidden layer and cancel to exact zeros in the final
/// matrix. Block results are combined with a single add per element, which
/// is exact when one operand is zero or the exact negation.
fn layer_matmul(w: &Array2<f64>, x: ArrayView2<'_, f64>, split_out: bool) -> Array2<f64> {
    let (out, inn) = w.dim();
    let n = x.nrows();
    let ih = inn / 2;
    let xt = x.slice(s![.., ..ih]);
    let xb = x.slice(s![.., ih..]);
    let mut z = Array2::<f64>::zeros((n, out));
    if split_out {
        let oh = out / 2;
        let tl = w.slice(s![..oh, ..ih]);
        let tr = w.slice(s![..oh, ih..]);
        let bl = w.slice(s![oh.., ..ih]);
        let br = w.slice(s![oh.., ih..]);
        let (mut ztop, mut zbot) = z.multi_slice_mut((s![.., ..oh], s![.., oh..]));
        general_mat_mul(1.0, &xt, &tl.t(), 0.0, &mut ztop);
        general_mat_mul(1.0, &xb, &tr.t(), 1.0, &mut ztop);
        general_mat_mul(1.0, &xt, &bl.t(), 0.0, &mut zbot);
        general_mat_mul(1.0, &xb, &br.t(), 1.0, &mut zbot);
    } else {
        let wl = w.slice(s![.., ..ih]);
        let wr = w.slice(s![.., ih..]);
        general_mat_mul(1.0, &xt, &wl.t(), 0.0, &mut z);
        general_mat_mul(1.0, &xb, &wr.t(), 1.0, &mut z);
    }
    z
}

/// Activations of a batched forward pass: `post[0]` is the input batch,
/// `pre[l]` the pre-activation of matrix l, `post[l+1]` its rectified
/// output (scaled by sqrt(m) after the final matrix). `post.last()` is the
/// feature batch.
pub(crate) struct ForwardPass {
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
}

impl ForwardPass {
    pub fn phi(&self) -> &Array2<f64> {
        self.post.last().expect("forward pass has layers")
    }
}

fn relu_batch(z: &Array2<f64>, scale: f64) -> Array2<f64> {
    z.mapv(|v| if v > 0.0 { v * scale } else { 0.0 })
}

pub(crate) fn forward_rows(
    shape: &NetworkShape,
    layers: &[Array2<f64>],
    x: ArrayView2<'_, f64>,
) -> Result<ForwardPass> {
    if layers.len() != shape.matrix_count() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} weight matrices, got {}",
            shape.matrix_count(),
            layers.len()
        )));
    }
    if x.ncols() != shape.d {
        return Err(Error::ShapeMismatch(format!(
            "input rows have dimension {}, network expects {}",
            x.ncols(),
            shape.d
        )));
    }
    let sqrt_m = (shape.m as f64).sqrt();
    let last = shape.matrix_count() - 1;
    let mut pre = Vec::with_capacity(layers.len());
    let mut post = Vec::with_capacity(layers.len() + 1);
    post.push(x.to_owned());
    for (l, w) in layers.iter().enumerate() {
        let (rows, cols) = shape.layer_dims(l);
        if w.dim() != (rows, cols) {
            return Err(Error::ShapeMismatch(format!(
                "matrix {l} has shape {:?}, expected ({rows}, {cols})",
                w.dim()
            )));
        }
        let z = layer_matmul(w, post[l].view(), l != last);
        let scale = if l == last { sqrt_m } else { 1.0 };
        post.push(relu_batch(&z, scale));
        pre.push(z);
    }
    Ok(ForwardPass { pre, post })
}

/// Feature map of a single input: sqrt(m) times the rectified output of the
/// final matrix.
pub fn feature_map(
    shape: &NetworkShape,
    layers: &[Array2<f64>],
    x: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let row = x.insert_axis(Axis(0));
    let fwd = forward_rows(shape, layers, row)?;
    Ok(fwd.phi().row(0).to_owned())
}

/// Estimated utility theta^T phi(x).
pub fn predict(params: &NetworkParams, x: ArrayView1<'_, f64>) -> Result<f64> {
    let phi = feature_map(&params.shape, &params.layers, x)?;
    Ok(params.theta.dot(&phi))
}

// ---------------------------------------------------------------------------
// loss and gradient
// ---------------------------------------------------------------------------

/// Gradients of the training objective with respect to theta and every
/// weight matrix.
#[derive(Clone, Debug)]
pub struct LossGradient {
    pub theta: Array1<f64>,
    pub layers: Vec<Array2<f64>>,
}

impl LossGradient {
    fn all_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
            && self
                .layers
                .iter()
                .all(|w| w.iter().all(|v| v.is_finite()))
    }
}

fn validate_history(history: &[HistoryEntry], d: usize) -> Result<()> {
    for (i, entry) in history.iter().enumerate() {
        if entry.x_first.len() != d || entry.x_second.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "history entry {i} has context dimension {}/{}, expected {d}",
                entry.x_first.len(),
                entry.x_second.len()
            )));
        }
        let z = entry.record.zeta;
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::InvalidInput(format!(
                "history entry {i} has non-positive variance clamp {z}"
            )));
        }
        if entry.record.outcome > 1 {
            return Err(Error::InvalidInput(format!(
                "history entry {i} has outcome {}, expected 0 or 1",
                entry.record.outcome
            )));
        }
    }
    Ok(())
}

fn stack_contexts(history: &[HistoryEntry], d: usize) -> Array2<f64> {
    let mut x = Array2::<f64>::zeros((2 * history.len(), d));
    for (i, entry) in history.iter().enumerate() {
        x.row_mut(2 * i).assign(&entry.x_first);
        x.row_mut(2 * i + 1).assign(&entry.x_second);
    }
    x
}

fn ridge_term(theta: &Array1<f64>, theta0: &Array1<f64>, lambda: f64) -> f64 {
    let mut s = 0.0;
    for (a, b) in theta.iter().zip(theta0.iter()) {
        let dlt = a - b;
        s += dlt * dlt;
    }
    0.5 * lambda * s
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidInput(format!(
            "ridge weight must be a positive real, got {lambda}"
        )));
    }
    Ok(())
}

/// Implementation shared by [`loss`] and [`loss_gradient`]: one batched
/// forward pass, and optionally one batched backward pass.
fn loss_parts(
    params: &NetworkParams,
    history: &[HistoryEntry],
    lambda: f64,
    want_grad: bool,
) -> Result<(f64, Option<LossGradient>)> {
    check_lambda(lambda)?;
    let d = params.shape.d;
    validate_history(history, d)?;
    let link = LinkFunction::Logistic;
    let sqrt_m = (params.shape.m as f64).sqrt();

    if history.is_empty() {
        let value = ridge_term(&params.theta, &params.theta0, lambda);
        let grad = want_grad.then(|| LossGradient {
            theta: (&params.theta - &params.theta0) * lambda,
            layers: params
                .layers
                .iter()
                .map(|w| Array2::zeros(w.dim()))
                .collect(),
        });
        return Ok((value, grad));
    }

    let x = stack_contexts(history, d);
    let fwd = forward_rows(&params.shape, &params.layers, x.view())?;
    let f: Array1<f64> = fwd.phi().dot(&params.theta);

    let n = history.len();
    let mut value = ridge_term(&params.theta, &params.theta0, lambda);
    // per-row weights dL/df; row 2i is the first arm of duel i, 2i+1 the second
    let mut row_w = Array1::<f64>::zeros(2 * n);
    for (i, entry) in history.iter().enumerate() {
        let zeta = entry.record.zeta;
        let inv_z2 = 1.0 / (zeta * zeta);
        let df = f[2 * i] - f[2 * i + 1];
        let signed = if entry.record.outcome == 1 { df } else { -df };
        value += link.neg_log(signed)? * inv_z2;
        if want_grad {
            let c = (link.eval(df)? - entry.record.outcome as f64) * inv_z2;
            row_w[2 * i] = c;
            row_w[2 * i + 1] = -c;
        }
    }
    if !value.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "objective evaluated to {value} over {n} records"
        )));
    }
    if !want_grad {
        return Ok((value, None));
    }

    // backward pass
    let last = params.shape.matrix_count() - 1;
    let mut grads: Vec<Array2<f64>> = params
        .layers
        .iter()
        .map(|w| Array2::zeros(w.dim()))
        .collect();

    // dL/dZ_last = (row_w outer theta) .* relu'(Z_last) * sqrt(m)
    let mut dz = Array2::<f64>::zeros(fwd.pre[last].dim());
    for (r, mut row) in dz.axis_iter_mut(Axis(0)).enumerate() {
        let wr = row_w[r] * sqrt_m;
        for (j, slot) in row.iter_mut().enumerate() {
            if fwd.pre[last][[r, j]] > 0.0 {
                *slot = wr * params.theta[j];
            }
        }
    }
    general_mat_mul(1.0, &dz.t(), &fwd.post[last], 0.0, &mut grads[last]);
    let mut upstream = dz.dot(&params.layers[last]);
    for l in (0..last).rev() {
        for (slot, z) in upstream.iter_mut().zip(fwd.pre[l].iter()) {
            if *z <= 0.0 {
                *slot = 0.0;
            }
        }
        general_mat_mul(1.0, &upstream.t(), &fwd.post[l], 0.0, &mut grads[l]);
        if l > 0 {
            upstream = upstream.dot(&params.layers[l]);
        }
    }

    let mut gtheta: Array1<f64> = fwd.phi().t().dot(&row_w);
    gtheta += &((&params.theta - &params.theta0) * lambda);

    let grad = LossGradient {
        theta: gtheta,
        layers: grads,
    };
    if !grad.all_finite() {
        return Err(Error::NumericalFailure(
            "gradient contains a non-finite entry".into(),
        ));
    }
    Ok((value, Some(grad)))
}

/// Variance-weighted negative log-likelihood of the duel history under the
/// current parameters, plus the ridge pull (lambda/2)*||theta - theta0||^2.
/// Feature differences are recomputed from the raw contexts, not taken from
/// the frozen records.
pub fn loss(params: &NetworkParams, history: &[HistoryEntry], lambda: f64) -> Result<f64> {
    loss_parts(params, history, lambda, false).map(|(v, _)| v)
}

/// Exact gradient of [`loss`] with respect to theta and all weight
/// matrices, by manual reverse-mode accumulation. The rectifier's
/// subgradient at zero is taken to be zero.
pub fn loss_gradient(
    params: &NetworkParams,
    history: &[HistoryEntry],
    lambda: f64,
) -> Result<LossGradient> {
    loss_parts(params, history, lambda, true).map(|(_, g)| g.expect("gradient requested"))
}

/// Gradient of the score f(x) = theta^T phi(x) with respect to every
/// parameter, flattened as [theta block, matrix 0 row-major, matrix 1, ...]
/// (length `shape.param_count()`). This is the per-arm feature vector of
/// the full-parameter baseline; the theta block is just phi(x).
pub fn score_gradient(params: &NetworkParams, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let shape = &params.shape;
    let fwd = forward_rows(shape, &params.layers, x.insert_axis(Axis(0)))?;
    let sqrt_m = (shape.m as f64).sqrt();
    let last = shape.matrix_count() - 1;
    let mut out = Array1::<f64>::zeros(shape.param_count());

    let mut offsets = Vec::with_capacity(shape.matrix_count() + 1);
    offsets.push(shape.d);
    for l in 0..shape.matrix_count() {
        let (r, c) = shape.layer_dims(l);
        offsets.push(offsets[l] + r * c);
    }

    for (slot, v) in out.iter_mut().zip(fwd.phi().row(0).iter()) {
        *slot = *v;
    }

    let rows_last = shape.layer_dims(last).0;
    let mut dz = Array1::<f64>::zeros(rows_last);
    for j in 0..rows_last {
        if fwd.pre[last][[0, j]] > 0.0 {
            dz[j] = params.theta[j] * sqrt_m;
        }
    }
    let post = fwd.post[last].row(0);
    for j in 0..rows_last {
        let base = offsets[last] + j * post.len();
        for (k, p) in post.iter().enumerate() {
            out[base + k] = dz[j] * p;
        }
    }
    let mut upstream: Array1<f64> = params.layers[last].t().dot(&dz);
    for l in (0..last).rev() {
        let rows = shape.layer_dims(l).0;
        let mut dzl = upstream;
        for i in 0..rows {
            if fwd.pre[l][[0, i]] <= 0.0 {
                dzl[i] = 0.0;
            }
        }
        let post = fwd.post[l].row(0);
        for i in 0..rows {
            let base = offsets[l] + i * post.len();
            for (k, p) in post.iter().enumerate() {
                out[base + k] = dzl[i] * p;
            }
        }
        upstream = params.layers[l].t().dot(&dzl);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// theta/W -= gamma * grad
    PlainGd,
    /// Adam with the usual defaults (0.9, 0.999, 1e-8) and step gamma;
    /// moment buffers start at zero for every episode.
    AdaptiveMoment,
}

/// Knobs of the per-episode trainer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Gradient step size.
    pub gamma: f64,
    /// Full-batch gradient steps per episode.
    pub n_steps: usize,
    /// Train every `episode_len` rounds.
    pub episode_len: u64,
    pub optimizer: Optimizer,
    /// After the gradient steps, re-solve the convex theta subproblem at
    /// fixed hidden weights.
    pub refit: bool,
    pub refit_tol: f64,
    pub refit_max_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.01,
            n_steps: 20,
            episode_len: 1,
            optimizer: Optimizer::AdaptiveMoment,
            refit: false,
            refit_tol: 1e-8,
            refit_max_iters: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "gamma: step size must be a positive real, got {}",
                self.gamma
            )));
        }
        if self.episode_len == 0 {
            return Err(Error::InvalidInput(
                "episode_len: episode length must be at least 1".into(),
            ));
        }
        if !(self.refit_tol.is_finite() && self.refit_tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "refit_tol: refit tolerance must be a positive real, got {}",
                self.refit_tol
            )));
        }
        Ok(())
    }
}

/// Convergence report of a convex refit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefitReport {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Output of one training episode.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub refit: Option<RefitReport>,
}

struct AdamState {
    t: f64,
    m_theta: Array1<f64>,
    v_theta: Array1<f64>,
    m_layers: Vec<Array2<f64>>,
    v_layers: Vec<Array2<f64>>,
}

impl AdamState {
    fn new(params: &NetworkParams) -> Self {
        AdamState {
            t: 0.0,
            m_theta: Array1::zeros(params.theta.len()),
            v_theta: Array1::zeros(params.theta.len()),
            m_layers: params.layers.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_layers: params.layers.iter().map(|w| Array2::zeros(w.dim())).collect(),
        }
    }

    fn step(&mut self, params: &mut NetworkParams, grad: &LossGradient, gamma: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1.0;
        let c1 = 1.0 - B1.powf(self.t);
        let c2 = 1.0 - B2.powf(self.t);
        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= gamma * (*m / c1) / ((*v / c2).sqrt() + EPS);
        };
        for i in 0..params.theta.len() {
            apply(
                &mut params.theta[i],
                grad.theta[i],
                &mut self.m_theta[i],
                &mut self.v_theta[i],
            );
        }
        for l in 0..params.layers.len() {
            let (w, gw) = (&mut params.layers[l], &grad.layers[l]);
            let (m, v) = (&mut self.m_layers[l], &mut self.v_layers[l]);
            for ((pw, pg), (pm, pv)) in w
                .iter_mut()
                .zip(gw.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                apply(pw, *pg, pm, pv);
            }
        }
    }
}

/// Run one training episode: `n_steps` full-batch gradient steps on
/// (theta, W) jointly, then optionally the convex theta refit. The input
/// parameters are not mutated; the updated set is returned. Fails with a
/// numerical-failure error if the objective or its gradient stops being
/// finite.
pub fn train_episode(
    params: &NetworkParams,
    history: &[HistoryEntry],
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_lambda(lambda)?;
    let mut params = params.clone();
    let mut adam = matches!(cfg.optimizer, Optimizer::AdaptiveMoment)
        .then(|| AdamState::new(&params));
    for _ in 0..cfg.n_steps {
        let (_, grad) = loss_parts(&params, history, lambda, true)?;
        let grad = grad.expect("gradient requested");
        match adam.as_mut() {
            Some(state) => state.step(&mut params, &grad, cfg.gamma),
            None => {
                params.theta.scaled_add(-cfg.gamma, &grad.theta);
                for (w, g) in params.layers.iter_mut().zip(&grad.layers) {
                    w.scaled_add(-cfg.gamma, g);
                }
            }
        }
        if !params.all_finite() {
            return Err(Error::NumericalFailure(
                "parameters became non-finite during training".into(),
            ));
        }
    }
    let mut refit_report = None;
    if cfg.refit {
        let result = refit_theta(&params, history, lambda, cfg.refit_tol, cfg.refit_max_iters)?;
        params.theta = result.theta;
        refit_report = Some(result.report);
    }
    Ok(TrainOutcome {
        params,
        refit: refit_report,
    })
}

// ---------------------------------------------------------------------------
// convex theta refit (generalized-linear ridge fit at fixed features)
// ---------------------------------------------------------------------------

/// Result of a convex theta solve.
#[derive(Clone, Debug)]
pub struct RefitResult {
    pub theta: Array1<f64>,
    pub report: RefitReport,
}

/// Minimize the weighted duel log-likelihood plus ridge in theta alone,
/// with feature differences taken under the *current* hidden weights.
pub fn refit_theta(
    params: &NetworkParams,
    history: &[HistoryEntry],
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<RefitResult> {
    check_lambda(lambda)?;
    let d = params.shape.d;
    validate_history(history, d)?;
    let mut dphi = Array2::<f64>::zeros((history.len(), d));
    if !history.is_empty() {
        let x = stack_contexts(history, d);
        let fwd = forward_rows(&params.shape, &params.layers, x.view())?;
        let phi = fwd.phi();
        for i in 0..history.len() {
            let diff = &phi.row(2 * i) - &phi.row(2 * i + 1);
            dphi.row_mut(i).assign(&diff);
        }
    }
    let outcomes: Vec<u8> = history.iter().map(|e| e.record.outcome).collect();
    let zetas: Vec<f64> = history.iter().map(|e| e.record.zeta).collect();
    glm_refit(
        dphi.view(),
        &outcomes,
        &zetas,
        lambda,
        &params.theta,
        &params.theta0,
        tol,
        max_iters,
    )
}

/// Weighted logistic ridge objective on precomputed feature differences:
/// sum_i -ln g(s_i * theta^T dphi_i) / zeta_i^2 + (lambda/2)||theta-theta0||^2.
pub fn glm_loss(
    dphi: ArrayView2<'_, f64>,
    outcomes: &[u8],
    zetas: &[f64],
    lambda: f64,
    theta: &Array1<f64>,
    theta0: &Array1<f64>,
) -> Result<f64> {
    let link = LinkFunction::Logistic;
    let mut value = ridge_term(theta, theta0, lambda);
    for i in 0..dphi.nrows() {
        let df = dphi.row(i).dot(theta);
        let signed = if outcomes[i] == 1 { df } else { -df };
        value += link.neg_log(signed)? / (zetas[i] * zetas[i]);
    }
    if !value.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "convex objective evaluated to {value}"
        )));
    }
    Ok(value)
}

/// Gradient of [`glm_loss`]: sum_i (g(theta^T dphi_i) - o_i) dphi_i / zeta_i^2
/// + lambda (theta - theta0).
pub fn glm_gradient(
    dphi: ArrayView2<'_, f64>,
    outcomes: &[u8],
    zetas: &[f64],
    lambda: f64,
    theta: &Array1<f64>,
    theta0: &Array1<f64>,
) -> Result<Array1<f64>> {
    let link = LinkFunction::Logistic;
    let mut grad = (theta - theta0) * lambda;
    for i in 0..dphi.nrows() {
        let row = dphi.row(i);
        let df = row.dot(theta);
        let c = (link.eval(df)? - outcomes[i] as f64) / (zetas[i] * zetas[i]);
        grad.scaled_add(c, &row);
    }
    Ok(grad)
}

/// `n_steps` full-batch optimizer steps on [`glm_loss`] in theta alone; the
/// identity-feature agent's trainer. Moment buffers start fresh, mirroring
/// [`train_episode`].
pub fn glm_gd(
    dphi: ArrayView2<'_, f64>,
    outcomes: &[u8],
    zetas: &[f64],
    lambda: f64,
    theta_start: &Array1<f64>,
    theta0: &Array1<f64>,
    cfg: &TrainConfig,
) -> Result<Array1<f64>> {
    cfg.validate()?;
    check_lambda(lambda)?;
    let d = theta_start.len();
    let mut theta = theta_start.clone();
    let (mut m1, mut m2) = (Array1::<f64>::zeros(d), Array1::<f64>::zeros(d));
    for step in 0..cfg.n_steps {
        let grad = glm_gradient(dphi, outcomes, zetas, lambda, &theta, theta0)?;
        match cfg.optimizer {
            Optimizer::PlainGd => theta.scaled_add(-cfg.gamma, &grad),
            Optimizer::AdaptiveMoment => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                let t = (step + 1) as f64;
                let (c1, c2) = (1.0 - B1.powf(t), 1.0 - B2.powf(t));
                for i in 0..d {
                    m1[i] = B1 * m1[i] + (1.0 - B1) * grad[i];
                    m2[i] = B2 * m2[i] + (1.0 - B2) * grad[i] * grad[i];
                    theta[i] -= cfg.gamma * (m1[i] / c1) / ((m2[i] / c2).sqrt() + EPS);
                }
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(
                "parameters became non-finite during training".into(),
            ));
        }
    }
    Ok(theta)
}

/// Damped Newton minimization of [`glm_loss`]. The Hessian
/// lambda*I + sum_i g'(df_i) dphi_i dphi_i^T / zeta_i^2 is positive definite,
/// so each step solves an SPD system; a halving line search keeps the
/// objective monotone, and a failed factorization falls back to a gradient
/// direction. Returns the final iterate with a convergence flag.
#[allow(clippy::too_many_arguments)]
pub fn glm_refit(
    dphi: ArrayView2<'_, f64>,
    outcomes: &[u8],
    zetas: &[f64],
    lambda: f64,
    theta_start: &Array1<f64>,
    theta0: &Array1<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<RefitResult> {
    check_lambda(lambda)?;
    if dphi.nrows() != outcomes.len() || dphi.nrows() != zetas.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows but {} outcomes / {} weights",
            dphi.nrows(),
            outcomes.len(),
            zetas.len()
        )));
    }
    let link = LinkFunction::Logistic;
    let d = theta_start.len();
    let mut theta = theta_start.clone();
    let mut grad_norm = f64::INFINITY;
    for it in 0..max_iters {
        let grad = glm_gradient(dphi, outcomes, zetas, lambda, &theta, theta0)?;
        grad_norm = grad.dot(&grad).sqrt();
        if grad_norm <= tol {
            return Ok(RefitResult {
                theta,
                report: RefitReport {
                    converged: true,
                    iterations: it,
                    grad_norm,
                },
            });
        }
        let mut hess = Array2::<f64>::eye(d) * lambda;
        for i in 0..dphi.nrows() {
            let row = dphi.row(i);
            let w = link.deriv(row.dot(&theta))? / (zetas[i] * zetas[i]);
            for a in 0..d {
                for b in 0..d {
                    hess[[a, b]] += w * row[a] * row[b];
                }
            }
        }
        let step = match gram::spd_solve(&hess, &grad) {
            Ok(s) => s.mapv(|v| -v),
            Err(_) => grad.mapv(|v| -v / lambda),
        };
        let slope = grad.dot(&step);
        let base = glm_loss(dphi, outcomes, zetas, lambda, &theta, theta0)?;
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1e-12 {
            let cand = &theta + &step.mapv(|v| v * t);
            if glm_loss(dphi, outcomes, zetas, lambda, &cand, theta0)?
                <= base + 1e-4 * t * slope
            {
                theta = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break; // no descent left at this scale; report non-convergence
        }
    }
    Ok(RefitResult {
        theta,
        report: RefitReport {
            converged: false,
            iterations: max_iters,
            grad_norm,
        },
    })
}

// ---------------------------------------------------------------------------
// parameter checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_HEADER: &str = "duellab-net-checkpoint v1";

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write parameters as a versioned, human-readable text dump (17
/// significant digits, so a reload reproduces every bit). Intended for
/// debugging determinism questions.
pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = |w: &mut BufWriter<std::fs::File>, line: String| -> Result<()> {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))
    };
    emit(&mut w, CHECKPOINT_HEADER.to_string())?;
    let s = params.shape;
    emit(&mut w, format!("shape {} {} {}", s.d, s.m, s.hidden_layers))?;
    for (name, v) in [("theta", &params.theta), ("theta0", &params.theta0)] {
        let vals: Vec<String> = v.iter().map(|x| fmt_float(*x)).collect();
        emit(&mut w, format!("{name} {}", vals.join(" ")))?;
    }
    for (l, mat) in params.layers.iter().enumerate() {
        let (r, c) = mat.dim();
        emit(&mut w, format!("layer {l} {r} {c}"))?;
        for row in mat.rows() {
            let vals: Vec<String> = row.iter().map(|x| fmt_float(*x)).collect();
            emit(&mut w, vals.join(" "))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line.saturating_add(1),
        message,
    };
    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty checkpoint".into()))?;
    if header != CHECKPOINT_HEADER {
        return Err(parse_err(ln, format!("unrecognized header {header:?}")));
    }
    let (ln, shape_line) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing shape line".into()))?;
    let fields: Vec<&str> = shape_line.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "shape" {
        return Err(parse_err(ln, "expected `shape d m hidden_layers`".into()));
    }
    let nums: Vec<usize> = fields[1..]
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(ln, e.to_string()))?;
    let shape = NetworkShape::new(nums[0], nums[1], nums[2])?;

    let mut read_vector = |name: &str| -> Result<Array1<f64>> {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(usize::MAX, format!("missing {name} line")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(name) {
            return Err(parse_err(ln, format!("expected a {name} line")));
        }
        let vals: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(ln, e.to_string()))?;
        if vals.len() != shape.d {
            return Err(parse_err(
                ln,
                format!("{name} has {} entries, expected {}", vals.len(), shape.d),
            ));
        }
        Ok(Array1::from_vec(vals))
    };
    let theta = read_vector("theta")?;
    let theta0 = read_vector("theta0")?;

    let mut layers = Vec::with_capacity(shape.matrix_count());
    for l in 0..shape.matrix_count() {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(usize::MAX, format!("missing layer {l} header")))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (rows, cols) = shape.layer_dims(l);
        if fields.len() != 4
            || fields[0] != "layer"
            || fields[1] != l.to_string()
            || fields[2] != rows.to_string()
            || fields[3] != cols.to_string()
        {
            return Err(parse_err(
                ln,
                format!("expected `layer {l} {rows} {cols}`, got {line:?}"),
            ));
        }
        let mut mat = Array2::<f64>::zeros((rows, cols));
        for r in 0..rows {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(usize::MAX, format!("layer {l} truncated")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(ln, e.to_string()))?;
            if vals.len() != cols {
                return Err(parse_err(
                    ln,
                    format!("layer {l} row has {} entries, expected {cols}", vals.len()),
                ));
            }
            for (c, v) in vals.into_iter().enumerate() {
                mat[[r, c]] = v;
            }
        }
        layers.push(mat);
    }
    Ok(NetworkParams {
        shape,
        theta,
        theta0,
        layers,
    })
}
