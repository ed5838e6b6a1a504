//! Hybrid training objective and its analytic gradient.
//!
//! For a batch of observed pairs with codes `x̃ᵢ`, `ỹⱼ`:
//!
//! ```text
//! L = (1 − λθ − λe) Σ (r_ij − x̃ᵢᵀỹⱼ)²
//!   + λe (Σ ‖x'ᵢ − xᵢ‖ + Σ ‖y'ⱼ − yⱼ‖)
//!   + λθ (Σ_{j≤K} ‖W_j‖² + Σ_{l≤2K} ‖b_l‖²)
//! ```
//!
//! The pure deep-semantic MF loss drops the reconstruction term, uses
//! `1 − λθ` on the residuals and regularizes only the encoder biases.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::{encode, forward_full, Architecture, ForwardTrace, ModelParams, Towers};
use crate::error::{Error, Result};
use crate::folksonomy::ProfileMatrix;
use crate::tensor::{frobenius_sq, l2_norm, matmul, matmul_nt, matmul_tn, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    /// Regularization weight λθ.
    pub lambda_theta: f64,
    /// Reconstruction weight λe.
    pub lambda_e: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda_theta: 0.01,
            lambda_e: 0.2,
        }
    }
}

impl HyperParams {
    pub fn new(lambda_theta: f64, lambda_e: f64) -> Result<Self> {
        let hp = HyperParams { lambda_theta, lambda_e };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (0.0..1.0).contains(&v);
        if !in_range(self.lambda_theta) || !in_range(self.lambda_e) {
            return Err(Error::Config(format!(
                "lambda_theta and lambda_e must lie in [0, 1), got {} and {}",
                self.lambda_theta, self.lambda_e
            )));
        }
        if self.lambda_theta + self.lambda_e >= 1.0 {
            return Err(Error::Config(format!(
                "lambda_theta + lambda_e must be < 1, got {}",
                self.lambda_theta + self.lambda_e
            )));
        }
        Ok(())
    }
}

/// Coefficients of the three loss terms and how many bias layers the
/// regularizer covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub residual: f64,
    pub reconstruction: f64,
    pub regularization: f64,
    /// `Some(n)`: regularize `b_1..b_n`; `None`: all `2K` biases.
    pub regularized_biases: Option<usize>,
    /// Run the decoder half (needed whenever reconstruction is part of the
    /// objective, even at zero weight, so traces cover all `2K` layers).
    pub decode: bool,
}

impl LossWeights {
    pub fn hybrid(hp: &HyperParams) -> Self {
        LossWeights {
            residual: 1.0 - hp.lambda_theta - hp.lambda_e,
            reconstruction: hp.lambda_e,
            regularization: hp.lambda_theta,
            regularized_biases: None,
            decode: true,
        }
    }

    pub fn deep_mf(hp: &HyperParams, arch: &Architecture) -> Self {
        LossWeights {
            residual: 1.0 - hp.lambda_theta,
            reconstruction: 0.0,
            regularization: hp.lambda_theta,
            regularized_biases: Some(arch.depth()),
            decode: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedPair {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// One mini-batch: observed pairs plus the profile columns of every user and
/// item they mention, each profile included once.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pairs: Vec<ObservedPair>,
    users: Vec<usize>,
    items: Vec<usize>,
    user_columns: DenseMatrix,
    item_columns: DenseMatrix,
    slots: Vec<(usize, usize)>,
}

impl BatchSpec {
    /// `user_columns[:, c]` is the profile of `users[c]`, likewise for items.
    pub fn new(
        pairs: Vec<ObservedPair>,
        users: Vec<usize>,
        items: Vec<usize>,
        user_columns: DenseMatrix,
        item_columns: DenseMatrix,
    ) -> Result<Self> {
        if user_columns.cols() != users.len() || item_columns.cols() != items.len() {
            return Err(Error::shape("BatchSpec", "column count differs from id list"));
        }
        if user_columns.rows() != item_columns.rows() {
            return Err(Error::shape("BatchSpec", "user and item profiles differ in tag dimension"));
        }
        let user_pos: HashMap<usize, usize> = users.iter().enumerate().map(|(c, &u)| (u, c)).collect();
        let item_pos: HashMap<usize, usize> = items.iter().enumerate().map(|(c, &i)| (i, c)).collect();
        if user_pos.len() != users.len() || item_pos.len() != items.len() {
            return Err(Error::Data("duplicate profile column in batch".into()));
        }
        let slots = pairs
            .iter()
            .map(|p| match (user_pos.get(&p.user), item_pos.get(&p.item)) {
                (Some(&a), Some(&b)) if p.rating.is_finite() => Ok((a, b)),
                _ => Err(Error::Data(format!("pair {p:?} has no profile column in batch"))),
            })
            .collect::<Result<_>>()?;
        Ok(BatchSpec {
            pairs,
            users,
            items,
            user_columns,
            item_columns,
            slots,
        })
    }

    /// Collects the distinct users and items (first-appearance order) and
    /// copies their profiles in as columns.
    pub fn assemble(pairs: Vec<ObservedPair>, user_profiles: &ProfileMatrix, item_profiles: &ProfileMatrix) -> Result<Self> {
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut seen_u = HashMap::new();
        let mut seen_i = HashMap::new();
        for p in &pairs {
            if p.user >= user_profiles.rows() || p.item >= item_profiles.rows() {
                return Err(Error::Data(format!("pair {p:?} out of profile range")));
            }
            if seen_u.insert(p.user, ()).is_none() {
                users.push(p.user);
            }
            if seen_i.insert(p.item, ()).is_none() {
                items.push(p.item);
            }
        }
        let uc = user_profiles.columns(&users);
        let ic = item_profiles.columns(&items);
        Self::new(pairs, users, items, uc, ic)
    }

    pub fn pairs(&self) -> &[ObservedPair] {
        &self.pairs
    }

    pub fn users(&self) -> &[usize] {
        &self.users
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn user_columns(&self) -> &DenseMatrix {
        &self.user_columns
    }

    pub fn item_columns(&self) -> &DenseMatrix {
        &self.item_columns
    }

    /// Pairs as `(user column, item column, rating)`.
    pub fn local_pairs(&self) -> Vec<(usize, usize, f64)> {
        self.slots
            .iter()
            .zip(&self.pairs)
            .map(|(&(a, b), p)| (a, b, p.rating))
            .collect()
    }
}

/// Per-parameter gradient, shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub dw: Vec<DenseMatrix>,
    pub db: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientSet {
            dw: params
                .weights()
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect(),
            db: params.biases().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.dw.iter().map(|w| w.as_slice()).collect();
        out.extend(self.db.iter().map(|b| b.as_slice()));
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.dw.iter_mut().map(|w| w.as_mut_slice()).collect();
        out.extend(self.db.iter_mut().map(|b| b.as_mut_slice()));
        out
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// `params ← params − lr · self`
    pub fn apply(&self, params: &mut ModelParams, lr: f64) {
        for (p, g) in params.slices_mut().into_iter().zip(self.slices()) {
            p.iter_mut().zip(g).for_each(|(x, d)| *x -= lr * d);
        }
    }
}

/// Forward traces of both towers for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTraces {
    pub users: ForwardTrace,
    pub items: ForwardTrace,
}

fn residual_sum(codes_u: &DenseMatrix, codes_v: &DenseMatrix, pairs: &[(usize, usize, f64)]) -> Result<f64> {
    if codes_u.rows() != codes_v.rows() {
        return Err(Error::shape("dmf residual", "user and item codes differ in dimension"));
    }
    let mut sum = 0.0;
    for &(a, b, r) in pairs {
        if a >= codes_u.cols() || b >= codes_v.cols() {
            return Err(Error::Data(format!("pair ({a}, {b}) out of code range")));
        }
        let mut pred = 0.0;
        for k in 0..codes_u.rows() {
            pred += codes_u.get(k, a) * codes_v.get(k, b);
        }
        sum += (r - pred).powi(2);
    }
    Ok(sum)
}

/// `Σ‖W_j‖² + Σ_{l ≤ n}‖b_l‖²`.
pub fn regularizer(params: &ModelParams, regularized_biases: Option<usize>) -> f64 {
    let n = regularized_biases.unwrap_or(params.biases().len());
    params.weights().iter().map(frobenius_sq).sum::<f64>()
        + params.biases()[..n].iter().map(|b| l2_norm(b).powi(2)).sum::<f64>()
}

/// Deep-semantic MF loss over code columns; `pairs` index columns of
/// `codes_u` / `codes_v`.
pub fn dmf_loss(
    codes_u: &DenseMatrix,
    codes_v: &DenseMatrix,
    pairs: &[(usize, usize, f64)],
    params: &ModelParams,
    hp: &HyperParams,
) -> Result<f64> {
    hp.validate()?;
    let w = LossWeights::deep_mf(hp, params.arch());
    Ok(w.residual * residual_sum(codes_u, codes_v, pairs)? + w.regularization * regularizer(params, w.regularized_biases))
}

/// Sum over columns of the unsquared Euclidean distance between input and
/// reconstruction.
pub fn reconstruction_loss(inputs: &DenseMatrix, reconstructions: &DenseMatrix) -> Result<f64> {
    if inputs.shape() != reconstructions.shape() {
        return Err(Error::shape(
            "reconstruction_loss",
            format!("{:?} vs {:?}", inputs.shape(), reconstructions.shape()),
        ));
    }
    let mut total = 0.0;
    for c in 0..inputs.cols() {
        let mut sq = 0.0;
        for r in 0..inputs.rows() {
            sq += (reconstructions.get(r, c) - inputs.get(r, c)).powi(2);
        }
        total += sq.sqrt();
    }
    Ok(total)
}

fn forward_tower(params: &ModelParams, batch: &DenseMatrix, full: bool) -> Result<ForwardTrace> {
    if full {
        Ok(forward_full(params, batch)?.2)
    } else {
        Ok(encode(params, batch)?.1)
    }
}

/// Data terms (residual and reconstruction) of the loss for arbitrary tower
/// parameters, excluding regularization.
fn data_loss(batch: &BatchSpec, users: &ModelParams, items: &ModelParams, w: &LossWeights) -> Result<(f64, BatchTraces)> {
    let full = w.decode;
    let tu = forward_tower(users, &batch.user_columns, full)?;
    let ti = forward_tower(items, &batch.item_columns, full)?;
    let k = users.arch().depth();
    let mut loss = w.residual * residual_sum(tu.activation(k), ti.activation(k), &batch.local_pairs())?;
    if full {
        loss += w.reconstruction
            * (reconstruction_loss(&batch.user_columns, tu.activation(2 * k))?
                + reconstruction_loss(&batch.item_columns, ti.activation(2 * k))?);
    }
    Ok((loss, BatchTraces { users: tu, items: ti }))
}

/// Hybrid loss of one batch with both towers on the shared `params`. The
/// traces feed [`hdmf_gradients`].
pub fn hdmf_loss(batch: &BatchSpec, params: &ModelParams, hp: &HyperParams) -> Result<(f64, BatchTraces)> {
    hp.validate()?;
    let w = LossWeights::hybrid(hp);
    let (data, traces) = data_loss(batch, params, params, &w)?;
    Ok((data + w.regularization * regularizer(params, w.regularized_biases), traces))
}

/// `∂L/∂h_{2K}` for the reconstruction term; zero subgradient where the
/// reconstruction is exact.
fn reconstruction_grad(inputs: &DenseMatrix, outputs: &DenseMatrix, weight: f64) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(inputs.rows(), inputs.cols());
    for c in 0..inputs.cols() {
        let diff: Vec<f64> = (0..inputs.rows()).map(|r| outputs.get(r, c) - inputs.get(r, c)).collect();
        let norm = l2_norm(&diff);
        if norm > 0.0 {
            for (r, d) in diff.iter().enumerate() {
                g.set(r, c, weight * d / norm);
            }
        }
    }
    g
}

/// Backpropagates one tower. `d_code` enters at layer `K`, `d_output` (if
/// the decoder ran) at layer `2K`. Decoder layers contribute the transpose
/// of their local weight gradient to the tied `W_j`; with `tied` off that
/// contribution is dropped (only used to test the gradient checker).
fn backprop_tower(
    params: &ModelParams,
    trace: &ForwardTrace,
    d_code: &DenseMatrix,
    d_output: Option<&DenseMatrix>,
    grads: &mut GradientSet,
    tied: bool,
) -> Result<()> {
    let k = params.arch().depth();
    let top = trace.layers();
    if top != k && top != 2 * k {
        return Err(Error::shape("backprop", format!("trace has {top} layers, K = {k}")));
    }
    let mut g = match d_output {
        Some(d) if top == 2 * k => d.clone(),
        None if top == k => DenseMatrix::zeros(d_code.rows(), d_code.cols()),
        _ => return Err(Error::shape("backprop", "output gradient does not match trace depth")),
    };
    for l in (1..=top).rev() {
        if l == k {
            g.axpy(1.0, d_code)?;
        }
        let h = trace.activation(l);
        let mut delta = g;
        for (d, a) in delta.as_mut_slice().iter_mut().zip(h.as_slice()) {
            *d *= 1.0 - a * a;
        }
        for (db, s) in grads.db[l - 1].iter_mut().zip(delta.row_sums()) {
            *db += s;
        }
        let below = trace.activation(l - 1);
        if l <= k {
            grads.dw[l - 1].axpy(1.0, &matmul_nt(&delta, below)?)?;
            g = if l > 1 {
                matmul_tn(params.weight(l), &delta)?
            } else {
                DenseMatrix::zeros(0, 0)
            };
        } else {
            let j = 2 * k + 1 - l;
            if tied {
                grads.dw[j - 1].axpy(1.0, &matmul_nt(below, &delta)?)?;
            }
            g = matmul(params.weight(j), &delta)?;
        }
    }
    Ok(())
}

/// Gradients of the data terms for each tower.
fn data_gradients(
    batch: &BatchSpec,
    users: &ModelParams,
    items: &ModelParams,
    w: &LossWeights,
    traces: &BatchTraces,
    tied: bool,
) -> Result<(GradientSet, GradientSet)> {
    let k = users.arch().depth();
    let cu = traces.users.activation(k);
    let ci = traces.items.activation(k);
    let mut d_cu = DenseMatrix::zeros(cu.rows(), cu.cols());
    let mut d_ci = DenseMatrix::zeros(ci.rows(), ci.cols());
    for (a, b, r) in batch.local_pairs() {
        let mut pred = 0.0;
        for d in 0..cu.rows() {
            pred += cu.get(d, a) * ci.get(d, b);
        }
        let scale = -2.0 * w.residual * (r - pred);
        for d in 0..cu.rows() {
            d_cu.set(d, a, d_cu.get(d, a) + scale * ci.get(d, b));
            d_ci.set(d, b, d_ci.get(d, b) + scale * cu.get(d, a));
        }
    }

    let full = w.decode;
    let d_out_u = full.then(|| reconstruction_grad(&batch.user_columns, traces.users.activation(2 * k), w.reconstruction));
    let d_out_i = full.then(|| reconstruction_grad(&batch.item_columns, traces.items.activation(2 * k), w.reconstruction));

    let mut gu = GradientSet::zeros_like(users);
    let mut gi = GradientSet::zeros_like(items);
    backprop_tower(users, &traces.users, &d_cu, d_out_u.as_ref(), &mut gu, tied)?;
    backprop_tower(items, &traces.items, &d_ci, d_out_i.as_ref(), &mut gi, tied)?;
    Ok((gu, gi))
}

fn add_regularizer_grad(params: &ModelParams, w: &LossWeights, grads: &mut GradientSet) {
    let c = 2.0 * w.regularization;
    for (g, p) in grads.dw.iter_mut().zip(params.weights()) {
        g.axpy(c, p).expect("same shape");
    }
    let n = w.regularized_biases.unwrap_or(params.biases().len());
    for (g, p) in grads.db.iter_mut().zip(params.biases()).take(n) {
        g.iter_mut().zip(p).for_each(|(d, b)| *d += c * b);
    }
}

fn check_traces(params: &ModelParams, traces: &BatchTraces, batch: &BatchSpec) -> Result<()> {
    let sizes = params.arch().layer_sizes();
    let matches = |t: &ForwardTrace, input: &DenseMatrix| {
        t.input == *input
            && t.layers() == sizes.len() - 1
            && t.act.iter().zip(&sizes[1..]).all(|(a, &n)| a.rows() == n && a.cols() == input.cols())
    };
    if matches(&traces.users, &batch.user_columns) && matches(&traces.items, &batch.item_columns) {
        Ok(())
    } else {
        Err(Error::shape("hdmf_gradients", "traces were not produced from this batch and parameter set"))
    }
}

/// Exact gradient of [`hdmf_loss`] with respect to every `W_j` and `b_l`.
/// User and item towers share `params`, so their contributions add.
pub fn hdmf_gradients(batch: &BatchSpec, params: &ModelParams, hp: &HyperParams, traces: &BatchTraces) -> Result<GradientSet> {
    hdmf_gradients_impl(batch, params, hp, traces, true)
}

pub(crate) fn hdmf_gradients_impl(
    batch: &BatchSpec,
    params: &ModelParams,
    hp: &HyperParams,
    traces: &BatchTraces,
    tied: bool,
) -> Result<GradientSet> {
    hp.validate()?;
    check_traces(params, traces, batch)?;
    let w = LossWeights::hybrid(hp);
    let (mut g, gi) = data_gradients(batch, params, params, &w, traces, tied)?;
    g.add_assign(&gi);
    add_regularizer_grad(params, &w, &mut g);
    Ok(g)
}

/// Which loss the trainer minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
}

impl Objective {
    pub fn hybrid(hp: &HyperParams) -> Result<Self> {
        hp.validate()?;
        Ok(Objective {
            weights: LossWeights::hybrid(hp),
        })
    }

    pub fn deep_mf(hp: &HyperParams, arch: &Architecture) -> Result<Self> {
        hp.validate()?;
        Ok(Objective {
            weights: LossWeights::deep_mf(hp, arch),
        })
    }

    pub fn loss(&self, batch: &BatchSpec, towers: &Towers) -> Result<f64> {
        let (data, _) = data_loss(batch, towers.users(), towers.items(), &self.weights)?;
        Ok(data + self.regularization(towers))
    }

    fn regularization(&self, towers: &Towers) -> f64 {
        towers
            .param_sets()
            .iter()
            .map(|p| self.weights.regularization * regularizer(p, self.weights.regularized_biases))
            .sum()
    }

    /// Loss and one gradient per distinct parameter set of `towers`.
    pub fn loss_and_gradients(&self, batch: &BatchSpec, towers: &Towers) -> Result<(f64, Vec<GradientSet>)> {
        let w = &self.weights;
        let (data, traces) = data_loss(batch, towers.users(), towers.items(), w)?;
        let (mut gu, mut gi) = data_gradients(batch, towers.users(), towers.items(), w, &traces, true)?;
        let grads = match towers {
            Towers::Shared(p) => {
                gu.add_assign(&gi);
                add_regularizer_grad(p, w, &mut gu);
                vec![gu]
            }
            Towers::Untied { users, items } => {
                add_regularizer_grad(users, w, &mut gu);
                add_regularizer_grad(items, w, &mut gi);
                vec![gu, gi]
            }
        };
        Ok((data + self.regularization(towers), grads))
    }
}

/// Identifies one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamCoord {
    /// `W_j[row, col]`, `j` 1-based.
    Weight { layer: usize, row: usize, col: usize },
    /// `b_l[index]`, `l` 1-based.
    Bias { layer: usize, index: usize },
}

impl ParamCoord {
    pub fn is_weight(&self) -> bool {
        matches!(self, ParamCoord::Weight { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub coord: ParamCoord,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest relative error among coordinates above the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// A small random problem for finite-difference checks.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub batch: BatchSpec,
    pub params: ModelParams,
    pub hp: HyperParams,
}

pub const GRAD_CHECK_MAX_PARAMS: usize = 500;
pub const GRAD_CHECK_EPSILON: f64 = 1e-4;
pub const GRAD_CHECK_ABS_FLOOR: f64 = 1e-8;

impl GradCheckInstance {
    /// Random profiles in `[0, 1)`, `pairs` distinct observed cells with
    /// ratings in `1..=3`, unit-stddev weights and biases in `[-0.5, 0.5)`.
    pub fn random(arch: &Architecture, users: usize, items: usize, pairs: usize, seed: u64, hp: HyperParams) -> Result<Self> {
        if arch.parameter_count() > GRAD_CHECK_MAX_PARAMS {
            return Err(Error::Config(format!(
                "gradient check is limited to {GRAD_CHECK_MAX_PARAMS} parameters, architecture has {}",
                arch.parameter_count()
            )));
        }
        if users == 0 || items == 0 || pairs == 0 || pairs > users * items {
            return Err(Error::Config(format!("cannot place {pairs} pairs on {users}x{items}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(arch, rng.random(), 1.0)?;
        for l in 1..=2 * arch.depth() {
            params.bias_mut(l).iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let t = arch.input_dim();
        let user_columns = DenseMatrix::from_fn(t, users, |_, _| rng.random_range(0.0..1.0));
        let item_columns = DenseMatrix::from_fn(t, items, |_, _| rng.random_range(0.0..1.0));

        // Every user and item appears at least once when pairs allow.
        let mut cells: Vec<(usize, usize)> = Vec::new();
        for n in 0..users.max(items).min(pairs) {
            cells.push((n % users, n % items));
        }
        while cells.len() < pairs {
            let c = (rng.random_range(0..users), rng.random_range(0..items));
            if !cells.contains(&c) {
                cells.push(c);
            }
        }
        let observed = cells
            .into_iter()
            .map(|(user, item)| ObservedPair {
                user,
                item,
                rating: rng.random_range(1..=3) as f64,
            })
            .collect();
        let batch = BatchSpec::new(observed, (0..users).collect(), (0..items).collect(), user_columns, item_columns)?;
        Ok(GradCheckInstance { batch, params, hp })
    }
}

/// Compares an analytic gradient against central differences of
/// [`hdmf_loss`] on every coordinate. A coordinate passes when the absolute
/// error is within [`GRAD_CHECK_ABS_FLOOR`] or the relative error
/// `|a − n| / max(|a|, |n|)` is within `tolerance`.
pub fn check_gradient_fn<F>(instance: &GradCheckInstance, epsilon: f64, tolerance: f64, gradient: F) -> Result<GradCheckReport>
where
    F: Fn(&BatchSpec, &ModelParams, &HyperParams, &BatchTraces) -> Result<GradientSet>,
{
    let GradCheckInstance { batch, params, hp } = instance;
    let (_, traces) = hdmf_loss(batch, params, hp)?;
    let analytic = gradient(batch, params, hp, &traces)?;

    let coords = coordinates(params.arch());
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        failures: Vec::new(),
    };
    let analytic_flat: Vec<f64> = analytic.slices().iter().flat_map(|s| s.iter().copied()).collect();
    for (flat, coord) in coords.into_iter().enumerate() {
        let original = read_flat(&probe, flat);
        write_flat(&mut probe, flat, original + epsilon);
        let plus = hdmf_loss(batch, &probe, hp)?.0;
        write_flat(&mut probe, flat, original - epsilon);
        let minus = hdmf_loss(batch, &probe, hp)?.0;
        write_flat(&mut probe, flat, original);

        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic_flat[flat];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if abs > GRAD_CHECK_ABS_FLOOR {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel > tolerance {
                report.failures.push(GradMismatch {
                    coord,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

/// Finite-difference check of [`hdmf_gradients`] on the standard tiny
/// problem: 3 users, 4 items, 5 observed pairs, default λ values, step
/// [`GRAD_CHECK_EPSILON`].
pub fn check_gradients(arch: &Architecture, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let instance = GradCheckInstance::random(arch, 3, 4, 5, seed, HyperParams::default())?;
    check_gradient_fn(&instance, GRAD_CHECK_EPSILON, tolerance, hdmf_gradients)
}

fn coordinates(arch: &Architecture) -> Vec<ParamCoord> {
    let mut out = Vec::new();
    for j in 1..=arch.depth() {
        let (rows, cols) = arch.weight_shape(j);
        for row in 0..rows {
            for col in 0..cols {
                out.push(ParamCoord::Weight { layer: j, row, col });
            }
        }
    }
    for (l, &n) in arch.layer_sizes()[1..].iter().enumerate() {
        for index in 0..n {
            out.push(ParamCoord::Bias { layer: l + 1, index });
        }
    }
    out
}

fn locate(params: &ModelParams, mut flat: usize) -> (usize, usize) {
    for (s, slice) in params.slices().iter().enumerate() {
        if flat < slice.len() {
            return (s, flat);
        }
        flat -= slice.len();
    }
    panic!("flat parameter index out of range");
}

fn read_flat(params: &ModelParams, flat: usize) -> f64 {
    let (s, i) = locate(params, flat);
    params.slices()[s][i]
}

fn write_flat(params: &mut ModelParams, flat: usize, v: f64) {
    let (s, i) = locate(params, flat);
    params.slices_mut()[s][i] = v;
}
