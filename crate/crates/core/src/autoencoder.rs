//! Tied-weight deep autoencoder.
//!
//! Layers are numbered `1..=2K`. Encoder layer `j ≤ K` computes
//! `h_j = tanh(W_j h_{j-1} + b_j)` with `h_0` the input batch; decoder layer
//! `l > K` reuses the transpose of `W_{2K+1-l}` and owns only its bias. The
//! code layer is `h_K`, the reconstruction `h_{2K}`. Batches hold one
//! profile per column.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{add_bias, matmul, matmul_tn, tanh_map, DenseMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    input_dim: usize,
    encoder_sizes: Vec<usize>,
}

impl Architecture {
    pub fn new(input_dim: usize, encoder_sizes: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || encoder_sizes.is_empty() || encoder_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "architecture needs input_dim ≥ 1 and K ≥ 1 non-zero layers, got {input_dim} / {encoder_sizes:?}"
            )));
        }
        Ok(Architecture {
            input_dim,
            encoder_sizes,
        })
    }

    /// From the full hidden-layer list (odd length `2K-1`, palindromic),
    /// e.g. `[2000, 300, 128, 300, 2000]` gives encoder sizes
    /// `[2000, 300, 128]`.
    pub fn from_hidden_layers(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        if hidden.len() % 2 == 0 {
            return Err(Error::Config(format!(
                "hidden layer list must have odd length 2K-1, got {hidden:?}"
            )));
        }
        if hidden.iter().ne(hidden.iter().rev()) {
            return Err(Error::Config(format!(
                "hidden layer list must be palindromic (tied weights), got {hidden:?}"
            )));
        }
        Self::new(input_dim, hidden[..hidden.len() / 2 + 1].to_vec())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn encoder_sizes(&self) -> &[usize] {
        &self.encoder_sizes
    }

    /// Encoder depth `K`.
    pub fn depth(&self) -> usize {
        self.encoder_sizes.len()
    }

    pub fn code_dim(&self) -> usize {
        *self.encoder_sizes.last().expect("K ≥ 1")
    }

    /// Widths of layers `0..=2K`: input, encoder, mirrored decoder, output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.encoder_sizes);
        sizes.extend(self.encoder_sizes.iter().rev().skip(1));
        sizes.push(self.input_dim);
        sizes
    }

    /// The `2K-1` hidden layer widths.
    pub fn hidden_layers(&self) -> Vec<usize> {
        let sizes = self.layer_sizes();
        sizes[1..sizes.len() - 1].to_vec()
    }

    /// Shape of `W_j` (1-based): `(size_j, size_{j-1})`.
    pub fn weight_shape(&self, j: usize) -> (usize, usize) {
        let prev = if j == 1 {
            self.input_dim
        } else {
            self.encoder_sizes[j - 2]
        };
        (self.encoder_sizes[j - 1], prev)
    }

    pub fn parameter_count(&self) -> usize {
        let weights: usize = (1..=self.depth())
            .map(|j| {
                let (r, c) = self.weight_shape(j);
                r * c
            })
            .sum();
        let biases: usize = self.layer_sizes()[1..].iter().sum();
        weights + biases
    }
}

/// `W_1..W_K` and `b_1..b_{2K}`. The decoder has no weights of its own.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    weights: Vec<DenseMatrix>,
    biases: Vec<Vec<f64>>,
}

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let weights = (1..=arch.depth())
            .map(|j| {
                let (r, c) = arch.weight_shape(j);
                DenseMatrix::zeros(r, c)
            })
            .collect();
        let biases = arch.layer_sizes()[1..].iter().map(|&n| vec![0.0; n]).collect();
        ModelParams {
            arch: arch.clone(),
            weights,
            biases,
        }
    }

    /// Weights i.i.d. `N(0, stddev²)` from a generator seeded with `seed`,
    /// drawn for `W_1..W_K` in row-major order; biases zero.
    pub fn init(arch: &Architecture, seed: u64, stddev: f64) -> Result<Self> {
        if !(stddev > 0.0 && stddev.is_finite()) {
            return Err(Error::Config(format!("init stddev must be positive, got {stddev}")));
        }
        let normal = Normal::new(0.0, stddev).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch);
        for w in &mut params.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        Ok(params)
    }

    /// Assembles parameters, checking every shape against `arch`.
    pub fn from_parts(arch: Architecture, weights: Vec<DenseMatrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        let expected = Self::zeros(&arch);
        let shapes_ok = weights.len() == expected.weights.len()
            && biases.len() == expected.biases.len()
            && weights.iter().zip(&expected.weights).all(|(a, b)| a.shape() == b.shape())
            && biases.iter().zip(&expected.biases).all(|(a, b)| a.len() == b.len());
        if !shapes_ok {
            return Err(Error::shape("ModelParams::from_parts", "parameter shapes do not match architecture"));
        }
        Ok(ModelParams { arch, weights, biases })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    /// `W_j`, 1-based.
    pub fn weight(&self, j: usize) -> &DenseMatrix {
        &self.weights[j - 1]
    }

    pub fn weight_mut(&mut self, j: usize) -> &mut DenseMatrix {
        &mut self.weights[j - 1]
    }

    /// `b_l`, 1-based over `1..=2K`.
    pub fn bias(&self, l: usize) -> &[f64] {
        &self.biases[l - 1]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.biases[l - 1]
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(DenseMatrix::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// All parameters as mutable slices in storage order: `W_1..W_K`, then
    /// `b_1..b_{2K}`.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.weights.iter_mut().map(|w| w.as_mut_slice()).collect();
        out.extend(self.biases.iter_mut().map(|b| b.as_mut_slice()));
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.weights.iter().map(|w| w.as_slice()).collect();
        out.extend(self.biases.iter().map(|b| b.as_slice()));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// One layer, `l ∈ 1..=2K`.
    fn layer(&self, l: usize, input: &DenseMatrix) -> Result<DenseMatrix> {
        let k = self.arch.depth();
        let linear = if l <= k {
            matmul(self.weight(l), input)?
        } else {
            matmul_tn(self.weight(2 * k + 1 - l), input)?
        };
        add_bias(&linear, self.bias(l))
    }
}

/// Pre-activations and activations of every layer run so far, for one batch.
/// Index `l - 1` holds layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: DenseMatrix,
    pub pre: Vec<DenseMatrix>,
    pub act: Vec<DenseMatrix>,
}

impl ForwardTrace {
    /// `h_l`, with `h_0` the input.
    pub fn activation(&self, l: usize) -> &DenseMatrix {
        if l == 0 {
            &self.input
        } else {
            &self.act[l - 1]
        }
    }

    pub fn layers(&self) -> usize {
        self.act.len()
    }

    pub fn extend(&mut self, decoder: DecoderTrace) {
        self.pre.extend(decoder.pre);
        self.act.extend(decoder.act);
    }
}

/// Layers `K+1..=2K` produced by [`decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderTrace {
    pub pre: Vec<DenseMatrix>,
    pub act: Vec<DenseMatrix>,
}

fn run_layers(
    params: &ModelParams,
    layers: std::ops::RangeInclusive<usize>,
    input: &DenseMatrix,
) -> Result<(Vec<DenseMatrix>, Vec<DenseMatrix>)> {
    let mut pre = Vec::new();
    let mut act: Vec<DenseMatrix> = Vec::new();
    for l in layers {
        let z = params.layer(l, act.last().unwrap_or(input))?;
        act.push(tanh_map(&z));
        pre.push(z);
    }
    Ok((pre, act))
}

/// Encodes a batch of profile columns to code vectors `h_K`.
pub fn encode(params: &ModelParams, batch: &DenseMatrix) -> Result<(DenseMatrix, ForwardTrace)> {
    if batch.rows() != params.arch.input_dim() {
        return Err(Error::shape(
            "encode",
            format!("batch has {} rows, input_dim is {}", batch.rows(), params.arch.input_dim()),
        ));
    }
    let (pre, act) = run_layers(params, 1..=params.arch.depth(), batch)?;
    let codes = act.last().expect("K ≥ 1").clone();
    Ok((
        codes,
        ForwardTrace {
            input: batch.clone(),
            pre,
            act,
        },
    ))
}

/// Reconstructs profiles from code columns through the transposed weights.
pub fn decode(params: &ModelParams, codes: &DenseMatrix) -> Result<(DenseMatrix, DecoderTrace)> {
    let k = params.arch.depth();
    if codes.rows() != params.arch.code_dim() {
        return Err(Error::shape(
            "decode",
            format!("codes have {} rows, code_dim is {}", codes.rows(), params.arch.code_dim()),
        ));
    }
    let (pre, act) = run_layers(params, k + 1..=2 * k, codes)?;
    let recon = act.last().expect("K ≥ 1").clone();
    Ok((recon, DecoderTrace { pre, act }))
}

/// Encoder then decoder; the trace covers all `2K` layers.
pub fn forward_full(params: &ModelParams, batch: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix, ForwardTrace)> {
    let (codes, mut trace) = encode(params, batch)?;
    let (recon, dec) = decode(params, &codes)?;
    trace.extend(dec);
    Ok((codes, recon, trace))
}

/// Parameters for the user and item networks. `Shared` runs both towers
/// through one parameter set; `Untied` gives each its own.
#[derive(Debug, Clone, PartialEq)]
pub enum Towers {
    Shared(ModelParams),
    Untied { users: ModelParams, items: ModelParams },
}

impl Towers {
    pub fn init(arch: &Architecture, seed: u64, stddev: f64, untied: bool) -> Result<Self> {
        if untied {
            Ok(Towers::Untied {
                users: ModelParams::init(arch, seed, stddev)?,
                items: ModelParams::init(arch, seed.wrapping_add(1), stddev)?,
            })
        } else {
            Ok(Towers::Shared(ModelParams::init(arch, seed, stddev)?))
        }
    }

    pub fn users(&self) -> &ModelParams {
        match self {
            Towers::Shared(p) => p,
            Towers::Untied { users, .. } => users,
        }
    }

    pub fn items(&self) -> &ModelParams {
        match self {
            Towers::Shared(p) => p,
            Towers::Untied { items, .. } => items,
        }
    }

    pub fn arch(&self) -> &Architecture {
        self.users().arch()
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, Towers::Shared(_))
    }

    /// Distinct parameter sets (one when shared).
    pub fn param_sets(&self) -> Vec<&ModelParams> {
        match self {
            Towers::Shared(p) => vec![p],
            Towers::Untied { users, items } => vec![users, items],
        }
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut ModelParams> {
        match self {
            Towers::Shared(p) => vec![p],
            Towers::Untied { users, items } => vec![users, items],
        }
    }

    pub fn from_sets(mut sets: Vec<ModelParams>) -> Result<Self> {
        match sets.len() {
            1 => Ok(Towers::Shared(sets.remove(0))),
            2 => {
                let items = sets.remove(1);
                let users = sets.remove(0);
                if users.arch() != items.arch() {
                    return Err(Error::Checkpoint("user and item towers disagree on architecture".into()));
                }
                Ok(Towers::Untied { users, items })
            }
            n => Err(Error::Checkpoint(format!("expected 1 or 2 parameter sets, found {n}"))),
        }
    }
}
