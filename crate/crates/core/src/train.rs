//! Mini-batch SGD for HDMF and the plain matrix-factorization baseline, with
//! early stopping on validation MRR.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::autoencoder::{Architecture, Towers};
use crate::error::{Error, Result};
use crate::eval::{evaluate_scorer, predict_scores_hdmf, predict_scores_mf, relevance_sets};
use crate::folksonomy::{
    build_profiles, build_rating_matrix, normalize_profiles_allow_empty, ProfileMatrix, RatingMatrix, SplitFolksonomy,
};
use crate::objective::{BatchSpec, GradientSet, HyperParams, Objective, ObservedPair};
use crate::tensor::{dot, DenseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Observed pairs per mini-batch.
    pub batch_pairs: usize,
    /// Evaluations without a new best validation MRR before stopping.
    pub early_stop_patience: usize,
    pub eval_every: usize,
    /// Relative change in epoch loss below which training counts as converged.
    pub convergence_tol: f64,
    /// Per-batch gradient L2 norm ceiling.
    pub grad_clip: f64,
    pub seed: u64,
    pub init_stddev: f64,
    pub hp: HyperParams,
    pub arch: Architecture,
    /// Train the full hybrid loss; `false` drops the reconstruction term.
    pub hybrid: bool,
    pub untied_towers: bool,
    pub mf_lambda: f64,
}

impl TrainConfig {
    pub fn new(arch: Architecture) -> Self {
        TrainConfig {
            learning_rate: 0.002,
            max_epochs: 500,
            batch_pairs: 512,
            early_stop_patience: 5,
            eval_every: 1,
            convergence_tol: 1e-6,
            grad_clip: 1e3,
            seed: 0,
            init_stddev: 0.1,
            hp: HyperParams::default(),
            arch,
            hybrid: true,
            untied_towers: false,
            mf_lambda: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        // A zero rate is allowed: it freezes the parameters.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.batch_pairs == 0 || self.early_stop_patience == 0 || self.eval_every == 0 {
            return bad("batch_pairs, early_stop_patience and eval_every must be at least 1".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if !(self.init_stddev > 0.0 && self.init_stddev.is_finite()) {
            return bad(format!("init_stddev must be positive, got {}", self.init_stddev));
        }
        if !(self.mf_lambda >= 0.0 && self.mf_lambda.is_finite()) {
            return bad(format!("mf_lambda must be non-negative, got {}", self.mf_lambda));
        }
        if !(self.convergence_tol >= 0.0) {
            return bad(format!("convergence_tol must be non-negative, got {}", self.convergence_tol));
        }
        self.hp.validate()
    }
}

/// Held-out ranking target used for early stopping.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub train_items: Vec<BTreeSet<usize>>,
    pub relevance: BTreeMap<usize, BTreeSet<usize>>,
}

impl Validation {
    fn mrr(&self, scorer: &crate::eval::LatentScorer) -> Result<f64> {
        Ok(evaluate_scorer(scorer, &self.train_items, &self.relevance, &[1])?.mrr)
    }
}

/// Everything the trainers read, derived from the training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub user_profiles: ProfileMatrix,
    pub item_profiles: ProfileMatrix,
    pub ratings: RatingMatrix,
    pub validation: Validation,
    pub test_relevance: BTreeMap<usize, BTreeSet<usize>>,
}

impl PreparedData {
    pub fn from_split(split: &SplitFolksonomy, binarize_ratings: bool) -> Result<Self> {
        let (users, items) = build_profiles(split.train())?;
        let ratings = build_rating_matrix(split.train())?;
        let ratings = if binarize_ratings { ratings.binarized() } else { ratings };
        let train_items = ratings.items_by_user();
        Ok(PreparedData {
            user_profiles: normalize_profiles_allow_empty(&users)?,
            item_profiles: normalize_profiles_allow_empty(&items)?,
            validation: Validation {
                relevance: relevance_sets(split.valid(), &train_items),
                train_items: train_items.clone(),
            },
            test_relevance: relevance_sets(split.test(), &train_items),
            ratings,
        })
    }

    pub fn tags(&self) -> usize {
        self.user_profiles.tags()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    Converged,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum of the batch losses seen during the epoch.
    pub train_loss: f64,
    pub val_mrr: Option<f64>,
    pub seconds: f64,
    pub clipped_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: Option<StopReason>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub best_val_mrr: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    stop_reason: Option<StopReason>,
    best_epoch: Option<usize>,
    best_val_mrr: Option<f64>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// One JSON object per epoch, then a closing summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        let summary = Summary {
            stop_reason: self.stop_reason,
            best_epoch: self.best_epoch,
            best_val_mrr: self.best_val_mrr,
        };
        out.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
        out.push('\n');
        out
    }
}

/// Plain latent-factor model: `r̂_ij = xᵢᵀyⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MfModel {
    user_factors: DenseMatrix,
    item_factors: DenseMatrix,
}

impl MfModel {
    /// Factors drawn from `N(0, 0.1/√k)`.
    pub fn init(users: usize, items: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        let normal = Normal::new(0.0, 0.1 / (k as f64).sqrt()).expect("valid stddev");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user_factors = DenseMatrix::from_fn(users, k, |_, _| normal.sample(&mut rng));
        let item_factors = DenseMatrix::from_fn(items, k, |_, _| normal.sample(&mut rng));
        Ok(MfModel {
            user_factors,
            item_factors,
        })
    }

    pub fn from_factors(user_factors: DenseMatrix, item_factors: DenseMatrix) -> Result<Self> {
        if user_factors.cols() != item_factors.cols() || user_factors.cols() == 0 {
            return Err(Error::shape("MfModel", "user and item factors differ in latent dimension"));
        }
        if !user_factors.is_finite() || !item_factors.is_finite() {
            return Err(Error::NonFinite("MfModel factors"));
        }
        Ok(MfModel {
            user_factors,
            item_factors,
        })
    }

    pub fn k(&self) -> usize {
        self.user_factors.cols()
    }

    pub fn user_factors(&self) -> &DenseMatrix {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &DenseMatrix {
        &self.item_factors
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        dot(self.user_factors.row(user), self.item_factors.row(item))
    }

    /// Root-mean-square error over the observed cells of `ratings`.
    pub fn rmse(&self, ratings: &RatingMatrix) -> f64 {
        let sse: f64 = ratings
            .iter()
            .map(|(u, i, r)| (r as f64 - self.predict(u, i)).powi(2))
            .sum();
        (sse / ratings.len() as f64).sqrt()
    }
}

fn observed_pairs(ratings: &RatingMatrix) -> Result<Vec<ObservedPair>> {
    if ratings.is_empty() {
        return Err(Error::Data("no observed training ratings".into()));
    }
    Ok(ratings
        .iter()
        .map(|(user, item, r)| ObservedPair {
            user,
            item,
            rating: r as f64,
        })
        .collect())
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keeps batch order independent of the initialization stream.
    rng.set_stream(1);
    rng
}

/// Scales `grads` down to norm `clip` when larger. Returns whether it did.
fn clip_gradients(grads: &mut [GradientSet], clip: f64) -> bool {
    let norm = grads.iter().map(GradientSet::sum_sq).sum::<f64>().sqrt();
    if norm > clip {
        log::debug!("clipping gradient norm {norm:.3e} to {clip:.3e}");
        grads.iter_mut().for_each(|g| g.scale(clip / norm));
        true
    } else {
        false
    }
}

/// Early-stopping bookkeeping shared by both trainers.
struct Progress<M> {
    log: TrainLog,
    best: Option<M>,
    stale: usize,
    previous_loss: Option<f64>,
}

impl<M: Clone> Progress<M> {
    fn new() -> Self {
        Progress {
            log: TrainLog::default(),
            best: None,
            stale: 0,
            previous_loss: None,
        }
    }

    /// Records one epoch; `validate` runs only on evaluation epochs. Returns
    /// `true` once training should stop.
    fn finish_epoch<F>(&mut self, cfg: &TrainConfig, mut record: EpochRecord, model: &M, validate: Option<F>) -> Result<bool>
    where
        F: FnOnce(&M) -> Result<f64>,
    {
        let epoch = record.epoch;
        let converged = self.previous_loss.is_some_and(|prev| {
            let denom = prev.abs().max(f64::MIN_POSITIVE);
            ((record.train_loss - prev) / denom).abs() < cfg.convergence_tol
        });
        self.previous_loss = Some(record.train_loss);
        let mut stop = if converged {
            Some(StopReason::Converged)
        } else if epoch >= cfg.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        };
        if let Some(validate) = validate.filter(|_| epoch % cfg.eval_every == 0 || stop.is_some()) {
            let mrr = validate(model)?;
            record.val_mrr = Some(mrr);
            if self.log.best_val_mrr.is_none_or(|best| mrr > best) {
                self.log.best_val_mrr = Some(mrr);
                self.log.best_epoch = Some(epoch);
                self.best = Some(model.clone());
                self.stale = 0;
            } else {
                self.stale += 1;
                if self.stale >= cfg.early_stop_patience && stop.is_none() {
                    stop = Some(StopReason::Patience);
                }
            }
        }
        log::info!(
            "epoch {epoch}: loss {:.6e}{}",
            record.train_loss,
            record.val_mrr.map(|m| format!(", val MRR {m:.4}")).unwrap_or_default()
        );
        if record.clipped_batches > 0 {
            log::info!("epoch {epoch}: gradient clipped in {} batches", record.clipped_batches);
        }
        self.log.epochs.push(record);
        self.log.stop_reason = stop;
        Ok(stop.is_some())
    }

    /// The best validated model, or the final one when nothing was validated.
    fn into_result(mut self, last: M) -> (M, TrainLog) {
        match self.best.take() {
            Some(best) => (best, self.log),
            None => {
                self.log.best_epoch = self.log.epochs.last().map(|e| e.epoch);
                (last, self.log)
            }
        }
    }
}

/// Trains HDMF towers by mini-batch SGD and returns the snapshot with the
/// best validation MRR.
pub fn train_hdmf(data: &PreparedData, cfg: &TrainConfig) -> Result<(Towers, TrainLog)> {
    cfg.validate()?;
    if cfg.arch.input_dim() != data.tags() {
        return Err(Error::Config(format!(
            "architecture expects {} tags, data has {}",
            cfg.arch.input_dim(),
            data.tags()
        )));
    }
    if data.validation.relevance.is_empty() {
        return Err(Error::Data("validation split has no items unseen in training".into()));
    }
    let objective = if cfg.hybrid {
        Objective::hybrid(&cfg.hp)?
    } else {
        Objective::deep_mf(&cfg.hp, &cfg.arch)?
    };
    let mut pairs = observed_pairs(&data.ratings)?;
    let mut towers = Towers::init(&cfg.arch, cfg.seed, cfg.init_stddev, cfg.untied_towers)?;
    let mut rng = shuffle_rng(cfg.seed);
    let mut progress = Progress::new();
    let validate = |t: &Towers| data.validation.mrr(&predict_scores_hdmf(t, &data.user_profiles, &data.item_profiles)?);

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut clipped = 0;
        for chunk in pairs.chunks(cfg.batch_pairs) {
            let batch = BatchSpec::assemble(chunk.to_vec(), &data.user_profiles, &data.item_profiles)?;
            let (loss, mut grads) = objective.loss_and_gradients(&batch, &towers)?;
            if !loss.is_finite() || !grads.iter().all(GradientSet::is_finite) {
                return Err(Error::Diverged { epoch, loss });
            }
            clipped += usize::from(clip_gradients(&mut grads, cfg.grad_clip));
            for (params, g) in towers.param_sets_mut().into_iter().zip(&grads) {
                g.apply(params, cfg.learning_rate);
            }
            epoch_loss += loss;
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss,
            val_mrr: None,
            seconds: started.elapsed().as_secs_f64(),
            clipped_batches: clipped,
        };
        if progress.finish_epoch(cfg, record, &towers, Some(validate))? {
            break;
        }
    }
    Ok(progress.into_result(towers))
}

/// Gradient of the MF loss restricted to one batch: only rows of users and
/// items present in the batch are touched.
struct MfGradient {
    users: BTreeMap<usize, Vec<f64>>,
    items: BTreeMap<usize, Vec<f64>>,
}

impl MfGradient {
    fn sum_sq(&self) -> f64 {
        self.users
            .values()
            .chain(self.items.values())
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum()
    }
}

/// `Σ (r − xᵢᵀyⱼ)² + λ(Σ‖xᵢ‖² + Σ‖yⱼ‖²)` over the batch and the rows it touches.
fn mf_batch(model: &MfModel, batch: &[ObservedPair], lambda: f64) -> (f64, MfGradient) {
    let k = model.k();
    let mut g = MfGradient {
        users: BTreeMap::new(),
        items: BTreeMap::new(),
    };
    let mut loss = 0.0;
    for p in batch {
        let x = model.user_factors.row(p.user);
        let y = model.item_factors.row(p.item);
        let e = p.rating - dot(x, y);
        loss += e * e;
        let gu = g.users.entry(p.user).or_insert_with(|| vec![0.0; k]);
        gu.iter_mut().zip(y).for_each(|(d, yv)| *d -= 2.0 * e * yv);
        let gi = g.items.entry(p.item).or_insert_with(|| vec![0.0; k]);
        gi.iter_mut().zip(x).for_each(|(d, xv)| *d -= 2.0 * e * xv);
    }
    for (rows, factors) in [(&mut g.users, &model.user_factors), (&mut g.items, &model.item_factors)] {
        for (&r, grad) in rows.iter_mut() {
            let f = factors.row(r);
            loss += lambda * dot(f, f);
            grad.iter_mut().zip(f).for_each(|(d, v)| *d += 2.0 * lambda * v);
        }
    }
    (loss, g)
}

/// Trains the plain MF baseline. With `validation` the same early-stopping
/// protocol as [`train_hdmf`] applies; without it training runs until
/// convergence or `max_epochs`.
pub fn train_mf(ratings: &RatingMatrix, k: usize, cfg: &TrainConfig, validation: Option<&Validation>) -> Result<(MfModel, TrainLog)> {
    cfg.validate()?;
    let mut pairs = observed_pairs(ratings)?;
    let mut model = MfModel::init(ratings.users(), ratings.items(), k, cfg.seed)?;
    let mut rng = shuffle_rng(cfg.seed);
    let mut progress = Progress::new();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut clipped = 0;
        for chunk in pairs.chunks(cfg.batch_pairs) {
            let (loss, mut g) = mf_batch(&model, chunk, cfg.mf_lambda);
            let norm = g.sum_sq().sqrt();
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let scale = if norm > cfg.grad_clip {
                clipped += 1;
                log::debug!("clipping gradient norm {norm:.3e} to {:.3e}", cfg.grad_clip);
                cfg.grad_clip / norm
            } else {
                1.0
            };
            for (rows, factors) in [(&mut g.users, &mut model.user_factors), (&mut g.items, &mut model.item_factors)] {
                for (&r, grad) in rows.iter_mut() {
                    let f = factors.row_mut(r);
                    f.iter_mut().zip(grad.iter()).for_each(|(v, d)| *v -= cfg.learning_rate * scale * d);
                }
            }
            epoch_loss += loss;
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss,
            val_mrr: None,
            seconds: started.elapsed().as_secs_f64(),
            clipped_batches: clipped,
        };
        let validate = validation.map(|v| move |m: &MfModel| v.mrr(&predict_scores_mf(m)));
        if progress.finish_epoch(cfg, record, &model, validate)? {
            break;
        }
    }
    Ok(progress.into_result(model))
}
