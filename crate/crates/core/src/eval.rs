//! Scoring, top-k ranking and ranking metrics (P@k, R@k, F@k, MAP, MRR).
//!
//! Protocol: a user's relevant items are those they annotated in the
//! held-out split but not in training; training items are never ranked;
//! AP and RR use the full ranking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::autoencoder::{encode, ModelParams, Towers};
use crate::error::{Error, Result};
use crate::folksonomy::{ProfileMatrix, View};
use crate::tensor::{dot, DenseMatrix};
use crate::train::MfModel;

pub const DEFAULT_CUTOFFS: [usize; 4] = [5, 15, 30, 50];

/// Scores `(user, item)` as the dot product of latent rows: code vectors for
/// HDMF, factor rows for MF.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentScorer {
    users: DenseMatrix,
    items: DenseMatrix,
}

impl LatentScorer {
    pub fn new(users: DenseMatrix, items: DenseMatrix) -> Result<Self> {
        if users.cols() != items.cols() {
            return Err(Error::shape(
                "LatentScorer",
                format!("user dim {} vs item dim {}", users.cols(), items.cols()),
            ));
        }
        Ok(LatentScorer { users, items })
    }

    pub fn user_count(&self) -> usize {
        self.users.rows()
    }

    pub fn item_count(&self) -> usize {
        self.items.rows()
    }

    pub fn user_vector(&self, user: usize) -> &[f64] {
        self.users.row(user)
    }

    pub fn item_vector(&self, item: usize) -> &[f64] {
        self.items.row(item)
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        dot(self.users.row(user), self.items.row(item))
    }

    pub fn scores_for(&self, user: usize) -> Vec<f64> {
        let u = self.users.row(user);
        (0..self.items.rows()).map(|i| dot(u, self.items.row(i))).collect()
    }
}

const ENCODE_CHUNK: usize = 1024;

/// Code vectors (one row per profile) for every row of `profiles`.
pub fn encode_profiles(params: &ModelParams, profiles: &ProfileMatrix) -> Result<DenseMatrix> {
    if profiles.tags() != params.arch().input_dim() {
        return Err(Error::shape(
            "encode_profiles",
            format!("profiles have {} tags, model expects {}", profiles.tags(), params.arch().input_dim()),
        ));
    }
    let code_dim = params.arch().code_dim();
    let mut out = DenseMatrix::zeros(profiles.rows(), code_dim);
    let ids: Vec<usize> = (0..profiles.rows()).collect();
    for chunk in ids.chunks(ENCODE_CHUNK) {
        let (codes, _) = encode(params, &profiles.columns(chunk))?;
        for (c, &row) in chunk.iter().enumerate() {
            for d in 0..code_dim {
                out.set(row, d, codes.get(d, c));
            }
        }
    }
    Ok(out)
}

/// Encodes every user and item once; `score(i, j) = x̃ᵢᵀỹⱼ`.
pub fn predict_scores_hdmf(towers: &Towers, user_profiles: &ProfileMatrix, item_profiles: &ProfileMatrix) -> Result<LatentScorer> {
    if !user_profiles.is_normalized() || !item_profiles.is_normalized() {
        return Err(Error::Data("HDMF scoring expects normalized profiles".into()));
    }
    LatentScorer::new(
        encode_profiles(towers.users(), user_profiles)?,
        encode_profiles(towers.items(), item_profiles)?,
    )
}

pub fn predict_scores_mf(mf: &MfModel) -> LatentScorer {
    LatentScorer::new(mf.user_factors().clone(), mf.item_factors().clone()).expect("MfModel shapes are consistent")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub user: usize,
    /// Best first.
    pub items: Vec<usize>,
}

/// Orders candidate items by score descending; equal scores fall back to
/// ascending item index. Excluded items never appear.
pub fn rank_scores(user: usize, scores: &[f64], exclude: &BTreeSet<usize>, limit: usize) -> RankedList {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|i| !exclude.contains(i)).collect();
    if candidates.is_empty() {
        log::warn!("user {user}: every item is excluded, nothing to rank");
    }
    let order = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if limit < candidates.len() {
        if limit > 0 {
            candidates.select_nth_unstable_by(limit - 1, order);
        }
        candidates.truncate(limit);
    }
    candidates.sort_unstable_by(order);
    RankedList { user, items: candidates }
}

pub fn rank_for_user(scorer: &LatentScorer, user: usize, exclude: &BTreeSet<usize>, limit: usize) -> RankedList {
    rank_scores(user, &scorer.scores_for(user), exclude, limit)
}

/// Per-user relevant items: held-out annotations minus training items.
/// Users left with nothing relevant are omitted.
pub fn relevance_sets(held_out: View<'_>, train_items: &[BTreeSet<usize>]) -> BTreeMap<usize, BTreeSet<usize>> {
    let mut out: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for a in held_out.assignments {
        let seen = train_items.get(a.user).is_some_and(|s| s.contains(&a.item));
        if !seen {
            out.entry(a.user).or_default().insert(a.item);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    /// Mean P@k per cutoff.
    pub precision: Vec<f64>,
    /// Mean R@k per cutoff.
    pub recall: Vec<f64>,
    /// Harmonic mean of the mean P@k and mean R@k.
    pub f1: Vec<f64>,
    pub map: f64,
    pub mrr: f64,
    pub user_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct UserMetrics {
    hits: Vec<usize>,
    ap: f64,
    rr: f64,
}

fn user_metrics(list: &RankedList, relevant: &BTreeSet<usize>, cutoffs: &[usize]) -> UserMetrics {
    let hits = cutoffs
        .iter()
        .map(|&k| list.items.iter().take(k).filter(|i| relevant.contains(i)).count())
        .collect();
    let mut found = 0usize;
    let mut precision_sum = 0.0;
    let mut rr = 0.0;
    for (pos, item) in list.items.iter().enumerate() {
        if relevant.contains(item) {
            found += 1;
            precision_sum += found as f64 / (pos + 1) as f64;
            if found == 1 {
                rr = 1.0 / (pos + 1) as f64;
            }
        }
    }
    UserMetrics {
        hits,
        ap: precision_sum / relevant.len() as f64,
        rr,
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores ranked lists against per-user relevant sets. Means are unweighted
/// over users, accumulated in the order of `lists`.
pub fn evaluate(lists: &[RankedList], relevance: &BTreeMap<usize, BTreeSet<usize>>, cutoffs: &[usize]) -> Result<EvalReport> {
    if lists.is_empty() {
        return Err(Error::Data("no users to evaluate".into()));
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config(format!("cutoffs must be non-empty and positive, got {cutoffs:?}")));
    }
    let mut precision = vec![0.0; cutoffs.len()];
    let mut recall = vec![0.0; cutoffs.len()];
    let mut map = 0.0;
    let mut mrr = 0.0;
    for list in lists {
        let relevant = relevance
            .get(&list.user)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Data(format!("user {} has no relevant items", list.user)))?;
        let m = user_metrics(list, relevant, cutoffs);
        for (c, (&k, &h)) in cutoffs.iter().zip(&m.hits).enumerate() {
            precision[c] += h as f64 / k as f64;
            recall[c] += h as f64 / relevant.len() as f64;
        }
        map += m.ap;
        mrr += m.rr;
    }
    let n = lists.len() as f64;
    precision.iter_mut().chain(recall.iter_mut()).for_each(|v| *v /= n);
    let f1 = precision.iter().zip(&recall).map(|(&p, &r)| harmonic_mean(p, r)).collect();
    Ok(EvalReport {
        cutoffs: cutoffs.to_vec(),
        precision,
        recall,
        f1,
        map: map / n,
        mrr: mrr / n,
        user_count: lists.len(),
    })
}

/// Ranks every user with relevant items over all non-training items and
/// evaluates the full rankings.
pub fn evaluate_scorer(
    scorer: &LatentScorer,
    train_items: &[BTreeSet<usize>],
    relevance: &BTreeMap<usize, BTreeSet<usize>>,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    let empty = BTreeSet::new();
    let lists: Vec<RankedList> = relevance
        .keys()
        .map(|&u| rank_for_user(scorer, u, train_items.get(u).unwrap_or(&empty), scorer.item_count()))
        .collect();
    evaluate(&lists, relevance, cutoffs)
}

/// Formats with four significant digits (`18.20`, `3.870`, `0.4370`).
pub fn four_significant(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.3}");
    }
    let decimals = |mag: i32| (3 - mag).max(0) as usize;
    let mag = x.abs().log10().floor() as i32;
    let s = format!("{:.*}", decimals(mag), x);
    // Rounding can carry into the next power of ten (9.9996 → 10.000).
    let rounded: f64 = s.parse().unwrap_or(x);
    if rounded.abs() >= 10f64.powi(mag + 1) {
        format!("{:.*}", decimals(mag + 1), x)
    } else {
        s
    }
}

impl EvalReport {
    /// Column names in reporting order: all P@k, all R@k, all F@k, MAP, MRR.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = Vec::new();
        for prefix in ["P", "R", "F"] {
            cols.extend(self.cutoffs.iter().map(|k| format!("{prefix}@{k}")));
        }
        cols.push("MAP".into());
        cols.push("MRR".into());
        cols
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = self.precision.clone();
        v.extend(&self.recall);
        v.extend(&self.f1);
        v.push(self.map);
        v.push(self.mrr);
        v
    }

    /// `key = value` lines with raw fractions.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        writeln!(s, "users = {}", self.user_count).unwrap();
        for (k, v) in self.columns().iter().zip(self.values()) {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// Header plus one row, percentages to four significant digits.
    pub fn to_tsv(&self) -> String {
        let row: Vec<String> = self.values().iter().map(|v| four_significant(100.0 * v)).collect();
        format!("{}\n{}\n", self.columns().join("\t"), row.join("\t"))
    }
}
