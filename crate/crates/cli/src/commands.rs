use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use hdmf_core::autoencoder::Architecture;
use hdmf_core::checkpoint::{load_checkpoint, save_mf, save_towers, Model};
use hdmf_core::eval::{evaluate_scorer, predict_scores_hdmf, predict_scores_mf, rank_for_user, LatentScorer};
use hdmf_core::folksonomy::{load_assignments, read_cache, split_assignments, write_cache, Folksonomy, SplitFolksonomy};
use hdmf_core::objective::check_gradients as run_gradient_check;
use hdmf_core::train::{train_hdmf, train_mf, PreparedData};
use hdmf_core::Error;

use crate::config::{ConfigError, ModelKind, RunConfig};

#[derive(Debug, thiserror::Error)]
#[error("gradient check failed for seeds {0:?}")]
pub struct GradientCheckFailed(pub Vec<u64>);

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })?;
    Ok(())
}

pub fn prepare(cfg: &RunConfig) -> anyhow::Result<()> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| ConfigError("no input file (set `input` or pass --input)".into()))?;
    let ratios = cfg.split_ratios()?;
    if cfg.min_uses == 0 {
        bail!(ConfigError("min_uses must be at least 1".into()));
    }
    let loaded = load_assignments(input, cfg.column_mapping())?;
    if !loaded.malformed.is_empty() {
        log::warn!("skipped {} malformed rows", loaded.malformed.len());
    }
    let raw = Folksonomy::from_assignments(&loaded.assignments);
    let filtered = raw.filter_infrequent_tags(cfg.min_uses)?;
    let split = split_assignments(&filtered, ratios, cfg.seed)?;
    write_cache(&cfg.cache_dir, &split)?;
    println!("{}", filtered.summary());
    log::info!(
        "split {}/{}/{} written to {}",
        split.train.len(),
        split.valid.len(),
        split.test.len(),
        cfg.cache_dir.display()
    );
    Ok(())
}

fn load_data(cfg: &RunConfig) -> anyhow::Result<(SplitFolksonomy, PreparedData)> {
    let split = read_cache(&cfg.cache_dir).with_context(|| format!("reading cache {}", cfg.cache_dir.display()))?;
    let data = PreparedData::from_split(&split, cfg.binarize_ratings)?;
    Ok((split, data))
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    // Hyperparameters are checked before touching the cache or the output.
    cfg.hyper_params()?;
    let (_, data) = load_data(cfg)?;
    let train_cfg = cfg.train_config(data.tags())?;
    let checkpoint = cfg.checkpoint_path();
    let log = match cfg.model {
        ModelKind::Hdmf => {
            let (towers, log) = train_hdmf(&data, &train_cfg)?;
            create_dir(&cfg.out_dir)?;
            save_towers(&towers, &checkpoint)?;
            log
        }
        ModelKind::Mf => {
            let (mf, log) = train_mf(&data.ratings, cfg.mf_k, &train_cfg, Some(&data.validation))?;
            create_dir(&cfg.out_dir)?;
            save_mf(&mf, &checkpoint)?;
            log
        }
    };
    write_file(&cfg.out_dir.join("train_log.jsonl"), log.to_jsonl())?;
    println!(
        "trained {} epochs (stop: {:?}, best epoch {:?}, validation MRR {:?}) -> {}",
        log.epochs.len(),
        log.stop_reason,
        log.best_epoch,
        log.best_val_mrr,
        checkpoint.display()
    );
    Ok(())
}

fn scorer_for(model: &Model, data: &PreparedData) -> anyhow::Result<LatentScorer> {
    let (users, items) = (data.user_profiles.rows(), data.item_profiles.rows());
    match model {
        Model::Hdmf(towers) => {
            let arch: &Architecture = towers.arch();
            if arch.input_dim() != data.tags() {
                bail!(Error::Data(format!(
                    "checkpoint expects {} tags but the cache has {}",
                    arch.input_dim(),
                    data.tags()
                )));
            }
            Ok(predict_scores_hdmf(towers, &data.user_profiles, &data.item_profiles)?)
        }
        Model::Mf(mf) => {
            if mf.user_factors().rows() != users || mf.item_factors().rows() != items {
                bail!(Error::Data(format!(
                    "checkpoint covers {}x{} users x items but the cache has {users}x{items}",
                    mf.user_factors().rows(),
                    mf.item_factors().rows()
                )));
            }
            Ok(predict_scores_mf(mf))
        }
    }
}

pub fn evaluate(cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.validate_cutoffs()?;
    let (_, data) = load_data(cfg)?;
    let model = load_checkpoint(&cfg.checkpoint_path())?;
    let scorer = scorer_for(&model, &data)?;
    let report = evaluate_scorer(&scorer, &data.validation.train_items, &data.test_relevance, &cfg.cutoffs)?;
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("report.txt"), report.to_key_values())?;
    write_file(&cfg.out_dir.join("report.tsv"), report.to_tsv())?;
    print!("{}", report.to_tsv());
    Ok(())
}

pub fn recommend(cfg: &RunConfig, user: &str, k: usize) -> anyhow::Result<()> {
    let (split, data) = load_data(cfg)?;
    let uid = split
        .vocab
        .users
        .get(user)
        .ok_or_else(|| Error::Data(format!("unknown user {user:?}")))?;
    let model = load_checkpoint(&cfg.checkpoint_path())?;
    let scorer = scorer_for(&model, &data)?;
    let list = rank_for_user(&scorer, uid, &data.validation.train_items[uid], k);
    for (rank, &item) in list.items.iter().enumerate() {
        println!("{}\t{}\t{:.6}", rank + 1, split.vocab.items.token(item), scorer.score(uid, item));
    }
    Ok(())
}

pub fn check_gradients(encoder: &[usize], tags: usize, seeds: &[u64], tolerance: f64) -> anyhow::Result<()> {
    let arch = Architecture::new(tags, encoder.to_vec()).map_err(|e| ConfigError(e.to_string()))?;
    let mut failed = Vec::new();
    for &seed in seeds {
        let report = run_gradient_check(&arch, seed, tolerance).map_err(|e| match e {
            Error::Config(m) => anyhow::Error::from(ConfigError(m)),
            other => other.into(),
        })?;
        println!(
            "seed {seed}: {} coordinates, max relative error {:.3e}, max absolute error {:.3e}: {}",
            report.checked,
            report.max_rel_error,
            report.max_abs_error,
            if report.passed() { "ok" } else { "FAILED" }
        );
        for m in report.failures.iter().take(10) {
            println!("  {m:?}");
        }
        if !report.passed() {
            failed.push(seed);
        }
    }
    if !failed.is_empty() {
        bail!(GradientCheckFailed(failed));
    }
    Ok(())
}
