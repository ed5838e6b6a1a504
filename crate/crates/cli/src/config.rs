//! Run configuration: a flat TOML file, overridden by `HDMF_*` environment
//! variables, overridden in turn by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hdmf_core::autoencoder::Architecture;
use hdmf_core::folksonomy::{ColumnMapping, HeaderMode, SplitRatios};
use hdmf_core::objective::HyperParams;
use hdmf_core::train::TrainConfig;
use serde::Deserialize;

pub const ENV_PREFIX: &str = "HDMF_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hdmf,
    Mf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Header {
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub model: ModelKind,
    pub seed: u64,

    pub min_uses: usize,
    /// Zero-based `user, tag, item` field positions in the input TSV.
    pub columns: [usize; 3],
    pub header: Header,
    pub ratios: [f64; 3],

    /// Symmetric hidden layer sizes, e.g. `[2000, 300, 128, 300, 2000]`.
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_pairs: usize,
    pub early_stop_patience: usize,
    pub eval_every: usize,
    pub convergence_tol: f64,
    pub grad_clip: f64,
    pub init_stddev: f64,
    pub lambda_theta: f64,
    pub lambda_e: f64,
    pub hybrid: bool,
    pub untied_towers: bool,
    pub binarize_ratings: bool,
    pub mf_k: usize,
    pub mf_lambda: f64,

    pub cutoffs: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        let train = TrainConfig::new(Architecture::new(1, vec![1]).expect("valid placeholder"));
        RunConfig {
            input: None,
            cache_dir: PathBuf::from("cache"),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            model: ModelKind::Hdmf,
            seed: 0,
            min_uses: 15,
            columns: [0, 1, 2],
            header: Header::Auto,
            ratios: [0.8, 0.05, 0.15],
            hidden_layers: vec![2000, 300, 128, 300, 2000],
            learning_rate: train.learning_rate,
            max_epochs: train.max_epochs,
            batch_pairs: train.batch_pairs,
            early_stop_patience: train.early_stop_patience,
            eval_every: train.eval_every,
            convergence_tol: train.convergence_tol,
            grad_clip: train.grad_clip,
            init_stddev: train.init_stddev,
            lambda_theta: hp.lambda_theta,
            lambda_e: hp.lambda_e,
            hybrid: true,
            untied_towers: false,
            binarize_ratings: false,
            mf_k: 128,
            mf_lambda: train.mf_lambda,
            cutoffs: hdmf_core::eval::DEFAULT_CUTOFFS.to_vec(),
        }
    }
}

/// Every key the file and the environment accept.
pub const KEYS: [&str; 27] = [
    "input",
    "cache_dir",
    "out_dir",
    "checkpoint",
    "model",
    "seed",
    "min_uses",
    "columns",
    "header",
    "ratios",
    "hidden_layers",
    "learning_rate",
    "max_epochs",
    "batch_pairs",
    "early_stop_patience",
    "eval_every",
    "convergence_tol",
    "grad_clip",
    "init_stddev",
    "lambda_theta",
    "lambda_e",
    "hybrid",
    "untied_towers",
    "binarize_ratings",
    "mf_k",
    "mf_lambda",
    "cutoffs",
];

const PATH_KEYS: [&str; 4] = ["input", "cache_dir", "out_dir", "checkpoint"];

/// Reads an environment value as a TOML literal. Bare words become strings
/// and bare comma lists become arrays.
fn env_value(raw: &str) -> toml::Value {
    let parse = |s: &str| {
        format!("v = {s}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
    };
    parse(raw)
        .or_else(|| raw.contains(',').then(|| parse(&format!("[{raw}]"))).flatten())
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn resolve_paths(table: &mut toml::Table, base: &Path) {
    for key in PATH_KEYS {
        if let Some(toml::Value::String(s)) = table.get_mut(key) {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).to_string_lossy().into_owned();
            }
        }
    }
}

impl RunConfig {
    /// File (paths relative to the file), then environment overrides.
    pub fn load(file: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> anyhow::Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                let mut t: toml::Table = text
                    .parse()
                    .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
                resolve_paths(&mut t, path.parent().unwrap_or(Path::new(".")));
                t
            }
            None => toml::Table::new(),
        };
        for key in KEYS {
            if let Some(raw) = env(&format!("{ENV_PREFIX}{}", key.to_uppercase())) {
                table.insert(key.to_owned(), env_value(&raw));
            }
        }
        let cfg: RunConfig = table.try_into().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn hyper_params(&self) -> anyhow::Result<HyperParams> {
        HyperParams::new(self.lambda_theta, self.lambda_e).map_err(|e| ConfigError(e.to_string()).into())
    }

    pub fn split_ratios(&self) -> anyhow::Result<SplitRatios> {
        let [a, b, c] = self.ratios;
        SplitRatios::new(a, b, c).map_err(|e| ConfigError(e.to_string()).into())
    }

    pub fn column_mapping(&self) -> ColumnMapping {
        ColumnMapping {
            user: self.columns[0],
            tag: self.columns[1],
            item: self.columns[2],
            header: match self.header {
                Header::Auto => HeaderMode::Auto,
                Header::Present => HeaderMode::Present,
                Header::Absent => HeaderMode::Absent,
            },
        }
    }

    pub fn validate_cutoffs(&self) -> anyhow::Result<()> {
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            bail!(ConfigError(format!("cutoffs must be positive, got {:?}", self.cutoffs)));
        }
        Ok(())
    }

    /// Training settings for data with `tags` columns.
    pub fn train_config(&self, tags: usize) -> anyhow::Result<TrainConfig> {
        let arch = Architecture::from_hidden_layers(tags, &self.hidden_layers).map_err(|e| ConfigError(e.to_string()))?;
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            batch_pairs: self.batch_pairs,
            early_stop_patience: self.early_stop_patience,
            eval_every: self.eval_every,
            convergence_tol: self.convergence_tol,
            grad_clip: self.grad_clip,
            seed: self.seed,
            init_stddev: self.init_stddev,
            hp: self.hyper_params()?,
            arch,
            hybrid: self.hybrid,
            untied_towers: self.untied_towers,
            mf_lambda: self.mf_lambda,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.mf_k == 0 {
            bail!(ConfigError("mf_k must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.bin"))
    }
}

/// Marks an error as a configuration problem (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults_without_file() {
        let cfg = RunConfig::load(None, no_env).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.learning_rate, 0.002);
        assert_eq!(cfg.cutoffs, vec![5, 15, 30, 50]);
    }

    #[test]
    fn file_paths_are_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "cache_dir = \"c\"\nout_dir = \"/abs\"\nlearning_rate = 0.01\n").unwrap();
        let cfg = RunConfig::load(Some(&path), no_env).unwrap();
        assert_eq!(cfg.cache_dir, dir.path().join("c"));
        assert_eq!(cfg.out_dir, PathBuf::from("/abs"));
        assert_eq!(cfg.learning_rate, 0.01);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "learning_rat = 0.01\n").unwrap();
        let err = RunConfig::load(Some(&path), no_env).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn environment_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\nmodel = \"hdmf\"\n").unwrap();
        let env: HashMap<String, String> = [
            ("HDMF_SEED", "9"),
            ("HDMF_MODEL", "mf"),
            ("HDMF_HIDDEN_LAYERS", "16,8,16"),
            ("HDMF_OUT_DIR", "rel/out"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect();
        let cfg = RunConfig::load(Some(&path), |k| env.get(k).cloned()).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model, ModelKind::Mf);
        assert_eq!(cfg.hidden_layers, vec![16, 8, 16]);
        // Environment paths stay relative to the working directory.
        assert_eq!(cfg.out_dir, PathBuf::from("rel/out"));
    }

    #[test]
    fn invalid_hyperparameters_are_config_errors() {
        let cfg = RunConfig {
            lambda_theta: 0.6,
            lambda_e: 0.5,
            ..RunConfig::default()
        };
        assert!(cfg.train_config(10).unwrap_err().downcast_ref::<ConfigError>().is_some());
        let cfg = RunConfig {
            hidden_layers: vec![8, 4],
            ..RunConfig::default()
        };
        assert!(cfg.train_config(10).is_err());
    }
}
