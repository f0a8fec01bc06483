//! Run configuration files: one `key = value` per line, `#` starts a comment.
//! Unknown and repeated keys are errors; missing keys take defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{gmm_generate, load_idx, Dataset};
use crate::error::{ConfigError, Error, Result};
use crate::nncore::{Activation, AdamConfig};
use crate::objective::LossWeights;
use crate::trainer::{NearestMode, TrainConfig};

pub const KEYS: &[&str] = &[
    "beta",
    "alpha",
    "k_pseudo",
    "dim_z",
    "hidden",
    "batch",
    "epochs",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "seed",
    "nearest_mode",
    "decoder_output",
    "dataset",
    "output_dir",
    "gmm_modes",
    "gmm_dim",
    "gmm_n",
    "gmm_test_n",
    "gmm_seed",
    "idx_train_images",
    "idx_train_labels",
    "idx_test_images",
    "idx_test_labels",
    "idx_train_limit",
    "idx_test_limit",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// `n + test_n` draws from one mixture; the first `n` train.
    Gmm {
        modes: usize,
        dim: usize,
        n: usize,
        test_n: usize,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first this-many samples of each split.
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
}

impl DatasetSource {
    /// Training and test splits.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSource::Gmm {
                modes,
                dim,
                n,
                test_n,
                seed,
            } => {
                if *n == 0 || *test_n == 0 {
                    return Err(ConfigError::BadValue {
                        key: "gmm_n".into(),
                        reason: "train and test sizes must be positive".into(),
                    }
                    .into());
                }
                let all = gmm_generate(*modes, *dim, n + test_n, *seed)?;
                let train: Vec<usize> = (0..*n).collect();
                let test: Vec<usize> = (*n..n + test_n).collect();
                Ok((all.subset(&train)?, all.subset(&test)?))
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => {
                let limit = |d: Dataset, l: &Option<usize>| match l {
                    Some(l) if *l < d.len() => d.head(*l),
                    _ => Ok(d),
                };
                let train = limit(load_idx(train_images, train_labels)?, train_limit)?;
                let test = limit(load_idx(test_images, test_labels)?, test_limit)?;
                Ok((train, test))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: DatasetSource,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Parses `text`; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let entries = entries(text)?;
        let r = Reader { entries: &entries };

        let seed: u64 = r.get("seed", 0)?;
        let dataset_kind: String = r.get("dataset", "gmm".to_string())?;
        let (dataset, default_output) = match dataset_kind.as_str() {
            "gmm" => (
                DatasetSource::Gmm {
                    modes: r.get("gmm_modes", 5)?,
                    dim: r.get("gmm_dim", 10)?,
                    n: r.get("gmm_n", 2000)?,
                    test_n: r.get("gmm_test_n", 500)?,
                    seed: r.get("gmm_seed", seed)?,
                },
                Activation::Identity,
            ),
            "idx" => {
                let limit = |key: &str| -> Result<Option<usize>, ConfigError> {
                    let v: usize = r.get(key, 0)?;
                    Ok((v > 0).then_some(v))
                };
                (
                    DatasetSource::Idx {
                        train_images: base.join(r.required::<String>("idx_train_images")?),
                        train_labels: base.join(r.required::<String>("idx_train_labels")?),
                        test_images: base.join(r.required::<String>("idx_test_images")?),
                        test_labels: base.join(r.required::<String>("idx_test_labels")?),
                        train_limit: limit("idx_train_limit")?,
                        test_limit: limit("idx_test_limit")?,
                    },
                    Activation::Sigmoid,
                )
            }
            other => {
                return Err(bad(
                    "dataset",
                    format!("expected gmm or idx, got `{other}`"),
                ));
            }
        };
        // Keys belonging to the other dataset kind are still typos.
        let foreign = if dataset_kind == "gmm" {
            "idx_"
        } else {
            "gmm_"
        };
        if let Some((key, (line, _))) = entries.iter().find(|(k, _)| k.starts_with(foreign)) {
            return Err(ConfigError::UnknownKey {
                line: *line,
                key: key.clone(),
            });
        }

        let decoder_output = match r.entries.get("decoder_output") {
            None => default_output,
            Some((_, v)) => match v.as_str() {
                "sigmoid" => Activation::Sigmoid,
                "identity" => Activation::Identity,
                _ => {
                    return Err(bad(
                        "decoder_output",
                        format!("expected sigmoid or identity, got `{v}`"),
                    ))
                }
            },
        };
        let mode: String = r.get("nearest_mode", "data".to_string())?;
        let nearest_mode = NearestMode::from_name(&mode).ok_or_else(|| {
            bad(
                "nearest_mode",
                format!("expected data or latent, got `{mode}`"),
            )
        })?;
        let hidden = match r.entries.get("hidden") {
            None => vec![256, 256],
            Some((_, v)) if v.is_empty() || v == "none" => Vec::new(),
            Some((_, v)) => v
                .split(',')
                .map(|w| w.trim().parse::<usize>().ok().filter(|&w| w > 0))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| {
                    bad(
                        "hidden",
                        format!("expected positive comma-separated widths, got `{v}`"),
                    )
                })?,
        };
        let weights = LossWeights::new(r.get("beta", 1.0)?, r.get("alpha", 1.0)?)
            .map_err(|e| bad("beta", e.to_string()))?;
        let defaults = AdamConfig::default();
        let train = TrainConfig {
            weights,
            k: r.get("k_pseudo", 500)?,
            dim_z: r.get("dim_z", 8)?,
            hidden,
            batch_size: r.get("batch", 100)?,
            epochs: r.get("epochs", 10)?,
            adam: AdamConfig {
                lr: r.get("lr", defaults.lr)?,
                beta1: r.get("adam_beta1", defaults.beta1)?,
                beta2: r.get("adam_beta2", defaults.beta2)?,
                eps: r.get("adam_eps", defaults.eps)?,
            },
            seed,
            nearest_mode,
            decoder_output,
        };
        train.validate().map_err(|e| bad("config", e.to_string()))?;
        let output_dir = base.join(r.get::<String>("output_dir", "out".to_string())?);
        Ok(Self {
            train,
            dataset,
            output_dir,
        })
    }

    /// Reads and parses a config file; relative paths resolve against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self::parse(&text, base)?)
    }
}

type Entries = BTreeMap<String, (usize, String)>;

fn entries(text: &str) -> Result<Entries, ConfigError> {
    let mut out = Entries::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or(ConfigError::Syntax { line })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if out
            .insert(key.to_string(), (line, value.trim().to_string()))
            .is_some()
        {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
            });
        }
    }
    Ok(out)
}

struct Reader<'a> {
    entries: &'a Entries,
}

impl Reader<'_> {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(_) => self.required(key),
        }
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let (_, v) = self
            .entries
            .get(key)
            .ok_or_else(|| bad(key, "required for this dataset".into()))?;
        v.parse()
            .map_err(|_| bad(key, format!("cannot parse `{v}`")))
    }
}

fn bad(key: &str, reason: String) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        reason,
    }
}
