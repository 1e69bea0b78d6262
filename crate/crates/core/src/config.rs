//! Flat `key = value` run configuration with `[section]` headers.
//!
//! ```text
//! [run]
//! seed = 7
//! variant = vhcn
//!
//! [turn_dropout]
//! ratio = 0.3
//! ```
//!
//! Keys are addressed as `section.key`. Unknown keys are rejected. The value
//! `auto` means "the tuned default of the selected variant" (or, for seeds,
//! "derived from `run.seed`") and is replaced by [`RunConfig::resolved`].

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::augment::AugmentationConfig;
use crate::corpus::DEFAULT_FALLBACK;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, Variant};
use crate::rng::derive_seed;
use crate::train::{SizeCell, TrainConfig, DEFAULT_STAGE2_GRID};

const AUTO: &str = "auto";

/// Every accepted key with its default value, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("run.seed", "0"),
    ("run.variant", "hcn"),
    ("run.name", AUTO),
    ("run.n_seeds", "1"),
    ("data.source", "toy"),
    ("data.train", ""),
    ("data.dev", ""),
    ("data.test", ""),
    ("data.ood", ""),
    ("data.segments", ""),
    ("data.lexicon", ""),
    ("data.fallback", DEFAULT_FALLBACK),
    ("toy.n_dialogs", "200"),
    ("toy.n_actions", "20"),
    ("toy.seed", AUTO),
    ("augment.p_ood_start", "0.2"),
    ("augment.p_ood_cont", "0.4"),
    ("augment.independent_segment_prob", "0"),
    ("augment.seed", AUTO),
    ("turn_dropout.ratio", AUTO),
    ("turn_dropout.unk_prob", "0.5"),
    ("turn_dropout.seed", AUTO),
    ("model.embedding_dim", AUTO),
    ("model.latent_dim", AUTO),
    ("model.dialog_hidden", "128"),
    ("model.predictor_hidden", "128"),
    ("model.word_dropout", "0.2"),
    ("model.embeddings", ""),
    ("train.learning_rate", "0.001"),
    ("train.patience", "20"),
    ("train.max_epochs", "200"),
    ("train.batch_size", "1"),
    ("train.clip_norm", "5"),
    ("train.dev_selection", "turn_dropout"),
    ("gridsearch.stage1_grid", AUTO),
    ("gridsearch.stage2_grid", "0.05,0.1,0.2,0.3,0.4,0.5,0.6,0.7"),
    ("gridsearch.jobs", "1"),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|(_, v)| (*v).to_owned()).collect() }
    }
}

fn key_index(key: &str) -> Result<usize> {
    KEYS.iter().position(|(k, _)| *k == key).ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))
}

impl RunConfig {
    /// Defaults overridden by the entries of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_owned();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected `key = value` or `[section]`".into()))?;
            let k = k.trim();
            let key = if k.contains('.') || section.is_empty() { k.to_owned() } else { format!("{section}.{k}") };
            cfg.set(&key, v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let i = key_index(key)?;
        self.values[i] = value.to_owned();
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        Ok(&self.values[key_index(key)?])
    }

    pub fn value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| Error::Config(format!("`{key}` = `{raw}` cannot be parsed")))
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        let raw = self.get(key)?;
        Ok((!raw.is_empty()).then(|| PathBuf::from(raw)))
    }

    pub fn data_path(&self, key: &str) -> Result<Option<PathBuf>> {
        self.path(key)
    }

    pub fn variant(&self) -> Result<Variant> {
        self.value("run.variant")
    }

    /// Copy with every `auto` replaced by its concrete value.
    pub fn resolved(&self) -> Result<RunConfig> {
        let variant = self.variant()?;
        let defaults = ModelConfig::for_variant(variant);
        let root: u64 = self.value("run.seed")?;
        let mut out = self.clone();
        let mut fill = |key: &str, value: String| -> Result<()> {
            if self.get(key)? == AUTO {
                out.set(key, &value)?;
            }
            Ok(())
        };
        let td = self.get("turn_dropout.ratio")? != "0" && self.get("turn_dropout.ratio")? != "0.0";
        fill("run.name", variant.label(td))?;
        fill("toy.seed", derive_seed(root, "toy", 0).to_string())?;
        fill("augment.seed", derive_seed(root, "augment", 0).to_string())?;
        fill("turn_dropout.ratio", variant.default_turn_dropout().to_string())?;
        fill("turn_dropout.seed", derive_seed(root, "turn_dropout", 0).to_string())?;
        fill("model.embedding_dim", defaults.embedding_dim.to_string())?;
        fill("model.latent_dim", defaults.latent_dim.map_or("none".into(), |k| k.to_string()))?;
        let stage1 = match defaults.latent_dim {
            Some(_) => "64:8,128:8,128:16",
            None => "64,128",
        };
        fill("gridsearch.stage1_grid", stage1.to_owned())?;
        Ok(out)
    }

    fn resolved_value<T: FromStr>(&self, key: &str) -> Result<T> {
        let r = self.resolved()?;
        r.value(key)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let r = self.resolved()?;
        let cfg = ModelConfig {
            variant: r.variant()?,
            embedding_dim: r.value("model.embedding_dim")?,
            latent_dim: match r.get("model.latent_dim")? {
                "none" => None,
                _ => Some(r.value("model.latent_dim")?),
            },
            dialog_hidden: r.value("model.dialog_hidden")?,
            predictor_hidden: r.value("model.predictor_hidden")?,
            word_dropout: r.value("model.word_dropout")?,
            embeddings_path: r.path("model.embeddings")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let r = self.resolved()?;
        let cfg = TrainConfig {
            learning_rate: r.value("train.learning_rate")?,
            patience: r.value("train.patience")?,
            max_epochs: r.value("train.max_epochs")?,
            word_dropout: r.value("model.word_dropout")?,
            turn_dropout: r.value("turn_dropout.ratio")?,
            unk_prob: r.value("turn_dropout.unk_prob")?,
            batch_size: r.value("train.batch_size")?,
            clip_norm: r.value("train.clip_norm")?,
            dev_selection: r.value("train.dev_selection")?,
            seed: r.value("run.seed")?,
            turn_dropout_seed: Some(r.value("turn_dropout.seed")?),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn augmentation_config(&self) -> Result<AugmentationConfig> {
        let cfg = AugmentationConfig {
            p_ood_start: self.value("augment.p_ood_start")?,
            p_ood_cont: self.value("augment.p_ood_cont")?,
            independent_segment_prob: self.value("augment.independent_segment_prob")?,
            seed: self.resolved_value("augment.seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stage1_grid(&self) -> Result<Vec<SizeCell>> {
        let r = self.resolved()?;
        parse_list(r.get("gridsearch.stage1_grid")?)
    }

    pub fn stage2_grid(&self) -> Result<Vec<f64>> {
        let raw = self.get("gridsearch.stage2_grid")?;
        if raw == AUTO {
            return Ok(DEFAULT_STAGE2_GRID.to_vec());
        }
        parse_list(raw)
    }

    /// `(key, value)` pairs of the resolved configuration.
    pub fn echo(&self) -> Result<Vec<(String, String)>> {
        let r = self.resolved()?;
        Ok(KEYS.iter().zip(&r.values).map(|((k, _), v)| ((*k).to_owned(), v.clone())).collect())
    }

    /// Sectioned text that [`RunConfig::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for ((key, _), value) in KEYS.iter().zip(&self.values) {
            let (section, name) = key.split_once('.').expect("keys are sectioned");
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }
}

/// Comma-separated list.
pub fn parse_list<T: FromStr>(raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("cannot parse list item `{s}`"))))
        .collect()
}
