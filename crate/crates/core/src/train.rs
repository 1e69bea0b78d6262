//! Training loop, two-stage grid search and multi-seed runs.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::corpus::{EmbeddingTable, FeaturizedDialog, Featurizer, UNK_ID};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, Variant};
use crate::nncore::{adam_step, clip_grad_norm, AdamState};
use crate::rng;
use crate::turndrop::{self, TurnDropoutConfig};

/// Replaces each token by UNK with probability `p`.
pub fn word_dropout<R: Rng>(tokens: &[usize], p: f64, rng: &mut R) -> Vec<usize> {
    if p <= 0.0 {
        return tokens.to_vec();
    }
    tokens.iter().map(|&t| if rng.random_bool(p.min(1.0)) { UNK_ID } else { t }).collect()
}

/// Which dev set drives model selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DevSelection {
    /// IND dev set with fixed, seeded turn dropout at the training ratio.
    TurnDropout,
    /// IND dev set as is.
    Plain,
}

impl DevSelection {
    pub fn as_str(self) -> &'static str {
        match self {
            DevSelection::TurnDropout => "turn_dropout",
            DevSelection::Plain => "plain",
        }
    }
}

impl FromStr for DevSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "turn_dropout" => Ok(DevSelection::TurnDropout),
            "plain" => Ok(DevSelection::Plain),
            other => Err(Error::Config(format!("unknown dev selection `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub word_dropout: f64,
    pub turn_dropout: f64,
    pub unk_prob: f64,
    /// Dialogs per optimizer step.
    pub batch_size: usize,
    pub clip_norm: f64,
    pub dev_selection: DevSelection,
    pub seed: u64,
    /// Root of the turn dropout streams; derived from `seed` when unset.
    pub turn_dropout_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            patience: 20,
            max_epochs: 200,
            word_dropout: 0.2,
            turn_dropout: 0.0,
            unk_prob: 0.5,
            batch_size: 1,
            clip_norm: 5.0,
            dev_selection: DevSelection::TurnDropout,
            seed: 0,
            turn_dropout_seed: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the tuned turn dropout ratio of `variant`.
    pub fn for_variant(variant: Variant, seed: u64) -> Self {
        TrainConfig { turn_dropout: variant.default_turn_dropout(), seed, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 || self.max_epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("patience, max_epochs and batch_size must be at least 1".into()));
        }
        for (name, v) in
            [("word_dropout", self.word_dropout), ("turn_dropout", self.turn_dropout), ("unk_prob", self.unk_prob)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if [self.learning_rate, self.clip_norm].iter().any(|x| x.is_nan() || *x <= 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn dropout_seed(&self) -> u64 {
        self.turn_dropout_seed.unwrap_or_else(|| rng::derive_seed(self.seed, "turn_dropout", 0))
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        [
            ("train.learning_rate", self.learning_rate.to_string()),
            ("train.patience", self.patience.to_string()),
            ("train.max_epochs", self.max_epochs.to_string()),
            ("train.word_dropout", self.word_dropout.to_string()),
            ("train.turn_dropout", self.turn_dropout.to_string()),
            ("train.unk_prob", self.unk_prob.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.clip_norm", self.clip_norm.to_string()),
            ("train.dev_selection", self.dev_selection.as_str().to_string()),
            ("train.seed", self.seed.to_string()),
            ("turn_dropout.seed", self.dropout_seed().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
    /// Mean per-turn KL (VHCN; zero otherwise).
    pub kl_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_acc: f64,
    pub wall_time: Duration,
}

impl TrainHistory {
    /// Tab-separated, one row per epoch, preceded by `# key = value` lines.
    pub fn to_tsv(&self, echo: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in echo {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let _ = writeln!(out, "# best_epoch = {}", self.best_epoch);
        let _ = writeln!(out, "epoch\ttrain_loss\tdev_acc\tkl_mean");
        for e in &self.epochs {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.epoch, e.train_loss, e.dev_acc, e.kl_mean);
        }
        out
    }

    /// History without wall time, for determinism comparisons.
    pub fn timeless(&self) -> TrainHistory {
        TrainHistory { wall_time: Duration::ZERO, ..self.clone() }
    }
}

/// Fraction of turns whose greedy prediction equals the target.
pub fn accuracy(model: &Model, dialogs: &[FeaturizedDialog]) -> Result<f64> {
    let counts = dialogs
        .par_iter()
        .map(|d| {
            let pred = model.predict_dialog(d)?;
            let correct = pred.iter().zip(&d.turns).filter(|(p, t)| **p == t.target).count();
            Ok((correct, pred.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (correct, total) = counts.into_iter().fold((0, 0), |(c, t), (a, b)| (c + a, t + b));
    if total == 0 {
        return Err(Error::Empty("no turns to score".into()));
    }
    Ok(correct as f64 / total as f64)
}

fn dropout_config(train_cfg: &TrainConfig, train: &[FeaturizedDialog], stream: &str) -> Result<TurnDropoutConfig> {
    let bounds = turndrop::length_bounds(train).ok_or_else(|| Error::Empty("training set has no turns".into()))?;
    Ok(TurnDropoutConfig {
        ratio: train_cfg.turn_dropout,
        unk_prob: train_cfg.unk_prob,
        length_bounds: bounds,
        seed: rng::derive_seed(train_cfg.dropout_seed(), stream, 0),
    })
}

/// Dev corpus used for model selection under `train_cfg`.
pub fn selection_dev_set(
    train_cfg: &TrainConfig,
    train: &[FeaturizedDialog],
    dev: &[FeaturizedDialog],
    fallback_id: usize,
    vocab_size: usize,
) -> Result<Vec<FeaturizedDialog>> {
    if train_cfg.turn_dropout > 0.0 && train_cfg.dev_selection == DevSelection::TurnDropout {
        let cfg = dropout_config(train_cfg, train, "dev_turn_dropout")?;
        turndrop::apply_to_corpus(dev, &cfg, 0, fallback_id, vocab_size)
    } else {
        Ok(dev.to_vec())
    }
}

/// Trains one model and returns the parameters of its best dev epoch.
pub fn train_model(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    featurizer: &Featurizer,
    train: &[FeaturizedDialog],
    dev: &[FeaturizedDialog],
    pretrained: Option<EmbeddingTable>,
) -> Result<(Model, TrainHistory)> {
    train_cfg.validate()?;
    if train.iter().all(|d| d.turns.is_empty()) {
        return Err(Error::Empty("training set is empty".into()));
    }
    if dev.iter().all(|d| d.turns.is_empty()) {
        return Err(Error::Empty("dev set is empty".into()));
    }
    let started = Instant::now();
    let seed = train_cfg.seed;
    let mut model = Model::new(model_cfg, featurizer, pretrained, &mut rng::stream(seed, "init", 0))?;
    let (fallback, v) = (model.fallback_id, model.vocab_size);
    let td_cfg = dropout_config(train_cfg, train, "turn_dropout")?;
    let dev_sel = selection_dev_set(train_cfg, train, dev, fallback, v)?;

    let mut adam = AdamState::new(train_cfg.learning_rate);
    let mut best = (model.clone(), f64::NEG_INFINITY, 0usize);
    let mut epochs = Vec::new();
    for epoch in 1..=train_cfg.max_epochs {
        let e = epoch as u64;
        let data = turndrop::apply_to_corpus(train, &td_cfg, e, fallback, v)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(seed, "shuffle", e));
        let mut total = 0.0;
        let mut kl = 0.0;
        let mut turns = 0usize;
        for batch in order.chunks(train_cfg.batch_size) {
            model.zero_grad();
            for &i in batch {
                let mut d = data[i].clone();
                let index = (e << 32) | d.id as u64;
                let mut wd_rng = rng::stream(seed, "word_dropout", index);
                for t in &mut d.turns {
                    t.tokens = word_dropout(&t.tokens, train_cfg.word_dropout, &mut wd_rng);
                }
                let noise = model.sample_noise(d.turns.len(), &mut rng::stream(seed, "latent_noise", index));
                let loss = model.forward_backward(&d, &noise)?;
                if !loss.total().is_finite() {
                    return Err(Error::Diverged { epoch, loss: loss.total() });
                }
                total += loss.total();
                kl += loss.kl;
                turns += loss.turns;
            }
            let mut params = model.parameters_mut();
            clip_grad_norm(&mut params, train_cfg.clip_norm);
            adam_step(&mut params, &mut adam)?;
        }
        let dev_acc = accuracy(&model, &dev_sel)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / data.len().max(1) as f64,
            dev_acc,
            kl_mean: if turns == 0 { 0.0 } else { kl / turns as f64 },
        });
        if dev_acc > best.1 {
            best = (model.clone(), dev_acc, epoch);
        } else if epoch - best.2 >= train_cfg.patience {
            break;
        }
    }
    let (model, best_dev_acc, best_epoch) = best;
    Ok((model, TrainHistory { epochs, best_epoch, best_dev_acc, wall_time: started.elapsed() }))
}

/// Sizes explored in stage 1 of the grid search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SizeCell {
    pub embedding_dim: usize,
    pub latent_dim: Option<usize>,
}

impl FromStr for SizeCell {
    type Err = Error;

    /// `128` or, for VHCN, `128:8` (embedding : latent).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad stage-1 grid cell `{s}`"));
        let (emb, latent) = match s.split_once(':') {
            Some((e, k)) => (e, Some(k.trim().parse().map_err(|_| bad())?)),
            None => (s, None),
        };
        Ok(SizeCell { embedding_dim: emb.trim().parse().map_err(|_| bad())?, latent_dim: latent })
    }
}

pub const DEFAULT_STAGE2_GRID: [f64; 8] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub stage: u8,
    pub size: SizeCell,
    pub turn_dropout: f64,
    pub history: TrainHistory,
}

impl GridCell {
    pub fn to_record(&self) -> String {
        format!(
            "stage = {}\tembedding_dim = {}\tlatent_dim = {}\tturn_dropout = {}\tbest_epoch = {}\tdev_acc = {}",
            self.stage,
            self.size.embedding_dim,
            self.size.latent_dim.map_or("none".into(), |k| k.to_string()),
            self.turn_dropout,
            self.history.best_epoch,
            self.history.best_dev_acc
        )
    }
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best_size: SizeCell,
    pub best_turn_dropout: f64,
    pub best_model: Model,
    pub cells: Vec<GridCell>,
}

/// Index of the best score, preferring the earliest (smallest) entry on ties.
fn pick_best(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Two-stage search. Stage 1 picks layer sizes with turn dropout off;
/// stage 2 sweeps the turn dropout ratio at those sizes. Ties go to the
/// smaller value. Cells run on a pool of `jobs` threads.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    stage1: &[SizeCell],
    stage2: &[f64],
    featurizer: &Featurizer,
    train: &[FeaturizedDialog],
    dev: &[FeaturizedDialog],
    pretrained: Option<&EmbeddingTable>,
    jobs: usize,
) -> Result<GridResult> {
    if stage1.is_empty() || stage2.is_empty() {
        return Err(Error::Config("grid search needs non-empty grids".into()));
    }
    let mut sizes = stage1.to_vec();
    sizes.sort();
    sizes.dedup();
    let mut ratios = stage2.to_vec();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Config("turn dropout grid values must lie in [0, 1]".into()));
    }
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let run = |size: SizeCell, ratio: f64| -> Result<(Model, TrainHistory)> {
        let mut m = base_model.clone();
        m.embedding_dim = size.embedding_dim;
        m.latent_dim = size.latent_dim;
        let t = TrainConfig { turn_dropout: ratio, ..base_train.clone() };
        train_model(&m, &t, featurizer, train, dev, pretrained.cloned())
    };

    let first: Vec<(Model, TrainHistory)> =
        pool.install(|| sizes.par_iter().map(|&s| run(s, 0.0)).collect::<Result<_>>())?;
    let best_size = sizes[pick_best(&first.iter().map(|(_, h)| h.best_dev_acc).collect::<Vec<_>>())];
    let second: Vec<(Model, TrainHistory)> =
        pool.install(|| ratios.par_iter().map(|&r| run(best_size, r)).collect::<Result<_>>())?;
    let best_idx = pick_best(&second.iter().map(|(_, h)| h.best_dev_acc).collect::<Vec<_>>());

    let mut cells: Vec<GridCell> = sizes
        .iter()
        .zip(&first)
        .map(|(&size, (_, h))| GridCell { stage: 1, size, turn_dropout: 0.0, history: h.clone() })
        .collect();
    cells.extend(ratios.iter().zip(&second).map(|(&r, (_, h))| GridCell {
        stage: 2,
        size: best_size,
        turn_dropout: r,
        history: h.clone(),
    }));
    Ok(GridResult {
        best_size,
        best_turn_dropout: ratios[best_idx],
        best_model: second.into_iter().nth(best_idx).map(|(m, _)| m).expect("non-empty stage 2"),
        cells,
    })
}

/// Seeds used by [`multi_seed_run`]: `seed, seed + 1, …`.
pub fn run_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| seed.wrapping_add(i)).collect()
}

/// Trains `n` models with consecutive seeds and scores each with
/// `score`. Returns per-seed results in seed order.
#[allow(clippy::too_many_arguments)]
pub fn multi_seed_run<T, F>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    featurizer: &Featurizer,
    train: &[FeaturizedDialog],
    dev: &[FeaturizedDialog],
    pretrained: Option<&EmbeddingTable>,
    n: usize,
    score: F,
) -> Result<Vec<(u64, T)>>
where
    T: Send,
    F: Fn(&Model) -> Result<T> + Sync,
{
    if n == 0 {
        return Err(Error::Config("multi-seed run needs n >= 1".into()));
    }
    run_seeds(train_cfg.seed, n)
        .into_par_iter()
        .map(|seed| {
            let cfg = TrainConfig { seed, ..train_cfg.clone() };
            let (model, _) = train_model(model_cfg, &cfg, featurizer, train, dev, pretrained.cloned())?;
            Ok((seed, score(&model)?))
        })
        .collect()
}
