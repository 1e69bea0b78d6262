//! Controlled out-of-domain augmentation of dialog corpora.
//!
//! Before every original turn an OOD block starts with probability
//! `p_ood_start`; a started block keeps growing with probability
//! `p_ood_cont` per extra turn, so block lengths are geometric with mean
//! `1 / (1 - p_ood_cont)`. Every inserted turn is a foreign first-utterance
//! answered with the fallback action. The original turn that ends a block is
//! prefixed with a mistake-affirmation interjection and labelled
//! `SEGMENT_OOD`; its target stays the same.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::ops::AddAssign;

use rand::Rng;
use rayon::prelude::*;

use crate::corpus::{Dialog, OodLabel, Turn, SILENCE};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationConfig {
    pub p_ood_start: f64,
    pub p_ood_cont: f64,
    pub seed: u64,
    /// Chance of an interjection on an IND turn that does not end a block.
    pub independent_segment_prob: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig { p_ood_start: 0.2, p_ood_cont: 0.4, seed: 0, independent_segment_prob: 0.0 }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_ood_start", self.p_ood_start),
            ("p_ood_cont", self.p_ood_cont),
            ("independent_segment_prob", self.independent_segment_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if self.p_ood_cont >= 1.0 && self.p_ood_start > 0.0 {
            return Err(Error::Config("p_ood_cont = 1 makes OOD blocks endless".into()));
        }
        Ok(())
    }
}

/// First user utterances of a foreign-domain corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OodPool {
    pub source: String,
    pub utterances: Vec<Vec<String>>,
}

/// Builds a pool from the first user utterance of each dialog. Silent first
/// turns are skipped and duplicates removed, keeping first occurrence order.
pub fn load_ood_pool(foreign: &[Dialog], source: &str) -> Result<OodPool> {
    let mut seen = HashSet::new();
    let mut utterances = Vec::new();
    for dialog in foreign {
        let Some(first) = dialog.turns.first() else { continue };
        if first.is_silence() || first.user_tokens.iter().all(|t| t == SILENCE) {
            continue;
        }
        if seen.insert(first.user_tokens.clone()) {
            utterances.push(first.user_tokens.clone());
        }
    }
    if utterances.is_empty() {
        return Err(Error::Empty(format!("OOD pool `{source}` has no usable first utterances")));
    }
    Ok(OodPool { source: source.to_owned(), utterances })
}

/// Union of OOD pools. Sampling is uniform over all utterances unless
/// per-source weights are set, in which case a source is drawn first.
#[derive(Clone, Debug, Default)]
pub struct OodSampler {
    pools: Vec<OodPool>,
    weights: Option<Vec<f64>>,
}

impl OodSampler {
    pub fn new(pools: Vec<OodPool>) -> Self {
        OodSampler { pools, weights: None }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.pools.len()
            || weights.iter().any(|w| w.is_nan() || *w < 0.0)
            || weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config("one non-negative weight per OOD source required".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.pools.iter().map(|p| p.utterances.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample<'a, R: Rng>(&'a self, rng: &mut R) -> Result<&'a [String]> {
        if self.is_empty() {
            return Err(Error::Empty("OOD pool".into()));
        }
        match &self.weights {
            None => {
                let mut k = rng.random_range(0..self.len());
                for pool in &self.pools {
                    if k < pool.utterances.len() {
                        return Ok(&pool.utterances[k]);
                    }
                    k -= pool.utterances.len();
                }
                unreachable!("index within total pool size")
            }
            Some(weights) => {
                let usable: f64 =
                    weights.iter().zip(&self.pools).filter(|(_, p)| !p.utterances.is_empty()).map(|(w, _)| *w).sum();
                if usable <= 0.0 {
                    return Err(Error::Empty("OOD pools with positive weight".into()));
                }
                let mut x = rng.random::<f64>() * usable;
                let mut chosen = None;
                for (w, pool) in weights.iter().zip(&self.pools) {
                    if pool.utterances.is_empty() || *w <= 0.0 {
                        continue;
                    }
                    chosen = Some(pool);
                    if x < *w {
                        break;
                    }
                    x -= w;
                }
                let pool = chosen.expect("usable weight implies a pool");
                Ok(&pool.utterances[rng.random_range(0..pool.utterances.len())])
            }
        }
    }
}

/// Mistake-affirmation interjections.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SegmentPool {
    pub interjections: Vec<String>,
}

impl SegmentPool {
    /// One interjection per non-empty line.
    pub fn parse(text: &str) -> Self {
        SegmentPool {
            interjections: text
                .lines()
                .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
                .filter(|l| !l.is_empty())
                .collect(),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Result<&str> {
        if self.interjections.is_empty() {
            return Err(Error::Empty("segment pool".into()));
        }
        Ok(&self.interjections[rng.random_range(0..self.interjections.len())])
    }
}

/// Geometric block of foreign turns, each answered with `fallback_utterance`.
pub fn sample_ood_block<R: Rng>(
    rng: &mut R,
    config: &AugmentationConfig,
    pool: &OodSampler,
    fallback_utterance: &str,
) -> Result<Vec<Turn>> {
    if pool.is_empty() {
        return Err(Error::Empty("OOD pool".into()));
    }
    if config.p_ood_cont >= 1.0 {
        return Err(Error::Config("p_ood_cont = 1 makes OOD blocks endless".into()));
    }
    let mut block = Vec::new();
    loop {
        let utterance = pool.sample(rng)?.join(" ");
        let mut turn = Turn::new(utterance, fallback_utterance);
        turn.ood_label = OodLabel::TurnOod;
        block.push(turn);
        if !rng.random_bool(config.p_ood_cont) {
            break;
        }
    }
    Ok(block)
}

fn interject(turn: &mut Turn, interjection: &str) {
    let text = format!("{interjection} {}", turn.user_text);
    *turn = Turn {
        kb_facts: std::mem::take(&mut turn.kb_facts),
        system_action: turn.system_action,
        ood_label: OodLabel::SegmentOod,
        interjection: Some(interjection.to_owned()),
        ..Turn::new(text, std::mem::take(&mut turn.system_utterance))
    };
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AugmentStats {
    pub dialogs: usize,
    pub original_turns: usize,
    pub blocks: usize,
    pub ind_turns: usize,
    pub turn_ood_turns: usize,
    pub segment_ood_turns: usize,
    pub block_lengths: BTreeMap<usize, usize>,
}

impl AugmentStats {
    pub fn of_dialog(dialog: &Dialog) -> Self {
        let mut s = AugmentStats { dialogs: 1, ..Default::default() };
        let mut run = 0usize;
        for turn in &dialog.turns {
            match turn.ood_label {
                OodLabel::TurnOod => {
                    s.turn_ood_turns += 1;
                    run += 1;
                    continue;
                }
                OodLabel::SegmentOod => s.segment_ood_turns += 1,
                OodLabel::Ind => s.ind_turns += 1,
            }
            s.original_turns += 1;
            if run > 0 {
                s.blocks += 1;
                *s.block_lengths.entry(run).or_default() += 1;
                run = 0;
            }
        }
        if run > 0 {
            s.blocks += 1;
            *s.block_lengths.entry(run).or_default() += 1;
        }
        s
    }

    pub fn block_start_rate(&self) -> f64 {
        self.blocks as f64 / self.original_turns.max(1) as f64
    }

    pub fn mean_block_length(&self) -> f64 {
        self.turn_ood_turns as f64 / self.blocks.max(1) as f64
    }

    /// Flat `key = value` record.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dialogs = {}", self.dialogs);
        let _ = writeln!(out, "original_turns = {}", self.original_turns);
        let _ = writeln!(out, "ood_blocks = {}", self.blocks);
        let _ = writeln!(out, "ind_turns = {}", self.ind_turns);
        let _ = writeln!(out, "turn_ood_turns = {}", self.turn_ood_turns);
        let _ = writeln!(out, "segment_ood_turns = {}", self.segment_ood_turns);
        let _ = writeln!(out, "block_start_rate = {:.6}", self.block_start_rate());
        let _ = writeln!(out, "mean_block_length = {:.6}", self.mean_block_length());
        for (len, count) in &self.block_lengths {
            let _ = writeln!(out, "block_length.{len} = {count}");
        }
        out
    }
}

impl AddAssign<&AugmentStats> for AugmentStats {
    fn add_assign(&mut self, rhs: &AugmentStats) {
        self.dialogs += rhs.dialogs;
        self.original_turns += rhs.original_turns;
        self.blocks += rhs.blocks;
        self.ind_turns += rhs.ind_turns;
        self.turn_ood_turns += rhs.turn_ood_turns;
        self.segment_ood_turns += rhs.segment_ood_turns;
        for (len, count) in &rhs.block_lengths {
            *self.block_lengths.entry(*len).or_default() += count;
        }
    }
}

pub fn augment_dialog(
    dialog: &Dialog,
    config: &AugmentationConfig,
    rng: &mut StreamRng,
    pool: &OodSampler,
    segments: &SegmentPool,
    fallback_utterance: &str,
) -> Result<Dialog> {
    config.validate()?;
    let mut turns = Vec::with_capacity(dialog.turns.len() * 2);
    for original in &dialog.turns {
        let mut turn = original.clone();
        if rng.random_bool(config.p_ood_start) {
            turns.extend(sample_ood_block(rng, config, pool, fallback_utterance)?);
            interject(&mut turn, segments.sample(rng)?);
        } else if config.independent_segment_prob > 0.0 && rng.random_bool(config.independent_segment_prob) {
            interject(&mut turn, segments.sample(rng)?);
        }
        turns.push(turn);
    }
    Ok(Dialog { id: dialog.id, turns, trailing_facts: dialog.trailing_facts.clone() })
}

/// Augments every dialog with its own random stream keyed by
/// `(config.seed, dialog.id)`, so results do not depend on corpus order.
pub fn augment_corpus(
    dialogs: &[Dialog],
    config: &AugmentationConfig,
    pool: &OodSampler,
    segments: &SegmentPool,
    fallback_utterance: &str,
) -> Result<(Vec<Dialog>, AugmentStats)> {
    config.validate()?;
    let augmented: Vec<Dialog> = dialogs
        .par_iter()
        .map(|d| {
            let mut r = rng::stream(config.seed, "augment", d.id as u64);
            augment_dialog(d, config, &mut r, pool, segments, fallback_utterance)
        })
        .collect::<Result<_>>()?;
    let mut stats = AugmentStats::default();
    for d in &augmented {
        stats += &AugmentStats::of_dialog(d);
    }
    Ok((augmented, stats))
}

/// Removes inserted turns and interjection prefixes.
pub fn strip_augmentation(dialog: &Dialog) -> Dialog {
    let turns = dialog
        .turns
        .iter()
        .filter(|t| t.ood_label != OodLabel::TurnOod)
        .map(|t| match &t.interjection {
            Some(prefix) => {
                let text = t.user_text[prefix.len() + 1..].to_owned();
                Turn {
                    kb_facts: t.kb_facts.clone(),
                    system_action: t.system_action,
                    ..Turn::new(text, t.system_utterance.clone())
                }
            }
            None => t.clone(),
        })
        .collect();
    Dialog { id: dialog.id, turns, trailing_facts: dialog.trailing_facts.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_dialogs, DEFAULT_FALLBACK};

    fn pool(n: usize) -> OodSampler {
        OodSampler::new(vec![OodPool {
            source: "test".into(),
            utterances: (0..n).map(|i| vec![format!("foreign{i}"), "words".into()]).collect(),
        }])
    }

    fn segments() -> SegmentPool {
        SegmentPool::parse("so sorry man\nmy mistake\n")
    }

    fn corpus(n_dialogs: usize, n_turns: usize) -> Vec<Dialog> {
        (0..n_dialogs)
            .map(|i| {
                Dialog::new(i, (0..n_turns).map(|j| Turn::new(format!("user {i} {j}"), format!("sys {j}"))).collect())
            })
            .collect()
    }

    #[test]
    fn pool_takes_first_utterances_dedups_and_skips_silence() {
        let d = parse_dialogs("1 book a flight\tok\n2 more\tok\n\n1 <SILENCE>\thi\n2 x\ty\n\n1 Book a flight\tok\n\n1 weather today\tok\n\n")
            .unwrap();
        let p = load_ood_pool(&d, "src").unwrap();
        assert_eq!(p.utterances.len(), 2);
        assert_eq!(p.utterances[0], vec!["book", "a", "flight"]);
        assert_eq!(p.utterances[1], vec!["weather", "today"]);
        let silent = parse_dialogs("1 <SILENCE>\thi\n\n").unwrap();
        assert!(load_ood_pool(&silent, "src").is_err());
        assert!(load_ood_pool(&[], "src").is_err());
    }

    #[test]
    fn pool_sizes_follow_source_dialog_counts() {
        // Source corpora with 1198, 3030 and 968 dialogs of distinct openings.
        for n in [1198usize, 3030, 968] {
            let dialogs: Vec<Dialog> =
                (0..n).map(|i| Dialog::new(i, vec![Turn::new(format!("opening {i}"), "ok")])).collect();
            assert_eq!(load_ood_pool(&dialogs, "src").unwrap().utterances.len(), n);
        }
    }

    #[test]
    fn zero_continuation_gives_single_turn_blocks() {
        let cfg = AugmentationConfig { p_ood_cont: 0.0, ..Default::default() };
        let mut r = rng::stream(1, "t", 0);
        for _ in 0..200 {
            let b = sample_ood_block(&mut r, &cfg, &pool(5), DEFAULT_FALLBACK).unwrap();
            assert_eq!(b.len(), 1);
            assert_eq!(b[0].system_utterance, DEFAULT_FALLBACK);
            assert_eq!(b[0].ood_label, OodLabel::TurnOod);
        }
    }

    #[test]
    fn block_mean_length_is_geometric() {
        let cfg = AugmentationConfig::default();
        let mut r = rng::stream(2, "t", 0);
        let n = 100_000;
        let total: usize =
            (0..n).map(|_| sample_ood_block(&mut r, &cfg, &pool(3), DEFAULT_FALLBACK).unwrap().len()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 1.0 / 0.6).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn empty_pools_are_errors() {
        let cfg = AugmentationConfig::default();
        let mut r = rng::stream(0, "t", 0);
        assert!(sample_ood_block(&mut r, &cfg, &OodSampler::default(), DEFAULT_FALLBACK).is_err());
        let forced = AugmentationConfig { p_ood_start: 1.0, ..Default::default() };
        let d = &corpus(1, 3)[0];
        assert!(augment_dialog(d, &forced, &mut r, &pool(2), &SegmentPool::default(), DEFAULT_FALLBACK).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = AugmentationConfig { p_ood_start: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let endless = AugmentationConfig { p_ood_cont: 1.0, ..Default::default() };
        assert!(endless.validate().is_err());
    }

    #[test]
    fn zero_start_probability_is_identity() {
        let cfg = AugmentationConfig { p_ood_start: 0.0, ..Default::default() };
        let c = corpus(20, 6);
        let (out, stats) = augment_corpus(&c, &cfg, &pool(4), &segments(), DEFAULT_FALLBACK).unwrap();
        assert_eq!(out, c);
        assert_eq!(stats.blocks, 0);
        assert_eq!(stats.ind_turns, 120);
    }

    #[test]
    fn forced_pattern() {
        let cfg = AugmentationConfig { p_ood_start: 1.0, p_ood_cont: 0.0, ..Default::default() };
        let c = corpus(3, 4);
        let (out, _) = augment_corpus(&c, &cfg, &pool(4), &segments(), DEFAULT_FALLBACK).unwrap();
        for (aug, orig) in out.iter().zip(&c) {
            assert_eq!(aug.turns.len(), 2 * orig.turns.len());
            for pair in aug.turns.chunks(2) {
                assert_eq!(pair[0].ood_label, OodLabel::TurnOod);
                assert_eq!(pair[1].ood_label, OodLabel::SegmentOod);
            }
        }
    }

    #[test]
    fn stripping_recovers_original() {
        let cfg = AugmentationConfig { p_ood_start: 0.5, p_ood_cont: 0.5, seed: 11, independent_segment_prob: 0.2 };
        let c = corpus(30, 7);
        let (out, stats) = augment_corpus(&c, &cfg, &pool(4), &segments(), DEFAULT_FALLBACK).unwrap();
        assert!(stats.turn_ood_turns > 0 && stats.segment_ood_turns > 0);
        for (aug, orig) in out.iter().zip(&c) {
            assert_eq!(&strip_augmentation(aug), orig);
            for t in aug.turns.iter().filter(|t| t.ood_label == OodLabel::TurnOod) {
                assert_eq!(t.system_utterance, DEFAULT_FALLBACK);
            }
        }
    }

    #[test]
    fn order_independent_and_deterministic() {
        let cfg = AugmentationConfig { seed: 5, ..Default::default() };
        let c = corpus(25, 5);
        let (a, sa) = augment_corpus(&c, &cfg, &pool(6), &segments(), DEFAULT_FALLBACK).unwrap();
        let (b, sb) = augment_corpus(&c, &cfg, &pool(6), &segments(), DEFAULT_FALLBACK).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        let mut reversed = c.clone();
        reversed.reverse();
        let (r, _) = augment_corpus(&reversed, &cfg, &pool(6), &segments(), DEFAULT_FALLBACK).unwrap();
        for d in &r {
            assert_eq!(d, &a[d.id]);
        }
    }

    #[test]
    fn weighted_sources() {
        let s = OodSampler::new(vec![
            OodPool { source: "a".into(), utterances: vec![vec!["a".into()]] },
            OodPool { source: "b".into(), utterances: (0..9).map(|i| vec![format!("b{i}")]).collect() },
        ])
        .with_weights(vec![1.0, 1.0])
        .unwrap();
        let mut r = rng::stream(3, "w", 0);
        let hits = (0..20_000).filter(|_| s.sample(&mut r).unwrap()[0] == "a").count();
        let frac = hits as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }
}
