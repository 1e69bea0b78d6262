//! Turn dropout: synthetic negative turns for fallback training.
//!
//! A dropped turn keeps its context features, action mask and previous
//! action, but its tokens are replaced by random vocabulary words and UNKs
//! and its target becomes the fallback action.

use rand::Rng;

use crate::corpus::{ActionId, BowVector, FeaturizedDialog, NUM_RESERVED, UNK_ID};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, StreamRng};

#[derive(Clone, Debug, PartialEq)]
pub struct TurnDropoutConfig {
    pub ratio: f64,
    pub unk_prob: f64,
    /// Inclusive `[min, max]` synthetic turn length.
    pub length_bounds: (usize, usize),
    pub seed: u64,
}

impl Default for TurnDropoutConfig {
    fn default() -> Self {
        TurnDropoutConfig { ratio: 0.0, unk_prob: 0.5, length_bounds: (1, 1), seed: 0 }
    }
}

impl TurnDropoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!("turn dropout ratio {} outside [0, 1]", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.unk_prob) {
            return Err(Error::Config(format!("unk_prob {} outside [0, 1]", self.unk_prob)));
        }
        let (lo, hi) = self.length_bounds;
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!("invalid length bounds [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Shortest and longest user turn (in tokens) of a corpus.
pub fn length_bounds(dialogs: &[FeaturizedDialog]) -> Option<(usize, usize)> {
    let lens = dialogs.iter().flat_map(|d| d.turns.iter()).map(|t| t.tokens.len());
    lens.fold(None, |acc, n| match acc {
        None => Some((n, n)),
        Some((lo, hi)) => Some((lo.min(n), hi.max(n))),
    })
}

/// Random token sequence: length uniform in the bounds, each token UNK with
/// `unk_prob`, otherwise uniform over the non-reserved vocabulary.
pub fn synth_turn<R: Rng>(rng: &mut R, vocab_size: usize, config: &TurnDropoutConfig) -> Result<Vec<usize>> {
    let (lo, hi) = config.length_bounds;
    if lo < 1 || lo > hi {
        return Err(Error::Config(format!("invalid length bounds [{lo}, {hi}]")));
    }
    if vocab_size <= NUM_RESERVED {
        return Err(Error::Config("vocabulary has no ordinary tokens to sample".into()));
    }
    let len = rng.random_range(lo..=hi);
    Ok((0..len)
        .map(|_| if rng.random_bool(config.unk_prob) { UNK_ID } else { rng.random_range(NUM_RESERVED..vocab_size) })
        .collect())
}

pub fn apply_turn_dropout<R: Rng>(
    dialog: &FeaturizedDialog,
    config: &TurnDropoutConfig,
    rng: &mut R,
    fallback_id: ActionId,
    vocab_size: usize,
) -> Result<FeaturizedDialog> {
    config.validate()?;
    let mut out = dialog.clone();
    if config.ratio == 0.0 {
        return Ok(out);
    }
    for turn in &mut out.turns {
        if rng.random_bool(config.ratio) {
            turn.tokens = synth_turn(rng, vocab_size, config)?;
            turn.bow = BowVector::from_tokens(&turn.tokens, turn.bow.len);
            turn.target = fallback_id;
        }
    }
    Ok(out)
}

/// Random stream for dialog `dialog_id` in a given epoch.
pub fn epoch_stream(seed: u64, epoch: u64, dialog_id: usize) -> StreamRng {
    rng::stream(derive_seed(seed, "turn_dropout", epoch), "dialog", dialog_id as u64)
}

/// Applies turn dropout to a whole corpus for one epoch.
pub fn apply_to_corpus(
    dialogs: &[FeaturizedDialog],
    config: &TurnDropoutConfig,
    epoch: u64,
    fallback_id: ActionId,
    vocab_size: usize,
) -> Result<Vec<FeaturizedDialog>> {
    dialogs
        .iter()
        .map(|d| apply_turn_dropout(d, config, &mut epoch_stream(config.seed, epoch, d.id), fallback_id, vocab_size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ContextFeatures, OodLabel, TurnFeatures};

    const V: usize = 30;
    const A: usize = 5;
    const FALLBACK: usize = 0;

    fn dialog(id: usize, n: usize) -> FeaturizedDialog {
        let turns = (0..n)
            .map(|j| {
                let tokens = vec![2 + j % 20, 3 + j % 7, 2 + j % 20];
                TurnFeatures {
                    bow: BowVector::from_tokens(&tokens, V),
                    tokens,
                    ctx: ContextFeatures { slots: [j % 2 == 0, true, false], api_results: j % 3 == 0 },
                    mask: vec![1; A],
                    prev_action: (j > 0).then(|| 1 + (j - 1) % 4),
                    target: 1 + j % 4,
                }
            })
            .collect();
        FeaturizedDialog { id, turns, labels: vec![OodLabel::Ind; n] }
    }

    fn cfg(ratio: f64) -> TurnDropoutConfig {
        TurnDropoutConfig { ratio, length_bounds: (2, 6), ..Default::default() }
    }

    #[test]
    fn synth_degenerate_cases() {
        let mut r = rng::stream(0, "s", 0);
        let all_unk = TurnDropoutConfig { unk_prob: 1.0, ..cfg(1.0) };
        for _ in 0..50 {
            assert!(synth_turn(&mut r, V, &all_unk).unwrap().iter().all(|&t| t == UNK_ID));
        }
        let fixed = TurnDropoutConfig { length_bounds: (3, 3), ..cfg(1.0) };
        for _ in 0..50 {
            let t = synth_turn(&mut r, V, &fixed).unwrap();
            assert_eq!(t.len(), 3);
            assert!(t.iter().all(|&x| x == UNK_ID || (NUM_RESERVED..V).contains(&x)));
        }
        let bad = TurnDropoutConfig { length_bounds: (4, 2), ..cfg(1.0) };
        assert!(synth_turn(&mut r, V, &bad).is_err());
        let zero = TurnDropoutConfig { length_bounds: (0, 2), ..cfg(1.0) };
        assert!(synth_turn(&mut r, V, &zero).is_err());
        assert!(synth_turn(&mut r, NUM_RESERVED, &cfg(1.0)).is_err());
    }

    #[test]
    fn ratio_zero_is_identity() {
        let d = dialog(0, 12);
        let out = apply_turn_dropout(&d, &cfg(0.0), &mut rng::stream(0, "x", 0), FALLBACK, V).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn ratio_one_replaces_everything() {
        let d = dialog(0, 12);
        let out = apply_turn_dropout(&d, &cfg(1.0), &mut rng::stream(0, "x", 0), FALLBACK, V).unwrap();
        for (new, old) in out.turns.iter().zip(&d.turns) {
            assert_eq!(new.target, FALLBACK);
            assert_eq!(new.ctx, old.ctx);
            assert_eq!(new.mask, old.mask);
            assert_eq!(new.prev_action, old.prev_action);
            assert_eq!(new.bow, BowVector::from_tokens(&new.tokens, V));
            assert!((2..=6).contains(&new.tokens.len()));
        }
    }

    #[test]
    fn epochs_draw_different_subsets() {
        let d = vec![dialog(0, 40)];
        let a = apply_to_corpus(&d, &cfg(0.5), 0, FALLBACK, V).unwrap();
        let b = apply_to_corpus(&d, &cfg(0.5), 1, FALLBACK, V).unwrap();
        let again = apply_to_corpus(&d, &cfg(0.5), 0, FALLBACK, V).unwrap();
        assert_eq!(a, again);
        let pick =
            |x: &[FeaturizedDialog]| -> Vec<bool> { x[0].turns.iter().zip(&d[0].turns).map(|(n, o)| n != o).collect() };
        assert_ne!(pick(&a), pick(&b));
    }

    #[test]
    fn bounds_from_corpus() {
        let mut d = dialog(0, 3);
        d.turns[1].tokens = vec![2; 9];
        assert_eq!(length_bounds(&[d]), Some((3, 9)));
        assert_eq!(length_bounds(&[]), None);
    }
}
