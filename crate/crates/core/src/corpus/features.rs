use super::{ActionId, ActionSet, Dialog, Lexicon, OodLabel, Turn, Vocabulary, API_CALL};
use crate::error::{Error, Result};

/// Three slot indicators plus the API-results bit.
pub const CONTEXT_DIM: usize = 4;

/// Slot types whose mention is tracked as a context feature, in feature order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextSlots {
    pub names: [String; 3],
}

impl Default for ContextSlots {
    fn default() -> Self {
        ContextSlots { names: ["R_cuisine".into(), "R_location".into(), "R_price".into()] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ContextFeatures {
    /// cuisine, area, price range
    pub slots: [bool; 3],
    pub api_results: bool,
}

impl ContextFeatures {
    pub fn to_array(self) -> [f64; CONTEXT_DIM] {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        [b(self.slots[0]), b(self.slots[1]), b(self.slots[2]), b(self.api_results)]
    }
}

/// Incremental dialog-state tracker. Within a turn, facts are observed
/// first, then the user utterance, then the system action.
#[derive(Clone, Debug)]
pub struct ContextTracker<'a> {
    lexicon: &'a Lexicon,
    slots: &'a ContextSlots,
    state: ContextFeatures,
    api_called: bool,
    facts_since_call: usize,
}

impl<'a> ContextTracker<'a> {
    pub fn new(lexicon: &'a Lexicon, slots: &'a ContextSlots) -> Self {
        ContextTracker { lexicon, slots, state: ContextFeatures::default(), api_called: false, facts_since_call: 0 }
    }

    pub fn observe_user(&mut self, turn: &Turn) {
        if self.api_called {
            self.facts_since_call += turn.kb_facts.len();
        }
        for slot in self.lexicon.mentioned_slots(&turn.user_tokens) {
            if let Some(i) = self.slots.names.iter().position(|n| n == slot) {
                self.state.slots[i] = true;
            }
        }
        self.state.api_results = self.api_called && self.facts_since_call > 0;
    }

    pub fn observe_system(&mut self, utterance: &str) {
        if utterance.split_whitespace().next() == Some(API_CALL) {
            self.api_called = true;
            self.facts_since_call = 0;
            self.state.api_results = false;
        }
    }

    pub fn observe_turn(&mut self, turn: &Turn) {
        self.observe_user(turn);
        self.observe_system(&turn.system_utterance);
    }

    pub fn features(&self) -> ContextFeatures {
        self.state
    }
}

/// Context after every turn of `prefix` has been fully observed.
pub fn track_context(prefix: &[Turn], lexicon: &Lexicon, slots: &ContextSlots) -> ContextFeatures {
    let mut tracker = ContextTracker::new(lexicon, slots);
    for turn in prefix {
        tracker.observe_turn(turn);
    }
    tracker.features()
}

/// Binary bag-of-words vector stored by its sorted support.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BowVector {
    pub len: usize,
    pub indices: Vec<usize>,
}

impl BowVector {
    pub fn from_tokens(tokens: &[usize], len: usize) -> Self {
        let mut indices = tokens.to_vec();
        indices.sort_unstable();
        indices.dedup();
        BowVector { len, indices }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        for &i in &self.indices {
            v[i] = 1.0;
        }
        v
    }

    pub fn count_ones(&self) -> usize {
        self.indices.len()
    }
}

/// Model input for one user turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnFeatures {
    pub tokens: Vec<usize>,
    pub bow: BowVector,
    pub ctx: ContextFeatures,
    /// All ones.
    pub mask: Vec<u8>,
    pub prev_action: Option<ActionId>,
    pub target: ActionId,
}

impl TurnFeatures {
    pub fn n_actions(&self) -> usize {
        self.mask.len()
    }

    pub fn prev_action_one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.mask.len()];
        if let Some(a) = self.prev_action {
            v[a] = 1.0;
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturizedDialog {
    pub id: usize,
    pub turns: Vec<TurnFeatures>,
    pub labels: Vec<OodLabel>,
}

fn action_for(turn: &Turn, actions: &ActionSet, lexicon: &Lexicon) -> Result<ActionId> {
    match turn.system_action {
        Some(id) if id < actions.len() => Ok(id),
        Some(id) => Err(Error::UnknownAction(id)),
        None => actions.action_of(&turn.system_utterance, lexicon),
    }
}

/// Features of `turn` given the turns before it. Context features include
/// what the user says in `turn` itself; the system action of `turn` is the
/// prediction target and is not observed.
pub fn featurize_turn(
    prefix: &[Turn],
    turn: &Turn,
    vocab: &Vocabulary,
    actions: &ActionSet,
    lexicon: &Lexicon,
    slots: &ContextSlots,
) -> Result<TurnFeatures> {
    let mut tracker = ContextTracker::new(lexicon, slots);
    for t in prefix {
        tracker.observe_turn(t);
    }
    tracker.observe_user(turn);
    let prev_action = prefix.last().map(|t| action_for(t, actions, lexicon)).transpose()?;
    build(turn, tracker.features(), prev_action, vocab, actions, lexicon)
}

fn build(
    turn: &Turn,
    ctx: ContextFeatures,
    prev_action: Option<ActionId>,
    vocab: &Vocabulary,
    actions: &ActionSet,
    lexicon: &Lexicon,
) -> Result<TurnFeatures> {
    let tokens = vocab.encode(&turn.user_tokens);
    let bow = BowVector::from_tokens(&tokens, vocab.len());
    Ok(TurnFeatures {
        tokens,
        bow,
        ctx,
        mask: vec![1; actions.len()],
        prev_action,
        target: action_for(turn, actions, lexicon)?,
    })
}

/// Everything needed to turn dialogs into model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Featurizer {
    pub vocab: Vocabulary,
    pub actions: ActionSet,
    pub lexicon: Lexicon,
    pub slots: ContextSlots,
}

impl Featurizer {
    pub fn featurize_dialog(&self, dialog: &Dialog) -> Result<FeaturizedDialog> {
        let mut tracker = ContextTracker::new(&self.lexicon, &self.slots);
        let mut turns = Vec::with_capacity(dialog.turns.len());
        let mut prev = None;
        for turn in &dialog.turns {
            tracker.observe_user(turn);
            let f = build(turn, tracker.features(), prev, &self.vocab, &self.actions, &self.lexicon)?;
            prev = Some(f.target);
            tracker.observe_system(&turn.system_utterance);
            turns.push(f);
        }
        Ok(FeaturizedDialog { id: dialog.id, turns, labels: dialog.turns.iter().map(|t| t.ood_label).collect() })
    }

    pub fn featurize(&self, dialogs: &[Dialog]) -> Result<Vec<FeaturizedDialog>> {
        dialogs.iter().map(|d| self.featurize_dialog(d)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, extract_action_set, parse_dialogs, KbFact, DEFAULT_FALLBACK, UNK_ID};

    fn lexicon() -> Lexicon {
        Lexicon::parse("R_cuisine\titalian\nR_location\tnorth\nR_price\tcheap\nR_cuisine\tnorth american\n").unwrap()
    }

    #[test]
    fn empty_prefix_is_all_zero() {
        let f = track_context(&[], &lexicon(), &ContextSlots::default());
        assert_eq!(f, ContextFeatures::default());
        assert_eq!(f.to_array(), [0.0; 4]);
    }

    #[test]
    fn price_mention_sets_price_bit() {
        let turns = vec![Turn::new("i want something cheap", "ok")];
        let f = track_context(&turns, &lexicon(), &ContextSlots::default());
        assert_eq!(f.slots, [false, false, true]);
        assert!(!f.api_results);
    }

    #[test]
    fn longest_value_decides_the_slot() {
        let turns = vec![Turn::new("north american food", "ok")];
        let f = track_context(&turns, &lexicon(), &ContextSlots::default());
        assert_eq!(f.slots, [true, false, false]);
    }

    #[test]
    fn api_bit_follows_latest_call() {
        // Hand-simulated trace: call with no results, then a second call
        // whose three results arrive before the next user turn.
        let mut turns = [
            Turn::new("italian food", "api_call italian R_location R_price"),
            Turn::new("<SILENCE>", "sorry no results"),
            Turn::new("how about north", "api_call italian north R_price"),
            Turn::new("<SILENCE>", "r1 is a nice place"),
        ];
        turns[3].kb_facts = vec![KbFact::new("r1 a b"), KbFact::new("r1 c d"), KbFact::new("r1 e f")];
        let lex = lexicon();
        let slots = ContextSlots::default();
        assert!(!track_context(&turns[..1], &lex, &slots).api_results);
        assert!(!track_context(&turns[..2], &lex, &slots).api_results);
        assert!(!track_context(&turns[..3], &lex, &slots).api_results);
        assert!(track_context(&turns[..4], &lex, &slots).api_results);
    }

    fn corpus() -> (Vec<Dialog>, Featurizer) {
        let d = parse_dialogs(
            "1 <SILENCE>\thello\n2 i want cheap italian food\tapi_call italian R_location cheap\n3 r1 R_cuisine italian\n4 <SILENCE>\tr1 is nice\n5 thanks thanks bye\tbye\n\n",
        )
        .unwrap();
        let lex = lexicon();
        let vocab = build_vocabulary(&[&d]);
        let actions = extract_action_set(&d, &lex, DEFAULT_FALLBACK).unwrap();
        let fz = Featurizer { vocab, actions, lexicon: lex, slots: ContextSlots::default() };
        (d, fz)
    }

    #[test]
    fn dialog_features() {
        let (d, fz) = corpus();
        let fd = fz.featurize_dialog(&d[0]).unwrap();
        assert_eq!(fd.turns.len(), 4);
        assert_eq!(fd.turns[0].prev_action, None);
        assert!(fd.turns[0].prev_action_one_hot().iter().all(|&x| x == 0.0));
        assert_eq!(fd.turns[1].prev_action, Some(fd.turns[0].target));
        assert_eq!(fd.turns[1].ctx.slots, [true, false, true]);
        assert!(!fd.turns[1].ctx.api_results);
        assert!(fd.turns[2].ctx.api_results);
        assert_eq!(fd.turns[3].tokens.len(), 3);
        assert_eq!(fd.turns[3].bow.count_ones(), 2);
        for t in &fd.turns {
            assert_eq!(t.mask, vec![1; fz.actions.len()]);
        }
        // Standalone featurization agrees with the incremental path.
        for i in 0..d[0].turns.len() {
            let t = featurize_turn(&d[0].turns[..i], &d[0].turns[i], &fz.vocab, &fz.actions, &fz.lexicon, &fz.slots)
                .unwrap();
            assert_eq!(t, fd.turns[i]);
        }
    }

    #[test]
    fn oov_maps_to_unk() {
        let (_, fz) = corpus();
        let turn = Turn::new("zebra bye", "bye");
        let f = featurize_turn(&[], &turn, &fz.vocab, &fz.actions, &fz.lexicon, &fz.slots).unwrap();
        assert_eq!(f.tokens[0], UNK_ID);
        assert!(f.bow.indices.contains(&UNK_ID));
        assert_eq!(f.bow.to_dense()[UNK_ID], 1.0);
    }

    #[test]
    fn unknown_action_is_error() {
        let (_, fz) = corpus();
        let mut turn = Turn::new("bye", "bye");
        turn.system_action = Some(99);
        assert!(matches!(
            featurize_turn(&[], &turn, &fz.vocab, &fz.actions, &fz.lexicon, &fz.slots),
            Err(Error::UnknownAction(99))
        ));
        let turn = Turn::new("bye", "never seen");
        assert!(featurize_turn(&[], &turn, &fz.vocab, &fz.actions, &fz.lexicon, &fz.slots).is_err());
    }
}
