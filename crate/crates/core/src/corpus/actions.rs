use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use super::{delexicalize, Dialog, Lexicon, OodLabel};
use crate::error::{Error, Result};

pub type ActionId = usize;

pub const DEFAULT_FALLBACK: &str = "sorry i didn't catch that . could you please repeat ?";

/// Discrete system actions: distinct delexicalized system utterances plus
/// the fallback. Ids follow the lexicographic order of the templates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSet {
    templates: Vec<String>,
    index: HashMap<String, ActionId>,
    fallback_id: ActionId,
}

impl ActionSet {
    pub fn from_templates<I, S>(templates: I, fallback_template: &str) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set: BTreeSet<String> = templates.into_iter().map(|t| t.as_ref().to_owned()).collect();
        set.insert(fallback_template.to_owned());
        let templates: Vec<String> = set.into_iter().collect();
        let index: HashMap<String, ActionId> = templates.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let fallback_id = index[fallback_template];
        ActionSet { templates, index, fallback_id }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn fallback_id(&self) -> ActionId {
        self.fallback_id
    }

    pub fn fallback_template(&self) -> &str {
        &self.templates[self.fallback_id]
    }

    pub fn id(&self, template: &str) -> Option<ActionId> {
        self.index.get(template).copied()
    }

    pub fn template(&self, id: ActionId) -> Option<&str> {
        self.templates.get(id).map(String::as_str)
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    /// Action id of a raw system utterance.
    pub fn action_of(&self, utterance: &str, lexicon: &Lexicon) -> Result<ActionId> {
        let template = delexicalize(utterance, lexicon);
        self.id(&template)
            .ok_or_else(|| Error::InvalidValue(format!("system template not in action set: `{template}`")))
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.templates {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.update(self.fallback_id.to_le_bytes());
        format!("{:x}", h.finalize())
    }
}

pub fn extract_action_set(dialogs: &[Dialog], lexicon: &Lexicon, fallback_template: &str) -> Result<ActionSet> {
    if dialogs.is_empty() {
        return Err(Error::Empty("no dialogs to extract actions from".into()));
    }
    let templates = dialogs.iter().flat_map(|d| d.turns.iter()).map(|t| delexicalize(&t.system_utterance, lexicon));
    Ok(ActionSet::from_templates(templates, fallback_template))
}

/// Fills `system_action` on every turn. Turns labelled TURN_OOD must map to
/// the fallback action.
pub fn assign_actions(dialogs: &mut [Dialog], actions: &ActionSet, lexicon: &Lexicon) -> Result<()> {
    for dialog in dialogs {
        for turn in &mut dialog.turns {
            let id = actions.action_of(&turn.system_utterance, lexicon)?;
            if turn.ood_label == OodLabel::TurnOod && id != actions.fallback_id() {
                return Err(Error::InvalidValue(format!(
                    "dialog {}: TURN_OOD turn answered with non-fallback `{}`",
                    dialog.id, turn.system_utterance
                )));
            }
            turn.system_action = Some(id);
        }
    }
    Ok(())
}
