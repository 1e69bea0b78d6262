//! Reading and writing the numbered-line transcript format.
//!
//! ```text
//! 1 <SILENCE>\thello , welcome ...
//! 2 resto_1 R_cuisine italian
//! 3 i want italian food\tapi_call italian R_location R_price
//!
//! 1 ...
//! ```
//!
//! Exchanges carry a TAB between user and system text; lines without a TAB
//! are knowledge-base facts and attach to the next exchange. Numbering
//! restarts at 1 in each blank-line separated block.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Dialog, KbFact, OodLabel, Turn};
use crate::error::{Error, Result};

/// Version of the transcript layout read and written here.
pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// Version of the `dialog_id<TAB>turn_idx<TAB>label` sidecar layout.
pub const LABEL_FORMAT_VERSION: u32 = 1;

pub fn parse_dialogs(text: &str) -> Result<Vec<Dialog>> {
    let mut dialogs = Vec::new();
    let mut turns: Vec<Turn> = Vec::new();
    let mut pending: Vec<KbFact> = Vec::new();
    let mut block_start = 0usize;

    let mut close = |turns: &mut Vec<Turn>, pending: &mut Vec<KbFact>, line: usize| -> Result<()> {
        if turns.is_empty() && pending.is_empty() {
            return Ok(());
        }
        if turns.is_empty() {
            return Err(Error::Parse { line, message: "dialog block has facts but no exchanges".into() });
        }
        let mut dialog = Dialog::new(dialogs.len(), std::mem::take(turns));
        dialog.trailing_facts = std::mem::take(pending);
        dialogs.push(dialog);
        Ok(())
    };

    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            close(&mut turns, &mut pending, block_start)?;
            continue;
        }
        if turns.is_empty() && pending.is_empty() {
            block_start = line_no;
        }
        let (number, rest) = match line.split_once(' ') {
            Some(parts) => parts,
            None => (line, ""),
        };
        if number.is_empty() || !number.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Parse { line: line_no, message: format!("missing line number in `{line}`") });
        }
        if let Some((user, system)) = rest.split_once('\t') {
            let mut turn = Turn::new(user, system);
            turn.kb_facts = std::mem::take(&mut pending);
            turns.push(turn);
        } else if !rest.trim().is_empty() {
            pending.push(KbFact::new(rest));
        } else {
            return Err(Error::Parse { line: line_no, message: "line is neither an exchange nor a fact".into() });
        }
    }
    close(&mut turns, &mut pending, block_start)?;
    Ok(dialogs)
}

pub fn write_dialogs(dialogs: &[Dialog]) -> String {
    let mut out = String::new();
    for dialog in dialogs {
        let mut n = 1usize;
        for turn in &dialog.turns {
            for fact in &turn.kb_facts {
                let _ = writeln!(out, "{n} {}", fact.text);
                n += 1;
            }
            let _ = writeln!(out, "{n} {}\t{}", turn.user_text, turn.system_utterance);
            n += 1;
        }
        for fact in &dialog.trailing_facts {
            let _ = writeln!(out, "{n} {}", fact.text);
            n += 1;
        }
        out.push('\n');
    }
    out
}

/// Sidecar label file: `dialog_id<TAB>turn_idx<TAB>LABEL` per turn.
pub fn write_labels(dialogs: &[Dialog]) -> String {
    let mut out = String::new();
    for dialog in dialogs {
        for (i, turn) in dialog.turns.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", dialog.id, i, turn.ood_label);
        }
    }
    out
}

pub fn parse_labels(text: &str) -> Result<Vec<(usize, usize, OodLabel)>> {
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: idx + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let dialog = fields[0].parse().map_err(|_| err(format!("bad dialog id `{}`", fields[0])))?;
        let turn = fields[1].parse().map_err(|_| err(format!("bad turn index `{}`", fields[1])))?;
        let label = fields[2].parse().map_err(|e: Error| err(e.to_string()))?;
        labels.push((dialog, turn, label));
    }
    Ok(labels)
}

/// Sets `ood_label` on every turn named in `labels`; unnamed turns stay IND.
pub fn apply_labels(dialogs: &mut [Dialog], labels: &[(usize, usize, OodLabel)]) -> Result<()> {
    let by_id: HashMap<usize, usize> = dialogs.iter().enumerate().map(|(i, d)| (d.id, i)).collect();
    for &(dialog, turn, label) in labels {
        let slot = by_id
            .get(&dialog)
            .and_then(|&i| dialogs[i].turns.get_mut(turn))
            .ok_or_else(|| Error::InvalidValue(format!("label for unknown turn {dialog}/{turn}")))?;
        slot.ood_label = label;
    }
    Ok(())
}
