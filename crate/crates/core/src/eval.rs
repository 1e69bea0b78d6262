//! Per-utterance accuracy over label subsets and OOD detection F1.

use std::fmt::Write as _;
use std::ops::AddAssign;

use rayon::prelude::*;

use crate::corpus::{ActionId, Dialog, FeaturizedDialog, Featurizer, OodLabel};
use crate::error::{Error, Result};
use crate::models::Model;

/// Turns scored by an accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    All,
    SegmentOod,
    TurnOod,
}

impl Subset {
    fn contains(self, label: OodLabel) -> bool {
        match self {
            Subset::All => true,
            Subset::SegmentOod => label == OodLabel::SegmentOod,
            Subset::TurnOod => label == OodLabel::TurnOod,
        }
    }
}

fn check_aligned(predictions: &[ActionId], golds: &[ActionId], labels: &[OodLabel]) -> Result<()> {
    if predictions.len() != golds.len() || golds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} golds, {} labels",
            predictions.len(),
            golds.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Accuracy over the turns of `subset`; `None` when the subset is empty.
pub fn per_utterance_accuracy(
    predictions: &[ActionId],
    golds: &[ActionId],
    labels: &[OodLabel],
    subset: Subset,
) -> Result<Option<f64>> {
    check_aligned(predictions, golds, labels)?;
    let (mut correct, mut total) = (0usize, 0usize);
    for ((p, g), l) in predictions.iter().zip(golds).zip(labels) {
        if subset.contains(*l) {
            total += 1;
            correct += usize::from(p == g);
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// Precision, recall and F1 of fallback prediction as an OOD detector.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a denominator was zero and the affected value reported as 0.
    pub degenerate: bool,
}

impl DetectionScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        DetectionScore {
            precision: precision.unwrap_or(0.0),
            recall: recall.unwrap_or(0.0),
            f1: f1.unwrap_or(0.0),
            degenerate: precision.is_none() || recall.is_none() || f1.is_none(),
        }
    }
}

/// A prediction is positive when it is the fallback; a gold turn is
/// positive when it is labelled `TURN_OOD`.
pub fn ood_f1(predictions: &[ActionId], labels: &[OodLabel], fallback_id: ActionId) -> Result<DetectionScore> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions, {} labels", predictions.len(), labels.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, l) in predictions.iter().zip(labels) {
        match (*p == fallback_id, *l == OodLabel::TurnOod) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(DetectionScore::from_counts(tp, fp, fn_))
}

/// Integer tallies behind a [`MetricsRow`]; merging is associative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub total: usize,
    pub correct: usize,
    pub ind_total: usize,
    pub ind_correct: usize,
    pub seg_total: usize,
    pub seg_correct: usize,
    pub ood_total: usize,
    pub ood_correct: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn tally(
        predictions: &[ActionId],
        golds: &[ActionId],
        labels: &[OodLabel],
        fallback_id: ActionId,
    ) -> Result<Self> {
        check_aligned(predictions, golds, labels)?;
        let mut c = Counts::default();
        for ((&p, &g), &l) in predictions.iter().zip(golds).zip(labels) {
            let hit = usize::from(p == g);
            c.total += 1;
            c.correct += hit;
            match l {
                OodLabel::Ind => {
                    c.ind_total += 1;
                    c.ind_correct += hit;
                }
                OodLabel::SegmentOod => {
                    c.seg_total += 1;
                    c.seg_correct += hit;
                }
                OodLabel::TurnOod => {
                    c.ood_total += 1;
                    c.ood_correct += hit;
                }
            }
            match (p == fallback_id, l == OodLabel::TurnOod) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, r: Self) {
        self.total += r.total;
        self.correct += r.correct;
        self.ind_total += r.ind_total;
        self.ind_correct += r.ind_correct;
        self.seg_total += r.seg_total;
        self.seg_correct += r.seg_correct;
        self.ood_total += r.ood_total;
        self.ood_correct += r.ood_correct;
        self.tp += r.tp;
        self.fp += r.fp;
        self.fn_ += r.fn_;
    }
}

/// One row of the results table. Accuracies of empty subsets are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub overall_acc: Option<f64>,
    pub seg_ood_acc: Option<f64>,
    pub ood_acc: Option<f64>,
    pub ood_f1: f64,
    pub ood_precision: f64,
    pub ood_recall: f64,
    pub f1_degenerate: bool,
    pub counts: Counts,
}

fn frac(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricsRow {
    pub fn from_counts(c: Counts) -> Self {
        let det = DetectionScore::from_counts(c.tp, c.fp, c.fn_);
        MetricsRow {
            overall_acc: frac(c.correct, c.total),
            seg_ood_acc: frac(c.seg_correct, c.seg_total),
            ood_acc: frac(c.ood_correct, c.ood_total),
            ood_f1: det.f1,
            ood_precision: det.precision,
            ood_recall: det.recall,
            f1_degenerate: det.degenerate,
            counts: c,
        }
    }

    /// Accuracy on unlabelled (plain IND) turns.
    pub fn ind_acc(&self) -> Option<f64> {
        frac(self.counts.ind_correct, self.counts.ind_total)
    }

    /// `key = value` lines; absent accuracies are written as `none`.
    pub fn to_fields(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map_or("none".to_owned(), |x| x.to_string());
        let c = &self.counts;
        [
            ("overall_acc", opt(self.overall_acc)),
            ("seg_ood_acc", opt(self.seg_ood_acc)),
            ("ood_acc", opt(self.ood_acc)),
            ("ood_f1", self.ood_f1.to_string()),
            ("ood_precision", self.ood_precision.to_string()),
            ("ood_recall", self.ood_recall.to_string()),
            ("f1_degenerate", self.f1_degenerate.to_string()),
            ("turns", c.total.to_string()),
            ("ind_turns", c.ind_total.to_string()),
            ("seg_ood_turns", c.seg_total.to_string()),
            ("ood_turns", c.ood_total.to_string()),
            ("correct", c.correct.to_string()),
            ("ind_correct", c.ind_correct.to_string()),
            ("seg_ood_correct", c.seg_correct.to_string()),
            ("ood_correct", c.ood_correct.to_string()),
            ("tp", c.tp.to_string()),
            ("fp", c.fp.to_string()),
            ("fn", c.fn_.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }

    /// Inverse of [`MetricsRow::to_fields`]; derived values are recomputed
    /// from the counts.
    pub fn from_fields(fields: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<usize> {
            let raw = fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::InvalidValue(format!("report lacks `{key}`")))?;
            raw.parse().map_err(|_| Error::InvalidValue(format!("report field `{key}` = `{raw}` is not a count")))
        };
        Ok(MetricsRow::from_counts(Counts {
            total: get("turns")?,
            correct: get("correct")?,
            ind_total: get("ind_turns")?,
            ind_correct: get("ind_correct")?,
            seg_total: get("seg_ood_turns")?,
            seg_correct: get("seg_ood_correct")?,
            ood_total: get("ood_turns")?,
            ood_correct: get("ood_correct")?,
            tp: get("tp")?,
            fp: get("fp")?,
            fn_: get("fn")?,
        }))
    }

    /// Arithmetic mean of the reported fractions (counts are summed).
    pub fn mean(rows: &[MetricsRow]) -> Result<MetricsRow> {
        if rows.is_empty() {
            return Err(Error::Empty("no metrics rows to average".into()));
        }
        let n = rows.len() as f64;
        let mean_opt = |f: fn(&MetricsRow) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = rows.iter().map(f).collect();
            vals.map(|v| v.iter().sum::<f64>() / n)
        };
        let mut counts = Counts::default();
        rows.iter().for_each(|r| counts += r.counts);
        Ok(MetricsRow {
            overall_acc: mean_opt(|r| r.overall_acc),
            seg_ood_acc: mean_opt(|r| r.seg_ood_acc),
            ood_acc: mean_opt(|r| r.ood_acc),
            ood_f1: rows.iter().map(|r| r.ood_f1).sum::<f64>() / n,
            ood_precision: rows.iter().map(|r| r.ood_precision).sum::<f64>() / n,
            ood_recall: rows.iter().map(|r| r.ood_recall).sum::<f64>() / n,
            f1_degenerate: rows.iter().any(|r| r.f1_degenerate),
            counts,
        })
    }
}

/// Predictions for every featurized dialog, in order.
pub fn predict_all(model: &Model, dialogs: &[FeaturizedDialog]) -> Result<Vec<Vec<ActionId>>> {
    dialogs.par_iter().map(|d| model.predict_dialog(d)).collect()
}

/// Scores already featurized dialogs.
pub fn evaluate_featurized(model: &Model, dialogs: &[FeaturizedDialog]) -> Result<MetricsRow> {
    let predictions = predict_all(model, dialogs)?;
    let mut counts = Counts::default();
    for (d, p) in dialogs.iter().zip(&predictions) {
        let golds: Vec<ActionId> = d.turns.iter().map(|t| t.target).collect();
        counts += Counts::tally(p, &golds, &d.labels, model.fallback_id)?;
    }
    Ok(MetricsRow::from_counts(counts))
}

/// Featurizes `dialogs` (which carry their OOD labels) and scores the model.
pub fn evaluate_model(model: &Model, featurizer: &Featurizer, dialogs: &[Dialog]) -> Result<MetricsRow> {
    model.check_featurizer(featurizer)?;
    evaluate_featurized(model, &featurizer.featurize(dialogs)?)
}

/// Report version written into every record.
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// One evaluated model: its metrics plus the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRecord {
    pub model: String,
    pub metrics: MetricsRow,
    pub config: Vec<(String, String)>,
}

impl ReportRecord {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "report_format_version = {REPORT_FORMAT_VERSION}");
        let _ = writeln!(out, "model = {}", self.model);
        for (k, v) in self.metrics.to_fields() {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k} = {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = Vec::new();
        let mut config = Vec::new();
        let mut model = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Parse { line: i + 1, message: "expected `key = value`".into() })?;
            match k {
                "report_format_version" => {
                    if v != REPORT_FORMAT_VERSION.to_string() {
                        return Err(Error::Mismatch(format!("report format version {v}")));
                    }
                }
                "model" => model = Some(v.to_owned()),
                _ => match k.strip_prefix("config.") {
                    Some(key) => config.push((key.to_owned(), v.to_owned())),
                    None => fields.push((k.to_owned(), v.to_owned())),
                },
            }
        }
        Ok(ReportRecord {
            model: model.ok_or_else(|| Error::InvalidValue("report lacks `model`".into()))?,
            metrics: MetricsRow::from_fields(&fields)?,
            config,
        })
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".to_owned(), |x| format!("{x:.3}"))
}

/// Fixed-width results table: model, overall, seg-OOD and OOD accuracy, F1.
pub fn format_table(records: &[ReportRecord]) -> String {
    let width = records.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>11}  {:>12}  {:>7}  {:>6}",
        "Model", "Overall acc", "Seg. OOD acc", "OOD acc", "OOD F1"
    );
    for r in records {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:<width$}  {:>11}  {:>12}  {:>7}  {:>6}",
            r.model,
            cell(m.overall_acc),
            cell(m.seg_ood_acc),
            cell(m.ood_acc),
            format!("{:.3}", m.ood_f1)
        );
    }
    out
}

pub fn format_csv(records: &[ReportRecord]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = String::from("model,overall_acc,seg_ood_acc,ood_acc,ood_f1,ood_precision,ood_recall\n");
    for r in records {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.model,
            opt(m.overall_acc),
            opt(m.seg_ood_acc),
            opt(m.ood_acc),
            m.ood_f1,
            m.ood_precision,
            m.ood_recall
        );
    }
    out
}
