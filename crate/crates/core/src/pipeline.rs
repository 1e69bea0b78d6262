//! End-to-end runs: data → augment → train → evaluate → report.
//!
//! Every stage writes its artifacts under the output directory and the next
//! stage reads them back, so a pipeline run and a sequence of CLI
//! subcommands see exactly the same inputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::augment::{augment_corpus, load_ood_pool, OodSampler, SegmentPool};
use crate::config::RunConfig;
use crate::corpus::{
    apply_labels, build_vocabulary, extract_action_set, parse_dialogs, parse_labels, write_dialogs, write_labels,
    ContextSlots, Dialog, EmbeddingTable, Featurizer, Lexicon,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, format_csv, format_table, MetricsRow, ReportRecord};
use crate::models::Model;
use crate::rng;
use crate::toy::generate_toy_domain;
use crate::train::{train_model, TrainConfig};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_dialogs(path: &Path) -> Result<Vec<Dialog>> {
    parse_dialogs(&read_text(path)?).map_err(|e| match e {
        Error::Parse { line, message } => Error::InvalidValue(format!("{}:{line}: {message}", path.display())),
        other => other,
    })
}

/// Transcript plus its label sidecar.
pub fn read_labelled(dialogs: &Path, labels: &Path) -> Result<Vec<Dialog>> {
    let mut d = read_dialogs(dialogs)?;
    apply_labels(&mut d, &parse_labels(&read_text(labels)?)?)?;
    Ok(d)
}

/// Featurizer with a unified vocabulary over `train` and every corpus in
/// `extra_vocab`, and the action set of `train`.
pub fn build_featurizer(
    train: &[Dialog],
    extra_vocab: &[&[Dialog]],
    lexicon: Lexicon,
    fallback: &str,
) -> Result<Featurizer> {
    let mut corpora: Vec<&[Dialog]> = vec![train];
    corpora.extend_from_slice(extra_vocab);
    Ok(Featurizer {
        vocab: build_vocabulary(&corpora),
        actions: extract_action_set(train, &lexicon, fallback)?,
        lexicon,
        slots: ContextSlots::default(),
    })
}

/// Reads a `V d` embedding file against `featurizer`'s vocabulary.
pub fn load_embeddings(path: &Path, featurizer: &Featurizer, seed: u64) -> Result<EmbeddingTable> {
    EmbeddingTable::parse(&read_text(path)?, &featurizer.vocab, &mut rng::stream(seed, "embedding_fill", 0))
}

/// Files produced by one run, relative to the output directory.
pub mod layout {
    pub const CONFIG: &str = "config.resolved.txt";
    pub const TRAIN: &str = "data/train.txt";
    pub const DEV: &str = "data/dev.txt";
    pub const TEST: &str = "data/test.txt";
    pub const FOREIGN: &str = "data/foreign.txt";
    pub const SEGMENTS: &str = "data/segments.txt";
    pub const LEXICON: &str = "data/lexicon.txt";
    pub const AUG_TEST: &str = "augmented/test.txt";
    pub const AUG_LABELS: &str = "augmented/test.labels";
    pub const AUG_STATS: &str = "augmented/test.stats";
    pub const TABLE: &str = "reports/table.txt";
    pub const CSV: &str = "reports/table.csv";
}

#[derive(Clone, Debug)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub records: Vec<ReportRecord>,
    pub mean: ReportRecord,
    pub table: String,
}

fn required(cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    cfg.data_path(key)?.ok_or_else(|| Error::Config(format!("`{key}` must name a file when data.source = files")))
}

/// Writes the data stage's files (generated or copied) under `out`.
fn stage_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    match cfg.get("data.source")? {
        "toy" => {
            let toy = generate_toy_domain(
                cfg.resolved()?.value("toy.seed")?,
                cfg.value("toy.n_dialogs")?,
                cfg.value("toy.n_actions")?,
            )?;
            write_text(&out.join(layout::TRAIN), &write_dialogs(&toy.train))?;
            write_text(&out.join(layout::DEV), &write_dialogs(&toy.dev))?;
            write_text(&out.join(layout::TEST), &write_dialogs(&toy.test))?;
            write_text(&out.join(layout::FOREIGN), &write_dialogs(&toy.foreign))?;
            write_text(&out.join(layout::SEGMENTS), &(toy.segments.interjections.join("\n") + "\n"))?;
            write_text(&out.join(layout::LEXICON), &toy.lexicon.write())
        }
        "files" => {
            let copy = |key: &str, to: &str| -> Result<()> {
                let from = required(cfg, key)?;
                write_text(&out.join(to), &read_text(&from)?)
            };
            copy("data.train", layout::TRAIN)?;
            copy("data.dev", layout::DEV)?;
            copy("data.test", layout::TEST)?;
            copy("data.segments", layout::SEGMENTS)?;
            let mut foreign = Vec::new();
            for p in cfg.get("data.ood")?.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                foreign.extend(read_dialogs(Path::new(p))?);
            }
            if foreign.is_empty() {
                return Err(Error::Config("`data.ood` must name at least one foreign corpus".into()));
            }
            write_text(&out.join(layout::FOREIGN), &write_dialogs(&foreign))?;
            match cfg.data_path("data.lexicon")? {
                Some(p) => write_text(&out.join(layout::LEXICON), &read_text(&p)?),
                None => {
                    let mut all = read_dialogs(&out.join(layout::TRAIN))?;
                    all.extend(read_dialogs(&out.join(layout::DEV))?);
                    all.extend(read_dialogs(&out.join(layout::TEST))?);
                    write_text(&out.join(layout::LEXICON), &Lexicon::from_kb_facts(&all).write())
                }
            }
        }
        other => Err(Error::Config(format!("data.source must be `toy` or `files`, not `{other}`"))),
    }
}

fn stage_augment(cfg: &RunConfig, out: &Path) -> Result<()> {
    let test = read_dialogs(&out.join(layout::TEST))?;
    let foreign = read_dialogs(&out.join(layout::FOREIGN))?;
    let pool = OodSampler::new(vec![load_ood_pool(&foreign, "foreign")?]);
    let segments = SegmentPool::parse(&read_text(&out.join(layout::SEGMENTS))?);
    let (augmented, stats) =
        augment_corpus(&test, &cfg.augmentation_config()?, &pool, &segments, cfg.get("data.fallback")?)?;
    write_text(&out.join(layout::AUG_TEST), &write_dialogs(&augmented))?;
    write_text(&out.join(layout::AUG_LABELS), &write_labels(&augmented))?;
    write_text(&out.join(layout::AUG_STATS), &stats.to_record())
}

fn run_name(cfg: &RunConfig) -> Result<String> {
    Ok(cfg.resolved()?.get("run.name")?.to_owned())
}

fn checkpoint_path(out: &Path, name: &str, seed: u64) -> PathBuf {
    out.join(format!("models/{name}-seed{seed}.ckpt"))
}

/// Training configs of the run, one per seed.
fn seed_configs(cfg: &RunConfig) -> Result<Vec<TrainConfig>> {
    let base = cfg.train_config()?;
    let n: usize = cfg.value("run.n_seeds")?;
    if n == 0 {
        return Err(Error::Config("run.n_seeds must be at least 1".into()));
    }
    let explicit_dropout_seed = cfg.get("turn_dropout.seed")? != "auto";
    Ok(crate::train::run_seeds(base.seed, n)
        .into_iter()
        .map(|seed| TrainConfig {
            seed,
            turn_dropout_seed: if explicit_dropout_seed { base.turn_dropout_seed } else { None },
            ..base.clone()
        })
        .collect())
}

fn stage_train(cfg: &RunConfig, out: &Path) -> Result<Vec<u64>> {
    let train = read_dialogs(&out.join(layout::TRAIN))?;
    let dev = read_dialogs(&out.join(layout::DEV))?;
    let aug = read_dialogs(&out.join(layout::AUG_TEST))?;
    let foreign = read_dialogs(&out.join(layout::FOREIGN))?;
    let lexicon = Lexicon::parse(&read_text(&out.join(layout::LEXICON))?)?;
    let featurizer = build_featurizer(&train, &[&dev, &aug, &foreign], lexicon, cfg.get("data.fallback")?)?;
    let model_cfg = cfg.model_config()?;
    let train_f = featurizer.featurize(&train)?;
    let dev_f = featurizer.featurize(&dev)?;
    let name = run_name(cfg)?;
    let echo = cfg.echo()?;
    let root: u64 = cfg.value("run.seed")?;
    let pretrained = match &model_cfg.embeddings_path {
        Some(p) => Some(load_embeddings(p, &featurizer, root)?),
        None => None,
    };
    let seeds = seed_configs(cfg)?;
    seeds
        .par_iter()
        .map(|tc| {
            let (model, history) = train_model(&model_cfg, tc, &featurizer, &train_f, &dev_f, pretrained.clone())?;
            let mut meta: Vec<(String, String)> =
                echo.iter().map(|(k, v)| (format!("config.{k}"), v.clone())).collect();
            meta.extend(tc.echo().into_iter().map(|(k, v)| (format!("run.{k}"), v)));
            meta.push(("run.best_epoch".into(), history.best_epoch.to_string()));
            let path = checkpoint_path(out, &name, tc.seed);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            model.save(&featurizer, &meta, &path)?;
            write_text(&path.with_extension("history.tsv"), &history.timeless().to_tsv(&meta))?;
            Ok(tc.seed)
        })
        .collect()
}

fn stage_evaluate(cfg: &RunConfig, out: &Path, seeds: &[u64]) -> Result<Vec<ReportRecord>> {
    let test = read_labelled(&out.join(layout::AUG_TEST), &out.join(layout::AUG_LABELS))?;
    let name = run_name(cfg)?;
    let echo = cfg.echo()?;
    seeds
        .iter()
        .map(|&seed| {
            let (model, featurizer, _) = Model::load(&checkpoint_path(out, &name, seed))?;
            let metrics = evaluate_model(&model, &featurizer, &test)?;
            let mut config = echo.clone();
            config.push(("train.seed".into(), seed.to_string()));
            let record = ReportRecord { model: format!("{name}-seed{seed}"), metrics, config };
            write_text(&out.join(format!("reports/{name}-seed{seed}.report")), &record.to_text())?;
            Ok(record)
        })
        .collect()
}

fn stage_report(cfg: &RunConfig, out: &Path, records: &[ReportRecord]) -> Result<(ReportRecord, String)> {
    let name = run_name(cfg)?;
    let metrics: Vec<MetricsRow> = records.iter().map(|r| r.metrics).collect();
    let mean = ReportRecord { model: name.clone(), metrics: MetricsRow::mean(&metrics)?, config: cfg.echo()? };
    write_text(&out.join(format!("reports/{name}.report")), &mean.to_text())?;
    let mut rows = records.to_vec();
    if records.len() > 1 {
        rows.push(ReportRecord { model: format!("{name} (mean of {})", records.len()), ..mean.clone() });
    }
    let table = format_table(&rows);
    write_text(&out.join(layout::TABLE), &table)?;
    write_text(&out.join(layout::CSV), &format_csv(&rows))?;
    Ok((mean, table))
}

/// Runs every stage. Errors carry the name of the stage that failed.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineSummary> {
    let resolved = cfg.resolved().map_err(|e| e.in_stage("config"))?;
    write_text(&out.join(layout::CONFIG), &resolved.to_text()).map_err(|e| e.in_stage("config"))?;
    stage_data(cfg, out).map_err(|e| e.in_stage("data"))?;
    stage_augment(cfg, out).map_err(|e| e.in_stage("augment"))?;
    let seeds = stage_train(cfg, out).map_err(|e| e.in_stage("train"))?;
    let records = stage_evaluate(cfg, out, &seeds).map_err(|e| e.in_stage("evaluate"))?;
    let (mean, table) = stage_report(cfg, out, &records).map_err(|e| e.in_stage("report"))?;
    Ok(PipelineSummary { out_dir: out.to_path_buf(), records, mean, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("run.seed", "5"),
            ("run.n_seeds", "2"),
            ("toy.n_dialogs", "60"),
            ("toy.n_actions", "12"),
            ("model.embedding_dim", "16"),
            ("model.dialog_hidden", "24"),
            ("model.predictor_hidden", "24"),
            ("train.max_epochs", "2"),
        ] {
            cfg.set(k, v).unwrap();
        }
        cfg
    }

    fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn runs_are_byte_identical() {
        let cfg = small_config();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = run_pipeline(&cfg, a.path()).unwrap();
        let sb = run_pipeline(&cfg, b.path()).unwrap();
        assert_eq!(sa.records.len(), 2);
        assert_eq!(sa.table, sb.table);
        let (ta, tb) = (tree(a.path()), tree(b.path()));
        assert!(ta.iter().any(|(p, _)| p.ends_with("TD-HCN-seed5.ckpt")));
        assert!(ta.iter().any(|(p, _)| p.ends_with("TD-HCN-seed6.report")));
        assert_eq!(ta, tb);
    }

    #[test]
    fn artifacts_echo_the_config() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let summary = run_pipeline(&cfg, dir.path()).unwrap();
        let report = read_text(&dir.path().join("reports/TD-HCN-seed5.report")).unwrap();
        assert!(report.contains("config.turn_dropout.ratio = 0.4"), "{report}");
        assert_eq!(ReportRecord::parse(&report).unwrap(), summary.records[0]);
        let (_, _, ckpt) = Model::load(&checkpoint_path(dir.path(), "TD-HCN", 6)).unwrap();
        assert!(ckpt.meta.iter().any(|(k, v)| k == "config.toy.n_dialogs" && v == "60"));
        let resolved = RunConfig::parse(&read_text(&dir.path().join(layout::CONFIG)).unwrap()).unwrap();
        assert_eq!(resolved, cfg.resolved().unwrap());
    }

    #[test]
    fn errors_name_the_failing_stage() {
        let mut cfg = small_config();
        cfg.set("data.source", "files").unwrap();
        cfg.set("data.train", "/nonexistent/train.txt").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let msg = run_pipeline(&cfg, dir.path()).unwrap_err().to_string();
        assert!(msg.contains("data") && msg.contains("/nonexistent/train.txt"), "{msg}");
    }
}
