//! `oodhcn`: corpus augmentation, training, grid search, evaluation and
//! reporting for OOD-robust hybrid code networks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use oodhcn::augment::{augment_corpus, load_ood_pool, AugmentationConfig, OodSampler, SegmentPool};
use oodhcn::config::RunConfig;
use oodhcn::corpus::{
    apply_labels, parse_dialogs, parse_labels, write_dialogs, write_labels, Dialog, Featurizer, Lexicon,
    CORPUS_FORMAT_VERSION, DEFAULT_FALLBACK, LABEL_FORMAT_VERSION,
};
use oodhcn::eval::{evaluate_model, format_csv, format_table, ReportRecord, REPORT_FORMAT_VERSION};
use oodhcn::models::Model;
use oodhcn::nncore::checkpoint::FORMAT_VERSION as CHECKPOINT_FORMAT_VERSION;
use oodhcn::pipeline::{build_featurizer, load_embeddings, run_pipeline, write_text};
use oodhcn::toy::generate_toy_domain;
use oodhcn::train::{grid_search, train_model};

#[derive(Parser)]
#[command(name = "oodhcn", about = "OOD-robust hybrid code networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic restaurant domain with foreign corpora and interjections.
    Toy(ToyArgs),
    /// Insert seeded OOD blocks and interjections into a corpus.
    Augment(AugmentArgs),
    /// Train one model with early stopping on dev accuracy.
    Train(TrainArgs),
    /// Two-stage search over layer sizes and turn dropout ratio.
    Gridsearch(GridArgs),
    /// Score a checkpoint on a labelled test corpus.
    Evaluate(EvaluateArgs),
    /// Aggregate report records into a results table.
    Report(ReportArgs),
    /// Run toy/data → augment → train → evaluate → report from one config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    n_dialogs: usize,
    #[arg(long, default_value_t = 20)]
    n_actions: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    /// Foreign corpus; first user turns become the OOD pool. Repeatable.
    #[arg(long, required = true)]
    ood_pool: Vec<PathBuf>,
    /// One interjection per line.
    #[arg(long)]
    segment_pool: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    p_start: f64,
    #[arg(long, default_value_t = 0.4)]
    p_cont: f64,
    #[arg(long, default_value_t = 0.0)]
    independent_segment_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = DEFAULT_FALLBACK)]
    fallback: String,
    #[arg(long)]
    output: PathBuf,
    /// Label sidecar; defaults to the output path with a `.labels` extension.
    #[arg(long)]
    labels_out: Option<PathBuf>,
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// `key = value` run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// hcn, hhcn or vhcn.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Pretrained `V d` word vectors.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `slot<TAB>value` lexicon; derived from KB facts when absent.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Extra corpora whose user words join the vocabulary. Repeatable.
    #[arg(long)]
    vocab_from: Vec<PathBuf>,
    /// Configuration override `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out_checkpoint: PathBuf,
    #[arg(long)]
    history_out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated sizes, `emb` or `emb:latent`.
    #[arg(long)]
    stage1_grid: Option<String>,
    /// Comma-separated turn dropout ratios.
    #[arg(long)]
    stage2_grid: Option<String>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    results_out: PathBuf,
    /// Where to save the selected model.
    #[arg(long)]
    out_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Label sidecar of the test corpus; all turns count as IND when absent.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Row name; defaults to the checkpoint file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report records written by `evaluate`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    table_out: Option<PathBuf>,
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn version_text() -> String {
    format!(
        "{}\ncorpus format {CORPUS_FORMAT_VERSION}\nlabel format {LABEL_FORMAT_VERSION}\n\
         checkpoint format {CHECKPOINT_FORMAT_VERSION}\nreport format {REPORT_FORMAT_VERSION}",
        env!("CARGO_PKG_VERSION")
    )
}

fn read_input(flag: &str, path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("--{flag} {}", path.display()))
}

fn read_corpus(flag: &str, path: &Path) -> Result<Vec<Dialog>> {
    let text = read_input(flag, path)?;
    parse_dialogs(&text).with_context(|| format!("--{flag} {}", path.display()))
}

fn write_output(flag: &str, path: &Path, text: &str) -> Result<()> {
    write_text(path, text).with_context(|| format!("--{flag} {}", path.display()))
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::parse(&read_input("config", p)?).with_context(|| format!("--config {}", p.display()))?,
        None => RunConfig::default(),
    };
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else { bail!("--set expects KEY=VALUE, got `{o}`") };
        cfg.set(k.trim(), v.trim()).with_context(|| format!("--set {o}"))?;
    }
    Ok(cfg)
}

fn echo_lines(echo: &[(String, String)]) -> String {
    echo.iter().map(|(k, v)| format!("# {k} = {v}\n")).collect()
}

fn toy(a: ToyArgs) -> Result<()> {
    let toy = generate_toy_domain(a.seed, a.n_dialogs, a.n_actions)?;
    let files = [
        ("train.txt", write_dialogs(&toy.train)),
        ("dev.txt", write_dialogs(&toy.dev)),
        ("test.txt", write_dialogs(&toy.test)),
        ("foreign.txt", write_dialogs(&toy.foreign)),
        ("segments.txt", toy.segments.interjections.join("\n") + "\n"),
        ("lexicon.txt", toy.lexicon.write()),
    ];
    for (name, text) in files {
        write_output("out-dir", &a.out_dir.join(name), &text)?;
    }
    println!(
        "wrote toy domain to {} (train {}, dev {}, test {}, foreign {})",
        a.out_dir.display(),
        toy.train.len(),
        toy.dev.len(),
        toy.test.len(),
        toy.foreign.len()
    );
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let input = read_corpus("input", &a.input)?;
    let mut pools = Vec::new();
    for p in &a.ood_pool {
        let foreign = read_corpus("ood-pool", p)?;
        pools.push(
            load_ood_pool(&foreign, &p.display().to_string()).with_context(|| format!("--ood-pool {}", p.display()))?,
        );
    }
    let segments = SegmentPool::parse(&read_input("segment-pool", &a.segment_pool)?);
    let cfg = AugmentationConfig {
        p_ood_start: a.p_start,
        p_ood_cont: a.p_cont,
        seed: a.seed,
        independent_segment_prob: a.independent_segment_prob,
    };
    let (augmented, stats) = augment_corpus(&input, &cfg, &OodSampler::new(pools), &segments, &a.fallback)?;
    write_output("output", &a.output, &write_dialogs(&augmented))?;
    let labels_path = a.labels_out.clone().unwrap_or_else(|| a.output.with_extension("labels"));
    write_output("labels-out", &labels_path, &write_labels(&augmented))?;
    let mut record = stats.to_record();
    let _ = writeln!(record, "config.p_ood_start = {}", a.p_start);
    let _ = writeln!(record, "config.p_ood_cont = {}", a.p_cont);
    let _ = writeln!(record, "config.independent_segment_prob = {}", a.independent_segment_prob);
    let _ = writeln!(record, "config.seed = {}", a.seed);
    let _ = writeln!(record, "config.input = {}", a.input.display());
    for p in &a.ood_pool {
        let _ = writeln!(record, "config.ood_pool = {}", p.display());
    }
    let _ = writeln!(record, "config.segment_pool = {}", a.segment_pool.display());
    match &a.stats_out {
        Some(p) => write_output("stats-out", p, &record)?,
        None => print!("{record}"),
    }
    Ok(())
}

struct Prepared {
    cfg: RunConfig,
    featurizer: Featurizer,
    train: Vec<oodhcn::corpus::FeaturizedDialog>,
    dev: Vec<oodhcn::corpus::FeaturizedDialog>,
    pretrained: Option<oodhcn::corpus::EmbeddingTable>,
}

fn prepare(a: &ModelArgs, extra: &[(&str, String)]) -> Result<Prepared> {
    let mut cfg = load_config(a.config.as_deref(), &a.overrides)?;
    if let Some(v) = &a.variant {
        cfg.set("run.variant", v).context("--variant")?;
    }
    if let Some(s) = a.seed {
        cfg.set("run.seed", &s.to_string())?;
    }
    if let Some(p) = &a.embeddings {
        cfg.set("model.embeddings", &p.display().to_string())?;
    }
    for (k, v) in extra {
        cfg.set(k, v).with_context(|| format!("--{}", k.rsplit('.').next().unwrap_or(k).replace('_', "-")))?;
    }
    cfg.set("data.source", "files")?;
    cfg.set("data.train", &a.train.display().to_string())?;
    cfg.set("data.dev", &a.dev.display().to_string())?;
    if let Some(p) = &a.lexicon {
        cfg.set("data.lexicon", &p.display().to_string())?;
    }
    let train = read_corpus("train", &a.train)?;
    let dev = read_corpus("dev", &a.dev)?;
    let mut extra_corpora = Vec::new();
    for p in &a.vocab_from {
        extra_corpora.push(read_corpus("vocab-from", p)?);
    }
    let lexicon = match &a.lexicon {
        Some(p) => Lexicon::parse(&read_input("lexicon", p)?).with_context(|| format!("--lexicon {}", p.display()))?,
        None => Lexicon::from_kb_facts(&[train.clone(), dev.clone()].concat()),
    };
    let mut vocab: Vec<&[Dialog]> = vec![&dev];
    vocab.extend(extra_corpora.iter().map(Vec::as_slice));
    let featurizer = build_featurizer(&train, &vocab, lexicon, cfg.get("data.fallback")?)?;
    let pretrained = match &a.embeddings {
        Some(p) => {
            read_input("embeddings", p)?;
            Some(
                load_embeddings(p, &featurizer, cfg.value("run.seed")?)
                    .with_context(|| format!("--embeddings {}", p.display()))?,
            )
        }
        None => None,
    };
    Ok(Prepared { train: featurizer.featurize(&train)?, dev: featurizer.featurize(&dev)?, cfg, featurizer, pretrained })
}

fn checkpoint_meta(cfg: &RunConfig, extra: &[(String, String)]) -> Result<Vec<(String, String)>> {
    let mut meta: Vec<(String, String)> = cfg.echo()?.into_iter().map(|(k, v)| (format!("config.{k}"), v)).collect();
    meta.extend(extra.iter().cloned());
    Ok(meta)
}

fn train(a: TrainArgs) -> Result<()> {
    let p = prepare(&a.model, &[])?;
    let tc = p.cfg.train_config()?;
    let (model, history) = train_model(&p.cfg.model_config()?, &tc, &p.featurizer, &p.train, &p.dev, p.pretrained)?;
    let mut run: Vec<(String, String)> = tc.echo().into_iter().map(|(k, v)| (format!("run.{k}"), v)).collect();
    run.push(("run.best_epoch".into(), history.best_epoch.to_string()));
    let meta = checkpoint_meta(&p.cfg, &run)?;
    if let Some(dir) = a.out_checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("--out-checkpoint {}", a.out_checkpoint.display()))?;
    }
    model
        .save(&p.featurizer, &meta, &a.out_checkpoint)
        .with_context(|| format!("--out-checkpoint {}", a.out_checkpoint.display()))?;
    if let Some(h) = &a.history_out {
        write_output("history-out", h, &history.to_tsv(&meta))?;
    }
    println!(
        "{}: best dev accuracy {:.4} at epoch {} of {} ({:.1?})",
        a.out_checkpoint.display(),
        history.best_dev_acc,
        history.best_epoch,
        history.epochs.len(),
        history.wall_time
    );
    Ok(())
}

fn gridsearch(a: GridArgs) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(g) = &a.stage1_grid {
        extra.push(("gridsearch.stage1_grid", g.clone()));
    }
    if let Some(g) = &a.stage2_grid {
        extra.push(("gridsearch.stage2_grid", g.clone()));
    }
    if let Some(j) = a.jobs {
        extra.push(("gridsearch.jobs", j.to_string()));
    }
    let p = prepare(&a.model, &extra)?;
    let stage1 = p.cfg.stage1_grid().context("--stage1-grid")?;
    let stage2 = p.cfg.stage2_grid().context("--stage2-grid")?;
    let tc = p.cfg.train_config()?;
    let result = grid_search(
        &p.cfg.model_config()?,
        &tc,
        &stage1,
        &stage2,
        &p.featurizer,
        &p.train,
        &p.dev,
        p.pretrained.as_ref(),
        p.cfg.value("gridsearch.jobs")?,
    )?;
    let echo = p.cfg.echo()?;
    let mut out = echo_lines(&echo);
    for cell in &result.cells {
        let _ = writeln!(out, "{}", cell.to_record());
    }
    let latent = result.best_size.latent_dim.map_or("none".into(), |k| k.to_string());
    let _ = writeln!(
        out,
        "best\tembedding_dim = {}\tlatent_dim = {latent}\tturn_dropout = {}",
        result.best_size.embedding_dim, result.best_turn_dropout
    );
    write_output("results-out", &a.results_out, &out)?;
    if let Some(path) = &a.out_checkpoint {
        let mut run: Vec<(String, String)> = tc.echo().into_iter().map(|(k, v)| (format!("run.{k}"), v)).collect();
        run.push(("grid.embedding_dim".into(), result.best_size.embedding_dim.to_string()));
        run.push(("grid.latent_dim".into(), latent.clone()));
        run.push(("grid.turn_dropout".into(), result.best_turn_dropout.to_string()));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("--out-checkpoint {}", path.display()))?;
        }
        result
            .best_model
            .save(&p.featurizer, &checkpoint_meta(&p.cfg, &run)?, path)
            .with_context(|| format!("--out-checkpoint {}", path.display()))?;
    }
    println!(
        "best cell: embedding_dim {} latent_dim {latent} turn_dropout {}",
        result.best_size.embedding_dim, result.best_turn_dropout
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    fs::metadata(&a.checkpoint).with_context(|| format!("--checkpoint {}", a.checkpoint.display()))?;
    let (model, featurizer, file) =
        Model::load(&a.checkpoint).with_context(|| format!("--checkpoint {}", a.checkpoint.display()))?;
    let mut test = read_corpus("test", &a.test)?;
    if let Some(l) = &a.labels {
        let labels = parse_labels(&read_input("labels", l)?).with_context(|| format!("--labels {}", l.display()))?;
        apply_labels(&mut test, &labels).with_context(|| format!("--labels {}", l.display()))?;
    }
    let metrics = evaluate_model(&model, &featurizer, &test)?;
    let mut config: Vec<(String, String)> = file
        .meta
        .iter()
        .filter_map(|(k, v)| {
            k.strip_prefix("config.")
                .map(|k| (k.to_owned(), v.clone()))
                .or_else(|| k.starts_with("run.").then(|| (k.clone(), v.clone())))
        })
        .collect();
    config.push(("evaluate.checkpoint".into(), a.checkpoint.display().to_string()));
    config.push(("evaluate.test".into(), a.test.display().to_string()));
    if let Some(l) = &a.labels {
        config.push(("evaluate.labels".into(), l.display().to_string()));
    }
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| a.checkpoint.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()));
    let record = ReportRecord { model: name, metrics, config };
    match &a.report_out {
        Some(p) => write_output("report-out", p, &record.to_text())?,
        None => print!("{}", record.to_text()),
    }
    if a.report_out.is_some() {
        print!("{}", format_table(std::slice::from_ref(&record)));
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for p in &a.inputs {
        records.push(ReportRecord::parse(&read_input("inputs", p)?).with_context(|| p.display().to_string())?);
    }
    let table = format_table(&records);
    if let Some(p) = &a.table_out {
        write_output("table-out", p, &table)?;
    }
    if let Some(p) = &a.csv_out {
        write_output("csv-out", p, &format_csv(&records))?;
    }
    print!("{table}");
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), &a.overrides)?;
    let summary = run_pipeline(&cfg, &a.out_dir)?;
    print!("{}", summary.table);
    Ok(())
}

/// Joins an error chain, skipping causes already quoted by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if !msg.ends_with(&s) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&s);
        }
    }
    msg
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(version_text().into_boxed_str());
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Toy(a) => toy(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train(a),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
        Command::Pipeline(a) => pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}
