//! `radiogen`: stage-by-stage and end-to-end driver.
//!
//! Exit codes: 0 on success, 1 when arguments, configuration or inputs fail
//! validation, 2 when a stage fails while running.

use std::fmt::Display;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use radiogen_core::corpus::{
    self, corpus_stats, partition, read_corpus_jsonl, split_train_eval, write_corpus_jsonl, CleanOptions, Corpus,
    InputFormat, TitleRule, WordSet, DEFAULT_TITLE_MIN_SUPPORT,
};
use radiogen_core::expert::{
    average_raters, import_tsv, read_journal, scope_aggregate, score_session, write_radar_csv, EvalScope, RaterLevel,
    ScoringItem,
};
use radiogen_core::inference::{
    infer_batch, load_backend_configs, read_outcomes, read_prompts, write_outcomes, GenerationConfig, GenerationOutcome,
};
use radiogen_core::kernels::selftest;
use radiogen_core::pipeline::{run_pipeline, PipelineConfig, PipelineError, MANIFEST_FILE};
use radiogen_core::prompt::{default_templates, load_templates, synthesize_batch, PromptTemplate};
use radiogen_core::provenance::{self, sha256_hex, Provenance};
use radiogen_core::report::{
    utility_metrics, write_report_table, write_utility_table, Layout, ReportError, TableFormat,
};
use radiogen_core::rouge::{aggregate_scores, score_pairs, write_record_scores, Averaging, Grouping, ScoreTable};
use radiogen_core::selection::{
    find_best_prompt, full_training_plan, small_epoch_sweep, trainer_from_handle, JobOptions, SelectionKey, SweepInputs,
};

#[derive(Parser)]
#[command(name = "radiogen", version, about = "Radiology impression generation and evaluation toolkit")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a raw JSONL or CSV export into the canonical corpus format.
    Ingest(IngestArgs),
    /// Deduplicate, strip repeated titles and delete lexicon noise.
    Clean(CleanArgs),
    /// Partition by institution and split the in-house records into train and eval.
    Split(SplitArgs),
    /// Render prompts for a corpus with one or all templates.
    Prompts(PromptsArgs),
    /// Generate impressions through the guarded retry loop.
    Infer(InferArgs),
    /// Score outcomes against reference impressions and aggregate by scope.
    Score(ScoreArgs),
    /// Small-epoch prompt sweep and best-template selection.
    Select(SelectArgs),
    /// Radiologist scoring sessions and clinical aggregates.
    #[command(subcommand)]
    Expert(ExpertCommand),
    /// Reference numeric kernels.
    #[command(subcommand)]
    Kernels(KernelsCommand),
    /// Render comparison and utility tables.
    Report(ReportArgs),
    /// Run the whole pipeline from a TOML configuration.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: InputFormat,
    #[arg(long)]
    out: PathBuf,
    /// Where to write rejected rows; defaults to `<out>.rejects.jsonl`.
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CleanArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_TITLE_THRESHOLD)]
    title_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_TITLE_MIN_SUPPORT)]
    title_min_support: usize,
    /// Treat lexicon entries as regular expressions.
    #[arg(long)]
    regex: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_TRAIN_RATIO)]
    ratio: f64,
    #[arg(long)]
    seed: u64,
    /// Receives train.jsonl, eval.jsonl and external.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PromptsArgs {
    /// Template file; the built-in templates are used when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Corpora to render; several files are concatenated.
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// Only this template; every template when omitted.
    #[arg(long)]
    template: Option<u8>,
    #[arg(long)]
    with_labels: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Backend configuration file (one object or an array).
    #[arg(long)]
    backend: PathBuf,
    /// Restrict to these backend ids, in order.
    #[arg(long = "backend-id")]
    backend_ids: Vec<String>,
    #[arg(long)]
    prompts: PathBuf,
    /// Generation settings (TOML or JSON); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    parallel: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long, required = true, num_args = 1..)]
    outcomes: Vec<PathBuf>,
    /// Reference corpora; several files are concatenated.
    #[arg(long, required = true, num_args = 1..)]
    refs: Vec<PathBuf>,
    #[arg(long, default_value = "both")]
    group_by: Grouping,
    #[arg(long, default_value = "macro")]
    averaging: Averaging,
    /// Aggregated table as CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Per-record scores as JSONL.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long)]
    templates: Option<PathBuf>,
    /// `stub:<map.json>`, an http(s) URL, or a command line.
    #[arg(long)]
    trainer: String,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    #[arg(long, default_value = "mean_rl_f1")]
    key: SelectionKey,
    /// Generation settings (TOML or JSON) for the evaluation pass.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pipeline file whose training and generation sections apply; `--config` wins for generation.
    #[arg(long)]
    pipeline: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    parallel: usize,
    #[arg(long)]
    work_dir: PathBuf,
    /// Write the continuation job spec for the winning template here.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExpertCommand {
    /// Interactive scoring; resumes from the journal.
    Score(ExpertScoreArgs),
    /// Convert a TSV sheet of scores into a journal.
    Import(ExpertImportArgs),
    /// Average raters and aggregate by evaluation scope into radar CSV.
    Aggregate(ExpertAggregateArgs),
}

#[derive(Args, Debug)]
struct ExpertScoreArgs {
    /// Journal file; created on first use.
    #[arg(long)]
    session: PathBuf,
    /// Items to score (JSONL of record_id, backend_id, finding, impression).
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    rater: String,
    #[arg(long)]
    level: RaterLevel,
}

#[derive(Args, Debug)]
struct ExpertImportArgs {
    #[arg(long)]
    tsv: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExpertAggregateArgs {
    #[arg(long, required = true, num_args = 1..)]
    journal: Vec<PathBuf>,
    /// Corpora giving each record's institution and system.
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// og, ihg or ohg; all three when omitted.
    #[arg(long)]
    scope: Vec<EvalScope>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum KernelsCommand {
    /// Check rope, rms_norm and swiglu properties on random cases.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        cases: usize,
    },
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Aggregated score table (CSV written by `score` or `run`).
    #[arg(long)]
    scores: PathBuf,
    /// Layouts to render; all when omitted.
    #[arg(long)]
    layout: Vec<Layout>,
    /// Formats to render; csv and markdown when omitted.
    #[arg(long)]
    format: Vec<TableFormat>,
    /// Outcome files for the utility table.
    #[arg(long, num_args = 1..)]
    outcomes: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the split seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallel: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    outputs: Option<PathBuf>,
    /// Override the backend list.
    #[arg(long = "backend-id")]
    backend_ids: Vec<String>,
}

/// Failure classified by exit code.
enum Failure {
    Validation(anyhow::Error),
    Stage(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Stage(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Stage(e) => e,
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

trait Classify<T> {
    /// Bad input or configuration (exit 1).
    fn invalid(self, context: impl Display) -> Outcome<T>;
    /// Failure while a stage runs (exit 2).
    fn failed(self, context: impl Display) -> Outcome<T>;
}

impl<T, E: Display> Classify<T> for Result<T, E> {
    fn invalid(self, context: impl Display) -> Outcome<T> {
        self.map_err(|e| Failure::Validation(anyhow!("{context}: {e}")))
    }

    fn failed(self, context: impl Display) -> Outcome<T> {
        self.map_err(|e| Failure::Stage(anyhow!("{context}: {e}")))
    }
}

fn require_file(p: &Path, what: &str) -> Outcome {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Validation(anyhow!("{what} {} does not exist", p.display())))
    }
}

/// Provenance for a single-verb invocation; the hash covers the parsed arguments.
fn prov(stage: &str, args: &impl std::fmt::Debug, seed: Option<u64>) -> Provenance {
    let hash = sha256_hex(format!("{args:?}").as_bytes());
    Provenance::new(stage, &hash[..16], seed)
}

fn write_failed(p: &Path) -> String {
    format!("cannot write {}", p.display())
}

fn load_corpus(p: &Path) -> Outcome<Corpus> {
    require_file(p, "corpus")?;
    read_corpus_jsonl(p).invalid(p.display())
}

fn load_corpora(paths: &[PathBuf]) -> Outcome<Corpus> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(load_corpus(p)?.records);
    }
    let c = Corpus::new(records, "merged");
    c.ensure_unique_ids().invalid("corpora")?;
    Ok(c)
}

fn load_template_set(p: Option<&Path>) -> Outcome<Vec<PromptTemplate>> {
    match p {
        Some(p) => {
            require_file(p, "templates")?;
            load_templates(p).invalid(p.display())
        }
        None => Ok(default_templates()),
    }
}

fn load_generation(p: Option<&Path>) -> Outcome<GenerationConfig> {
    match p {
        Some(p) => {
            require_file(p, "generation config")?;
            GenerationConfig::load(p).invalid(p.display())
        }
        None => Ok(GenerationConfig::default()),
    }
}

fn cmd_ingest(a: &IngestArgs) -> Outcome {
    require_file(&a.input, "input")?;
    let out = corpus::ingest(&a.input, a.format).failed("ingest")?;
    let p = prov("ingest", a, None);
    write_corpus_jsonl(&a.out, &out.corpus, Some(&p)).failed(write_failed(&a.out))?;
    let rejects = a.rejects.clone().unwrap_or_else(|| a.out.with_extension("rejects.jsonl"));
    provenance::write_jsonl(&rejects, Some(&p), &out.rejects).failed(write_failed(&rejects))?;
    let stats = corpus_stats(&out.corpus);
    println!("{}", serde_json::to_string_pretty(&stats).expect("json"));
    log::info!("{} records, {} rejected", out.corpus.len(), out.rejects.len());
    Ok(())
}

fn cmd_clean(a: &CleanArgs) -> Outcome {
    let input = load_corpus(&a.input)?;
    require_file(&a.lexicon, "lexicon")?;
    let lexicon = WordSet::load(&a.lexicon).invalid(a.lexicon.display())?;
    if !(0.0..=1.0).contains(&a.title_threshold) {
        return Err(Failure::Validation(anyhow!("title threshold must lie in [0, 1]")));
    }
    let opts = CleanOptions {
        title: TitleRule {
            threshold: a.title_threshold,
            min_support: a.title_min_support,
        },
        regex: a.regex,
    };
    let out = corpus::clean(&input, &lexicon, opts).failed("clean")?;
    let p = prov("clean", a, None);
    write_corpus_jsonl(&a.out, &out.corpus, Some(&p)).failed(write_failed(&a.out))?;
    let rejects = a.rejects.clone().unwrap_or_else(|| a.out.with_extension("rejects.jsonl"));
    provenance::write_jsonl(&rejects, Some(&p), &out.rejects).failed(write_failed(&rejects))?;
    println!("{}", serde_json::to_string_pretty(&corpus_stats(&out.corpus)).expect("json"));
    log::info!("{} -> {} records in {} passes", input.len(), out.corpus.len(), out.passes);
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Outcome {
    let input = load_corpus(&a.input)?;
    if !(a.ratio > 0.0 && a.ratio < 1.0) {
        return Err(Failure::Validation(anyhow!("ratio must lie strictly between 0 and 1")));
    }
    let (in_house, external) = partition(&input).failed("split")?;
    let (train, eval) = split_train_eval(&in_house, a.ratio, a.seed).failed("split")?;
    let p = prov("split", a, Some(a.seed));
    for (name, c) in [("train", &train), ("eval", &eval), ("external", &external)] {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        write_corpus_jsonl(&path, c, Some(&p)).failed(write_failed(&path))?;
    }
    println!("train {} eval {} external {}", train.len(), eval.len(), external.len());
    Ok(())
}

fn cmd_prompts(a: &PromptsArgs) -> Outcome {
    let templates = load_template_set(a.templates.as_deref())?;
    let input = load_corpora(&a.corpus)?;
    let chosen: Vec<&PromptTemplate> = match a.template {
        Some(id) => vec![templates
            .iter()
            .find(|t| t.template_id == id)
            .ok_or_else(|| Failure::Validation(anyhow!("template {id} is not defined")))?],
        None => templates.iter().collect(),
    };
    let mut prompts = Vec::new();
    for t in chosen {
        let (mut batch, rejects) = synthesize_batch(t, &input, a.with_labels);
        for r in rejects {
            log::warn!("template {}: {:?} skipped: {}", t.template_id, r.record_id, r.reason);
        }
        prompts.append(&mut batch);
    }
    provenance::write_jsonl(&a.out, Some(&prov("prompts", a, None)), &prompts).failed(write_failed(&a.out))?;
    println!("{} prompts", prompts.len());
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Outcome {
    require_file(&a.backend, "backend config")?;
    let configs = load_backend_configs(&a.backend).invalid(a.backend.display())?;
    let selected: Vec<_> = if a.backend_ids.is_empty() {
        configs
    } else {
        a.backend_ids
            .iter()
            .map(|id| {
                configs
                    .iter()
                    .find(|c| &c.backend_id == id)
                    .cloned()
                    .ok_or_else(|| Failure::Validation(anyhow!("backend {id:?} is not configured")))
            })
            .collect::<Outcome<_>>()?
    };
    let backends = selected
        .iter()
        .map(|c| c.build().invalid(&c.backend_id))
        .collect::<Outcome<Vec<_>>>()?;
    require_file(&a.prompts, "prompts")?;
    let prompts = read_prompts(&a.prompts).invalid(a.prompts.display())?;
    let cfg = load_generation(a.config.as_deref())?;
    cfg.validate().invalid("generation config")?;
    if a.parallel == 0 {
        return Err(Failure::Validation(anyhow!("parallel must be at least 1")));
    }
    let mut outcomes: Vec<GenerationOutcome> = Vec::new();
    for b in &backends {
        let batch = infer_batch(b.as_ref(), &prompts, &cfg, a.parallel);
        let failed = batch.iter().filter(|o| !o.is_success()).count();
        println!("{}: {} outcomes, {failed} failed", b.id(), batch.len());
        outcomes.extend(batch);
    }
    write_outcomes(&a.out, &outcomes, Some(&prov("infer", a, None))).failed(write_failed(&a.out))?;
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Outcome {
    let mut outcomes = Vec::new();
    for p in &a.outcomes {
        require_file(p, "outcomes")?;
        outcomes.extend(read_outcomes(p).invalid(p.display())?);
    }
    let refs = load_corpora(&a.refs)?;
    let scores = score_pairs(&outcomes, &refs).invalid("score")?;
    let table = aggregate_scores(&scores, a.group_by, a.averaging).failed("aggregate")?;
    let p = prov("score", a, None);
    table.write(&a.out, a.json.as_deref(), Some(&p)).failed(write_failed(&a.out))?;
    if let Some(r) = &a.records {
        write_record_scores(r, &scores, Some(&p)).failed(write_failed(r))?;
    }
    println!("{} records scored, {} rows", scores.len(), table.rows.len());
    Ok(())
}

fn cmd_select(a: &SelectArgs) -> Outcome {
    let templates = load_template_set(a.templates.as_deref())?;
    let train = load_corpus(&a.train)?;
    let eval = load_corpus(&a.eval)?;
    let pipeline = match &a.pipeline {
        Some(p) => Some(PipelineConfig::load(p).map_err(|e| Failure::Validation(e.into()))?),
        None => None,
    };
    let generation = match (&a.config, &pipeline) {
        (None, Some(p)) => p.generation.clone(),
        _ => load_generation(a.config.as_deref())?,
    };
    let training = pipeline.map(|p| p.training).unwrap_or_default();
    training.validate().invalid("training config")?;
    let trainer = trainer_from_handle(&a.trainer, &a.work_dir).invalid("trainer")?;
    std::fs::create_dir_all(&a.work_dir).failed(write_failed(&a.work_dir))?;
    let jobs = JobOptions::default();
    let sweep = small_epoch_sweep(&SweepInputs {
        templates: &templates,
        train: &train,
        eval: &eval,
        trainer: trainer.as_ref(),
        training: &training,
        generation: &generation,
        jobs: &jobs,
        work_dir: &a.work_dir,
        parallel: a.parallel.max(1),
    })
    .failed("select")?;
    let result = find_best_prompt(&sweep.scores, a.key).failed("select")?;
    let doc = serde_json::json!({
        "_provenance": prov("select", a, None),
        "selection": result,
        "excluded": sweep.excluded,
        "adapters": sweep.adapters,
    });
    let path = a.work_dir.join("selection.json");
    provenance::write_text(&path, &format!("{}\n", serde_json::to_string_pretty(&doc).expect("json")))
        .failed(write_failed(&path))?;
    if let Some(plan) = &a.plan {
        if let Some(spec) = full_training_plan(&result, &sweep, &training, &jobs).failed("select")? {
            spec.write(plan).failed(write_failed(plan))?;
        }
    }
    println!("best template {} (margin {:?})", result.best_index, result.margin);
    Ok(())
}

fn cmd_expert(c: &ExpertCommand) -> Outcome {
    match c {
        ExpertCommand::Score(a) => {
            require_file(&a.items, "items")?;
            let text = std::fs::read_to_string(&a.items).invalid(a.items.display())?;
            let items: Vec<ScoringItem> =
                provenance::parse_jsonl(&text).map_err(|(l, r)| Failure::Validation(anyhow!("items line {l}: {r}")))?;
            let stdin = io::stdin();
            let mut input = stdin.lock();
            let mut out = BufWriter::new(io::stdout());
            let outcome = score_session(&items, &a.rater, a.level, &a.session, &mut input, &mut out).failed("expert")?;
            out.flush().failed("terminal")?;
            eprintln!(
                "{} card(s) added; {} total; {}",
                outcome.added,
                outcome.cards.len(),
                if outcome.complete { "complete" } else { "incomplete" }
            );
            Ok(())
        }
        ExpertCommand::Import(a) => {
            require_file(&a.tsv, "tsv")?;
            let text = std::fs::read_to_string(&a.tsv).invalid(a.tsv.display())?;
            let cards = import_tsv(&text).invalid(a.tsv.display())?;
            if a.out.exists() {
                return Err(Failure::Validation(anyhow!("{} already exists", a.out.display())));
            }
            provenance::write_jsonl(&a.out, Some(&prov("expert", a, None)), &cards).failed(write_failed(&a.out))?;
            println!("{} cards imported", cards.len());
            Ok(())
        }
        ExpertCommand::Aggregate(a) => {
            let mut cards = Vec::new();
            for j in &a.journal {
                require_file(j, "journal")?;
                cards.extend(read_journal(j).invalid(j.display())?);
            }
            let refs = load_corpora(&a.corpus)?;
            let means = average_raters(&cards).invalid("expert")?;
            let scopes = if a.scope.is_empty() { EvalScope::ALL.to_vec() } else { a.scope.clone() };
            let mut rows = Vec::new();
            for s in scopes {
                rows.extend(scope_aggregate(&means, s, &refs).failed("expert")?);
            }
            write_radar_csv(&a.out, &rows, Some(&prov("expert", a, None))).failed(write_failed(&a.out))?;
            println!("{} aggregate rows", rows.len());
            Ok(())
        }
    }
}

fn cmd_kernels(c: &KernelsCommand) -> Outcome {
    match c {
        KernelsCommand::Selftest { seed, cases } => {
            let checks = selftest(*seed, *cases);
            for c in &checks {
                println!(
                    "{:<4} {:<22} cases={:<5} worst={:.3e} tol={:.0e}",
                    if c.passed { "ok" } else { "FAIL" },
                    c.name,
                    c.cases,
                    c.worst,
                    c.tolerance
                );
            }
            match checks.iter().filter(|c| !c.passed).count() {
                0 => Ok(()),
                n => Err(Failure::Stage(anyhow!("{n} kernel check(s) failed"))),
            }
        }
    }
}

fn cmd_report(a: &ReportArgs) -> Outcome {
    require_file(&a.scores, "scores")?;
    let text = std::fs::read_to_string(&a.scores).invalid(a.scores.display())?;
    let table = ScoreTable::from_csv(&text).invalid(a.scores.display())?;
    let layouts = if a.layout.is_empty() { Layout::ALL.to_vec() } else { a.layout.clone() };
    let formats = if a.format.is_empty() {
        vec![TableFormat::Csv, TableFormat::Markdown]
    } else {
        a.format.clone()
    };
    let p = prov("report", a, None);
    let mut written = 0;
    for layout in &layouts {
        for format in &formats {
            let path = a.out_dir.join(format!("{}.{}", layout.as_str(), format.extension()));
            match write_report_table(&path, &table, *layout, *format, Some(&p)) {
                Ok(()) => written += 1,
                Err(ReportError::EmptyTable(l)) => log::warn!("no data for the {l} layout; table skipped"),
                Err(e) => return Err(Failure::Stage(anyhow!("report: {e}"))),
            }
        }
    }
    if written == 0 {
        return Err(Failure::Stage(anyhow!("report: score table is empty")));
    }
    if !a.outcomes.is_empty() {
        let mut outcomes = Vec::new();
        for o in &a.outcomes {
            require_file(o, "outcomes")?;
            outcomes.extend(read_outcomes(o).invalid(o.display())?);
        }
        let records = utility_metrics(&outcomes, &Default::default()).failed("report")?;
        for format in &formats {
            let path = a.out_dir.join(format!("utility.{}", format.extension()));
            write_utility_table(&path, &records, *format, Some(&p)).failed("report")?;
        }
    }
    println!("{written} table(s) written to {}", a.out_dir.display());
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Outcome {
    require_file(&a.config, "config")?;
    let mut cfg = PipelineConfig::load(&a.config).map_err(|e| Failure::Validation(e.into()))?;
    if let Some(s) = a.seed {
        cfg.seeds.split = s;
    }
    if let Some(p) = a.parallel {
        cfg.parallel = p;
    }
    if let Some(o) = &a.outputs {
        cfg.paths.outputs = o.clone();
    }
    if !a.backend_ids.is_empty() {
        cfg.backends = a.backend_ids.clone();
    }
    let manifest = run_pipeline(&cfg).map_err(|e| match e {
        PipelineError::Validation(_) => Failure::Validation(e.into()),
        PipelineError::Stage { .. } => Failure::Stage(e.into()),
    })?;
    let artifacts: usize = manifest.stages.iter().map(|s| s.artifacts.len()).sum();
    println!(
        "{} stages, {artifacts} artifacts; manifest {}",
        manifest.stages.len(),
        cfg.output_dir().join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors; here 2 means a stage failure.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Clean(a) => cmd_clean(a),
        Command::Split(a) => cmd_split(a),
        Command::Prompts(a) => cmd_prompts(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Score(a) => cmd_score(a),
        Command::Select(a) => cmd_select(a),
        Command::Expert(c) => cmd_expert(c),
        Command::Kernels(c) => cmd_kernels(c),
        Command::Report(a) => cmd_report(a),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
