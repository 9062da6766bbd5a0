//! `cci` subcommands. Exit codes: 0 success, 1 usage or config, 2 data, 3
//! backend.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cci_core::corpus::{deduplicate, Split};
use cci_core::detector::{evaluate, train, Detect, DetectorModel, Prediction};
use cci_core::enhance::iterative_enhance;
use cci_core::evalkit::{corpus_scores, metric_tokens, ScoredPair, TextMetric};
use cci_core::fixer::{fix_comment, FixError, FixResult};
use cci_core::semfilter::{select_validated_candidates, semantic_filter, ShotExample, ShotSet, VoteRecord};
use cci_core::synfilter::apply_syntactic_filters;
use cci_core::{ChatBackend, Corpus};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::gateway::{build_backend, LlmEndpoint, SharedBackend, Transcript};
use crate::io::{load_corpus, read_json, read_jsonl, save_corpus, write_csv, write_jsonl, write_report, write_text, IoError};
use crate::manifest::RunManifest;
use crate::solve::{solve, MonotonicClock};

pub const BUNDLED_SHOTS: &str = include_str!("../data/shots.json");

#[derive(Debug, Parser)]
#[command(name = "cci", version, about = "Build CCI corpora, train the detector, fix and evaluate comments")]
pub struct Cli {
    /// TOML pipeline config; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip malformed corpus lines instead of aborting.
    #[arg(long, global = true)]
    pub permissive: bool,
    /// Manifest path; defaults to `<output>.manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct InOut {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collapse duplicate quadruples.
    Dedup {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        report: PathBuf,
    },
    /// Drop positives whose comment change is a typo, case, stopword or lexical edit.
    FilterSyntactic {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        report: PathBuf,
    },
    /// Three-voter semantic filter over positives.
    FilterSemantic {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        votes: PathBuf,
        #[arg(long)]
        shots: Option<PathBuf>,
        /// TOML file with a `[[voters]]` roster.
        #[arg(long)]
        voters: Option<PathBuf>,
    },
    /// Sample unanimous test positives for manual checking.
    SelectValidated {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        votes: PathBuf,
        #[arg(short, long)]
        n: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the detector on the train split (whole file if unsplit).
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Write predictions for every case.
    Detect {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        model: PathBuf,
    },
    /// Grow the training split with teacher-synthesized cases.
    Enhance {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        history: PathBuf,
        /// Deduplicate after the loop.
        #[arg(long)]
        dedup: bool,
    },
    /// Repair comments with the fixer backend.
    Fix {
        #[command(flatten)]
        io: InOut,
        /// Only fix cases flagged in this predictions file.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Detect, then fix flagged cases, with timing.
    Solve {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Send every case to the fixer without detection.
        #[arg(long)]
        monolithic: bool,
    },
    /// Accuracy, precision, recall and F1 on the test split (whole file if unsplit).
    EvalDetect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score fixes against the gold new comments.
    EvalFix {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        fixes: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Comma-separated subset of bleu4, meteor, sari, gleu.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
    },
    /// Score one sentence triple and print JSON.
    Metric {
        name: String,
        #[arg(long)]
        src: Option<String>,
        #[arg(long)]
        cand: String,
        #[arg(long = "ref")]
        reference: String,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Backend(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Backend(m) => m,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        data(e)
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn stem(word: &str) -> String {
    porter_stemmer::stem(word)
}

struct Ctx {
    config: PipelineConfig,
    config_hash: String,
    permissive: bool,
    manifest: Option<PathBuf>,
    transcript: Arc<Transcript>,
}

impl Ctx {
    fn load(&self, path: &Path) -> CliResult<Corpus> {
        Ok(load_corpus(path, self.permissive)?.corpus)
    }

    fn backend(&self, ep: Option<&LlmEndpoint>, role: &str) -> CliResult<SharedBackend> {
        let ep = ep.ok_or_else(|| CliError::Usage(format!("no {role} endpoint configured")))?;
        build_backend(ep, self.transcript.clone()).map_err(|e| CliError::Backend(e.to_string()))
    }

    fn manifest(&self, command: &str, inputs: &[&Path], outputs: &[&Path]) -> CliResult<()> {
        self.manifest_volatile(command, inputs, outputs, &[])
    }

    fn manifest_volatile(&self, command: &str, inputs: &[&Path], outputs: &[&Path], volatile: &[&Path]) -> CliResult<()> {
        let Some(primary) = outputs.first().or(volatile.first()) else { return Ok(()) };
        let path = self.manifest.clone().unwrap_or_else(|| RunManifest::default_path(primary));
        let m = RunManifest::build(command, self.config.seed, &self.config_hash, inputs, outputs, volatile)?;
        let text = serde_json::to_string_pretty(&m).map_err(data)? + "\n";
        Ok(write_text(&path, &text)?)
    }
}

fn load_model(path: &Path) -> CliResult<DetectorModel> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    DetectorModel::from_json(&text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn has_splits(c: &Corpus) -> bool {
    c.cases.iter().any(|k| k.split.is_some())
}

fn part(c: &Corpus, split: Split) -> Corpus {
    if has_splits(c) {
        c.split(split)
    } else {
        c.clone()
    }
}

#[derive(Deserialize)]
struct Roster {
    voters: Vec<LlmEndpoint>,
}

#[derive(Serialize)]
struct SelectReport<'a> {
    requested: usize,
    available: usize,
    selected: usize,
    warning: &'a Option<String>,
}

#[derive(Serialize)]
struct EvalFixReport<'a> {
    n: usize,
    missing: &'a [String],
    rendered: std::collections::BTreeMap<&'static str, String>,
    #[serde(flatten)]
    report: &'a cci_core::evalkit::MetricsReport,
}

fn parse_metrics(names: &[String]) -> CliResult<Vec<TextMetric>> {
    if names.is_empty() {
        return Ok(TextMetric::ALL.to_vec());
    }
    names.iter().map(|n| TextMetric::parse(n.trim()).map_err(|e| CliError::Usage(e.to_string()))).collect()
}

/// Fails with a backend error when every attempted call failed at the transport.
fn all_backend_failures(errors: &[&FixError], attempts: usize) -> Option<CliError> {
    let backend = errors.iter().filter(|e| matches!(e, FixError::Backend(_))).count();
    (attempts > 0 && backend == attempts).then(|| CliError::Backend(format!("all {attempts} fixer calls failed: {}", errors[0])))
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let base = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    let seed = cli.seed.unwrap_or(base.seed);
    let mut config = base.with_seed(seed);
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    // Hashed before path resolution so relocated runs compare equal.
    let config_hash = config.hash();
    if let Some(dir) = cli.config.as_deref().and_then(Path::parent) {
        config.resolve_paths(dir);
    }
    let transcript = match &config.paths.transcript {
        Some(p) => Transcript::append_to(p).map_err(|e| data(format!("{}: {e}", p.display())))?,
        None => Transcript::off(),
    };
    let ctx = Ctx {
        config,
        config_hash,
        permissive: cli.permissive,
        manifest: cli.manifest,
        transcript,
    };
    let cfg = &ctx.config;

    match cli.command {
        Command::Dedup { io, report } => {
            let corpus = ctx.load(&io.input)?;
            let (out, rep) = deduplicate(&corpus).map_err(data)?;
            save_corpus(&io.out, &out)?;
            write_report(&report, &rep)?;
            ctx.manifest("dedup", &[&io.input], &[&io.out, &report])
        }
        Command::FilterSyntactic { io, report } => {
            let corpus = ctx.load(&io.input)?;
            let (out, rep) = apply_syntactic_filters(&corpus);
            save_corpus(&io.out, &out)?;
            write_report(&report, &rep)?;
            ctx.manifest("filter-syntactic", &[&io.input], &[&io.out, &report])
        }
        Command::FilterSemantic { io, votes, shots, voters } => {
            let corpus = ctx.load(&io.input)?;
            let shots_path = shots.or_else(|| cfg.paths.shots.clone());
            let shot_list: Vec<ShotExample> = match &shots_path {
                Some(p) => read_json(p)?,
                None => serde_json::from_str(BUNDLED_SHOTS).map_err(data)?,
            };
            let shot_set = ShotSet::new(shot_list).map_err(|e| CliError::Usage(e.to_string()))?;
            let roster = match &voters {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                    toml::from_str::<Roster>(&text).map_err(|e| CliError::Usage(e.to_string()))?.voters
                }
                None => cfg.voters.clone(),
            };
            if roster.len() != 3 {
                return Err(CliError::Usage(format!("semantic filtering needs 3 voters, found {}", roster.len())));
            }
            let backends = roster.iter().map(|v| ctx.backend(Some(v), "voter")).collect::<CliResult<Vec<_>>>()?;
            let refs: Vec<&dyn ChatBackend> = backends.iter().map(|b| b.as_ref() as &dyn ChatBackend).collect();
            let (out, records) = semantic_filter(&corpus, &refs, &shot_set).map_err(data)?;
            save_corpus(&io.out, &out)?;
            write_jsonl(&votes, &records)?;
            let mut inputs: Vec<&Path> = vec![&io.input];
            inputs.extend(shots_path.as_deref());
            ctx.manifest("filter-semantic", &inputs, &[&io.out, &votes])
        }
        Command::SelectValidated { io, votes, n, report } => {
            let corpus = ctx.load(&io.input)?;
            let (records, _) = read_jsonl::<VoteRecord>(&votes, false)?;
            let n = n.unwrap_or(cfg.validated_n);
            let sel = select_validated_candidates(&records, &corpus, n, cfg.seed);
            if let Some(w) = &sel.warning {
                eprintln!("warning: {w}");
            }
            save_corpus(&io.out, &sel.corpus)?;
            let mut outputs: Vec<&Path> = vec![&io.out];
            if let Some(r) = &report {
                write_report(
                    r,
                    &SelectReport {
                        requested: n,
                        available: sel.available,
                        selected: sel.corpus.len(),
                        warning: &sel.warning,
                    },
                )?;
                outputs.push(r);
            }
            ctx.manifest("select-validated", &[&io.input, &votes], &outputs)
        }
        Command::Train { input, model, history } => {
            let corpus = ctx.load(&input)?;
            let train_set = part(&corpus, Split::Train);
            let valid = has_splits(&corpus).then(|| corpus.split(Split::Valid)).filter(|v| !v.is_empty());
            let init = DetectorModel::initialize(&train_set, &cfg.detector).map_err(data)?;
            let (trained, hist) = train(&init, &train_set, valid.as_ref(), &cfg.detector).map_err(data)?;
            write_text(&model, &trained.to_json())?;
            let mut outputs: Vec<&Path> = vec![&model];
            if let Some(h) = &history {
                write_report(h, &hist)?;
                outputs.push(h);
            }
            ctx.manifest("train", &[&input], &outputs)
        }
        Command::Detect { io, model } => {
            let corpus = ctx.load(&io.input)?;
            let m = load_model(&model)?;
            let preds = corpus.cases.iter().map(|c| m.detect(c)).collect::<Result<Vec<_>, _>>().map_err(data)?;
            write_jsonl(&io.out, &preds)?;
            ctx.manifest("detect", &[&io.input, &model], &[&io.out])
        }
        Command::Enhance { io, history, dedup } => {
            let corpus = ctx.load(&io.input)?;
            let d0 = part(&corpus, Split::Train);
            let teacher = ctx.backend(cfg.teacher.as_ref(), "teacher")?;
            let init = DetectorModel::initialize(&d0, &cfg.detector).map_err(data)?;
            let (mut enhanced, hist) = iterative_enhance(&init, &d0, teacher.as_ref(), &cfg.detector, &cfg.enhance).map_err(data)?;
            if dedup {
                enhanced = deduplicate(&enhanced).map_err(data)?.0;
            }
            let mut cases = enhanced.cases;
            if has_splits(&corpus) {
                cases.extend(corpus.cases.iter().filter(|c| c.split != Some(Split::Train)).cloned());
            }
            save_corpus(&io.out, &Corpus::new(cases).map_err(data)?)?;
            write_report(&history, &hist)?;
            ctx.manifest("enhance", &[&io.input], &[&io.out, &history])
        }
        Command::Fix { io, predictions } => {
            let corpus = ctx.load(&io.input)?;
            let selected: Option<std::collections::BTreeSet<String>> = match &predictions {
                Some(p) => Some(
                    read_jsonl::<Prediction>(p, false)?
                        .0
                        .into_iter()
                        .filter(|p| p.verdict.is_inconsistent())
                        .map(|p| p.case_id)
                        .collect(),
                ),
                None => None,
            };
            let fixer = ctx.backend(cfg.fixer.as_ref(), "fixer")?;
            let clock = MonotonicClock::new();
            let mut results: Vec<FixResult> = Vec::new();
            let mut errors = Vec::new();
            let mut attempts = 0;
            for case in corpus.cases.iter().filter(|c| selected.as_ref().is_none_or(|s| s.contains(&c.id))) {
                attempts += 1;
                match fix_comment(fixer.as_ref(), case, &clock) {
                    Ok(r) => results.push(r),
                    Err(e) => {
                        eprintln!("{}: {e}", case.id);
                        errors.push(e);
                    }
                }
            }
            if let Some(e) = all_backend_failures(&errors.iter().collect::<Vec<_>>(), attempts) {
                return Err(e);
            }
            write_jsonl(&io.out, &results)?;
            let mut inputs: Vec<&Path> = vec![&io.input];
            inputs.extend(predictions.as_deref());
            ctx.manifest_volatile("fix", &inputs, &[], &[&io.out])
        }
        Command::Solve { io, model, report, monolithic } => {
            let corpus = ctx.load(&io.input)?;
            let fixer = ctx.backend(cfg.fixer.as_ref(), "fixer")?;
            let model_path = model.or_else(|| cfg.paths.model.clone());
            let m = match (&model_path, monolithic) {
                (_, true) => None,
                (Some(p), false) => Some(load_model(p)?),
                (None, false) => return Err(CliError::Usage("solve needs --model unless --monolithic".into())),
            };
            let out = solve(&corpus, m.as_ref().map(|m| m as &dyn Detect), fixer.as_ref(), &MonotonicClock::new());
            write_jsonl(&io.out, &out.records)?;
            write_report(&report, &out.report)?;
            if out.report.fixer_calls > 0 && out.report.fix_errors == out.report.fixer_calls {
                eprintln!("warning: every fixer call failed");
            }
            let mut inputs: Vec<&Path> = vec![&io.input];
            inputs.extend(model_path.as_deref().filter(|_| !monolithic));
            ctx.manifest_volatile("solve", &inputs, &[&io.out], &[&report])
        }
        Command::EvalDetect { input, model, report, csv } => {
            let corpus = part(&ctx.load(&input)?, Split::Test);
            let m = load_model(&model)?;
            let eval = evaluate(&m, &corpus).map_err(data)?;
            #[derive(Serialize)]
            struct R<'a> {
                n: usize,
                metrics: &'a cci_core::evalkit::ClassificationMetrics,
                misclassified: &'a [String],
            }
            write_report(
                &report,
                &R {
                    n: corpus.len(),
                    metrics: &eval.metrics,
                    misclassified: &eval.misclassified,
                },
            )?;
            let mut outputs: Vec<&Path> = vec![&report];
            if let Some(c) = &csv {
                let mm = &eval.metrics;
                let row = [mm.accuracy, mm.precision, mm.recall, mm.f1].map(|v| format!("{:.2}", 100.0 * v)).to_vec();
                write_csv(c, &["accuracy", "precision", "recall", "f1"], &[row])?;
                outputs.push(c);
            }
            ctx.manifest("eval-detect", &[&input, &model], &outputs)
        }
        Command::EvalFix { input, fixes, report, csv, metrics } => {
            let metrics = parse_metrics(&metrics)?;
            let corpus = ctx.load(&input)?;
            let (fix_list, _) = read_jsonl::<FixResult>(&fixes, false)?;
            let by_id: std::collections::BTreeMap<&str, &FixResult> = fix_list.iter().map(|f| (f.case_id.as_str(), f)).collect();
            let mut pairs = Vec::new();
            let mut missing = Vec::new();
            for case in &corpus.cases {
                let Some(gold) = case.new_comment.as_deref() else { continue };
                match by_id.get(case.id.as_str()) {
                    Some(f) => pairs.push(ScoredPair::from_text(case.id.clone(), &case.old_comment, &f.predicted_comment, gold).map_err(data)?),
                    None => missing.push(case.id.clone()),
                }
            }
            let scores = corpus_scores(&pairs, &metrics, &stem).map_err(data)?;
            let rendered = metrics.iter().filter_map(|m| scores.rendered(*m).map(|s| (m.name(), s))).collect();
            write_report(
                &report,
                &EvalFixReport {
                    n: pairs.len(),
                    missing: &missing,
                    rendered,
                    report: &scores,
                },
            )?;
            let mut outputs: Vec<&Path> = vec![&report];
            if let Some(c) = &csv {
                let rows: Vec<Vec<String>> = metrics
                    .iter()
                    .map(|m| vec![m.name().to_string(), scores.rendered(*m).unwrap_or_default()])
                    .collect();
                write_csv(c, &["metric", "score"], &rows)?;
                outputs.push(c);
            }
            ctx.manifest("eval-fix", &[&input, &fixes], &outputs)
        }
        Command::Metric { name, src, cand, reference } => {
            let metric = TextMetric::parse(&name).map_err(|e| CliError::Usage(e.to_string()))?;
            let source = src.unwrap_or_default();
            if matches!(metric, TextMetric::Sari | TextMetric::Gleu) && source.is_empty() {
                return Err(CliError::Usage(format!("{name} needs --src")));
            }
            let pair = ScoredPair {
                case_id: String::new(),
                source: metric_tokens(&source),
                candidate: metric_tokens(&cand),
                reference: metric_tokens(&reference),
            };
            let score = metric.score(&pair, &stem).map_err(data)?;
            let line = serde_json::json!({ "metric": metric.name(), "score": score });
            writeln!(stdout, "{line}").map_err(data)
        }
    }
}

/// Parses `argv` (program name first) and runs one subcommand.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                1
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.code()
        }
    }
}
