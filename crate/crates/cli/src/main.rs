mod commands;
mod ctx;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctx::{Ctx, MissingInput, UsageError};

#[derive(Parser, Debug)]
#[command(name = "whymine", version, about = "Mine, annotate, score and evaluate action-reason video corpora")]
struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads for per-clip stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the plan and touch no files.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Log filter, e.g. `info` or `debug`.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus directory and fix the dev/test split.
    Ingest(IngestArgs),
    /// Extract causal candidates from transcripts.
    Mine(MineArgs),
    /// Cluster knowledge-graph reasons, admit crowd reasons, apply the funnel.
    Taxonomy(TaxonomyArgs),
    /// Score clip motion and apply duration bounds.
    FilterVideos(FilterArgs),
    /// Aggregate worker annotations into gold labels and agreement.
    Aggregate(CorpusArg),
    /// Score candidate reasons for every clip.
    Score(ScoreArgs),
    /// Pick the threshold with the best dev macro F1.
    Calibrate(CalibrateArgs),
    /// Evaluate predictions against gold labels.
    Eval(EvalArgs),
    /// Dataset statistics.
    Stats(StatsArgs),
    /// Combine evaluation reports into one table.
    Report(ReportArgs),
    /// Run the deterministic test scorer on a TCP port.
    StubScorer(StubArgs),
}

#[derive(Args, Debug)]
struct CorpusArg {
    #[arg(long, default_value = "corpus")]
    corpus: PathBuf,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, default_value = "corpus")]
    corpus: PathBuf,
    /// Fixed split to validate and adopt instead of drawing one.
    #[arg(long)]
    split_manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MineArgs {
    #[arg(long, default_value = "corpus/transcripts.jsonl")]
    transcripts: PathBuf,
    /// JSON object: lemma → list of inflected forms.
    #[arg(long, default_value = "corpus/lexicon.json")]
    lexicon: PathBuf,
    /// Taxonomy used to fill candidate reasons of proposed clips.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Also write verb → direct-object counts.
    #[arg(long)]
    export_verb_objects: bool,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
}

#[derive(Args, Debug)]
struct TaxonomyArgs {
    /// JSON object: action → list of knowledge-graph reason labels.
    #[arg(long, default_value = "reasons.json")]
    reasons: PathBuf,
    /// JSONL of {"text", "vector"} covering every label.
    #[arg(long, default_value = "vectors.jsonl")]
    vectors: PathBuf,
    /// Reviewed cluster labels (same shape as the proposal file).
    #[arg(long)]
    review: Option<PathBuf>,
    /// Clips used for per-action clip counts.
    #[arg(long, default_value = "mined_clips.jsonl")]
    clips: PathBuf,
    /// Annotations whose free-text reasons are considered for admission.
    #[arg(long)]
    annotations: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long, default_value = "corpus/clips.jsonl")]
    clips: PathBuf,
    /// Directory of `<clip_id>/<index>.pgm` frames.
    #[arg(long, default_value = "frames")]
    frames: PathBuf,
    /// Decoder command; gets the clip id appended and must print PGM frames.
    #[arg(long)]
    frame_command: Option<String>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    method: String,
    #[arg(long, default_value = "corpus")]
    corpus: PathBuf,
    #[arg(long, default_value = "corpus/lexicon.json")]
    lexicon: PathBuf,
    /// transcript, objects, captions or objects+captions.
    #[arg(long, default_value = "transcript")]
    premise: String,
    /// Local vector file for cosine and vicinity scoring.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Scorer address; defaults to WHYMINE_SCORER_ENDPOINT.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "objects.jsonl")]
    objects: PathBuf,
    #[arg(long, default_value = "captions.jsonl")]
    captions: PathBuf,
    /// Directory of `<clip_id>.json` visual features for cloze scoring.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value = "candidates.jsonl")]
    candidates: PathBuf,
    #[arg(long, default_value = "scores.jsonl")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long, default_value = "scores.jsonl")]
    scores: PathBuf,
    #[arg(long, default_value = "gold.jsonl")]
    gold: PathBuf,
    #[arg(long, default_value = "split.json")]
    split: PathBuf,
    #[arg(long, default_value = "calibration.json")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// `most-frequent`, or the name recorded for scored predictions.
    #[arg(long, default_value = "most-frequent")]
    method: String,
    #[arg(long, default_value = "corpus")]
    corpus: PathBuf,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, default_value = "gold.jsonl")]
    gold: PathBuf,
    #[arg(long, default_value = "split.json")]
    split: PathBuf,
    /// Which clips to evaluate: test, dev or all.
    #[arg(long, default_value = "test")]
    on: String,
    /// Split used to count reason frequency for the baseline: test or dev.
    #[arg(long)]
    frequency_split: Option<String>,
    /// Input descriptor for the report table.
    #[arg(long, default_value = "Transcript")]
    input: String,
    /// Prefix for predictions, report.json and report.txt.
    #[arg(long, default_value = "")]
    prefix: String,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long, default_value = "corpus")]
    corpus: PathBuf,
    #[arg(long, default_value = "gold.jsonl")]
    gold: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, num_args = 1.., default_value = "report.json")]
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "report_table.txt")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct StubArgs {
    #[arg(long, default_value = "127.0.0.1:0")]
    bind: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(64) } else { ExitCode::SUCCESS };
        }
    };
    ctx::init_logging(&cli.log_level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            tracing::error!(exit_code = code, error = %format!("{e:#}"), "command failed");
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx::new(
        &cli.workdir,
        cli.config.as_deref(),
        &cli.sets,
        cli.jobs,
        cli.dry_run,
        std::env::args().skip(1).collect(),
    )?;
    match cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, &a.corpus, a.split_manifest.as_deref()),
        Command::Mine(a) => commands::mine(&ctx, &a),
        Command::Taxonomy(a) => commands::taxonomy(&ctx, &a),
        Command::FilterVideos(a) => commands::filter_videos(&ctx, &a),
        Command::Aggregate(a) => commands::aggregate(&ctx, &a.corpus),
        Command::Score(a) => commands::score(&ctx, &a),
        Command::Calibrate(a) => commands::calibrate(&ctx, &a),
        Command::Eval(a) => commands::eval(&ctx, &a),
        Command::Stats(a) => commands::stats(&ctx, &a),
        Command::Report(a) => commands::report(&ctx, &a),
        Command::StubScorer(a) => commands::stub_scorer(&a.bind),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use whymine_core::Error as E;
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 64;
        }
        if cause.downcast_ref::<MissingInput>().is_some() {
            return 66;
        }
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 66,
                E::Transport(_) | E::Protocol(_) | E::Server(_) => 2,
                _ => 1,
            };
        }
    }
    1
}
