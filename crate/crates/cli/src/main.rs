//! `karma`: ingest post dumps, generate pair plans, serve the game,
//! simulate players and run the analysis.
//!
//! Exit status: 0 on success, 1 on invalid input or usage, 2 on I/O failure.

mod serve;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use karma_core::analysis::{analyze, emit_report, parse_subscribers, AnalysisInputs};
use karma_core::corpus::{self, Corpus, ViewTable, MIN_SUBREDDIT_POSTS};
use karma_core::game::{read_judgments, read_questionnaires, write_jsonl, JUDGMENT_LOG, QUESTIONNAIRE_LOG};
use karma_core::pairing::{generate_plan, PairPlan, PlanConfig, TypeMix, DEFAULT_PER_SUBREDDIT};
use karma_core::simulate::{simulate_players, PlayerModel};

#[derive(Parser, Debug)]
#[command(name = "karma", version, about = "Pairwise preference game and analysis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a corpus from a post dump and optional view counts.
    Ingest(IngestArgs),
    /// Sample the fixed pair plan from a corpus.
    Pairgen(PairgenArgs),
    /// Serve the game over HTTP.
    Serve(serve::ServeArgs),
    /// Play synthetic sessions and write the judgment logs.
    Simulate(SimulateArgs),
    /// Compute groundtruth and every report table.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Line-delimited post records.
    #[arg(long)]
    posts: PathBuf,
    /// `image_id,views` table.
    #[arg(long)]
    views: Option<PathBuf>,
    #[arg(long, default_value_t = MIN_SUBREDDIT_POSTS)]
    min_posts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PairgenArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PER_SUBREDDIT)]
    per_subreddit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON object of pair type → fraction, e.g. {"VH-VH": 0.5, ...}.
    #[arg(long)]
    mix: Option<PathBuf>,
    /// Restrict to these subreddits (comma separated).
    #[arg(long, value_delimiter = ',')]
    subreddits: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    sessions: usize,
    /// Player model JSON.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    data_dir: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    judgments: PathBuf,
    #[arg(long)]
    questionnaires: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// `subreddit,subscribers_millions` table.
    #[arg(long)]
    subscribers: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

/// A failure and the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, error: error.into() }
    }

    pub fn io(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: error.into() }
    }

    fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.error = self.error.context(what.to_string());
        self
    }
}

/// Classifies a library error by whether the filesystem or the data failed.
pub fn lib_failure(e: impl Into<karma_core::Error>) -> Failure {
    let e = e.into();
    if e.is_io() {
        Failure::io(e)
    } else {
        Failure::invalid(e)
    }
}

type Outcome = Result<(), Failure>;

pub fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::io(e).context(format!("cannot open {}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::io(e).context(format!("cannot create {}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(e).context(format!("cannot create {}", path.display())))
}

pub fn load_corpus(path: &Path) -> Result<Corpus, Failure> {
    let entries = corpus::read_corpus(open(path)?).map_err(|e| lib_failure(e).context(path.display()))?;
    Corpus::new(entries).map_err(|e| lib_failure(e).context(path.display()))
}

pub fn load_plan(path: &Path) -> Result<PairPlan, Failure> {
    PairPlan::read(open(path)?).map_err(|e| lib_failure(e).context(path.display()))
}

fn ingest(a: IngestArgs) -> Outcome {
    let views = match &a.views {
        Some(p) => corpus::parse_views(open(p)?).map_err(|e| lib_failure(e).context(p.display()))?,
        None => ViewTable::new(),
    };
    let report = corpus::ingest(open(&a.posts)?, &views, a.min_posts).map_err(lib_failure)?;
    for r in &report.rejected {
        eprintln!(
            "warning: subreddit {} has {} posts (< {}); excluded",
            r.subreddit, r.posts, a.min_posts
        );
    }
    let mut out = create(&a.out)?;
    corpus::write_corpus(&report.entries, &mut out).map_err(lib_failure)?;
    out.flush().map_err(Failure::io)?;
    eprintln!(
        "ingested {} entries ({} malformed lines skipped, {} non-image posts, {} reposts dropped)",
        report.entries.len(),
        report.skipped_lines,
        report.non_image,
        report.reposts_dropped
    );
    Ok(())
}

fn pairgen(a: PairgenArgs) -> Outcome {
    let corpus = load_corpus(&a.corpus)?;
    let type_mix = match &a.mix {
        Some(p) => {
            let mix: TypeMix = serde_json::from_reader(open(p)?)
                .map_err(|e| Failure::invalid(e).context(format!("bad mix file {}", p.display())))?;
            mix.validate().map_err(lib_failure)?;
            mix
        }
        None => TypeMix::default(),
    };
    let config = PlanConfig {
        per_subreddit: a.per_subreddit,
        type_mix,
        seed: a.seed,
        subreddits: a.subreddits,
    };
    let plan = generate_plan(&corpus, &config).map_err(lib_failure)?;
    let mut out = create(&a.out)?;
    plan.write(&mut out).map_err(lib_failure)?;
    out.flush().map_err(Failure::io)?;
    eprintln!("wrote {} pairs over {} subreddits", plan.pairs.len(), plan.subreddits().len());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Outcome {
    let plan = load_plan(&a.plan)?;
    let corpus = load_corpus(&a.corpus)?;
    let model: PlayerModel = serde_json::from_reader(open(&a.model)?)
        .map_err(|e| Failure::invalid(e).context(format!("bad model file {}", a.model.display())))?;
    let log = simulate_players(&plan, &corpus, &model, a.sessions, a.seed).map_err(lib_failure)?;
    std::fs::create_dir_all(&a.data_dir).map_err(Failure::io)?;
    let mut j = create(&a.data_dir.join(JUDGMENT_LOG))?;
    write_jsonl(&log.judgments, &mut j).map_err(Failure::io)?;
    j.flush().map_err(Failure::io)?;
    let mut q = create(&a.data_dir.join(QUESTIONNAIRE_LOG))?;
    write_jsonl(&log.questionnaires, &mut q).map_err(Failure::io)?;
    q.flush().map_err(Failure::io)?;
    eprintln!(
        "simulated {} sessions: {} judgments, {} questionnaires",
        a.sessions,
        log.judgments.len(),
        log.questionnaires.len()
    );
    Ok(())
}

fn analyze_cmd(a: AnalyzeArgs) -> Outcome {
    let inputs = AnalysisInputs {
        judgments: read_judgments(open(&a.judgments)?).map_err(|e| lib_failure(e).context(a.judgments.display()))?,
        questionnaires: read_questionnaires(open(&a.questionnaires)?)
            .map_err(|e| lib_failure(e).context(a.questionnaires.display()))?,
        plan: load_plan(&a.plan)?,
        corpus: load_corpus(&a.corpus)?,
        subscribers: parse_subscribers(open(&a.subscribers)?).map_err(|e| lib_failure(e).context(a.subscribers.display()))?,
    };
    let report = analyze(&inputs).map_err(lib_failure)?;
    emit_report(&report, &a.out_dir).map_err(lib_failure)?;
    eprintln!("report for {} judged pairs written to {}", report.pairs_judged, a.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Pairgen(a) => pairgen(a),
        Command::Serve(a) => serve::run(a),
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
