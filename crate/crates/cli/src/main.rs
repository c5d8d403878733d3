//! `mervin`: batch ingest, one-shot search, evaluation and serving.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 provider error.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mervin_core::corpus::{Corpus, CorpusDims};
use mervin_core::eval::{self, EvalConfig};
use mervin_core::ingest::{self, IngestReport, VideoManifest};
use mervin_core::query::QueryEngine;
use mervin_core::{Error, Providers};
use mervin_service::{ServiceConfig, StartupError};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "mervin", version, about = "Multimodal event retrieval over news-video corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest every manifest in a directory (or a .jsonl file) into a store.
    Ingest {
        manifests: PathBuf,
        #[command(flatten)]
        store: StoreArgs,
        /// Videos ingested in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run one query against a store.
    Search {
        mode: Mode,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        query: String,
        /// Second event, temporal mode only.
        #[arg(long)]
        query2: Option<String>,
        /// Overrides the mode's result budget (frame_k, transcript_k or summary_k).
        #[arg(long)]
        k: Option<usize>,
        /// Keep only transcript hits containing this word.
        #[arg(long)]
        keyword: Option<String>,
        /// One JSON object per result line.
        #[arg(long)]
        json: bool,
    },
    /// Score a submission archive against ground truth.
    Eval {
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        submission: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct StoreArgs {
    #[arg(long, env = "MERVIN_STORE")]
    store: PathBuf,
    /// Service config TOML; its provider, ingest and query sections apply.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Frames,
    Transcripts,
    Summaries,
    Temporal,
}

enum Failure {
    Usage(String),
    Data(String),
    Provider(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ProviderUnavailable(_) => Failure::Provider(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<StartupError> for Failure {
    fn from(e: StartupError) -> Self {
        match e {
            StartupError::Store(inner) => inner.into(),
            StartupError::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Ingest { manifests, store, jobs } => ingest(&manifests, &store, jobs),
        Command::Search {
            mode,
            store,
            query,
            query2,
            k,
            keyword,
            json,
        } => search(mode, &store, &query, query2.as_deref(), k, keyword.as_deref(), json),
        Command::Eval {
            ground_truth,
            submission,
            json,
        } => evaluate(&ground_truth, &submission, json),
        Command::Serve { config } => serve(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (1, m),
                Failure::Data(m) => (2, m),
                Failure::Provider(m) => (3, m),
            };
            eprintln!("mervin: {msg}");
            ExitCode::from(code)
        }
    }
}

fn load_config(store: &StoreArgs) -> Result<ServiceConfig, Failure> {
    let mut config = match &store.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    config.store_path = store.store.clone();
    config.validate()?;
    Ok(config)
}

fn open(config: &ServiceConfig) -> Result<(Corpus, Providers), Failure> {
    let providers = Providers::from_config(&config.providers)?;
    let corpus = Corpus::open(&config.store_path, CorpusDims::from_providers(&providers))?;
    Ok((corpus, providers))
}

fn ingest(path: &Path, store: &StoreArgs, jobs: usize) -> Result<(), Failure> {
    if jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let config = load_config(store)?;
    let manifests = ingest::load_manifests(path)?;
    let (corpus, providers) = open(&config)?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<IngestReport, Error>)>> = Mutex::new(Vec::new());
    let work = |manifests: &[VideoManifest]| loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(m) = manifests.get(i) else { break };
        let r = ingest::ingest_video(m, &config.ingest, &providers, &corpus);
        results.lock().unwrap_or_else(|e| e.into_inner()).push((i, r));
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.min(manifests.len().max(1)) {
            s.spawn(|| work(&manifests));
        }
    });
    let mut results = results.into_inner().unwrap_or_else(|e| e.into_inner());
    results.sort_by_key(|(i, _)| *i);

    let mut failure: Option<Failure> = None;
    let mut out = io::stdout().lock();
    for (i, r) in results {
        let id = &manifests[i].meta.video_id;
        match r {
            Ok(rep) => {
                writeln!(
                    out,
                    "{id}\tshots={}\tkeyframes={}\tintervals={}\tsummary={}",
                    rep.n_shots,
                    rep.n_keyframes,
                    rep.n_intervals,
                    if rep.summary_generated { "yes" } else { "no" }
                )?;
                for w in &rep.warnings {
                    eprintln!("warning: {id}: {w}");
                }
            }
            Err(e) => {
                eprintln!("error: {id}: {e}");
                // A provider outage outranks per-video data problems.
                if !matches!(failure, Some(Failure::Provider(_))) {
                    failure = Some(e.into());
                }
            }
        }
    }
    let snapshot = corpus.save(&config.store_path)?;
    let counts = corpus.counts();
    writeln!(
        out,
        "saved {}: videos={} keyframes={} transcripts={} summaries={}",
        snapshot.display(),
        counts.videos,
        counts.keyframes,
        counts.transcripts,
        counts.summaries
    )?;
    failure.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct Ranked<'a, T: Serialize> {
    rank: usize,
    #[serde(flatten)]
    item: &'a T,
}

fn emit<T: Serialize>(out: &mut impl Write, items: &[T]) -> io::Result<()> {
    for (i, item) in items.iter().enumerate() {
        serde_json::to_writer(&mut *out, &Ranked { rank: i + 1, item })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn search(
    mode: Mode,
    store: &StoreArgs,
    query: &str,
    query2: Option<&str>,
    k: Option<usize>,
    keyword: Option<&str>,
    json: bool,
) -> Result<(), Failure> {
    let config = load_config(store)?;
    let mut qc = config.query.clone();
    if let Some(k) = k {
        match mode {
            Mode::Frames | Mode::Temporal => qc.frame_k = k,
            Mode::Transcripts => qc.transcript_k = k,
            Mode::Summaries => qc.summary_k = k,
        }
    }
    if matches!(mode, Mode::Temporal) != query2.is_some() {
        return Err(Failure::Usage("--query2 is required for temporal search and only allowed there".into()));
    }
    if keyword.is_some() && !matches!(mode, Mode::Transcripts) {
        return Err(Failure::Usage("--keyword applies to transcript search only".into()));
    }
    if !config.store_path.is_dir() {
        return Err(Failure::Data(format!("store {} does not exist", config.store_path.display())));
    }
    let (corpus, providers) = open(&config)?;
    let engine = QueryEngine::new(&corpus, &providers, qc).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut out = io::stdout().lock();
    match mode {
        Mode::Frames => {
            let groups = engine.frame_search(query)?;
            if json {
                return Ok(emit(&mut out, &groups)?);
            }
            writeln!(out, "rank\tvideo_id\tscore\thits\tbest_frame")?;
            for (i, g) in groups.iter().enumerate() {
                let best = &g.hits[0].keyframe;
                writeln!(
                    out,
                    "{}\t{}\t{:.4}\t{}\t{} ({:.2} s)",
                    i + 1,
                    g.video_id,
                    g.group_score,
                    g.hits.len(),
                    best.frame_index,
                    best.timestamp_s
                )?;
            }
        }
        Mode::Transcripts => {
            let hits = engine.transcript_search(query, keyword)?;
            if json {
                return Ok(emit(&mut out, &hits)?);
            }
            writeln!(out, "rank\tvideo_id\tscore\tspan\tkeyframes\ttext")?;
            for (i, h) in hits.iter().enumerate() {
                let t = &h.interval;
                writeln!(
                    out,
                    "{}\t{}\t{:.4}\t{:.2}-{:.2}\t{}\t{}",
                    i + 1,
                    t.video_id,
                    h.score,
                    t.start_s,
                    t.end_s,
                    h.keyframes.len(),
                    t.cleaned_text
                )?;
            }
        }
        Mode::Summaries => {
            let hits = engine.summary_search(query)?;
            if json {
                return Ok(emit(&mut out, &hits)?);
            }
            writeln!(out, "rank\tvideo_id\tscore\tsummary")?;
            for (i, h) in hits.iter().enumerate() {
                writeln!(out, "{}\t{}\t{:.4}\t{}", i + 1, h.video_id, h.score, h.summary_text)?;
            }
        }
        Mode::Temporal => {
            let videos = engine.temporal_search(query, query2.unwrap_or_default())?;
            if json {
                return Ok(emit(&mut out, &videos)?);
            }
            writeln!(out, "rank\tvideo_id\ts_video\ts_pair\tavg_top1\tavg_top2\tt1_s\tt2_s")?;
            for (i, v) in videos.iter().enumerate() {
                writeln!(
                    out,
                    "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.2}\t{:.2}",
                    i + 1,
                    v.video_id,
                    v.s_video,
                    v.s_pair,
                    v.avg_top1,
                    v.avg_top2,
                    v.best_pair.t1_s,
                    v.best_pair.t2_s
                )?;
            }
        }
    }
    Ok(())
}

fn evaluate(ground_truth: &Path, submission: &Path, json: bool) -> Result<(), Failure> {
    let tasks = eval::load_ground_truth(ground_truth)?;
    let archive = eval::read_archive(submission)?;
    let report = eval::evaluate(&tasks, &archive, &EvalConfig::default())?;
    let mut out = io::stdout().lock();
    if json {
        serde_json::to_writer(&mut out, &report).map_err(io::Error::from)?;
        writeln!(out)?;
        return Ok(());
    }
    for q in &report.queries {
        writeln!(out, "{}\t{}\t{:.4}", q.query_id, q.kind.as_str(), q.score)?;
    }
    writeln!(out, "mean\t{:.4}", report.mean)?;
    Ok(())
}

fn serve(path: &Path) -> Result<(), Failure> {
    let config = ServiceConfig::load(path)?;
    mervin_service::run(config)?;
    Ok(())
}
