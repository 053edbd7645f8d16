//! `morevqa`: evaluate systems, run single questions, ablate, compute
//! statistics, replay recordings and serve the mock backend.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use morevqa::eval::{
    ablation_csv, load_dataset, load_traces, qtype_stats, run_ablation, run_eval, trace_stat, write_eval, EvalConfig,
    EvalItem, System,
};
use morevqa::pipeline::{run_morevqa, Planner};
use morevqa::prompt::PromptTemplates;
use morevqa::tools::{
    record_session, replay_session, serve, FixtureCorpus, MockBackend, RecordingBackend, RemoteBackend,
    ScoreThreshold, ToolBackend, ToolRegistry,
};
use morevqa::types::{QAItem, StageRecord, VideoMeta};

#[derive(Parser)]
#[command(name = "morevqa", version, about = "Multi-stage video question answering engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one system over a dataset.
    Eval(EvalArgs),
    /// Answer one question and print every stage.
    Run(RunArgs),
    /// Run the stage-mask ablation and write a CSV table.
    Ablate(AblateArgs),
    /// Question-type and conjunction statistics over eval traces.
    Stats(StatsArgs),
    /// Re-run an eval from a recording, optionally checking it against a
    /// previous output directory.
    Replay(ReplayArgs),
    /// Serve the mock backend over the wire protocol.
    ServeMock(ServeArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// `mock:DIR`, `remote:ADDR` or `replay:FILE`.
    #[arg(long)]
    backend: String,
    /// Video metadata for remote and replay backends: a fixture directory
    /// or a JSONL file of video records.
    #[arg(long)]
    videos: Option<PathBuf>,
    /// Append every backend exchange to this file.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Remote request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

#[derive(Args)]
struct SettingsArgs {
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stage mask such as `111` or `1,0,1`.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Record per-stage wall-clock timings in results.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    system: System,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    settings: SettingsArgs,
    #[arg(long)]
    out: PathBuf,
    /// Skip malformed dataset lines instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    video: String,
    #[arg(long)]
    question: String,
    #[arg(long, num_args = 1..)]
    candidates: Vec<String>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    settings: SettingsArgs,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// Directory of per-item trace files.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    recording: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    system: System,
    #[arg(long)]
    videos: PathBuf,
    #[command(flatten)]
    settings: SettingsArgs,
    #[arg(long)]
    out: PathBuf,
    /// Previous output directory whose results and traces must match.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    fixtures: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
}

/// Run outcome that maps onto the process exit code.
enum Status {
    Ok,
    ItemFailures,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(a) => cmd_eval(a),
        Command::Run(a) => cmd_run(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Replay(a) => cmd_replay(a),
        Command::ServeMock(a) => cmd_serve_mock(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ItemFailures) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("expected a boolean, got `{v}`"),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("`{v}`: {e}"))
}

/// Applies one config entry. Unknown keys are errors.
fn apply_setting(cfg: &mut EvalConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "n_context_frames" => cfg.run.n_context_frames = parse_num(value)?,
        "fps_caption" => cfg.run.fps_caption = parse_num(value)?,
        "decode_temperature" => cfg.run.decode_temperature = parse_num(value)?,
        "stage_mask" => cfg.run.stage_mask = parse_num(value)?,
        "seed" => cfg.run.seed = parse_num(value)?,
        "trim_mode" => cfg.run.trim_mode = parse_num(value)?,
        "score_threshold" => cfg.run.score_threshold = ScoreThreshold::new(parse_num(value)?).map_err(|e| anyhow!(e))?,
        "grounding_to_reasoning" => cfg.run.grounding_to_reasoning = parse_bool(value)?,
        "context_from_trimmed" => cfg.run.context_from_trimmed = parse_bool(value)?,
        "jcef_fps_caption" => cfg.jcef.fps_caption = parse_num(value)?,
        "jcef_frame_fraction" => cfg.jcef.frame_fraction = parse_num(value)?,
        "workers" => cfg.workers = parse_num(value)?,
        "planner" => {
            cfg.planner = match value {
                "rule" => Planner::rule_based(),
                "llm" => Planner::llm_backed(morevqa::prompt::DEFAULT_TEMPLATE, PromptTemplates::default()),
                _ => bail!("planner must be `rule` or `llm`, got `{value}`"),
            }
        }
        _ => bail!("unknown setting `{key}`"),
    }
    Ok(())
}

fn load_config(path: &Path, cfg: &mut EvalConfig) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), i + 1))?;
        apply_setting(cfg, k.trim(), v.trim()).with_context(|| format!("{}:{}", path.display(), i + 1))?;
    }
    Ok(())
}

fn eval_config(s: &SettingsArgs) -> Result<EvalConfig> {
    let mut cfg = EvalConfig::default();
    if let Some(path) = &s.config {
        load_config(path, &mut cfg)?;
    }
    if let Some(mask) = &s.mask {
        apply_setting(&mut cfg, "stage_mask", mask)?;
    }
    if let Some(w) = s.workers {
        cfg.workers = w;
    }
    cfg.timings |= s.timings;
    cfg.run.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
    cfg.jcef.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
    Ok(cfg)
}

/// Video metadata from a fixture directory or a JSONL file of records.
fn load_videos(path: &Path) -> Result<BTreeMap<String, VideoMeta>> {
    if path.is_dir() {
        return Ok(FixtureCorpus::load_dir(path).with_context(|| format!("loading fixtures {}", path.display()))?.metas());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading videos {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let meta: VideoMeta =
            serde_json::from_str(line).with_context(|| format!("{}:{}: bad video record", path.display(), i + 1))?;
        meta.validate().map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        out.insert(meta.video_id.clone(), meta);
    }
    Ok(out)
}

struct Backend {
    registry: ToolRegistry,
    videos: BTreeMap<String, VideoMeta>,
    recorder: Option<Arc<RecordingBackend>>,
}

impl Backend {
    fn finish(&self) -> Result<()> {
        if let Some(r) = &self.recorder {
            r.flush().context("flushing recording")?;
        }
        Ok(())
    }
}

fn open_backend(a: &BackendArgs) -> Result<Backend> {
    let (kind, target) = a
        .backend
        .split_once(':')
        .ok_or_else(|| anyhow!("backend must be mock:DIR, remote:ADDR or replay:FILE, got `{}`", a.backend))?;
    let external_videos = || -> Result<BTreeMap<String, VideoMeta>> {
        let path = a.videos.as_ref().ok_or_else(|| anyhow!("--videos is required with a {kind} backend"))?;
        load_videos(path)
    };
    let (backend, videos): (Arc<dyn ToolBackend>, _) = match kind {
        "mock" => {
            let corpus = FixtureCorpus::load_dir(Path::new(target))
                .with_context(|| format!("loading fixtures from {target}"))?;
            let videos = match &a.videos {
                Some(p) => load_videos(p)?,
                None => corpus.metas(),
            };
            (Arc::new(MockBackend::new(corpus)), videos)
        }
        "remote" => {
            let remote = RemoteBackend::new(target, Duration::from_secs(a.timeout));
            remote.ping().with_context(|| format!("connecting to {target}"))?;
            (Arc::new(remote), external_videos()?)
        }
        "replay" => {
            let replay = replay_session(Path::new(target)).with_context(|| format!("loading recording {target}"))?;
            (Arc::new(replay), external_videos()?)
        }
        _ => bail!("unknown backend kind `{kind}`"),
    };
    let (backend, recorder) = match &a.record {
        Some(path) => {
            let rec = Arc::new(record_session(path, backend).with_context(|| format!("creating {}", path.display()))?);
            (rec.clone() as Arc<dyn ToolBackend>, Some(rec))
        }
        None => (backend, None),
    };
    Ok(Backend { registry: ToolRegistry::new(backend), videos, recorder })
}

fn load_items(path: &Path, lenient: bool) -> Result<Vec<EvalItem>> {
    let ds = load_dataset(path, lenient).with_context(|| format!("loading dataset {}", path.display()))?;
    for (line, why) in &ds.skipped {
        eprintln!("warning: {}:{line}: skipped: {why}", path.display());
    }
    Ok(ds.items)
}

fn eval_into(
    items: &[EvalItem],
    system: System,
    cfg: &EvalConfig,
    backend: &Backend,
    out: &Path,
) -> Result<Status> {
    let run = run_eval(items, system, cfg, &backend.registry, &backend.videos)?;
    backend.finish()?;
    write_eval(&run, out).with_context(|| format!("writing {}", out.display()))?;
    let s = &run.summary;
    println!(
        "{}: {} items, {} {:.4}, {} failures",
        s.system, s.items, s.metric, s.accuracy, s.failures.count
    );
    Ok(if s.failures.count > 0 { Status::ItemFailures } else { Status::Ok })
}

fn cmd_eval(a: EvalArgs) -> Result<Status> {
    let cfg = eval_config(&a.settings)?;
    let items = load_items(&a.dataset, a.lenient)?;
    let backend = open_backend(&a.backend)?;
    eval_into(&items, a.system, &cfg, &backend, &a.out)
}

fn render_stage(r: &StageRecord, out: &mut String) {
    use std::fmt::Write as _;
    let _ = writeln!(out, "== {} ==", r.stage_name.as_str());
    if !r.emitted_program.trim().is_empty() {
        out.push_str("program:\n");
        for line in r.emitted_program.lines() {
            let _ = writeln!(out, "  {line}");
        }
    }
    if !r.tool_calls.is_empty() {
        out.push_str("calls:\n");
        for c in &r.tool_calls {
            let _ = writeln!(out, "  {}({}) -> {}", c.method, c.args, c.result);
        }
    }
    let m = &r.memory_after;
    let _ = writeln!(
        out,
        "memory: frames {}..{} ({}), type {}, conjunction {}, events {:?}",
        m.frame_ids.first().map_or("-".into(), |f| f.to_string()),
        m.frame_ids.last().map_or("-".into(), |f| f.to_string()),
        m.frame_ids.len(),
        m.qa_type.as_str(),
        m.conjunction.as_str(),
        m.event_queue,
    );
    if let Some(g) = &m.grounded_window {
        let _ = writeln!(out, "grounded: {:?}", g.ids());
    }
}

fn cmd_run(a: RunArgs) -> Result<Status> {
    let cfg = eval_config(&a.settings)?;
    let backend = open_backend(&a.backend)?;
    let video = backend.videos.get(&a.video).ok_or_else(|| anyhow!("unknown video `{}`", a.video))?;
    let qa = QAItem {
        question: a.question.clone(),
        candidates: (!a.candidates.is_empty()).then(|| a.candidates.clone()),
        answer_mc: None,
        answer_open: None,
        gt_window_s: None,
    };
    let outcome = run_morevqa(video, &qa, &cfg.run, &cfg.planner, &backend.registry);
    backend.finish()?;
    let mut text = String::new();
    let records = match &outcome {
        Ok(o) => &o.stage_records,
        Err(f) => &f.stage_records,
    };
    for r in records {
        render_stage(r, &mut text);
    }
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(text.as_bytes())?;
    match outcome {
        Ok(o) => {
            match o.mc_index {
                Some(i) if qa.candidates.is_some() => writeln!(stdout, "answer: {i}: {}", o.answer)?,
                _ => writeln!(stdout, "answer: {}", o.answer)?,
            }
            Ok(Status::Ok)
        }
        Err(f) => {
            if f.error.is_fatal() {
                bail!("{}", f.error);
            }
            writeln!(stdout, "failed: {}", f.error)?;
            Ok(Status::ItemFailures)
        }
    }
}

fn cmd_ablate(a: AblateArgs) -> Result<Status> {
    let cfg = eval_config(&a.settings)?;
    let items = load_items(&a.dataset, a.lenient)?;
    let backend = open_backend(&a.backend)?;
    let rows = run_ablation(&items, &cfg, &backend.registry, &backend.videos)?;
    backend.finish()?;
    let csv = ablation_csv(&rows);
    match &a.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(if rows.iter().any(|r| r.failures > 0) { Status::ItemFailures } else { Status::Ok })
}

fn cmd_stats(a: StatsArgs) -> Result<Status> {
    let traces = load_traces(&a.traces).with_context(|| format!("reading traces {}", a.traces.display()))?;
    let stats: Vec<_> = traces.iter().filter_map(trace_stat).collect();
    if stats.is_empty() {
        bail!("no trace in {} has an event-parsing stage", a.traces.display());
    }
    let text = serde_json::to_string_pretty(&qtype_stats(&stats))? + "\n";
    match &a.out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(Status::Ok)
}

/// Relative paths of every file under `dir`, sorted.
fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(dir)?.to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_replay(a: ReplayArgs) -> Result<Status> {
    let cfg = eval_config(&a.settings)?;
    let items = load_items(&a.dataset, a.lenient)?;
    let backend = open_backend(&BackendArgs {
        backend: format!("replay:{}", a.recording.display()),
        videos: Some(a.videos.clone()),
        record: None,
        timeout: 0,
    })?;
    let status = eval_into(&items, a.system, &cfg, &backend, &a.out)?;
    let Some(prev) = &a.compare else { return Ok(status) };
    let (ours, theirs) = (files_under(&a.out)?, files_under(prev)?);
    if ours != theirs {
        bail!("output files differ from {}", prev.display());
    }
    for f in &ours {
        if fs::read(a.out.join(f))? != fs::read(prev.join(f))? {
            bail!("{} differs from {}", f.display(), prev.display());
        }
    }
    println!("identical to {}", prev.display());
    Ok(status)
}

fn cmd_serve_mock(a: ServeArgs) -> Result<Status> {
    let corpus =
        FixtureCorpus::load_dir(&a.fixtures).with_context(|| format!("loading fixtures {}", a.fixtures.display()))?;
    let listener = TcpListener::bind(&a.listen).with_context(|| format!("binding {}", a.listen))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    serve(listener, Arc::new(MockBackend::new(corpus)), Arc::new(AtomicBool::new(false)))?;
    Ok(Status::Ok)
}
