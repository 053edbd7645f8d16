//! Runs a system over a dataset, scores it and persists the results.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::EvalItem;
use super::metrics::{grounded_metrics, score_mc, score_open_ended, GroundedMetrics, GroundedSample};
use crate::baselines::{run_jcef, run_llm_only, run_single_stage, JcefConfig};
use crate::pipeline::{run_morevqa, Planner};
use crate::program::CallTrace;
use crate::tools::{ErrorKind, ToolError, ToolRegistry, ToolSession};
use crate::types::{FrameWindow, QAItem, RunConfig, StageMask, StageRecord, ToolCallRecord, VideoMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Morevqa,
    Jcef,
    LlmOnly,
    SingleStage,
}

impl System {
    pub const ALL: [System; 4] = [System::Morevqa, System::Jcef, System::LlmOnly, System::SingleStage];

    pub fn as_str(self) -> &'static str {
        match self {
            System::Morevqa => "morevqa",
            System::Jcef => "jcef",
            System::LlmOnly => "llm_only",
            System::SingleStage => "single_stage",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for System {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().replace('-', "_");
        System::ALL
            .into_iter()
            .find(|sys| sys.as_str() == s)
            .ok_or_else(|| format!("unknown system `{s}` (expected morevqa, jcef, llm_only or single_stage)"))
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub run: RunConfig,
    pub jcef: JcefConfig,
    pub planner: Planner,
    pub workers: usize,
    /// Record wall-clock timings in results. Off by default so reruns
    /// produce identical files.
    pub timings: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { run: RunConfig::default(), jcef: JcefConfig::default(), planner: Planner::rule_based(), workers: 1, timings: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub item_id: String,
    pub video_id: String,
    pub system: System,
    pub predicted_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_index: Option<usize>,
    /// In `[0, 1]`; 1 or 0 for multiple choice.
    pub credit: f64,
    /// Full credit.
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_window_s: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_window_s: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qtype_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<BTreeMap<String, f64>>,
}

/// Everything recorded about one item, written as `traces/<item>.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ItemTrace {
    pub item_id: String,
    pub video_id: String,
    pub system: String,
    pub question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qtype_label: Option<String>,
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grounded_window: Option<FrameWindow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grounded_window_s: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub stage_records: Vec<StageRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub program_trace: Vec<CallTrace>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub frames_touched: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCallRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub items: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub count: usize,
    pub rate: f64,
    pub by_kind: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub system: System,
    pub items: usize,
    /// Mean credit over all items; failed items count as 0.
    pub accuracy: f64,
    /// `accuracy` for multiple choice only, `string-match` when open-ended
    /// items (scored by normalized exact match) are present.
    pub metric: String,
    pub per_subset: BTreeMap<String, SubsetSummary>,
    pub failures: FailureSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounded: Option<GroundedMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub results: Vec<EvalResult>,
    pub traces: Vec<ItemTrace>,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("item {item_id}: backend unusable: {error}")]
    Backend { item_id: String, error: ToolError },
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn fatal(e: &ToolError) -> bool {
    e.kind == ErrorKind::Transport || e.is_replay_miss()
}

/// Credit for an answer against the item's ground truth.
pub fn score_item(qa: &QAItem, answer: Option<&str>, mc_index: Option<usize>) -> f64 {
    match (qa.answer_mc, &qa.answer_open) {
        (Some(gt), _) => mc_index.map_or(0.0, |p| score_mc(p, gt)),
        (None, Some(gts)) => answer.map_or(0.0, |a| score_open_ended(a, gts)),
        (None, None) => 0.0,
    }
}

struct Answered {
    answer: Option<String>,
    mc_index: Option<usize>,
    pred_window_s: Option<(f64, f64)>,
    failure: Option<FailureRecord>,
    timing: BTreeMap<String, f64>,
}

fn failure(kind: impl Into<String>, stage: Option<String>, message: impl Into<String>) -> Option<FailureRecord> {
    Some(FailureRecord { kind: kind.into(), stage, message: message.into() })
}

fn touched_window(frames: &[usize], fps: f64) -> Option<(f64, f64)> {
    FrameWindow::from_unsorted(frames.to_vec()).to_seconds(fps)
}

fn run_system(
    item: &EvalItem,
    video: &VideoMeta,
    system: System,
    cfg: &EvalConfig,
    registry: &ToolRegistry,
    trace: &mut ItemTrace,
) -> Result<Answered, EvalError> {
    let backend_err = |error: ToolError| EvalError::Backend { item_id: item.id.clone(), error };
    let mut out = Answered { answer: None, mc_index: None, pred_window_s: None, failure: None, timing: BTreeMap::new() };
    match system {
        System::Morevqa => match run_morevqa(video, &item.qa, &cfg.run, &cfg.planner, registry) {
            Ok(o) => {
                trace.grounded_window = Some(o.grounded_window.clone());
                trace.grounded_window_s = Some(o.grounded_window_s);
                trace.prompt = Some(o.prediction_prompt.clone());
                trace.stage_records = o.stage_records;
                out.answer = Some(o.answer);
                out.mc_index = o.mc_index;
                out.pred_window_s = Some(o.grounded_window_s);
                out.timing = o.stage_ms;
            }
            Err(f) => {
                if f.error.is_fatal() {
                    if let crate::pipeline::StageErrorKind::Tool(e) = f.error.kind {
                        return Err(backend_err(e));
                    }
                }
                trace.stage_records = f.stage_records;
                out.failure = failure(f.error.label(), Some(f.error.stage.as_str().to_owned()), f.error.to_string());
            }
        },
        System::Jcef | System::LlmOnly => {
            let mut tools = ToolSession::new(registry, &video.video_id);
            let r = match system {
                System::Jcef => run_jcef(video, &item.qa, &cfg.jcef, &mut tools),
                _ => run_llm_only(&item.qa, &mut tools),
            };
            match r {
                Ok(o) => {
                    trace.prompt = Some(o.prompt);
                    trace.tool_calls = o.tool_calls;
                    out.answer = Some(o.answer);
                    out.mc_index = o.mc_index;
                }
                Err(e) if fatal(&e) => return Err(backend_err(e)),
                Err(e) => {
                    trace.tool_calls = tools.take_calls();
                    out.failure = failure("tool_error", None, e.to_string());
                }
            }
        }
        System::SingleStage => {
            let source = match &item.program_path {
                Some(p) => match fs::read_to_string(p) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        out.failure = failure("program_missing", None, format!("{}: {e}", p.display()));
                        return Ok(out);
                    }
                },
                None => None,
            };
            let mut tools = ToolSession::new(registry, &video.video_id);
            match run_single_stage(video, &item.qa, source.as_deref(), &mut tools) {
                Ok(o) => {
                    out.pred_window_s = touched_window(&o.frames_touched, video.fps);
                    trace.program = Some(o.program);
                    trace.program_trace = o.trace;
                    trace.frames_touched = o.frames_touched;
                    trace.tool_calls = o.tool_calls;
                    out.answer = Some(o.answer);
                    out.mc_index = o.mc_index;
                }
                Err(f) => {
                    if let Some(e) = f.tool_error.as_ref().filter(|e| fatal(e)) {
                        return Err(backend_err(e.clone()));
                    }
                    out.failure = failure(f.label(), None, f.error.to_string());
                    trace.program = Some(f.program).filter(|p| !p.is_empty());
                    trace.frames_touched = f.trace.iter().flat_map(frames_in_call).collect();
                    trace.program_trace = f.trace;
                    trace.tool_calls = f.tool_calls;
                }
            }
        }
    }
    Ok(out)
}

fn frames_in_call(call: &CallTrace) -> Vec<usize> {
    use crate::program::Value;
    match call.name.as_str() {
        "caption" | "vqa" | "score" | "verify_action" => match call.args.first() {
            Some(Value::Int(f)) if *f >= 0 => vec![*f as usize],
            _ => vec![],
        },
        _ => vec![],
    }
}

/// Evaluates one item. Errors only when the backend is unusable.
pub fn eval_item(
    item: &EvalItem,
    system: System,
    cfg: &EvalConfig,
    registry: &ToolRegistry,
    videos: &BTreeMap<String, VideoMeta>,
) -> Result<(EvalResult, ItemTrace), EvalError> {
    let start = Instant::now();
    let mut trace = ItemTrace {
        item_id: item.id.clone(),
        video_id: item.video_id.clone(),
        system: system.as_str().to_owned(),
        question: item.qa.question.clone(),
        qtype_label: item.qtype_label.clone(),
        ..Default::default()
    };
    let answered = match videos.get(&item.video_id) {
        Some(video) => run_system(item, video, system, cfg, registry, &mut trace)?,
        None => Answered {
            answer: None,
            mc_index: None,
            pred_window_s: None,
            failure: failure("unknown_video", None, format!("no metadata for video `{}`", item.video_id)),
            timing: BTreeMap::new(),
        },
    };
    let credit = if answered.failure.is_some() {
        0.0
    } else {
        score_item(&item.qa, answered.answer.as_deref(), answered.mc_index)
    };
    trace.answer = answered.answer.clone();
    trace.mc_index = answered.mc_index;
    trace.failure = answered.failure.clone();
    let timing_ms = cfg.timings.then(|| {
        let mut t = answered.timing;
        t.insert("total".into(), start.elapsed().as_secs_f64() * 1000.0);
        t
    });
    let result = EvalResult {
        item_id: item.id.clone(),
        video_id: item.video_id.clone(),
        system,
        predicted_answer: answered.answer,
        mc_index: answered.mc_index,
        credit,
        correct: credit >= 1.0,
        pred_window_s: answered.pred_window_s,
        gt_window_s: item.qa.gt_window_s,
        subset: item.subset.clone(),
        qtype_label: item.qtype_label.clone(),
        failure: answered.failure,
        timing_ms,
    };
    Ok((result, trace))
}

pub fn summarize(system: System, items: &[EvalItem], results: &[EvalResult]) -> EvalSummary {
    let n = results.len();
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let credits: Vec<f64> = results.iter().map(|r| r.credit).collect();
    let mut subsets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        if let Some(s) = &r.subset {
            subsets.entry(s.clone()).or_default().push(r.credit);
        }
    }
    let mut by_kind = BTreeMap::new();
    for f in results.iter().filter_map(|r| r.failure.as_ref()) {
        *by_kind.entry(f.kind.clone()).or_insert(0) += 1;
    }
    let count = by_kind.values().sum();
    let samples: Vec<GroundedSample> = results
        .iter()
        .filter_map(|r| Some(GroundedSample { correct: r.correct, pred: r.pred_window_s?, gt: r.gt_window_s? }))
        .collect();
    let open = items.iter().any(|i| i.qa.answer_open.is_some());
    EvalSummary {
        system,
        items: n,
        accuracy: mean(&credits),
        metric: if open { "string-match" } else { "accuracy" }.into(),
        per_subset: subsets.into_iter().map(|(k, v)| (k, SubsetSummary { items: v.len(), accuracy: mean(&v) })).collect(),
        failures: FailureSummary { count, rate: if n == 0 { 0.0 } else { count as f64 / n as f64 }, by_kind },
        grounded: grounded_metrics(&samples),
    }
}

/// Evaluates every item with up to `cfg.workers` threads. Results keep the
/// input order. Per-item failures are recorded; an unusable backend aborts.
pub fn run_eval(
    items: &[EvalItem],
    system: System,
    cfg: &EvalConfig,
    registry: &ToolRegistry,
    videos: &BTreeMap<String, VideoMeta>,
) -> Result<EvalRun, EvalError> {
    cfg.run.validate().map_err(EvalError::Config)?;
    cfg.jcef.validate().map_err(EvalError::Config)?;
    let workers = cfg.workers.clamp(1, items.len().max(1));
    let slots: Mutex<Vec<Option<Result<(EvalResult, ItemTrace), EvalError>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let work = || loop {
        if abort.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(item) = items.get(i) else { break };
        let r = eval_item(item, system, cfg, registry, videos);
        if r.is_err() {
            abort.store(true, Ordering::SeqCst);
        }
        slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
    };
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let mut results = Vec::with_capacity(items.len());
    let mut traces = Vec::with_capacity(items.len());
    for slot in slots.into_inner().unwrap_or_else(|e| e.into_inner()) {
        match slot {
            Some(Ok((r, t))) => {
                results.push(r);
                traces.push(t);
            }
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    let summary = summarize(system, items, &results);
    Ok(EvalRun { results, traces, summary })
}

fn pretty<T: Serialize>(v: &T) -> io::Result<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(io::Error::other)
}

/// Writes `results.jsonl`, `summary.json` and `traces/<item>.json`.
pub fn write_eval(run: &EvalRun, out_dir: &Path) -> io::Result<()> {
    fs::create_dir_all(out_dir.join("traces"))?;
    let mut lines = String::new();
    for r in &run.results {
        lines.push_str(&serde_json::to_string(r).map_err(io::Error::other)?);
        lines.push('\n');
    }
    fs::write(out_dir.join("results.jsonl"), lines)?;
    fs::write(out_dir.join("summary.json"), pretty(&run.summary)?)?;
    for t in &run.traces {
        fs::write(out_dir.join("traces").join(format!("{}.json", t.item_id)), pretty(t)?)?;
    }
    Ok(())
}

/// The stage-mask grid: none, no grounding, no reasoning, all.
pub const ABLATION_MASKS: [StageMask; 4] = [
    StageMask::new(false, false, false),
    StageMask::new(true, false, true),
    StageMask::new(true, true, false),
    StageMask::new(true, true, true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask: StageMask,
    pub accuracy: f64,
    pub items: usize,
    pub failures: usize,
}

pub fn run_ablation(
    items: &[EvalItem],
    cfg: &EvalConfig,
    registry: &ToolRegistry,
    videos: &BTreeMap<String, VideoMeta>,
) -> Result<Vec<AblationRow>, EvalError> {
    ABLATION_MASKS
        .iter()
        .map(|&mask| {
            let mut cfg = cfg.clone();
            cfg.run.stage_mask = mask;
            let run = run_eval(items, System::Morevqa, &cfg, registry, videos)?;
            Ok(AblationRow {
                mask,
                accuracy: run.summary.accuracy,
                items: run.summary.items,
                failures: run.summary.failures.count,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("m1,m2,m3,accuracy\n");
    for r in rows {
        let [a, b, c] = r.mask.bits();
        out.push_str(&format!("{a},{b},{c},{}\n", r.accuracy));
    }
    out
}
