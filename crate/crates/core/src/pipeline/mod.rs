//! The staged pipeline: event parsing, grounding and reasoning over a shared
//! memory, followed by one prediction call over the assembled context.

mod context;
mod planner;
mod stages;

pub use context::{
    build_context, build_context_over, caption_entries, final_predict, grounded_entries, map_to_candidate,
    predict_from_lines, ContextBlock, ContextEntry, ContextKind, Prediction,
};
pub use planner::{rule_plan, Planner, PlannerKind};
pub use stages::{
    apply_conjunction, apply_trim, apply_trim_mode, execute_event_parsing, execute_grounding, execute_reasoning,
    middle_frame_window, question_only_vqa, run_event_parsing, run_grounding, run_reasoning,
};

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::program::ParseError;
use crate::tools::{ErrorKind, ToolError, ToolRegistry, ToolSession};
use crate::types::{
    uniform_sample, uniform_sample_window, FrameWindow, MemoryState, QAItem, RunConfig, StageName, StageRecord,
    VideoMeta,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StageErrorKind {
    #[error("parse error: {0}")]
    Parse(ParseError),
    #[error("{0}")]
    Tool(ToolError),
    #[error("{0}")]
    Program(String),
}

/// A stage failure tagged with the stage it happened in.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage}: {kind}")]
pub struct PipelineError {
    pub stage: StageName,
    pub kind: StageErrorKind,
}

impl PipelineError {
    pub fn parse(stage: StageName, e: ParseError) -> Self {
        Self { stage, kind: StageErrorKind::Parse(e) }
    }

    pub fn tool(stage: StageName, e: ToolError) -> Self {
        Self { stage, kind: StageErrorKind::Tool(e) }
    }

    pub fn program(stage: StageName, msg: impl Into<String>) -> Self {
        Self { stage, kind: StageErrorKind::Program(msg.into()) }
    }

    /// Short label for failure breakdowns.
    pub fn label(&self) -> &'static str {
        match &self.kind {
            StageErrorKind::Parse(_) => "parse_error",
            StageErrorKind::Tool(_) => "tool_error",
            StageErrorKind::Program(_) => "stage_error",
        }
    }

    /// Errors that mean the backend itself is unusable, not just this item.
    pub fn is_fatal(&self) -> bool {
        matches!(&self.kind, StageErrorKind::Tool(e) if e.kind == ErrorKind::Transport || e.is_replay_miss())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub record: StageRecord,
    pub memory: MemoryState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub answer: String,
    pub mc_index: Option<usize>,
    pub grounded_window: FrameWindow,
    pub grounded_window_s: (f64, f64),
    pub prediction_prompt: String,
    pub memory: MemoryState,
    pub stage_records: Vec<StageRecord>,
    /// Wall-clock milliseconds per executed stage; not serialized so that
    /// traces stay reproducible.
    #[serde(skip)]
    pub stage_ms: BTreeMap<String, f64>,
}

/// A failed run with the stages that completed before the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub error: PipelineError,
    pub stage_records: Vec<StageRecord>,
}

/// Runs the enabled stages, then builds the context and predicts.
///
/// Disabled event parsing leaves the initial memory; disabled grounding
/// uses the middle frame of `frame_ids`; disabled reasoning asks the
/// question itself on the grounded frames. With every stage disabled no
/// grounded question is asked, so the prompt holds captions only.
pub fn run_morevqa(
    video: &VideoMeta,
    qa: &QAItem,
    cfg: &RunConfig,
    planner: &Planner,
    registry: &ToolRegistry,
) -> Result<RunOutcome, RunFailure> {
    let mut tools = ToolSession::new(registry, &video.video_id);
    let mut records = Vec::new();
    match run_inner(video, qa, cfg, planner, &mut tools, &mut records) {
        Ok(outcome) => Ok(outcome),
        Err(error) => Err(RunFailure { error, stage_records: records }),
    }
}

fn run_inner(
    video: &VideoMeta,
    qa: &QAItem,
    cfg: &RunConfig,
    planner: &Planner,
    tools: &mut ToolSession<'_>,
    records: &mut Vec<StageRecord>,
) -> Result<RunOutcome, PipelineError> {
    let mask = cfg.stage_mask;
    let mut stage_ms = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |stage: StageName, stage_ms: &mut BTreeMap<String, f64>| {
        stage_ms.insert(stage.as_str().to_owned(), clock.elapsed().as_secs_f64() * 1000.0);
        clock = Instant::now();
    };
    let mut memory = if mask.event_parsing {
        let r = run_event_parsing(qa, video, planner, cfg, tools)?;
        records.push(r.record);
        lap(StageName::EventParsing, &mut stage_ms);
        r.memory
    } else {
        MemoryState::initial(video, &qa.question)
    };
    if mask.grounding {
        let r = run_grounding(&memory, video, planner, cfg, tools)?;
        records.push(r.record);
        memory = r.memory;
        lap(StageName::Grounding, &mut stage_ms);
    } else {
        memory.grounded_window = Some(middle_frame_window(&memory));
    }
    if mask.reasoning {
        let r = run_reasoning(&memory, video, planner, cfg, tools)?;
        records.push(r.record);
        memory = r.memory;
        lap(StageName::Reasoning, &mut stage_ms);
    } else if mask.any() {
        question_only_vqa(&mut memory, cfg, tools)?;
    }

    let stage = StageName::Prediction;
    let sample = if cfg.context_from_trimmed {
        uniform_sample_window(&memory.frame_ids, cfg.n_context_frames)
    } else {
        uniform_sample(video.frame_count, cfg.n_context_frames)
    };
    let context = build_context_over(&memory, &sample, tools).map_err(|e| PipelineError::tool(stage, e))?;
    let prediction = final_predict(&context, qa, tools).map_err(|e| PipelineError::tool(stage, e))?;
    records.push(StageRecord {
        stage_name: stage,
        planner_prompt: prediction.prompt.clone(),
        emitted_program: prediction.reply.clone(),
        parsed_program: None,
        tool_calls: tools.take_calls(),
        memory_before: memory.clone(),
        memory_after: memory.clone(),
    });
    lap(stage, &mut stage_ms);
    let grounded_window = memory.grounded_window.clone().unwrap_or_else(|| middle_frame_window(&memory));
    let grounded_window_s = grounded_window.to_seconds(video.fps).unwrap_or((0.0, 0.0));
    Ok(RunOutcome {
        answer: prediction.answer,
        mc_index: prediction.mc_index,
        grounded_window,
        grounded_window_s,
        prediction_prompt: prediction.prompt,
        memory,
        stage_records: std::mem::take(records),
        stage_ms,
    })
}
