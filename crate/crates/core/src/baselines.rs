//! Comparison systems built on the same tools: caption-every-frame (JCEF),
//! question-only, and single-stage program execution.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::pipeline::{caption_entries, map_to_candidate, predict_from_lines, ContextBlock, Prediction};
use crate::program::{parse, parse_file, CallTrace, Interpreter, Mode, ParseError, Program, RuntimeError, Value};
use crate::prompt::{planner_prompt, prediction_prompt, SINGLE_STAGE};
use crate::tools::{ToolError, ToolSession};
use crate::types::{uniform_sample, FrameWindow, QAItem, ToolCallRecord, VideoMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JcefConfig {
    pub fps_caption: f64,
    /// Share of the frames at `fps_caption` that get captioned; 0 means no
    /// visual input at all.
    pub frame_fraction: f64,
}

impl Default for JcefConfig {
    fn default() -> Self {
        Self { fps_caption: 1.0, frame_fraction: 1.0 }
    }
}

impl JcefConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fps_caption.is_finite() && self.fps_caption > 0.0) {
            return Err("fps_caption must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.frame_fraction) {
            return Err(format!("frame_fraction {} must lie in [0, 1]", self.frame_fraction));
        }
        Ok(())
    }
}

/// Frames captioned by JCEF: `round(fraction * count)` frames sampled
/// uniformly, where `count` is the number of frames at `fps_caption`
/// (clamped to `[1, frame_count]`). Frame ids stay in the video's own
/// frame numbering.
pub fn jcef_frames(video: &VideoMeta, cfg: &JcefConfig) -> FrameWindow {
    let fc = video.frame_count;
    let at_fps = ((fc as f64 * cfg.fps_caption / video.fps).round() as usize).clamp(1, fc.max(1));
    let n = (cfg.frame_fraction * at_fps as f64).round() as usize;
    if n == 0 {
        return FrameWindow::empty();
    }
    uniform_sample(fc, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub answer: String,
    pub mc_index: Option<usize>,
    pub prompt: String,
    pub tool_calls: Vec<ToolCallRecord>,
}

impl BaselineOutcome {
    fn from_prediction(p: Prediction, tools: &mut ToolSession<'_>) -> Self {
        Self { answer: p.answer, mc_index: p.mc_index, prompt: p.prompt, tool_calls: tools.take_calls() }
    }
}

/// Captions the sampled frames and predicts from captions alone.
pub fn run_jcef(
    video: &VideoMeta,
    qa: &QAItem,
    cfg: &JcefConfig,
    tools: &mut ToolSession<'_>,
) -> Result<BaselineOutcome, ToolError> {
    let context = ContextBlock::new(caption_entries(&jcef_frames(video, cfg), tools)?);
    let p = predict_from_lines(&qa.question, qa.candidates.as_deref(), &context.lines(), tools)?;
    Ok(BaselineOutcome::from_prediction(p, tools))
}

/// Predicts from the question (and candidates) only.
pub fn run_llm_only(qa: &QAItem, tools: &mut ToolSession<'_>) -> Result<BaselineOutcome, ToolError> {
    let p = predict_from_lines(&qa.question, qa.candidates.as_deref(), &[], tools)?;
    Ok(BaselineOutcome::from_prediction(p, tools))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleStageOutcome {
    pub answer: String,
    pub mc_index: Option<usize>,
    pub program: String,
    pub value: Value,
    pub trace: Vec<CallTrace>,
    pub tool_calls: Vec<ToolCallRecord>,
    /// Every frame id a call touched, in order of first use.
    pub frames_touched: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SingleStageError {
    #[error("planner failed: {0}")]
    Planner(ToolError),
    #[error("parse error: {0}")]
    Parse(ParseError),
    #[error("program must be in extended mode")]
    WrongMode,
    #[error("runtime error: {0}")]
    Runtime(RuntimeError),
}

/// A structured single-stage failure with whatever the program did first.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleStageFailure {
    pub error: SingleStageError,
    pub program: String,
    pub trace: Vec<CallTrace>,
    pub tool_calls: Vec<ToolCallRecord>,
    /// The tool error behind a failed call, if any.
    pub tool_error: Option<ToolError>,
}

impl SingleStageFailure {
    pub fn label(&self) -> String {
        match &self.error {
            SingleStageError::Planner(_) => "planner_error".into(),
            SingleStageError::Parse(_) | SingleStageError::WrongMode => "parse_error".into(),
            SingleStageError::Runtime(e) => format!("runtime_{}", e.kind()),
        }
    }
}

pub const SINGLE_STAGE_CALLABLES: [&str; 6] = ["localize", "verify_action", "caption", "vqa", "score", "llm_query"];

fn frame_arg(v: &Value, video: &VideoMeta) -> Result<usize, String> {
    match v {
        Value::Int(i) if *i >= 0 && (*i as usize) < video.frame_count => Ok(*i as usize),
        other => Err(format!("invalid frame `{}`", other.to_text())),
    }
}

fn text(v: &Value) -> String {
    match v {
        Value::Str(s) => s.clone(),
        other => other.to_text(),
    }
}

fn arity(name: &str, args: &[Value], lo: usize, hi: usize) -> Result<(), String> {
    if (lo..=hi).contains(&args.len()) {
        Ok(())
    } else {
        Err(format!("`{name}` takes {lo}..={hi} arguments, got {}", args.len()))
    }
}

struct Callables<'a, 's> {
    video: &'a VideoMeta,
    qa: &'a QAItem,
    tools: &'a mut ToolSession<'s>,
    touched: Vec<usize>,
    tool_error: Option<ToolError>,
}

impl Callables<'_, '_> {
    fn touch(&mut self, f: usize) {
        if !self.touched.contains(&f) {
            self.touched.push(f);
        }
    }

    fn tool<T>(&mut self, r: Result<T, ToolError>) -> Result<T, String> {
        r.map_err(|e| {
            let msg = e.to_string();
            self.tool_error = Some(e);
            msg
        })
    }

    fn call(&mut self, name: &str, args: &[Value]) -> Result<Value, String> {
        match name {
            "localize" => {
                arity(name, args, 1, 2)?;
                let frames: Vec<usize> = match args.get(1) {
                    None => (0..self.video.frame_count).collect(),
                    Some(Value::List(items)) => items.iter().map(|v| frame_arg(v, self.video)).collect::<Result<_, _>>()?,
                    Some(v) => vec![frame_arg(v, self.video)?],
                };
                let hits = self.tools.localize(&text(&args[0]), &frames, SINGLE_STAGE);
                let hits = self.tool(hits)?;
                let ids: BTreeSet<usize> = hits.iter().map(|h| h.frame_id).collect();
                ids.iter().for_each(|&f| self.touch(f));
                Ok(Value::List(ids.into_iter().map(|f| Value::Int(f as i64)).collect()))
            }
            "verify_action" => {
                arity(name, args, 2, 2)?;
                let f = frame_arg(&args[0], self.video)?;
                self.touch(f);
                let r = self.tools.verify_action(f, &text(&args[1]));
                Ok(Value::Bool(self.tool(r)?))
            }
            "caption" => {
                arity(name, args, 1, 1)?;
                let f = frame_arg(&args[0], self.video)?;
                self.touch(f);
                let r = self.tools.caption(f);
                Ok(Value::Str(self.tool(r)?))
            }
            "vqa" => {
                arity(name, args, 2, 2)?;
                let f = frame_arg(&args[0], self.video)?;
                self.touch(f);
                let r = self.tools.vqa(f, &text(&args[1]), false);
                Ok(Value::Str(self.tool(r)?))
            }
            "score" => {
                arity(name, args, 2, 2)?;
                let f = frame_arg(&args[0], self.video)?;
                self.touch(f);
                let r = self.tools.score(f, &text(&args[1]));
                Ok(Value::Float(self.tool(r)?))
            }
            "llm_query" => {
                arity(name, args, 1, 2)?;
                let info: Vec<String> = match args.get(1) {
                    None | Some(Value::Null) => vec![],
                    Some(Value::List(items)) => items.iter().map(text).collect(),
                    Some(v) => text(v).lines().map(str::to_owned).collect(),
                };
                let prompt = prediction_prompt(&text(&args[0]), self.qa.candidates.as_deref(), &info);
                let r = self.tools.complete(&prompt);
                Ok(Value::Str(self.tool(r)?))
            }
            other => Err(format!("unknown function `{other}`")),
        }
    }
}

/// Variables visible to single-stage programs.
pub fn single_stage_env(video: &VideoMeta, qa: &QAItem) -> BTreeMap<String, Value> {
    let candidates = match &qa.candidates {
        Some(c) => Value::List(c.iter().map(|s| Value::Str(s.clone())).collect()),
        None => Value::Null,
    };
    BTreeMap::from([
        ("question".to_owned(), Value::Str(qa.question.clone())),
        ("candidates".to_owned(), candidates),
        ("frames".to_owned(), Value::List((0..video.frame_count).map(|f| Value::Int(f as i64)).collect())),
        ("frame_count".to_owned(), Value::Int(video.frame_count as i64)),
    ])
}

fn load_program(source: Option<&str>, qa: &QAItem, tools: &mut ToolSession<'_>) -> Result<(String, Program), (String, SingleStageError)> {
    match source {
        Some(text) => {
            let (mode, program) = parse_file(text).map_err(|e| (text.to_owned(), SingleStageError::Parse(e)))?;
            if mode != Mode::Extended {
                return Err((text.to_owned(), SingleStageError::WrongMode));
            }
            Ok((text.to_owned(), program))
        }
        None => {
            // the planner sees the question only, never the video
            let prompt = planner_prompt(SINGLE_STAGE, &qa.question, None);
            let text = tools.complete(&prompt).map_err(|e| (String::new(), SingleStageError::Planner(e)))?;
            let program = parse(&text, Mode::Extended).map_err(|e| (text.clone(), SingleStageError::Parse(e)))?;
            Ok((text, program))
        }
    }
}

/// Runs one extended-mode program for the question: the given `.mvp`
/// source, or else whatever the backend's single-stage planner emits.
pub fn run_single_stage(
    video: &VideoMeta,
    qa: &QAItem,
    source: Option<&str>,
    tools: &mut ToolSession<'_>,
) -> Result<SingleStageOutcome, SingleStageFailure> {
    let (program_text, program) = match load_program(source, qa, tools) {
        Ok(p) => p,
        Err((program, error)) => {
            let tool_error = match &error {
                SingleStageError::Planner(e) => Some(e.clone()),
                _ => None,
            };
            return Err(SingleStageFailure { error, program, trace: vec![], tool_calls: tools.take_calls(), tool_error });
        }
    };
    let mut callables = Callables { video, qa, tools, touched: Vec::new(), tool_error: None };
    let mut interp =
        Interpreter::new(|name: &str, args: &[Value]| callables.call(name, args)).with_env(single_stage_env(video, qa));
    let result = interp.run(&program);
    let trace = interp.into_trace();
    let Callables { tools, touched, tool_error, .. } = callables;
    match result {
        Ok(value) => {
            let raw = text(&value);
            let (answer, mc_index) = match qa.candidates.as_deref() {
                Some(c) if !c.is_empty() => {
                    let i = map_to_candidate(&raw, c);
                    (c[i].clone(), Some(i))
                }
                _ => (raw, None),
            };
            Ok(SingleStageOutcome {
                answer,
                mc_index,
                program: program_text,
                value,
                trace,
                tool_calls: tools.take_calls(),
                frames_touched: touched,
            })
        }
        Err(e) => Err(SingleStageFailure {
            error: SingleStageError::Runtime(e),
            program: program_text,
            trace,
            tool_calls: tools.take_calls(),
            tool_error,
        }),
    }
}
