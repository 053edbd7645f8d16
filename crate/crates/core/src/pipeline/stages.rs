//! Stage executors. Each `execute_*` runs one flat program against memory
//! and the tools; the `run_*` wrappers add planning, tracing and the
//! stage fallbacks.

use std::collections::{BTreeMap, BTreeSet};

use super::planner::Planner;
use super::{PipelineError, StageResult};
use crate::program::{parse, Expr, Mode, Program, Stmt, Value};
use crate::tools::ToolSession;
use crate::types::{
    FrameWindow, MemoryState, QAItem, RunConfig, StageName, StageRecord, TemporalConjunction,
    TemporalRegion, TrimMode, VideoMeta, MAX_EVENTS,
};

/// Keeps a contiguous 40% slice of the window at the named region:
/// `m = max(1, ceil(0.4 * |w|))` frames. `whole` is the identity.
pub fn apply_trim(window: &FrameWindow, region: TemporalRegion) -> FrameWindow {
    apply_trim_mode(window, region, TrimMode::Keep)
}

/// Like [`apply_trim`], but `Remove` drops 40% and keeps the remaining
/// `|w| - ceil(0.4 * |w|)` frames (at least one) at the region.
pub fn apply_trim_mode(window: &FrameWindow, region: TemporalRegion, mode: TrimMode) -> FrameWindow {
    let n = window.len();
    if n == 0 || region == TemporalRegion::Whole {
        return window.clone();
    }
    let slice = (2 * n).div_ceil(5);
    let m = match mode {
        TrimMode::Keep => slice,
        TrimMode::Remove => n - slice,
    }
    .max(1);
    let start = match region {
        TemporalRegion::Beginning => 0,
        TemporalRegion::End => n - m,
        TemporalRegion::Middle => (n / 2).saturating_sub(m / 2).min(n - m),
        TemporalRegion::Whole => unreachable!("handled above"),
    };
    FrameWindow::from_unsorted(window.ids()[start..start + m].to_vec())
}

/// Frames of `universe` related to `anchor` by the conjunction. An empty
/// result falls back to the anchor.
pub fn apply_conjunction(anchor: &FrameWindow, conj: TemporalConjunction, universe: &FrameWindow) -> FrameWindow {
    let out = match (conj, anchor.first(), anchor.last()) {
        (TemporalConjunction::After, _, Some(hi)) => universe.filter(|f| f > hi),
        (TemporalConjunction::Before, Some(lo), _) => universe.filter(|f| f < lo),
        (TemporalConjunction::While, _, _) => anchor.clone(),
        (TemporalConjunction::None, _, _) => universe.clone(),
        _ => FrameWindow::empty(),
    };
    if out.is_empty() {
        anchor.clone()
    } else {
        out
    }
}

fn program_err(stage: StageName, msg: impl Into<String>) -> PipelineError {
    PipelineError::program(stage, msg)
}

fn eval_arg(stage: StageName, expr: &Expr, env: &BTreeMap<String, Value>) -> Result<Value, PipelineError> {
    Ok(match expr {
        Expr::Str(s) => Value::Str(s.clone()),
        Expr::Int(i) => Value::Int(*i),
        Expr::Float(f) => Value::Float(*f),
        Expr::Bool(b) => Value::Bool(*b),
        Expr::Var(v) => env.get(v).cloned().ok_or_else(|| program_err(stage, format!("unbound variable `{v}`")))?,
        Expr::List(items) => Value::List(items.iter().map(|e| eval_arg(stage, e, env)).collect::<Result<_, _>>()?),
        Expr::Call { name, .. } => return Err(program_err(stage, format!("nested call `{name}` in a stage program"))),
        Expr::Compare { .. } => return Err(program_err(stage, "comparison in a stage program")),
    })
}

/// Walks a flat program, binding assignments and handing each call with
/// evaluated arguments to `on_call`.
fn walk(
    stage: StageName,
    program: &Program,
    mut on_call: impl FnMut(&str, Vec<Value>) -> Result<(), PipelineError>,
) -> Result<(), PipelineError> {
    let mut env = BTreeMap::new();
    for stmt in &program.statements {
        match stmt {
            Stmt::Call { name, args } => {
                let args = args.iter().map(|a| eval_arg(stage, a, &env)).collect::<Result<Vec<_>, _>>()?;
                on_call(name, args)?;
            }
            Stmt::Assign { var, value } => {
                let v = eval_arg(stage, value, &env)?;
                env.insert(var.clone(), v);
            }
            _ => return Err(program_err(stage, "control flow is not allowed in stage programs")),
        }
    }
    Ok(())
}

fn text_arg(stage: StageName, name: &str, args: &[Value]) -> Result<String, PipelineError> {
    match args {
        [Value::Str(s)] => Ok(s.clone()),
        _ => Err(program_err(stage, format!("`{name}` takes one string argument"))),
    }
}

fn no_args(stage: StageName, name: &str, args: &[Value]) -> Result<(), PipelineError> {
    if args.is_empty() {
        Ok(())
    } else {
        Err(program_err(stage, format!("`{name}` takes no arguments")))
    }
}

fn parse_variant<T: std::str::FromStr>(stage: StageName, text: &str) -> Result<T, PipelineError>
where
    T::Err: std::fmt::Display,
{
    text.parse().map_err(|e: T::Err| program_err(stage, e.to_string()))
}

/// Event parsing: `trim`, `classify`, `parse_event`, `set_conjunction`,
/// `require_ocr`, `revise_question`, `noop`.
pub fn execute_event_parsing(
    program: &Program,
    memory: &mut MemoryState,
    trim_mode: TrimMode,
) -> Result<(), PipelineError> {
    let stage = StageName::EventParsing;
    walk(stage, program, |name, args| {
        match name {
            "trim" => {
                let region: TemporalRegion = parse_variant(stage, &text_arg(stage, name, &args)?)?;
                memory.frame_ids = apply_trim_mode(&memory.frame_ids, region, trim_mode);
            }
            "classify" => memory.qa_type = parse_variant(stage, &text_arg(stage, name, &args)?)?,
            "parse_event" => {
                let event = text_arg(stage, name, &args)?;
                if memory.event_queue.len() >= MAX_EVENTS {
                    return Err(program_err(stage, format!("event queue overflow: more than {MAX_EVENTS} events")));
                }
                memory.event_queue.push(event);
            }
            "set_conjunction" => memory.conjunction = parse_variant(stage, &text_arg(stage, name, &args)?)?,
            "require_ocr" => match args.as_slice() {
                [Value::Bool(b)] => memory.require_ocr = *b,
                _ => return Err(program_err(stage, "`require_ocr` takes one boolean argument")),
            },
            "revise_question" => memory.question = text_arg(stage, name, &args)?,
            "noop" => no_args(stage, name, &args)?,
            other => return Err(program_err(stage, format!("unknown call `{other}`"))),
        }
        Ok(())
    })
}

/// Grounding: `localize`, `verify_action`, `anchor_then_shift`, `noop`.
///
/// Each event keeps a candidate set that starts at `frame_ids`. `localize`
/// narrows it to frames where the event's object is detected and the
/// event text scores at least the threshold; `verify_action` narrows it to
/// frames where the action verifies. A call that finds nothing leaves the
/// set as it was. An event is grounded once some call narrowed it.
///
/// The grounded window is set only if something grounded; the caller
/// applies the middle-frame fallback.
pub fn execute_grounding(
    program: &Program,
    memory: &mut MemoryState,
    cfg: &RunConfig,
    tools: &mut ToolSession<'_>,
) -> Result<(), PipelineError> {
    let stage = StageName::Grounding;
    let universe = memory.frame_ids.clone();
    let mut grounded: Vec<Option<FrameWindow>> = vec![None; memory.event_queue.len()];
    let mut shifted: Option<FrameWindow> = None;
    let event_index = |memory: &MemoryState, text: &str| {
        memory
            .event_queue
            .iter()
            .position(|e| e == text)
            .ok_or_else(|| program_err(stage, format!("`{text}` is not a parsed event")))
    };
    walk(stage, program, |name, args| {
        match name {
            "localize" => {
                let event = text_arg(stage, name, &args)?;
                let i = event_index(memory, &event)?;
                let base = grounded[i].clone().unwrap_or_else(|| universe.clone());
                let hits = tools.localize(&event, base.ids(), stage.as_str()).map_err(|e| PipelineError::tool(stage, e))?;
                let hit_frames: BTreeSet<usize> = hits.iter().map(|h| h.frame_id).filter(|f| base.contains(*f)).collect();
                let mut kept = Vec::new();
                for f in hit_frames {
                    let s = tools.score(f, &event).map_err(|e| PipelineError::tool(stage, e))?;
                    if cfg.score_threshold.passes(s) {
                        kept.push(f);
                    }
                }
                if !kept.is_empty() {
                    grounded[i] = Some(FrameWindow::from_unsorted(kept));
                }
            }
            "verify_action" => {
                let event = text_arg(stage, name, &args)?;
                let i = event_index(memory, &event)?;
                let base = grounded[i].clone().unwrap_or_else(|| universe.clone());
                let mut kept = Vec::new();
                for &f in base.ids() {
                    if tools.verify_action(f, &event).map_err(|e| PipelineError::tool(stage, e))? {
                        kept.push(f);
                    }
                }
                if !kept.is_empty() {
                    grounded[i] = Some(FrameWindow::from_unsorted(kept));
                }
            }
            "anchor_then_shift" => {
                no_args(stage, name, &args)?;
                if grounded.len() != 2 {
                    return Err(program_err(stage, "`anchor_then_shift` needs two parsed events"));
                }
                let region = grounded[1].as_ref().map(|a| apply_conjunction(a, memory.conjunction, &universe));
                shifted = match (&grounded[0], region) {
                    (Some(target), Some(region)) => {
                        let both = target.intersect(&region);
                        Some(if both.is_empty() { region } else { both })
                    }
                    (Some(target), None) => Some(target.clone()),
                    (None, region) => region,
                };
            }
            "noop" => no_args(stage, name, &args)?,
            other => return Err(program_err(stage, format!("unknown call `{other}`"))),
        }
        Ok(())
    })?;
    let window = shifted.or_else(|| grounded.into_iter().flatten().next());
    if window.is_some() {
        memory.grounded_window = window;
    }
    Ok(())
}

/// Frames that reasoning asks about.
fn reasoning_frames(memory: &MemoryState, cfg: &RunConfig) -> FrameWindow {
    let grounded = memory.grounded_window.clone().unwrap_or_else(|| {
        memory.frame_ids.middle_frame().map(FrameWindow::single).unwrap_or_else(FrameWindow::empty)
    });
    if cfg.grounding_to_reasoning {
        grounded
    } else {
        crate::types::uniform_sample_window(&memory.frame_ids, grounded.len())
    }
}

fn subquestion_count(memory: &MemoryState) -> usize {
    (0..).take_while(|i| memory.extra.contains_key(&sq_key(*i))).count()
}

pub(super) fn sq_key(i: usize) -> String {
    format!("sq_{i}")
}

pub(super) fn sq_frame_key(i: usize, frame: usize) -> String {
    format!("sq_{i}_frame_{frame}")
}

fn register_subquestion(memory: &mut MemoryState, text: &str) -> usize {
    let n = subquestion_count(memory);
    match (0..n).find(|i| memory.extra.get(&sq_key(*i)).is_some_and(|q| q == text)) {
        Some(i) => i,
        None => {
            memory.extra.insert(sq_key(n), text.to_owned());
            n
        }
    }
}

/// Asks `question` on every reasoning frame and stores the answers under
/// `sq_<i>_frame_<f>`.
fn ask_on_grounded(
    memory: &mut MemoryState,
    cfg: &RunConfig,
    tools: &mut ToolSession<'_>,
    question: &str,
) -> Result<(), PipelineError> {
    let stage = StageName::Reasoning;
    let i = register_subquestion(memory, question);
    for &f in reasoning_frames(memory, cfg).ids() {
        let answer = tools.vqa(f, question, memory.require_ocr).map_err(|e| PipelineError::tool(stage, e))?;
        memory.extra.insert(sq_frame_key(i, f), answer);
    }
    Ok(())
}

/// Reasoning: `subquestion(text)` registers a sub-question,
/// `vqa_on_grounded(text)` asks it on each grounded frame, `noop()`.
pub fn execute_reasoning(
    program: &Program,
    memory: &mut MemoryState,
    cfg: &RunConfig,
    tools: &mut ToolSession<'_>,
) -> Result<(), PipelineError> {
    let stage = StageName::Reasoning;
    walk(stage, program, |name, args| {
        match name {
            "subquestion" => {
                let q = text_arg(stage, name, &args)?;
                register_subquestion(memory, &q);
            }
            "vqa_on_grounded" => {
                let q = text_arg(stage, name, &args)?;
                ask_on_grounded(memory, cfg, tools, &q)?;
            }
            "noop" => no_args(stage, name, &args)?,
            other => return Err(program_err(stage, format!("unknown call `{other}`"))),
        }
        Ok(())
    })
}

/// Plans, parses and executes one stage, recording everything.
fn run_stage(
    stage: StageName,
    memory: &MemoryState,
    planner: &Planner,
    tools: &mut ToolSession<'_>,
    exec: impl FnOnce(&Program, &mut MemoryState, &mut ToolSession<'_>) -> Result<(), PipelineError>,
) -> Result<StageResult, PipelineError> {
    let memory_before = memory.clone();
    let (planner_prompt, emitted_program) =
        planner.plan(stage, memory, tools).map_err(|e| PipelineError::tool(stage, e))?;
    let parsed = parse(&emitted_program, Mode::Flat).map_err(|e| PipelineError::parse(stage, e))?;
    let mut memory = memory.clone();
    exec(&parsed, &mut memory, tools)?;
    let record = StageRecord {
        stage_name: stage,
        planner_prompt,
        emitted_program,
        parsed_program: Some(parsed),
        tool_calls: tools.take_calls(),
        memory_before,
        memory_after: memory.clone(),
    };
    Ok(StageResult { record, memory })
}

/// First stage. Memory starts from the full window and the raw question.
pub fn run_event_parsing(
    qa: &QAItem,
    video: &VideoMeta,
    planner: &Planner,
    cfg: &RunConfig,
    tools: &mut ToolSession<'_>,
) -> Result<StageResult, PipelineError> {
    let memory = MemoryState::initial(video, &qa.question);
    run_stage(StageName::EventParsing, &memory, planner, tools, |p, m, _| {
        execute_event_parsing(p, m, cfg.trim_mode)
    })
}

/// Grounded window when nothing grounds: the middle frame of `frame_ids`.
pub fn middle_frame_window(memory: &MemoryState) -> FrameWindow {
    memory.frame_ids.middle_frame().map(FrameWindow::single).unwrap_or_else(FrameWindow::empty)
}

/// Second stage. Falls back to the middle frame when no event grounds.
pub fn run_grounding(
    memory: &MemoryState,
    _video: &VideoMeta,
    planner: &Planner,
    cfg: &RunConfig,
    tools: &mut ToolSession<'_>,
) -> Result<StageResult, PipelineError> {
    let mut result = run_stage(StageName::Grounding, memory, planner, tools, |p, m, t| {
        execute_grounding(p, m, cfg, t)
    })?;
    if result.memory.grounded_window.is_none() {
        result.memory.grounded_window = Some(middle_frame_window(&result.memory));
        result.record.memory_after = result.memory.clone();
    }
    Ok(result)
}

/// Third stage. When the program asks nothing, the (revised) question itself
/// is asked on the grounded frames.
pub fn run_reasoning(
    memory: &MemoryState,
    _video: &VideoMeta,
    planner: &Planner,
    cfg: &RunConfig,
    tools: &mut ToolSession<'_>,
) -> Result<StageResult, PipelineError> {
    let mut result = run_stage(StageName::Reasoning, memory, planner, tools, |p, m, t| {
        execute_reasoning(p, m, cfg, t)
    })?;
    if subquestion_count(&result.memory) == 0 {
        question_only_vqa(&mut result.memory, cfg, tools)?;
        result.record.tool_calls.extend(tools.take_calls());
        result.record.memory_after = result.memory.clone();
    }
    Ok(result)
}

/// Asks the memory's question on the grounded frames.
pub fn question_only_vqa(memory: &mut MemoryState, cfg: &RunConfig, tools: &mut ToolSession<'_>) -> Result<(), PipelineError> {
    let q = memory.question.clone();
    ask_on_grounded(memory, cfg, tools, &q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::QAType;

    fn w(ids: impl IntoIterator<Item = usize>) -> FrameWindow {
        FrameWindow::new(ids.into_iter().collect()).unwrap()
    }

    #[test]
    fn trim_examples() {
        assert_eq!(apply_trim(&w(0..20), TemporalRegion::End), w(12..20));
        assert_eq!(apply_trim(&w(0..10), TemporalRegion::Middle), w(3..7));
        assert_eq!(apply_trim(&w(0..10), TemporalRegion::Beginning), w(0..4));
        assert_eq!(apply_trim(&w([4, 9]), TemporalRegion::Whole), w([4, 9]));
        assert_eq!(apply_trim(&w([7]), TemporalRegion::Middle), w([7]));
        assert_eq!(apply_trim(&w(0..2), TemporalRegion::Middle), w([1]));
        assert_eq!(apply_trim_mode(&w(0..10), TemporalRegion::End, TrimMode::Remove), w(4..10));
    }

    #[test]
    fn conjunction_examples() {
        let u = w(0..30);
        let a = w(10..13);
        assert_eq!(apply_conjunction(&a, TemporalConjunction::After, &u), w(13..30));
        assert_eq!(apply_conjunction(&a, TemporalConjunction::Before, &u), w(0..10));
        assert_eq!(apply_conjunction(&a, TemporalConjunction::While, &u), a);
        assert_eq!(apply_conjunction(&a, TemporalConjunction::None, &u), u);
        assert_eq!(apply_conjunction(&w([29]), TemporalConjunction::After, &u), w([29]));
    }

    #[test]
    fn event_parsing_executes_calls() {
        let v = VideoMeta::new("v", 20, 1.0).unwrap();
        let mut m = MemoryState::initial(&v, "q");
        let p = parse(
            "r = \"end\"\ntrim(r)\nclassify(\"why\")\nparse_event(\"cat\")\nset_conjunction(\"while\")\nrequire_ocr(true)",
            Mode::Flat,
        )
        .unwrap();
        execute_event_parsing(&p, &mut m, TrimMode::Keep).unwrap();
        assert_eq!(m.frame_ids, w(12..20));
        assert_eq!((m.qa_type, m.conjunction, m.require_ocr), (QAType::Why, TemporalConjunction::While, true));
        assert_eq!(m.event_queue, vec!["cat"]);

        let overflow = parse("parse_event(\"a\")\nparse_event(\"b\")", Mode::Flat).unwrap();
        assert!(execute_event_parsing(&overflow, &mut m, TrimMode::Keep).is_err());
        let unknown = parse("teleport(\"x\")", Mode::Flat).unwrap();
        assert!(execute_event_parsing(&unknown, &mut m, TrimMode::Keep).unwrap_err().to_string().contains("unknown call"));
    }

    #[test]
    fn noop_leaves_memory_identical() {
        let v = VideoMeta::new("v", 20, 1.0).unwrap();
        let m = MemoryState::initial(&v, "q");
        let mut after = m.clone();
        execute_event_parsing(&parse("noop()", Mode::Flat).unwrap(), &mut after, TrimMode::Keep).unwrap();
        assert_eq!(after, m);
    }
}
