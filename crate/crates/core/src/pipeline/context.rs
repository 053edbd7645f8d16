//! Prediction context: general captions plus grounded answers, and the
//! final answer call.

use serde::{Deserialize, Serialize};

use super::stages::{sq_frame_key, sq_key};
use crate::prompt::prediction_prompt;
use crate::text::{normalize, token_set};
use crate::tools::{ToolError, ToolSession};
use crate::types::{uniform_sample, FrameWindow, MemoryState, QAItem, VideoMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Caption,
    GroundedVqa,
}

impl ContextKind {
    pub fn label(self) -> &'static str {
        match self {
            ContextKind::Caption => "caption",
            ContextKind::GroundedVqa => "qa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub frame_id: usize,
    pub kind: ContextKind,
    pub text: String,
}

impl ContextEntry {
    pub fn line(&self) -> String {
        format!("[frame {}] {}: {}", self.frame_id, self.kind.label(), self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextBlock {
    pub entries: Vec<ContextEntry>,
}

impl ContextBlock {
    /// Sorts by frame; on one frame the caption comes first, then answers in
    /// sub-question order.
    pub fn new(entries: Vec<ContextEntry>) -> Self {
        let mut entries = entries;
        entries.sort_by_key(|e| (e.frame_id, e.kind));
        Self { entries }
    }

    pub fn lines(&self) -> Vec<String> {
        self.entries.iter().map(ContextEntry::line).collect()
    }

    pub fn rendered(&self) -> String {
        self.lines().iter().map(|l| format!("{l}\n")).collect()
    }
}

/// Captions for each sampled frame, in order.
pub fn caption_entries(frames: &FrameWindow, tools: &mut ToolSession<'_>) -> Result<Vec<ContextEntry>, ToolError> {
    frames
        .ids()
        .iter()
        .map(|&f| Ok(ContextEntry { frame_id: f, kind: ContextKind::Caption, text: tools.caption(f)? }))
        .collect()
}

/// Answers stored by reasoning as `<sub-question> -> <answer>` entries,
/// ordered by sub-question index then frame.
pub fn grounded_entries(memory: &MemoryState) -> Vec<ContextEntry> {
    let mut out = Vec::new();
    for i in 0.. {
        let Some(q) = memory.extra.get(&sq_key(i)) else { break };
        let prefix = format!("{}_frame_", sq_key(i));
        let mut frames: Vec<usize> =
            memory.extra.keys().filter_map(|k| k.strip_prefix(&prefix)?.parse().ok()).collect();
        frames.sort_unstable();
        for f in frames {
            let answer = &memory.extra[&sq_frame_key(i, f)];
            out.push(ContextEntry { frame_id: f, kind: ContextKind::GroundedVqa, text: format!("{q} -> {answer}") });
        }
    }
    out
}

/// `n` uniformly sampled captions over the whole video merged with the
/// grounded answers in memory.
pub fn build_context(
    memory: &MemoryState,
    video: &VideoMeta,
    tools: &mut ToolSession<'_>,
    n: usize,
) -> Result<ContextBlock, ToolError> {
    build_context_over(memory, &uniform_sample(video.frame_count, n), tools)
}

/// As [`build_context`] with an explicit caption sample.
pub fn build_context_over(
    memory: &MemoryState,
    sample: &FrameWindow,
    tools: &mut ToolSession<'_>,
) -> Result<ContextBlock, ToolError> {
    let mut entries = caption_entries(sample, tools)?;
    entries.extend(grounded_entries(memory));
    Ok(ContextBlock::new(entries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: String,
    pub mc_index: Option<usize>,
    pub prompt: String,
    pub reply: String,
}

/// Maps a free-text reply onto a candidate: exact match after
/// normalization, else the most shared tokens (lowest index on ties).
pub fn map_to_candidate(reply: &str, candidates: &[String]) -> usize {
    let r = normalize(reply);
    if let Some(i) = candidates.iter().position(|c| normalize(c) == r) {
        return i;
    }
    let reply_tokens = token_set(reply);
    let mut best = (0, 0);
    for (i, c) in candidates.iter().enumerate() {
        let shared = token_set(c).intersection(&reply_tokens).count();
        if shared > best.1 {
            best = (i, shared);
        }
    }
    best.0
}

/// Sends the prediction prompt and maps the reply. Open-ended replies pass
/// through unchanged.
pub fn predict_from_lines(
    question: &str,
    candidates: Option<&[String]>,
    lines: &[String],
    tools: &mut ToolSession<'_>,
) -> Result<Prediction, ToolError> {
    let prompt = prediction_prompt(question, candidates, lines);
    let reply = tools.complete(&prompt)?;
    Ok(match candidates {
        Some(c) if !c.is_empty() => {
            let i = map_to_candidate(&reply, c);
            Prediction { answer: c[i].clone(), mc_index: Some(i), prompt, reply }
        }
        _ => Prediction { answer: reply.clone(), mc_index: None, prompt, reply },
    })
}

pub fn final_predict(context: &ContextBlock, qa: &QAItem, tools: &mut ToolSession<'_>) -> Result<Prediction, ToolError> {
    predict_from_lines(&qa.question, qa.candidates.as_deref(), &context.lines(), tools)
}
