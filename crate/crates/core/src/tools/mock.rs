//! Deterministic backend answering every method from world fixtures.
//!
//! Each answer is a pure function of the fixture and the request.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value as Json};

use super::fixture::{FixtureCorpus, FrameRecord, WorldFixture};
use super::{ErrorKind, LocalizeHit, ToolBackend, ToolMethod, ToolRequest, ToolResponse};
use crate::pipeline::rule_plan;
use crate::prompt::{parse_planner_prompt, parse_prediction_prompt, PLANNER_PREFIX, PREDICT_HEADER, SINGLE_STAGE};
use crate::text::{contains_words, normalize, token_set, tokens};
use crate::types::{MemoryState, StageName};

pub struct MockBackend {
    corpus: FixtureCorpus,
}

impl MockBackend {
    pub fn new(corpus: FixtureCorpus) -> Self {
        Self { corpus }
    }

    pub fn corpus(&self) -> &FixtureCorpus {
        &self.corpus
    }

    fn answer(&self, req: &ToolRequest) -> Result<Json, (ErrorKind, String)> {
        req.validate().map_err(|m| (ErrorKind::Invalid, m))?;
        let backend = |m: String| (ErrorKind::Backend, m);
        let fixture = match req.video_id.as_deref() {
            Some(id) => Some(self.corpus.get(id).ok_or_else(|| backend(format!("unknown video `{id}`")))?),
            None => None,
        };
        let frame = |fixture| frame_of(fixture, req);
        let arg = |k: &str| req.args.get(k).and_then(Json::as_str).unwrap_or_default();
        Ok(match req.method {
            ToolMethod::Caption => json!(frame(fixture)?.caption),
            ToolMethod::Vqa => json!(mock_vqa(frame(fixture)?, arg("question"), arg_is(req, "prefix", "ocr"))),
            ToolMethod::Score => json!(frame_score(frame(fixture)?, arg("text"))),
            ToolMethod::VerifyAction => {
                let wanted = normalize(arg("action"));
                json!(frame(fixture)?.actions.iter().any(|a| normalize(a) == wanted))
            }
            ToolMethod::Localize => {
                let fixture = fixture.expect("validated: localize carries a video id");
                let frames = req.frames_arg().map_err(|m| (ErrorKind::Invalid, m))?;
                if let Some(bad) = frames.iter().find(|&&f| fixture.frame(f).is_none()) {
                    return Err(backend(format!("frame {bad} out of range for video `{}`", fixture.video_id)));
                }
                serde_json::to_value(mock_localize(fixture, arg("object"), &frames)).expect("hits serialize")
            }
            ToolMethod::Complete => json!(mock_complete(arg("prompt"), fixture).map_err(backend)?),
        })
    }
}

fn frame_of<'a>(fixture: Option<&'a WorldFixture>, req: &ToolRequest) -> Result<&'a FrameRecord, (ErrorKind, String)> {
    let fixture = fixture.expect("validated: frame methods carry a video id");
    let f = req.frame_id.expect("validated: frame methods carry a frame id");
    fixture
        .frame(f)
        .ok_or_else(|| (ErrorKind::Backend, format!("frame {f} out of range for video `{}`", fixture.video_id)))
}

fn arg_is(req: &ToolRequest, key: &str, value: &str) -> bool {
    req.args.get(key).and_then(Json::as_str) == Some(value)
}

impl ToolBackend for MockBackend {
    fn dispatch(&self, req: &ToolRequest) -> ToolResponse {
        match self.answer(req) {
            Ok(result) => ToolResponse::success(req.id, result),
            Err((kind, msg)) => ToolResponse::failure(req.id, kind, msg),
        }
    }

    fn describe(&self) -> String {
        format!("mock ({} fixtures)", self.corpus.len())
    }
}

fn object_matches(phrase: &str, name: &str) -> bool {
    let name_n = normalize(name);
    !name_n.is_empty() && (normalize(phrase) == name_n || contains_words(phrase, &name_n))
}

/// Frames among `frames` holding an object named by `phrase`: exact match
/// after normalization, or the name appearing in the phrase as whole words.
/// Every matching object contributes one hit.
pub fn mock_localize(fixture: &WorldFixture, phrase: &str, frames: &[usize]) -> Vec<LocalizeHit> {
    let mut hits = Vec::new();
    for &f in frames {
        let Some(frame) = fixture.frame(f) else { continue };
        for obj in &frame.objects {
            if object_matches(phrase, &obj.name) {
                hits.push(LocalizeHit { frame_id: f, bbox: obj.bbox });
            }
        }
    }
    hits
}

fn frame_vocabulary(frame: &FrameRecord) -> BTreeSet<String> {
    let mut vocab = token_set(&frame.caption);
    for obj in &frame.objects {
        vocab.extend(tokens(&obj.name));
    }
    for action in &frame.actions {
        vocab.extend(tokens(action));
    }
    vocab
}

fn frame_score(frame: &FrameRecord, text: &str) -> f64 {
    let query = token_set(text);
    let vocab = frame_vocabulary(frame);
    let union = query.union(&vocab).count();
    if union == 0 {
        return 0.0;
    }
    query.intersection(&vocab).count() as f64 / union as f64
}

/// Jaccard similarity of the text's tokens against the frame's caption,
/// object names and actions. `None` for an unknown frame.
pub fn mock_score(fixture: &WorldFixture, frame_id: usize, text: &str) -> Option<f64> {
    fixture.frame(frame_id).map(|f| frame_score(f, text))
}

/// Rule-based visual question answering over one frame record.
///
/// OCR-prefixed questions read the frame text. Otherwise the question's
/// wording picks the answer: `how many X` counts matching objects, `doing`
/// lists actions, `with` lists objects not named in the question, and
/// anything else falls back to the caption.
pub fn mock_vqa(frame: &FrameRecord, question: &str, ocr: bool) -> String {
    if ocr {
        return frame.ocr_text.clone().unwrap_or_else(|| "no text".into());
    }
    let q = tokens(question);
    if let Some(pos) = q.windows(2).position(|w| w[0] == "how" && w[1] == "many") {
        if let Some(noun) = q.get(pos + 2) {
            let singular = noun.strip_suffix('s').unwrap_or(noun);
            let n = frame
                .objects
                .iter()
                .filter(|o| contains_words(&o.name, noun) || contains_words(&o.name, singular))
                .count();
            return n.to_string();
        }
    }
    let has = |w: &str| q.iter().any(|t| t == w);
    if has("doing") && !frame.actions.is_empty() {
        return frame.actions.join("; ");
    }
    if has("with") {
        let named: BTreeSet<&String> = q.iter().collect();
        let others: Vec<&str> = frame
            .objects
            .iter()
            .map(|o| o.name.as_str())
            .filter(|n| !tokens(n).iter().all(|t| named.contains(t)))
            .collect();
        if !others.is_empty() {
            return dedup(others).join(" and ");
        }
    }
    frame.caption.clone()
}

fn dedup(items: Vec<&str>) -> Vec<&str> {
    let mut seen = BTreeSet::new();
    items.into_iter().filter(|i| seen.insert(*i)).collect()
}

fn answer_pool(fixture: Option<&WorldFixture>) -> Vec<String> {
    let Some(fixture) = fixture else { return Vec::new() };
    if let Some(notes) = &fixture.qa_notes {
        let pool: Vec<String> = notes
            .split([';', '\n'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect();
        if !pool.is_empty() {
            return pool;
        }
    }
    let mut seen = BTreeSet::new();
    fixture
        .frames
        .iter()
        .flat_map(|f| f.objects.iter().map(|o| o.name.clone()))
        .filter(|n| seen.insert(n.clone()))
        .collect()
}

/// Index of the option whose distinct tokens occur most often in the
/// context lines; ties go to the lowest index.
pub fn best_overlap(options: &[String], context: &[String]) -> Option<usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in context {
        for t in tokens(line) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut best: Option<(usize, usize)> = None;
    for (i, opt) in options.iter().enumerate() {
        let score: usize = token_set(opt).iter().map(|t| counts.get(t).copied().unwrap_or(0)).sum();
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i)
}

/// Deterministic stand-in for the text-completion model.
///
/// `#planner:<stage>` prompts run the rule-based planner; `#predict` prompts
/// pick the candidate (or, open-ended, the fixture answer phrase) with the
/// highest token overlap against the context block.
pub fn mock_complete(prompt: &str, fixture: Option<&WorldFixture>) -> Result<String, String> {
    let header = prompt.lines().next().unwrap_or_default().trim();
    if header == PREDICT_HEADER {
        let parsed = parse_prediction_prompt(prompt).ok_or("malformed prediction prompt")?;
        let options = match parsed.candidates {
            Some(c) if !c.is_empty() => c,
            _ => answer_pool(fixture),
        };
        return Ok(match best_overlap(&options, &parsed.context) {
            Some(i) => options[i].clone(),
            None => "unknown".into(),
        });
    }
    if header.starts_with(PLANNER_PREFIX) {
        let parsed = parse_planner_prompt(prompt).ok_or("malformed planner prompt")?;
        if parsed.stage == SINGLE_STAGE {
            return Err("mock planner has no single-stage program for this question".into());
        }
        let stage: StageName = parsed.stage.parse().map_err(|e| format!("{e}"))?;
        let memory = parsed.memory.unwrap_or_else(|| MemoryState {
            frame_ids: crate::types::FrameWindow::empty(),
            question: parsed.question.clone(),
            event_queue: Vec::new(),
            conjunction: crate::types::TemporalConjunction::None,
            qa_type: crate::types::QAType::Other,
            require_ocr: false,
            extra: BTreeMap::new(),
            grounded_window: None,
        });
        return Ok(rule_plan(stage, &memory, &parsed.question));
    }
    Err("prompt is missing a `#planner:<stage>` or `#predict` header line".into())
}
