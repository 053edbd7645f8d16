//! Stage planners: the rule-based reference planner and the LLM-backed one.

use crate::program::{render, Expr, Program, Stmt};
use crate::prompt::{PromptTemplates, DEFAULT_TEMPLATE};
use crate::text::tokens;
use crate::tools::{ToolError, ToolSession};
use crate::types::{MemoryState, QAType, StageName, TemporalConjunction, TemporalRegion};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlannerKind {
    RuleBased,
    LlmBacked { template_id: String },
}

/// Produces the program for each stage.
#[derive(Debug, Clone)]
pub struct Planner {
    pub kind: PlannerKind,
    pub templates: PromptTemplates,
}

impl Default for Planner {
    fn default() -> Self {
        Self::rule_based()
    }
}

impl Planner {
    pub fn rule_based() -> Self {
        Self { kind: PlannerKind::RuleBased, templates: PromptTemplates::default() }
    }

    pub fn llm_backed(template_id: impl Into<String>, templates: PromptTemplates) -> Self {
        Self { kind: PlannerKind::LlmBacked { template_id: template_id.into() }, templates }
    }

    /// Returns `(planner prompt, program text)`. The rule-based planner never
    /// touches `tools`; its prompt is rendered only for the trace.
    pub fn plan(
        &self,
        stage: StageName,
        memory: &MemoryState,
        tools: &mut ToolSession<'_>,
    ) -> Result<(String, String), ToolError> {
        let template = match &self.kind {
            PlannerKind::RuleBased => DEFAULT_TEMPLATE,
            PlannerKind::LlmBacked { template_id } => template_id,
        };
        let prompt = self
            .templates
            .render(template, stage.as_str(), &memory.question, Some(memory))
            .map_err(|m| ToolError::new(crate::tools::ErrorKind::Invalid, m))?;
        let program = match self.kind {
            PlannerKind::RuleBased => rule_plan(stage, memory, &memory.question),
            PlannerKind::LlmBacked { .. } => tools.complete(&prompt)?,
        };
        Ok((prompt, program))
    }
}

const WH_WORDS: &[&str] = &["why", "what", "how", "where", "who", "which", "when", "whom", "whose"];
const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "does", "do", "did", "has", "have", "had", "can", "could", "will", "would", "should",
    "might", "may",
];
const DETERMINERS: &[&str] = &["the", "a", "an"];
const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "behind", "under", "near", "above", "below", "inside", "outside", "of", "to", "for", "from",
];
const PRONOUNS: &[&str] = &["this", "that", "it", "there", "here", "they", "he", "she", "these", "those"];
const REGION_LEADS: &[&str] = &["at", "in", "near", "towards", "toward", "by", "during", "from"];
const OCR_WORDS: &[&str] = &["say", "written", "text", "sign", "label"];

fn is(word: &str, set: &[&str]) -> bool {
    set.contains(&word)
}

fn region_word(word: &str) -> Option<TemporalRegion> {
    match word {
        "beginning" | "start" => Some(TemporalRegion::Beginning),
        "middle" => Some(TemporalRegion::Middle),
        "end" => Some(TemporalRegion::End),
        _ => None,
    }
}

fn conjunction_word(word: &str) -> Option<TemporalConjunction> {
    match word {
        "before" => Some(TemporalConjunction::Before),
        "after" => Some(TemporalConjunction::After),
        "while" | "when" | "as" => Some(TemporalConjunction::While),
        _ => None,
    }
}

/// Finds the first temporal region phrase (`at the end of the video`,
/// `finally`, ...) and returns the region with the token span it covers.
/// A bare region word with no article or preposition before it (`did the dog
/// start barking`) is not a region phrase.
fn find_region(toks: &[String]) -> Option<(TemporalRegion, usize, usize)> {
    for (i, t) in toks.iter().enumerate() {
        if t == "finally" {
            return Some((TemporalRegion::End, i, i + 1));
        }
        let Some(region) = region_word(t) else { continue };
        let mut s = i;
        while s > 0 && (toks[s - 1] == "the" || toks[s - 1] == "very") {
            s -= 1;
        }
        if s > 0 && is(&toks[s - 1], REGION_LEADS) {
            s -= 1;
        }
        if s == i {
            continue;
        }
        let mut e = i + 1;
        for tail in [&["of", "the", "video"][..], &["of", "video"], &["of", "the", "clip"]] {
            if toks[e..].starts_with(&tail.iter().map(|w| w.to_string()).collect::<Vec<_>>()) {
                e += tail.len();
                break;
            }
        }
        return Some((region, s, e));
    }
    None
}

fn classify(toks: &[String]) -> Option<QAType> {
    let first = toks.first()?.as_str();
    Some(match first {
        "why" => QAType::Why,
        "how" if toks.get(1).is_some_and(|t| t == "many") => QAType::Counting,
        "how" => QAType::How,
        "what" | "which" => QAType::What,
        "where" => QAType::Location,
        "describe" => QAType::Description,
        "explain" => QAType::Explanation,
        _ => return None,
    })
}

/// Object named after `how many`, as written.
fn counted_object(toks: &[String]) -> Option<&str> {
    let pos = toks.windows(2).position(|w| w[0] == "how" && w[1] == "many")?;
    toks.get(pos + 2).map(String::as_str)
}

/// Reduces a clause to its event phrase: leading question words,
/// auxiliaries and articles go, as do trailing `do`/`doing` and
/// `in/of the video`. Clauses that are only pronouns or start with a
/// preposition describe no event.
fn event_text(clause: &[String]) -> Option<String> {
    let mut toks = clause;
    while let Some(first) = toks.first() {
        if is(first, WH_WORDS) || is(first, AUXILIARIES) || is(first, DETERMINERS) || first == "and" {
            toks = &toks[1..];
        } else {
            break;
        }
    }
    loop {
        if toks.len() >= 3 && toks[toks.len() - 1] == "video" && is(&toks[toks.len() - 3], &["in", "of"]) {
            toks = &toks[..toks.len() - 3];
        } else if toks.last().is_some_and(|t| t == "do" || t == "doing") {
            toks = &toks[..toks.len() - 1];
        } else {
            break;
        }
    }
    let first = toks.first()?;
    if is(first, PREPOSITIONS) || toks.iter().all(|t| is(t, PRONOUNS) || is(t, DETERMINERS)) {
        return None;
    }
    Some(toks.join(" "))
}

fn counting_event(toks: &[String]) -> Option<String> {
    let noun = counted_object(toks)?;
    let singular = match noun.strip_suffix('s') {
        Some(s) if s.len() >= 3 => s,
        _ => noun,
    };
    Some(singular.to_owned())
}

fn call(name: &str, args: Vec<Expr>) -> Stmt {
    Stmt::call(name, args)
}

fn text_call(name: &str, text: &str) -> Stmt {
    call(name, vec![Expr::str(text)])
}

fn plan_event_parsing(question: &str) -> Vec<Stmt> {
    let mut toks = tokens(question);
    let mut out = Vec::new();
    if let Some((region, s, e)) = find_region(&toks) {
        out.push(text_call("trim", region.as_str()));
        toks.drain(s..e);
        out.push(text_call("revise_question", &format!("{}?", toks.join(" "))));
    }
    if let Some(t) = classify(&toks) {
        out.push(text_call("classify", t.as_str()));
    }
    if toks.iter().any(|t| is(t, OCR_WORDS)) {
        out.push(call("require_ocr", vec![Expr::Bool(true)]));
    }
    let split = toks.iter().enumerate().skip(1).find_map(|(i, t)| conjunction_word(t).map(|c| (i, c)));
    let mut events = Vec::new();
    let mut conj = None;
    match split {
        Some((i, c)) => {
            let a = event_text(&toks[..i]);
            let b = event_text(&toks[i + 1..]);
            if a.is_some() && b.is_some() {
                conj = Some(c);
            }
            events.extend(a);
            events.extend(b);
        }
        None if classify(&toks) == Some(QAType::Counting) => events.extend(counting_event(&toks)),
        None => events.extend(event_text(&toks)),
    }
    for e in &events {
        out.push(text_call("parse_event", e));
    }
    if let Some(c) = conj {
        out.push(text_call("set_conjunction", c.as_str()));
    }
    out
}

fn plan_grounding(memory: &MemoryState) -> Vec<Stmt> {
    let mut out = Vec::new();
    for e in &memory.event_queue {
        out.push(text_call("localize", e));
        out.push(text_call("verify_action", e));
    }
    if memory.event_queue.len() == 2 {
        out.push(call("anchor_then_shift", vec![]));
    }
    out
}

fn subject(memory: &MemoryState) -> Option<String> {
    let event = memory.event_queue.first()?;
    event.split_whitespace().find(|w| !is(w, DETERMINERS)).map(str::to_owned)
}

fn plan_reasoning(memory: &MemoryState, question: &str) -> Vec<Stmt> {
    let subqs: Vec<String> = match memory.qa_type {
        QAType::Why => match subject(memory) {
            Some(s) => vec![format!("what is the {s} doing?"), format!("what is the {s} interacting with?")],
            None => vec![],
        },
        QAType::Location => vec!["where is this?".to_owned()],
        QAType::Counting => counted_object(&tokens(question))
            .map(|o| vec![format!("how many {o} are visible?")])
            .unwrap_or_default(),
        _ => vec![],
    };
    subqs
        .iter()
        .flat_map(|q| [text_call("subquestion", q), text_call("vqa_on_grounded", q)])
        .collect()
}

/// Deterministic reference planner. Always returns a valid flat program;
/// `noop()` when the stage has nothing to do.
pub fn rule_plan(stage: StageName, memory: &MemoryState, question: &str) -> String {
    let mut statements = match stage {
        StageName::EventParsing => plan_event_parsing(question),
        StageName::Grounding => plan_grounding(memory),
        StageName::Reasoning => plan_reasoning(memory, question),
        StageName::Prediction => vec![],
    };
    if statements.is_empty() {
        statements.push(call("noop", vec![]));
    }
    render(&Program::new(statements))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{FrameWindow, VideoMeta};

    fn stage1(q: &str) -> String {
        let v = VideoMeta::new("v", 10, 1.0).unwrap();
        rule_plan(StageName::EventParsing, &MemoryState::initial(&v, q), q)
    }

    #[test]
    fn why_question_at_the_end() {
        let p = stage1("why is the cat lying on its back at the end of the video?");
        assert_eq!(
            p,
            "trim(\"end\")\nrevise_question(\"why is the cat lying on its back?\")\nclassify(\"why\")\nparse_event(\"cat lying on its back\")\n"
        );
    }

    #[test]
    fn background_question_has_no_events() {
        assert_eq!(stage1("what is in the background?"), "classify(\"what\")\n");
    }

    #[test]
    fn no_temporal_words_means_no_trim() {
        let p = stage1("what is the dog chewing?");
        assert!(!p.contains("trim("));
        assert!(p.contains("parse_event(\"dog chewing\")"));
        assert!(!stage1("did the dog start barking?").contains("trim("));
    }

    #[test]
    fn sign_question_requires_ocr() {
        assert!(stage1("what does the sign say?").contains("require_ocr(true)"));
    }

    #[test]
    fn two_events_with_conjunction() {
        let p = stage1("why is the boy walking over to the shelf after playing with the person?");
        assert!(p.contains("parse_event(\"boy walking over to the shelf\")\nparse_event(\"playing with the person\")"));
        assert!(p.contains("set_conjunction(\"after\")"));
        assert!(!stage1("when does the cat jump?").contains("set_conjunction"));
    }

    #[test]
    fn counting_event_is_the_object() {
        let p = stage1("how many balloons are there at the start?");
        assert!(p.contains("trim(\"beginning\")"));
        assert!(p.contains("classify(\"counting\")"));
        assert!(p.contains("parse_event(\"balloon\")"));
    }

    #[test]
    fn grounding_and_reasoning_plans() {
        let v = VideoMeta::new("v", 10, 1.0).unwrap();
        let mut m = MemoryState::initial(&v, "q");
        assert_eq!(rule_plan(StageName::Grounding, &m, "q"), "noop()\n");
        m.event_queue = vec!["cat lying on its back".into(), "dog barks".into()];
        let g = rule_plan(StageName::Grounding, &m, "q");
        assert_eq!(g.lines().count(), 5);
        assert!(g.ends_with("anchor_then_shift()\n"));
        m.qa_type = QAType::Why;
        let r = rule_plan(StageName::Reasoning, &m, "q");
        assert!(r.contains("subquestion(\"what is the cat doing?\")"));
        assert!(r.contains("vqa_on_grounded(\"what is the cat interacting with?\")"));
        m.qa_type = QAType::What;
        assert_eq!(rule_plan(StageName::Reasoning, &m, "q"), "noop()\n");
        m.qa_type = QAType::Counting;
        let c = rule_plan(StageName::Reasoning, &m, "how many dogs are there?");
        assert!(c.contains("how many dogs are visible?"));
        m.grounded_window = Some(FrameWindow::single(1));
        assert_eq!(rule_plan(StageName::Prediction, &m, "q"), "noop()\n");
    }
}
