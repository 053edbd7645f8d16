//! Text formats for `complete` prompts.
//!
//! Every prompt starts with a header line that tells a backend what kind of
//! completion is wanted: `#planner:<stage>` for stage programs and
//! `#predict` for final answers. Prediction prompts are built in exactly one
//! place so that baselines and the staged pipeline emit identical bytes for
//! identical inputs.

use std::collections::BTreeMap;

use crate::types::MemoryState;

pub const PREDICT_HEADER: &str = "#predict";
pub const PLANNER_PREFIX: &str = "#planner:";
pub const SINGLE_STAGE: &str = "single_stage";

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Prediction prompt: question, optional numbered candidates, and the
/// context lines (omitted entirely when there are none).
pub fn prediction_prompt(question: &str, candidates: Option<&[String]>, context: &[String]) -> String {
    let mut out = format!("{PREDICT_HEADER}\nquestion: {}\n", one_line(question));
    if let Some(cands) = candidates {
        out.push_str("candidates:\n");
        for (i, c) in cands.iter().enumerate() {
            out.push_str(&format!("{i}: {}\n", one_line(c)));
        }
    }
    if !context.is_empty() {
        out.push_str("context:\n");
        for line in context {
            out.push_str(&one_line(line));
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedPrediction {
    pub question: String,
    pub candidates: Option<Vec<String>>,
    pub context: Vec<String>,
}

pub fn parse_prediction_prompt(prompt: &str) -> Option<ParsedPrediction> {
    let mut lines = prompt.lines();
    if lines.next()?.trim() != PREDICT_HEADER {
        return None;
    }
    let mut parsed = ParsedPrediction::default();
    #[derive(PartialEq)]
    enum Section {
        Head,
        Candidates,
        Context,
    }
    let mut section = Section::Head;
    for line in lines {
        if let Some(q) = line.strip_prefix("question: ") {
            if section == Section::Head {
                parsed.question = q.to_owned();
                continue;
            }
        }
        match line {
            "candidates:" if section == Section::Head => {
                section = Section::Candidates;
                parsed.candidates = Some(Vec::new());
            }
            "context:" if section != Section::Context => section = Section::Context,
            _ => match section {
                Section::Candidates => {
                    let text = line.split_once(": ").map_or(line, |(_, t)| t);
                    parsed.candidates.get_or_insert_with(Vec::new).push(text.to_owned());
                }
                Section::Context => parsed.context.push(line.to_owned()),
                Section::Head => {}
            },
        }
    }
    Some(parsed)
}

/// Named planner prompt templates. A template must start with
/// `#planner:{stage}` and may use `{question}` and `{memory}`.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    templates: BTreeMap<String, String>,
}

pub const DEFAULT_TEMPLATE: &str = "default";

const DEFAULT_TEMPLATE_TEXT: &str = "#planner:{stage}\nquestion: {question}\nmemory: {memory}\n";

impl Default for PromptTemplates {
    fn default() -> Self {
        Self { templates: BTreeMap::from([(DEFAULT_TEMPLATE.to_owned(), DEFAULT_TEMPLATE_TEXT.to_owned())]) }
    }
}

impl PromptTemplates {
    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) -> Result<(), String> {
        let text = text.into();
        if !text.starts_with("#planner:{stage}") {
            return Err("planner template must start with `#planner:{stage}`".into());
        }
        self.templates.insert(id.into(), text);
        Ok(())
    }

    pub fn render(&self, id: &str, stage: &str, question: &str, memory: Option<&MemoryState>) -> Result<String, String> {
        let template = self.templates.get(id).ok_or_else(|| format!("unknown prompt template `{id}`"))?;
        let memory = match memory {
            Some(m) => serde_json::to_string(m).map_err(|e| e.to_string())?,
            None => "{}".into(),
        };
        Ok(template
            .replace("{stage}", stage)
            .replace("{question}", &one_line(question))
            .replace("{memory}", &memory))
    }
}

pub fn planner_prompt(stage: &str, question: &str, memory: Option<&MemoryState>) -> String {
    PromptTemplates::default()
        .render(DEFAULT_TEMPLATE, stage, question, memory)
        .expect("default template renders")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPlanner {
    pub stage: String,
    pub question: String,
    pub memory: Option<MemoryState>,
}

pub fn parse_planner_prompt(prompt: &str) -> Option<ParsedPlanner> {
    let mut lines = prompt.lines();
    let stage = lines.next()?.trim().strip_prefix(PLANNER_PREFIX)?.to_owned();
    let mut question = String::new();
    let mut memory = None;
    for line in lines {
        if let Some(q) = line.strip_prefix("question: ") {
            question = q.to_owned();
        } else if let Some(m) = line.strip_prefix("memory: ") {
            memory = serde_json::from_str(m).ok();
        }
    }
    Some(ParsedPlanner { stage, question, memory })
}
