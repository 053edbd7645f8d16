//! JSON-lines datasets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::types::QAItem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub video_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_mc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_open: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_window_s: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qtype: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub video_id: String,
    pub qa: QAItem,
    pub qtype_label: Option<String>,
    pub subset: Option<String>,
    /// Authored single-stage program, resolved against the dataset's
    /// directory.
    pub program_path: Option<PathBuf>,
}

impl EvalItem {
    pub fn new(id: impl Into<String>, video_id: impl Into<String>, qa: QAItem) -> Self {
        Self { id: id.into(), video_id: video_id.into(), qa, qtype_label: None, subset: None, program_path: None }
    }

    pub fn to_line(&self) -> DatasetLine {
        DatasetLine {
            id: Some(self.id.clone()),
            video_id: self.video_id.clone(),
            question: self.qa.question.clone(),
            candidates: self.qa.candidates.clone(),
            answer_mc: self.qa.answer_mc,
            answer_open: self.qa.answer_open.clone(),
            gt_window_s: self.qa.gt_window_s,
            qtype: self.qtype_label.clone(),
            subset: self.subset.clone(),
            program_path: self.program_path.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
    #[error("{0}: dataset has no items")]
    Empty(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub items: Vec<EvalItem>,
    /// `(line number, reason)` for lines skipped in lenient mode.
    pub skipped: Vec<(usize, String)>,
}

fn check_line(line: DatasetLine, index: usize, base: &Path) -> Result<EvalItem, String> {
    if line.video_id.trim().is_empty() {
        return Err("empty video_id".into());
    }
    if line.answer_mc.is_none() && line.answer_open.is_none() {
        return Err("item has neither answer_mc nor answer_open".into());
    }
    let qa = QAItem {
        question: line.question,
        candidates: line.candidates,
        answer_mc: line.answer_mc,
        answer_open: line.answer_open,
        gt_window_s: line.gt_window_s,
    };
    qa.validate().map_err(|e| e.to_string())?;
    let id = line.id.unwrap_or_else(|| format!("item{index:05}"));
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(format!("item id `{id}` cannot name a trace file"));
    }
    Ok(EvalItem {
        id,
        video_id: line.video_id,
        qa,
        qtype_label: line.qtype,
        subset: line.subset,
        program_path: line.program_path.map(|p| if p.is_absolute() { p } else { base.join(p) }),
    })
}

/// Parses dataset text. Blank lines are ignored. In strict mode the first bad
/// line is an error; in lenient mode it is recorded and skipped.
pub fn parse_dataset(text: &str, base: &Path, path: &Path, lenient: bool) -> Result<Dataset, DatasetError> {
    let mut out = Dataset::default();
    let mut ids = std::collections::BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str::<DatasetLine>(raw)
            .map_err(|e| e.to_string())
            .and_then(|l| check_line(l, out.items.len(), base))
            .and_then(|item| {
                if ids.insert(item.id.clone()) {
                    Ok(item)
                } else {
                    Err(format!("duplicate item id `{}`", item.id))
                }
            });
        match item {
            Ok(item) => out.items.push(item),
            Err(message) if lenient => out.skipped.push((line_no, message)),
            Err(message) => return Err(DatasetError::Line { path: path.into(), line: line_no, message }),
        }
    }
    if out.items.is_empty() {
        return Err(DatasetError::Empty(path.into()));
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, lenient: bool) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.into(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_dataset(&text, base, path, lenient)
}

pub fn write_dataset(path: &Path, items: &[EvalItem]) -> std::io::Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(&item.to_line()).map_err(std::io::Error::other)?);
        text.push('\n');
    }
    fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, lenient: bool) -> Result<Dataset, DatasetError> {
        parse_dataset(text, Path::new("/data"), Path::new("d.jsonl"), lenient)
    }

    #[test]
    fn multiple_choice_and_open_lines() {
        let text = r#"{"video_id":"v1","question":"why?","candidates":["a","b","c","d","e"],"answer_mc":4,"subset":"causal"}
{"video_id":"v2","question":"what?","answer_open":["x","x","y","x","z"],"program_path":"p/a.mvp"}
"#;
        let d = parse(text, false).unwrap();
        assert_eq!(d.items.len(), 2);
        assert_eq!(d.items[0].qa.answer_mc, Some(4));
        assert_eq!(d.items[0].subset.as_deref(), Some("causal"));
        assert_eq!(d.items[1].qa.answer_open.as_ref().unwrap().len(), 5);
        assert_eq!(d.items[1].program_path.as_deref(), Some(Path::new("/data/p/a.mvp")));
        assert_eq!(d.items[1].id, "item00001");
    }

    #[test]
    fn strict_and_lenient_modes() {
        let text = "{\"video_id\":\"v1\",\"question\":\"q\",\"answer_open\":[\"a\"]}\n{\"video_id\":\"v1\",\"question\":\"q\"}\nnot json\n";
        match parse(text, false).unwrap_err() {
            DatasetError::Line { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("neither"));
            }
            e => panic!("unexpected {e}"),
        }
        let d = parse(text, true).unwrap();
        assert_eq!(d.items.len(), 1);
        assert_eq!(d.skipped.iter().map(|s| s.0).collect::<Vec<_>>(), vec![2, 3]);
        assert!(parse("{\"video_id\":\"v\",\"question\":\"q\",\"candidates\":[\"a\"],\"answer_mc\":3}", false).is_err());
        assert!(parse("", false).is_err());
    }

    #[test]
    fn round_trips_through_a_file() {
        let mut item = EvalItem::new("a1", "v", QAItem::multiple_choice("q", vec!["x".into(), "y".into()], 1));
        item.qtype_label = Some("why".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, std::slice::from_ref(&item)).unwrap();
        assert_eq!(load_dataset(&path, false).unwrap().items, vec![item]);
    }
}
