//! Event-parser usage statistics from traces.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::ItemTrace;
use crate::types::{QAType, StageName, TemporalConjunction};

/// What event parsing decided for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStat {
    pub qa_type: QAType,
    pub conjunction: TemporalConjunction,
    pub label: Option<String>,
}

/// Reads the event-parsing result from a trace; `None` when the trace has
/// no event-parsing stage.
pub fn trace_stat(trace: &ItemTrace) -> Option<TraceStat> {
    let record = trace.stage_records.iter().find(|r| r.stage_name == StageName::EventParsing)?;
    Some(TraceStat {
        qa_type: record.memory_after.qa_type,
        conjunction: record.memory_after.conjunction,
        label: trace.qtype_label.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub labeled: usize,
    /// Share of labeled items whose label names the assigned type.
    pub rate: f64,
    /// label -> assigned type -> count
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTypeStats {
    pub items: usize,
    pub qa_type: BTreeMap<String, f64>,
    pub conjunction: BTreeMap<String, f64>,
    /// Share of items with a conjunction other than `none`.
    pub conjunction_present: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<Agreement>,
}

/// Normalized histograms over every question type and conjunction, plus a
/// label agreement table when any item carries a dataset label.
pub fn qtype_stats(stats: &[TraceStat]) -> QTypeStats {
    let n = stats.len();
    let share = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    let qa_type = QAType::ALL
        .iter()
        .map(|t| (t.as_str().to_owned(), share(stats.iter().filter(|s| s.qa_type == *t).count())))
        .collect();
    let conjunction = TemporalConjunction::ALL
        .iter()
        .map(|c| (c.as_str().to_owned(), share(stats.iter().filter(|s| s.conjunction == *c).count())))
        .collect();
    let conjunction_present = share(stats.iter().filter(|s| s.conjunction != TemporalConjunction::None).count());

    let labeled: Vec<(&String, QAType)> = stats.iter().filter_map(|s| Some((s.label.as_ref()?, s.qa_type))).collect();
    let agreement = (!labeled.is_empty()).then(|| {
        let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut agree = 0;
        for (label, t) in &labeled {
            let key = label.trim().to_lowercase();
            if key.parse::<QAType>().is_ok_and(|l| l == *t) {
                agree += 1;
            }
            *confusion.entry(key).or_default().entry(t.as_str().to_owned()).or_default() += 1;
        }
        Agreement { labeled: labeled.len(), rate: agree as f64 / labeled.len() as f64, confusion }
    });
    QTypeStats { items: n, qa_type, conjunction, conjunction_present, agreement }
}

/// Loads every `*.json` trace in a directory, sorted by file name.
pub fn load_traces(dir: &Path) -> io::Result<Vec<ItemTrace>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))
        })
        .collect()
}
