//! Domain types shared by the program language, tools, pipeline and harness.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::program::Program;
use crate::tools::ScoreThreshold;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TypeError {
    #[error("invalid video meta: {0}")]
    Video(String),
    #[error("invalid frame window: {0}")]
    Window(String),
    #[error("invalid qa item: {0}")]
    Qa(String),
    #[error("unknown {kind} `{value}`")]
    UnknownVariant { kind: &'static str, value: String },
}

/// A video as seen by the engine: an id, a frame count and a frame rate.
/// Frames are never decoded here; tool backends resolve them by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub frame_count: usize,
    pub fps: f64,
    pub duration_s: f64,
}

impl VideoMeta {
    pub fn new(video_id: impl Into<String>, frame_count: usize, fps: f64) -> Result<Self, TypeError> {
        let meta = Self {
            video_id: video_id.into(),
            frame_count,
            fps,
            duration_s: if fps > 0.0 { frame_count as f64 / fps } else { 0.0 },
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if self.frame_count == 0 {
            return Err(TypeError::Video(format!("{}: frame_count must be >= 1", self.video_id)));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(TypeError::Video(format!("{}: fps must be > 0", self.video_id)));
        }
        let expected = self.frame_count as f64 / self.fps;
        if !(self.duration_s >= 0.0) || (self.duration_s - expected).abs() > 1.0 / self.fps + 1e-9 {
            return Err(TypeError::Video(format!(
                "{}: duration {} inconsistent with {} frames at {} fps",
                self.video_id, self.duration_s, self.frame_count, self.fps
            )));
        }
        Ok(())
    }

    /// Frame index containing time `t` (seconds), clamped to the video.
    pub fn frame_at(&self, t: f64) -> usize {
        let f = (t * self.fps).floor();
        if f <= 0.0 {
            0
        } else {
            (f as usize).min(self.frame_count - 1)
        }
    }

    /// Start time of `frame` in seconds.
    pub fn time_of(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    pub fn full_window(&self) -> FrameWindow {
        FrameWindow::full(self.frame_count)
    }
}

/// Strictly increasing list of frame indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FrameWindow(Vec<usize>);

impl FrameWindow {
    pub fn new(frame_ids: Vec<usize>) -> Result<Self, TypeError> {
        if let Some(pair) = frame_ids.windows(2).find(|w| w[0] >= w[1]) {
            return Err(TypeError::Window(format!(
                "frame ids must be strictly increasing ({} then {})",
                pair[0], pair[1]
            )));
        }
        Ok(Self(frame_ids))
    }

    /// Builds a window from arbitrary ids, sorting and deduplicating.
    pub fn from_unsorted(mut frame_ids: Vec<usize>) -> Self {
        frame_ids.sort_unstable();
        frame_ids.dedup();
        Self(frame_ids)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn full(frame_count: usize) -> Self {
        Self((0..frame_count).collect())
    }

    pub fn single(frame: usize) -> Self {
        Self(vec![frame])
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.0.binary_search(&frame).is_ok()
    }

    pub fn is_subset_of(&self, other: &FrameWindow) -> bool {
        self.0.iter().all(|f| other.contains(*f))
    }

    /// The frame at position `len / 2`.
    pub fn middle_frame(&self) -> Option<usize> {
        self.0.get(self.0.len() / 2).copied()
    }

    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> FrameWindow {
        Self(self.0.iter().copied().filter(|f| keep(*f)).collect())
    }

    pub fn intersect(&self, other: &FrameWindow) -> FrameWindow {
        self.filter(|f| other.contains(f))
    }

    pub fn check_within(&self, frame_count: usize) -> Result<(), TypeError> {
        match self.last() {
            Some(last) if last >= frame_count => Err(TypeError::Window(format!(
                "frame {last} out of range for {frame_count} frames"
            ))),
            _ => Ok(()),
        }
    }

    /// Tight seconds interval `[min / fps, (max + 1) / fps)`.
    pub fn to_seconds(&self, fps: f64) -> Option<(f64, f64)> {
        Some((self.first()? as f64 / fps, (self.last()? + 1) as f64 / fps))
    }
}

impl TryFrom<Vec<usize>> for FrameWindow {
    type Error = TypeError;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        FrameWindow::new(v)
    }
}

impl From<FrameWindow> for Vec<usize> {
    fn from(w: FrameWindow) -> Self {
        w.0
    }
}

/// Picks `min(n, frame_count)` frames at the midpoints of equal-width bins:
/// index `k` of `m` is `floor((k + 0.5) * frame_count / m)`.
pub fn uniform_sample(frame_count: usize, n: usize) -> FrameWindow {
    let m = n.min(frame_count);
    if m == 0 {
        return FrameWindow::empty();
    }
    // floor((2k + 1) * frame_count / 2m), exact in integers
    let ids = (0..m)
        .map(|k| ((2 * k + 1) * frame_count) / (2 * m))
        .collect();
    FrameWindow(ids)
}

/// `uniform_sample` over the positions of an arbitrary window.
pub fn uniform_sample_window(window: &FrameWindow, n: usize) -> FrameWindow {
    let positions = uniform_sample(window.len(), n);
    FrameWindow(positions.ids().iter().map(|&p| window.0[p]).collect())
}

/// One question with its ground truth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QAItem {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_mc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_open: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_window_s: Option<(f64, f64)>,
}

impl QAItem {
    pub fn multiple_choice(question: impl Into<String>, candidates: Vec<String>, answer: usize) -> Self {
        Self {
            question: question.into(),
            candidates: Some(candidates),
            answer_mc: Some(answer),
            ..Default::default()
        }
    }

    pub fn open_ended(question: impl Into<String>, answers: Vec<String>) -> Self {
        Self {
            question: question.into(),
            answer_open: Some(answers),
            ..Default::default()
        }
    }

    pub fn is_multiple_choice(&self) -> bool {
        self.candidates.is_some()
    }

    /// Checks the invariants required of a scorable item.
    pub fn validate(&self) -> Result<(), TypeError> {
        if self.question.trim().is_empty() {
            return Err(TypeError::Qa("question is empty".into()));
        }
        match (&self.answer_mc, &self.answer_open) {
            (Some(_), Some(_)) => return Err(TypeError::Qa("both answer_mc and answer_open present".into())),
            (None, None) => return Err(TypeError::Qa("one of answer_mc / answer_open is required".into())),
            (Some(idx), None) => {
                let n = self.candidates.as_ref().map_or(0, Vec::len);
                if *idx >= n {
                    return Err(TypeError::Qa(format!("answer_mc {idx} out of range for {n} candidates")));
                }
            }
            (None, Some(answers)) => {
                if answers.is_empty() {
                    return Err(TypeError::Qa("answer_open is empty".into()));
                }
            }
        }
        if let Some(c) = &self.candidates {
            if c.is_empty() {
                return Err(TypeError::Qa("candidate list is empty".into()));
            }
        }
        if let Some((s, e)) = self.gt_window_s {
            if !(s <= e) {
                return Err(TypeError::Qa(format!("gt_window_s start {s} > end {e}")));
            }
        }
        Ok(())
    }
}

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = TypeError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let s = s.trim();
                $(if s.eq_ignore_ascii_case($text) {
                    return Ok($name::$variant);
                })+
                Err(TypeError::UnknownVariant { kind: $kind, value: s.to_owned() })
            }
        }
    };
}

named_enum!(
    /// Question sub-type assigned during event parsing.
    QAType, "qa_type", {
        Why => "why",
        How => "how",
        What => "what",
        Location => "location",
        Counting => "counting",
        Description => "description",
        Explanation => "explanation",
        Other => "other",
    }
);

named_enum!(
    TemporalConjunction, "conjunction", {
        Before => "before",
        After => "after",
        While => "while",
        None => "none",
    }
);

named_enum!(
    TemporalRegion, "temporal region", {
        Beginning => "beginning",
        Middle => "middle",
        End => "end",
        Whole => "whole",
    }
);

named_enum!(
    StageName, "stage", {
        EventParsing => "event_parsing",
        Grounding => "grounding",
        Reasoning => "reasoning",
        Prediction => "prediction",
    }
);

/// Maximum number of parsed events held in memory at once.
pub const MAX_EVENTS: usize = 2;

/// External memory read and written by every stage of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub frame_ids: FrameWindow,
    pub question: String,
    pub event_queue: Vec<String>,
    pub conjunction: TemporalConjunction,
    pub qa_type: QAType,
    pub require_ocr: bool,
    pub extra: BTreeMap<String, String>,
    pub grounded_window: Option<FrameWindow>,
}

impl MemoryState {
    pub fn initial(video: &VideoMeta, question: &str) -> Self {
        Self {
            frame_ids: video.full_window(),
            question: question.to_owned(),
            event_queue: Vec::new(),
            conjunction: TemporalConjunction::None,
            qa_type: QAType::Other,
            require_ocr: false,
            extra: BTreeMap::new(),
            grounded_window: None,
        }
    }
}

/// One executed tool call as it appears in a stage trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub method: String,
    pub args: serde_json::Value,
    pub result: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage_name: StageName,
    pub planner_prompt: String,
    pub emitted_program: String,
    pub parsed_program: Option<Program>,
    pub tool_calls: Vec<ToolCallRecord>,
    pub memory_before: MemoryState,
    pub memory_after: MemoryState,
}

/// Which of the three planning stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageMask {
    pub event_parsing: bool,
    pub grounding: bool,
    pub reasoning: bool,
}

impl StageMask {
    pub const ALL: StageMask = StageMask::new(true, true, true);
    pub const NONE: StageMask = StageMask::new(false, false, false);

    pub const fn new(event_parsing: bool, grounding: bool, reasoning: bool) -> Self {
        Self { event_parsing, grounding, reasoning }
    }

    pub fn any(self) -> bool {
        self.event_parsing || self.grounding || self.reasoning
    }

    pub fn bits(self) -> [u8; 3] {
        [self.event_parsing as u8, self.grounding as u8, self.reasoning as u8]
    }
}

impl Default for StageMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl FromStr for StageMask {
    type Err = TypeError;

    /// Accepts `1,0,1` or `101`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits: Vec<char> = s.chars().filter(|c| !c.is_whitespace() && *c != ',').collect();
        let bad = || TypeError::UnknownVariant { kind: "stage mask", value: s.to_owned() };
        if bits.len() != 3 {
            return Err(bad());
        }
        let mut out = [false; 3];
        for (slot, c) in out.iter_mut().zip(bits) {
            *slot = match c {
                '1' => true,
                '0' => false,
                _ => return Err(bad()),
            };
        }
        Ok(StageMask::new(out[0], out[1], out[2]))
    }
}

/// How `trim(region)` treats the 40% fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimMode {
    /// Keep a 40% slice at the named region.
    #[default]
    Keep,
    /// Drop 40% of the window away from the named region.
    Remove,
}

impl FromStr for TrimMode {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "keep" => Ok(TrimMode::Keep),
            "remove" => Ok(TrimMode::Remove),
            other => Err(TypeError::UnknownVariant { kind: "trim mode", value: other.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// General-context caption frames for the prediction stage.
    pub n_context_frames: usize,
    pub fps_caption: f64,
    /// Always 0; present so traces record it.
    pub decode_temperature: f64,
    pub stage_mask: StageMask,
    pub seed: u64,
    pub trim_mode: TrimMode,
    pub score_threshold: ScoreThreshold,
    /// When false, reasoning ignores the grounded window and asks over the
    /// trimmed frames; the grounded frames are only listed for prediction.
    pub grounding_to_reasoning: bool,
    /// Sample general context from the trimmed `frame_ids` instead of the
    /// whole video.
    pub context_from_trimmed: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_context_frames: 16,
            fps_caption: 1.0,
            decode_temperature: 0.0,
            stage_mask: StageMask::ALL,
            seed: 0,
            trim_mode: TrimMode::Keep,
            score_threshold: ScoreThreshold::default(),
            grounding_to_reasoning: true,
            context_from_trimmed: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_context_frames == 0 {
            return Err("n_context_frames must be >= 1".into());
        }
        if !(self.fps_caption.is_finite() && self.fps_caption > 0.0) {
            return Err("fps_caption must be > 0".into());
        }
        if self.decode_temperature != 0.0 {
            return Err("decode_temperature is fixed at 0".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_sample_examples() {
        assert_eq!(uniform_sample(10, 10).ids(), (0..10).collect::<Vec<_>>().as_slice());
        assert_eq!(uniform_sample(100, 4).ids(), &[12, 37, 62, 87]);
        assert_eq!(uniform_sample(3, 16).ids(), &[0, 1, 2]);
        assert_eq!(uniform_sample(1, 1).ids(), &[0]);
        assert_eq!(uniform_sample(80, 1).ids(), &[40]);
    }

    #[test]
    fn uniform_sample_window_maps_positions() {
        let w = FrameWindow::new(vec![10, 11, 12, 13, 20, 30]).unwrap();
        assert_eq!(uniform_sample_window(&w, 2).ids(), &[11, 20]);
        assert_eq!(uniform_sample_window(&w, 99), w);
    }

    #[test]
    fn frame_window_rejects_unsorted_and_duplicates() {
        assert!(FrameWindow::new(vec![1, 1]).is_err());
        assert!(FrameWindow::new(vec![3, 2]).is_err());
        assert!(serde_json::from_str::<FrameWindow>("[4,2]").is_err());
        assert!(FrameWindow::new(vec![]).unwrap().is_empty());
        assert!(FrameWindow::new(vec![0, 5]).unwrap().check_within(5).is_err());
    }

    #[test]
    fn seconds_conversion() {
        let v = VideoMeta::new("v", 40, 2.0).unwrap();
        assert_eq!(v.frame_at(3.7), 7);
        assert_eq!(v.frame_at(-1.0), 0);
        assert_eq!(v.frame_at(1e9), 39);
        assert_eq!(v.time_of(7), 3.5);
        let w = FrameWindow::new(vec![4, 5, 9]).unwrap();
        assert_eq!(w.to_seconds(2.0), Some((2.0, 5.0)));
    }

    #[test]
    fn video_meta_invariants() {
        assert!(VideoMeta::new("v", 0, 1.0).is_err());
        assert!(VideoMeta::new("v", 3, 0.0).is_err());
        let mut v = VideoMeta::new("v", 30, 1.0).unwrap();
        v.duration_s = 31.0;
        assert!(v.validate().is_ok());
        v.duration_s = 32.5;
        assert!(v.validate().is_err());
    }

    #[test]
    fn qa_item_validation() {
        let mc = QAItem::multiple_choice("q?", vec!["a".into(), "b".into()], 1);
        assert!(mc.validate().is_ok());
        let out_of_range = QAItem::multiple_choice("q?", vec!["a".into()], 1);
        assert!(out_of_range.validate().is_err());
        let none = QAItem { question: "q?".into(), ..Default::default() };
        assert!(none.validate().is_err());
        let mut open = QAItem::open_ended("q?", vec!["x".into()]);
        open.gt_window_s = Some((3.0, 1.0));
        assert!(open.validate().is_err());
    }

    #[test]
    fn enums_parse_and_serialize() {
        assert_eq!("WHY".parse::<QAType>().unwrap(), QAType::Why);
        assert_eq!("while".parse::<TemporalConjunction>().unwrap(), TemporalConjunction::While);
        assert_eq!(serde_json::to_string(&TemporalConjunction::While).unwrap(), "\"while\"");
        assert!("sideways".parse::<TemporalRegion>().is_err());
        assert_eq!("1,0,1".parse::<StageMask>().unwrap(), StageMask::new(true, false, true));
        assert_eq!("110".parse::<StageMask>().unwrap().bits(), [1, 1, 0]);
        assert!("1,2,1".parse::<StageMask>().is_err());
    }

    fn arb_memory() -> impl Strategy<Value = MemoryState> {
        (
            prop::collection::btree_set(0usize..500, 0..40),
            "[a-zA-Z ?'\"\\\\é]{0,40}",
            prop::collection::vec("[a-z ]{1,20}", 0..=2),
            prop::sample::select(TemporalConjunction::ALL.to_vec()),
            prop::sample::select(QAType::ALL.to_vec()),
            any::<bool>(),
            prop::collection::btree_map("[a-z_0-9]{1,10}", ".{0,20}", 0..4),
            prop::option::of(prop::collection::btree_set(0usize..500, 1..5)),
        )
            .prop_map(|(ids, question, event_queue, conjunction, qa_type, require_ocr, extra, grounded)| MemoryState {
                frame_ids: FrameWindow::new(ids.into_iter().collect()).unwrap(),
                question,
                event_queue,
                conjunction,
                qa_type,
                require_ocr,
                extra,
                grounded_window: grounded.map(|g| FrameWindow::new(g.into_iter().collect()).unwrap()),
            })
    }

    proptest! {
        #[test]
        fn uniform_sample_sorted_unique_in_range(fc in 1usize..5000, n in 1usize..400) {
            let w = uniform_sample(fc, n);
            prop_assert_eq!(w.len(), n.min(fc));
            prop_assert!(w.ids().windows(2).all(|p| p[0] < p[1]));
            prop_assert!(w.ids().iter().all(|&f| f < fc));
            prop_assert_eq!(w, uniform_sample(fc, n));
        }

        #[test]
        fn memory_round_trips_through_json(m in arb_memory()) {
            let text = serde_json::to_string(&m).unwrap();
            let back: MemoryState = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn memory_field_names_are_snake_case() {
        let v = VideoMeta::new("v", 3, 1.0).unwrap();
        let m = MemoryState::initial(&v, "q");
        let json = serde_json::to_value(&m).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(
            keys,
            ["conjunction", "event_queue", "extra", "frame_ids", "grounded_window", "qa_type", "question", "require_ocr"]
        );
        assert_eq!(json["frame_ids"], serde_json::json!([0, 1, 2]));
    }
}
