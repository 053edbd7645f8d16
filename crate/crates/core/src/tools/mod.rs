//! The module library: six tool methods behind one dispatch contract.
//!
//! Backends implement [`ToolBackend`] and answer [`ToolRequest`]s with
//! [`ToolResponse`]s. [`ToolRegistry`] sits in front of a backend, assigns
//! request ids, validates both directions and keeps the session trace.
//! [`ToolSession`] adds typed helpers and per-stage call logging.

mod fixture;
mod mock;
mod replay;
mod wire;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

pub use fixture::{BBox, FixtureCorpus, FixtureError, FrameRecord, ObjectRecord, WorldFixture};
pub use mock::{mock_complete, mock_localize, mock_score, mock_vqa, MockBackend};
pub use replay::{record_session, replay_session, request_key, RecordingBackend, ReplayBackend};
pub use wire::{handle_line, serve, MockServer, RemoteBackend};

use crate::types::ToolCallRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolMethod {
    Caption,
    Vqa,
    Localize,
    VerifyAction,
    Score,
    Complete,
}

impl ToolMethod {
    pub const ALL: [ToolMethod; 6] = [
        ToolMethod::Caption,
        ToolMethod::Vqa,
        ToolMethod::Localize,
        ToolMethod::VerifyAction,
        ToolMethod::Score,
        ToolMethod::Complete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolMethod::Caption => "caption",
            ToolMethod::Vqa => "vqa",
            ToolMethod::Localize => "localize",
            ToolMethod::VerifyAction => "verify_action",
            ToolMethod::Score => "score",
            ToolMethod::Complete => "complete",
        }
    }

    fn needs_frame(self) -> bool {
        matches!(self, ToolMethod::Caption | ToolMethod::Vqa | ToolMethod::Score | ToolMethod::VerifyAction)
    }
}

impl fmt::Display for ToolMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Wire-level request. Field names are part of the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub id: u64,
    pub method: ToolMethod,
    #[serde(default)]
    pub video_id: Option<String>,
    #[serde(default)]
    pub frame_id: Option<usize>,
    #[serde(default)]
    pub args: Map<String, Json>,
}

impl ToolRequest {
    pub fn new(method: ToolMethod, video_id: Option<&str>, frame_id: Option<usize>, args: Json) -> Self {
        let args = match args {
            Json::Object(m) => m,
            Json::Null => Map::new(),
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        Self { id: 0, method, video_id: video_id.map(str::to_owned), frame_id, args }
    }

    fn str_arg(&self, key: &str) -> Result<&str, String> {
        match self.args.get(key) {
            Some(Json::String(s)) => Ok(s),
            Some(_) => Err(format!("{} arg `{key}` must be a string", self.method)),
            None => Err(format!("{} requires arg `{key}`", self.method)),
        }
    }

    /// Frames listed in a localize request.
    pub fn frames_arg(&self) -> Result<Vec<usize>, String> {
        match self.args.get("frames") {
            Some(Json::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_u64()
                        .map(|f| f as usize)
                        .ok_or_else(|| "localize arg `frames` must hold non-negative integers".to_owned())
                })
                .collect(),
            Some(_) => Err("localize arg `frames` must be a list".into()),
            None => Err("localize requires arg `frames`".into()),
        }
    }

    /// Checks the method-specific required fields.
    pub fn validate(&self) -> Result<(), String> {
        if self.method.needs_frame() && self.frame_id.is_none() {
            return Err(format!("{} requires frame_id", self.method));
        }
        if self.method != ToolMethod::Complete && self.video_id.as_deref().is_none_or(str::is_empty) {
            return Err(format!("{} requires video_id", self.method));
        }
        match self.method {
            ToolMethod::Caption => {}
            ToolMethod::Vqa => {
                self.str_arg("question")?;
                if let Some(p) = self.args.get("prefix") {
                    if !p.is_string() {
                        return Err("vqa arg `prefix` must be a string".into());
                    }
                }
            }
            ToolMethod::Score => {
                self.str_arg("text")?;
            }
            ToolMethod::VerifyAction => {
                self.str_arg("action")?;
            }
            ToolMethod::Localize => {
                self.str_arg("object")?;
                self.frames_arg()?;
            }
            ToolMethod::Complete => {
                if self.str_arg("prompt")?.trim().is_empty() {
                    return Err("complete requires a non-empty prompt".into());
                }
            }
        }
        Ok(())
    }

    /// The args as they appear in stage traces: request args plus frame id.
    pub fn trace_args(&self) -> Json {
        let mut m = self.args.clone();
        if let Some(f) = self.frame_id {
            m.insert("frame_id".into(), json!(f));
        }
        Json::Object(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub id: u64,
    pub ok: bool,
    #[serde(default)]
    pub result: Json,
    #[serde(default)]
    pub error: Option<String>,
}

impl ToolResponse {
    pub fn success(id: u64, result: Json) -> Self {
        Self { id, ok: true, result, error: None }
    }

    pub fn failure(id: u64, kind: ErrorKind, message: impl fmt::Display) -> Self {
        Self { id, ok: false, result: Json::Null, error: Some(format!("{}: {message}", kind.prefix())) }
    }

    /// Checks `ok`/`error` consistency and the result shape for `method`.
    pub fn validate_for(&self, method: ToolMethod) -> Result<(), String> {
        match (self.ok, &self.error) {
            (true, Some(_)) => return Err("response has ok=true and an error".into()),
            (false, None) => return Err("response has ok=false without an error".into()),
            (false, Some(_)) => return Ok(()),
            (true, None) => {}
        }
        let r = &self.result;
        match method {
            ToolMethod::Caption | ToolMethod::Vqa | ToolMethod::Complete => {
                if !r.is_string() {
                    return Err(format!("{method} result must be text"));
                }
            }
            ToolMethod::Score => match r.as_f64() {
                Some(s) if (0.0..=1.0).contains(&s) => {}
                _ => return Err("score result must be a number in [0, 1]".into()),
            },
            ToolMethod::VerifyAction => {
                if !r.is_boolean() {
                    return Err("verify_action result must be a boolean".into());
                }
            }
            ToolMethod::Localize => {
                serde_json::from_value::<Vec<LocalizeHit>>(r.clone())
                    .map_err(|e| format!("localize result malformed: {e}"))?
                    .iter()
                    .try_for_each(|h| h.bbox.validate())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeHit {
    pub frame_id: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    Transport,
    Backend,
    Invalid,
}

impl ErrorKind {
    pub fn prefix(self) -> &'static str {
        match self {
            ErrorKind::Transport => "transport",
            ErrorKind::Backend => "backend",
            ErrorKind::Invalid => "invalid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}: {message}", kind.prefix())]
pub struct ToolError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ToolError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    /// Splits a prefixed error string from a response.
    pub fn from_wire(text: &str) -> Self {
        for kind in [ErrorKind::Transport, ErrorKind::Backend, ErrorKind::Invalid] {
            if let Some(rest) = text.strip_prefix(kind.prefix()).and_then(|r| r.strip_prefix(':')) {
                return Self::new(kind, rest.trim_start());
            }
        }
        Self::new(ErrorKind::Backend, text)
    }

    pub fn is_replay_miss(&self) -> bool {
        self.kind == ErrorKind::Backend && self.message.starts_with(replay::REPLAY_MISS)
    }
}

/// Threshold a text-image score must reach for a frame to pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ScoreThreshold(f64);

impl ScoreThreshold {
    pub fn new(value: f64) -> Result<Self, String> {
        if value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(format!("score threshold {value} must lie in (0, 1)"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn passes(self, score: f64) -> bool {
        score >= self.0
    }
}

impl Default for ScoreThreshold {
    fn default() -> Self {
        Self(0.7)
    }
}

impl TryFrom<f64> for ScoreThreshold {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ScoreThreshold> for f64 {
    fn from(t: ScoreThreshold) -> f64 {
        t.0
    }
}

/// Anything that can answer tool requests.
pub trait ToolBackend: Send + Sync {
    fn dispatch(&self, req: &ToolRequest) -> ToolResponse;

    fn describe(&self) -> String {
        "backend".into()
    }
}

impl<T: ToolBackend + ?Sized> ToolBackend for Arc<T> {
    fn dispatch(&self, req: &ToolRequest) -> ToolResponse {
        (**self).dispatch(req)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Thread-safe front end to a backend.
pub struct ToolRegistry {
    backend: Arc<dyn ToolBackend>,
    next_id: AtomicU64,
    trace: Mutex<Vec<(ToolRequest, ToolResponse)>>,
}

impl ToolRegistry {
    pub fn new(backend: Arc<dyn ToolBackend>) -> Self {
        Self { backend, next_id: AtomicU64::new(1), trace: Mutex::new(Vec::new()) }
    }

    pub fn backend(&self) -> &Arc<dyn ToolBackend> {
        &self.backend
    }

    /// Sends one request. The id is assigned here; whatever id the caller
    /// set is overwritten.
    pub fn dispatch(&self, mut req: ToolRequest) -> Result<Json, ToolError> {
        req.id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let resp = match req.validate() {
            Err(msg) => ToolResponse::failure(req.id, ErrorKind::Invalid, msg),
            Ok(()) => {
                let mut resp = self.backend.dispatch(&req);
                if resp.id != req.id {
                    resp = ToolResponse::failure(
                        req.id,
                        ErrorKind::Transport,
                        format!("response id {} does not match request id {}", resp.id, req.id),
                    );
                } else if let Err(msg) = resp.validate_for(req.method) {
                    resp = ToolResponse::failure(req.id, ErrorKind::Backend, msg);
                }
                resp
            }
        };
        let outcome = if resp.ok {
            Ok(resp.result.clone())
        } else {
            Err(ToolError::from_wire(resp.error.as_deref().unwrap_or("backend: unknown error")))
        };
        self.trace.lock().unwrap_or_else(|e| e.into_inner()).push((req, resp));
        outcome
    }

    pub fn trace_len(&self) -> usize {
        self.trace.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn take_trace(&self) -> Vec<(ToolRequest, ToolResponse)> {
        std::mem::take(&mut *self.trace.lock().unwrap_or_else(|e| e.into_inner()))
    }
}

/// Typed access to the registry for one video, logging every call.
pub struct ToolSession<'r> {
    registry: &'r ToolRegistry,
    video_id: String,
    calls: Vec<ToolCallRecord>,
}

impl<'r> ToolSession<'r> {
    pub fn new(registry: &'r ToolRegistry, video_id: &str) -> Self {
        Self { registry, video_id: video_id.to_owned(), calls: Vec::new() }
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn take_calls(&mut self) -> Vec<ToolCallRecord> {
        std::mem::take(&mut self.calls)
    }

    pub fn calls(&self) -> &[ToolCallRecord] {
        &self.calls
    }

    fn call(&mut self, method: ToolMethod, frame_id: Option<usize>, args: Json) -> Result<Json, ToolError> {
        let req = ToolRequest::new(method, Some(&self.video_id), frame_id, args);
        let trace_args = req.trace_args();
        let result = self.registry.dispatch(req)?;
        self.calls.push(ToolCallRecord { method: method.as_str().into(), args: trace_args, result: result.clone() });
        Ok(result)
    }

    pub fn caption(&mut self, frame: usize) -> Result<String, ToolError> {
        let r = self.call(ToolMethod::Caption, Some(frame), json!({}))?;
        Ok(r.as_str().unwrap_or_default().to_owned())
    }

    pub fn vqa(&mut self, frame: usize, question: &str, ocr: bool) -> Result<String, ToolError> {
        let mut args = json!({ "question": question });
        if ocr {
            args["prefix"] = json!("ocr");
        }
        let r = self.call(ToolMethod::Vqa, Some(frame), args)?;
        Ok(r.as_str().unwrap_or_default().to_owned())
    }

    pub fn localize(&mut self, object: &str, frames: &[usize], stage: &str) -> Result<Vec<LocalizeHit>, ToolError> {
        let r = self.call(ToolMethod::Localize, None, json!({ "object": object, "frames": frames, "stage": stage }))?;
        serde_json::from_value(r).map_err(|e| ToolError::new(ErrorKind::Backend, e.to_string()))
    }

    pub fn verify_action(&mut self, frame: usize, action: &str) -> Result<bool, ToolError> {
        let r = self.call(ToolMethod::VerifyAction, Some(frame), json!({ "action": action }))?;
        Ok(r.as_bool().unwrap_or(false))
    }

    pub fn score(&mut self, frame: usize, text: &str) -> Result<f64, ToolError> {
        let r = self.call(ToolMethod::Score, Some(frame), json!({ "text": text }))?;
        Ok(r.as_f64().unwrap_or(0.0))
    }

    pub fn complete(&mut self, prompt: &str) -> Result<String, ToolError> {
        let r = self.call(ToolMethod::Complete, None, json!({ "prompt": prompt }))?;
        Ok(r.as_str().unwrap_or_default().to_owned())
    }
}
