//! Record and replay of backend sessions.
//!
//! A recording is a JSON-lines file alternating request and response.
//! Replay matches on method, video id, frame id and args (ids are ignored),
//! so it does not depend on the order in which requests arrive.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde_json::json;

use super::{ErrorKind, ToolBackend, ToolRequest, ToolResponse};

pub(super) const REPLAY_MISS: &str = "replay miss";

/// Canonical lookup key. `serde_json` maps are ordered, so key order in the
/// original request does not matter.
pub fn request_key(req: &ToolRequest) -> String {
    json!({
        "method": req.method,
        "video_id": req.video_id,
        "frame_id": req.frame_id,
        "args": req.args,
    })
    .to_string()
}

/// Forwards to a live backend and appends every exchange to a file.
pub struct RecordingBackend {
    inner: Arc<dyn ToolBackend>,
    out: Mutex<(BufWriter<File>, usize)>,
}

impl RecordingBackend {
    pub fn create(path: &Path, inner: Arc<dyn ToolBackend>) -> io::Result<Self> {
        let file = File::create(path)?;
        Ok(Self { inner, out: Mutex::new((BufWriter::new(file), 0)) })
    }

    /// Number of recorded pairs.
    pub fn pairs(&self) -> usize {
        self.out.lock().unwrap_or_else(|e| e.into_inner()).1
    }

    pub fn flush(&self) -> io::Result<()> {
        self.out.lock().unwrap_or_else(|e| e.into_inner()).0.flush()
    }
}

impl ToolBackend for RecordingBackend {
    fn dispatch(&self, req: &ToolRequest) -> ToolResponse {
        let resp = self.inner.dispatch(req);
        let mut guard = self.out.lock().unwrap_or_else(|e| e.into_inner());
        let (w, n) = &mut *guard;
        let written = serde_json::to_string(req)
            .and_then(|r| serde_json::to_string(&resp).map(|s| (r, s)))
            .map_err(io::Error::other)
            .and_then(|(r, s)| writeln!(w, "{r}\n{s}").and_then(|_| w.flush()));
        match written {
            Ok(()) => {
                *n += 1;
                resp
            }
            Err(e) => ToolResponse::failure(req.id, ErrorKind::Transport, format!("recording failed: {e}")),
        }
    }

    fn describe(&self) -> String {
        format!("recording {}", self.inner.describe())
    }
}

/// Answers requests from a recording; unmatched requests are errors.
#[derive(Debug)]
pub struct ReplayBackend {
    answers: HashMap<String, ToolResponse>,
    pairs: usize,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|m| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let lines: Vec<(usize, &str)> =
            text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l)).collect();
        if !lines.len().is_multiple_of(2) {
            return Err("recording has an unpaired request line".into());
        }
        let mut answers = HashMap::new();
        for pair in lines.chunks(2) {
            let (rn, rl) = pair[0];
            let (sn, sl) = pair[1];
            let req: ToolRequest = serde_json::from_str(rl).map_err(|e| format!("line {rn}: bad request: {e}"))?;
            let resp: ToolResponse = serde_json::from_str(sl).map_err(|e| format!("line {sn}: bad response: {e}"))?;
            if resp.id != req.id {
                return Err(format!("line {sn}: response id {} does not match request id {}", resp.id, req.id));
            }
            answers.entry(request_key(&req)).or_insert(resp);
        }
        Ok(Self { answers, pairs: lines.len() / 2 })
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }
}

impl ToolBackend for ReplayBackend {
    fn dispatch(&self, req: &ToolRequest) -> ToolResponse {
        let key = request_key(req);
        match self.answers.get(&key) {
            Some(resp) => ToolResponse { id: req.id, ..resp.clone() },
            None => ToolResponse::failure(req.id, ErrorKind::Backend, format!("{REPLAY_MISS}: {key}")),
        }
    }

    fn describe(&self) -> String {
        format!("replay ({} pairs)", self.pairs)
    }
}

pub fn record_session(path: &Path, live: Arc<dyn ToolBackend>) -> io::Result<RecordingBackend> {
    RecordingBackend::create(path, live)
}

pub fn replay_session(path: &Path) -> io::Result<ReplayBackend> {
    ReplayBackend::load(path)
}
