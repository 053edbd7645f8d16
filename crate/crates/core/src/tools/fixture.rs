//! Synthetic per-frame ground truth backing the mock tools.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::types::VideoMeta;

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("fixture {video_id}: {message}")]
    Invalid { video_id: String, message: String },
    #[error("duplicate fixture for video {0}")]
    Duplicate(String),
}

/// Normalized `(x0, y0, x1, y1)` box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox([f64; 4]);

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, String> {
        let b = Self([x0, y0, x1, y1]);
        b.validate()?;
        Ok(b)
    }

    pub fn coords(&self) -> [f64; 4] {
        self.0
    }

    pub fn validate(&self) -> Result<(), String> {
        let [x0, y0, x1, y1] = self.0;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if [x0, y0, x1, y1].into_iter().all(unit) && x0 < x1 && y0 < y1 {
            Ok(())
        } else {
            Err(format!("invalid box {:?}", self.0))
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = String;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: usize,
    #[serde(default)]
    pub objects: Vec<ObjectRecord>,
    #[serde(default)]
    pub actions: Vec<String>,
    pub caption: String,
    #[serde(default)]
    pub ocr_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFixture {
    pub video_id: String,
    pub fps: f64,
    pub frames: Vec<FrameRecord>,
    #[serde(default)]
    pub qa_notes: Option<String>,
}

impl WorldFixture {
    pub fn validate(&self) -> Result<(), FixtureError> {
        let invalid = |message: String| FixtureError::Invalid { video_id: self.video_id.clone(), message };
        if self.video_id.is_empty() {
            return Err(invalid("empty video_id".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(invalid(format!("fps {} must be > 0", self.fps)));
        }
        if self.frames.is_empty() {
            return Err(invalid("no frames".into()));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.frame_id != i {
                return Err(invalid(format!("frame ids must be contiguous from 0; found {} at {i}", frame.frame_id)));
            }
            if frame.caption.trim().is_empty() {
                return Err(invalid(format!("frame {i} has an empty caption")));
            }
            for obj in &frame.objects {
                obj.bbox.validate().map_err(|m| invalid(format!("frame {i} object {}: {m}", obj.name)))?;
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> VideoMeta {
        VideoMeta {
            video_id: self.video_id.clone(),
            frame_count: self.frames.len(),
            fps: self.fps,
            duration_s: self.frames.len() as f64 / self.fps,
        }
    }

    pub fn frame(&self, frame_id: usize) -> Option<&FrameRecord> {
        self.frames.get(frame_id)
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = fs::read_to_string(path).map_err(|source| FixtureError::Io { path: path.into(), source })?;
        let fixture: WorldFixture =
            serde_json::from_str(&text).map_err(|source| FixtureError::Json { path: path.into(), source })?;
        fixture.validate()?;
        Ok(fixture)
    }
}

/// A set of fixtures keyed by video id.
#[derive(Debug, Clone, Default)]
pub struct FixtureCorpus {
    fixtures: BTreeMap<String, WorldFixture>,
}

impl FixtureCorpus {
    pub fn new(fixtures: impl IntoIterator<Item = WorldFixture>) -> Result<Self, FixtureError> {
        let mut map = BTreeMap::new();
        for f in fixtures {
            f.validate()?;
            if map.contains_key(&f.video_id) {
                return Err(FixtureError::Duplicate(f.video_id));
            }
            map.insert(f.video_id.clone(), f);
        }
        Ok(Self { fixtures: map })
    }

    /// Loads every `*.json` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, FixtureError> {
        let io = |source| FixtureError::Io { path: dir.into(), source };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let fixtures = paths.iter().map(|p| WorldFixture::load(p)).collect::<Result<Vec<_>, _>>()?;
        Self::new(fixtures)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), FixtureError> {
        let io = |source| FixtureError::Io { path: dir.into(), source };
        fs::create_dir_all(dir).map_err(io)?;
        for f in self.fixtures.values() {
            let path = dir.join(format!("{}.json", f.video_id));
            let text = serde_json::to_string_pretty(f).expect("fixture serializes");
            fs::write(&path, text + "\n").map_err(|source| FixtureError::Io { path, source })?;
        }
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Option<&WorldFixture> {
        self.fixtures.get(video_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &WorldFixture> {
        self.fixtures.values()
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    pub fn metas(&self) -> BTreeMap<String, VideoMeta> {
        self.fixtures.iter().map(|(k, f)| (k.clone(), f.meta())).collect()
    }
}
