//! Streaming JSONL ingestion of source annotations.
//!
//! Input lines look like
//!
//! ```json
//! {"id": "q1", "images": ["a.jpg", {"uri": "b.jpg", "width": 640, "height": 480}],
//!  "question": "...", "answer": "...", "options": ["..."],
//!  "entity_boxes": {"person1": [x0, y0, x1, y1]}, "video_frame_count": 240,
//!  "extra": {"quadrant": "top left"}}
//! ```
//!
//! Bad lines are recorded in the [`IngestReport`] and skipped.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{BufRead, BufReader};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CropRect, ImageAssetSpec, SourceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    #[default]
    Generic,
    Vqa,
    Video,
    EntityBoxes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub adapter: AdapterKind,
    pub path: PathBuf,
    /// Template bank key.
    pub task: String,
    pub no_exemplars: bool,
    pub n_shots: u32,
}

/// Which construction path a record takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Plain,
    Video,
    Entity,
}

pub fn route(record: &SourceRecord, descriptor: &DatasetDescriptor) -> Route {
    match descriptor.adapter {
        AdapterKind::Video => Route::Video,
        AdapterKind::EntityBoxes => Route::Entity,
        AdapterKind::Vqa => Route::Plain,
        AdapterKind::Generic => {
            if record.video_frame_count.is_some() {
                Route::Video
            } else if record.entity_boxes.is_some() {
                Route::Entity
            } else {
                Route::Plain
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based line number.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct IngestReport {
    pub accepted: u64,
    pub rejected: u64,
    pub rejections: Vec<Rejection>,
}

impl IngestReport {
    pub fn lines(&self) -> u64 {
        self.accepted + self.rejected
    }

    /// Combines reports of disjoint inputs.
    pub fn merge(mut self, other: IngestReport) -> IngestReport {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.rejections.extend(other.rejections);
        self
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IdValue {
    Text(String),
    Number(serde_json::Number),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum InputImage {
    Uri(String),
    Spec {
        uri: String,
        width: Option<u32>,
        height: Option<u32>,
    },
}

impl InputImage {
    fn into_asset(self) -> std::result::Result<ImageAssetSpec, String> {
        match self {
            InputImage::Uri(uri) => Ok(ImageAssetSpec::file(uri)),
            InputImage::Spec { uri, width, height } => {
                let asset = ImageAssetSpec::file(uri);
                match (width, height) {
                    (Some(w), Some(h)) => Ok(asset.with_size(w, h)),
                    (None, None) => Ok(asset),
                    _ => Err("image width and height must be given together".into()),
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct InputLine {
    id: Option<IdValue>,
    #[serde(default)]
    images: Vec<InputImage>,
    video: Option<InputImage>,
    question: Option<String>,
    answer: Option<String>,
    options: Option<Vec<String>>,
    entity_boxes: Option<BTreeMap<String, [u32; 4]>>,
    video_frame_count: Option<u32>,
    #[serde(default)]
    extra: BTreeMap<String, String>,
}

/// Opens `descriptor.path` and streams its records.
pub fn ingest(descriptor: &DatasetDescriptor) -> Result<Ingest<BufReader<File>>> {
    let file = File::open(&descriptor.path).map_err(|e| Error::io(&descriptor.path, e))?;
    Ok(Ingest::new(descriptor.clone(), BufReader::new(file)))
}

/// Record iterator over one JSONL source. Read failures end the stream and
/// are available from [`Ingest::io_error`].
pub struct Ingest<R> {
    descriptor: DatasetDescriptor,
    reader: R,
    buf: Vec<u8>,
    line: u64,
    // 64-bit fingerprints of accepted ids, when deduplicating
    seen: Option<HashSet<u64>>,
    report: IngestReport,
    io_error: Option<Error>,
}

impl<R: BufRead> Ingest<R> {
    pub fn new(descriptor: DatasetDescriptor, reader: R) -> Self {
        Ingest {
            descriptor,
            reader,
            buf: Vec::with_capacity(4096),
            line: 0,
            seen: None,
            report: IngestReport::default(),
            io_error: None,
        }
    }

    /// Also rejects lines whose id was already accepted. Costs a few bytes
    /// per accepted line, so the stream is no longer constant-memory.
    pub fn reject_duplicate_ids(mut self) -> Self {
        self.seen = Some(HashSet::new());
        self
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    pub fn into_report(self) -> Result<IngestReport> {
        match self.io_error {
            Some(e) => Err(e),
            None => Ok(self.report),
        }
    }

    pub fn io_error(&self) -> Option<&Error> {
        self.io_error.as_ref()
    }

    fn reject(&mut self, reason: impl Into<String>) {
        self.report.rejected += 1;
        self.report.rejections.push(Rejection {
            line: self.line,
            reason: reason.into(),
        });
    }

    fn parse_line(&self, bytes: &[u8]) -> std::result::Result<SourceRecord, String> {
        let text = std::str::from_utf8(bytes).map_err(|_| "invalid UTF-8".to_string())?;
        if text.trim().is_empty() {
            return Err("empty line".into());
        }
        let input: InputLine = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
        build_record(&self.descriptor, input)
    }
}

impl<R: BufRead> Iterator for Ingest<R> {
    type Item = SourceRecord;

    fn next(&mut self) -> Option<SourceRecord> {
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.io_error = Some(Error::io(&self.descriptor.path, e));
                    return None;
                }
            }
            self.line += 1;
            let mut bytes = self.buf.as_slice();
            bytes = bytes.strip_suffix(b"\n").unwrap_or(bytes);
            bytes = bytes.strip_suffix(b"\r").unwrap_or(bytes);
            match self.parse_line(bytes) {
                Ok(record) => {
                    if let Some(seen) = &mut self.seen {
                        let mut h = DefaultHasher::new();
                        record.id.hash(&mut h);
                        if !seen.insert(h.finish()) {
                            self.reject(format!("duplicate id {:?}", record.id));
                            continue;
                        }
                    }
                    self.report.accepted += 1;
                    return Some(record);
                }
                Err(reason) => self.reject(reason),
            }
        }
    }
}

fn build_record(desc: &DatasetDescriptor, input: InputLine) -> std::result::Result<SourceRecord, String> {
    let id = match input.id {
        Some(IdValue::Text(s)) => s,
        Some(IdValue::Number(n)) => n.to_string(),
        None => return Err("missing id".into()),
    };
    if id.is_empty() {
        return Err("empty id".into());
    }
    let answer = input.answer.ok_or("missing answer")?;

    let mut images = input
        .images
        .into_iter()
        .map(InputImage::into_asset)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(video) = input.video {
        if !images.is_empty() {
            return Err("both video and images given".into());
        }
        images.push(video.into_asset()?);
    }

    let entity_boxes = match input.entity_boxes {
        Some(boxes) => Some(
            boxes
                .into_iter()
                .map(|(name, [x0, y0, x1, y1])| {
                    CropRect::new(x0, y0, x1, y1)
                        .map(|r| (name.clone(), r))
                        .map_err(|_| format!("invalid box for {name:?}"))
                })
                .collect::<std::result::Result<BTreeMap<_, _>, _>>()?,
        ),
        None => None,
    };

    match desc.adapter {
        AdapterKind::Generic => {}
        AdapterKind::Vqa => {
            if input.question.is_none() {
                return Err("missing question".into());
            }
            if images.is_empty() {
                return Err("no images".into());
            }
        }
        AdapterKind::Video => {
            match input.video_frame_count {
                None => return Err("missing frame count".into()),
                Some(0) => return Err("zero frame count".into()),
                Some(_) => {}
            }
            if images.len() != 1 {
                return Err("video record needs exactly one video asset".into());
            }
        }
        AdapterKind::EntityBoxes => {
            if input.question.is_none() {
                return Err("missing question".into());
            }
            if entity_boxes.as_ref().is_none_or(BTreeMap::is_empty) {
                return Err("missing entity boxes".into());
            }
            if images.len() != 1 {
                return Err("entity record needs exactly one scene image".into());
            }
        }
    }
    if input.video_frame_count.is_some() && images.len() != 1 {
        return Err("video record needs exactly one video asset".into());
    }
    if entity_boxes.is_some() && images.len() != 1 {
        return Err("entity record needs exactly one scene image".into());
    }

    let record = SourceRecord {
        id,
        dataset: desc.name.clone(),
        images,
        question: input.question,
        answer,
        options: input.options,
        entity_boxes,
        video_frame_count: input.video_frame_count,
        extra: input.extra,
    };
    if let Some(v) = record.violations().first() {
        return Err(v.to_string());
    }
    Ok(record)
}
