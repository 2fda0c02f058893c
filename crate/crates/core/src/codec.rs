//! JSON Lines encoding of [`InterleavedInstance`].
//!
//! One record per line with a fixed field order
//! (`id, dataset, segments, target, n_exemplars, n_images, meta`) and sorted
//! meta keys, so equal instances always encode to identical bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AssetKind, CropRect, ImageAssetSpec, InterleavedInstance, Segment, Violation};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceWire {
    id: String,
    dataset: String,
    segments: Vec<SegmentWire>,
    target: String,
    n_exemplars: u32,
    n_images: u32,
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum SegmentKind {
    Text,
    Image,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentWire {
    #[serde(rename = "type")]
    kind: SegmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    proxy: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    asset: Option<AssetWire>,
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum AssetTag {
    File,
    VideoFrame,
    Crop,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssetWire {
    kind: AssetTag,
    uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rect: Option<[u32; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<Box<AssetWire>>,
}

impl From<&ImageAssetSpec> for AssetWire {
    fn from(asset: &ImageAssetSpec) -> Self {
        let mut wire = AssetWire {
            kind: AssetTag::File,
            uri: asset.uri.clone(),
            width: asset.size.map(|s| s.0),
            height: asset.size.map(|s| s.1),
            frame_index: None,
            frame_count: None,
            rect: None,
            parent: None,
        };
        match &asset.kind {
            AssetKind::File => {}
            AssetKind::VideoFrame {
                frame_index,
                frame_count,
            } => {
                wire.kind = AssetTag::VideoFrame;
                wire.frame_index = Some(*frame_index);
                wire.frame_count = *frame_count;
            }
            AssetKind::Crop { rect, parent } => {
                wire.kind = AssetTag::Crop;
                wire.rect = Some(rect.as_array());
                wire.parent = Some(Box::new(AssetWire::from(parent.as_ref())));
            }
        }
        wire
    }
}

impl AssetWire {
    fn into_asset(self, path: &str, out: &mut Vec<Violation>) -> ImageAssetSpec {
        let mut malformed = |detail: &str| {
            out.push(Violation::Malformed {
                path: path.to_string(),
                detail: detail.to_string(),
            })
        };
        let size = match (self.width, self.height) {
            (Some(w), Some(h)) => Some((w, h)),
            (None, None) => None,
            _ => {
                malformed("width and height must be given together");
                None
            }
        };
        let kind = match self.kind {
            AssetTag::File => {
                if self.frame_index.is_some() || self.frame_count.is_some() {
                    malformed("file asset carries frame fields");
                }
                if self.rect.is_some() || self.parent.is_some() {
                    malformed("file asset carries crop fields");
                }
                AssetKind::File
            }
            AssetTag::VideoFrame => {
                if self.rect.is_some() || self.parent.is_some() {
                    malformed("video_frame asset carries crop fields");
                }
                let frame_index = self.frame_index.unwrap_or_else(|| {
                    malformed("video_frame asset lacks frame_index");
                    0
                });
                AssetKind::VideoFrame {
                    frame_index,
                    frame_count: self.frame_count,
                }
            }
            AssetTag::Crop => {
                if self.frame_index.is_some() || self.frame_count.is_some() {
                    malformed("crop asset carries frame fields");
                }
                let [x0, y0, x1, y1] = self.rect.unwrap_or_else(|| {
                    malformed("crop asset lacks rect");
                    [0, 0, 1, 1]
                });
                let parent = match self.parent {
                    Some(p) => p.into_asset(&format!("{path}.parent"), out),
                    None => {
                        out.push(Violation::Malformed {
                            path: path.to_string(),
                            detail: "crop asset lacks parent".to_string(),
                        });
                        ImageAssetSpec::file("?")
                    }
                };
                AssetKind::Crop {
                    rect: CropRect { x0, y0, x1, y1 },
                    parent: Box::new(parent),
                }
            }
        };
        ImageAssetSpec {
            uri: self.uri,
            size,
            kind,
        }
    }
}

fn to_wire(instance: &InterleavedInstance) -> InstanceWire {
    InstanceWire {
        id: instance.id.clone(),
        dataset: instance.dataset.clone(),
        segments: instance
            .segments
            .iter()
            .map(|seg| match seg {
                Segment::Text(t) => SegmentWire {
                    kind: SegmentKind::Text,
                    text: Some(t.clone()),
                    proxy: None,
                    asset: None,
                },
                Segment::Image { proxy, asset } => SegmentWire {
                    kind: SegmentKind::Image,
                    text: None,
                    proxy: Some(*proxy),
                    asset: Some(asset.into()),
                },
            })
            .collect(),
        target: instance.target.clone(),
        n_exemplars: instance.n_exemplars,
        n_images: instance.n_images,
        meta: instance.meta.clone(),
    }
}

fn from_wire(wire: InstanceWire) -> (InterleavedInstance, Vec<Violation>) {
    let mut violations = Vec::new();
    let segments = wire
        .segments
        .into_iter()
        .enumerate()
        .map(|(i, seg)| {
            let path = format!("segments[{i}]");
            match seg.kind {
                SegmentKind::Text => {
                    if seg.proxy.is_some() || seg.asset.is_some() {
                        violations.push(Violation::Malformed {
                            path: path.clone(),
                            detail: "text segment carries image fields".into(),
                        });
                    }
                    let text = seg.text.unwrap_or_else(|| {
                        violations.push(Violation::Malformed {
                            path,
                            detail: "text segment lacks text".into(),
                        });
                        String::new()
                    });
                    Segment::Text(text)
                }
                SegmentKind::Image => {
                    if seg.text.is_some() {
                        violations.push(Violation::Malformed {
                            path: path.clone(),
                            detail: "image segment carries text".into(),
                        });
                    }
                    let proxy = seg.proxy.unwrap_or_else(|| {
                        violations.push(Violation::Malformed {
                            path: path.clone(),
                            detail: "image segment lacks proxy".into(),
                        });
                        u32::MAX
                    });
                    let asset = match seg.asset {
                        Some(a) => a.into_asset(&format!("{path}.asset"), &mut violations),
                        None => {
                            violations.push(Violation::Malformed {
                                path,
                                detail: "image segment lacks asset".into(),
                            });
                            ImageAssetSpec::file("?")
                        }
                    };
                    Segment::Image { proxy, asset }
                }
            }
        })
        .collect();
    let instance = InterleavedInstance {
        id: wire.id,
        dataset: wire.dataset,
        segments,
        target: wire.target,
        n_exemplars: wire.n_exemplars,
        n_images: wire.n_images,
        meta: wire.meta,
    };
    (instance, violations)
}

/// Encodes `instance` as one newline-terminated JSON line, validating first.
pub fn serialize(instance: &InterleavedInstance) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(256);
    serialize_into(instance, &mut out)?;
    Ok(out)
}

/// Like [`serialize`], appending to `out`.
pub fn serialize_into(instance: &InterleavedInstance, out: &mut Vec<u8>) -> Result<()> {
    instance.validate()?;
    serde_json::to_writer(&mut *out, &to_wire(instance)).expect("in-memory JSON encoding");
    out.push(b'\n');
    Ok(())
}

/// Decodes one JSON line (a trailing newline is optional).
pub fn deserialize(line: &[u8]) -> Result<InterleavedInstance> {
    let body = line.strip_suffix(b"\n").unwrap_or(line);
    let body = body.strip_suffix(b"\r").unwrap_or(body);
    let wire: InstanceWire = serde_json::from_slice(body).map_err(|e| Error::Parse {
        offset: byte_offset(body, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let (instance, mut violations) = from_wire(wire);
    violations.extend(instance.violations());
    if violations.is_empty() {
        Ok(instance)
    } else {
        Err(Error::InvariantViolation(violations))
    }
}

// serde_json reports 1-based line and column; column counts bytes.
fn byte_offset(body: &[u8], line: usize, column: usize) -> usize {
    let line_start: usize = body
        .split(|&b| b == b'\n')
        .take(line.saturating_sub(1))
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(body.len())
}
