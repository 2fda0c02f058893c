//! Data model shared by every pipeline stage.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Value of the `format_version` meta key carried by every emitted record.
pub const FORMAT_VERSION: &str = "mic/1";

/// Meta key holding [`FORMAT_VERSION`].
pub const FORMAT_VERSION_KEY: &str = "format_version";

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CropRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl CropRect {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        let rect = CropRect { x0, y0, x1, y1 };
        if rect.is_valid() {
            Ok(rect)
        } else {
            Err(Error::InvariantViolation(vec![Violation::InvalidRect {
                rect: rect.to_string(),
            }]))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1
    }

    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    /// True when the rectangle lies inside a `width` x `height` image.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl fmt::Display for CropRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x0, self.y0, self.x1, self.y1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssetKind {
    File,
    VideoFrame {
        frame_index: u32,
        /// Frame count of the source video, when known.
        frame_count: Option<u32>,
    },
    Crop {
        rect: CropRect,
        parent: Box<ImageAssetSpec>,
    },
}

/// Symbolic reference to pixels. Nothing here is ever decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAssetSpec {
    pub uri: String,
    /// `(width, height)` in pixels, when known.
    pub size: Option<(u32, u32)>,
    pub kind: AssetKind,
}

impl ImageAssetSpec {
    pub fn file(uri: impl Into<String>) -> Self {
        ImageAssetSpec {
            uri: uri.into(),
            size: None,
            kind: AssetKind::File,
        }
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.size = Some((width, height));
        self
    }

    pub fn video_frame(uri: impl Into<String>, frame_index: u32, frame_count: Option<u32>) -> Self {
        ImageAssetSpec {
            uri: uri.into(),
            size: None,
            kind: AssetKind::VideoFrame {
                frame_index,
                frame_count,
            },
        }
    }

    /// Crop of `parent`. The uri is derived from the parent's so that distinct
    /// crops of one scene stay distinguishable downstream.
    pub fn crop(parent: &ImageAssetSpec, rect: CropRect) -> Self {
        ImageAssetSpec {
            uri: format!(
                "{}#crop={},{},{},{}",
                parent.uri, rect.x0, rect.y0, rect.x1, rect.y1
            ),
            size: Some((rect.width(), rect.height())),
            kind: AssetKind::Crop {
                rect,
                parent: Box::new(parent.clone()),
            },
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        self.collect_violations(&mut out);
        out
    }

    fn collect_violations(&self, out: &mut Vec<Violation>) {
        if self.uri.is_empty() {
            out.push(Violation::EmptyUri);
        }
        match &self.kind {
            AssetKind::File => {}
            AssetKind::VideoFrame {
                frame_index,
                frame_count,
            } => {
                if let Some(count) = frame_count {
                    if frame_index >= count {
                        out.push(Violation::FrameOutOfRange {
                            uri: self.uri.clone(),
                            frame_index: *frame_index,
                            frame_count: *count,
                        });
                    }
                }
            }
            AssetKind::Crop { rect, parent } => {
                if !rect.is_valid() {
                    out.push(Violation::InvalidRect {
                        rect: rect.to_string(),
                    });
                }
                if let Some((w, h)) = parent.size {
                    if !rect.fits_within(w, h) {
                        out.push(Violation::RectOutOfBounds {
                            rect: rect.to_string(),
                            width: w,
                            height: h,
                        });
                    }
                }
                parent.collect_violations(out);
            }
        }
    }
}

/// One element of the interleaved sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Image { proxy: u32, asset: ImageAssetSpec },
}

impl Segment {
    pub fn text(s: impl Into<String>) -> Self {
        Segment::Text(s.into())
    }

    pub fn image(proxy: u32, asset: ImageAssetSpec) -> Self {
        Segment::Image { proxy, asset }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Segment::Text(t) => Some(t),
            Segment::Image { .. } => None,
        }
    }

    pub fn proxy(&self) -> Option<u32> {
        match self {
            Segment::Image { proxy, .. } => Some(*proxy),
            Segment::Text(_) => None,
        }
    }
}

/// One raw annotated example as read from a source dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SourceRecord {
    pub id: String,
    pub dataset: String,
    pub images: Vec<ImageAssetSpec>,
    pub question: Option<String>,
    pub answer: String,
    pub options: Option<Vec<String>>,
    pub entity_boxes: Option<BTreeMap<String, CropRect>>,
    pub video_frame_count: Option<u32>,
    /// Additional template values such as `quadrant` or `caption0`.
    pub extra: BTreeMap<String, String>,
}

impl SourceRecord {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push(Violation::EmptyId);
        }
        for image in &self.images {
            image.collect_violations(&mut out);
        }
        if let Some(boxes) = &self.entity_boxes {
            let bounds = self.images.first().and_then(|i| i.size);
            for (name, rect) in boxes {
                if !is_word_token(name) {
                    out.push(Violation::EntityName { name: name.clone() });
                }
                if !rect.is_valid() {
                    out.push(Violation::InvalidRect {
                        rect: rect.to_string(),
                    });
                } else if let Some((w, h)) = bounds {
                    if !rect.fits_within(w, h) {
                        out.push(Violation::RectOutOfBounds {
                            rect: rect.to_string(),
                            width: w,
                            height: h,
                        });
                    }
                }
            }
        }
        let texts = self
            .question
            .iter()
            .chain(std::iter::once(&self.answer))
            .chain(self.options.iter().flatten());
        for text in texts {
            if let Some(tok) = scan_proxy_tokens(text).next() {
                out.push(Violation::ReservedToken {
                    token: text[tok.start..tok.end].to_string(),
                });
            }
        }
        out
    }
}

/// True when `s` is a single nonempty run of word characters, the unit entity
/// names are matched on.
pub fn is_word_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_word_char)
}

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// A compiled training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterleavedInstance {
    pub id: String,
    pub dataset: String,
    pub segments: Vec<Segment>,
    pub target: String,
    pub n_exemplars: u32,
    pub n_images: u32,
    pub meta: BTreeMap<String, String>,
}

impl InterleavedInstance {
    /// Every violated invariant, in segment order.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push(Violation::EmptyId);
        }
        match self.meta.get(FORMAT_VERSION_KEY) {
            Some(v) if v == FORMAT_VERSION => {}
            other => out.push(Violation::FormatVersion {
                found: other.cloned(),
            }),
        }

        let image_count = self.segments.iter().filter(|s| s.proxy().is_some()).count();
        if image_count != self.n_images as usize {
            out.push(Violation::ImageCount {
                declared: self.n_images,
                found: image_count,
            });
        }
        let k = image_count as u64;

        let mut seen = vec![false; image_count];
        let mut ordinal = 0u32;
        for (i, seg) in self.segments.iter().enumerate() {
            match seg {
                Segment::Text(text) => {
                    if text.is_empty() {
                        out.push(Violation::EmptyText { segment: i });
                    }
                    let binding = match self.segments.get(i + 1) {
                        Some(Segment::Image { proxy, .. }) => Some(*proxy),
                        _ => None,
                    };
                    for tok in scan_proxy_tokens(text) {
                        let Some(n) = tok.index else {
                            out.push(Violation::UnknownProxy {
                                segment: i,
                                token: text[tok.start..tok.end].to_string(),
                            });
                            continue;
                        };
                        if n as u64 >= k {
                            out.push(Violation::UnknownProxy {
                                segment: i,
                                token: text[tok.start..tok.end].to_string(),
                            });
                            continue;
                        }
                        if seen[n as usize] {
                            continue;
                        }
                        let is_binding = binding == Some(n) && &text[tok.end..] == " ";
                        if !is_binding {
                            out.push(Violation::ForwardReference {
                                segment: i,
                                proxy: n,
                            });
                        }
                    }
                }
                Segment::Image { proxy, asset } => {
                    asset.collect_violations(&mut out);
                    if *proxy as u64 >= k {
                        out.push(Violation::ProxyOutOfRange {
                            segment: i,
                            proxy: *proxy,
                            n_images: image_count,
                        });
                    } else if seen[*proxy as usize] {
                        out.push(Violation::DuplicateProxy {
                            segment: i,
                            proxy: *proxy,
                        });
                    } else {
                        seen[*proxy as usize] = true;
                    }
                    if *proxy != ordinal {
                        out.push(Violation::ProxyOrder {
                            segment: i,
                            proxy: *proxy,
                            expected: ordinal,
                        });
                    }
                    ordinal += 1;
                    let token = proxy_token(*proxy);
                    let bound = i > 0
                        && self.segments[i - 1]
                            .as_text()
                            .and_then(|t| t.strip_suffix(' '))
                            .is_some_and(|t| t.ends_with(&token));
                    if !bound {
                        out.push(Violation::UnboundImage {
                            segment: i,
                            proxy: *proxy,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvariantViolation(violations))
        }
    }

    /// All text segments concatenated.
    pub fn rendered_text(&self) -> String {
        self.segments.iter().filter_map(Segment::as_text).collect()
    }
}

/// A single invariant failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("empty id")]
    EmptyId,
    #[error("meta format_version is {found:?}, expected \"mic/1\"")]
    FormatVersion { found: Option<String> },
    #[error("n_images is {declared} but {found} image segment(s) present")]
    ImageCount { declared: u32, found: usize },
    #[error("segment {segment}: empty text")]
    EmptyText { segment: usize },
    #[error("segment {segment}: proxy {proxy} out of range for {n_images} image(s)")]
    ProxyOutOfRange {
        segment: usize,
        proxy: u32,
        n_images: usize,
    },
    #[error("segment {segment}: duplicate proxy {proxy}")]
    DuplicateProxy { segment: usize, proxy: u32 },
    #[error("segment {segment}: proxy {proxy} out of document order, expected {expected}")]
    ProxyOrder {
        segment: usize,
        proxy: u32,
        expected: u32,
    },
    #[error("segment {segment}: image {proxy} is not preceded by its \"[IMG{proxy}] \" declaration")]
    UnboundImage { segment: usize, proxy: u32 },
    #[error("segment {segment}: [IMG{proxy}] referenced before its declaration")]
    ForwardReference { segment: usize, proxy: u32 },
    #[error("segment {segment}: proxy token {token} names no image")]
    UnknownProxy { segment: usize, token: String },
    #[error("empty asset uri")]
    EmptyUri,
    #[error("invalid rectangle {rect}")]
    InvalidRect { rect: String },
    #[error("rectangle {rect} exceeds bounds {width}x{height}")]
    RectOutOfBounds {
        rect: String,
        width: u32,
        height: u32,
    },
    #[error("frame {frame_index} of {uri} is beyond its {frame_count} frame(s)")]
    FrameOutOfRange {
        uri: String,
        frame_index: u32,
        frame_count: u32,
    },
    #[error("entity name {name:?} is not a single word token")]
    EntityName { name: String },
    #[error("source text contains reserved proxy token {token}")]
    ReservedToken { token: String },
    #[error("{path}: {detail}")]
    Malformed { path: String, detail: String },
}

/// The proxy token for image `index`, e.g. `[IMG3]`.
pub fn proxy_token(index: u32) -> String {
    format!("[IMG{index}]")
}

/// A `[IMG<digits>]` occurrence inside a text, as byte range plus the parsed
/// index (`None` when the digits overflow `u32`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProxyTokenMatch {
    pub start: usize,
    pub end: usize,
    pub index: Option<u32>,
}

/// Scans `text` for proxy tokens left to right.
pub fn scan_proxy_tokens(text: &str) -> impl Iterator<Item = ProxyTokenMatch> + '_ {
    const OPEN: &[u8] = b"[IMG";
    let bytes = text.as_bytes();
    let mut pos = 0;
    std::iter::from_fn(move || {
        while let Some(rel) = find(&bytes[pos..], OPEN) {
            let start = pos + rel;
            let digits_start = start + OPEN.len();
            let mut end = digits_start;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            if end > digits_start && end < bytes.len() && bytes[end] == b']' {
                pos = end + 1;
                return Some(ProxyTokenMatch {
                    start,
                    end: end + 1,
                    index: text[digits_start..end].parse().ok(),
                });
            }
            pos = start + 1;
        }
        None
    })
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// An instance under construction: segments plus target, before exemplars are
/// attached. Adjacent text pushes are merged into one segment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Draft {
    pub id: String,
    pub dataset: String,
    pub segments: Vec<Segment>,
    pub target: String,
    pub meta: BTreeMap<String, String>,
}

impl Draft {
    pub fn new(id: impl Into<String>, dataset: impl Into<String>) -> Self {
        Draft {
            id: id.into(),
            dataset: dataset.into(),
            ..Default::default()
        }
    }

    pub fn push_text(&mut self, text: &str) {
        push_text(&mut self.segments, text);
    }

    pub fn push_image(&mut self, proxy: u32, asset: ImageAssetSpec) {
        self.segments.push(Segment::Image { proxy, asset });
    }

    pub fn n_images(&self) -> usize {
        self.segments.iter().filter(|s| s.proxy().is_some()).count()
    }

    /// Wraps the draft as a finished instance with no exemplars.
    pub fn into_instance(self) -> InterleavedInstance {
        let n_images = self.n_images() as u32;
        let mut meta = self.meta;
        meta.insert(FORMAT_VERSION_KEY.to_string(), FORMAT_VERSION.to_string());
        InterleavedInstance {
            id: self.id,
            dataset: self.dataset,
            segments: self.segments,
            target: self.target,
            n_exemplars: 0,
            n_images,
            meta,
        }
    }
}

/// Appends `text`, merging into a trailing text segment. Empty text is dropped.
pub fn push_text(segments: &mut Vec<Segment>, text: &str) {
    if text.is_empty() {
        return;
    }
    match segments.last_mut() {
        Some(Segment::Text(last)) => last.push_str(text),
        _ => segments.push(Segment::Text(text.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn declared(k: u32) -> InterleavedInstance {
        let mut d = Draft::new("x", "ds");
        for j in 0..k {
            d.push_text(&format!("image {j} is [IMG{j}] "));
            d.push_image(j, ImageAssetSpec::file(format!("img{j}.jpg")));
            d.push_text(".\n");
        }
        d.push_text("What is shown?");
        d.target = "a cat".into();
        d.into_instance()
    }

    #[test]
    fn well_formed_instance_has_no_violations() {
        for k in 0..5 {
            assert_eq!(declared(k).violations(), vec![]);
        }
    }

    #[test]
    fn duplicate_proxy_is_reported() {
        let mut inst = declared(2);
        inst.segments[3] = Segment::image(0, ImageAssetSpec::file("b.jpg"));
        let v = inst.violations();
        assert!(v.iter().any(|v| matches!(v, Violation::DuplicateProxy { proxy: 0, .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::ProxyOrder { .. })));
    }

    #[test]
    fn all_violations_are_collected() {
        let mut inst = declared(2);
        inst.n_images = 5;
        inst.meta.clear();
        inst.segments.push(Segment::text(""));
        let v = inst.violations();
        assert!(v.len() >= 3, "{v:?}");
    }

    #[test]
    fn forward_reference_is_reported() {
        let mut inst = declared(1);
        inst.segments.insert(0, Segment::text("see [IMG0] first. "));
        // merge is not applied on direct insertion; the declaration text follows
        let v = inst.violations();
        assert!(v.iter().any(|v| matches!(v, Violation::ForwardReference { proxy: 0, .. })), "{v:?}");
    }

    #[test]
    fn re_mentions_after_declaration_are_fine() {
        let mut inst = declared(1);
        if let Some(Segment::Text(t)) = inst.segments.last_mut() {
            t.push_str(" Look at [IMG0] again.");
        }
        assert_eq!(inst.violations(), vec![]);
    }

    #[test]
    fn unbound_image_is_reported() {
        let mut d = Draft::new("x", "ds");
        d.push_text("look: ");
        d.push_image(0, ImageAssetSpec::file("a.jpg"));
        let v = d.into_instance().violations();
        assert!(v.iter().any(|v| matches!(v, Violation::UnboundImage { proxy: 0, .. })));
    }

    #[test]
    fn scan_finds_tokens() {
        let found: Vec<_> = scan_proxy_tokens("a [IMG0] [IMG] [IMG12]x [IMG99999999999]")
            .map(|m| m.index)
            .collect();
        assert_eq!(found, vec![Some(0), Some(12), None]);
    }

    #[test]
    fn crop_rect_rejects_empty_area() {
        assert!(CropRect::new(0, 0, 10, 10).is_ok());
        assert!(CropRect::new(5, 0, 5, 10).is_err());
        assert!(CropRect::new(0, 7, 10, 3).is_err());
    }

    #[test]
    fn crop_checks_parent_bounds() {
        let parent = ImageAssetSpec::file("scene.jpg").with_size(100, 100);
        let ok = ImageAssetSpec::crop(&parent, CropRect::new(0, 0, 100, 100).unwrap());
        assert!(ok.violations().is_empty());
        let bad = ImageAssetSpec::crop(&parent, CropRect::new(0, 0, 101, 50).unwrap());
        assert_eq!(bad.violations().len(), 1);
    }

    #[test]
    fn video_frame_bounds() {
        assert!(ImageAssetSpec::video_frame("v.mp4", 7, Some(8)).violations().is_empty());
        assert_eq!(ImageAssetSpec::video_frame("v.mp4", 8, Some(8)).violations().len(), 1);
        assert!(ImageAssetSpec::video_frame("v.mp4", 800, None).violations().is_empty());
    }
}
