//! Multi-image instances built from one source: uniformly strided video
//! frames, and entity crops that replace textual mentions of objects.

use crate::error::{Error, Result};
use crate::model::{is_word_char, proxy_token, AssetKind, CropRect, ImageAssetSpec, Segment};

/// Frames taken per video unless configured otherwise.
pub const DEFAULT_FRAMES_PER_VIDEO: u32 = 8;

/// Indices of `k` frames out of `frame_count`, first frame of each of `k`
/// equal buckets. Short videos yield every frame once.
pub fn select_frames(frame_count: u32, k: u32) -> Vec<u32> {
    if frame_count < k {
        return (0..frame_count).collect();
    }
    let (t, k) = (frame_count as u64, k as u64);
    (0..k).map(|j| (j * t / k) as u32).collect()
}

/// Frame assets for `video`, one per selected index.
pub fn video_frames(video: &ImageAssetSpec, frame_count: u32, k: u32) -> Vec<ImageAssetSpec> {
    select_frames(frame_count, k)
        .into_iter()
        .map(|i| ImageAssetSpec {
            uri: video.uri.clone(),
            size: video.size,
            kind: AssetKind::VideoFrame {
                frame_index: i,
                frame_count: Some(frame_count),
            },
        })
        .collect()
}

/// Named boxes over one parent image, in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntityMap {
    entries: Vec<(String, CropRect)>,
}

impl EntityMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entity; a repeated name is refused.
    pub fn insert(&mut self, name: impl Into<String>, rect: CropRect) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Template(format!("duplicate entity name {name:?}")));
        }
        self.entries.push((name, rect));
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &CropRect)> {
        self.entries.iter().map(|(n, r)| (n.as_str(), r))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<'a> FromIterator<(&'a String, &'a CropRect)> for EntityMap {
    fn from_iter<I: IntoIterator<Item = (&'a String, &'a CropRect)>>(iter: I) -> Self {
        let mut map = EntityMap::new();
        for (name, rect) in iter {
            // map keys are already unique
            let _ = map.insert(name.clone(), *rect);
        }
        map
    }
}

/// Entity name paired with its crop asset.
pub type NamedCrop = (String, ImageAssetSpec);

/// One crop per entity, in map order.
pub fn crop_entities(parent: &ImageAssetSpec, entities: &EntityMap) -> Result<Vec<NamedCrop>> {
    entities
        .iter()
        .map(|(name, rect)| {
            if let Some((w, h)) = parent.size {
                if !rect.fits_within(w, h) {
                    return Err(Error::RectOutOfBounds {
                        entity: name.to_string(),
                        rect: rect.to_string(),
                        width: w,
                        height: h,
                    });
                }
            }
            Ok((name.to_string(), ImageAssetSpec::crop(parent, *rect)))
        })
        .collect()
}

/// Result of replacing entity mentions in one text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substitution {
    /// Text runs, image segments for first mentions, and separate `[IMGj]`
    /// text segments for repeated mentions. Proxies are local, numbered by
    /// first mention.
    pub segments: Vec<Segment>,
    /// Mentioned entity names, indexed by local proxy.
    pub entities: Vec<String>,
    /// Entities given crops but never mentioned.
    pub unused: Vec<String>,
}

/// Replaces each standalone mention of an entity with its crop.
///
/// The first mention of an entity becomes an image segment; later mentions of
/// the same entity become a bare `[IMGj]` text segment naming the same proxy,
/// so every distinct entity is declared once.
pub fn substitute_references(text: &str, crops: &[NamedCrop]) -> Substitution {
    let mut table = ReferenceTable::new(crops);
    let mut segments = Vec::new();
    let mut run = String::new();
    for piece in split_mentions(text, crops) {
        match piece {
            Piece::Text(t) => run.push_str(t),
            Piece::Mention(entity) => {
                if !run.is_empty() {
                    segments.push(Segment::Text(std::mem::take(&mut run)));
                }
                let (proxy, first) = table.resolve(entity);
                if first {
                    segments.push(Segment::Image {
                        proxy,
                        asset: crops[entity].1.clone(),
                    });
                } else {
                    segments.push(Segment::Text(proxy_token(proxy)));
                }
            }
        }
    }
    if !run.is_empty() {
        segments.push(Segment::Text(run));
    }
    Substitution {
        segments,
        entities: table.mentioned().iter().map(|&i| crops[i].0.clone()).collect(),
        unused: table.unused(),
    }
}

/// Inverse of [`substitute_references`]: puts entity names back in place of
/// image segments and repeated-mention tokens.
pub fn reconstruct(sub: &Substitution) -> String {
    let name = |j: Option<u32>| j.and_then(|j| sub.entities.get(j as usize));
    let mut out = String::new();
    for seg in &sub.segments {
        match seg {
            Segment::Image { proxy, .. } => out.push_str(name(Some(*proxy)).map_or("", |n| n)),
            Segment::Text(t) => {
                let remention = crate::model::scan_proxy_tokens(t)
                    .next()
                    .filter(|m| m.start == 0 && m.end == t.len())
                    .and_then(|m| name(m.index));
                out.push_str(remention.map_or(t.as_str(), |n| n));
            }
        }
    }
    out
}

/// Assigns proxies to entities in first-mention order, possibly across
/// several texts of one record.
#[derive(Debug, Clone)]
pub struct ReferenceTable {
    /// proxy for each crop, by crop position
    assigned: Vec<Option<u32>>,
    order: Vec<usize>,
    names: Vec<String>,
}

impl ReferenceTable {
    pub fn new(crops: &[NamedCrop]) -> Self {
        ReferenceTable {
            assigned: vec![None; crops.len()],
            order: Vec::new(),
            names: crops.iter().map(|(n, _)| n.clone()).collect(),
        }
    }

    /// Proxy of crop `entity` and whether this is its first mention.
    fn resolve(&mut self, entity: usize) -> (u32, bool) {
        match self.assigned[entity] {
            Some(p) => (p, false),
            None => {
                let p = self.order.len() as u32;
                self.assigned[entity] = Some(p);
                self.order.push(entity);
                (p, true)
            }
        }
    }

    /// Rewrites every mention in `text` to `[IMG<offset + proxy>]`.
    pub fn rewrite(&mut self, text: &str, crops: &[NamedCrop], offset: u32) -> String {
        let mut out = String::with_capacity(text.len());
        for piece in split_mentions(text, crops) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Mention(entity) => {
                    let (proxy, _) = self.resolve(entity);
                    out.push_str(&proxy_token(offset + proxy));
                }
            }
        }
        out
    }

    /// Crop positions of mentioned entities, in proxy order.
    pub fn mentioned(&self) -> &[usize] {
        &self.order
    }

    pub fn unused(&self) -> Vec<String> {
        self.assigned
            .iter()
            .zip(&self.names)
            .filter(|(a, _)| a.is_none())
            .map(|(_, n)| n.clone())
            .collect()
    }
}

enum Piece<'a> {
    Text(&'a str),
    Mention(usize),
}

/// Splits `text` at word tokens that exactly equal an entity name.
fn split_mentions<'a>(text: &'a str, crops: &[NamedCrop]) -> Vec<Piece<'a>> {
    let mut pieces = Vec::new();
    let mut last = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        if !is_word_char(c) {
            continue;
        }
        let mut end = start + c.len_utf8();
        while let Some(&(i, c)) = chars.peek() {
            if !is_word_char(c) {
                break;
            }
            end = i + c.len_utf8();
            chars.next();
        }
        let word = &text[start..end];
        if let Some(entity) = crops.iter().position(|(n, _)| n == word) {
            if last < start {
                pieces.push(Piece::Text(&text[last..start]));
            }
            pieces.push(Piece::Mention(entity));
            last = end;
        }
    }
    if last < text.len() {
        pieces.push(Piece::Text(&text[last..]));
    }
    pieces
}
