//! Token-level layout simulation of interleaved instances.
//!
//! Text segments become text blocks sized by a pluggable token counter; each
//! image becomes a fixed-width block of visual slots placed right where its
//! segment sits. No embeddings are computed.

use std::fmt;

use serde::Serialize;

use crate::model::{InterleavedInstance, Segment};

/// Visual slots per image unless configured otherwise.
pub const DEFAULT_VISUAL_SLOTS: u32 = 32;

/// Anything that maps a string to a deterministic token count.
pub trait TokenCounter {
    fn count_tokens(&self, text: &str) -> usize;
}

/// Counts whitespace-separated words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl TokenCounter for WhitespaceTokenizer {
    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

impl<F: Fn(&str) -> usize> TokenCounter for F {
    fn count_tokens(&self, text: &str) -> usize {
        self(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Text,
    Visual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Block {
    pub kind: BlockKind,
    pub start: usize,
    pub length: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxy: Option<u32>,
}

impl Block {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayoutReport {
    pub blocks: Vec<Block>,
    pub total_length: usize,
    pub visual_slots_per_image: u32,
}

/// One block per segment, in segment order.
pub fn simulate_layout<T: TokenCounter + ?Sized>(
    instance: &InterleavedInstance,
    slots: u32,
    tokenizer: &T,
) -> LayoutReport {
    let mut blocks = Vec::with_capacity(instance.segments.len());
    let mut cursor = 0usize;
    for seg in &instance.segments {
        let block = match seg {
            Segment::Text(t) => Block {
                kind: BlockKind::Text,
                start: cursor,
                length: tokenizer.count_tokens(t),
                proxy: None,
            },
            Segment::Image { proxy, .. } => Block {
                kind: BlockKind::Visual,
                start: cursor,
                length: slots as usize,
                proxy: Some(*proxy),
            },
        };
        cursor = block.end();
        blocks.push(block);
    }
    LayoutReport {
        blocks,
        total_length: cursor,
        visual_slots_per_image: slots,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlignmentViolation {
    /// Blocks leave a gap or overlap at `offset`.
    Tiling { offset: usize },
    /// The blocks do not end at `total_length`.
    Length { covered: usize, total_length: usize },
    SlotWidth { proxy: Option<u32>, length: usize },
    VisualCount { expected: usize, found: usize },
    /// A visual block sits before the text that precedes its image.
    FrontLoaded { proxy: Option<u32>, start: usize, expected: usize },
    /// A visual block sits after where its image belongs.
    Displaced { proxy: Option<u32>, start: usize, expected: usize },
    /// The text block declaring an image does not end where its visual block starts.
    DeclarationOrder { proxy: Option<u32> },
    ProxyOrder { position: usize, proxy: Option<u32> },
}

impl AlignmentViolation {
    /// Stable snake_case name of the violation class.
    pub fn kind(&self) -> &'static str {
        match self {
            AlignmentViolation::Tiling { .. } => "tiling",
            AlignmentViolation::Length { .. } => "length",
            AlignmentViolation::SlotWidth { .. } => "slot_width",
            AlignmentViolation::VisualCount { .. } => "visual_count",
            AlignmentViolation::FrontLoaded { .. } => "front_loaded",
            AlignmentViolation::Displaced { .. } => "displaced",
            AlignmentViolation::DeclarationOrder { .. } => "declaration_order",
            AlignmentViolation::ProxyOrder { .. } => "proxy_order",
        }
    }
}

impl fmt::Display for AlignmentViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlignmentViolation::Tiling { offset } => write!(f, "tiling gap or overlap at {offset}"),
            AlignmentViolation::Length { covered, total_length } => {
                write!(f, "blocks cover {covered} of {total_length} tokens")
            }
            AlignmentViolation::SlotWidth { proxy, length } => {
                write!(f, "visual block {proxy:?} has width {length}")
            }
            AlignmentViolation::VisualCount { expected, found } => {
                write!(f, "{found} visual block(s) for {expected} image(s)")
            }
            AlignmentViolation::FrontLoaded { proxy, start, expected } => write!(
                f,
                "front-loaded images: visual block {proxy:?} starts at {start}, expected {expected}"
            ),
            AlignmentViolation::Displaced { proxy, start, expected } => {
                write!(f, "visual block {proxy:?} starts at {start}, expected {expected}")
            }
            AlignmentViolation::DeclarationOrder { proxy } => {
                write!(f, "declaration text does not precede visual block {proxy:?}")
            }
            AlignmentViolation::ProxyOrder { position, proxy } => {
                write!(f, "proxy order: visual block {position} carries proxy {proxy:?}")
            }
        }
    }
}

/// Every way `report` departs from the interleaved contract for `instance`.
/// Empty when images sit exactly at their in-text positions, each directly
/// after its declaration, with proxies `0..K-1` in order.
pub fn check_alignment(report: &LayoutReport, instance: &InterleavedInstance) -> Vec<AlignmentViolation> {
    let mut out = Vec::new();

    let mut cursor = 0;
    for b in &report.blocks {
        if b.start != cursor {
            out.push(AlignmentViolation::Tiling { offset: b.start });
        }
        cursor = b.end();
    }
    if cursor != report.total_length {
        out.push(AlignmentViolation::Length {
            covered: cursor,
            total_length: report.total_length,
        });
    }

    let visual: Vec<&Block> = report.blocks.iter().filter(|b| b.kind == BlockKind::Visual).collect();
    let text: Vec<&Block> = report.blocks.iter().filter(|b| b.kind == BlockKind::Text).collect();
    for b in &visual {
        if b.length != report.visual_slots_per_image as usize {
            out.push(AlignmentViolation::SlotWidth {
                proxy: b.proxy,
                length: b.length,
            });
        }
    }
    let k = instance.n_images as usize;
    if visual.len() != k {
        out.push(AlignmentViolation::VisualCount {
            expected: k,
            found: visual.len(),
        });
    }
    for (position, b) in visual.iter().enumerate() {
        if b.proxy != Some(position as u32) {
            out.push(AlignmentViolation::ProxyOrder {
                position,
                proxy: b.proxy,
            });
        }
    }

    // Text segments preceding each image in the instance.
    let mut preceding = Vec::with_capacity(k);
    let mut texts_seen = 0usize;
    for seg in &instance.segments {
        match seg {
            Segment::Text(_) => texts_seen += 1,
            Segment::Image { .. } => preceding.push(texts_seen),
        }
    }
    let slots = report.visual_slots_per_image as usize;
    for (v, (b, &t)) in visual.iter().zip(&preceding).enumerate() {
        if t > text.len() {
            break;
        }
        let expected = text[..t].iter().map(|b| b.length).sum::<usize>() + v * slots;
        if b.start < expected {
            out.push(AlignmentViolation::FrontLoaded {
                proxy: b.proxy,
                start: b.start,
                expected,
            });
        } else if b.start > expected {
            out.push(AlignmentViolation::Displaced {
                proxy: b.proxy,
                start: b.start,
                expected,
            });
        }
        let declared = t > 0 && text[t - 1].end() == b.start && text[t - 1].length > 0;
        if !declared {
            out.push(AlignmentViolation::DeclarationOrder { proxy: b.proxy });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Draft, ImageAssetSpec};

    fn instance(k: u32) -> InterleavedInstance {
        let mut d = Draft::new("i", "d");
        for j in 0..k {
            d.push_text(&format!("image {j} is [IMG{j}] "));
            d.push_image(j, ImageAssetSpec::file("x.jpg"));
        }
        d.push_text("Q? Answer:");
        d.into_instance()
    }

    #[test]
    fn single_image_layout() {
        let r = simulate_layout(&instance(1), 32, &WhitespaceTokenizer);
        assert_eq!(r.total_length, 38);
        assert_eq!(
            r.blocks,
            vec![
                Block { kind: BlockKind::Text, start: 0, length: 4, proxy: None },
                Block { kind: BlockKind::Visual, start: 4, length: 32, proxy: Some(0) },
                Block { kind: BlockKind::Text, start: 36, length: 2, proxy: None },
            ]
        );
        assert!(check_alignment(&r, &instance(1)).is_empty());
    }

    #[test]
    fn zero_images_single_text_block() {
        let r = simulate_layout(&instance(0), 32, &WhitespaceTokenizer);
        assert_eq!(r.blocks.len(), 1);
        assert_eq!(r.total_length, 2);
    }

    #[test]
    fn three_images_take_96_visual_tokens() {
        let r = simulate_layout(&instance(3), 32, &WhitespaceTokenizer);
        let visual: usize = r.blocks.iter().filter(|b| b.kind == BlockKind::Visual).map(|b| b.length).sum();
        assert_eq!(visual, 96);
    }

    #[test]
    fn custom_tokenizer() {
        let chars = |s: &str| s.chars().count();
        let inst = instance(2);
        let r = simulate_layout(&inst, 8, &chars);
        let text: usize = inst.segments.iter().filter_map(Segment::as_text).map(chars).sum();
        assert_eq!(r.total_length, text + 16);
    }

    #[test]
    fn front_loaded_images_flagged() {
        let inst = instance(2);
        let r = simulate_layout(&inst, 32, &WhitespaceTokenizer);
        let mut moved: Vec<Block> = r.blocks.iter().filter(|b| b.kind == BlockKind::Visual).copied().collect();
        moved.extend(r.blocks.iter().filter(|b| b.kind == BlockKind::Text).copied());
        let mut cursor = 0;
        for b in &mut moved {
            b.start = cursor;
            cursor += b.length;
        }
        let bad = LayoutReport { blocks: moved, ..r };
        let v = check_alignment(&bad, &inst);
        assert!(v.iter().any(|v| matches!(v, AlignmentViolation::FrontLoaded { .. })), "{v:?}");
        assert!(v.iter().any(|v| v.to_string().starts_with("front-loaded images")));
    }

    #[test]
    fn swapped_proxies_flagged() {
        let inst = instance(2);
        let mut r = simulate_layout(&inst, 32, &WhitespaceTokenizer);
        r.blocks[1].proxy = Some(1);
        r.blocks[3].proxy = Some(0);
        let v = check_alignment(&r, &inst);
        assert_eq!(v.iter().filter(|v| matches!(v, AlignmentViolation::ProxyOrder { .. })).count(), 2);
        assert!(v[0].to_string().starts_with("proxy order"));
    }

    #[test]
    fn tiling_gap_flagged() {
        let inst = instance(1);
        let mut r = simulate_layout(&inst, 32, &WhitespaceTokenizer);
        r.blocks[2].start += 1;
        r.total_length += 1;
        assert!(check_alignment(&r, &inst).contains(&AlignmentViolation::Tiling { offset: 37 }));
    }
}
