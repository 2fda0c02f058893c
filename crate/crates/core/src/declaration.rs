//! Image proxies and natural-language image declarations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{scan_proxy_tokens, Draft, ImageAssetSpec, Segment, SourceRecord};

/// Text written after each prefix declaration.
pub const DECLARATION_SEPARATOR: &str = ".\n";

/// Placeholder marking where an inline declaration goes.
pub const IMAGE_SLOT: &str = "{image}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclarationStyle {
    /// `image j is [IMGj] `
    #[default]
    IsForm,
    /// `image j: [IMGj] `
    ColonForm,
}

impl DeclarationStyle {
    /// The declaration text for image `index`, including the trailing space
    /// that separates the proxy token from the visual slot.
    pub fn render(self, index: u32) -> String {
        match self {
            DeclarationStyle::IsForm => format!("image {index} is [IMG{index}] "),
            DeclarationStyle::ColonForm => format!("image {index}: [IMG{index}] "),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// All declarations precede the question.
    #[default]
    Prefix,
    /// Declarations replace the question's `{image}` placeholders.
    Inline,
}

/// Zero-based proxies in document order.
pub fn allocate_proxies(n: usize) -> Vec<u32> {
    (0..n as u32).collect()
}

/// One declaration: its text followed by the image it binds.
pub fn render_declaration(index: u32, style: DeclarationStyle, asset: ImageAssetSpec) -> [Segment; 2] {
    [
        Segment::Text(style.render(index)),
        Segment::Image {
            proxy: index,
            asset,
        },
    ]
}

/// Declares every image of `record` and lays out its question.
///
/// The answer becomes the draft's target. Records whose text already carries
/// proxy tokens are rejected with [`Error::DoubleDeclaration`].
pub fn declare_images(record: &SourceRecord, style: DeclarationStyle, placement: Placement) -> Result<Draft> {
    let question = record.question.as_deref().unwrap_or("");
    if scan_proxy_tokens(question).next().is_some() {
        return Err(Error::DoubleDeclaration(record.id.clone()));
    }
    let mut draft = Draft::new(record.id.clone(), record.dataset.clone());
    let proxies = allocate_proxies(record.images.len());
    match placement {
        Placement::Prefix => {
            for (proxy, asset) in proxies.into_iter().zip(&record.images) {
                push_declaration(&mut draft, proxy, style, asset.clone());
                draft.push_text(DECLARATION_SEPARATOR);
            }
            draft.push_text(question);
        }
        Placement::Inline => {
            let slots = question.matches(IMAGE_SLOT).count();
            if slots != record.images.len() {
                return Err(Error::Placement(format!(
                    "record {:?} has {} image(s) but its text has {} {IMAGE_SLOT} placeholder(s)",
                    record.id,
                    record.images.len(),
                    slots
                )));
            }
            let mut pieces = question.split(IMAGE_SLOT);
            draft.push_text(pieces.next().unwrap_or(""));
            for ((proxy, asset), rest) in proxies.into_iter().zip(&record.images).zip(pieces) {
                push_declaration(&mut draft, proxy, style, asset.clone());
                draft.push_text(rest);
            }
        }
    }
    draft.target = record.answer.clone();
    Ok(draft)
}

pub(crate) fn push_declaration(draft: &mut Draft, proxy: u32, style: DeclarationStyle, asset: ImageAssetSpec) {
    draft.push_text(&style.render(proxy));
    draft.push_image(proxy, asset);
}
