//! Instruction template banks and template filling.
//!
//! Templates are plain strings with `{placeholder}` slots. An `{image}` slot
//! must directly follow its proxy token (`... [IMGk] {image}`), and a
//! `{prompt}` slot expands to the declarations of every image in the record.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::Deserialize;

use crate::declaration::{push_declaration, DeclarationStyle, DECLARATION_SEPARATOR};
use crate::error::{Error, Result};
use crate::model::{proxy_token, scan_proxy_tokens, Draft, SourceRecord};

/// Join separator for `{options}`.
pub const OPTIONS_SEPARATOR: &str = "; ";

const DEFAULT_LIBRARY: &str = include_str!("../assets/default_templates.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placeholder {
    Image,
    Question,
    Answer,
    Options,
    Quadrant,
    Prompt,
    Caption0,
    Caption1,
}

impl Placeholder {
    pub const ALL: [Placeholder; 8] = [
        Placeholder::Image,
        Placeholder::Question,
        Placeholder::Answer,
        Placeholder::Options,
        Placeholder::Quadrant,
        Placeholder::Prompt,
        Placeholder::Caption0,
        Placeholder::Caption1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Image => "image",
            Placeholder::Question => "question",
            Placeholder::Answer => "answer",
            Placeholder::Options => "options",
            Placeholder::Quadrant => "quadrant",
            Placeholder::Prompt => "prompt",
            Placeholder::Caption0 => "caption0",
            Placeholder::Caption1 => "caption1",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(Placeholder),
}

/// A parsed, well-formed template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    pieces: Vec<Piece>,
    image_slots: usize,
    max_literal_proxy: Option<u32>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Self> {
        let bad = |msg: String| Err(Error::Template(format!("{msg} in {source:?}")));
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        while let Some(i) = rest.find(['{', '}']) {
            if rest.as_bytes()[i] == b'}' {
                return bad(format!("unbalanced '}}' at byte {}", source.len() - rest.len() + i));
            }
            literal.push_str(&rest[..i]);
            let after = &rest[i + 1..];
            let Some(close) = after.find(['{', '}']).filter(|&c| after.as_bytes()[c] == b'}') else {
                return bad(format!("unbalanced '{{' at byte {}", source.len() - rest.len() + i));
            };
            let name = &after[..close];
            let Some(slot) = Placeholder::parse(name) else {
                return bad(format!("unknown placeholder {{{name}}}"));
            };
            if !literal.is_empty() {
                pieces.push(Piece::Literal(std::mem::take(&mut literal)));
            }
            pieces.push(Piece::Slot(slot));
            rest = &after[close + 1..];
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            pieces.push(Piece::Literal(literal));
        }

        let mut image_slots = 0usize;
        let mut max_literal_proxy = None;
        for (i, piece) in pieces.iter().enumerate() {
            match piece {
                Piece::Slot(Placeholder::Image) => {
                    let token = proxy_token(image_slots as u32);
                    let bound = match i.checked_sub(1).map(|p| &pieces[p]) {
                        Some(Piece::Literal(l)) => l.strip_suffix(' ').is_some_and(|l| l.ends_with(&token)),
                        _ => false,
                    };
                    if !bound {
                        return bad(format!("image slot {image_slots} does not follow \"{token} \""));
                    }
                    image_slots += 1;
                }
                Piece::Slot(Placeholder::Answer) => {
                    let trailing = pieces[i + 1..]
                        .iter()
                        .all(|p| matches!(p, Piece::Literal(l) if l.trim().is_empty()));
                    if !trailing {
                        return bad("{answer} must be the last slot".into());
                    }
                }
                Piece::Literal(l) => {
                    for m in scan_proxy_tokens(l) {
                        let Some(j) = m.index else {
                            return bad("proxy token index overflows".into());
                        };
                        max_literal_proxy = max_literal_proxy.max(Some(j));
                    }
                }
                Piece::Slot(_) => {}
            }
        }
        let template = Template {
            source: source.to_string(),
            pieces,
            image_slots,
            max_literal_proxy,
        };
        if template.uses(Placeholder::Prompt) && image_slots > 0 {
            return bad("{prompt} and {image} cannot be combined".into());
        }
        Ok(template)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn image_slots(&self) -> usize {
        self.image_slots
    }

    pub fn uses(&self, slot: Placeholder) -> bool {
        self.pieces.contains(&Piece::Slot(slot))
    }

    fn position(&self, slot: Placeholder) -> Option<usize> {
        self.pieces.iter().position(|p| *p == Piece::Slot(slot))
    }

    /// Whether filling this template with a record of `shape` succeeds and
    /// yields a valid instance.
    pub fn supports(&self, shape: &RecordShape<'_>) -> bool {
        let arity_ok = if self.uses(Placeholder::Prompt) {
            true
        } else {
            self.image_slots == shape.n_images
        };
        let literal_ok = self.max_literal_proxy.is_none_or(|j| (j as usize) < shape.n_images);
        let fields_ok = self.pieces.iter().all(|p| match p {
            Piece::Slot(Placeholder::Question) => shape.has_question,
            Piece::Slot(Placeholder::Options) => shape.has_options,
            Piece::Slot(s @ (Placeholder::Quadrant | Placeholder::Caption0 | Placeholder::Caption1)) => {
                shape.extra.contains_key(s.name())
            }
            _ => true,
        });
        // text that already names declared images must come after {prompt}
        let references_ok = !shape.has_references
            || self.position(Placeholder::Prompt).is_some_and(|prompt| {
                [Placeholder::Question, Placeholder::Options]
                    .into_iter()
                    .filter_map(|s| self.position(s))
                    .all(|p| p > prompt)
            });
        arity_ok && literal_ok && fields_ok && references_ok
    }
}

/// What a template needs to know about a record to decide compatibility.
#[derive(Debug, Clone, Copy)]
pub struct RecordShape<'a> {
    pub n_images: usize,
    pub has_question: bool,
    pub has_options: bool,
    pub extra: &'a BTreeMap<String, String>,
    /// Question or options already carry `[IMGj]` references.
    pub has_references: bool,
}

impl<'a> RecordShape<'a> {
    pub fn of(record: &'a SourceRecord, has_references: bool) -> Self {
        RecordShape {
            n_images: record.images.len(),
            has_question: record.question.is_some(),
            has_options: record.options.is_some(),
            extra: &record.extra,
            has_references,
        }
    }
}

/// Templates for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateBank {
    task: String,
    templates: Vec<Template>,
}

impl TemplateBank {
    pub fn new<S: AsRef<str>>(task: impl Into<String>, sources: &[S]) -> Result<Self> {
        let task = task.into();
        if sources.is_empty() {
            return Err(Error::EmptyBank(task));
        }
        let templates = sources
            .iter()
            .map(|s| Template::parse(s.as_ref()))
            .collect::<Result<_>>()?;
        Ok(TemplateBank { task, templates })
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Uniform choice among the templates `shape` can fill, with its index.
    pub fn choose_compatible<R: Rng + ?Sized>(
        &self,
        shape: &RecordShape<'_>,
        rng: &mut R,
    ) -> Option<(usize, &Template)> {
        let compatible: Vec<usize> = (0..self.templates.len())
            .filter(|&i| self.templates[i].supports(shape))
            .collect();
        if compatible.is_empty() {
            return None;
        }
        let i = compatible[rng.gen_range(0..compatible.len())];
        Some((i, &self.templates[i]))
    }
}

/// Uniform choice over the whole bank.
pub fn choose_template<'a, R: Rng + ?Sized>(bank: &'a TemplateBank, rng: &mut R) -> Result<&'a Template> {
    if bank.templates.is_empty() {
        return Err(Error::EmptyBank(bank.task.clone()));
    }
    Ok(&bank.templates[rng.gen_range(0..bank.templates.len())])
}

/// All template banks, keyed by task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateLibrary {
    banks: BTreeMap<String, TemplateBank>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    tasks: BTreeMap<String, Vec<String>>,
}

impl TemplateLibrary {
    /// Parses `{"tasks": {"<task>": ["<template>", ...], ...}}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: LibraryFile =
            serde_json::from_str(text).map_err(|e| Error::Template(format!("template file: {e}")))?;
        let banks = file
            .tasks
            .into_iter()
            .map(|(task, sources)| Ok((task.clone(), TemplateBank::new(task, &sources)?)))
            .collect::<Result<_>>()?;
        Ok(TemplateLibrary { banks })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The shipped bank, one task per instruction table.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_LIBRARY).expect("shipped template bank is well-formed")
    }

    pub fn get(&self, task: &str) -> Option<&TemplateBank> {
        self.banks.get(task)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> {
        self.banks.keys().map(String::as_str)
    }
}

/// Fills `template` from `record`. The answer becomes the target.
pub fn fill_template(template: &Template, record: &SourceRecord, style: DeclarationStyle) -> Result<Draft> {
    let n = record.images.len();
    if !template.uses(Placeholder::Prompt) && template.image_slots != n {
        return Err(Error::TemplateArity {
            expected: template.image_slots,
            found: n,
        });
    }
    let mut draft = Draft::new(record.id.clone(), record.dataset.clone());
    let mut next_image = 0usize;
    for piece in &template.pieces {
        match piece {
            Piece::Literal(text) => draft.push_text(text),
            Piece::Slot(Placeholder::Image) => {
                draft.push_image(next_image as u32, record.images[next_image].clone());
                next_image += 1;
            }
            Piece::Slot(Placeholder::Prompt) => {
                for (j, asset) in record.images.iter().enumerate() {
                    if j > 0 {
                        draft.push_text(DECLARATION_SEPARATOR);
                    }
                    push_declaration(&mut draft, j as u32, style, asset.clone());
                }
            }
            Piece::Slot(Placeholder::Question) => {
                let q = record
                    .question
                    .as_deref()
                    .ok_or_else(|| Error::MissingField("question".into()))?;
                draft.push_text(q);
            }
            Piece::Slot(Placeholder::Options) => {
                let options = record
                    .options
                    .as_ref()
                    .ok_or_else(|| Error::MissingField("options".into()))?;
                draft.push_text(&options.join(OPTIONS_SEPARATOR));
            }
            Piece::Slot(Placeholder::Answer) => {}
            Piece::Slot(slot) => {
                let value = record
                    .extra
                    .get(slot.name())
                    .ok_or_else(|| Error::MissingField(slot.name().into()))?;
                draft.push_text(value);
            }
        }
    }
    draft.target = record.answer.clone();
    Ok(draft)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ImageAssetSpec, Segment};
    use crate::seed::substream;

    fn record(n: usize) -> SourceRecord {
        SourceRecord {
            id: "r1".into(),
            dataset: "vqav2".into(),
            images: (0..n).map(|i| ImageAssetSpec::file(format!("{i}.jpg"))).collect(),
            question: Some("What color is the car?".into()),
            answer: "red".into(),
            ..Default::default()
        }
    }

    #[test]
    fn fills_single_image_template() {
        let t = Template::parse("image 0 is [IMG0] {image}. Question: {question} Answer:").unwrap();
        let d = fill_template(&t, &record(1), DeclarationStyle::IsForm).unwrap();
        assert_eq!(
            d.segments,
            vec![
                Segment::text("image 0 is [IMG0] "),
                Segment::image(0, ImageAssetSpec::file("0.jpg")),
                Segment::text(". Question: What color is the car? Answer:"),
            ]
        );
        assert_eq!(d.target, "red");
    }

    #[test]
    fn options_are_joined() {
        let t = Template::parse("image 0 is [IMG0] {image}. {question} Options: {options} Answer:").unwrap();
        let mut r = record(1);
        r.options = Some(vec!["A".into(), "B".into()]);
        let text = fill_template(&t, &r, DeclarationStyle::IsForm).unwrap().into_instance().rendered_text();
        assert!(text.ends_with("Options: A; B Answer:"), "{text}");
    }

    #[test]
    fn missing_question() {
        let t = Template::parse("image 0 is [IMG0] {image}. {question}").unwrap();
        let mut r = record(1);
        r.question = None;
        match fill_template(&t, &r, DeclarationStyle::IsForm) {
            Err(Error::MissingField(f)) => assert_eq!(f, "question"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn arity_mismatch() {
        let t = Template::parse("image 0 is [IMG0] {image}. {question}").unwrap();
        assert!(matches!(
            fill_template(&t, &record(2), DeclarationStyle::IsForm),
            Err(Error::TemplateArity { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn prompt_expands_all_declarations() {
        let t = Template::parse("{prompt}. Given the photo [IMG0], {question} Options: {options}").unwrap();
        let mut r = record(2);
        r.options = Some(vec!["x".into()]);
        let d = fill_template(&t, &r, DeclarationStyle::ColonForm).unwrap();
        assert_eq!(d.segments[0], Segment::text("image 0: [IMG0] "));
        assert_eq!(d.segments[2], Segment::text(".\nimage 1: [IMG1] "));
        assert!(d.into_instance().violations().is_empty());
    }

    #[test]
    fn malformed_templates_rejected() {
        for bad in [
            "image 0 is [IMG0] {image",
            "image 0 is [IMG0] image}",
            "{nope}",
            "{image} first",
            "image 1 is [IMG1] {image}",
            "{answer} then more",
            "{prompt} and image 0 is [IMG0] {image}",
            "{{question}}",
        ] {
            assert!(Template::parse(bad).is_err(), "{bad}");
        }
        assert!(Template::parse("Question: {question} Answer: {answer}\n").is_ok());
    }

    #[test]
    fn answer_slot_is_dropped() {
        let t = Template::parse("Q: {question} A: {answer}").unwrap();
        let d = fill_template(&t, &record(0), DeclarationStyle::IsForm).unwrap();
        assert_eq!(d.segments, vec![Segment::text("Q: What color is the car? A: ")]);
        assert_eq!(d.target, "red");
    }

    #[test]
    fn singleton_bank_always_chosen() {
        let bank = TemplateBank::new("t", &["only {question}"]).unwrap();
        let mut rng = substream(1, &[]);
        for _ in 0..20 {
            assert_eq!(choose_template(&bank, &mut rng).unwrap().source(), "only {question}");
        }
    }

    #[test]
    fn choice_is_reproducible() {
        let sources: Vec<String> = (0..10).map(|i| format!("t{i} {{question}}")).collect();
        let bank = TemplateBank::new("t", &sources).unwrap();
        let draw = |seed| {
            let mut rng = substream(seed, &[b"x"]);
            (0..50).map(|_| choose_template(&bank, &mut rng).unwrap().source().to_string()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn empty_bank_refused() {
        assert!(matches!(TemplateBank::new("t", &Vec::<String>::new()), Err(Error::EmptyBank(_))));
    }

    #[test]
    fn builtin_library_parses() {
        let lib = TemplateLibrary::builtin();
        let tasks: Vec<&str> = lib.tasks().collect();
        for t in ["caption", "vqav2", "video_qa", "vcr", "refcoco"] {
            assert!(tasks.contains(&t), "{t}");
        }
        assert_eq!(lib.get("vqav2").unwrap().len(), 10);
        assert!(lib.get("video_qa").unwrap().templates().iter().all(|t| t.image_slots() == 8));
        assert!(lib.get("vcr").unwrap().templates().iter().all(|t| t.uses(Placeholder::Prompt)));
    }

    #[test]
    fn compatibility_filters_by_shape() {
        let bank = TemplateBank::new(
            "t",
            &["image 0 is [IMG0] {image}. {question}", "{prompt}. {question}", "image 0 is [IMG0] {image}. {quadrant}"],
        )
        .unwrap();
        let r = record(1);
        let ok: Vec<bool> = bank.templates().iter().map(|t| t.supports(&RecordShape::of(&r, false))).collect();
        assert_eq!(ok, vec![true, true, false]);
        let refs: Vec<bool> = bank.templates().iter().map(|t| t.supports(&RecordShape::of(&r, true))).collect();
        assert_eq!(refs, vec![false, true, false]);
    }
}
