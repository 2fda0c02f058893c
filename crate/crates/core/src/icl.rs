//! Few-shot exemplar sampling and in-context instance assembly.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{is_word_char, proxy_token, push_text, scan_proxy_tokens, Draft, InterleavedInstance, Segment, Violation};

/// Exemplar count used when a dataset does not set one.
pub const DEFAULT_SHOTS: u32 = 4;

/// Written after each exemplar's answer.
pub const EXEMPLAR_SEPARATOR: &str = "\n";

/// A demonstration: declared images and question, then its answer.
/// Proxies are numbered locally from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplar {
    pub segments: Vec<Segment>,
    pub answer: String,
}

impl From<Draft> for Exemplar {
    fn from(draft: Draft) -> Self {
        Exemplar {
            segments: draft.segments,
            answer: draft.target,
        }
    }
}

/// Exemplar ids drawn for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarSample<T> {
    pub picked: Vec<T>,
    /// Fewer than requested were available.
    pub clamped: bool,
}

/// Up to `n` distinct ids other than `query_id`, uniformly without
/// replacement.
pub fn sample_exemplars<T: Clone + PartialEq, R: Rng + ?Sized>(
    dataset_index: &[T],
    query_id: &T,
    n: usize,
    rng: &mut R,
) -> ExemplarSample<T> {
    let query_pos = dataset_index.iter().position(|id| id == query_id);
    let positions = sample_exemplar_positions(dataset_index.len(), query_pos, n, rng);
    ExemplarSample {
        picked: positions.picked.into_iter().map(|p| dataset_index[p].clone()).collect(),
        clamped: positions.clamped,
    }
}

/// Position-based form of [`sample_exemplars`] over a pool of `len` items.
pub fn sample_exemplar_positions<R: Rng + ?Sized>(
    len: usize,
    query_pos: Option<usize>,
    n: usize,
    rng: &mut R,
) -> ExemplarSample<usize> {
    let others = len - usize::from(query_pos.is_some());
    let take = n.min(others);
    let picked = index::sample(rng, others, take)
        .into_iter()
        .map(|p| match query_pos {
            Some(q) if p >= q => p + 1,
            _ => p,
        })
        .collect();
    ExemplarSample {
        picked,
        clamped: take < n,
    }
}

/// Concatenates `exemplars` (each followed by its answer and a newline) with
/// `query`, renumbering every proxy to global document order. Proxy tokens in
/// text and in answers are rewritten to match.
pub fn assemble_instance(exemplars: &[Exemplar], query: Draft) -> Result<InterleavedInstance> {
    let mut segments: Vec<Segment> = Vec::new();
    let mut offset = 0u32;
    for (i, ex) in exemplars.iter().enumerate() {
        let k = local_image_count(&ex.segments).map_err(|v| collision(format!("exemplar {i}"), v))?;
        append_renumbered(&mut segments, &ex.segments, offset, k);
        push_text(&mut segments, " ");
        push_text(&mut segments, &renumber_tokens(&ex.answer, offset, k));
        push_text(&mut segments, EXEMPLAR_SEPARATOR);
        offset += k;
    }
    let k = local_image_count(&query.segments).map_err(|v| collision("query".into(), v))?;
    append_renumbered(&mut segments, &query.segments, offset, k);
    let target = renumber_tokens(&query.target, offset, k);

    let mut instance = Draft {
        segments,
        target,
        ..query
    }
    .into_instance();
    instance.n_exemplars = exemplars.len() as u32;
    instance.validate()?;
    Ok(instance)
}

fn collision(part: String, proxy: u32) -> Error {
    Error::InvariantViolation(vec![Violation::Malformed {
        path: part,
        detail: format!("local proxy {proxy} breaks 0..K-1 document order"),
    }])
}

/// Local image count, checking proxies run 0..K-1 in order.
fn local_image_count(segments: &[Segment]) -> std::result::Result<u32, u32> {
    let mut k = 0u32;
    for p in segments.iter().filter_map(Segment::proxy) {
        if p != k {
            return Err(p);
        }
        k += 1;
    }
    Ok(k)
}

fn append_renumbered(out: &mut Vec<Segment>, segments: &[Segment], offset: u32, k: u32) {
    for seg in segments {
        match seg {
            Segment::Text(t) => push_text(out, &renumber_tokens(t, offset, k)),
            Segment::Image { proxy, asset } => out.push(Segment::Image {
                proxy: proxy + offset,
                asset: asset.clone(),
            }),
        }
    }
}

/// Shifts every `[IMGj]` with `j < k` by `offset`, together with every
/// standalone `image j` phrase naming the same local image.
pub fn renumber_tokens(text: &str, offset: u32, k: u32) -> String {
    if offset == 0 {
        return text.to_string();
    }
    let mut edits: Vec<(usize, usize, String)> = scan_proxy_tokens(text)
        .filter_map(|m| {
            let j = m.index.filter(|&j| j < k)?;
            Some((m.start, m.end, proxy_token(j + offset)))
        })
        .collect();
    edits.extend(
        scan_image_phrases(text)
            .filter(|&(_, _, j)| j < k)
            .map(|(start, end, j)| (start, end, (j + offset).to_string())),
    );
    edits.sort_unstable_by_key(|e| e.0);
    let mut out = String::with_capacity(text.len() + 8);
    let mut last = 0;
    for (start, end, replacement) in edits {
        out.push_str(&text[last..start]);
        out.push_str(&replacement);
        last = end;
    }
    out.push_str(&text[last..]);
    out
}

/// Byte range and value of the number in each standalone `image <digits>`.
fn scan_image_phrases(text: &str) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
    const WORD: &str = "image ";
    text.match_indices(WORD).filter_map(move |(at, _)| {
        if text[..at].chars().next_back().is_some_and(is_word_char) {
            return None;
        }
        let start = at + WORD.len();
        let digits = text[start..].bytes().take_while(u8::is_ascii_digit).count();
        let end = start + digits;
        if digits == 0 || text[end..].chars().next().is_some_and(is_word_char) {
            return None;
        }
        Some((start, end, text[start..end].parse().ok()?))
    })
}
