//! Character spans and character-offset sets.
//!
//! All offsets are Unicode code-point offsets into the original text, with
//! exclusive ends.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of code-point offsets.
pub type CharSet = BTreeSet<usize>;

/// Half-open range `[start, end)` of code points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn intersects(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }

    pub fn contains_range(&self, start: usize, end: usize) -> bool {
        self.start <= start && end <= self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

/// Validates spans against a text of `text_len` code points, then sorts them
/// and merges overlapping or touching ranges.
pub fn normalize_spans(spans: &[Span], text_len: usize) -> Result<Vec<Span>> {
    for s in spans {
        if s.start >= s.end || s.end > text_len {
            return Err(Error::Data(format!(
                "span [{}, {}) is empty or outside text of length {text_len}",
                s.start, s.end
            )));
        }
    }
    let mut sorted = spans.to_vec();
    sorted.sort();
    let mut merged: Vec<Span> = Vec::with_capacity(sorted.len());
    for s in sorted {
        match merged.last_mut() {
            Some(last) if s.start <= last.end => last.end = last.end.max(s.end),
            _ => merged.push(s),
        }
    }
    Ok(merged)
}

pub fn spans_to_char_set(spans: &[Span]) -> CharSet {
    spans.iter().flat_map(|s| s.start..s.end).collect()
}

/// Inverse of [`spans_to_char_set`]: maximal runs of consecutive offsets.
pub fn char_set_to_spans(set: &CharSet) -> Vec<Span> {
    let mut out: Vec<Span> = Vec::new();
    for &c in set {
        match out.last_mut() {
            Some(last) if last.end == c => last.end = c + 1,
            _ => out.push(Span::new(c, c + 1)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn overlapping_spans_merge() {
        let spans = [Span::new(4, 9), Span::new(6, 12)];
        assert_eq!(normalize_spans(&spans, 20).unwrap(), vec![Span::new(4, 12)]);
    }

    #[test]
    fn out_of_bounds_span_rejected() {
        assert!(normalize_spans(&[Span::new(3, 11)], 10).is_err());
        assert!(normalize_spans(&[Span::new(5, 5)], 10).is_err());
    }

    #[test]
    fn span_serializes_as_pair() {
        let s: Span = serde_json::from_str("[4, 9]").unwrap();
        assert_eq!(s, Span::new(4, 9));
        assert_eq!(serde_json::to_string(&s).unwrap(), "[4,9]");
    }

    proptest! {
        #[test]
        fn normalized_spans_are_sorted_disjoint_and_cover_same_chars(
            raw in proptest::collection::vec((0usize..40, 1usize..10), 0..8)
        ) {
            let spans: Vec<Span> = raw.iter().map(|&(s, l)| Span::new(s, (s + l).min(50))).collect();
            let norm = normalize_spans(&spans, 50).unwrap();
            for w in norm.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
            prop_assert_eq!(spans_to_char_set(&spans), spans_to_char_set(&norm));
            prop_assert_eq!(char_set_to_spans(&spans_to_char_set(&norm)), norm);
        }
    }
}
