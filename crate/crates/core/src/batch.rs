//! Padded token batches with gold phrase spans.

use serde::{Deserialize, Serialize};

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// `B × M` token ids padded to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBatch {
    batch_size: usize,
    seq_len: usize,
    token_ids: Vec<usize>,
    pad_mask: Vec<bool>,
    gold_spans: Vec<Vec<Span>>,
}

impl TextBatch {
    /// Pads `sequences` with `pad_id` to the longest one. `gold_spans` is
    /// either empty (unannotated) or holds one list per sequence.
    ///
    /// # Panics
    /// On an empty batch, an empty sequence, or a span list of the wrong length.
    pub fn new(sequences: &[Vec<usize>], pad_id: usize, gold_spans: Vec<Vec<Span>>) -> Self {
        assert!(!sequences.is_empty(), "empty batch");
        assert!(sequences.iter().all(|s| !s.is_empty()), "empty sequence");
        let gold_spans = if gold_spans.is_empty() {
            vec![Vec::new(); sequences.len()]
        } else {
            assert_eq!(gold_spans.len(), sequences.len());
            gold_spans
        };
        let seq_len = sequences.iter().map(Vec::len).max().unwrap_or(0);
        let mut token_ids = Vec::with_capacity(sequences.len() * seq_len);
        let mut pad_mask = Vec::with_capacity(sequences.len() * seq_len);
        for s in sequences {
            token_ids.extend_from_slice(s);
            pad_mask.extend(std::iter::repeat_n(true, s.len()));
            token_ids.extend(std::iter::repeat_n(pad_id, seq_len - s.len()));
            pad_mask.extend(std::iter::repeat_n(false, seq_len - s.len()));
        }
        Self {
            batch_size: sequences.len(),
            seq_len,
            token_ids,
            pad_mask,
            gold_spans,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Row-major `B × M` token ids.
    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    /// Row-major `B × M`; `true` marks a real token.
    pub fn pad_mask(&self) -> &[bool] {
        &self.pad_mask
    }

    pub fn gold_spans(&self) -> &[Vec<Span>] {
        &self.gold_spans
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.token_ids[b * self.seq_len..(b + 1) * self.seq_len]
    }

    /// Number of real tokens in row `b`.
    pub fn real_len(&self, b: usize) -> usize {
        self.pad_mask[b * self.seq_len..(b + 1) * self.seq_len]
            .iter()
            .filter(|&&m| m)
            .count()
    }

    /// Same batch with the token at `(b, j)` replaced; used for perturbation
    /// checks.
    pub fn with_token(&self, b: usize, j: usize, id: usize) -> Self {
        let mut out = self.clone();
        out.token_ids[b * self.seq_len + j] = id;
        out
    }
}
