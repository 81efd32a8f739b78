//! Template captions with gold noun-phrase spans, and single-noun foils.
//!
//! Grammar: `<bos> [filler] NP (REL NP)* <eos>` with `NP = a [size] color
//! shape`. Each NP is one gold span; filler and relation words are left
//! unannotated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Scene, WorldConfig, FILLERS, RELATIONS, SHAPES};
use super::vocab::{Vocab, BOS, EOS};
use crate::autodiff::random::rng_from_seed;
use crate::batch::Span;

/// Records which noun a foil replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoilOf {
    /// Index of the altered object in the scene.
    pub object: usize,
    /// Token position of the swapped noun.
    pub position: usize,
    pub original_token: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionWithSpans {
    pub tokens: Vec<usize>,
    /// One span per scene object, in order.
    pub gold_spans: Vec<Span>,
    pub foil_of: Option<FoilOf>,
}

fn word_id(vocab: &Vocab, w: &str) -> usize {
    vocab
        .id(w)
        .unwrap_or_else(|| panic!("grammar word `{w}` missing from vocab"))
}

/// Deterministic in `(scene, seed)`.
pub fn generate_caption(scene: &Scene, vocab: &Vocab, config: &WorldConfig, seed: u64) -> CaptionWithSpans {
    let mut rng = rng_from_seed(seed);
    let mut tokens = vec![BOS];
    if rng.random_bool(config.filler_prob) {
        let filler = FILLERS[rng.random_range(0..FILLERS.len())];
        tokens.extend(filler.iter().map(|w| word_id(vocab, w)));
    }
    let mut gold_spans = Vec::with_capacity(scene.objects.len());
    for (i, obj) in scene.objects.iter().enumerate() {
        if i > 0 {
            let rel = RELATIONS[scene.relations[i - 1]];
            tokens.extend(rel.iter().map(|w| word_id(vocab, w)));
        }
        let start = tokens.len();
        tokens.extend(obj.phrase().into_iter().map(|w| word_id(vocab, w)));
        gold_spans.push(Span::new(start, tokens.len()));
    }
    tokens.push(EOS);
    CaptionWithSpans {
        tokens,
        gold_spans,
        foil_of: None,
    }
}

/// Replaces the noun of one randomly chosen object with a different noun.
///
/// # Panics
/// If the caption has no spans.
pub fn make_foil(caption: &CaptionWithSpans, scene: &Scene, vocab: &Vocab, seed: u64) -> CaptionWithSpans {
    assert!(!caption.gold_spans.is_empty(), "foil needs at least one span");
    let mut rng = rng_from_seed(seed);
    let object = rng.random_range(0..caption.gold_spans.len());
    let original_shape = scene.objects[object].shape;
    let offset = rng.random_range(1..SHAPES.len());
    let foil_shape = (original_shape + offset) % SHAPES.len();
    let position = caption.gold_spans[object].end - 1;
    let mut tokens = caption.tokens.clone();
    let original_token = tokens[position];
    debug_assert_eq!(original_token, word_id(vocab, SHAPES[original_shape]));
    tokens[position] = word_id(vocab, SHAPES[foil_shape]);
    CaptionWithSpans {
        tokens,
        gold_spans: caption.gold_spans.clone(),
        foil_of: Some(FoilOf {
            object,
            position,
            original_token,
        }),
    }
}
