//! Segmentation quality against gold phrase spans and zero-shot ranking.

mod hungarian;
mod metrics;
mod ranking;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Result, Tape};
use crate::batch::TextBatch;
use crate::model::{EncoderConfig, Mode, TextGroupModel};
use crate::world::vocab::PAD;
use crate::world::Example;

pub use hungarian::hungarian_match;
pub use metrics::{
    group_tokens, match_example, pair_scores, segmentation_metrics, token_iou, ExampleMatch, MatchResult,
    MatchedPair, PairScores, SegmentationGold,
};
pub use ranking::{cosine, foil_items, pairwise_ranking_accuracy, scene_items, Embedder, RankItem};

/// How equal similarities are scored in ranking accuracy.
pub const TIE_POLICY: &str = "ties count as failures";

const EVAL_BATCH: usize = 128;

/// Eval-mode hard assignment of every caption, trimmed to its length.
pub fn predict_assignments(model: &TextGroupModel, captions: &[&[usize]]) -> Result<Vec<Vec<Option<usize>>>> {
    let mut out = Vec::with_capacity(captions.len());
    for chunk in captions.chunks(EVAL_BATCH) {
        let seqs: Vec<Vec<usize>> = chunk.iter().map(|c| c.to_vec()).collect();
        let batch = TextBatch::new(&seqs, PAD, vec![]);
        let tape = Tape::new();
        let p = model.params.bind_constant(&tape);
        let (_, grouping) = model.encode_text(&p, &batch, Mode::Eval)?;
        for (row, c) in grouping.hard_assignment.into_iter().zip(chunk) {
            out.push(row[..c.len()].to_vec());
        }
    }
    Ok(out)
}

pub fn gold_of(examples: &[Example]) -> Vec<SegmentationGold> {
    examples
        .iter()
        .map(|e| SegmentationGold::new(e.caption.gold_spans.clone(), e.caption.tokens.len()))
        .collect()
}

/// Segmentation metrics of `model` on `examples`.
pub fn segmentation_eval(model: &TextGroupModel, examples: &[Example]) -> Result<MatchResult> {
    let captions: Vec<&[usize]> = examples.iter().map(|e| e.caption.tokens.as_slice()).collect();
    let assignments = predict_assignments(model, &captions)?;
    Ok(segmentation_metrics(&assignments, &gold_of(examples), model.config.n_groups))
}

/// Segmentation metrics of a freshly initialized, untrained encoder.
pub fn random_baseline(examples: &[Example], config: &EncoderConfig, seed: u64) -> Result<MatchResult> {
    let model = TextGroupModel::new(config.clone(), seed).map_err(|e| crate::autodiff::TensorError::Invalid {
        op: "random_baseline",
        msg: e.to_string(),
    })?;
    segmentation_eval(&model, examples)
}

/// The metrics report written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tiou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ranking_accuracy_scene: f64,
    pub ranking_accuracy_foil: f64,
    pub n_examples: usize,
    pub n_skipped: usize,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub tie_policy: String,
}

/// Full evaluation of `model` on `examples`.
pub fn evaluate(
    model: &TextGroupModel,
    examples: &[Example],
    config_hash: &str,
    checkpoint_hash: &str,
) -> Result<Report> {
    let seg = segmentation_eval(model, examples)?;
    let scene = pairwise_ranking_accuracy(model, &scene_items(examples))?;
    let foil = pairwise_ranking_accuracy(model, &foil_items(examples))?;
    Ok(Report {
        tiou: seg.corpus.iou,
        precision: seg.corpus.precision,
        recall: seg.corpus.recall,
        f1: seg.corpus.f1,
        ranking_accuracy_scene: scene,
        ranking_accuracy_foil: foil,
        n_examples: seg.n_examples,
        n_skipped: seg.n_skipped,
        config_hash: config_hash.to_string(),
        checkpoint_hash: checkpoint_hash.to_string(),
        tie_policy: TIE_POLICY.to_string(),
    })
}
