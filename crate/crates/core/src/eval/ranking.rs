//! Zero-shot pairwise ranking by cosine similarity of pooled embeddings.

use crate::autodiff::{Result, Tape};
use crate::batch::TextBatch;
use crate::model::{Mode, TextGroupModel};
use crate::objectives::{project_and_pool, ImageBatch};
use crate::world::vocab::PAD;
use crate::world::{Example, ImageGroups};

/// Anything that maps captions and image groups into a shared space.
pub trait Embedder {
    fn embed_texts(&self, captions: &[&[usize]]) -> Result<Vec<Vec<f64>>>;
    fn embed_images(&self, images: &[&ImageGroups]) -> Result<Vec<Vec<f64>>>;
}

/// One ranking question: the positive must score strictly higher.
#[derive(Debug, Clone, Copy)]
pub enum RankItem<'a> {
    /// One caption against two scenes.
    Images {
        caption: &'a [usize],
        positive: &'a ImageGroups,
        negative: &'a ImageGroups,
    },
    /// One scene against its caption and a foil caption.
    Captions {
        image: &'a ImageGroups,
        positive: &'a [usize],
        negative: &'a [usize],
    },
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

/// Percentage of items whose positive wins. Ties count as failures.
pub fn pairwise_ranking_accuracy<E: Embedder + ?Sized>(embedder: &E, items: &[RankItem<'_>]) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut captions: Vec<&[usize]> = vec![];
    let mut images: Vec<&ImageGroups> = vec![];
    for item in items {
        match *item {
            RankItem::Images { caption, positive, negative } => {
                captions.push(caption);
                images.push(positive);
                images.push(negative);
            }
            RankItem::Captions { image, positive, negative } => {
                images.push(image);
                captions.push(positive);
                captions.push(negative);
            }
        }
    }
    let t = embedder.embed_texts(&captions)?;
    let v = embedder.embed_images(&images)?;
    let (mut ti, mut vi) = (0, 0);
    let mut wins = 0usize;
    for item in items {
        let (pos, neg) = match item {
            RankItem::Images { .. } => {
                let r = (cosine(&t[ti], &v[vi]), cosine(&t[ti], &v[vi + 1]));
                ti += 1;
                vi += 2;
                r
            }
            RankItem::Captions { .. } => {
                let r = (cosine(&v[vi], &t[ti]), cosine(&v[vi], &t[ti + 1]));
                vi += 1;
                ti += 2;
                r
            }
        };
        wins += (pos > neg) as usize;
    }
    Ok(100.0 * wins as f64 / items.len() as f64)
}

/// Caption against its scene and each single-object perturbation of it.
pub fn scene_items(examples: &[Example]) -> Vec<RankItem<'_>> {
    examples
        .iter()
        .flat_map(|e| {
            e.negatives.iter().map(move |n| RankItem::Images {
                caption: &e.caption.tokens,
                positive: &e.image_groups,
                negative: &n.image_groups,
            })
        })
        .collect()
}

/// Scene against its caption and its foil.
pub fn foil_items(examples: &[Example]) -> Vec<RankItem<'_>> {
    examples
        .iter()
        .map(|e| RankItem::Captions {
            image: &e.image_groups,
            positive: &e.caption.tokens,
            negative: &e.foil.tokens,
        })
        .collect()
}

const EMBED_BATCH: usize = 128;

impl Embedder for TextGroupModel {
    fn embed_texts(&self, captions: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(captions.len());
        for chunk in captions.chunks(EMBED_BATCH) {
            let seqs: Vec<Vec<usize>> = chunk.iter().map(|c| c.to_vec()).collect();
            let batch = TextBatch::new(&seqs, PAD, vec![]);
            let tape = Tape::new();
            let p = self.params.bind_constant(&tape);
            let (groups, _) = self.encode_text(&p, &batch, Mode::Eval)?;
            let pooled = project_and_pool(&p, &groups, &self.layout.text_projector)?;
            out.extend(pooled.value().chunks(self.config.projection_dim).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    fn embed_images(&self, images: &[&ImageGroups]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EMBED_BATCH) {
            let (k, d) = (chunk[0].n_groups, chunk[0].dim);
            let data = chunk.iter().flat_map(|g| g.to_f64()).collect();
            let batch = ImageBatch::new(data, chunk.len(), k, d);
            let tape = Tape::new();
            let p = self.params.bind_constant(&tape);
            let pooled = project_and_pool(&p, &batch.to_tensor(&tape)?, &self.layout.image_projector)?;
            out.extend(pooled.value().chunks(self.config.projection_dim).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}
