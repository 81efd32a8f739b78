//! Frozen stand-in for an object-level image encoder.
//!
//! Every `(shape, color, size-or-none)` combination owns a fixed random
//! base vector built once from the oracle seed. Base vectors share
//! attribute components, so objects that agree on shape or color are
//! closer than unrelated ones while every combination stays distinct.
//! A scene is encoded as one slot per object (base vector plus small
//! per-scene noise) with the remaining slots holding a constant empty
//! vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{ObjectSpec, Scene, WorldConfig, COLORS, SHAPES, SIZES};
use crate::autodiff::random::{derive_seed, rng_from_seed};

const SHAPE_WEIGHT: f64 = 1.0;
const COLOR_WEIGHT: f64 = 0.8;
const SIZE_WEIGHT: f64 = 0.5;
const COMBO_WEIGHT: f64 = 0.35;

/// `K_img × d_img` embeddings of one scene, stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGroups {
    pub n_groups: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl ImageGroups {
    pub fn row(&self, k: usize) -> &[f32] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageOracle {
    table: Vec<Vec<f64>>,
    empty: Vec<f64>,
    dim: usize,
    n_groups: usize,
    sigma: f64,
    seed: u64,
}

fn gaussian<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    (0..dim).map(|_| n.sample(rng)).collect()
}

/// Rescales to norm `√dim`, i.e. unit RMS per coordinate.
fn rescale(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = (v.len() as f64).sqrt();
    for x in &mut v {
        *x *= target / norm;
    }
    v
}

impl ImageOracle {
    pub fn new(config: &WorldConfig) -> Self {
        Self::with_noise(config, config.noise_sigma)
    }

    pub fn with_noise(config: &WorldConfig, sigma: f64) -> Self {
        let dim = config.image_dim;
        let mut rng = rng_from_seed(config.oracle_seed);
        let shapes: Vec<_> = (0..SHAPES.len()).map(|_| gaussian(&mut rng, dim)).collect();
        let colors: Vec<_> = (0..COLORS.len()).map(|_| gaussian(&mut rng, dim)).collect();
        let sizes: Vec<_> = (0..=SIZES.len()).map(|_| gaussian(&mut rng, dim)).collect();
        let mut table = vec![Vec::new(); ObjectSpec::COMBINATIONS];
        for shape in 0..SHAPES.len() {
            for color in 0..COLORS.len() {
                for size in 0..=SIZES.len() {
                    let spec = ObjectSpec {
                        shape,
                        color,
                        size: size.checked_sub(1),
                    };
                    let combo = gaussian(&mut rng, dim);
                    let v = (0..dim)
                        .map(|i| {
                            SHAPE_WEIGHT * shapes[shape][i]
                                + COLOR_WEIGHT * colors[color][i]
                                + SIZE_WEIGHT * sizes[size][i]
                                + COMBO_WEIGHT * combo[i]
                        })
                        .collect();
                    table[spec.combination_index()] = rescale(v);
                }
            }
        }
        let empty = rescale(gaussian(&mut rng, dim));
        Self {
            table,
            empty,
            dim,
            n_groups: config.image_groups,
            sigma,
            seed: config.oracle_seed,
        }
    }

    /// Noise-free embedding of one object.
    pub fn base(&self, object: &ObjectSpec) -> &[f64] {
        &self.table[object.combination_index()]
    }

    pub fn empty_slot(&self) -> &[f64] {
        &self.empty
    }

    /// Deterministic in `(scene, oracle seed)`.
    pub fn encode(&self, scene: &Scene) -> ImageGroups {
        assert!(
            scene.objects.len() <= self.n_groups,
            "scene has more objects than image group slots"
        );
        let mut rng = rng_from_seed(derive_seed(self.seed, scene.seed));
        let noise = Normal::new(0.0, self.sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let mut data = Vec::with_capacity(self.n_groups * self.dim);
        for k in 0..self.n_groups {
            match scene.objects.get(k) {
                Some(obj) => {
                    for &x in self.base(obj) {
                        let eps = if self.sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        data.push((x + eps) as f32);
                    }
                }
                None => data.extend(self.empty.iter().map(|&x| x as f32)),
            }
        }
        ImageGroups {
            n_groups: self.n_groups,
            dim: self.dim,
            data,
        }
    }
}
