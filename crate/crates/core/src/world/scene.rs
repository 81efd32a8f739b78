//! Scenes of attributed objects drawn from closed vocabularies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::random::rng_from_seed;

pub const SHAPES: [&str; 12] = [
    "cube", "sphere", "cylinder", "cone", "pyramid", "torus", "ring", "star", "disk", "prism",
    "block", "ball",
];
pub const COLORS: [&str; 8] = ["red", "green", "blue", "yellow", "purple", "orange", "white", "black"];
pub const SIZES: [&str; 3] = ["small", "medium", "large"];
pub const RELATIONS: [&[&str]; 6] = [
    &["left", "of"],
    &["right", "of"],
    &["above"],
    &["below"],
    &["behind"],
    &["near"],
];
pub const FILLERS: [&[&str]; 4] = [&["there", "is"], &["we", "see"], &["a", "photo", "of"], &["here", "is"]];

/// One object: indices into [`SHAPES`], [`COLORS`] and optionally [`SIZES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ObjectRepr", into = "ObjectRepr")]
pub struct ObjectSpec {
    pub shape: usize,
    pub color: usize,
    pub size: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ObjectRepr {
    shape: String,
    color: String,
    size: Option<String>,
}

fn lookup(list: &[&str], word: &str, what: &str) -> Result<usize, String> {
    list.iter()
        .position(|w| *w == word)
        .ok_or_else(|| format!("unknown {what} `{word}`"))
}

impl TryFrom<ObjectRepr> for ObjectSpec {
    type Error = String;
    fn try_from(r: ObjectRepr) -> Result<Self, String> {
        Ok(Self {
            shape: lookup(&SHAPES, &r.shape, "shape")?,
            color: lookup(&COLORS, &r.color, "color")?,
            size: r.size.map(|s| lookup(&SIZES, &s, "size")).transpose()?,
        })
    }
}

impl From<ObjectSpec> for ObjectRepr {
    fn from(o: ObjectSpec) -> Self {
        Self {
            shape: SHAPES[o.shape].to_string(),
            color: COLORS[o.color].to_string(),
            size: o.size.map(|s| SIZES[s].to_string()),
        }
    }
}

impl ObjectSpec {
    /// The noun phrase words: `a [size] color shape`.
    pub fn phrase(&self) -> Vec<&'static str> {
        let mut words = vec!["a"];
        if let Some(s) = self.size {
            words.push(SIZES[s]);
        }
        words.push(COLORS[self.color]);
        words.push(SHAPES[self.shape]);
        words
    }

    /// Dense index over all `(shape, color, size-or-none)` combinations.
    pub fn combination_index(&self) -> usize {
        let size = self.size.map_or(0, |s| s + 1);
        (self.shape * COLORS.len() + self.color) * (SIZES.len() + 1) + size
    }

    pub const COMBINATIONS: usize = SHAPES.len() * COLORS.len() * (SIZES.len() + 1);
}

/// Objects with one relation between each consecutive pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<ObjectSpec>,
    /// Indices into [`RELATIONS`]; `objects.len() - 1` entries.
    pub relations: Vec<usize>,
    pub seed: u64,
}

/// Sampling knobs of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Relative weight of scenes with 1, 2, ... objects.
    pub object_count_weights: Vec<f64>,
    /// Probability that an object carries a size adjective.
    pub size_prob: f64,
    /// Probability that a caption opens with a filler phrase.
    pub filler_prob: f64,
    /// Std of the per-scene noise added to oracle embeddings.
    pub noise_sigma: f64,
    pub oracle_seed: u64,
    /// Image group slots per scene; unused slots hold the empty vector.
    pub image_groups: usize,
    pub image_dim: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            object_count_weights: vec![0.15, 0.35, 0.3, 0.2],
            size_prob: 0.5,
            filler_prob: 0.3,
            noise_sigma: 0.05,
            oracle_seed: 7,
            image_groups: 4,
            image_dim: 256,
        }
    }
}

impl WorldConfig {
    pub fn max_objects(&self) -> usize {
        self.object_count_weights.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let w = &self.object_count_weights;
        if w.is_empty() || w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err("object_count_weights must be non-negative with a positive sum".into());
        }
        if self.image_groups < self.max_objects() {
            return Err(format!(
                "image_groups ({}) must cover the largest scene ({} objects)",
                self.image_groups,
                self.max_objects()
            ));
        }
        if self.image_dim == 0 {
            return Err("image_dim must be positive".into());
        }
        for (name, p) in [("size_prob", self.size_prob), ("filler_prob", self.filler_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err("noise_sigma must be non-negative".into());
        }
        Ok(())
    }
}

fn sample_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Deterministic scene for `seed`.
pub fn generate_scene(config: &WorldConfig, seed: u64) -> Scene {
    let mut rng = rng_from_seed(seed);
    let n = sample_weighted(&mut rng, &config.object_count_weights) + 1;
    let objects = (0..n)
        .map(|_| ObjectSpec {
            shape: rng.random_range(0..SHAPES.len()),
            color: rng.random_range(0..COLORS.len()),
            size: rng
                .random_bool(config.size_prob)
                .then(|| rng.random_range(0..SIZES.len())),
        })
        .collect();
    let relations = (1..n).map(|_| rng.random_range(0..RELATIONS.len())).collect();
    Scene {
        objects,
        relations,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let c = WorldConfig::default();
        assert_eq!(generate_scene(&c, 0), generate_scene(&c, 0));
        assert_ne!(generate_scene(&c, 0), generate_scene(&c, 1));
    }

    #[test]
    fn every_attribute_value_appears() {
        let c = WorldConfig::default();
        let mut shapes = [false; 12];
        let mut colors = [false; 8];
        let mut sizes = [false; 4];
        let mut rels = [false; 6];
        for seed in 0..10_000 {
            let s = generate_scene(&c, seed);
            for o in &s.objects {
                shapes[o.shape] = true;
                colors[o.color] = true;
                sizes[o.size.map_or(0, |z| z + 1)] = true;
            }
            for &r in &s.relations {
                rels[r] = true;
            }
        }
        assert!(shapes.iter().chain(&colors).chain(&sizes).chain(&rels).all(|&x| x));
    }

    #[test]
    fn object_counts_follow_weights() {
        let c = WorldConfig::default();
        let n = 100_000;
        let mut counts = [0usize; 4];
        for seed in 0..n {
            counts[generate_scene(&c, seed as u64).objects.len() - 1] += 1;
        }
        let total: f64 = c.object_count_weights.iter().sum();
        for (k, w) in c.object_count_weights.iter().enumerate() {
            let freq = counts[k] as f64 / n as f64;
            assert!((freq - w / total).abs() < 0.02, "count {} freq {freq}", k + 1);
        }
    }

    #[test]
    fn relations_link_consecutive_objects() {
        let c = WorldConfig::default();
        for seed in 0..200 {
            let s = generate_scene(&c, seed);
            assert_eq!(s.relations.len() + 1, s.objects.len());
        }
    }

    #[test]
    fn combination_index_is_a_bijection() {
        let mut seen = vec![false; ObjectSpec::COMBINATIONS];
        for shape in 0..SHAPES.len() {
            for color in 0..COLORS.len() {
                for size in [None, Some(0), Some(1), Some(2)] {
                    let i = ObjectSpec { shape, color, size }.combination_index();
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn scene_json_uses_words() {
        let s = Scene {
            objects: vec![ObjectSpec { shape: 0, color: 0, size: Some(2) }],
            relations: vec![],
            seed: 3,
        };
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"cube\"") && json.contains("\"large\""));
        assert_eq!(serde_json::from_str::<Scene>(&json).unwrap(), s);
    }
}
