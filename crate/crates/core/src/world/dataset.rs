//! Dataset generation and the `tgv1` JSON-lines format.
//!
//! One record per line:
//!
//! ```json
//! {"schema":"tgv1","scene":{..},"image_shape":[4,256],"image_groups":"<base64 f32 LE>",
//!  "caption_tokens":[..],"gold_spans":[{"start":1,"end":4}],"foil_tokens":[..],
//!  "foil_of":{..},"negatives":[{"kind":"subject","scene":{..},"image_groups":"<base64>"}]}
//! ```
//!
//! A sidecar `vocab.json` holds the token list.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::caption::{generate_caption, make_foil, CaptionWithSpans, FoilOf};
use super::oracle::{ImageGroups, ImageOracle};
use super::scene::{generate_scene, Scene, WorldConfig, COLORS, SHAPES};
use super::vocab::{Vocab, VocabError};
use super::SCHEMA;
use crate::autodiff::random::{derive_seed, rng_from_seed};
use crate::batch::Span;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Vocab {
        path: PathBuf,
        #[source]
        source: VocabError,
    },
    #[error("invalid world config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeKind {
    Subject,
    Object,
}

/// A scene that differs from the captioned one in a single object.
#[derive(Debug, Clone, PartialEq)]
pub struct Negative {
    pub kind: NegativeKind,
    pub scene: Scene,
    pub image_groups: ImageGroups,
}

/// One decoded dataset entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub scene: Scene,
    pub image_groups: ImageGroups,
    pub caption: CaptionWithSpans,
    pub foil: CaptionWithSpans,
    pub negatives: Vec<Negative>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NegativeRecord {
    kind: NegativeKind,
    scene: Scene,
    image_groups: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Record {
    schema: String,
    scene: Scene,
    image_shape: [usize; 2],
    image_groups: String,
    caption_tokens: Vec<usize>,
    gold_spans: Vec<Span>,
    foil_tokens: Vec<usize>,
    foil_of: Option<FoilOf>,
    negatives: Vec<NegativeRecord>,
}

fn encode_f32(data: &[f32]) -> String {
    let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f32(s: &str, expect: usize) -> Result<Vec<f32>, String> {
    let bytes = STANDARD.decode(s).map_err(|e| format!("image_groups: {e}"))?;
    if bytes.len() != expect * 4 {
        return Err(format!(
            "image_groups holds {} bytes, expected {}",
            bytes.len(),
            expect * 4
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl Example {
    /// The `tgv1` JSON line for this example (no trailing newline).
    pub fn to_json_line(&self) -> String {
        let record = Record {
            schema: SCHEMA.to_string(),
            scene: self.scene.clone(),
            image_shape: [self.image_groups.n_groups, self.image_groups.dim],
            image_groups: encode_f32(&self.image_groups.data),
            caption_tokens: self.caption.tokens.clone(),
            gold_spans: self.caption.gold_spans.clone(),
            foil_tokens: self.foil.tokens.clone(),
            foil_of: self.foil.foil_of,
            negatives: self
                .negatives
                .iter()
                .map(|n| NegativeRecord {
                    kind: n.kind,
                    scene: n.scene.clone(),
                    image_groups: encode_f32(&n.image_groups.data),
                })
                .collect(),
        };
        serde_json::to_string(&record).expect("record serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let r: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if r.schema != SCHEMA {
            return Err(format!("schema `{}` is not `{SCHEMA}`", r.schema));
        }
        let [n_groups, dim] = r.image_shape;
        let groups = |s: &str| -> Result<ImageGroups, String> {
            Ok(ImageGroups {
                n_groups,
                dim,
                data: decode_f32(s, n_groups * dim)?,
            })
        };
        for span in &r.gold_spans {
            if span.start >= span.end || span.end > r.caption_tokens.len() {
                return Err(format!("gold span {span:?} outside the caption"));
            }
        }
        Ok(Example {
            image_groups: groups(&r.image_groups)?,
            negatives: r
                .negatives
                .iter()
                .map(|n| {
                    Ok(Negative {
                        kind: n.kind,
                        scene: n.scene.clone(),
                        image_groups: groups(&n.image_groups)?,
                    })
                })
                .collect::<Result<_, String>>()?,
            caption: CaptionWithSpans {
                tokens: r.caption_tokens,
                gold_spans: r.gold_spans.clone(),
                foil_of: None,
            },
            foil: CaptionWithSpans {
                tokens: r.foil_tokens,
                gold_spans: r.gold_spans,
                foil_of: r.foil_of,
            },
            scene: r.scene,
        })
    }
}

/// Generation parameters stored next to the splits as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub world: WorldConfig,
    pub seed: u64,
    pub sizes: [usize; 3],
    pub vocab_hash: String,
}

/// All three splits plus the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub vocab: Vocab,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

fn perturb_object(scene: &Scene, index: usize, seed: u64) -> Scene {
    let mut rng = rng_from_seed(seed);
    let mut out = scene.clone();
    let obj = &mut out.objects[index];
    if rng.random_bool(0.5) {
        obj.shape = (obj.shape + rng.random_range(1..SHAPES.len())) % SHAPES.len();
    } else {
        obj.color = (obj.color + rng.random_range(1..COLORS.len())) % COLORS.len();
    }
    out.seed = derive_seed(scene.seed, 0x4e45_4700 + index as u64);
    out
}

fn make_example(config: &WorldConfig, oracle: &ImageOracle, vocab: &Vocab, scene_seed: u64) -> Example {
    let scene = generate_scene(config, scene_seed);
    let caption = generate_caption(&scene, vocab, config, derive_seed(scene_seed, 1));
    let foil = make_foil(&caption, &scene, vocab, derive_seed(scene_seed, 2));
    let mut negatives = vec![];
    let kinds = [NegativeKind::Subject, NegativeKind::Object];
    for (index, kind) in kinds.into_iter().enumerate().take(scene.objects.len()) {
        let neg = perturb_object(&scene, index, derive_seed(scene_seed, 3 + index as u64));
        negatives.push(Negative {
            kind,
            image_groups: oracle.encode(&neg),
            scene: neg,
        });
    }
    Example {
        image_groups: oracle.encode(&scene),
        scene,
        caption,
        foil,
        negatives,
    }
}

/// Generates the three splits. Split seeds are disjoint, and a val/test
/// caption whose text already occurs in an earlier split is redrawn.
pub fn build_dataset(
    config: &WorldConfig,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    config.validate().map_err(DataError::Config)?;
    let vocab = Vocab::synthetic();
    let oracle = ImageOracle::new(config);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut splits = Vec::with_capacity(3);
    for (tag, &n) in [n_train, n_val, n_test].iter().enumerate() {
        let split_seed = derive_seed(seed, 0x5350_4c00 + tag as u64);
        let mut examples = Vec::with_capacity(n);
        let mut fresh = Vec::with_capacity(n);
        let mut counter = 0u64;
        while examples.len() < n {
            let ex = make_example(config, &oracle, &vocab, derive_seed(split_seed, counter));
            counter += 1;
            if tag > 0 && seen.contains(&ex.caption.tokens) {
                continue;
            }
            fresh.push(ex.caption.tokens.clone());
            examples.push(ex);
        }
        seen.extend(fresh);
        splits.push(examples);
    }
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset {
        manifest: DatasetManifest {
            schema: SCHEMA.to_string(),
            world: config.clone(),
            seed,
            sizes: [n_train, n_val, n_test],
            vocab_hash: vocab.hash(),
        },
        vocab,
        train,
        val,
        test,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_split(path: &Path, examples: &[Example]) -> Result<(), DataError> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&ex.to_json_line());
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))
}

pub fn read_split(path: &Path) -> Result<Vec<Example>, DataError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Example::from_json_line(&line).map_err(|msg| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?);
    }
    Ok(out)
}

pub fn read_vocab(dir: &Path) -> Result<Vocab, DataError> {
    let path = dir.join("vocab.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Vocab::from_json(&text).map_err(|source| DataError::Vocab { path, source })
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DataError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if m.schema != SCHEMA {
        return Err(DataError::Parse {
            path,
            line: 1,
            msg: format!("schema `{}` is not `{SCHEMA}`", m.schema),
        });
    }
    Ok(m)
}

impl Dataset {
    /// Writes `train.jsonl`, `val.jsonl`, `test.jsonl`, `vocab.json` and
    /// `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(io_err(&path))?;
        for (name, split) in SPLITS.iter().zip([&self.train, &self.val, &self.test]) {
            write_split(&dir.join(format!("{name}.jsonl")), split)?;
        }
        let path = dir.join("vocab.json");
        fs::write(&path, self.vocab.to_json()).map_err(io_err(&path))
    }

    pub fn read(dir: &Path) -> Result<Self, DataError> {
        Ok(Self {
            manifest: read_manifest(dir)?,
            vocab: read_vocab(dir)?,
            train: read_split(&dir.join("train.jsonl"))?,
            val: read_split(&dir.join("val.jsonl"))?,
            test: read_split(&dir.join("test.jsonl"))?,
        })
    }
}
