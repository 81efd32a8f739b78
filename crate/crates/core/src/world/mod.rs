//! Synthetic image–caption world standing in for web data and a frozen
//! object-level image encoder.

pub mod caption;
pub mod dataset;
pub mod oracle;
pub mod scene;
pub mod vocab;

/// Version tag carried by dataset records and vocab files.
pub const SCHEMA: &str = "tgv1";

pub use caption::{generate_caption, make_foil, CaptionWithSpans, FoilOf};
pub use dataset::{build_dataset, DataError, Dataset, DatasetManifest, Example, Negative, NegativeKind};
pub use oracle::{ImageGroups, ImageOracle};
pub use scene::{generate_scene, ObjectSpec, Scene, WorldConfig};
pub use vocab::Vocab;
