//! Frame ingestion and everything between raw frame features and model
//! inputs.

pub mod frames;
pub mod phones;
pub mod stacked;
pub mod synth;

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

pub use frames::{load_frame_table, normalize_per_speaker, scale_to_unit_range, FrameRow, FrameTable, Utterance};
pub use phones::CollapseMap;
pub use stacked::{split_labels, stack_context, GroundTruth, Provenance, StackedDataset};
pub use synth::{generate_corpus, generate_synthetic, synthetic_label_set, SynthCorpus, SynthCorpusConfig};

use crate::error::Result;

/// Frames on each side of the centre frame in the standard setup.
pub const DEFAULT_CONTEXT: usize = 5;

/// Speaker normalization, range scaling and context stacking, in that order.
pub fn prepare_table(table: &FrameTable, left: usize, right: usize, source_digest: String) -> StackedDataset {
    let normalized = scale_to_unit_range(&normalize_per_speaker(table));
    let mut ds = stack_context(&normalized, left, right);
    ds.set_source_digest(source_digest);
    ds
}

/// Generates a synthetic corpus and runs each split through
/// [`prepare_table`]. Returns train, valid and test, in that order.
pub fn prepare_synthetic(config: &SynthCorpusConfig, map: &CollapseMap, context: usize) -> Result<[StackedDataset; 3]> {
    let corpus = generate_corpus(config, map)?;
    let digest = |split: &str| format!("synthetic:{split}:seed={}", config.seed);
    Ok([
        prepare_table(&corpus.train, context, context, digest("train")),
        prepare_table(&corpus.valid, context, context, digest("valid")),
        prepare_table(&corpus.test, context, context, digest("test")),
    ])
}

/// `sha256:<hex>` of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(path)?;
    let hash = Sha256::digest(&bytes);
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    Ok(format!("sha256:{hex}"))
}
