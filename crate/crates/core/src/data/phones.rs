//! The 48-phone training inventory and its folding onto 39 phones for
//! scoring.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRAINING_PHONES: usize = 48;
pub const EVALUATION_PHONES: usize = 39;

const DEFAULT_MAP: &str = include_str!("../../data/timit_48_39.map");

/// Total map from training phone indices to evaluation phone indices.
///
/// Training indices follow the line order of the map file; evaluation indices
/// follow the order in which each evaluation phone first appears.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollapseMap {
    sources: Vec<String>,
    targets: Vec<String>,
    fold: Vec<usize>,
    source_index: HashMap<String, usize>,
}

impl CollapseMap {
    /// The standard folding shipped with the crate.
    pub fn standard() -> Self {
        CollapseMap::parse(DEFAULT_MAP, "built-in map").expect("built-in map is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = crate::error::read_to_string(path)?;
        CollapseMap::parse(&text, &path.display().to_string())
    }

    /// Parses `<training phone> <evaluation phone>` lines; `#` starts a
    /// comment.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut sources = Vec::new();
        let mut targets: Vec<String> = Vec::new();
        let mut fold = Vec::new();
        let mut source_index = HashMap::new();
        let mut target_index: HashMap<String, usize> = HashMap::new();

        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [src, dst] = fields[..] else {
                return Err(Error::parse(
                    source_name,
                    n + 1,
                    format!("expected two phone symbols, found {}", fields.len()),
                ));
            };
            if source_index.contains_key(src) {
                return Err(Error::parse(source_name, n + 1, format!("duplicate entry for '{src}'")));
            }
            let t = *target_index.entry(dst.to_string()).or_insert_with(|| {
                targets.push(dst.to_string());
                targets.len() - 1
            });
            source_index.insert(src.to_string(), sources.len());
            sources.push(src.to_string());
            fold.push(t);
        }

        if sources.len() != TRAINING_PHONES {
            let missing: Vec<&str> = CollapseMap::standard_sources()
                .filter(|p| !source_index.contains_key(*p))
                .collect();
            let detail = if missing.is_empty() {
                String::new()
            } else {
                format!("; missing {}", missing.join(", "))
            };
            return Err(Error::Completeness(format!(
                "{} training phones mapped, expected {TRAINING_PHONES}{detail}",
                sources.len()
            )));
        }
        if targets.len() != EVALUATION_PHONES {
            return Err(Error::Cardinality {
                found: targets.len(),
                expected: EVALUATION_PHONES,
            });
        }
        Ok(CollapseMap {
            sources,
            targets,
            fold,
            source_index,
        })
    }

    fn standard_sources() -> impl Iterator<Item = &'static str> {
        DEFAULT_MAP
            .lines()
            .filter_map(|l| l.split('#').next())
            .filter_map(|l| l.split_whitespace().next())
    }

    pub fn training_phones(&self) -> &[String] {
        &self.sources
    }

    pub fn evaluation_phones(&self) -> &[String] {
        &self.targets
    }

    pub fn num_training(&self) -> usize {
        self.sources.len()
    }

    pub fn num_evaluation(&self) -> usize {
        self.targets.len()
    }

    /// Training class index of a phone symbol.
    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.source_index.get(symbol).copied()
    }

    /// Evaluation class of a training class.
    pub fn fold(&self, training_index: usize) -> Option<usize> {
        self.fold.get(training_index).copied()
    }
}
