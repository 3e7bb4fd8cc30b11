//! Context-stacked examples, labeled-fraction simulation and the binary
//! dataset cache.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio;
use crate::data::frames::FrameTable;
use crate::error::{Error, Result};
use crate::tensor::Rng;

const CACHE_MAGIC: &[u8; 4] = b"SSDS";
const CACHE_VERSION: u8 = 1;
const ABSENT_LABEL: u32 = u32::MAX;

/// Where a dataset came from and how its labels were thinned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub source_digest: String,
    pub split_seed: Option<u64>,
    pub labeled_fraction: f64,
}

/// Fixed-width examples with a label that training may or may not see.
///
/// Every example keeps its ground-truth label (if it ever had one), but
/// [`training_label`](Self::training_label) only reveals it when the example
/// is flagged as labeled. The ground truth is reachable only through
/// [`ground_truth`](Self::ground_truth), which scoring code uses.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedDataset {
    input_dim: usize,
    inputs: Vec<f64>,
    labels: Vec<Option<u32>>,
    labeled: Vec<bool>,
    provenance: Provenance,
}

/// Evaluation-only access to reference labels.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruth<'a> {
    labels: &'a [Option<u32>],
}

impl GroundTruth<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i].map(|l| l as usize)
    }
}

impl StackedDataset {
    /// Builds a dataset; examples with a label start out labeled.
    pub fn new(input_dim: usize, inputs: Vec<f64>, labels: Vec<Option<usize>>, provenance: Provenance) -> Result<Self> {
        if input_dim == 0 || inputs.len() != labels.len() * input_dim {
            return Err(Error::Shape {
                op: "StackedDataset::new",
                left: (labels.len(), input_dim),
                right: (inputs.len(), 1),
            });
        }
        let labels: Vec<Option<u32>> = labels
            .into_iter()
            .map(|l| {
                l.map(|v| u32::try_from(v).ok().filter(|&v| v != ABSENT_LABEL))
                    .map(|v| v.ok_or_else(|| Error::Integrity("label out of range".into())))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        let labeled = labels.iter().map(Option::is_some).collect();
        Ok(StackedDataset {
            input_dim,
            inputs,
            labels,
            labeled,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled[i]
    }

    /// The label as training sees it: `None` unless the example is labeled.
    pub fn training_label(&self, i: usize) -> Option<usize> {
        if self.labeled[i] {
            self.labels[i].map(|l| l as usize)
        } else {
            None
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }

    pub fn ground_truth(&self) -> GroundTruth<'_> {
        GroundTruth { labels: &self.labels }
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Largest ground-truth label plus one (0 for an unlabeled dataset).
    pub fn label_bound(&self) -> usize {
        self.labels.iter().flatten().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    pub(crate) fn set_source_digest(&mut self, digest: String) {
        self.provenance.source_digest = digest;
    }

    /// Only the labeled examples, in order.
    pub fn labeled_subset(&self) -> StackedDataset {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.labeled[i]).collect();
        self.select(&keep)
    }

    /// The examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> StackedDataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        StackedDataset {
            input_dim: self.input_dim,
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            labeled: indices.iter().map(|&i| self.labeled[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Copy with every example's label replaced by `f(index, label)`; meant
    /// for building negative controls in tests and diagnostics.
    pub fn relabeled(&self, mut f: impl FnMut(usize, Option<usize>) -> Option<usize>) -> StackedDataset {
        let mut out = self.clone();
        for i in 0..out.len() {
            out.labels[i] = f(i, self.labels[i].map(|l| l as usize)).map(|l| l as u32);
            out.labeled[i] = out.labeled[i] && out.labels[i].is_some();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(crate::error::open(path.as_ref())?))
    }

    /// Cache layout, all little-endian: magic `SSDS`, version byte, example
    /// count and input width (`u64`), digest length (`u64`) and UTF-8
    /// digest, split-seed flag byte and seed (`u64`), labeled fraction
    /// (`f64`), the inputs (`f64`, row-major), labels (`u32`, `u32::MAX` when
    /// absent), labeled flags (one byte each).
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&[CACHE_VERSION])?;
        binio::write_u64(w, self.len() as u64)?;
        binio::write_u64(w, self.input_dim as u64)?;
        let digest = self.provenance.source_digest.as_bytes();
        binio::write_u64(w, digest.len() as u64)?;
        w.write_all(digest)?;
        w.write_all(&[u8::from(self.provenance.split_seed.is_some())])?;
        binio::write_u64(w, self.provenance.split_seed.unwrap_or(0))?;
        w.write_all(&self.provenance.labeled_fraction.to_le_bytes())?;
        binio::write_f64s(w, &self.inputs)?;
        let mut buf = Vec::with_capacity(self.len() * 4);
        for l in &self.labels {
            buf.extend_from_slice(&l.unwrap_or(ABSENT_LABEL).to_le_bytes());
        }
        w.write_all(&buf)?;
        let flags: Vec<u8> = self.labeled.iter().map(|&b| u8::from(b)).collect();
        w.write_all(&flags)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        const KIND: &str = "dataset cache";
        let t = |e| binio::truncated(KIND, e);
        binio::expect_header(r, KIND, CACHE_MAGIC, CACHE_VERSION)?;
        let n = binio::count(KIND, binio::read_u64(r).map_err(t)?)?;
        let input_dim = binio::count(KIND, binio::read_u64(r).map_err(t)?)?;
        if input_dim == 0 {
            return Err(Error::format(KIND, "zero input width"));
        }
        let digest_len = binio::count(KIND, binio::read_u64(r).map_err(t)?)?;
        let mut digest = vec![0u8; digest_len];
        r.read_exact(&mut digest).map_err(t)?;
        let source_digest = String::from_utf8(digest).map_err(|_| Error::format(KIND, "digest is not UTF-8"))?;
        let has_seed = binio::read_u8(r).map_err(t)?;
        let seed = binio::read_u64(r).map_err(t)?;
        let labeled_fraction = binio::read_f64(r).map_err(t)?;
        let inputs = binio::read_f64s(r, n * input_dim).map_err(t)?;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let l = binio::read_u32(r).map_err(t)?;
            labels.push((l != ABSENT_LABEL).then_some(l));
        }
        let mut flags = vec![0u8; n];
        r.read_exact(&mut flags).map_err(t)?;
        let labeled: Vec<bool> = flags.iter().map(|&f| f != 0).collect();
        if labeled.iter().zip(&labels).any(|(&f, l)| f && l.is_none()) {
            return Err(Error::format(KIND, "labeled flag set on an example without a label"));
        }
        binio::expect_eof(r, KIND)?;
        Ok(StackedDataset {
            input_dim,
            inputs,
            labels,
            labeled,
            provenance: Provenance {
                source_digest,
                split_seed: (has_seed != 0).then_some(seed),
                labeled_fraction,
            },
        })
    }
}

/// One example per frame: the frame concatenated with `left` frames before
/// and `right` frames after it, oldest first. Windows stay inside their
/// utterance; missing neighbours at the edges repeat the boundary frame.
pub fn stack_context(table: &FrameTable, left: usize, right: usize) -> StackedDataset {
    let d = table.frame_dim();
    let width = (left + 1 + right) * d;
    let mut inputs = Vec::with_capacity(table.len() * width);
    let mut labels = Vec::with_capacity(table.len());
    for u in table.utterances() {
        let last = u.len as isize - 1;
        for t in 0..u.len as isize {
            for offset in -(left as isize)..=(right as isize) {
                let src = (t + offset).clamp(0, last) as usize;
                inputs.extend_from_slice(table.features(u.start + src));
            }
            labels.push(table.label(u.start + t as usize));
        }
    }
    let labeled_fraction = if labels.is_empty() {
        0.0
    } else {
        labels.iter().filter(|l| l.is_some()).count() as f64 / labels.len() as f64
    };
    StackedDataset::new(
        width.max(1),
        inputs,
        labels,
        Provenance {
            source_digest: String::new(),
            split_seed: None,
            labeled_fraction,
        },
    )
    .expect("stacked widths are consistent")
}

/// Keeps exactly `round(fraction · N)` examples labeled, chosen uniformly
/// without replacement; all others become unlabeled. Draws for different
/// fractions under one seed are independent, so the labeled sets need not
/// nest.
pub fn split_labels(ds: &StackedDataset, fraction: f64, seed: u64) -> Result<StackedDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("labeled fraction {fraction} outside (0, 1]")));
    }
    if ds.labeled_count() != ds.len() {
        return Err(Error::Config(format!(
            "label split needs a fully labeled dataset, {} of {} are labeled",
            ds.labeled_count(),
            ds.len()
        )));
    }
    let n = ds.len();
    let keep = (fraction * n as f64).round() as usize;
    if keep == 0 {
        return Err(Error::Config(format!(
            "fraction {fraction} of {n} examples leaves no labeled example"
        )));
    }
    let mut out = ds.clone();
    out.provenance.split_seed = Some(seed);
    out.provenance.labeled_fraction = fraction;
    if keep == n {
        return Ok(out);
    }
    // partial Fisher-Yates: the first `keep` slots are a uniform sample
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(seed);
    for i in 0..keep {
        let j = i + rng.below((n - i) as u64) as usize;
        order.swap(i, j);
    }
    out.labeled.iter_mut().for_each(|l| *l = false);
    for &i in &order[..keep] {
        out.labeled[i] = true;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(utterances: &[(&str, usize, f64)], dim: usize) -> FrameTable {
        // each utterance's frame t has every feature equal to base + t
        let mut t = FrameTable::new(dim);
        for &(id, len, base) in utterances {
            for i in 0..len {
                t.push_frame(id, "s", i, &vec![base + i as f64; dim], Some(i % 3)).unwrap();
            }
        }
        t
    }

    fn frame_values(ds: &StackedDataset, i: usize, dim: usize) -> Vec<f64> {
        ds.input(i).chunks(dim).map(|c| c[0]).collect()
    }

    #[test]
    fn single_frame_is_replicated() {
        let ds = stack_context(&table(&[("u", 1, 7.0)], 2), 5, 5);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.input_dim(), 22);
        assert!(ds.input(0).iter().all(|&v| v == 7.0));
    }

    #[test]
    fn full_window_needs_no_replication() {
        let ds = stack_context(&table(&[("u", 11, 0.0)], 1), 5, 5);
        assert_eq!(frame_values(&ds, 5, 1), (0..11).map(f64::from).collect::<Vec<_>>());
        assert_eq!(ds.training_label(5), Some(5 % 3));
    }

    #[test]
    fn edges_repeat_boundary_frames() {
        let ds = stack_context(&table(&[("u", 3, 0.0)], 1), 5, 5);
        assert_eq!(
            frame_values(&ds, 0, 1),
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 2.0]
        );
        assert_eq!(
            frame_values(&ds, 2, 1),
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0]
        );
        assert_eq!(
            frame_values(&ds, 1, 1),
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn windows_never_cross_utterances() {
        // sentinels: utterance k holds values in [100k, 100k + len)
        let t = table(&[("a", 4, 0.0), ("b", 2, 100.0), ("c", 7, 200.0)], 3);
        let ds = stack_context(&t, 5, 5);
        assert_eq!(ds.len(), t.len());
        for (i, row) in t.rows().enumerate() {
            let base = row.features[0] - row.frame_index as f64;
            assert!(ds.input(i).iter().all(|&v| v >= base && v < base + 100.0));
        }
    }

    #[test]
    fn split_keeps_exact_count_and_is_seeded() {
        let n = 1000;
        let ds = StackedDataset::new(1, vec![0.0; n], (0..n).map(|i| Some(i % 4)).collect(), Provenance::default()).unwrap();
        let a = split_labels(&ds, 0.10, 5).unwrap();
        assert_eq!(a.labeled_count(), 100);
        let b = split_labels(&ds, 0.10, 5).unwrap();
        assert_eq!(a, b);
        let c = split_labels(&ds, 0.10, 6).unwrap();
        assert_ne!(a.labeled, c.labeled);
        // hidden labels stay available to scoring only
        let hidden = (0..n).find(|&i| !a.is_labeled(i)).unwrap();
        assert_eq!(a.training_label(hidden), None);
        assert_eq!(a.ground_truth().label(hidden), Some(hidden % 4));
        assert_eq!(a.labeled_subset().len(), 100);

        let full = split_labels(&ds, 1.0, 5).unwrap();
        assert_eq!(full.inputs, ds.inputs);
        assert_eq!(full.labeled, ds.labeled);
        assert_eq!(full.labels, ds.labels);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let ds = StackedDataset::new(1, vec![0.0; 10], vec![Some(0); 10], Provenance::default()).unwrap();
        assert!(matches!(split_labels(&ds, 0.01, 1), Err(Error::Config(_))));
        assert!(matches!(split_labels(&ds, 0.0, 1), Err(Error::Config(_))));
        assert!(matches!(split_labels(&ds, 1.5, 1), Err(Error::Config(_))));
        let partial = split_labels(&ds, 0.5, 1).unwrap();
        assert!(matches!(split_labels(&partial, 0.5, 1), Err(Error::Config(_))));
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let provenance = Provenance {
            source_digest: "sha256:abc".into(),
            split_seed: None,
            labeled_fraction: 0.5,
        };
        let inputs = vec![0.1, -0.0, 1e-300, 2.5, f64::MIN_POSITIVE, -1.0];
        let with_gap = StackedDataset::new(3, inputs.clone(), vec![Some(47), None], provenance.clone()).unwrap();
        let full = StackedDataset::new(3, inputs, vec![Some(47), Some(3)], provenance).unwrap();
        let split = split_labels(&full, 0.5, 9).unwrap();
        for ds in [with_gap, split] {
            let mut buf = Vec::new();
            ds.write_to(&mut buf).unwrap();
            let back = StackedDataset::read_from(&mut buf.as_slice()).unwrap();
            assert_eq!(back, ds);
            assert!(back.inputs.iter().zip(&ds.inputs).all(|(a, b)| a.to_bits() == b.to_bits()));
            let mut again = Vec::new();
            back.write_to(&mut again).unwrap();
            assert_eq!(buf, again);
            assert!(StackedDataset::read_from(&mut &buf[..buf.len() - 1]).is_err());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn stacking_preserves_count(lens in proptest::collection::vec(1usize..15, 1..6), left in 0usize..6, right in 0usize..6) {
                let utts: Vec<(String, usize, f64)> = lens.iter().enumerate().map(|(k, &l)| (format!("u{k}"), l, 1000.0 * k as f64)).collect();
                let refs: Vec<(&str, usize, f64)> = utts.iter().map(|(a, b, c)| (a.as_str(), *b, *c)).collect();
                let t = table(&refs, 2);
                let ds = stack_context(&t, left, right);
                prop_assert_eq!(ds.len(), t.len());
                prop_assert_eq!(ds.input_dim(), (left + right + 1) * 2);
            }

            #[test]
            fn split_partitions(n in 1usize..300, fraction in 0.01f64..=1.0, seed in any::<u64>()) {
                let ds = StackedDataset::new(1, vec![0.0; n], vec![Some(1); n], Provenance::default()).unwrap();
                match split_labels(&ds, fraction, seed) {
                    Ok(s) => {
                        let unlabeled = (0..n).filter(|&i| !s.is_labeled(i)).count();
                        prop_assert_eq!(s.labeled_count() + unlabeled, n);
                        prop_assert_eq!(s.labeled_count(), (fraction * n as f64).round() as usize);
                    }
                    Err(_) => prop_assert_eq!((fraction * n as f64).round() as usize, 0),
                }
            }
        }
    }
}
