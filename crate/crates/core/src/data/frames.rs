//! Per-frame feature tables: loading, writing, speaker normalization and
//! range scaling.
//!
//! File format: UTF-8 CSV with header `utt,spk,idx,label,f0,...,f{d-1}` and
//! one row per frame. Frames of an utterance are contiguous with `idx`
//! counting up from 0. `label` is a training phone symbol, or empty for an
//! unlabeled frame.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::data::phones::CollapseMap;
use crate::error::{Error, Result};

/// Normalized features are clamped to this magnitude before scaling into
/// `[-1, 1]`.
pub const FEATURE_CLAMP: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    /// Row of the first frame in the table.
    pub start: usize,
    pub len: usize,
}

/// Borrowed view of one row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRow<'a> {
    pub utterance: &'a str,
    pub speaker: &'a str,
    pub frame_index: usize,
    pub features: &'a [f64],
    pub label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameTable {
    frame_dim: usize,
    utterances: Vec<Utterance>,
    features: Vec<f64>,
    labels: Vec<Option<u16>>,
    seen: HashSet<String>,
}

impl FrameTable {
    pub fn new(frame_dim: usize) -> Self {
        FrameTable {
            frame_dim,
            utterances: Vec::new(),
            features: Vec::new(),
            labels: Vec::new(),
            seen: HashSet::new(),
        }
    }

    /// Appends one frame. Utterances must arrive contiguously with frame
    /// indices 0, 1, 2, ...
    pub fn push_frame(
        &mut self,
        utterance: &str,
        speaker: &str,
        frame_index: usize,
        features: &[f64],
        label: Option<usize>,
    ) -> Result<()> {
        if features.len() != self.frame_dim {
            return Err(Error::Shape {
                op: "FrameTable::push_frame",
                left: (1, self.frame_dim),
                right: (1, features.len()),
            });
        }
        let label = label
            .map(|l| u16::try_from(l).map_err(|_| Error::Integrity(format!("label {l} too large"))))
            .transpose()?;
        let continues = self.utterances.last().is_some_and(|u| u.id == utterance);
        if continues {
            let u = self.utterances.last_mut().unwrap();
            if u.speaker != speaker {
                return Err(Error::Integrity(format!(
                    "utterance '{utterance}' changes speaker from '{}' to '{speaker}'",
                    u.speaker
                )));
            }
            if frame_index != u.len {
                return Err(Error::Integrity(format!(
                    "utterance '{utterance}': frame index {frame_index} follows {}",
                    u.len - 1
                )));
            }
            u.len += 1;
        } else {
            if self.seen.contains(utterance) {
                return Err(Error::Integrity(format!("utterance '{utterance}' is not contiguous")));
            }
            if frame_index != 0 {
                return Err(Error::Integrity(format!(
                    "utterance '{utterance}' starts at frame index {frame_index}"
                )));
            }
            self.seen.insert(utterance.to_string());
            self.utterances.push(Utterance {
                id: utterance.to_string(),
                speaker: speaker.to_string(),
                start: self.labels.len(),
                len: 1,
            });
        }
        self.features.extend_from_slice(features);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn features(&self, row: usize) -> &[f64] {
        &self.features[row * self.frame_dim..(row + 1) * self.frame_dim]
    }

    pub fn label(&self, row: usize) -> Option<usize> {
        self.labels[row].map(usize::from)
    }

    pub fn rows(&self) -> impl Iterator<Item = FrameRow<'_>> {
        self.utterances.iter().flat_map(move |u| {
            (0..u.len).map(move |t| FrameRow {
                utterance: &u.id,
                speaker: &u.speaker,
                frame_index: t,
                features: self.features(u.start + t),
                label: self.label(u.start + t),
            })
        })
    }

    /// Same frames with every feature vector replaced by `f(row, features)`.
    fn map_features(&self, mut f: impl FnMut(usize, &mut [f64])) -> FrameTable {
        let mut out = self.clone();
        for row in 0..out.len() {
            let d = out.frame_dim;
            f(row, &mut out.features[row * d..(row + 1) * d]);
        }
        out
    }

    pub fn load(path: impl AsRef<Path>, phones: &CollapseMap) -> Result<Self> {
        let path = path.as_ref();
        let file = crate::error::open(path)?;
        FrameTable::read_from(BufReader::new(file), phones, &path.display().to_string())
    }

    pub fn read_from(reader: impl Read, phones: &CollapseMap, source_name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
            .clone();
        let frame_dim = check_header(&header).map_err(|msg| Error::parse(source_name, 1, msg))?;
        let mut table = FrameTable::new(frame_dim);
        let mut features = vec![0.0; frame_dim];
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Error::parse(source_name, line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let err = |msg: String| Error::parse(source_name, line, msg);
            if record.len() != header.len() {
                return Err(err(format!(
                    "expected {} fields ({frame_dim} features), found {}",
                    header.len(),
                    record.len()
                )));
            }
            let idx: usize = record[2]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad frame index '{}'", &record[2])))?;
            let label = match record[3].trim() {
                "" => None,
                sym => Some(phones.index_of(sym).ok_or_else(|| err(format!("unknown phone '{sym}'")))?),
            };
            for (slot, field) in features.iter_mut().zip(record.iter().skip(4)) {
                *slot = field
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("bad feature value '{field}'")))?;
            }
            table
                .push_frame(record[0].trim(), record[1].trim(), idx, &features, label)
                .map_err(|e| match e {
                    Error::Integrity(msg) => Error::Integrity(format!("{source_name}, line {line}: {msg}")),
                    other => other,
                })?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, w: impl Write, phones: &CollapseMap) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["utt".to_string(), "spk".into(), "idx".into(), "label".into()];
        header.extend((0..self.frame_dim).map(|i| format!("f{i}")));
        wtr.write_record(&header).map_err(csv_io)?;
        let mut fields = Vec::with_capacity(header.len());
        for row in self.rows() {
            fields.clear();
            fields.push(row.utterance.to_string());
            fields.push(row.speaker.to_string());
            fields.push(row.frame_index.to_string());
            fields.push(match row.label {
                Some(l) => phones
                    .training_phones()
                    .get(l)
                    .cloned()
                    .ok_or_else(|| Error::Integrity(format!("label {l} has no phone symbol")))?,
                None => String::new(),
            });
            fields.extend(row.features.iter().map(|v| v.to_string()));
            wtr.write_record(&fields).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn check_header(header: &csv::StringRecord) -> std::result::Result<usize, String> {
    let fixed = ["utt", "spk", "idx", "label"];
    if header.len() <= fixed.len() {
        return Err(format!("header needs {} + feature columns", fixed.join(",")));
    }
    for (i, name) in fixed.iter().enumerate() {
        if header[i].trim() != *name {
            return Err(format!("column {} should be '{name}', found '{}'", i + 1, &header[i]));
        }
    }
    for (i, name) in header.iter().skip(fixed.len()).enumerate() {
        if name.trim() != format!("f{i}") {
            return Err(format!("feature column {i} should be 'f{i}', found '{name}'"));
        }
    }
    Ok(header.len() - fixed.len())
}

pub fn load_frame_table(path: impl AsRef<Path>, phones: &CollapseMap) -> Result<FrameTable> {
    FrameTable::load(path, phones)
}

/// Standardizes every feature coordinate to zero mean and unit population
/// variance over each speaker's frames. Coordinates with no variance within
/// a speaker are only centered.
pub fn normalize_per_speaker(table: &FrameTable) -> FrameTable {
    let d = table.frame_dim;
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for u in &table.utterances {
        by_speaker.entry(&u.speaker).or_default().extend(u.start..u.start + u.len);
    }
    // (mean, 1/sd) per speaker, and the speaker of every row
    let mut stats = Vec::with_capacity(by_speaker.len());
    let mut row_speaker = vec![0usize; table.len()];
    for (k, rows) in by_speaker.values().enumerate() {
        let n = rows.len() as f64;
        let mut mu = vec![0.0; d];
        for &r in rows {
            row_speaker[r] = k;
            for (m, x) in mu.iter_mut().zip(table.features(r)) {
                *m += x;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((v, x), m) in var.iter_mut().zip(table.features(r)).zip(&mu) {
                *v += (x - m) * (x - m);
            }
        }
        let inv_sd: Vec<f64> = var
            .iter()
            .zip(&mu)
            .map(|(v, m)| {
                let v = v / n;
                // residual variance of a constant column is rounding noise
                if v <= 1e-20 * (1.0 + m * m) {
                    1.0
                } else {
                    1.0 / v.sqrt()
                }
            })
            .collect();
        stats.push((mu, inv_sd));
    }
    table.map_features(|row, x| {
        let (mu, inv_sd) = &stats[row_speaker[row]];
        for ((v, m), s) in x.iter_mut().zip(mu).zip(inv_sd) {
            *v = (*v - m) * s;
        }
    })
}

/// Clamps to `±FEATURE_CLAMP` and divides by it, so features land in
/// `[-1, 1]` where the tanh decoder can reach them.
pub fn scale_to_unit_range(table: &FrameTable) -> FrameTable {
    table.map_features(|_, x| {
        for v in x.iter_mut() {
            *v = v.clamp(-FEATURE_CLAMP, FEATURE_CLAMP) / FEATURE_CLAMP;
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> CollapseMap {
        CollapseMap::standard()
    }

    fn fixture() -> String {
        let mut s = String::from("utt,spk,idx,label,f0,f1,f2\n");
        for (u, spk) in [("u1", "s1"), ("u2", "s2")] {
            for t in 0..5 {
                let label = if t == 2 { "" } else { "aa" };
                s.push_str(&format!("{u},{spk},{t},{label},{t},{}.5,-1\n", t * 2));
            }
        }
        s
    }

    #[test]
    fn header_only_gives_empty_table() {
        let t = FrameTable::read_from("utt,spk,idx,label,f0,f1\n".as_bytes(), &map(), "t").unwrap();
        assert!(t.is_empty());
        assert_eq!(t.frame_dim(), 2);
    }

    #[test]
    fn two_utterance_fixture() {
        let t = FrameTable::read_from(fixture().as_bytes(), &map(), "t").unwrap();
        assert_eq!(t.len(), 10);
        assert_eq!(t.utterances().len(), 2);
        assert_eq!(t.utterances()[1].start, 5);
        assert_eq!(t.utterances()[1].speaker, "s2");
        assert_eq!(t.features(7), &[2.0, 4.5, -1.0]);
        assert_eq!(t.label(7), None);
        assert_eq!(t.label(8), Some(0));
        let rows: Vec<_> = t.rows().collect();
        assert_eq!(rows[6].utterance, "u2");
        assert_eq!(rows[6].frame_index, 1);
    }

    #[test]
    fn short_row_is_a_parse_error_with_line() {
        let mut s = fixture();
        s.push_str("u3,s1,0,aa,1,2\n");
        match FrameTable::read_from(s.as_bytes(), &map(), "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_consecutive_frames_are_rejected() {
        let s = "utt,spk,idx,label,f0\nu1,s,0,,1\nu1,s,2,,1\n";
        assert!(matches!(FrameTable::read_from(s.as_bytes(), &map(), "t"), Err(Error::Integrity(_))));
        let s = "utt,spk,idx,label,f0\nu1,s,1,,1\n";
        assert!(matches!(FrameTable::read_from(s.as_bytes(), &map(), "t"), Err(Error::Integrity(_))));
        let s = "utt,spk,idx,label,f0\nu1,s,0,,1\nu2,s,0,,1\nu1,s,1,,1\n";
        assert!(matches!(FrameTable::read_from(s.as_bytes(), &map(), "t"), Err(Error::Integrity(_))));
    }

    #[test]
    fn unknown_phone_and_bad_numbers() {
        let s = "utt,spk,idx,label,f0\nu1,s,0,xx,1\n";
        assert!(matches!(FrameTable::read_from(s.as_bytes(), &map(), "t"), Err(Error::Parse { line: 2, .. })));
        let s = "utt,spk,idx,label,f0\nu1,s,0,aa,nan\n";
        assert!(matches!(FrameTable::read_from(s.as_bytes(), &map(), "t"), Err(Error::Parse { .. })));
        let s = "utt,spk,idx,lab,f0\n";
        assert!(matches!(FrameTable::read_from(s.as_bytes(), &map(), "t"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let t = FrameTable::read_from(fixture().as_bytes(), &map(), "t").unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &map()).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().next().unwrap(), "utt,spk,idx,label,f0,f1,f2");
        let back = FrameTable::read_from(buf.as_slice(), &map(), "t").unwrap();
        assert_eq!(back, t);
    }

    fn one_dim(rows: &[(&str, &str, f64)]) -> FrameTable {
        let mut t = FrameTable::new(1);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &(u, s, x) in rows {
            let idx = counts.entry(u).or_default();
            t.push_frame(u, s, *idx, &[x], None).unwrap();
            *idx += 1;
        }
        t
    }

    #[test]
    fn normalization_examples() {
        let t = normalize_per_speaker(&one_dim(&[("u", "s", 7.5)]));
        assert_eq!(t.features(0), &[0.0]);

        let t = normalize_per_speaker(&one_dim(&[("u", "s", 1.0), ("u", "s", 3.0)]));
        assert_eq!(t.features(0), &[-1.0]);
        assert_eq!(t.features(1), &[1.0]);

        // constant column with a mean that does not divide evenly
        let t = normalize_per_speaker(&one_dim(&[("u", "s", 0.1), ("u", "s", 0.1), ("u", "s", 0.1)]));
        assert!(t.features(0)[0].abs() < 1e-15);
    }

    #[test]
    fn speakers_are_normalized_independently() {
        let a = [("u1", "s1", 1.0), ("u1", "s1", 5.0), ("u2", "s2", -2.0), ("u2", "s2", 10.0), ("u2", "s2", 4.0)];
        let b = [a[2], a[3], a[4], a[0], a[1]];
        let na = normalize_per_speaker(&one_dim(&a));
        let nb = normalize_per_speaker(&one_dim(&b));
        for i in 0..2 {
            assert_eq!(na.features(i), nb.features(i + 3));
        }
        for i in 0..3 {
            assert_eq!(na.features(i + 2), nb.features(i));
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut rng = crate::tensor::Rng::new(3);
        let mut t = FrameTable::new(4);
        for u in 0..6 {
            let spk = format!("s{}", u % 3);
            for i in 0..(1 + u * 3) {
                let f: Vec<f64> = (0..4).map(|k| if k == 3 { 2.0 } else { rng.uniform(-5.0, 9.0) }).collect();
                t.push_frame(&format!("u{u}"), &spk, i, &f, None).unwrap();
            }
        }
        let once = normalize_per_speaker(&t);
        let twice = normalize_per_speaker(&once);
        for r in 0..t.len() {
            for (a, b) in once.features(r).iter().zip(twice.features(r)) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn scaling_clamps_into_unit_range() {
        let t = scale_to_unit_range(&one_dim(&[("u", "s", -9.0), ("u", "s", 2.0), ("u", "s", 4.0)]));
        assert_eq!(t.features(0), &[-1.0]);
        assert_eq!(t.features(1), &[0.5]);
        assert_eq!(t.features(2), &[1.0]);
    }
}
