//! Seeded synthetic data: flat Gaussian clusters, and frame tables shaped
//! like a speech corpus (speakers, utterances, phone segments) for running
//! the full preparation pipeline without licensed recordings.

use crate::data::frames::FrameTable;
use crate::data::phones::CollapseMap;
use crate::data::stacked::{Provenance, StackedDataset};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Class-conditional Gaussian clusters around seeded unit-norm means,
/// clamped to `[-1, 1]`, fully labeled, in shuffled order.
pub fn generate_synthetic(num_classes: usize, dim: usize, per_class: usize, noise: f64, seed: u64) -> Result<StackedDataset> {
    if num_classes < 2 || dim < 2 {
        return Err(Error::Config(format!(
            "synthetic data needs at least 2 classes and 2 dimensions, got {num_classes} and {dim}"
        )));
    }
    let mut rng = Rng::new(seed);
    let means: Vec<Vec<f64>> = (0..num_classes).map(|_| unit_vector(&mut rng, dim, 1.0)).collect();
    let mut order: Vec<usize> = (0..num_classes * per_class).map(|i| i / per_class.max(1)).collect();
    rng.shuffle(&mut order);
    let mut inputs = Vec::with_capacity(order.len() * dim);
    for &c in &order {
        inputs.extend(means[c].iter().map(|m| (m + noise * rng.normal()).clamp(-1.0, 1.0)));
    }
    StackedDataset::new(
        dim,
        inputs,
        order.into_iter().map(Some).collect(),
        Provenance {
            source_digest: format!("synthetic:clusters:{num_classes}x{dim}x{per_class}:{noise}:{seed}"),
            split_seed: None,
            labeled_fraction: 1.0,
        },
    )
}

/// Shape of a synthetic speech-like corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpusConfig {
    pub num_classes: usize,
    pub frame_dim: usize,
    pub train_frames: usize,
    pub valid_frames: usize,
    pub test_frames: usize,
    /// Speakers per split; splits never share speakers.
    pub speakers_per_split: usize,
    pub min_utterance_frames: usize,
    pub max_utterance_frames: usize,
    pub min_segment_frames: usize,
    pub max_segment_frames: usize,
    /// Norm of each class prototype.
    pub separation: f64,
    /// Per-frame isotropic noise.
    pub noise: f64,
    /// Standard deviation of each speaker's additive offset.
    pub speaker_shift: f64,
    /// Speaker gains are drawn from `1 ± speaker_gain`.
    pub speaker_gain: f64,
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            num_classes: 10,
            frame_dim: 39,
            train_frames: 16_000,
            valid_frames: 2_000,
            test_frames: 2_000,
            speakers_per_split: 12,
            min_utterance_frames: 40,
            max_utterance_frames: 120,
            min_segment_frames: 3,
            max_segment_frames: 12,
            separation: 1.0,
            noise: 1.0,
            speaker_shift: 0.5,
            speaker_gain: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train: FrameTable,
    pub valid: FrameTable,
    pub test: FrameTable,
}

/// Training phone indices used as synthetic class labels: the first
/// `num_classes` phones of `map` that fold onto distinct evaluation phones,
/// so collapsed and raw scores coincide.
pub fn synthetic_label_set(map: &CollapseMap, num_classes: usize) -> Result<Vec<usize>> {
    let mut used = vec![false; map.num_evaluation()];
    let mut picked = Vec::new();
    for i in 0..map.num_training() {
        let f = map.fold(i).unwrap();
        if !used[f] {
            used[f] = true;
            picked.push(i);
            if picked.len() == num_classes {
                return Ok(picked);
            }
        }
    }
    Err(Error::Config(format!(
        "at most {} synthetic classes fit the phone map, asked for {num_classes}",
        picked.len()
    )))
}

/// Frames are `gain_s · (prototype_c + noise · ε) + offset_s` for speaker
/// `s` and the phone `c` of the current segment.
pub fn generate_corpus(config: &SynthCorpusConfig, map: &CollapseMap) -> Result<SynthCorpus> {
    let c = config;
    if c.num_classes < 2 || c.frame_dim < 1 || c.speakers_per_split == 0 {
        return Err(Error::Config("synthetic corpus needs ≥ 2 classes, ≥ 1 feature, ≥ 1 speaker".into()));
    }
    if c.min_utterance_frames == 0
        || c.min_utterance_frames > c.max_utterance_frames
        || c.min_segment_frames == 0
        || c.min_segment_frames > c.max_segment_frames
    {
        return Err(Error::Config("synthetic corpus length ranges are empty".into()));
    }
    let labels = synthetic_label_set(map, c.num_classes)?;
    let mut rng = Rng::new(c.seed);
    let prototypes: Vec<Vec<f64>> = (0..c.num_classes)
        .map(|_| unit_vector(&mut rng, c.frame_dim, c.separation))
        .collect();
    let mut split = |name: &str, frames: usize| -> Result<FrameTable> {
        let speakers: Vec<(Vec<f64>, f64)> = (0..c.speakers_per_split)
            .map(|_| {
                let offset = (0..c.frame_dim).map(|_| c.speaker_shift * rng.normal()).collect();
                (offset, rng.uniform(1.0 - c.speaker_gain, 1.0 + c.speaker_gain))
            })
            .collect();
        let mut table = FrameTable::new(c.frame_dim);
        let mut frame = vec![0.0; c.frame_dim];
        let mut utt = 0;
        while table.len() < frames {
            let s = utt % c.speakers_per_split;
            let (offset, gain) = &speakers[s];
            let span = (c.max_utterance_frames - c.min_utterance_frames) as u64 + 1;
            let len = (c.min_utterance_frames + rng.below(span) as usize).min(frames - table.len());
            let id = format!("{name}_{utt:05}");
            let spk = format!("{name}_spk{s:03}");
            let mut t = 0;
            while t < len {
                let seg_span = (c.max_segment_frames - c.min_segment_frames) as u64 + 1;
                let seg = c.min_segment_frames + rng.below(seg_span) as usize;
                let class = rng.below(c.num_classes as u64) as usize;
                for _ in 0..seg.min(len - t) {
                    for ((f, p), o) in frame.iter_mut().zip(&prototypes[class]).zip(offset) {
                        *f = gain * (p + c.noise * rng.normal()) + o;
                    }
                    table.push_frame(&id, &spk, t, &frame, Some(labels[class]))?;
                    t += 1;
                }
            }
            utt += 1;
        }
        Ok(table)
    };
    let train = split("train", c.train_frames)?;
    let valid = split("valid", c.valid_frames)?;
    let test = split("test", c.test_frames)?;
    Ok(SynthCorpus { train, valid, test })
}

fn unit_vector(rng: &mut Rng, dim: usize, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-9 {
            return v.into_iter().map(|x| norm * x / len).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_clusters_are_points() {
        let ds = generate_synthetic(3, 5, 4, 0.0, 1).unwrap();
        assert_eq!(ds.len(), 12);
        let truth = ds.ground_truth();
        for i in 0..ds.len() {
            for j in 0..ds.len() {
                if truth.label(i) == truth.label(j) {
                    assert_eq!(ds.input(i), ds.input(j));
                }
            }
        }
        assert!((0..ds.len()).all(|i| ds.input(i).iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn separated_classes_are_nearest_centroid_separable() {
        let noise = 0.05;
        let ds = generate_synthetic(2, 10, 100, noise, 3).unwrap();
        let truth = ds.ground_truth();
        let mut centroids = vec![vec![0.0; 10]; 2];
        let mut counts = [0.0; 2];
        for i in 0..ds.len() {
            let c = truth.label(i).unwrap();
            counts[c] += 1.0;
            for (m, x) in centroids[c].iter_mut().zip(ds.input(i)) {
                *m += x;
            }
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            c.iter_mut().for_each(|m| *m /= n);
        }
        let gap: f64 = centroids[0].iter().zip(&centroids[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(gap >= 6.0 * noise, "gap {gap}");
        let correct = (0..ds.len())
            .filter(|&i| {
                let d: Vec<f64> = centroids
                    .iter()
                    .map(|c| c.iter().zip(ds.input(i)).map(|(a, b)| (a - b).powi(2)).sum())
                    .collect();
                let pred = if d[0] <= d[1] { 0 } else { 1 };
                Some(pred) == truth.label(i)
            })
            .count();
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn degenerate_requests() {
        assert!(generate_synthetic(1, 5, 3, 0.1, 0).is_err());
        assert!(generate_synthetic(3, 1, 3, 0.1, 0).is_err());
        assert!(generate_synthetic(3, 4, 0, 0.1, 0).unwrap().is_empty());
        assert_eq!(generate_synthetic(3, 4, 5, 0.1, 9).unwrap(), generate_synthetic(3, 4, 5, 0.1, 9).unwrap());
    }

    #[test]
    fn corpus_has_requested_sizes_and_disjoint_speakers() {
        let map = CollapseMap::standard();
        let cfg = SynthCorpusConfig {
            train_frames: 1000,
            valid_frames: 150,
            test_frames: 130,
            speakers_per_split: 3,
            ..SynthCorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg, &map).unwrap();
        assert_eq!(corpus.train.len(), 1000);
        assert_eq!(corpus.valid.len(), 150);
        assert_eq!(corpus.test.len(), 130);
        assert_eq!(corpus.train.frame_dim(), 39);
        let spk = |t: &FrameTable| t.utterances().iter().map(|u| u.speaker.clone()).collect::<std::collections::BTreeSet<_>>();
        assert!(spk(&corpus.train).is_disjoint(&spk(&corpus.test)));
        assert_eq!(generate_corpus(&cfg, &map).unwrap(), corpus);

        let labels = synthetic_label_set(&map, 10).unwrap();
        let folds: std::collections::BTreeSet<_> = labels.iter().map(|&l| map.fold(l)).collect();
        assert_eq!(folds.len(), 10);
        assert!(synthetic_label_set(&map, 40).is_err());
    }
}
