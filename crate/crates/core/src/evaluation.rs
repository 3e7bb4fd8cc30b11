//! Frame classification scoring after folding onto the evaluation phone set.

use std::io::Write;

use crate::data::{CollapseMap, StackedDataset};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Matrix;

const PREDICT_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub frame_accuracy_collapsed: f64,
    pub frame_accuracy_raw: f64,
    /// Row = reference, column = prediction, both in evaluation phones.
    pub confusion: Vec<u64>,
    pub phones: Vec<String>,
    pub num_frames: usize,
}

impl EvalReport {
    pub fn confusion_at(&self, reference: usize, predicted: usize) -> u64 {
        self.confusion[reference * self.phones.len() + predicted]
    }

    /// Scalar block, a blank line, then the confusion matrix with phone
    /// headers.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "frames,{}", self.num_frames)?;
        writeln!(w, "accuracy_collapsed,{:.6}", self.frame_accuracy_collapsed)?;
        writeln!(w, "accuracy_raw,{:.6}", self.frame_accuracy_raw)?;
        writeln!(w)?;
        writeln!(w, "reference\\predicted,{}", self.phones.join(","))?;
        let n = self.phones.len();
        for (r, name) in self.phones.iter().enumerate() {
            let row: Vec<String> = self.confusion[r * n..(r + 1) * n].iter().map(u64::to_string).collect();
            writeln!(w, "{name},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Most probable training class per example, without corruption and
/// without running the decoder. Ties go to the lowest index.
pub fn predict(params: &ModelParams, ds: &StackedDataset) -> Result<Vec<usize>> {
    let shape = params.shape();
    if ds.input_dim() != shape.input_dim {
        return Err(Error::Shape {
            op: "predict",
            left: (ds.len(), ds.input_dim()),
            right: (shape.hidden_dim, shape.input_dim),
        });
    }
    let mut out = Vec::with_capacity(ds.len());
    let mut start = 0;
    while start < ds.len() {
        let end = (start + PREDICT_CHUNK).min(ds.len());
        let mut x = Matrix::zeros(end - start, shape.input_dim);
        for i in start..end {
            x.row_mut(i - start).copy_from_slice(ds.input(i));
        }
        let h = params.classify_batch(&params.encode_batch(&x)?)?;
        out.extend((0..h.rows()).map(|i| argmax(h.row(i))));
        start = end;
    }
    Ok(out)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Scores predictions against references, both given as training-phone
/// indices, after folding both through `map`.
pub fn evaluate(preds: &[usize], refs: &[usize], map: &CollapseMap) -> Result<EvalReport> {
    if preds.len() != refs.len() {
        return Err(Error::Shape {
            op: "evaluate",
            left: (preds.len(), 1),
            right: (refs.len(), 1),
        });
    }
    let n = map.num_evaluation();
    let mut confusion = vec![0u64; n * n];
    let mut raw_correct = 0usize;
    for (&p, &r) in preds.iter().zip(refs) {
        let fold = |i: usize| {
            map.fold(i)
                .ok_or_else(|| Error::Integrity(format!("phone index {i} outside the {} training phones", map.num_training())))
        };
        let (fp, fr) = (fold(p)?, fold(r)?);
        confusion[fr * n + fp] += 1;
        raw_correct += usize::from(p == r);
    }
    let total = preds.len();
    let collapsed_correct: u64 = (0..n).map(|i| confusion[i * n + i]).sum();
    let ratio = |k: f64| if total == 0 { 0.0 } else { k / total as f64 };
    Ok(EvalReport {
        frame_accuracy_collapsed: ratio(collapsed_correct as f64),
        frame_accuracy_raw: ratio(raw_correct as f64),
        confusion,
        phones: map.evaluation_phones().to_vec(),
        num_frames: total,
    })
}

/// Predicts and scores every example that has a reference label.
pub fn evaluate_dataset(params: &ModelParams, ds: &StackedDataset, map: &CollapseMap) -> Result<EvalReport> {
    let preds = predict(params, ds)?;
    let truth = ds.ground_truth();
    let (p, r): (Vec<usize>, Vec<usize>) = preds
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| truth.label(i).map(|r| (p, r)))
        .unzip();
    evaluate(&p, &r, map)
}

/// Fraction of referenced examples classified correctly, folded through
/// `map` when one is given.
pub fn frame_accuracy(params: &ModelParams, ds: &StackedDataset, map: Option<&CollapseMap>) -> Result<f64> {
    if let Some(map) = map {
        return Ok(evaluate_dataset(params, ds, map)?.frame_accuracy_collapsed);
    }
    let preds = predict(params, ds)?;
    let truth = ds.ground_truth();
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, p) in preds.into_iter().enumerate() {
        if let Some(r) = truth.label(i) {
            total += 1;
            hit += usize::from(p == r);
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}
