//! Reconstruction loss, cross-entropy, their weighted combination over a
//! mini-batch, the analytic gradient of that combination, and a
//! central-difference oracle to check it against.
//!
//! For a batch of `p` examples of which `n_l` carry a label, the objective is
//!
//! ```text
//! E = (1/p) Σ_i ||x_i − x̂_i||²  +  α (1/n_l) Σ_{i labeled} −ln h_i[y_i]
//! ```
//!
//! where `x̂_i` is reconstructed from a corrupted copy of `x_i` but compared
//! against the clean `x_i`. Unlabeled examples never reach the classifier:
//! they contribute nothing to the classifier gradients and only the
//! reconstruction term to the encoder delta. With no labeled example in the
//! batch the second term is zero.
//!
//! An optional L1 activity penalty `λ_s (1/p) Σ_i |z_i|₁` can be added on the
//! hidden code. It defaults to zero.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::model::{ForwardCache, ModelParams, ModelShape, PARAM_NAMES};
use crate::tensor::{gemm, Matrix, Op, Rng, Vector};

/// Floor applied to `h[y]` before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

static LOG_FLOOR_HITS: AtomicU64 = AtomicU64::new(0);

/// Number of times [`classification_loss`] has clamped a posterior to
/// [`LOG_FLOOR`] in this process.
pub fn log_floor_hits() -> u64 {
    LOG_FLOOR_HITS.load(Ordering::Relaxed)
}

/// Which of the two loss terms take part in the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub reconstruction: bool,
    pub classification: bool,
}

impl LossTerms {
    /// Reconstruction plus weighted cross-entropy.
    pub const JOINT: LossTerms = LossTerms {
        reconstruction: true,
        classification: true,
    };
    /// Plain denoising autoencoder; the classifier path is never evaluated.
    pub const AUTOENCODER: LossTerms = LossTerms {
        reconstruction: true,
        classification: false,
    };
    /// Plain classifier; the decoder path is never evaluated.
    pub const CLASSIFIER: LossTerms = LossTerms {
        reconstruction: false,
        classification: true,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    /// Weight of the cross-entropy term.
    pub alpha: f64,
    /// L1 activity penalty on the hidden code. Not part of the base method.
    pub sparsity: f64,
    pub terms: LossTerms,
}

impl LossSettings {
    pub fn joint(alpha: f64) -> Self {
        LossSettings {
            alpha,
            sparsity: 0.0,
            terms: LossTerms::JOINT,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub e_r: f64,
    pub e_c: f64,
    /// Mean L1 norm of the hidden code (reported even when its weight is 0).
    pub e_sparsity: f64,
    pub e_total: f64,
    pub labeled_count: usize,
    pub total_count: usize,
}

/// A mini-batch of clean inputs, one per row, with the labels visible to
/// training.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: Matrix,
    labels: Vec<Option<usize>>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<Option<usize>>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape {
                op: "Batch::new",
                left: inputs.shape(),
                right: (labels.len(), 1),
            });
        }
        Ok(Batch { inputs, labels })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], labels: Vec<Option<usize>>) -> Result<Self> {
        Batch::new(Matrix::from_rows(rows), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Activations of a whole batch, one example per row.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchCache {
    pub x_corrupted: Matrix,
    pub z: Matrix,
    /// `None` when the reconstruction term is off.
    pub x_hat: Option<Matrix>,
    /// Batch rows that went through the classifier, in order.
    pub classified_rows: Vec<usize>,
    /// Posteriors of `classified_rows`, one per row.
    pub h: Matrix,
}

impl BatchCache {
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }

    /// Per-example view; `h` is empty for examples that skipped the
    /// classifier.
    pub fn example(&self, i: usize) -> ForwardCache {
        let h = match self.classified_rows.iter().position(|&r| r == i) {
            Some(k) => self.h.row(k).into(),
            None => Vector::default(),
        };
        ForwardCache {
            x_corrupted: self.x_corrupted.row(i).into(),
            z: self.z.row(i).into(),
            x_hat: self.x_hat.as_ref().map(|m| m.row(i).into()).unwrap_or_default(),
            h,
        }
    }
}

/// Partial derivatives of the objective, laid out like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w_enc: Matrix,
    pub b_enc: Vector,
    pub w_dec: Matrix,
    pub b_dec: Vector,
    pub w_cls: Matrix,
    pub b_cls: Vector,
}

impl Gradients {
    pub fn zeros(shape: ModelShape) -> Self {
        let p = ModelParams::zeros(shape);
        Gradients {
            w_enc: p.w_enc,
            b_enc: p.b_enc,
            w_dec: p.w_dec,
            b_dec: p.b_dec,
            w_cls: p.w_cls,
            b_cls: p.b_cls,
        }
    }

    pub fn arrays(&self) -> [&[f64]; 6] {
        [
            self.w_enc.as_slice(),
            &self.b_enc,
            self.w_dec.as_slice(),
            &self.b_dec,
            self.w_cls.as_slice(),
            &self.b_cls,
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w_enc.as_mut_slice(),
            &mut self.b_enc,
            self.w_dec.as_mut_slice(),
            &mut self.b_dec,
            self.w_cls.as_mut_slice(),
            &mut self.b_cls,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|x| x.is_finite()))
    }

    fn from_flat(shape: ModelShape, flat: &[f64]) -> Self {
        let mut g = Gradients::zeros(shape);
        let mut offset = 0;
        for a in g.arrays_mut() {
            a.copy_from_slice(&flat[offset..offset + a.len()]);
            offset += a.len();
        }
        g
    }
}

/// Zeroes each coordinate independently with probability `rate`.
///
/// Draws exactly one uniform per coordinate, whatever the rate.
pub fn corrupt(x: &[f64], rate: f64, rng: &mut Rng) -> Vector {
    let mut out = x.to_vec();
    corrupt_in_place(&mut out, rate, rng);
    out.into()
}

pub(crate) fn corrupt_in_place(x: &mut [f64], rate: f64, rng: &mut Rng) {
    for v in x.iter_mut() {
        if rng.next_f64() < rate {
            *v = 0.0;
        }
    }
}

/// Squared Euclidean distance between the clean input and its
/// reconstruction.
pub fn reconstruction_loss(x_clean: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x_clean.len() != x_hat.len() {
        return Err(Error::Shape {
            op: "reconstruction_loss",
            left: (x_clean.len(), 1),
            right: (x_hat.len(), 1),
        });
    }
    Ok(x_clean.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `−ln h[y]`, with `h[y]` floored at [`LOG_FLOOR`]. Each clamp bumps
/// [`log_floor_hits`]. Panics if `y` is out of range.
pub fn classification_loss(h: &[f64], y: usize) -> f64 {
    let p = h[y];
    if p < LOG_FLOOR {
        LOG_FLOOR_HITS.fetch_add(1, Ordering::Relaxed);
        -LOG_FLOOR.ln()
    } else {
        -p.ln()
    }
}

/// Corrupts each example, runs the forward paths the settings ask for and
/// reduces the losses. Corruption draws come from `rng` in row-major order,
/// one per input coordinate.
pub fn batch_loss(
    params: &ModelParams,
    batch: &Batch,
    settings: &LossSettings,
    rng: &mut Rng,
    corruption_rate: f64,
) -> Result<(LossBreakdown, BatchCache)> {
    let shape = params.shape();
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if batch.inputs.cols() != shape.input_dim {
        return Err(Error::Shape {
            op: "batch_loss",
            left: batch.inputs.shape(),
            right: (shape.hidden_dim, shape.input_dim),
        });
    }
    if !(0.0..=1.0).contains(&corruption_rate) {
        return Err(Error::Config(format!("corruption rate {corruption_rate} outside [0, 1]")));
    }
    let p = batch.len();

    let mut x_corrupted = batch.inputs.clone();
    for i in 0..p {
        corrupt_in_place(x_corrupted.row_mut(i), corruption_rate, rng);
    }
    let z = params.encode_batch(&x_corrupted)?;

    let mut e_r = 0.0;
    let x_hat = if settings.terms.reconstruction {
        let x_hat = params.decode_batch(&z)?;
        for i in 0..p {
            e_r += reconstruction_loss(batch.inputs.row(i), x_hat.row(i))?;
        }
        e_r /= p as f64;
        Some(x_hat)
    } else {
        None
    };

    let mut classified_rows = Vec::new();
    let mut e_c = 0.0;
    let h = if settings.terms.classification {
        classified_rows = labeled_rows(batch, shape.num_classes)?;
        let h = params.classify_batch(&gather_rows(&z, &classified_rows))?;
        for (k, &row) in classified_rows.iter().enumerate() {
            e_c += classification_loss(h.row(k), batch.labels[row].unwrap());
        }
        if !classified_rows.is_empty() {
            e_c /= classified_rows.len() as f64;
        }
        h
    } else {
        Matrix::zeros(0, shape.num_classes)
    };

    let e_sparsity = z.as_slice().iter().map(|v| v.abs()).sum::<f64>() / p as f64;
    let mut e_total = e_r + settings.alpha * e_c;
    if settings.sparsity != 0.0 {
        e_total += settings.sparsity * e_sparsity;
    }

    let breakdown = LossBreakdown {
        e_r,
        e_c,
        e_sparsity,
        e_total,
        labeled_count: batch.labeled_count(),
        total_count: p,
    };
    let cache = BatchCache {
        x_corrupted,
        z,
        x_hat,
        classified_rows,
        h,
    };
    Ok((breakdown, cache))
}

/// Exact gradient of the `e_total` that [`batch_loss`] reported for the same
/// batch, settings and parameters.
pub fn backward(params: &ModelParams, batch: &Batch, cache: &BatchCache, settings: &LossSettings) -> Result<Gradients> {
    let shape = params.shape();
    let p = batch.len();
    check_cache(batch, cache, settings, shape)?;

    let mut grads = Gradients::zeros(shape);
    let mut d_z = Matrix::zeros(p, shape.hidden_dim);

    if let Some(x_hat) = &cache.x_hat {
        // dE/d(decoder pre-activation) = (2/p)(x̂ − x)(1 − x̂²)
        let mut delta_dec = x_hat.clone();
        let scale = 2.0 / p as f64;
        for i in 0..p {
            let clean = batch.inputs.row(i);
            for (d, &x) in delta_dec.row_mut(i).iter_mut().zip(clean) {
                let xh = *d;
                *d = scale * (xh - x) * (1.0 - xh * xh);
            }
        }
        gemm(1.0, &delta_dec, Op::T, &cache.z, Op::N, 0.0, &mut grads.w_dec)?;
        grads.b_dec = delta_dec.column_sums();
        gemm(1.0, &delta_dec, Op::N, &params.w_dec, Op::N, 0.0, &mut d_z)?;
    }

    if !cache.classified_rows.is_empty() {
        // dE/d(logits) = (α / n_l)(h − onehot(y))
        let n_l = cache.classified_rows.len();
        let scale = settings.alpha / n_l as f64;
        let mut delta_cls = cache.h.clone();
        for (k, &row) in cache.classified_rows.iter().enumerate() {
            let y = batch.labels[row].unwrap();
            let r = delta_cls.row_mut(k);
            r[y] -= 1.0;
            for v in r.iter_mut() {
                *v *= scale;
            }
        }
        let z_l = gather_rows(&cache.z, &cache.classified_rows);
        gemm(1.0, &delta_cls, Op::T, &z_l, Op::N, 0.0, &mut grads.w_cls)?;
        grads.b_cls = delta_cls.column_sums();
        let mut d_z_l = Matrix::zeros(n_l, shape.hidden_dim);
        gemm(1.0, &delta_cls, Op::N, &params.w_cls, Op::N, 0.0, &mut d_z_l)?;
        for (k, &row) in cache.classified_rows.iter().enumerate() {
            for (acc, v) in d_z.row_mut(row).iter_mut().zip(d_z_l.row(k)) {
                *acc += v;
            }
        }
    }

    if settings.sparsity != 0.0 {
        let scale = settings.sparsity / p as f64;
        for (d, &zv) in d_z.as_mut_slice().iter_mut().zip(cache.z.as_slice()) {
            if zv != 0.0 {
                *d += scale * zv.signum();
            }
        }
    }

    // through the encoder tanh
    for (d, &zv) in d_z.as_mut_slice().iter_mut().zip(cache.z.as_slice()) {
        *d *= 1.0 - zv * zv;
    }
    gemm(1.0, &d_z, Op::T, &cache.x_corrupted, Op::N, 0.0, &mut grads.w_enc)?;
    grads.b_enc = d_z.column_sums();

    Ok(grads)
}

/// Central differences of `f` at `theta`, one coordinate at a time.
///
/// The divisor is the actual distance between the two evaluation points
/// rather than `2·step`, which removes the rounding of `θ ± step`.
pub fn central_difference(theta: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    assert!(step > 0.0, "step must be positive");
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = point[i];
        let up = orig + step;
        let down = orig - step;
        point[i] = up;
        let f_up = f(&point);
        point[i] = down;
        let f_down = f(&point);
        point[i] = orig;
        grad.push((f_up - f_down) / (up - down));
    }
    grad
}

/// Numerical gradient of `e_total` for every parameter. Every evaluation
/// replays the same corruption draws from a fresh generator seeded with
/// `corruption_seed`.
///
/// The loss is evaluated in double-double arithmetic here. In plain f64 the
/// two sides of a central difference carry rounding noise of about one ulp
/// of the loss, which at a step of 1e-5 swamps gradient entries below 1e-5.
pub fn finite_difference_gradient(
    params: &ModelParams,
    batch: &Batch,
    settings: &LossSettings,
    step: f64,
    corruption_rate: f64,
    corruption_seed: u64,
) -> Result<Gradients> {
    assert!(step > 0.0, "step must be positive");
    // shape and label checks, and the frozen corruption
    let (_, cache) = batch_loss(params, batch, settings, &mut Rng::new(corruption_seed), corruption_rate)?;
    let corrupted = cache.x_corrupted;

    let mut point = params.clone();
    let mut grad = Vec::with_capacity(params.shape().num_parameters());
    for k in 0..PARAM_NAMES.len() {
        for i in 0..params.arrays()[k].len() {
            let orig = params.arrays()[k][i];
            let (up, down) = (orig + step, orig - step);
            point.arrays_mut()[k][i] = up;
            let f_up = precise_total(&point, batch, &corrupted, settings);
            point.arrays_mut()[k][i] = down;
            let f_down = precise_total(&point, batch, &corrupted, settings);
            point.arrays_mut()[k][i] = orig;
            grad.push((f_up - f_down).to_f64() / (up - down));
        }
    }
    Ok(Gradients::from_flat(params.shape(), &grad))
}

/// `e_total` in double-double precision, from inputs already corrupted.
fn precise_total(params: &ModelParams, batch: &Batch, corrupted: &Matrix, settings: &LossSettings) -> Dd {
    let shape = params.shape();
    let zero = Dd::ZERO;
    let (mut e_r, mut e_c, mut e_s) = (zero, zero, zero);
    let mut n_l = 0usize;
    let mut z = vec![zero; shape.hidden_dim];
    let mut logits = vec![zero; shape.num_classes];
    for i in 0..batch.len() {
        for (j, zj) in z.iter_mut().enumerate() {
            let mut a = Dd::from(params.b_enc[j]);
            for (&w, &x) in params.w_enc.row(j).iter().zip(corrupted.row(i)) {
                a += Dd::product(w, x);
            }
            *zj = a.tanh();
            e_s += zj.abs();
        }
        if settings.terms.reconstruction {
            for (k, &x) in batch.inputs.row(i).iter().enumerate() {
                let mut a = Dd::from(params.b_dec[k]);
                for (&w, &zj) in params.w_dec.row(k).iter().zip(&z) {
                    a += zj * w;
                }
                let r = a.tanh() - Dd::from(x);
                e_r += r * r;
            }
        }
        let Some(y) = batch.labels[i].filter(|_| settings.terms.classification) else {
            continue;
        };
        n_l += 1;
        for (c, l) in logits.iter_mut().enumerate() {
            let mut a = Dd::from(params.b_cls[c]);
            for (&w, &zj) in params.w_cls.row(c).iter().zip(&z) {
                a += zj * w;
            }
            *l = a;
        }
        let m = logits.iter().copied().fold(logits[0], |m, l| if l.hi() > m.hi() { l } else { m });
        let mut sum = zero;
        for &l in &logits {
            sum += (l - m).exp();
        }
        let log_h = logits[y] - m - sum.ln();
        e_c -= if log_h.hi() < LOG_FLOOR.ln() {
            Dd::from(LOG_FLOOR.ln())
        } else {
            log_h
        };
    }
    let p = batch.len() as f64;
    let mut total = zero;
    if settings.terms.reconstruction {
        total += e_r / p;
    }
    if n_l > 0 {
        total += e_c * settings.alpha / n_l as f64;
    }
    if settings.sparsity != 0.0 {
        total += e_s * settings.sparsity / p;
    }
    total
}

/// Largest elementwise relative error between two gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discrepancy {
    pub max_relative_error: f64,
    pub param: &'static str,
    pub index: usize,
    pub lhs: f64,
    pub rhs: f64,
}

/// `max |a − b| / max(|a|, |b|, 1e-8)` over all entries.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> Discrepancy {
    let mut worst = Discrepancy {
        max_relative_error: 0.0,
        param: PARAM_NAMES[0],
        index: 0,
        lhs: 0.0,
        rhs: 0.0,
    };
    for (k, (xa, xb)) in a.arrays().iter().zip(b.arrays()).enumerate() {
        for (i, (&u, &v)) in xa.iter().zip(xb).enumerate() {
            let rel = (u - v).abs() / u.abs().max(v.abs()).max(1e-8);
            if rel > worst.max_relative_error || rel.is_nan() {
                worst = Discrepancy {
                    max_relative_error: rel,
                    param: PARAM_NAMES[k],
                    index: i,
                    lhs: u,
                    rhs: v,
                };
            }
        }
    }
    worst
}

fn labeled_rows(batch: &Batch, num_classes: usize) -> Result<Vec<usize>> {
    let mut rows = Vec::new();
    for (i, l) in batch.labels.iter().enumerate() {
        if let Some(y) = *l {
            if y >= num_classes {
                return Err(Error::Integrity(format!(
                    "label {y} out of range for {num_classes} classes"
                )));
            }
            rows.push(i);
        }
    }
    Ok(rows)
}

fn gather_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), m.cols());
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(m.row(r));
    }
    out
}

fn check_cache(batch: &Batch, cache: &BatchCache, settings: &LossSettings, shape: ModelShape) -> Result<()> {
    let p = batch.len();
    if cache.z.shape() != (p, shape.hidden_dim) || cache.x_corrupted.shape() != (p, shape.input_dim) {
        return Err(Error::Consistency(format!(
            "cache holds {} examples of width {}, batch has {p}",
            cache.z.rows(),
            cache.z.cols()
        )));
    }
    if cache.x_hat.is_some() != settings.terms.reconstruction {
        return Err(Error::Consistency("reconstruction path does not match settings".into()));
    }
    let expected: Vec<usize> = if settings.terms.classification {
        labeled_rows(batch, shape.num_classes)?
    } else {
        Vec::new()
    };
    if expected != cache.classified_rows || cache.h.rows() != expected.len() {
        return Err(Error::Consistency("classified rows do not match batch labels".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;
    use proptest::prelude::*;
    use crate::tensor::Rng;

    fn random_params(shape: ModelShape, seed: u64) -> ModelParams {
        let mut rng = Rng::new(seed);
        let mut p = ModelParams::init(shape, &mut rng);
        for a in p.arrays_mut() {
            for v in a.iter_mut() {
                *v += rng.uniform(-0.3, 0.3);
            }
        }
        p
    }

    fn random_batch(shape: ModelShape, p: usize, labeled: usize, seed: u64) -> Batch {
        let mut rng = Rng::new(seed);
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..shape.input_dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let labels = (0..p)
            .map(|i| (i < labeled).then(|| rng.below(shape.num_classes as u64) as usize))
            .collect();
        Batch::from_rows(&rows, labels).unwrap()
    }

    fn gradient_check(shape: ModelShape, batch: &Batch, settings: &LossSettings, params_seed: u64) -> Discrepancy {
        let params = random_params(shape, params_seed);
        let seed = 1234;
        let (_, cache) = batch_loss(&params, batch, settings, &mut Rng::new(seed), 0.2).unwrap();
        let analytic = backward(&params, batch, &cache, settings).unwrap();
        let numeric = finite_difference_gradient(&params, batch, settings, 1e-5, 0.2, seed).unwrap();
        max_relative_error(&analytic, &numeric)
    }

    #[test]
    fn reconstruction_loss_examples() {
        assert_eq!(reconstruction_loss(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(reconstruction_loss(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(reconstruction_loss(&[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn classification_loss_examples() {
        assert!((classification_loss(&[0.25; 4], 3) - 4f64.ln()).abs() < 1e-15);
        assert!((classification_loss(&[0.25; 4], 3) - 1.386294).abs() < 1e-6);
        assert!((classification_loss(&[0.5, 0.5], 0) - 0.693147).abs() < 1e-6);
        assert!((classification_loss(&[0.1, 0.2, 0.7], 2) - 0.356675).abs() < 1e-6);
    }

    #[test]
    fn classification_loss_floors_zero_posterior() {
        let before = log_floor_hits();
        let loss = classification_loss(&[1.0, 0.0], 1);
        assert!((loss - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(log_floor_hits() > before);
    }

    #[test]
    fn corrupt_extremes_and_rate() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(&*corrupt(&x, 0.0, &mut Rng::new(1)), &x[..]);
        assert!(corrupt(&x, 1.0, &mut Rng::new(1)).iter().all(|&v| v == 0.0));
        let ones = vec![1.0; 100_000];
        let c = corrupt(&ones, 0.5, &mut Rng::new(77));
        let zeroed = c.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeroed - 0.5).abs() < 0.01, "{zeroed}");
        // untouched coordinates are copied exactly
        assert!(c.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn unlabeled_batch_has_no_classification_loss() {
        let shape = ModelShape::new(4, 6, 3).unwrap();
        let params = random_params(shape, 1);
        let batch = random_batch(shape, 5, 0, 2);
        let (loss, cache) = batch_loss(&params, &batch, &LossSettings::joint(100.0), &mut Rng::new(0), 0.2).unwrap();
        assert_eq!(loss.e_c, 0.0);
        assert_eq!(loss.e_total, loss.e_r);
        assert!(cache.example(0).h.is_empty());
        let g = backward(&params, &batch, &cache, &LossSettings::joint(100.0)).unwrap();
        assert!(g.w_cls.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.b_cls.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_alpha_reduces_to_reconstruction() {
        let shape = ModelShape::new(4, 6, 3).unwrap();
        let params = random_params(shape, 1);
        let batch = random_batch(shape, 5, 5, 2);
        let (loss, _) = batch_loss(&params, &batch, &LossSettings::joint(0.0), &mut Rng::new(0), 0.1).unwrap();
        assert!(loss.e_c > 0.0);
        assert_eq!(loss.e_total, loss.e_r);
    }

    #[test]
    fn combined_loss_arithmetic() {
        // Zero weights give x̂ = 0, so the reconstruction losses are |x|² = 1
        // and 3. The class bias is set so that h[0] = e^{-1/2}, i.e. a
        // cross-entropy of 0.5 on the one labeled example.
        let mut params = ModelParams::zeros(ModelShape::new(2, 1, 2).unwrap());
        params.b_cls[1] = (0.5f64.exp() - 1.0).ln();
        let batch = Batch::from_rows(&[[1.0, 0.0], [1.0, 2f64.sqrt()]], vec![Some(0), None]).unwrap();
        let (loss, _) = batch_loss(&params, &batch, &LossSettings::joint(100.0), &mut Rng::new(0), 0.0).unwrap();
        assert!((loss.e_r - 2.0).abs() < 1e-12);
        assert!((loss.e_c - 0.5).abs() < 1e-12);
        assert!((loss.e_total - 52.0).abs() < 1e-10);
        assert_eq!(loss.labeled_count, 1);
        assert_eq!(loss.total_count, 2);
    }

    #[test]
    fn gradients_vanish_at_joint_minimum() {
        let shape = ModelShape::new(3, 4, 3).unwrap();
        let mut params = random_params(shape, 3);
        let x = [0.4f64, -0.6, 0.1];
        params.w_dec = Matrix::zeros(3, 4);
        for (b, &xv) in params.b_dec.iter_mut().zip(&x) {
            *b = xv.atanh();
        }
        params.w_cls = Matrix::zeros(3, 4);
        params.b_cls = vec![0.0, 60.0, 0.0].into();
        let batch = Batch::from_rows(&[x, x, x], vec![Some(1), Some(1), None]).unwrap();
        let settings = LossSettings::joint(10.0);
        let (_, cache) = batch_loss(&params, &batch, &settings, &mut Rng::new(0), 0.0).unwrap();
        let g = backward(&params, &batch, &cache, &settings).unwrap();
        for a in g.arrays() {
            assert!(a.iter().all(|v| v.abs() < 1e-9), "{a:?}");
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_reference_shape() {
        let shape = ModelShape::new(8, 16, 4).unwrap();
        let batch = random_batch(shape, 6, 3, 10);
        for alpha in [0.0, 1.0, 100.0] {
            let d = gradient_check(shape, &batch, &LossSettings::joint(alpha), 20);
            assert!(d.max_relative_error < 1e-6, "alpha {alpha}: {d:?}");
        }
    }

    #[test]
    fn backward_matches_finite_differences_over_random_configurations() {
        for trial in 0..20u64 {
            let mut rng = Rng::new(500 + trial);
            let shape = ModelShape::new(
                2 + rng.below(6) as usize,
                2 + rng.below(10) as usize,
                2 + rng.below(4) as usize,
            )
            .unwrap();
            let p = 1 + rng.below(7) as usize;
            let labeled = rng.below(p as u64 + 1) as usize;
            let alpha = [0.0, 0.5, 3.0, 100.0][rng.below(4) as usize];
            let batch = random_batch(shape, p, labeled, trial);
            let d = gradient_check(shape, &batch, &LossSettings::joint(alpha), 900 + trial);
            assert!(d.max_relative_error < 1e-6, "trial {trial} {shape:?} alpha {alpha}: {d:?}");
        }
    }

    #[test]
    fn sparsity_extension_gradient_checks() {
        let shape = ModelShape::new(5, 9, 3).unwrap();
        let batch = random_batch(shape, 4, 2, 6);
        let settings = LossSettings {
            alpha: 2.0,
            sparsity: 0.3,
            terms: LossTerms::JOINT,
        };
        let d = gradient_check(shape, &batch, &settings, 61);
        assert!(d.max_relative_error < 1e-6, "{d:?}");
    }

    #[test]
    fn central_difference_recovers_quadratic_gradient() {
        // f(x) = ½ xᵀ A x + bᵀ x with symmetric A; ∇f = A x + b
        let a = [[2.0, 0.5, -1.0], [0.5, 3.0, 0.25], [-1.0, 0.25, 1.5]];
        let b = [0.3, -0.7, 1.1];
        let f = |x: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * x[i] * a[i][j] * x[j];
                }
                s += b[i] * x[i];
            }
            s
        };
        let x = [0.9, -1.3, 0.4];
        let g = central_difference(&x, 1e-5, f);
        for i in 0..3 {
            let exact: f64 = (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() + b[i];
            assert!((g[i] - exact).abs() < 1e-8, "{i}: {} vs {exact}", g[i]);
        }
    }

    #[test]
    fn repeated_example_matches_single_example_gradient() {
        let shape = ModelShape::new(4, 5, 3).unwrap();
        let params = random_params(shape, 8);
        let row = [0.2, -0.4, 0.6, 0.1];
        let single = Batch::from_rows(&[row], vec![Some(2)]).unwrap();
        let triple = Batch::from_rows(&[row, row, row], vec![Some(2); 3]).unwrap();
        let settings = LossSettings::joint(1.5);
        let g1 = finite_difference_gradient(&params, &single, &settings, 1e-5, 0.0, 0).unwrap();
        let g3 = finite_difference_gradient(&params, &triple, &settings, 1e-5, 0.0, 0).unwrap();
        assert!(max_relative_error(&g1, &g3).max_relative_error < 1e-6);
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let shape = ModelShape::new(4, 6, 3).unwrap();
        let params = random_params(shape, 1);
        let a = random_batch(shape, 5, 2, 2);
        let b = random_batch(shape, 3, 1, 3);
        let settings = LossSettings::joint(1.0);
        let (_, cache) = batch_loss(&params, &a, &settings, &mut Rng::new(0), 0.0).unwrap();
        assert!(matches!(backward(&params, &b, &cache, &settings), Err(Error::Consistency(_))));
        let ae = LossSettings {
            terms: LossTerms::AUTOENCODER,
            ..settings
        };
        assert!(matches!(backward(&params, &a, &cache, &ae), Err(Error::Consistency(_))));
    }

    #[test]
    fn batch_cache_examples_match_single_forward() {
        let shape = ModelShape::new(4, 6, 3).unwrap();
        let params = random_params(shape, 4);
        let batch = random_batch(shape, 4, 2, 5);
        let (_, cache) = batch_loss(&params, &batch, &LossSettings::joint(1.0), &mut Rng::new(3), 0.3).unwrap();
        for i in 0..4 {
            let ex = cache.example(i);
            let single = params.forward(&ex.x_corrupted, batch.labels()[i].is_some()).unwrap();
            assert!(ex.z.iter().zip(single.z.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
            assert!(ex.x_hat.iter().zip(single.x_hat.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
            assert_eq!(ex.h.len(), single.h.len());
            assert!(ex.h.iter().zip(single.h.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gradient_is_linear_in_alpha(seed in any::<u64>(), alpha in 0.0f64..50.0) {
            let shape = ModelShape::new(5, 7, 3).unwrap();
            let params = random_params(shape, seed);
            let batch = random_batch(shape, 6, 3, seed ^ 1);
            let grad = |settings: LossSettings| {
                let (_, cache) = batch_loss(&params, &batch, &settings, &mut Rng::new(seed), 0.25).unwrap();
                backward(&params, &batch, &cache, &settings).unwrap()
            };
            let joint = grad(LossSettings::joint(alpha));
            let rec = grad(LossSettings { alpha: 0.0, sparsity: 0.0, terms: LossTerms::AUTOENCODER });
            let cls = grad(LossSettings { alpha: 1.0, sparsity: 0.0, terms: LossTerms::CLASSIFIER });
            for ((j, r), c) in joint.arrays().iter().zip(rec.arrays()).zip(cls.arrays()) {
                for ((&jv, &rv), &cv) in j.iter().zip(r).zip(c) {
                    let expected = rv + alpha * cv;
                    prop_assert!((jv - expected).abs() <= 1e-10 * expected.abs().max(1.0));
                }
            }
        }

        #[test]
        fn unlabeled_examples_do_not_move_classification_loss(seed in any::<u64>(), extra in 1usize..6) {
            let shape = ModelShape::new(4, 5, 3).unwrap();
            let params = random_params(shape, seed);
            let base = random_batch(shape, 3, 3, seed);
            let mut rng = Rng::new(seed ^ 7);
            let mut rows: Vec<Vec<f64>> = (0..3).map(|i| base.inputs().row(i).to_vec()).collect();
            let mut labels = base.labels().to_vec();
            for _ in 0..extra {
                rows.push((0..4).map(|_| rng.uniform(-1.0, 1.0)).collect());
                labels.push(None);
            }
            let grown = Batch::from_rows(&rows, labels).unwrap();
            let s = LossSettings::joint(3.0);
            let (a, _) = batch_loss(&params, &base, &s, &mut Rng::new(1), 0.0).unwrap();
            let (b, _) = batch_loss(&params, &grown, &s, &mut Rng::new(1), 0.0).unwrap();
            prop_assert_eq!(a.e_c, b.e_c);
        }

        #[test]
        fn reconstruction_loss_is_bounded(seed in any::<u64>(), rate in 0.0f64..1.0) {
            let shape = ModelShape::new(6, 8, 3).unwrap();
            let params = random_params(shape, seed);
            let batch = random_batch(shape, 4, 1, seed);
            let (loss, _) = batch_loss(&params, &batch, &LossSettings::joint(1.0), &mut Rng::new(seed), rate).unwrap();
            prop_assert!(loss.e_r >= 0.0 && loss.e_c >= 0.0);
            prop_assert!(loss.e_r <= 4.0 * shape.input_dim as f64);
            prop_assert!((loss.e_total - (loss.e_r + loss.e_c)).abs() <= 1e-12 * loss.e_total.abs().max(1.0));
        }
    }
}
