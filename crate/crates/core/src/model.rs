//! Parameters of the single-layer model and its three forward paths:
//! encoder into a shared hidden code, which feeds both the decoder and the
//! softmax classifier.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};
use crate::tensor::{gemm, matvec, tanh_map, uniform_init, Matrix, Op, Rng, Vector};

/// Names of the six parameter arrays, in storage order.
pub const PARAM_NAMES: [&str; 6] = ["w_enc", "b_enc", "w_dec", "b_dec", "w_cls", "b_cls"];

const CHECKPOINT_MAGIC: &[u8; 4] = b"SSAE";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelShape {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || num_classes == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be at least 1, got {input_dim}x{hidden_dim}x{num_classes}"
            )));
        }
        Ok(ModelShape {
            input_dim,
            hidden_dim,
            num_classes,
        })
    }

    /// Hidden code at least as wide as the input.
    pub fn is_overcomplete(&self) -> bool {
        self.hidden_dim >= self.input_dim
    }

    pub fn num_parameters(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        2 * d * h + h + d + c * h + c
    }
}

/// Encoder, decoder and classifier weights. `w_dec` is a free matrix, not
/// tied to the transpose of `w_enc`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// hidden × input
    pub w_enc: Matrix,
    pub b_enc: Vector,
    /// input × hidden
    pub w_dec: Matrix,
    pub b_dec: Vector,
    /// classes × hidden
    pub w_cls: Matrix,
    pub b_cls: Vector,
}

/// Activations of one example kept for backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    pub x_corrupted: Vector,
    pub z: Vector,
    pub x_hat: Vector,
    /// Empty when the classifier path was skipped.
    pub h: Vector,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        let ModelShape {
            input_dim: d,
            hidden_dim: h,
            num_classes: c,
        } = shape;
        ModelParams {
            w_enc: Matrix::zeros(h, d),
            b_enc: Vector::zeros(h),
            w_dec: Matrix::zeros(d, h),
            b_dec: Vector::zeros(d),
            w_cls: Matrix::zeros(c, h),
            b_cls: Vector::zeros(c),
        }
    }

    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    /// Draw order: encoder, decoder, classifier.
    pub fn init(shape: ModelShape, rng: &mut Rng) -> Self {
        let ModelShape {
            input_dim: d,
            hidden_dim: h,
            num_classes: c,
        } = shape;
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w_enc = uniform_init(rng, h, d, glorot(d, h));
        let w_dec = uniform_init(rng, d, h, glorot(h, d));
        let w_cls = uniform_init(rng, c, h, glorot(h, c));
        ModelParams {
            w_enc,
            b_enc: Vector::zeros(h),
            w_dec,
            b_dec: Vector::zeros(d),
            w_cls,
            b_cls: Vector::zeros(c),
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input_dim: self.w_enc.cols(),
            hidden_dim: self.w_enc.rows(),
            num_classes: self.w_cls.rows(),
        }
    }

    /// Checks that all six arrays agree on one shape.
    pub fn validate(&self) -> Result<()> {
        let s = self.shape();
        let ok = self.b_enc.len() == s.hidden_dim
            && self.w_dec.shape() == (s.input_dim, s.hidden_dim)
            && self.b_dec.len() == s.input_dim
            && self.w_cls.cols() == s.hidden_dim
            && self.b_cls.len() == s.num_classes;
        if ok {
            Ok(())
        } else {
            Err(Error::Integrity(format!("inconsistent parameter shapes for {s:?}")))
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

    /// `tanh(W_E x + b_E)`.
    pub fn encode(&self, x: &[f64]) -> Result<Vector> {
        affine_tanh(&self.w_enc, &self.b_enc, x)
    }

    /// `tanh(W_D z + b_D)`.
    pub fn decode(&self, z: &[f64]) -> Result<Vector> {
        affine_tanh(&self.w_dec, &self.b_dec, z)
    }

    /// `softmax(W_C z + b_C)`.
    pub fn classify(&self, z: &[f64]) -> Result<Vector> {
        let mut logits = matvec(&self.w_cls, z)?;
        for (l, b) in logits.iter_mut().zip(self.b_cls.iter()) {
            *l += b;
        }
        Ok(softmax(&logits))
    }

    /// Runs the encoder once and feeds the same code to the decoder and,
    /// if requested, the classifier.
    pub fn forward(&self, x_corrupted: &[f64], with_classifier: bool) -> Result<ForwardCache> {
        let z = self.encode(x_corrupted)?;
        let x_hat = self.decode(&z)?;
        let h = if with_classifier {
            self.classify(&z)?
        } else {
            Vector::default()
        };
        Ok(ForwardCache {
            x_corrupted: x_corrupted.into(),
            z,
            x_hat,
            h,
        })
    }

    /// Row-wise [`encode`](Self::encode) of a batch (one example per row).
    pub fn encode_batch(&self, x: &Matrix) -> Result<Matrix> {
        affine_tanh_batch(&self.w_enc, &self.b_enc, x)
    }

    pub fn decode_batch(&self, z: &Matrix) -> Result<Matrix> {
        affine_tanh_batch(&self.w_dec, &self.b_dec, z)
    }

    /// Row-wise [`classify`](Self::classify).
    pub fn classify_batch(&self, z: &Matrix) -> Result<Matrix> {
        let mut logits = Matrix::zeros(z.rows(), self.w_cls.rows());
        gemm(1.0, z, Op::N, &self.w_cls, Op::T, 0.0, &mut logits)?;
        logits.add_row_vector(&self.b_cls)?;
        for i in 0..logits.rows() {
            softmax_in_place(logits.row_mut(i));
        }
        Ok(logits)
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

    /// Checkpoint layout: magic `SSAE`, version byte, then input, hidden and
    /// class counts as little-endian `u64`, then the six arrays in
    /// [`PARAM_NAMES`] order as little-endian `f64`.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let s = self.shape();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        for dim in [s.input_dim, s.hidden_dim, s.num_classes] {
            binio::write_u64(w, dim as u64)?;
        }
        for a in self.arrays() {
            binio::write_f64s(w, a)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        const KIND: &str = "checkpoint";
        binio::expect_header(r, KIND, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = binio::count(KIND, binio::read_u64(r).map_err(|e| binio::truncated(KIND, e))?)?;
        }
        let shape = ModelShape::new(dims[0], dims[1], dims[2])
            .map_err(|e| Error::format(KIND, e.to_string()))?;
        let mut params = ModelParams::zeros(shape);
        for a in params.arrays_mut() {
            let values = binio::read_f64s(r, a.len()).map_err(|e| binio::truncated(KIND, e))?;
            a.copy_from_slice(&values);
        }
        binio::expect_eof(r, KIND)?;
        Ok(params)
    }
}

/// Softmax with the maximum logit subtracted first.
pub fn softmax(logits: &[f64]) -> Vector {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out.into()
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn affine_tanh(w: &Matrix, b: &[f64], x: &[f64]) -> Result<Vector> {
    let mut a = matvec(w, x)?;
    for (ai, bi) in a.iter_mut().zip(b) {
        *ai += bi;
    }
    Ok(tanh_map(&a))
}

fn affine_tanh_batch(w: &Matrix, b: &[f64], x: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), w.rows());
    gemm(1.0, x, Op::N, w, Op::T, 0.0, &mut out)?;
    out.add_row_vector(b)?;
    out.map_in_place(f64::tanh);
    Ok(out)
}
