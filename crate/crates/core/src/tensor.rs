//! Dense row-major matrices, vectors and the seeded generator used by every
//! other module.
//!
//! Everything is `f64`. Matrix products go through `matrixmultiply`'s
//! single-threaded `dgemm`, whose summation order is fixed for a given shape,
//! so results are reproducible run to run.

use std::ops::{Deref, DerefMut};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

impl From<&[f64]> for Vector {
    fn from(data: &[f64]) -> Self {
        Vector {
            data: data.to_vec(),
        }
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::Shape {
                op: "add_row_vector",
                left: self.shape(),
                right: (1, bias.len()),
            });
        }
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Column sums, accumulated top to bottom.
    pub fn column_sums(&self) -> Vector {
        let mut out = Vector::zeros(self.cols);
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (acc, x) in out.iter_mut().zip(row) {
                *acc += x;
            }
        }
        out
    }

    pub fn map_in_place(&mut self, f: impl Fn(f64) -> f64) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `m · v`.
pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::Shape {
            op: "matvec",
            left: m.shape(),
            right: (v.len(), 1),
        });
    }
    let out = (0..m.rows)
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect::<Vec<f64>>();
    Ok(out.into())
}

pub fn tanh_map(v: &[f64]) -> Vector {
    v.iter().map(|x| x.tanh()).collect::<Vec<_>>().into()
}

/// Whether a gemm operand is read as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `c ← alpha · op(a) · op(b) + beta · c`.
///
/// With `beta == 0` the previous contents of `c` are ignored.
pub fn gemm(alpha: f64, a: &Matrix, op_a: Op, b: &Matrix, op_b: Op, beta: f64, c: &mut Matrix) -> Result<()> {
    let (m, k, rsa, csa) = match op_a {
        Op::N => (a.rows, a.cols, a.cols as isize, 1),
        Op::T => (a.cols, a.rows, 1, a.cols as isize),
    };
    let (kb, n, rsb, csb) = match op_b {
        Op::N => (b.rows, b.cols, b.cols as isize, 1),
        Op::T => (b.cols, b.rows, 1, b.cols as isize),
    };
    if k != kb || c.rows != m || c.cols != n {
        return Err(Error::Shape {
            op: "gemm",
            left: (m, k),
            right: (kb, n),
        });
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        // dgemm with an empty inner dimension still scales c by beta
        c.map_in_place(|x| if beta == 0.0 { 0.0 } else { beta * x });
        return Ok(());
    }
    // SAFETY: the strides and extents above describe exactly the buffers of
    // `a`, `b` and `c`, and `c` does not alias either input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    Ok(())
}

/// `op(a) · op(b)` into a fresh matrix.
pub fn matmul(a: &Matrix, op_a: Op, b: &Matrix, op_b: Op) -> Result<Matrix> {
    let m = if op_a == Op::N { a.rows } else { a.cols };
    let n = if op_b == Op::N { b.cols } else { b.rows };
    let mut c = Matrix::zeros(m, n);
    gemm(1.0, a, op_a, b, op_b, 0.0, &mut c)?;
    Ok(c)
}

/// i.i.d. uniform entries in `[-scale, scale]`, drawn in row-major order.
pub fn uniform_init(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    assert!(scale > 0.0, "uniform_init scale must be positive, got {scale}");
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-scale, scale))
        .collect();
    Matrix { rows, cols, data }
}

/// Seeded generator used for every random draw in the crate.
///
/// The stream is ChaCha with 8 rounds, seeded through `seed_from_u64`; both
/// are specified bit-for-bit by `rand_chacha`/`rand_core`, so a seed produces
/// the same values on every platform. Derived floats and integers are built
/// here from raw `u64` words rather than through `rand`'s distributions,
/// whose algorithms are allowed to change between releases.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`, unbiased by rejection. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % n;
            }
        }
    }

    /// Standard normal via Box-Muller; consumes two words per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Mixes a master seed with extra words into an independent sub-seed
/// (splitmix64 finalizer applied per word).
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(master.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &p| {
        mix(acc ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    })
}
