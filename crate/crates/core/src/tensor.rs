//! Dense N-way tensors, mode-n index arithmetic, fiber extraction, and the
//! CP model with its reconstruction / objective / relative-error evaluations.
//!
//! Values are stored first-index-fastest, so the column order of the mode-n
//! unfolding is exactly the order produced by `linear_index`. Multi-indices,
//! modes, and unfolding columns are 1-based in the public API (matching the
//! usual tensor notation); conversion to 0-based offsets happens here and
//! nowhere else.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};

/// Dense N-way tensor with explicit extents.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    /// Wrap a flat value buffer (first-index-fastest) with its extents.
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidDims(dims));
        }
        let want: usize = dims.iter().product();
        if values.len() != want {
            return Err(Error::LengthMismatch {
                got: values.len(),
                want,
            });
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n: usize = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Entry at a full 1-based multi-index.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "index has {} entries for a {}-way tensor",
                index.len(),
                self.ndim()
            )));
        }
        let mut offset = 0;
        let mut stride = 1;
        for (k, (&i, &d)) in index.iter().zip(&self.dims).enumerate() {
            if i < 1 || i > d {
                return Err(Error::IndexOutOfRange {
                    mode: k + 1,
                    index: i,
                    bound: d,
                });
            }
            offset += (i - 1) * stride;
            stride *= d;
        }
        Ok(self.values[offset])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Flat stride of each mode (stride of mode n is the product of the
    /// extents before it).
    fn strides(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.ndim());
        let mut acc = 1;
        for &d in &self.dims {
            s.push(acc);
            acc *= d;
        }
        s
    }
}

/// Multi-index over every mode except `mode`, with 1-based entries listed in
/// ascending order of the remaining modes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeIndexTuple {
    pub mode: usize,
    pub entries: Vec<usize>,
}

impl ModeIndexTuple {
    pub fn new(mode: usize, entries: Vec<usize>) -> Self {
        Self { mode, entries }
    }
}

fn check_mode(dims: &[usize], mode: usize) -> Result<()> {
    if mode < 1 || mode > dims.len() {
        return Err(Error::ModeOutOfRange {
            mode,
            ndim: dims.len(),
        });
    }
    Ok(())
}

/// Extents of every mode except `mode`, in ascending mode order.
pub fn excluded_dims(dims: &[usize], mode: usize) -> Result<Vec<usize>> {
    check_mode(dims, mode)?;
    Ok(dims
        .iter()
        .enumerate()
        .filter(|(k, _)| k + 1 != mode)
        .map(|(_, &d)| d)
        .collect())
}

/// Number of mode-`mode` fibers, i.e. the column count of the unfolding.
pub fn column_count(dims: &[usize], mode: usize) -> Result<usize> {
    Ok(excluded_dims(dims, mode)?.iter().product())
}

/// Column of the mode-n unfolding addressed by a tuple:
/// j = 1 + sum over k != n of (i_k - 1) * prod of I_m for m < k, m != n.
pub fn linear_index(dims: &[usize], tuple: &ModeIndexTuple) -> Result<usize> {
    let excl = excluded_dims(dims, tuple.mode)?;
    if tuple.entries.len() != excl.len() {
        return Err(Error::ShapeMismatch(format!(
            "tuple has {} entries, expected {}",
            tuple.entries.len(),
            excl.len()
        )));
    }
    let mut j = 1;
    let mut weight = 1;
    for (pos, (&i, &d)) in tuple.entries.iter().zip(&excl).enumerate() {
        if i < 1 || i > d {
            // Recover the original mode number for the error message.
            let mode = if pos + 1 < tuple.mode { pos + 1 } else { pos + 2 };
            return Err(Error::IndexOutOfRange {
                mode,
                index: i,
                bound: d,
            });
        }
        j += (i - 1) * weight;
        weight *= d;
    }
    Ok(j)
}

/// Inverse of `linear_index`: the tuple addressing column `j`.
pub fn tuple_at(dims: &[usize], mode: usize, j: usize) -> Result<ModeIndexTuple> {
    let excl = excluded_dims(dims, mode)?;
    let total: usize = excl.iter().product();
    if j < 1 || j > total {
        return Err(Error::IndexOutOfRange {
            mode,
            index: j,
            bound: total,
        });
    }
    let mut rem = j - 1;
    let entries = excl
        .iter()
        .map(|&d| {
            let i = rem % d + 1;
            rem /= d;
            i
        })
        .collect();
    Ok(ModeIndexTuple::new(mode, entries))
}

/// Gather the mode-n fibers addressed by the rows of `idx` (one 1-based tuple
/// per row) into an I_n x B matrix, without forming the unfolding.
pub fn extract_fibers(x: &DenseTensor, mode: usize, idx: ArrayView2<usize>) -> Result<Array2<f64>> {
    check_mode(x.dims(), mode)?;
    let n = x.ndim();
    if idx.ncols() != n - 1 {
        return Err(Error::ShapeMismatch(format!(
            "tuples have {} entries, expected {}",
            idx.ncols(),
            n - 1
        )));
    }
    let strides = x.strides();
    let i_n = x.dims()[mode - 1];
    let stride_n = strides[mode - 1];
    let b = idx.nrows();
    let mut out = Array2::zeros((i_n, b));
    for (col, tuple) in idx.rows().into_iter().enumerate() {
        let mut base = 0;
        for (pos, &i) in tuple.iter().enumerate() {
            let k = if pos + 1 < mode { pos } else { pos + 1 }; // 0-based original mode
            let d = x.dims()[k];
            if i < 1 || i > d {
                return Err(Error::IndexOutOfRange {
                    mode: k + 1,
                    index: i,
                    bound: d,
                });
            }
            base += (i - 1) * strides[k];
        }
        for row in 0..i_n {
            out[(row, col)] = x.values()[base + row * stride_n];
        }
    }
    Ok(out)
}

/// CP model: N factor matrices sharing a column count R.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    factors: Vec<Array2<f64>>,
}

impl KruskalModel {
    pub fn new(factors: Vec<Array2<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::ShapeMismatch("model needs at least one factor".into()));
        }
        let r = factors[0].ncols();
        if factors.iter().any(|f| f.ncols() != r) {
            return Err(Error::ShapeMismatch(
                "factors disagree on column count".into(),
            ));
        }
        if r == 0 {
            return Err(Error::ShapeMismatch("rank must be positive".into()));
        }
        Ok(Self { factors })
    }

    /// Factors filled i.i.d. uniform on [0,1], drawn factor by factor in
    /// row-major entry order.
    pub fn random_uniform<R: Rng>(dims: &[usize], rank: usize, rng: &mut R) -> Result<Self> {
        if rank == 0 {
            return Err(Error::ShapeMismatch("rank must be positive".into()));
        }
        let factors = dims
            .iter()
            .map(|&d| Array2::from_shape_fn((d, rank), |_| rng.gen::<f64>()))
            .collect();
        Self::new(factors)
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn ndim(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    /// Factor of a 1-based mode.
    pub fn factor(&self, mode: usize) -> &Array2<f64> {
        &self.factors[mode - 1]
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut Array2<f64> {
        &mut self.factors[mode - 1]
    }

    /// Views of every factor except `mode`, ascending.
    pub fn factors_excluding(&self, mode: usize) -> Vec<&Array2<f64>> {
        self.factors
            .iter()
            .enumerate()
            .filter(|(k, _)| k + 1 != mode)
            .map(|(_, f)| f)
            .collect()
    }

    fn check_against(&self, x: &DenseTensor) -> Result<()> {
        if self.dims() != x.dims() {
            return Err(Error::ShapeMismatch(format!(
                "model dims {:?} vs tensor dims {:?}",
                self.dims(),
                x.dims()
            )));
        }
        Ok(())
    }
}

/// Sum of the R rank-one terms: entry (i_1..i_N) = sum_r prod_n A^(n)(i_n, r).
///
/// Walks the mode-1 unfolding column by column; each column is one Hadamard
/// product of the non-first factor rows pushed through the first factor, and
/// lands contiguously in the first-index-fastest layout.
pub fn reconstruct(model: &KruskalModel) -> DenseTensor {
    let dims = model.dims();
    let r = model.rank();
    let i1 = dims[0];
    let rest: usize = dims[1..].iter().product();
    let a1 = model.factor(1);
    let mut values = vec![0.0; i1 * rest];
    let mut tuple = vec![1usize; dims.len() - 1];
    let mut z = vec![0.0f64; r];
    for col in 0..rest {
        for c in z.iter_mut() {
            *c = 1.0;
        }
        for (pos, &i) in tuple.iter().enumerate() {
            let f = model.factor(pos + 2);
            for (c, zc) in z.iter_mut().enumerate() {
                *zc *= f[(i - 1, c)];
            }
        }
        let out = &mut values[col * i1..(col + 1) * i1];
        for (row, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, &zc) in z.iter().enumerate() {
                acc += a1[(row, c)] * zc;
            }
            *o = acc;
        }
        // Odometer increment, first remaining mode fastest.
        for (pos, t) in tuple.iter_mut().enumerate() {
            if *t < dims[pos + 1] {
                *t += 1;
                break;
            }
            *t = 1;
        }
    }
    DenseTensor {
        dims,
        values,
    }
}

/// f(model) = 1/2 * squared Frobenius norm of X - reconstruct(model).
pub fn objective(x: &DenseTensor, model: &KruskalModel) -> Result<f64> {
    model.check_against(x)?;
    let recon = reconstruct(model);
    let ss: f64 = x
        .values()
        .iter()
        .zip(recon.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(0.5 * ss)
}

/// ||X - reconstruct(model)||_F / ||X||_F; the stopping-rule measure.
pub fn relative_error(x: &DenseTensor, model: &KruskalModel) -> Result<f64> {
    model.check_against(x)?;
    let norm = x.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroTensor);
    }
    let recon = reconstruct(model);
    let ss: f64 = x
        .values()
        .iter()
        .zip(recon.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(ss.sqrt() / norm)
}
