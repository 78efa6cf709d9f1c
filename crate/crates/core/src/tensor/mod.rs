//! Dense real and complex tensor containers plus the constructors and
//! axis operations the processing chain is built from.
//!
//! Both containers are row-major with explicit extents. Complex tensors
//! store the real and imaginary planes as two separate flat buffers; every
//! complex matrix multiply in the crate is realized as the four real
//! products of that split representation, which is also the layout the
//! learnable module trains on.

mod dft;
mod io;
mod rng;

pub use dft::{dft_matrix, gaussian_perturb, window, DftDirection, DftScaling, WindowKind};
pub use io::{read, read_complex, read_real, write_complex, write_real, TensorFile};
pub use rng::SeededRng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::invalid("tensor rank must be at least 1"));
    }
    let mut len = 1usize;
    for (i, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(Error::invalid(format!("extent {i} is zero")));
        }
        len = len
            .checked_mul(d)
            .ok_or_else(|| Error::invalid("tensor extent product overflows usize"))?;
    }
    Ok(len)
}

fn check_finite<T: Scalar>(data: &[T]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("tensor contains non-finite entries"))
    }
}

/// Splits dims around `axis` into (outer, axis length, inner) extents for
/// row-major traversal.
fn axis_split(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

/// Source index for an FFT shift along an axis of length `n`: output slot
/// `i` takes input slot `(i + ceil(n/2)) % n`, which puts the zero bin at
/// `floor(n/2)`.
pub fn fftshift_source(i: usize, n: usize) -> usize {
    (i + n - n / 2) % n
}

// ─── RealTensorOf ────────────────────────────────────────────────────────────

/// Dense row-major tensor of real scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensorOf<T: Scalar> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> RealTensorOf<T> {
    /// Builds a tensor from extents and row-major data. All extents must be
    /// positive, the data length must equal their product, and every entry
    /// must be finite.
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if data.len() != len {
            return Err(Error::invalid(format!(
                "data length {} does not match extent product {}",
                data.len(),
                len
            )));
        }
        check_finite(&data)?;
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        Ok(Self {
            dims,
            data: vec![T::zero(); len],
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (i, &ix) in idx.iter().enumerate() {
            debug_assert!(ix < self.dims[i]);
            off = off * self.dims[i] + ix;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// Index of the largest entry (first occurrence), as a multi-index.
    pub fn argmax(&self) -> Vec<usize> {
        let mut best = 0usize;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        self.unravel(best)
    }

    /// Converts a flat offset back to a multi-index.
    pub fn unravel(&self, mut off: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dims.len()];
        for i in (0..self.dims.len()).rev() {
            idx[i] = off % self.dims[i];
            off /= self.dims[i];
        }
        idx
    }
}

// ─── ComplexTensorOf ─────────────────────────────────────────────────────────

/// Dense row-major tensor of complex scalars, stored as split real and
/// imaginary planes of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensorOf<T: Scalar> {
    dims: Vec<usize>,
    re: Vec<T>,
    im: Vec<T>,
}

impl<T: Scalar> ComplexTensorOf<T> {
    pub fn new(dims: Vec<usize>, re: Vec<T>, im: Vec<T>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if re.len() != len || im.len() != len {
            return Err(Error::invalid(format!(
                "re/im lengths {}/{} do not match extent product {}",
                re.len(),
                im.len(),
                len
            )));
        }
        check_finite(&re)?;
        check_finite(&im)?;
        Ok(Self { dims, re, im })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        Ok(Self {
            dims,
            re: vec![T::zero(); len],
            im: vec![T::zero(); len],
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[T] {
        &self.re
    }

    pub fn im(&self) -> &[T] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [T] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [T] {
        &mut self.im
    }

    /// Borrows both planes mutably at once.
    pub fn planes_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.re, &mut self.im)
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (i, &ix) in idx.iter().enumerate() {
            debug_assert!(ix < self.dims[i]);
            off = off * self.dims[i] + ix;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> (T, T) {
        let off = self.offset(idx);
        (self.re[off], self.im[off])
    }

    pub fn set(&mut self, idx: &[usize], re: T, im: T) {
        let off = self.offset(idx);
        self.re[off] = re;
        self.im[off] = im;
    }

    /// Entry-wise magnitude `sqrt(re^2 + im^2)`.
    pub fn magnitude(&self) -> RealTensorOf<T> {
        let data = self
            .re
            .iter()
            .zip(self.im.iter())
            .map(|(&r, &i)| (r * r + i * i).sqrt())
            .collect();
        RealTensorOf {
            dims: self.dims.clone(),
            data,
        }
    }

    /// Entry-wise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::invalid("dimension mismatch in tensor add"));
        }
        let re = self.re.iter().zip(&other.re).map(|(&a, &b)| a + b).collect();
        let im = self.im.iter().zip(&other.im).map(|(&a, &b)| a + b).collect();
        Ok(Self {
            dims: self.dims.clone(),
            re,
            im,
        })
    }

    /// Entry-wise difference.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::invalid("dimension mismatch in tensor sub"));
        }
        let re = self.re.iter().zip(&other.re).map(|(&a, &b)| a - b).collect();
        let im = self.im.iter().zip(&other.im).map(|(&a, &b)| a - b).collect();
        Ok(Self {
            dims: self.dims.clone(),
            re,
            im,
        })
    }

    /// Scales every entry by a real factor.
    pub fn scale(&self, c: T) -> Self {
        Self {
            dims: self.dims.clone(),
            re: self.re.iter().map(|&x| x * c).collect(),
            im: self.im.iter().map(|&x| x * c).collect(),
        }
    }

    /// Largest entry-wise distance to another tensor, `max |a - b|` taken
    /// over both planes.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut m = T::zero();
        for (&a, &b) in self.re.iter().zip(&other.re) {
            m = m.max((a - b).abs());
        }
        for (&a, &b) in self.im.iter().zip(&other.im) {
            m = m.max((a - b).abs());
        }
        m
    }

    /// Multiplies slices along `axis` by the entries of a real window
    /// vector whose length matches that axis.
    pub fn scale_axis(&self, axis: usize, w: &RealTensorOf<T>) -> Result<Self> {
        if axis >= self.dims.len() {
            return Err(Error::invalid(format!("axis {axis} out of range")));
        }
        let (outer, n, inner) = axis_split(&self.dims, axis);
        if w.dims() != [n] {
            return Err(Error::invalid(format!(
                "window length {} does not match axis extent {}",
                w.len(),
                n
            )));
        }
        let mut out = self.clone();
        for o in 0..outer {
            for (j, &wj) in w.data().iter().enumerate() {
                let base = (o * n + j) * inner;
                for p in 0..inner {
                    out.re[base + p] *= wj;
                    out.im[base + p] *= wj;
                }
            }
        }
        Ok(out)
    }

    /// Applies a complex matrix `w` (shape `k x n`) along `axis` (extent
    /// `n`), producing a tensor whose `axis` extent becomes `k`:
    /// `y[.., j, ..] = sum_l w[j, l] * x[.., l, ..]`.
    pub fn matrix_apply(&self, axis: usize, w: &Self) -> Result<Self> {
        if axis >= self.dims.len() {
            return Err(Error::invalid(format!("axis {axis} out of range")));
        }
        if w.dims.len() != 2 {
            return Err(Error::invalid("matrix_apply weight must be 2-d"));
        }
        let (k, n) = (w.dims[0], w.dims[1]);
        let (outer, axis_len, inner) = axis_split(&self.dims, axis);
        if axis_len != n {
            return Err(Error::invalid(format!(
                "weight columns {} do not match axis extent {}",
                n, axis_len
            )));
        }
        let mut dims = self.dims.clone();
        dims[axis] = k;
        let len = outer * k * inner;
        let mut yre = vec![T::zero(); len];
        let mut yim = vec![T::zero(); len];

        if inner == 1 {
            // Contraction axis is contiguous: dot products.
            for o in 0..outer {
                let xr = &self.re[o * n..(o + 1) * n];
                let xi = &self.im[o * n..(o + 1) * n];
                for j in 0..k {
                    let wr = &w.re[j * n..(j + 1) * n];
                    let wi = &w.im[j * n..(j + 1) * n];
                    let mut ar = T::zero();
                    let mut ai = T::zero();
                    for l in 0..n {
                        ar += wr[l] * xr[l] - wi[l] * xi[l];
                        ai += wr[l] * xi[l] + wi[l] * xr[l];
                    }
                    yre[o * k + j] = ar;
                    yim[o * k + j] = ai;
                }
            }
        } else {
            // Accumulate scaled input planes: y[o, j, :] += w[j, l] * x[o, l, :].
            for o in 0..outer {
                let xbase = o * n * inner;
                let ybase = o * k * inner;
                for j in 0..k {
                    let yr = &mut yre[ybase + j * inner..ybase + (j + 1) * inner];
                    let yi = &mut yim[ybase + j * inner..ybase + (j + 1) * inner];
                    for l in 0..n {
                        let wr = w.re[j * n + l];
                        let wi = w.im[j * n + l];
                        let xr = &self.re[xbase + l * inner..xbase + (l + 1) * inner];
                        let xi = &self.im[xbase + l * inner..xbase + (l + 1) * inner];
                        for p in 0..inner {
                            yr[p] += wr * xr[p] - wi * xi[p];
                            yi[p] += wr * xi[p] + wi * xr[p];
                        }
                    }
                }
            }
        }
        Ok(Self {
            dims,
            re: yre,
            im: yim,
        })
    }

    /// FFT-shifts the tensor along `axis` so the zero bin lands at
    /// `floor(len/2)`.
    pub fn fftshift_axis(&self, axis: usize) -> Self {
        let (outer, n, inner) = axis_split(&self.dims, axis);
        let mut out = Self {
            dims: self.dims.clone(),
            re: vec![T::zero(); self.len()],
            im: vec![T::zero(); self.len()],
        };
        for o in 0..outer {
            for i in 0..n {
                let src = fftshift_source(i, n);
                let sbase = (o * n + src) * inner;
                let dbase = (o * n + i) * inner;
                out.re[dbase..dbase + inner].copy_from_slice(&self.re[sbase..sbase + inner]);
                out.im[dbase..dbase + inner].copy_from_slice(&self.im[sbase..sbase + inner]);
            }
        }
        out
    }

    /// Conjugate transpose of a 2-d tensor.
    pub fn conj_t(&self) -> Result<Self> {
        if self.dims.len() != 2 {
            return Err(Error::invalid("conj_t requires a 2-d tensor"));
        }
        let (r, c) = (self.dims[0], self.dims[1]);
        let mut re = vec![T::zero(); r * c];
        let mut im = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                re[j * r + i] = self.re[i * c + j];
                im[j * r + i] = -self.im[i * c + j];
            }
        }
        Ok(Self {
            dims: vec![c, r],
            re,
            im,
        })
    }

    /// Plain 2-d matrix product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.dims.len() != 2 || other.dims.len() != 2 {
            return Err(Error::invalid("matmul requires 2-d tensors"));
        }
        let (m, k) = (self.dims[0], self.dims[1]);
        let (k2, n) = (other.dims[0], other.dims[1]);
        if k != k2 {
            return Err(Error::invalid(format!(
                "matmul inner dims differ: {k} vs {k2}"
            )));
        }
        let mut re = vec![T::zero(); m * n];
        let mut im = vec![T::zero(); m * n];
        for i in 0..m {
            for l in 0..k {
                let ar = self.re[i * k + l];
                let ai = self.im[i * k + l];
                for j in 0..n {
                    let br = other.re[l * n + j];
                    let bi = other.im[l * n + j];
                    re[i * n + j] += ar * br - ai * bi;
                    im[i * n + j] += ar * bi + ai * br;
                }
            }
        }
        Ok(Self {
            dims: vec![m, n],
            re,
            im,
        })
    }
}

/// 64-bit real tensor, the concrete type the pipeline runs on.
pub type RealTensor = RealTensorOf<f64>;
/// 64-bit complex tensor, the concrete type the pipeline runs on.
pub type ComplexTensor = ComplexTensorOf<f64>;
