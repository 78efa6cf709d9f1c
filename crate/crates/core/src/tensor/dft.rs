//! DFT matrix and window-function constructors, plus Gaussian matrix
//! perturbation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::rng::SeededRng;
use super::{ComplexTensorOf, RealTensorOf};

/// Transform direction; the inverse matrix is the entry-wise conjugate of
/// the forward one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DftDirection {
    Forward,
    Inverse,
}

/// Entry scaling: `None` leaves entries at unit magnitude, `Unitary`
/// divides by `sqrt(n)` so the matrix preserves energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DftScaling {
    None,
    Unitary,
}

/// Dense `n x n` DFT matrix with entry `(j, k) = s * exp(-i 2 pi j k / n)`
/// for the forward direction (conjugated for the inverse), `s = 1` or
/// `1/sqrt(n)` per `scaling`.
pub fn dft_matrix<T: Scalar>(
    n: usize,
    direction: DftDirection,
    scaling: DftScaling,
) -> Result<ComplexTensorOf<T>> {
    if n == 0 {
        return Err(Error::invalid("DFT size must be at least 1"));
    }
    let s = match scaling {
        DftScaling::None => 1.0,
        DftScaling::Unitary => 1.0 / (n as f64).sqrt(),
    };
    let sign = match direction {
        DftDirection::Forward => -1.0,
        DftDirection::Inverse => 1.0,
    };
    let mut re = vec![T::zero(); n * n];
    let mut im = vec![T::zero(); n * n];
    for j in 0..n {
        for k in 0..n {
            // Reduce j*k mod n before the angle computation so large sizes
            // do not lose precision in the product.
            let jk = (j * k) % n;
            let angle = sign * 2.0 * PI * jk as f64 / n as f64;
            re[j * n + k] = T::from_f64_c(s * angle.cos());
            im[j * n + k] = T::from_f64_c(s * angle.sin());
        }
    }
    ComplexTensorOf::new(vec![n, n], re, im)
}

/// Window function families available to the processing chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    Hann,
    Hamming,
    Blackman,
}

/// Length-`n` window in symmetric form, i.e. with denominator `n - 1`:
///
/// * rectangular: `1`
/// * hann:        `0.5 - 0.5 cos(2 pi k / (n-1))`
/// * hamming:     `0.54 - 0.46 cos(2 pi k / (n-1))`
/// * blackman:    `0.42 - 0.5 cos(2 pi k / (n-1)) + 0.08 cos(4 pi k / (n-1))`
///
/// `n = 1` returns `[1]` for every kind.
pub fn window<T: Scalar>(kind: WindowKind, n: usize) -> Result<RealTensorOf<T>> {
    if n == 0 {
        return Err(Error::invalid("window length must be at least 1"));
    }
    if n == 1 {
        return RealTensorOf::new(vec![1], vec![T::one()]);
    }
    let mut data = Vec::with_capacity(n);
    for k in 0..n {
        let x = 2.0 * PI * k as f64 / (n - 1) as f64;
        let v = match kind {
            WindowKind::Rectangular => 1.0,
            WindowKind::Hann => 0.5 - 0.5 * x.cos(),
            WindowKind::Hamming => 0.54 - 0.46 * x.cos(),
            WindowKind::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
        };
        data.push(T::from_f64_c(v));
    }
    RealTensorOf::new(vec![n], data)
}

/// Returns `m + E` where `E` has i.i.d. Gaussian entries of mean 0 and
/// variance `gamma`, drawn independently for the real and imaginary parts.
/// The draw order is fixed: the whole real plane in row-major order, then
/// the whole imaginary plane.
pub fn gaussian_perturb<T: Scalar>(
    m: &ComplexTensorOf<T>,
    gamma: f64,
    rng: &mut SeededRng,
) -> Result<ComplexTensorOf<T>> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::invalid(format!(
            "perturbation variance must be >= 0, got {gamma}"
        )));
    }
    let std = gamma.sqrt();
    let mut out = m.clone();
    for x in out.re_mut() {
        *x += T::from_f64_c(std * rng.next_gaussian());
    }
    for x in out.im_mut() {
        *x += T::from_f64_c(std * rng.next_gaussian());
    }
    Ok(out)
}
