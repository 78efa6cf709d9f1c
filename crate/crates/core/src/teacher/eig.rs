//! Hermitian eigendecomposition by cyclic complex Jacobi rotations.
//!
//! Each rotation zeroes one off-diagonal pair `(p, q)`: a phase rotation
//! makes the pivot entry real, then a real Jacobi rotation (Numerical
//! Recipes tangent formula, smaller-angle branch) annihilates it. Sweeps
//! run in cyclic order, `p` ascending and `q` ascending within each `p`,
//! until the off-diagonal Frobenius norm drops below `1e-12` times the
//! Frobenius norm of the input.

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

const REL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues (ascending) and eigenvectors (columns, in the same order)
/// of a Hermitian matrix. The input is symmetrized as `(A + A^H) / 2`
/// before iteration so tiny Hermiticity violations from accumulation do
/// not leak into the result.
pub fn hermitian_eig(a: &ComplexTensor) -> Result<(Vec<f64>, ComplexTensor)> {
    if a.dims().len() != 2 || a.dims()[0] != a.dims()[1] {
        return Err(Error::invalid("hermitian_eig requires a square matrix"));
    }
    let n = a.dims()[0];

    // Working copies: matrix being diagonalized and eigenvector accumulator.
    let mut are = vec![0.0f64; n * n];
    let mut aim = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let (rij, iij) = a.at(&[i, j]);
            let (rji, iji) = a.at(&[j, i]);
            are[i * n + j] = 0.5 * (rij + rji);
            aim[i * n + j] = 0.5 * (iij - iji);
        }
    }
    let mut vre = vec![0.0f64; n * n];
    let mut vim = vec![0.0f64; n * n];
    for i in 0..n {
        vre[i * n + i] = 1.0;
    }

    let norm: f64 = are
        .iter()
        .zip(&aim)
        .map(|(&r, &i)| r * r + i * i)
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        // Zero matrix: eigenvalues all zero, identity basis.
        return Ok((
            vec![0.0; n],
            ComplexTensor::new(vec![n, n], vre, vim)?,
        ));
    }

    let off = |are: &[f64], aim: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    let r = are[p * n + q];
                    let i = aim[p * n + q];
                    s += r * r + i * i;
                }
            }
        }
        s.sqrt()
    };

    let mut converged = off(&are, &aim) <= REL_TOL * norm;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let br = are[p * n + q];
                let bi = aim[p * n + q];
                let r = (br * br + bi * bi).sqrt();
                if r <= REL_TOL * norm / (n as f64) {
                    continue;
                }
                // Phase that makes the pivot real: b = r e^{i phi}.
                let (phr, phi_) = (br / r, bi / r);

                let app = are[p * n + p];
                let aqq = are[q * n + q];
                let theta = (aqq - app) / (2.0 * r);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Unitary V: V[p][p] = c, V[p][q] = s,
                //            V[q][p] = -s e^{-i phi}, V[q][q] = c e^{-i phi}.
                // Columns under A <- A V.
                for j in 0..n {
                    let (apr, api) = (are[j * n + p], aim[j * n + p]);
                    let (aqr, aqi) = (are[j * n + q], aim[j * n + q]);
                    // e^{-i phi} * a_jq
                    let eqr = phr * aqr + phi_ * aqi;
                    let eqi = phr * aqi - phi_ * aqr;
                    are[j * n + p] = c * apr - s * eqr;
                    aim[j * n + p] = c * api - s * eqi;
                    are[j * n + q] = s * apr + c * eqr;
                    aim[j * n + q] = s * api + c * eqi;
                }
                // Rows under A <- V^H A.
                for j in 0..n {
                    let (apr, api) = (are[p * n + j], aim[p * n + j]);
                    let (aqr, aqi) = (are[q * n + j], aim[q * n + j]);
                    // e^{+i phi} * a_qj
                    let eqr = phr * aqr - phi_ * aqi;
                    let eqi = phr * aqi + phi_ * aqr;
                    are[p * n + j] = c * apr - s * eqr;
                    aim[p * n + j] = c * api - s * eqi;
                    are[q * n + j] = s * apr + c * eqr;
                    aim[q * n + j] = s * api + c * eqi;
                }
                // Exact zeros on the pivot pair, real diagonal.
                are[p * n + q] = 0.0;
                aim[p * n + q] = 0.0;
                are[q * n + p] = 0.0;
                aim[q * n + p] = 0.0;
                aim[p * n + p] = 0.0;
                aim[q * n + q] = 0.0;

                // Accumulate eigenvectors: E <- E V.
                for j in 0..n {
                    let (epr, epi) = (vre[j * n + p], vim[j * n + p]);
                    let (eqr0, eqi0) = (vre[j * n + q], vim[j * n + q]);
                    let eqr = phr * eqr0 + phi_ * eqi0;
                    let eqi = phr * eqi0 - phi_ * eqr0;
                    vre[j * n + p] = c * epr - s * eqr;
                    vim[j * n + p] = c * epi - s * eqi;
                    vre[j * n + q] = s * epr + c * eqr;
                    vim[j * n + q] = s * epi + c * eqi;
                }
            }
        }
        converged = off(&are, &aim) <= REL_TOL * norm;
    }
    if !converged {
        return Err(Error::numerical(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    // Sort ascending by eigenvalue, permuting eigenvector columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| are[i * n + i].partial_cmp(&are[j * n + j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| are[i * n + i]).collect();
    let mut ore = vec![0.0f64; n * n];
    let mut oim = vec![0.0f64; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for j in 0..n {
            ore[j * n + new_col] = vre[j * n + old_col];
            oim[j * n + new_col] = vim[j * n + old_col];
        }
    }
    Ok((eigenvalues, ComplexTensor::new(vec![n, n], ore, oim)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    fn random_hermitian(n: usize, rng: &mut SeededRng) -> ComplexTensor {
        let c = ComplexTensor::new(
            vec![n, n],
            (0..n * n).map(|_| rng.next_gaussian()).collect(),
            (0..n * n).map(|_| rng.next_gaussian()).collect(),
        )
        .unwrap();
        let ch = c.conj_t().unwrap();
        c.add(&ch).unwrap().scale(0.5)
    }

    fn frob(a: &ComplexTensor) -> f64 {
        a.re()
            .iter()
            .zip(a.im())
            .map(|(&r, &i)| r * r + i * i)
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn identity_matrix_has_unit_eigenvalues() {
        let n = 6;
        let mut re = vec![0.0; n * n];
        for i in 0..n {
            re[i * n + i] = 1.0;
        }
        let a = ComplexTensor::new(vec![n, n], re, vec![0.0; n * n]).unwrap();
        let (vals, vecs) = hermitian_eig(&a).unwrap();
        for v in vals {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // Basis is orthonormal.
        let g = vecs.conj_t().unwrap().matmul(&vecs).unwrap();
        for i in 0..n {
            for j in 0..n {
                let (r, im) = g.at(&[i, j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r - want).abs() < 1e-12 && im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_by_two_hand_case() {
        // [[2, i], [-i, 2]] has eigenvalues 1 and 3.
        let a = ComplexTensor::new(
            vec![2, 2],
            vec![2.0, 0.0, 0.0, 2.0],
            vec![0.0, 1.0, -1.0, 0.0],
        )
        .unwrap();
        let (vals, _) = hermitian_eig(&a).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigenpairs_satisfy_residual_and_unitarity_bounds() {
        let mut rng = SeededRng::new(21);
        for n in [2usize, 4, 8, 12] {
            let a = random_hermitian(n, &mut rng);
            let scale = frob(&a);
            let (vals, vecs) = hermitian_eig(&a).unwrap();

            // Trace and Frobenius norm are preserved by the eigenvalues.
            let trace: f64 = (0..n).map(|i| a.at(&[i, i]).0).sum();
            assert!((vals.iter().sum::<f64>() - trace).abs() < 1e-9 * scale.max(1.0));
            let sumsq: f64 = vals.iter().map(|v| v * v).sum();
            assert!((sumsq.sqrt() - scale).abs() < 1e-9 * scale.max(1.0));

            // R v = lambda v for every pair.
            let av = a.matmul(&vecs).unwrap();
            for (k, &lam) in vals.iter().enumerate() {
                for j in 0..n {
                    let (avr, avi) = av.at(&[j, k]);
                    let (vr, vi) = vecs.at(&[j, k]);
                    let dr = avr - lam * vr;
                    let di = avi - lam * vi;
                    assert!(
                        (dr * dr + di * di).sqrt() <= 1e-9 * scale.max(1.0),
                        "n={n} pair {k}"
                    );
                }
            }

            // Unitary eigenvector matrix.
            let g = vecs.conj_t().unwrap().matmul(&vecs).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let (r, im) = g.at(&[i, j]);
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((r - want).abs() < 1e-9 && im.abs() < 1e-9);
                }
            }

            // Ascending order.
            for w in vals.windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn zero_matrix_returns_zero_spectrum() {
        let a = ComplexTensor::zeros(vec![3, 3]).unwrap();
        let (vals, _) = hermitian_eig(&a).unwrap();
        assert_eq!(vals, vec![0.0; 3]);
    }

    #[test]
    fn rank_one_outer_product_recovers_the_vector() {
        // s s^H has one nonzero eigenvalue |s|^2 with eigenvector s / |s|.
        let s = ComplexTensor::new(
            vec![4, 1],
            vec![1.0, 0.5, -0.25, 0.0],
            vec![0.0, 0.5, 0.75, -1.0],
        )
        .unwrap();
        let r = s.matmul(&s.conj_t().unwrap()).unwrap();
        let (vals, _) = hermitian_eig(&r).unwrap();
        let norm_sq: f64 = s
            .re()
            .iter()
            .zip(s.im())
            .map(|(&r, &i)| r * r + i * i)
            .sum();
        assert!((vals[3] - norm_sq).abs() < 1e-10);
        for &v in &vals[..3] {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn non_square_input_rejected() {
        let a = ComplexTensor::zeros(vec![2, 3]).unwrap();
        assert!(hermitian_eig(&a).is_err());
    }
}
