//! MUSIC pseudo-spectrum over the sin-space azimuth grid.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::AzimuthGrid;
use crate::tensor::{ComplexTensor, RealTensor};

use super::eig::hermitian_eig;

/// MUSIC angle spectrum from antenna snapshots.
///
/// `snapshots` is `n_antennas x n_snapshots`. The sample covariance
/// `R = (1/K) S S^H` is eigendecomposed with the cyclic Jacobi solver; the
/// eigenvectors of the `n_antennas - n_sources` smallest eigenvalues span
/// the noise subspace `E_n`, and the spectrum over the grid is
/// `1 / (a(theta)^H E_n E_n^H a(theta))` with steering vector
/// `a(theta)_k = exp(i 2 pi d k sin(theta))`.
///
/// The denominator is floored at `1e-18 * n_antennas` to keep the spectrum
/// finite when a steering vector is numerically orthogonal to the noise
/// subspace; an all-zero covariance returns an all-zero spectrum.
pub fn aoa_music(
    snapshots: &ComplexTensor,
    n_sources: usize,
    grid: &AzimuthGrid,
) -> Result<RealTensor> {
    if snapshots.dims().len() != 2 {
        return Err(Error::invalid("snapshots must be n_antennas x n_snapshots"));
    }
    let n_antennas = snapshots.dims()[0];
    let n_snapshots = snapshots.dims()[1];
    if n_snapshots == 0 {
        return Err(Error::invalid("at least one snapshot required"));
    }
    if n_sources == 0 || n_sources >= n_antennas {
        return Err(Error::invalid(format!(
            "n_sources {n_sources} must satisfy 1 <= n_sources < n_antennas {n_antennas}"
        )));
    }

    let r = snapshots
        .matmul(&snapshots.conj_t()?)?
        .scale(1.0 / n_snapshots as f64);
    let norm: f64 = r
        .re()
        .iter()
        .zip(r.im())
        .map(|(&a, &b)| a * a + b * b)
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return RealTensor::zeros(vec![grid.n_bins()]);
    }

    let (_, vecs) = hermitian_eig(&r)?;
    let n_noise = n_antennas - n_sources;

    let mut out = Vec::with_capacity(grid.n_bins());
    let floor = 1e-18 * n_antennas as f64;
    for b in 0..grid.n_bins() {
        let s = grid.sin_at(b);
        let w = 2.0 * PI * grid.spacing() * s;
        // denom = sum over noise eigenvectors of |<e_j, a>|^2.
        let mut denom = 0.0;
        for j in 0..n_noise {
            let mut pr = 0.0;
            let mut pi = 0.0;
            for k in 0..n_antennas {
                let (er, ei) = vecs.at(&[k, j]);
                let (ar, ai) = ((w * k as f64).cos(), (w * k as f64).sin());
                // conj(e) * a
                pr += er * ar + ei * ai;
                pi += er * ai - ei * ar;
            }
            denom += pr * pr + pi * pi;
        }
        out.push(1.0 / denom.max(floor));
    }
    RealTensor::new(vec![grid.n_bins()], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    fn steering(n: usize, spacing: f64, sin_theta: f64) -> (Vec<f64>, Vec<f64>) {
        let w = 2.0 * PI * spacing * sin_theta;
        (
            (0..n).map(|k| (w * k as f64).cos()).collect(),
            (0..n).map(|k| (w * k as f64).sin()).collect(),
        )
    }

    #[test]
    fn single_noiseless_source_peaks_on_grid() {
        let grid = AzimuthGrid::new(16, 0.5);
        for bin in [2usize, 8, 13] {
            let (re, im) = steering(8, 0.5, grid.sin_at(bin));
            // Four identical snapshots.
            let mut sre = Vec::new();
            let mut sim = Vec::new();
            for k in 0..8 {
                for _ in 0..4 {
                    sre.push(re[k]);
                    sim.push(im[k]);
                }
            }
            let snaps = ComplexTensor::new(vec![8, 4], sre, sim).unwrap();
            let spec = aoa_music(&snaps, 1, &grid).unwrap();
            assert_eq!(spec.argmax()[0], bin, "bin {bin}");
        }
    }

    #[test]
    fn identity_covariance_gives_flat_spectrum() {
        // Snapshots = identity => R = (1/n) I: every direction equal.
        let n = 8;
        let mut re = vec![0.0; n * n];
        for i in 0..n {
            re[i * n + i] = 1.0;
        }
        let snaps = ComplexTensor::new(vec![n, n], re, vec![0.0; n * n]).unwrap();
        let grid = AzimuthGrid::new(16, 0.5);
        let spec = aoa_music(&snaps, 1, &grid).unwrap();
        let mean: f64 = spec.data().iter().sum::<f64>() / 16.0;
        for &v in spec.data() {
            assert!((v - mean).abs() < 1e-6 * mean, "{v} vs {mean}");
        }
    }

    #[test]
    fn two_separated_sources_produce_two_peaks() {
        let grid = AzimuthGrid::new(16, 0.5);
        let (bin_a, bin_b) = (4usize, 11usize);
        let mut rng = SeededRng::new(13);
        let n = 8;
        let k = 32;
        // SNR 20 dB: unit-amplitude sources, noise sigma 0.0707/component.
        let sigma = (0.5f64 / 100.0).sqrt();
        let (ra, ia) = steering(n, 0.5, grid.sin_at(bin_a));
        let (rb, ib) = steering(n, 0.5, grid.sin_at(bin_b));
        let mut sre = vec![0.0; n * k];
        let mut sim = vec![0.0; n * k];
        for snap in 0..k {
            // Random source phases per snapshot.
            let pa = rng.next_range(0.0, 2.0 * PI);
            let pb = rng.next_range(0.0, 2.0 * PI);
            for ant in 0..n {
                let sa = (
                    ra[ant] * pa.cos() - ia[ant] * pa.sin(),
                    ra[ant] * pa.sin() + ia[ant] * pa.cos(),
                );
                let sb = (
                    rb[ant] * pb.cos() - ib[ant] * pb.sin(),
                    rb[ant] * pb.sin() + ib[ant] * pb.cos(),
                );
                sre[ant * k + snap] = sa.0 + sb.0 + sigma * rng.next_gaussian();
                sim[ant * k + snap] = sa.1 + sb.1 + sigma * rng.next_gaussian();
            }
        }
        let snaps = ComplexTensor::new(vec![n, k], sre, sim).unwrap();
        let spec = aoa_music(&snaps, 2, &grid).unwrap();

        // Local maxima of the spectrum, strongest first.
        let d = spec.data();
        let mut peaks: Vec<usize> = (0..16)
            .filter(|&b| {
                (b == 0 || d[b] >= d[b - 1]) && (b == 15 || d[b] >= d[b + 1])
            })
            .collect();
        peaks.sort_by(|&x, &y| d[y].partial_cmp(&d[x]).unwrap());
        assert!(peaks.len() >= 2);
        let mut top: Vec<usize> = peaks[..2].to_vec();
        top.sort_unstable();
        assert!((top[0] as isize - bin_a as isize).abs() <= 1, "{top:?}");
        assert!((top[1] as isize - bin_b as isize).abs() <= 1, "{top:?}");
    }

    #[test]
    fn invalid_model_orders_rejected() {
        let snaps = ComplexTensor::zeros(vec![4, 2]).unwrap();
        let grid = AzimuthGrid::new(8, 0.5);
        assert!(aoa_music(&snaps, 0, &grid).is_err());
        assert!(aoa_music(&snaps, 4, &grid).is_err());
        assert!(aoa_music(&snaps, 5, &grid).is_err());
    }

    #[test]
    fn zero_snapshots_give_zero_spectrum() {
        let snaps = ComplexTensor::zeros(vec![4, 3]).unwrap();
        let grid = AzimuthGrid::new(8, 0.5);
        let spec = aoa_music(&snaps, 1, &grid).unwrap();
        assert!(spec.data().iter().all(|&x| x == 0.0));
    }
}
