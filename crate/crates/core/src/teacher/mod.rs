//! The classical signal-processing chain: windowed range/Doppler DFTs,
//! cell-averaging CFAR with peak picking, and angle-of-arrival estimation
//! by zero-padded FFT or MUSIC.
//!
//! Run offline over a dataset it pseudo-labels every ADC cube with its
//! range-Doppler-azimuth (RAD) tensor; those (ADC, RAD) pairs are the
//! training set for the learnable module, which makes this chain both the
//! teacher and the correctness oracle of the whole crate.

mod eig;
mod music;

pub use eig::hermitian_eig;
pub use music::aoa_music;

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmcw::{AdcCube, DatasetManifest, RadarConfig, SceneRecord};
use crate::tensor::{
    self, dft_matrix, window, ComplexTensor, DftDirection, DftScaling, RealTensor, WindowKind,
};

// ─── Chain configuration ─────────────────────────────────────────────────────

/// Parameters of the processing chain that are not radar hardware:
/// window kinds, DFT scaling, the azimuth grid size, and the MUSIC model
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpConfig {
    pub n_azimuth_bins: usize,
    pub win_range: WindowKind,
    pub win_doppler: WindowKind,
    pub scaling: DftScaling,
    /// Source count assumed by the MUSIC teacher.
    pub music_sources: usize,
}

impl Default for SpConfig {
    /// Hann windows on both axes; unscaled DFTs so weight entries have
    /// unit magnitude, which keeps the perturbation variance of the
    /// learnable module's initialization meaningful relative to the
    /// matrices it perturbs.
    fn default() -> Self {
        Self {
            n_azimuth_bins: 16,
            win_range: WindowKind::Hann,
            win_doppler: WindowKind::Hann,
            scaling: DftScaling::None,
            music_sources: 1,
        }
    }
}

impl SpConfig {
    pub fn windows(&self, cfg: &RadarConfig) -> Result<(RealTensor, RealTensor)> {
        Ok((
            window(self.win_range, cfg.n_samples)?,
            window(self.win_doppler, cfg.n_chirps)?,
        ))
    }
}

/// Which angle estimator labels the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AoaKind {
    Fft,
    Music,
}

// ─── Cube types ──────────────────────────────────────────────────────────────

/// Range-Doppler cube: (n_range_bins, n_doppler_bins, n_antennas), Doppler
/// axis FFT-shifted so zero velocity is centered. Produced only by
/// [`adc_to_rd`].
#[derive(Debug, Clone, PartialEq)]
pub struct RdCube {
    data: ComplexTensor,
}

impl RdCube {
    pub fn data(&self) -> &ComplexTensor {
        &self.data
    }

    pub fn n_range_bins(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn n_doppler_bins(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn n_antennas(&self) -> usize {
        self.data.dims()[2]
    }

    /// Antenna snapshot at one range-Doppler cell, as a length-A vector.
    pub fn snapshot(&self, range_bin: usize, doppler_bin: usize) -> ComplexTensor {
        let a = self.n_antennas();
        let base = (range_bin * self.n_doppler_bins() + doppler_bin) * a;
        ComplexTensor::new(
            vec![a],
            self.data.re()[base..base + a].to_vec(),
            self.data.im()[base..base + a].to_vec(),
        )
        .expect("slice of valid tensor")
    }
}

/// Range-Doppler-azimuth tensor: non-negative, azimuth axis on the uniform
/// sin-space grid of [`AzimuthGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct RadTensor {
    pub data: RealTensor,
}

impl RadTensor {
    pub fn new(data: RealTensor) -> Result<Self> {
        if data.dims().len() != 3 {
            return Err(Error::invalid("RAD tensor must be 3-d"));
        }
        if data.data().iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("RAD entries must be non-negative"));
        }
        Ok(Self { data })
    }

    pub fn n_range_bins(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn n_doppler_bins(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn n_azimuth_bins(&self) -> usize {
        self.data.dims()[2]
    }
}

// ─── Range-Doppler transform ─────────────────────────────────────────────────

/// Windowed two-axis DFT of an ADC cube: scale the samples axis by
/// `win_range` and DFT it, scale the chirps axis by `win_doppler` and DFT
/// it, then FFT-shift the Doppler axis so zero velocity is centered.
pub fn adc_to_rd(
    adc: &AdcCube,
    win_range: &RealTensor,
    win_doppler: &RealTensor,
    scaling: DftScaling,
) -> Result<RdCube> {
    let dims = adc.data.dims();
    if win_range.dims() != [dims[0]] {
        return Err(Error::invalid(format!(
            "range window length {} != n_samples {}",
            win_range.len(),
            dims[0]
        )));
    }
    if win_doppler.dims() != [dims[1]] {
        return Err(Error::invalid(format!(
            "doppler window length {} != n_chirps {}",
            win_doppler.len(),
            dims[1]
        )));
    }
    let f_range = dft_matrix(dims[0], DftDirection::Forward, scaling)?;
    let f_doppler = dft_matrix(dims[1], DftDirection::Forward, scaling)?;
    let x = adc.data.scale_axis(0, win_range)?;
    let x = x.matrix_apply(0, &f_range)?;
    let x = x.scale_axis(1, win_doppler)?;
    let x = x.matrix_apply(1, &f_doppler)?;
    Ok(RdCube {
        data: x.fftshift_axis(1),
    })
}

/// Sum of antenna magnitudes per range-Doppler cell; the plane CFAR runs on.
pub fn rd_magnitude_plane(rd: &RdCube) -> RealTensor {
    let (r, d, a) = (rd.n_range_bins(), rd.n_doppler_bins(), rd.n_antennas());
    let mut out = RealTensor::zeros(vec![r, d]).expect("positive dims");
    let re = rd.data.re();
    let im = rd.data.im();
    for cell in 0..r * d {
        let base = cell * a;
        let mut s = 0.0;
        for j in 0..a {
            s += (re[base + j] * re[base + j] + im[base + j] * im[base + j]).sqrt();
        }
        out.data_mut()[cell] = s;
    }
    out
}

// ─── FFT angle estimation ────────────────────────────────────────────────────

/// The zero-padded, FFT-shifted steering DFT matrix (n_azimuth_bins x
/// n_antennas): row `b` is the DFT row whose frequency matches azimuth bin
/// `b` of the sin-space grid. Shared by the FFT AOA path and the exact
/// initialization of the learnable angle transform.
pub fn aoa_matrix(
    n_azimuth_bins: usize,
    n_antennas: usize,
    scaling: DftScaling,
) -> Result<ComplexTensor> {
    if n_azimuth_bins < n_antennas {
        return Err(Error::invalid(format!(
            "n_azimuth_bins {n_azimuth_bins} must be >= n_antennas {n_antennas}"
        )));
    }
    let b = n_azimuth_bins;
    let s = match scaling {
        DftScaling::None => 1.0,
        DftScaling::Unitary => 1.0 / (b as f64).sqrt(),
    };
    let mut re = vec![0.0; b * n_antennas];
    let mut im = vec![0.0; b * n_antennas];
    for row in 0..b {
        // FFT shift baked into the row order.
        let k = tensor::fftshift_source(row, b);
        for a in 0..n_antennas {
            let ang = -2.0 * PI * ((k * a) % b) as f64 / b as f64;
            re[row * n_antennas + a] = s * ang.cos();
            im[row * n_antennas + a] = s * ang.sin();
        }
    }
    ComplexTensor::new(vec![b, n_antennas], re, im)
}

/// FFT angle spectrum of one antenna snapshot: zero-pad to
/// `n_azimuth_bins`, DFT, FFT-shift, magnitude. Bin `b` maps to
/// `sin(theta)` through [`AzimuthGrid`].
pub fn aoa_fft(
    snapshot: &ComplexTensor,
    n_azimuth_bins: usize,
    scaling: DftScaling,
) -> Result<RealTensor> {
    if snapshot.dims().len() != 1 {
        return Err(Error::invalid("snapshot must be 1-d"));
    }
    let w = aoa_matrix(n_azimuth_bins, snapshot.len(), scaling)?;
    Ok(snapshot.matrix_apply(0, &w)?.magnitude())
}

// ─── CFAR ────────────────────────────────────────────────────────────────────

/// Cell-averaging CFAR parameters: guard and training extents per side,
/// per axis, and the detection scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfarConfig {
    pub guard_cells: usize,
    pub train_cells: usize,
    pub scale_factor: f64,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            guard_cells: 1,
            train_cells: 3,
            scale_factor: 8.0,
        }
    }
}

/// Mean of the training cells around `(r, d)`: the window of half-extent
/// `guard + train` clamped to the plane, with the guard box (including the
/// cell under test) excluded.
fn training_mean(plane: &RealTensor, cfg: &CfarConfig, r: usize, d: usize) -> f64 {
    let (nr, nd) = (plane.dims()[0], plane.dims()[1]);
    let w = (cfg.guard_cells + cfg.train_cells) as isize;
    let g = cfg.guard_cells as isize;
    let (ri, di) = (r as isize, d as isize);
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in (ri - w).max(0)..=(ri + w).min(nr as isize - 1) {
        for j in (di - w).max(0)..=(di + w).min(nd as isize - 1) {
            if (i - ri).abs() <= g && (j - di).abs() <= g {
                continue;
            }
            sum += plane.at(&[i as usize, j as usize]);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Cell-averaging CFAR over a 2-d magnitude plane. A cell is detected iff
/// its value exceeds `scale_factor` times its training mean and it is a
/// local maximum of its 3x3 neighborhood (ties count as maxima). Windows
/// clamp at the plane borders, so every cell is testable.
pub fn cfar_detect(plane: &RealTensor, cfg: &CfarConfig) -> Result<Vec<(usize, usize)>> {
    if plane.dims().len() != 2 {
        return Err(Error::invalid("CFAR plane must be 2-d"));
    }
    if !(cfg.scale_factor > 0.0) {
        return Err(Error::invalid("CFAR scale factor must be positive"));
    }
    let (nr, nd) = (plane.dims()[0], plane.dims()[1]);
    let full = 2 * (cfg.guard_cells + cfg.train_cells) + 1;
    if full > nr || full > nd {
        return Err(Error::invalid(format!(
            "CFAR window {full} exceeds plane dims {nr}x{nd}"
        )));
    }
    let mut out = Vec::new();
    for r in 0..nr {
        for d in 0..nd {
            let v = plane.at(&[r, d]);
            if v <= cfg.scale_factor * training_mean(plane, cfg, r, d) {
                continue;
            }
            let mut local_max = true;
            for i in r.saturating_sub(1)..=(r + 1).min(nr - 1) {
                for j in d.saturating_sub(1)..=(d + 1).min(nd - 1) {
                    if (i, j) != (r, d) && plane.at(&[i, j]) > v {
                        local_max = false;
                    }
                }
            }
            if local_max {
                out.push((r, d));
            }
        }
    }
    Ok(out)
}

// ─── RAD assembly ────────────────────────────────────────────────────────────

/// Builds the RAD tensor of one ADC cube: range/Doppler transform, then
/// the chosen angle estimator applied to the antenna vector of every
/// range-Doppler cell.
pub fn build_rad(
    adc: &AdcCube,
    radar: &RadarConfig,
    sp: &SpConfig,
    aoa: AoaKind,
) -> Result<RadTensor> {
    let (wr, wd) = sp.windows(radar)?;
    let rd = adc_to_rd(adc, &wr, &wd, sp.scaling)?;
    rad_from_rd(&rd, radar, sp, aoa)
}

/// RAD assembly from an existing RD cube.
pub fn rad_from_rd(
    rd: &RdCube,
    radar: &RadarConfig,
    sp: &SpConfig,
    aoa: AoaKind,
) -> Result<RadTensor> {
    match aoa {
        AoaKind::Fft => {
            let w = aoa_matrix(sp.n_azimuth_bins, rd.n_antennas(), sp.scaling)?;
            let x = rd.data().matrix_apply(2, &w)?;
            RadTensor::new(x.magnitude())
        }
        AoaKind::Music => {
            // The MUSIC pseudo-spectrum is scale-invariant in the snapshot,
            // so the raw per-cell spectra are not comparable across cells.
            // Weighting each cell by its mean snapshot power restores a
            // magnitude axis: strong cells dominate the RAD tensor the way
            // they do under the FFT estimator.
            let grid = radar.azimuth_grid(sp.n_azimuth_bins);
            let (nr, nd, b) = (rd.n_range_bins(), rd.n_doppler_bins(), sp.n_azimuth_bins);
            let mut out = RealTensor::zeros(vec![nr, nd, b])?;
            for r in 0..nr {
                for d in 0..nd {
                    let snap = rd.snapshot(r, d);
                    let power = snap
                        .re()
                        .iter()
                        .zip(snap.im())
                        .map(|(&x, &y)| x * x + y * y)
                        .sum::<f64>()
                        / snap.len() as f64;
                    let mat = ComplexTensor::new(
                        vec![snap.len(), 1],
                        snap.re().to_vec(),
                        snap.im().to_vec(),
                    )?;
                    let spec = aoa_music(&mat, sp.music_sources, &grid)?;
                    for j in 0..b {
                        let off = (r * nd + d) * b + j;
                        out.data_mut()[off] = power * spec.data()[j];
                    }
                }
            }
            RadTensor::new(out)
        }
    }
}

/// Mean pooling over non-overlapping blocks; trailing cells that do not
/// fill a block are truncated. Factors must be positive.
pub fn downsample_rad(rad: &RadTensor, factors: (usize, usize, usize)) -> Result<RadTensor> {
    let (f0, f1, f2) = factors;
    if f0 == 0 || f1 == 0 || f2 == 0 {
        return Err(Error::invalid("downsample factors must be positive"));
    }
    let dims = rad.data.dims();
    let out_dims = [dims[0] / f0, dims[1] / f1, dims[2] / f2];
    if out_dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid(format!(
            "factors {factors:?} exceed RAD dims {dims:?}"
        )));
    }
    let mut out = RealTensor::zeros(out_dims.to_vec())?;
    let norm = 1.0 / (f0 * f1 * f2) as f64;
    for i in 0..out_dims[0] {
        for j in 0..out_dims[1] {
            for k in 0..out_dims[2] {
                let mut s = 0.0;
                for a in 0..f0 {
                    for b in 0..f1 {
                        for c in 0..f2 {
                            s += rad.data.at(&[i * f0 + a, j * f1 + b, k * f2 + c]);
                        }
                    }
                }
                out.set(&[i, j, k], s * norm);
            }
        }
    }
    RadTensor::new(out)
}

// ─── Classic detections ──────────────────────────────────────────────────────

/// A detection out of the classical chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub range_bin: usize,
    pub doppler_bin: usize,
    pub azimuth_rad: f64,
    pub snr_estimate: f64,
}

/// Full classical chain on one cube: RD transform, CFAR on the
/// antenna-summed magnitude plane, then FFT angle estimation at each
/// detected cell.
pub fn classic_detections(
    adc: &AdcCube,
    radar: &RadarConfig,
    sp: &SpConfig,
    cfar: &CfarConfig,
) -> Result<Vec<Detection>> {
    let (wr, wd) = sp.windows(radar)?;
    let rd = adc_to_rd(adc, &wr, &wd, sp.scaling)?;
    let plane = rd_magnitude_plane(&rd);
    let cells = cfar_detect(&plane, cfar)?;
    let grid = radar.azimuth_grid(sp.n_azimuth_bins);
    let w = aoa_matrix(sp.n_azimuth_bins, rd.n_antennas(), sp.scaling)?;
    let mut out = Vec::with_capacity(cells.len());
    for (r, d) in cells {
        let spec = rd.snapshot(r, d).matrix_apply(0, &w)?.magnitude();
        let best = spec.argmax()[0];
        let noise = training_mean(&plane, cfar, r, d);
        out.push(Detection {
            range_bin: r,
            doppler_bin: d,
            azimuth_rad: grid.angle_at(best),
            snr_estimate: if noise > 0.0 {
                plane.at(&[r, d]) / noise
            } else {
                f64::MAX
            },
        });
    }
    Ok(out)
}

/// Detections decoded from a RAD tensor: CFAR over the azimuth-summed
/// range-Doppler plane, azimuth from the profile argmax at each detected
/// cell, range from the bin index. Scores are `snr / (1 + snr)` so they
/// live in `[0, 1)` for threshold sweeps.
pub fn rad_detections(
    rad: &RadTensor,
    radar: &RadarConfig,
    cfar: &CfarConfig,
) -> Result<Vec<crate::heads::ScoredDetection>> {
    let (nr, nd, nb) = (
        rad.n_range_bins(),
        rad.n_doppler_bins(),
        rad.n_azimuth_bins(),
    );
    let mut plane = RealTensor::zeros(vec![nr, nd])?;
    for r in 0..nr {
        for d in 0..nd {
            let mut s = 0.0;
            for b in 0..nb {
                s += rad.data.at(&[r, d, b]);
            }
            plane.set(&[r, d], s);
        }
    }
    let grid = radar.azimuth_grid(nb);
    let range_bin_m = radar.max_range() / nr as f64;
    let cells = cfar_detect(&plane, cfar)?;
    let mut out = Vec::with_capacity(cells.len());
    for (r, d) in cells {
        let mut best = 0usize;
        for b in 1..nb {
            if rad.data.at(&[r, d, b]) > rad.data.at(&[r, d, best]) {
                best = b;
            }
        }
        let noise = training_mean(&plane, cfar, r, d);
        let snr = if noise > 0.0 {
            plane.at(&[r, d]) / noise
        } else {
            f64::MAX
        };
        out.push(crate::heads::ScoredDetection {
            range_m: r as f64 * range_bin_m,
            azimuth_rad: grid.angle_at(best),
            score: snr / (1.0 + snr),
        });
    }
    Ok(out)
}

/// Binary mask of CFAR-detected cells over a RAD tensor's azimuth-summed
/// plane; the segmentation-style footprint used when comparing two chains.
pub fn rad_cfar_mask(rad: &RadTensor, cfar: &CfarConfig) -> Result<RealTensor> {
    let (nr, nd, nb) = (
        rad.n_range_bins(),
        rad.n_doppler_bins(),
        rad.n_azimuth_bins(),
    );
    let mut plane = RealTensor::zeros(vec![nr, nd])?;
    for r in 0..nr {
        for d in 0..nd {
            let mut s = 0.0;
            for b in 0..nb {
                s += rad.data.at(&[r, d, b]);
            }
            plane.set(&[r, d], s);
        }
    }
    let mut mask = RealTensor::zeros(vec![nr, nd])?;
    for (r, d) in cfar_detect(&plane, cfar)? {
        mask.set(&[r, d], 1.0);
    }
    Ok(mask)
}

// ─── Batch labeling ──────────────────────────────────────────────────────────

/// Pseudo-labels every scene of a manifest: reads each ADC cube, writes
/// its RAD tensor next to it in `out_dir`, and returns the manifest with
/// `rad_path` filled in. Per-scene failures are recorded in the record's
/// `error` field and the run continues. Re-running overwrites identically.
pub fn teacher_batch(
    manifest: &DatasetManifest,
    radar: &RadarConfig,
    sp: &SpConfig,
    aoa: AoaKind,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let records: Vec<SceneRecord> = manifest
        .records
        .par_iter()
        .map(|rec| {
            let mut rec = rec.clone();
            match label_one(manifest, &rec, radar, sp, aoa, out_dir) {
                Ok(rad_rel) => {
                    rec.rad_path = Some(rad_rel);
                    rec.error = None;
                }
                Err(e) => {
                    rec.rad_path = None;
                    rec.error = Some(e.to_string());
                }
            }
            rec
        })
        .collect();

    // ADC paths must stay resolvable from the new manifest's directory.
    let records = records
        .into_iter()
        .map(|mut rec| {
            let abs = manifest.resolve(&rec.adc_path);
            if abs.parent() != Some(out_dir) {
                rec.adc_path = abs.to_string_lossy().into_owned();
            }
            rec
        })
        .collect();

    let out = DatasetManifest {
        records,
        dir: out_dir.to_path_buf(),
    };
    out.write(out_dir.join(crate::fmcw::MANIFEST_NAME))?;
    Ok(out)
}

fn label_one(
    manifest: &DatasetManifest,
    rec: &SceneRecord,
    radar: &RadarConfig,
    sp: &SpConfig,
    aoa: AoaKind,
    out_dir: &Path,
) -> Result<String> {
    let adc_data = tensor::read_complex(manifest.resolve(&rec.adc_path))?;
    let adc = AdcCube::new(adc_data, radar)?;
    let rad = build_rad(&adc, radar, sp, aoa)?;
    let rel = format!("scene_{:06}_rad.rten", rec.scene_id);
    tensor::write_real(out_dir.join(&rel), &rad.data)?;
    Ok(rel)
}
