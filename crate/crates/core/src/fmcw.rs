//! Synthetic FMCW radar scenes and raw ADC cubes with calibrated ground
//! truth.
//!
//! The receiver model is complex baseband: after dechirping, a point target
//! at range `r`, radial velocity `v`, and azimuth `theta` contributes
//!
//! ```text
//! a * exp(i 2 pi (f_b n / f_s + f_d m T_c) + i 2 pi d k sin(theta))
//! ```
//!
//! to ADC sample `(n, m, k)`, with beat frequency `f_b = 2 S r / c`
//! (`S = B / T_c` the chirp slope), Doppler `f_d = 2 v f_c / c`, and `d`
//! the element spacing of an ideal virtual uniform linear array in
//! wavelengths. Complex white Gaussian noise of per-component standard
//! deviation `noise_std` is added on top. Everything is deterministic
//! given the scene's RNG seed.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{Error, Result};
use crate::grid::AzimuthGrid;
use crate::heads::RaMaps;
use crate::tensor::{self, ComplexTensor, SeededRng};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

// ─── Configuration ───────────────────────────────────────────────────────────

/// Radar front-end parameters for the simulated sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarConfig {
    /// Carrier frequency in Hz.
    pub carrier_freq_hz: f64,
    /// Sweep bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Samples per chirp (fast-time extent).
    pub n_samples: usize,
    /// Chirps per frame (slow-time extent).
    pub n_chirps: usize,
    /// Virtual uniform-linear-array element count.
    pub n_antennas: usize,
    /// ADC sample rate in Hz.
    pub sample_rate_hz: f64,
    /// Single chirp duration in seconds.
    pub chirp_duration_s: f64,
    /// Array element spacing in wavelengths.
    pub element_spacing_wavelengths: f64,
    /// Complex AWGN standard deviation per component.
    pub noise_std: f64,
}

impl Default for RadarConfig {
    /// Desk-scale configuration: 64 x 32 x 8 cubes sized so that the
    /// quadratic-cost DFT oracles run in seconds. `sample_rate_hz *
    /// chirp_duration_s` equals `n_samples`, so range bin `k` sits at
    /// exactly `k * range_resolution()`.
    fn default() -> Self {
        Self {
            carrier_freq_hz: 77e9,
            bandwidth_hz: 4e9,
            n_samples: 64,
            n_chirps: 32,
            n_antennas: 8,
            sample_rate_hz: 6.4e6,
            chirp_duration_s: 1e-5,
            element_spacing_wavelengths: 0.5,
            noise_std: 0.05,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_chirps == 0 || self.n_antennas == 0 {
            return Err(Error::invalid("all cube extents must be at least 1"));
        }
        for (name, v) in [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("sample_rate_hz", self.sample_rate_hz),
            ("chirp_duration_s", self.chirp_duration_s),
            ("element_spacing_wavelengths", self.element_spacing_wavelengths),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be >= 0"));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    /// Range resolution `c / (2 B)` in meters.
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)
    }

    /// Velocity resolution `lambda / (2 M T_c)` in m/s.
    pub fn velocity_resolution(&self) -> f64 {
        self.wavelength() / (2.0 * self.n_chirps as f64 * self.chirp_duration_s)
    }

    /// Unambiguous range: beat frequencies up to the sample rate.
    pub fn max_range(&self) -> f64 {
        self.sample_rate_hz * SPEED_OF_LIGHT * self.chirp_duration_s / (2.0 * self.bandwidth_hz)
    }

    /// Unambiguous radial speed `lambda / (4 T_c)`.
    pub fn max_velocity(&self) -> f64 {
        self.wavelength() / (4.0 * self.chirp_duration_s)
    }

    /// Beat frequency of a target at range `r`.
    pub fn beat_freq(&self, range_m: f64) -> f64 {
        2.0 * (self.bandwidth_hz / self.chirp_duration_s) * range_m / SPEED_OF_LIGHT
    }

    /// Doppler frequency of a target at radial velocity `v`.
    pub fn doppler_freq(&self, velocity_mps: f64) -> f64 {
        2.0 * velocity_mps * self.carrier_freq_hz / SPEED_OF_LIGHT
    }

    /// Continuous range-DFT bin position of a target.
    pub fn range_bin_float(&self, range_m: f64) -> f64 {
        self.beat_freq(range_m) * self.n_samples as f64 / self.sample_rate_hz
    }

    /// Continuous signed Doppler bin position (0 = zero velocity).
    pub fn doppler_bin_float(&self, velocity_mps: f64) -> f64 {
        self.doppler_freq(velocity_mps) * self.n_chirps as f64 * self.chirp_duration_s
    }

    /// Azimuth grid used by angle estimation and labels at this spacing.
    pub fn azimuth_grid(&self, n_azimuth_bins: usize) -> AzimuthGrid {
        AzimuthGrid::new(n_azimuth_bins, self.element_spacing_wavelengths)
    }
}

// ─── Scene model ─────────────────────────────────────────────────────────────

/// A single point target. Bounds are checked at construction against the
/// radar configuration the scene will be rendered with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub range_m: f64,
    pub velocity_mps: f64,
    pub azimuth_rad: f64,
    pub amplitude: f64,
}

impl Target {
    pub fn new(
        range_m: f64,
        velocity_mps: f64,
        azimuth_rad: f64,
        amplitude: f64,
        cfg: &RadarConfig,
    ) -> Result<Self> {
        let t = Self {
            range_m,
            velocity_mps,
            azimuth_rad,
            amplitude,
        };
        t.check(cfg).map(|()| t)
    }

    /// Validates the target against the unambiguous intervals of `cfg`.
    pub fn check(&self, cfg: &RadarConfig) -> Result<()> {
        if !(self.range_m > 0.0 && self.range_m < cfg.max_range()) {
            return Err(Error::invalid(format!(
                "target range {} m outside (0, {}) m",
                self.range_m,
                cfg.max_range()
            )));
        }
        if self.velocity_mps.abs() >= cfg.max_velocity() {
            return Err(Error::invalid(format!(
                "target velocity {} m/s outside unambiguous interval +/- {} m/s",
                self.velocity_mps,
                cfg.max_velocity()
            )));
        }
        if self.azimuth_rad.abs() >= PI / 2.0 {
            return Err(Error::invalid(format!(
                "target azimuth {} rad outside (-pi/2, pi/2)",
                self.azimuth_rad
            )));
        }
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::invalid("target amplitude must be positive"));
        }
        Ok(())
    }
}

/// A scene: the targets to render plus the seed that fixes its noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub rng_seed: u64,
    pub targets: Vec<Target>,
}

/// Raw receiver samples, shape (n_samples, n_chirps, n_antennas).
#[derive(Debug, Clone, PartialEq)]
pub struct AdcCube {
    pub data: ComplexTensor,
}

impl AdcCube {
    pub fn new(data: ComplexTensor, cfg: &RadarConfig) -> Result<Self> {
        let want = [cfg.n_samples, cfg.n_chirps, cfg.n_antennas];
        if data.dims() != want {
            return Err(Error::invalid(format!(
                "ADC dims {:?} do not match config {:?}",
                data.dims(),
                want
            )));
        }
        Ok(Self { data })
    }
}

// ─── Synthesis ───────────────────────────────────────────────────────────────

/// Renders a scene into a raw ADC cube. Noise draws are ordered row-major,
/// real then imaginary per entry, from a generator seeded with
/// `scene.rng_seed`, so the cube is a pure function of (scene, cfg).
pub fn synth_adc(scene: &Scene, cfg: &RadarConfig) -> Result<AdcCube> {
    cfg.validate()?;
    for (i, t) in scene.targets.iter().enumerate() {
        t.check(cfg)
            .map_err(|e| Error::invalid(format!("target {i}: {e}")))?;
    }
    let (n, m, a) = (cfg.n_samples, cfg.n_chirps, cfg.n_antennas);
    let mut cube = ComplexTensor::zeros(vec![n, m, a])?;

    for t in &scene.targets {
        // Per-axis unit phasors; the cube entry is their product.
        let wn = 2.0 * PI * cfg.beat_freq(t.range_m) / cfg.sample_rate_hz;
        let wm = 2.0 * PI * cfg.doppler_freq(t.velocity_mps) * cfg.chirp_duration_s;
        let wa = 2.0 * PI * cfg.element_spacing_wavelengths * t.azimuth_rad.sin();
        let pn: Vec<(f64, f64)> = (0..n)
            .map(|j| ((wn * j as f64).cos(), (wn * j as f64).sin()))
            .collect();
        let pm: Vec<(f64, f64)> = (0..m)
            .map(|j| ((wm * j as f64).cos(), (wm * j as f64).sin()))
            .collect();
        let pa: Vec<(f64, f64)> = (0..a)
            .map(|j| ((wa * j as f64).cos(), (wa * j as f64).sin()))
            .collect();

        let (re, im) = cube.planes_mut();
        for (jn, &(nr, ni)) in pn.iter().enumerate() {
            let (tr, ti) = (t.amplitude * nr, t.amplitude * ni);
            for (jm, &(mr, mi)) in pm.iter().enumerate() {
                let cr = tr * mr - ti * mi;
                let ci = tr * mi + ti * mr;
                let base = (jn * m + jm) * a;
                for (ja, &(ar, ai)) in pa.iter().enumerate() {
                    re[base + ja] += cr * ar - ci * ai;
                    im[base + ja] += cr * ai + ci * ar;
                }
            }
        }
    }

    if cfg.noise_std > 0.0 {
        let mut rng = SeededRng::new(scene.rng_seed);
        let (re, im) = cube.planes_mut();
        for j in 0..re.len() {
            re[j] += cfg.noise_std * rng.next_gaussian();
            im[j] += cfg.noise_std * rng.next_gaussian();
        }
    }

    AdcCube::new(cube, cfg)
}

// ─── Scene sampling ──────────────────────────────────────────────────────────

/// How dataset scenes are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenePolicy {
    /// Targets anywhere in the unambiguous volume, amplitudes in [0.5, 2).
    Random,
    /// Targets snapped to bin centers on the stated label grid, unit
    /// amplitude, pairwise separated by at least 3 bins in range or
    /// azimuth. Produces data a per-cell linear head can separate.
    Separable {
        n_range_bins: usize,
        n_azimuth_bins: usize,
    },
}

fn sample_random_scene(
    cfg: &RadarConfig,
    count_range: (usize, usize),
    rng: &mut SeededRng,
    scene_id: u64,
) -> Scene {
    let (lo, hi) = count_range;
    let count = lo + rng.next_index(hi - lo + 1);
    let targets = (0..count)
        .map(|_| {
            let range = rng.next_range(0.05, 0.95) * cfg.max_range();
            let vel = rng.next_range(-0.75, 0.75) * cfg.max_velocity();
            let az = rng.next_range(-0.9, 0.9_f64).asin();
            let amp = rng.next_range(0.5, 2.0);
            Target {
                range_m: range,
                velocity_mps: vel,
                azimuth_rad: az,
                amplitude: amp,
            }
        })
        .collect();
    Scene {
        scene_id,
        rng_seed: rng.next_u64(),
        targets,
    }
}

fn sample_separable_scene(
    cfg: &RadarConfig,
    count_range: (usize, usize),
    n_range_bins: usize,
    n_azimuth_bins: usize,
    rng: &mut SeededRng,
    scene_id: u64,
) -> Scene {
    let (lo, hi) = count_range;
    let count = lo + rng.next_index(hi - lo + 1);
    let grid = cfg.azimuth_grid(n_azimuth_bins);
    let dr = cfg.max_range() / n_range_bins as f64;
    let dv = cfg.velocity_resolution();
    let m = cfg.n_chirps as isize;

    let mut cells: Vec<(usize, usize)> = Vec::new();
    let mut targets = Vec::new();
    let mut attempts = 0;
    while targets.len() < count && attempts < 200 {
        attempts += 1;
        let rb = 2 + rng.next_index(n_range_bins.saturating_sub(4));
        let ab = 2 + rng.next_index(n_azimuth_bins.saturating_sub(4));
        if cells
            .iter()
            .any(|&(r, b)| rb.abs_diff(r) < 3 && ab.abs_diff(b) < 3)
        {
            continue;
        }
        let q = -(m / 2 - 1) + rng.next_index((m - 2) as usize) as isize;
        cells.push((rb, ab));
        targets.push(Target {
            range_m: rb as f64 * dr,
            velocity_mps: q as f64 * dv,
            azimuth_rad: grid.angle_at(ab),
            amplitude: 1.0,
        });
    }
    Scene {
        scene_id,
        rng_seed: rng.next_u64(),
        targets,
    }
}

/// Draws scene `scene_id` of a dataset. Each scene owns an RNG substream
/// of the dataset seed, so scenes are independent and the draw is stable
/// under parallel generation.
pub fn sample_scene(
    cfg: &RadarConfig,
    count_range: (usize, usize),
    policy: ScenePolicy,
    dataset_seed: u64,
    scene_id: u64,
) -> Result<Scene> {
    let (lo, hi) = count_range;
    if lo > hi {
        return Err(Error::invalid(format!(
            "target count range ({lo}, {hi}) is empty"
        )));
    }
    let mut rng = SeededRng::new(dataset_seed).substream(scene_id);
    Ok(match policy {
        ScenePolicy::Random => sample_random_scene(cfg, count_range, &mut rng, scene_id),
        ScenePolicy::Separable {
            n_range_bins,
            n_azimuth_bins,
        } => sample_separable_scene(
            cfg,
            count_range,
            n_range_bins,
            n_azimuth_bins,
            &mut rng,
            scene_id,
        ),
    })
}

// ─── Labels ──────────────────────────────────────────────────────────────────

/// Rasterizes scene ground truth onto a range x azimuth grid.
///
/// * `cls` is 1 at each target's (range bin, azimuth bin);
/// * `reg` holds, at those cells, the range residual in meters (range
///   modulo the range bin size) and the azimuth residual in radians
///   (offset from the bin's grid angle on the sin-space grid);
/// * `seg` marks a disk of `seg_radius` cells around each target.
pub fn rasterize_labels(
    scene: &Scene,
    cfg: &RadarConfig,
    n_range_bins: usize,
    n_azimuth_bins: usize,
    seg_radius: f64,
) -> Result<RaMaps> {
    if n_range_bins == 0 || n_azimuth_bins == 0 {
        return Err(Error::invalid("label bin counts must be at least 1"));
    }
    let mut maps = RaMaps::zeros(n_range_bins, n_azimuth_bins)?;
    let dr = cfg.max_range() / n_range_bins as f64;
    let grid = cfg.azimuth_grid(n_azimuth_bins);

    for t in &scene.targets {
        let rb = ((t.range_m / dr).floor() as usize).min(n_range_bins - 1);
        let ab = grid.bin_of_angle(t.azimuth_rad);
        maps.cls.set(&[rb, ab], 1.0);
        maps.reg.set(&[rb, ab, 0], t.range_m - rb as f64 * dr);
        maps.reg.set(&[rb, ab, 1], grid.residual_of_angle(t.azimuth_rad));

        let rad = seg_radius.max(0.0);
        let reach = rad.floor() as isize;
        for di in -reach..=reach {
            for dj in -reach..=reach {
                if (di * di + dj * dj) as f64 > rad * rad {
                    continue;
                }
                let i = rb as isize + di;
                let j = ab as isize + dj;
                if i >= 0 && j >= 0 && (i as usize) < n_range_bins && (j as usize) < n_azimuth_bins
                {
                    maps.seg.set(&[i as usize, j as usize], 1.0);
                }
            }
        }
    }
    Ok(maps)
}

/// Default segmentation disk radius: covers the 3 x 3 block around a
/// target cell, matching the mainlobe spread of the windowed chain.
pub const DEFAULT_SEG_RADIUS: f64 = 1.5;

// ─── Dataset manifest ────────────────────────────────────────────────────────

/// One line of a dataset manifest. Paths are relative to the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: u64,
    pub adc_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rad_path: Option<String>,
    pub targets: Vec<Target>,
    pub cfg_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A dataset manifest: JSON-lines records plus the directory they resolve
/// against.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SceneRecord>,
    pub dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for rec in &self.records {
            let line = serde_json::to_string(rec)
                .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: SceneRecord = serde_json::from_str(line).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            records.push(rec);
        }
        let dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { records, dir })
    }

    /// Scene ids must be unique within a dataset.
    pub fn check_unique_ids(&self) -> Result<()> {
        let mut ids: Vec<u64> = self.records.iter().map(|r| r.scene_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.records.len() {
            return Err(Error::invalid("duplicate scene ids in manifest"));
        }
        Ok(())
    }
}

/// Standard manifest file name inside a dataset directory.
pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Synthesizes a dataset: `n_scenes` ADC cubes written as RTEN files into
/// `out_dir` plus a JSON-lines manifest. Reproducible per seed: the same
/// arguments produce byte-identical files.
pub fn synth_dataset(
    n_scenes: usize,
    cfg: &RadarConfig,
    count_range: (usize, usize),
    policy: ScenePolicy,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg_digest = config::digest(cfg)?;

    let records: Result<Vec<SceneRecord>> = (0..n_scenes as u64)
        .into_par_iter()
        .map(|scene_id| {
            let scene = sample_scene(cfg, count_range, policy, seed, scene_id)?;
            let adc = synth_adc(&scene, cfg)?;
            let rel = format!("scene_{scene_id:06}_adc.rten");
            tensor::write_complex(out_dir.join(&rel), &adc.data)?;
            Ok(SceneRecord {
                scene_id,
                adc_path: rel,
                rad_path: None,
                targets: scene.targets,
                cfg_digest: cfg_digest.clone(),
                error: None,
            })
        })
        .collect();

    let manifest = DatasetManifest {
        records: records?,
        dir: out_dir.to_path_buf(),
    };
    manifest.write(out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Rebuilds the scene a manifest record describes (targets only; the
/// rendered cube lives in the referenced file).
pub fn scene_of_record(rec: &SceneRecord) -> Scene {
    Scene {
        scene_id: rec.scene_id,
        rng_seed: 0,
        targets: rec.targets.clone(),
    }
}
