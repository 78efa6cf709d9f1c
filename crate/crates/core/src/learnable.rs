//! The learnable signal-processing module: a differentiable re-expression
//! of the classical chain.
//!
//! Complex weights are stored as paired real/imaginary matrices and every
//! complex multiply is realized with four real products, so the whole
//! module is plain real-valued linear algebra plus an entry-wise magnitude
//! head. The stages mirror the teacher exactly:
//!
//! ```text
//! x1 = win_range . adc          (scale along samples axis)
//! x2 = W_range   x1             (matrix along samples axis)
//! x3 = win_doppler . x2         (scale along chirps axis)
//! x4 = W_doppler x3             (matrix along chirps axis)
//! x5 = W_angle   x4             (matrix along antenna axis)
//! rad = |x5|
//! ```
//!
//! With exact initialization the module *is* the teacher: `W_range` and
//! `W_doppler` are DFT matrices (the Doppler one with the FFT shift baked
//! into its row order), `W_angle` is the zero-padded steering DFT, and the
//! windows are Hann. The perturbed initialization adds independent
//! Gaussian noise of variance `gamma` to the real and imaginary parts of
//! each weight matrix.
//!
//! [`backward`] is hand-written reverse mode and returns exact gradients
//! of `<grad_rad, rad>` with respect to every parameter tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmcw::{AdcCube, RadarConfig};
use crate::teacher::{aoa_matrix, RadTensor, SpConfig};
use crate::tensor::{
    self, dft_matrix, gaussian_perturb, window, ComplexTensor, DftDirection, RealTensor,
    SeededRng, WindowKind,
};

/// Magnitude entries below this threshold use a zero subgradient.
pub const MAG_EPS: f64 = 1e-12;

const CHECKPOINT_VERSION: u32 = 1;

// ─── Initialization schemes ──────────────────────────────────────────────────

/// Weight initialization variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum InitVariant {
    /// Exact DFT matrices everywhere.
    ExactDft,
    /// Exact DFT matrices plus Gaussian noise of variance `gamma` on the
    /// real and imaginary parts of each weight matrix.
    PerturbedDft { gamma: f64 },
    /// Exact range DFT, random Doppler matrix (variance 1/fan-in); the
    /// angle transform stays exact.
    RandomDoppler,
    /// All three weight matrices random with variance 1/fan-in.
    Random,
}

/// Initialization scheme: variant plus the seed of its noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitScheme {
    #[serde(flatten)]
    pub variant: InitVariant,
    pub seed: u64,
}

impl Default for InitScheme {
    fn default() -> Self {
        Self {
            variant: InitVariant::PerturbedDft { gamma: 0.1 },
            seed: 0,
        }
    }
}

impl InitScheme {
    pub fn label(&self) -> String {
        match self.variant {
            InitVariant::ExactDft => "exact_dft".into(),
            InitVariant::PerturbedDft { gamma } => format!("perturbed_dft_{gamma}"),
            InitVariant::RandomDoppler => "random_doppler".into(),
            InitVariant::Random => "random".into(),
        }
    }
}

// ─── Parameters ──────────────────────────────────────────────────────────────

/// All trainable tensors of the module.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableSpParams {
    pub win_range: RealTensor,
    pub win_doppler: RealTensor,
    pub w_range: ComplexTensor,
    pub w_doppler: ComplexTensor,
    pub w_angle: ComplexTensor,
}

/// Gradient buffers, shape-congruent with [`LearnableSpParams`].
pub type Gradients = LearnableSpParams;

/// The eight real parameter buffers, in the fixed order used by the
/// optimizer, checkpoints, and drift reports.
pub const PART_NAMES: [&str; 8] = [
    "win_range",
    "win_doppler",
    "w_range_re",
    "w_range_im",
    "w_doppler_re",
    "w_doppler_im",
    "w_angle_re",
    "w_angle_im",
];

impl LearnableSpParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            win_range: RealTensor::zeros(self.win_range.dims().to_vec()).unwrap(),
            win_doppler: RealTensor::zeros(self.win_doppler.dims().to_vec()).unwrap(),
            w_range: ComplexTensor::zeros(self.w_range.dims().to_vec()).unwrap(),
            w_doppler: ComplexTensor::zeros(self.w_doppler.dims().to_vec()).unwrap(),
            w_angle: ComplexTensor::zeros(self.w_angle.dims().to_vec()).unwrap(),
        }
    }

    pub fn part(&self, i: usize) -> &[f64] {
        match i {
            0 => self.win_range.data(),
            1 => self.win_doppler.data(),
            2 => self.w_range.re(),
            3 => self.w_range.im(),
            4 => self.w_doppler.re(),
            5 => self.w_doppler.im(),
            6 => self.w_angle.re(),
            7 => self.w_angle.im(),
            _ => panic!("part index out of range"),
        }
    }

    pub fn part_mut(&mut self, i: usize) -> &mut [f64] {
        match i {
            0 => self.win_range.data_mut(),
            1 => self.win_doppler.data_mut(),
            2 => self.w_range.re_mut(),
            3 => self.w_range.im_mut(),
            4 => self.w_doppler.re_mut(),
            5 => self.w_doppler.im_mut(),
            6 => self.w_angle.re_mut(),
            7 => self.w_angle.im_mut(),
            _ => panic!("part index out of range"),
        }
    }

    pub fn same_shapes(&self, other: &Self) -> bool {
        self.win_range.dims() == other.win_range.dims()
            && self.win_doppler.dims() == other.win_doppler.dims()
            && self.w_range.dims() == other.w_range.dims()
            && self.w_doppler.dims() == other.w_doppler.dims()
            && self.w_angle.dims() == other.w_angle.dims()
    }

    /// Expected ADC dims (n_samples, n_chirps, n_antennas).
    pub fn input_dims(&self) -> [usize; 3] {
        [
            self.w_range.dims()[1],
            self.w_doppler.dims()[1],
            self.w_angle.dims()[1],
        ]
    }

    pub fn n_azimuth_bins(&self) -> usize {
        self.w_angle.dims()[0]
    }
}

// ─── Initialization ──────────────────────────────────────────────────────────

/// DFT matrix with the Doppler FFT shift baked into its row order, so
/// applying it along the chirps axis lands zero velocity at the center bin.
fn shifted_dft_matrix(n: usize, scaling: tensor::DftScaling) -> Result<ComplexTensor> {
    let f = dft_matrix(n, DftDirection::Forward, scaling)?;
    let mut out = ComplexTensor::zeros(vec![n, n])?;
    for row in 0..n {
        let src = tensor::fftshift_source(row, n);
        for col in 0..n {
            let (r, i) = f.at(&[src, col]);
            out.set(&[row, col], r, i);
        }
    }
    Ok(out)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Result<ComplexTensor> {
    // Variance 1/fan-in per component.
    let std = 1.0 / (cols as f64).sqrt();
    let mut m = ComplexTensor::zeros(vec![rows, cols])?;
    for x in m.re_mut() {
        *x = std * rng.next_gaussian();
    }
    for x in m.im_mut() {
        *x = std * rng.next_gaussian();
    }
    Ok(m)
}

/// Builds the module parameters for a scheme. Windows always initialize to
/// Hann; only the weight matrices vary between schemes. Noise draws use
/// one stream seeded by `scheme.seed`, consumed in the fixed order
/// `W_range`, `W_doppler`, `W_angle`.
pub fn init_params(
    scheme: &InitScheme,
    radar: &RadarConfig,
    sp: &SpConfig,
) -> Result<LearnableSpParams> {
    radar.validate()?;
    let (n, m, a, b) = (
        radar.n_samples,
        radar.n_chirps,
        radar.n_antennas,
        sp.n_azimuth_bins,
    );
    let exact = LearnableSpParams {
        win_range: window(WindowKind::Hann, n)?,
        win_doppler: window(WindowKind::Hann, m)?,
        w_range: dft_matrix(n, DftDirection::Forward, sp.scaling)?,
        w_doppler: shifted_dft_matrix(m, sp.scaling)?,
        w_angle: aoa_matrix(b, a, sp.scaling)?,
    };
    let mut rng = SeededRng::new(scheme.seed);
    Ok(match scheme.variant {
        InitVariant::ExactDft => exact,
        InitVariant::PerturbedDft { gamma } => LearnableSpParams {
            w_range: gaussian_perturb(&exact.w_range, gamma, &mut rng)?,
            w_doppler: gaussian_perturb(&exact.w_doppler, gamma, &mut rng)?,
            w_angle: gaussian_perturb(&exact.w_angle, gamma, &mut rng)?,
            ..exact
        },
        InitVariant::RandomDoppler => LearnableSpParams {
            w_doppler: random_matrix(m, m, &mut rng)?,
            ..exact
        },
        InitVariant::Random => LearnableSpParams {
            w_range: random_matrix(n, n, &mut rng)?,
            w_doppler: random_matrix(m, m, &mut rng)?,
            w_angle: random_matrix(b, a, &mut rng)?,
            ..exact
        },
    })
}

// ─── Forward ─────────────────────────────────────────────────────────────────

/// Intermediates retained for the backward pass (`x0` is the input).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x0: ComplexTensor,
    x1: ComplexTensor,
    x2: ComplexTensor,
    x3: ComplexTensor,
    x4: ComplexTensor,
    x5: ComplexTensor,
}

/// Runs the module on one ADC cube, returning the predicted RAD tensor and
/// the cache the backward pass needs.
pub fn forward(params: &LearnableSpParams, adc: &AdcCube) -> Result<(RadTensor, ForwardCache)> {
    if adc.data.dims() != params.input_dims() {
        return Err(Error::invalid(format!(
            "ADC dims {:?} do not match module input {:?}",
            adc.data.dims(),
            params.input_dims()
        )));
    }
    let x0 = adc.data.clone();
    let x1 = x0.scale_axis(0, &params.win_range)?;
    let x2 = x1.matrix_apply(0, &params.w_range)?;
    let x3 = x2.scale_axis(1, &params.win_doppler)?;
    let x4 = x3.matrix_apply(1, &params.w_doppler)?;
    let x5 = x4.matrix_apply(2, &params.w_angle)?;
    let rad = RadTensor::new(x5.magnitude())?;
    Ok((
        rad,
        ForwardCache {
            x0,
            x1,
            x2,
            x3,
            x4,
            x5,
        },
    ))
}

// ─── Backward ────────────────────────────────────────────────────────────────

/// Upstream gradient through the magnitude head:
/// `d|z|/d re = re / |z|`, `d|z|/d im = im / |z|`, zero below [`MAG_EPS`].
fn magnitude_backward(x5: &ComplexTensor, grad_rad: &RealTensor) -> ComplexTensor {
    let mut g = ComplexTensor::zeros(x5.dims().to_vec()).unwrap();
    let (gre, gim) = g.planes_mut();
    for j in 0..x5.len() {
        let (r, i) = (x5.re()[j], x5.im()[j]);
        let mag = (r * r + i * i).sqrt();
        if mag >= MAG_EPS {
            let s = grad_rad.data()[j] / mag;
            gre[j] = s * r;
            gim[j] = s * i;
        }
    }
    g
}

/// Gradient with respect to a weight matrix applied along `axis`:
/// `dW[k, l] = sum over other indices of g[.., k, ..] * conj(x[.., l, ..])`.
fn weight_grad(g: &ComplexTensor, x: &ComplexTensor, axis: usize) -> ComplexTensor {
    let gdims = g.dims();
    let xdims = x.dims();
    let outer: usize = gdims[..axis].iter().product();
    let inner: usize = gdims[axis + 1..].iter().product();
    let k = gdims[axis];
    let l = xdims[axis];
    let mut out = ComplexTensor::zeros(vec![k, l]).unwrap();
    let (ore, oim) = out.planes_mut();

    if inner == 1 {
        for o in 0..outer {
            let gb = o * k;
            let xb = o * l;
            for kk in 0..k {
                let (gr, gi) = (g.re()[gb + kk], g.im()[gb + kk]);
                let row = kk * l;
                let xr = &x.re()[xb..xb + l];
                let xi = &x.im()[xb..xb + l];
                for ll in 0..l {
                    ore[row + ll] += gr * xr[ll] + gi * xi[ll];
                    oim[row + ll] += gi * xr[ll] - gr * xi[ll];
                }
            }
        }
    } else {
        for o in 0..outer {
            for kk in 0..k {
                let gb = (o * k + kk) * inner;
                let gr = &g.re()[gb..gb + inner];
                let gi = &g.im()[gb..gb + inner];
                for ll in 0..l {
                    let xb = (o * l + ll) * inner;
                    let xr = &x.re()[xb..xb + inner];
                    let xi = &x.im()[xb..xb + inner];
                    let mut ar = 0.0;
                    let mut ai = 0.0;
                    for p in 0..inner {
                        ar += gr[p] * xr[p] + gi[p] * xi[p];
                        ai += gi[p] * xr[p] - gr[p] * xi[p];
                    }
                    ore[kk * l + ll] += ar;
                    oim[kk * l + ll] += ai;
                }
            }
        }
    }
    out
}

/// Gradient with respect to a real window applied along `axis`:
/// `dw[j] = sum over the slice of (g_re x_re + g_im x_im)`.
fn window_grad(g: &ComplexTensor, x: &ComplexTensor, axis: usize) -> RealTensor {
    let dims = g.dims();
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let n = dims[axis];
    let mut out = RealTensor::zeros(vec![n]).unwrap();
    for o in 0..outer {
        for j in 0..n {
            let base = (o * n + j) * inner;
            let mut s = 0.0;
            for p in 0..inner {
                s += g.re()[base + p] * x.re()[base + p] + g.im()[base + p] * x.im()[base + p];
            }
            out.data_mut()[j] += s;
        }
    }
    out
}

/// Exact reverse-mode gradients of `<grad_rad, rad_pred>` with respect to
/// every parameter tensor, given the cache of the matching forward pass.
pub fn backward(
    params: &LearnableSpParams,
    cache: &ForwardCache,
    grad_rad: &RealTensor,
) -> Result<Gradients> {
    if grad_rad.dims() != cache.x5.dims() {
        return Err(Error::invalid(format!(
            "grad dims {:?} do not match forward output {:?}",
            grad_rad.dims(),
            cache.x5.dims()
        )));
    }
    let g5 = magnitude_backward(&cache.x5, grad_rad);

    let d_w_angle = weight_grad(&g5, &cache.x4, 2);
    let g4 = g5.matrix_apply(2, &params.w_angle.conj_t()?)?;

    let d_w_doppler = weight_grad(&g4, &cache.x3, 1);
    let g3 = g4.matrix_apply(1, &params.w_doppler.conj_t()?)?;

    let d_win_doppler = window_grad(&g3, &cache.x2, 1);
    let g2 = g3.scale_axis(1, &params.win_doppler)?;

    let d_w_range = weight_grad(&g2, &cache.x1, 0);
    let g1 = g2.matrix_apply(0, &params.w_range.conj_t()?)?;

    let d_win_range = window_grad(&g1, &cache.x0, 0);

    Ok(Gradients {
        win_range: d_win_range,
        win_doppler: d_win_doppler,
        w_range: d_w_range,
        w_doppler: d_w_doppler,
        w_angle: d_w_angle,
    })
}

// ─── Drift ───────────────────────────────────────────────────────────────────

/// Mean absolute difference per parameter buffer, keyed by part name.
pub fn weight_drift(init: &LearnableSpParams, trained: &LearnableSpParams) -> Result<Vec<(String, f64)>> {
    if !init.same_shapes(trained) {
        return Err(Error::invalid("drift requires shape-congruent parameters"));
    }
    Ok(PART_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let a = init.part(i);
            let b = trained.part(i);
            let mean = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x - y).abs())
                .sum::<f64>()
                / a.len() as f64;
            (name.to_string(), mean)
        })
        .collect())
}

// ─── Checkpoints ─────────────────────────────────────────────────────────────

/// Sidecar metadata written next to the parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub scheme: InitScheme,
    pub step: u64,
    pub cfg_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_history_path: Option<String>,
}

impl CheckpointMeta {
    pub fn new(scheme: InitScheme, step: u64, cfg_digest: String) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            scheme,
            step,
            cfg_digest,
            loss_history_path: None,
        }
    }
}

const PARAM_FILES: [&str; 5] = [
    "win_range.rten",
    "win_doppler.rten",
    "w_range.rten",
    "w_doppler.rten",
    "w_angle.rten",
];

/// Writes a checkpoint directory: five RTEN tensors plus `meta.json`.
pub fn params_save(
    dir: impl AsRef<Path>,
    params: &LearnableSpParams,
    meta: &CheckpointMeta,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    tensor::write_real(dir.join(PARAM_FILES[0]), &params.win_range)?;
    tensor::write_real(dir.join(PARAM_FILES[1]), &params.win_doppler)?;
    tensor::write_complex(dir.join(PARAM_FILES[2]), &params.w_range)?;
    tensor::write_complex(dir.join(PARAM_FILES[3]), &params.w_doppler)?;
    tensor::write_complex(dir.join(PARAM_FILES[4]), &params.w_angle)?;
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Config(format!("meta serialization: {e}")))?;
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

/// Loads a checkpoint directory. A missing `meta.json` or a version other
/// than the current one is rejected.
pub fn params_load(dir: impl AsRef<Path>) -> Result<(LearnableSpParams, CheckpointMeta)> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::invalid(format!(
            "checkpoint {} has no meta.json sidecar",
            dir.display()
        )));
    }
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", meta_path.display())))?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            meta.version
        )));
    }
    let params = LearnableSpParams {
        win_range: tensor::read_real(dir.join(PARAM_FILES[0]))?,
        win_doppler: tensor::read_real(dir.join(PARAM_FILES[1]))?,
        w_range: tensor::read_complex(dir.join(PARAM_FILES[2]))?,
        w_doppler: tensor::read_complex(dir.join(PARAM_FILES[3]))?,
        w_angle: tensor::read_complex(dir.join(PARAM_FILES[4]))?,
    };
    for (name, dims) in [
        ("w_range", params.w_range.dims()),
        ("w_doppler", params.w_doppler.dims()),
    ] {
        if dims.len() != 2 || dims[0] != dims[1] {
            return Err(Error::invalid(format!("{name} must be square, got {dims:?}")));
        }
    }
    Ok((params, meta))
}

/// Filenames of the optimizer moment tensors a resumable checkpoint also
/// carries (written by the trainer next to the parameter files).
pub fn adam_file_names() -> Vec<String> {
    PART_NAMES
        .iter()
        .flat_map(|n| [format!("adam_m_{n}.rten"), format!("adam_v_{n}.rten")])
        .collect()
}
