//! Multi-task losses, a toy per-cell detection/segmentation head, and the
//! detection/segmentation evaluation metrics.
//!
//! The head is deliberately small: one linear map, shared across range x
//! azimuth cells, from the Doppler profile at a cell to four outputs
//! (classification logit, range residual, azimuth residual, segmentation
//! logit). It stands in for a convolutional backbone while exercising the
//! same losses end to end.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmcw::{rasterize_labels, scene_of_record, AdcCube, DatasetManifest, RadarConfig};
use crate::learnable::{self, LearnableSpParams};
use crate::teacher::{RadTensor, SpConfig};
use crate::tensor::{self, RealTensor, SeededRng};
use crate::trainer::{adam_step, AdamState, FlatAdam, TrainConfig};

/// Probability clamp applied before any logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

// ─── Label maps ──────────────────────────────────────────────────────────────

/// Per-cell ground truth over a range x azimuth grid.
///
/// `cls` and `seg` are binary; `reg` stores (range residual in meters,
/// azimuth residual in radians) at cells where `cls` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RaMaps {
    pub cls: RealTensor,
    pub reg: RealTensor,
    pub seg: RealTensor,
}

impl RaMaps {
    pub fn zeros(n_range_bins: usize, n_azimuth_bins: usize) -> Result<Self> {
        Ok(Self {
            cls: RealTensor::zeros(vec![n_range_bins, n_azimuth_bins])?,
            reg: RealTensor::zeros(vec![n_range_bins, n_azimuth_bins, 2])?,
            seg: RealTensor::zeros(vec![n_range_bins, n_azimuth_bins])?,
        })
    }

    pub fn n_range_bins(&self) -> usize {
        self.cls.dims()[0]
    }

    pub fn n_azimuth_bins(&self) -> usize {
        self.cls.dims()[1]
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (r, b) = (self.n_range_bins(), self.n_azimuth_bins());
        if self.reg.dims() != [r, b, 2] || self.seg.dims() != [r, b] {
            return Err(Error::invalid("RaMaps tensors have inconsistent shapes"));
        }
        Ok(())
    }
}

// ─── Loss configuration ──────────────────────────────────────────────────────

/// Hyper-parameters of the multi-task loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight on the regression term of the detection loss. Residuals are
    /// small in SI units, hence the large default.
    pub alpha: f64,
    /// Weight on the segmentation loss.
    pub beta: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub smooth_l1_delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            beta: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            smooth_l1_delta: 1.0,
        }
    }
}

// ─── Losses ──────────────────────────────────────────────────────────────────

fn check_same_shape(a: &RealTensor, b: &RealTensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Focal loss over probability/binary-target tensors:
/// `mean of -alpha_t (1 - p_t)^gamma log(p_t)` with `p_t = p` where `y = 1`
/// and `1 - p` otherwise. Probabilities are clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`; the gradient is with respect to the
/// clamped value (zero outside the clamp).
pub fn focal_loss(
    p: &RealTensor,
    y: &RealTensor,
    focal_gamma: f64,
    focal_alpha: f64,
) -> Result<(f64, RealTensor)> {
    check_same_shape(p, y, "focal_loss")?;
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = RealTensor::zeros(p.dims().to_vec())?;
    for (i, (&pv, &yv)) in p.data().iter().zip(y.data()).enumerate() {
        let pc = clamp_prob(pv);
        let positive = yv >= 0.5;
        let (pt, at, sign) = if positive {
            (pc, focal_alpha, 1.0)
        } else {
            (1.0 - pc, 1.0 - focal_alpha, -1.0)
        };
        let w = (1.0 - pt).powf(focal_gamma);
        loss += -at * w * pt.ln();
        // d/dpt [-(1-pt)^g ln pt] = g (1-pt)^(g-1) ln pt - (1-pt)^g / pt,
        // and dpt/dp = sign.
        let dpt = if focal_gamma == 0.0 {
            -1.0 / pt
        } else {
            focal_gamma * (1.0 - pt).powf(focal_gamma - 1.0) * pt.ln() - w / pt
        };
        if pv > PROB_CLAMP && pv < 1.0 - PROB_CLAMP {
            grad.data_mut()[i] = at * dpt * sign / n;
        }
    }
    Ok((loss / n, grad))
}

/// Binary cross entropy: `mean of -[y log p + (1-y) log(1-p)]` with the
/// same clamping convention as [`focal_loss`].
pub fn bce_loss(p: &RealTensor, y: &RealTensor) -> Result<(f64, RealTensor)> {
    check_same_shape(p, y, "bce_loss")?;
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = RealTensor::zeros(p.dims().to_vec())?;
    for (i, (&pv, &yv)) in p.data().iter().zip(y.data()).enumerate() {
        let pc = clamp_prob(pv);
        loss += -(yv * pc.ln() + (1.0 - yv) * (1.0 - pc).ln());
        if pv > PROB_CLAMP && pv < 1.0 - PROB_CLAMP {
            grad.data_mut()[i] = (-yv / pc + (1.0 - yv) / (1.0 - pc)) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Predicted per-cell maps, probabilities for the two binary tasks.
#[derive(Debug, Clone)]
pub struct PredMaps {
    pub cls: RealTensor,
    pub reg: RealTensor,
    pub seg: RealTensor,
}

/// Gradients of [`multitask_loss`] with respect to the predicted maps.
#[derive(Debug, Clone)]
pub struct PredGrads {
    pub cls: RealTensor,
    pub reg: RealTensor,
    pub seg: RealTensor,
}

/// The combined loss: focal classification plus `alpha`-weighted smooth-L1
/// regression restricted to positive cells, plus `beta`-weighted BCE
/// segmentation. The regression targets are defined only where an object
/// sits, so empty cells contribute nothing to the regression term.
pub fn multitask_loss(
    pred: &PredMaps,
    gt: &RaMaps,
    cfg: &LossConfig,
) -> Result<(f64, PredGrads)> {
    gt.check_shapes()?;
    check_same_shape(&pred.cls, &gt.cls, "multitask_loss cls")?;
    check_same_shape(&pred.reg, &gt.reg, "multitask_loss reg")?;
    check_same_shape(&pred.seg, &gt.seg, "multitask_loss seg")?;

    let (focal, grad_cls) = focal_loss(&pred.cls, &gt.cls, cfg.focal_gamma, cfg.focal_alpha)?;
    let (bce, grad_seg) = bce_loss(&pred.seg, &gt.seg)?;

    // Masked smooth-L1 over positive cells; mean over the 2 * n_pos
    // residual entries so the weight does not depend on object count.
    let mut grad_reg = RealTensor::zeros(pred.reg.dims().to_vec())?;
    let n_pos = gt.cls.data().iter().filter(|&&c| c >= 0.5).count();
    let mut reg = 0.0;
    if n_pos > 0 {
        let count = (2 * n_pos) as f64;
        let delta = cfg.smooth_l1_delta;
        let (rbins, abins) = (gt.n_range_bins(), gt.n_azimuth_bins());
        for r in 0..rbins {
            for b in 0..abins {
                if gt.cls.at(&[r, b]) < 0.5 {
                    continue;
                }
                for c in 0..2 {
                    let e = pred.reg.at(&[r, b, c]) - gt.reg.at(&[r, b, c]);
                    let (l, g) = if e.abs() < delta {
                        (0.5 * e * e / delta, e / delta)
                    } else {
                        (e.abs() - 0.5 * delta, e.signum())
                    };
                    reg += l;
                    grad_reg.set(&[r, b, c], cfg.alpha * g / count);
                }
            }
        }
        reg /= count;
    }

    let total = focal + cfg.alpha * reg + cfg.beta * bce;
    let mut gseg = grad_seg;
    for v in gseg.data_mut() {
        *v *= cfg.beta;
    }
    Ok((
        total,
        PredGrads {
            cls: grad_cls,
            reg: grad_reg,
            seg: gseg,
        },
    ))
}

// ─── Detections and scoring ──────────────────────────────────────────────────

/// A decoded detection in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredDetection {
    pub range_m: f64,
    pub azimuth_rad: f64,
    pub score: f64,
}

/// Ground-truth position for scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObject {
    pub range_m: f64,
    pub azimuth_rad: f64,
}

/// Decodes detections from a classification probability map and a
/// regression map: cells at or above `threshold` that are 3x3 local maxima
/// emit `range = bin * range_bin_m + reg_r` and
/// `azimuth = grid angle + reg_az`.
pub fn decode_detections(
    cls: &RealTensor,
    reg: &RealTensor,
    threshold: f64,
    range_bin_m: f64,
    grid: &crate::grid::AzimuthGrid,
) -> Result<Vec<ScoredDetection>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("decode threshold must be in (0, 1)"));
    }
    if cls.dims().len() != 2 {
        return Err(Error::invalid("cls map must be 2-d"));
    }
    let (rbins, abins) = (cls.dims()[0], cls.dims()[1]);
    if reg.dims() != [rbins, abins, 2] {
        return Err(Error::invalid("reg map shape mismatch"));
    }
    if abins != grid.n_bins() {
        return Err(Error::invalid("azimuth grid does not match map"));
    }
    let mut out = Vec::new();
    for r in 0..rbins {
        for b in 0..abins {
            let p = cls.at(&[r, b]);
            if p < threshold {
                continue;
            }
            let mut local_max = true;
            for dr in -1i64..=1 {
                for db in -1i64..=1 {
                    if dr == 0 && db == 0 {
                        continue;
                    }
                    let (ri, bi) = (r as i64 + dr, b as i64 + db);
                    if ri >= 0 && bi >= 0 && (ri as usize) < rbins && (bi as usize) < abins
                        && cls.at(&[ri as usize, bi as usize]) > p
                    {
                        local_max = false;
                    }
                }
            }
            if !local_max {
                continue;
            }
            out.push(ScoredDetection {
                range_m: r as f64 * range_bin_m + reg.at(&[r, b, 0]),
                azimuth_rad: grid.angle_at(b) + reg.at(&[r, b, 1]),
                score: p,
            });
        }
    }
    Ok(out)
}

/// Tolerance box for detection matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchTolerance {
    pub range_m: f64,
    pub azimuth_rad: f64,
}

/// Detection metrics averaged across thresholds, plus range/azimuth errors
/// at the reference threshold 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub ap: f64,
    pub ar: f64,
    pub f1: f64,
    pub re_m: f64,
    pub ae_rad: f64,
    pub per_threshold: Vec<(f64, f64, f64, f64)>,
}

/// Greedy one-to-one matching: candidate pairs inside the tolerance box,
/// taken in ascending range-error order (ties broken by detection then
/// ground-truth index). Returns (det index, gt index) pairs.
fn match_frame(
    dets: &[ScoredDetection],
    gts: &[GtObject],
    tol: &MatchTolerance,
) -> Vec<(usize, usize)> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let dr = (d.range_m - g.range_m).abs();
            let da = (d.azimuth_rad - g.azimuth_rad).abs();
            if dr <= tol.range_m && da <= tol.azimuth_rad {
                cands.push((dr, i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut used_d = vec![false; dets.len()];
    let mut used_g = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !used_d[i] && !used_g[j] {
            used_d[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Scores detections against ground truth across a threshold sweep.
/// Precision/recall/F1 are computed per threshold by pooling counts over
/// frames, then averaged over thresholds.
pub fn score_detections(
    dets_per_frame: &[Vec<ScoredDetection>],
    gts_per_frame: &[Vec<GtObject>],
    tol: &MatchTolerance,
    thresholds: &[f64],
) -> Result<DetectionScores> {
    if thresholds.is_empty() {
        return Err(Error::invalid("threshold list must not be empty"));
    }
    if dets_per_frame.len() != gts_per_frame.len() {
        return Err(Error::invalid("frame count mismatch"));
    }
    if !(tol.range_m > 0.0 && tol.azimuth_rad > 0.0) {
        return Err(Error::invalid("match tolerances must be positive"));
    }

    let mut per_threshold = Vec::with_capacity(thresholds.len());
    let mut sums = (0.0, 0.0, 0.0);
    for &t in thresholds {
        let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
        for (dets, gts) in dets_per_frame.iter().zip(gts_per_frame) {
            let kept: Vec<ScoredDetection> =
                dets.iter().copied().filter(|d| d.score >= t).collect();
            let pairs = match_frame(&kept, gts, tol);
            tp += pairs.len();
            fp += kept.len() - pairs.len();
            fnn += gts.len() - pairs.len();
        }
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            1.0
        };
        let recall = if tp + fnn > 0 {
            tp as f64 / (tp + fnn) as f64
        } else {
            1.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_threshold.push((t, precision, recall, f1));
        sums.0 += precision;
        sums.1 += recall;
        sums.2 += f1;
    }

    // Range/azimuth errors over matches at the reference threshold.
    let (mut re_sum, mut ae_sum, mut n_match) = (0.0, 0.0, 0usize);
    for (dets, gts) in dets_per_frame.iter().zip(gts_per_frame) {
        let kept: Vec<ScoredDetection> =
            dets.iter().copied().filter(|d| d.score >= 0.5).collect();
        for (i, j) in match_frame(&kept, gts, tol) {
            re_sum += (kept[i].range_m - gts[j].range_m).abs();
            ae_sum += (kept[i].azimuth_rad - gts[j].azimuth_rad).abs();
            n_match += 1;
        }
    }
    let n = thresholds.len() as f64;
    Ok(DetectionScores {
        ap: sums.0 / n,
        ar: sums.1 / n,
        f1: sums.2 / n,
        re_m: if n_match > 0 { re_sum / n_match as f64 } else { 0.0 },
        ae_rad: if n_match > 0 { ae_sum / n_match as f64 } else { 0.0 },
        per_threshold,
    })
}

/// Default threshold sweep for detection scoring.
pub fn default_thresholds() -> Vec<f64> {
    (1..10).map(|i| i as f64 / 10.0).collect()
}

/// Intersection-over-union of two binary masks; frames whose union is
/// empty score 1.
pub fn miou(pred: &RealTensor, gt: &RealTensor) -> Result<f64> {
    check_same_shape(pred, gt, "miou")?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let p = p >= 0.5;
        let g = g >= 0.5;
        if p && g {
            inter += 1;
        }
        if p || g {
            union += 1;
        }
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean IOU across frames.
pub fn batch_miou(preds: &[RealTensor], gts: &[RealTensor]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::invalid("frame count mismatch"));
    }
    if preds.is_empty() {
        return Ok(1.0);
    }
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        sum += miou(p, g)?;
    }
    Ok(sum / preds.len() as f64)
}

// ─── Toy head ────────────────────────────────────────────────────────────────

/// Per-cell linear head, shared across cells: maps the Doppler profile of
/// a range x azimuth cell (plus a bias input) to a classification logit,
/// two regression residuals, and a segmentation logit.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// Shape `[4, n_doppler_bins + 1]`; the last column is the bias.
    pub weights: RealTensor,
    /// Fixed preconditioner dividing the RAD profile entries, so feature
    /// magnitudes are O(target amplitude) regardless of the chain's
    /// coherent gain.
    pub feature_scale: f64,
}

/// Coherent gain of the processing chain at its initial configuration:
/// window sums times antenna count, folded with the DFT scale factors.
/// Used as the head's fixed feature preconditioner.
pub fn feature_scale(radar: &RadarConfig, sp: &SpConfig) -> Result<f64> {
    use crate::tensor::DftScaling;
    let (wr, wd) = sp.windows(radar)?;
    let sum = |w: &RealTensor| w.data().iter().sum::<f64>();
    let (sr, sd, sa) = match sp.scaling {
        DftScaling::None => (1.0, 1.0, 1.0),
        DftScaling::Unitary => (
            1.0 / (radar.n_samples as f64).sqrt(),
            1.0 / (radar.n_chirps as f64).sqrt(),
            1.0 / (sp.n_azimuth_bins as f64).sqrt(),
        ),
    };
    let scale = sum(&wr) * sr * sum(&wd) * sd * radar.n_antennas as f64 * sa;
    Ok(scale.max(1e-9))
}

const ROW_CLS: usize = 0;
const ROW_REG_R: usize = 1;
const ROW_REG_AZ: usize = 2;
const ROW_SEG: usize = 3;
const HEAD_VERSION: u32 = 1;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl HeadParams {
    pub fn zeros(n_doppler_bins: usize, feature_scale: f64) -> Result<Self> {
        if !(feature_scale > 0.0) {
            return Err(Error::invalid("feature scale must be positive"));
        }
        // Rare-positive prior on the binary outputs: start the logits at
        // p ~ 0.01 so the dense negatives are already satisfied and the
        // gradient budget goes to the positives.
        let prior = -(0.99f64 / 0.01).ln();
        let mut weights = RealTensor::zeros(vec![4, n_doppler_bins + 1])?;
        weights.set(&[ROW_CLS, n_doppler_bins], prior);
        weights.set(&[ROW_SEG, n_doppler_bins], prior);
        Ok(Self {
            weights,
            feature_scale,
        })
    }

    pub fn n_doppler_bins(&self) -> usize {
        self.weights.dims()[1] - 1
    }

    /// Predicted maps over one RAD tensor: the feature of cell `(r, b)` is
    /// the Doppler profile `rad[r, :, b]`.
    pub fn forward(&self, rad: &RadTensor) -> Result<PredMaps> {
        let (nr, nd, nb) = (
            rad.n_range_bins(),
            rad.n_doppler_bins(),
            rad.n_azimuth_bins(),
        );
        if nd != self.n_doppler_bins() {
            return Err(Error::invalid(format!(
                "head expects {} Doppler bins, RAD has {nd}",
                self.n_doppler_bins()
            )));
        }
        let w = self.weights.data();
        let cols = nd + 1;
        let inv = 1.0 / self.feature_scale;
        let mut cls = RealTensor::zeros(vec![nr, nb])?;
        let mut reg = RealTensor::zeros(vec![nr, nb, 2])?;
        let mut seg = RealTensor::zeros(vec![nr, nb])?;
        for r in 0..nr {
            for b in 0..nb {
                let mut z = [
                    w[ROW_CLS * cols + nd],
                    w[ROW_REG_R * cols + nd],
                    w[ROW_REG_AZ * cols + nd],
                    w[ROW_SEG * cols + nd],
                ];
                for l in 0..nd {
                    let x = rad.data.at(&[r, l, b]) * inv;
                    z[0] += w[ROW_CLS * cols + l] * x;
                    z[1] += w[ROW_REG_R * cols + l] * x;
                    z[2] += w[ROW_REG_AZ * cols + l] * x;
                    z[3] += w[ROW_SEG * cols + l] * x;
                }
                cls.set(&[r, b], sigmoid(z[0]));
                reg.set(&[r, b, 0], z[1]);
                reg.set(&[r, b, 1], z[2]);
                seg.set(&[r, b], sigmoid(z[3]));
            }
        }
        Ok(PredMaps { cls, reg, seg })
    }

    /// Gradient of a map loss with respect to the head weights; also
    /// returns the gradient with respect to the RAD features when the
    /// signal-processing module is being fine-tuned too.
    fn backward(
        &self,
        rad: &RadTensor,
        pred: &PredMaps,
        grads: &PredGrads,
        want_rad_grad: bool,
    ) -> (RealTensor, Option<RealTensor>) {
        let (nr, nd, nb) = (
            rad.n_range_bins(),
            rad.n_doppler_bins(),
            rad.n_azimuth_bins(),
        );
        let cols = nd + 1;
        let w = self.weights.data();
        let inv = 1.0 / self.feature_scale;
        let mut dw = RealTensor::zeros(vec![4, cols]).unwrap();
        let mut drad = if want_rad_grad {
            Some(RealTensor::zeros(vec![nr, nd, nb]).unwrap())
        } else {
            None
        };
        for r in 0..nr {
            for b in 0..nb {
                // Chain through the sigmoids on the two binary outputs.
                let pc = pred.cls.at(&[r, b]);
                let ps = pred.seg.at(&[r, b]);
                let dz = [
                    grads.cls.at(&[r, b]) * pc * (1.0 - pc),
                    grads.reg.at(&[r, b, 0]),
                    grads.reg.at(&[r, b, 1]),
                    grads.seg.at(&[r, b]) * ps * (1.0 - ps),
                ];
                if dz.iter().all(|&d| d == 0.0) {
                    continue;
                }
                for (row, &dzr) in dz.iter().enumerate() {
                    if dzr == 0.0 {
                        continue;
                    }
                    let wrow = row * cols;
                    for l in 0..nd {
                        let x = rad.data.at(&[r, l, b]) * inv;
                        dw.data_mut()[wrow + l] += dzr * x;
                    }
                    dw.data_mut()[wrow + nd] += dzr;
                }
                if let Some(dr) = drad.as_mut() {
                    for l in 0..nd {
                        let mut s = 0.0;
                        for (row, &dzr) in dz.iter().enumerate() {
                            s += dzr * w[row * cols + l];
                        }
                        let off = (r * nd + l) * nb + b;
                        dr.data_mut()[off] += s * inv;
                    }
                }
            }
        }
        (dw, drad)
    }

    /// Writes `head.rten` plus a `head_meta.json` sidecar.
    pub fn save(&self, dir: impl AsRef<Path>, steps: u64, cfg_digest: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        tensor::write_real(dir.join("head.rten"), &self.weights)?;
        let meta = serde_json::json!({
            "version": HEAD_VERSION,
            "steps": steps,
            "cfg_digest": cfg_digest,
            "feature_scale": self.feature_scale,
        });
        let path = dir.join("head_meta.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta).unwrap())
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let weights = tensor::read_real(dir.join("head.rten"))?;
        if weights.dims().len() != 2 || weights.dims()[0] != 4 {
            return Err(Error::invalid("head weights must be 4 x (doppler+1)"));
        }
        let meta_path = dir.join("head_meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", meta_path.display())))?;
        let feature_scale = meta
            .get("feature_scale")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::invalid("head_meta.json lacks feature_scale"))?;
        Ok(Self {
            weights,
            feature_scale,
        })
    }
}

// ─── Fine-tuning ─────────────────────────────────────────────────────────────

/// Fine-tune settings; optimization knobs come from [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// Also propagate gradients into the signal-processing module.
    pub unfreeze_sp: bool,
    pub seg_radius: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                learning_rate: 1e-2,
                batch_size: 8,
                ..TrainConfig::default()
            },
            loss: LossConfig::default(),
            unfreeze_sp: false,
            seg_radius: crate::fmcw::DEFAULT_SEG_RADIUS,
        }
    }
}

/// One labeled frame prepared for head training.
struct FinetuneFrame {
    adc: AdcCube,
    gt: RaMaps,
    gt_objects: Vec<GtObject>,
}

/// Detection and segmentation quality of the head on a set of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEval {
    pub detection: DetectionScores,
    pub miou: f64,
}

/// Everything a fine-tune run produces.
pub struct FinetuneOutcome {
    pub head: HeadParams,
    /// The signal-processing parameters after the run (identical to the
    /// input when the module stayed frozen).
    pub sp_params: LearnableSpParams,
    pub history: Vec<(u64, f64)>,
    pub eval: HeadEval,
}

fn prepare_frames(
    manifest: &DatasetManifest,
    radar: &RadarConfig,
    sp: &SpConfig,
    seg_radius: f64,
) -> Result<Vec<FinetuneFrame>> {
    let mut recs = manifest.records.clone();
    recs.sort_by_key(|r| r.scene_id);
    recs.par_iter()
        .map(|rec| {
            let adc = AdcCube::new(tensor::read_complex(manifest.resolve(&rec.adc_path))?, radar)?;
            let scene = scene_of_record(rec);
            let gt = rasterize_labels(&scene, radar, radar.n_samples, sp.n_azimuth_bins, seg_radius)?;
            let gt_objects = rec
                .targets
                .iter()
                .map(|t| GtObject {
                    range_m: t.range_m,
                    azimuth_rad: t.azimuth_rad,
                })
                .collect();
            Ok(FinetuneFrame {
                adc,
                gt,
                gt_objects,
            })
        })
        .collect()
}

/// Scores the head over frames: detections decoded at a permissive
/// threshold and swept by the scorer, segmentation masks at 0.5.
pub fn evaluate_head(
    head: &HeadParams,
    sp_params: &LearnableSpParams,
    frames: &[(RaMaps, Vec<GtObject>, AdcCube)],
    radar: &RadarConfig,
    sp: &SpConfig,
    tol: &MatchTolerance,
) -> Result<HeadEval> {
    let grid = radar.azimuth_grid(sp.n_azimuth_bins);
    let range_bin_m = radar.max_range() / radar.n_samples as f64;
    let per_frame: Result<Vec<(Vec<ScoredDetection>, Vec<GtObject>, f64)>> = frames
        .par_iter()
        .map(|(gt, gts, adc)| {
            let (rad, _) = learnable::forward(sp_params, adc)?;
            let pred = head.forward(&rad)?;
            let dets = decode_detections(&pred.cls, &pred.reg, 0.1, range_bin_m, &grid)?;
            let iou = miou(&pred.seg, &gt.seg)?;
            Ok((dets, gts.clone(), iou))
        })
        .collect();
    let per_frame = per_frame?;
    let dets: Vec<Vec<ScoredDetection>> = per_frame.iter().map(|f| f.0.clone()).collect();
    let gts: Vec<Vec<GtObject>> = per_frame.iter().map(|f| f.1.clone()).collect();
    let mean_iou = if per_frame.is_empty() {
        1.0
    } else {
        per_frame.iter().map(|f| f.2).sum::<f64>() / per_frame.len() as f64
    };
    Ok(HeadEval {
        detection: score_detections(&dets, &gts, tol, &default_thresholds())?,
        miou: mean_iou,
    })
}

/// Trains the toy head on a labeled dataset with the multi-task loss,
/// consuming RAD features from a distilled checkpoint. With
/// `unfreeze_sp` the gradients also flow into the signal-processing
/// module. The last tenth of the scenes is held out and scored after
/// training.
pub fn finetune_toy_head(
    sp_params: &LearnableSpParams,
    manifest: &DatasetManifest,
    radar: &RadarConfig,
    sp: &SpConfig,
    cfg: &FinetuneConfig,
    steps: u64,
    tol: &MatchTolerance,
) -> Result<FinetuneOutcome> {
    cfg.train.validate()?;
    let frames = prepare_frames(manifest, radar, sp, cfg.seg_radius)?;
    if frames.is_empty() {
        return Err(Error::invalid("manifest has no scenes to fine-tune on"));
    }
    let n_hold = frames.len() / 10;
    let split = frames.len() - n_hold;

    let mut head = HeadParams::zeros(radar.n_chirps, feature_scale(radar, sp)?)?;
    let mut head_opt = FlatAdam::new(head.weights.len());
    let mut sp_now = sp_params.clone();
    let mut sp_opt = AdamState::new(&sp_now);

    // Frozen module: features are fixed, compute them once.
    let frozen_rad: Option<Vec<RadTensor>> = if cfg.unfreeze_sp {
        None
    } else {
        let rads: Result<Vec<RadTensor>> = frames[..split]
            .par_iter()
            .map(|f| learnable::forward(&sp_now, &f.adc).map(|(rad, _)| rad))
            .collect();
        Some(rads?)
    };

    let mut history = Vec::new();
    let n_train = split.max(1);
    for step in 1..=steps {
        // Same seeded epoch-shuffle scheme as the distillation loop.
        let mut batch_idx = Vec::with_capacity(cfg.train.batch_size);
        for k in 0..cfg.train.batch_size as u64 {
            let c = (step - 1) * cfg.train.batch_size as u64 + k;
            let epoch = c / n_train as u64;
            let pos = (c % n_train as u64) as usize;
            let mut order: Vec<usize> = (0..n_train).collect();
            if cfg.train.shuffle {
                let mut rng = SeededRng::new(cfg.train.seed).substream(epoch);
                rng.shuffle(&mut order);
            }
            batch_idx.push(order[pos]);
        }

        let per: Result<Vec<(f64, RealTensor, Option<learnable::Gradients>)>> = batch_idx
            .par_iter()
            .map(|&i| {
                let frame = &frames[i];
                let (rad, cache) = match &frozen_rad {
                    Some(rads) => (rads[i].clone(), None),
                    None => {
                        let (rad, cache) = learnable::forward(&sp_now, &frame.adc)?;
                        (rad, Some(cache))
                    }
                };
                let pred = head.forward(&rad)?;
                let (loss, grads) = multitask_loss(&pred, &frame.gt, &cfg.loss)?;
                let (dw, drad) = head.backward(&rad, &pred, &grads, cfg.unfreeze_sp);
                let sp_grads = match (cache, drad) {
                    (Some(cache), Some(drad)) => {
                        Some(learnable::backward(&sp_now, &cache, &drad)?)
                    }
                    _ => None,
                };
                Ok((loss, dw, sp_grads))
            })
            .collect();
        let per = per?;

        let scale = 1.0 / per.len() as f64;
        let mut loss = 0.0;
        let mut dw = RealTensor::zeros(vec![4, radar.n_chirps + 1])?;
        let mut sp_grads = cfg.unfreeze_sp.then(|| sp_now.zeros_like());
        for (l, g, sg) in per {
            loss += l * scale;
            for (d, &s) in dw.data_mut().iter_mut().zip(g.data()) {
                *d += s * scale;
            }
            if let (Some(acc), Some(sg)) = (sp_grads.as_mut(), sg) {
                for i in 0..learnable::PART_NAMES.len() {
                    for (d, &s) in acc.part_mut(i).iter_mut().zip(sg.part(i)) {
                        *d += s * scale;
                    }
                }
            }
        }
        if !loss.is_finite() {
            break;
        }
        let grads: Vec<f64> = dw.data().to_vec();
        head_opt.step(head.weights.data_mut(), &grads, &cfg.train)?;
        if let Some(sg) = &sp_grads {
            adam_step(&mut sp_now, sg, &mut sp_opt, &cfg.train)?;
        }
        history.push((step, loss));
    }

    // Datasets too small to spare a holdout evaluate on everything.
    let eval_slice: &[FinetuneFrame] = if n_hold == 0 { &frames } else { &frames[split..] };
    let eval_frames: Vec<(RaMaps, Vec<GtObject>, AdcCube)> = eval_slice
        .iter()
        .map(|f| (f.gt.clone(), f.gt_objects.clone(), f.adc.clone()))
        .collect();
    let eval = evaluate_head(&head, &sp_now, &eval_frames, radar, sp, tol)?;

    Ok(FinetuneOutcome {
        head,
        sp_params: sp_now,
        history,
        eval,
    })
}

/// Default matching tolerances for desk-scale scoring: two range bins and
/// a bit over one azimuth grid cell at broadside.
pub fn default_tolerance(radar: &RadarConfig, sp: &SpConfig) -> MatchTolerance {
    let grid = radar.azimuth_grid(sp.n_azimuth_bins);
    MatchTolerance {
        range_m: 2.0 * radar.max_range() / radar.n_samples as f64,
        azimuth_rad: 1.5 * (grid.angle_at(sp.n_azimuth_bins / 2 + 1) - grid.angle_at(sp.n_azimuth_bins / 2)),
    }
}
