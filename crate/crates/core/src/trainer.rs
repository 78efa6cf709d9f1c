//! Distillation of the classical chain into the learnable module.
//!
//! The loop consumes (ADC, RAD) pairs from a labeled manifest, minimizes
//! the smooth-L1 distance between predicted and teacher RAD tensors with
//! Adam, and tracks relative absolute error on a held-out split (the last
//! tenth of the scenes by id). Runs are deterministic: the shuffle order
//! of epoch `e` comes from substream `e` of the training seed, batch
//! gradients reduce in element order, and checkpoints carry no wall-clock
//! state, so identical seeds give byte-identical artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmcw::{AdcCube, DatasetManifest, RadarConfig};
use crate::learnable::{
    self, adam_file_names, backward, forward, init_params, params_load, params_save,
    CheckpointMeta, Gradients, InitScheme, LearnableSpParams, PART_NAMES,
};
use crate::teacher::{RadTensor, SpConfig};
use crate::tensor::{self, RealTensor, SeededRng};

// ─── Configuration ───────────────────────────────────────────────────────────

/// Optimization hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub smooth_l1_delta: f64,
    pub eval_every: u64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 4e-4,
            batch_size: 8,
            max_steps: 5000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            smooth_l1_delta: 1.0,
            eval_every: 250,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("adam {name} must be in (0, 1)")));
            }
        }
        if !(self.smooth_l1_delta > 0.0) {
            return Err(Error::invalid("smooth-L1 delta must be positive"));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::invalid("batch_size and eval_every must be >= 1"));
        }
        Ok(())
    }
}

// ─── Losses and metrics ──────────────────────────────────────────────────────

/// Smooth-L1 (Huber) loss in delta-normalized form: per entry
/// `0.5 e^2 / delta` for `|e| < delta`, else `|e| - 0.5 delta`, with
/// `e = pred - target`. Returns the mean and the exact gradient with
/// respect to `pred` (already divided by the entry count).
pub fn smooth_l1(
    pred: &RealTensor,
    target: &RealTensor,
    delta: f64,
) -> Result<(f64, RealTensor)> {
    if pred.dims() != target.dims() {
        return Err(Error::invalid(format!(
            "smooth_l1 shape mismatch {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = RealTensor::zeros(pred.dims().to_vec())?;
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let e = p - t;
        if e.abs() < delta {
            loss += 0.5 * e * e / delta;
            grad.data_mut()[i] = e / delta / n;
        } else {
            loss += e.abs() - 0.5 * delta;
            grad.data_mut()[i] = e.signum() / n;
        }
    }
    Ok((loss / n, grad))
}

/// Relative absolute error per entry, `|y - yhat| / (|y| + eps)`, with its
/// mean and max.
pub fn rae(
    target: &RealTensor,
    pred: &RealTensor,
    eps: f64,
) -> Result<(RealTensor, f64, f64)> {
    if pred.dims() != target.dims() {
        return Err(Error::invalid(format!(
            "rae shape mismatch {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("rae eps must be positive"));
    }
    let mut per = RealTensor::zeros(target.dims().to_vec())?;
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for (i, (&y, &yh)) in target.data().iter().zip(pred.data()).enumerate() {
        let r = (y - yh).abs() / (y.abs() + eps);
        per.data_mut()[i] = r;
        sum += r;
        max = max.max(r);
    }
    let mean = sum / target.len() as f64;
    Ok((per, mean, max))
}

/// Default denominator guard for RAE; teacher RAD entries can be exactly
/// zero on noiseless synthetic scenes.
pub const RAE_EPS: f64 = 1e-8;

// ─── Adam ────────────────────────────────────────────────────────────────────

/// Bias-corrected Adam update of one flat buffer.
#[allow(clippy::too_many_arguments)]
fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &TrainConfig,
) {
    let b1 = cfg.adam_beta1;
    let b2 = cfg.adam_beta2;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        p[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
    }
}

/// First- and second-moment buffers for the module parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &LearnableSpParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One Adam step over every parameter tensor. Non-finite gradients abort
/// the step with the state unchanged.
pub fn adam_step(
    params: &mut LearnableSpParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if !params.same_shapes(grads) {
        return Err(Error::invalid("gradient shapes do not match parameters"));
    }
    for i in 0..PART_NAMES.len() {
        if grads.part(i).iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite gradient in {}",
                PART_NAMES[i]
            )));
        }
    }
    state.t += 1;
    for i in 0..PART_NAMES.len() {
        // Split borrows: copy gradient slice view, mutate params/moments.
        let t = state.t;
        let g = grads.part(i);
        adam_update_split(params.part_mut(i), g, state.m.part_mut(i), state.v.part_mut(i), t, cfg);
    }
    Ok(())
}

fn adam_update_split(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &TrainConfig,
) {
    adam_update(p, g, m, v, t, cfg);
}

/// Adam over a single flat parameter vector; used by the toy head.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl FlatAdam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid("FlatAdam length mismatch"));
        }
        if grads.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("non-finite gradient"));
        }
        self.t += 1;
        adam_update(params, grads, &mut self.m, &mut self.v, self.t, cfg);
        Ok(())
    }
}

// ─── Data loading ────────────────────────────────────────────────────────────

/// One (ADC, teacher RAD) training pair.
#[derive(Debug)]
pub struct DistillPair {
    pub scene_id: u64,
    pub adc: AdcCube,
    pub rad: RadTensor,
}

/// Loads every pair of a labeled manifest into memory, failing fast with
/// the offending path. Records carrying a teacher error are rejected.
pub fn load_pairs(manifest: &DatasetManifest, radar: &RadarConfig) -> Result<Vec<DistillPair>> {
    manifest.check_unique_ids()?;
    let mut pairs: Vec<DistillPair> = manifest
        .records
        .par_iter()
        .map(|rec| {
            if let Some(err) = &rec.error {
                return Err(Error::invalid(format!(
                    "scene {} carries a teacher error: {err}",
                    rec.scene_id
                )));
            }
            let rad_rel = rec.rad_path.as_ref().ok_or_else(|| {
                Error::invalid(format!(
                    "scene {} has no rad_path; run the teacher first",
                    rec.scene_id
                ))
            })?;
            let adc = AdcCube::new(tensor::read_complex(manifest.resolve(&rec.adc_path))?, radar)?;
            let rad = RadTensor::new(tensor::read_real(manifest.resolve(rad_rel))?)?;
            Ok(DistillPair {
                scene_id: rec.scene_id,
                adc,
                rad,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    pairs.sort_by_key(|p| p.scene_id);
    Ok(pairs)
}

/// Splits pairs into (train, holdout): the last tenth of the scenes by id
/// order. Datasets too small to spare a tenth evaluate on the training
/// set.
pub fn split_holdout(pairs: &[DistillPair]) -> (&[DistillPair], &[DistillPair]) {
    let n_hold = pairs.len() / 10;
    let split = pairs.len() - n_hold;
    let (train, hold) = pairs.split_at(split);
    if hold.is_empty() {
        (train, train)
    } else {
        (train, hold)
    }
}

// ─── Distillation ────────────────────────────────────────────────────────────

/// One evaluation record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub train_loss: f64,
    pub mean_rae: f64,
    pub max_rae: f64,
    pub wall_ms: u64,
}

/// Evaluation history of a run; steps strictly increase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
}

impl TrainHistory {
    pub fn push(&mut self, rec: EvalRecord) {
        if let Some(last) = self.records.last() {
            assert!(rec.step > last.step, "history steps must increase");
        }
        self.records.push(rec);
    }

    /// CSV with header `step,train_loss,mean_rae,max_rae,wall_ms`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("step,train_loss,mean_rae,max_rae,wall_ms\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.train_loss, r.mean_rae, r.max_rae, r.wall_ms
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Summary of a distillation run; everything in it is deterministic given
/// the seeds (no timing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub scheme: InitScheme,
    pub seed: u64,
    pub steps_run: u64,
    pub best_step: u64,
    pub best_mean_rae: f64,
    pub final_mean_rae: f64,
    pub final_max_rae: f64,
    pub diverged: bool,
    pub cfg_digest: String,
}

/// Everything a distillation run leaves behind.
pub struct DistillOutcome {
    pub params: LearnableSpParams,
    pub best_params: LearnableSpParams,
    pub init_snapshot: LearnableSpParams,
    pub history: TrainHistory,
    pub report: DistillReport,
    pub checkpoint_best: PathBuf,
    pub checkpoint_final: PathBuf,
}

/// Mean and max RAE of the module over a set of pairs.
fn eval_rae(params: &LearnableSpParams, pairs: &[DistillPair]) -> Result<(f64, f64)> {
    let stats: Result<Vec<(f64, f64)>> = pairs
        .par_iter()
        .map(|pair| {
            let (pred, _) = forward(params, &pair.adc)?;
            let (_, mean, max) = rae(&pair.rad.data, &pred.data, RAE_EPS)?;
            Ok((mean, max))
        })
        .collect();
    let stats = stats?;
    let mean = stats.iter().map(|s| s.0).sum::<f64>() / stats.len().max(1) as f64;
    let max = stats.iter().map(|s| s.1).fold(0.0f64, f64::max);
    Ok((mean, max))
}

/// Training-stream sample index: epoch `e` uses shuffle substream `e`, so
/// the data order depends only on (seed, shuffle flag, step), not on how
/// many times the run was interrupted and resumed.
fn epoch_order(n: usize, epoch: u64, seed: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = SeededRng::new(seed).substream(epoch);
        rng.shuffle(&mut order);
    }
    order
}

/// Mean gradient and loss over one batch; elements evaluated in parallel,
/// reduced in batch order.
fn batch_grad(
    params: &LearnableSpParams,
    batch: &[&DistillPair],
    delta: f64,
) -> Result<(f64, Gradients)> {
    let per: Result<Vec<(f64, Gradients)>> = batch
        .par_iter()
        .map(|pair| {
            let (pred, cache) = forward(params, &pair.adc)?;
            let (loss, grad_rad) = smooth_l1(&pred.data, &pair.rad.data, delta)?;
            let grads = backward(params, &cache, &grad_rad)?;
            Ok((loss, grads))
        })
        .collect();
    let per = per?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut acc = params.zeros_like();
    for (l, g) in per {
        loss += l * scale;
        for i in 0..PART_NAMES.len() {
            let dst = acc.part_mut(i);
            for (d, &s) in dst.iter_mut().zip(g.part(i)) {
                *d += s * scale;
            }
        }
    }
    Ok((loss, acc))
}

/// Distills the teacher into the learnable module.
///
/// Initializes per `scheme` (or resumes from `resume_from`), then loops:
/// draw the next seeded batch, forward, smooth-L1 against the teacher RAD,
/// backward, Adam. The holdout split is evaluated at step 0, every
/// `eval_every` steps, and at the final step; the checkpoint with the best
/// holdout mean RAE is kept alongside the final (resumable) one. A
/// non-finite loss aborts the run with the best checkpoint retained.
pub fn distill(
    manifest: &DatasetManifest,
    radar: &RadarConfig,
    sp: &SpConfig,
    scheme: &InitScheme,
    cfg: &TrainConfig,
    out_dir: impl AsRef<Path>,
    resume_from: Option<&Path>,
) -> Result<DistillOutcome> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    // The digest covers what the checkpoint is compatible with: the radar
    // geometry and chain configuration, not the optimizer settings.
    let cfg_digest = crate::config::digest(&(radar, sp))?;

    let pairs = load_pairs(manifest, radar)?;
    if pairs.is_empty() {
        return Err(Error::invalid("manifest has no scenes to train on"));
    }
    let (train, holdout) = split_holdout(&pairs);

    let (mut params, mut adam, start_step) = match resume_from {
        None => {
            let p = init_params(scheme, radar, sp)?;
            let a = AdamState::new(&p);
            (p, a, 0u64)
        }
        Some(dir) => {
            let (p, meta) = params_load(dir)?;
            let a = load_adam_state(dir, &p)?;
            (p, a, meta.step)
        }
    };
    let init_snapshot = params.clone();

    let started = Instant::now();
    let mut history = TrainHistory::default();
    let mut best_params = params.clone();
    let mut best = (start_step, f64::INFINITY);
    let mut diverged = false;
    let mut last_eval = (f64::NAN, f64::NAN);

    let eval_and_log = |params: &LearnableSpParams,
                            step: u64,
                            train_loss: f64,
                            history: &mut TrainHistory,
                            best: &mut (u64, f64),
                            best_params: &mut LearnableSpParams|
     -> Result<(f64, f64)> {
        let (mean, max) = eval_rae(params, holdout)?;
        history.push(EvalRecord {
            step,
            train_loss,
            mean_rae: mean,
            max_rae: max,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        if mean < best.1 {
            *best = (step, mean);
            *best_params = params.clone();
        }
        Ok((mean, max))
    };

    if cfg.max_steps > start_step {
        // Step-0 record: loss of the upcoming batch, no update.
        let first_batch = collect_batch(train, start_step, cfg);
        let (loss0, _) = batch_grad(&params, &first_batch, cfg.smooth_l1_delta)?;
        last_eval = eval_and_log(
            &params,
            start_step,
            loss0,
            &mut history,
            &mut best,
            &mut best_params,
        )?;
    } else {
        best_params = params.clone();
        best = (start_step, f64::NAN);
    }

    let mut step = start_step;
    while step < cfg.max_steps {
        step += 1;
        let batch = collect_batch(train, step - 1, cfg);
        let (loss, grads) = batch_grad(&params, &batch, cfg.smooth_l1_delta)?;
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        if let Err(e) = adam_step(&mut params, &grads, &mut adam, cfg) {
            match e {
                Error::Numerical(_) => {
                    diverged = true;
                    break;
                }
                other => return Err(other),
            }
        }
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            last_eval = eval_and_log(
                &params,
                step,
                loss,
                &mut history,
                &mut best,
                &mut best_params,
            )?;
        }
    }

    // Persist: best and final checkpoints, history, report.
    let best_dir = out_dir.join("checkpoint-best");
    let final_dir = out_dir.join("checkpoint-final");
    let mut meta_best = CheckpointMeta::new(*scheme, best.0, cfg_digest.clone());
    meta_best.loss_history_path = Some("../history.csv".into());
    params_save(&best_dir, &best_params, &meta_best)?;
    let mut meta_final = CheckpointMeta::new(*scheme, step, cfg_digest.clone());
    meta_final.loss_history_path = Some("../history.csv".into());
    params_save(&final_dir, &params, &meta_final)?;
    save_adam_state(&final_dir, &adam)?;
    history.write_csv(out_dir.join("history.csv"))?;

    let report = DistillReport {
        scheme: *scheme,
        seed: cfg.seed,
        steps_run: step,
        best_step: best.0,
        best_mean_rae: best.1,
        final_mean_rae: last_eval.0,
        final_max_rae: last_eval.1,
        diverged,
        cfg_digest,
    };
    let report_path = out_dir.join("report.json");
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    std::fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;

    Ok(DistillOutcome {
        params,
        best_params,
        init_snapshot,
        history,
        report,
        checkpoint_best: best_dir,
        checkpoint_final: final_dir,
    })
}

/// Batch for step index `s` (0-based): global sample counter positions
/// `s * batch .. (s+1) * batch`, mapped through the per-epoch shuffle.
fn collect_batch<'a>(
    train: &'a [DistillPair],
    step_index: u64,
    cfg: &TrainConfig,
) -> Vec<&'a DistillPair> {
    let n = train.len() as u64;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut order: Option<(u64, Vec<usize>)> = None;
    for k in 0..cfg.batch_size as u64 {
        let c = step_index * cfg.batch_size as u64 + k;
        let epoch = c / n;
        let pos = (c % n) as usize;
        if order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            order = Some((
                epoch,
                epoch_order(train.len(), epoch, cfg.seed, cfg.shuffle),
            ));
        }
        batch.push(&train[order.as_ref().unwrap().1[pos]]);
    }
    batch
}

fn save_adam_state(dir: &Path, adam: &AdamState) -> Result<()> {
    for (i, name) in PART_NAMES.iter().enumerate() {
        let m = RealTensor::new(vec![adam.m.part(i).len()], adam.m.part(i).to_vec())?;
        let v = RealTensor::new(vec![adam.v.part(i).len()], adam.v.part(i).to_vec())?;
        tensor::write_real(dir.join(format!("adam_m_{name}.rten")), &m)?;
        tensor::write_real(dir.join(format!("adam_v_{name}.rten")), &v)?;
    }
    let t_path = dir.join("adam_t.json");
    std::fs::write(&t_path, format!("{}", adam.t)).map_err(|e| Error::io(&t_path, e))
}

fn load_adam_state(dir: &Path, params: &LearnableSpParams) -> Result<AdamState> {
    let mut adam = AdamState::new(params);
    let names = adam_file_names();
    if !dir.join(&names[0]).exists() {
        return Err(Error::invalid(format!(
            "checkpoint {} is not resumable (no optimizer state)",
            dir.display()
        )));
    }
    for (i, name) in PART_NAMES.iter().enumerate() {
        let m = tensor::read_real(dir.join(format!("adam_m_{name}.rten")))?;
        let v = tensor::read_real(dir.join(format!("adam_v_{name}.rten")))?;
        if m.len() != adam.m.part(i).len() || v.len() != adam.v.part(i).len() {
            return Err(Error::invalid("optimizer state shape mismatch"));
        }
        adam.m.part_mut(i).copy_from_slice(m.data());
        adam.v.part_mut(i).copy_from_slice(v.data());
    }
    let t_path = dir.join("adam_t.json");
    let text = std::fs::read_to_string(&t_path).map_err(|e| Error::io(&t_path, e))?;
    adam.t = text
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", t_path.display())))?;
    Ok(adam)
}

// ─── Ablation ────────────────────────────────────────────────────────────────

/// One row of the initialization ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scheme: InitScheme,
    pub status: String,
    pub final_mean_rae: f64,
    pub final_max_rae: f64,
    pub best_mean_rae: f64,
    /// Mean |trained - init| per parameter buffer, PART_NAMES order.
    pub drift: Vec<f64>,
}

/// Runs [`distill`] once per scheme under identical budgets and data
/// seeds, collecting final errors and weight drift. Failed (diverged)
/// runs are reported as rows, not errors.
pub fn init_ablation(
    manifest: &DatasetManifest,
    radar: &RadarConfig,
    sp: &SpConfig,
    schemes: &[InitScheme],
    cfg: &TrainConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<AblationRow>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::with_capacity(schemes.len());
    for scheme in schemes {
        let run_dir = out_dir.join(scheme.label());
        let row = match distill(manifest, radar, sp, scheme, cfg, &run_dir, None) {
            Ok(outcome) => {
                let drift = learnable::weight_drift(&outcome.init_snapshot, &outcome.params)?
                    .into_iter()
                    .map(|(_, d)| d)
                    .collect();
                AblationRow {
                    scheme: *scheme,
                    status: if outcome.report.diverged {
                        "diverged".into()
                    } else {
                        "ok".into()
                    },
                    final_mean_rae: outcome.report.final_mean_rae,
                    final_max_rae: outcome.report.final_max_rae,
                    best_mean_rae: outcome.report.best_mean_rae,
                    drift,
                }
            }
            Err(e) => AblationRow {
                scheme: *scheme,
                status: format!("failed: {e}"),
                final_mean_rae: f64::NAN,
                final_max_rae: f64::NAN,
                best_mean_rae: f64::NAN,
                drift: vec![f64::NAN; PART_NAMES.len()],
            },
        };
        rows.push(row);
    }
    write_ablation_csv(&rows, out_dir.join("ablation.csv"))?;
    Ok(rows)
}

/// CSV: scheme, gamma, seed, status, errors, then one drift column per
/// parameter buffer.
pub fn write_ablation_csv(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("scheme,gamma,seed,status,final_mean_rae,final_max_rae,best_mean_rae");
    for name in PART_NAMES {
        out.push_str(&format!(",drift_{name}"));
    }
    out.push('\n');
    for row in rows {
        let gamma = match row.scheme.variant {
            learnable::InitVariant::PerturbedDft { gamma } => format!("{gamma}"),
            _ => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            row.scheme.label(),
            gamma,
            row.scheme.seed,
            row.status,
            row.final_mean_rae,
            row.final_max_rae,
            row.best_mean_rae
        ));
        for d in &row.drift {
            out.push_str(&format!(",{d}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmcw::{self, ScenePolicy};
    use crate::learnable::InitVariant;
    use crate::teacher::{self, AoaKind};

    fn tensor_of(data: Vec<f64>) -> RealTensor {
        let n = data.len();
        RealTensor::new(vec![n], data).unwrap()
    }

    #[test]
    fn smooth_l1_branch_values_and_grads() {
        let (loss, grad) = smooth_l1(&tensor_of(vec![0.5]), &tensor_of(vec![0.0]), 1.0).unwrap();
        assert!((loss - 0.125).abs() < 1e-15);
        assert!((grad.data()[0] - 0.5).abs() < 1e-15);

        let (loss, grad) = smooth_l1(&tensor_of(vec![2.0]), &tensor_of(vec![0.0]), 1.0).unwrap();
        assert!((loss - 1.5).abs() < 1e-15);
        assert!((grad.data()[0] - 1.0).abs() < 1e-15);

        let x = tensor_of(vec![1.0, -2.0, 0.3]);
        let (loss, grad) = smooth_l1(&x, &x, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));

        assert!(smooth_l1(&x, &tensor_of(vec![1.0]), 1.0).is_err());
        assert!(smooth_l1(&x, &x, 0.0).is_err());
    }

    #[test]
    fn rae_identities() {
        let t = tensor_of(vec![1.0, 2.0, 4.0]);
        let (_, mean, max) = rae(&t, &t, 1e-8).unwrap();
        assert_eq!((mean, max), (0.0, 0.0));

        let double = tensor_of(vec![2.0, 4.0, 8.0]);
        let (_, mean, max) = rae(&t, &double, 1e-12).unwrap();
        assert!((mean - 1.0).abs() < 1e-9);
        assert!((max - 1.0).abs() < 1e-9);
        assert!(max >= mean);

        // Zero target entry: the eps guard keeps the ratio finite (and
        // huge), which is exactly why the guard exists.
        let (per, _, _) = rae(&tensor_of(vec![0.0]), &tensor_of(vec![1.0]), 1e-8).unwrap();
        assert!((per.data()[0] - 1e8).abs() < 1.0);
    }

    #[test]
    fn adam_zero_grad_fresh_state_is_identity() {
        let radar = RadarConfig {
            n_samples: 8,
            n_chirps: 8,
            n_antennas: 4,
            ..RadarConfig::default()
        };
        let sp = SpConfig {
            n_azimuth_bins: 8,
            ..SpConfig::default()
        };
        let mut p = init_params(&InitScheme::default(), &radar, &sp).unwrap();
        let before = p.clone();
        let zero = p.zeros_like();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &zero, &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut params = vec![1.0; 4];
        let grads = vec![0.3; 4];
        let mut opt = FlatAdam::new(4);
        opt.step(&mut params, &grads, &cfg).unwrap();
        for &p in &params {
            let moved = 1.0 - p;
            assert!((moved - cfg.learning_rate).abs() < 1e-6, "moved {moved}");
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients_without_mutation() {
        let cfg = TrainConfig::default();
        let mut params = vec![1.0; 2];
        let mut opt = FlatAdam::new(2);
        let err = opt.step(&mut params, &[f64::NAN, 0.0], &cfg);
        assert!(err.is_err());
        assert_eq!(params, vec![1.0; 2]);
        assert_eq!(opt.t, 0);
    }

    #[test]
    fn adam_minimizes_a_convex_quadratic() {
        // f(x) = |x|^2 from the all-ones start at lr 1e-2.
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let mut x = vec![1.0; 16];
        let mut opt = FlatAdam::new(16);
        for _ in 0..2000 {
            let grads: Vec<f64> = x.iter().map(|&v| 2.0 * v).collect();
            opt.step(&mut x, &grads, &cfg).unwrap();
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "final norm {norm}");
    }

    fn labeled_dataset(dir: &Path, n: usize, seed: u64) -> (RadarConfig, SpConfig, DatasetManifest) {
        let radar = RadarConfig::default();
        let sp = SpConfig::default();
        let manifest =
            fmcw::synth_dataset(n, &radar, (1, 3), ScenePolicy::Random, seed, dir).unwrap();
        let labeled = teacher::teacher_batch(&manifest, &radar, &sp, AoaKind::Fft, dir).unwrap();
        (radar, sp, labeled)
    }

    #[test]
    fn distill_zero_steps_checkpoints_the_initialization() {
        let dir = std::env::temp_dir().join("trainer-zero-steps");
        let _ = std::fs::remove_dir_all(&dir);
        let (radar, sp, manifest) = labeled_dataset(&dir, 4, 1);
        let scheme = InitScheme {
            variant: InitVariant::PerturbedDft { gamma: 0.1 },
            seed: 5,
        };
        let cfg = TrainConfig {
            max_steps: 0,
            ..TrainConfig::default()
        };
        let out = distill(&manifest, &radar, &sp, &scheme, &cfg, dir.join("run"), None).unwrap();
        assert!(out.history.records.is_empty());
        let expect = init_params(&scheme, &radar, &sp).unwrap();
        assert_eq!(out.params, expect);
        let (loaded, meta) = params_load(&out.checkpoint_final).unwrap();
        assert_eq!(loaded, expect);
        assert_eq!(meta.step, 0);
    }

    #[test]
    fn distill_exact_init_has_negligible_step_zero_rae() {
        let dir = std::env::temp_dir().join("trainer-exact-step0");
        let _ = std::fs::remove_dir_all(&dir);
        let (radar, sp, manifest) = labeled_dataset(&dir, 6, 3);
        let scheme = InitScheme {
            variant: InitVariant::ExactDft,
            seed: 0,
        };
        let cfg = TrainConfig {
            max_steps: 1,
            batch_size: 2,
            eval_every: 1,
            ..TrainConfig::default()
        };
        let out = distill(&manifest, &radar, &sp, &scheme, &cfg, dir.join("run"), None).unwrap();
        assert!(
            out.history.records[0].mean_rae < 1e-6,
            "step-0 RAE {}",
            out.history.records[0].mean_rae
        );
        assert!(out.history.records[0].train_loss < 1e-10);
    }

    #[test]
    fn distill_is_deterministic_and_resumable() {
        let dir = std::env::temp_dir().join("trainer-determinism");
        let _ = std::fs::remove_dir_all(&dir);
        let (radar, sp, manifest) = labeled_dataset(&dir, 8, 7);
        let scheme = InitScheme {
            variant: InitVariant::PerturbedDft { gamma: 0.1 },
            seed: 9,
        };
        let cfg = TrainConfig {
            max_steps: 6,
            batch_size: 2,
            eval_every: 3,
            ..TrainConfig::default()
        };
        let a = distill(&manifest, &radar, &sp, &scheme, &cfg, dir.join("a"), None).unwrap();
        let b = distill(&manifest, &radar, &sp, &scheme, &cfg, dir.join("b"), None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.report, b.report);
        for name in ["w_range.rten", "w_doppler.rten", "meta.json"] {
            let fa = std::fs::read(a.checkpoint_final.join(name)).unwrap();
            let fb = std::fs::read(b.checkpoint_final.join(name)).unwrap();
            assert_eq!(fa, fb, "{name}");
        }

        // Resume: 3 steps then 3 more equals 6 straight.
        let cfg3 = TrainConfig {
            max_steps: 3,
            ..cfg.clone()
        };
        let first = distill(&manifest, &radar, &sp, &scheme, &cfg3, dir.join("r1"), None).unwrap();
        assert_eq!(first.report.steps_run, 3);
        let second = distill(
            &manifest,
            &radar,
            &sp,
            &scheme,
            &cfg,
            dir.join("r2"),
            Some(&first.checkpoint_final),
        )
        .unwrap();
        assert_eq!(second.report.steps_run, 6);
        assert!(second.params.w_range.max_abs_diff(&a.params.w_range) < 1e-12);
    }

    #[test]
    fn unlabeled_manifest_is_rejected_with_scene_id() {
        let dir = std::env::temp_dir().join("trainer-unlabeled");
        let _ = std::fs::remove_dir_all(&dir);
        let radar = RadarConfig::default();
        let manifest =
            fmcw::synth_dataset(2, &radar, (1, 1), ScenePolicy::Random, 2, &dir).unwrap();
        let err = load_pairs(&manifest, &radar).unwrap_err().to_string();
        assert!(err.contains("rad_path"), "{err}");
    }

    #[test]
    fn holdout_split_takes_last_tenth() {
        let dir = std::env::temp_dir().join("trainer-split");
        let _ = std::fs::remove_dir_all(&dir);
        let (radar, _, manifest) = labeled_dataset(&dir, 20, 4);
        let pairs = load_pairs(&manifest, &radar).unwrap();
        let (train, hold) = split_holdout(&pairs);
        assert_eq!(train.len(), 18);
        assert_eq!(hold.len(), 2);
        assert!(hold.iter().all(|p| p.scene_id >= 18));
    }

    #[test]
    fn ablation_reports_one_row_per_scheme() {
        let dir = std::env::temp_dir().join("trainer-ablation-smoke");
        let _ = std::fs::remove_dir_all(&dir);
        let (radar, sp, manifest) = labeled_dataset(&dir, 5, 11);
        let cfg = TrainConfig {
            max_steps: 2,
            batch_size: 2,
            eval_every: 1,
            ..TrainConfig::default()
        };
        let schemes = [
            InitScheme {
                variant: InitVariant::ExactDft,
                seed: 1,
            },
            InitScheme {
                variant: InitVariant::PerturbedDft { gamma: 0.1 },
                seed: 1,
            },
        ];
        let rows =
            init_ablation(&manifest, &radar, &sp, &schemes, &cfg, dir.join("ablate")).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.status == "ok"));
        // Exact init barely moves compared to perturbed.
        assert!(rows[1].drift[2] > rows[0].drift[2]);
        assert!(dir.join("ablate/ablation.csv").exists());
    }
}
