//! Implementations of the subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use radar_distill::config::{self, RunConfig};
use radar_distill::fmcw::{
    AdcCube, DatasetManifest, ScenePolicy,
};
use radar_distill::heads::{score_detections, default_thresholds, miou, GtObject, ScoredDetection};
use radar_distill::learnable::{params_load, InitScheme, InitVariant};
use radar_distill::teacher::{
    self, build_rad, classic_detections, rad_cfar_mask, rad_detections, AoaKind, RadTensor,
};
use radar_distill::tensor::{self, ComplexTensor, RealTensor, SeededRng, TensorFile};
use radar_distill::trainer::{self, TrainConfig};
use radar_distill::{Error, Result};

use crate::{AoaArg, CollapseArg, Command, SchemeArg};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            config,
            scenes,
            seed,
            out,
            separable,
            min_targets,
            max_targets,
        } => simulate(&config, scenes, seed, &out, separable, (min_targets, max_targets)),
        Command::Teacher {
            config,
            manifest,
            aoa,
            out,
            downsample,
        } => teacher_cmd(&config, &manifest, aoa, &out, downsample),
        Command::Distill {
            config,
            manifest,
            scheme,
            gamma,
            init_seed,
            max_steps,
            learning_rate,
            batch_size,
            eval_every,
            train_seed,
            out,
            resume,
        } => distill_cmd(DistillArgs {
            config,
            manifest,
            scheme,
            gamma,
            init_seed,
            max_steps,
            learning_rate,
            batch_size,
            eval_every,
            train_seed,
            out,
            resume,
        }),
        Command::Ablate {
            config,
            manifest,
            schemes,
            gammas,
            max_steps,
            learning_rate,
            batch_size,
            out,
        } => ablate_cmd(
            &config,
            &manifest,
            &schemes,
            &gammas,
            max_steps,
            learning_rate,
            batch_size,
            &out,
        ),
        Command::Eval {
            config,
            checkpoint,
            manifest,
            report,
            force,
        } => eval_cmd(&config, &checkpoint, &manifest, &report, force),
        Command::Detect {
            config,
            manifest,
            report,
        } => detect_cmd(&config, &manifest, &report),
        Command::Bench {
            checkpoint,
            batch,
            iters,
            report,
        } => bench_cmd(&checkpoint, batch, iters, report.as_deref()),
        Command::Plot {
            tensor,
            axis,
            axis_collapse,
            out,
        } => plot_cmd(&tensor, axis, axis_collapse, &out),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Records the run configuration and its digest next to a command's
/// artifacts.
fn write_run_sidecar(out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    let value = serde_json::json!({
        "digest": cfg.digest()?,
        "config": serde_json::to_value(cfg)
            .map_err(|e| Error::Config(format!("config serialization: {e}")))?,
    });
    write_json(&out_dir.join("run.json"), &value)
}

// ─── simulate ────────────────────────────────────────────────────────────────

fn simulate(
    config: &Path,
    scenes: usize,
    seed: u64,
    out: &Path,
    separable: bool,
    count_range: (usize, usize),
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let policy = if separable {
        ScenePolicy::Separable {
            n_range_bins: cfg.radar.n_samples,
            n_azimuth_bins: cfg.sp.n_azimuth_bins,
        }
    } else {
        ScenePolicy::Random
    };
    let manifest =
        radar_distill::fmcw::synth_dataset(scenes, &cfg.radar, count_range, policy, seed, out)?;
    write_run_sidecar(out, &cfg)?;
    println!(
        "wrote {} scenes to {} (manifest: {})",
        manifest.records.len(),
        out.display(),
        out.join(radar_distill::fmcw::MANIFEST_NAME).display()
    );
    Ok(())
}

// ─── teacher ─────────────────────────────────────────────────────────────────

fn teacher_cmd(
    config: &Path,
    manifest: &Path,
    aoa: AoaArg,
    out: &Path,
    downsample: Option<Vec<usize>>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let manifest = DatasetManifest::read(manifest)?;
    let kind = match aoa {
        AoaArg::Fft => AoaKind::Fft,
        AoaArg::Music => AoaKind::Music,
    };
    let labeled = teacher::teacher_batch(&manifest, &cfg.radar, &cfg.sp, kind, out)?;

    if let Some(f) = downsample {
        if f.len() != 3 {
            return Err(Error::invalid(format!(
                "--downsample takes three factors, got {}",
                f.len()
            )));
        }
        let factors = (f[0], f[1], f[2]);
        if factors != (1, 1, 1) {
            for rec in &labeled.records {
                if let Some(rel) = &rec.rad_path {
                    let path = labeled.resolve(rel);
                    let rad = RadTensor::new(tensor::read_real(&path)?)?;
                    let pooled = teacher::downsample_rad(&rad, factors)?;
                    tensor::write_real(&path, &pooled.data)?;
                }
            }
        }
    }

    let failed = labeled.records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "labeled {} scenes ({failed} failed) into {}",
        labeled.records.len(),
        out.display()
    );

    // With the MUSIC teacher, also report azimuth agreement against the
    // FFT estimator on single-target scenes.
    if kind == AoaKind::Music {
        let mut within_one = 0usize;
        let mut total = 0usize;
        for rec in &labeled.records {
            if rec.targets.len() != 1 || rec.error.is_some() {
                continue;
            }
            let adc = AdcCube::new(
                tensor::read_complex(labeled.resolve(&rec.adc_path))?,
                &cfg.radar,
            )?;
            let music = RadTensor::new(tensor::read_real(
                labeled.resolve(rec.rad_path.as_ref().unwrap()),
            )?)?;
            let fft = build_rad(&adc, &cfg.radar, &cfg.sp, AoaKind::Fft)?;
            let pm = music.data.argmax();
            let pf = fft.data.argmax();
            total += 1;
            if (pm[2] as isize - pf[2] as isize).abs() <= 1 {
                within_one += 1;
            }
        }
        let report = serde_json::json!({
            "single_target_scenes": total,
            "azimuth_within_one_cell_of_fft": within_one,
            "agreement": if total > 0 { within_one as f64 / total as f64 } else { 1.0 },
        });
        write_json(&out.join("teacher_music_agreement.json"), &report)?;
    }
    Ok(())
}

// ─── distill ─────────────────────────────────────────────────────────────────

pub struct DistillArgs {
    pub config: PathBuf,
    pub manifest: PathBuf,
    pub scheme: Option<SchemeArg>,
    pub gamma: Option<f64>,
    pub init_seed: Option<u64>,
    pub max_steps: Option<u64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub eval_every: Option<u64>,
    pub train_seed: Option<u64>,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
}

fn scheme_from_args(
    base: InitScheme,
    scheme: Option<SchemeArg>,
    gamma: Option<f64>,
    init_seed: Option<u64>,
) -> InitScheme {
    let seed = init_seed.unwrap_or(base.seed);
    let variant = match scheme {
        None => base.variant,
        Some(SchemeArg::ExactDft) => InitVariant::ExactDft,
        Some(SchemeArg::PerturbedDft) => InitVariant::PerturbedDft {
            gamma: gamma.unwrap_or(match base.variant {
                InitVariant::PerturbedDft { gamma } => gamma,
                _ => 0.1,
            }),
        },
        Some(SchemeArg::RandomDoppler) => InitVariant::RandomDoppler,
        Some(SchemeArg::Random) => InitVariant::Random,
    };
    InitScheme { variant, seed }
}

fn train_overrides(
    mut train: TrainConfig,
    max_steps: Option<u64>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    eval_every: Option<u64>,
    train_seed: Option<u64>,
) -> TrainConfig {
    if let Some(v) = max_steps {
        train.max_steps = v;
    }
    if let Some(v) = learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = batch_size {
        train.batch_size = v;
    }
    if let Some(v) = eval_every {
        train.eval_every = v;
    }
    if let Some(v) = train_seed {
        train.seed = v;
    }
    train
}

fn distill_cmd(args: DistillArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let manifest = DatasetManifest::read(&args.manifest)?;
    let scheme = scheme_from_args(cfg.init, args.scheme, args.gamma, args.init_seed);
    let train = train_overrides(
        cfg.train.clone(),
        args.max_steps,
        args.learning_rate,
        args.batch_size,
        args.eval_every,
        args.train_seed,
    );
    let outcome = trainer::distill(
        &manifest,
        &cfg.radar,
        &cfg.sp,
        &scheme,
        &train,
        &args.out,
        args.resume.as_deref(),
    )?;
    write_run_sidecar(&args.out, &cfg)?;
    println!(
        "distilled {}: {} steps, best holdout mean RAE {:.3e} at step {}{}",
        scheme.label(),
        outcome.report.steps_run,
        outcome.report.best_mean_rae,
        outcome.report.best_step,
        if outcome.report.diverged {
            " (diverged)"
        } else {
            ""
        }
    );
    Ok(())
}

// ─── ablate ──────────────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
fn ablate_cmd(
    config: &Path,
    manifest: &Path,
    schemes: &[SchemeArg],
    gammas: &[f64],
    max_steps: Option<u64>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    out: &Path,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let manifest = DatasetManifest::read(manifest)?;
    let train = train_overrides(cfg.train.clone(), max_steps, learning_rate, batch_size, None, None);
    let seed = cfg.init.seed;

    let mut list = Vec::new();
    for s in schemes {
        match s {
            SchemeArg::PerturbedDft => {
                let gs: &[f64] = if gammas.is_empty() { &[0.1] } else { gammas };
                for &gamma in gs {
                    list.push(InitScheme {
                        variant: InitVariant::PerturbedDft { gamma },
                        seed,
                    });
                }
            }
            SchemeArg::ExactDft => list.push(InitScheme {
                variant: InitVariant::ExactDft,
                seed,
            }),
            SchemeArg::RandomDoppler => list.push(InitScheme {
                variant: InitVariant::RandomDoppler,
                seed,
            }),
            SchemeArg::Random => list.push(InitScheme {
                variant: InitVariant::Random,
                seed,
            }),
        }
    }

    let rows = trainer::init_ablation(&manifest, &cfg.radar, &cfg.sp, &list, &train, out)?;
    write_run_sidecar(out, &cfg)?;
    for row in &rows {
        println!(
            "{}: {} final mean RAE {:.3e}",
            row.scheme.label(),
            row.status,
            row.final_mean_rae
        );
    }
    println!("report: {}", out.join("ablation.csv").display());
    Ok(())
}

// ─── eval ────────────────────────────────────────────────────────────────────

fn eval_cmd(
    config: &Path,
    checkpoint: &Path,
    manifest: &Path,
    report: &Path,
    force: bool,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let manifest = DatasetManifest::read(manifest)?;
    let (params, meta) = params_load(checkpoint)?;

    let radar_digest = config::digest(&cfg.radar)?;
    let chain_digest = config::digest(&(&cfg.radar, &cfg.sp))?;
    if !force {
        if meta.cfg_digest != chain_digest {
            return Err(Error::Config(format!(
                "checkpoint digest {} does not match configuration {chain_digest}; pass --force to evaluate anyway",
                meta.cfg_digest
            )));
        }
        for rec in &manifest.records {
            if rec.cfg_digest != radar_digest {
                return Err(Error::Config(format!(
                    "scene {} digest {} does not match configuration {radar_digest}; pass --force to evaluate anyway",
                    rec.scene_id, rec.cfg_digest
                )));
            }
        }
    }

    let pairs = trainer::load_pairs(&manifest, &cfg.radar)?;
    let tol = radar_distill::heads::default_tolerance(&cfg.radar, &cfg.sp);
    let thresholds = default_thresholds();

    struct SceneEval {
        mean_rae: f64,
        max_rae: f64,
        student_dets: Vec<ScoredDetection>,
        teacher_dets: Vec<ScoredDetection>,
        mask_iou: f64,
    }
    let evals: Result<Vec<SceneEval>> = pairs
        .par_iter()
        .map(|pair| {
            let (pred, _) = radar_distill::learnable::forward(&params, &pair.adc)?;
            let (_, mean_rae, max_rae) =
                trainer::rae(&pair.rad.data, &pred.data, trainer::RAE_EPS)?;
            let student_dets = rad_detections(&pred, &cfg.radar, &cfg.cfar)?;
            let teacher_dets = rad_detections(&pair.rad, &cfg.radar, &cfg.cfar)?;
            let mask_iou = miou(
                &rad_cfar_mask(&pred, &cfg.cfar)?,
                &rad_cfar_mask(&pair.rad, &cfg.cfar)?,
            )?;
            Ok(SceneEval {
                mean_rae,
                max_rae,
                student_dets,
                teacher_dets,
                mask_iou,
            })
        })
        .collect();
    let evals = evals?;
    let n = evals.len().max(1) as f64;
    let mean_rae = evals.iter().map(|e| e.mean_rae).sum::<f64>() / n;
    let max_rae = evals.iter().map(|e| e.max_rae).fold(0.0f64, f64::max);
    let mean_mask_iou = evals.iter().map(|e| e.mask_iou).sum::<f64>() / n;

    // Detection agreement: student-chain detections scored against the
    // teacher-chain detections as ground truth.
    let dets: Vec<Vec<ScoredDetection>> = evals.iter().map(|e| e.student_dets.clone()).collect();
    let gts: Vec<Vec<GtObject>> = evals
        .iter()
        .map(|e| {
            e.teacher_dets
                .iter()
                .map(|d| GtObject {
                    range_m: d.range_m,
                    azimuth_rad: d.azimuth_rad,
                })
                .collect()
        })
        .collect();
    let scores = score_detections(&dets, &gts, &tol, &thresholds)?;

    let value = serde_json::json!({
        "ap": scores.ap,
        "ar": scores.ar,
        "f1": scores.f1,
        "re_m": scores.re_m,
        "ae_rad": scores.ae_rad,
        "miou": mean_mask_iou,
        "mean_rae": mean_rae,
        "max_rae": max_rae,
        "n_scenes": evals.len(),
        "thresholds": thresholds,
        "tolerances": { "range_m": tol.range_m, "azimuth_rad": tol.azimuth_rad },
        "config_digest": cfg.digest()?,
    });
    write_json(report, &value)?;

    // Per-threshold precision/recall/F1 next to the JSON report.
    let mut csv = String::from("threshold,precision,recall,f1\n");
    for (t, p, r, f1) in &scores.per_threshold {
        csv.push_str(&format!("{t},{p},{r},{f1}\n"));
    }
    let csv_path = report.with_extension("thresholds.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    println!(
        "evaluated {} scenes: mean RAE {mean_rae:.3e}, detection F1 vs teacher {:.3}",
        evals.len(),
        scores.f1
    );
    Ok(())
}

// ─── detect ──────────────────────────────────────────────────────────────────

fn detect_cmd(config: &Path, manifest: &Path, report: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let manifest = DatasetManifest::read(manifest)?;
    let grid = cfg.radar.azimuth_grid(cfg.sp.n_azimuth_bins);

    struct FrameResult {
        scene_id: u64,
        detections: Vec<teacher::Detection>,
        hit: Option<(bool, bool, bool)>,
    }
    let frames: Result<Vec<FrameResult>> = manifest
        .records
        .par_iter()
        .map(|rec| {
            let adc = AdcCube::new(
                tensor::read_complex(manifest.resolve(&rec.adc_path))?,
                &cfg.radar,
            )?;
            let detections = classic_detections(&adc, &cfg.radar, &cfg.sp, &cfg.cfar)?;
            // Single-target frames score bin-level accuracy of the best
            // detection.
            let hit = if rec.targets.len() == 1 && !detections.is_empty() {
                let t = &rec.targets[0];
                let best = detections
                    .iter()
                    .max_by(|a, b| a.snr_estimate.partial_cmp(&b.snr_estimate).unwrap())
                    .unwrap();
                let range_ok =
                    (best.range_bin as f64 - cfg.radar.range_bin_float(t.range_m)).abs() <= 1.0;
                let doppler_true = cfg.radar.doppler_bin_float(t.velocity_mps);
                let doppler_det =
                    best.doppler_bin as f64 - (cfg.radar.n_chirps / 2) as f64;
                let doppler_ok = (doppler_det - doppler_true).abs() <= 1.0;
                let az_det = grid.position_of_sin(best.azimuth_rad.sin());
                let az_true = grid.position_of_sin(t.azimuth_rad.sin());
                let az_ok = (az_det - az_true).abs() <= 1.0;
                Some((range_ok, doppler_ok, az_ok))
            } else {
                None
            };
            Ok(FrameResult {
                scene_id: rec.scene_id,
                detections,
                hit,
            })
        })
        .collect();
    let frames = frames?;

    let scored: Vec<&(bool, bool, bool)> = frames.iter().filter_map(|f| f.hit.as_ref()).collect();
    let frac = |sel: fn(&(bool, bool, bool)) -> bool| {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().filter(|h| sel(h)).count() as f64 / scored.len() as f64
        }
    };
    let value = serde_json::json!({
        "n_frames": frames.len(),
        "single_target_frames_scored": scored.len(),
        "range_within_one_bin": frac(|h| h.0),
        "doppler_within_one_bin": frac(|h| h.1),
        "azimuth_within_one_bin": frac(|h| h.2),
        "frames": frames.iter().map(|f| serde_json::json!({
            "scene_id": f.scene_id,
            "detections": f.detections.iter().map(|d| serde_json::json!({
                "range_bin": d.range_bin,
                "doppler_bin": d.doppler_bin,
                "azimuth_rad": d.azimuth_rad,
                "snr_estimate": d.snr_estimate,
            })).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "config_digest": cfg.digest()?,
    });
    write_json(report, &value)?;
    println!(
        "classic chain over {} frames; single-target hit rates: range {:.2} doppler {:.2} azimuth {:.2}",
        frames.len(),
        frac(|h| h.0),
        frac(|h| h.1),
        frac(|h| h.2)
    );
    Ok(())
}

// ─── bench ───────────────────────────────────────────────────────────────────

fn bench_cmd(checkpoint: &Path, batch: usize, iters: usize, report: Option<&Path>) -> Result<()> {
    if batch == 0 || iters == 0 {
        return Err(Error::invalid("batch and iters must be at least 1"));
    }
    let (params, _) = params_load(checkpoint)?;
    let dims = params.input_dims();
    let len = dims.iter().product::<usize>();
    let mut rng = SeededRng::new(0);
    let cubes: Vec<ComplexTensor> = (0..batch)
        .map(|_| {
            ComplexTensor::new(
                dims.to_vec(),
                (0..len).map(|_| rng.next_gaussian()).collect(),
                (0..len).map(|_| rng.next_gaussian()).collect(),
            )
            .unwrap()
        })
        .collect();
    let run_batch = |checksum: &mut f64| -> Result<()> {
        let sums: Result<Vec<f64>> = cubes
            .par_iter()
            .map(|c| {
                let adc = AdcCube {
                    data: c.clone(),
                };
                let (rad, _) = radar_distill::learnable::forward(&params, &adc)?;
                Ok(rad.data.data().iter().sum())
            })
            .collect();
        *checksum += sums?.iter().sum::<f64>();
        Ok(())
    };

    let mut checksum = 0.0;
    // Warmup.
    run_batch(&mut checksum)?;
    let mut times_ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        run_batch(&mut checksum)?;
        times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    times_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times_ms[times_ms.len() / 2];
    let value = serde_json::json!({
        "batch": batch,
        "iters": iters,
        "ms_per_batch_median": median,
        "ms_per_sample": median / batch as f64,
        "samples_per_sec": batch as f64 / (median / 1e3),
        "checksum": checksum,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&value).expect("json serializes")
    );
    if let Some(path) = report {
        write_json(path, &value)?;
    }
    Ok(())
}

// ─── plot ────────────────────────────────────────────────────────────────────

fn plot_cmd(tensor_path: &Path, axis: usize, collapse: CollapseArg, out: &Path) -> Result<()> {
    let plane = match tensor::read(tensor_path)? {
        TensorFile::Real(t) => collapse_to_plane(&t, axis, collapse)?,
        TensorFile::Complex(t) => collapse_to_plane(&t.magnitude(), axis, collapse)?,
    };
    let (h, w) = (plane.dims()[0], plane.dims()[1]);
    let lo = plane.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = plane.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let table = crate::colormap::table();
    let mut bytes = Vec::with_capacity(h * w * 3 + 32);
    bytes.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    for &v in plane.data() {
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        let idx = (t * 255.0).round().clamp(0.0, 255.0) as usize;
        bytes.extend_from_slice(&table[idx]);
    }
    std::fs::write(out, bytes).map_err(|e| Error::io(out, e))?;
    println!("wrote {w}x{h} heatmap to {}", out.display());
    Ok(())
}

fn collapse_to_plane(t: &RealTensor, axis: usize, collapse: CollapseArg) -> Result<RealTensor> {
    match t.dims().len() {
        2 => Ok(t.clone()),
        3 => {
            if axis >= 3 {
                return Err(Error::invalid(format!("axis {axis} out of range for 3-d")));
            }
            let dims = t.dims();
            let kept: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
            let mut out = RealTensor::zeros(vec![dims[kept[0]], dims[kept[1]]])?;
            for i in 0..dims[0] {
                for j in 0..dims[1] {
                    for k in 0..dims[2] {
                        let idx = [i, j, k];
                        let v = t.at(&idx);
                        let o = [idx[kept[0]], idx[kept[1]]];
                        let cur = out.at(&o);
                        let next = match collapse {
                            CollapseArg::Sum => cur + v,
                            CollapseArg::Max => cur.max(v),
                        };
                        out.set(&o, next);
                    }
                }
            }
            Ok(out)
        }
        n => Err(Error::invalid(format!(
            "plot supports 2-d and 3-d tensors, got {n}-d"
        ))),
    }
}
