//! Acceptance suite: one test per criterion, each ending in a printed
//! `ACCEPTANCE Cn PASS` line (visible with `--nocapture`).
//!
//! The heavy fixtures are shared: a 256-scene noisy dataset labeled by the
//! FFT teacher, one frozen distillation run, and one frozen ablation.
//! Budgets and tolerances are pinned here; nothing is calibrated at run
//! time.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use radar_distill::fmcw::{
    sample_scene, synth_adc, synth_dataset, AdcCube, DatasetManifest, RadarConfig, ScenePolicy,
};
use radar_distill::heads::{
    bce_loss, finetune_toy_head, focal_loss, miou, score_detections, FinetuneConfig,
    FinetuneOutcome, GtObject, LossConfig, MatchTolerance, ScoredDetection,
};
use radar_distill::learnable::{
    backward, forward, init_params, weight_drift, InitScheme, InitVariant, PART_NAMES,
};
use radar_distill::teacher::{
    adc_to_rd, aoa_fft, aoa_music, build_rad, classic_detections, teacher_batch, AoaKind,
    CfarConfig, SpConfig,
};
use radar_distill::tensor::{ComplexTensor, SeededRng};
use radar_distill::trainer::{
    distill, init_ablation, smooth_l1, AblationRow, DistillOutcome, TrainConfig,
};
use radar_distill::RealTensor;

// ─── Shared fixtures ─────────────────────────────────────────────────────────

struct Fixture {
    root: PathBuf,
    radar: RadarConfig,
    sp: SpConfig,
    labeled: DatasetManifest,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let root = std::env::temp_dir().join("radar-distill-acceptance");
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        let radar = RadarConfig {
            noise_std: 0.3,
            ..RadarConfig::default()
        };
        let sp = SpConfig::default();
        let ds = root.join("desk256");
        let manifest =
            synth_dataset(256, &radar, (1, 4), ScenePolicy::Random, 42, &ds).unwrap();
        let labeled = teacher_batch(&manifest, &radar, &sp, AoaKind::Fft, &ds).unwrap();
        Fixture {
            root,
            radar,
            sp,
            labeled,
        }
    })
}

/// The frozen criterion-4 training configuration.
fn c4_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 2e-3,
        batch_size: 8,
        max_steps: 1500,
        eval_every: 250,
        seed: 1234,
        ..TrainConfig::default()
    }
}

fn c4_scheme() -> InitScheme {
    InitScheme {
        variant: InitVariant::PerturbedDft { gamma: 0.1 },
        seed: 7,
    }
}

fn run_c4_distill(out: &Path) -> DistillOutcome {
    let f = fixture();
    distill(
        &f.labeled,
        &f.radar,
        &f.sp,
        &c4_scheme(),
        &c4_train_config(),
        out,
        None,
    )
    .unwrap()
}

struct C4 {
    outcome: DistillOutcome,
    out_dir: PathBuf,
    elapsed_s: f64,
}

fn c4() -> &'static C4 {
    static C4_RESULT: OnceLock<C4> = OnceLock::new();
    C4_RESULT.get_or_init(|| {
        let out_dir = fixture().root.join("c4");
        let t0 = Instant::now();
        let outcome = run_c4_distill(&out_dir);
        C4 {
            outcome,
            out_dir,
            elapsed_s: t0.elapsed().as_secs_f64(),
        }
    })
}

fn c5_rows() -> &'static Vec<AblationRow> {
    static ROWS: OnceLock<Vec<AblationRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        let f = fixture();
        let cfg = TrainConfig {
            learning_rate: 2e-3,
            batch_size: 4,
            max_steps: 900,
            eval_every: 300,
            seed: 1234,
            ..TrainConfig::default()
        };
        let schemes = [
            InitScheme {
                variant: InitVariant::ExactDft,
                seed: 7,
            },
            InitScheme {
                variant: InitVariant::PerturbedDft { gamma: 0.1 },
                seed: 7,
            },
            InitScheme {
                variant: InitVariant::RandomDoppler,
                seed: 7,
            },
            InitScheme {
                variant: InitVariant::Random,
                seed: 7,
            },
            InitScheme {
                variant: InitVariant::PerturbedDft { gamma: 2.0 },
                seed: 7,
            },
        ];
        init_ablation(
            &f.labeled,
            &f.radar,
            &f.sp,
            &schemes,
            &cfg,
            f.root.join("c5"),
        )
        .unwrap()
    })
}

/// Separable labeled dataset for the head fine-tune, SNR 20 dB.
fn c9_dataset() -> &'static (RadarConfig, SpConfig, DatasetManifest) {
    static DS: OnceLock<(RadarConfig, SpConfig, DatasetManifest)> = OnceLock::new();
    DS.get_or_init(|| {
        let radar = RadarConfig {
            noise_std: 0.0707,
            ..RadarConfig::default()
        };
        let sp = SpConfig::default();
        let policy = ScenePolicy::Separable {
            n_range_bins: radar.n_samples,
            n_azimuth_bins: sp.n_azimuth_bins,
        };
        let manifest = synth_dataset(
            100,
            &radar,
            (1, 3),
            policy,
            77,
            fixture().root.join("separable100"),
        )
        .unwrap();
        (radar, sp, manifest)
    })
}

fn c9_config() -> FinetuneConfig {
    FinetuneConfig {
        train: TrainConfig {
            learning_rate: 0.1,
            batch_size: 16,
            seed: 777,
            ..TrainConfig::default()
        },
        loss: LossConfig {
            focal_alpha: 0.98,
            ..LossConfig::default()
        },
        unfreeze_sp: false,
        seg_radius: 1.5,
    }
}

fn run_c9_finetune() -> FinetuneOutcome {
    let (radar, sp, manifest) = c9_dataset();
    let tol = radar_distill::heads::default_tolerance(radar, sp);
    finetune_toy_head(
        &c4().outcome.best_params,
        manifest,
        radar,
        sp,
        &c9_config(),
        2000,
        &tol,
    )
    .unwrap()
}

// ─── C1: range-Doppler transform vs naive DFT ────────────────────────────────

/// Independent naive O(n^2) oracle: windowed DFT along samples then
/// chirps, explicit quadruple loops over plain vectors, own trigonometric
/// tables, own FFT shift. Shares nothing with the tensor machinery.
fn naive_rd(
    adc: &[Vec<Vec<(f64, f64)>>],
    win_r: &[f64],
    win_d: &[f64],
) -> Vec<Vec<Vec<(f64, f64)>>> {
    let n = adc.len();
    let m = adc[0].len();
    let a = adc[0][0].len();

    let trig = |len: usize| -> Vec<Vec<(f64, f64)>> {
        (0..len)
            .map(|j| {
                (0..len)
                    .map(|k| {
                        let ang = -2.0 * PI * (j as f64) * (k as f64) / len as f64;
                        (ang.cos(), ang.sin())
                    })
                    .collect()
            })
            .collect()
    };
    let tr = trig(n);
    let td = trig(m);

    // Range DFT over windowed samples.
    let mut stage1 = vec![vec![vec![(0.0, 0.0); a]; m]; n];
    for k in 0..n {
        for mm in 0..m {
            for aa in 0..a {
                let mut acc = (0.0, 0.0);
                for j in 0..n {
                    let (xr, xi) = adc[j][mm][aa];
                    let (wr, wi) = tr[k][j];
                    let vr = win_r[j] * xr;
                    let vi = win_r[j] * xi;
                    acc.0 += vr * wr - vi * wi;
                    acc.1 += vr * wi + vi * wr;
                }
                stage1[k][mm][aa] = acc;
            }
        }
    }
    // Doppler DFT over windowed chirps, then shift so zero lands at m/2.
    let mut out = vec![vec![vec![(0.0, 0.0); a]; m]; n];
    for k in 0..n {
        for l in 0..m {
            for aa in 0..a {
                let mut acc = (0.0, 0.0);
                for j in 0..m {
                    let (xr, xi) = stage1[k][j][aa];
                    let (wr, wi) = td[l][j];
                    let vr = win_d[j] * xr;
                    let vi = win_d[j] * xi;
                    acc.0 += vr * wr - vi * wi;
                    acc.1 += vr * wi + vi * wr;
                }
                out[k][l][aa] = acc;
            }
        }
    }
    let mut shifted = vec![vec![vec![(0.0, 0.0); a]; m]; n];
    for k in 0..n {
        for l in 0..m {
            let src = (l + m - m / 2) % m;
            shifted[k][l] = out[k][src].clone();
        }
    }
    shifted
}

#[test]
fn c01_rd_transform_matches_naive_dft_oracle() {
    let t0 = Instant::now();
    let f = fixture();
    let (wr, wd) = f.sp.windows(&f.radar).unwrap();
    let mut rng = SeededRng::new(101);
    let (n, m, a) = (f.radar.n_samples, f.radar.n_chirps, f.radar.n_antennas);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let len = n * m * a;
        let cube = ComplexTensor::new(
            vec![n, m, a],
            (0..len).map(|_| rng.next_gaussian()).collect(),
            (0..len).map(|_| rng.next_gaussian()).collect(),
        )
        .unwrap();
        let adc = AdcCube::new(cube, &f.radar).unwrap();

        let nested: Vec<Vec<Vec<(f64, f64)>>> = (0..n)
            .map(|i| {
                (0..m)
                    .map(|j| (0..a).map(|k| adc.data.at(&[i, j, k])).collect())
                    .collect()
            })
            .collect();
        let want = naive_rd(&nested, wr.data(), wd.data());

        let rd = adc_to_rd(&adc, &wr, &wd, f.sp.scaling).unwrap();
        for i in 0..n {
            for j in 0..m {
                for k in 0..a {
                    let (gr, gi) = rd.data().at(&[i, j, k]);
                    let (er, ei) = want[i][j][k];
                    worst = worst.max((gr - er).abs()).max((gi - ei).abs());
                }
            }
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(worst <= 1e-9, "max abs diff {worst}");
    assert!(elapsed < 10.0, "runtime {elapsed:.1}s exceeds 10s");
    println!("ACCEPTANCE C1 PASS: 50 cubes, max abs diff {worst:.3e}, {elapsed:.1}s");
}

// ─── C2: exact-init student reproduces the teacher ───────────────────────────

#[test]
fn c02_exact_init_student_equals_teacher() {
    let t0 = Instant::now();
    let f = fixture();
    let params = init_params(
        &InitScheme {
            variant: InitVariant::ExactDft,
            seed: 0,
        },
        &f.radar,
        &f.sp,
    )
    .unwrap();

    let mut rng = SeededRng::new(202);
    let (n, m, a) = (f.radar.n_samples, f.radar.n_chirps, f.radar.n_antennas);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let len = n * m * a;
        let cube = ComplexTensor::new(
            vec![n, m, a],
            (0..len).map(|_| rng.next_gaussian()).collect(),
            (0..len).map(|_| rng.next_gaussian()).collect(),
        )
        .unwrap();
        let adc = AdcCube::new(cube, &f.radar).unwrap();
        let (student, _) = forward(&params, &adc).unwrap();
        let teacher = build_rad(&adc, &f.radar, &f.sp, AoaKind::Fft).unwrap();
        for (s, t) in student.data.data().iter().zip(teacher.data.data()) {
            worst = worst.max((s - t).abs());
        }
    }
    assert!(worst <= 1e-9, "max abs diff {worst}");

    // Step-0 distillation RAE with exact initialization.
    let cfg = TrainConfig {
        max_steps: 1,
        batch_size: 8,
        eval_every: 1,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = distill(
        &f.labeled,
        &f.radar,
        &f.sp,
        &InitScheme {
            variant: InitVariant::ExactDft,
            seed: 0,
        },
        &cfg,
        f.root.join("c2"),
        None,
    )
    .unwrap();
    let step0 = out.history.records[0].mean_rae;
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(step0 < 1e-6, "step-0 mean RAE {step0}");
    assert!(elapsed < 30.0, "runtime {elapsed:.1}s exceeds 30s");
    println!(
        "ACCEPTANCE C2 PASS: forward vs teacher max diff {worst:.3e}, step-0 RAE {step0:.3e}, {elapsed:.1}s"
    );
}

// ─── C3: analytic gradients vs central finite differences ────────────────────

#[test]
fn c03_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let radar = RadarConfig {
        n_samples: 8,
        n_chirps: 8,
        n_antennas: 4,
        sample_rate_hz: 0.8e6,
        noise_std: 0.0,
        ..RadarConfig::default()
    };
    let sp = SpConfig {
        n_azimuth_bins: 8,
        ..SpConfig::default()
    };
    let params = init_params(
        &InitScheme {
            variant: InitVariant::PerturbedDft { gamma: 0.1 },
            seed: 3,
        },
        &radar,
        &sp,
    )
    .unwrap();

    let mut rng = SeededRng::new(303);
    let len = 8 * 8 * 4;
    let adc = AdcCube::new(
        ComplexTensor::new(
            vec![8, 8, 4],
            (0..len).map(|_| rng.next_gaussian()).collect(),
            (0..len).map(|_| rng.next_gaussian()).collect(),
        )
        .unwrap(),
        &radar,
    )
    .unwrap();
    let (rad, cache) = forward(&params, &adc).unwrap();
    let grad_rad = RealTensor::new(
        rad.data.dims().to_vec(),
        (0..rad.data.len()).map(|_| rng.next_gaussian()).collect(),
    )
    .unwrap();
    let analytic = backward(&params, &cache, &grad_rad).unwrap();

    let loss = |p: &radar_distill::learnable::LearnableSpParams| -> f64 {
        let (r, _) = forward(p, &adc).unwrap();
        r.data
            .data()
            .iter()
            .zip(grad_rad.data())
            .map(|(a, g)| a * g)
            .sum()
    };

    let h = 1e-5;
    let mut worst = 0.0f64;
    for part in 0..PART_NAMES.len() {
        let plen = params.part(part).len();
        for probe in 0..20 {
            let idx = (probe * 7919 + 13) % plen;
            let mut plus = params.clone();
            plus.part_mut(part)[idx] += h;
            let mut minus = params.clone();
            minus.part_mut(part)[idx] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = analytic.part(part)[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(
                rel < 1e-4,
                "{} idx {idx}: fd {fd} vs analytic {an} (rel {rel:.2e})",
                PART_NAMES[part]
            );
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 60s");
    println!(
        "ACCEPTANCE C3 PASS: 8 tensors x 20 coordinates, worst rel err {worst:.3e}, {elapsed:.1}s"
    );
}

// ─── C4: distillation convergence ────────────────────────────────────────────

#[test]
fn c04_perturbed_distillation_converges() {
    let c4 = c4();
    let report = &c4.outcome.report;
    assert!(!report.diverged, "run diverged");
    assert!(
        report.best_mean_rae < 0.05,
        "best holdout mean RAE {} not under 0.05",
        report.best_mean_rae
    );
    assert!(report.steps_run <= 5000);
    assert!(
        report.final_max_rae.is_finite(),
        "max RAE not finite: {}",
        report.final_max_rae
    );
    assert!(
        c4.elapsed_s < 600.0,
        "runtime {:.0}s exceeds 10 minutes",
        c4.elapsed_s
    );
    // Smoke invariant: the 500-step moving average of the training loss
    // never increases. Records are 250 steps apart, so a window averages
    // two consecutive rows.
    let losses: Vec<f64> = c4
        .outcome
        .history
        .records
        .iter()
        .map(|r| r.train_loss)
        .collect();
    let windows: Vec<f64> = losses.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    for pair in windows.windows(2) {
        assert!(
            pair[1] <= pair[0],
            "loss moving average increased: {pair:?}"
        );
    }
    println!(
        "ACCEPTANCE C4 PASS: mean RAE {:.4} (best, step {}), max RAE {:.2}, {} steps in {:.0}s",
        report.best_mean_rae, report.best_step, report.final_max_rae, report.steps_run, c4.elapsed_s
    );
}

// ─── C5: initialization ablation direction ───────────────────────────────────

fn row<'a>(rows: &'a [AblationRow], variant: InitVariant) -> &'a AblationRow {
    rows.iter()
        .find(|r| r.scheme.variant == variant)
        .expect("scheme present")
}

/// NaN (a diverged or failed run) counts as arbitrarily bad.
fn rae_or_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

#[test]
fn c05_init_ablation_orders_as_reported() {
    let rows = c5_rows();
    let exact = rae_or_inf(row(rows, InitVariant::ExactDft).final_mean_rae);
    let perturbed = rae_or_inf(
        row(rows, InitVariant::PerturbedDft { gamma: 0.1 }).final_mean_rae,
    );
    let random = rae_or_inf(row(rows, InitVariant::Random).final_mean_rae);
    let gamma2 = rae_or_inf(
        row(rows, InitVariant::PerturbedDft { gamma: 2.0 }).final_mean_rae,
    );

    // Perturbed recovers to the exact solution's level within the
    // convergence tolerance of criterion 4.
    assert!(
        perturbed <= exact + 0.05,
        "perturbed {perturbed} vs exact {exact}"
    );
    assert!(
        random >= 2.0 * perturbed,
        "random {random} not >= 2x perturbed {perturbed}"
    );
    assert!(gamma2 > perturbed, "gamma=2 {gamma2} vs gamma=0.1 {perturbed}");
    println!(
        "ACCEPTANCE C5 PASS: exact {exact:.2e}, perturbed(0.1) {perturbed:.2e}, random {random:.2e} ({}x), gamma2 {gamma2:.2e}",
        (random / perturbed).round()
    );
}

// ─── C6: weight-drift direction ──────────────────────────────────────────────

#[test]
fn c06_perturbed_init_drifts_more_than_exact() {
    let rows = c5_rows();
    let exact = row(rows, InitVariant::ExactDft);
    let perturbed = row(rows, InitVariant::PerturbedDft { gamma: 0.1 });
    // Parts 2..6 are the real/imaginary planes of the two DFT matrices.
    for part in 2..6 {
        assert!(
            perturbed.drift[part] > exact.drift[part],
            "{}: perturbed {} vs exact {}",
            PART_NAMES[part],
            perturbed.drift[part],
            exact.drift[part]
        );
    }
    // The criterion-4 run shows the same direction.
    let c4_drift = weight_drift(&c4().outcome.init_snapshot, &c4().outcome.params).unwrap();
    for part in 2..6 {
        assert!(c4_drift[part].1 > exact.drift[part]);
    }
    println!(
        "ACCEPTANCE C6 PASS: drift(perturbed) {:.3}/{:.3} > drift(exact) {:.2e}/{:.2e} (range/doppler re)",
        perturbed.drift[2], perturbed.drift[4], exact.drift[2], exact.drift[4]
    );
}

// ─── C7: classical chain end to end ──────────────────────────────────────────

#[test]
fn c07_classic_chain_recovers_targets_within_one_bin() {
    let radar = RadarConfig {
        // Weakest target amplitude 0.5 sits at exactly 20 dB SNR.
        noise_std: 0.0353,
        ..RadarConfig::default()
    };
    let sp = SpConfig::default();
    let cfar = CfarConfig::default();
    let grid = radar.azimuth_grid(sp.n_azimuth_bins);
    let (wr, wd) = sp.windows(&radar).unwrap();

    let frames = 200;
    let (mut range_ok, mut doppler_ok, mut azimuth_ok, mut music_ok) = (0, 0, 0, 0);
    for id in 0..frames {
        let scene = sample_scene(&radar, (1, 1), ScenePolicy::Random, 2024, id).unwrap();
        let target = scene.targets[0];
        let adc = synth_adc(&scene, &radar).unwrap();
        let dets = classic_detections(&adc, &radar, &sp, &cfar).unwrap();
        let Some(best) = dets
            .iter()
            .max_by(|a, b| a.snr_estimate.partial_cmp(&b.snr_estimate).unwrap())
        else {
            continue;
        };

        let range_true = radar.range_bin_float(target.range_m);
        if (best.range_bin as f64 - range_true).abs() <= 1.0 {
            range_ok += 1;
        }
        let doppler_true = radar.doppler_bin_float(target.velocity_mps);
        let doppler_det = best.doppler_bin as f64 - (radar.n_chirps / 2) as f64;
        if (doppler_det - doppler_true).abs() <= 1.0 {
            doppler_ok += 1;
        }
        let az_det = grid.position_of_sin(best.azimuth_rad.sin());
        let az_true = grid.position_of_sin(target.azimuth_rad.sin());
        if (az_det - az_true).abs() <= 1.0 {
            azimuth_ok += 1;
        }

        // MUSIC at the detected cell vs the FFT estimate.
        let rd = adc_to_rd(&adc, &wr, &wd, sp.scaling).unwrap();
        let snap = rd.snapshot(best.range_bin, best.doppler_bin);
        let mat = ComplexTensor::new(
            vec![snap.len(), 1],
            snap.re().to_vec(),
            snap.im().to_vec(),
        )
        .unwrap();
        let music = aoa_music(&mat, 1, &grid).unwrap();
        let fft = aoa_fft(&snap, sp.n_azimuth_bins, sp.scaling).unwrap();
        if (music.argmax()[0] as isize - fft.argmax()[0] as isize).abs() <= 1 {
            music_ok += 1;
        }
    }
    let need = (0.95 * frames as f64).ceil() as usize;
    assert!(range_ok >= need, "range: {range_ok}/{frames}");
    assert!(doppler_ok >= need, "doppler: {doppler_ok}/{frames}");
    assert!(azimuth_ok >= need, "azimuth: {azimuth_ok}/{frames}");
    assert!(music_ok >= need, "music agreement: {music_ok}/{frames}");
    println!(
        "ACCEPTANCE C7 PASS: {frames} frames, within one bin: range {range_ok}, doppler {doppler_ok}, azimuth {azimuth_ok}; MUSIC/FFT agreement {music_ok}"
    );
}

// ─── C8: loss and metric unit suite ──────────────────────────────────────────

/// Second, acceptance-local greedy matcher: rescans all remaining pairs at
/// every step.
fn brute_match(
    dets: &[ScoredDetection],
    gts: &[GtObject],
    tol: &MatchTolerance,
) -> Vec<(usize, usize)> {
    let mut used_d = vec![false; dets.len()];
    let mut used_g = vec![false; gts.len()];
    let mut pairs = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, d) in dets.iter().enumerate() {
            if used_d[i] {
                continue;
            }
            for (j, g) in gts.iter().enumerate() {
                if used_g[j] {
                    continue;
                }
                let dr = (d.range_m - g.range_m).abs();
                if dr > tol.range_m || (d.azimuth_rad - g.azimuth_rad).abs() > tol.azimuth_rad {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bd, bi, bj)) => dr < bd || (dr == bd && (i, j) < (bi, bj)),
                };
                if better {
                    best = Some((dr, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                used_d[i] = true;
                used_g[j] = true;
                pairs.push((i, j));
            }
            None => break,
        }
    }
    pairs
}

#[test]
fn c08_loss_and_metric_unit_suite() {
    // Focal with gamma 0, alpha 1/2 halves the BCE exactly.
    let mut rng = SeededRng::new(808);
    let p = RealTensor::new(vec![64], (0..64).map(|_| rng.next_f64()).collect()).unwrap();
    let y = RealTensor::new(
        vec![64],
        (0..64).map(|_| (rng.next_f64() > 0.5) as u8 as f64).collect(),
    )
    .unwrap();
    let (fl, _) = focal_loss(&p, &y, 0.0, 0.5).unwrap();
    let (bce, _) = bce_loss(&p, &y).unwrap();
    assert!((fl - 0.5 * bce).abs() < 1e-12, "{fl} vs {bce}");

    // Smooth-L1 branch values.
    let one = |v: f64| RealTensor::new(vec![1], vec![v]).unwrap();
    let (l, _) = smooth_l1(&one(0.5), &one(0.0), 1.0).unwrap();
    assert!((l - 0.125).abs() < 1e-15);
    let (l, g) = smooth_l1(&one(2.0), &one(0.0), 1.0).unwrap();
    assert!((l - 1.5).abs() < 1e-15);
    assert!((g.data()[0] - 1.0).abs() < 1e-15);

    // mIOU hand cases: 1, 0, 1/2, 1/3.
    let m = |a: &[f64], b: &[f64]| {
        miou(
            &RealTensor::new(vec![a.len()], a.to_vec()).unwrap(),
            &RealTensor::new(vec![b.len()], b.to_vec()).unwrap(),
        )
        .unwrap()
    };
    assert_eq!(m(&[1., 1., 0., 0.], &[1., 1., 0., 0.]), 1.0);
    assert_eq!(m(&[1., 1., 0., 0.], &[0., 0., 1., 1.]), 0.0);
    assert_eq!(m(&[1., 0., 0., 0.], &[1., 1., 0., 0.]), 0.5);
    assert!((m(&[1., 1., 0., 0.], &[0., 1., 1., 0.]) - 1.0 / 3.0).abs() < 1e-15);

    // Scorer vs the brute-force matcher on 100 random frames, exactly.
    let tol = MatchTolerance {
        range_m: 0.8,
        azimuth_rad: 0.3,
    };
    let thresholds = [0.25, 0.5, 0.75];
    for _ in 0..100 {
        let gts: Vec<GtObject> = (0..rng.next_index(6))
            .map(|_| GtObject {
                range_m: rng.next_range(0.0, 10.0),
                azimuth_rad: rng.next_range(-1.0, 1.0),
            })
            .collect();
        let dets: Vec<ScoredDetection> = (0..rng.next_index(6))
            .map(|_| ScoredDetection {
                range_m: rng.next_range(0.0, 10.0),
                azimuth_rad: rng.next_range(-1.0, 1.0),
                score: rng.next_f64(),
            })
            .collect();
        let scored = score_detections(
            &[dets.clone()],
            &[gts.clone()],
            &tol,
            &thresholds,
        )
        .unwrap();
        for (k, &t) in thresholds.iter().enumerate() {
            let kept: Vec<ScoredDetection> =
                dets.iter().copied().filter(|d| d.score >= t).collect();
            let tp = brute_match(&kept, &gts, &tol).len();
            let precision = if kept.is_empty() {
                1.0
            } else {
                tp as f64 / kept.len() as f64
            };
            let recall = if gts.is_empty() {
                1.0
            } else {
                tp as f64 / gts.len() as f64
            };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            let got = scored.per_threshold[k];
            assert_eq!(got.1, precision);
            assert_eq!(got.2, recall);
            assert_eq!(got.3, f1);
        }
    }
    println!("ACCEPTANCE C8 PASS: focal/BCE identity, smooth-L1 branches, mIOU hand cases, scorer vs brute force on 100 frames");
}

// ─── C9: toy multi-task fine-tune ────────────────────────────────────────────

#[test]
fn c09_toy_head_finetune_reaches_quality_bars() {
    let t0 = Instant::now();
    let out = run_c9_finetune();
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(
        out.eval.detection.f1 >= 0.9,
        "F1 {} under 0.9",
        out.eval.detection.f1
    );
    assert!(out.eval.miou >= 0.8, "mIOU {} under 0.8", out.eval.miou);
    assert!(elapsed < 300.0, "runtime {elapsed:.0}s exceeds 5 minutes");
    println!(
        "ACCEPTANCE C9 PASS: F1 {:.3}, AP {:.3}, AR {:.3}, mIOU {:.3} after 2000 steps in {elapsed:.0}s",
        out.eval.detection.f1, out.eval.detection.ap, out.eval.detection.ar, out.eval.miou
    );
}

// ─── C10: determinism ────────────────────────────────────────────────────────

fn file_eq(a: &Path, b: &Path, name: &str) {
    let fa = std::fs::read(a.join(name)).unwrap();
    let fb = std::fs::read(b.join(name)).unwrap();
    assert_eq!(fa, fb, "{name} differs between reruns");
}

#[test]
fn c10_reruns_are_byte_identical() {
    // Criterion 4 rerun.
    let first = c4();
    let rerun_dir = fixture().root.join("c10-distill");
    let rerun = run_c4_distill(&rerun_dir);
    assert_eq!(first.outcome.report, rerun.report);
    for ckpt in ["checkpoint-best", "checkpoint-final"] {
        let a = first.out_dir.join(ckpt);
        let b = rerun_dir.join(ckpt);
        for name in [
            "win_range.rten",
            "win_doppler.rten",
            "w_range.rten",
            "w_doppler.rten",
            "w_angle.rten",
            "meta.json",
        ] {
            file_eq(&a, &b, name);
        }
    }
    file_eq(&first.out_dir, &rerun_dir, "report.json");
    // The history CSV is identical apart from its wall-clock column.
    let strip = |path: &Path| -> String {
        std::fs::read_to_string(path.join("history.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&first.out_dir), strip(&rerun_dir));

    // Criterion 9 rerun.
    let head_a = run_c9_finetune();
    let head_b = run_c9_finetune();
    assert_eq!(head_a.head, head_b.head);
    assert_eq!(head_a.eval, head_b.eval);
    let dir_a = fixture().root.join("c10-head-a");
    let dir_b = fixture().root.join("c10-head-b");
    head_a.head.save(&dir_a, 2000, "digest").unwrap();
    head_b.head.save(&dir_b, 2000, "digest").unwrap();
    for name in ["head.rten", "head_meta.json"] {
        file_eq(&dir_a, &dir_b, name);
    }
    println!("ACCEPTANCE C10 PASS: distillation and fine-tune reruns byte-identical (history compared modulo wall_ms)");
}
