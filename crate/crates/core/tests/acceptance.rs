//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Training uses a reduced epoch count (see `EPOCHS`); every tolerance is
//! the full one.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use samkit::cables::{actuation_matrix, joints_to_cables, CableGeometry};
use samkit::calibration::{calibration_report, Q3_BAND, Q3_MIN_SIGN_RATIO, Q3_REFERENCE};
use samkit::config::{model_seed, Config};
use samkit::controller::{latency_probe, Controller};
use samkit::datagen::{collect_dataset, record, Split, Trajectory, TRAIN_TRANSLATIONS};
use samkit::eval::{
    compare_tracking, model_test_error, run_box_pointing, tracking_trajectory, train_member,
    BoxTaskOptions, Uncalibrated,
};
use samkit::kinematics::pose_error;
use samkit::plant::{cycle_mae, simulate, triangle_sweep, PlantParams};
use samkit::pose::{
    base_frame, base_marker_centers, ee_frame, fit_sphere_ransac, measurement_ik_options,
    physical_joints, synth_marker_cloud, EeMarkerLayout, MarkerNoise, RansacOptions,
};
use samkit::tcn::{num_blocks, TcnConfig, TcnModel, TrainOptions};
use samkit::transform::{rot_x, rot_z, RigidTransform};
use samkit::workspace::{
    simpson_volume, workspace_report, WorkspaceGrid, WorkspaceOptions, REPORT_TRANSLATIONS,
};
use samkit::{chain_fk, inverse_kinematics, IkOptions, JointConfig, JointLimits, SegmentParams};

/// Training epochs per model. The default profile trains for 1500; one CPU
/// core cannot afford that here, and 40 epochs already pass the thresholds.
const EPOCHS: usize = 40;
const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(t: Duration, limit_s: f64) -> bool {
    t.as_secs_f64() < limit_s
}

fn c1_kinematics_round_trip() -> Outcome {
    let t0 = Instant::now();
    let g = SegmentParams::default();
    let l = JointLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..1000 {
        let q = JointConfig(std::array::from_fn(|j| rng.gen_range(l.min(j)..=l.max(j))));
        let target = chain_fk(&q, &g);
        let Ok(s) = inverse_kinematics(&target, &g, &JointConfig::ZERO, &IkOptions::default())
        else {
            continue;
        };
        let err = pose_error(&chain_fk(&s.q, &g), &target, 10.0);
        if s.converged && err < 1e-6 {
            ok += 1;
            worst = worst.max(err);
        }
    }
    let t = t0.elapsed();
    outcome(
        ok >= 990 && within(t, 30.0),
        format!(
            "{ok}/1000 converged with pose error < 1e-6 (worst {worst:.1e}), {:.1}s",
            t.as_secs_f64()
        ),
    )
}

fn c2_block_counts() -> Outcome {
    // Smallest n with (2k-2)·2^(n-1) >= L-1, in exact integer arithmetic.
    let direct = |l: usize, k: usize| {
        (1..)
            .find(|&n: &usize| (2 * k - 2) << (n - 1) >= l - 1)
            .unwrap()
    };
    let mut got = Vec::new();
    let mut pass = true;
    for (l, expected) in [(10, 3), (50, 5), (100, 6), (150, 7)] {
        let n = num_blocks(l, 3).unwrap_or(0);
        pass &= n == expected && n == direct(l, 3);
        got.push(format!("L={l}: {n}"));
    }
    for l in 2..400 {
        for k in 2..6 {
            pass &= num_blocks(l, k).ok() == Some(direct(l, k));
        }
    }
    outcome(
        pass,
        format!(
            "{} (matches integer formula for L<400, k<6)",
            got.join(", ")
        ),
    )
}

fn c3_cable_matrix() -> Outcome {
    let t0 = Instant::now();
    let cg = CableGeometry::default();
    let a = actuation_matrix(&cg);
    let (e, w, we) = (cg.d_e / 2.0, cg.d_w / 2.0, cg.d_we / 2.0);
    let (jep, jey, jwp, j) = (cg.d_jep / 2.0, cg.d_jey / 2.0, cg.d_jwp / 2.0, cg.d_j / 2.0);
    #[rustfmt::skip]
    let printed = [
        [1.0, 0.0, 0.0,  0.0,  0.0,  0.0, 0.0],
        [0.0, 1.0, 0.0,  0.0,  0.0,  0.0, 0.0],
        [0.0, 0.0, e,    -e,   0.0,  0.0, 0.0],
        [0.0, 0.0, -e,   e,    0.0,  0.0, 0.0],
        [0.0, 0.0, e,    e,    0.0,  0.0, 0.0],
        [0.0, 0.0, -e,   -e,   0.0,  0.0, 0.0],
        [0.0, 0.0, w,    0.0,  we,   0.0, 0.0],
        [0.0, 0.0, -w,   0.0,  -we,  0.0, 0.0],
        [0.0, 0.0, jep,  jey,  jwp,  j,   -j],
        [0.0, 0.0, -jep, -jey, -jwp, -j,  j],
        [0.0, 0.0, -jep, -jey, -jwp, j,   j],
        [0.0, 0.0, jep,  jey,  jwp,  -j,  -j],
    ];
    let entries_ok = (0..12).all(|r| (0..7).all(|c| a[(r, c)] == printed[r][c]));
    let l = JointLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut zero_sum, mut q1_neutral) = (true, true);
    for _ in 0..10_000 {
        let q = JointConfig(std::array::from_fn(|j| rng.gen_range(l.min(j)..=l.max(j))));
        let d = joints_to_cables(&q, &cg);
        zero_sum &= d.pair_sums().iter().all(|s| s.abs() < 1e-12);
        let mut q2 = q;
        q2[0] = rng.gen_range(l.min(0)..=l.max(0));
        let d2 = joints_to_cables(&q2, &cg);
        q1_neutral &= (2..12).all(|i| d.0[i] == d2.0[i]);
    }
    let t = t0.elapsed();
    outcome(
        entries_ok && zero_sum && q1_neutral && within(t, 5.0),
        format!(
            "entries {}, pair sums zero {zero_sum}, q1-neutral {q1_neutral} on 10000 inputs, {:.2}s",
            if entries_ok { "exact" } else { "differ" },
            t.as_secs_f64()
        ),
    )
}

fn c4_workspace_growth() -> Outcome {
    let t0 = Instant::now();
    let opts = WorkspaceOptions {
        voxel_size: 1.0,
        n_samples: 1_000_000,
        seed: SEED,
        ..WorkspaceOptions::default()
    };
    let g = SegmentParams::default();
    let l = JointLimits::default();
    let r = match workspace_report(&g, &l, &REPORT_TRANSLATIONS, &opts) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let semi: Vec<f64> = r.rows[..REPORT_TRANSLATIONS.len()]
        .iter()
        .map(|row| row.total_mm3)
        .collect();
    let increasing = semi.windows(2).all(|w| w[1] > w[0]);
    let zero = |mode| {
        samkit::workspace::workspace_volumes(&g, &l, 0.0, mode, &opts)
            .map(|v| (v.reachable, v.total))
            .unwrap_or((f64::NAN, f64::NAN))
    };
    let same_at_zero = zero(samkit::workspace::WorkspaceMode::SemiActive)
        == zero(samkit::workspace::WorkspaceMode::General);
    let ratio_ok = (4.0..=7.0).contains(&r.gain_ratio);
    let t = t0.elapsed();
    outcome(
        increasing && same_at_zero && ratio_ok && within(t, 120.0),
        format!(
            "volumes {} mm^3 (increasing {increasing}), q1=0 modes identical {same_at_zero}, ratio {:.3} in [4, 7], {:.1}s",
            semi.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" "),
            r.gain_ratio,
            t.as_secs_f64()
        ),
    )
}

fn c5_simpson_oracle() -> Outcome {
    let t0 = Instant::now();
    let h = 0.5;
    let volume = |inside: &dyn Fn(&Vector3<f64>) -> bool, half: f64| {
        let e = half + 2.0 * h;
        let grid = WorkspaceGrid::rasterize([-e; 3], [e; 3], h, |p| inside(p)).expect("grid");
        simpson_volume(&grid)
    };
    let r = 20.0;
    let sphere = volume(&|p: &Vector3<f64>| p.norm() <= r, r);
    let sphere_exact = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
    let (rc, hc) = (15.0, 30.0);
    let cyl = volume(
        &|p: &Vector3<f64>| p.x * p.x + p.y * p.y <= rc * rc && p.z.abs() <= hc / 2.0,
        16.0,
    );
    let cyl_exact = std::f64::consts::PI * rc * rc * hc;
    let es = (sphere / sphere_exact - 1.0).abs();
    let ec = (cyl / cyl_exact - 1.0).abs();
    let t = t0.elapsed();
    outcome(
        es < 0.03 && ec < 0.03 && within(t, 30.0),
        format!(
            "sphere error {:.2}%, cylinder error {:.2}% (voxel 0.5 mm), {:.2}s",
            100.0 * es,
            100.0 * ec,
            t.as_secs_f64()
        ),
    )
}

fn c6_plant_calibration(plant: &PlantParams) -> Outcome {
    let t0 = Instant::now();
    let q1: Vec<f64> = Q3_REFERENCE.iter().map(|r| r.0).collect();
    let report = match calibration_report(plant, &q1, 1000, Split::Train.seed(SEED)) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let mut detail: Vec<String> = report
        .q3
        .iter()
        .map(|c| {
            format!(
                "q1={}: q3 MAE {:.2} in [{:.2}, {:.2}], MSE/MAE {:.3}",
                c.q1, c.mae, c.band[0], c.band[1], c.sign_ratio
            )
        })
        .collect();
    let bands_ok = report.q3.iter().all(|c| c.in_band && c.sign_ok);
    // The first sweep after reset leaves the virgin state and does not close;
    // loops are compared from the second sweep on.
    let cycles = 6;
    let cmds = triangle_sweep(2, 60.0, 3.0, cycles, 0.0);
    let phy = simulate(&cmds, plant);
    let len = cmds.len() / cycles;
    let rep: Vec<f64> = (2..cycles)
        .map(|c| {
            cycle_mae(
                &phy[(c - 1) * len..c * len],
                &phy[c * len..(c + 1) * len],
                2,
            )
        })
        .collect();
    let worst_rep = rep.iter().copied().fold(0.0, f64::max);
    let closed = (phy[2 * len - 1][2] - phy[len - 1][2]).abs();
    detail.push(format!("loop repeatability MAE {worst_rep:.3} deg over {} loop pairs (loop closure gap {closed:.3})", rep.len()));
    let t = t0.elapsed();
    detail.push(format!("{:.2}s", t.as_secs_f64()));
    // Sanity: the pinned band and ratio are the ones checked.
    let pinned = Q3_BAND == 0.25 && Q3_MIN_SIGN_RATIO == 0.85;
    outcome(
        bands_ok && worst_rep <= 0.25 && pinned && within(t, 120.0),
        detail.join("; "),
    )
}

fn c7_gradient_check() -> Outcome {
    let t0 = Instant::now();
    let model = TcnModel::new(TcnConfig::new(4, 2, 2, 3, 2, 21).unwrap()).unwrap();
    let batch = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x: Vec<f64> = (0..batch * 4 * 2)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let y: Vec<f64> = (0..batch * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, grad) = model.loss_and_grad(&x, &y, batch).unwrap();
    let h = 1e-6;
    let mut per_group = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, range) in model.param_groups() {
        let mut g_worst: f64 = 0.0;
        for i in range {
            let mut p = model.clone();
            p.params[i] += h;
            let up = p.loss_and_grad(&x, &y, batch).unwrap().0;
            p.params[i] -= 2.0 * h;
            let down = p.loss_and_grad(&x, &y, batch).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            g_worst = g_worst.max(rel);
        }
        worst = worst.max(g_worst);
        let class = name.rsplit('.').take(2).collect::<Vec<_>>();
        per_group.push(format!("{}.{}", class[1], class[0]));
    }
    per_group.sort();
    per_group.dedup();
    let t = t0.elapsed();
    outcome(
        worst < 1e-4 && within(t, 10.0),
        format!(
            "max relative error {worst:.2e} over classes [{}], {:.2}s",
            per_group.join(", "),
            t.as_secs_f64()
        ),
    )
}

/// Data and ensemble shared by criteria 8 to 10.
struct Trained {
    config: Config,
    models: Vec<TcnModel>,
    train: Vec<Trajectory>,
    valid: Vec<Trajectory>,
    test: Vec<Trajectory>,
    train_time: Duration,
}

fn train_ensemble() -> Result<Trained, String> {
    let t0 = Instant::now();
    let config = Config {
        seed: SEED,
        ..Config::default()
    };
    let plant = &config.plant;
    let d = &config.data;
    let train = collect_dataset(&TRAIN_TRANSLATIONS, d.n_per, plant, Split::Train.seed(SEED))
        .map_err(|e| e.to_string())?;
    let valid = collect_dataset(
        &TRAIN_TRANSLATIONS,
        d.n_valid,
        plant,
        Split::Valid.seed(SEED),
    )
    .map_err(|e| e.to_string())?;
    let test = d
        .test_translations
        .iter()
        .map(|&q1| {
            let des = tracking_trajectory(&d.ranges, d.interp_step, q1, d.test_points, SEED)?;
            Ok(Trajectory {
                q1,
                seed: SEED,
                records: record(&des, plant),
            })
        })
        .collect::<samkit::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let mut models = Vec::new();
    for i in 0..config.model.n_models {
        let cfg = config
            .model
            .tcn_config(SEED, i)
            .map_err(|e| e.to_string())?;
        let opts = TrainOptions {
            epochs: EPOCHS,
            shuffle_seed: model_seed(SEED, i),
            ..config.train
        };
        let out = train_member(cfg, &config.limits, &train, &valid, &opts, |_| {})
            .map_err(|e| e.to_string())?;
        models.push(out.model);
    }
    Ok(Trained {
        config,
        models,
        train,
        valid,
        test,
        train_time: t0.elapsed(),
    })
}

fn controller(t: &Trained) -> Controller {
    Controller::new(
        t.models
            .iter()
            .enumerate()
            .map(|(i, m)| (format!("model_{i}"), m.clone()))
            .collect(),
    )
    .expect("matching models")
}

fn c8_compensation(t: &Trained) -> Outcome {
    let t0 = Instant::now();
    let mut ctrl = controller(t);
    let plant = &t.config.plant;
    let mut pass = true;
    let mut detail = Vec::new();
    for tr in &t.test {
        let des = tr.commands();
        let c = match compare_tracking(&mut ctrl, &des, plant) {
            Ok(c) => c,
            Err(e) => return outcome(false, format!("error: {e}")),
        };
        let q3 = c.improvement[2].unwrap_or(f64::NEG_INFINITY);
        let all_improved =
            (1..6).all(|j| c.calibrated.joints[j].mae < c.uncalibrated.joints[j].mae);
        pass &= q3 >= 0.5 && all_improved;
        let per_joint: Vec<String> = (1..6)
            .map(|j| {
                format!(
                    "q{} {:.1}->{:.1}",
                    j + 1,
                    c.uncalibrated.joints[j].mae,
                    c.calibrated.joints[j].mae
                )
            })
            .collect();
        detail.push(format!(
            "q1={}: q3 -{:.1}% [{}]",
            c.q1,
            100.0 * q3,
            per_joint.join(" ")
        ));
    }
    let geom = t.config.geometry;
    let opts = BoxTaskOptions::default();
    let boxes = run_box_pointing(&mut Uncalibrated, plant, &geom, &opts, SEED)
        .and_then(|u| run_box_pointing(&mut ctrl, plant, &geom, &opts, SEED).map(|c| (u, c)));
    match boxes {
        Ok((u, c)) => {
            let imp = samkit::eval::improvement(u.euclidean.mean, c.euclidean.mean)
                .unwrap_or(f64::NEG_INFINITY);
            pass &= imp >= 0.15;
            detail.push(format!(
                "box euclidean {:.2}->{:.2} mm (-{:.1}%, {} boxes, {} skipped)",
                u.euclidean.mean,
                c.euclidean.mean,
                100.0 * imp,
                c.records.len(),
                c.skipped
            ));
        }
        Err(e) => {
            pass = false;
            detail.push(format!("box error: {e}"));
        }
    }
    let total = t.train_time + t0.elapsed();
    pass &= within(total, 1800.0);
    detail.push(format!(
        "{} epochs/model, {:.1}s incl. training",
        EPOCHS,
        total.as_secs_f64()
    ));
    outcome(pass, detail.join("; "))
}

fn c9_sequence_length(t: &Trained) -> Outcome {
    let t0 = Instant::now();
    let cfg50 = match t
        .config
        .model
        .tcn_config(SEED, 0)
        .and_then(|c| TcnConfig::new(50, c.kernel_size, 7, c.channels_hidden, 7, c.seed))
    {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let opts = TrainOptions {
        epochs: EPOCHS,
        shuffle_seed: model_seed(SEED, 0),
        ..t.config.train
    };
    let m50 = match train_member(cfg50, &t.config.limits, &t.train, &t.valid, &opts, |_| {}) {
        Ok(o) => o.model,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let e10 = model_test_error(&t.models[0], &t.test);
    let e50 = model_test_error(&m50, &t.test);
    let el = t0.elapsed();
    match (e10, e50) {
        (Ok(a), Ok(b)) => outcome(
            a.pooled_mae <= b.pooled_mae && within(el, 1200.0),
            format!(
                "test MAE L=10 {:.3} ± {:.3} vs L=50 {:.3} ± {:.3} deg, {:.1}s extra",
                a.pooled_mae,
                a.pooled_sd,
                b.pooled_mae,
                b.pooled_sd,
                el.as_secs_f64()
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("error: {e}")),
    }
}

fn c10_latency(t: &Trained) -> Outcome {
    let t0 = Instant::now();
    let mut ctrl = controller(t);
    let inputs = t.test[1].commands();
    let _ = latency_probe(&mut ctrl, &inputs, 200);
    ctrl.reset();
    match latency_probe(&mut ctrl, &inputs, 10_000) {
        Ok(s) => {
            let el = t0.elapsed();
            outcome(
                s.p99_us < 1000.0 && within(el, 60.0),
                format!(
                    "{} models, p50 {:.1} us, p99 {:.1} us, max {:.1} us over 10000 steps, {:.1}s",
                    t.models.len(),
                    s.p50_us,
                    s.p99_us,
                    s.max_us,
                    el.as_secs_f64()
                ),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

const POSES: u64 = 50;

fn c11_pose_loop() -> Outcome {
    let t0 = Instant::now();
    let g = SegmentParams::default();
    let l = JointLimits::default();
    let layout = EeMarkerLayout::default();
    let noise = MarkerNoise {
        sigma: 0.2,
        outlier_fraction: 0.3,
        ..MarkerNoise::default()
    };
    let cam_t_base = RigidTransform::new(rot_x(2.6) * rot_z(0.3), Vector3::new(10.0, 40.0, 300.0));
    let off = Vector3::zeros();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = [0.0f64; 7];
    let mut subsets = 0;
    let mut failures = 0;
    for trial in 0..POSES {
        let q = JointConfig(std::array::from_fn(|j| {
            if j == 6 {
                0.0
            } else {
                rng.gen_range(l.min(j)..=l.max(j))
            }
        }));
        let mut fit = |c: &Vector3<f64>| {
            let pts = synth_marker_cloud(c, &noise, &mut rng);
            fit_sphere_ransac(
                &pts,
                &RansacOptions {
                    seed: trial,
                    ..RansacOptions::default()
                },
            )
            .map(|f| f.center)
        };
        let base: Vec<_> = base_marker_centers(&cam_t_base, &off, 80.0, 60.0)
            .iter()
            .map(&mut fit)
            .collect();
        let cam_t_ee = cam_t_base.compose(&chain_fk(&q, &g));
        let ee: Vec<_> = (0..5)
            .map(|i| fit(&cam_t_ee.transform_point(&layout.point(i))))
            .collect();
        let (Ok(b0), Ok(b1), Ok(b2)) = (&base[0], &base[1], &base[2]) else {
            failures += 1;
            continue;
        };
        let Ok(est_base) = base_frame(b0, b1, b2, &off) else {
            failures += 1;
            continue;
        };
        for mask in 0u32..32 {
            if mask.count_ones() < 3 {
                continue;
            }
            subsets += 1;
            let m: [Option<Vector3<f64>>; 5] = std::array::from_fn(|i| {
                if mask >> i & 1 == 1 {
                    ee[i].as_ref().ok().copied()
                } else {
                    None
                }
            });
            let mut guess = q;
            (0..6).for_each(|j| guess[j] += 2.0);
            let sol = ee_frame(&m, &layout).and_then(|f| {
                physical_joints(
                    &est_base.transform,
                    &f.transform,
                    &g,
                    &l.clamp(&guess),
                    &measurement_ik_options(&l),
                )
            });
            match sol {
                Ok(s) => (0..7).for_each(|j| worst[j] = worst[j].max((s.q[j] - q[j]).abs())),
                Err(_) => failures += 1,
            }
        }
    }
    let max = worst[1..6].iter().copied().fold(0.0, f64::max);
    let t = t0.elapsed();
    outcome(
        failures == 0 && max < 0.5 && worst[0] < 0.5 && within(t, 60.0),
        format!(
            "{subsets} subset estimates over {POSES} poses (all 16 subsets of >= 3 markers), worst |dq| q1 {:.3} mm, q2..q6 {:.3} deg, {failures} failures, {:.1}s",
            worst[0],
            max,
            t.as_secs_f64()
        ),
    )
}

/// `ACCEPTANCE_ONLY=6,11` restricts the run to the listed criteria.
fn selected() -> impl Fn(usize) -> bool {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    move |n| only.as_ref().map_or(true, |o| o.contains(&n))
}

fn main() -> ExitCode {
    let run = selected();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        if !run(n) {
            return;
        }
        let o = f();
        println!(
            "[{}] {n:>2}. {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };
    report(1, "kinematics round-trip", &c1_kinematics_round_trip);
    report(2, "block counts", &c2_block_counts);
    report(3, "cable matrix audit", &c3_cable_matrix);
    report(4, "workspace growth", &c4_workspace_growth);
    report(5, "Simpson oracle", &c5_simpson_oracle);
    report(6, "plant calibration", &|| {
        c6_plant_calibration(&PlantParams::default())
    });
    report(7, "TCN gradient check", &c7_gradient_check);
    if [8, 9, 10].into_iter().any(&run) {
        match train_ensemble() {
            Ok(t) => {
                report(8, "compensation efficacy", &|| c8_compensation(&t));
                report(9, "sequence-length ordering", &|| c9_sequence_length(&t));
                report(10, "latency", &|| c10_latency(&t));
            }
            Err(e) => {
                for (n, name) in [
                    (8, "compensation efficacy"),
                    (9, "sequence-length ordering"),
                    (10, "latency"),
                ] {
                    report(n, name, &|| outcome(false, format!("training failed: {e}")));
                }
            }
        }
    }
    report(11, "pose-estimation loop", &c11_pose_loop);
    let failed: Vec<_> = results
        .iter()
        .filter(|r| !r.2.pass)
        .map(|r| r.0.to_string())
        .collect();
    println!(
        "acceptance: {}/{} passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
