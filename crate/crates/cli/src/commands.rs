use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use samkit::cables::{cables_to_joints, joints_to_cables, CableDeltas};
use samkit::calibration::{calibration_report, fit_q3};
use samkit::config::{model_seed, Config};
use samkit::controller::{latency_probe, Controller};
use samkit::datagen::{collect_dataset_with, record, Split, Trajectory};
use samkit::eval::{
    compare_tracking, model_test_error, run_box_pointing, tracking_csv, tracking_trajectory,
    train_member, BoxTaskReport, Uncalibrated,
};
use samkit::tcn::{log_to_csv, TcnModel, TrainOptions};
use samkit::workspace::{
    workspace_report, workspace_volumes, WorkspaceMode, WorkspaceOptions, WorkspaceReport,
    WorkspaceRow,
};
use samkit::{inverse_kinematics, IkOptions, JointConfig, Manipulator, RigidTransform};

use crate::io::{
    plant_hash, read_joint_csv, read_split, write_joint_csv, write_trajectory, Output,
};
use crate::{Cli, Command, IkArgs, ModeArg, ModelArgs, TrainArgs, WorkspaceArgs};

const DEFAULT_CONFIG: &str = "samkit.conf";

struct Ctx {
    config: Config,
    config_path: Option<PathBuf>,
    seed: u64,
    out: Output,
}

impl Ctx {
    fn manifest(&self, name: &str, params: serde_json::Value) -> Result<()> {
        self.out
            .manifest(name, self.config_path.as_deref(), self.seed, params)
    }
}

fn load_config(cli: &Cli) -> Result<(Config, Option<PathBuf>)> {
    let (path, explicit) = match &cli.config {
        Some(p) => (p.clone(), true),
        None => (PathBuf::from(DEFAULT_CONFIG), false),
    };
    let config = if path.exists() {
        Config::load(&path).with_context(|| format!("loading {}", path.display()))?
    } else if explicit {
        bail!("config file {} not found", path.display());
    } else {
        return Ok((apply_scale(cli, Config::default()), None));
    };
    Ok((apply_scale(cli, config), Some(path)))
}

fn apply_scale(cli: &Cli, c: Config) -> Config {
    if cli.paper_scale {
        c.paper_scale()
    } else {
        c
    }
}

fn resolve_seed(cli: &Cli, config: &Config) -> Result<u64> {
    if let Some(s) = cli.seed {
        return Ok(s);
    }
    match std::env::var("SAMKIT_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("SAMKIT_SEED = {v:?} is not an integer")),
        Err(_) => Ok(config.seed),
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Fk { .. } => "fk",
        Command::Ik(_) => "ik",
        Command::Cables { .. } => "cables",
        Command::Workspace(_) => "workspace",
        Command::GenData { .. } => "gen-data",
        Command::CalibratePlant { .. } => "calibrate-plant",
        Command::Train(_) => "train",
        Command::EvaluateTracking { .. } => "evaluate-tracking",
        Command::EvaluateBox { .. } => "evaluate-box",
        Command::Compensate { .. } => "compensate",
        Command::Latency { .. } => "latency",
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let (mut config, config_path) = load_config(cli)?;
    let seed = resolve_seed(cli, &config)?;
    config.seed = seed;
    let name = subcommand_name(&cli.command);
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| Path::new("out").join(name));
    let ctx = Ctx {
        config,
        config_path,
        seed,
        out: Output::create(&out_dir)?,
    };
    match &cli.command {
        Command::Fk { q } => fk(&ctx, q),
        Command::Ik(a) => ik(&ctx, a),
        Command::Cables { q, deltas } => cables(&ctx, q.as_deref(), deltas.as_deref()),
        Command::Workspace(a) => workspace(&ctx, a),
        Command::GenData { n_per } => gen_data(&ctx, *n_per),
        Command::CalibratePlant {
            n_per,
            fit,
            max_evals,
        } => calibrate(&ctx, *n_per, *fit, *max_evals),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::EvaluateTracking { models, q1, points } => {
            evaluate_tracking(&ctx, models, q1, *points)
        }
        Command::EvaluateBox { models, trials } => evaluate_box(&ctx, models, *trials),
        Command::Compensate {
            models,
            input,
            clamp,
            latency_probe,
        } => compensate(&ctx, models, input, *clamp, *latency_probe),
        Command::Latency { models, n } => latency(&ctx, models, *n),
    }
}

fn joints(v: &[f64]) -> JointConfig {
    JointConfig(std::array::from_fn(|i| v[i]))
}

fn print_matrix(t: &RigidTransform) {
    let m = t.to_row_major();
    for r in 0..4 {
        println!(
            "{:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            m[4 * r],
            m[4 * r + 1],
            m[4 * r + 2],
            m[4 * r + 3]
        );
    }
}

fn fk(ctx: &Ctx, q: &[f64]) -> Result<()> {
    let q = joints(q);
    let m = Manipulator::new(ctx.config.geometry, ctx.config.limits)?;
    let t = m.fk(&q)?;
    print_matrix(&t);
    ctx.out
        .write_json("fk.json", &json!({ "q": q, "transform": t.to_row_major() }))?;
    ctx.manifest("fk", json!({ "q": q }))
}

fn ik(ctx: &Ctx, a: &IkArgs) -> Result<()> {
    let geom = ctx.config.geometry;
    let target = match (&a.pose, &a.target_q) {
        (Some(p), _) => RigidTransform::from_row_major(p)?,
        (None, Some(q)) => Manipulator::new(geom, ctx.config.limits)?.fk(&joints(q))?,
        (None, None) => bail!("either --pose or --target-q is required"),
    };
    let init = a.init.as_deref().map(joints).unwrap_or(JointConfig::ZERO);
    let opts = IkOptions {
        seed: ctx.seed,
        bounds: ctx.config.limits,
        ..IkOptions::default()
    };
    let sol = inverse_kinematics(&target, &geom, &init, &opts)?;
    println!("q = {}", sol.q);
    println!(
        "pose error = {:.3e}  converged = {}  iterations = {}",
        sol.pose_error, sol.converged, sol.iterations
    );
    ctx.out.write_json(
        "ik.json",
        &json!({
            "target": target.to_row_major(),
            "q": sol.q,
            "pose_error": sol.pose_error,
            "converged": sol.converged,
            "iterations": sol.iterations,
            "starts": sol.starts,
        }),
    )?;
    ctx.manifest(
        "ik",
        json!({ "pose": a.pose, "target_q": a.target_q, "init": a.init }),
    )?;
    if !sol.converged {
        bail!("IK did not converge (pose error {:.3e})", sol.pose_error);
    }
    Ok(())
}

fn cables(ctx: &Ctx, q: Option<&[f64]>, deltas: Option<&[f64]>) -> Result<()> {
    let cg = &ctx.config.cables;
    let names = [
        "dm1", "dm2", "dc3", "dc4", "dc5", "dc6", "dc7", "dc8", "dc9", "dc10", "dc11", "dc12",
    ];
    let (q, d) = match (q, deltas) {
        (Some(q), _) => {
            let q = joints(q);
            (q, joints_to_cables(&q, cg))
        }
        (None, Some(d)) => {
            let d = CableDeltas(std::array::from_fn(|i| d[i]));
            (cables_to_joints(&d, cg)?, d)
        }
        (None, None) => bail!("either --q or --deltas is required"),
    };
    println!("q = {q}");
    let mut csv = String::from("actuator,delta_mm\n");
    for (n, v) in names.iter().zip(d.0) {
        println!("{n:>5} {v:>12.6}");
        csv += &format!("{n},{v}\n");
    }
    ctx.out.write("cables.csv", &csv)?;
    ctx.out
        .write_json("cables.json", &json!({ "q": q, "deltas": d.0 }))?;
    ctx.manifest("cables", json!({ "q": q, "deltas": d.0 }))
}

fn workspace(ctx: &Ctx, a: &WorkspaceArgs) -> Result<()> {
    if !(a.step > 0.0) || !(a.q1_max >= 0.0) {
        bail!("--step must be positive and --q1-max non-negative");
    }
    let opts = WorkspaceOptions {
        voxel_size: a.voxel.unwrap_or(ctx.config.workspace.voxel_size),
        n_samples: a.samples.unwrap_or(ctx.config.workspace.n_samples),
        seed: ctx.seed,
        ..ctx.config.workspace
    };
    let mut translations = Vec::new();
    let mut t = 0.0;
    while t < a.q1_max - 1e-9 {
        translations.push(t);
        t += a.step;
    }
    translations.push(a.q1_max);
    let (geom, limits) = (&ctx.config.geometry, &ctx.config.limits);
    let report = match a.mode {
        ModeArg::Both => workspace_report(geom, limits, &translations, &opts)?,
        ModeArg::SemiActive | ModeArg::General => {
            let mode = if a.mode == ModeArg::General {
                WorkspaceMode::General
            } else {
                WorkspaceMode::SemiActive
            };
            let rows = translations
                .iter()
                .map(|&q1| {
                    let v = workspace_volumes(geom, limits, q1, mode, &opts)?;
                    Ok(WorkspaceRow {
                        q1_max: q1,
                        mode,
                        reachable_mm3: v.reachable,
                        total_mm3: v.total,
                    })
                })
                .collect::<samkit::Result<Vec<_>>>()?;
            WorkspaceReport {
                rows,
                gain_ratio: f64::NAN,
            }
        }
    };
    let mut csv = String::from("q1_max_mm,mode,reachable_mm3,total_mm3\n");
    for r in &report.rows {
        println!(
            "{:>7.1} {:>12} {:>14.1} {:>14.1}",
            r.q1_max,
            r.mode.name(),
            r.reachable_mm3,
            r.total_mm3
        );
        csv += &format!(
            "{},{},{},{}\n",
            r.q1_max,
            r.mode.name(),
            r.reachable_mm3,
            r.total_mm3
        );
    }
    if report.gain_ratio.is_finite() {
        println!(
            "semi-active total / general reachable = {:.3}",
            report.gain_ratio
        );
    }
    ctx.out.write("workspace.csv", &csv)?;
    ctx.out.write_json("workspace.json", &json!({ "rows": report.rows, "gain_ratio": report.gain_ratio.is_finite().then_some(report.gain_ratio) }))?;
    ctx.manifest("workspace", json!({ "q1_max": a.q1_max, "mode": format!("{:?}", a.mode), "step": a.step, "options": opts }))
}

/// Train and validation trajectories over the training translations.
fn generate_split(ctx: &Ctx, split: Split, n_per: usize) -> Result<Vec<Trajectory>> {
    let d = &ctx.config.data;
    Ok(collect_dataset_with(
        &d.train_translations,
        n_per,
        &d.ranges,
        d.interp_step,
        &ctx.config.plant,
        split.seed(ctx.seed),
    )?)
}

fn test_trajectories(
    ctx: &Ctx,
    translations: &[f64],
    points: usize,
) -> Result<Vec<Vec<JointConfig>>> {
    let d = &ctx.config.data;
    translations
        .iter()
        .map(|&q1| {
            Ok(tracking_trajectory(
                &d.ranges,
                d.interp_step,
                q1,
                points,
                ctx.seed,
            )?)
        })
        .collect()
}

fn gen_data(ctx: &Ctx, n_per: Option<usize>) -> Result<()> {
    let d = &ctx.config.data;
    let n_per = n_per.unwrap_or(d.n_per);
    let hash = plant_hash(&ctx.config.plant)?;
    let mut files = 0;
    for (split, n) in [(Split::Train, n_per), (Split::Valid, d.n_valid)] {
        for tr in generate_split(ctx, split, n)? {
            write_trajectory(&ctx.out.dir, split.name(), &tr, &hash)?;
            files += 1;
        }
    }
    for des in test_trajectories(ctx, &d.test_translations, d.test_points)? {
        let tr = Trajectory {
            q1: des[0].q1(),
            seed: ctx.seed,
            records: record(&des, &ctx.config.plant),
        };
        write_trajectory(&ctx.out.dir, Split::Test.name(), &tr, &hash)?;
        files += 1;
    }
    println!("wrote {files} dataset files to {}", ctx.out.dir.display());
    ctx.manifest(
        "gen-data",
        json!({ "n_per": n_per, "data": d, "plant_hash": hash }),
    )
}

fn calibrate(ctx: &Ctx, n_per: Option<usize>, fit: bool, max_evals: usize) -> Result<()> {
    let n_per = n_per.unwrap_or(ctx.config.data.n_per);
    let params = if fit {
        let p = fit_q3(&ctx.config.plant, n_per, ctx.seed, max_evals)?;
        println!(
            "fitted bias_gain = {:.4}, trans_gain_slope = {:.5}",
            p.bias_gain, p.trans_gain_slope
        );
        ctx.out.write("plant.toml", &toml_section("plant", &p)?)?;
        p
    } else {
        ctx.config.plant.clone()
    };
    let report = calibration_report(
        &params,
        &ctx.config.data.train_translations,
        n_per,
        ctx.seed,
    )?;
    println!(
        "{:>6} {}",
        "q1",
        (1..=7)
            .map(|j| format!("{:>14}", format!("q{j} MAE/MSE")))
            .collect::<String>()
    );
    for r in &report.rows {
        let cells: String = r
            .stats
            .joints
            .iter()
            .map(|s| format!("{:>7.2}/{:>6.2}", s.mae, s.mse))
            .collect();
        println!("{:>6.1} {cells}", r.q1);
    }
    for c in &report.q3 {
        println!(
            "q3 at q1 = {:>4.1}: MAE {:.2} in [{:.2}, {:.2}]: {}; MSE/MAE {:.3}: {}",
            c.q1,
            c.mae,
            c.band[0],
            c.band[1],
            if c.in_band { "ok" } else { "out of band" },
            c.sign_ratio,
            if c.sign_ok { "ok" } else { "low" }
        );
    }
    ctx.out.write("plant_stats.csv", &report.to_csv())?;
    ctx.out.write_json("plant_stats.json", &report)?;
    ctx.manifest(
        "calibrate-plant",
        json!({ "n_per": n_per, "fit": fit, "max_evals": max_evals, "plant": params }),
    )
}

fn toml_section<T: serde::Serialize>(name: &str, value: &T) -> Result<String> {
    let mut table = toml::map::Map::new();
    table.insert(name.into(), toml::Value::try_from(value)?);
    Ok(toml::to_string(&toml::Value::Table(table))?)
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let mut model_opts = ctx.config.model;
    if let Some(l) = a.seq_len {
        model_opts.seq_len = l;
    }
    if let Some(n) = a.n_models {
        model_opts.n_models = n;
    }
    let epochs = a.epochs.unwrap_or(ctx.config.train.epochs);
    let (train_data, valid_data) = match &a.data {
        Some(dir) => {
            let t = read_split(dir, Split::Train.name())?;
            let v = read_split(dir, Split::Valid.name())?;
            let test_q1 = &ctx.config.data.test_translations;
            if let Some((_, m)) = t.iter().chain(&v).find(|(_, m)| test_q1.contains(&m.q1)) {
                bail!(
                    "dataset contains test translation q1 = {} in split {}",
                    m.q1,
                    m.split
                );
            }
            (
                t.into_iter().map(|x| x.0).collect::<Vec<_>>(),
                v.into_iter().map(|x| x.0).collect::<Vec<_>>(),
            )
        }
        None => (
            generate_split(ctx, Split::Train, ctx.config.data.n_per)?,
            generate_split(ctx, Split::Valid, ctx.config.data.n_valid)?,
        ),
    };
    let test: Vec<Trajectory> = test_trajectories(
        ctx,
        &ctx.config.data.test_translations,
        ctx.config.data.test_points,
    )?
    .into_iter()
    .map(|des| Trajectory {
        q1: des[0].q1(),
        seed: ctx.seed,
        records: record(&des, &ctx.config.plant),
    })
    .collect();
    let mut summary = Vec::new();
    for i in 0..model_opts.n_models {
        let cfg = model_opts.tcn_config(ctx.seed, i)?;
        let opts = TrainOptions {
            epochs,
            shuffle_seed: model_seed(ctx.seed, i),
            ..ctx.config.train
        };
        let outcome = train_member(
            cfg,
            &ctx.config.limits,
            &train_data,
            &valid_data,
            &opts,
            |e| {
                if e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == epochs {
                    eprintln!(
                        "model {i} epoch {:>5}: train {:.4} valid {:.4}",
                        e.epoch, e.train_mse, e.valid_mse
                    );
                }
            },
        )?;
        let name = format!("model_{i}.json");
        outcome.model.save(&ctx.out.path(&name))?;
        ctx.out
            .write(&format!("train_log_{i}.csv"), &log_to_csv(&outcome.log))?;
        let test_eval = model_test_error(&outcome.model, &test)?;
        println!(
            "model {i}: best epoch {} of {}, test MAE {:.3} ± {:.3} deg (q2..q7)",
            outcome.best_epoch,
            outcome.log.len(),
            test_eval.pooled_mae,
            test_eval.pooled_sd
        );
        summary.push(
            json!({ "checkpoint": name, "best_epoch": outcome.best_epoch, "test": test_eval }),
        );
    }
    ctx.out.write_json("train_summary.json", &summary)?;
    ctx.manifest(
        "train",
        json!({ "model": model_opts, "epochs": epochs, "train": ctx.config.train, "data": a.data }),
    )
}

fn load_controller(models: &ModelArgs) -> Result<Controller> {
    let loaded = models
        .models
        .iter()
        .map(|p| {
            Ok((
                p.display().to_string(),
                TcnModel::load(p).with_context(|| format!("loading {}", p.display()))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Controller::new(loaded)?)
}

fn evaluate_tracking(
    ctx: &Ctx,
    models: &ModelArgs,
    q1: &[f64],
    points: Option<usize>,
) -> Result<()> {
    let mut ctrl = load_controller(models)?;
    let d = &ctx.config.data;
    let translations = if q1.is_empty() {
        d.test_translations.clone()
    } else {
        q1.to_vec()
    };
    if let Some(t) = translations
        .iter()
        .find(|t| d.train_translations.contains(t))
    {
        bail!("q1 = {t} is a training translation");
    }
    let points = points.unwrap_or(d.test_points);
    let mut rows = Vec::new();
    for des in test_trajectories(ctx, &translations, points)? {
        let c = compare_tracking(&mut ctrl, &des, &ctx.config.plant)?;
        println!("q1 = {} mm ({} points)", c.q1, c.n);
        for (j, imp) in c.improvement.iter().enumerate() {
            let (u, k) = (c.uncalibrated.joints[j], c.calibrated.joints[j]);
            let imp = imp.map_or("-".to_string(), |v| format!("{:+.1}%", 100.0 * v));
            println!(
                "  q{}: {:>8.3} ± {:<7.3} -> {:>8.3} ± {:<7.3} {imp}",
                j + 1,
                u.mae,
                u.mae_sd,
                k.mae,
                k.mae_sd
            );
        }
        rows.push(c);
    }
    ctx.out.write("tracking.csv", &tracking_csv(&rows))?;
    ctx.out.write_json("tracking.json", &rows)?;
    ctx.manifest(
        "evaluate-tracking",
        json!({ "models": models.models, "q1": translations, "points": points }),
    )
}

fn print_box(name: &str, r: &BoxTaskReport) {
    println!(
        "{name:>13}: x {:.2} ± {:.2}  y {:.2} ± {:.2}  z {:.2} ± {:.2}  euclidean {:.2} ± {:.2} mm ({} boxes, {} skipped)",
        r.axis[0].mean, r.axis[0].sd, r.axis[1].mean, r.axis[1].sd, r.axis[2].mean, r.axis[2].sd, r.euclidean.mean, r.euclidean.sd,
        r.records.len(),
        r.skipped
    );
}

fn evaluate_box(ctx: &Ctx, models: &ModelArgs, trials: Option<usize>) -> Result<()> {
    let mut ctrl = load_controller(models)?;
    let mut opts = ctx.config.box_task.clone();
    if let Some(n) = trials {
        opts.n_trials = n;
    }
    let (plant, geom) = (&ctx.config.plant, &ctx.config.geometry);
    let unc = run_box_pointing(&mut Uncalibrated, plant, geom, &opts, ctx.seed)?;
    let cal = run_box_pointing(&mut ctrl, plant, geom, &opts, ctx.seed)?;
    print_box("uncalibrated", &unc);
    print_box("calibrated", &cal);
    if let Some(i) = samkit::eval::improvement(unc.euclidean.mean, cal.euclidean.mean) {
        println!("euclidean error reduced by {:.1}%", 100.0 * i);
    }
    ctx.out.write("box_uncalibrated.csv", &unc.to_csv())?;
    ctx.out.write("box_calibrated.csv", &cal.to_csv())?;
    let mut summary = String::from(
        "controller,x_mae,x_sd,y_mae,y_sd,z_mae,z_sd,euclidean_mean,euclidean_sd,boxes,skipped\n",
    );
    for (n, r) in [("uncalibrated", &unc), ("calibrated", &cal)] {
        summary += &format!(
            "{n},{},{},{},{},{},{},{},{},{},{}\n",
            r.axis[0].mean,
            r.axis[0].sd,
            r.axis[1].mean,
            r.axis[1].sd,
            r.axis[2].mean,
            r.axis[2].sd,
            r.euclidean.mean,
            r.euclidean.sd,
            r.records.len(),
            r.skipped
        );
    }
    ctx.out.write("box_summary.csv", &summary)?;
    ctx.out.write_json(
        "box.json",
        &json!({ "uncalibrated": unc, "calibrated": cal }),
    )?;
    ctx.manifest(
        "evaluate-box",
        json!({ "models": models.models, "options": opts }),
    )
}

fn compensate(
    ctx: &Ctx,
    models: &ModelArgs,
    input: &Path,
    clamp: bool,
    probe: Option<usize>,
) -> Result<()> {
    let mut ctrl = load_controller(models)?;
    if clamp {
        ctrl = ctrl.with_clamp(ctx.config.limits);
    }
    let desired = read_joint_csv(input)?;
    if desired.is_empty() {
        bail!("{} has no rows", input.display());
    }
    let calibrated = desired
        .iter()
        .map(|q| ctrl.compensate(q))
        .collect::<samkit::Result<Vec<_>>>()?;
    write_joint_csv(&ctx.out.path("calibrated.csv"), &calibrated)?;
    println!(
        "calibrated {} steps -> {}",
        calibrated.len(),
        ctx.out.path("calibrated.csv").display()
    );
    if let Some(n) = probe {
        ctrl.reset();
        let s = latency_probe(&mut ctrl, &desired, n)?;
        println!(
            "latency p50 {:.1} us, p99 {:.1} us, max {:.1} us over {n} calls",
            s.p50_us, s.p99_us, s.max_us
        );
        ctx.out.write_json("latency.json", &s)?;
    }
    ctx.manifest(
        "compensate",
        json!({ "models": models.models, "input": input, "clamp": clamp, "latency_probe": probe }),
    )
}

fn latency(ctx: &Ctx, models: &ModelArgs, n: usize) -> Result<()> {
    let mut ctrl = load_controller(models)?;
    let d = &ctx.config.data;
    let q1 = d.test_translations.first().copied().unwrap_or(25.0);
    let inputs = tracking_trajectory(&d.ranges, d.interp_step, q1, 1000, ctx.seed)?;
    // Warm the caches before timing.
    latency_probe(&mut ctrl, &inputs, 100)?;
    ctrl.reset();
    let s = latency_probe(&mut ctrl, &inputs, n)?;
    println!(
        "latency p50 {:.1} us, p99 {:.1} us, max {:.1} us over {n} calls",
        s.p50_us, s.p99_us, s.max_us
    );
    ctx.out.write_json("latency.json", &s)?;
    ctx.manifest("latency", json!({ "models": models.models, "n": n }))
}
