use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn samkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_samkit"))
        .current_dir(dir)
        .env_remove("SAMKIT_SEED")
        .args(args)
        .output()
        .expect("spawn samkit")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fk_writes_transform_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = samkit(dir.path(), &["fk", "--q", "10,0,30,0,0,0,0", "--out", "fk"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fk = json(&dir.path().join("fk/fk.json"));
    let t = fk["transform"].as_array().unwrap();
    assert_eq!(t.len(), 16);
    assert_eq!(t[15].as_f64(), Some(1.0));
    let m = json(&dir.path().join("fk/manifest.json"));
    assert_eq!(m["subcommand"], "fk");
    assert_eq!(m["seed"], 1);
}

#[test]
fn wrong_list_length_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = samkit(dir.path(), &["fk", "--q", "1,2,3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--q takes 7"));
    assert_eq!(
        samkit(dir.path(), &["no-such-command"]).status.code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = samkit(
        dir.path(),
        &["--config", "missing.conf", "fk", "--q", "0,0,0,0,0,0,0"],
    );
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(dir.path().join("bad.conf"), "seed = 3\nunknown_key = 1\n").unwrap();
    let out = samkit(
        dir.path(),
        &["--config", "bad.conf", "fk", "--q", "0,0,0,0,0,0,0"],
    );
    assert_eq!(out.status.code(), Some(1));
    let out = samkit(dir.path(), &["fk", "--q", "0,0,900,0,0,0,0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_flag_overrides_environment_and_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("samkit.conf"), "seed = 5\n").unwrap();
    let seed_of = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_samkit"));
        cmd.current_dir(dir.path())
            .env_remove("SAMKIT_SEED")
            .args(args);
        if let Some(v) = env {
            cmd.env("SAMKIT_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        json(&dir.path().join("out/fk/manifest.json"))["seed"]
            .as_u64()
            .unwrap()
    };
    let fk = ["fk", "--q", "0,0,0,0,0,0,0"];
    assert_eq!(seed_of(&fk, None), 5);
    assert_eq!(seed_of(&fk, Some("7")), 7);
    let with_flag = ["--seed", "9", "fk", "--q", "0,0,0,0,0,0,0"];
    assert_eq!(seed_of(&with_flag, Some("7")), 9);
}

#[test]
fn ik_recovers_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let q = "20,5,-30,15,10,0,0";
    let out = samkit(dir.path(), &["ik", "--target-q", q, "--out", "ik"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ik = json(&dir.path().join("ik/ik.json"));
    assert_eq!(ik["converged"], true);
    let sol: Vec<f64> = ik["q"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let want = [20.0, 5.0, -30.0, 15.0, 10.0, 0.0, 0.0];
    assert!(
        sol.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-4),
        "{sol:?}"
    );
}

#[test]
fn cables_round_trip_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    assert!(samkit(
        dir.path(),
        &["cables", "--q", "10,5,20,-10,15,5,-5", "--out", "c"]
    )
    .status
    .success());
    let d: Vec<String> = json(&dir.path().join("c/cables.json"))["deltas"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.to_string())
        .collect();
    let out = samkit(
        dir.path(),
        &["cables", "--deltas", &d.join(","), "--out", "back"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let q: Vec<f64> = json(&dir.path().join("back/cables.json"))["q"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let want = [10.0, 5.0, 20.0, -10.0, 15.0, 5.0, -5.0];
    assert!(
        q.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-9),
        "{q:?}"
    );
}

#[test]
fn data_train_and_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let ok = |args: &[&str]| {
        let out = samkit(p, args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    ok(&["gen-data", "--n-per", "60", "--out", "data"]);
    let meta = json(&p.join("data/train_q1_0.json"));
    assert_eq!(meta["records"], 60);
    assert_eq!(meta["split"], "train");
    assert_eq!(meta["plant_hash"].as_str().unwrap().len(), 64);

    ok(&[
        "train",
        "--data",
        "data",
        "--epochs",
        "2",
        "--n-models",
        "1",
        "--out",
        "models",
    ]);
    assert!(p.join("models/model_0.json").exists());
    assert_eq!(
        std::fs::read_to_string(p.join("models/train_log_0.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let model = "models/model_0.json";
    let stdout = ok(&[
        "evaluate-tracking",
        "--models",
        model,
        "--q1",
        "25",
        "--points",
        "40",
        "--out",
        "track",
    ]);
    assert!(stdout.contains("q1 = 25 mm"));
    assert_eq!(
        json(&p.join("track/tracking.json"))
            .as_array()
            .unwrap()
            .len(),
        1
    );

    std::fs::write(
        p.join("desired.csv"),
        "t,q1,q2,q3,q4,q5,q6,q7\n0,5,0,0,0,0,0,0\n1,5,1,2,0,0,0,0\n2,5,2,4,1,0,0,0\n",
    )
    .unwrap();
    ok(&[
        "compensate",
        "--models",
        model,
        "--input",
        "desired.csv",
        "--clamp",
        "--out",
        "comp",
    ]);
    let rows = std::fs::read_to_string(p.join("comp/calibrated.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);

    ok(&["latency", "--models", model, "--n", "200", "--out", "lat"]);
    let lat = json(&p.join("lat/latency.json"));
    assert!(lat["p99_us"].as_f64().unwrap() >= lat["p50_us"].as_f64().unwrap());
}
