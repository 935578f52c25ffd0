//! End-to-end tests of the command-line surface: exit codes, file outputs,
//! and the documented chain synthesize -> train -> predict -> evaluate.

use std::path::Path;
use std::process::{Command, Output};

fn osp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Synthesizes a small labeled dataset and returns its directory.
fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let out = osp(
        &["synthesize", "-n", "12", "--seed", "5", "--out-dir", "data"],
        dir,
    );
    assert!(out.status.success(), "synthesize failed: {}", stderr(&out));
    let data = dir.join("data");
    assert!(data.join("tracks.csv").exists());
    assert!(data.join("latents.json").exists());
    assert!(data.join("model-true.json").exists());
    data
}

#[test]
fn help_and_version_exit_zero_and_unknown_flags_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let help = osp(&["--help"], tmp.path());
    assert_eq!(help.status.code(), Some(0));
    for name in ["train", "predict", "evaluate", "synthesize", "bench"] {
        assert!(
            stdout(&help).contains(name),
            "help must list the `{name}` subcommand"
        );
    }
    assert_eq!(osp(&["--version"], tmp.path()).status.code(), Some(0));
    assert_eq!(osp(&["predict", "--bogus"], tmp.path()).status.code(), Some(1));
    assert_eq!(osp(&["no-such-command"], tmp.path()).status.code(), Some(1));
}

#[test]
fn synthesize_train_predict_evaluate_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);

    let train = osp(
        &[
            "train",
            "--data",
            "data/tracks.csv",
            "--out",
            "model.json",
            "--restarts",
            "2",
        ],
        dir,
    );
    assert!(train.status.success(), "train failed: {}", stderr(&train));
    assert!(stdout(&train).contains("final loss"));
    assert!(stdout(&train).contains("iterations"));
    assert!(dir.join("model.json").exists());
    assert!(dir.join("model.report.json").exists());

    let predict = osp(
        &[
            "predict",
            "--model",
            "model.json",
            "--data",
            "data/tracks.csv",
            "--ped",
            "p0",
            "--out",
            "forecast.csv",
        ],
        dir,
    );
    assert!(predict.status.success(), "predict failed: {}", stderr(&predict));
    let forecast = std::fs::read_to_string(dir.join("forecast.csv")).unwrap();
    let mut lines = forecast.lines();
    assert_eq!(lines.next(), Some("sample,step,x_m,y_m,weight"));
    // 100 samples and the mean track, 50 steps each.
    assert_eq!(forecast.lines().count(), 1 + 100 * 50 + 50);
    assert_eq!(forecast.lines().filter(|l| l.starts_with("mean,")).count(), 50);

    let eval = osp(
        &[
            "evaluate",
            "--data",
            "data/tracks.csv",
            "--model",
            "model.json",
            "--samples",
            "40",
            "--out-dir",
            "eval",
        ],
        dir,
    );
    assert!(eval.status.success(), "evaluate failed: {}", stderr(&eval));
    for name in ["cv", "osp", "osp-av"] {
        let table = std::fs::read_to_string(dir.join(format!("eval/metrics-{name}.csv"))).unwrap();
        let mut lines = table.lines();
        assert_eq!(lines.next(), Some("t_seconds,ade_m,rmse_m,n"));
        assert_eq!(lines.count(), 5, "{name} table has one row per second");
    }
    let combined = std::fs::read_to_string(dir.join("eval/metrics.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&combined).unwrap();
    assert_eq!(json["cv"]["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn single_sample_prediction_has_unit_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    let out = osp(
        &[
            "predict",
            "--model",
            "data/model-true.json",
            "--data",
            "data/tracks.csv",
            "--ped",
            "p1",
            "--samples",
            "1",
            "--out",
            "one.csv",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.join("one.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 50 + 50);
    for line in text.lines().skip(1).take(50) {
        assert!(line.ends_with(",1"), "weight must be exactly 1: {line}");
    }
}

#[test]
fn training_without_pedestrians_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("vehicles.csv"),
        "track_id,class,frame,x_m,y_m,vx_mps,vy_mps\n\
         v1,vehicle,0,0,0,5,0\n\
         v1,vehicle,1,0.5,0,5,0\n",
    )
    .unwrap();
    let out = osp(
        &["train", "--data", "vehicles.csv", "--out", "m.json"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("training-infeasible"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn av_plan_shorter_than_horizon_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    // Keep 4 s of the episode-0 vehicle: prediction starts at its last
    // observed pedestrian step (7.9 s), so a 5 s horizon is uncovered.
    let full = std::fs::read_to_string(dir.join("data/tracks.csv")).unwrap();
    let plan: String = full
        .lines()
        .enumerate()
        .filter(|(i, l)| {
            *i == 0
                || l.starts_with("veh-0,")
                    && l.split(',').nth(2).unwrap().parse::<i64>().unwrap() < 40
        })
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    std::fs::write(dir.join("plan.csv"), plan).unwrap();
    let out = osp(
        &[
            "predict",
            "--model",
            "data/model-true.json",
            "--data",
            "data/tracks.csv",
            "--ped",
            "p0",
            "--av-trajectory",
            "plan.csv",
            "--out",
            "fc.csv",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("does not cover the prediction horizon"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn evaluate_without_model_runs_the_baseline_only() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    let out = osp(
        &[
            "evaluate",
            "--data",
            "data/tracks.csv",
            "--out-dir",
            "eval",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.join("eval/metrics-cv.csv").exists());
    assert!(!dir.join("eval/metrics-osp.csv").exists());
    // Requesting the model-based predictor without a model is a usage-level
    // data error.
    let out = osp(
        &[
            "evaluate",
            "--data",
            "data/tracks.csv",
            "--predictors",
            "osp",
            "--out-dir",
            "eval2",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    for run in ["a", "b"] {
        let out = osp(
            &[
                "predict",
                "--model",
                "data/model-true.json",
                "--data",
                "data/tracks.csv",
                "--ped",
                "p2",
                "--seed",
                "9",
                "--out",
                &format!("fc-{run}.csv"),
            ],
            dir,
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(dir.join("fc-a.csv")).unwrap();
    let b = std::fs::read(dir.join("fc-b.csv")).unwrap();
    assert_eq!(a, b);
    // A different seed must change the samples.
    let out = osp(
        &[
            "predict",
            "--model",
            "data/model-true.json",
            "--data",
            "data/tracks.csv",
            "--ped",
            "p2",
            "--seed",
            "10",
            "--out",
            "fc-c.csv",
        ],
        dir,
    );
    assert!(out.status.success());
    let c = std::fs::read(dir.join("fc-c.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn bench_reports_mean_and_p95() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = osp(
        &[
            "bench",
            "--reps",
            "3",
            "--samples",
            "10",
            "--out",
            "timing.json",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("mean") && text.contains("p95"), "stdout: {text}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("timing.json")).unwrap()).unwrap();
    assert_eq!(json["reps"], 3);
    assert!(json["mean_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn dut_schema_requires_an_explicit_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("dut.csv"),
        "id,label,frame,x_est,y_est,vx_est,vy_est\n\
         7,pedestrian,0,0,4,0,-1.2\n\
         7,pedestrian,1,0,3.95,0,-1.2\n",
    )
    .unwrap();
    let missing = osp(
        &[
            "evaluate",
            "--data",
            "dut.csv",
            "--schema",
            "dut",
            "--out-dir",
            "eval",
        ],
        dir,
    );
    assert_eq!(missing.status.code(), Some(2), "stderr: {}", stderr(&missing));
}
