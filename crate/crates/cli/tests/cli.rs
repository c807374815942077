use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rgap::io::save_weights;
use rgap::model::{forward, init_weights, Activation, Label, LayerSpec, NetworkSpec, Shape};
use serde_json::Value;
use tempfile::TempDir;

const LEAKY: Activation = Activation::LeakyRelu { alpha: 0.2 };

fn rgap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgap")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn repo_path(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel).display().to_string()
}

/// Full-rank conv net on a 1×4×4 image, written to `dir/net.json`.
fn small_net(dir: &Path) -> (NetworkSpec, PathBuf) {
    let net = NetworkSpec::new(vec![
        LayerSpec::conv(Shape::new(1, 4, 4), 2, 3, 1, 1, LEAKY, false),
        LayerSpec::fc(32, 1, Activation::Identity, false),
    ])
    .unwrap();
    let path = dir.join("net.json");
    std::fs::write(&path, net.to_json()).unwrap();
    (net, path)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_net_is_a_usage_error() {
    let out = rgap(&["attack", "--weights-seed", "7"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--net"));
}

#[test]
fn unknown_flag_and_bad_values_are_usage_errors() {
    assert_eq!(code(&rgap(&["rank", "--net", "x.json", "--bogus"])), 2);
    assert_eq!(code(&rgap(&["attack", "--net", "x.json", "--label", "2"])), 2);
    assert_eq!(code(&rgap(&["attack", "--net", "x.json", "--attack", "fast"])), 2);
    assert_eq!(code(&rgap(&["batch", "--net", "x.json", "--batch-size", "1"])), 2);
    assert_eq!(code(&rgap(&["attack", "--net", "x.json", "--dump-images"])), 2);
    assert_eq!(code(&rgap(&["attack", "--net", "x.json", "--weights", "w.json", "--weights-seed", "1"])), 2);
    assert_eq!(code(&rgap(&[])), 2);
}

#[test]
fn rank_needs_only_the_network() {
    let out = rgap(&["rank", "--net", &repo_path("configs/table3/b_narrow_first.json")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["max_ra_i"], 405);
    assert_eq!(v["layers"][0]["n_x"], 576);
}

#[test]
fn unreadable_inputs_exit_3() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"layers\": [").unwrap();
    assert_eq!(code(&rgap(&["rank", "--net", bad.to_str().unwrap()])), 3);
    assert_eq!(code(&rgap(&["rank", "--net", "/nonexistent/net.json"])), 3);

    let (_, net) = small_net(dir.path());
    let img = dir.path().join("img.pgm");
    std::fs::write(&img, b"P9\n4 4\n255\n").unwrap();
    let out = rgap(&["attack", "--net", net.to_str().unwrap(), "--input", img.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("byte"), "{}", stderr(&out));

    // Right format, wrong size for the network.
    std::fs::write(&img, [b"P5\n2 2\n255\n".as_slice(), &[0, 1, 2, 3]].concat()).unwrap();
    assert_eq!(code(&rgap(&["attack", "--net", net.to_str().unwrap(), "--input", img.to_str().unwrap()])), 3);
}

#[test]
fn inconsistent_gradients_exit_4() {
    // Heavy gradient noise leaves no logit or sigmoid preimage that fits.
    let dir = TempDir::new().unwrap();
    let net = NetworkSpec::new(vec![
        LayerSpec::fc(4, 3, Activation::Sigmoid, false),
        LayerSpec::fc(3, 1, Activation::Identity, false),
    ])
    .unwrap();
    let path = dir.path().join("net.json");
    std::fs::write(&path, net.to_json()).unwrap();
    let out = rgap(&["sweep-noise", "--net", path.to_str().unwrap(), "--sigmas", "100", "--trials", "4", "--label", "1"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn exact_recovery_dumps_the_input_image() {
    let dir = TempDir::new().unwrap();
    let (net, net_path) = small_net(dir.path());
    let pixels: Vec<u8> = (0..16).map(|i| (i * 13 + 7) as u8).collect();
    let img = dir.path().join("img.pgm");
    std::fs::write(&img, [b"P5\n4 4\n255\n".as_slice(), &pixels].concat()).unwrap();

    let x: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let w = init_weights(&net, 11);
    let logit = forward(&net, &w, &x, Label::Pos).unwrap().logit;
    let y = if logit > 0.0 { "-1" } else { "1" };

    let out_dir = dir.path().join("out");
    let out = rgap(&[
        "attack",
        "--net",
        net_path.to_str().unwrap(),
        "--weights-seed",
        "11",
        "--input",
        img.to_str().unwrap(),
        "--label",
        y,
        "--out",
        out_dir.to_str().unwrap(),
        "--dump-images",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&out_dir.join("report.json"));
    assert!(report["trials"][0]["mse"].as_f64().unwrap() < 1e-20);
    assert_eq!(report["attack"], "rgap");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(std::fs::read(out_dir.join("trial0.pgm")).unwrap(), std::fs::read(&img).unwrap());
    let csv = std::fs::read_to_string(out_dir.join("trial0.csv")).unwrap();
    assert!(csv.starts_with("h,w,c\n4,4,1\n"));
}

#[test]
fn without_dump_only_the_report_is_written() {
    let dir = TempDir::new().unwrap();
    let (_, net) = small_net(dir.path());
    let out_dir = dir.path().join("out");
    let out = rgap(&["attack", "--net", net.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let files: Vec<_> = std::fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec![std::ffi::OsString::from("report.json")]);
}

#[test]
fn weights_file_matches_seeded_weights() {
    let dir = TempDir::new().unwrap();
    let (net, net_path) = small_net(dir.path());
    let wpath = dir.path().join("w.json");
    save_weights(&wpath, &init_weights(&net, 5)).unwrap();
    let run = |flag: &str, value: &str| {
        let out = rgap(&[
            "attack",
            "--net",
            net_path.to_str().unwrap(),
            flag,
            value,
            "--synthetic-seed",
            "3",
            "--sample-label",
            "misclassified",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        v["trials"][0]["mse"].as_f64().unwrap()
    };
    assert_eq!(run("--weights-seed", "5"), run("--weights", wpath.to_str().unwrap()));
}

#[test]
fn label_inference_is_reported() {
    let dir = TempDir::new().unwrap();
    let net = NetworkSpec::new(vec![
        LayerSpec::fc(6, 8, Activation::Relu, false),
        LayerSpec::fc(8, 1, Activation::Identity, false),
    ])
    .unwrap();
    let path = dir.path().join("net.json");
    std::fs::write(&path, net.to_json()).unwrap();
    let out = rgap(&["attack", "--net", path.to_str().unwrap(), "--label", "infer", "--trials", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    for t in v["trials"].as_array().unwrap() {
        assert_eq!(t["inferred_label"], t["label"]);
    }
}

#[test]
fn twin_sweep_batch_and_study_run() {
    let dir = TempDir::new().unwrap();
    let (_, net) = small_net(dir.path());
    let net = net.to_str().unwrap();

    let out = rgap(&["twin", "--net", net, "--sample-label", "classified", "--trials", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["trials"].as_array().unwrap().len(), 2);

    let out = rgap(&["sweep-noise", "--net", net, "--sigmas", "0,1e-3", "--trials", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["sweep"].as_array().unwrap().len(), 2);

    let out = rgap(&["batch", "--net", net, "--batch-size", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["trials"][0]["batch"]["mixture_residual"].is_number());

    let other = repo_path("configs/table3/b_narrow_first.json");
    let out = rgap(&["ra-study", "--net", net, "--net", &other]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = v["ra_study"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["architecture"], "b_narrow_first");
}

#[test]
fn identical_invocations_give_identical_reports() {
    let dir = TempDir::new().unwrap();
    let (_, net) = small_net(dir.path());
    let args = ["attack", "--net", net.to_str().unwrap(), "--attack", "hgap", "--dlg-iters", "100", "--seed", "4"];
    let strip = |o: Output| {
        let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
        for t in v["trials"].as_array_mut().unwrap() {
            t["runtime_ms"] = Value::Null;
            for c in t["candidates"].as_array_mut().unwrap() {
                c["runtime_ms"] = Value::Null;
            }
        }
        v
    };
    assert_eq!(strip(rgap(&args)), strip(rgap(&args)));
}
