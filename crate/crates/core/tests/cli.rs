use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use multiresunet::data::{encode_netpbm, synth_generate, Challenge, Raster, SynthSpec};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multiresunet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const TINY: [&str; 10] = [
    "--synth", "20", "--input", "32x32x1", "--ubase", "4", "--epochs", "2", "--batch", "4",
];

#[test]
fn summary_reports_totals() {
    let out = bin(&["summary", "--arch", "both"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let totals: Vec<u64> = v["models"].as_array().unwrap().iter().map(|m| m["total_params"].as_u64().unwrap()).collect();
    assert_eq!(totals.len(), 2);
    assert!(totals[0] < totals[1]);
    assert!((totals[0] as f64 - 7_262_750.0).abs() / 7_262_750.0 < 0.01);
    assert!((totals[1] as f64 - 7_759_521.0).abs() / 7_759_521.0 < 0.01);

    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["summary", "--rank", "3", "--input", "80x80x48x4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("summary.json"));
    assert_eq!(v["models"][0]["input_shape"], serde_json::json!([80, 80, 48, 4]));
}

#[test]
fn train_then_eval_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let mut args = vec!["train", "--seed", "5", "--out", out.to_str().unwrap()];
        args.extend(TINY);
        let o = bin(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let history = fs::read(a.join("history.csv")).unwrap();
    assert_eq!(history, fs::read(b.join("history.csv")).unwrap());
    assert_eq!(String::from_utf8(history).unwrap().lines().count(), 3);
    assert!(a.join("best.tnsr").exists() && a.join("best.json").exists());

    let report = json(&a.join("report.json"));
    assert_eq!(report["spec"]["ubase"], 4);
    let best = report["report"]["best_val_jaccard"].as_f64().unwrap();

    let mut args = vec!["eval", "--seed", "5", "--out", a.to_str().unwrap()];
    args.extend(TINY);
    let o = bin(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let eval = json(&a.join("eval.json"));
    let score = eval["evaluation"]["jaccard"].as_f64().unwrap();
    assert!((score - best).abs() < 1e-6, "{score} vs {best}");
    assert_eq!(eval["val_ids"], report["val_ids"]);
}

#[test]
fn trains_from_a_dataset_directory() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("masks")).unwrap();
    let ds = synth_generate::<f32>(&SynthSpec::new(12, [32, 32], Challenge::Clean, 3)).unwrap();
    for s in &ds {
        let image = Raster {
            width: 32,
            height: 32,
            channels: 1,
            pixels: s.image.data().iter().map(|v| (v * 255.0).round() as u8).collect(),
        };
        let mask = Raster {
            pixels: s.mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
            ..image.clone()
        };
        fs::write(root.join(format!("images/{}.pgm", s.id)), encode_netpbm(&image).unwrap()).unwrap();
        fs::write(root.join(format!("masks/{}.pgm", s.id)), encode_netpbm(&mask).unwrap()).unwrap();
    }
    let out = dir.path().join("run");
    let o = bin(&[
        "train", "--data", root.to_str().unwrap(), "--input", "32x32x1", "--ubase", "4", "--epochs", "1", "--batch",
        "4", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out.join("report.json"))["val_ids"].as_array().unwrap().len(), 3);
}

#[test]
fn kfold_with_both_architectures_reports_relative_improvement() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&[
        "kfold", "--arch", "both", "--synth", "20", "--input", "32x32x1", "--ubase", "4", "--epochs", "1", "--batch",
        "4", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("kfold.json"));
    let m = v["results"][0]["mean_jaccard"].as_f64().unwrap();
    let u = v["results"][1]["mean_jaccard"].as_f64().unwrap();
    let rel = v["relative_improvement"].as_f64().unwrap();
    assert!((rel - (m - u) / u * 100.0).abs() < 1e-9);
    let csv = fs::read_to_string(dir.path().join("kfold.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 6);
}

#[test]
fn exit_codes() {
    assert_eq!(bin(&["summary", "--arch", "segnet"]).status.code(), Some(2));
    assert_eq!(bin(&["gradcheck", "--ops", ","]).status.code(), Some(2));
    assert_eq!(bin(&["train", "--data", "/definitely/missing"]).status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--lr", "1e38", "--out", dir.path().to_str().unwrap()];
    args.extend(TINY);
    let o = bin(&args);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn config_file_is_used_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# desk-scale\narch=unet\nubase=8\ninput=64x64x1\n").unwrap();
    let o = bin(&["summary", "--config", cfg.to_str().unwrap(), "--ubase", "16"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["spec"]["architecture"], "unet");
    assert_eq!(v["spec"]["ubase"], 16);
    assert_eq!(v["spec"]["input_extents"], serde_json::json!([64, 64]));
}
