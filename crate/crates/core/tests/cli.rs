use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatmae")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn gradcheck_single_module() {
    let out = ok(&["gradcheck", "--module", "chamfer", "--instances", "3"]);
    assert!(out.lines().all(|l| l.starts_with("PASS chamfer/")));
    let bad = bin(&["gradcheck", "--module", "nope"]);
    assert!(!bad.status.success());
}

#[test]
fn pretrain_both_stages_then_evaluate_render_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();

    let cfg = dir.path().join("cfg.toml");
    let tiny = std::fs::read_to_string(config("tiny.toml")).unwrap();
    std::fs::write(&cfg, tiny.replace("epochs = 20", "epochs = 2")).unwrap();
    ok(&["pretrain", "--stage", "1", "--config", cfg.to_str().unwrap(), "--out", run_s, "--seed", "3"]);
    assert!(run.join("stage1.ckpt").exists());
    let resolved = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 3"));

    let cfg2 = dir.path().join("cfg2.toml");
    let tiny2 = std::fs::read_to_string(config("tiny_stage2.toml")).unwrap();
    std::fs::write(&cfg2, tiny2.replace("gs_iters = 100", "gs_iters = 3")).unwrap();
    let out = ok(&["pretrain", "--stage", "2", "--config", cfg2.to_str().unwrap(), "--out", run_s, "--seed", "3", "--fraction", "0.5"]);
    assert_eq!(out.lines().filter(|l| l.contains("chamfer(P_GS, P_rec)")).count(), 2);
    let metrics = std::fs::read_to_string(run.join("metrics_stage2.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let ckpt = run.join("stage2.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let ply = dir.path().join("gs.ply");
    let out = ok(&["export-ply", "--ckpt", ckpt_s, "--out", ply.to_str().unwrap()]);
    assert!(out.starts_with("wrote "));
    assert!(std::fs::read(&ply).unwrap().starts_with(b"ply\n"));

    let render_dir = dir.path().join("render");
    let scene = config("scene.toml");
    let out = ok(&["render", "--ckpt", ckpt_s, "--scene", &scene, "--out", render_dir.to_str().unwrap(), "--views", "2", "--gs-iters", "2"]);
    assert_eq!(out.lines().count(), 2);
    assert!(render_dir.join("render_0001.ppm").exists() && render_dir.join("gt_0001.ppm").exists());

    // A stage-1 checkpoint has neither Gaussians nor anything to export.
    assert!(!bin(&["export-ply", "--ckpt", run.join("stage1.ckpt").to_str().unwrap(), "--out", ply.to_str().unwrap()])
        .status
        .success());

    let missing = bin(&["evaluate", "--ckpt", ckpt_s, "--data", data.join("absent").to_str().unwrap()]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

#[test]
fn evaluate_reads_a_scene_directory() {
    use splatmae::mae::Checkpoint;
    use splatmae::train::{train_stage1, Dataset, TrainConfig};

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::read(config("tiny.toml")).unwrap();
    cfg.epochs = 1;
    cfg.synthetic.scenes = 2;
    let data = Dataset::synthetic(&cfg).unwrap();
    data.write(dir.path().join("data")).unwrap();
    let run = train_stage1(&data, &cfg, Some(&dir.path().join("run"))).unwrap();
    let ck = run.checkpoint.unwrap();
    Checkpoint::read(&ck).unwrap();
    let out = ok(&["evaluate", "--ckpt", ck.to_str().unwrap(), "--data", dir.path().join("data").to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["scenes"].as_array().unwrap().len(), 2);
    assert!(v["mean_chamfer"].as_f64().unwrap().is_finite());
}

#[test]
fn rejects_bad_arguments() {
    assert!(!bin(&["pretrain", "--stage", "3", "--config", "x.toml"]).status.success());
    let bad = bin(&["pretrain", "--stage", "1", "--config", &config("tiny.toml"), "--fraction", "0"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("fraction"));
}
