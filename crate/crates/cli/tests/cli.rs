use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use promptmine_cli::io::{read_mask, write_gt, write_mask, write_png_rgb};
use promptmine_core::backends::{ScenarioParams, SimulatedWorld, WorldConfig};
use promptmine_core::{BBox, BinaryMask};
use serde_json::Value;
use tempfile::TempDir;

fn promptmine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptmine"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scene_dir(tmp: &TempDir, seeds: &[u64]) -> std::path::PathBuf {
    let dir = tmp.path().join("images");
    fs::create_dir_all(&dir).unwrap();
    for &seed in seeds {
        let world =
            SimulatedWorld::new(WorldConfig::random(seed, &ScenarioParams::default()).unwrap(), seed)
                .unwrap();
        write_png_rgb(&dir.join(format!("img{seed}.png")), world.canvas()).unwrap();
    }
    dir
}

fn config_file(tmp: &TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = tmp.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn run_writes_one_mask_and_history_per_image() {
    let tmp = TempDir::new().unwrap();
    let images = scene_dir(&tmp, &[1, 2]);
    let cfg = config_file(&tmp, "run.cfg", "# two scenes\ntask_prompt=camouflaged animal\n");
    let out = tmp.path().join("out");
    let o = promptmine(&["run", "--config", path(&cfg), "--images", path(&images), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for id in ["img1", "img2"] {
        let mask = read_mask(&out.join(format!("{id}_mask.png"))).unwrap();
        assert_eq!(mask.dims(), (64, 64));
        let history = json(&out.join(format!("{id}_history.json")));
        assert_eq!(history["iterations"].as_array().unwrap().len(), 5);
        assert!(history["chosen_iteration"].as_u64().unwrap() >= 1);
    }
    let report = json(&out.join("run_report.json"));
    assert_eq!(report["succeeded"], 2);
    assert_eq!(report["failed"], 0);
    // no temporary files left behind
    assert_eq!(fs::read_dir(&out).unwrap().count(), 5);

    let again = tmp.path().join("again");
    let o = promptmine(&["run", "--config", path(&cfg), "--images", path(&images), "--out", path(&again)]);
    assert!(o.status.success());
    for f in ["img1_mask.png", "img2_mask.png", "img1_history.json", "run_report.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stub_backend_records_failures_and_exits_nonzero() {
    let tmp = TempDir::new().unwrap();
    let images = scene_dir(&tmp, &[3]);
    let cfg = config_file(&tmp, "stub.cfg", "backend=stub\ntask_prompt=camouflaged animal\n");
    let out = tmp.path().join("out");
    let o = promptmine(&["run", "--config", path(&cfg), "--images", path(&images), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let report = json(&out.join("run_report.json"));
    assert_eq!(report["failed"], 1);
    let error = report["images"][0]["error"].as_str().unwrap();
    assert!(error.contains("adapter not configured"), "{error}");
    assert!(!out.join("img3_mask.png").exists());
}

#[test]
fn run_requires_a_task_prompt() {
    let tmp = TempDir::new().unwrap();
    let images = scene_dir(&tmp, &[4]);
    let cfg = config_file(&tmp, "empty.cfg", "");
    let out = tmp.path().join("out");
    let o = promptmine(&["run", "--config", path(&cfg), "--images", path(&images), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("task_prompt"));

    let o = promptmine(&[
        "run", "--config", path(&cfg), "--images", path(&images), "--out", path(&out),
        "--task-prompt", "camouflaged animal",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_name_the_key() {
    let tmp = TempDir::new().unwrap();
    let images = scene_dir(&tmp, &[5]);
    for (body, key) in [("iterations=abc\n", "iterations"), ("blend_wieght=0.3\n", "blend_wieght")] {
        let cfg = config_file(&tmp, "bad.cfg", body);
        let o = promptmine(&["run", "--config", path(&cfg), "--images", path(&images)]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains(key), "{body}");
    }
}

fn blob(w: usize, h: usize, b: BBox) -> BinaryMask {
    BinaryMask::from_box(w, h, b).unwrap()
}

#[test]
fn evaluate_identities() {
    let tmp = TempDir::new().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    let masks = [
        blob(16, 16, BBox::new(2, 3, 9, 12).unwrap()),
        blob(16, 16, BBox::new(0, 0, 5, 5).unwrap()),
        blob(20, 10, BBox::new(4, 2, 18, 9).unwrap()),
        blob(8, 8, BBox::new(1, 1, 7, 7).unwrap()),
    ];
    for (i, m) in masks.iter().enumerate() {
        write_gt(&gt.join(format!("c{i}.png")), m).unwrap();
        write_mask(&pred.join(format!("c{i}_mask.png")), &m.to_soft()).unwrap();
    }
    let report_path = tmp.path().join("report.json");
    let o = promptmine(&["evaluate", "--pred", path(&pred), "--gt", path(&gt), "--out", path(&report_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&report_path);
    assert_eq!(report["count"], 4);
    let agg = &report["aggregate"];
    assert_eq!((agg["M"].as_f64(), agg["F_beta"].as_f64()), (Some(0.0), Some(1.0)));
    assert_eq!((agg["E_phi"].as_f64(), agg["S_alpha"].as_f64()), (Some(1.0), Some(1.0)));

    // one inverted prediction: its M is 1, the others 0
    write_mask(&pred.join("c1_mask.png"), &masks[1].to_soft().inverted()).unwrap();
    let o = promptmine(&["evaluate", "--pred", path(&pred), "--gt", path(&gt)]);
    assert!(o.status.success());
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["aggregate"]["M"].as_f64(), Some(0.25));
    assert_eq!(report["per_image"][1]["id"], "c1");
    assert_eq!(report["per_image"][1]["M"].as_f64(), Some(1.0));
}

#[test]
fn evaluate_reports_dimension_mismatch() {
    let tmp = TempDir::new().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    let good = blob(8, 8, BBox::new(1, 1, 4, 4).unwrap());
    write_gt(&gt.join("a.png"), &good).unwrap();
    write_mask(&pred.join("a_mask.png"), &good.to_soft()).unwrap();
    write_gt(&gt.join("b.png"), &blob(8, 8, BBox::new(0, 0, 2, 2).unwrap())).unwrap();
    write_mask(&pred.join("b_mask.png"), &blob(6, 8, BBox::new(0, 0, 2, 2).unwrap()).to_soft()).unwrap();
    let o = promptmine(&["evaluate", "--pred", path(&pred), "--gt", path(&gt)]);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["count"], 1);
    assert_eq!(report["errors"][0]["id"], "b");
    assert!(report["errors"][0]["error"].as_str().unwrap().contains("dimension mismatch"));
}

#[test]
fn evaluate_without_pairs_fails() {
    let tmp = TempDir::new().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    write_gt(&gt.join("x.png"), &blob(4, 4, BBox::new(0, 0, 2, 2).unwrap())).unwrap();
    let o = promptmine(&["evaluate", "--pred", path(&pred), "--gt", path(&gt)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_single_noiseless_world_and_stable_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_file(&tmp, "sim.cfg", "seed=11\n");
    let (a, b) = (tmp.path().join("a.json"), tmp.path().join("b.json"));
    for out in [&a, &b] {
        let o = promptmine(&["simulate", "--config", path(&cfg), "--n", "1", "--out", path(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let report = json(&a);
    assert_eq!(report["mining_accuracy"].as_f64(), Some(1.0));
    assert_eq!(report["rows"][0]["seed"], 11);

    let o = promptmine(&["simulate", "--config", path(&cfg), "--n", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_mining_at_least_matches_single_iteration() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_file(&tmp, "sim.cfg", "");
    let out = tmp.path().join("r.json");
    let o = promptmine(&["simulate", "--config", path(&cfg), "--n", "50", "--out", path(&out)]);
    assert!(o.status.success());
    let report = json(&out);
    assert!(report["mining_accuracy"].as_f64() >= report["ablation_accuracy"].as_f64());
    assert_eq!(report["rows"].as_array().unwrap().len(), 50);
}
