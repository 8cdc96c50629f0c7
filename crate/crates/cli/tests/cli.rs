use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splat-budget"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn synth(dir: &Path, views: u32, size: u32) -> PathBuf {
    let scene = dir.join("scene");
    let (v, s) = (views.to_string(), size.to_string());
    ok(&[
        "synth", "--out", scene.to_str().unwrap(), "--views", &v, "--height", &s, "--width", &s,
        "--seed", "5", "--layout", "random_blobs",
    ]);
    scene
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ply_vertex_count(path: &Path) -> u64 {
    let bytes = std::fs::read(path).unwrap();
    let header = String::from_utf8_lossy(&bytes[..bytes.len().min(2048)]);
    header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .unwrap()
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn allocate_sums_to_budget() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), 3, 16);

    let plan = json(&ok(&["allocate", "--scene", s(&scene), "--ratio", "0.3"]).stdout);
    let k = (0.3f64 * 3.0 * 256.0).floor() as u64;
    assert_eq!(plan["K"], k);
    let budgets: Vec<u64> = plan["per_view"].as_array().unwrap().iter().map(|v| v["budget"].as_u64().unwrap()).collect();
    assert_eq!(budgets.iter().sum::<u64>(), k);

    let uniform = json(&ok(&["allocate", "--scene", s(&scene), "--budget", "100", "--uniform-rho"]).stdout);
    let budgets: Vec<u64> = uniform["per_view"].as_array().unwrap().iter().map(|v| v["budget"].as_u64().unwrap()).collect();
    assert_eq!(budgets, [34, 33, 33]);

    let empty = json(&ok(&["allocate", "--scene", s(&scene), "--budget", "0"]).stdout);
    assert!(empty["per_view"].as_array().unwrap().iter().all(|v| v["budget"] == 0));
}

#[test]
fn compact_full_budget_is_lossless_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), 2, 16);
    let (a, b, r) = (dir.path().join("a.ply"), dir.path().join("b.ply"), dir.path().join("r.json"));
    ok(&["compact", "--scene", s(&scene), "--ratio", "1.0", "--out", s(&a), "--report", s(&r)]);
    let report = json(&std::fs::read(&r).unwrap());
    assert_eq!(report["output_count"], 512);
    assert_eq!(report["metrics"]["psnr_mean"], "inf");
    assert_eq!(ply_vertex_count(&a), 512);

    let r2 = dir.path().join("r2.json");
    ok(&["compact", "--scene", s(&scene), "--ratio", "1.0", "--out", s(&b), "--report", s(&r2), "--no-metrics"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn compact_report_matches_output() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), 2, 16);
    for merge in [false, true] {
        let (out, r) = (dir.path().join("k.ply"), dir.path().join("k.json"));
        let mut args = vec!["compact", "--scene", s(&scene), "--budget", "40", "--out", s(&out), "--report", s(&r), "--no-metrics"];
        if merge {
            args.push("--merge");
        }
        ok(&args);
        let report = json(&std::fs::read(&r).unwrap());
        assert_eq!(report["K"], 40);
        assert_eq!(report["output_count"], 40);
        assert!(report["metrics"].is_null());
        assert_eq!(ply_vertex_count(&out), 40);
    }
}

#[test]
fn eval_identical_dirs() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), 2, 16);
    let copy = dir.path().join("copy");
    std::fs::create_dir(&copy).unwrap();
    for name in ["view_000.png", "view_001.png"] {
        std::fs::copy(scene.join(name), copy.join(name)).unwrap();
    }
    let report = json(&ok(&["eval", "--rendered", s(&copy), "--gt", s(&scene)]).stdout);
    assert_eq!(report["metrics"]["psnr_mean"], "inf");
    assert_eq!(report["metrics"]["ssim_mean"], 1.0);
    assert_eq!(report["files"].as_array().unwrap().len(), 2);
}

#[test]
fn mask_at_full_ratio_is_bounded_by_keys() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), 2, 16);
    let out = dir.path().join("masks");
    ok(&["mask", "--scene", s(&scene), "--ratio", "1.0", "--out", s(&out)]);
    for v in 0..2 {
        let img = image::open(out.join(format!("mask_{v:03}.png"))).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (16, 16));
        let ones = img.pixels().filter(|p| p.0[0] > 0).count();
        assert!((1..=16).contains(&ones), "view {v}: {ones}");
    }
}

#[test]
fn schedule_endpoints() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s.csv");
    ok(&["schedule", "--pool", "1000", "--out", s(&out)]);
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "t,k_min,k_max,sampled_k");
    assert!(rows[1].starts_with("0,850,950,"));
    assert!(rows.last().unwrap().starts_with("16000,50,950,"));
    assert_eq!(rows.len(), 18);
    for row in &rows[1..] {
        let f: Vec<u64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(f[1] <= f[3] && f[3] <= f[2], "{row}");
    }
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), 2, 8);
    let code = |args: &[&str]| run(args).status.code().unwrap();

    assert_eq!(code(&["allocate", "--scene", s(&scene), "--budget", "-1"]), 2);
    assert_eq!(code(&["allocate", "--scene", s(&scene), "--budget", "1000"]), 2);
    assert_eq!(code(&["allocate", "--scene", s(&scene), "--budget", "4", "--ratio", "0.1"]), 2);
    assert_eq!(code(&["allocate", "--scene", s(&dir.path().join("missing.json")), "--budget", "4"]), 2);
    assert_eq!(code(&["allocate", "--scene", s(&scene), "--ratio", "1.5"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);

    let out = run(&["allocate", "--scene", s(&scene), "--budget", "-1"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
}

#[test]
fn config_file_supplies_defaults() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), 3, 16);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("# plan\nscene = {}\nbudget = 100\nuniform-rho = true\n", s(&scene))).unwrap();

    let plan = json(&ok(&["allocate", "--config", s(&cfg)]).stdout);
    assert_eq!(plan["K"], 100);
    let budgets: Vec<u64> = plan["per_view"].as_array().unwrap().iter().map(|v| v["budget"].as_u64().unwrap()).collect();
    assert_eq!(budgets, [34, 33, 33]);

    let plan = json(&ok(&["allocate", "--config", s(&cfg), "--budget", "30"]).stdout);
    assert_eq!(plan["K"], 30);
}
