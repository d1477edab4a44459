use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bcskit::fixtures::{piecewise_smooth, toy_images};
use bcskit::image::save_pgm;
use tempfile::TempDir;

const HEADER: &str = "image,algo,target_rate,achieved_rate,psnr_db,ssim,blockiness,time_s,seed";

fn bcskit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcskit"))
        .args(args)
        .env_remove("BCSKIT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bcskit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path, name: &str, size: usize, seed: u64) -> PathBuf {
    let p = dir.join(name);
    save_pgm(&piecewise_smooth(size, seed), &p).unwrap();
    p
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').collect()
}

#[test]
fn sample_is_byte_identical_across_runs() {
    let d = TempDir::new().unwrap();
    let img = fixture(d.path(), "a.pgm", 64, 1);
    let (a, b) = (d.path().join("a.json"), d.path().join("b.json"));
    for out in [&a, &b] {
        ok(&["sample", "--in", s(&img), "--block", "16", "--sr", "0.1", "--mode", "adaptive", "--seed", "7", "--out", s(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(d.path().join("a.assignment.json")).unwrap(),
        fs::read(d.path().join("b.assignment.json")).unwrap()
    );
}

#[test]
fn seed_falls_back_to_environment() {
    let d = TempDir::new().unwrap();
    let img = fixture(d.path(), "a.pgm", 32, 1);
    let (a, b) = (d.path().join("a.json"), d.path().join("b.json"));
    ok(&["sample", "--in", s(&img), "--block", "16", "--sr", "0.1", "--seed", "9", "--out", s(&a)]);
    let out = Command::new(env!("CARGO_BIN_EXE_bcskit"))
        .args(["sample", "--in", s(&img), "--block", "16", "--sr", "0.1", "--out", s(&b)])
        .env("BCSKIT_SEED", "9")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn uniform_mode_uses_one_channel() {
    let d = TempDir::new().unwrap();
    let img = fixture(d.path(), "a.pgm", 64, 2);
    let m = d.path().join("m.json");
    let asg = d.path().join("asg.json");
    ok(&["sample", "--in", s(&img), "--block", "16", "--sr", "0.2", "--out", s(&m), "--assignment-out", s(&asg)]);
    let a = json(&asg);
    let channels = a["channels"].as_array().unwrap();
    assert_eq!(channels.len(), 16);
    assert!(channels.iter().all(|c| c.as_u64() == Some(4)));
    // 51 of 256 measurements per block.
    assert_eq!(a["achieved_rate"].as_f64().unwrap(), 51.0 / 256.0);
    let meas = json(&m);
    assert!(meas["measurements"]["entries"].as_array().unwrap().iter().all(|e| e["y"].as_array().unwrap().len() == 51));
}

#[test]
fn uniform_mode_rejects_rate_between_channels() {
    let d = TempDir::new().unwrap();
    let img = fixture(d.path(), "a.pgm", 32, 2);
    let out = bcskit(&["sample", "--in", s(&img), "--sr", "0.15", "--out", s(&d.path().join("m.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("channel rates"));
}

#[test]
fn missing_input_fails_with_message() {
    let d = TempDir::new().unwrap();
    let out = bcskit(&["sample", "--in", s(&d.path().join("nope.pgm")), "--sr", "0.1", "--out", s(&d.path().join("m.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_algorithm_is_rejected() {
    let d = TempDir::new().unwrap();
    let out = bcskit(&["reconstruct", "--meas", s(&d.path().join("m.json")), "--algo", "bm3d", "--out", "x.pgm"]);
    assert!(!out.status.success());
}

#[test]
fn corrupt_measurement_file_is_rejected() {
    let d = TempDir::new().unwrap();
    let m = d.path().join("m.json");
    fs::write(&m, "{\"source\": 3}").unwrap();
    let out = bcskit(&["reconstruct", "--meas", s(&m), "--algo", "damp", "--out", s(&d.path().join("x.pgm"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("m.json"));
}

#[test]
fn full_rate_orthonormal_recovery_is_exact() {
    let d = TempDir::new().unwrap();
    let img = fixture(d.path(), "a.pgm", 32, 3);
    let m = d.path().join("m.json");
    ok(&["sample", "--in", s(&img), "--block", "16", "--rates", "1.0", "--sr", "1.0", "--orthonormal", "--out", s(&m)]);
    let line = ok(&[
        "reconstruct", "--meas", s(&m), "--algo", "bcs-damp", "--iters", "3",
        "--out", s(&d.path().join("r.pgm")), "--ref", s(&img),
    ]);
    let f = fields(line.trim());
    assert_eq!(f[4], "inf");
    assert_eq!(f[5], "1");
    assert_eq!(fs::read(&img).unwrap(), fs::read(d.path().join("r.pgm")).unwrap());
}

#[test]
fn missing_reference_leaves_metrics_empty() {
    let d = TempDir::new().unwrap();
    let img = fixture(d.path(), "a.pgm", 64, 4);
    let m = d.path().join("m.json");
    let csv = d.path().join("runs.csv");
    ok(&["sample", "--in", s(&img), "--block", "16", "--sr", "0.3", "--out", s(&m)]);
    for _ in 0..2 {
        ok(&[
            "reconstruct", "--meas", s(&m), "--assignment", s(&d.path().join("m.assignment.json")),
            "--algo", "bcs-spl", "--iters", "5", "--out", s(&d.path().join("r.pgm")),
            "--csv", s(&csv), "--id", "plain",
        ]);
    }
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 3);
    let f = fields(lines[1]);
    assert_eq!(f[..3], ["plain", "bcs-spl", "0.3"]);
    assert_eq!((f[4], f[5]), ("", ""));
    assert!(f[6].parse::<f64>().is_ok());
}

#[test]
fn joint_engine_is_less_blocky_than_blockwise() {
    let d = TempDir::new().unwrap();
    let img = fixture(d.path(), "a.pgm", 96, 5);
    let m = d.path().join("m.json");
    let csv = d.path().join("runs.csv");
    ok(&["sample", "--in", s(&img), "--sr", "0.1", "--seed", "1", "--out", s(&m)]);
    for algo in ["damp", "bcs-damp"] {
        ok(&[
            "reconstruct", "--meas", s(&m), "--algo", algo, "--iters", "10",
            "--out", s(&d.path().join(format!("{algo}.pgm"))), "--ref", s(&img), "--csv", s(&csv),
        ]);
    }
    let text = fs::read_to_string(&csv).unwrap();
    let b: Vec<f64> = text.lines().skip(1).map(|l| fields(l)[6].parse().unwrap()).collect();
    assert_eq!(b.len(), 2);
    assert!(b[1] < b[0], "blockiness damp {} vs bcs-damp {}", b[0], b[1]);
}

#[test]
fn bench_covers_the_cross_product() {
    let d = TempDir::new().unwrap();
    let dir = d.path().join("imgs");
    fs::create_dir(&dir).unwrap();
    fixture(&dir, "b.pgm", 32, 6);
    fixture(&dir, "a.pgm", 32, 7);
    fs::write(dir.join("notes.txt"), "ignored").unwrap();
    let out = d.path().join("bench.csv");
    ok(&[
        "bench", "--dir", s(&dir), "--algos", "damp,bcs-spl", "--rates", "0.3,0.1,0.2",
        "--block", "16", "--iters", "3", "--out", s(&out),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HEADER);
    let rows: Vec<Vec<&str>> = lines[1..].iter().map(|l| fields(l)).collect();
    let (data, means): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r[0] != "__mean__");
    assert_eq!(data.len(), 12);
    assert_eq!(means.len(), 6);

    let keys: Vec<(&str, &str, f64)> = data.iter().map(|r| (r[0], r[1], r[2].parse().unwrap())).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    assert_eq!(keys, sorted);
    assert_eq!(keys[0], ("a", "bcs-spl", 0.1));

    for m in &means {
        let group: Vec<&&Vec<&str>> = data.iter().filter(|r| r[1] == m[1] && r[2] == m[2]).collect();
        assert_eq!(group.len(), 2);
        for col in [3, 4, 5, 7] {
            let mean = group.iter().map(|r| r[col].parse::<f64>().unwrap()).sum::<f64>() / 2.0;
            let got: f64 = m[col].parse().unwrap();
            assert!((got - mean).abs() <= 1e-9 * mean.abs().max(1.0), "column {col}: {got} vs {mean}");
        }
    }
}

#[test]
fn bench_rejects_empty_directory() {
    let d = TempDir::new().unwrap();
    let out = bcskit(&["bench", "--dir", s(d.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no .pgm"));
}

fn toy_dir(d: &Path) -> PathBuf {
    let dir = d.join("toy");
    fs::create_dir(&dir).unwrap();
    for (i, img) in toy_images(3, 32, 2).iter().enumerate() {
        save_pgm(img, dir.join(format!("t{i}.pgm"))).unwrap();
    }
    dir
}

fn loss_rows(p: &Path) -> Vec<String> {
    let text = fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,stage,loss"));
    lines.map(str::to_string).collect()
}

#[test]
fn training_resumes_where_it_stopped() {
    let d = TempDir::new().unwrap();
    let dir = toy_dir(d.path());
    let p = |n: &str| d.path().join(n);
    let train = |extra: &[&str], out: &str, csv: &str| {
        let mut args = vec!["train-toy", "--dir", s(&dir), "--seed", "4", "--lr", "1e-3"];
        let (out, csv) = (p(out), p(csv));
        args.extend(["--out", s(&out), "--loss-csv", s(&csv)]);
        args.extend_from_slice(extra);
        ok(&args);
        loss_rows(&csv)
    };

    let whole = train(&["--stage1-steps", "6", "--stage2-steps", "4"], "whole.ck", "whole.csv");
    assert_eq!(whole.len(), 10);
    assert!(whole[..6].iter().all(|r| r.contains(",1,")));
    assert_eq!(whole[6], format!("0,2,{}", whole[6].rsplit(',').next().unwrap()));

    let first = train(&["--stage", "1", "--stage1-steps", "3"], "a.ck", "a.csv");
    assert_eq!(first, whole[..3]);
    let rest1 = train(&["--stage", "1", "--stage1-steps", "6", "--from", s(&p("a.ck"))], "b.ck", "b.csv");
    assert_eq!(rest1, whole[3..6]);
    let s2a = train(&["--stage", "2", "--stage2-steps", "2", "--from", s(&p("b.ck"))], "c.ck", "c.csv");
    assert_eq!(s2a, whole[6..8]);
    let s2b = train(&["--stage", "both", "--stage2-steps", "4", "--from", s(&p("c.ck"))], "e.ck", "e.csv");
    assert_eq!(s2b, whole[8..]);
    assert_eq!(fs::read(p("e.ck")).unwrap(), fs::read(p("whole.ck")).unwrap());
}

#[test]
fn stage_two_needs_a_stage_one_checkpoint() {
    let d = TempDir::new().unwrap();
    let dir = toy_dir(d.path());
    let out = bcskit(&[
        "train-toy", "--dir", s(&dir), "--stage", "2", "--out", s(&d.path().join("x.ck")),
        "--loss-csv", s(&d.path().join("x.csv")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid state"));
    assert!(!d.path().join("x.ck").exists());
}

#[test]
fn network_measurements_reconstruct_with_the_network() {
    let d = TempDir::new().unwrap();
    let dir = toy_dir(d.path());
    let ck = d.path().join("net.ck");
    ok(&[
        "train-toy", "--dir", s(&dir), "--stage1-steps", "2", "--stage2-steps", "1",
        "--out", s(&ck), "--loss-csv", s(&d.path().join("l.csv")),
    ]);
    let img = dir.join("t0.pgm");
    let m = d.path().join("m.json");
    ok(&["sample", "--in", s(&img), "--checkpoint", s(&ck), "--sr", "0.2", "--out", s(&m)]);
    let meas = json(&m);
    assert_eq!(meas["source"]["type"], "network");
    assert_eq!(meas["measurements"]["block_size"], 16);
    for algo in ["bcsnet", "bcs-damp"] {
        let line = ok(&[
            "reconstruct", "--meas", s(&m), "--algo", algo, "--iters", "3",
            "--out", s(&d.path().join("r.pgm")), "--ref", s(&img),
        ]);
        let f = fields(line.trim());
        assert_eq!(f[1], algo);
        assert!(f[4].parse::<f64>().unwrap() > 5.0);
    }
}

#[test]
fn bcsnet_needs_a_network() {
    let d = TempDir::new().unwrap();
    let img = fixture(d.path(), "a.pgm", 32, 8);
    let m = d.path().join("m.json");
    ok(&["sample", "--in", s(&img), "--block", "16", "--sr", "0.1", "--out", s(&m)]);
    let out = bcskit(&["reconstruct", "--meas", s(&m), "--algo", "bcsnet", "--out", s(&d.path().join("r.pgm"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn fixtures_are_seeded() {
    let d = TempDir::new().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for out in [&a, &b] {
        ok(&["fixtures", "--kind", "toy", "--count", "2", "--size", "24", "--seed", "5", "--out", s(out)]);
    }
    for name in ["toy-000.pgm", "toy-001.pgm"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    assert_ne!(fs::read(a.join("toy-000.pgm")).unwrap(), fs::read(a.join("toy-001.pgm")).unwrap());
}
