use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "resolution=16
channels=8,8
const_channels=8
k=4
batch=2
steps=10
checkpoint_every=5
disc_channels=8,8
disc_head_channels=16
dataset_size=300
";

fn mostgan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mostgan"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn trained(dir: &TempDir) -> String {
    fs::write(dir.path().join("c.txt"), TINY).unwrap();
    let o = mostgan(&["train", "--config", "c.txt", "--out", "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    "run/ckpt_final.msgv".into()
}

#[test]
fn train_smoke_writes_rows_and_checkpoints() {
    let dir = TempDir::new().unwrap();
    trained(&dir);
    let csv = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,loss_d,loss_g,l_div,r1,grad_norm_g,grad_norm_d");
    assert_eq!(lines.len(), 11);
    for name in ["ckpt_00000005.msgv", "ckpt_00000010.msgv", "ckpt_final.msgv"] {
        assert!(dir.path().join("run").join(name).exists(), "{name}");
    }
}

#[test]
fn unknown_key_exits_2_naming_it() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.txt"), "kk=8\n").unwrap();
    let o = mostgan(&["train", "--config", "bad.txt", "--out", "run"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("kk"));
}

#[test]
fn repeated_training_is_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    trained(&a);
    trained(&b);
    let read = |d: &TempDir, f: &str| fs::read(d.path().join("run").join(f)).unwrap();
    assert_eq!(read(&a, "metrics.csv"), read(&b, "metrics.csv"));
    assert_eq!(read(&a, "ckpt_final.msgv"), read(&b, "ckpt_final.msgv"));
}

#[test]
fn resume_appends_the_same_rows() {
    let dir = TempDir::new().unwrap();
    trained(&dir);
    fs::create_dir(dir.path().join("resumed")).unwrap();
    let full = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let head: String = full.lines().take(6).map(|l| format!("{l}\n")).collect();
    fs::write(dir.path().join("resumed/metrics.csv"), head).unwrap();
    let o = mostgan(&["train", "--resume", "run/ckpt_00000005.msgv", "--out", "resumed"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("resumed/metrics.csv")).unwrap(), full);
    assert_eq!(
        fs::read(dir.path().join("resumed/ckpt_final.msgv")).unwrap(),
        fs::read(dir.path().join("run/ckpt_final.msgv")).unwrap()
    );
}

#[test]
fn sample_lengths_and_determinism() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained(&dir);
    for (n, out) in [("128", "s128"), ("1", "s1"), ("1", "s1b")] {
        let o = mostgan(&["sample", "--ckpt", &ckpt, "--frames", n, "--seed", "3", "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read_dir(dir.path().join("s128")).unwrap().count(), 128);
    let f = |d: &str| fs::read(dir.path().join(d).join("frame_000000.ppm")).unwrap();
    assert!(f("s1").starts_with(b"P6\n16 16\n255\n"));
    assert_eq!(f("s1"), f("s1b"));
    assert_eq!(f("s1"), f("s128"));
}

#[test]
fn analyze_outputs() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained(&dir);
    let run = |what: &str, extra: &[&str]| {
        let mut args = vec!["analyze", "--ckpt", &ckpt, "--what", what, "--out", "an"];
        args.extend_from_slice(extra);
        let o = mostgan(&args, dir.path());
        assert_eq!(code(&o), 0, "{what}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run("cosine", &[]);
    let cos = fs::read_to_string(dir.path().join("an/cosine.csv")).unwrap();
    let m: Vec<Vec<f64>> = cos.lines().map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(m.len(), 4);
    for (i, row) in m.iter().enumerate() {
        assert_eq!(row.len(), 4);
        assert!((row[i] - 1.0).abs() < 1e-12);
    }

    run("trajectory", &["--times", "0..63"]);
    let traj = fs::read_to_string(dir.path().join("an/trajectory.csv")).unwrap();
    let lines: Vec<&str> = traj.lines().collect();
    assert_eq!(lines[0], "style_0,style_1,style_2,style_3");
    assert_eq!(lines.len(), 65);
    for l in &lines[1..] {
        let s: f64 = l.split(',').map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    run("attmap", &["--t", "2.5"]);
    for k in 0..4 {
        let b = fs::read(dir.path().join(format!("an/attmap_style_{k}.pgm"))).unwrap();
        assert!(b.starts_with(b"P5\n"));
    }

    run("grid", &["--times", "0..2", "--rows", "2", "--cols", "3"]);
    let g = fs::read(dir.path().join("an/frame_000002.ppm")).unwrap();
    assert!(g.starts_with(b"P6\n48 32\n255\n"));

    run("frechet", &["--reference", "dataset", "--count", "256"]);
    let fd = fs::read_to_string(dir.path().join("an/frechet.csv")).unwrap();
    let v: f64 = fd.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(v.abs() < 1e-6, "{v}");
}

#[test]
fn bench_counts_scale_with_rank() {
    let dir = TempDir::new().unwrap();
    let count = |rank: &str| {
        let o = mostgan(&["bench", "--layer", "16,16,3,3", "--dh", "8", "--rank", rank], dir.path());
        assert_eq!(code(&o), 0);
        let out = String::from_utf8(o.stdout).unwrap();
        assert!(out.contains("over 10 reps"));
        out.lines()
            .find_map(|l| l.strip_prefix("lowrank params:"))
            .unwrap()
            .trim()
            .parse::<u64>()
            .unwrap()
    };
    assert_eq!(count("3"), 3 * count("1"));
    let o = mostgan(&["bench", "--layer", "16,16,3"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_exit_codes() {
    let dir = TempDir::new().unwrap();
    let o = mostgan(&["gradcheck", "--scope", "ops"], dir.path());
    assert_eq!(code(&o), 0);
    let o = mostgan(&["gradcheck", "--scope", "ops", "--inject-fault", "tanh"], dir.path());
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("op/tanh"));
}

#[test]
fn dataset_dump_and_reload() {
    let dir = TempDir::new().unwrap();
    let o = mostgan(&["dataset", "dump", "--count", "3", "--frames", "4", "--resolution", "16", "--out", "ds"], dir.path());
    assert_eq!(code(&o), 0);
    let manifest = fs::read_to_string(dir.path().join("ds/manifest.txt")).unwrap();
    assert_eq!(mostgan::synthetic::parse_manifest(&manifest).unwrap().len(), 3);
    assert_eq!(fs::read_dir(dir.path().join("ds/scene_0002")).unwrap().count(), 4);
}

#[test]
fn io_errors_exit_4() {
    let dir = TempDir::new().unwrap();
    let o = mostgan(&["sample", "--ckpt", "missing.msgv", "--out", "x"], dir.path());
    assert_eq!(code(&o), 4);
    fs::write(dir.path().join("junk.msgv"), b"JUNKJUNKJUNK").unwrap();
    let o = mostgan(&["analyze", "--ckpt", "junk.msgv", "--what", "cosine", "--out", "x"], dir.path());
    assert_eq!(code(&o), 4);
}
