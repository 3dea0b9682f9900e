//! End-to-end tests that drive the compiled binary: exit codes, stream
//! discipline (artifacts on stdout or files, progress on stderr), and a
//! full scan/train/eval round trip on generated data.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bcfpl"));
    // Isolate from whatever the ambient environment points at.
    cmd.env_remove("BCFPL_DATA_ROOT");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Small deterministic generator so the fixtures need no extra crates.
struct Lcg(u64);

impl Lcg {
    fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    fn in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// 50x50 P6 image: dark noisy background, plus a bright 13-pixel square
/// at a generator-chosen position when `occupied`.
fn ppm_bytes(rng: &mut Lcg, occupied: bool) -> Vec<u8> {
    const SIDE: usize = 50;
    const BLOB: usize = 13;
    let base = rng.in_range(0.15, 0.22);
    let mut pixels = vec![0f64; SIDE * SIDE * 3];
    for v in pixels.iter_mut() {
        *v = base + rng.in_range(-0.03, 0.03);
    }
    if occupied {
        let x0 = (rng.next_f64() * (SIDE - BLOB) as f64) as usize;
        let y0 = (rng.next_f64() * (SIDE - BLOB) as f64) as usize;
        for y in y0..y0 + BLOB {
            for x in x0..x0 + BLOB {
                for c in 0..3 {
                    pixels[(y * SIDE + x) * 3 + c] = rng.in_range(0.85, 0.95);
                }
            }
        }
    }
    let mut out = format!("P6\n{SIDE} {SIDE}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| (v * 255.0 + 0.5) as u8));
    out
}

fn write_tree(root: &Path, per_class: usize, seed: u64) {
    let mut rng = Lcg(seed);
    for class in ["occupied", "empty"] {
        let dir = root.join(class);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let bytes = ppm_bytes(&mut rng, class == "occupied");
            std::fs::write(dir.join(format!("s{i:03}.ppm")), bytes).unwrap();
        }
    }
}

#[test]
fn help_exits_zero_and_prints_usage() {
    let out = run(bin().arg("--help"));
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("Usage: bcfpl"));
    for sub in ["train", "eval", "sweep", "bench", "degrade", "scan", "overfit-study"] {
        assert!(stdout(&out).contains(sub), "help is missing {sub}");
    }
}

#[test]
fn every_subcommand_help_exits_zero() {
    for sub in ["train", "eval", "sweep", "bench", "degrade", "scan", "overfit-study"] {
        let out = run(bin().args([sub, "--help"]));
        assert_eq!(out.status.code(), Some(0), "{sub} --help failed");
        assert!(stdout(&out).contains("Usage:"), "{sub} --help prints no usage");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(bin().args(["train", "--no-such-flag"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let out = run(&mut bin());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_is_a_runtime_error() {
    let out = run(bin().args(["train", "--data", "/no/such/directory"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error:"), "got: {}", stderr(&out));
}

#[test]
fn scan_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("train");
    let holdout = dir.path().join("holdout");
    write_tree(&tree, 16, 1);
    write_tree(&holdout, 8, 2);

    // Scan to a manifest file; paths must be absolute so the manifest
    // works regardless of the loader's working directory.
    let manifest = dir.path().join("manifest.csv");
    let out = run(bin().args([
        "scan",
        "--root",
        tree.to_str().unwrap(),
        "--output",
        manifest.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.starts_with("path,label"));
    assert_eq!(text.lines().count(), 33, "header plus 32 rows");
    assert!(text.lines().nth(1).unwrap().starts_with('/'));

    // Scanning to stdout keeps the artifact on stdout only.
    let out = run(bin().args(["scan", "--root", tree.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("path,label"));
    assert!(!stderr(&out).contains("path,label"));

    // Train from the CSV manifest with a held-out tree.
    let log = dir.path().join("log.csv");
    let ckpt = dir.path().join("model.ckpt");
    let train_args = [
        "train",
        "--data",
        manifest.to_str().unwrap(),
        "--holdout",
        holdout.to_str().unwrap(),
        "--resolution",
        "9",
        "--epochs",
        "3",
        "--batch-size",
        "8",
        "--lr",
        "0.003",
        "--flat-lr",
        "--dropout",
        "0",
    ];
    let out = run(bin().args(train_args).args([
        "--log",
        log.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("config: seed 0, resolution 9"));
    assert!(stderr(&out).contains("holdout acc"));
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert!(log_text.starts_with("epoch,lr,train_loss,train_acc,test_acc"));
    assert_eq!(log_text.lines().count(), 4);
    let ckpt_bytes = std::fs::read(&ckpt).unwrap();
    assert!(ckpt_bytes.starts_with(b"BCFPLCK1"));

    // Same seed, same data: the checkpoint must come out byte-identical
    // across processes.
    let ckpt2 = dir.path().join("model2.ckpt");
    let out = run(bin()
        .args(train_args)
        .args(["--checkpoint", ckpt2.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(ckpt_bytes, std::fs::read(&ckpt2).unwrap());

    // Evaluate the checkpoint; the report goes to the file, not stdout.
    let report = dir.path().join("report.txt");
    let roc = dir.path().join("roc.csv");
    let out = run(bin().args([
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        holdout.to_str().unwrap(),
        "--resolution",
        "9",
        "--report",
        report.to_str().unwrap(),
        "--roc",
        roc.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
    let report_text = std::fs::read_to_string(&report).unwrap();
    assert!(report_text.contains("accuracy: "));
    assert!(report_text.contains("auc: "));
    assert!(report_text.contains("roc: "));
    let roc_text = std::fs::read_to_string(&roc).unwrap();
    assert!(roc_text.starts_with("threshold,fpr,tpr"));

    // Without --report the report is the stdout artifact.
    let out = run(bin().args([
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        holdout.to_str().unwrap(),
        "--resolution",
        "9",
    ]));
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("n: 16"));
}

#[test]
fn sweep_covers_requested_resolutions() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("train");
    let holdout = dir.path().join("holdout");
    write_tree(&tree, 12, 3);
    write_tree(&holdout, 6, 4);
    let sweep = dir.path().join("sweep.csv");
    let out = run(bin().args([
        "sweep",
        "--data",
        tree.to_str().unwrap(),
        "--eval",
        &format!("holdout={}", holdout.display()),
        "--resolutions",
        "9,3",
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--lr",
        "0.003",
        "--flat-lr",
        "--dropout",
        "0",
        "--output",
        sweep.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&sweep).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "resolution,dataset,accuracy,auc,n");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("9,holdout,"));
    assert!(lines[2].starts_with("3,holdout,"));
}

#[test]
fn sweep_rejects_malformed_eval_spec() {
    let out = run(bin().args(["sweep", "--data", "x", "--eval", "nameonly"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("NAME=PATH"));
}

#[test]
fn bench_reports_throughput_on_stdout() {
    let out = run(bin().args([
        "bench",
        "--images",
        "32",
        "--batch-size",
        "16",
        "--reps",
        "2",
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("images per second"));
}

#[test]
fn degrade_is_identity_at_full_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.ppm");
    let mut rng = Lcg(9);
    std::fs::write(&input, ppm_bytes(&mut rng, true)).unwrap();

    let same = dir.path().join("same.ppm");
    let out = run(bin().args([
        "degrade",
        "--resolution",
        "50",
        input.to_str().unwrap(),
        same.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        std::fs::read(&input).unwrap(),
        std::fs::read(&same).unwrap(),
        "resolution 50 must reproduce the file byte for byte"
    );

    // The resolution flag also answers to its ladder-side name, --k.
    let low = dir.path().join("low.ppm");
    let out = run(bin().args([
        "degrade",
        "--k",
        "3",
        input.to_str().unwrap(),
        low.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let low_bytes = std::fs::read(&low).unwrap();
    assert!(low_bytes.starts_with(b"P6\n50 50\n255\n"), "stays at canvas size");
    assert_ne!(low_bytes, std::fs::read(&input).unwrap());

    // Only PNM output is supported.
    let out = run(bin().args([
        "degrade",
        "--resolution",
        "3",
        input.to_str().unwrap(),
        dir.path().join("out.png").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("train");
    write_tree(&tree, 4, 5);
    let out = run(Command::new(env!("CARGO_BIN_EXE_bcfpl"))
        .env("BCFPL_DATA_ROOT", &tree)
        .args([
            "train",
            "--resolution",
            "9",
            "--epochs",
            "1",
            "--batch-size",
            "4",
            "--dropout",
            "0",
        ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("epoch,lr,"), "log goes to stdout when --log is absent");
}

#[test]
fn overfit_study_logs_constant_rate() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("train");
    let holdout = dir.path().join("holdout");
    write_tree(&tree, 4, 6);
    write_tree(&holdout, 4, 7);
    let out = run(bin().args([
        "overfit-study",
        "--data",
        tree.to_str().unwrap(),
        "--holdout",
        holdout.to_str().unwrap(),
        "--resolution",
        "9",
        "--batch-size",
        "4",
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let log = stdout(&out);
    assert_eq!(log.lines().count(), 31, "header plus 30 epochs");
    for line in log.lines().skip(1) {
        assert!(line.contains(",0.00002,"), "unexpected rate in {line}");
    }
}
