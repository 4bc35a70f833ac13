use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_affine-fold"));
    c.env_remove("AFFINE_FOLD_DATA");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn build(dir: &TempDir, name: &str, extra: &[&str]) -> String {
    let out = path(dir, name);
    let mut args = vec!["build", "--out", &out];
    args.extend_from_slice(extra);
    let r = run(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("AFFINE_FOLD_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}

/// Rows of a bench CSV as (variant, median, speedup).
fn bench_rows(csv: &str) -> Vec<(String, f64, f64)> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variant,reps,median_us,p25_us,p75_us,flops,speedup"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 7, "{l}");
            let (p25, med, p75): (f64, f64, f64) = (f[3].parse().unwrap(), f[2].parse().unwrap(), f[4].parse().unwrap());
            assert!(p25 <= med && med <= p75);
            (f[0].to_string(), med, f[6].parse().unwrap())
        })
        .collect()
}

#[test]
fn build_presets_and_reject_unknown() {
    let dir = TempDir::new().unwrap();
    let stem = build(&dir, "b3", &["--preset", "basic3"]);
    assert!(Path::new(&format!("{stem}.manifest")).exists());
    assert!(Path::new(&format!("{stem}.blob")).exists());
    build(&dir, "d", &["--preset", "deep_linear", "--layers", "34"]);

    let out = path(&dir, "x");
    assert_eq!(code(&run(&["build", "--preset", "basic4", "--out", &out])), 2);
    assert_eq!(code(&run(&["build", "--preset", "deep_linear", "--out", &out])), 2);
    assert_eq!(code(&run(&["build", "--preset", "basic3", "--layers", "3", "--out", &out])), 2);
    assert_eq!(code(&run(&["build", "--out", &out])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
}

#[test]
fn collapse_linear_and_refuse_relu() {
    let dir = TempDir::new().unwrap();
    let lin = build(&dir, "b3", &["--preset", "basic3"]);
    let out = path(&dir, "b3c");
    let r = run(&["collapse", "--model", &lin, "--out", &out]);
    assert_eq!(code(&r), 0);
    assert!(stdout(&r).contains("10x784"));

    let relu = build(&dir, "m", &["--preset", "mnist_classifier"]);
    let r = run(&["collapse", "--model", &relu, "--out", &path(&dir, "mc")]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("ReLU"));
}

#[test]
fn predictions_agree_between_layered_and_collapsed() {
    let dir = TempDir::new().unwrap();
    let net = build(&dir, "d", &["--preset", "deep_linear", "--layers", "10", "--skip-t", "0.7"]);
    let map = path(&dir, "dc");
    assert_eq!(code(&run(&["collapse", "--model", &net, "--out", &map])), 0);
    let a = run(&["predict", "--model", &net, "--random", "20", "--seed", "3"]);
    let b = run(&["predict", "--model", &map, "--random", "20", "--seed", "3"]);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a).lines().count(), 21);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn bench_directions() {
    let dir = TempDir::new().unwrap();
    let net = build(&dir, "d34", &["--preset", "deep_linear", "--layers", "34"]);
    let map = path(&dir, "d34c");
    assert_eq!(code(&run(&["collapse", "--model", &net, "--out", &map])), 0);
    let r = run(&["bench-predict", "--model", &net, "--model", &map, "--reps", "100", "--warmup", "10"]);
    assert_eq!(code(&r), 0);
    let rows = bench_rows(&stdout(&r));
    assert_eq!(rows[0].0, "d34");
    assert_eq!(rows[0].2, 1.0);
    assert!(rows[1].2 > 1.0, "{rows:?}");

    let skips = build(&dir, "b6", &["--preset", "basic6", "--skip-t", "0"]);
    let excised = path(&dir, "b6x");
    assert_eq!(code(&run(&["excise", "--model", &skips, "--out", &excised])), 0);
    let r = run(&["bench-predict", "--model", &skips, "--model", &excised, "--reps", "300", "--warmup", "30"]);
    assert!(bench_rows(&stdout(&r))[1].2 > 1.0);

    let b3 = build(&dir, "b3", &["--preset", "basic3"]);
    let csv_path = path(&dir, "self.csv");
    let r = run(&["bench-predict", "--model", &b3, "--model", &b3, "--reps", "400", "--warmup", "40", "--out", &csv_path]);
    assert_eq!(code(&r), 0);
    let rows = bench_rows(&std::fs::read_to_string(&csv_path).unwrap());
    assert!((0.8..=1.25).contains(&rows[1].2), "{rows:?}");

    let batched = run(&["bench-predict", "--model", &b3, "--reps", "30", "--warmup", "2", "--batch", "8"]);
    assert_eq!(code(&batched), 0);
}

#[test]
fn bench_rejects_mismatched_inputs_and_few_reps() {
    let dir = TempDir::new().unwrap();
    let b3 = build(&dir, "b3", &["--preset", "basic3"]);
    assert_eq!(code(&run(&["bench-predict", "--model", &b3, "--reps", "10"])), 2);
    assert_eq!(code(&run(&["excise", "--model", &b3, "--out", &path(&dir, "e")])), 1);
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let dir = TempDir::new().unwrap();
    for p in ["basic3", "mnist_classifier"] {
        let m = build(&dir, p, &["--preset", p]);
        let r = run(&["gradcheck", "--model", &m, "--samples", "2"]);
        assert_eq!(code(&r), 0, "{p}");
        assert!(stdout(&r).contains("PASS"));
        let bad = run(&["gradcheck", "--model", &m, "--samples", "1", "--corrupt-gradient"]);
        assert_eq!(code(&bad), 1, "{p}");
    }
}

#[test]
fn export_matrix_triplets() {
    let dir = TempDir::new().unwrap();
    let m = build(&dir, "b3", &["--preset", "basic3"]);
    let r = run(&["export-matrix", "--model", &m, "--layer", "1", "--part", "weight"]);
    assert_eq!(code(&r), 0);
    let text = stdout(&r);
    // 26x26 outputs, 9 taps each
    assert_eq!(text.lines().count(), 26 * 26 * 9);
    let first: Vec<&str> = text.lines().next().unwrap().split(' ').collect();
    assert_eq!(&first[..2], &["0", "0"]);

    let r = run(&["export-matrix", "--model", &m, "--layer", "3", "--part", "resample", "--from", "1"]);
    assert_eq!(stdout(&r).lines().count(), 24 * 24);
    assert_eq!(code(&run(&["export-matrix", "--model", &m, "--layer", "9"])), 2);
    assert_eq!(code(&run(&["export-matrix", "--model", &m, "--layer", "1", "--part", "bogus"])), 2);
}

#[test]
fn train_schedule_must_match_epochs() {
    let dir = TempDir::new().unwrap();
    let m = build(&dir, "m", &["--preset", "mnist_classifier"]);
    let out = path(&dir, "t");
    let r = run(&["train", "--model", &m, "--epochs", "3", "--schedule", "0.5,0", "--out", &out]);
    assert_eq!(code(&r), 2);
    let r = run(&["train", "--model", &m, "--epochs", "1", "--schedule", "1.5", "--out", &out]);
    assert_eq!(code(&r), 2);
}

#[test]
fn missing_data_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let m = build(&dir, "m", &["--preset", "mnist_classifier"]);
    let empty = dir.path().join("nothing");
    let r = bin()
        .args(["train", "--model", &m, "--epochs", "1", "--schedule", "0", "--out", &path(&dir, "t")])
        .env("AFFINE_FOLD_DATA", &empty)
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
}

#[test]
fn sweep_rejects_out_of_range_grid() {
    let dir = TempDir::new().unwrap();
    let m = build(&dir, "m", &["--preset", "mnist_classifier"]);
    assert_eq!(code(&run(&["sweep-t", "--model", &m, "--grid", "0,1.3"])), 2);
    assert_eq!(code(&run(&["sweep-t", "--model", &m, "--grid", "0,x"])), 2);
}

#[test]
fn train_and_sweep_on_mnist() {
    let Some(data) = mnist_dir() else {
        eprintln!("skipping: MNIST files not found");
        return;
    };
    let dir = TempDir::new().unwrap();
    let m = build(&dir, "m", &["--preset", "mnist_classifier"]);
    let out = path(&dir, "trained");
    let history = path(&dir, "h.csv");
    let train = |out: &str, history: &str| {
        bin()
            .args(["train", "--model", &m, "--epochs", "2", "--schedule", "0.5,0", "--subset", "300"])
            .args(["--val-subset", "100", "--out", out, "--history", history, "--excise"])
            .env("AFFINE_FOLD_DATA", &data)
            .output()
            .unwrap()
    };
    let r = train(&out, &history);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(&history).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,t,train_loss,val_accuracy,wall_ms");
    assert_eq!(lines.len(), 3);

    // everything but wall_ms repeats exactly
    let again = path(&dir, "h2.csv");
    assert_eq!(code(&train(&path(&dir, "trained2"), &again)), 0);
    let strip = |s: &str| -> Vec<String> { s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect() };
    assert_eq!(strip(&csv), strip(&std::fs::read_to_string(&again).unwrap()));

    let svg = path(&dir, "sweep.svg");
    let r = bin()
        .args(["sweep-t", "--model", &m, "--grid", "0,0.5", "--trials", "2", "--epochs", "1"])
        .args(["--subset", "200", "--val-subset", "100", "--svg", &svg])
        .env("AFFINE_FOLD_DATA", &data)
        .output()
        .unwrap();
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let csv = stdout(&r);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,mean_val_accuracy,trials");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",2"));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let r = bin()
        .args(["predict", "--model", &out, "--limit", "10"])
        .env("AFFINE_FOLD_DATA", &data)
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);
    assert_eq!(stdout(&r).lines().count(), 11);
}
