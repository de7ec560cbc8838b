use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tapgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tapgnn")).args(args).env("TAPGNN_LOG", "warn").output().expect("spawn tapgnn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_file_fails() {
    let o = tapgnn(&["stats", "--data", "/definitely/not/here.txt"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("not/here.txt"));
}

#[test]
fn unknown_kernel_is_a_usage_error() {
    let o = tapgnn(&["check", "--synthetic", "er:n=30,m=300", "--kernel", "sum"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tapgnn(&["train", "--synthetic", "er:n=30,m=300", "--kernel", "sum", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_one_kernel_passes() {
    let o = tapgnn(&["check", "--synthetic", "er:n=30,m=300", "--kernel", "mean"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("PASS kernel=mean"), "{out}");
}

#[test]
fn check_all_reports_every_kernel() {
    let o = tapgnn(&["check", "--synthetic", "er:n=20,m=120", "--kernel", "all", "--precision", "f32"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{out}");
}

#[test]
fn check_refuses_past_the_link_cap() {
    let o = tapgnn(&["check", "--synthetic", "er:n=30,m=300", "--link-cap", "10"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("6191"));
}

#[test]
fn stats_prints_a_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.txt");
    fs::write(&path, "src,dst,t\n0,1,1\n1,2,2\n0,2,2\n").unwrap();
    let o = tapgnn(&["stats", "--data", path.to_str().unwrap(), "--header", "--directed"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("3,3,"), "{out}");
}

#[test]
fn stream_rejects_a_zero_batch() {
    let o = tapgnn(&["stream", "--synthetic", "er:n=30,m=300", "--model", "m.tapg", "--batch", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--synthetic",
        "communities:n=30,m=400",
        "--dim",
        "8",
        "--time-dim",
        "4",
        "--epochs",
        "2",
        "--batch",
        "64",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    tapgnn(&args)
}

#[test]
fn train_eval_stream_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = train(&a, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.json", "model.tapg", "train_log.csv", "metrics.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }

    // Refuses to overwrite, then does so with --force.
    assert!(!train(&a, &[]).status.success());
    assert!(train(&a, &["--force"]).status.success());

    // Same seed, same log.
    assert!(train(&b, &["--threads", "1"]).status.success());
    let log_a = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert_eq!(log_a, fs::read_to_string(b.join("train_log.csv")).unwrap());

    // The written config reproduces the run.
    let c = dir.path().join("c");
    let cfg = a.join("config.json");
    let o = tapgnn(&["train", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(log_a, fs::read_to_string(c.join("train_log.csv")).unwrap());

    let model = a.join("model.tapg");
    let o =
        tapgnn(&["eval", "--synthetic", "communities:n=30,m=400", "--seed", "3", "--model", model.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), fs::read_to_string(a.join("metrics.csv")).unwrap());

    let o = tapgnn(&[
        "stream",
        "--synthetic",
        "communities:n=30,m=400",
        "--seed",
        "3",
        "--model",
        model.to_str().unwrap(),
        "--batch",
        "16",
        "--reps",
        "1",
        "--layers",
        "1,2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("PASS stream-vs-batch"), "{out}");
    assert!(out.contains("batch_size,layers,mean_ms"));
}
