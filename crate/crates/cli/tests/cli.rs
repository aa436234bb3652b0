use std::path::Path;
use std::process::{Command, Output};

fn hybdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybdet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_is_a_usage_error() {
    assert_eq!(hybdet(&[]).status.code(), Some(2));
    assert_eq!(hybdet(&["bench", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(hybdet(&["--help"]).status.code(), Some(0));
}

#[test]
fn gradcheck_passes() {
    let out = hybdet(&["gradcheck", "--trials", "5"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn generate_train_eval_and_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = hybdet(&["gen-data", "--out", arg(&data), "--samples", "20", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_dir(data.join("images")).unwrap().count(), 20);

    let cfg = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg, "# tiny\ntrain.batch_size = 8\nformats = [\"csv\", \"markdown\"]\n").unwrap();

    let model_dir = tmp.path().join("model");
    let out = hybdet(&["train", "--config", arg(&cfg), "--data", arg(&data), "--out", arg(&model_dir), "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(model_dir.join("checkpoint.bin").exists());
    let log = std::fs::read_to_string(model_dir.join("trainlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let out = hybdet(&["eval", "--checkpoint", arg(&model_dir.join("checkpoint.bin")), "--data", arg(&data)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("map50"));

    let reports = tmp.path().join("reports");
    let out = hybdet(&["bench", "--config", arg(&cfg), "--data", arg(&data), "--out", arg(&reports), "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(reports.join("report.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("hybrid,"));
    assert!(csv.lines().nth(2).unwrap().starts_with("plain,"));
    assert!(reports.join("report.md").exists());
    for leg in ["hybrid", "plain"] {
        assert!(reports.join(format!("checkpoint-{leg}.bin")).exists());
        assert!(reports.join(format!("trainlog-{leg}.csv")).exists());
    }
}

#[test]
fn runtime_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.bin");
    let out = hybdet(&["eval", "--checkpoint", arg(&missing), "--data", arg(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "this line has no equals sign\n").unwrap();
    assert_eq!(hybdet(&["bench", "--config", arg(&bad)]).status.code(), Some(1));
}
