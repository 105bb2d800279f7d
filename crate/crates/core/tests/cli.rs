use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_multimodel"));
    cmd.env_remove("MODEL_BUNDLE");
    cmd
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run_with_stdin(mut cmd: Command, stdin: &[u8]) -> Output {
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn train_toy(out_dir: &Path) -> Output {
    bin()
        .args(["train", "--dataset"])
        .arg(fixture("toy20.csv"))
        .arg("--output-dir")
        .arg(out_dir)
        .output()
        .unwrap()
}

#[test]
fn train_is_byte_stable_on_the_toy_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = train_toy(d);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let bundle = std::fs::read(a.join("model.bundle.json")).unwrap();
    assert_eq!(bundle, std::fs::read(b.join("model.bundle.json")).unwrap());
    assert_eq!(std::fs::read_to_string(a.join("test.csv")).unwrap().lines().count(), 1 + 5);
}

#[test]
fn map_emits_one_line_per_record_and_model() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train_toy(dir.path()).status.success());
    let csv = std::fs::read_to_string(fixture("toy20.csv")).unwrap();
    let two: String = csv.lines().take(3).map(|l| format!("{l}\n")).collect();

    // bundle from the environment
    let mut cmd = bin();
    cmd.arg("map").env("MODEL_BUNDLE", dir.path().join("model.bundle.json"));
    let out = run_with_stdin(cmd, two.as_bytes());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let wire = String::from_utf8(out.stdout).unwrap();
    assert_eq!(wire.lines().count(), 2 * 25);

    // the flag wins over the environment
    let mut cmd = bin();
    cmd.arg("map")
        .arg("--bundle")
        .arg(dir.path().join("model.bundle.json"))
        .env("MODEL_BUNDLE", "/nonexistent/bundle.json");
    let out = run_with_stdin(cmd, two.as_bytes());
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), wire);

    // and the reducer accepts the sorted stream
    let mut lines: Vec<&str> = wire.lines().collect();
    lines.sort();
    let mut cmd = bin();
    cmd.arg("reduce").arg("--bundle").arg(dir.path().join("model.bundle.json"));
    let out = run_with_stdin(cmd, (lines.join("\n") + "\n").as_bytes());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
}

#[test]
fn reduce_reproduces_the_golden_fixture() {
    let mut cmd = bin();
    cmd.args(["reduce", "--expected-models", "2"]);
    let out = run_with_stdin(cmd, &std::fs::read(fixture("reduce_input.tsv")).unwrap());
    assert!(out.status.success());
    assert_eq!(out.stdout, std::fs::read(fixture("reduce_expected.csv")).unwrap());
}

#[test]
fn run_local_and_evaluate_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train_toy(dir.path()).status.success());
    let predictions = dir.path().join("pred.csv");
    let out = bin()
        .arg("run-local")
        .arg("--dataset")
        .arg(dir.path().join("test.csv"))
        .arg("--bundle")
        .arg(dir.path().join("model.bundle.json"))
        .arg("--output")
        .arg(&predictions)
        .args(["--threads", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&predictions).unwrap().lines().count(), 5);

    let json = dir.path().join("report.json");
    let out = bin()
        .arg("evaluate")
        .arg("--bundle")
        .arg(dir.path().join("model.bundle.json"))
        .arg("--test")
        .arg(dir.path().join("test.csv"))
        .arg("--json-out")
        .arg(&json)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Multi model, contention, dynamic weights"), "{text}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(report["test_size"], 5);
}

#[test]
fn synth_writes_a_parseable_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = (dir.path().join("r.csv"), dir.path().join("r.schema.json"));
    let out = bin()
        .args(["synth", "regional", "--n", "40", "--noise", "0.1", "--seed", "3", "--output"])
        .arg(&data)
        .arg("--schema-out")
        .arg(&schema)
        .output()
        .unwrap();
    assert!(out.status.success());
    let schema = multimodel::DatasetSchema::load(&schema).unwrap();
    let recs = multimodel::dataset::read_records(&data, &schema, true).unwrap();
    assert_eq!(recs.len(), 40);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin().args(["map", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_schema_fails_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--dataset"])
        .arg(fixture("toy20.csv"))
        .args(["--schema", "/nonexistent/schema.json", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("ERROR: ") && err.contains("/nonexistent/schema.json"), "{err}");
}
