use std::path::Path;
use std::process::{Command, Output};

const MICRO: &str = "[schedule]\nextent = 2\nlambda = [1.0]\nmu = [1.0, 1.0]\nkappa = 1.0\n";

fn bdcat(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_bdcat"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn verify_theorem_on_the_micro_instance() {
    let dir = tempfile::tempdir().unwrap();
    let o = bdcat(dir.path(), MICRO, &["verify-theorem"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["result"]["max_rel_error"].as_f64().unwrap() <= 1e-12);
    assert_eq!(v["result"]["pass"], true);
}

#[test]
fn command_may_come_from_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = bdcat(dir.path(), &format!("command = \"solve-a\"\n{MICRO}"), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("\"command\": \"solve-a\""));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("format = \"json\"\n{MICRO}");
    let o = bdcat(dir.path(), &text, &["solve-b", "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.starts_with("# bdcat-csv v1\nindex,value\n"), "{out}");
    let b1: f64 = out
        .lines()
        .nth(3)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((b1 - 0.4).abs() <= 1e-12);
}

#[test]
fn out_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("b.json");
    let o = bdcat(
        dir.path(),
        MICRO,
        &["solve-b", "--out", target.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    assert!(std::fs::read_to_string(target)
        .unwrap()
        .contains("bdcat-json v1"));
}

#[test]
fn simulation_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--seed", "42", "--replicates", "5000"];
    let a = bdcat(dir.path(), MICRO, &args);
    let b = bdcat(dir.path(), MICRO, &args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let c = bdcat(
        dir.path(),
        MICRO,
        &["simulate", "--seed", "43", "--replicates", "5000"],
    );
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn event_log_has_one_line_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("paths.ndjson");
    let o = bdcat(
        dir.path(),
        MICRO,
        &[
            "simulate",
            "--replicates",
            "7",
            "--event-log",
            log.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(log).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0]["jumps"][0][1], "1");
}

#[test]
fn malformed_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = bdcat(dir.path(), "[schedule\nextent = 2\n", &["solve-b"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));

    let o = bdcat(
        dir.path(),
        &MICRO.replace("kappa = 1.0\n", ""),
        &["solve-b"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("schedule.kappa"));

    let o = bdcat(dir.path(), MICRO, &["solve-b", "--replicates", "many"]);
    assert_eq!(code(&o), 1);

    let o = Command::new(env!("CARGO_BIN_EXE_bdcat"))
        .args(["solve-b", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn unknown_keys_fail_unless_lenient() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{MICRO}extra = 1\n");
    let o = bdcat(dir.path(), &text, &["solve-b"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("schedule.extra"));
    let o = bdcat(dir.path(), &text, &["solve-b", "--lenient"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn unresolved_simulation_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("[simulation]\nhorizon = 1e-9\nreplicates = 10\n{MICRO}");
    let o = bdcat(dir.path(), &text, &["simulate"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn failed_identity_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = bdcat(dir.path(), MICRO, &["verify-duality", "--tol", "1e-300"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("identity check failed"));
    let o = bdcat(dir.path(), MICRO, &["verify-duality"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn help_exits_zero() {
    let o = Command::new(env!("CARGO_BIN_EXE_bdcat"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("verify-theorem"));
}

#[test]
fn unshifted_sums_change_the_moran_table() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[moran]\nn = 4\ns = 1.0\nu = 0.5\nnu0 = 0.5\n";
    let a = bdcat(dir.path(), text, &["moran", "--format", "csv"]);
    let b = bdcat(
        dir.path(),
        text,
        &["moran", "--format", "csv", "--unshifted-sums"],
    );
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn excursions_report_passes_on_a_small_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[schedule]\nextent = 5\nlambda = [1.2, 0.8, 1.5, 1.0]\n\
                mu = [1.0, 0.7, 1.3, 0.9, 1.1]\nkappa = 0.4\n\
                [simulation]\nseed = 7\nreplicates = 20000\n[options]\nlevel = 2\n";
    let o = bdcat(dir.path(), text, &["excursions"]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["checks"].as_array().unwrap().len(), 8);
}
