use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pssim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pssim"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const SMALL_SYNC: &str = r#"
protocol = "sync"
workers_n = 3
backups_b = 1
batch_b = 8
max_epochs = 3.0

[data]
n_train = 200
n_test = 100

[latency]
kind = "exponential"
rate = 1.0
"#;

#[test]
fn train_writes_run_files() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.toml", SMALL_SYNC);
    let out = pssim(dir.path(), &["train", "--config", "cfg.toml", "--out", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "metrics.csv", "trace.jsonl", "summary.json"] {
        assert!(dir.path().join("run").join(f).is_file(), "missing {f}");
    }
    let summary = fs::read_to_string(dir.path().join("run/summary.json")).unwrap();
    assert!(summary.contains("\"status\": \"completed\""));

    let v = pssim(dir.path(), &["validate-trace", "--trace", "run/trace.jsonl", "--aggregate", "3"]);
    assert_eq!(code(&v), 0, "{}", String::from_utf8_lossy(&v.stdout));

    // Echoed config reruns to the same metrics.
    let again = pssim(dir.path(), &["train", "--config", "run/config.toml", "--out", "run2"]);
    assert_eq!(code(&again), 0);
    assert_eq!(
        fs::read(dir.path().join("run/metrics.csv")).unwrap(),
        fs::read(dir.path().join("run2/metrics.csv")).unwrap()
    );
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "unknown.toml", "workers_n = 2\nbogus_key = 1\n");
    write(dir.path(), "invalid.toml", "workers_n = 0\n");
    for f in ["unknown.toml", "invalid.toml"] {
        let out = pssim(dir.path(), &["train", "--config", f]);
        assert_eq!(code(&out), 2, "{f}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn diverged_run_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cfg.toml",
        r#"
protocol = "serial"
batch_b = 8
max_epochs = 500.0
[model]
kind = "linear-regression"
[data]
task = "regression"
n_train = 100
n_test = 50
[schedule]
gamma0 = 50.0
"#,
    );
    let out = pssim(dir.path(), &["train", "--config", "cfg.toml"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("diverged"));
}

#[test]
fn corrupted_trace_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.toml", SMALL_SYNC);
    assert_eq!(code(&pssim(dir.path(), &["train", "--config", "cfg.toml", "--out", "run"])), 0);
    let text = fs::read_to_string(dir.path().join("run/trace.jsonl")).unwrap();
    // Drop the first apply: the next iteration's reads then see a stale counter.
    let mut removed = false;
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| {
            if !removed && l.contains("\"kind\":\"apply\"") {
                removed = true;
                false
            } else {
                true
            }
        })
        .collect();
    assert!(removed);
    write(dir.path(), "bad.jsonl", &(kept.join("\n") + "\n"));
    let out = pssim(dir.path(), &["validate-trace", "--trace", "bad.jsonl"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("violation"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.toml", SMALL_SYNC);
    let out = pssim(
        dir.path(),
        &["sweep", "--config", "cfg.toml", "--param", "schedule.gamma0", "--values", "0.01,0.1", "--out", "sw"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("schedule.gamma0,restart,seed,status"));
    assert_eq!(lines.len(), 3);
}

#[test]
fn staleness_report_from_async_run() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cfg.toml",
        r#"
protocol = "async"
workers_n = 4
max_epochs = 2.0
[data]
n_train = 200
n_test = 50
"#,
    );
    let out = pssim(dir.path(), &["staleness-report", "--config", "cfg.toml", "--out", "st"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("st/staleness.csv")).unwrap();
    assert!(csv.starts_with("layer,min,mean,median,max,std_dev,count"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn straggler_and_best_config_reports() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cfg.toml",
        r#"
protocol = "sync"
workers_n = 4
backups_b = 1
max_epochs = 5.0
record_trace = false
[model]
kind = "timing-only"
[data]
n_train = 80
n_test = 10
[latency]
kind = "exponential"
"#,
    );
    let out = pssim(
        dir.path(),
        &["straggler-report", "--config", "cfg.toml", "--ks", "1,5", "--curve", "2:100,5:50", "--out", "sr"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["arrivals.csv", "arrival_cdf.csv", "best_config.csv"] {
        assert!(dir.path().join("sr").join(f).is_file(), "missing {f}");
    }
    let arrivals = fs::read_to_string(dir.path().join("sr/arrivals.csv")).unwrap();
    assert_eq!(arrivals.lines().count(), 3);

    let out = pssim(
        dir.path(),
        &["best-config", "--config", "cfg.toml", "--total", "5", "--curve", "2:100,5:50", "--mc-iterations", "2000", "--out", "bc"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("bc/best_config.csv")).unwrap();
    assert!(csv.starts_with("N,b,iterations,mean_iter_time,est_total_time"));
    assert_eq!(csv.lines().count(), 5);
    assert!(String::from_utf8_lossy(&out.stdout).contains("best split of 5"));
}
