//! End-to-end tests of the config parser, the multi-seed runner, and the
//! emitted file formats.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;

use fedsim_cli::{content_hash, parse_config, run};

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_BYZANTINE: &str = r#"
seed = 5
rounds = 10
clients = 10

[dataset]
source = "synthetic_blobs"
classes = 2
features = 6
train_size = 300
test_size = 100

[model]
kind = "logistic_regression"

[training]
epochs = 2
batch_size = 10
learning_rate = 0.2

[aggregator]
rule = "afa"

[adversary]
kind = "byzantine"
sigma = 20.0
num_bad = 3
"#;

fn parse_summary(path: &Path) -> HashMap<String, String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn single_seed_single_round_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(
        dir.path(),
        "one.toml",
        r#"
rounds = 1
clients = 4

[dataset]
source = "synthetic_blobs"
train_size = 80
test_size = 40

[training]
epochs = 1
batch_size = 20

[aggregator]
rule = "fa"
"#,
    );
    let config = parse_config(&config_path).unwrap();
    let out = dir.path().join("out");
    let manifest = run(&config, &config_path, &[config.seed], &out).unwrap();

    let metrics = std::fs::read_to_string(out.join("metrics_seed0.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2, "header plus exactly one data row");
    assert_eq!(
        lines[0],
        "round,test_error,n_good,n_bad,newly_blocked,agg_time_s,train_time_s"
    );
    assert!(lines[1].starts_with("0,"));

    for entry in &manifest.files {
        assert!(entry.path.exists());
    }
    assert!(out.join("manifest.toml").exists());
    assert!(out.join("summary.txt").exists());
}

#[test]
fn byzantine_summary_reports_blocking_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), "byz.toml", SMALL_BYZANTINE);
    let config = parse_config(&config_path).unwrap();
    let out = dir.path().join("out");
    run(&config, &config_path, &[5, 6, 7], &out).unwrap();

    let summary = parse_summary(&out.join("summary.txt"));
    assert_eq!(summary["bad_total"], "9");
    assert_eq!(summary["aggregator"], "afa");
    let rate: f64 = summary["block_rate"].parse().unwrap();
    assert!(rate > 0.0, "no byzantine client got blocked");
    let round: f64 = summary["mean_block_round"].parse().unwrap();
    assert!(round >= 6.0, "blocking cannot beat the posterior minimum");
}

#[test]
fn reruns_produce_identical_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), "byz.toml", SMALL_BYZANTINE);
    let config = parse_config(&config_path).unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let manifest_a = run(&config, &config_path, &[5, 6], &out_a).unwrap();
    let manifest_b = run(&config, &config_path, &[5, 6], &out_b).unwrap();

    let names = |m: &fedsim_cli::RunManifest| -> Vec<(String, String)> {
        m.files
            .iter()
            .map(|f| {
                (
                    f.path.file_name().unwrap().to_string_lossy().into_owned(),
                    f.hash.clone(),
                )
            })
            .collect()
    };
    assert_eq!(names(&manifest_a), names(&manifest_b));
}

#[test]
fn summary_statistics_match_a_recomputation_from_the_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), "byz.toml", SMALL_BYZANTINE);
    let config = parse_config(&config_path).unwrap();
    let out = dir.path().join("out");
    let seeds = [5u64, 6, 7];
    run(&config, &config_path, &seeds, &out).unwrap();
    let summary = parse_summary(&out.join("summary.txt"));

    let mut finals = Vec::new();
    let mut messages = 0usize;
    let mut blocked_rounds = Vec::new();
    let mut blocked_bad = 0usize;
    let bad_ids = [7usize, 8, 9];
    for seed in seeds {
        let metrics = std::fs::read_to_string(out.join(format!("metrics_seed{seed}.csv"))).unwrap();
        let rows: Vec<&str> = metrics.lines().skip(1).collect();
        let last = rows.last().unwrap();
        finals.push(last.split(',').nth(1).unwrap().parse::<f64>().unwrap());
        for row in &rows {
            let cells: Vec<&str> = row.split(',').collect();
            let round: usize = cells[0].parse().unwrap();
            let n_good: usize = cells[2].parse().unwrap();
            let n_bad: usize = cells[3].parse().unwrap();
            messages += n_good + n_bad;
            if !cells[4].is_empty() {
                for id in cells[4].split(';') {
                    let id: usize = id.parse().unwrap();
                    if bad_ids.contains(&id) {
                        blocked_bad += 1;
                        blocked_rounds.push((round + 1) as f64);
                    }
                }
            }
        }
    }

    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let std = (finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();

    let summary_mean: f64 = summary["final_test_error_mean"].parse().unwrap();
    let summary_std: f64 = summary["final_test_error_std"].parse().unwrap();
    assert!((summary_mean - mean).abs() < 1e-9);
    assert!((summary_std - std).abs() < 1e-9);
    assert_eq!(summary["messages_total"], messages.to_string());
    assert_eq!(summary["bad_blocked_total"], blocked_bad.to_string());
    if !blocked_rounds.is_empty() {
        let recomputed = blocked_rounds.iter().sum::<f64>() / blocked_rounds.len() as f64;
        let reported: f64 = summary["mean_block_round"].parse().unwrap();
        assert!((reported - recomputed).abs() < 1e-9);
    }
}

#[test]
fn quality_csv_tracks_every_client_every_round() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), "byz.toml", SMALL_BYZANTINE);
    let config = parse_config(&config_path).unwrap();
    let out = dir.path().join("out");
    run(&config, &config_path, &[5], &out).unwrap();

    let quality = std::fs::read_to_string(out.join("quality_seed5.csv")).unwrap();
    let rows: Vec<&str> = quality.lines().skip(1).collect();
    assert_eq!(rows.len(), 10 * 10, "rounds x clients");
    // Blocked flags never revert.
    let mut blocked_seen: HashMap<usize, bool> = HashMap::new();
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        let client: usize = cells[1].parse().unwrap();
        let blocked: bool = cells[5].parse().unwrap();
        let before = blocked_seen.get(&client).copied().unwrap_or(false);
        assert!(!(before && !blocked), "client {client} unblocked");
        blocked_seen.insert(client, blocked);
    }
}

#[test]
fn time_columns_are_masked_in_metric_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let header = "round,test_error,n_good,n_bad,newly_blocked,agg_time_s,train_time_s\n";
    std::fs::write(&a, format!("{header}0,0.5,3,0,,0.000123,0.004567\n")).unwrap();
    std::fs::write(&b, format!("{header}0,0.5,3,0,,0.000999,0.008888\n")).unwrap();
    assert_eq!(
        content_hash(&a, true).unwrap(),
        content_hash(&b, true).unwrap()
    );
    assert_ne!(
        content_hash(&a, false).unwrap(),
        content_hash(&b, false).unwrap()
    );
}

#[test]
fn binary_reports_config_errors_with_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(
        dir.path(),
        "bad.toml",
        r#"
[aggregator]
rule = "afa"
[aggregator.afa]
xi0 = -1.0
"#,
    );
    let output = Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args(["run", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("aggregator.afa.xi0"), "{stderr}");
}

#[test]
fn binary_reports_runtime_errors_with_exit_code_two() {
    // Schema-valid config pointing at a data file that does not exist: the
    // failure happens when the experiment starts, not at parse time.
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(
        dir.path(),
        "missing-data.toml",
        r#"
[dataset]
source = "csv_file"
path = "does-not-exist.csv"
classes = 2
features = 2
"#,
    );
    let output = Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args(["run", config_path.to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("does-not-exist.csv"), "{stderr}");
}

#[test]
fn binary_runs_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), "byz.toml", SMALL_BYZANTINE);
    let out = dir.path().join("cli-out");
    let output = Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args([
            "run",
            config_path.to_str().unwrap(),
            "--seeds",
            "11,12",
            "--out",
            out.to_str().unwrap(),
            "--aggregator",
            "fa",
            "--rounds",
            "2",
        ])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let summary = parse_summary(&out.join("summary.txt"));
    assert_eq!(summary["aggregator"], "fa");
    assert_eq!(summary["rounds"], "2");
    assert!(out.join("metrics_seed11.csv").exists());
    assert!(out.join("metrics_seed12.csv").exists());
}
