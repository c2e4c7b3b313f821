//! Command-line behavior: exit codes, stream discipline, flag
//! overrides, cache and audit side effects, and artifact determinism
//! across reruns. All tests drive the installed binary against the
//! bundled fixture with `--data-dir` pointed at a temp directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn polyconf(config: Option<&Path>, data_dir: Option<&Path>, args: &[&str]) -> Output {
    let mut command = Command::new(env!("CARGO_BIN_EXE_polyconf"));
    if let Some(config) = config {
        command.arg("--config").arg(config);
    }
    if let Some(data_dir) = data_dir {
        command.arg("--data-dir").arg(data_dir);
    }
    command.args(args).output().unwrap()
}

fn run_ok(config: &Path, data_dir: &Path, args: &[&str]) -> Output {
    let output = polyconf(Some(config), Some(data_dir), args);
    assert!(
        output.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            files.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            );
        }
    }
    files
}

#[test]
fn run_all_reports_every_stage_and_reruns_are_byte_identical() {
    let config = fixture_dir().join("config.json");
    let data = tempfile::tempdir().unwrap();
    let output = run_ok(&config, data.path(), &["run-all"]);

    let stderr = stderr_of(&output);
    for line in [
        "stage build-dataset: 100/100 records",
        "stage generate: 150/150 records",
        "stage score: 900/900 records",
        "stage aggregate: 50/50 records",
        "stage refine: 150/150 records",
        "stage evaluate: 300/300 records",
        "stage report: 1/1 records",
    ] {
        assert!(stderr.contains(line), "missing {line:?} in:\n{stderr}");
    }
    // Report tables go to stdout, progress to stderr.
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("AUROC"), "table missing from stdout:\n{stdout}");
    assert!(!stdout.contains("stage "), "progress leaked into stdout");

    let first = snapshot(data.path());
    assert!(first.contains_key("report.json"));
    assert!(first.contains_key("review_sheet.csv"));

    // Full rerun over the same directory changes nothing.
    run_ok(&config, data.path(), &["run-all"]);
    assert_eq!(snapshot(data.path()), first);

    // Isolated stage reruns over existing artifacts change nothing.
    for stage in ["score", "aggregate", "refine", "evaluate", "report"] {
        run_ok(&config, data.path(), &[stage]);
    }
    assert_eq!(snapshot(data.path()), first);
}

#[test]
fn score_selection_writes_only_the_requested_file() {
    let config = fixture_dir().join("config.json");
    let data = tempfile::tempdir().unwrap();
    run_ok(&config, data.path(), &["build-dataset"]);
    run_ok(&config, data.path(), &["generate"]);

    let before = snapshot(data.path());
    let output = run_ok(
        &config,
        data.path(),
        &["score", "--method", "verbal-number", "--language", "fr"],
    );
    assert!(
        stderr_of(&output).contains("stage score: 50/50 records"),
        "{}",
        stderr_of(&output)
    );

    let after = snapshot(data.path());
    let new: Vec<&String> =
        after.keys().filter(|name| !before.contains_key(*name)).collect();
    assert_eq!(new, ["confidence_fr_verbal-number.jsonl"]);

    let lines = read_lines(&data.path().join("confidence_fr_verbal-number.jsonl"));
    assert_eq!(lines.len(), 50);
    for line in &lines {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(record["language"], "fr");
        assert_eq!(record["method"], "verbal-number");
        let score = record["score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&score));
    }
}

#[test]
fn aggregate_emits_one_cross_lingual_record_per_item() {
    let config = fixture_dir().join("config.json");
    let data = tempfile::tempdir().unwrap();
    run_ok(&config, data.path(), &["build-dataset"]);
    run_ok(&config, data.path(), &["generate"]);
    run_ok(&config, data.path(), &["score", "--method", "verbal-number"]);
    run_ok(&config, data.path(), &["aggregate", "--grouping", "shared3"]);

    let lines = read_lines(&data.path().join("aggregate_shared3.jsonl"));
    assert_eq!(lines.len(), 50);
    let mut seen = std::collections::BTreeSet::new();
    for line in &lines {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(record["grouping"], "shared3");
        assert_eq!(record["method"], "cross-lingual");
        assert!(seen.insert(record["item_id"].as_str().unwrap().to_string()));
    }

    let unknown = polyconf(
        Some(&config),
        Some(data.path()),
        &["aggregate", "--grouping", "nope"],
    );
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr_of(&unknown).starts_with("error: "));
}

#[test]
fn unscripted_items_leave_stages_incomplete_with_exit_one() {
    let config = fixture_dir().join("config.json");
    let data = tempfile::tempdir().unwrap();

    // Extend the bundled source with an item no mock rule covers.
    let mut source = std::fs::read_to_string(fixture_dir().join("source_en.jsonl")).unwrap();
    source.push_str(
        "{\"item_id\":\"q99\",\"language\":\"en\",\"question\":\"What is the capital of region R99?\",\"gold_answers\":[\"city R99\"]}\n",
    );
    let source_path = data.path().join("extended_source.jsonl");
    std::fs::write(&source_path, source).unwrap();

    let mut command = Command::new(env!("CARGO_BIN_EXE_polyconf"));
    let output = command
        .arg("--config")
        .arg(&config)
        .arg("--data-dir")
        .arg(data.path())
        .arg("--source")
        .arg(&source_path)
        .arg("build-dataset")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = stderr_of(&output);
    assert!(
        stderr.contains("stage build-dataset: 100/102 records"),
        "unexpected stderr:\n{stderr}"
    );
    assert!(
        stderr.contains("error: stage build-dataset incomplete (100/102 records)"),
        "unexpected stderr:\n{stderr}"
    );
}

#[test]
fn hard_failures_exit_two_with_one_error_line() {
    // No --config at all.
    let missing_flag = polyconf(None, None, &["generate"]);
    assert_eq!(missing_flag.status.code(), Some(2));
    let stderr = stderr_of(&missing_flag);
    assert_eq!(stderr.lines().count(), 1, "expected one line, got:\n{stderr}");
    assert!(stderr.starts_with("error: "));

    // Config path that does not exist.
    let missing_file = polyconf(Some(Path::new("/definitely/not/here.json")), None, &["run-all"]);
    assert_eq!(missing_file.status.code(), Some(2));
    let stderr = stderr_of(&missing_file);
    assert_eq!(stderr.lines().count(), 1, "expected one line, got:\n{stderr}");
    assert!(stderr.starts_with("error: "));

    // Scoring before any dataset exists names the missing artifact.
    let config = fixture_dir().join("config.json");
    let data = tempfile::tempdir().unwrap();
    let premature = polyconf(Some(&config), Some(data.path()), &["score"]);
    assert_eq!(premature.status.code(), Some(2));
    let stderr = stderr_of(&premature);
    assert_eq!(stderr.lines().count(), 1, "expected one line, got:\n{stderr}");
    assert!(
        stderr.contains("dataset_") && stderr.contains(".jsonl"),
        "error does not name the missing file: {stderr}"
    );
}

#[test]
fn policy_flag_overrides_the_configured_threshold() {
    let config = fixture_dir().join("config.json");
    let data = tempfile::tempdir().unwrap();
    run_ok(&config, data.path(), &["build-dataset"]);
    run_ok(&config, data.path(), &["generate"]);
    run_ok(&config, data.path(), &["score", "--method", "verbal-number"]);

    // fixed:0 refines nothing; the config's fixed:0.5 refines 30.
    let output = run_ok(&config, data.path(), &["--policy", "fixed:0", "refine"]);
    assert!(stderr_of(&output).contains("stage refine: 150/150 records"));
    let outcomes = read_lines(&data.path().join("refine_outcomes.jsonl"));
    assert_eq!(outcomes.len(), 150);
    for line in &outcomes {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(record["refined"], false, "fixed:0 refined {line}");
    }

    run_ok(&config, data.path(), &["refine"]);
    let refined = read_lines(&data.path().join("refine_outcomes.jsonl"))
        .iter()
        .filter(|line| {
            serde_json::from_str::<serde_json::Value>(line).unwrap()["refined"] == true
        })
        .count();
    assert_eq!(refined, 30);
}

#[test]
fn cache_and_audit_flags_leave_inspectable_traces() {
    let config = fixture_dir().join("config.json");
    let data = tempfile::tempdir().unwrap();
    let cache = data.path().join("cache");
    let audit = data.path().join("audit.jsonl");

    let mut command = Command::new(env!("CARGO_BIN_EXE_polyconf"));
    let output = command
        .arg("--config")
        .arg(&config)
        .arg("--data-dir")
        .arg(data.path())
        .arg("--cache-dir")
        .arg(&cache)
        .arg("--audit")
        .arg(&audit)
        .arg("build-dataset")
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr_of(&output));

    let entries = read_lines(&audit);
    assert!(!entries.is_empty());
    for line in &entries {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(entry["model_id"].is_string());
        assert!(entry["cache_key"].is_string());
        assert!(entry["from_cache"].is_boolean());
        assert!(entry.get("timestamp").is_none(), "wall-clock field in audit: {line}");
    }

    let purge = polyconf(
        Some(&config),
        None,
        &["--cache-dir", cache.to_str().unwrap(), "purge-cache"],
    );
    assert!(purge.status.success(), "{}", stderr_of(&purge));
    let stderr = stderr_of(&purge);
    let purged: usize = stderr
        .trim()
        .strip_prefix("purged ")
        .and_then(|rest| rest.strip_suffix(" cached responses"))
        .unwrap_or_else(|| panic!("unexpected purge output: {stderr}"))
        .parse()
        .unwrap();
    assert_eq!(purged, entries.len(), "one cache entry per audited request");

    let nothing = polyconf(Some(&config), None, &["purge-cache"]);
    assert_eq!(nothing.status.code(), Some(2));
    assert!(stderr_of(&nothing).contains("no cache directory configured"));
}

#[test]
fn regenerated_fixture_matches_the_bundled_copy() {
    let out = tempfile::tempdir().unwrap();
    let output = polyconf(None, None, &["make-fixture", "--out", out.path().to_str().unwrap()]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    for name in ["config.json", "mock_script.json", "source_en.jsonl"] {
        let bundled = std::fs::read(fixture_dir().join(name)).unwrap();
        let regenerated = std::fs::read(out.path().join(name)).unwrap();
        assert_eq!(regenerated, bundled, "{name} drifted from the bundled fixture");
    }
}

#[test]
fn report_formats_cover_table_json_and_csv() {
    let config = fixture_dir().join("config.json");
    let data = tempfile::tempdir().unwrap();
    run_ok(&config, data.path(), &["run-all"]);

    let table = run_ok(&config, data.path(), &["report"]);
    let text = String::from_utf8_lossy(&table.stdout).into_owned();
    assert!(text.contains("AUROC") && text.contains("en"), "{text}");

    let json = run_ok(&config, data.path(), &["report", "--format", "json"]);
    let value: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(value["languages"].as_array().unwrap().len(), 3);

    let csv = run_ok(&config, data.path(), &["report", "--format", "csv"]);
    let body = String::from_utf8_lossy(&csv.stdout).into_owned();
    assert!(body.lines().next().unwrap().contains("language"), "{body}");
}
