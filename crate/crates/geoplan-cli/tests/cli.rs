//! Binary-level checks: exit-code classes and artifact layout.

use std::process::Command;

fn geoplan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geoplan"))
}

#[test]
fn run_fixture_succeeds_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = geoplan()
        .args(["run", "--fixture", "pick-place", "--seed", "9"])
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("success: true"), "{stdout}");
    for artifact in ["report.json", "trajectory.txt", "episode_log.jsonl"] {
        assert!(dir.path().join(artifact).exists(), "missing {artifact}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["success"], serde_json::Value::Bool(true));
    assert_eq!(report["seed"], serde_json::json!(9));
}

#[test]
fn missing_scene_file_exits_2() {
    let out = geoplan()
        .args(["run", "--scene", "/nonexistent/scene.toml", "--fixture", "pick-place"])
        .args(["--out-dir", "/tmp/geoplan-test-unused"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_plan_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("bad.plan");
    std::fs::write(&plan, "- \"stage\" (stage 1)\n<\"wishful thinking\">\n").unwrap();
    let scene = dir.path().join("scene.toml");
    let fixture = geoplan::fixtures::fixture("pick-place").unwrap();
    std::fs::write(&scene, fixture.scene_toml).unwrap();
    let out = geoplan()
        .args(["run"])
        .arg("--scene")
        .arg(&scene)
        .arg("--plan")
        .arg(&plan)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exhausted_step_budget_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let out = geoplan()
        .args(["run", "--fixture", "stir", "--step-budget", "1"])
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // Artifacts are still written for inspection.
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn unreachable_backend_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = geoplan::fixtures::fixture("pick-place").unwrap();
    let scene = dir.path().join("scene.toml");
    std::fs::write(&scene, fixture.scene_toml).unwrap();
    let out = geoplan()
        .args(["run"])
        .arg("--scene")
        .arg(&scene)
        .args(["--backend", "http://127.0.0.1:9/v1/chat/completions"])
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn export_dataset_writes_records_and_plot_data_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("dataset");
    let out = geoplan()
        .args(["export-dataset", "--fixture", "pick-place", "--count", "2", "--seed", "5"])
        .args(["--workers", "2"])
        .arg("--out-dir")
        .arg(&dataset)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dataset.join("manifest.jsonl").exists());
    for episode in 0..2 {
        let ep = dataset.join(format!("ep_{episode:03}"));
        for artifact in ["scene.toml", "trajectory.txt", "result.json"] {
            assert!(ep.join(artifact).exists(), "missing {artifact}");
        }
    }

    // Empty dataset is valid and exits zero.
    let empty = dir.path().join("empty");
    let out = geoplan()
        .args(["export-dataset", "--fixture", "pick-place", "--count", "0"])
        .arg("--out-dir")
        .arg(&empty)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(empty.join("manifest.jsonl")).unwrap(), "");

    // A full run feeds plot-data; the emitted tables parse back.
    let run_dir = dir.path().join("run");
    let out = geoplan()
        .args(["run", "--fixture", "open-door", "--seed", "3"])
        .arg("--out-dir")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let plot_dir = dir.path().join("plot");
    let out = geoplan()
        .args(["plot-data", "--fixture", "open-door"])
        .arg("--run-dir")
        .arg(&run_dir)
        .arg("--out-dir")
        .arg(&plot_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for table in ["waypoints.csv", "stage_costs.csv", "centroids.csv"] {
        let text = std::fs::read_to_string(plot_dir.join(table)).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        let columns = header.split(',').count();
        let mut rows = 0;
        for line in lines {
            assert_eq!(line.split(',').count(), columns, "{table}: ragged row `{line}`");
            rows += 1;
        }
        assert!(rows > 0, "{table} is empty");
    }
}

#[test]
fn trace_costs_rows_match_waypoints_and_final_cost_is_satisfied() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = geoplan()
        .args(["trace-costs", "--fixture", "press-button", "--seed", "2"])
        .arg("--out")
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(!rows.is_empty());

    // Trace length equals the waypoint count of a matching run.
    let run_dir = dir.path().join("run");
    geoplan()
        .args(["run", "--fixture", "press-button", "--seed", "2"])
        .arg("--out-dir")
        .arg(&run_dir)
        .output()
        .unwrap();
    let trajectory = std::fs::read_to_string(run_dir.join("trajectory.txt")).unwrap();
    let waypoints = trajectory.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count();
    assert_eq!(rows.len(), waypoints);

    // The final sub-goal cost row is satisfied, and the final stage's
    // sub-goal cost decreases monotonically for this reach fixture.
    let parse_row = |row: &str| -> (usize, f64) {
        let fields: Vec<&str> = row.split(',').collect();
        (fields[1].parse().unwrap(), fields[3].parse().unwrap())
    };
    let (_, final_cost) = parse_row(rows.last().unwrap());
    assert!(final_cost <= 1e-2, "final sub-goal cost {final_cost}");
    let last_stage = parse_row(rows.last().unwrap()).0;
    let mut previous = f64::MAX;
    for row in &rows {
        let (stage, cost) = parse_row(row);
        if stage == last_stage {
            assert!(cost <= previous + 1e-9, "sub-goal cost rose from {previous} to {cost}");
            previous = cost;
        }
    }
}
