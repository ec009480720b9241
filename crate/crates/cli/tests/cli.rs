use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn geosched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geosched"))
        .args(args)
        .output()
        .unwrap()
}

fn geosched_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geosched"))
        .args(args)
        .env(key, value)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn bundled_scenario_runs_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let desk = scenario("desk.toml");
    let o = geosched(&[
        "simulate",
        "--config",
        desk.to_str().unwrap(),
        "--set",
        "horizon_hours=12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(&out);
    assert_eq!(r["controller"], "ga");
    assert_eq!(r["steps"].as_array().unwrap().len(), 12);
    let steps = fs::read_to_string(out.join("steps.csv")).unwrap();
    assert!(steps.starts_with("step,timestamp,energy_cost_usd,migrations,consolid,pending\n"));
    assert_eq!(steps.lines().count(), 13);
    assert!(out.join("timing.json").exists());
}

#[test]
fn overrides_reach_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = scenario("tiny.toml");
    let o = geosched(&[
        "simulate",
        "--config",
        tiny.to_str().unwrap(),
        "--set",
        "controller=bfd",
        "--seed",
        "11",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(dir.path());
    assert_eq!(r["controller"], "bfd");
    assert_eq!(r["seed"], 11);
    assert_eq!(r["config"]["controller"], "bfd");
    assert_eq!(r["migration_count"], 0);
}

#[test]
fn malformed_key_is_a_usage_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seed = 1\n\n[ga]\npopulation_size = 10\npopulaton = 3\n").unwrap();
    let o = geosched(&[
        "simulate",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("populaton"), "{err}");
    assert!(err.contains(":5"), "{err}");

    let tiny = scenario("tiny.toml");
    let o = geosched(&["simulate", "--config", tiny.to_str().unwrap(), "--set", "ga.nope=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"), "{}", stderr(&o));
}

#[test]
fn compare_needs_two_controllers() {
    let tiny = scenario("tiny.toml");
    let o = geosched(&["compare", "--config", tiny.to_str().unwrap(), "--controllers", "ga"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_writes_one_row_per_controller() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = scenario("tiny.toml");
    let o = geosched(&[
        "compare",
        "--config",
        tiny.to_str().unwrap(),
        "--controllers",
        "ga,bfd,brute",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("compare.csv"));
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(names, ["ga", "bfd", "brute"]);
    assert!(rows.iter().all(|r| &r[1] == "3"));
    for name in names {
        assert!(dir.path().join(name).join("report.json").exists());
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("total_energy_cost_usd") && stdout.contains("brute"));
    // the exhaustive controller plans at least as well as the others
    let planned = |i: usize| rows[i][6].parse::<f64>().unwrap();
    assert!(planned(2) <= planned(0) + 1e-6);
    assert!(planned(2) <= planned(1) + 1e-6);
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let tiny = scenario("tiny.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = geosched(&[
        "sweep",
        "--config",
        tiny.to_str().unwrap(),
        "--grid",
        "weights.migration=0,0.5,1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| &r[1] == "ok"));

    let o = geosched(&[
        "sweep",
        "--config",
        tiny.to_str().unwrap(),
        "--grid",
        "seed=1,2",
        "--grid",
        "forecast.sigma=0,0.2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    let points: Vec<(String, String)> = rows.iter().map(|r| (r[0].to_string(), r[1].to_string())).collect();
    let expected = [("1", "0"), ("1", "0.2"), ("2", "0"), ("2", "0.2")];
    assert_eq!(points, expected.map(|(a, b)| (a.to_string(), b.to_string())));

    let o = geosched(&[
        "sweep",
        "--config",
        tiny.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_traces_round_trips_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = scenario("tiny.toml");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let o = geosched(&[
            "gen-traces",
            "--config",
            tiny.to_str().unwrap(),
            "--n-locations",
            "4",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let set = geosched::geotraces::load_traces(&a).unwrap();
    assert_eq!(set.len(), 4);
    assert_eq!(set.index().unwrap().2, 8);

    // a scenario reading the generated file runs like the synthetic one
    let with_file = dir.path().join("file.toml");
    let text = fs::read_to_string(&tiny)
        .unwrap()
        .replace("[forecast]", "[traces]\nfile = \"a.csv\"\n\n[forecast]");
    fs::write(
        &with_file,
        text.replace("[\"east\", \"west\"]", "[\"loc0\", \"loc1\", \"loc2\", \"loc3\"]"),
    )
    .unwrap();
    let o = geosched(&[
        "simulate",
        "--config",
        with_file.to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = geosched(&["gen-traces", "--n-locations", "0", "--out", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let desk = scenario("desk.toml");
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(threads);
        let o = geosched_env(
            &[
                "simulate",
                "--config",
                desk.to_str().unwrap(),
                "--set",
                "horizon_hours=12",
                "--out",
                out.to_str().unwrap(),
            ],
            "GEOSCHED_THREADS",
            threads,
        );
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let o = geosched_env(
        &["simulate", "--config", desk.to_str().unwrap()],
        "GEOSCHED_THREADS",
        "zero",
    );
    assert_eq!(o.status.code(), Some(2));
}
