use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qmpe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmpe"))
        .args(args)
        .current_dir(cwd)
        .env_remove("QMPE_OUT")
        .env_remove("QMPE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = "\
scenario = \"small\"
seed = 9
model.n_sites = 5
dephasing.t_coh = 0.016
state.thetas = [0.2, 0.5]
times.stop = 0.006
times.points = 7
subsystem.mode = \"connected\"
subsystem.n_a = 2
measure.n_u = 60
measure.n_m = 20
measure.times = [0.0, 0.003]
";

#[test]
fn simulate_writes_manifest_and_schema_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", SMALL);
    ok(&qmpe(
        &["--config", "c.toml", "--out", "a", "simulate"],
        dir.path(),
    ));
    ok(&qmpe(
        &["--config", "c.toml", "--out", "b", "simulate"],
        dir.path(),
    ));
    let a = std::fs::read(dir.path().join("a/oracle.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/oracle.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    let manifest = lines.next().unwrap();
    assert!(manifest.starts_with("# manifest {"));
    for key in ["\"version\":\"", "\"config_hash\":\"", "\"seed\":9"] {
        assert!(manifest.contains(key), "{manifest}");
    }
    assert_eq!(
        lines.next().unwrap(),
        "source,realization,t,theta,subsystem,EA,EA_err,FD,FD_err,n_excluded"
    );
    // 2 θ × (4 windows + mean) × 7 times
    assert_eq!(lines.count(), 2 * 5 * 7);
}

#[test]
fn measure_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", SMALL);
    ok(&qmpe(
        &["--config", "c.toml", "--out", "a", "measure"],
        dir.path(),
    ));
    ok(&qmpe(
        &[
            "--config",
            "c.toml",
            "--out",
            "b",
            "--threads",
            "3",
            "measure",
        ],
        dir.path(),
    ));
    ok(&qmpe(
        &[
            "--config", "c.toml", "--out", "c", "--seed", "10", "measure",
        ],
        dir.path(),
    ));
    let files: Vec<_> = std::fs::read_dir(dir.path().join("a/datasets"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(files.len(), 4);
    for f in &files {
        let a = std::fs::read(dir.path().join("a/datasets").join(f)).unwrap();
        assert_eq!(
            a,
            std::fs::read(dir.path().join("b/datasets").join(f)).unwrap()
        );
        assert_ne!(
            a,
            std::fs::read(dir.path().join("c/datasets").join(f)).unwrap()
        );
    }
}

#[test]
fn initial_budget_applies_at_time_zero() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        &format!("{SMALL}measure.initial_n_u = 7\nmeasure.initial_n_m = 3\n"),
    );
    ok(&qmpe(
        &["--config", "c.toml", "--out", ".", "measure"],
        dir.path(),
    ));
    let t0 = std::fs::read_to_string(dir.path().join("datasets/r00-theta00-t000.rmds")).unwrap();
    let t1 = std::fs::read_to_string(dir.path().join("datasets/r00-theta00-t001.rmds")).unwrap();
    assert_eq!(t0.lines().count(), 1 + 7);
    assert_eq!(t1.lines().count(), 1 + 60);
    assert!(t0.lines().nth(1).unwrap().matches('"').count() == 2 * 3 + 4);
}

#[test]
fn estimate_with_cross_check_and_report() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", SMALL);
    ok(&qmpe(
        &["--config", "c.toml", "--out", ".", "simulate"],
        dir.path(),
    ));
    ok(&qmpe(
        &["--config", "c.toml", "--out", ".", "measure"],
        dir.path(),
    ));
    let stdout = ok(&qmpe(
        &[
            "--config",
            "c.toml",
            "--out",
            ".",
            "estimate",
            "--de",
            "--oracle",
            "oracle.csv",
            "datasets",
        ],
        dir.path(),
    ));
    assert!(stdout.contains("cross-check: 20 points"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    assert!(csv.starts_with("# manifest {\"command\":\"estimate\""));
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 2 * 5 * 2);
    assert!(rows
        .iter()
        .all(|r| r.split(',').filter(|f| f.is_empty()).count() == 1));
    let report = ok(&qmpe(
        &["report", "--out", ".", "estimate.csv", "oracle.csv"],
        dir.path(),
    ));
    assert!(report.contains("estimate realization=- subsystem=mean"));
    assert!(report.contains("oracle realization=- subsystem=mean"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json.as_array().unwrap().len(), 10);
}

#[test]
fn unpolarized_tilt_gives_zero_asymmetry() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        &SMALL.replace("state.thetas = [0.2, 0.5]", "state.thetas = [0.0]"),
    );
    ok(&qmpe(
        &["--config", "c.toml", "--out", ".", "measure"],
        dir.path(),
    ));
    ok(&qmpe(
        &["--config", "c.toml", "--out", ".", "estimate", "datasets"],
        dir.path(),
    ));
    let csv = std::fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    for line in csv.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        let (ea, err): (f64, f64) = (f[5].parse().unwrap(), f[6].parse().unwrap());
        assert!(ea.abs() <= 3.0 * err + 1e-9, "{line}");
    }
}

#[test]
fn presets_give_the_expected_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    for (preset, expected) in [
        ("xy", "QMPE: crossing"),
        ("four-qubit", "QMPE: crossing"),
        ("dephasing", "no crossing within window"),
        ("disorder-strong", "no crossing within window"),
    ] {
        let out = dir.path().join(preset);
        let out = out.to_str().unwrap();
        ok(&qmpe(
            &["--preset", preset, "--out", out, "simulate"],
            dir.path(),
        ));
        let csv = format!("{out}/oracle.csv");
        let report = ok(&qmpe(
            &["--preset", preset, "--out", out, "report", &csv],
            dir.path(),
        ));
        let line = report
            .lines()
            .find(|l| {
                l.contains("subsystem=mean")
                    && (l.contains("realization=-") || l.contains("realization=mean"))
            })
            .unwrap();
        assert!(line.contains(expected), "{preset}: {line}");
    }
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_qmpe"))
        .args(["--config", "c.toml", "simulate"])
        .current_dir(dir.path())
        .env("QMPE_OUT", "from-env")
        .env("QMPE_THREADS", "2")
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("from-env/oracle.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.toml", SMALL);
    write(d, "bad.toml", &format!("{SMALL}model.spin = 1\n"));
    write(d, "range.toml", &SMALL.replace("[0.2, 0.5]", "[0.2, 1.5]"));

    let unknown_key = qmpe(&["--config", "bad.toml", "simulate"], d);
    assert_eq!(unknown_key.status.code(), Some(2));
    assert!(stderr(&unknown_key).contains("spin"));
    assert_eq!(
        qmpe(&["--config", "range.toml", "simulate"], d)
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        qmpe(&["--preset", "nope", "simulate"], d).status.code(),
        Some(2)
    );
    assert_eq!(qmpe(&["simulate"], d).status.code(), Some(2));
    assert_eq!(
        qmpe(&["--config", "missing.toml", "simulate"], d)
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        qmpe(&["--config", "c.toml", "estimate", "missing.rmds"], d)
            .status
            .code(),
        Some(3)
    );

    ok(&qmpe(&["--config", "c.toml", "--out", ".", "measure"], d));
    let path = d.join("datasets/r00-theta00-t001.rmds");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "{\"u\":[[1,0,0,0,0,0,0,0]],\"s\":[\"0\"]}";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let malformed = qmpe(
        &["--config", "c.toml", "--out", ".", "estimate", "datasets"],
        d,
    );
    assert_eq!(malformed.status.code(), Some(4));
    assert!(
        stderr(&malformed).contains("line 6"),
        "{}",
        stderr(&malformed)
    );

    write(d, "other.csv", "t,EA\n0,1\n");
    let schema = qmpe(&["report", "--out", ".", "other.csv"], d);
    assert_eq!(schema.status.code(), Some(4));
    assert!(stderr(&schema).contains("schema mismatch"));
}
