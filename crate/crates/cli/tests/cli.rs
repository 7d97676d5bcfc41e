use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blockrmt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockrmt"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn l1_of(report: &Path) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    v["l1"].as_f64().unwrap()
}

#[test]
fn solve_simulate_compare_round_trip_on_every_preset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for preset in [
        "semicircle",
        "toeplitz3",
        "toeplitz4",
        "toeplitz5",
        "mp:1",
        "mp:2",
        "mp:1/3",
        "mimo:4,4,1",
        "mimo:2,2,2",
        "mimorect:2,2",
    ] {
        let tag = preset.replace([':', ',', '/'], "_");
        let density = format!("{tag}.csv");
        let hist = format!("{tag}_hist.csv");
        let report = format!("{tag}_report.json");
        let out = blockrmt(
            &["solve", "--preset", preset, "--points", "600", "--out", &density],
            d,
        );
        assert_eq!(code(&out), 0, "{preset}: {}", stderr(&out));
        let out = blockrmt(
            &[
                "simulate", "--preset", preset, "--N", "100", "--reps", "100", "--seed", "11",
                "--out", &hist,
            ],
            d,
        );
        assert_eq!(code(&out), 0, "{preset}: {}", stderr(&out));
        assert!(d.join(format!("{tag}_hist.meta.json")).exists());
        let out = blockrmt(
            &["compare", "--density", &density, "--hist", &hist, "--out", &report],
            d,
        );
        assert_eq!(code(&out), 0, "{preset}: {}", stderr(&out));
        let l1 = l1_of(&d.join(&report));
        assert!(l1 <= 0.05, "{preset}: l1 {l1}");
    }
}

#[test]
fn outputs_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (run, threads) in [("a", "1"), ("b", "2")] {
        let out = blockrmt(
            &[
                "--threads", threads, "solve", "--preset", "toeplitz3", "--points", "300", "--out",
                &format!("{run}.csv"), "--gnuplot", &format!("{run}.gp"),
            ],
            d,
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let out = blockrmt(
            &[
                "--threads", threads, "simulate", "--preset", "mimo:2,2,2", "--N", "20", "--reps",
                "8", "--seed", "5", "--out", &format!("{run}_hist.csv"),
            ],
            d,
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for (a, b) in [
        ("a.csv", "b.csv"),
        ("a.report.json", "b.report.json"),
        ("a_hist.csv", "b_hist.csv"),
    ] {
        assert_eq!(fs::read(d.join(a)).unwrap(), fs::read(d.join(b)).unwrap(), "{a}");
    }
    let gp = fs::read_to_string(d.join("a.gp")).unwrap();
    assert!(gp.contains("plot 'a.csv'"));
}

#[test]
fn moments_of_the_unit_ratio_wishart_law_are_catalan() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockrmt(&["moments", "--preset", "mp:1", "--max-order", "4"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let catalan = [1.0, 1.0, 2.0, 5.0, 14.0];
    assert_eq!(values.len(), catalan.len());
    for (v, c) in values.iter().zip(catalan) {
        assert!((v - c).abs() <= 1e-12, "{v} vs {c}");
    }
}

#[test]
fn finite_n_moments_of_the_scalar_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockrmt(
        &["moments", "--preset", "semicircle", "--max-order", "6", "--finite-n", "10"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|p| p.parse().unwrap()).collect())
        .collect();
    assert!((rows[4][2] - 2.01).abs() < 1e-12);
    assert!((rows[6][2] - 5.1).abs() < 1e-12);
    assert!((rows[6][1] - 5.0).abs() < 1e-12);
}

#[test]
fn moments_from_a_spec_file_match_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = r#"{
      "kind": "square", "d": 3,
      "block_names": {"A": {"selfadjoint": true}, "B": {"selfadjoint": true}, "C": {"selfadjoint": true}},
      "grid": [[{"name": "A"}, {"name": "B"}, {"name": "C"}],
               [{"name": "B"}, {"name": "A"}, {"name": "B"}],
               [{"name": "C"}, {"name": "B"}, {"name": "A"}]]
    }"#;
    fs::write(d.join("t3.json"), spec).unwrap();
    let from_file = blockrmt(&["moments", "--spec", "t3.json", "--max-order", "8"], d);
    let from_preset = blockrmt(&["moments", "--preset", "toeplitz3", "--max-order", "8"], d);
    assert_eq!(code(&from_file), 0, "{}", stderr(&from_file));
    assert_eq!(from_file.stdout, from_preset.stdout);
    let text = String::from_utf8(from_file.stdout).unwrap();
    let m2: f64 = text.lines().nth(3).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((m2 - 1.0).abs() < 1e-12, "{m2}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.json"), "{}").unwrap();
    let out = blockrmt(&["solve", "--spec", "empty.json"], d);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing field `kind`"), "{}", stderr(&out));
    assert!(!d.join("density.csv").exists());

    let asym = r#"{"kind":"square","d":1,"block_names":{"B":{"selfadjoint":false}},"grid":[[{"name":"B"}]]}"#;
    fs::write(d.join("asym.json"), asym).unwrap();
    assert_eq!(code(&blockrmt(&["solve", "--spec", "asym.json"], d)), 2);

    assert_eq!(code(&blockrmt(&["solve"], d)), 1);
    assert_eq!(code(&blockrmt(&["frobnicate"], d)), 1);
    assert_eq!(code(&blockrmt(&["solve", "--preset", "toeplitz3", "--points", "many"], d)), 1);
    assert_eq!(code(&blockrmt(&["solve", "--preset", "nope"], d)), 1);
    assert_eq!(code(&blockrmt(&["solve", "--spec", "missing.json"], d)), 1);
    assert_eq!(code(&blockrmt(&["--help"], d)), 0);
}

#[test]
fn non_convergence_writes_a_partial_curve_and_a_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // a subnormal eps puts the target height below what the descent can represent
    let out = blockrmt(
        &[
            "solve", "--preset", "semicircle", "--xmin", "-1", "--xmax", "1", "--points", "5",
            "--epsilon", "1e-320", "--out", "d.csv",
        ],
        d,
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(d.join("d.csv").exists());
    let sidecar = fs::read_to_string(d.join("d.failures.csv")).unwrap();
    assert!(sidecar.starts_with("re,im,reason\n"));
}
