//! End-to-end checks of the binary: exit codes, output layout, determinism,
//! and the monotone mask.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ordscale"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture_csv(dir: &Path) -> PathBuf {
    // Four correlated ordinal variables, 24 rows.
    let path = dir.join("input.csv");
    let mut text = String::from("b1,b2,e1,e2\n");
    let rows = [
        [1, 2, 1, 4],
        [2, 2, 2, 3],
        [3, 1, 3, 2],
        [4, 3, 4, 1],
        [1, 1, 2, 4],
        [2, 3, 1, 3],
        [3, 2, 3, 2],
        [4, 1, 4, 1],
        [2, 2, 2, 3],
        [3, 3, 3, 2],
        [1, 2, 1, 4],
        [4, 1, 4, 2],
        [2, 3, 2, 3],
        [3, 1, 3, 1],
        [1, 2, 2, 4],
        [4, 3, 4, 1],
        [2, 1, 1, 3],
        [3, 2, 3, 2],
        [1, 3, 2, 4],
        [4, 2, 4, 1],
        [2, 1, 3, 3],
        [3, 3, 1, 2],
        [1, 1, 4, 4],
        [4, 2, 2, 1],
    ];
    for row in rows {
        text.push_str(&format!("{},{},{},{}\n", row[0], row[1], row[2], row[3]));
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_input_exits_one_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let output = run(&[
        "fit",
        "--input",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--m",
        "1",
        "--lambda",
        "0.5",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(!out_dir.exists(), "no outputs on input error");
}

#[test]
fn single_fold_cv_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture_csv(dir.path());
    let output = run(&[
        "cv",
        "--input",
        input.to_str().unwrap(),
        "--m",
        "1",
        "--k-folds",
        "1",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn single_replication_simulate_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&[
        "simulate",
        "--n",
        "60",
        "--tau2",
        "0.2",
        "--lambdas",
        "0.1",
        "--reps",
        "1",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn non_convergence_exits_three_with_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture_csv(dir.path());
    let out_dir = dir.path().join("out");
    let output = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--m",
        "1",
        "--lambda",
        "0.01",
        "--epsilon",
        "1e-30",
        "--max-iter",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
    assert!(out_dir.join("quantifications.csv").exists());
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"converged\": false"));
}

#[test]
fn huge_lambda_gives_linear_scores() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture_csv(dir.path());
    let out_dir = dir.path().join("out");
    let output = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--m",
        "2",
        "--lambda",
        "1e8",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let scores = read_scores(&out_dir.join("quantifications.csv"));
    for (variable, theta) in scores {
        for w in theta.windows(3) {
            let d2 = w[2] - 2.0 * w[1] + w[0];
            assert!(
                d2.abs() <= 1e-3,
                "variable {variable}: second difference {d2} at lambda = 1e8"
            );
        }
    }
}

#[test]
fn monotone_mask_by_prefix_constrains_the_right_columns() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture_csv(dir.path());
    let out_dir = dir.path().join("out");
    let output = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--m",
        "2",
        "--lambda",
        "0.1",
        "--monotone",
        "b*",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let text = fs::read_to_string(out_dir.join("quantifications.csv")).unwrap();
    for line in text.lines().skip(2) {
        let cells: Vec<&str> = line.split(',').collect();
        let expected = cells[0].starts_with('b');
        assert_eq!(cells[3] == "true", expected, "row {line}");
    }
    for (variable, theta) in read_scores(&out_dir.join("quantifications.csv")) {
        if variable.starts_with('b') {
            for w in theta.windows(2) {
                assert!(w[1] - w[0] >= -1e-8, "variable {variable} not monotone");
            }
        }
    }
}

#[test]
fn headerless_input_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("raw.csv");
    let mut text = String::new();
    for i in 0..12 {
        text.push_str(&format!("{},{}\n", i % 3 + 1, (i + 1) % 4 + 1));
    }
    fs::write(&path, text).unwrap();
    let out_dir = dir.path().join("out");
    let output = run(&[
        "fit",
        "--input",
        path.to_str().unwrap(),
        "--no-header",
        "--m",
        "1",
        "--lambda",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let text = fs::read_to_string(out_dir.join("quantifications.csv")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("v1,")));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture_csv(dir.path());

    let fit = |out: &Path| {
        let output = run(&[
            "fit",
            "--input",
            input.to_str().unwrap(),
            "--m",
            "2",
            "--lambda",
            "0.5",
            "--seed",
            "11",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0));
    };
    let a = dir.path().join("fit_a");
    let b = dir.path().join("fit_b");
    fit(&a);
    fit(&b);
    for name in ["quantifications.csv", "eigenvalues.csv", "scaled.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }

    let cv = |out: &Path| {
        let output = run(&[
            "cv",
            "--input",
            input.to_str().unwrap(),
            "--m",
            "1",
            "--grid",
            "0.1,1,10",
            "--k-folds",
            "3",
            "--seed",
            "7",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0));
    };
    let a = dir.path().join("cv_a");
    let b = dir.path().join("cv_b");
    cv(&a);
    cv(&b);
    assert_eq!(
        fs::read(a.join("cv_curve.csv")).unwrap(),
        fs::read(b.join("cv_curve.csv")).unwrap()
    );
}

/// Parses quantifications.csv into per-variable score vectors (file order).
fn read_scores(path: &Path) -> Vec<(String, Vec<f64>)> {
    let text = fs::read_to_string(path).unwrap();
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for line in text.lines().skip(2) {
        let cells: Vec<&str> = line.split(',').collect();
        let variable = cells[0].to_string();
        let score: f64 = cells[2].parse().unwrap();
        match out.last_mut() {
            Some((name, scores)) if *name == variable => scores.push(score),
            _ => out.push((variable, vec![score])),
        }
    }
    out
}
