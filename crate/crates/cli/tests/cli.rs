use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_setfuse"))
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"))
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

const IDENTICAL: &str = r#"{
  "version": 1,
  "family": "bernoulli",
  "inputs": [
    {"alpha": 0.7, "localisation": {"gaussian": {"mean": [1, 2], "covariance": [[2, 0.5], [0.5, 1]]}}},
    {"alpha": 0.7, "localisation": {"gaussian": {"mean": [1, 2], "covariance": [[2, 0.5], [0.5, 1]]}}}
  ]
}"#;

#[test]
fn consistent_fusion_keeps_existence() {
    let out = TempDir::new().unwrap();
    let scenario = scenarios_dir().join("gauss_bernoulli.json");
    let o = run(&[
        "fuse",
        "--scenario",
        scenario.to_str().unwrap(),
        "--mode",
        "consistent",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = csv(&out.path().join("fuse.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(num(&rows[0][col(&h, "omega_card")]), 0.5);
    assert_eq!(num(&rows[0][col(&h, "expected_count")]), 0.8);
    assert_eq!(rows[0][col(&h, "inconsistent_flag")], "0");
}

#[test]
fn identical_inputs_reproduce_in_both_modes() {
    let dir = TempDir::new().unwrap();
    let scenario = write(dir.path(), "same.json", IDENTICAL);
    for mode in ["p2", "consistent"] {
        let out = dir.path().join(mode);
        let o = run(&[
            "fuse",
            "--scenario",
            scenario.to_str().unwrap(),
            "--mode",
            mode,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let (h, rows) = csv(&out.join("fuse.csv"));
        assert!((num(&rows[0][col(&h, "expected_count")]) - 0.7).abs() < 1e-12);
        assert!((num(&rows[0][col(&h, "z_omega")]) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn disjoint_supports_exit_with_solver_error() {
    let dir = TempDir::new().unwrap();
    let text = r#"{
      "version": 1,
      "family": "iid",
      "inputs": [
        {"cardinality": {"pmf": [1, 0, 0]}, "localisation": {"gaussian": {"mean": [0], "covariance": [[1]]}}},
        {"cardinality": {"pmf": [0, 0, 1]}, "localisation": {"gaussian": {"mean": [1], "covariance": [[1]]}}}
      ]
    }"#;
    let scenario = write(dir.path(), "disjoint.json", text);
    let o = run(&[
        "fuse",
        "--scenario",
        scenario.to_str().unwrap(),
        "--mode",
        "p2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("incompatible cardinality supports"));
}

#[test]
fn malformed_scenarios_exit_with_input_error() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("typo.json", IDENTICAL.replace("\"family\"", "\"familly\"")),
        ("version.json", IDENTICAL.replace("\"version\": 1", "\"version\": 3")),
        ("syntax.json", "{ not json".to_owned()),
        ("alpha.json", IDENTICAL.replace("0.7", "1.7")),
    ];
    for (name, text) in cases {
        let scenario = write(dir.path(), name, &text);
        let o = run(&[
            "fuse",
            "--scenario",
            scenario.to_str().unwrap(),
            "--mode",
            "consistent",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(2), "{name}");
    }
    let o = run(&["fuse", "--scenario", "/nonexistent.json", "--mode", "p2", "--out", "/tmp"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_point_sweep_with_equal_localisations() {
    let dir = TempDir::new().unwrap();
    let text = r#"{
      "version": 1,
      "family": "bernoulli",
      "inputs": [
        {"alpha": 0.8, "localisation": {"rotated": {"mean": [0, 0], "phi": 0.5, "major_variance": 1}}},
        {"alpha": 0.8, "localisation": {"rotated": {"mean": [0, 0], "phi": 0.5, "major_variance": 1}}}
      ],
      "sweep": {"kappa": [1, 1, 1], "omega": [0.5, 0.5, 1]}
    }"#;
    let scenario = write(dir.path(), "point.json", text);
    let out = dir.path().join("out");
    let o = run(&["sweep", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = csv(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(num(&rows[0][col(&h, "z_omega")]), 1.0);
    assert!((num(&rows[0][col(&h, "alpha_omega")]) - 0.8).abs() < 1e-15);
}

#[test]
fn sweep_is_deterministic_and_self_consistent() {
    let dir = TempDir::new().unwrap();
    let scenario = scenarios_dir().join("gauss_bernoulli.json");
    let mut outputs = Vec::new();
    for (k, jobs) in ["1", "3", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let o = run(&[
            "sweep",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "11",
            "--jobs",
            jobs,
        ]);
        assert!(o.status.success());
        outputs.push((fs::read(out.join("sweep.csv")).unwrap(), fs::read(out.join("optimal.csv")).unwrap()));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));

    let (h, rows) = csv(&dir.path().join("run0/sweep.csv"));
    assert_eq!(rows.len(), 79 * 101);
    let (kc, wc, zc, ac) = (col(&h, "kappa"), col(&h, "omega"), col(&h, "z_omega"), col(&h, "alpha_omega"));
    let (mc, lc, fc) = (col(&h, "min_input"), col(&h, "margin"), col(&h, "inconsistent_flag"));
    let mut prev: Option<(f64, f64)> = None;
    for r in &rows {
        let key = (num(&r[kc]), num(&r[wc]));
        if let Some(p) = prev {
            assert!(p.0 < key.0 || (p.0 == key.0 && p.1 < key.1), "rows sorted by (kappa, omega)");
        }
        prev = Some(key);
        let margin = num(&r[ac]) - num(&r[mc]);
        assert_eq!(margin, num(&r[lc]));
        assert_eq!(r[fc] == "1", margin < 0.0);
        if key.1 > 0.0 && key.1 < 1.0 {
            assert!(num(&r[zc]) < 1.0);
            assert!(num(&r[ac]) < 0.8);
        }
    }
}

#[test]
fn grid_localisations_from_files() {
    let dir = TempDir::new().unwrap();
    let n = 41usize;
    let h = 0.25f64;
    let grid = |mu: f64| {
        let values: Vec<f64> = (0..n)
            .map(|k| {
                let x = -5.0 + h * k as f64;
                (-(x - mu) * (x - mu) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
            })
            .collect();
        format!(r#"{{"origin": [-5.0], "cell_size": [{h}], "shape": [{n}], "values": {values:?}}}"#)
    };
    write(dir.path(), "a.json", &grid(0.0));
    write(dir.path(), "b.json", &grid(1.0));
    let text = r#"{
      "version": 1,
      "family": "poisson",
      "inputs": [
        {"lambda": 3, "localisation": {"grid": {"path": "a.json"}}},
        {"lambda": 5, "localisation": {"grid": {"path": "b.json"}}}
      ]
    }"#;
    let scenario = write(dir.path(), "grid.json", text);
    let out = dir.path().join("out");
    let o = run(&[
        "fuse",
        "--scenario",
        scenario.to_str().unwrap(),
        "--mode",
        "consistent",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = csv(&out.join("fuse.csv"));
    assert!((num(&rows[0][col(&h, "omega_loc")]) - 0.5).abs() < 1e-3);
    assert_eq!(rows[0][col(&h, "inconsistent_flag")], "0");
}

#[test]
fn reproduce_headlines() {
    let dir = TempDir::new().unwrap();
    let o = run(&["reproduce", "ex4", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let summary = fs::read_to_string(dir.path().join("ex4_summary.txt")).unwrap();
    assert!(summary.contains("omega_c*: 0.5182"), "{summary}");
    assert!(summary.contains("omega_c*: 0.509"), "{summary}");
    assert!(!summary.contains("FAIL"));

    let o = run(&["reproduce", "ex3", "--out", dir.path().to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS omega*(kappa=1): 0.5000"), "{stdout}");
}

#[test]
fn log_level_from_environment() {
    let dir = TempDir::new().unwrap();
    let scenario = scenarios_dir().join("binomial_iid.json");
    let o = bin()
        .env("SETFUSE_LOG", "debug")
        .args([
            "fuse",
            "--scenario",
            scenario.to_str().unwrap(),
            "--mode",
            "consistent",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("iteration 1"));
}
