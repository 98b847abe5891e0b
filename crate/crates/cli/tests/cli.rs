use std::process::{Command, Output};

use serde_json::Value;

fn spinlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinlab"))
        .args(args)
        .env_remove("SPINLAB_WORKERS")
        .output()
        .expect("spawn spinlab")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad json ({e}): {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&spinlab(&["--help"])), 0);
    assert_eq!(code(&spinlab(&["spectrum", "--help"])), 0);
}

#[test]
fn bad_arguments_exit_one() {
    for args in [
        &["frobnicate"][..],
        &["spectrum", "--spin", "0.25,0"],
        &["spectrum", "--factor", "const:-1"],
        &["spectrum", "--factor", "family:1,0.05", "--grid", "32"],
        &["spectrum", "--grid", "0"],
        &["integral", "--n", "1"],
        &["sweep", "--eps", "0.4,,0.2"],
        &["expansion", "--chart", "torus:3"],
        &["identities", "--n", "0"],
    ] {
        let out = spinlab(args);
        assert_eq!(code(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn spectrum_flat_twisted() {
    let out = spinlab(&["spectrum", "--spin", "0.5,0", "--factor", "const:1", "--grid", "32", "--k", "4"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let r = &v["report"];
    assert!((r["lambda1_plus"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!((r["mu1"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(r["kernel_dim"].as_u64(), Some(0));
}

#[test]
fn spectrum_non_convergence_exits_two() {
    let out = spinlab(&["spectrum", "--grid", "32", "--max-iter", "1", "--tol", "1e-14"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identities_report() {
    // The literal norm identity is off by a constant factor, so the run
    // reports failure while the gradient and Dirac identities hold.
    let out = spinlab(&["identities", "--n", "2", "--samples", "20"]);
    assert_eq!(code(&out), 1);
    let v = json(&out);
    let r = &v["deviation"];
    assert!(r["gradient"].as_f64().unwrap() < 1e-10);
    assert!(r["dirac"].as_f64().unwrap() < 1e-10);
    assert!((v["norm_constant"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-10);
}

#[test]
fn integral_matches_sphere_volume() {
    let out = spinlab(&["integral", "--n", "3"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert!(v["abs_error"].as_f64().unwrap() < 1e-9);
    let out = spinlab(&["integral", "--n", "2", "--delta", "0.3"]);
    assert_eq!(code(&out), 0);
    assert!(json(&out)["kappa"].is_object());
}

#[test]
fn functional_three_dimensional() {
    let out = spinlab(&["functional", "--n", "3", "--eps", "0.01"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let j = v["j_flat"]["value"].as_f64().unwrap();
    let s = v["sphere_constant"].as_f64().unwrap();
    assert!(j > s && (j - s) / s < 0.05, "{j} vs {s}");
}

#[test]
fn sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = spinlab(&[
        "sweep",
        "--grid",
        "64",
        "--eps",
        "0.8,0.5",
        "--workers",
        "2",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, spinlab_cli::commands::CSV_COLUMNS);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "0.8");
    assert_eq!(&rows[1][0], "0.5");
    assert_eq!(&rows[0][3], "0,0");
    for r in &rows {
        let lam: f64 = r[4].parse().unwrap();
        let vol: f64 = r[6].parse().unwrap();
        let prod: f64 = r[7].parse().unwrap();
        assert!((lam * lam * vol - prod).abs() < 1e-9 * prod);
    }
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# flat twisted\ngrid = 32\nspin = 0.5,0\nfactor = const:2\n").unwrap();
    let c = cfg.to_str().unwrap();

    let v = json(&spinlab(&["spectrum", "--config", c]));
    assert_eq!(v["inputs"]["grid"].as_u64(), Some(32));
    assert!((v["report"]["lambda1_plus"].as_f64().unwrap() - 0.25).abs() < 1e-9);

    let v = json(&spinlab(&["spectrum", "--config", c, "--factor", "const:1"]));
    assert!((v["report"]["lambda1_plus"].as_f64().unwrap() - 0.5).abs() < 1e-9);

    std::fs::write(&cfg, "grid = 32\nbogus = 1\n").unwrap();
    let out = spinlab(&["spectrum", "--config", c]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    std::fs::write(&cfg, "grid 32\n").unwrap();
    assert_eq!(code(&spinlab(&["spectrum", "--config", c])), 1);
}

#[test]
fn expansion_sphere_and_chart_file() {
    let out = spinlab(&["expansion", "--chart", "sphere:3"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_eq!(v["expansion"]["w_vanishes"].as_bool(), Some(true));
    assert!((v["origin"]["scal"].as_f64().unwrap() - 6.0).abs() < 1e-6);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chart.poly");
    std::fs::write(&path, "n 2\n1 1 0 1.0\n2 2 0 1.0\n").unwrap();
    let out = spinlab(&["expansion", "--chart-file", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["expansion"]["exact_zero"].as_bool(), Some(true));

    std::fs::write(&path, "n 9\n").unwrap();
    assert_eq!(code(&spinlab(&["expansion", "--chart-file", path.to_str().unwrap()])), 1);
}

#[test]
fn workers_flag_validated() {
    assert_eq!(code(&spinlab(&["sweep", "--workers", "0", "--grid", "32", "--eps", "0.8"])), 1);
}
