use std::fs;
use std::path::Path;

use gpclt::cli::{
    run_cli, ExperimentConfig, EXIT_COVARIANCE, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE, EXIT_VERIFY,
};
use gpclt::harness::{run_clt_experiment, run_refinement, variance_convergence_study, CltParams};
use gpclt::hermite::FunctionSpec;
use gpclt::IncrementVarianceSpec;
use serde_json::Value;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["gpclt"];
    argv.extend_from_slice(args);
    run_cli(argv)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn x2() -> FunctionSpec {
    FunctionSpec::EvenPoly {
        coeffs: vec![0.0, 1.0],
    }
}

#[test]
fn coeffs_of_abs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    assert_eq!(
        run(&[
            "coeffs",
            "--f",
            "abspow:1",
            "--max",
            "16",
            "--out",
            path_str(&out)
        ]),
        EXIT_OK
    );
    let v = read_json(&out);
    assert!((v["a_0"].as_f64().unwrap() - 0.7978845608028654).abs() < 1e-10);
    assert_eq!(v["k0"], 1);
    assert_eq!(v["coeffs"].as_array().unwrap().len(), 17);
}

#[test]
fn brownian_kernel_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.csv");
    let code = run(&[
        "kernel",
        "--sigma",
        "pow:1",
        "--a",
        "0",
        "--b",
        "1",
        "--k",
        "2",
        "--h",
        "0.1",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,h,J,S,J_err,S_err"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "2");
    assert!((row[2].parse::<f64>().unwrap() - 0.065).abs() < 1e-10);
}

#[test]
fn negative_control_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let base = [
        "clt",
        "--f",
        "poly:0,1",
        "--sigma",
        "pow:2",
        "--a",
        "0",
        "--b",
        "1",
        "--h",
        "0.015625",
        "--paths",
        "1000",
        "--seed",
        "7",
        "--out",
        path_str(&out),
    ];
    let mut normal = base.to_vec();
    normal.extend(["--expect", "normal"]);
    assert_eq!(run(&normal), EXIT_VERIFY);
    let v = read_json(&out);
    assert!(v["ks"]["p_value"].as_f64().unwrap() < 1e-6);
    assert_eq!(v["passed"], false);
    let mut nonnormal = base.to_vec();
    nonnormal.extend(["--expect", "nonnormal"]);
    assert_eq!(run(&nonnormal), EXIT_OK);
}

#[test]
fn error_exit_codes() {
    assert_eq!(run(&["variance", "--sigma", "pow:1"]), EXIT_USAGE);
    assert_eq!(
        run(&["coeffs", "--f", "abspow:1", "--bogus", "1"]),
        EXIT_USAGE
    );
    assert_eq!(
        run(&["kernel", "--sigma", "pow:2.5", "--h", "0.1"]),
        EXIT_DOMAIN
    );
    assert_eq!(
        run(&["clt", "--f", "herm:4", "--sigma", "pow:1.9", "--h", "0.015625", "--paths", "100"]),
        EXIT_DOMAIN
    );
    assert_eq!(
        run(&[
            "simulate",
            "--sigma",
            "pow:2",
            "--h",
            "0.0625",
            "--n-per-h",
            "4",
            "--method",
            "levinson",
            "--paths",
            "2",
        ]),
        EXIT_COVARIANCE
    );
}

#[test]
fn explore_runs_without_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.json");
    let code = run(&[
        "clt",
        "--f",
        "herm:4",
        "--sigma",
        "pow:1.9",
        "--h",
        "0.015625",
        "--paths",
        "200",
        "--explore",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(read_json(&out)["passed"].is_null());
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sigma: Some("pow:0.8".into()),
        f: Some("abspow:1.5".into()),
        h: Some(0.03125),
        n_paths: Some(300),
        seed: Some(11),
        ..Default::default()
    };
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let from_file = dir.path().join("a.json");
    let from_flags = dir.path().join("b.json");
    assert_eq!(
        run(&[
            "clt",
            "--config",
            path_str(&cfg_path),
            "--out",
            path_str(&from_file)
        ]),
        EXIT_OK
    );
    assert_eq!(
        run(&[
            "clt",
            "--sigma",
            "pow:0.8",
            "--f",
            "abspow:1.5",
            "--h",
            "0.03125",
            "--paths",
            "300",
            "--seed",
            "11",
            "--out",
            path_str(&from_flags),
        ]),
        EXIT_OK
    );
    assert_eq!(
        fs::read(&from_file).unwrap(),
        fs::read(&from_flags).unwrap()
    );
    // a flag overrides the file
    let overridden = dir.path().join("c.json");
    run(&[
        "clt",
        "--config",
        path_str(&cfg_path),
        "--seed",
        "12",
        "--out",
        path_str(&overridden),
    ]);
    assert_eq!(read_json(&overridden)["config"]["seed"], 12);
}

#[test]
fn outputs_are_identical_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for threads in ["1", "3", "1"] {
        let out = dir.path().join(format!("t{}.json", files.len()));
        let z = dir.path().join(format!("z{}.csv", files.len()));
        let hist = dir.path().join(format!("h{}.csv", files.len()));
        let sim = dir.path().join(format!("s{}.csv", files.len()));
        let code = run(&[
            "--threads",
            threads,
            "clt",
            "--f",
            "poly:0,1",
            "--sigma",
            "pow:1.2",
            "--h",
            "0.03125",
            "--paths",
            "256",
            "--seed",
            "4",
            "--out",
            path_str(&out),
            "--z-csv",
            path_str(&z),
            "--hist-csv",
            path_str(&hist),
        ]);
        assert_eq!(code, EXIT_OK);
        run(&[
            "--threads",
            threads,
            "simulate",
            "--sigma",
            "pow:0.6",
            "--h",
            "0.0625",
            "--paths",
            "5",
            "--seed",
            "3",
            "--out",
            path_str(&sim),
        ]);
        files.push([out, z, hist, sim].map(|p| fs::read(p).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
    let hist = String::from_utf8(files[0][2].clone()).unwrap();
    assert!(hist.starts_with("bin_left,bin_right,count,normal_density\n"));
    assert_eq!(hist.lines().count(), 65);
    let z = String::from_utf8(files[0][1].clone()).unwrap();
    assert!(z.starts_with("path_id,z\n"));
    assert_eq!(z.lines().count(), 257);
}

#[test]
fn brownian_variance_agreement_and_refinement() {
    let mut p = CltParams::new(
        x2(),
        IncrementVarianceSpec::power(1.0).unwrap(),
        1.0 / 32.0,
        21,
    );
    p.n_paths = 2000;
    let rep = run_clt_experiment(&p).unwrap();
    let kurt = rep.moments.excess_kurtosis + 3.0;
    let band = 6.0 / (p.n_paths as f64).sqrt() * kurt.sqrt();
    assert!(
        (rep.variance_check.ratio - 1.0).abs() < band,
        "{:?}",
        rep.variance_check
    );

    let refine = run_refinement(&p).unwrap();
    let (c, f) = (refine.coarse, refine.fine);
    assert!((c.mean - f.mean).abs() < f.mean_se);
    assert!((c.variance - f.variance).abs() < f.variance_se);
    assert!((c.skewness - f.skewness).abs() < f.skewness_se);
    assert!((c.excess_kurtosis - f.excess_kurtosis).abs() < f.excess_kurtosis_se);
}

#[test]
fn degenerate_process_always_rejects() {
    for seed in [1, 2, 3] {
        let mut p = CltParams::new(
            x2(),
            IncrementVarianceSpec::power(2.0).unwrap(),
            1.0 / 64.0,
            seed,
        );
        p.n_paths = 1000;
        assert!(run_clt_experiment(&p).unwrap().ks.p_value < 1e-6);
    }
}

fn grid(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|e| 2f64.powi(-e)).collect()
}

#[test]
fn study_ratios() {
    let rows = variance_convergence_study(
        &x2(),
        &IncrementVarianceSpec::power(1.0).unwrap(),
        0.0,
        1.0,
        &grid(8, 12),
        1e-10,
    )
    .unwrap();
    assert!((rows[0].ratio.unwrap() - 1.0).abs() < 1e-3);

    let rows = variance_convergence_study(
        &x2(),
        &IncrementVarianceSpec::power(1.5).unwrap(),
        0.0,
        1.0,
        &grid(8, 20),
        1e-10,
    )
    .unwrap();
    let gaps: Vec<f64> = rows
        .iter()
        .map(|r| (r.ratio.unwrap() - 1.0).abs())
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");

    let el = IncrementVarianceSpec::exp_log(0.5).unwrap();
    let rows = variance_convergence_study(&x2(), &el, 0.0, 0.125, &grid(8, 20), 1e-10).unwrap();
    let scaled: Vec<f64> = rows
        .iter()
        .map(|r| r.j[0] * (1.0 / r.h).ln() / r.h)
        .collect();
    let max = scaled.iter().cloned().fold(0.0, f64::max);
    let min = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min > 0.0 && max / min < 4.0, "{scaled:?}");
}
