use std::path::Path;
use std::process::{Command, Output};

fn famgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_famgp"))
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .expect("spawn famgp")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = famgp(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_columns(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let headers: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let mut cols = vec![Vec::new(); headers.len()];
    for line in lines {
        for (c, v) in cols.iter_mut().zip(line.split(',')) {
            c.push(v.parse().unwrap());
        }
    }
    (headers, cols)
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn generate_fit_predict_recovers_the_signal() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "2", "gen-data", "sinusoids", "--n", "5000"]);
    ok(d, &["fit", "--data", "sinusoids.csv", "--kernel", "chebyshev", "--train", "a,b", "--noise-variance", "5", "--max-iters", "3000"]);
    ok(d, &["predict", "--model", "model.json", "--data", "sinusoids_truth.csv", "--variance"]);
    let (headers, pred) = read_columns(&d.join("predictions.csv"));
    assert_eq!(headers, ["x", "mean_1", "var_1"]);
    let (_, truth) = read_columns(&d.join("sinusoids_truth.csv"));
    let e = rmse(&pred[1], &truth[1]);
    assert!(e < 5f64.sqrt(), "RMSE {e}");
    assert!(pred[2].iter().all(|&v| v >= 0.0));
    let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(trace.lines().count() > 2);
}

#[test]
fn zeroth_derivative_matches_plain_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "sinusoids", "--n", "400"]);
    ok(d, &["fit", "--data", "sinusoids.csv", "--kernel", "squared-exponential", "--train", "l_se", "--max-iters", "50", "--grad-tol", "1"]);
    ok(d, &["predict", "--model", "model.json", "--grid", "-5,5,101", "--output", "plain.csv"]);
    ok(d, &["predict", "--model", "model.json", "--grid", "-5,5,101", "--derivative", "0", "--output", "k0.csv"]);
    assert_eq!(std::fs::read(d.join("plain.csv")).unwrap(), std::fs::read(d.join("k0.csv")).unwrap());
}

#[test]
fn multi_output_data_fits_a_coregionalized_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "3", "gen-data", "correlated", "--n", "150"]);
    ok(d, &["fit", "--data", "correlated.csv", "--n", "40", "--max-iters", "300"]);
    ok(d, &["predict", "--model", "model.json", "--grid", "-1,1,21", "--derivative", "0,1"]);
    let (headers, _) = read_columns(&d.join("predictions.csv"));
    assert_eq!(headers, ["x", "mean_1", "mean_2", "d1_mean_1", "d1_mean_2"]);
}

#[test]
fn malformed_header_exits_one_and_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.csv"), "t,y1\n0,1\n").unwrap();
    let out = famgp(d, &["fit", "--data", "bad.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("column x"), "{err}");
    let out = famgp(d, &["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = famgp(d, &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn non_convergence_exits_two_and_still_writes_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "sinusoids", "--n", "500"]);
    let out = famgp(d, &["fit", "--data", "sinusoids.csv", "--kernel", "chebyshev", "--max-iters", "2", "--grad-tol", "1e-12"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(d.join("model.json").exists());
    ok(d, &["predict", "--model", "model.json", "--grid", "0,1,3"]);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"n": 123, "output": "from_config.csv"}"#).unwrap();
    ok(d, &["--config", "cfg.json", "gen-data", "sinusoids", "--n", "10"]);
    let text = std::fs::read_to_string(d.join("from_config.csv")).unwrap();
    assert_eq!(text.lines().count(), 124);
}

#[test]
fn bench_writes_json_and_csv_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["bench", "scaling", "--sizes", "100,200", "--n", "20", "--out-dir", "out"]);
    let csv = std::fs::read_to_string(d.join("out/scaling.csv")).unwrap();
    assert!(csv.starts_with("case,method,seed,N,M,n,iters,seconds"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/scaling.json")).unwrap()).unwrap();
    assert!(json["summary"]["slope/exact"].is_number());
}

#[test]
fn million_rows_fit_within_the_memory_bound() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "sinusoids", "--n", "1000000"]);
    ok(d, &["fit", "--data", "sinusoids.csv", "--kernel", "chebyshev", "--train", "a,b", "--noise-variance", "5", "--path", "fast"]);
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    assert_eq!(unsafe { libc::getrusage(libc::RUSAGE_CHILDREN, &mut usage) }, 0);
    let peak_bytes = usage.ru_maxrss as f64 * 1024.0;
    let (n_rows, order) = (1e6, 75.0);
    let bound = 8.0 * (n_rows * order + 64.0 * order * order);
    assert!(peak_bytes < bound, "peak RSS {peak_bytes:.3e} B over bound {bound:.3e} B");
}
