use std::path::Path;
use std::process::{Command, Output};

use percdetect::experiment::{add_noise, make_square_object};
use percdetect::io::{self, ImageFormat};
use percdetect::noise::NoiseModel;
use serde_json::Value;

fn percdetect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_percdetect"))
        .args(args)
        .env_remove("PD_PC")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_noisy_square(dir: &Path) -> String {
    let truth = make_square_object(64, 64, 30, (10, 20)).unwrap();
    let noisy = add_noise(&truth, &NoiseModel::gaussian(1.0).unwrap(), 4);
    let path = dir.join("noisy.csv");
    io::write_image(&noisy, &path, ImageFormat::FloatCsv).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn detect_with_fixed_phi() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_noisy_square(dir.path());
    let v = json(&percdetect(&["detect", "--input", &input, "--theta", "0.5", "--phi", "200", "--sigma", "1.0"]));
    assert_eq!(v["detected"], true);
    assert_eq!(v["phi_used"], 200);
    assert_eq!(v["witness"]["size"], 200);

    let v = json(&percdetect(&["detect", "--input", &input, "--theta", "0.5", "--phi", "4096", "--sigma", "1.0"]));
    assert_eq!(v["detected"], false);
    assert!(v.get("witness").is_none());
}

#[test]
fn detect_with_calibration_and_auto_theta() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_noisy_square(dir.path());
    let out_path = dir.path().join("report.json");
    let clusters = dir.path().join("clusters.csv");
    let out = percdetect(&[
        "detect", "--input", &input, "--auto-theta", "sign", "--calibrate", "--alpha", "0.05",
        "--sigma", "1.0", "--seed", "0x2a", "--replicates", "200", "--output",
        out_path.to_str().unwrap(), "--clusters-csv", clusters.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["detected"], true);
    let csv = std::fs::read_to_string(&clusters).unwrap();
    assert!(csv.starts_with("label,size,min_row,min_col,max_row,max_col\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_noisy_square(dir.path());

    let missing = percdetect(&["detect", "--input", "/no/such/file.pgm", "--theta", "0.5", "--phi", "3", "--sigma", "1"]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_phi = percdetect(&["detect", "--input", &input, "--theta", "0.5", "--phi", "0", "--sigma", "1"]);
    assert_eq!(bad_phi.status.code(), Some(2));

    let no_args = percdetect(&["calibrate"]);
    assert_eq!(no_args.status.code(), Some(2));

    // theta far outside the feasible interval with a calibrated phi
    let infeasible = percdetect(&[
        "detect", "--input", &input, "--theta", "3.0", "--calibrate", "--sigma", "1.0", "--replicates", "10",
    ]);
    assert_eq!(infeasible.status.code(), Some(3));

    let table = dir.path().join("table.csv");
    std::fs::write(&table, "value,cdf\n-0.5,0.5\n0.5,1.0\n").unwrap();
    let noise = format!("table:{}", table.display());
    let out = Command::new(env!("CARGO_BIN_EXE_percdetect"))
        .args(["optimize-theta", "--noise", &noise, "--objective", "sign"])
        .env("PD_PC", "0.5")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn optimize_theta_report() {
    let v = json(&percdetect(&["optimize-theta", "--sigma", "1.8", "--pc", "0.592746", "--objective", "sign", "--grid-step", "0.001"]));
    assert!((v["theta"].as_f64().unwrap() - 0.077_694_006).abs() < 1e-6);
    let lo = v["interval"][0].as_f64().unwrap();
    let hi = v["interval"][1].as_f64().unwrap();
    assert!((hi - lo - 1.0).abs() < 1e-9);
    assert!(v["p_out"].as_f64().unwrap() < 0.592746);

    let out = Command::new(env!("CARGO_BIN_EXE_percdetect"))
        .args(["optimize-theta", "--sigma", "1.8", "--objective", "sign"])
        .env("PD_PC", "0.58")
        .output()
        .unwrap();
    assert_eq!(json(&out)["p_c"], 0.58);
}

#[test]
fn calibrate_is_reproducible_and_cached() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    std::fs::create_dir(&cache).unwrap();
    let args = |out: &str| {
        vec![
            "calibrate".to_owned(), "--width".into(), "40".into(), "--height".into(), "30".into(),
            "--sigma".into(), "1.8".into(), "--theta".into(), "0.5".into(), "--alpha".into(), "0.05".into(),
            "--replicates".into(), "50".into(), "--seed".into(), "7".into(), "--cache-dir".into(),
            cache.to_str().unwrap().into(), "--output".into(), dir.path().join(out).to_str().unwrap().into(),
        ]
    };
    let a: Vec<String> = args("a.json");
    let b: Vec<String> = args("b.json");
    assert!(percdetect(&a.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
    assert!(percdetect(&b.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    let first = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("b.json")).unwrap());
    let v: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v["samples"].as_array().unwrap().len(), 50);
}

#[test]
fn simulate_square_truth() {
    let dir = tempfile::tempdir().unwrap();
    let runs_csv = dir.path().join("runs.csv");
    let v = json(&percdetect(&[
        "simulate", "--truth", "square:20@5,5", "--width", "48", "--height", "48", "--sigma", "0.5",
        "--theta", "0.5", "--phi", "100", "--runs", "12", "--seed", "0xff", "--runs-csv",
        runs_csv.to_str().unwrap(),
    ]));
    assert_eq!(v["runs"], 12);
    assert_eq!(v["detections"], 12);
    assert_eq!(v["seed"], 255);
    assert!(v.get("mean_elapsed").is_none());
    let csv = std::fs::read_to_string(&runs_csv).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("run_index,detected,max_cluster,elapsed_ms\n0,1,"));

    let bad = percdetect(&["simulate", "--truth", "square:20@40,40", "--width", "48", "--height", "48",
        "--sigma", "0.5", "--theta", "0.5", "--phi", "100", "--runs", "2", "--seed", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn percolation_checks() {
    let v = json(&percdetect(&["percolation-check", "--mode", "crossing", "--p", "0.8", "--size", "32", "--replicates", "40", "--seed", "3"]));
    assert_eq!(v["crossing_frequency"], 1.0);
    assert!(v["mean_disjoint_crossings"].as_f64().unwrap() > 1.0);

    let v = json(&percdetect(&["percolation-check", "--mode", "tail", "--p", "0.4", "--size", "64", "--replicates", "400", "--seed", "3"]));
    assert!(v["lambda_hat"].as_f64().unwrap() > 0.0);

    let super_critical = percdetect(&["percolation-check", "--mode", "tail", "--p", "0.7", "--size", "64", "--replicates", "10", "--seed", "3"]);
    assert_eq!(super_critical.status.code(), Some(2));
}

#[test]
fn pgm_input_with_invert() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dark.pgm");
    // black object stored as low samples
    let mut bytes = b"P5\n4 4\n255\n".to_vec();
    bytes.extend([0u8, 0, 255, 255, 0, 0, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255]);
    std::fs::write(&path, bytes).unwrap();
    let p = path.to_str().unwrap();
    let v = json(&percdetect(&["detect", "--input", p, "--invert", "--theta", "0.5", "--phi", "4", "--sigma", "0.1"]));
    assert_eq!(v["detected"], true);
    assert_eq!(v["witness"]["bbox"], serde_json::json!({"min_row": 0, "min_col": 0, "max_row": 1, "max_col": 1}));
    let v = json(&percdetect(&["detect", "--input", p, "--theta", "0.5", "--phi", "5", "--sigma", "0.1"]));
    assert_eq!(v["detected"], true);
    assert_eq!(v["witness"]["bbox"]["min_row"], 0);
    assert_eq!(v["witness"]["bbox"]["min_col"], 2);
    let v = json(&percdetect(&["detect", "--input", p, "--invert", "--theta", "0.5", "--phi", "5", "--sigma", "0.1"]));
    assert_eq!(v["detected"], false);
}
