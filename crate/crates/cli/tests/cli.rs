use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const HEADER: &str = "id,sex,birth_year,department,alcohol,obesity,smoking,immigration,education,event_date,event_code\n";

fn disfle(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disfle"))
        .args(args)
        .env("DISFLE_RUN_DIR", root)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

/// Runs a command expected to succeed and returns its run directory.
fn ok(root: &Path, args: &[&str]) -> PathBuf {
    let out = disfle(root, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    PathBuf::from(stdout.lines().last().expect("run directory printed"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

fn synthetic_config(dir: &Path, body: &str) -> PathBuf {
    write(dir, "synthetic.toml", body)
}

#[test]
fn empty_input_gives_empty_store() {
    let tmp = TempDir::new().unwrap();
    let subjects = write(tmp.path(), "subjects.csv", HEADER);
    let run = ok(tmp.path(), &["ingest", "--subjects", s(&subjects)]);
    let store: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("cohort.json")).unwrap()).unwrap();
    assert_eq!(store["rows"], 0);
    assert_eq!(store["version"], 1);
    let report = fs::read_to_string(run.join("exclusions.csv")).unwrap();
    assert_eq!(report, "criterion,before,removed,remaining\n");
}

#[test]
fn malformed_rows_are_reported_by_line() {
    let tmp = TempDir::new().unwrap();
    let body = format!(
        "{HEADER}1,F,1950,01,0,0,0,0,0,,\n2,X,1950,01,0,0,0,0,0,,\n3,F,1950,01,9,0,0,0,0,,\n"
    );
    let subjects = write(tmp.path(), "subjects.csv", &body);
    let out = disfle(tmp.path(), &["ingest", "--subjects", s(&subjects)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("subjects.csv:3:"), "{err}");
    assert!(err.contains("subjects.csv:4:"), "{err}");
    assert!(!err.contains("subjects.csv:2:"), "{err}");
    // nothing is written for a failed run
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);

    let run = ok(
        tmp.path(),
        &["ingest", "--subjects", s(&subjects), "--skip-invalid"],
    );
    let store: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("cohort.json")).unwrap()).unwrap();
    assert_eq!(store["rows"], 1);

    let bad_header = write(tmp.path(), "bad.csv", "id,sex\n1,F\n");
    let out = disfle(tmp.path(), &["ingest", "--subjects", s(&bad_header)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("birth_year"));
}

#[test]
fn planted_exclusions_telescope_at_scale() {
    let tmp = TempDir::new().unwrap();
    let config = synthetic_config(
        tmp.path(),
        "n = 100000\nseed = 9\nexclusion_rate = 0.08\ndeath_share = 0.2\n[baseline]\nfamily = \"exponential\"\nrate = 0.03\n",
    );
    let gen = ok(tmp.path(), &["generate", "--config", s(&config)]);
    let rows = fs::read_to_string(gen.join("subjects.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert!(rows >= 100_000);
    let run = ok(
        tmp.path(),
        &["ingest", "--subjects", s(&gen.join("subjects.csv"))],
    );
    let report = read_csv(&run.join("exclusions.csv"));
    let planted = read_csv(&gen.join("planted.csv"));
    assert_eq!(report[0][1], "100000");
    for (r, p) in report.iter().zip(&planted) {
        assert_eq!(r[0], p[0]);
        assert_eq!(r[2], p[1], "{}", r[0]);
    }
    for w in report.windows(2) {
        assert_eq!(w[0][3], w[1][1]);
    }
    for r in &report {
        let n: Vec<usize> = r[1..].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(n[0] - n[1], n[2]);
    }
}

fn two_group_fit(tmp: &Path, root: &Path) -> PathBuf {
    let config = synthetic_config(
        tmp,
        "n = 20000\nseed = 3\nbirth_years = [1940, 1963]\n\
         [baseline]\nfamily = \"piecewise\"\nbreaks = [70.0]\nrates = [0.03, 0.08]\n\
         [[effect]]\ncovariate = \"sex\"\nlevel = 1\nhazard_ratios = [2.0]\n",
    );
    let model = write(tmp, "model.toml", "[[term]]\ncovariate = \"sex\"\n");
    let gen = ok(root, &["generate", "--config", s(&config)]);
    let store = ok(
        root,
        &["ingest", "--subjects", s(&gen.join("subjects.csv"))],
    );
    ok(
        root,
        &[
            "fit",
            "--store",
            s(&store.join("cohort.json")),
            "--model",
            s(&model),
            "--seed",
            "5",
            "--train-frac",
            "1",
        ],
    )
}

#[test]
fn two_group_hazard_ratio_and_byte_identical_rerun() {
    let tmp = TempDir::new().unwrap();
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let run_a = two_group_fit(tmp.path(), a.path());
    let run_b = two_group_fit(tmp.path(), b.path());
    let coef = read_csv(&run_a.join("coefficients.csv"));
    assert_eq!(coef.len(), 1);
    assert_eq!((coef[0][0].as_str(), coef[0][1].as_str()), ("sex", "M"));
    let hr: f64 = coef[0][5].parse().unwrap();
    assert!((hr - 2.0).abs() < 0.15, "hazard ratio {hr}");
    assert_eq!(run_a.file_name(), run_b.file_name());
    for f in ["coefficients.csv", "fit.json"] {
        assert_eq!(
            fs::read(run_a.join(f)).unwrap(),
            fs::read(run_b.join(f)).unwrap(),
            "{f}"
        );
    }
}

fn bundled_store(root: &Path) -> PathBuf {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    ok(
        root,
        &["ingest", "--subjects", s(&data.join("subjects.csv"))],
    )
    .join("cohort.json")
}

#[test]
fn unknown_covariate_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let store = bundled_store(tmp.path());
    let model = write(
        tmp.path(),
        "model.toml",
        "[[term]]\ncovariate = \"income\"\n",
    );
    let out = disfle(
        tmp.path(),
        &["fit", "--store", s(&store), "--model", s(&model)],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("income"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(disfle(tmp.path(), &["fit"]).status.code(), Some(2));
    assert_eq!(disfle(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    let store = bundled_store(tmp.path());
    let out = disfle(
        tmp.path(),
        &["fit", "--store", s(&store), "--train-frac", "1.5"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn adjustment_with_cox_path_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let fit = write(tmp.path(), "fit.json", "{}");
    let out = disfle(
        tmp.path(),
        &[
            "indicators",
            "--fit",
            s(&fit),
            "--adjust",
            s(&data.join("pyramid.csv")),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Kaplan-Meier"));
}

#[test]
fn disease_free_cohort_gives_full_horizon() {
    let tmp = TempDir::new().unwrap();
    let mut body = HEADER.to_string();
    for i in 0..40 {
        let sex = if i % 2 == 0 { "F" } else { "M" };
        body.push_str(&format!("{i},{sex},{},01,0,0,0,0,0,,\n", 1930 + i % 25));
    }
    let subjects = write(tmp.path(), "subjects.csv", &body);
    let store = ok(tmp.path(), &["ingest", "--subjects", s(&subjects)]).join("cohort.json");
    let run = ok(tmp.path(), &["indicators", "--store", s(&store)]);
    let summary = read_csv(&run.join("summary.csv"));
    let header = csv::Reader::from_path(run.join("summary.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    assert_eq!(
        &header.iter().take(3).collect::<Vec<_>>(),
        &["Age", "Sex", "Dis-FLE"]
    );
    assert_eq!(summary.len(), 4);
    for r in &summary {
        let age: f64 = r[0].parse().unwrap();
        assert_eq!(r[2].parse::<f64>().unwrap(), 100.0 - age);
    }
    assert_eq!(summary[0][..2], ["50".to_string(), "Men".to_string()]);
    let md = fs::read_to_string(run.join("summary.md")).unwrap();
    assert!(md.starts_with("| Age | Sex | Dis-FLE |"));
    assert!(md.contains("| 50 | Women | 50.0 |"));
}

#[test]
fn saturated_pyramid_changes_nothing() {
    let tmp = TempDir::new().unwrap();
    let store = bundled_store(tmp.path());
    let mut pyramid = String::from("sex,birth_year,count\n");
    for sex in ["F", "M"] {
        for year in 1900..=1963 {
            pyramid.push_str(&format!("{sex},{year},0\n"));
        }
    }
    let pyramid = write(tmp.path(), "zero.csv", &pyramid);
    let plain = ok(tmp.path(), &["indicators", "--store", s(&store)]);
    let adjusted = ok(
        tmp.path(),
        &["indicators", "--store", s(&store), "--adjust", s(&pyramid)],
    );
    assert_ne!(plain, adjusted);
    for f in ["survival.csv", "disfle.csv", "summary.csv"] {
        assert_eq!(
            fs::read(plain.join(f)).unwrap(),
            fs::read(adjusted.join(f)).unwrap(),
            "{f}"
        );
    }
    let cells = read_csv(&adjusted.join("adjustment.csv"));
    assert!(cells.iter().all(|c| c[5] == "0" && c[6] == "true"));
}

#[test]
fn validation_reports_five_default_bins_and_manifest_lists_outputs() {
    let tmp = TempDir::new().unwrap();
    let store = bundled_store(tmp.path());
    let model = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/model.toml");
    let fit = ok(
        tmp.path(),
        &[
            "fit",
            "--store",
            s(&store),
            "--model",
            s(&model),
            "--seed",
            "11",
        ],
    )
    .join("fit.json");
    let run = ok(
        tmp.path(),
        &["validate", "--fit", s(&fit), "--store", s(&store)],
    );
    let bins = read_csv(&run.join("calibration.csv"));
    let intervals: Vec<&str> = bins.iter().map(|b| b[0].as_str()).collect();
    assert_eq!(
        intervals,
        [
            "(-inf, 0.2]",
            "(0.2, 0.7]",
            "(0.7, 1.1]",
            "(1.1, 1.5]",
            "(1.5, inf)"
        ]
    );
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("validation.json")).unwrap()).unwrap();
    let c = report["c_statistic"].as_f64().unwrap();
    assert!(c > 0.5 && c < 1.0, "C = {c}");

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("manifest.json")).unwrap()).unwrap();
    let hash = manifest["hash"].as_str().unwrap();
    assert!(run.ends_with(&hash[..16]));
    assert_eq!(report["manifest"], hash);
    for o in manifest["outputs"].as_array().unwrap() {
        let bytes = fs::read(run.join(o["name"].as_str().unwrap())).unwrap();
        let name = o["name"].as_str().unwrap();
        if name.ends_with(".svg") {
            assert!(String::from_utf8_lossy(&bytes).contains(hash));
        }
    }
    assert!(manifest["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .all(|i| i["sha256"].as_str().unwrap().len() == 64));

    // the store must be the one the model was trained on
    let other = write(
        tmp.path(),
        "subjects.csv",
        &format!("{HEADER}1,F,1950,01,0,0,0,0,0,,\n"),
    );
    let other = ok(tmp.path(), &["ingest", "--subjects", s(&other)]).join("cohort.json");
    assert_eq!(
        disfle(
            tmp.path(),
            &["validate", "--fit", s(&fit), "--store", s(&other)]
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn corrupt_store_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let store = write(
        tmp.path(),
        "cohort.json",
        r#"{"format":"disfle-cohort","version":7,"manifest":"","rows":0,"columns":{}}"#,
    );
    let out = disfle(tmp.path(), &["indicators", "--store", s(&store)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let model = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/model.toml");
    let one = {
        let store = bundled_store(a.path());
        ok(
            a.path(),
            &[
                "--workers",
                "1",
                "fit",
                "--store",
                s(&store),
                "--model",
                s(&model),
            ],
        )
    };
    let many = {
        let store = bundled_store(b.path());
        ok(
            b.path(),
            &[
                "--workers",
                "4",
                "fit",
                "--store",
                s(&store),
                "--model",
                s(&model),
            ],
        )
    };
    for f in [
        "coefficients.csv",
        "hazard_ratios.csv",
        "department_effects.csv",
        "fit.json",
    ] {
        assert_eq!(
            fs::read(one.join(f)).unwrap(),
            fs::read(many.join(f)).unwrap(),
            "{f}"
        );
    }
}
