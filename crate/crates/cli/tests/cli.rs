//! End-to-end tests of the surfmix binary: file outputs, determinism, exit
//! codes, and agreement of the mixing subcommand with an independent dense
//! matrix-power recomputation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_surfmix")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("surfmix-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_with_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(bin())
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

#[test]
fn sample_zero_steps_header_only_and_deterministic() {
    let dir = tmp_dir("sample");
    let cfg = write_config(
        &dir,
        "min.json",
        r#"{ "region": {"dim": 2, "dims": [2, 2]}, "bias": {"uniform": 1}, "steps": 0, "seed": 1 }"#,
    );
    for out in ["a", "b"] {
        let o = run(&[
            "sample",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join(out).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read_to_string(dir.join("a/trajectory.csv")).unwrap();
    assert_eq!(csv, "step,volume,peaks,valleys\n");
    // Byte-identical runs, modulo the timestamp quarantined in meta.
    assert_eq!(
        csv,
        fs::read_to_string(dir.join("b/trajectory.csv")).unwrap()
    );
    let strip = |p: &Path| -> String {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.contains("generated_unix_ms"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        strip(&dir.join("a/trajectory.json")),
        strip(&dir.join("b/trajectory.json"))
    );
}

#[test]
fn malformed_config_exits_2_and_names_the_problem() {
    let dir = tmp_dir("badjson");
    let cfg = write_config(&dir, "bad.json", "{ not json");
    let o = run(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));

    // Field-level error names the offending path.
    let cfg = write_config(
        &dir,
        "field.json",
        r#"{ "region": {"dim": 2, "dims": [2, 2]} }"#,
    );
    let o = run(&[
        "drift",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bias"));
}

#[test]
fn enumeration_cap_exits_3() {
    let dir = tmp_dir("cap");
    let cfg = write_config(
        &dir,
        "big.json",
        r#"{ "region": {"dim": 2, "dims": [8, 8]}, "bias": {"uniform": 2} }"#,
    );
    let o = run_with_env(
        &[
            "mix-exact",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
        "SURFMIX_ENUM_CAP",
        "100",
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cap"));
}

#[test]
fn lemmas_pass_on_3x3_and_report_potential_violation() {
    let dir = tmp_dir("lemmas");
    let cfg = write_config(
        &dir,
        "ok.json",
        r#"{ "region": {"dim": 2, "dims": [3, 3]}, "bias": {"uniform": 4} }"#,
    );
    let o = run(&[
        "lemmas",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("ok").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("ok/lemmas.json")).unwrap()).unwrap();
    for check in report["checks"].as_array().unwrap() {
        assert_eq!(check["pass"], serde_json::json!(true), "{check}");
    }

    // The potential check finds the known boundary-class state at lambda = 2;
    // the violation is data: the report is written and the exit code is 4.
    let cfg = write_config(
        &dir,
        "pot.json",
        r#"{ "region": {"dim": 2, "dims": [3, 3]}, "bias": {"uniform": 2}, "checks": ["potential"] }"#,
    );
    let o = run(&[
        "lemmas",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("pot").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("pot/lemmas.json")).unwrap()).unwrap();
    let potential = &report["checks"][0];
    assert_eq!(potential["pass"], serde_json::json!(false));
    assert_eq!(
        potential["violations"][0]["counts"],
        serde_json::json!([2, 1, 1, 1, 1])
    );
    assert_eq!(
        potential["violations"][0]["drift"],
        serde_json::json!("1/80")
    );
}

/// Independent oracle for the mixing subcommand: dense matrix powers from
/// every start, built from the standalone transition probabilities.
fn dense_tau(dims: &[u32], lambda: i64, eps: f64, budget: u64) -> Option<u64> {
    use surfmix_core::dynamics::{transition_probability, BiasField};
    use surfmix_core::numeric::{rat_int, rat_to_f64};
    use surfmix_core::region::Region;

    let region = Region::rectangle(dims).unwrap();
    let bias = BiasField::uniform(&region, rat_int(lambda)).unwrap();
    let states = region.enumerate_downsets(100_000).unwrap();
    let n = states.len();
    let p: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    rat_to_f64(&transition_probability(
                        &region, &bias, &states[i], &states[j],
                    ))
                })
                .collect()
        })
        .collect();
    // Stationary law from unnormalized weights lambda^|sigma|.
    let w: Vec<f64> = states
        .iter()
        .map(|s| (lambda as f64).powi(s.volume() as i32))
        .collect();
    let z: f64 = w.iter().sum();
    let pi: Vec<f64> = w.iter().map(|x| x / z).collect();

    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            d
        })
        .collect();
    let tv = |d: &[f64]| 0.5 * d.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum::<f64>();
    for t in 0..=budget {
        if rows.iter().map(|d| tv(d)).fold(0.0, f64::max) <= eps {
            return Some(t);
        }
        rows = rows
            .iter()
            .map(|d| {
                (0..n)
                    .map(|j| (0..n).map(|i| d[i] * p[i][j]).sum())
                    .collect()
            })
            .collect();
    }
    None
}

#[test]
fn mix_exact_matches_dense_recomputation() {
    let dir = tmp_dir("mix");
    let cfg = write_config(
        &dir,
        "mix.json",
        r#"{ "region": {"dim": 2, "dims": [2, 3]}, "bias": {"uniform": 2}, "eps": "1/4", "budget": 10000 }"#,
    );
    let o = run(&[
        "mix-exact",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("mix_exact.json")).unwrap()).unwrap();
    assert_eq!(report["stationary_ok"], serde_json::json!(true));
    assert_eq!(report["engine"], serde_json::json!("exact"));
    let tau = report["tau"].as_u64().expect("mixes");
    assert_eq!(Some(tau), dense_tau(&[2, 3], 2, 0.25, 10_000));
}

#[test]
fn slow_n4_reports_exact_fractions() {
    let dir = tmp_dir("slow");
    let cfg = write_config(&dir, "slow.json", r#"{ "n": 4, "tv_budget": 100000 }"#);
    let o = run(&[
        "slow",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("slow.json")).unwrap()).unwrap();
    let inst = &report["instances"][0];
    assert_eq!(inst["tuned"], serde_json::json!(true));
    assert_eq!(inst["class_sizes"], serde_json::json!([42, 20, 8]));
    // The class masses are exact fractions summing to one.
    let parse =
        |v: &serde_json::Value| surfmix_core::numeric::parse_rat(v.as_str().unwrap()).unwrap();
    let total = parse(&inst["pi_low"]) + parse(&inst["pi_cut"]) + parse(&inst["pi_high"]);
    assert_eq!(total, surfmix_core::numeric::rat_int(1));
    assert!(
        fs::read_to_string(dir.join("slow_series.csv"))
            .unwrap()
            .lines()
            .count()
            >= 2
    );
}

#[test]
fn couple_csv_keyed_by_seed() {
    let dir = tmp_dir("couple");
    let cfg = write_config(
        &dir,
        "couple.json",
        r#"{ "region": {"dim": 2, "dims": [3, 3]}, "bias": {"uniform": 4}, "replicas": 20, "seed": 5, "max_steps": 1000000 }"#,
    );
    let o = run(&[
        "couple",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.join("couple.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.starts_with("seed,time,timeout\n"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("couple.json")).unwrap()).unwrap();
    assert_eq!(report["stats"]["timeouts"], serde_json::json!(0));
}
