use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn spadtrap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spadtrap"))
        .args(args)
        .env("SPADTRAP_OUTPUT_DIR", dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a CSV written by the tool: comment lines and the column
/// header removed.
fn data_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn help_documents_presets() {
    let tmp = TempDir::new().unwrap();
    let out = spadtrap(tmp.path(), &["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["fig3", "fig5a", "fig5b", "fig6", "table1", "projection"] {
        assert!(text.contains(name), "help is missing {name}");
    }
}

#[test]
fn simulate_table_one_event_count() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "no_dead.toml", "[detector]\ndead_time_us = 0\n");
    let out = spadtrap(tmp.path(), &["--config", &cfg, "--seed", "3", "simulate", "--ion", "--duration", "50"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let n = data_rows(&tmp.path().join("events.csv")).len() as f64;
    let sigma = 585_000f64.sqrt();
    assert!((n - 585_000.0).abs() <= 3.0 * sigma, "{n} events");
    assert!(stdout(&out).contains("fluorescence"));
}

#[test]
fn simulate_all_zero_rates_writes_header_only() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "zero.toml",
        "[budget]\nfluorescence_kcps = 0\nrepump_kcps = 0\ndoppler_kcps = 0\ndark_kcps = 0\nrf_kcps = 0\n",
    );
    let out = spadtrap(tmp.path(), &["--config", &cfg, "simulate", "--no-ion", "--duration", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(tmp.path().join("events.csv")).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body, ["timestamp_ns,label"]);
}

#[test]
fn same_seed_gives_byte_identical_files() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for dir in [&a, &b] {
        let out = spadtrap(dir.path(), &["--seed", "11", "simulate", "--duration", "2"]);
        assert!(out.status.success());
    }
    let read = |d: &TempDir| fs::read(d.path().join("events.csv")).unwrap();
    assert_eq!(read(&a), read(&b));

    let c = TempDir::new().unwrap();
    spadtrap(c.path(), &["--seed", "12", "simulate", "--duration", "2"]);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn every_output_carries_the_manifest() {
    let tmp = TempDir::new().unwrap();
    for args in [
        &["spot"][..],
        &["budget"],
        &["arc"],
        &["collection"],
        &["fidelity", "--targets", "0.9", "--trials", "50"],
    ] {
        let out = spadtrap(tmp.path(), args);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
    }
    let files: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
    assert!(files.len() >= 7);
    for f in files {
        let first = fs::read_to_string(&f).unwrap().lines().next().unwrap_or("").to_string();
        let hash = first.split("manifest=").nth(1).and_then(|r| r.split(' ').next()).unwrap_or("");
        assert!(
            first.starts_with("# spadtrap ") && hash.len() == 12 && hash.chars().all(|c| c.is_ascii_hexdigit()),
            "{}: {first}",
            f.display()
        );
    }
}

#[test]
fn trivial_target_stops_after_one_sub_bin() {
    let tmp = TempDir::new().unwrap();
    let out = spadtrap(tmp.path(), &["fidelity", "--targets", "0.51", "--trials", "500"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = data_rows(&tmp.path().join("fidelity_curve.csv"));
    assert_eq!(rows.len(), 1);
    let mean_ms: f64 = rows[0][2].parse().unwrap();
    assert!((mean_ms - 0.1).abs() < 1e-9, "{mean_ms}");
}

#[test]
fn default_fidelity_check_passes() {
    let tmp = TempDir::new().unwrap();
    let out = spadtrap(tmp.path(), &["--preset", "fig5b", "--check", "fidelity", "--targets", "0.9,0.99", "--trials", "10000"]);
    assert!(out.status.success(), "{}{}", stdout(&out), stderr(&out));
    let rows = data_rows(&tmp.path().join("fidelity_curve.csv"));
    let row = rows.iter().find(|r| r[0] == "0.99").unwrap();
    assert!(row[2].parse::<f64>().unwrap() <= 7.7);
}

#[test]
fn collection_is_monotone_over_default_offsets() {
    let tmp = TempDir::new().unwrap();
    let out = spadtrap(tmp.path(), &["--preset", "fig6", "--check", "collection"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let rows = data_rows(&tmp.path().join("collection.csv"));
    assert_eq!(rows.len(), 17);
    let ce: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(ce.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn arc_at_normal_incidence() {
    let tmp = TempDir::new().unwrap();
    let out = spadtrap(tmp.path(), &["--check", "arc", "--angles", "0,30"]);
    assert!(out.status.success());
    let rows = data_rows(&tmp.path().join("arc.csv"));
    let r0: f64 = rows[0][3].parse().unwrap();
    assert!((r0 - 0.10).abs() <= 0.03, "{r0}");
}

#[test]
fn budget_from_table_one_toggles() {
    let tmp = TempDir::new().unwrap();
    let toggles = write(
        tmp.path(),
        "toggles_in.csv",
        "fluorescence,repump,doppler,dark,rf,rate_kcps,dwell_s\n\
         0,0,0,1,0,1.2,50\n\
         1,0,0,1,0,6.0,50\n\
         0,1,0,1,0,5.2,50\n\
         0,0,1,1,0,2.6,50\n\
         0,0,0,1,1,1.5,50\n",
    );
    let out = spadtrap(tmp.path(), &["--preset", "table1", "--check", "budget", &toggles]);
    assert!(out.status.success(), "{}", stdout(&out));
    let rows = data_rows(&tmp.path().join("budget.csv"));
    let want = [4.8, 4.0, 1.4, 1.2, 0.3];
    for (row, w) in rows.iter().zip(want) {
        let got: f64 = row[1].parse().unwrap();
        assert!((got - w).abs() < 1e-9, "{row:?}");
    }
}

#[test]
fn bad_config_reports_line_and_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[trial]\nseed = 4\n\n[emitter]\nsaturation_fraction = 1.5\n");
    let out = spadtrap(tmp.path(), &["--config", &cfg, "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 5") && err.contains("emitter.saturation_fraction"), "{err}");
}

#[test]
fn malformed_csv_names_row_and_column() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "fig6.csv", "offset_um,fluorescence_kcps\n68,4.0\n73,abc\n");
    let out = spadtrap(tmp.path(), &["qefit", &data]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("row 3") && err.contains("column 2"), "{err}");
}

#[test]
fn unknown_preset_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let out = spadtrap(tmp.path(), &["--preset", "fig9", "arc"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missed_threshold_exits_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "dim.toml", "[budget]\nfluorescence_kcps = 0.5\n");
    let out = spadtrap(tmp.path(), &["--config", &cfg, "--check", "threshold"]);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    let without_check = spadtrap(tmp.path(), &["--config", &cfg, "threshold"]);
    assert_eq!(without_check.status.code(), Some(0));
}

#[test]
fn output_dir_flag_overrides_environment() {
    let (env_dir, flag_dir) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let flag = flag_dir.path().display().to_string();
    let out = spadtrap(env_dir.path(), &["--output-dir", &flag, "arc"]);
    assert!(out.status.success());
    assert!(flag_dir.path().join("arc.csv").exists());
    assert!(!env_dir.path().join("arc.csv").exists());
}
