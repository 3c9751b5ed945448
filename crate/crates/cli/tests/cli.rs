use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn crnsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crnsim"))
        .args(args)
        .env_remove("CRNSIM_THREADS")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fig4_preset_writes_roc_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = crnsim(&["preset", "--preset", "fig4_roc", "--seed", "7", "--trials", "50", "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("snr_db,detector,pd_analytic,pd_empirical"));
    assert_eq!(lines.count(), 26 * 3);
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"master_seed\": 7"));
    assert!(manifest.contains("\"preset\": \"fig4_roc\""));
}

#[test]
fn fig9a_sweep_has_one_row_per_protection_level_and_i() {
    let dir = tempfile::tempdir().unwrap();
    let out = crnsim(&[
        "sweep", "--preset", "fig9a_protection", "--trials", "4", "--seed", "7", "--out", path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5 * 4 * 2);
    let mut keys: Vec<(String, String)> = rows
        .iter()
        .map(|r| {
            let f: Vec<&str> = r.split(',').collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), rows.len());
    assert!(rows.iter().any(|r| r.starts_with("0.9,net_centralized/i1,")));
}

#[test]
fn thread_count_does_not_change_outputs() {
    for (cmd, preset, file) in [
        ("sweep", "fig9b_snr", "sweep.csv"),
        ("roc", "fig4_roc", "roc.csv"),
        ("consensus", "fig10_consensus", "consensus_trace.csv"),
    ] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for (dir, threads) in [(&a, "1"), (&b, "8")] {
            let out = crnsim(&[
                cmd, "--preset", preset, "--trials", "20", "--seed", "3", "--threads", threads, "--out", path(dir.path()),
            ]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{cmd}");
    }
}

#[test]
fn config_file_runs_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        r#"
[scenario]
level = "device_rmd"
k_count = 4
m_count = 3
i_per_su = 1
sample_budget = 10000
window_cap = 500
target_fa = 0.1
protection_level = 0.9
mean_snr_db = -10.0
trials = 10
master_seed = 11

[sweep]
axis = "mean_snr_db"
values = [-10.0, 0.0]
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = crnsim(&["sweep", "--config", path(&cfg), "--out", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("\n-10,device_rmd/i1,"));
}

#[test]
fn validation_problems_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[scenario]\nlevel = \"basic\"\nk_count = 10\nm_count = 5\ni_per_su = 6\nsample_budget = 10000\nwindow_cap = 1000\ntarget_fa = 0.1\nprotection_level = 0.9\nmean_snr_db = -15.0\ntrials = 10\nmaster_seed = 1\n").unwrap();
    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let o = path(dir.path());
    let cases: Vec<Vec<&str>> = vec![
        vec!["sweep", "--config", path(&bad), "--out", o],
        vec!["sweep", "--config", path(&empty), "--out", o],
        vec!["sweep", "--config", "/nonexistent/x.toml", "--out", o],
        vec!["sweep", "--preset", "nope", "--out", o],
        vec!["sweep", "--out", o],
        vec!["consensus", "--preset", "fig4_roc", "--out", o],
        vec!["preset", "--out", o],
        vec!["sweep", "--preset", "fig9b_snr", "--trials", "0", "--out", o],
        vec!["sweep", "--preset", "fig9b_snr", "--threads", "0", "--out", o],
        vec!["sweep", "--bogus"],
        vec![],
    ];
    for args in cases {
        let out = crnsim(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = crnsim(&["sweep", "--config", path(&bad), "--out", o]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("i_per_su"));
}

#[test]
fn bad_thread_env_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_crnsim"))
        .args(["roc", "--trials", "5", "--out", path(dir.path())])
        .env("CRNSIM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let ok = Command::new(env!("CARGO_BIN_EXE_crnsim"))
        .args(["roc", "--trials", "5", "--out", path(dir.path())])
        .env("CRNSIM_THREADS", "2")
        .output()
        .unwrap();
    assert!(ok.status.success());
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"threads\": 2"));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let out = crnsim(&["roc", "--trials", "5", "--out", path(&file)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(crnsim(&["--help"]).status.code(), Some(0));
}
