use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BASE: &str = "beta = 1.5\n[grid]\nm = 500\n";

const MD: &str = "[md]\nn_pairs = 32\ntrials = 12\ntimes = [0.0, 4.0, 8.0]\nseed = 5\nbatch = 5\n";

fn vghd(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_vghd"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn dos_reports_chemical_potential_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let o = vghd(dir.path(), BASE, &["dos"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let meta = json(&dir.path().join("out/dos_meta.json"));
    assert!((meta["mu"].as_f64().unwrap() - 1.9797).abs() < 1e-3);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    let first = std::fs::read(dir.path().join("out/dos.csv")).unwrap();
    assert!(first.starts_with(b"w,varrho,sigma_norm\n"));
    assert_eq!(code(&vghd(dir.path(), BASE, &["dos"])), 0);
    assert_eq!(first, std::fs::read(dir.path().join("out/dos.csv")).unwrap());
}

#[test]
fn bad_config_exits_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = vghd(dir.path(), "[grid]\nm = 500\n", &["dos"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("beta"));
    assert!(!dir.path().join("out").exists());
    assert_eq!(code(&vghd(dir.path(), "beta = 1.5\n[grid]\nm = 500\nbogus = 2\n", &["dos"])), 1);
    assert_eq!(code(&vghd(dir.path(), BASE, &["no-such-command"])), 1);
}

#[test]
fn non_convergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = vghd(dir.path(), &format!("{BASE}[solver]\nmax_iter = 2\n"), &["dos"]);
    assert_eq!(code(&o), 2);
    assert_eq!(json(&dir.path().join("out/dos_meta.json"))["converged"], Value::Bool(false));
}

#[test]
fn ghd_writes_summary_and_sorted_curves() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&vghd(dir.path(), BASE, &["ghd"])), 0);
    let s = json(&dir.path().join("out/ghd_summary.json"));
    let c = &s["c"];
    assert!((c[0][1].as_f64().unwrap() - 1.0).abs() < 1e-3);
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(c[i][j], c[j][i]);
        }
    }
    for name in s["curve_files"].as_array().unwrap() {
        let mut rdr = csv::Reader::from_path(dir.path().join("out").join(name.as_str().unwrap())).unwrap();
        let xi: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
        assert!(xi.windows(2).all(|p| p[0] <= p[1]));
    }
}

#[test]
fn md_smoke_run_writes_well_formed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}[md]\nn_pairs = 16\ntrials = 1\ntimes = [2.0]\nseed = 1\n");
    assert_eq!(code(&vghd(dir.path(), &cfg, &["md"])), 0);
    let mut rdr = csv::Reader::from_path(dir.path().join("out/md_correlations.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["m", "n", "t", "j", "xi", "S", "tS", "stderr"]);
    assert_eq!(rdr.records().count(), 32);
}

#[test]
fn interrupted_md_resumes_to_identical_output() {
    let full = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}{MD}");
    assert_eq!(code(&vghd(full.path(), &cfg, &["md"])), 0);

    let split = tempfile::tempdir().unwrap();
    assert_eq!(code(&vghd(split.path(), &cfg, &["md", "--stop-after", "7"])), 0);
    assert!(!split.path().join("out/md_correlations.csv").exists());
    assert_eq!(code(&vghd(split.path(), &cfg, &["md", "--threads", "2"])), 0);

    for name in ["md_correlations.csv", "md_meta.json"] {
        assert_eq!(
            std::fs::read(full.path().join("out").join(name)).unwrap(),
            std::fs::read(split.path().join("out").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn resume_with_changed_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}{MD}");
    assert_eq!(code(&vghd(dir.path(), &cfg, &["md", "--stop-after", "5"])), 0);
    let o = vghd(dir.path(), &cfg, &["md", "--seed", "99"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("different configuration"));
}

#[test]
fn static_sums_match_ghd_susceptibilities() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        format!("{BASE}[md]\nn_pairs = 64\ntrials = 600\ntimes = [0.0]\nseed = 3\nfields = [[0, 0], [0, 1], [1, 1]]\n");
    assert_eq!(code(&vghd(dir.path(), &cfg, &["md"])), 0);
    assert_eq!(code(&vghd(dir.path(), &cfg, &["ghd"])), 0);
    let md = json(&dir.path().join("out/md_meta.json"));
    let c = json(&dir.path().join("out/ghd_summary.json"))["c"].clone();
    for e in md["sums"].as_array().unwrap() {
        let (m, n) = (e["m"].as_u64().unwrap() as usize, e["n"].as_u64().unwrap() as usize);
        let (sum, se) = (e["sum"].as_f64().unwrap(), e["sum_stderr"].as_f64().unwrap());
        let want = c[m][n].as_f64().unwrap();
        assert!((sum - want).abs() <= 3.0 * se, "({m},{n}): {sum} ± {se} vs {want}");
    }
}

#[test]
fn compare_joins_outputs_and_checks_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}{MD}");
    assert_eq!(code(&vghd(dir.path(), &cfg, &["compare"])), 1);
    assert_eq!(code(&vghd(dir.path(), &cfg, &["md"])), 0);
    assert_eq!(code(&vghd(dir.path(), &cfg, &["ghd"])), 0);
    let o = vghd(dir.path(), &cfg, &["compare"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = json(&dir.path().join("out/compare_metrics.json"));
    assert!(metrics["xi0"].as_f64().unwrap() > 0.0);
    let entries = metrics["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert!(entries[0]["sign_changes"].is_u64());

    let mut rdr = csv::Reader::from_path(dir.path().join("out/compare_m0_n0.csv")).unwrap();
    let xi0 = metrics["xi0"].as_f64().unwrap();
    for r in rdr.records() {
        let r = r.unwrap();
        let (xi, ghd): (f64, f64) = (r[1].parse().unwrap(), r[4].parse().unwrap());
        if xi > xi0 {
            assert!(ghd.is_nan());
        }
    }

    // a GHD run from another configuration must not be mixed in
    let other = format!("beta = 1.5\n[grid]\nm = 400\n{MD}");
    assert_eq!(code(&vghd(dir.path(), &other, &["ghd"])), 0);
    let o = vghd(dir.path(), &cfg, &["compare"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("different configuration"));
}

#[test]
fn ensemble_check_reports_l1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}[ensemble]\nn_pairs = 50\nsamples = 200\nbins = 60\nseed = 2\nl1_lo = 0.2\n");
    assert_eq!(code(&vghd(dir.path(), &cfg, &["ensemble-check"])), 0);
    let meta = json(&dir.path().join("out/ensemble_meta.json"));
    assert!(meta["l1"].as_f64().unwrap() < 0.2);
    assert!((meta["second_moment"].as_f64().unwrap() / 0.75 - 1.0).abs() < 0.1);
}
