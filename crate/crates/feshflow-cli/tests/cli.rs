use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use feshflow_cli::{apply, config_hash, parse_config, Overrides, RunManifest};

fn feshflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feshflow")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn manifest(out: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

const SMALL: &str = "[ensemble]\ncount = 3\n[suites]\nz_per_member = 1\nflow_members = 1\n";

#[test]
fn family_suite_passes_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = feshflow(&["run", "--config", &cfg, "--suite", "family", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert!(m.passed);
    assert_eq!(m.suites.len(), 1);
    assert_eq!(m.suites[0].suite, "family");
    assert!(out.join("reports/family.json").exists());
    assert!(out.join("tables/family_checks.csv").exists());
}

#[test]
fn violated_hypotheses_are_skipped_not_failed() {
    let dir = tempfile::tempdir().unwrap();
    // ‖w_(I)‖ above e^{-α}/100 at both scales
    let cfg = write_config(dir.path(), "[ensemble]\ncount = 3\ninteraction = 0.02\n");
    let out = dir.path().join("out");
    let o = feshflow(&["run", "--config", &cfg, "--suite", "bounds", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let m = manifest(&out);
    assert!(m.suites[0].counts.skipped > 0);
    assert_eq!(m.suites[0].counts.fail, 0);
    let report = fs::read_to_string(out.join("reports/bounds.json")).unwrap();
    assert!(report.contains("hypothesis not satisfied"));
}

#[test]
fn identical_seed_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = feshflow(&[
            "run", "--config", &cfg, "--suite", "isospectrality", "--suite", "bounds", "--suite", "fixed-point", "--seed", "11",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    for rel in ["manifest.json", "reports/isospectrality.json", "reports/bounds.json", "reports/fixed-point.json", "tables/bounds_checks.csv"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel} differs");
    }
}

#[test]
fn seed_changes_the_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut reports = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        assert!(feshflow(&["run", "--config", &cfg, "--suite", "isospectrality", "--seed", seed, "--out", out.to_str().unwrap()]).status.success());
        reports.push(fs::read(out.join("reports/isospectrality.json")).unwrap());
        assert_eq!(manifest(&out).seed.to_string(), seed);
    }
    assert_ne!(reports[0], reports[1]);
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    for (body, field) in [
        ("[norms]\nxi = 1.5\n", "norms.xi"),
        ("[norms]\nmu = 0.0\n", "norms.mu"),
        ("[flow]\nr_z = 0.25\n", "flow.r_z"),
        ("[grid]\ndelta = -1.0\n", "grid.delta"),
        ("[norms]\nxii = 0.5\n", "xii"),
        ("[suites]\npairs = [[4, 4]]\n", "suites.pairs"),
    ] {
        let cfg = write_config(dir.path(), body);
        let o = feshflow(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{body}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(field), "{body}: {err}");
    }
    let cfg = write_config(dir.path(), "");
    let o = feshflow(&["run", "--config", &cfg, "--suite", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonsense"));
}

#[test]
fn explain_covers_every_suite() {
    for s in feshflow::suites::SUITES {
        let o = feshflow(&["explain", s]);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.starts_with(s), "{s}");
    }
    assert!(!feshflow(&["explain", "everything"]).status.success());
}

#[test]
fn hash_ignores_output_location() {
    let base = parse_config(SMALL).unwrap();
    let a = apply(base.clone(), &Overrides { out: Some("x".into()), ..Default::default() }).unwrap();
    let b = apply(base.clone(), &Overrides { out: Some("y".into()), ..Default::default() }).unwrap();
    assert_eq!(config_hash(&a), config_hash(&b));
    let c = apply(base, &Overrides { seed: Some(99), ..Default::default() }).unwrap();
    assert_ne!(config_hash(&a), config_hash(&c));
}

#[test]
fn failing_suite_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    // a fixed-point tolerance below roundoff cannot be met
    let cfg = write_config(dir.path(), "[ensemble]\ncount = 1\n[flow]\nfp_tol = 1e-30\n[suites]\nscales = [1]\n");
    let out = dir.path().join("out");
    let o = feshflow(&["run", "--config", &cfg, "--suite", "fixed-point", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!manifest(&out).passed);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
