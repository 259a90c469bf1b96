//! End-to-end behaviour of the `homlab` binary: exit codes, output layout and
//! the `report` re-checks.

use homlab_cli::config::{ExperimentConfig, RatValue};
use std::path::{Path, PathBuf};
use std::process::Output;

struct Sandbox {
    root: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self {
            root: tempfile::tempdir().unwrap(),
        }
    }

    fn config(&self, name: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> PathBuf {
        let mut cfg = ExperimentConfig::default();
        cfg.geometry.eps = vec![RatValue::Text("1/2".into())];
        edit(&mut cfg);
        let path = self.root.path().join(name);
        std::fs::write(&path, cfg.to_toml()).unwrap();
        path
    }

    fn run(&self, args: &[&str], config: Option<&Path>) -> Output {
        let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_homlab"));
        cmd.args(args).env(homlab_cli::OUTPUT_ROOT_ENV, self.root.path());
        if let Some(c) = config {
            cmd.arg(c);
        }
        cmd.output().unwrap()
    }

    fn out(&self, sub: &str) -> PathBuf {
        self.root.path().join("homlab-out").join(sub)
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn non_integer_inverse_eps_is_a_config_error() {
    let s = Sandbox::new();
    let cfg = s.config("bad.toml", |c| c.geometry.eps = vec![RatValue::Float(0.3)]);
    let o = s.run(&["micro"], Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eps"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_and_bad_usage_exit_two() {
    let s = Sandbox::new();
    let path = s.root.path().join("typo.toml");
    std::fs::write(&path, "[geometry]\nholes = []\n").unwrap();
    assert_eq!(s.run(&["micro"], Some(&path)).status.code(), Some(2));
    assert_eq!(s.run(&["frobnicate"], None).status.code(), Some(2));
    let cfg = s.config("ok.toml", |_| {});
    let o = s.run(&["sweep", "cell"], Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep"));
}

#[test]
fn unreadable_config_exits_two() {
    let s = Sandbox::new();
    let o = s.run(&["micro"], Some(&s.root.path().join("absent.toml")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config"));
}

#[test]
fn report_on_missing_or_corrupt_manifest_exits_four() {
    let s = Sandbox::new();
    let empty = s.root.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(s.run(&["report"], Some(&empty)).status.code(), Some(4));
    std::fs::write(empty.join("manifest.json"), "{ not json").unwrap();
    assert_eq!(s.run(&["report"], Some(&empty)).status.code(), Some(4));
}

fn rewrite_first_row(path: &Path, column: &str, value: &str) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let idx = headers.iter().position(|h| h == column).unwrap();
    let mut rows: Vec<Vec<String>> = rdr.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect();
    rows[0][idx] = value.to_string();
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(&headers).unwrap();
    for r in rows {
        w.write_record(r).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn micro_run_reports_clean_and_detects_tampering() {
    let s = Sandbox::new();
    let cfg = s.config("micro.toml", |_| {});
    let o = s.run(&["micro"], Some(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = s.out("micro");
    assert!(dir.join("manifest.json").is_file());
    assert!(dir.join("states/step_010.csv").is_file());

    let r = s.run(&["report"], Some(&dir));
    assert_eq!(r.status.code(), Some(0), "{}", stdout(&r));
    assert!(stdout(&r).contains("PASS energy_inequality[steps.csv]"));
    assert!(!stdout(&r).contains("FAIL"));

    // An energy that jumps far above the previous one breaks the inequality.
    rewrite_first_row(&dir.join("steps.csv"), "energy", "1e6");
    let r = s.run(&["report"], Some(&dir.join("manifest.json")));
    assert_eq!(r.status.code(), Some(1));
    assert!(stdout(&r).contains("FAIL energy_inequality[steps.csv]"), "{}", stdout(&r));
}

#[test]
fn report_flags_unreferenced_tables_and_forged_checks() {
    let s = Sandbox::new();
    let cfg = s.config("extend.toml", |c| c.samples.extend = 3);
    assert!(s.run(&["extend"], Some(&cfg)).status.success());
    let dir = s.out("extend");
    std::fs::write(dir.join("stray.csv"), "a\n1\n").unwrap();
    let r = s.run(&["report"], Some(&dir));
    assert_eq!(r.status.code(), Some(1));
    assert!(stdout(&r).contains("1 unreferenced"));
    std::fs::remove_file(dir.join("stray.csv")).unwrap();

    // `passed` is recomputed, so a flipped flag cannot hide a violation.
    let path = dir.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    m["checks"][0]["measured"] = serde_json::json!(5.0);
    m["checks"][0]["passed"] = serde_json::json!(true);
    std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let r = s.run(&["report"], Some(&dir));
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(stdout(&r).matches("FAIL").count(), 1, "{}", stdout(&r));
}

#[test]
fn unperforated_cell_run_emits_trivial_checks() {
    let s = Sandbox::new();
    let cfg = s.config("cell.toml", |c| {
        c.geometry.hole = None;
        c.material.amplitude = 0.0;
        c.samples.cell = 3;
    });
    assert!(s.run(&["cell"], Some(&cfg)).status.success());
    let r = s.run(&["report"], Some(&s.out("cell")));
    assert_eq!(r.status.code(), Some(0), "{}", stdout(&r));
    let text = stdout(&r);
    assert!(text.contains("PASS cell trivial_corrector"));
    assert!(text.contains("PASS cell trivial_h_hom"));
    assert!(text.contains("p > n: yes"));
}

#[test]
fn quadratic_runs_record_the_hypothesis_violation() {
    let s = Sandbox::new();
    let cfg = s.config("quad.toml", |c| {
        c.material.p = 2.0;
        c.samples.cell = 2;
    });
    assert!(s.run(&["cell"], Some(&cfg)).status.success());
    let dir = s.out("cell");
    assert!(dir.join("tensor.csv").is_file());
    assert!(dir.join("correctors/basis_5.csv").is_file());
    let r = s.run(&["report"], Some(&dir));
    assert!(stdout(&r).contains("NOTE p = 2"), "{}", stdout(&r));
    assert_eq!(r.status.code(), Some(0));
}

#[test]
fn sweep_writes_one_directory_per_eps() {
    let s = Sandbox::new();
    let cfg = s.config("unfold.toml", |c| {
        c.geometry.eps = vec![RatValue::Text("1/2".into()), RatValue::Text("1/4".into())];
        c.samples.unfold = 2;
    });
    let o = s.run(&["sweep", "unfold"], Some(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = s.out("sweep-unfold");
    assert!(dir.join("eps-1_2/unfold.csv").is_file());
    assert!(dir.join("eps-1_4/unfold.csv").is_file());
    assert_eq!(s.run(&["report"], Some(&dir)).status.code(), Some(0));
}
