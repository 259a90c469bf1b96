//! Run manifests and the `report` subcommand.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// `measured <= bound`
    Le,
    /// `measured >= bound`
    Ge,
}

/// One recorded invariant check. `report` re-evaluates `measured` against
/// `bound` rather than trusting `passed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    pub fn le(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::new(name.into(), measured, Relation::Le, bound)
    }

    pub fn ge(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::new(name.into(), measured, Relation::Ge, bound)
    }

    fn new(name: String, measured: f64, relation: Relation, bound: f64) -> Self {
        let mut c = Self {
            name,
            measured,
            relation,
            bound,
            passed: false,
        };
        c.passed = c.evaluate();
        c
    }

    pub fn evaluate(&self) -> bool {
        match self.relation {
            Relation::Le => self.measured <= self.bound,
            Relation::Ge => self.measured >= self.bound,
        }
    }

    pub fn describe(&self) -> String {
        let op = match self.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
        };
        format!("{}: {:.6e} {op} {:.6e}", self.name, self.measured, self.bound)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypotheses {
    pub dimension: usize,
    pub p: f64,
    pub q: f64,
    /// `p > n`, required by the analysis; quadratic runs violate it.
    pub p_greater_than_n: bool,
    /// `q ≥ p n / (p − n)`.
    pub q_admissible: bool,
    pub notes: Vec<String>,
}

impl Hypotheses {
    pub fn of(p: f64, q: f64) -> Self {
        let n = 2.0;
        let p_gt_n = p > n;
        let q_ok = p_gt_n && q >= p * n / (p - n);
        let mut notes = Vec::new();
        if !p_gt_n {
            notes.push(format!("p = {p} does not exceed n = 2; results are outside the analysed regime"));
        }
        if !q_ok {
            notes.push(format!("q = {q} is below p n / (p - n)"));
        }
        Self {
            dimension: 2,
            p,
            q,
            p_greater_than_n: p_gt_n,
            q_admissible: q_ok,
            notes,
        }
    }
}

/// Summary of one run inside a manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub tables: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub deterministic: bool,
    pub config: ExperimentConfig,
    pub hypotheses: Hypotheses,
    pub runs: Vec<RunSummary>,
    /// Every CSV file under the run directory, relative to it.
    pub tables: Vec<String>,
    pub checks: Vec<Check>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Reads a manifest from a file or from a run directory.
    pub fn read(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| CliError::Manifest(format!("{}: {e}", file.display())))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", file.display())))?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }
}

/// Outcome of re-checking a manifest.
pub struct Report {
    pub text: String,
    pub failures: usize,
}

/// Re-evaluates every recorded check, verifies that every CSV file in the
/// run directory is referenced and present, and recomputes the per-step
/// inequality from each step table.
pub fn report(path: &Path) -> Result<Report, CliError> {
    let (m, dir) = RunManifest::read(path)?;
    let mut text = String::new();
    let mut lines: Vec<(bool, String)> = Vec::new();
    let mut line = |ok: bool, what: String| lines.push((ok, what));
    let _ = writeln!(
        text,
        "{} {} ({} run{}), p = {}, p > n: {}",
        m.tool,
        m.subcommand,
        m.runs.len(),
        if m.runs.len() == 1 { "" } else { "s" },
        m.hypotheses.p,
        if m.hypotheses.p_greater_than_n { "yes" } else { "no" },
    );
    for note in &m.hypotheses.notes {
        let _ = writeln!(text, "NOTE {note}");
    }
    for c in &m.checks {
        line(c.evaluate(), c.describe());
    }

    let mut on_disk = Vec::new();
    collect_csv(&dir, &dir, &mut on_disk);
    on_disk.sort();
    let unreferenced: Vec<_> = on_disk.iter().filter(|t| !m.tables.contains(t)).collect();
    let missing: Vec<_> = m.tables.iter().filter(|t| !dir.join(t).is_file()).collect();
    line(
        unreferenced.is_empty() && missing.is_empty(),
        format!(
            "tables: {} referenced, {} missing, {} unreferenced",
            m.tables.len(),
            missing.len(),
            unreferenced.len()
        ),
    );

    for t in m.tables.iter().filter(|t| t.ends_with("steps.csv")) {
        match step_slack(&dir.join(t), m.config.solver.tol_step) {
            Ok(s) => line(s >= 0.0, format!("energy_inequality[{t}]: min slack {s:.6e} >= 0")),
            Err(e) => line(false, format!("energy_inequality[{t}]: {e}")),
        }
    }
    for (ok, what) in &lines {
        let _ = writeln!(text, "{} {what}", if *ok { "PASS" } else { "FAIL" });
    }
    let failures = lines.iter().filter(|(ok, _)| !ok).count();
    Ok(Report { text, failures })
}

fn collect_csv(root: &Path, dir: &Path, out: &mut Vec<String>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            collect_csv(root, &p, out);
        } else if p.extension().is_some_and(|x| x == "csv") {
            if let Ok(rel) = p.strip_prefix(root) {
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
    }
}

/// Minimum per-step slack recomputed from the columns of a step table.
fn step_slack(path: &Path, rel: f64) -> Result<f64, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("missing column {name}"));
    let idx = [col("energy")?, col("energy_prev")?, col("dissipation")?, col("load_work")?, col("load_work_prev")?];
    let mut min = f64::INFINITY;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let v: Vec<f64> = idx
            .iter()
            .map(|&i| rec.get(i).and_then(|s| s.parse().ok()).ok_or("unparsable value".to_string()))
            .collect::<Result<_, _>>()?;
        let lhs = v[0] + v[2] - v[3];
        let rhs = v[1] - v[4] + rel * (1.0 + v[1].abs());
        min = min.min(rhs - lhs);
    }
    Ok(min)
}
