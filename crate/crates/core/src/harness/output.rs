//! CSV branch files and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::continuation::{Branch, ContinuationPoint, Family};
use crate::error::{Error, Result};

/// Decimal representation with 17 significant digits, which round-trips
/// every finite `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn family_tag(family: Option<Family>) -> &'static str {
    match family {
        Some(Family::Positive) => "pos",
        Some(Family::Negative) => "neg",
        None => "ref",
    }
}

pub fn branch_file_name(branch: &Branch) -> String {
    format!("branch_{}_{}.csv", family_tag(branch.family), branch.id)
}

pub fn csv_header(eps_names: &[String], n_states: usize) -> String {
    let mut cols: Vec<String> = ["branch_id", "family", "step", "lambda", "r", "period"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend(eps_names.iter().map(|n| format!("eps_{n}")));
    cols.extend((0..n_states).map(|i| format!("x0_{i}")));
    for c in ["metric", "abs_metric", "arclength", "lambda_rate", "metric_rate"] {
        cols.push(c.into());
    }
    cols.join(",")
}

/// Render a branch as CSV text, one row per point.
pub fn branch_csv(branch: &Branch, eps_names: &[String]) -> Result<String> {
    let first = branch.points.first().ok_or(Error::EmptyBranch)?;
    let n_states = first.x0.len();
    let family = branch.family.map_or("0", |f| f.symbol());
    let mut out = csv_header(eps_names, n_states);
    out.push('\n');
    for (step, p) in branch.points.iter().enumerate() {
        if p.x0.len() != n_states || p.eps.len() != eps_names.len() {
            return Err(Error::Precondition(format!("point {step} has inconsistent dimensions")));
        }
        write!(out, "{},{family},{step}", branch.id).expect("writing to a string");
        for v in [p.lambda, p.r, p.period]
            .into_iter()
            .chain(p.eps.iter().copied())
            .chain(p.x0.iter().copied())
            .chain([p.metric, p.metric.abs(), p.arclength, p.lambda_rate, p.metric_rate])
        {
            out.push(',');
            out.push_str(&format_float(v));
        }
        out.push('\n');
    }
    Ok(out)
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub branch_id: usize,
    pub family: String,
    pub step: usize,
    pub point: ContinuationPoint,
}

/// Parse CSV text written by [`branch_csv`].
pub fn parse_branch_csv(text: &str) -> Result<Vec<BranchRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("missing header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let m = cols.iter().filter(|c| c.starts_with("eps_")).count();
    let n = cols.iter().filter(|c| c.starts_with("x0_")).count();
    if cols.len() != 11 + m + n {
        return Err(Error::Parse(format!("unexpected header `{header}`")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Parse(format!("row has {} fields, expected {}", f.len(), cols.len())));
            }
            let values = f[3..].iter().map(|s| num(s)).collect::<Result<Vec<f64>>>()?;
            Ok(BranchRow {
                branch_id: int(f[0])?,
                family: f[1].to_string(),
                step: int(f[2])?,
                point: ContinuationPoint {
                    lambda: values[0],
                    r: values[1],
                    period: values[2],
                    eps: values[3..3 + m].to_vec(),
                    x0: values[3 + m..3 + m + n].to_vec(),
                    metric: values[3 + m + n],
                    arclength: values[5 + m + n],
                    lambda_rate: values[6 + m + n],
                    metric_rate: values[7 + m + n],
                    tangent: Vec::new(),
                },
            })
        })
        .collect()
}

/// Write one branch into `dir`; nothing is written for an empty branch.
pub fn write_branch(dir: &Path, branch: &Branch, eps_names: &[String]) -> Result<PathBuf> {
    let text = branch_csv(branch, eps_names)?;
    let path = dir.join(branch_file_name(branch));
    fs::write(&path, text)?;
    Ok(path)
}

/// Content hash of the command and its effective configuration.
pub fn config_hash(command: &str, config: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(serde_json::to_string(config).expect("configuration serialises").as_bytes());
    hex::encode(h.finalize())
}

/// `<out>/<command>_<preset>_<hash prefix>`.
pub fn run_directory(out: &Path, command: &str, config: &RunConfig) -> PathBuf {
    let hash = config_hash(command, config);
    out.join(format!("{command}_{}_{}", config.name(), &hash[..12]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub file: String,
    pub id: usize,
    pub family: String,
    pub kind: String,
    pub seed_lambda: Option<f64>,
    pub termination: String,
    pub reverse_termination: Option<String>,
    pub points: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl BranchSummary {
    pub fn new(file: &str, branch: &Branch) -> Self {
        let (lambda_min, lambda_max) = branch.lambda_range();
        Self {
            file: file.to_string(),
            id: branch.id,
            family: family_tag(branch.family).to_string(),
            kind: branch.provenance.kind.clone(),
            seed_lambda: branch.provenance.seed_lambda,
            termination: branch.termination.as_str().to_string(),
            reverse_termination: branch.reverse_termination.map(|t| t.as_str().to_string()),
            points: branch.points.len(),
            lambda_min,
            lambda_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub preset: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub status: String,
    pub wall_time_s: f64,
    pub branches: Vec<BranchSummary>,
    pub diagnostics: Vec<String>,
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{Provenance, Termination};

    fn branch(points: Vec<ContinuationPoint>) -> Branch {
        Branch {
            id: 3,
            family: Some(Family::Negative),
            points,
            crossings: Vec::new(),
            termination: Termination::RangeExit,
            reverse_termination: None,
            provenance: Provenance::default(),
            arclength: 0.0,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let pts: Vec<ContinuationPoint> = (0..5)
            .map(|i| {
                let t = i as f64;
                ContinuationPoint {
                    x0: vec![0.1 + t / 3.0, -1e-300, std::f64::consts::PI, -0.0],
                    eps: vec![(t * 0.7).sin() / 7.0, 1.0 / 3.0],
                    r: 0.1,
                    period: 2.0 * std::f64::consts::PI / (0.5 + t / 9.0),
                    lambda: 0.5 + t / 9.0,
                    metric: 0.1 + t / 3.0,
                    tangent: Vec::new(),
                    arclength: t * 0.037,
                    lambda_rate: 1.0 / 9.0,
                    metric_rate: -1.0 / 7.0,
                }
            })
            .collect();
        let b = branch(pts.clone());
        let names = vec!["c1".to_string(), "F1".to_string()];
        let text = branch_csv(&b, &names).unwrap();
        assert!(text.starts_with("branch_id,family,step,lambda,r,period,eps_c1,eps_F1,x0_0"));
        let rows = parse_branch_csv(&text).unwrap();
        assert_eq!(rows.len(), 5);
        for (row, p) in rows.iter().zip(&pts) {
            assert_eq!(row.family, "-");
            assert_eq!(row.branch_id, 3);
            assert_eq!(&row.point, p);
            for (a, b) in row.point.x0.iter().zip(&p.x0) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn empty_branch_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let b = branch(Vec::new());
        assert!(matches!(write_branch(dir.path(), &b, &[]), Err(Error::EmptyBranch)));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn hash_depends_on_command_and_config() {
        let a = RunConfig::preset("two_mode_4a").unwrap();
        let mut b = a.clone();
        b.radius = 0.05;
        assert_eq!(config_hash("margins", &a), config_hash("margins", &a.clone()));
        assert_ne!(config_hash("margins", &a), config_hash("margins", &b));
        assert_ne!(config_hash("margins", &a), config_hash("frc", &a));
        let dir = run_directory(Path::new("/tmp"), "frc", &a);
        assert!(dir.to_string_lossy().contains("frc_two_mode_4a_"));
    }
}
