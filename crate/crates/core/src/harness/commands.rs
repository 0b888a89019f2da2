//! The harness commands. Each run writes its branch files and a manifest
//! into `<out>/<command>_<preset>_<hash>/`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::envelope::fold_lambdas;
use super::oracle::grid_validate;
use super::output::{branch_file_name, config_hash, format_float, run_directory, write_branch, BranchSummary, Manifest};
use super::RunConfig;
use crate::continuation::{
    compute_margins_from, expand_uncertainty, locate_critical_level, propagate_margins, reference_frc, seed_orbits,
    Branch, Family, MarginRun, MarginalPoint,
};
use crate::error::{Error, Result};
use crate::models::{linear_natural_frequencies, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Frc,
    Expand,
    Propagate,
    Margins,
    GridValidate,
    IsolaScan,
    Natfreq,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Frc => "frc",
            Command::Expand => "expand",
            Command::Propagate => "propagate",
            Command::Margins => "margins",
            Command::GridValidate => "grid-validate",
            Command::IsolaScan => "isola-scan",
            Command::Natfreq => "natfreq",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output root; the configuration's `output_dir` when `None`.
    pub out: Option<PathBuf>,
    /// Marginal points saved by `expand`, used by `propagate`.
    pub marginal: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// What a command produced before the manifest is assembled.
#[derive(Default)]
struct Artifacts {
    branches: Vec<BranchSummary>,
    diagnostics: Vec<String>,
    summary: Value,
}

impl Artifacts {
    fn write(&mut self, dir: &Path, sub: Option<&str>, branch: &Branch, model: &SystemModel) -> Result<()> {
        let target = match sub {
            Some(s) => dir.join(s),
            None => dir.to_path_buf(),
        };
        fs::create_dir_all(&target)?;
        write_branch(&target, branch, &model.uncertainty.names())?;
        let name = match sub {
            Some(s) => format!("{s}/{}", branch_file_name(branch)),
            None => branch_file_name(branch),
        };
        self.branches.push(BranchSummary::new(&name, branch));
        Ok(())
    }
}

/// Run `command`. A manifest is written whether or not the command
/// succeeds; numerical failures are recorded in it and returned.
pub fn execute(command: Command, config: &RunConfig, options: &RunOptions) -> Result<Outcome> {
    config.validate()?;
    let model = config.system_model()?;
    let root = options.out.clone().unwrap_or_else(|| PathBuf::from(&config.output_dir));
    let dir = run_directory(&root, command.as_str(), config);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let start = Instant::now();
    let mut artifacts = Artifacts::default();
    let result = match command {
        Command::Frc => frc(config, &model, &dir, &mut artifacts),
        Command::Expand => expand(config, &model, &dir, &mut artifacts),
        Command::Propagate => propagate(config, &model, &dir, options, &mut artifacts),
        Command::Margins => margins(config, &model, &dir, &mut artifacts),
        Command::GridValidate => grid(config, &model, &dir, &mut artifacts),
        Command::IsolaScan => isola(config, &model, &dir, &mut artifacts),
        Command::Natfreq => natfreq(&model, &mut artifacts),
    };
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => {
            artifacts.diagnostics.push(e.to_string());
            "failed".to_string()
        }
    };
    let manifest = Manifest {
        command: command.as_str().to_string(),
        preset: config.name(),
        config_hash: config_hash(command.as_str(), config),
        config: config.clone(),
        status,
        wall_time_s: start.elapsed().as_secs_f64(),
        branches: artifacts.branches,
        diagnostics: artifacts.diagnostics,
        summary: artifacts.summary,
    };
    manifest.write(&dir)?;
    result.map(|()| Outcome { dir, manifest })
}

fn frc(config: &RunConfig, model: &SystemModel, dir: &Path, out: &mut Artifacts) -> Result<()> {
    let branch = reference_frc(model, &config.margins)?;
    out.write(dir, None, &branch, model)?;
    out.summary = json!({
        "points": branch.points.len(),
        "termination": branch.termination.as_str(),
        "folds": fold_lambdas(&branch),
    });
    Ok(())
}

fn expand(config: &RunConfig, model: &SystemModel, dir: &Path, out: &mut Artifacts) -> Result<()> {
    let reference = reference_frc(model, &config.margins)?;
    let mut marginal: Vec<MarginalPoint> = Vec::new();
    let mut per_seed = Vec::new();
    let mut id = 0;
    for p in seed_orbits(&reference, &config.margins) {
        let e = expand_uncertainty(model, p, config.radius, &config.margins)?;
        for mut b in e.branches {
            b.id = id;
            id += 1;
            out.write(dir, None, &b, model)?;
        }
        per_seed.push(json!({"lambda": e.lambda, "reference_metric": p.metric, "marginal": e.marginal.len()}));
        marginal.extend(e.marginal);
    }
    fs::write(dir.join("marginal_points.json"), serde_json::to_string_pretty(&marginal)? + "\n")?;
    out.summary = json!({"radius": config.radius, "seeds": per_seed, "marginal_points": marginal.len()});
    Ok(())
}

fn propagate(config: &RunConfig, model: &SystemModel, dir: &Path, options: &RunOptions, out: &mut Artifacts) -> Result<()> {
    let marginal: Vec<MarginalPoint> = match &options.marginal {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => {
            return Err(Error::Config(
                "propagate needs the marginal points written by `expand` (--marginal <file>)".into(),
            ))
        }
    };
    if marginal.is_empty() {
        return Err(Error::Config("no marginal points to propagate".into()));
    }
    let radius = config.radius;
    if let Some(m) = marginal.iter().find(|m| (m.point.r - radius).abs() > 1e-6 * radius.max(1e-12)) {
        return Err(Error::Config(format!(
            "marginal point at lambda = {} has radius {}, configuration has {radius}",
            m.point.lambda, m.point.r
        )));
    }
    let propagation = propagate_margins(model, &marginal, radius, &config.margins)?;
    for b in &propagation.branches {
        out.write(dir, None, b, model)?;
    }
    out.summary = json!({
        "radius": radius,
        "branches": propagation.branches.len(),
        "duplicates": propagation.duplicates,
        "failures": propagation.failures,
    });
    Ok(())
}

fn run_summary(run: &MarginRun) -> Value {
    json!({
        "radius": run.propagation.radius,
        "branches": run.propagation.branches.len(),
        "duplicates": run.propagation.duplicates,
        "failures": run.propagation.failures,
        "closed_positive": run.has_closed_loop(Family::Positive),
        "closed_negative": run.has_closed_loop(Family::Negative),
        "expansion_seeds": run.expansions.iter().map(|e| e.lambda).collect::<Vec<_>>(),
    })
}

fn radius_dir(r: f64) -> String {
    format!("R{r}")
}

fn margins(config: &RunConfig, model: &SystemModel, dir: &Path, out: &mut Artifacts) -> Result<()> {
    let reference = reference_frc(model, &config.margins)?;
    out.write(dir, None, &reference, model)?;
    let levels = config.levels();
    let nested = levels.len() > 1;
    let mut summaries = Vec::new();
    for r in levels {
        let run = compute_margins_from(model, &reference, r, &config.margins)?;
        if run.propagation.branches.is_empty() {
            return Err(Error::EmptyBranch);
        }
        let sub = nested.then(|| radius_dir(r));
        for b in &run.propagation.branches {
            out.write(dir, sub.as_deref(), b, model)?;
        }
        if run.propagation.failures > 0 {
            out.diagnostics
                .push(format!("R = {r}: {} marginal points failed to propagate", run.propagation.failures));
        }
        summaries.push(run_summary(&run));
    }
    out.summary = json!({ "runs": summaries });
    Ok(())
}

fn grid(config: &RunConfig, model: &SystemModel, dir: &Path, out: &mut Artifacts) -> Result<()> {
    let reference = reference_frc(model, &config.margins)?;
    let run = compute_margins_from(model, &reference, config.radius, &config.margins)?;
    for b in &run.propagation.branches {
        out.write(dir, None, b, model)?;
    }
    let v = grid_validate(
        model,
        &run.propagation.branches,
        Some(&reference),
        config.radius,
        &config.margins,
        &config.grid,
    )?;
    let mut table = String::from("lambda,margin_lower,margin_upper,sample_lower,sample_upper\n");
    for k in 0..v.margins.len() {
        let row = [v.margins.center(k), v.margins.lower[k], v.margins.upper[k], v.samples.lower[k], v.samples.upper[k]];
        let cells: Vec<String> = row.iter().map(|x| format_float(*x)).collect();
        writeln!(table, "{}", cells.join(",")).expect("writing to a string");
    }
    fs::write(dir.join("envelope.csv"), table)?;
    out.summary = json!({ "margins": run_summary(&run), "grid": v.report });
    let fraction = v.report.failure_fraction();
    if fraction > config.grid.max_failure_fraction {
        return Err(Error::Validation(format!(
            "{} of {} sample curves failed ({:.1}%)",
            v.report.failures,
            v.report.samples,
            100.0 * fraction
        )));
    }
    Ok(())
}

fn isola(config: &RunConfig, model: &SystemModel, dir: &Path, out: &mut Artifacts) -> Result<()> {
    let reference = reference_frc(model, &config.margins)?;
    let mut scan = Vec::new();
    for &r in &config.isola.scan {
        let run = compute_margins_from(model, &reference, r, &config.margins)?;
        for b in &run.propagation.branches {
            out.write(dir, Some(&radius_dir(r)), b, model)?;
        }
        scan.push(run_summary(&run));
    }
    let (lo, hi) = config.isola.bracket;
    let critical = locate_critical_level(model, &config.margins, lo, hi, config.isola.tolerance)?;
    out.summary = json!({ "scan": scan, "critical": critical });
    Ok(())
}

fn natfreq(model: &SystemModel, out: &mut Artifacts) -> Result<()> {
    let p = &model.reference.values;
    let freqs = match model.dynamics.name() {
        "two_mode" => {
            let (a, b) = linear_natural_frequencies(p)?;
            vec![a, b]
        }
        "duffing" => {
            let (m, k) = (model.reference.get("m")?, model.reference.get("k")?);
            if !(m > 0.0 && k > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            vec![(k / m).sqrt()]
        }
        other => return Err(Error::Config(format!("no natural frequencies for `{other}`"))),
    };
    out.summary = json!({ "natural_frequencies": freqs });
    Ok(())
}
