use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use misivqr::dgp::{population_joint, sample_dataset};
use misivqr::identify::{construct_perturbation, identified_set, verify_observational_equivalence};
use misivqr::inference::{confidence_interval, InferenceConfig, KappaRule, ThetaGrid};
use misivqr::moments::build_moment_spec;
use misivqr::montecarlo::{population_summary, run_coverage, FULL_SCALE_REPS};
use misivqr::{Dataset, Design, StructuralModel};
use serde::Serialize;
use serde_json::Value;

use crate::config::Flags;
use crate::manifest::{digest_file, manifest_path, RunManifest};
use crate::CliError;

fn require<T: Clone>(value: &Option<T>, flag: &str) -> Result<T, CliError> {
    value.clone().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// Writes through `write` to `path`, or to standard output.
fn emit(path: &Option<PathBuf>, write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            write(&mut w)?;
            w.flush().map_err(|e| io_err(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush().map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn emit_json<T: Serialize>(path: &Option<PathBuf>, manifest: &RunManifest, body: &T) -> Result<(), CliError> {
    let mut value = serde_json::to_value(body).expect("result serializes");
    if let Value::Object(map) = &mut value {
        map.insert("manifest_hash".into(), Value::String(manifest.manifest_hash.clone()));
    }
    emit(path, |w| {
        let text = serde_json::to_string_pretty(&value).expect("result serializes");
        writeln!(w, "{text}").map_err(|e| CliError::Io(e.to_string()))
    })
}

/// Records digests of the written files and stores the manifest when there
/// is somewhere to put it.
fn finish(mut manifest: RunManifest, flags: &Flags) -> Result<(), CliError> {
    let Some(path) = manifest_path(flags) else { return Ok(()) };
    for (key, file) in [("out", &flags.out), ("csv", &flags.csv), ("summary", &flags.summary)] {
        if let Some(p) = file {
            manifest.outputs.insert(key.to_string(), digest_file(p)?);
        }
    }
    manifest.write(&path)
}

pub fn dispatch(command: &str, flags: &Flags) -> Result<(), CliError> {
    let manifest = RunManifest::new(command, flags);
    match command {
        "simulate" => simulate(flags, manifest),
        "population" => population(flags, manifest),
        "identify" => identify(flags, manifest),
        "infer" => infer(flags, manifest),
        "coverage" => coverage(flags, manifest),
        "perturb" => perturb(flags, manifest),
        other => Err(CliError::Usage(format!("unknown command {other}"))),
    }
}

fn simulate(flags: &Flags, manifest: RunManifest) -> Result<(), CliError> {
    let model = flags.model()?;
    let n = require(&flags.n, "n")?;
    let seed = flags.require_seed()?;
    let out = require(&flags.out, "out")?;
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let data = sample_dataset(&model, n, seed)?;
    let mut w = create(&out)?;
    data.write_csv(&mut w)?;
    w.flush().map_err(|e| io_err(&out, e))?;
    drop(w);
    finish(manifest, flags)
}

#[derive(Serialize)]
struct PopulationReport {
    model: StructuralModel,
    #[serde(flatten)]
    summary: misivqr::montecarlo::PopulationSummary,
}

fn population(flags: &Flags, manifest: RunManifest) -> Result<(), CliError> {
    let model = flags.model()?;
    let summary = population_summary(&model, require(&flags.tau, "tau")?, require(&flags.grid_step, "grid-step")?, flags.design)?;
    emit_json(&flags.out, &manifest, &PopulationReport { model, summary })?;
    finish(manifest, flags)
}

#[derive(Serialize)]
struct IdentifyReport {
    model: StructuralModel,
    #[serde(flatten)]
    summary: misivqr::identify::IdentifiedSetSummary,
    diagnostics: Option<String>,
}

fn identify(flags: &Flags, manifest: RunManifest) -> Result<(), CliError> {
    let model = flags.model()?;
    let pop = population_joint(&model)?;
    let (lo, hi) = model.outcome_range();
    let window = (flags.window_lo.unwrap_or(lo), flags.window_hi.unwrap_or(hi));
    let set = identified_set(&pop, require(&flags.tau, "tau")?, window, require(&flags.grid_step, "grid-step")?)?;
    if let Some(path) = &flags.csv {
        let mut w = create(path)?;
        set.write_feasible_csv(&mut w)?;
    }
    let report = IdentifyReport {
        model,
        summary: set.summary(),
        diagnostics: set.diagnostics.clone(),
    };
    emit_json(&flags.out, &manifest, &report)?;
    finish(manifest, flags)
}

fn inference_config(flags: &Flags, seed: u64) -> Result<InferenceConfig, CliError> {
    Ok(InferenceConfig {
        alpha: require(&flags.alpha, "alpha")?,
        bootstrap_reps: require(&flags.bootstrap, "bootstrap")?,
        kappa: flags.kappa.map_or(KappaRule::SqrtLogN, |value| KappaRule::Fixed { value }),
        theta_grid: ThetaGrid {
            lo: require(&flags.theta_lo, "theta-lo")?,
            hi: require(&flags.theta_hi, "theta-hi")?,
            step: require(&flags.theta_step, "theta-step")?,
        },
        n_bins: require(&flags.bins, "bins")?,
        ..InferenceConfig::new(seed)
    })
}

#[derive(Serialize)]
struct InferReport {
    n: usize,
    tau: f64,
    config: InferenceConfig,
    #[serde(flatten)]
    set: misivqr::inference::ConfidenceSet,
}

fn infer(flags: &Flags, mut manifest: RunManifest) -> Result<(), CliError> {
    let path = require(&flags.data, "data")?;
    let seed = flags.require_seed()?;
    let tau = require(&flags.tau, "tau")?;
    let config = inference_config(flags, seed)?;
    config.validate()?;
    let data = Dataset::read_csv(File::open(&path).map_err(|e| io_err(&path, e))?)?;
    manifest.inputs.push(digest_file(&path)?);
    let spec = build_moment_spec(&data, tau, config.n_bins)?;
    let set = confidence_interval(&data, &spec, &config)?;
    if let Some(csv) = &flags.csv {
        let mut w = create(csv)?;
        set.write_results_csv(&mut w)?;
    }
    let report = InferReport {
        n: data.n(),
        tau,
        config,
        set,
    };
    emit_json(&flags.out, &manifest, &report)?;
    finish(manifest, flags)
}

#[derive(Serialize)]
struct CoverageReport<'a> {
    config: InferenceConfig,
    curve: &'a misivqr::CoverageCurve,
}

fn coverage(flags: &Flags, manifest: RunManifest) -> Result<(), CliError> {
    let design = Design::get(require(&flags.design, "design")?)?;
    let seed = flags.require_seed()?;
    let reps = require(&flags.reps, "reps")?;
    let n = require(&flags.n, "n")?;
    if reps >= FULL_SCALE_REPS {
        eprintln!("warning: {reps} replications with {} bootstrap draws each can take hours", flags.bootstrap.unwrap_or(0));
    }
    let config = inference_config(flags, seed)?;
    let thetas = config.theta_grid.points();
    let curve = run_coverage(&design, n, reps, &thetas, &config)?;
    emit(&flags.out, |w| curve.write_csv(w).map_err(CliError::from))?;
    if flags.summary.is_some() {
        emit_json(&flags.summary, &manifest, &CoverageReport { config, curve: &curve })?;
    }
    finish(manifest, flags)
}

#[derive(Serialize)]
struct PerturbReport {
    model: StructuralModel,
    epsilon: f64,
    d_bar: u8,
    tau: f64,
    p_tilde: [f64; 2],
    /// t(τ)
    reparam_at_tau: f64,
    structural_quantile: f64,
    perturbed_quantile: f64,
    sup_distance: f64,
}

fn perturb(flags: &Flags, manifest: RunManifest) -> Result<(), CliError> {
    let model = flags.model()?;
    let eps = require(&flags.eps, "eps")?;
    let d_bar = require(&flags.d_bar, "d-bar")?;
    let tau = require(&flags.tau, "tau")?;
    let perturbed = construct_perturbation(&model, eps, d_bar, tau)?;
    let pop = population_joint(&model)?;
    let report = PerturbReport {
        model,
        epsilon: eps,
        d_bar,
        tau,
        p_tilde: [perturbed.p_tilde.0, perturbed.p_tilde.1],
        reparam_at_tau: perturbed.reparam(tau),
        structural_quantile: model.structural_quantile(d_bar, tau)?,
        perturbed_quantile: perturbed.perturbed_quantile(d_bar, tau)?,
        sup_distance: verify_observational_equivalence(&pop, &perturbed),
    };
    emit_json(&flags.out, &manifest, &report)?;
    finish(manifest, flags)
}
