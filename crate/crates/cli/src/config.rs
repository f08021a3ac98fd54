//! Run options shared by every subcommand, and their merge with a JSON
//! config file.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use misivqr::{QuantileFamily, StructuralModel};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SqrtLinear,
    Square,
    Affine,
}

/// Every option a run can carry. A config file uses the same names with
/// underscores; flags given on the command line win.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    /// Benchmark design 1, 2 or 3; explicit model flags override its values.
    #[arg(long)]
    pub design: Option<u8>,
    #[arg(long, value_enum)]
    pub family: Option<Family>,
    /// Intercept of the affine treated arm.
    #[arg(long)]
    pub affine_a: Option<f64>,
    /// Slope of the affine treated arm.
    #[arg(long)]
    pub affine_b: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub p0: Option<f64>,
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Sample size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input dataset (`y,d,z` CSV).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap replications.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Monte Carlo replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Run the full-scale replication count (slow).
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub full_scale: Option<bool>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta_hi: Option<f64>,
    #[arg(long)]
    pub theta_step: Option<f64>,
    /// Outcome bins per instrument value for the inequality moments.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Moment-selection threshold; √(ln n) when absent.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Step of the (y0, y1) grid for identified sets.
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub window_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub window_hi: Option<f64>,
    /// Perturbation size.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Treatment arm whose structural quantile is perturbed.
    #[arg(long)]
    pub d_bar: Option<u8>,
    /// Primary output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Secondary CSV output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON summary output.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Worker threads; falls back to MISIVQR_THREADS, then all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Options that name files written by the run.
pub const OUTPUT_KEYS: [&str; 4] = ["out", "csv", "summary", "manifest"];
const MODEL_KEYS: [&str; 8] = ["design", "family", "affine_a", "affine_b", "rho", "gamma", "p0", "p1"];

pub fn allowed_keys(command: &str) -> Vec<&'static str> {
    let mut keys: Vec<&'static str> = vec!["threads", "out", "manifest"];
    let extra: &[&'static str] = match command {
        "simulate" => &["n", "seed"],
        "population" => &["tau", "grid_step"],
        "identify" => &["tau", "grid_step", "window_lo", "window_hi", "csv"],
        "infer" => &[
            "data", "tau", "alpha", "seed", "bootstrap", "theta_lo", "theta_hi", "theta_step", "bins", "kappa", "csv",
        ],
        "coverage" => &[
            "design", "n", "reps", "full_scale", "alpha", "seed", "bootstrap", "theta_lo", "theta_hi", "theta_step",
            "bins", "kappa", "summary",
        ],
        "perturb" => &["eps", "d_bar", "tau"],
        _ => &[],
    };
    if matches!(command, "simulate" | "population" | "identify" | "perturb") {
        keys.extend(MODEL_KEYS);
    }
    keys.extend(extra);
    keys
}

fn to_object(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(map) => map.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// `base` overlaid with the options set in `flags`.
pub fn merge(base: Option<Value>, flags: &Flags) -> Result<Flags, CliError> {
    let mut merged = match base {
        Some(Value::Object(map)) => map.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        Some(_) => return Err(CliError::Usage("config file must hold a JSON object".into())),
        None => Map::new(),
    };
    let overlay = to_object(serde_json::to_value(flags).expect("flags serialize"));
    merged.extend(overlay);
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
}

impl Flags {
    /// Names of the options that are set.
    pub fn set_keys(&self) -> Vec<String> {
        to_object(serde_json::to_value(self).expect("flags serialize")).keys().cloned().collect()
    }

    pub fn check_allowed(&self, command: &str) -> Result<(), CliError> {
        let allowed = allowed_keys(command);
        for key in self.set_keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "option --{} does not apply to `{command}`",
                    key.replace('_', "-")
                )));
            }
        }
        Ok(())
    }

    /// The options that determine results: everything except output paths
    /// and the thread count.
    pub fn run_spec(&self) -> Value {
        let mut map = to_object(serde_json::to_value(self).expect("flags serialize"));
        for key in OUTPUT_KEYS.iter().chain(["threads"].iter()) {
            map.remove(*key);
        }
        Value::Object(map)
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("--seed is required; runs are never seeded implicitly".into()))
    }

    /// Structural model: a benchmark design (or the design-2 defaults) with
    /// explicit model options applied on top.
    pub fn model(&self) -> Result<StructuralModel, CliError> {
        let base = match self.design {
            Some(id) => misivqr::Design::get(id)?.model(),
            None => misivqr::Design::get(2)?.model(),
        };
        let family = match self.family {
            None => {
                if self.affine_a.is_some() || self.affine_b.is_some() {
                    return Err(CliError::Usage("--affine-a/--affine-b require --family affine".into()));
                }
                base.q_family
            }
            Some(Family::SqrtLinear) => QuantileFamily::SqrtLinear,
            Some(Family::Square) => QuantileFamily::Square,
            Some(Family::Affine) => QuantileFamily::Affine {
                a: self.affine_a.unwrap_or(0.0),
                b: self.affine_b.unwrap_or(1.0),
            },
        };
        let model = StructuralModel {
            q_family: family,
            rho: self.rho.unwrap_or(base.rho),
            gamma: self.gamma.unwrap_or(base.gamma),
            p0: self.p0.unwrap_or(base.p0),
            p1: self.p1.unwrap_or(base.p1),
            ..base
        };
        model.validate()?;
        Ok(model)
    }

    /// Fills every default the command would use, so the recorded
    /// configuration replays without relying on defaults.
    pub fn resolved(&self, command: &str) -> Flags {
        let mut f = self.clone();
        let uses = |k: &str| allowed_keys(command).contains(&k);
        if uses("tau") {
            f.tau.get_or_insert(0.5);
        }
        if uses("alpha") {
            f.alpha.get_or_insert(0.10);
        }
        if uses("bootstrap") {
            f.bootstrap.get_or_insert(500);
        }
        if uses("bins") {
            f.bins.get_or_insert(misivqr::moments::DEFAULT_BINS);
        }
        if uses("theta_step") {
            let g = misivqr::inference::ThetaGrid::default();
            f.theta_lo.get_or_insert(g.lo);
            f.theta_hi.get_or_insert(g.hi);
            f.theta_step.get_or_insert(g.step);
        }
        if uses("grid_step") {
            f.grid_step.get_or_insert(misivqr::montecarlo::TABLE_GRID_STEP);
        }
        if uses("d_bar") {
            f.d_bar.get_or_insert(0);
        }
        if command == "coverage" {
            f.n.get_or_insert(1000);
            let reps = if f.full_scale == Some(true) {
                misivqr::montecarlo::FULL_SCALE_REPS
            } else {
                misivqr::montecarlo::DESK_SCALE_REPS
            };
            f.reps.get_or_insert(reps);
        }
        if command == "simulate" || command == "population" || command == "identify" || command == "perturb" {
            if let Ok(m) = self.model() {
                // record the explicit model, not just a design label
                f.family.get_or_insert(match m.q_family {
                    QuantileFamily::SqrtLinear => Family::SqrtLinear,
                    QuantileFamily::Square => Family::Square,
                    QuantileFamily::Affine { .. } => Family::Affine,
                });
                if let QuantileFamily::Affine { a, b } = m.q_family {
                    f.affine_a = Some(a);
                    f.affine_b = Some(b);
                }
                f.rho = Some(m.rho);
                f.gamma = Some(m.gamma);
                f.p0 = Some(m.p0);
                f.p1 = Some(m.p1);
            }
        }
        f
    }
}
