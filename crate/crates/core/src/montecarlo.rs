//! Population table for the three benchmark designs and coverage
//! experiments for the confidence sets.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{attenuation_kappa, reduced_form_qte};
use crate::dgp::{population_joint, sample_dataset, QuantileFamily, StructuralModel};
use crate::error::{Error, Result};
use crate::identify::identified_set;
use crate::inference::{InferenceConfig, InferenceEngine};
use crate::moments::build_moment_spec;
use crate::rng::{domain, SeedStream};

pub const DESIGN_TAU: f64 = 0.5;
pub const TABLE_GRID_STEP: f64 = 0.005;
/// Replication count of full-scale coverage runs.
pub const FULL_SCALE_REPS: usize = 2000;
pub const DESK_SCALE_REPS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub id: u8,
    pub rho: f64,
    pub gamma: f64,
}

impl Design {
    pub fn get(id: u8) -> Result<Design> {
        let (rho, gamma) = match id {
            1 => (0.0, 0.5),
            2 => (0.0, 0.25),
            3 => (0.5, 0.25),
            _ => return Err(Error::config(format!("unknown design {id}; expected 1, 2 or 3"))),
        };
        Ok(Design { id, rho, gamma })
    }

    pub fn all() -> [Design; 3] {
        [1, 2, 3].map(|id| Design::get(id).expect("known design"))
    }

    pub fn model(&self) -> StructuralModel {
        StructuralModel::new(QuantileFamily::SqrtLinear, self.rho, self.gamma, 0.25, 0.25).expect("valid design")
    }
}

/// Population quantities for one model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PopulationSummary {
    pub design: Option<u8>,
    pub tau: f64,
    pub delta_q: f64,
    pub delta_rf: f64,
    pub kappa: Option<f64>,
    pub identified_set: Option<[f64; 2]>,
    pub grid_step: f64,
    pub feasible_count: usize,
}

pub fn population_summary(model: &StructuralModel, tau: f64, grid_step: f64, design: Option<u8>) -> Result<PopulationSummary> {
    let pop = population_joint(model)?;
    let attenuation = attenuation_kappa(model, tau)?;
    let delta_rf = reduced_form_qte(&pop, tau)?;
    let set = identified_set(&pop, tau, model.outcome_range(), grid_step)?;
    Ok(PopulationSummary {
        design,
        tau,
        delta_q: attenuation.delta_q,
        delta_rf,
        kappa: attenuation.kappa,
        identified_set: set.theta_interval.map(|(a, b)| [a, b]),
        grid_step,
        feasible_count: set.feasible_count,
    })
}

/// Structural QTE, reduced-form QTE and identified θ-interval for designs 1 to 3.
pub fn reproduce_table1() -> Result<Vec<PopulationSummary>> {
    Design::all()
        .iter()
        .map(|d| population_summary(&d.model(), DESIGN_TAU, TABLE_GRID_STEP, Some(d.id)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageCurve {
    pub design: u8,
    pub thetas: Vec<f64>,
    pub coverage: Vec<f64>,
    pub accept_counts: Vec<usize>,
    pub reps: usize,
    pub n: usize,
    pub alpha: f64,
    /// SHA-256 of the full experiment configuration.
    pub fingerprint: String,
}

impl CoverageCurve {
    /// `theta,coverage,reps,n,alpha,design,fingerprint`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["theta", "coverage", "reps", "n", "alpha", "design", "fingerprint"])?;
        for (t, c) in self.thetas.iter().zip(&self.coverage) {
            w.serialize((t, c, self.reps, self.n, self.alpha, self.design, &self.fingerprint))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct ExperimentKey<'a> {
    design: &'a Design,
    n: usize,
    reps: usize,
    thetas: &'a [f64],
    config: &'a InferenceConfig,
    version: &'static str,
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn fingerprint(key: &ExperimentKey) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(key)?))
}

/// Acceptance indicators of one replication at every θ.
fn replication(design: &Design, n: usize, thetas: &[f64], config: &InferenceConfig, r: usize) -> Result<Vec<bool>> {
    let stream = SeedStream::new(config.seed).derive(domain::REPLICATION, r as u64);
    let data = sample_dataset(&design.model(), n, stream.derive(domain::DATA, 0).seed())?;
    let spec = build_moment_spec(&data, DESIGN_TAU, config.n_bins)?;
    let local = InferenceConfig {
        seed: stream.derive(domain::BOOTSTRAP, 0).seed(),
        ..*config
    };
    let engine = InferenceEngine::new(&data, &spec, &local)?;
    thetas.iter().map(|&t| engine.test(t).map(|r| !r.reject)).collect()
}

/// Coverage of the confidence set at each θ over `reps` simulated datasets;
/// `config.seed` is the root of every replication's streams.
pub fn run_coverage(design: &Design, n: usize, reps: usize, thetas: &[f64], config: &InferenceConfig) -> Result<CoverageCurve> {
    if reps < 1 {
        return Err(Error::config("at least one replication is required"));
    }
    if thetas.is_empty() {
        return Err(Error::config("empty theta grid"));
    }
    config.validate()?;
    let accepted = (0..reps)
        .into_par_iter()
        .map(|r| replication(design, n, thetas, config, r))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0usize; thetas.len()];
    for row in &accepted {
        for (c, &a) in counts.iter_mut().zip(row) {
            *c += a as usize;
        }
    }
    let key = ExperimentKey {
        design,
        n,
        reps,
        thetas,
        config,
        version: env!("CARGO_PKG_VERSION"),
    };
    Ok(CoverageCurve {
        design: design.id,
        thetas: thetas.to_vec(),
        coverage: counts.iter().map(|&c| c as f64 / reps as f64).collect(),
        accept_counts: counts,
        reps,
        n,
        alpha: config.alpha,
        fingerprint: fingerprint(&key)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn designs_match_the_table() {
        let d = Design::all();
        assert_eq!((d[0].rho, d[0].gamma), (0.0, 0.5));
        assert_eq!((d[1].rho, d[1].gamma), (0.0, 0.25));
        assert_eq!((d[2].rho, d[2].gamma), (0.5, 0.25));
        assert!(Design::get(4).is_err());
        let m = d[2].model();
        assert_eq!((m.p0, m.p1), (0.25, 0.25));
        assert_eq!(m.q_family, QuantileFamily::SqrtLinear);
    }

    #[test]
    fn single_replication_curve_is_binary_and_reproducible() {
        let config = InferenceConfig {
            bootstrap_reps: 100,
            ..InferenceConfig::new(17)
        };
        let design = Design::get(2).unwrap();
        let thetas = [0.0, 0.2, 0.6];
        let a = run_coverage(&design, 300, 1, &thetas, &config).unwrap();
        assert!(a.coverage.iter().all(|&c| c == 0.0 || c == 1.0));
        let b = run_coverage(&design, 300, 1, &thetas, &config).unwrap();
        assert_eq!(a, b);
        let other = run_coverage(&design, 300, 1, &thetas, &InferenceConfig { alpha: 0.2, ..config }).unwrap();
        assert_ne!(a.fingerprint, other.fingerprint);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta,coverage,reps,n,alpha,design,fingerprint\n"));
        assert_eq!(text.lines().count(), 4);
        assert!(run_coverage(&design, 300, 0, &thetas, &config).is_err());
    }
}
