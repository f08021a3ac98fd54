//! Structural model, simulation design and the exact population laws it
//! implies.
//!
//! The outcome is `Y = q(D*, U)` where `q(0, u) = u` and `q(1, ·)` comes from
//! a closed family. The latent pair `(U, V)` follows a Gaussian copula with
//! correlation `rho`, treatment is `D* = 1{V ≤ π(Z)}` with
//! `π(z₀) = 0.5 − γ`, `π(z₁) = 0.5 + γ`, and the recorded treatment `D` flips
//! `D*` with probability `p_{D*}`.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bisect_increasing, gaussian_copula, gaussian_copula_du, norm_cdf};
use crate::rng::{domain, SeedStream};

/// Slack accepted when a point lies numerically on the edge of a range.
const EDGE_SLACK: f64 = 1e-12;

/// Monotone map for the treated arm; the untreated arm is always `q(0, u) = u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantileFamily {
    /// `q(1, u) = √u`.
    SqrtLinear,
    /// `q(1, u) = u²`.
    Square,
    /// `q(1, u) = a + b·u` with `b > 0`.
    Affine { a: f64, b: f64 },
}

impl QuantileFamily {
    fn treated(&self, u: f64) -> f64 {
        match *self {
            QuantileFamily::SqrtLinear => u.sqrt(),
            QuantileFamily::Square => u * u,
            QuantileFamily::Affine { a, b } => a + b * u,
        }
    }

    fn treated_inverse(&self, y: f64) -> f64 {
        match *self {
            QuantileFamily::SqrtLinear => y * y,
            QuantileFamily::Square => y.sqrt(),
            QuantileFamily::Affine { a, b } => (y - a) / b,
        }
    }

    fn treated_inverse_slope(&self, y: f64) -> f64 {
        match *self {
            QuantileFamily::SqrtLinear => 2.0 * y,
            QuantileFamily::Square => 0.5 / y.sqrt(),
            QuantileFamily::Affine { b, .. } => 1.0 / b,
        }
    }

    fn treated_range(&self) -> (f64, f64) {
        (self.treated(0.0), self.treated(1.0))
    }
}

/// Binary instrument: two labelled support points and their probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSupport {
    pub labels: [f64; 2],
    pub probs: [f64; 2],
}

impl Default for InstrumentSupport {
    fn default() -> Self {
        Self {
            labels: [0.0, 1.0],
            probs: [0.5, 0.5],
        }
    }
}

/// The full data-generating primitive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralModel {
    pub q_family: QuantileFamily,
    pub rho: f64,
    pub gamma: f64,
    #[serde(default)]
    pub z_support: InstrumentSupport,
    pub p0: f64,
    pub p1: f64,
}

fn check_arm(d_star: u8) -> Result<()> {
    if d_star > 1 {
        Err(Error::domain(format!("treatment arm must be 0 or 1, got {d_star}")))
    } else {
        Ok(())
    }
}

fn check_z(z: usize) {
    assert!(z < 2, "instrument index must be 0 or 1, got {z}");
}

impl StructuralModel {
    /// Model with the default 50/50 instrument on labels (0, 1).
    pub fn new(q_family: QuantileFamily, rho: f64, gamma: f64, p0: f64, p1: f64) -> Result<Self> {
        let model = Self {
            q_family,
            rho,
            gamma,
            z_support: InstrumentSupport::default(),
            p0,
            p1,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.rho, self.gamma, self.p0, self.p1].iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::model("parameters must be finite"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::model(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if !(-0.5..=0.5).contains(&self.gamma) {
            return Err(Error::model(format!("gamma must lie in [-0.5, 0.5], got {}", self.gamma)));
        }
        for (name, p) in [("p0", self.p0), ("p1", self.p1)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::model(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if !(self.p0 + self.p1 < 1.0) {
            return Err(Error::model(format!(
                "misclassification requires p0 + p1 < 1, got {}",
                self.p0 + self.p1
            )));
        }
        let probs = self.z_support.probs;
        if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || (probs[0] + probs[1] - 1.0).abs() > 1e-12 {
            return Err(Error::model("instrument probabilities must be positive and sum to 1"));
        }
        if self.z_support.labels[0] == self.z_support.labels[1] {
            return Err(Error::model("instrument labels must be distinct"));
        }
        if let QuantileFamily::Affine { a, b } = self.q_family {
            if !(a.is_finite() && b.is_finite() && b > 0.0) {
                return Err(Error::model("affine family needs finite a and b > 0"));
            }
        }
        Ok(())
    }

    /// π(z) = P(D* = 1 | Z = z).
    pub fn propensity(&self, z: usize) -> f64 {
        check_z(z);
        if z == 0 {
            0.5 - self.gamma
        } else {
            0.5 + self.gamma
        }
    }

    /// q(d*, u).
    pub fn structural_quantile(&self, d_star: u8, u: f64) -> Result<f64> {
        check_arm(d_star)?;
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::domain(format!("quantile index must lie in [0, 1], got {u}")));
        }
        Ok(if d_star == 0 { u } else { self.q_family.treated(u) })
    }

    /// q⁻¹(d*, y).
    pub fn structural_inverse(&self, d_star: u8, y: f64) -> Result<f64> {
        check_arm(d_star)?;
        let (lo, hi) = self.arm_range(d_star);
        if !(y >= lo - EDGE_SLACK && y <= hi + EDGE_SLACK) {
            return Err(Error::domain(format!(
                "outcome {y} outside the range [{lo}, {hi}] of arm {d_star}"
            )));
        }
        Ok(self.rank_of(d_star, y))
    }

    /// Range of `q(d*, ·)` on `[0, 1]`.
    pub fn arm_range(&self, d_star: u8) -> (f64, f64) {
        if d_star == 0 {
            (0.0, 1.0)
        } else {
            self.q_family.treated_range()
        }
    }

    /// Hull of both arms' ranges.
    pub fn outcome_range(&self) -> (f64, f64) {
        let (a0, b0) = self.arm_range(0);
        let (a1, b1) = self.arm_range(1);
        (a0.min(a1), b0.max(b1))
    }

    /// q⁻¹(d*, y) extended to the real line: 0 below the arm's range, 1 above.
    pub(crate) fn rank_of(&self, d_star: u8, y: f64) -> f64 {
        let (lo, hi) = self.arm_range(d_star);
        if y <= lo {
            0.0
        } else if y >= hi {
            1.0
        } else if d_star == 0 {
            y
        } else {
            self.q_family.treated_inverse(y).clamp(0.0, 1.0)
        }
    }

    /// d/dy q⁻¹(d*, y), zero outside the arm's range.
    pub(crate) fn rank_slope(&self, d_star: u8, y: f64) -> f64 {
        let (lo, hi) = self.arm_range(d_star);
        if y < lo || y > hi {
            0.0
        } else if d_star == 0 {
            1.0
        } else {
            self.q_family.treated_inverse_slope(y)
        }
    }

    pub(crate) fn q(&self, d_star: u8, u: f64) -> f64 {
        if d_star == 0 {
            u
        } else {
            self.q_family.treated(u)
        }
    }
}

/// One observation `(Y, D, Z)`; `z` indexes the instrument support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub d: u8,
    pub z: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<Observation>,
    /// Seed the records were simulated from; `None` for loaded data.
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(records: Vec<Observation>, seed: Option<u64>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("dataset must contain at least one observation".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if r.d > 1 || r.z > 1 || !r.y.is_finite() {
                return Err(Error::Data(format!("invalid record {i}: {r:?}")));
            }
        }
        Ok(Self { records, seed })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Writes `y,d,z` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["y", "d", "z"] {
            return Err(Error::Data(format!("expected header y,d,z, got {:?}", headers)));
        }
        let records = rdr.deserialize().collect::<std::result::Result<Vec<Observation>, _>>()?;
        Self::new(records, None)
    }

    /// Outcomes of the records with instrument index `z`.
    pub fn outcomes_in_cell(&self, z: u8) -> Vec<f64> {
        self.records.iter().filter(|r| r.z == z).map(|r| r.y).collect()
    }
}

/// Recorded treatment: flips `d_star` when `draw < p_{d_star}`.
pub fn misclassify(d_star: u8, p0: f64, p1: f64, draw: f64) -> u8 {
    let flip = if d_star == 0 { p0 } else { p1 };
    if draw < flip {
        1 - d_star
    } else {
        d_star
    }
}

fn draw_observation(model: &StructuralModel, rng: &mut impl Rng) -> (Observation, u8) {
    let z_draw: f64 = rng.random();
    let x1: f64 = rng.sample(StandardNormal);
    let x2: f64 = rng.sample(StandardNormal);
    let flip_draw: f64 = rng.random();

    let z = if z_draw < model.z_support.probs[0] { 0u8 } else { 1u8 };
    let w2 = model.rho * x1 + (1.0 - model.rho * model.rho).sqrt() * x2;
    let u = norm_cdf(x1);
    let v = norm_cdf(w2);
    let d_star = u8::from(v <= model.propensity(z as usize));
    let y = model.q(d_star, u);
    let d = misclassify(d_star, model.p0, model.p1, flip_draw);
    (Observation { y, d, z }, d_star)
}

/// Simulates `n` observations. Observation `i` draws from substream `i` of
/// the data stream under `seed`, so the result is independent of scheduling.
pub fn sample_dataset(model: &StructuralModel, n: usize, seed: u64) -> Result<Dataset> {
    Ok(sample_with_truth(model, n, seed)?.0)
}

/// Like [`sample_dataset`] but also returns the latent treatment `D*`.
pub fn sample_with_truth(model: &StructuralModel, n: usize, seed: u64) -> Result<(Dataset, Vec<u8>)> {
    model.validate()?;
    if n == 0 {
        return Err(Error::config("sample size must be at least 1"));
    }
    let stream = SeedStream::new(seed).derive(domain::DATA, 0);
    let (records, truth): (Vec<_>, Vec<_>) = (0..n as u64)
        .into_par_iter()
        .map(|i| draw_observation(model, &mut stream.rng(i)))
        .unzip();
    Ok((Dataset::new(records, Some(seed))?, truth))
}

/// Analytic laws implied by a [`StructuralModel`]. All quantities are
/// conditional on `Z = z` unless noted; `z` is the support index.
#[derive(Clone, Copy, Debug)]
pub struct PopulationDistribution {
    model: StructuralModel,
    tolerance: f64,
}

/// Builds the population laws of a validated model.
pub fn population_joint(model: &StructuralModel) -> Result<PopulationDistribution> {
    model.validate()?;
    Ok(PopulationDistribution {
        model: *model,
        tolerance: 1e-10,
    })
}

impl PopulationDistribution {
    pub fn model(&self) -> &StructuralModel {
        &self.model
    }

    /// Accuracy target for quantile inversion and identities.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn instrument_prob(&self, z: usize) -> f64 {
        self.model.z_support.probs[z]
    }

    /// P(D* = d* | Z = z).
    pub fn arm_prob(&self, d_star: u8, z: usize) -> f64 {
        let p = self.model.propensity(z);
        if d_star == 1 {
            p
        } else {
            1.0 - p
        }
    }

    /// P(U ≤ u, D* = d* | Z = z).
    pub fn latent_joint(&self, d_star: u8, u: f64, z: usize) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let c = gaussian_copula(u, self.model.propensity(z), self.model.rho).expect("validated correlation");
        if d_star == 1 {
            c
        } else {
            (u - c).max(0.0)
        }
    }

    /// F_{U|D*=d*,Z=z}(u); the zero measure when the arm is empty.
    pub fn latent_cdf(&self, d_star: u8, u: f64, z: usize) -> f64 {
        let mass = self.arm_prob(d_star, z);
        if mass <= 0.0 {
            return 0.0;
        }
        (self.latent_joint(d_star, u, z) / mass).clamp(0.0, 1.0)
    }

    /// f_{U,D*|Z=z}(u, d*).
    pub fn latent_density(&self, d_star: u8, u: f64, z: usize) -> f64 {
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        let g1 = gaussian_copula_du(u, self.model.propensity(z), self.model.rho);
        if d_star == 1 {
            g1
        } else {
            1.0 - g1
        }
    }

    /// P(Y ≤ y, D* = d* | Z = z).
    pub fn outcome_arm_joint(&self, d_star: u8, y: f64, z: usize) -> f64 {
        self.latent_joint(d_star, self.model.rank_of(d_star, y), z)
    }

    /// F_{Y|D*=d*,Z=z}(y); the zero measure when the arm is empty.
    pub fn outcome_arm_cdf(&self, d_star: u8, y: f64, z: usize) -> f64 {
        self.latent_cdf(d_star, self.model.rank_of(d_star, y), z)
    }

    /// f_{Y,D*|Z=z}(y, d*).
    pub fn outcome_arm_density(&self, d_star: u8, y: f64, z: usize) -> f64 {
        let slope = self.model.rank_slope(d_star, y);
        if slope == 0.0 {
            return 0.0;
        }
        self.latent_density(d_star, self.model.rank_of(d_star, y), z) * slope
    }

    /// F_{Y|Z=z}(y).
    pub fn outcome_cdf(&self, y: f64, z: usize) -> f64 {
        (self.outcome_arm_joint(0, y, z) + self.outcome_arm_joint(1, y, z)).clamp(0.0, 1.0)
    }

    /// F_{Y,D=d|Z=z}(y), the observed sub-CDF.
    pub fn observed_joint(&self, d: u8, y: f64, z: usize) -> f64 {
        let (p0, p1) = (self.model.p0, self.model.p1);
        let g0 = self.outcome_arm_joint(0, y, z);
        let g1 = self.outcome_arm_joint(1, y, z);
        if d == 0 {
            (1.0 - p0) * g0 + p1 * g1
        } else {
            p0 * g0 + (1.0 - p1) * g1
        }
    }

    /// P(D = d | Z = z).
    pub fn observed_treatment_prob(&self, d: u8, z: usize) -> f64 {
        let (p0, p1) = (self.model.p0, self.model.p1);
        let pi = self.model.propensity(z);
        let treated = p0 * (1.0 - pi) + (1.0 - p1) * pi;
        if d == 1 {
            treated
        } else {
            1.0 - treated
        }
    }

    /// f_{D|Y,Z}(d | y, z). Where the outcome density vanishes the ratio is
    /// undefined and the marginal P(D = d | Z = z) is returned.
    pub fn treatment_given_outcome(&self, d: u8, y: f64, z: usize) -> f64 {
        let f0 = self.outcome_arm_density(0, y, z);
        let f1 = self.outcome_arm_density(1, y, z);
        let treated_share = if f1.is_infinite() && f0.is_finite() {
            1.0
        } else if f0.is_infinite() && f1.is_finite() {
            0.0
        } else if f0 + f1 > 0.0 {
            f1 / (f0 + f1)
        } else {
            return self.observed_treatment_prob(d, z);
        };
        let (p0, p1) = (self.model.p0, self.model.p1);
        let d1 = p0 * (1.0 - treated_share) + (1.0 - p1) * treated_share;
        if d == 1 {
            d1
        } else {
            1.0 - d1
        }
    }

    /// True when some outcome density is positive at `y` given `Z = z`.
    pub fn in_support(&self, y: f64, z: usize) -> bool {
        self.outcome_arm_density(0, y, z) + self.outcome_arm_density(1, y, z) > 0.0
    }

    /// Q_{Y|Z=z}(τ) = inf{y : F_{Y|Z=z}(y) ≥ τ}, by bisection.
    pub fn outcome_quantile(&self, tau: f64, z: usize) -> f64 {
        let (lo, hi) = self.model.outcome_range();
        bisect_increasing(|y| self.outcome_cdf(y, z), tau, lo, hi, self.tolerance * (hi - lo).max(1.0) * 0.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn design(rho: f64, gamma: f64) -> StructuralModel {
        StructuralModel::new(QuantileFamily::SqrtLinear, rho, gamma, 0.25, 0.25).unwrap()
    }

    #[test]
    fn quantile_examples() {
        let m = design(0.0, 0.25);
        assert_abs_diff_eq!(m.structural_quantile(1, 0.25).unwrap(), 0.5);
        assert_abs_diff_eq!(m.structural_quantile(0, 0.25).unwrap(), 0.25);
        let sq = StructuralModel { q_family: QuantileFamily::Square, ..m };
        assert_abs_diff_eq!(sq.structural_quantile(1, 0.5).unwrap(), 0.25);
        assert!(matches!(m.structural_quantile(1, 1.5), Err(Error::Domain(_))));
        assert!(matches!(m.structural_quantile(1, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn inverse_examples() {
        let m = design(0.0, 0.25);
        assert_abs_diff_eq!(m.structural_inverse(1, 0.5).unwrap(), 0.25);
        assert_abs_diff_eq!(m.structural_inverse(0, 0.7).unwrap(), 0.7);
        let sq = StructuralModel { q_family: QuantileFamily::Square, ..m };
        assert_abs_diff_eq!(sq.structural_inverse(1, 0.25).unwrap(), 0.5);
        assert!(matches!(m.structural_inverse(1, 1.2), Err(Error::Domain(_))));
        let aff = StructuralModel { q_family: QuantileFamily::Affine { a: 0.2, b: 0.5 }, ..m };
        assert!(matches!(aff.structural_inverse(1, 0.1), Err(Error::Domain(_))));
        assert_abs_diff_eq!(aff.structural_inverse(1, 0.45).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn round_trip_on_grid() {
        let families = [
            QuantileFamily::SqrtLinear,
            QuantileFamily::Square,
            QuantileFamily::Affine { a: -0.3, b: 2.0 },
        ];
        for family in families {
            let m = StructuralModel::new(family, 0.0, 0.1, 0.1, 0.1).unwrap();
            for d in 0..2u8 {
                for i in 0..=1000 {
                    let u = i as f64 / 1000.0;
                    let y = m.structural_quantile(d, u).unwrap();
                    let back = m.structural_inverse(d, y).unwrap();
                    assert!((back - u).abs() <= 1e-12, "{family:?} d={d} u={u} back={back}");
                }
            }
        }
    }

    #[test]
    fn model_invariants_rejected() {
        let f = QuantileFamily::SqrtLinear;
        assert!(StructuralModel::new(f, 1.0, 0.0, 0.1, 0.1).is_err());
        assert!(StructuralModel::new(f, 0.0, 0.6, 0.1, 0.1).is_err());
        assert!(StructuralModel::new(f, 0.0, 0.0, 0.6, 0.4).is_err());
        assert!(StructuralModel::new(f, 0.0, 0.0, -0.1, 0.4).is_err());
        assert!(StructuralModel::new(QuantileFamily::Affine { a: 0.0, b: -1.0 }, 0.0, 0.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn misclassify_examples() {
        assert_eq!(misclassify(0, 0.0, 0.3, 0.0), 0);
        assert_eq!(misclassify(1, 0.3, 0.0, 0.0), 1);
        assert_eq!(misclassify(1, 0.0, 0.25, 0.1), 0);
        assert_eq!(misclassify(1, 0.0, 0.25, 0.3), 1);
    }

    #[test]
    fn misclassify_flip_fraction() {
        let stream = SeedStream::new(5);
        let mut rng = stream.rng(0);
        let n = 1_000_000;
        let flips = (0..n).filter(|_| misclassify(1, 0.0, 0.25, rng.random()) == 0).count();
        assert!((flips as f64 / n as f64 - 0.25).abs() < 0.002);
    }

    #[test]
    fn sampling_examples() {
        let exact = StructuralModel::new(QuantileFamily::SqrtLinear, 0.3, 0.2, 0.0, 0.0).unwrap();
        let (data, truth) = sample_with_truth(&exact, 2000, 1).unwrap();
        assert!(data.records.iter().zip(&truth).all(|(r, &t)| r.d == t));

        let strong = design(0.0, 0.5);
        let (data, truth) = sample_with_truth(&strong, 2000, 2).unwrap();
        assert!(data.records.iter().zip(&truth).filter(|(r, _)| r.z == 1).all(|(_, &t)| t == 1));
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = design(0.5, 0.25);
        let a = sample_dataset(&m, 500, 9).unwrap();
        let b = sample_dataset(&m, 500, 9).unwrap();
        let c = sample_dataset(&m, 500, 10).unwrap();
        assert_eq!(a, b);
        assert!(a.records.iter().zip(&b.records).all(|(x, y)| x.y.to_bits() == y.y.to_bits()));
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn population_design_one_and_two() {
        let pop = population_joint(&design(0.0, 0.5)).unwrap();
        let pop2 = population_joint(&design(0.0, 0.25)).unwrap();
        for i in 0..=20 {
            let y = i as f64 / 20.0;
            assert_abs_diff_eq!(pop.outcome_cdf(y, 1), y * y, epsilon = 1e-12);
            assert_abs_diff_eq!(pop2.outcome_cdf(y, 1), 0.25 * y + 0.75 * y * y, epsilon = 1e-12);
        }
        // degenerate arm is the zero measure, not NaN
        assert_eq!(pop.latent_cdf(0, 0.3, 1), 0.0);
        assert_eq!(pop.outcome_arm_cdf(1, 0.3, 0), 0.0);
    }

    #[test]
    fn observed_sub_cdfs_add_up() {
        for (rho, gamma) in [(0.0, 0.5), (0.0, 0.25), (0.5, 0.25), (-0.7, -0.1)] {
            let pop = population_joint(&design(rho, gamma)).unwrap();
            for z in 0..2 {
                for i in 0..50 {
                    let y = -0.1 + 1.2 * i as f64 / 49.0;
                    let total = pop.observed_joint(0, y, z) + pop.observed_joint(1, y, z);
                    assert_abs_diff_eq!(total, pop.outcome_cdf(y, z), epsilon = 1e-9);
                    let ratio = pop.treatment_given_outcome(0, y, z) + pop.treatment_given_outcome(1, y, z);
                    assert_abs_diff_eq!(ratio, 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_and_header() {
        let m = design(0.5, 0.25);
        let data = sample_dataset(&m, 20, 3).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,d,z\n"));
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back.records, data.records);
        assert!(Dataset::read_csv("y,d,z\n0.1,2,0\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("a,b,c\n0.1,1,0\n".as_bytes()).is_err());
    }

    #[test]
    fn model_json_has_exact_fields() {
        let m = design(0.5, 0.25);
        let v = serde_json::to_value(m).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["gamma", "p0", "p1", "q_family", "rho", "z_support"]);
        let back: StructuralModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}
