//! Reduced-form quantile treatment effect and the population diagnostics
//! that relate it to the structural effect: attenuation factor, stochastic
//! monotonicity, the conditional-quantile restriction and the balance
//! identity behind the attenuation result.

use serde::{Deserialize, Serialize};

use crate::dgp::{population_joint, Dataset, PopulationDistribution, StructuralModel};
use crate::error::{Error, Result};
use crate::numerics::integrate;

/// Tolerance for stochastic monotonicity on the u-grid.
pub const MONOTONICITY_TOL: f64 = 1e-9;
/// Default u-grid size for [`check_stochastic_monotonicity`].
pub const DEFAULT_U_GRID: usize = 2001;

/// Quantile index τ ∈ (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileSpec(f64);

impl QuantileSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::domain(format!("quantile index must lie in (0, 1), got {tau}")))
        }
    }

    pub fn tau(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileSpec {
    type Error = Error;
    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<QuantileSpec> for f64 {
    fn from(q: QuantileSpec) -> f64 {
        q.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttenuationReport {
    /// q(1, τ) − q(0, τ).
    pub delta_q: f64,
    /// Q_{Y|Z=z₁}(τ) − Q_{Y|Z=z₀}(τ).
    pub delta_rf: f64,
    /// `delta_rf / delta_q`; `None` when the structural effect is zero.
    pub kappa: Option<f64>,
}

/// Type-1 empirical quantile: the smallest sample value `y` whose empirical
/// CDF reaches `tau`.
pub fn empirical_quantile(values: &[f64], tau: f64) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted_quantile(&sorted, tau)
}

/// [`empirical_quantile`] on values already sorted ascending.
pub fn sorted_quantile(sorted: &[f64], tau: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::domain("empirical quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::domain(format!("quantile level must lie in [0, 1], got {tau}")));
    }
    let n = sorted.len();
    // smallest k with k/n >= tau, guarding against rounding in n*tau
    let mut k = ((n as f64) * tau).ceil().max(1.0) as usize;
    k = k.min(n);
    while k > 1 && ((k - 1) as f64) / (n as f64) >= tau {
        k -= 1;
    }
    while k < n && (k as f64) / (n as f64) < tau {
        k += 1;
    }
    Ok(sorted[k - 1])
}

/// Population reduced-form QTE, inverting F_{Y|Z=z} by bisection.
pub fn reduced_form_qte(pop: &PopulationDistribution, tau: f64) -> Result<f64> {
    let tau = QuantileSpec::new(tau)?.tau();
    Ok(pop.outcome_quantile(tau, 1) - pop.outcome_quantile(tau, 0))
}

/// Sample reduced-form QTE from empirical quantiles within instrument cells.
pub fn reduced_form_qte_sample(data: &Dataset, tau: f64) -> Result<f64> {
    let tau = QuantileSpec::new(tau)?.tau();
    let mut q = [0.0; 2];
    for z in 0..2u8 {
        let cell = data.outcomes_in_cell(z);
        if cell.is_empty() {
            return Err(Error::estimation(format!("no observations with instrument index {z}")));
        }
        q[z as usize] = empirical_quantile(&cell, tau)?;
    }
    Ok(q[1] - q[0])
}

pub fn attenuation_kappa(model: &StructuralModel, tau: f64) -> Result<AttenuationReport> {
    let tau = QuantileSpec::new(tau)?.tau();
    let pop = population_joint(model)?;
    let delta_q = model.structural_quantile(1, tau)? - model.structural_quantile(0, tau)?;
    let delta_rf = reduced_form_qte(&pop, tau)?;
    let kappa = if delta_q.abs() > 1e-14 {
        Some(delta_rf / delta_q)
    } else {
        None
    };
    Ok(AttenuationReport {
        delta_q,
        delta_rf,
        kappa,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub holds: bool,
    /// Largest signed violation over the grid; ≤ 0 means the inequalities
    /// hold with slack everywhere.
    pub worst_violation: f64,
    /// Rank at which `worst_violation` occurs.
    pub at_u: f64,
}

fn monotonicity_violation(pop: &PopulationDistribution, u: f64) -> f64 {
    let untreated = pop.latent_density(0, u, 1) - pop.latent_density(0, u, 0);
    let treated = pop.latent_density(1, u, 0) - pop.latent_density(1, u, 1);
    untreated.max(treated)
}

/// Checks f_{U,D*|Z=z₁}(u,0) ≤ f_{U,D*|Z=z₀}(u,0) and
/// f_{U,D*|Z=z₁}(u,1) ≥ f_{U,D*|Z=z₀}(u,1) on a uniform grid of `u_grid`
/// points in [0, 1].
pub fn check_stochastic_monotonicity(model: &StructuralModel, u_grid: usize) -> Result<MonotonicityCheck> {
    if u_grid < 2 {
        return Err(Error::config("u-grid needs at least two points"));
    }
    let pop = population_joint(model)?;
    let mut worst = f64::NEG_INFINITY;
    let mut at_u = 0.0;
    for i in 0..u_grid {
        let u = i as f64 / (u_grid - 1) as f64;
        let v = monotonicity_violation(&pop, u);
        if v > worst {
            worst = v;
            at_u = u;
        }
    }
    Ok(MonotonicityCheck {
        holds: worst <= MONOTONICITY_TOL,
        worst_violation: worst,
        at_u,
    })
}

/// Size of the strict density gap at τ; positive values give κ > 0.
pub fn density_gap_at(model: &StructuralModel, tau: f64) -> Result<f64> {
    let pop = population_joint(model)?;
    Ok(-monotonicity_violation(&pop, QuantileSpec::new(tau)?.tau()))
}

/// P(Y ≤ q(D*, τ) | Z = z) − τ for each instrument value, from the true-D*
/// sub-CDFs.
pub fn verify_testable_implication(model: &StructuralModel, tau: f64) -> Result<[f64; 2]> {
    let tau = QuantileSpec::new(tau)?.tau();
    let pop = population_joint(model)?;
    let y0 = model.structural_quantile(0, tau)?;
    let y1 = model.structural_quantile(1, tau)?;
    let mut residuals = [0.0; 2];
    for (z, r) in residuals.iter_mut().enumerate() {
        *r = pop.outcome_arm_joint(0, y0, z) + pop.outcome_arm_joint(1, y1, z) - tau;
    }
    Ok(residuals)
}

/// Both sides of the balance identity
/// ∫_{q(lo,τ)}^{Q_{Y|Z}(τ)} f_{Y,D*|Z}(y, lo) dy = ∫_{Q_{Y|Z}(τ)}^{q(hi,τ)} f_{Y,D*|Z}(y, hi) dy,
/// where `hi` is the arm with the larger structural quantile.
pub fn verify_balance_identity(model: &StructuralModel, tau: f64, z: usize) -> Result<(f64, f64)> {
    let tau = QuantileSpec::new(tau)?.tau();
    if z > 1 {
        return Err(Error::domain(format!("instrument index must be 0 or 1, got {z}")));
    }
    let pop = population_joint(model)?;
    let (lo_arm, hi_arm) = if model.structural_quantile(1, tau)? >= model.structural_quantile(0, tau)? {
        (0u8, 1u8)
    } else {
        (1u8, 0u8)
    };
    let q_lo = model.structural_quantile(lo_arm, tau)?;
    let q_hi = model.structural_quantile(hi_arm, tau)?;
    let q_rf = pop.outcome_quantile(tau, z);
    let left = integrate(|y| pop.outcome_arm_density(lo_arm, y, z), q_lo, q_rf, 1e-12);
    let right = integrate(|y| pop.outcome_arm_density(hi_arm, y, z), q_rf, q_hi, 1e-12);
    Ok((left, right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::QuantileFamily;
    use approx::assert_abs_diff_eq;

    fn design(rho: f64, gamma: f64) -> StructuralModel {
        StructuralModel::new(QuantileFamily::SqrtLinear, rho, gamma, 0.25, 0.25).unwrap()
    }

    #[test]
    fn empirical_quantile_examples() {
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&[4.0, 3.0, 2.0, 1.0], 0.51).unwrap(), 3.0);
        for tau in [0.01, 0.5, 0.99] {
            assert_eq!(empirical_quantile(&[7.0], tau).unwrap(), 7.0);
        }
        assert!(matches!(empirical_quantile(&[], 0.5), Err(Error::Domain(_))));
        // n*tau rounding: 10 * 0.3 is not exactly 3 in floating point
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.3).unwrap(), 3.0);
    }

    #[test]
    fn reduced_form_examples() {
        let d1 = population_joint(&design(0.0, 0.5)).unwrap();
        assert_abs_diff_eq!(reduced_form_qte(&d1, 0.5).unwrap(), 0.5f64.sqrt() - 0.5, epsilon = 1e-9);
        // oracle: roots of 0.75y²+0.25y=0.5 and 0.25y²+0.75y=0.5
        let root = |a: f64, b: f64| (-b + (b * b + 4.0 * a * 0.5).sqrt()) / (2.0 * a);
        let expected = root(0.75, 0.25) - root(0.25, 0.75);
        let d2 = population_joint(&design(0.0, 0.25)).unwrap();
        assert_abs_diff_eq!(reduced_form_qte(&d2, 0.5).unwrap(), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(expected, 0.10512, epsilon = 1e-5);
        let flat = population_joint(&design(0.3, 0.0)).unwrap();
        assert_eq!(reduced_form_qte(&flat, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn kappa_examples() {
        let r = attenuation_kappa(&design(0.0, 0.5), 0.5).unwrap();
        assert_abs_diff_eq!(r.kappa.unwrap(), 1.0, epsilon = 1e-6);
        let r = attenuation_kappa(&design(0.0, 0.25), 0.5).unwrap();
        assert_abs_diff_eq!(r.kappa.unwrap(), 0.5076, epsilon = 1e-3);
        let r = attenuation_kappa(&design(0.0, 0.0), 0.5).unwrap();
        assert_eq!(r.kappa, Some(0.0));
    }

    #[test]
    fn kappa_undefined_without_structural_effect() {
        // q(1,u) = u: both arms coincide
        let m = StructuralModel::new(QuantileFamily::Affine { a: 0.0, b: 1.0 }, 0.2, 0.25, 0.1, 0.1).unwrap();
        let r = attenuation_kappa(&m, 0.5).unwrap();
        assert_eq!(r.kappa, None);
        let json = serde_json::to_value(r).unwrap();
        assert!(json["kappa"].is_null());
    }

    #[test]
    fn monotonicity_examples() {
        assert!(check_stochastic_monotonicity(&design(0.5, 0.25), DEFAULT_U_GRID).unwrap().holds);
        let flat = check_stochastic_monotonicity(&design(0.5, 0.0), DEFAULT_U_GRID).unwrap();
        assert!(flat.holds);
        assert_eq!(flat.worst_violation, 0.0);
        assert!(!check_stochastic_monotonicity(&design(0.5, -0.25), DEFAULT_U_GRID).unwrap().holds);
        assert!(check_stochastic_monotonicity(&design(0.5, 0.25), 1).is_err());
    }

    #[test]
    fn testable_implication_vanishes() {
        for (m, tau) in [(design(0.0, 0.5), 0.5), (design(0.5, 0.25), 0.25), (design(0.0, 0.25), 0.9)] {
            for r in verify_testable_implication(&m, tau).unwrap() {
                assert!(r.abs() < 1e-8, "residual {r}");
            }
        }
    }

    #[test]
    fn balance_identity_examples() {
        let (l, r) = verify_balance_identity(&design(0.0, 0.25), 0.5, 0).unwrap();
        assert_abs_diff_eq!(l, r, epsilon = 1e-7);
        assert!(l > 0.01);
        let (l, r) = verify_balance_identity(&design(0.0, 0.5), 0.5, 1).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-9);
        let (l, r) = verify_balance_identity(&design(0.5, 0.25), 0.3, 1).unwrap();
        assert_abs_diff_eq!(l, r, epsilon = 1e-7);
    }

    #[test]
    fn quantile_spec_bounds() {
        assert!(QuantileSpec::new(0.0).is_err());
        assert!(QuantileSpec::new(1.0).is_err());
        assert_eq!(QuantileSpec::new(0.3).unwrap().tau(), 0.3);
    }
}
