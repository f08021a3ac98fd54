//! Sharp identified set for `(q(0,τ), q(1,τ))` at the population level and
//! the perturbation that witnesses non-identification.
//!
//! A candidate `(y0, y1)` is feasible when some misclassification pair
//! `(p0, p1)` solves, for both instrument values,
//!
//! ```text
//! P(Y ≤ y_D | Z=z) − τ = p1·(F_{Y|Z=z}(y0) − τ) + p0·(F_{Y|Z=z}(y1) − τ)
//! ```
//!
//! with `p0, p1 ≥ 0`, `p0 + p1 < 1`, `p0 ≤ ess inf f_{D|Y,Z}(1|·)` and
//! `p1 ≤ ess inf f_{D|Y,Z}(0|·)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::QuantileSpec;
use crate::dgp::{PopulationDistribution, StructuralModel};
use crate::error::{Error, Result};
use crate::numerics::bisect_increasing;

/// Constraint tolerance for feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Outcome grid used for the essential infima of f_{D|Y,Z}.
pub const DENSITY_GRID: usize = 401;
/// Grid used for observational-equivalence comparisons.
pub const EQUIVALENCE_GRID: usize = 401;
const MONOTONE_GRID: usize = 2001;

/// Candidate structural quantiles and misclassification probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub y0: f64,
    pub y1: f64,
    pub p0: f64,
    pub p1: f64,
}

impl ParamPoint {
    pub fn new(y0: f64, y1: f64, p0: f64, p1: f64) -> Result<Self> {
        let point = Self { y0, y1, p0, p1 };
        point.validate()?;
        Ok(point)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p0 >= 0.0 && self.p1 >= 0.0 && self.p0 + self.p1 < 1.0) {
            return Err(Error::domain(format!(
                "misclassification pair ({}, {}) must be nonnegative with sum < 1",
                self.p0, self.p1
            )));
        }
        if !(self.y0.is_finite() && self.y1.is_finite()) {
            return Err(Error::domain("structural quantiles must be finite"));
        }
        Ok(())
    }

    /// θ = y1 − y0.
    pub fn theta(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Upper bounds on `(p0, p1)` implied by nonnegativity of f_{D*|Y,Z}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityBounds {
    pub p0_max: f64,
    pub p1_max: f64,
}

/// Essential infima of f_{D|Y,Z}(1|·) and f_{D|Y,Z}(0|·) over a
/// [`DENSITY_GRID`]-point outcome grid per instrument value.
pub fn density_bounds(pop: &PopulationDistribution) -> DensityBounds {
    let (lo, hi) = pop.model().outcome_range();
    let mut bounds = DensityBounds {
        p0_max: 1.0,
        p1_max: 1.0,
    };
    for z in 0..2 {
        for i in 0..DENSITY_GRID {
            let y = lo + (hi - lo) * i as f64 / (DENSITY_GRID - 1) as f64;
            if !pop.in_support(y, z) {
                continue;
            }
            bounds.p0_max = bounds.p0_max.min(pop.treatment_given_outcome(1, y, z));
            bounds.p1_max = bounds.p1_max.min(pop.treatment_given_outcome(0, y, z));
        }
    }
    bounds
}

/// Observed-law values at one outcome point, per instrument value.
#[derive(Clone, Copy, Debug)]
struct OutcomeCell {
    /// F_{Y|Z=z}(y)
    cdf: [f64; 2],
    /// F_{Y,D=0|Z=z}(y)
    untreated: [f64; 2],
    /// F_{Y,D=1|Z=z}(y)
    treated: [f64; 2],
}

impl OutcomeCell {
    fn at(pop: &PopulationDistribution, y: f64) -> Self {
        let mut cell = OutcomeCell {
            cdf: [0.0; 2],
            untreated: [0.0; 2],
            treated: [0.0; 2],
        };
        for z in 0..2 {
            cell.untreated[z] = pop.observed_joint(0, y, z);
            cell.treated[z] = pop.observed_joint(1, y, z);
            cell.cdf[z] = cell.untreated[z] + cell.treated[z];
        }
        cell
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// `(p0, p1)` solving the system within all constraints.
    pub witness: Option<(f64, f64)>,
}

fn admissible(p0: f64, p1: f64, bounds: &DensityBounds) -> bool {
    p0 >= -FEASIBILITY_TOL
        && p1 >= -FEASIBILITY_TOL
        && p0 <= bounds.p0_max + FEASIBILITY_TOL
        && p1 <= bounds.p1_max + FEASIBILITY_TOL
        && p0 + p1 < 1.0
}

fn clamp_witness(p0: f64, p1: f64, bounds: &DensityBounds) -> (f64, f64) {
    (p0.clamp(0.0, bounds.p0_max), p1.clamp(0.0, bounds.p1_max))
}

/// Feasible sub-interval of `t ∈ [lo, hi]` for `offset + slope·t ∈ [min, max]`.
fn restrict(interval: (f64, f64), offset: f64, slope: f64, min: f64, max: f64) -> (f64, f64) {
    let (mut lo, mut hi) = interval;
    if slope.abs() < 1e-300 {
        if offset < min || offset > max {
            return (1.0, 0.0);
        }
        return (lo, hi);
    }
    let (a, b) = ((min - offset) / slope, (max - offset) / slope);
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    lo = lo.max(a);
    hi = hi.min(b);
    (lo, hi)
}

/// Solves the 2×2 system in `(p1, p0)`; rank-deficient systems are searched
/// along their one-parameter solution family.
fn solve_system(a: [[f64; 2]; 2], b: [f64; 2], bounds: &DensityBounds) -> Feasibility {
    let infeasible = Feasibility {
        feasible: false,
        witness: None,
    };
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if scale > 0.0 && det.abs() > 1e-10 * scale * scale {
        let p1 = (b[0] * a[1][1] - a[0][1] * b[1]) / det;
        let p0 = (a[0][0] * b[1] - b[0] * a[1][0]) / det;
        if admissible(p0, p1, bounds) {
            return Feasibility {
                feasible: true,
                witness: Some(clamp_witness(p0, p1, bounds)),
            };
        }
        return infeasible;
    }

    let row_norm = |r: usize| a[r][0].abs().max(a[r][1].abs());
    let r = if row_norm(0) >= row_norm(1) { 0 } else { 1 };
    let other = 1 - r;
    if row_norm(r) < 1e-14 {
        // every pair solves the homogeneous rows iff the right side vanishes
        if b[0].abs() <= FEASIBILITY_TOL && b[1].abs() <= FEASIBILITY_TOL {
            return Feasibility {
                feasible: true,
                witness: Some((0.0, 0.0)),
            };
        }
        return infeasible;
    }

    // parametrize by the variable with the smaller coefficient
    let free_is_p1 = a[r][1].abs() >= a[r][0].abs();
    let (pivot, free_coef) = if free_is_p1 { (a[r][1], a[r][0]) } else { (a[r][0], a[r][1]) };
    let offset = b[r] / pivot;
    let slope = -free_coef / pivot;
    let free_max = if free_is_p1 { bounds.p1_max } else { bounds.p0_max };
    let dep_max = if free_is_p1 { bounds.p0_max } else { bounds.p1_max };
    let mut interval = (0.0, free_max);
    interval = restrict(interval, offset, slope, 0.0, dep_max);
    // p0 + p1 = offset + (1 + slope)·t < 1
    interval = restrict(interval, offset, 1.0 + slope, f64::NEG_INFINITY, 1.0 - 1e-12);
    let (lo, hi) = interval;
    if lo > hi + FEASIBILITY_TOL {
        return infeasible;
    }
    // candidate points along the admissible segment; the remaining row is
    // affine in t, so its residual is checked at the endpoints and its root
    let residual = |t: f64| {
        let dep = offset + slope * t;
        let (p1, p0) = if free_is_p1 { (t, dep) } else { (dep, t) };
        (a[other][0] * p1 + a[other][1] * p0 - b[other], p0, p1)
    };
    let mut candidates = vec![lo.min(hi), hi.max(lo), 0.5 * (lo + hi)];
    let (r_lo, _, _) = residual(lo);
    let (r_hi, _, _) = residual(hi);
    if (r_hi - r_lo).abs() > 1e-300 && hi > lo {
        let t = lo - r_lo * (hi - lo) / (r_hi - r_lo);
        if t >= lo && t <= hi {
            candidates.push(t);
        }
    }
    for t in candidates {
        let (res, p0, p1) = residual(t);
        if res.abs() <= FEASIBILITY_TOL && admissible(p0, p1, bounds) {
            return Feasibility {
                feasible: true,
                witness: Some(clamp_witness(p0, p1, bounds)),
            };
        }
    }
    infeasible
}

fn feasibility_cells(c0: &OutcomeCell, c1: &OutcomeCell, tau: f64, bounds: &DensityBounds) -> Feasibility {
    let mut a = [[0.0; 2]; 2];
    let mut b = [0.0; 2];
    for z in 0..2 {
        a[z] = [c0.cdf[z] - tau, c1.cdf[z] - tau];
        b[z] = c0.untreated[z] + c1.treated[z] - tau;
    }
    solve_system(a, b, bounds)
}

/// Whether `(y0, y1)` lies in the sharp identified set, with a witness
/// `(p0, p1)` when it does.
pub fn feasibility(pop: &PopulationDistribution, y0: f64, y1: f64, tau: f64) -> Result<Feasibility> {
    let tau = QuantileSpec::new(tau)?.tau();
    let bounds = density_bounds(pop);
    Ok(feasibility_with_bounds(pop, y0, y1, tau, &bounds))
}

pub fn feasibility_with_bounds(
    pop: &PopulationDistribution,
    y0: f64,
    y1: f64,
    tau: f64,
    bounds: &DensityBounds,
) -> Feasibility {
    feasibility_cells(&OutcomeCell::at(pop, y0), &OutcomeCell::at(pop, y1), tau, bounds)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub y0: f64,
    pub y1: f64,
    pub feasible: bool,
    pub witness: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedSet {
    pub tau: f64,
    pub window: (f64, f64),
    pub grid_step: f64,
    pub density_bounds: DensityBounds,
    /// `[min θ, max θ]` over feasible cells; `None` when nothing is feasible.
    pub theta_interval: Option<(f64, f64)>,
    pub feasible_count: usize,
    #[serde(skip)]
    pub grid: Vec<GridCell>,
    pub diagnostics: Option<String>,
}

/// JSON summary of an [`IdentifiedSet`].
#[derive(Clone, Debug, Serialize)]
pub struct IdentifiedSetSummary {
    pub tau: f64,
    pub theta_interval: Option<[f64; 2]>,
    pub grid_step: f64,
    pub feasible_count: usize,
    pub window: [f64; 2],
    pub p0_max: f64,
    pub p1_max: f64,
}

impl IdentifiedSet {
    pub fn summary(&self) -> IdentifiedSetSummary {
        IdentifiedSetSummary {
            tau: self.tau,
            theta_interval: self.theta_interval.map(|(a, b)| [a, b]),
            grid_step: self.grid_step,
            feasible_count: self.feasible_count,
            window: [self.window.0, self.window.1],
            p0_max: self.density_bounds.p0_max,
            p1_max: self.density_bounds.p1_max,
        }
    }

    /// CSV of feasible cells: `y0,y1,p0,p1,theta`.
    pub fn write_feasible_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["y0", "y1", "p0", "p1", "theta"])?;
        for cell in self.grid.iter().filter(|c| c.feasible) {
            let (p0, p1) = cell.witness.unwrap_or((f64::NAN, f64::NAN));
            w.serialize((cell.y0, cell.y1, p0, p1, cell.y1 - cell.y0))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Grid points `lo, lo + step, …` not exceeding `hi`.
pub(crate) fn grid_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=count).map(|i| lo + step * i as f64).collect()
}

/// Marks feasibility of every `(y0, y1)` on a square grid over `window`.
pub fn identified_set(pop: &PopulationDistribution, tau: f64, window: (f64, f64), grid_step: f64) -> Result<IdentifiedSet> {
    let tau = QuantileSpec::new(tau)?.tau();
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::config(format!("grid step must be positive, got {grid_step}")));
    }
    if !(window.0 <= window.1) {
        return Err(Error::config(format!("empty outcome window [{}, {}]", window.0, window.1)));
    }
    let bounds = density_bounds(pop);
    let ys = grid_points(window.0, window.1, grid_step);
    let cells: Vec<OutcomeCell> = ys.par_iter().map(|&y| OutcomeCell::at(pop, y)).collect();

    let grid: Vec<GridCell> = (0..ys.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let cells = &cells;
            let ys = &ys;
            let bounds = &bounds;
            (0..ys.len()).map(move |j| {
                let f = feasibility_cells(&cells[i], &cells[j], tau, bounds);
                GridCell {
                    y0: ys[i],
                    y1: ys[j],
                    feasible: f.feasible,
                    witness: f.witness,
                }
            })
        })
        .collect();

    let thetas = grid.iter().filter(|c| c.feasible).map(|c| c.y1 - c.y0);
    let (lo, hi, count) = thetas.fold((f64::INFINITY, f64::NEG_INFINITY, 0usize), |(lo, hi, n), t| {
        (lo.min(t), hi.max(t), n + 1)
    });
    let (theta_interval, diagnostics) = if count == 0 {
        (
            None,
            Some(format!(
                "no feasible cell among {} grid points; density bounds p0 <= {:.6}, p1 <= {:.6}",
                grid.len(),
                bounds.p0_max,
                bounds.p1_max
            )),
        )
    } else {
        (Some((lo, hi)), None)
    };
    Ok(IdentifiedSet {
        tau,
        window,
        grid_step,
        density_bounds: bounds,
        theta_interval,
        feasible_count: count,
        grid,
        diagnostics,
    })
}

/// Anything that implies observed sub-distributions F_{Y,D=d,Z=z}.
pub trait ObservedLaw {
    /// P(Y ≤ y, D = d, Z = z).
    fn observed_joint_with_z(&self, d: u8, y: f64, z: usize) -> f64;
    fn outcome_range(&self) -> (f64, f64);
}

impl ObservedLaw for PopulationDistribution {
    fn observed_joint_with_z(&self, d: u8, y: f64, z: usize) -> f64 {
        self.observed_joint(d, y, z) * self.instrument_prob(z)
    }

    fn outcome_range(&self) -> (f64, f64) {
        self.model().outcome_range()
    }
}

/// A model observationally equivalent to `base` whose arm-`d_bar`
/// structural quantile differs at τ.
///
/// The arm-`d_bar` ranks are reparametrised by
/// `t(u) = u + ε/(1 − p0 − p1)·(u − H(u))` with
/// `H(u) = F_{Y|D*=d_bar}(q(1 − d_bar, u))`, the misclassification rate
/// `p_{d_bar}` drops by ε, and mass `ε/(1 − p0 − p1 + ε)·H` moves from the
/// `d_bar` arm to the other arm of the latent law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PerturbedModel {
    pub base: StructuralModel,
    pub epsilon: f64,
    pub d_bar: u8,
    pub tau: f64,
    /// Perturbed `(p0, p1)`.
    pub p_tilde: (f64, f64),
}

impl PerturbedModel {
    fn rank_scale(&self) -> f64 {
        self.epsilon / (1.0 - self.base.p0 - self.base.p1)
    }

    fn mass_shift(&self) -> f64 {
        self.epsilon / (1.0 - self.base.p0 - self.base.p1 + self.epsilon)
    }

    fn other(&self) -> u8 {
        1 - self.d_bar
    }

    /// H(u) = F_{Y|D*=d_bar}(q(1 − d_bar, u)); with an exogenous treatment
    /// F_{Y|D*=d} = q⁻¹(d, ·).
    pub fn crossing(&self, u: f64) -> f64 {
        self.base.rank_of(self.d_bar, self.base.q(self.other(), u))
    }

    /// t(u).
    pub fn reparam(&self, u: f64) -> f64 {
        u + self.rank_scale() * (u - self.crossing(u))
    }

    /// t⁻¹(v) by bisection.
    pub fn reparam_inverse(&self, v: f64) -> f64 {
        if self.epsilon == 0.0 {
            return v.clamp(0.0, 1.0);
        }
        bisect_increasing(|u| self.reparam(u), v, 0.0, 1.0, 1e-15)
    }

    /// q̃(d*, u).
    pub fn perturbed_quantile(&self, d_star: u8, u: f64) -> Result<f64> {
        if d_star == self.d_bar {
            self.base.structural_quantile(d_star, self.reparam(u).clamp(0.0, 1.0))
        } else {
            self.base.structural_quantile(d_star, u)
        }
    }

    fn base_mass(&self, d_star: u8, z: usize) -> f64 {
        let pi = self.base.propensity(z);
        let arm = if d_star == 1 { pi } else { 1.0 - pi };
        arm * self.base.z_support.probs[z]
    }

    /// F̃_{U|D*=d*,Z=z}(u)·f̃_{D*,Z}(d*, z).
    pub fn latent_joint_with_z(&self, d_star: u8, u: f64, z: usize) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let shift = self.mass_shift() * self.crossing(u);
        if d_star == self.d_bar {
            (u - shift) * self.base_mass(self.d_bar, z)
        } else {
            u * self.base_mass(d_star, z) + shift * self.base_mass(self.d_bar, z)
        }
    }

    /// P̃(Y ≤ y, D* = d*, Z = z).
    pub fn outcome_arm_joint_with_z(&self, d_star: u8, y: f64, z: usize) -> f64 {
        let rank = self.base.rank_of(d_star, y);
        let u = if d_star == self.d_bar { self.reparam_inverse(rank) } else { rank };
        self.latent_joint_with_z(d_star, u, z)
    }
}

impl ObservedLaw for PerturbedModel {
    fn observed_joint_with_z(&self, d: u8, y: f64, z: usize) -> f64 {
        let (p0, p1) = self.p_tilde;
        let g0 = self.outcome_arm_joint_with_z(0, y, z);
        let g1 = self.outcome_arm_joint_with_z(1, y, z);
        if d == 0 {
            (1.0 - p0) * g0 + p1 * g1
        } else {
            p0 * g0 + (1.0 - p1) * g1
        }
    }

    fn outcome_range(&self) -> (f64, f64) {
        self.base.outcome_range()
    }
}

fn max_slope<F: Fn(f64) -> f64>(f: F, points: usize) -> f64 {
    let h = 1.0 / (points - 1) as f64;
    (0..points - 1)
        .map(|i| {
            let u = i as f64 * h;
            ((f((u + h).min(1.0)) - f(u)) / h).abs()
        })
        .fold(0.0, f64::max)
}

/// Builds the observationally equivalent perturbation of `model`.
pub fn construct_perturbation(model: &StructuralModel, epsilon: f64, d_bar: u8, tau: f64) -> Result<PerturbedModel> {
    model.validate()?;
    let tau = QuantileSpec::new(tau)?.tau();
    if d_bar > 1 {
        return Err(Error::domain(format!("perturbed arm must be 0 or 1, got {d_bar}")));
    }
    let p_bar = if d_bar == 0 { model.p0 } else { model.p1 };
    if !(epsilon >= 0.0) || (epsilon > 0.0 && epsilon >= p_bar) {
        return Err(Error::Construction(format!(
            "epsilon must lie in [0, p{d_bar}) = [0, {p_bar}), got {epsilon}"
        )));
    }
    let p_tilde = if d_bar == 0 {
        (model.p0 - epsilon, model.p1)
    } else {
        (model.p0, model.p1 - epsilon)
    };
    let perturbed = PerturbedModel {
        base: *model,
        epsilon,
        d_bar,
        tau,
        p_tilde,
    };
    if epsilon == 0.0 {
        return Ok(perturbed);
    }
    if model.rho != 0.0 {
        return Err(Error::Construction(format!(
            "latent ranks must be independent of treatment and instrument (rho = 0), got rho = {}",
            model.rho
        )));
    }
    if model.structural_quantile(d_bar, tau)? == model.structural_quantile(1 - d_bar, tau)? {
        return Err(Error::Construction(format!(
            "structural quantiles of both arms coincide at tau = {tau}"
        )));
    }
    let coarse = max_slope(|u| perturbed.crossing(u), MONOTONE_GRID);
    let fine = max_slope(|u| perturbed.crossing(u), 8 * (MONOTONE_GRID - 1) + 1);
    if !fine.is_finite() || fine > 1.5 * coarse + 1e-9 {
        return Err(Error::Construction(format!(
            "u -> q^-1(q({}, u), {d_bar}) is not Lipschitz (grid slope {coarse:.3} -> {fine:.3} under refinement)",
            1 - d_bar
        )));
    }
    let edge_ok = perturbed.reparam(0.0).abs() <= 1e-12 && (perturbed.reparam(1.0) - 1.0).abs() <= 1e-12;
    if !edge_ok {
        return Err(Error::Construction("rank map t does not fix the endpoints of [0, 1]".into()));
    }
    let mut prev_t = perturbed.reparam(0.0);
    let mut prev_f = [perturbed.latent_joint_with_z(0, 0.0, 0), perturbed.latent_joint_with_z(1, 0.0, 0)];
    for i in 1..MONOTONE_GRID {
        let u = i as f64 / (MONOTONE_GRID - 1) as f64;
        let t = perturbed.reparam(u);
        if !(t > prev_t) || !(0.0..=1.0 + 1e-12).contains(&t) {
            return Err(Error::Construction(format!(
                "epsilon = {epsilon} breaks monotonicity of the rank map near u = {u}"
            )));
        }
        prev_t = t;
        for d in 0..2u8 {
            let f = perturbed.latent_joint_with_z(d, u, 0);
            if f < prev_f[d as usize] - 1e-15 {
                return Err(Error::Construction(format!(
                    "epsilon = {epsilon} makes the perturbed latent law of arm {d} decrease near u = {u}"
                )));
            }
            prev_f[d as usize] = f;
        }
    }
    Ok(perturbed)
}

/// Largest absolute gap between the observed sub-distributions
/// P(Y ≤ y, D = d, Z = z) of two laws over a shared outcome grid.
pub fn verify_observational_equivalence(a: &dyn ObservedLaw, b: &dyn ObservedLaw) -> f64 {
    let (a_lo, a_hi) = a.outcome_range();
    let (b_lo, b_hi) = b.outcome_range();
    let (lo, hi) = (a_lo.min(b_lo), a_hi.max(b_hi));
    let mut worst = 0.0f64;
    for i in 0..EQUIVALENCE_GRID {
        let y = lo + (hi - lo) * i as f64 / (EQUIVALENCE_GRID - 1) as f64;
        for d in 0..2u8 {
            for z in 0..2 {
                worst = worst.max((a.observed_joint_with_z(d, y, z) - b.observed_joint_with_z(d, y, z)).abs());
            }
        }
    }
    worst
}
