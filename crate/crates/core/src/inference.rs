//! Confidence sets for θ = q(1,τ) − q(0,τ) by test inversion.
//!
//! At each hypothesised θ the statistic is profiled over the nuisance
//! `(y0, p0, p1)` with `y1 = y0 + θ`, and calibrated by a minimum-resampling
//! multiplier bootstrap: the critical value is a quantile of the pointwise
//! minimum of a discard-style draw (nuisance fixed at the sample argmin,
//! slack inequalities dropped by moment selection) and a penalised draw
//! (re-profiled over the nuisance with the sample moments shrunk by κ_n).

use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::sorted_quantile;
use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::identify::ParamPoint;
use crate::moments::{MomentEvaluation, MomentKernel, MomentSpec, MultiplierDraw};
use crate::rng::{domain, SeedStream};

/// Law of the bootstrap multipliers, recorded in outputs.
pub const MULTIPLIER_LAW: &str = "standard_normal";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum KappaRule {
    /// κ_n = √(ln n)
    SqrtLogN,
    Fixed { value: f64 },
}

impl KappaRule {
    pub fn value(&self, n: usize) -> f64 {
        match *self {
            KappaRule::SqrtLogN => (n as f64).ln().sqrt(),
            KappaRule::Fixed { value } => value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl ThetaGrid {
    pub fn points(&self) -> Vec<f64> {
        crate::identify::grid_points(self.lo, self.hi, self.step)
    }
}

impl Default for ThetaGrid {
    fn default() -> Self {
        Self {
            lo: -0.2,
            hi: 0.8,
            step: 0.02,
        }
    }
}

/// Nested-grid search over `(y0, p0, p1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSearch {
    pub y_points: usize,
    pub p_points: usize,
    /// Upper end of the `[0, p_max]` range searched for each rate.
    pub p_max: f64,
    pub refine_rounds: usize,
    /// Points per dimension in each refinement round; odd so the incumbent is on the grid.
    pub refine_points: usize,
}

impl Default for NuisanceSearch {
    fn default() -> Self {
        Self {
            y_points: 41,
            p_points: 21,
            p_max: 0.5,
            refine_rounds: 2,
            refine_points: 11,
        }
    }
}

impl NuisanceSearch {
    /// Grid used to re-profile the penalised bootstrap draws.
    pub fn resampling_default() -> Self {
        Self {
            y_points: 21,
            p_points: 11,
            p_max: 0.5,
            refine_rounds: 0,
            refine_points: 11,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.y_points < 1 || self.p_points < 2 {
            return Err(Error::config(format!("{what}: need y_points >= 1 and p_points >= 2")));
        }
        if !(self.p_max > 0.0 && self.p_max < 1.0) {
            return Err(Error::config(format!("{what}: p_max must lie in (0, 1)")));
        }
        if self.refine_rounds > 0 && (self.refine_points < 3 || self.refine_points.is_multiple_of(2)) {
            return Err(Error::config(format!("{what}: refine_points must be odd and >= 3")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub alpha: f64,
    pub bootstrap_reps: usize,
    pub kappa: KappaRule,
    pub theta_grid: ThetaGrid,
    pub search: NuisanceSearch,
    pub resampling_search: NuisanceSearch,
    /// Search window for `y0`; the sample range of Y when absent.
    pub y_window: Option<(f64, f64)>,
    pub n_bins: usize,
    pub seed: u64,
}

impl InferenceConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            alpha: 0.10,
            bootstrap_reps: 500,
            kappa: KappaRule::SqrtLogN,
            theta_grid: ThetaGrid::default(),
            search: NuisanceSearch::default(),
            resampling_search: NuisanceSearch::resampling_default(),
            y_window: None,
            n_bins: crate::moments::DEFAULT_BINS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.bootstrap_reps < 100 {
            return Err(Error::config(format!(
                "at least 100 bootstrap replications are required, got {}",
                self.bootstrap_reps
            )));
        }
        let g = self.theta_grid;
        if !(g.step > 0.0 && g.step.is_finite() && g.lo <= g.hi) {
            return Err(Error::config(format!("invalid theta grid {g:?}")));
        }
        if let KappaRule::Fixed { value } = self.kappa {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::config("kappa must be positive"));
            }
        }
        if let Some((lo, hi)) = self.y_window {
            if !(lo <= hi) {
                return Err(Error::config(format!("empty search window [{lo}, {hi}]")));
            }
        }
        if self.n_bins < 1 {
            return Err(Error::config("at least one inequality bin is required"));
        }
        self.search.validate("search")?;
        self.resampling_search.validate("resampling_search")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProfileResult {
    pub statistic: f64,
    pub argmin: ParamPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestResult {
    pub theta_null: f64,
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub argmin: ParamPoint,
}

/// Bootstrap statistics of both resampling schemes on the same draws.
#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapDraws {
    pub discard: Vec<f64>,
    pub penalized: Vec<f64>,
}

impl BootstrapDraws {
    pub fn minimum(&self) -> Vec<f64> {
        self.discard.iter().zip(&self.penalized).map(|(a, b)| a.min(*b)).collect()
    }
}

/// Type-1 `(1 − α)` quantile of bootstrap draws; 0 at level 0.
pub fn bootstrap_quantile(draws: &[f64], alpha: f64) -> f64 {
    let level = 1.0 - alpha;
    if level <= 0.0 || draws.is_empty() {
        return 0.0;
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted_quantile(&sorted, level.min(1.0)).unwrap_or(0.0).max(0.0)
}

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

fn local_grid(center: f64, half_width: f64, points: usize, lo: f64, hi: f64) -> Vec<f64> {
    let half = (points / 2) as f64;
    let mut v: Vec<f64> = (0..points)
        .map(|k| (center + half_width * (k as f64 - half) / half).clamp(lo, hi))
        .collect();
    v.dedup();
    v
}

/// Profiling and resampling engine for one dataset.
#[derive(Clone, Debug)]
pub struct InferenceEngine {
    kernel: MomentKernel,
    config: InferenceConfig,
    window: (f64, f64),
    kappa: f64,
}

impl InferenceEngine {
    pub fn new(data: &Dataset, spec: &MomentSpec, config: &InferenceConfig) -> Result<Self> {
        config.validate()?;
        let kernel = MomentKernel::new(data, spec)?;
        let window = match config.y_window {
            Some(w) => w,
            None => {
                let (lo, hi) = data
                    .records
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.y), hi.max(r.y)));
                (lo, hi)
            }
        };
        Ok(Self {
            kappa: config.kappa.value(kernel.n()),
            kernel,
            config: *config,
            window,
        })
    }

    pub fn kernel(&self) -> &MomentKernel {
        &self.kernel
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    /// Minimises the statistic over `(y0, p0, p1)` with `y1 = y0 + θ`.
    pub fn profile(&self, theta: f64) -> Result<ProfileResult> {
        if !theta.is_finite() {
            return Err(Error::domain(format!("theta must be finite, got {theta}")));
        }
        let s = self.config.search;
        let (lo, hi) = self.window;
        let ys = linspace(lo, hi, s.y_points);
        let ps = linspace(0.0, s.p_max, s.p_points);
        let mut best = self.search_grid(theta, &ys, &ps, &ps, None);
        let mut dy = if s.y_points > 1 { (hi - lo) / (s.y_points - 1) as f64 } else { 0.0 };
        let mut dp = s.p_max / (s.p_points - 1) as f64;
        for _ in 0..s.refine_rounds {
            let a = best.argmin;
            let ys = local_grid(a.y0, dy, s.refine_points, lo, hi);
            let p0s = local_grid(a.p0, dp, s.refine_points, 0.0, s.p_max);
            let p1s = local_grid(a.p1, dp, s.refine_points, 0.0, s.p_max);
            best = self.search_grid(theta, &ys, &p0s, &p1s, Some(best));
            dy /= ((s.refine_points - 1) / 2) as f64;
            dp /= ((s.refine_points - 1) / 2) as f64;
        }
        Ok(best)
    }

    fn search_grid(&self, theta: f64, ys: &[f64], p0s: &[f64], p1s: &[f64], incumbent: Option<ProfileResult>) -> ProfileResult {
        let k = &self.kernel;
        let ineq0: Vec<f64> = p0s.iter().map(|&p| k.inequality_statistic(false, p)).collect();
        let ineq1: Vec<f64> = p1s.iter().map(|&p| k.inequality_statistic(true, p)).collect();
        let mut best = incumbent.unwrap_or(ProfileResult {
            statistic: f64::INFINITY,
            argmin: ParamPoint {
                y0: ys[0],
                y1: ys[0] + theta,
                p0: 0.0,
                p1: 0.0,
            },
        });
        for &y0 in ys {
            let tally = k.tally(y0, y0 + theta);
            for (i, &p0) in p0s.iter().enumerate() {
                for (j, &p1) in p1s.iter().enumerate() {
                    if p0 + p1 >= 1.0 {
                        continue;
                    }
                    let stat = k.equality_statistic(&tally, p0, p1) + ineq0[i] + ineq1[j];
                    if stat < best.statistic {
                        best = ProfileResult {
                            statistic: stat,
                            argmin: ParamPoint {
                                y0,
                                y1: y0 + theta,
                                p0,
                                p1,
                            },
                        };
                    }
                }
            }
        }
        best
    }

    fn multipliers(&self, b: usize) -> Vec<f64> {
        let mut rng = SeedStream::new(self.config.seed).derive(domain::BOOTSTRAP, 0).rng(b as u64);
        (0..self.kernel.n()).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn discard_draw(&self, argmin: &ParamPoint, draw: &MultiplierDraw) -> f64 {
        let moments = self.kernel.standardized(argmin, Some(draw));
        moments
            .iter()
            .enumerate()
            .map(|(j, m)| {
                if j < 2 {
                    m.v * m.v
                } else if m.t <= self.kappa {
                    m.v.min(0.0).powi(2)
                } else {
                    0.0
                }
            })
            .sum()
    }

    fn penalized_draw(&self, grid: &PenaltyGrid, draw: &MultiplierDraw) -> f64 {
        let k = &self.kernel;
        let shrink = 1.0 / self.kappa;
        let ineq = |untreated: bool, p: f64| -> f64 {
            let mut s = 0.0;
            for z in 0..2 {
                for bin in 0..k.n_bins() {
                    let m = k.inequality(z, bin, untreated, p, Some(draw));
                    s += (m.v + shrink * m.t).min(0.0).powi(2);
                }
            }
            s
        };
        let ineq0: Vec<f64> = grid.p0s.iter().map(|&p| ineq(false, p)).collect();
        let ineq1: Vec<f64> = grid.p1s.iter().map(|&p| ineq(true, p)).collect();
        let mut best = f64::INFINITY;
        for tally in &grid.tallies {
            for (i, &p0) in grid.p0s.iter().enumerate() {
                for (j, &p1) in grid.p1s.iter().enumerate() {
                    if p0 + p1 >= 1.0 {
                        continue;
                    }
                    let mut s = ineq0[i] + ineq1[j];
                    if s >= best {
                        continue;
                    }
                    for z in 0..2 {
                        let m = k.equality(tally, z, p0, p1, Some(draw));
                        s += (m.v + shrink * m.t).powi(2);
                    }
                    if s < best {
                        best = s;
                    }
                }
            }
        }
        best
    }

    fn penalty_grid(&self, theta: f64, argmin: &ParamPoint) -> PenaltyGrid {
        let s = self.config.resampling_search;
        let (lo, hi) = self.window;
        let with = |mut v: Vec<f64>, x: f64| {
            v.push(x);
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let ys = with(linspace(lo, hi, s.y_points), argmin.y0);
        let ps = linspace(0.0, s.p_max, s.p_points);
        PenaltyGrid {
            tallies: ys.iter().map(|&y0| self.kernel.tally(y0, y0 + theta)).collect(),
            p0s: with(ps.clone(), argmin.p0),
            p1s: with(ps, argmin.p1),
        }
    }

    /// Both bootstrap statistics for every draw at `θ`.
    pub fn bootstrap(&self, theta: f64, argmin: &ParamPoint) -> BootstrapDraws {
        let grid = self.penalty_grid(theta, argmin);
        let pairs: Vec<(f64, f64)> = (0..self.config.bootstrap_reps)
            .into_par_iter()
            .map(|b| {
                let draw = self.kernel.multiplier_draw(&self.multipliers(b));
                (self.discard_draw(argmin, &draw), self.penalized_draw(&grid, &draw))
            })
            .collect();
        BootstrapDraws {
            discard: pairs.iter().map(|p| p.0).collect(),
            penalized: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn test(&self, theta: f64) -> Result<TestResult> {
        let profile = self.profile(theta)?;
        let draws = self.bootstrap(theta, &profile.argmin);
        let critical_value = bootstrap_quantile(&draws.minimum(), self.config.alpha);
        Ok(TestResult {
            theta_null: theta,
            statistic: profile.statistic,
            critical_value,
            reject: profile.statistic > critical_value,
            argmin: profile.argmin,
        })
    }
}

struct PenaltyGrid {
    tallies: Vec<crate::moments::Tally>,
    p0s: Vec<f64>,
    p1s: Vec<f64>,
}

/// Profiled statistic at `theta_null` and its minimising nuisance.
pub fn profiled_statistic(data: &Dataset, spec: &MomentSpec, theta_null: f64, config: &InferenceConfig) -> Result<ProfileResult> {
    InferenceEngine::new(data, spec, config)?.profile(theta_null)
}

/// Minimum-resampling critical value at `theta_null`.
pub fn critical_value_min_resampling(data: &Dataset, spec: &MomentSpec, theta_null: f64, config: &InferenceConfig) -> Result<f64> {
    let engine = InferenceEngine::new(data, spec, config)?;
    let profile = engine.profile(theta_null)?;
    let draws = engine.bootstrap(theta_null, &profile.argmin);
    Ok(bootstrap_quantile(&draws.minimum(), config.alpha))
}

/// Discard-style draws from an evaluation at a fixed nuisance value;
/// `multipliers` is `B × n` with columns in the evaluation's row order.
pub fn discard_resampling_draws(eval: &MomentEvaluation, multipliers: &Array2<f64>, kappa: f64) -> Vec<f64> {
    let n = eval.n();
    let root_n = (n as f64).sqrt();
    let t = eval.standardized();
    multipliers
        .rows()
        .into_iter()
        .map(|xi| {
            let mut s = 0.0;
            for (j, col) in eval.contributions.columns().into_iter().enumerate() {
                let dot: f64 = col.iter().zip(xi.iter()).map(|(c, x)| x * (c - eval.means[j])).sum();
                let v = dot / (root_n * eval.sds[j]);
                if eval.is_equality(j) {
                    s += v * v;
                } else if t[j] <= kappa {
                    s += v.min(0.0).powi(2);
                }
            }
            s
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ConfidenceSet {
    pub alpha: f64,
    pub accepted: Vec<f64>,
    /// `[min, max]` of the accepted values.
    pub hull: Option<[f64; 2]>,
    pub kappa: f64,
    pub bootstrap_reps: usize,
    pub multiplier_law: &'static str,
    pub results: Vec<TestResult>,
    pub diagnostics: Option<String>,
}

impl ConfidenceSet {
    /// `theta,statistic,critical_value,reject`.
    pub fn write_results_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["theta", "statistic", "critical_value", "reject"])?;
        for r in &self.results {
            w.serialize((r.theta_null, r.statistic, r.critical_value, r.reject))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inverts the test over `config.theta_grid`.
pub fn confidence_interval(data: &Dataset, spec: &MomentSpec, config: &InferenceConfig) -> Result<ConfidenceSet> {
    let engine = InferenceEngine::new(data, spec, config)?;
    confidence_set_on(&engine, &config.theta_grid.points())
}

pub fn confidence_set_on(engine: &InferenceEngine, thetas: &[f64]) -> Result<ConfidenceSet> {
    let results = thetas.par_iter().map(|&t| engine.test(t)).collect::<Result<Vec<_>>>()?;
    let accepted: Vec<f64> = results.iter().filter(|r| !r.reject).map(|r| r.theta_null).collect();
    let hull = match (accepted.first(), accepted.last()) {
        (Some(&a), Some(&b)) => Some([a, b]),
        _ => None,
    };
    let diagnostics = hull.is_none().then(|| {
        let smallest = results.iter().map(|r| r.statistic - r.critical_value).fold(f64::INFINITY, f64::min);
        format!(
            "all {} grid values rejected; smallest statistic minus critical value {smallest:.4}",
            results.len()
        )
    });
    Ok(ConfidenceSet {
        alpha: engine.config.alpha,
        accepted,
        hull,
        kappa: engine.kappa,
        bootstrap_reps: engine.config.bootstrap_reps,
        multiplier_law: MULTIPLIER_LAW,
        results,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dataset, Observation, QuantileFamily, StructuralModel};
    use crate::moments::{build_moment_spec, evaluate_moments, test_statistic, MomentKind};

    fn design(rho: f64, gamma: f64) -> StructuralModel {
        StructuralModel::new(QuantileFamily::SqrtLinear, rho, gamma, 0.25, 0.25).unwrap()
    }

    fn small_config(seed: u64) -> InferenceConfig {
        InferenceConfig {
            bootstrap_reps: 200,
            ..InferenceConfig::new(seed)
        }
    }

    #[test]
    fn config_validation() {
        let ok = InferenceConfig::new(1);
        assert!(ok.validate().is_ok());
        assert!(InferenceConfig { alpha: 1.0, ..ok }.validate().is_err());
        assert!(InferenceConfig { bootstrap_reps: 99, ..ok }.validate().is_err());
        assert!(InferenceConfig { theta_grid: ThetaGrid { lo: 0.0, hi: 1.0, step: 0.0 }, ..ok }.validate().is_err());
        assert!(InferenceConfig { y_window: Some((1.0, 0.0)), ..ok }.validate().is_err());
        let json = serde_json::to_string(&ok).unwrap();
        let back: InferenceConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ok);
    }

    #[test]
    fn quantile_at_level_zero_is_zero() {
        assert_eq!(bootstrap_quantile(&[1.0, 2.0, 3.0], 1.0), 0.0);
        assert_eq!(bootstrap_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.0);
    }

    #[test]
    fn profiled_minimum_never_exceeds_probed_points() {
        let data = sample_dataset(&design(0.0, 0.25), 400, 9).unwrap();
        let spec = build_moment_spec(&data, 0.5, 4).unwrap();
        let config = small_config(1);
        let engine = InferenceEngine::new(&data, &spec, &config).unwrap();
        let theta = 0.2;
        let profile = engine.profile(theta).unwrap();
        let (lo, hi) = engine.window();
        for y0 in linspace(lo, hi, 41).into_iter().step_by(4) {
            for p in linspace(0.0, 0.5, 21).into_iter().step_by(3) {
                let point = ParamPoint::new(y0, y0 + theta, p, 0.5 - p * 0.5).unwrap();
                let eval = evaluate_moments(&data, &spec, &point).unwrap();
                assert!(profile.statistic <= test_statistic(&eval, data.n()) + 1e-9);
            }
        }
        let eval = evaluate_moments(&data, &spec, &profile.argmin).unwrap();
        assert!((test_statistic(&eval, data.n()) - profile.statistic).abs() < 1e-8);
    }

    #[test]
    fn gross_violation_is_rejected() {
        let data = sample_dataset(&design(0.0, 0.5), 20_000, 21).unwrap();
        let spec = build_moment_spec(&data, 0.5, 4).unwrap();
        let engine = InferenceEngine::new(&data, &spec, &small_config(2)).unwrap();
        let r = engine.test(0.9).unwrap();
        assert!(r.reject);
        assert!(r.statistic > 100.0 * r.critical_value.max(1.0), "{r:?}");
        assert_eq!(r.reject, r.statistic > r.critical_value);
        assert!(r.critical_value >= 0.0);
    }

    #[test]
    fn noise_treatment_respects_rate_constraint() {
        let records: Vec<Observation> = (0..400)
            .map(|i| Observation {
                y: ((i * 37) % 400) as f64 / 400.0,
                d: ((i * 13 + i / 7) % 2) as u8,
                z: (i % 2) as u8,
            })
            .collect();
        let data = Dataset::new(records, None).unwrap();
        let spec = build_moment_spec(&data, 0.5, 2).unwrap();
        let p = profiled_statistic(&data, &spec, 0.1, &small_config(3)).unwrap();
        assert!(p.argmin.p0 + p.argmin.p1 < 1.0);
        assert!(p.statistic.is_finite());
    }

    #[test]
    fn slack_only_system_has_zero_critical_value() {
        let n = 200;
        let mut contributions = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            contributions[[i, 0]] = 0.5 + (i % 3) as f64 * 0.1;
            contributions[[i, 1]] = 0.7 - (i % 5) as f64 * 0.05;
        }
        let means: Vec<f64> = contributions.columns().into_iter().map(|c| c.mean().unwrap()).collect();
        let sds: Vec<f64> = contributions.columns().into_iter().map(|c| c.std(0.0)).collect();
        let eval = MomentEvaluation {
            contributions,
            means,
            sds,
            kinds: vec![MomentKind::TreatedShare { z: 0, bin: 0 }, MomentKind::UntreatedShare { z: 0, bin: 0 }],
        };
        let mut rng = SeedStream::new(4).rng(0);
        let xi = Array2::from_shape_fn((300, n), |_| rng.sample::<f64, _>(StandardNormal));
        let draws = discard_resampling_draws(&eval, &xi, (n as f64).ln().sqrt());
        assert!(draws.iter().all(|&d| d == 0.0));
        assert_eq!(bootstrap_quantile(&draws, 0.1), 0.0);
        assert_eq!(test_statistic(&eval, n), 0.0);
    }

    #[test]
    fn minimum_is_below_discard_quantile() {
        let data = sample_dataset(&design(0.5, 0.25), 600, 5).unwrap();
        let spec = build_moment_spec(&data, 0.5, 4).unwrap();
        let config = small_config(6);
        let engine = InferenceEngine::new(&data, &spec, &config).unwrap();
        let theta = 0.21;
        let profile = engine.profile(theta).unwrap();
        let draws = engine.bootstrap(theta, &profile.argmin);
        let cv = bootstrap_quantile(&draws.minimum(), config.alpha);
        assert!(cv <= bootstrap_quantile(&draws.discard, config.alpha));
        assert!(cv <= bootstrap_quantile(&draws.penalized, config.alpha));
        assert_eq!(cv, critical_value_min_resampling(&data, &spec, theta, &config).unwrap());
    }

    #[test]
    fn kernel_discard_draw_matches_matrix_path() {
        let data = sample_dataset(&design(0.0, 0.25), 300, 8).unwrap();
        let spec = build_moment_spec(&data, 0.5, 4).unwrap();
        let config = small_config(7);
        let engine = InferenceEngine::new(&data, &spec, &config).unwrap();
        let point = engine.profile(0.2).unwrap().argmin;
        let eval = evaluate_moments(&data, &spec, &point).unwrap();
        let xi = Array2::from_shape_fn((5, data.n()), |(b, i)| engine.multipliers(b)[i]);
        let reference = discard_resampling_draws(&eval, &xi, engine.kappa());
        for (b, want) in reference.iter().enumerate() {
            let draw = engine.kernel().multiplier_draw(&engine.multipliers(b));
            let got = engine.discard_draw(&point, &draw);
            assert!((got - want).abs() < 1e-9 * (1.0 + want), "{got} vs {want}");
        }
    }

    #[test]
    fn deterministic_and_nested_in_alpha() {
        let data = sample_dataset(&design(0.0, 0.5), 500, 12).unwrap();
        let spec = build_moment_spec(&data, 0.5, 4).unwrap();
        let base = InferenceConfig {
            theta_grid: ThetaGrid { lo: -0.1, hi: 0.7, step: 0.05 },
            ..small_config(13)
        };
        let a = confidence_interval(&data, &spec, &base).unwrap();
        let b = confidence_interval(&data, &spec, &base).unwrap();
        assert_eq!(a.results, b.results);
        let wide = confidence_interval(&data, &spec, &InferenceConfig { alpha: 0.05, ..base }).unwrap();
        let narrow = confidence_interval(&data, &spec, &InferenceConfig { alpha: 0.5, ..base }).unwrap();
        for t in &narrow.accepted {
            assert!(wide.accepted.contains(t));
        }
        let mut buf = Vec::new();
        a.write_results_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("theta,statistic,critical_value,reject"));
    }
}
