//! Sample moment system: two equalities (one per instrument value) and
//! instrumented inequalities bounding the misclassification rates.
//!
//! Observations are held in a canonical order, sorted by `(z, d, y)`, so
//! evaluations never depend on the row order of the input file.
//!
//! Column `j` of an evaluation is laid out as
//!
//! * `0, 1`: equality rows for `z = 0, 1`;
//! * `2 + (z·n_bins + bin)·2`: `(1{D=1} − p0)·1{Y ∈ bin, Z = z} ≥ 0`;
//! * `2 + (z·n_bins + bin)·2 + 1`: `(1{D=0} − p1)·1{Y ∈ bin, Z = z} ≥ 0`.

use std::io::Write;

use ndarray::Array2;
use serde::Serialize;

use crate::bounds::{sorted_quantile, QuantileSpec};
use crate::dgp::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::identify::ParamPoint;

pub const DEFAULT_BINS: usize = 4;
/// Lower bound on σ̂ for columns that are not identically zero.
pub const SD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentKind {
    Equality { z: usize },
    /// `(1{D=1} − p0)·1{Y ∈ bin, Z = z}`
    TreatedShare { z: usize, bin: usize },
    /// `(1{D=0} − p1)·1{Y ∈ bin, Z = z}`
    UntreatedShare { z: usize, bin: usize },
}

impl MomentKind {
    pub fn is_equality(&self) -> bool {
        matches!(self, MomentKind::Equality { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentSpec {
    pub tau: f64,
    pub n_bins: usize,
    /// Interior edges; bin `j` is `(e_{j−1}, e_j]` with `e_{−1} = −∞`, `e_{n_bins−1} = ∞`.
    pub bin_edges: Vec<f64>,
}

impl MomentSpec {
    pub fn moment_count(&self) -> usize {
        2 + 4 * self.n_bins
    }

    pub fn equality_count(&self) -> usize {
        2
    }

    pub fn bin_of(&self, y: f64) -> usize {
        self.bin_edges.partition_point(|&e| e < y)
    }

    pub fn kinds(&self) -> Vec<MomentKind> {
        let mut kinds = vec![MomentKind::Equality { z: 0 }, MomentKind::Equality { z: 1 }];
        for z in 0..2 {
            for bin in 0..self.n_bins {
                kinds.push(MomentKind::TreatedShare { z, bin });
                kinds.push(MomentKind::UntreatedShare { z, bin });
            }
        }
        kinds
    }

    fn inequality_index(&self, z: usize, bin: usize, untreated: bool) -> usize {
        2 + (z * self.n_bins + bin) * 2 + untreated as usize
    }
}

/// Bin edges at the pooled empirical quantiles `j / n_bins`.
pub fn build_moment_spec(data: &Dataset, tau: f64, n_bins: usize) -> Result<MomentSpec> {
    let tau = QuantileSpec::new(tau)?.tau();
    if n_bins < 1 {
        return Err(Error::config("at least one inequality bin is required"));
    }
    let mut ys: Vec<f64> = data.records.iter().map(|r| r.y).collect();
    ys.sort_by(f64::total_cmp);
    let mut distinct = ys.clone();
    distinct.dedup();
    if distinct.len() < n_bins {
        return Err(Error::estimation(format!(
            "bin degeneracy: {} distinct outcomes for {n_bins} bins",
            distinct.len()
        )));
    }
    let edges = (1..n_bins)
        .map(|j| sorted_quantile(&ys, j as f64 / n_bins as f64))
        .collect::<Result<Vec<_>>>()?;
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::estimation(format!("bin degeneracy: edges {edges:?} are not strictly increasing")));
    }
    Ok(MomentSpec {
        tau,
        n_bins,
        bin_edges: edges,
    })
}

/// Observations sorted by `(z, d, y)`.
pub(crate) fn canonical_order(data: &Dataset) -> Vec<Observation> {
    let mut rows = data.records.clone();
    rows.sort_by(|a, b| a.z.cmp(&b.z).then(a.d.cmp(&b.d)).then(a.y.total_cmp(&b.y)));
    rows
}

/// σ̂ with the degenerate-column conventions.
fn scale(sd: f64, all_zero: bool) -> f64 {
    if all_zero {
        1.0
    } else {
        sd.max(SD_FLOOR)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentEvaluation {
    /// `n × m`, rows in canonical observation order.
    pub contributions: Array2<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub kinds: Vec<MomentKind>,
}

impl MomentEvaluation {
    pub fn n(&self) -> usize {
        self.contributions.nrows()
    }

    pub fn is_equality(&self, j: usize) -> bool {
        self.kinds[j].is_equality()
    }

    /// `√n·m̄_j / σ̂_j`.
    pub fn standardized(&self) -> Vec<f64> {
        let root_n = (self.n() as f64).sqrt();
        self.means.iter().zip(&self.sds).map(|(m, s)| root_n * m / s).collect()
    }

    /// Diagnostic dump: `index,kind,z,bin,mean,sd`.
    pub fn write_diagnostics_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "kind", "z", "bin", "mean", "sd"])?;
        for (j, kind) in self.kinds.iter().enumerate() {
            let (label, z, bin) = match *kind {
                MomentKind::Equality { z } => ("equality", z, String::new()),
                MomentKind::TreatedShare { z, bin } => ("treated_share", z, bin.to_string()),
                MomentKind::UntreatedShare { z, bin } => ("untreated_share", z, bin.to_string()),
            };
            w.write_record([
                j.to_string(),
                label.to_string(),
                z.to_string(),
                bin,
                self.means[j].to_string(),
                self.sds[j].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn instrument_shares(rows: &[Observation]) -> Result<[f64; 2]> {
    let n = rows.len() as f64;
    let mut counts = [0usize; 2];
    for r in rows {
        counts[r.z as usize] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::estimation(format!(
            "empty instrument cell: counts {counts:?}"
        )));
    }
    Ok([counts[0] as f64 / n, counts[1] as f64 / n])
}

/// Equality contribution for an observation in cell `z`.
#[inline]
fn equality_value(tau: f64, share: f64, d: u8, below0: bool, below1: bool, p0: f64, p1: f64) -> f64 {
    let a = below0 as u8 as f64;
    let b = below1 as u8 as f64;
    let hit = if d == 0 { a } else { b };
    (hit - tau - p1 * (a - tau) - p0 * (b - tau)) / share
}

/// Per-observation contributions, means and standard deviations at `point`.
pub fn evaluate_moments(data: &Dataset, spec: &MomentSpec, point: &ParamPoint) -> Result<MomentEvaluation> {
    point.validate()?;
    let rows = canonical_order(data);
    let share = instrument_shares(&rows)?;
    let n = rows.len();
    let m = spec.moment_count();
    let mut c = Array2::<f64>::zeros((n, m));
    for (i, r) in rows.iter().enumerate() {
        let z = r.z as usize;
        c[[i, z]] = equality_value(spec.tau, share[z], r.d, r.y <= point.y0, r.y <= point.y1, point.p0, point.p1);
        let bin = spec.bin_of(r.y);
        c[[i, spec.inequality_index(z, bin, false)]] = (r.d == 1) as u8 as f64 - point.p0;
        c[[i, spec.inequality_index(z, bin, true)]] = (r.d == 0) as u8 as f64 - point.p1;
    }
    let nf = n as f64;
    let mut means = Vec::with_capacity(m);
    let mut sds = Vec::with_capacity(m);
    for col in c.columns() {
        let mean = col.iter().sum::<f64>() / nf;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let all_zero = col.iter().all(|&v| v == 0.0);
        means.push(mean);
        sds.push(scale((ss / nf).sqrt(), all_zero));
    }
    Ok(MomentEvaluation {
        contributions: c,
        means,
        sds,
        kinds: spec.kinds(),
    })
}

/// `Σ_eq (√n·m̄/σ̂)² + Σ_ineq min(√n·m̄/σ̂, 0)²`.
pub fn test_statistic(eval: &MomentEvaluation, n: usize) -> f64 {
    let root_n = (n as f64).sqrt();
    eval.means
        .iter()
        .zip(&eval.sds)
        .zip(&eval.kinds)
        .map(|((m, s), kind)| {
            let t = root_n * m / s;
            if kind.is_equality() {
                t * t
            } else {
                t.min(0.0).powi(2)
            }
        })
        .sum()
}

/// One standardized moment: `t = √n·m̄/σ̂` and, under a multiplier draw,
/// `v = Σ ξ_i (c_i − m̄) / (√n·σ̂)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Standardized {
    pub t: f64,
    pub v: f64,
}

/// Multiplier sums needed by [`MomentKernel`] for one bootstrap draw.
#[derive(Clone, Debug)]
pub struct MultiplierDraw {
    /// Prefix sums of ξ in canonical order, length `n + 1`.
    prefix: Vec<f64>,
    /// Per `(z, bin)`: `[Σ ξ over D=0, Σ ξ over D=1]`.
    bin_sums: Vec<[f64; 2]>,
    total: f64,
}

/// Counts of observations at or below `y0` and `y1` in each `(z, d)` cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tally {
    below0: [[usize; 2]; 2],
    below1: [[usize; 2]; 2],
}

/// Sufficient-statistic evaluator of the moment system.
///
/// Every equality contribution takes one of eight values determined by
/// `(D, 1{Y ≤ y0}, 1{Y ≤ y1})` within its instrument cell, and every
/// inequality contribution one of two values within its bin, so means,
/// variances and multiplier sums reduce to counts from sorted outcomes.
#[derive(Clone, Debug)]
pub struct MomentKernel {
    tau: f64,
    n: usize,
    n_bins: usize,
    share: [f64; 2],
    /// Canonical index range of cell `(z, d)`.
    cells: [[(usize, usize); 2]; 2],
    ys: Vec<f64>,
    /// Canonical index → `z·n_bins + bin`.
    bin_index: Vec<usize>,
    /// Per `(z, bin)`: `[count D=0, count D=1]`.
    bin_counts: Vec<[usize; 2]>,
}

impl MomentKernel {
    pub fn new(data: &Dataset, spec: &MomentSpec) -> Result<Self> {
        let rows = canonical_order(data);
        let share = instrument_shares(&rows)?;
        let mut cells = [[(0usize, 0usize); 2]; 2];
        for z in 0..2u8 {
            for d in 0..2u8 {
                let start = rows.partition_point(|r| (r.z, r.d) < (z, d));
                let end = rows.partition_point(|r| (r.z, r.d) <= (z, d));
                cells[z as usize][d as usize] = (start, end);
            }
        }
        let mut bin_counts = vec![[0usize; 2]; 2 * spec.n_bins];
        let bin_index: Vec<usize> = rows
            .iter()
            .map(|r| {
                let k = r.z as usize * spec.n_bins + spec.bin_of(r.y);
                bin_counts[k][r.d as usize] += 1;
                k
            })
            .collect();
        Ok(Self {
            tau: spec.tau,
            n: rows.len(),
            n_bins: spec.n_bins,
            share,
            cells,
            ys: rows.iter().map(|r| r.y).collect(),
            bin_index,
            bin_counts,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn moment_count(&self) -> usize {
        2 + 4 * self.n_bins
    }

    pub fn tally(&self, y0: f64, y1: f64) -> Tally {
        let mut t = Tally {
            below0: [[0; 2]; 2],
            below1: [[0; 2]; 2],
        };
        for z in 0..2 {
            for d in 0..2 {
                let (s, e) = self.cells[z][d];
                let ys = &self.ys[s..e];
                t.below0[z][d] = ys.partition_point(|&y| y <= y0);
                t.below1[z][d] = ys.partition_point(|&y| y <= y1);
            }
        }
        t
    }

    /// Multiplier sums for draw `xi`, given in canonical observation order.
    pub fn multiplier_draw(&self, xi: &[f64]) -> MultiplierDraw {
        assert_eq!(xi.len(), self.n, "one multiplier per observation");
        let mut prefix = Vec::with_capacity(self.n + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for &x in xi {
            acc += x;
            prefix.push(acc);
        }
        let mut bin_sums = vec![[0.0; 2]; self.bin_counts.len()];
        for z in 0..2 {
            for d in 0..2 {
                let (s, e) = self.cells[z][d];
                for i in s..e {
                    bin_sums[self.bin_index[i]][d] += xi[i];
                }
            }
        }
        MultiplierDraw {
            prefix,
            bin_sums,
            total: acc,
        }
    }

    fn finish(&self, mean: f64, ss: f64, all_zero: bool, xi_dot: Option<f64>, xi_total: f64) -> Standardized {
        let nf = self.n as f64;
        let sd = scale((ss / nf).sqrt(), all_zero);
        let root_n = nf.sqrt();
        Standardized {
            t: root_n * mean / sd,
            v: xi_dot.map_or(0.0, |s| (s - mean * xi_total) / (root_n * sd)),
        }
    }

    /// Equality row for instrument value `z`.
    pub fn equality(&self, tally: &Tally, z: usize, p0: f64, p1: f64, draw: Option<&MultiplierDraw>) -> Standardized {
        let mut cats = [(0usize, 0.0f64, 0.0f64); 8];
        let mut k = 0;
        for d in 0..2 {
            let (s, e) = self.cells[z][d];
            let len = e - s;
            let k0 = tally.below0[z][d];
            let k1 = tally.below1[z][d];
            let lo = k0.min(k1);
            let hi = k0.max(k1);
            // (a, b, count, prefix range)
            let parts = [
                (true, true, 0, lo),
                (true, false, lo, k0),
                (false, true, lo, k1),
                (false, false, hi, len),
            ];
            for (a, b, from, to) in parts {
                let count = to - from;
                let value = equality_value(self.tau, self.share[z], d as u8, a, b, p0, p1);
                let xi = draw.map_or(0.0, |w| w.prefix[s + to] - w.prefix[s + from]);
                cats[k] = (count, value, xi);
                k += 1;
            }
        }
        let nf = self.n as f64;
        let mean = cats.iter().map(|&(c, v, _)| c as f64 * v).sum::<f64>() / nf;
        let in_cell: usize = cats.iter().map(|&(c, _, _)| c).sum();
        let ss = cats.iter().map(|&(c, v, _)| c as f64 * (v - mean) * (v - mean)).sum::<f64>()
            + (self.n - in_cell) as f64 * mean * mean;
        let all_zero = cats.iter().all(|&(c, v, _)| c == 0 || v == 0.0);
        let xi_dot = draw.map(|_| cats.iter().map(|&(_, v, x)| v * x).sum::<f64>());
        self.finish(mean, ss, all_zero, xi_dot, draw.map_or(0.0, |w| w.total))
    }

    /// Inequality row for `(z, bin)`; `untreated` selects the `p1` bound, and
    /// `p` is the matching misclassification rate.
    pub fn inequality(&self, z: usize, bin: usize, untreated: bool, p: f64, draw: Option<&MultiplierDraw>) -> Standardized {
        let k = z * self.n_bins + bin;
        let [n0, n1] = self.bin_counts[k];
        // value on D = 0 and D = 1 observations of the bin
        let (v0, v1) = if untreated { (1.0 - p, -p) } else { (-p, 1.0 - p) };
        let nf = self.n as f64;
        let mean = (n0 as f64 * v0 + n1 as f64 * v1) / nf;
        let ss = n0 as f64 * (v0 - mean) * (v0 - mean)
            + n1 as f64 * (v1 - mean) * (v1 - mean)
            + (self.n - n0 - n1) as f64 * mean * mean;
        let all_zero = (n0 == 0 || v0 == 0.0) && (n1 == 0 || v1 == 0.0);
        let xi_dot = draw.map(|w| w.bin_sums[k][0] * v0 + w.bin_sums[k][1] * v1);
        self.finish(mean, ss, all_zero, xi_dot, draw.map_or(0.0, |w| w.total))
    }

    /// All standardized moments at `point`, in evaluation column order.
    pub fn standardized(&self, point: &ParamPoint, draw: Option<&MultiplierDraw>) -> Vec<Standardized> {
        let tally = self.tally(point.y0, point.y1);
        let mut out = Vec::with_capacity(self.moment_count());
        for z in 0..2 {
            out.push(self.equality(&tally, z, point.p0, point.p1, draw));
        }
        for z in 0..2 {
            for bin in 0..self.n_bins {
                out.push(self.inequality(z, bin, false, point.p0, draw));
                out.push(self.inequality(z, bin, true, point.p1, draw));
            }
        }
        out
    }

    /// Equality part of the statistic.
    pub fn equality_statistic(&self, tally: &Tally, p0: f64, p1: f64) -> f64 {
        (0..2).map(|z| self.equality(tally, z, p0, p1, None).t.powi(2)).sum()
    }

    /// Inequality part of the statistic for the `p0` (`untreated = false`)
    /// or `p1` bounds; it depends on that rate alone.
    pub fn inequality_statistic(&self, untreated: bool, p: f64) -> f64 {
        let mut s = 0.0;
        for z in 0..2 {
            for bin in 0..self.n_bins {
                s += self.inequality(z, bin, untreated, p, None).t.min(0.0).powi(2);
            }
        }
        s
    }

    /// Same value as [`test_statistic`] on [`evaluate_moments`].
    pub fn statistic(&self, point: &ParamPoint) -> f64 {
        let tally = self.tally(point.y0, point.y1);
        self.equality_statistic(&tally, point.p0, point.p1)
            + self.inequality_statistic(false, point.p0)
            + self.inequality_statistic(true, point.p1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dataset, QuantileFamily, StructuralModel};
    use proptest::prelude::*;

    fn design2() -> StructuralModel {
        StructuralModel::new(QuantileFamily::SqrtLinear, 0.0, 0.25, 0.25, 0.25).unwrap()
    }

    fn truth() -> ParamPoint {
        ParamPoint::new(0.5, 0.5f64.sqrt(), 0.25, 0.25).unwrap()
    }

    #[test]
    fn moment_counts() {
        let data = sample_dataset(&design2(), 500, 1).unwrap();
        assert_eq!(build_moment_spec(&data, 0.5, 1).unwrap().moment_count(), 6);
        let spec = build_moment_spec(&data, 0.5, 4).unwrap();
        assert_eq!(spec.moment_count(), 18);
        assert_eq!(spec.bin_edges.len(), 3);
        assert!(build_moment_spec(&data, 0.5, 0).is_err());
    }

    #[test]
    fn constant_outcomes_are_bin_degenerate() {
        let records = (0..10).map(|i| Observation { y: 1.0, d: (i % 2) as u8, z: (i / 5) as u8 }).collect();
        let data = Dataset::new(records, None).unwrap();
        assert!(matches!(build_moment_spec(&data, 0.5, 2), Err(Error::Estimation(_))));
    }

    #[test]
    fn empty_instrument_cell_is_an_error() {
        let records = (0..10).map(|i| Observation { y: i as f64, d: (i % 2) as u8, z: 0 }).collect();
        let data = Dataset::new(records, None).unwrap();
        let spec = build_moment_spec(&data, 0.5, 2).unwrap();
        assert!(matches!(evaluate_moments(&data, &spec, &truth()), Err(Error::Estimation(_))));
        assert!(MomentKernel::new(&data, &spec).is_err());
    }

    #[test]
    fn equalities_vanish_at_truth_in_large_samples() {
        let data = sample_dataset(&design2(), 1_000_000, 3).unwrap();
        let spec = build_moment_spec(&data, 0.5, 4).unwrap();
        let eval = evaluate_moments(&data, &spec, &truth()).unwrap();
        assert!(eval.means[0].abs() < 0.005 && eval.means[1].abs() < 0.005, "{:?}", &eval.means[..2]);
    }

    #[test]
    fn exact_measurement_gives_conditional_quantile_moment() {
        let data = sample_dataset(&design2(), 2000, 4).unwrap();
        let spec = build_moment_spec(&data, 0.5, 2).unwrap();
        let point = ParamPoint::new(0.4, 0.8, 0.0, 0.0).unwrap();
        let eval = evaluate_moments(&data, &spec, &point).unwrap();
        for z in 0..2u8 {
            let cell: Vec<_> = data.records.iter().filter(|r| r.z == z).collect();
            let hits = cell.iter().filter(|r| r.y <= if r.d == 0 { 0.4 } else { 0.8 }).count();
            let expected = hits as f64 / cell.len() as f64 - 0.5;
            assert!((eval.means[z as usize] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn statistic_examples() {
        let kinds = vec![
            MomentKind::Equality { z: 0 },
            MomentKind::Equality { z: 1 },
            MomentKind::TreatedShare { z: 0, bin: 0 },
        ];
        let mk = |means: Vec<f64>| MomentEvaluation {
            contributions: Array2::zeros((100, 3)),
            means,
            sds: vec![1.0; 3],
            kinds: kinds.clone(),
        };
        assert_eq!(test_statistic(&mk(vec![0.0, 0.0, 0.0]), 100), 0.0);
        assert_eq!(test_statistic(&mk(vec![0.0, 0.0, 0.3]), 100), 0.0);
        assert!((test_statistic(&mk(vec![0.05, 0.0, 0.3]), 100) - 100.0 * 0.05 * 0.05).abs() < 1e-12);
        assert!((test_statistic(&mk(vec![0.0, 0.0, -0.1]), 100) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_csv_lists_every_moment() {
        let data = sample_dataset(&design2(), 300, 5).unwrap();
        let spec = build_moment_spec(&data, 0.5, 2).unwrap();
        let eval = evaluate_moments(&data, &spec, &truth()).unwrap();
        let mut buf = Vec::new();
        eval.write_diagnostics_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + spec.moment_count());
        assert!(text.starts_with("index,kind,z,bin,mean,sd"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn kernel_matches_matrix_path(
            seed in 0u64..1000,
            y0 in -0.1f64..1.1,
            theta in -0.5f64..0.8,
            p0 in 0.0f64..0.5,
            p1 in 0.0f64..0.49,
            bins in 1usize..6,
        ) {
            let data = sample_dataset(&design2(), 257, seed).unwrap();
            let spec = build_moment_spec(&data, 0.5, bins).unwrap();
            let point = ParamPoint::new(y0, y0 + theta, p0, p1).unwrap();
            let eval = evaluate_moments(&data, &spec, &point).unwrap();
            let kernel = MomentKernel::new(&data, &spec).unwrap();
            let xi: Vec<f64> = (0..data.n()).map(|i| ((i * 7919 + seed as usize) % 13) as f64 / 6.0 - 1.0).collect();
            let draw = kernel.multiplier_draw(&xi);
            let fast = kernel.standardized(&point, Some(&draw));
            let std = eval.standardized();
            let root_n = (data.n() as f64).sqrt();
            for j in 0..spec.moment_count() {
                prop_assert!((fast[j].t - std[j]).abs() <= 1e-9 * (1.0 + std[j].abs()), "t[{}]: {} vs {}", j, fast[j].t, std[j]);
                let col = eval.contributions.column(j);
                let direct: f64 = col.iter().zip(&xi).map(|(c, x)| x * (c - eval.means[j])).sum::<f64>() / (root_n * eval.sds[j]);
                prop_assert!((fast[j].v - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
            }
            let stat = test_statistic(&eval, data.n());
            prop_assert!((kernel.statistic(&point) - stat).abs() <= 1e-9 * (1.0 + stat));
        }

        #[test]
        fn contributions_are_bounded(seed in 0u64..1000, y0 in -0.1f64..1.1, y1 in -0.1f64..1.5, p0 in 0.0f64..0.5, p1 in 0.0f64..0.49) {
            let data = sample_dataset(&design2(), 101, seed).unwrap();
            let spec = build_moment_spec(&data, 0.5, 3).unwrap();
            let eval = evaluate_moments(&data, &spec, &ParamPoint::new(y0, y1, p0, p1).unwrap()).unwrap();
            let n = data.n() as f64;
            let mut bound = 1.0f64;
            for z in 0..2u8 {
                let share = data.records.iter().filter(|r| r.z == z).count() as f64 / n;
                bound = bound.max(1.0 / share);
            }
            prop_assert!(eval.contributions.iter().all(|c| c.abs() <= bound + 1e-12));
            prop_assert!(eval.sds.iter().all(|&s| s >= SD_FLOOR));
        }

        #[test]
        fn relabeling_rows_is_invisible(seed in 0u64..1000, shift in 1usize..100) {
            let data = sample_dataset(&design2(), 150, seed).unwrap();
            let mut rotated = data.records.clone();
            rotated.rotate_left(shift);
            rotated.reverse();
            let other = Dataset::new(rotated, None).unwrap();
            let spec = build_moment_spec(&data, 0.5, 4).unwrap();
            prop_assert_eq!(&spec, &build_moment_spec(&other, 0.5, 4).unwrap());
            let a = evaluate_moments(&data, &spec, &truth()).unwrap();
            let b = evaluate_moments(&other, &spec, &truth()).unwrap();
            prop_assert!(a.contributions.iter().zip(b.contributions.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert!(a.means.iter().zip(&b.means).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert!(a.sds.iter().zip(&b.sds).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        #[test]
        fn statistic_is_monotone(
            means in proptest::collection::vec(-1.0f64..1.0, 6),
            j in 0usize..6,
            bump in 0.0f64..0.5,
        ) {
            let kinds = vec![
                MomentKind::Equality { z: 0 },
                MomentKind::Equality { z: 1 },
                MomentKind::TreatedShare { z: 0, bin: 0 },
                MomentKind::UntreatedShare { z: 0, bin: 0 },
                MomentKind::TreatedShare { z: 1, bin: 0 },
                MomentKind::UntreatedShare { z: 1, bin: 0 },
            ];
            let base = MomentEvaluation { contributions: Array2::zeros((50, 6)), means: means.clone(), sds: vec![0.7; 6], kinds };
            let s0 = test_statistic(&base, 50);
            prop_assert!(s0 >= 0.0);
            let mut moved = base.clone();
            if j < 2 {
                moved.means[j] += bump * moved.means[j].signum();
            } else {
                moved.means[j] = moved.means[j].min(0.0) - bump;
            }
            prop_assert!(test_statistic(&moved, 50) >= s0);
        }
    }
}
