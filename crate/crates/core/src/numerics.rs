//! Scalar numerical building blocks: the standard normal, adaptive
//! Gauss–Kronrod quadrature, monotone root finding and the bivariate normal
//! CDF.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::sync::OnceLock;

use crate::error::{Error, Result};

fn standard_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("valid standard normal"))
}

/// Φ(x).
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        standard_normal().cdf(x)
    }
}

/// φ(x).
pub fn norm_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        standard_normal().pdf(x)
    }
}

/// Φ⁻¹(p), with Φ⁻¹(0) = −∞ and Φ⁻¹(1) = +∞.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        standard_normal().inverse_cdf(p)
    }
}

// Gauss–Kronrod 7/15 abscissae and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_SEGMENTS: usize = 2000;

fn kronrod_segment<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]` to an
/// absolute error estimate of `abs_tol`.
///
/// Segments are bisected greedily (largest error first) until the summed
/// error estimate meets the tolerance or the segment budget is exhausted.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let (v, e) = kronrod_segment(&f, lo, hi);
    let mut segments = vec![(lo, hi, v, e)];
    let mut total_err = e;
    while total_err > abs_tol && segments.len() < MAX_SEGMENTS {
        let (worst, _) = segments
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, s)| {
                if s.3 > acc.1 {
                    (i, s.3)
                } else {
                    acc
                }
            });
        let (sa, sb, _, se) = segments.swap_remove(worst);
        let mid = 0.5 * (sa + sb);
        if mid <= sa || mid >= sb {
            // cannot split further in floating point
            segments.push((sa, sb, kronrod_segment(&f, sa, sb).0, 0.0));
            total_err -= se;
            continue;
        }
        let (v1, e1) = kronrod_segment(&f, sa, mid);
        let (v2, e2) = kronrod_segment(&f, mid, sb);
        total_err += e1 + e2 - se;
        segments.push((sa, mid, v1, e1));
        segments.push((mid, sb, v2, e2));
    }
    // sum from smallest magnitude for a little extra accuracy
    let mut values: Vec<f64> = segments.iter().map(|s| s.2).collect();
    values.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    sign * values.iter().sum::<f64>()
}

/// Integral of `f` over `[a, b]` split at the supplied interior breakpoints.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], abs_tol: f64) -> f64 {
    let mut points = vec![a];
    points.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    points.push(b);
    points.sort_by(f64::total_cmp);
    let pieces = (points.len() - 1) as f64;
    points
        .windows(2)
        .map(|w| integrate(&f, w[0], w[1], abs_tol / pieces))
        .sum()
}

/// Smallest `x ∈ [lo, hi]` (to within `tol`) with `f(x) >= target`, for a
/// nondecreasing `f`. Returns `hi` when the target is never reached.
pub fn bisect_increasing<F: Fn(f64) -> f64>(f: F, target: f64, lo: f64, hi: f64, tol: f64) -> f64 {
    if f(lo) >= target {
        return lo;
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if f(mid) >= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    b
}

const TAIL: f64 = 9.0;
const BVN_TOL: f64 = 1e-13;

/// P(X₁ ≤ x₁, X₂ ≤ x₂) for a standard bivariate normal with correlation `rho`.
///
/// Evaluated as ∫_{−∞}^{x₁} φ(s) Φ((x₂ − ρs)/√(1−ρ²)) ds with adaptive
/// quadrature; the truncation at ±9 standard deviations contributes less
/// than 1e−18.
pub fn bvn_cdf(x1: f64, x2: f64, rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::domain(format!("correlation must satisfy |rho| < 1, got {rho}")));
    }
    if x1.is_nan() || x2.is_nan() {
        return Err(Error::domain("bivariate normal CDF evaluated at NaN"));
    }
    if x1 == f64::NEG_INFINITY || x2 == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if x1 == f64::INFINITY {
        return Ok(norm_cdf(x2));
    }
    if x2 == f64::INFINITY {
        return Ok(norm_cdf(x1));
    }
    if rho == 0.0 {
        return Ok(norm_cdf(x1) * norm_cdf(x2));
    }
    let upper = x1.min(TAIL);
    if upper <= -TAIL {
        return Ok(0.0);
    }
    let scale = (1.0 - rho * rho).sqrt();
    let integrand = |s: f64| norm_pdf(s) * norm_cdf((x2 - rho * s) / scale);
    let pivot = x2 / rho;
    let value = integrate_with_breaks(integrand, -TAIL, upper, &[pivot, 0.0], BVN_TOL);
    Ok(value.clamp(0.0, norm_cdf(x1).min(norm_cdf(x2))))
}

/// Gaussian copula C(u, v) = Φ₂(Φ⁻¹(u), Φ⁻¹(v); ρ), exact at the edges of the
/// unit square.
pub fn gaussian_copula(u: f64, v: f64, rho: f64) -> Result<f64> {
    if u <= 0.0 || v <= 0.0 {
        return Ok(0.0);
    }
    if u >= 1.0 {
        return Ok(v.min(1.0));
    }
    if v >= 1.0 {
        return Ok(u);
    }
    if rho == 0.0 {
        return Ok(u * v);
    }
    let c = bvn_cdf(norm_quantile(u), norm_quantile(v), rho)?;
    // Fréchet–Hoeffding bounds
    Ok(c.clamp((u + v - 1.0).max(0.0), u.min(v)))
}

/// ∂C(u, v)/∂u = P(V ≤ v | U = u) for the Gaussian copula.
pub fn gaussian_copula_du(u: f64, v: f64, rho: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    if v >= 1.0 {
        return 1.0;
    }
    if rho == 0.0 {
        return v;
    }
    let scale = (1.0 - rho * rho).sqrt();
    let zu = norm_quantile(u.clamp(0.0, 1.0));
    if zu.is_infinite() {
        // conditional law degenerates to a point mass at ±∞
        let towards = if (zu > 0.0) == (rho > 0.0) { 0.0 } else { 1.0 };
        return towards;
    }
    norm_cdf((norm_quantile(v) - rho * zu) / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn bvn_origin_matches_arcsin_identity() {
        for &rho in &[-0.9, -0.5, -0.1, 0.0, 0.3, 0.5, 0.8, 0.95] {
            let expected = 0.25 + f64::asin(rho) / (2.0 * PI);
            assert_abs_diff_eq!(bvn_cdf(0.0, 0.0, rho).unwrap(), expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn bvn_examples() {
        assert_abs_diff_eq!(bvn_cdf(0.0, 0.0, 0.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(bvn_cdf(0.0, 0.0, 0.5).unwrap(), 1.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(bvn_cdf(8.0, 8.0, 0.5).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn bvn_rejects_degenerate_correlation() {
        assert!(matches!(bvn_cdf(0.0, 0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(bvn_cdf(0.0, 0.0, -1.2), Err(Error::Domain(_))));
    }

    #[test]
    fn bvn_marginals() {
        for &rho in &[-0.7, 0.2, 0.6] {
            for &x in &[-2.0, -1.0, 0.0, 1.0, 2.0] {
                assert_abs_diff_eq!(bvn_cdf(x, 8.0, rho).unwrap(), norm_cdf(x), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn bvn_matches_finite_difference_of_conditional() {
        // independent route: Φ₂ = Φ(x1) − ∫_{x2}^{∞} φ(t) Φ((x1 − ρt)/s) dt via plain
        // composite Simpson on a fine grid
        let (x1, x2, rho) = (0.7, -0.4, 0.65_f64);
        let s = (1.0 - rho * rho).sqrt();
        let n = 200_000;
        let (a, b) = (x2, 12.0);
        let h = (b - a) / n as f64;
        let g = |t: f64| norm_pdf(t) * norm_cdf((x1 - rho * t) / s);
        let mut acc = g(a) + g(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(a + i as f64 * h);
        }
        let tail = acc * h / 3.0;
        let oracle = norm_cdf(x1) - tail;
        assert_abs_diff_eq!(bvn_cdf(x1, x2, rho).unwrap(), oracle, epsilon = 1e-10);
    }

    #[test]
    fn quadrature_polynomial_and_smooth() {
        assert_abs_diff_eq!(integrate(|x| x * x, 0.0, 1.0, 1e-14), 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(integrate(f64::sin, 0.0, PI, 1e-12), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(integrate(f64::sqrt, 0.0, 1.0, 1e-12), 2.0 / 3.0, epsilon = 1e-11);
    }

    #[test]
    fn bisection_finds_left_limit() {
        let x = bisect_increasing(|y| y * y, 0.25, 0.0, 1.0, 1e-12);
        assert_abs_diff_eq!(x, 0.5, epsilon = 1e-11);
        assert_eq!(bisect_increasing(|y| y, -1.0, 0.0, 1.0, 1e-12), 0.0);
    }

    #[test]
    fn copula_edges() {
        assert_eq!(gaussian_copula(0.3, 1.0, 0.4).unwrap(), 0.3);
        assert_eq!(gaussian_copula(1.0, 0.6, 0.4).unwrap(), 0.6);
        assert_eq!(gaussian_copula(0.0, 0.6, 0.4).unwrap(), 0.0);
        assert_abs_diff_eq!(gaussian_copula(0.3, 0.6, 0.0).unwrap(), 0.18, epsilon = 1e-15);
    }
}
