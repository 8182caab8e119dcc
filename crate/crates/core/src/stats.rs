//! Scalar statistics helpers: the standard normal, order statistics,
//! moments and Kolmogorov–Smirnov distances.

use statrs::function::erf;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(x)`, computed without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)` for `p` in `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Lower median by exact selection: element `(n-1)/2` of the sorted values.
///
/// Returns `None` for an empty slice or when any value is NaN.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut buf = values.to_vec();
    let k = (buf.len() - 1) / 2;
    let (_, m, _) = buf.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    Some(*m)
}

/// Median absolute deviation about the lower median (unscaled).
pub fn mad(values: &[f64]) -> Option<f64> {
    let med = lower_median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    lower_median(&dev)
}

/// Sample quantile with linear interpolation between order statistics
/// (the usual "type 7" definition). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Interquartile range using [`quantile_sorted`].
pub fn iqr(values: &[f64]) -> f64 {
    let s = sorted_copy(values);
    quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population (divide-by-n) standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Pearson kurtosis `m4 / m2²` (3 for a Gaussian).
pub fn kurtosis(values: &[f64]) -> f64 {
    let m = mean(values);
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(s2, s4), v| {
        let c = (v - m) * (v - m);
        (s2 + c, s4 + c * c)
    });
    let n = values.len() as f64;
    (m4 / n) / (m2 / n).powi(2)
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `values` and a continuous distribution function `cdf`.
pub fn ks_one_sample(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let s = sorted_copy(values);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0_f64, |acc, (i, &v)| {
        let f = cdf(v);
        let upper = (i + 1) as f64 / n - f;
        let lower = f - i as f64 / n;
        acc.max(upper).max(lower)
    })
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let sa = sorted_copy(a);
    let sb = sorted_copy(b);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0_f64;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_functions() {
        assert_relative_eq!(normal_pdf(0.0), 1.0 / (2.0 * std::f64::consts::PI).sqrt());
        assert_relative_eq!(normal_cdf(0.0), 0.5);
        assert_relative_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-12);
        assert_relative_eq!(normal_quantile(0.1), -1.2815515655446004, epsilon = 1e-12);
        for &x in &[-3.0, -0.7, 0.0, 1.3, 5.0] {
            assert_relative_eq!(normal_cdf(x) + normal_sf(x), 1.0, epsilon = 1e-15);
            assert_relative_eq!(normal_quantile(normal_cdf(x)), x, epsilon = 1e-9);
        }
    }

    #[test]
    fn lower_median_even_and_odd() {
        assert_eq!(lower_median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[]), None);
        assert_eq!(lower_median(&[1.0, f64::NAN]), None);
    }

    #[test]
    fn mad_of_symmetric_triple() {
        assert_eq!(mad(&[-1.0, 0.0, 1.0]), Some(1.0));
    }

    #[test]
    fn kurtosis_of_two_point_distribution() {
        // symmetric two-point law has kurtosis exactly 1
        assert_relative_eq!(kurtosis(&[-1.0, 1.0, -1.0, 1.0]), 1.0);
    }

    #[test]
    fn ks_distances() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        // single point at the median of U(0,1)
        assert_relative_eq!(ks_one_sample(&[0.5], |x| x.clamp(0.0, 1.0)), 0.5);
    }

    #[test]
    fn iqr_interpolates() {
        assert_relative_eq!(iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]), 2.0);
    }
}
