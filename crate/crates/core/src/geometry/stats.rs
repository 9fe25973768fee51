use crate::error::{Error, Result};

/// Quantile of already sorted data, linear interpolation between the closest
/// order statistics (position `q * (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty array"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in quantile input".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&s, q))
}

/// The `lo` and `hi` quantiles of `values`.
pub fn percentile_bounds(values: &[f64], lo: f64, hi: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&lo) || !(lo < hi && hi <= 1.0) {
        return Err(Error::invalid(format!("need 0 <= lo < hi <= 1, got {lo}, {hi}")));
    }
    Ok((quantile(values, lo)?, quantile(values, hi)?))
}

/// Clamps values to the `[lo, hi]` quantile range of the same array.
pub fn clip_to_percentiles(values: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    let (a, b) = percentile_bounds(values, lo, hi)?;
    Ok(values.iter().map(|v| v.clamp(a, b)).collect())
}

/// Least-squares coefficients `(c0, c1, c2)` of `y = c0 + c1 x + c2 x^2`.
pub fn fit_quadratic_trend(x: &[f64], y: &[f64]) -> Result<[f64; 3]> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} x values, {} y values", x.len(), y.len())));
    }
    let mut distinct = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid(format!(
            "quadratic fit needs at least 3 distinct x values, got {}",
            distinct.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("non-finite value in trend data".into()));
    }
    // Work in a centered, scaled variable t = (x - m) / s for conditioning.
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let s = x.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
    let mut a: Vec<[f64; 3]> = x
        .iter()
        .map(|v| {
            let t = (v - m) / s;
            [1.0, t, t * t]
        })
        .collect();
    let mut b = y.to_vec();
    // Householder QR, solving R c = Q^T y.
    let rows = a.len();
    let mut r = [[0.0; 3]; 3];
    for k in 0..3 {
        let norm = (k..rows).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate("rank-deficient design matrix".into()));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..rows).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vn2: f64 = v.iter().map(|e| e * e).sum();
        for j in k..3 {
            let d: f64 = (k..rows).map(|i| v[i - k] * a[i][j]).sum::<f64>() * 2.0 / vn2;
            for i in k..rows {
                a[i][j] -= d * v[i - k];
            }
        }
        let d: f64 = (k..rows).map(|i| v[i - k] * b[i]).sum::<f64>() * 2.0 / vn2;
        for i in k..rows {
            b[i] -= d * v[i - k];
        }
        for j in k..3 {
            r[k][j] = a[k][j];
        }
    }
    let scale = r[0][0].abs();
    if (0..3).any(|k| r[k][k].abs() <= 1e-12 * scale) {
        return Err(Error::Degenerate("rank-deficient design matrix".into()));
    }
    let mut c = [0.0; 3];
    for k in (0..3).rev() {
        let mut acc = b[k];
        for j in k + 1..3 {
            acc -= r[k][j] * c[j];
        }
        c[k] = acc / r[k][k];
    }
    // Map back: t = (x - m)/s.
    let (d0, d1, d2) = (c[0], c[1] / s, c[2] / (s * s));
    Ok([d0 - d1 * m + d2 * m * m, d1 - 2.0 * d2 * m, d2])
}

pub fn quadratic_residuals(coef: &[f64; 3], x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| yi - (coef[0] + coef[1] * xi + coef[2] * xi * xi))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clip_identity_at_full_range() {
        let v = vec![3.0, -1.0, 7.5, 2.0];
        assert_eq!(clip_to_percentiles(&v, 0.0, 1.0).unwrap(), v);
    }

    #[test]
    fn clip_linear_quantile_convention() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let c = clip_to_percentiles(&v, 0.01, 0.99).unwrap();
        let min = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((min - 0.99).abs() < 1e-12, "{min}");
        assert!((max - 98.01).abs() < 1e-12, "{max}");
    }

    #[test]
    fn clip_constant_unchanged() {
        let v = vec![4.2; 17];
        assert_eq!(clip_to_percentiles(&v, 0.1, 0.9).unwrap(), v);
    }

    #[test]
    fn exact_quadratic_recovered() {
        let x: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 + 3.0 * x - 0.5 * x * x).collect();
        let c = fit_quadratic_trend(&x, &y).unwrap();
        for (a, b) in c.iter().zip([2.0, 3.0, -0.5]) {
            assert!((a - b).abs() < 1e-9, "{c:?}");
        }
    }

    #[test]
    fn constant_fit() {
        let x = [1.0, 2.0, 5.0, 9.0];
        let c = fit_quadratic_trend(&x, &[5.0; 4]).unwrap();
        assert!((c[0] - 5.0).abs() < 1e-12 && c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
    }

    #[test]
    fn too_few_distinct_x() {
        assert!(fit_quadratic_trend(&[1.0, 1.0, 2.0, 2.0], &[0.0, 1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn fit_beats_perturbed_coefficients() {
        let x: Vec<f64> = (0..40).map(|i| 20.0 + i as f64 * 1.5).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, x)| 1.0 + 0.2 * x - 0.003 * x * x + 0.3 * ((i * 7919 % 13) as f64 - 6.0) / 6.0)
            .collect();
        let c = fit_quadratic_trend(&x, &y).unwrap();
        let sse = |c: &[f64; 3]| quadratic_residuals(c, &x, &y).iter().map(|r| r * r).sum::<f64>();
        let best = sse(&c);
        for k in 0..3 {
            for d in [1e-3, -1e-3, 1e-5, -1e-5] {
                let mut p = c;
                p[k] += d * 10f64.powi(-(k as i32) * 2);
                assert!(sse(&p) >= best);
            }
        }
    }

    proptest! {
        #[test]
        fn clip_order_preserving_and_idempotent(
            v in prop::collection::vec(-100.0f64..100.0, 1..60),
            lo in 0.0f64..0.4,
            hi in 0.6f64..1.0,
        ) {
            let c = clip_to_percentiles(&v, lo, hi).unwrap();
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] <= v[j] {
                        prop_assert!(c[i] <= c[j]);
                    }
                }
            }
            // Re-clamping to the same bounds changes nothing.
            let (a, b) = percentile_bounds(&v, lo, hi).unwrap();
            let cc: Vec<f64> = c.iter().map(|x| x.clamp(a, b)).collect();
            prop_assert_eq!(cc, c);
        }
    }
}
