//! Bjøntegaard delta rate between two rate-distortion curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr_db: f64,
}

/// Least-squares cubic through `(x, y)`, returned as coefficients of
/// `c0 + c1 t + c2 t^2 + c3 t^3` in the normalized variable
/// `t = (x - mean) / spread`, together with `(mean, spread)`.
fn fit_cubic(x: &[f64], y: &[f64]) -> Result<([f64; 4], f64, f64)> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let spread = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(spread > 0.0) {
        return Err(Error::Usage("curve needs distinct PSNR values".into()));
    }
    // Normal equations in the normalized variable are well conditioned.
    let mut a = [[0.0; 5]; 4];
    for (&xi, &yi) in x.iter().zip(y) {
        let t = (xi - mean) / spread;
        let pows = [1.0, t, t * t, t * t * t];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += pows[r] * pows[c];
            }
            a[r][4] += pows[r] * yi;
        }
    }
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        if a[col][col].abs() < 1e-12 {
            return Err(Error::Usage("curve needs at least four distinct PSNR values".into()));
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Ok(([0, 1, 2, 3].map(|i| a[i][4] / a[i][i]), mean, spread))
}

/// Exact integral of the fitted cubic over `[lo, hi]` in the original variable.
fn integrate(fit: &([f64; 4], f64, f64), lo: f64, hi: f64) -> f64 {
    let (c, mean, spread) = fit;
    let anti = |x: f64| {
        let t = (x - mean) / spread;
        c[0] * t + c[1] * t * t / 2.0 + c[2] * t.powi(3) / 3.0 + c[3] * t.powi(4) / 4.0
    };
    spread * (anti(hi) - anti(lo))
}

fn check_curve(curve: &[RdPoint]) -> Result<()> {
    if curve.len() < 4 {
        return Err(Error::Usage(format!("BD-rate needs at least 4 points, got {}", curve.len())));
    }
    if curve.iter().any(|p| !(p.bpp > 0.0) || !p.psnr_db.is_finite()) {
        return Err(Error::Usage("rates must be positive and PSNR finite".into()));
    }
    Ok(())
}

/// Average rate difference of `test` against `anchor` at equal PSNR, in
/// percent. Negative means `test` needs fewer bits.
pub fn bd_rate(test: &[RdPoint], anchor: &[RdPoint]) -> Result<f64> {
    check_curve(test)?;
    check_curve(anchor)?;
    let fit = |c: &[RdPoint]| {
        let x: Vec<f64> = c.iter().map(|p| p.psnr_db).collect();
        let y: Vec<f64> = c.iter().map(|p| p.bpp.log10()).collect();
        fit_cubic(&x, &y)
    };
    let range = |c: &[RdPoint]| {
        c.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.psnr_db), hi.max(p.psnr_db)))
    };
    let (lo_t, hi_t) = range(test);
    let (lo_a, hi_a) = range(anchor);
    let (lo, hi) = (lo_t.max(lo_a), hi_t.min(hi_a));
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    let avg = (integrate(&fit(test)?, lo, hi) - integrate(&fit(anchor)?, lo, hi)) / (hi - lo);
    Ok(100.0 * (10f64.powf(avg) - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(f64, f64)]) -> Vec<RdPoint> {
        points.iter().map(|&(bpp, psnr_db)| RdPoint { bpp, psnr_db }).collect()
    }

    fn anchor() -> Vec<RdPoint> {
        curve(&[(0.05, 58.0), (0.1, 62.5), (0.2, 66.0), (0.4, 69.0), (0.8, 71.5)])
    }

    fn scaled(c: &[RdPoint], f: f64) -> Vec<RdPoint> {
        c.iter().map(|p| RdPoint { bpp: p.bpp * f, ..*p }).collect()
    }

    #[test]
    fn identical_curves() {
        assert_eq!(bd_rate(&anchor(), &anchor()).unwrap(), 0.0);
    }

    #[test]
    fn uniform_rate_shifts() {
        assert!((bd_rate(&scaled(&anchor(), 0.5), &anchor()).unwrap() + 50.0).abs() < 0.1);
        assert!((bd_rate(&scaled(&anchor(), 2.0), &anchor()).unwrap() - 100.0).abs() < 0.2);
    }

    #[test]
    fn sign_flips_with_argument_order() {
        let better = curve(&[(0.04, 58.5), (0.09, 62.0), (0.15, 66.3), (0.33, 69.4), (0.7, 72.0)]);
        let ab = bd_rate(&better, &anchor()).unwrap();
        let ba = bd_rate(&anchor(), &better).unwrap();
        assert!(ab < 0.0 && ba > 0.0);
    }

    /// Four points determine the cubic exactly, so Lagrange interpolation
    /// integrated by composite Simpson is an independent reference.
    #[test]
    fn four_point_curves_match_interpolation() {
        let a = curve(&[(0.1, 30.0), (0.2, 33.0), (0.45, 36.5), (0.9, 39.0)]);
        let t = curve(&[(0.08, 30.5), (0.17, 33.2), (0.3, 36.0), (0.7, 39.5)]);
        let lagrange = |c: &[RdPoint], x: f64| -> f64 {
            (0..4)
                .map(|i| {
                    let w: f64 = (0..4)
                        .filter(|&j| j != i)
                        .map(|j| (x - c[j].psnr_db) / (c[i].psnr_db - c[j].psnr_db))
                        .product();
                    w * c[i].bpp.log10()
                })
                .sum()
        };
        let (lo, hi) = (30.5, 39.0);
        let n = 2000;
        let h = (hi - lo) / n as f64;
        let simpson = |f: &dyn Fn(f64) -> f64| {
            (0..=n)
                .map(|i| {
                    let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    w * f(lo + i as f64 * h)
                })
                .sum::<f64>()
                * h
                / 3.0
        };
        let diff = simpson(&|x| lagrange(&t, x) - lagrange(&a, x)) / (hi - lo);
        let expected = 100.0 * (10f64.powf(diff) - 1.0);
        let got = bd_rate(&t, &a).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        // Value from a least-squares cubic fit done independently in numpy.
        assert!((got - BD_FOUR_POINT).abs() < 1e-6, "{got}");
    }

    const BD_FOUR_POINT: f64 = -24.378_003_797_929_836;

    #[test]
    fn errors() {
        let far = curve(&[(0.1, 80.0), (0.2, 81.0), (0.3, 82.0), (0.4, 83.0)]);
        assert!(matches!(bd_rate(&far, &anchor()), Err(Error::NoOverlap)));
        assert!(bd_rate(&anchor()[..3], &anchor()).is_err());
        assert!(bd_rate(&curve(&[(0.1, 30.0); 4]), &anchor()).is_err());
    }
}
