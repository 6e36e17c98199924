/// Mean binary cross-entropy on raw logits, in the overflow-free form
/// `max(l, 0) - l*t + ln(1 + exp(-|l|))`. Empty input gives 0.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(logits.len(), targets.len(), "logits/targets length");
    if logits.is_empty() {
        return 0.0;
    }
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
        .sum();
    total / logits.len() as f64
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// d(mean BCE)/d(logit) = (sigmoid(l) - t) / n.
pub fn bce_with_logits_grad(logits: &[f64], targets: &[f64]) -> Vec<f64> {
    let n = logits.len().max(1) as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| (sigmoid(l) - t) / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((bce_with_logits(&[0.0], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        // ln(1 + e^-20), evaluated at high precision: 2.0611536203143807e-9
        let v = bce_with_logits(&[20.0], &[1.0]);
        assert!((v - 2.061_153_620_314_381e-9).abs() < 1e-20, "{v}");
        // 20 + ln(1 + e^-20)
        let v = bce_with_logits(&[-20.0], &[1.0]);
        assert!((v - 20.000_000_002_061_154).abs() < 1e-12, "{v}");
    }

    #[test]
    fn non_negative_and_finite_at_extremes() {
        for &l in &[-1e6, -50.0, -1.0, 0.0, 1.0, 50.0, 1e6] {
            for &t in &[0.0, 1.0] {
                let v = bce_with_logits(&[l], &[t]);
                assert!(v.is_finite() && v >= 0.0);
            }
        }
        assert_eq!(bce_with_logits(&[], &[]), 0.0);
    }
}
