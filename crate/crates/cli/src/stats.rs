//! Goodness-of-fit summaries for simulated p-values.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub n: usize,
    /// Sup distance between the empirical CDF and Uniform(0, 1).
    pub d: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test against Uniform(0, 1), asymptotic p-value with
/// Stephens' small-sample correction. `None` for empty input.
pub fn ks_uniform(values: &[f64]) -> Option<KsResult> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let n = v.len();
    if n == 0 {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / nf - x).max(x - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    let sn = nf.sqrt();
    Some(KsResult {
        n,
        d,
        p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_quantiles() {
        // classical critical values: Q(1.3581) = 0.05, Q(1.6276) = 0.01
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn uniform_grid_passes_and_shifted_fails() {
        let grid: Vec<f64> = (0..500).map(|i| (i as f64 + 0.5) / 500.0).collect();
        let ks = ks_uniform(&grid).unwrap();
        assert!((ks.d - 0.001).abs() < 1e-12);
        assert!(ks.p_value > 0.99);
        let shifted: Vec<f64> = grid.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&shifted).unwrap().p_value < 1e-6);
        assert!(ks_uniform(&[]).is_none());
    }
}
