//! Two-sample Kolmogorov-Smirnov test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Series terms smaller than this end the tail sum.
const SERIES_TOL: f64 = 1e-12;
/// Below this argument the Kolmogorov tail equals 1 to within 1e-12.
const SMALL_LAMBDA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `sup_x |F_a(x) − F_b(x)|` by a merged sweep over both sorted samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        // Step past every copy of the smallest remaining value in both samples
        // before comparing, so ties never create a spurious gap.
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    Ok(d)
}

/// Complementary Kolmogorov distribution `2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`, clamped to `[0, 1]`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < SMALL_LAMBDA {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut k = 1u32;
    loop {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        if k % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
        if term < SERIES_TOL {
            break;
        }
        k += 1;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic two-sided p-value for statistic `d` with the usual small-sample
/// correction `(√n_e + 0.12 + 0.11/√n_e)`.
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let r = ne.sqrt();
    kolmogorov_tail((r + 0.12 + 0.11 / r) * d)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let statistic = ks_statistic(a, b)?;
    Ok(KsResult {
        statistic,
        p_value: ks_p_value(statistic, a.len(), b.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Evaluates both empirical CDFs at every pooled point.
    fn brute_force_d(a: &[f64], b: &[f64]) -> f64 {
        let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (cdf(a, x) - cdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn examples() {
        let r = ks_two_sample(&[0.3, 0.1, 0.2], &[0.2, 0.3, 0.1]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = ks_two_sample(&[0.1, 0.2, 0.3], &[0.4, 0.5, 0.6]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(matches!(
            ks_two_sample(&[], &[1.0]),
            Err(Error::EmptySampleSet)
        ));
        assert!(matches!(
            ks_two_sample(&[1.0], &[]),
            Err(Error::EmptySampleSet)
        ));
    }

    #[test]
    fn frozen_p_values() {
        // Reference values from an independent evaluation of the same series.
        let cases = [
            (3, 3, 1.0, 0.032_621_651_652_021_17),
            (1, 1, 1.0, 0.289_041_428_370_826_8),
            (200, 200, 0.2, 5.433_126_073_938_166e-4),
        ];
        for (n, m, d, want) in cases {
            let got = ks_p_value(d, n, m);
            assert!(
                (got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-15,
                "{n} {m} {d}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn tail_limits() {
        assert_eq!(kolmogorov_tail(0.0), 1.0);
        assert!(kolmogorov_tail(0.2) > 1.0 - 1e-12);
        assert!(kolmogorov_tail(10.0) < 1e-80);
        assert!((kolmogorov_tail(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn p_monotone_in_d() {
        for &(n, m) in &[(5, 7), (50, 50), (200, 180)] {
            let mut prev = 1.0;
            for k in 0..=1000 {
                let p = ks_p_value(k as f64 / 1000.0, n, m);
                assert!(p <= prev);
                assert!((0.0..=1.0).contains(&p));
                prev = p;
            }
        }
    }

    fn samples() -> impl Strategy<Value = Vec<f64>> {
        // small integer grid so ties are common
        prop::collection::vec((-20i32..20).prop_map(|v| f64::from(v) / 4.0), 1..40)
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in samples(), b in samples()) {
            prop_assert_eq!(ks_statistic(&a, &b).unwrap(), brute_force_d(&a, &b));
        }

        #[test]
        fn symmetric(a in samples(), b in samples()) {
            prop_assert_eq!(ks_statistic(&a, &b).unwrap(), ks_statistic(&b, &a).unwrap());
        }

        #[test]
        fn invariant_under_increasing_maps(a in samples(), b in samples()) {
            let f = |x: &f64| x * x * x + x;
            let fa: Vec<f64> = a.iter().map(f).collect();
            let fb: Vec<f64> = b.iter().map(f).collect();
            prop_assert_eq!(ks_statistic(&a, &b).unwrap(), ks_statistic(&fa, &fb).unwrap());
        }
    }
}
