//! Scalar statistical primitives: order-statistic quantiles, the conformal
//! quantile, 1-D Gaussian KDE with Silverman bandwidth, and the DKW slack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.5066282746310002;

/// Rank arithmetic is exact in theory but `q * n` can land a hair above an
/// integer in floating point; snap before taking the ceiling.
fn ceil_rank(x: f64) -> usize {
    let snapped = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    snapped as usize
}

/// The ceil(q*n)-th smallest element (1-indexed order statistic); q = 1
/// returns the maximum. No interpolation.
pub fn empirical_quantile(v: &[f64], q: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    debug_assert!(q > 0.0 && q <= 1.0, "quantile level out of range: {q}");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ceil_rank(q * sorted.len() as f64).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Conformal quantile at an arbitrary target level: the empirical quantile at
/// level `target * (1 + 1/n)`, clamped to the maximum when that exceeds 1.
pub fn conformal_quantile_at(scores: &[f64], target: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyVector);
    }
    let n = scores.len() as f64;
    let level = target * (1.0 + 1.0 / n);
    if level >= 1.0 {
        Ok(scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    } else {
        empirical_quantile(scores, level)
    }
}

/// The (1-alpha)(1+1/n)-th quantile of the scores, the split-conformal
/// calibration quantile.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    conformal_quantile_at(scores, 1.0 - alpha)
}

/// One-dimensional Gaussian kernel density estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Kde1d {
    samples: Vec<f64>,
    bandwidth: f64,
    /// Lower bound on reported density, in absolute units.
    floor: f64,
}

pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Fit a Gaussian KDE with Silverman's bandwidth
/// h = 0.9 * min(sd, IQR/1.34) * n^(-1/5), falling back to
/// 1e-3 * max(1, |mean|) when that quantity vanishes.
pub fn kde_fit(samples: &[f64], density_floor: f64) -> Result<Kde1d> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: samples.len() });
    }
    let n = samples.len() as f64;
    let sd = sample_sd(samples);
    let q25 = empirical_quantile(samples, 0.25)?;
    let q75 = empirical_quantile(samples, 0.75)?;
    let iqr = q75 - q25;
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let mut h = 0.9 * spread * n.powf(-0.2);
    if h <= 0.0 {
        let mean = samples.iter().sum::<f64>() / n;
        h = 1e-3 * mean.abs().max(1.0);
    }
    Ok(Kde1d::with_bandwidth(samples, h, density_floor))
}

impl Kde1d {
    /// Construct with an explicit bandwidth (tests and overrides).
    pub fn with_bandwidth(samples: &[f64], bandwidth: f64, density_floor: f64) -> Self {
        assert!(bandwidth > 0.0, "bandwidth must be positive");
        assert!(!samples.is_empty(), "samples must be nonempty");
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sd = sample_sd(&sorted);
        let floor = if sd > 0.0 { density_floor / sd } else { density_floor };
        Kde1d { samples: sorted, bandwidth, floor }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Floored density estimate at `x`.
    pub fn density(&self, x: f64) -> f64 {
        self.density_unfloored(x).max(self.floor)
    }

    /// Raw kernel sum (1/(n h)) * sum phi((x - s_i) / h).
    pub fn density_unfloored(&self, x: f64) -> f64 {
        let n = self.samples.len() as f64;
        let h = self.bandwidth;
        let sum: f64 =
            self.samples.iter().map(|s| (-(0.5) * ((x - s) / h).powi(2)).exp()).sum();
        sum / (n * h * SQRT_2PI)
    }
}

/// Invert 1 - 2 exp(-2 lambda^2) = confidence for the DKW slack, floored at
/// sqrt(ln(2)/2) where the bound is valid.
pub fn dkw_lambda(confidence: f64) -> f64 {
    debug_assert!(confidence > 0.0 && confidence < 1.0);
    let lambda = ((2.0 / (1.0 - confidence)).ln() / 2.0).sqrt();
    lambda.max((2.0_f64.ln() / 2.0).sqrt())
}

/// PAC-corrected per-subgroup target coverage min(1, (1-alpha) + lambda/sqrt(n_g)).
pub fn pac_target(alpha: f64, n_g: usize, lambda: f64) -> f64 {
    debug_assert!(n_g >= 1);
    (1.0 - alpha + lambda / (n_g as f64).sqrt()).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn empirical_quantile_examples() {
        assert_eq!(empirical_quantile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&[7.0], 0.3).unwrap(), 7.0);
        assert_eq!(empirical_quantile(&[7.0], 1.0).unwrap(), 7.0);
        let v: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&v, 1.0).unwrap(), 10.0);
        assert!(matches!(empirical_quantile(&[], 0.5), Err(Error::EmptyVector)));
    }

    #[test]
    fn conformal_quantile_examples() {
        let v19: Vec<f64> = (1..=19).map(|i| i as f64).collect();
        assert_eq!(conformal_quantile(&v19, 0.1).unwrap(), 18.0);
        let v9: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        assert_eq!(conformal_quantile(&v9, 0.1).unwrap(), 9.0);
        assert_eq!(conformal_quantile(&[5.0], 0.5).unwrap(), 5.0);
    }

    #[test]
    fn dkw_lambda_examples() {
        assert!((dkw_lambda(0.9) - 1.2239).abs() < 1e-4);
        assert!((dkw_lambda(0.5) - 0.8326).abs() < 1e-4);
        // At tiny confidence the inverted value sits essentially on the
        // validity floor sqrt(ln 2 / 2) ~ 0.5887.
        assert!((dkw_lambda(0.0001) - 0.5887).abs() < 1e-4);
        assert!(dkw_lambda(0.0001) >= (2.0_f64.ln() / 2.0).sqrt());
    }

    #[test]
    fn pac_target_examples() {
        assert!((pac_target(0.1, 400, 1.2239) - 0.96120).abs() < 1e-4);
        assert!((pac_target(0.1, 100_000_000, 1.2239) - 0.9).abs() < 1e-3);
        assert_eq!(pac_target(0.1, 100, 1.2239), 1.0);
    }

    #[test]
    fn kde_single_kernel_closed_form() {
        let k = Kde1d::with_bandwidth(&[0.0], 1.0, 1e-6);
        assert!((k.density(0.0) - 0.3989422804014327).abs() < 1e-12);
        let k2 = Kde1d::with_bandwidth(&[-1.0, 1.0], 1.0, 1e-6);
        let expected = (-0.5_f64).exp() / SQRT_2PI;
        assert!((k2.density(0.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn kde_symmetry() {
        let k = kde_fit(&[-2.0, -1.0, 0.0, 1.0, 2.0], 1e-6).unwrap();
        for x in [0.3, 0.9, 1.7, 4.0] {
            assert!((k.density(x) - k.density(-x)).abs() < 1e-12);
        }
    }

    #[test]
    fn kde_silverman_from_two_points() {
        let k = kde_fit(&[-1.0, 1.0], 1e-6).unwrap();
        // sd = sqrt(2); IQR under the ceil-rank convention is 1 - (-1) = 2,
        // so spread = min(sqrt(2), 2/1.34) = sqrt(2).
        let expected = 0.9 * 2.0_f64.sqrt() * 2.0_f64.powf(-0.2);
        assert!((k.bandwidth() - expected).abs() < 1e-12);
    }

    #[test]
    fn kde_degenerate_spread_positive_bandwidth() {
        let mut samples = vec![0.0; 50];
        samples.push(1.0);
        let k = kde_fit(&samples, 1e-6).unwrap();
        assert!(k.bandwidth() > 0.0);
        assert!(k.density(0.0).is_finite());
    }

    #[test]
    fn kde_fit_too_few() {
        assert!(matches!(kde_fit(&[1.0], 1e-6), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn kde_standard_normal_density_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let k = kde_fit(&samples, 1e-6).unwrap();
        let d = k.density(0.0);
        assert!((0.35..=0.45).contains(&d), "density(0) = {d}");
    }

    #[test]
    fn kde_integrates_to_one() {
        // Simpson's rule over a wide range on a small sample set.
        let k = kde_fit(&[-1.5, -0.2, 0.0, 0.4, 2.0], 1e-6).unwrap();
        let (a, b) = (-60.0, 60.0);
        let m = 200_001;
        let h = (b - a) / (m - 1) as f64;
        let mut sum = 0.0;
        for i in 0..m {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == m - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * k.density_unfloored(x);
        }
        let integral = sum * h / 3.0;
        assert!((integral - 1.0).abs() < 1e-6, "integral = {integral}");
    }

    proptest! {
        #[test]
        fn empirical_quantile_monotone_in_q(
            v in prop::collection::vec(-1e6..1e6f64, 1..60),
            q1 in 0.01..1.0f64,
            q2 in 0.01..1.0f64,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(
                empirical_quantile(&v, lo).unwrap() <= empirical_quantile(&v, hi).unwrap()
            );
        }

        #[test]
        fn conformal_dominates_empirical(
            v in prop::collection::vec(-1e6..1e6f64, 1..60),
            alpha in 0.01..0.99f64,
        ) {
            let c = conformal_quantile(&v, alpha).unwrap();
            let e = empirical_quantile(&v, 1.0 - alpha).unwrap();
            prop_assert!(c >= e);
        }

        #[test]
        fn dkw_lambda_monotone(c1 in 0.5..0.999f64, c2 in 0.5..0.999f64) {
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            prop_assert!(dkw_lambda(lo) <= dkw_lambda(hi));
        }

        #[test]
        fn kde_density_floored(x in -50.0..50.0f64) {
            let k = kde_fit(&[0.0, 1.0, 2.0], 1e-6).unwrap();
            let sd = sample_sd(&[0.0, 1.0, 2.0]);
            prop_assert!(k.density(x) >= 1e-6 / sd);
        }
    }
}
