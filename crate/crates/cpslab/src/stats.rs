//! Chi-square distributions, confidence intervals and seeded Gaussian sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::sscore::{Mat, Vector};

/// Deterministic generator used for every random draw in a run.
pub type SimRng = ChaCha20Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Vector of independent standard normal draws.
pub fn standard_normal(rng: &mut SimRng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// Zero-mean Gaussian draw `factor * z` with `z` standard normal.
pub fn gaussian(rng: &mut SimRng, factor: &Mat) -> Vector {
    factor * standard_normal(rng, factor.ncols())
}

fn check_dof(dof: f64) -> Result<()> {
    if !(dof > 0.0) || !dof.is_finite() {
        return Err(Error::invalid(format!("degrees of freedom must be positive, got {dof}")));
    }
    Ok(())
}

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(())
}

/// `P(X <= x)` for `X ~ chi2(dof)`.
pub fn chi2_cdf(x: f64, dof: f64) -> Result<f64> {
    check_dof(dof)?;
    if x <= 0.0 {
        return Ok(0.0);
    }
    Ok(gamma_lr(dof / 2.0, x / 2.0))
}

/// `P(X <= x)` for a noncentral chi-square with noncentrality `ncp`,
/// as a Poisson mixture of central chi-square distributions.
pub fn ncx2_cdf(x: f64, dof: f64, ncp: f64) -> Result<f64> {
    check_dof(dof)?;
    if !(ncp >= 0.0) || !ncp.is_finite() {
        return Err(Error::invalid(format!("noncentrality must be nonnegative, got {ncp}")));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if ncp == 0.0 {
        return chi2_cdf(x, dof);
    }
    let half = ncp / 2.0;
    let mode = half.floor() as u64;
    let weight = |j: u64| (-half + j as f64 * half.ln() - ln_gamma(j as f64 + 1.0)).exp();
    let term = |j: u64| weight(j) * gamma_lr(dof / 2.0 + j as f64, x / 2.0);
    let mut sum = 0.0;
    let mut mass = 0.0;
    // Walk outward from the Poisson mode until the remaining weight is negligible.
    let mut j = mode;
    loop {
        let w = weight(j);
        sum += term(j);
        mass += w;
        if (w < 1e-17 && j + 1 < mode) || j == 0 {
            break;
        }
        j -= 1;
    }
    let mut j = mode + 1;
    loop {
        let w = weight(j);
        sum += term(j);
        mass += w;
        if 1.0 - mass < 1e-13 || w < 1e-17 {
            break;
        }
        j += 1;
    }
    Ok(sum.clamp(0.0, 1.0))
}

fn bisect_quantile(p: f64, start: f64, cdf: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = start.max(1.0);
    while cdf(hi)? < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::numerical("quantile bracket did not close"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `p` quantile of `chi2(dof)`.
pub fn chi2_quantile(p: f64, dof: f64) -> Result<f64> {
    check_prob(p)?;
    check_dof(dof)?;
    bisect_quantile(p, 2.0 * dof, |x| chi2_cdf(x, dof))
}

/// `p` quantile of the noncentral chi-square distribution.
pub fn ncx2_quantile(p: f64, dof: f64, ncp: f64) -> Result<f64> {
    check_prob(p)?;
    check_dof(dof)?;
    bisect_quantile(p, 2.0 * (dof + ncp), |x| ncx2_cdf(x, dof, ncp))
}

/// Estimated rate with a three-sigma normal-approximation interval clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateEstimate {
    pub hits: u64,
    pub trials: u64,
    pub rate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl RateEstimate {
    pub fn new(hits: u64, trials: u64) -> Self {
        if trials == 0 {
            return RateEstimate { hits, trials, rate: 0.0, lo: 0.0, hi: 1.0 };
        }
        let rate = hits as f64 / trials as f64;
        let half = 3.0 * (rate * (1.0 - rate) / trials as f64).sqrt();
        RateEstimate {
            hits,
            trials,
            rate,
            lo: (rate - half).max(0.0),
            hi: (rate + half).min(1.0),
        }
    }

    /// Whether `target` lies inside the interval.
    pub fn covers(&self, target: f64) -> bool {
        self.lo <= target && target <= self.hi
    }

    /// Whether the rate lies within three binomial standard deviations of `p0`,
    /// the deviation taken under `p0` itself.
    pub fn within_ci_of(&self, p0: f64) -> bool {
        if self.trials == 0 {
            return false;
        }
        (self.rate - p0).abs() <= 3.0 * (p0 * (1.0 - p0) / self.trials as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn central_quantiles_match_reference() {
        assert!((chi2_quantile(0.99, 3.0).unwrap() - 11.344866730144373).abs() < 1e-9);
        assert!((chi2_quantile(0.99, 6.0).unwrap() - 16.811893829770927).abs() < 1e-9);
        assert!((chi2_cdf(7.5, 4.0).unwrap() - 0.8882907071839568).abs() < 1e-12);
    }

    #[test]
    fn noncentral_matches_reference() {
        assert!((ncx2_cdf(10.0, 4.0, 3.0).unwrap() - 0.7837631816817809).abs() < 1e-12);
        assert!((ncx2_cdf(150.0, 90.0, 20.0).unwrap() - 0.9887792200398485).abs() < 1e-12);
        assert!((ncx2_quantile(0.99, 3.0, 2.5).unwrap() - 18.345721351149173).abs() < 1e-8);
        assert!((ncx2_quantile(0.95, 12.0, 40.0).unwrap() - 75.83475894151906).abs() < 1e-8);
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        assert!(chi2_quantile(1.0, 3.0).is_err());
        assert!(chi2_quantile(0.5, 0.0).is_err());
        assert!(ncx2_cdf(1.0, 2.0, -1.0).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = standard_normal(&mut rng_stream(7, 0), 5);
        let b = standard_normal(&mut rng_stream(7, 0), 5);
        let c = standard_normal(&mut rng_stream(7, 1), 5);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rate_interval() {
        let r = RateEstimate::new(100, 10_000);
        assert!((r.rate - 0.01).abs() < 1e-15);
        assert!(r.covers(0.01) && !r.covers(0.02));
        assert!((r.hi - r.lo - 6.0 * (0.01f64 * 0.99 / 1e4).sqrt()).abs() < 1e-15);
        // 3 sigma under p0 = 0.01 with 10^4 trials is 0.003.
        assert!(RateEstimate::new(129, 10_000).within_ci_of(0.01));
        assert!(!RateEstimate::new(131, 10_000).within_ci_of(0.01));
        assert!(!RateEstimate::new(0, 0).within_ci_of(0.01));
    }

    proptest! {
        #[test]
        fn ncx2_cdf_monotone_and_bounded(x in 0.1f64..200.0, dx in 0.0f64..10.0, k in 1.0f64..60.0, l in 0.0f64..80.0) {
            let a = ncx2_cdf(x, k, l).unwrap();
            let b = ncx2_cdf(x + dx, k, l).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b >= a - 1e-14);
            // Noncentrality shifts mass to the right.
            prop_assert!(ncx2_cdf(x, k, l + 1.0).unwrap() <= a + 1e-12);
        }

        #[test]
        fn quantile_inverts_cdf(p in 0.01f64..0.999, k in 1.0f64..40.0, l in 0.0f64..50.0) {
            let q = ncx2_quantile(p, k, l).unwrap();
            prop_assert!((ncx2_cdf(q, k, l).unwrap() - p).abs() < 1e-9);
        }
    }
}
