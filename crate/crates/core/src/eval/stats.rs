//! Bootstrap intervals, paired bootstrap tests and effect sizes.
//!
//! Resample `r` draws its indices from ChaCha8 seeded with the master seed
//! on stream `r`, so results do not depend on thread scheduling and are
//! identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 42;

/// Point estimate with a 95% percentile interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Ci {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// True when the two intervals share no point.
    pub fn disjoint(&self, other: &Ci) -> bool {
        self.hi < other.lo || other.hi < self.lo
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn resample_means(values: &[f64], resamples: usize, seed: u64) -> Vec<f64> {
    let n = values.len() as u64;
    (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut sum = 0.0;
            for _ in 0..n {
                sum += values[rng.gen_range(0..n) as usize];
            }
            sum / n as f64
        })
        .collect()
}

fn check(values: &[f64], resamples: usize) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no values to bootstrap".into()));
    }
    if resamples == 0 {
        return Err(Error::InvalidInput("resamples must be at least 1".into()));
    }
    Ok(())
}

/// Percentile bootstrap 95% interval of the mean. The interval is widened
/// to contain the point estimate if resampling noise would exclude it.
pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> Result<Ci> {
    check(values, resamples)?;
    let point = mean(values);
    let mut means = resample_means(values, resamples, seed);
    means.sort_by(f64::total_cmp);
    let b = resamples as f64;
    let lo_idx = (0.025 * b).floor() as usize;
    let hi_idx = ((0.975 * b).ceil() as usize).saturating_sub(1).max(lo_idx);
    Ok(Ci {
        point,
        lo: means[lo_idx.min(resamples - 1)].min(point),
        hi: means[hi_idx.min(resamples - 1)].max(point),
    })
}

/// Two-sided paired bootstrap p-value for `mean(a) != mean(b)`: the
/// fraction of resampled mean differences on the far side of zero, doubled
/// and capped at 1. Equal means give 1.
pub fn paired_bootstrap_p(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    check(&diffs, resamples)?;
    let observed = mean(&diffs);
    if observed == 0.0 {
        return Ok(1.0);
    }
    let crossing = resample_means(&diffs, resamples, seed)
        .into_iter()
        .filter(|&m| if observed > 0.0 { m <= 0.0 } else { m >= 0.0 })
        .count();
    Ok((2.0 * crossing as f64 / resamples as f64).min(1.0))
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Mean difference over the pooled standard deviation (n-1 variances).
/// Zero spread gives 0 for equal means and a signed infinity otherwise.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput("cohen's d needs at least 2 values per group".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0)).sqrt();
    let diff = mean(a) - mean(b);
    Ok(if pooled > 0.0 {
        diff / pooled
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_and_deterministic() {
        let ones = vec![1.0; 50];
        let ci = bootstrap_ci(&ones, 1000, 42).unwrap();
        assert_eq!((ci.point, ci.lo, ci.hi), (1.0, 1.0, 1.0));
        let v: Vec<f64> = (0..200).map(|i| (i % 3) as f64).collect();
        let a = bootstrap_ci(&v, 500, 7).unwrap();
        let b = bootstrap_ci(&v, 500, 7).unwrap();
        assert_eq!(a.lo.to_bits(), b.lo.to_bits());
        assert_eq!(a.hi.to_bits(), b.hi.to_bits());
        assert!(a.contains(a.point));
    }

    #[test]
    fn errors() {
        assert!(bootstrap_ci(&[], 10, 1).is_err());
        assert!(bootstrap_ci(&[1.0], 0, 1).is_err());
        assert!(paired_bootstrap_p(&[1.0], &[1.0, 2.0], 10, 1).is_err());
        assert!(cohens_d(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn paired_extremes() {
        let a = vec![1.0; 100];
        let b = vec![0.0; 100];
        assert_eq!(paired_bootstrap_p(&a, &a, 1000, 42).unwrap(), 1.0);
        assert!(paired_bootstrap_p(&a, &b, 1000, 42).unwrap() <= 2.0 / 1000.0);
        assert_eq!(cohens_d(&a, &a).unwrap(), 0.0);
        assert_eq!(cohens_d(&a, &b).unwrap(), f64::INFINITY);
    }
}
