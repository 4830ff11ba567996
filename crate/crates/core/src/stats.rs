//! Small statistics toolkit: batch means, Kolmogorov–Smirnov distances and
//! normal quantiles.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

pub const MIN_BATCHES: usize = 20;
pub const MIN_BATCH_LEN: usize = 10;

/// Mean and standard error of i.i.d. values.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchMeans {
    pub mean: f64,
    pub std_error: f64,
    /// Sample variance over squared standard error.
    pub n_effective: f64,
    pub batches: usize,
}

/// Batch-means estimate of the mean of a correlated series. Leftover
/// samples that do not fill a batch are dropped from the error estimate
/// but kept in the mean.
pub fn batch_means(xs: &[f64], batches: usize) -> Result<BatchMeans> {
    let batches = batches.max(MIN_BATCHES);
    let len = xs.len() / batches;
    if len < MIN_BATCH_LEN {
        return Err(Error::WindowTooShort(format!(
            "{} samples cannot fill {batches} batches of {MIN_BATCH_LEN}",
            xs.len()
        )));
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let means: Vec<f64> = xs
        .chunks_exact(len)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / len as f64)
        .collect();
    let (_, std_error) = mean_se(&means);
    let (_, raw_se) = mean_se(xs);
    let var = raw_se.powi(2) * xs.len() as f64;
    let n_effective = if std_error > 0.0 {
        var / std_error.powi(2)
    } else {
        xs.len() as f64
    };
    Ok(BatchMeans {
        mean,
        std_error,
        n_effective,
        batches,
    })
}

/// `sup |F_n − F|` for a sample against a distribution with CDF `cdf` and
/// left limits `cdf_left` (they differ only at atoms).
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64, cdf_left: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let below = i as f64 / n;
        let upto = j as f64 / n;
        d = d.max((cdf_left(x) - below).abs()).max((cdf(x) - upto).abs());
        i = j;
    }
    d
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}
