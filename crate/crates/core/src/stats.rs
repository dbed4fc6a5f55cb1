//! Replicate statistics.

use rand::Rng;

use crate::rng::RngStream;

/// Compensated (Neumaier) sum; independent of summation grouping up to the
/// last few ulps.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation with the `n − 1` denominator.
    pub std: f64,
    /// `std / √count`.
    pub std_err: f64,
}

pub fn summarize(xs: &[f64]) -> SampleStats {
    let count = xs.len();
    if count == 0 {
        return SampleStats {
            count,
            mean: f64::NAN,
            std: f64::NAN,
            std_err: f64::NAN,
        };
    }
    let mean = neumaier_sum(xs.iter().copied()) / count as f64;
    let std = if count > 1 {
        (neumaier_sum(xs.iter().map(|x| (x - mean) * (x - mean))) / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    SampleStats {
        count,
        mean,
        std,
        std_err: std / (count as f64).sqrt(),
    }
}

/// Bootstrap standard error of the sample standard deviation.
pub fn bootstrap_std_error(xs: &[f64], resamples: usize, stream: RngStream) -> f64 {
    let n = xs.len();
    if n < 2 || resamples < 2 {
        return f64::NAN;
    }
    let mut rng = stream.rng();
    let mut buf = vec![0.0; n];
    let stds: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.random_range(0..n)];
            }
            summarize(&buf).std
        })
        .collect();
    summarize(&stds).std
}
